//! Total energy over a decomposition: the four loss terms, their weighted
//! sum and full gradient, and the gauge-fixing convention.
//!
//! The energy is invariant under two families of shifts: adding a
//! per-channel constant to every log reflectance while subtracting it
//! from every illumination color, and adding a per-frame constant to a
//! log shading while subtracting it from that frame's color. Gauge fixing
//! pins both: each log shading has zero mean over valid pixels, and the
//! illumination colors have zero mean over frames (absorbed into the
//! reflectance). The reflectance-shift family moves the smoothness term
//! by an amount bounded by the bistochasticization residual, so the
//! invariance is exact only in that limit.

use crate::apwls::{consistency_loss, reconstruction_loss};
use crate::bilateral::{build_grid, rsmooth_loss, Bandwidths, BilateralGrid, BistoStatus};
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::imagestack::LogStack;
use crate::scalar::Scalar;
use crate::shadsmooth::{build_edge_weights, ssmooth_loss, EdgeWeights, ShadSmoothParams};

/// Optimization variables: per-frame log reflectance (RGB), per-frame
/// grayscale log shading, per-frame illumination color (log domain).
#[derive(Debug, Clone)]
pub struct Decomposition<T> {
    pub log_r: Vec<Image<T>>,
    pub log_s: Vec<Image<T>>,
    pub illum: Vec<[f64; 3]>,
}

impl<T: Scalar> Decomposition<T> {
    pub fn zeros(m: usize, h: usize, w: usize) -> Self {
        Self {
            log_r: (0..m).map(|_| Image::zeros(h, w, 3)).collect(),
            log_s: (0..m).map(|_| Image::zeros(h, w, 1)).collect(),
            illum: vec![[0.0; 3]; m],
        }
    }

    #[inline]
    pub fn frame_count(&self) -> usize {
        self.log_r.len()
    }

    pub fn is_finite(&self) -> bool {
        self.log_r.iter().all(Image::is_finite)
            && self.log_s.iter().all(Image::is_finite)
            && self.illum.iter().all(|c| c.iter().all(|v| v.is_finite()))
    }
}

/// All loss weights, bandwidths, and tolerances the energy depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyConfig {
    pub w_rc: f64,
    pub w_rsm: f64,
    pub w_ssm: f64,
    pub bandwidths: Bandwidths,
    pub lambda_med: f64,
    pub lambda_med_bar: f64,
    pub eps_med: f64,
    pub eps_img: f64,
    pub bisto_max_iters: usize,
    pub bisto_tol: f64,
    /// Forces the illumination color to stay exactly zero (grayscale
    /// shading, as used for ground-truth sets without colored light).
    pub grayscale_shading: bool,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            w_rc: 1.0,
            w_rsm: 2.0,
            w_ssm: 2.0,
            bandwidths: [12.0, 12.0, 0.2, 0.05, 0.05],
            lambda_med: 8.0,
            lambda_med_bar: 8.0,
            eps_med: 0.05,
            eps_img: 1e-4,
            bisto_max_iters: 30,
            bisto_tol: 1e-3,
            grayscale_shading: false,
        }
    }
}

impl EnergyConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("w_rc", self.w_rc),
            ("w_rsm", self.w_rsm),
            ("w_ssm", self.w_ssm),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn shadsmooth_params(&self) -> ShadSmoothParams {
        ShadSmoothParams {
            lambda_med: self.lambda_med,
            lambda_med_bar: self.lambda_med_bar,
            eps_med: self.eps_med,
            bandwidths: self.bandwidths,
        }
    }
}

/// Input-dependent quantities built once per (stack, config): the
/// bilateral grid with its bistochasticizing diagonal, and the
/// shading-smoothness edge weights.
pub struct Precomp<T> {
    pub grid: BilateralGrid,
    pub bisto: BistoStatus,
    pub edge_weights: EdgeWeights<T>,
    fingerprint: Fingerprint,
}

#[derive(Debug, Clone, PartialEq)]
struct Fingerprint {
    sequence_id: String,
    m: usize,
    h: usize,
    w: usize,
}

fn fingerprint_of<T: Scalar>(stack: &LogStack<T>) -> Fingerprint {
    Fingerprint {
        sequence_id: stack.sequence_id().to_string(),
        m: stack.frame_count(),
        h: stack.h(),
        w: stack.w(),
    }
}

impl<T: Scalar> Precomp<T> {
    pub fn build(stack: &LogStack<T>, cfg: &EnergyConfig) -> Result<Self> {
        cfg.validate()?;
        let mut grid = build_grid(stack, cfg.bandwidths)?;
        let bisto = grid.bistochasticize(cfg.bisto_max_iters, cfg.bisto_tol)?;
        let edge_weights = build_edge_weights(stack, cfg.shadsmooth_params())?;
        Ok(Self {
            grid,
            bisto,
            edge_weights,
            fingerprint: fingerprint_of(stack),
        })
    }

    fn check_matches(&self, stack: &LogStack<T>) -> Result<()> {
        let fp = fingerprint_of(stack);
        if fp != self.fingerprint {
            return Err(Error::PrecompMismatch(format!(
                "precomputed for {:?}, got {:?}",
                self.fingerprint, fp
            )));
        }
        Ok(())
    }
}

/// Individual term values plus the weighted total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBreakdown {
    pub reconstruct: f64,
    pub consistency: f64,
    pub rsmooth: f64,
    pub ssmooth: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    fn assemble(
        cfg: &EnergyConfig,
        reconstruct: f64,
        consistency: f64,
        rsmooth: f64,
        ssmooth: f64,
    ) -> Self {
        Self {
            reconstruct,
            consistency,
            rsmooth,
            ssmooth,
            total: reconstruct + cfg.w_rc * consistency + cfg.w_rsm * rsmooth + cfg.w_ssm * ssmooth,
        }
    }
}

/// Gradient of the total energy over all optimization variables.
pub struct EnergyGradient<T> {
    pub log_r: Vec<Image<T>>,
    pub log_s: Vec<Image<T>>,
    pub illum: Vec<[f64; 3]>,
}

impl<T: Scalar> EnergyGradient<T> {
    pub fn norm(&self) -> f64 {
        let mut acc = 0.0f64;
        for img in self.log_r.iter().chain(self.log_s.iter()) {
            for v in img.data() {
                let x = v.as_f64();
                acc += x * x;
            }
        }
        for c in &self.illum {
            for v in c {
                acc += v * v;
            }
        }
        acc.sqrt()
    }
}

/// Weighted sum of the four terms.
pub fn total_energy<T: Scalar>(
    stack: &LogStack<T>,
    d: &Decomposition<T>,
    cfg: &EnergyConfig,
    precomp: &Precomp<T>,
) -> Result<EnergyBreakdown> {
    cfg.validate()?;
    precomp.check_matches(stack)?;
    let masks = stack.masks();
    let (reconstruct, _) = reconstruction_loss(stack, d)?;
    let (consistency, _) = consistency_loss(d, masks)?;
    let (rsmooth, _) = rsmooth_loss(&precomp.grid, d, masks)?;
    let (ssmooth, _) = ssmooth_loss(d, &precomp.edge_weights)?;
    Ok(EnergyBreakdown::assemble(
        cfg,
        reconstruct,
        consistency,
        rsmooth,
        ssmooth,
    ))
}

/// Analytic gradient of the total energy, with the term values it was
/// assembled from.
pub fn total_gradient<T: Scalar>(
    stack: &LogStack<T>,
    d: &Decomposition<T>,
    cfg: &EnergyConfig,
    precomp: &Precomp<T>,
) -> Result<(EnergyGradient<T>, EnergyBreakdown)> {
    cfg.validate()?;
    precomp.check_matches(stack)?;
    let masks = stack.masks();
    let m = stack.frame_count();
    let (h, w) = (stack.h(), stack.w());

    let (reconstruct, recon_grad) = reconstruction_loss(stack, d)?;
    let (consistency, cons_grad) = consistency_loss(d, masks)?;
    let (rsmooth, rsm_grad) = rsmooth_loss(&precomp.grid, d, masks)?;
    let (ssmooth, ssm_grad) = ssmooth_loss(d, &precomp.edge_weights)?;

    let mut g_log_r = Vec::with_capacity(m);
    let mut g_log_s = Vec::with_capacity(m);
    let mut g_illum = Vec::with_capacity(m);
    for i in 0..m {
        let mut gr = Image::<T>::zeros(h, w, 3);
        for k in 0..gr.data().len() {
            gr.data_mut()[k] = T::of_f64(
                recon_grad.log_r[i].data()[k].as_f64()
                    + cfg.w_rc * cons_grad[i].data()[k].as_f64()
                    + cfg.w_rsm * rsm_grad[i].data()[k].as_f64(),
            );
        }
        g_log_r.push(gr);

        let mut gs = Image::<T>::zeros(h, w, 1);
        for k in 0..gs.data().len() {
            gs.data_mut()[k] = T::of_f64(
                recon_grad.log_s[i].data()[k].as_f64() + cfg.w_ssm * ssm_grad[i].data()[k].as_f64(),
            );
        }
        g_log_s.push(gs);

        if cfg.grayscale_shading {
            g_illum.push([0.0; 3]);
        } else {
            g_illum.push(recon_grad.illum[i]);
        }
    }

    Ok((
        EnergyGradient {
            log_r: g_log_r,
            log_s: g_log_s,
            illum: g_illum,
        },
        EnergyBreakdown::assemble(cfg, reconstruct, consistency, rsmooth, ssmooth),
    ))
}

fn mean_over_valid<T: Scalar>(img: &Image<T>, mask: &Mask, channel: usize) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in 0..img.h() {
        for x in 0..img.w() {
            if mask.valid(y, x) {
                sum += img.at(y, x, channel).as_f64();
                count += 1;
            }
        }
    }
    if count > 0 {
        sum / count as f64
    } else {
        0.0
    }
}

/// Pins the gauge: zero-mean log shading per frame (compensated into the
/// illumination color), then zero-mean color over frames (absorbed into
/// the reflectance). Idempotent; a pure gauge motion of the energy.
pub fn fix_gauge<T: Scalar>(d: &Decomposition<T>, masks: &[Mask]) -> Decomposition<T> {
    let m = d.log_r.len();
    let mut out = d.clone();
    for i in 0..m {
        let mu = mean_over_valid(&d.log_s[i], &masks[i], 0);
        out.log_s[i] = d.log_s[i].map(|v| T::of_f64(v.as_f64() - mu));
        for c in 0..3 {
            out.illum[i][c] += mu;
        }
    }
    let mut nu = [0.0f64; 3];
    for i in 0..m {
        for c in 0..3 {
            nu[c] += out.illum[i][c];
        }
    }
    for c in &mut nu {
        *c /= m as f64;
    }
    for i in 0..m {
        for c in 0..3 {
            out.illum[i][c] -= nu[c];
        }
        out.log_r[i] = Image::from_fn(d.log_r[i].h(), d.log_r[i].w(), 3, |y, x, c| {
            T::of_f64(out.log_r[i].at(y, x, c).as_f64() + nu[c])
        });
    }
    out
}

/// Gauge fixing when the illumination color is pinned at zero: the only
/// remaining gauge is one joint constant, shifted from the shadings into
/// the reflectances.
pub fn fix_gauge_grayscale<T: Scalar>(d: &Decomposition<T>, masks: &[Mask]) -> Decomposition<T> {
    let m = d.log_r.len();
    let mut alpha = 0.0f64;
    for i in 0..m {
        alpha += mean_over_valid(&d.log_s[i], &masks[i], 0);
    }
    alpha /= m as f64;
    let mut out = d.clone();
    for i in 0..m {
        out.log_s[i] = d.log_s[i].map(|v| T::of_f64(v.as_f64() - alpha));
        out.log_r[i] = d.log_r[i].map(|v| T::of_f64(v.as_f64() + alpha));
        out.illum[i] = [0.0; 3];
    }
    out
}

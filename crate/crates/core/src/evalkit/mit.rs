//! Scale-invariant MSE, local MSE, and structural dissimilarity against
//! dense ground truth.

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::scalar::Scalar;

/// Dense ground truth for one object: reflectance, grayscale shading,
/// validity mask.
#[derive(Debug, Clone)]
pub struct MitGroundTruth<T> {
    pub reflectance: Image<T>,
    pub shading: Image<T>,
    pub mask: Mask,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MitTriple {
    pub mse: f64,
    pub lmse: f64,
    pub dssim: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MitScores {
    pub reflectance: MitTriple,
    pub shading: MitTriple,
}

pub const LMSE_WINDOW: usize = 20;
pub const LMSE_STEP: usize = 10;

fn check_pair<T: Scalar>(pred: &Image<T>, gt: &Image<T>, mask: &Mask) -> Result<()> {
    if pred.dims() != gt.dims() {
        return Err(Error::ShapeMismatch(format!(
            "prediction dims {:?} != ground truth {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    if (mask.h(), mask.w()) != (gt.h(), gt.w()) {
        return Err(Error::ShapeMismatch("mask dims differ from images".into()));
    }
    if mask.valid_count() == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(())
}

/// Least-squares fit of one scalar over the valid window, plus the
/// resulting squared error and the masked gt energy.
fn window_ssq<T: Scalar>(
    pred: &Image<T>,
    gt: &Image<T>,
    mask: &Mask,
    y0: usize,
    x0: usize,
    hh: usize,
    ww: usize,
) -> (f64, f64, usize) {
    let ch = pred.channels();
    let mut pg = 0.0f64;
    let mut pp = 0.0f64;
    let mut count = 0usize;
    for y in y0..y0 + hh {
        for x in x0..x0 + ww {
            if !mask.valid(y, x) {
                continue;
            }
            count += 1;
            for c in 0..ch {
                let p = pred.at(y, x, c).as_f64();
                let g = gt.at(y, x, c).as_f64();
                pg += p * g;
                pp += p * p;
            }
        }
    }
    let alpha = if pp > 0.0 { pg / pp } else { 0.0 };
    let mut ssq = 0.0f64;
    let mut gt_energy = 0.0f64;
    for y in y0..y0 + hh {
        for x in x0..x0 + ww {
            if !mask.valid(y, x) {
                continue;
            }
            for c in 0..ch {
                let p = pred.at(y, x, c).as_f64();
                let g = gt.at(y, x, c).as_f64();
                let e = alpha * p - g;
                ssq += e * e;
                gt_energy += g * g;
            }
        }
    }
    (ssq, gt_energy, count)
}

/// Scale-invariant MSE: a single least-squares scalar is fit to the
/// ground truth before averaging the squared error over valid elements.
pub fn si_mse<T: Scalar>(pred: &Image<T>, gt: &Image<T>, mask: &Mask) -> Result<f64> {
    check_pair(pred, gt, mask)?;
    let (h, w, ch) = pred.dims();
    let (ssq, _, count) = window_ssq(pred, gt, mask, 0, 0, h, w);
    Ok(ssq / (count * ch) as f64)
}

/// Local MSE over half-overlapping windows (`window`, stepping `step`),
/// each with its own scale fit, normalized by the masked ground-truth
/// energy over the same windows.
pub fn lmse<T: Scalar>(
    pred: &Image<T>,
    gt: &Image<T>,
    mask: &Mask,
    window: usize,
    step: usize,
) -> Result<f64> {
    check_pair(pred, gt, mask)?;
    if window == 0 || step == 0 {
        return Err(Error::InvalidArgument(
            "window and step must be positive".into(),
        ));
    }
    let (h, w, _) = pred.dims();
    if h < window || w < window {
        return Err(Error::InvalidArgument(format!(
            "image {w}x{h} smaller than LMSE window {window}"
        )));
    }
    let mut ssq = 0.0f64;
    let mut total = 0.0f64;
    let mut y0 = 0;
    while y0 + window <= h {
        let mut x0 = 0;
        while x0 + window <= w {
            let (s, t, _) = window_ssq(pred, gt, mask, y0, x0, window, window);
            ssq += s;
            total += t;
            x0 += step;
        }
        y0 += step;
    }
    if total <= 0.0 {
        if ssq == 0.0 {
            return Ok(0.0);
        }
        return Err(Error::InvalidArgument(
            "ground truth is zero over every window; LMSE undefined".into(),
        ));
    }
    Ok(ssq / total)
}

/// Gaussian window used by SSIM (11x11, sigma 1.5).
fn ssim_window() -> Vec<f64> {
    let sigma = 1.5f64;
    let mut w = Vec::with_capacity(121);
    for dy in -5i32..=5 {
        for dx in -5i32..=5 {
            w.push((-((dy * dy + dx * dx) as f64) / (2.0 * sigma * sigma)).exp());
        }
    }
    w
}

/// Structural dissimilarity (1 - SSIM)/2 with the standard constants
/// (K1 = 0.01, K2 = 0.03, dynamic range 1). Moments use mask-aware
/// Gaussian weights; channels are averaged.
pub fn dssim<T: Scalar>(pred: &Image<T>, gt: &Image<T>, mask: &Mask) -> Result<f64> {
    check_pair(pred, gt, mask)?;
    let (h, w, ch) = pred.dims();
    let window = ssim_window();
    let c1 = (0.01f64).powi(2);
    let c2 = (0.03f64).powi(2);

    let mut ssim_sum = 0.0f64;
    let mut ssim_count = 0usize;
    for c in 0..ch {
        for y in 0..h {
            for x in 0..w {
                if !mask.valid(y, x) {
                    continue;
                }
                let mut wsum = 0.0f64;
                let (mut mx, mut my) = (0.0f64, 0.0f64);
                let (mut mxx, mut myy, mut mxy) = (0.0f64, 0.0f64, 0.0f64);
                for dy in -5i32..=5 {
                    for dx in -5i32..=5 {
                        let yy = y as i32 + dy;
                        let xx = x as i32 + dx;
                        if yy < 0 || yy >= h as i32 || xx < 0 || xx >= w as i32 {
                            continue;
                        }
                        let (yy, xx) = (yy as usize, xx as usize);
                        if !mask.valid(yy, xx) {
                            continue;
                        }
                        let wt = window[((dy + 5) * 11 + dx + 5) as usize];
                        let a = pred.at(yy, xx, c).as_f64();
                        let b = gt.at(yy, xx, c).as_f64();
                        wsum += wt;
                        mx += wt * a;
                        my += wt * b;
                        mxx += wt * a * a;
                        myy += wt * b * b;
                        mxy += wt * a * b;
                    }
                }
                if wsum <= 0.0 {
                    continue;
                }
                mx /= wsum;
                my /= wsum;
                let vx = (mxx / wsum - mx * mx).max(0.0);
                let vy = (myy / wsum - my * my).max(0.0);
                let cov = mxy / wsum - mx * my;
                let ssim = ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                ssim_sum += ssim;
                ssim_count += 1;
            }
        }
    }
    if ssim_count == 0 {
        return Err(Error::EmptyMask);
    }
    Ok((1.0 - ssim_sum / ssim_count as f64) / 2.0)
}

/// The full triple for both reflectance and shading.
pub fn mit_scores<T: Scalar>(
    pred_r: &Image<T>,
    pred_s: &Image<T>,
    gt: &MitGroundTruth<T>,
) -> Result<MitScores> {
    let score = |pred: &Image<T>, truth: &Image<T>| -> Result<MitTriple> {
        Ok(MitTriple {
            mse: si_mse(pred, truth, &gt.mask)?,
            lmse: lmse(pred, truth, &gt.mask, LMSE_WINDOW, LMSE_STEP)?,
            dssim: dssim(pred, truth, &gt.mask)?,
        })
    };
    Ok(MitScores {
        reflectance: score(pred_r, &gt.reflectance)?,
        shading: score(pred_s, &gt.shading)?,
    })
}

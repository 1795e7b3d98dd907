//! Direct minimization of the sequence energy over a decomposition.
//!
//! Steepest descent with an exact-for-quadratics initial step (the energy
//! is a quadratic form in all variables, so one extra gradient evaluation
//! yields the 1-D minimizer along the search direction) guarded by an
//! Armijo backtracking line search. The bilateral grid and edge weights
//! depend only on the inputs and are frozen before iterating; the gauge
//! is re-fixed after every accepted step.

use crate::energy::{
    fix_gauge, fix_gauge_grayscale, total_energy, total_gradient, Decomposition, EnergyBreakdown,
    EnergyConfig, EnergyGradient, Precomp,
};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::imagestack::LogStack;
use crate::scalar::Scalar;

/// Iteration limits and line-search parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub max_iters: usize,
    /// Gradient-norm stopping threshold; `None` selects 1e-6 * sqrt(mn).
    pub grad_tol: Option<f64>,
    pub armijo_c1: f64,
    pub max_backtracks: usize,
    pub report_every: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            grad_tol: None,
            armijo_c1: 1e-4,
            max_backtracks: 40,
            report_every: 1,
        }
    }
}

/// What the solver did: trace of accepted energies, final gradient norm,
/// final term values, convergence flag.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub iterations: usize,
    pub energy_trace: Vec<f64>,
    pub final_grad_norm: f64,
    pub final_terms: EnergyBreakdown,
    pub converged: bool,
}

/// Median-derivative initialization: the per-pixel median of log I over
/// valid frames estimates the log reflectance; shading starts as the
/// channel-mean residual; the illumination color starts at zero before
/// gauge fixing.
pub fn init_decomposition<T: Scalar>(stack: &LogStack<T>) -> Result<Decomposition<T>> {
    let m = stack.frame_count();
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "solving needs at least 2 frames, got {m}"
        )));
    }
    let (h, w) = (stack.h(), stack.w());
    let masks = stack.masks();

    let mut log_r = Image::<T>::zeros(h, w, 3);
    let mut covered = vec![false; h * w];
    let mut channel_sum = [0.0f64; 3];
    let mut covered_count = 0usize;
    for y in 0..h {
        for x in 0..w {
            let mut any = false;
            for c in 0..3 {
                let mut vals: Vec<f64> = (0..m)
                    .filter(|&i| masks[i].valid(y, x))
                    .map(|i| stack.log_frames[i].at(y, x, c).as_f64())
                    .collect();
                if vals.is_empty() {
                    continue;
                }
                any = true;
                vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let n = vals.len();
                let med = if n % 2 == 1 {
                    vals[n / 2]
                } else {
                    0.5 * (vals[n / 2 - 1] + vals[n / 2])
                };
                log_r.set(y, x, c, T::of_f64(med));
                channel_sum[c] += med;
            }
            if any {
                covered[y * w + x] = true;
                covered_count += 1;
            }
        }
    }
    // pixels valid in no frame fall back to the global mean reflectance
    if covered_count > 0 {
        for y in 0..h {
            for x in 0..w {
                if !covered[y * w + x] {
                    for c in 0..3 {
                        log_r.set(y, x, c, T::of_f64(channel_sum[c] / covered_count as f64));
                    }
                }
            }
        }
    }

    let mut log_s = Vec::with_capacity(m);
    for i in 0..m {
        log_s.push(Image::<T>::from_fn(h, w, 1, |y, x, _| {
            if masks[i].valid(y, x) {
                let mut s = 0.0;
                for c in 0..3 {
                    s += stack.log_frames[i].at(y, x, c).as_f64() - log_r.at(y, x, c).as_f64();
                }
                T::of_f64(s / 3.0)
            } else {
                T::zero()
            }
        }));
    }

    let d = Decomposition {
        log_r: vec![log_r; m],
        log_s,
        illum: vec![[0.0; 3]; m],
    };
    Ok(fix_gauge(&d, masks))
}

fn dot<T: Scalar>(a: &EnergyGradient<T>, b: &EnergyGradient<T>) -> f64 {
    let mut acc = 0.0f64;
    for (ia, ib) in a.log_r.iter().zip(b.log_r.iter()) {
        for (x, y) in ia.data().iter().zip(ib.data().iter()) {
            acc += x.as_f64() * y.as_f64();
        }
    }
    for (ia, ib) in a.log_s.iter().zip(b.log_s.iter()) {
        for (x, y) in ia.data().iter().zip(ib.data().iter()) {
            acc += x.as_f64() * y.as_f64();
        }
    }
    for (ca, cb) in a.illum.iter().zip(b.illum.iter()) {
        for c in 0..3 {
            acc += ca[c] * cb[c];
        }
    }
    acc
}

/// d + s * g
fn step<T: Scalar>(d: &Decomposition<T>, g: &EnergyGradient<T>, s: f64) -> Decomposition<T> {
    let mut out = d.clone();
    for i in 0..d.log_r.len() {
        for (v, gv) in out.log_r[i]
            .data_mut()
            .iter_mut()
            .zip(g.log_r[i].data().iter())
        {
            *v = T::of_f64(v.as_f64() + s * gv.as_f64());
        }
        for (v, gv) in out.log_s[i]
            .data_mut()
            .iter_mut()
            .zip(g.log_s[i].data().iter())
        {
            *v = T::of_f64(v.as_f64() + s * gv.as_f64());
        }
        for c in 0..3 {
            out.illum[i][c] += s * g.illum[i][c];
        }
    }
    out
}

/// Minimizes the energy starting from the median initialization.
pub fn minimize<T: Scalar>(
    stack: &LogStack<T>,
    cfg: &EnergyConfig,
    opts: &SolveOptions,
) -> Result<(Decomposition<T>, SolveReport)> {
    let init = init_decomposition(stack)?;
    minimize_from(stack, cfg, opts, init)
}

/// Minimizes the energy from a caller-supplied starting point.
pub fn minimize_from<T: Scalar>(
    stack: &LogStack<T>,
    cfg: &EnergyConfig,
    opts: &SolveOptions,
    start: Decomposition<T>,
) -> Result<(Decomposition<T>, SolveReport)> {
    if opts.max_iters < 1 {
        return Err(Error::InvalidArgument(
            "max_iters must be at least 1".into(),
        ));
    }
    if !(opts.grad_tol.unwrap_or(1.0) > 0.0) {
        return Err(Error::InvalidArgument("grad_tol must be positive".into()));
    }
    let precomp = Precomp::build(stack, cfg)?;
    let refix = |d: &Decomposition<T>| -> Decomposition<T> {
        if cfg.grayscale_shading {
            fix_gauge_grayscale(d, stack.masks())
        } else {
            fix_gauge(d, stack.masks())
        }
    };

    let mut d = refix(&start);
    if cfg.grayscale_shading {
        for c in &mut d.illum {
            *c = [0.0; 3];
        }
    }
    let (mut grad, mut terms) = total_gradient(stack, &d, cfg, &precomp)?;
    let mut energy = terms.total;
    let mn = (stack.frame_count() * stack.h() * stack.w()) as f64;
    let grad_tol = opts.grad_tol.unwrap_or(1e-6 * mn.sqrt());

    let mut trace = vec![energy];
    let mut iterations = 0usize;
    let mut converged = false;

    for iter in 1..=opts.max_iters {
        let gnorm = grad.norm();
        if gnorm <= grad_tol {
            converged = true;
            break;
        }

        // Exact 1-D minimizer along -g for a quadratic energy: the
        // curvature g^T H g comes from one extra gradient evaluation.
        let gg = dot(&grad, &grad);
        let (probe_grad, _) = total_gradient(stack, &step(&d, &grad, -1.0), cfg, &precomp)?;
        let curvature = gg - dot(&grad, &probe_grad);
        let mut t = if curvature > 0.0 { gg / curvature } else { 1.0 };

        let mut accepted: Option<(Decomposition<T>, f64)> = None;
        let mut halvings = 0usize;
        while halvings <= opts.max_backtracks {
            let cand = step(&d, &grad, -t);
            let cand_energy = total_energy(stack, &cand, cfg, &precomp)?.total;
            if cand_energy <= energy - opts.armijo_c1 * t * gg {
                accepted = Some((cand, cand_energy));
                break;
            }
            t *= 0.5;
            halvings += 1;
        }
        let Some((cand, _)) = accepted else {
            return Err(Error::LineSearchFailed {
                iteration: iter,
                halvings,
                energy,
                grad_norm: gnorm,
            });
        };

        // Re-fix the gauge; the motion is pure gauge up to the
        // bistochasticization residual, so near that noise floor we stop
        // rather than record an energy increase.
        let fixed = refix(&cand);
        let (fixed_grad, fixed_terms) = total_gradient(stack, &fixed, cfg, &precomp)?;
        if fixed_terms.total > energy {
            break;
        }
        d = fixed;
        grad = fixed_grad;
        terms = fixed_terms;
        energy = terms.total;
        iterations = iter;
        if iter % opts.report_every == 0 {
            trace.push(energy);
        }
    }

    if *trace.last().unwrap() != energy {
        trace.push(energy);
    }
    let final_grad_norm = grad.norm();
    if final_grad_norm <= grad_tol {
        converged = true;
    }
    Ok((
        d,
        SolveReport {
            iterations,
            energy_trace: trace,
            final_grad_norm,
            final_terms: terms,
            converged,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Mask;
    use crate::imagestack::{to_log_stack, ImageSequence};
    use crate::testutil::{random_decomposition, tight_config};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn static_scene_initializes_to_trivial_decomposition() {
        let frame = Image::from_fn(4, 4, 3, |y, x, c| 0.2 + 0.1 * ((y + x + c) % 4) as f64);
        let seq = ImageSequence::new(
            vec![frame.clone(), frame.clone(), frame],
            vec![Mask::all_valid(4, 4); 3],
            "static",
        )
        .unwrap();
        let stack = to_log_stack(&seq, 1e-4).unwrap();
        let d = init_decomposition(&stack).unwrap();
        for i in 0..3 {
            for (a, b) in d.log_r[i].data().iter().zip(stack.log_frames[i].data()) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!(d.log_s[i].data().iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn initialization_is_gauge_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let stack = crate::testutil::random_stack(&mut rng, 3, 6, 6, true);
        let d = init_decomposition(&stack).unwrap();
        for i in 0..3 {
            let masks = stack.masks();
            let mut sum = 0.0;
            let mut cnt = 0;
            for y in 0..6 {
                for x in 0..6 {
                    if masks[i].valid(y, x) {
                        sum += d.log_s[i].at(y, x, 0);
                        cnt += 1;
                    }
                }
            }
            assert!((sum / cnt as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn median_init_recovers_reflectance_when_median_frame_is_unshaded() {
        // odd frame count with log-shading values symmetric around zero at
        // every pixel, so the median frame is exactly the unshaded one
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let log_r = Image::from_fn(6, 6, 3, |_, _, _| rng.gen_range(0.3f64..0.8).ln());
        let shade = [-0.2, 0.0, 0.2];
        let frames: Vec<Image<f64>> = shade
            .iter()
            .map(|&s| Image::from_fn(6, 6, 3, |y, x, c| (log_r.at(y, x, c) + s).exp()))
            .collect();
        let seq = ImageSequence::new(frames, vec![Mask::all_valid(6, 6); 3], "synthetic").unwrap();
        let stack = to_log_stack(&seq, 1e-4).unwrap();
        let d = init_decomposition(&stack).unwrap();
        // the median shading is 0, so before gauge fixing log_r is exact;
        // fixing only moves the (already-zero-mean) constants slightly
        for y in 0..6 {
            for x in 0..6 {
                for c in 0..3 {
                    assert!(
                        (d.log_r[0].at(y, x, c) - log_r.at(y, x, c)).abs() < 1e-9,
                        "median init missed reflectance"
                    );
                }
            }
        }
    }

    #[test]
    fn identical_frames_with_zero_smoothness_converge_immediately() {
        let frame = Image::from_fn(5, 5, 3, |y, x, c| 0.25 + 0.1 * ((y * 5 + x + c) % 5) as f64);
        let seq = ImageSequence::new(
            vec![frame.clone(), frame],
            vec![Mask::all_valid(5, 5); 2],
            "static",
        )
        .unwrap();
        let stack = to_log_stack(&seq, 1e-4).unwrap();
        let mut cfg = tight_config();
        cfg.w_rsm = 0.0;
        cfg.w_ssm = 0.0;
        let (_, report) = minimize(&stack, &cfg, &SolveOptions::default()).unwrap();
        assert!(report.iterations <= 1, "iterations {}", report.iterations);
        assert!(report.energy_trace[0].abs() < 1e-12);
        assert!(report.converged);
    }

    #[test]
    fn energy_trace_is_monotone_from_random_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let stack = crate::testutil::random_stack(&mut rng, 4, 12, 12, false);
        let cfg = tight_config();
        let opts = SolveOptions {
            max_iters: 40,
            ..SolveOptions::default()
        };
        let start = random_decomposition(&mut rng, 4, 12, 12);
        let (_, report) = minimize_from(&stack, &cfg, &opts, start).unwrap();
        for pair in report.energy_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "trace increased: {pair:?}");
        }
        assert!(report.iterations > 0);
    }

    #[test]
    fn solver_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let stack = crate::testutil::random_stack(&mut rng, 3, 8, 8, true);
        let cfg = tight_config();
        let opts = SolveOptions {
            max_iters: 10,
            ..SolveOptions::default()
        };
        let (d1, r1) = minimize(&stack, &cfg, &opts).unwrap();
        let (d2, r2) = minimize(&stack, &cfg, &opts).unwrap();
        assert_eq!(r1.energy_trace, r2.energy_trace);
        assert_eq!(r1.final_grad_norm, r2.final_grad_norm);
        for i in 0..3 {
            assert_eq!(d1.log_r[i].data(), d2.log_r[i].data());
            assert_eq!(d1.log_s[i].data(), d2.log_s[i].data());
            assert_eq!(d1.illum[i], d2.illum[i]);
        }
    }

    #[test]
    fn grayscale_mode_keeps_illumination_at_zero_through_a_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let stack = crate::testutil::random_stack(&mut rng, 3, 8, 8, false);
        let mut cfg = tight_config();
        cfg.grayscale_shading = true;
        let opts = SolveOptions {
            max_iters: 8,
            ..SolveOptions::default()
        };
        let (d, report) = minimize(&stack, &cfg, &opts).unwrap();
        assert!(report.iterations > 0);
        assert!(d.illum.iter().all(|c| *c == [0.0; 3]));
    }

    #[test]
    fn recovers_synthetic_lambertian_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (h, w, m) = (16usize, 16usize, 4usize);
        // smooth random log reflectance from a few low-frequency cosines
        let field = |rng: &mut ChaCha8Rng, amp: f64| -> Vec<f64> {
            let mut coef = Vec::new();
            for _ in 0..3 {
                coef.push((
                    rng.gen_range(0..3) as f64,
                    rng.gen_range(0..3) as f64,
                    rng.gen_range(0.0..std::f64::consts::TAU),
                    rng.gen_range(0.3..1.0) * amp,
                ));
            }
            let mut out = vec![0.0; h * w];
            for y in 0..h {
                for x in 0..w {
                    for &(u, v, ph, a) in &coef {
                        out[y * w + x] += a
                            * (std::f64::consts::TAU
                                * (u * x as f64 / w as f64 + v * y as f64 / h as f64)
                                + ph)
                                .cos();
                    }
                }
            }
            out
        };
        let log_r_fields: Vec<Vec<f64>> = (0..3).map(|_| field(&mut rng, 0.2)).collect();
        let log_r = Image::from_fn(h, w, 3, |y, x, c| -1.0 + log_r_fields[c][y * w + x]);
        let log_s_gt: Vec<Vec<f64>> = (0..m).map(|_| field(&mut rng, 0.25)).collect();
        let c_gt: Vec<[f64; 3]> = (0..m)
            .map(|_| {
                [
                    rng.gen_range(-0.1..0.1),
                    rng.gen_range(-0.1..0.1),
                    rng.gen_range(-0.1..0.1),
                ]
            })
            .collect();
        let frames: Vec<Image<f64>> = (0..m)
            .map(|i| {
                Image::from_fn(h, w, 3, |y, x, c| {
                    (log_r.at(y, x, c) + log_s_gt[i][y * w + x] + c_gt[i][c])
                        .exp()
                        .min(1.0)
                })
            })
            .collect();
        let seq = ImageSequence::new(frames, vec![Mask::all_valid(h, w); m], "lambertian").unwrap();
        let stack = to_log_stack(&seq, 1e-4).unwrap();

        let mut cfg = tight_config();
        cfg.w_rsm = 0.25;
        cfg.w_ssm = 0.25;
        let opts = SolveOptions {
            max_iters: 200,
            ..SolveOptions::default()
        };
        let (d, report) = minimize(&stack, &cfg, &opts).unwrap();
        for pair in report.energy_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12);
        }

        // compare against the gauge-fixed ground truth in the linear domain
        let gt = Decomposition {
            log_r: vec![log_r.clone(); m],
            log_s: (0..m)
                .map(|i| Image::from_fn(h, w, 1, |y, x, _| log_s_gt[i][y * w + x]))
                .collect(),
            illum: c_gt.clone(),
        };
        let gt_fixed = crate::energy::fix_gauge(&gt, stack.masks());
        let mean_log_r = |d: &Decomposition<f64>| {
            Image::from_fn(h, w, 3, |y, x, c| {
                (0..m).map(|i| d.log_r[i].at(y, x, c)).sum::<f64>() / m as f64
            })
        };
        let pred = mean_log_r(&d).map(f64::exp);
        let truth = mean_log_r(&gt_fixed).map(f64::exp);
        let mask = Mask::all_valid(h, w);
        let mse = crate::evalkit::si_mse(&pred, &truth, &mask).unwrap();
        assert!(mse < 0.01, "scale-invariant MSE {mse}");
    }
}

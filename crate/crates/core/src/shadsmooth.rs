//! Multi-scale shading smoothness with median-derivative edge weights.
//!
//! For each scale, each of the four unique 8-neighborhood directions, and
//! each frame, an edge (p, q) carries a weight built only from the input
//! sequence: frames whose grayscale log gradient J_pq sits near the
//! per-edge median over the sequence get strong smoothing, frames that
//! deviate (shadow boundaries) get weak smoothing, and edges whose
//! endpoints look alike in bilateral feature space (constant reflectance)
//! are suppressed. The loss itself is a weighted L2 on neighboring
//! log-shading differences, summed over 4 pyramid scales with weight 1/l.

use crate::bilateral::Bandwidths;
use crate::energy::Decomposition;
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::imagestack::{features_from_linear, LogStack, PYRAMID_LEVELS};
use crate::scalar::Scalar;

/// Unique 8-neighborhood directions as (dy, dx): E, S, SE, SW.
/// Every unordered neighbor pair is counted exactly once.
pub const DIRECTIONS: [(isize, isize); 4] = [(0, 1), (1, 0), (1, 1), (1, -1)];

/// Parameters of the edge-weight construction.
#[derive(Debug, Clone, Copy)]
pub struct ShadSmoothParams {
    pub lambda_med: f64,
    pub lambda_med_bar: f64,
    pub eps_med: f64,
    /// Same bandwidths as the bilateral grid; used for the neighbor
    /// affinity that suppresses constant-reflectance edges.
    pub bandwidths: Bandwidths,
}

/// Median gradient weight: penalizes deviation of J from the sequence median.
pub fn weight_vmed(j: f64, median_j: f64, lambda_med: f64) -> f64 {
    let d = j - median_j;
    (-lambda_med * d * d).exp()
}

/// Median-normalized variant; `eps_med` guards the division where the
/// median derivative vanishes.
pub fn weight_vmed_bar(j: f64, median_j: f64, lambda_med_bar: f64, eps_med: f64) -> f64 {
    let d = (j - median_j) / median_j.abs().max(eps_med);
    (-lambda_med_bar * d * d).exp()
}

/// Final edge weight: the stronger of the two median weights, suppressed
/// where the median neighbor affinity says the reflectance is constant.
pub fn combine_weights(vmed: f64, vmed_bar: f64, median_w: f64) -> f64 {
    vmed.max(vmed_bar) * (1.0 - median_w)
}

/// Median with the even-count convention (mean of the two central values).
fn median_in_place(values: &mut Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Per-direction median of J_pq over the frames where both endpoints are
/// valid. `any_valid` marks edges with at least one contributing frame.
pub struct MedianDiffs<T> {
    pub median: [Image<T>; 4],
    pub any_valid: [Mask; 4],
}

/// Medians of the grayscale log differences at pyramid scale `level` (1..=4).
pub fn median_log_diffs<T: Scalar>(stack: &LogStack<T>, level: usize) -> Result<MedianDiffs<T>> {
    let lvl = stack.level(level)?;
    let (h, w) = (lvl.h, lvl.w);
    let m = stack.frame_count();
    let mut median = [(); 4].map(|_| Image::<T>::zeros(h, w, 1));
    let mut any_valid = [(); 4].map(|_| Mask::from_vec(h, w, vec![false; h * w]));
    for (di, &(dy, dx)) in DIRECTIONS.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                let (qy, qx) = (y as isize + dy, x as isize + dx);
                if qy < 0 || qy >= h as isize || qx < 0 || qx >= w as isize {
                    continue;
                }
                let (qy, qx) = (qy as usize, qx as usize);
                let mut js = Vec::with_capacity(m);
                for i in 0..m {
                    if lvl.masks[i].valid(y, x) && lvl.masks[i].valid(qy, qx) {
                        js.push(
                            lvl.log_gray[i].at(y, x, 0).as_f64()
                                - lvl.log_gray[i].at(qy, qx, 0).as_f64(),
                        );
                    }
                }
                if let Some(med) = median_in_place(&mut js) {
                    median[di].set(y, x, 0, T::of_f64(med));
                    any_valid[di].set(y, x, true);
                }
            }
        }
    }
    Ok(MedianDiffs { median, any_valid })
}

/// One direction at one scale: cached medians and the per-frame weights.
#[derive(Debug, Clone)]
pub struct DirectionWeights<T> {
    pub median_j: Image<T>,
    pub median_w: Image<T>,
    /// v_pq per frame, anchored at p; zero where the edge contributes nothing.
    pub per_frame: Vec<Image<T>>,
}

#[derive(Debug, Clone)]
pub struct ScaleWeights<T> {
    pub h: usize,
    pub w: usize,
    pub dirs: Vec<DirectionWeights<T>>,
}

/// All edge weights for a stack; a pure function of the input sequence.
#[derive(Debug, Clone)]
pub struct EdgeWeights<T> {
    pub params: ShadSmoothParams,
    pub scales: Vec<ScaleWeights<T>>,
}

/// Builds the weights for all 4 scales and 4 directions.
pub fn build_edge_weights<T: Scalar>(
    stack: &LogStack<T>,
    params: ShadSmoothParams,
) -> Result<EdgeWeights<T>> {
    if !(params.lambda_med > 0.0) || !(params.lambda_med_bar > 0.0) || !(params.eps_med > 0.0) {
        return Err(Error::InvalidArgument(
            "shading smoothness parameters must be positive".into(),
        ));
    }
    let m = stack.frame_count();
    let mut scales = Vec::with_capacity(PYRAMID_LEVELS);
    for level in 1..=PYRAMID_LEVELS {
        let lvl = stack.level(level)?;
        let (h, w) = (lvl.h, lvl.w);
        let medians = median_log_diffs(stack, level)?;
        let feats: Vec<Image<T>> = lvl.linear.iter().map(features_from_linear).collect();

        let mut dirs = Vec::with_capacity(4);
        for (di, &(dy, dx)) in DIRECTIONS.iter().enumerate() {
            let mut median_w_img = Image::<T>::zeros(h, w, 1);
            let mut per_frame: Vec<Image<T>> = (0..m).map(|_| Image::zeros(h, w, 1)).collect();
            for y in 0..h {
                for x in 0..w {
                    if !medians.any_valid[di].valid(y, x) {
                        continue;
                    }
                    let (qy, qx) = ((y as isize + dy) as usize, (x as isize + dx) as usize);
                    // gaussian affinity between the two endpoints, per frame
                    let mut ws = Vec::with_capacity(m);
                    for i in 0..m {
                        if lvl.masks[i].valid(y, x) && lvl.masks[i].valid(qy, qx) {
                            let mut d2 = 0.0;
                            for k in 0..5 {
                                let d = (feats[i].at(y, x, k).as_f64()
                                    - feats[i].at(qy, qx, k).as_f64())
                                    / params.bandwidths[k];
                                d2 += d * d;
                            }
                            ws.push((-d2).exp());
                        }
                    }
                    let med_w = median_in_place(&mut ws).unwrap_or(0.0);
                    median_w_img.set(y, x, 0, T::of_f64(med_w));
                    let med_j = medians.median[di].at(y, x, 0).as_f64();
                    for i in 0..m {
                        if !(lvl.masks[i].valid(y, x) && lvl.masks[i].valid(qy, qx)) {
                            continue;
                        }
                        let j = lvl.log_gray[i].at(y, x, 0).as_f64()
                            - lvl.log_gray[i].at(qy, qx, 0).as_f64();
                        let v = combine_weights(
                            weight_vmed(j, med_j, params.lambda_med),
                            weight_vmed_bar(j, med_j, params.lambda_med_bar, params.eps_med),
                            med_w,
                        );
                        per_frame[i].set(y, x, 0, T::of_f64(v));
                    }
                }
            }
            dirs.push(DirectionWeights {
                median_j: medians.median[di].clone(),
                median_w: median_w_img,
                per_frame,
            });
        }
        scales.push(ScaleWeights { h, w, dirs });
    }
    Ok(EdgeWeights { params, scales })
}

/// 2x2 mean of log values with clamped (edge-replicated) coordinates.
/// Linear in the input, so the loss gradient chains through its transpose.
fn pool2_log<T: Scalar>(img: &Image<T>) -> Image<T> {
    let (h, w, _) = img.dims();
    let (h2, w2) = (h.div_ceil(2), w.div_ceil(2));
    Image::from_fn(h2, w2, 1, |yy, xx, _| {
        let mut sum = 0.0;
        for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let cy = (2 * yy + dy).min(h - 1);
            let cx = (2 * xx + dx).min(w - 1);
            sum += img.at(cy, cx, 0).as_f64();
        }
        T::of_f64(sum * 0.25)
    })
}

/// Transpose of [`pool2_log`]: scatters coarse gradients back to children.
fn pool2_log_transpose(grad_coarse: &Image<f64>, h: usize, w: usize) -> Image<f64> {
    let (h2, w2, _) = grad_coarse.dims();
    let mut out = Image::<f64>::zeros(h, w, 1);
    for yy in 0..h2 {
        for xx in 0..w2 {
            let g = grad_coarse.at(yy, xx, 0) * 0.25;
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let cy = (2 * yy + dy).min(h - 1);
                let cx = (2 * xx + dx).min(w - 1);
                out.add_at(cy, cx, 0, g);
            }
        }
    }
    out
}

/// Multi-scale shading smoothness and its gradient w.r.t. the
/// full-resolution log shading.
pub fn ssmooth_loss<T: Scalar>(
    d: &Decomposition<T>,
    weights: &EdgeWeights<T>,
) -> Result<(f64, Vec<Image<T>>)> {
    let m = d.log_s.len();
    if weights.scales.is_empty() {
        return Err(Error::InvalidArgument("edge weights hold no scales".into()));
    }
    let (h, w) = (weights.scales[0].h, weights.scales[0].w);
    for (i, s) in d.log_s.iter().enumerate() {
        if s.dims() != (h, w, 1) {
            return Err(Error::ShapeMismatch(format!(
                "log_s[{i}] dims {:?} != ({h},{w},1)",
                s.dims()
            )));
        }
    }
    if weights.scales[0].dirs[0].per_frame.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "edge weights built for {} frames, decomposition has {m}",
            weights.scales[0].dirs[0].per_frame.len()
        )));
    }

    let mut loss = 0.0f64;
    let mut grads = Vec::with_capacity(m);
    for i in 0..m {
        // level images of this frame's log shading
        let mut levels: Vec<Image<T>> = Vec::with_capacity(weights.scales.len());
        levels.push(d.log_s[i].clone());
        for _ in 1..weights.scales.len() {
            levels.push(pool2_log(levels.last().unwrap()));
        }

        // per-level edge gradients, then chain back through the pooling
        let mut level_grads: Vec<Image<f64>> = Vec::with_capacity(levels.len());
        for (li, scale) in weights.scales.iter().enumerate() {
            let sl = &levels[li];
            if (sl.h(), sl.w()) != (scale.h, scale.w) {
                return Err(Error::ShapeMismatch(format!(
                    "pooled shading at scale {} is {}x{}, weights expect {}x{}",
                    li + 1,
                    sl.w(),
                    sl.h(),
                    scale.w,
                    scale.h
                )));
            }
            let scale_factor = 1.0 / (li + 1) as f64;
            let mut g = Image::<f64>::zeros(scale.h, scale.w, 1);
            for (di, &(dy, dx)) in DIRECTIONS.iter().enumerate() {
                let vimg = &scale.dirs[di].per_frame[i];
                for y in 0..scale.h {
                    for x in 0..scale.w {
                        let v = vimg.at(y, x, 0).as_f64();
                        if v == 0.0 {
                            continue;
                        }
                        let (qy, qx) = ((y as isize + dy) as usize, (x as isize + dx) as usize);
                        let diff = sl.at(y, x, 0).as_f64() - sl.at(qy, qx, 0).as_f64();
                        loss += scale_factor * v * diff * diff;
                        let gd = scale_factor * 2.0 * v * diff;
                        g.add_at(y, x, 0, gd);
                        g.add_at(qy, qx, 0, -gd);
                    }
                }
            }
            level_grads.push(g);
        }

        // backpropagate from the coarsest level up
        let mut acc = level_grads.pop().unwrap();
        while let Some(mut g) = level_grads.pop() {
            let up = pool2_log_transpose(&acc, g.h(), g.w());
            for (a, b) in g.data_mut().iter_mut().zip(up.data().iter()) {
                *a += *b;
            }
            acc = g;
        }
        grads.push(Image::from_fn(h, w, 1, |y, x, _| {
            T::of_f64(acc.at(y, x, 0))
        }));
    }
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagestack::{to_log_stack, ImageSequence};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> ShadSmoothParams {
        ShadSmoothParams {
            lambda_med: 8.0,
            lambda_med_bar: 8.0,
            eps_med: 0.05,
            bandwidths: [12.0, 12.0, 0.2, 0.05, 0.05],
        }
    }

    fn stack_from(frames: Vec<Image<f64>>) -> LogStack<f64> {
        let masks = frames
            .iter()
            .map(|f| Mask::all_valid(f.h(), f.w()))
            .collect();
        let seq = ImageSequence::new(frames, masks, "t").unwrap();
        to_log_stack(&seq, 1e-4).unwrap()
    }

    fn two_pixel_stack(js: &[f64]) -> LogStack<f64> {
        // 1x2 gray frames engineered so J_pq = js[i] for the E direction
        let base = 0.3f64;
        let frames = js
            .iter()
            .map(|&j| {
                Image::from_fn(
                    1,
                    2,
                    3,
                    |_, x, _| if x == 0 { base * j.exp() } else { base },
                )
            })
            .collect();
        stack_from(frames)
    }

    #[test]
    fn median_odd_count() {
        let stack = two_pixel_stack(&[0.1, 0.2, 0.9]);
        let md = median_log_diffs(&stack, 1).unwrap();
        assert!((md.median[0].at(0, 0, 0) - 0.2).abs() < 1e-10);
        assert!(md.any_valid[0].valid(0, 0));
    }

    #[test]
    fn median_even_count_averages_central_pair() {
        let stack = two_pixel_stack(&[0.1, 0.3]);
        let md = median_log_diffs(&stack, 1).unwrap();
        assert!((md.median[0].at(0, 0, 0) - 0.2).abs() < 1e-10);
    }

    #[test]
    fn median_of_static_scene_is_common_value() {
        let stack = two_pixel_stack(&[0.4, 0.4, 0.4]);
        let md = median_log_diffs(&stack, 1).unwrap();
        assert!((md.median[0].at(0, 0, 0) - 0.4).abs() < 1e-10);
    }

    #[test]
    fn vmed_examples() {
        assert_eq!(weight_vmed(0.7, 0.7, 8.0), 1.0);
        assert!((weight_vmed(1.5, 0.5, 1.0) - (-1.0f64).exp()).abs() < 1e-12);
        assert!(weight_vmed(100.0, 0.0, 1.0) < 1e-300);
    }

    #[test]
    fn vmed_bar_examples() {
        assert_eq!(weight_vmed_bar(0.3, 0.3, 8.0, 0.05), 1.0);
        // guard active: median 0, eps 0.01
        assert!((weight_vmed_bar(0.01, 0.0, 1.0, 0.01) - (-1.0f64).exp()).abs() < 1e-12);
        // ratio invariance well above the guard
        let a = weight_vmed_bar(1.1, 1.0, 8.0, 0.05);
        let b = weight_vmed_bar(110.0, 100.0, 8.0, 0.05);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn combine_weight_examples() {
        assert!((combine_weights(0.2, 0.9, 0.0) - 0.9).abs() < 1e-15);
        assert_eq!(combine_weights(0.3, 0.8, 1.0), 0.0);
        // static textured edge: J constant over frames => max term is 1
        let v = combine_weights(1.0, 1.0, 0.25);
        assert!((v - 0.75).abs() < 1e-15);
    }

    #[test]
    fn constant_shading_has_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frames: Vec<Image<f64>> = (0..3)
            .map(|_| Image::from_fn(8, 8, 3, |_, _, _| rng.gen_range(0.05..0.95)))
            .collect();
        let stack = stack_from(frames);
        let weights = build_edge_weights(&stack, params()).unwrap();
        let d = Decomposition {
            log_r: (0..3).map(|_| Image::zeros(8, 8, 3)).collect(),
            log_s: (0..3)
                .map(|i| Image::constant(8, 8, 1, i as f64 * 0.3 - 0.2))
                .collect(),
            illum: vec![[0.0; 3]; 3],
        };
        let (loss, grads) = ssmooth_loss(&d, &weights).unwrap();
        assert!(loss.abs() < 1e-12);
        for g in grads {
            assert!(g.data().iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn loss_is_linear_in_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let frames: Vec<Image<f64>> = (0..2)
            .map(|_| Image::from_fn(6, 6, 3, |_, _, _| rng.gen_range(0.05..0.95)))
            .collect();
        let stack = stack_from(frames);
        let weights = build_edge_weights(&stack, params()).unwrap();
        let d = Decomposition {
            log_r: (0..2).map(|_| Image::zeros(6, 6, 3)).collect(),
            log_s: (0..2)
                .map(|_| Image::from_fn(6, 6, 1, |_, _, _| rng.gen_range(-1.0..1.0)))
                .collect(),
            illum: vec![[0.0; 3]; 2],
        };
        let (loss, _) = ssmooth_loss(&d, &weights).unwrap();
        let mut doubled = weights.clone();
        for s in &mut doubled.scales {
            for dir in &mut s.dirs {
                for pf in &mut dir.per_frame {
                    for v in pf.data_mut() {
                        *v *= 2.0;
                    }
                }
            }
        }
        let (loss2, _) = ssmooth_loss(&d, &doubled).unwrap();
        assert!((loss2 - 2.0 * loss).abs() < 1e-9 * loss.abs().max(1.0));
    }

    #[test]
    fn loss_invariant_under_per_frame_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let frames: Vec<Image<f64>> = (0..2)
            .map(|_| Image::from_fn(7, 5, 3, |_, _, _| rng.gen_range(0.05..0.95)))
            .collect();
        let stack = stack_from(frames);
        let weights = build_edge_weights(&stack, params()).unwrap();
        let log_s: Vec<Image<f64>> = (0..2)
            .map(|_| Image::from_fn(7, 5, 1, |_, _, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let d0 = Decomposition {
            log_r: (0..2).map(|_| Image::zeros(7, 5, 3)).collect(),
            log_s: log_s.clone(),
            illum: vec![[0.0; 3]; 2],
        };
        let d1 = Decomposition {
            log_r: d0.log_r.clone(),
            log_s: vec![log_s[0].map(|v| v + 0.9), log_s[1].map(|v| v - 0.4)],
            illum: vec![[0.0; 3]; 2],
        };
        let (l0, _) = ssmooth_loss(&d0, &weights).unwrap();
        let (l1, _) = ssmooth_loss(&d1, &weights).unwrap();
        assert!((l0 - l1).abs() < 1e-9 * l0.abs().max(1.0));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let frames: Vec<Image<f64>> = (0..3)
            .map(|_| Image::from_fn(8, 8, 3, |_, _, _| rng.gen_range(0.05..0.95)))
            .collect();
        let stack = stack_from(frames);
        let weights = build_edge_weights(&stack, params()).unwrap();
        let mut d = Decomposition {
            log_r: (0..3).map(|_| Image::zeros(8, 8, 3)).collect(),
            log_s: (0..3)
                .map(|_| Image::from_fn(8, 8, 1, |_, _, _| rng.gen_range(-1.0..1.0)))
                .collect(),
            illum: vec![[0.0; 3]; 3],
        };
        let (_, grads) = ssmooth_loss(&d, &weights).unwrap();
        let h = 1e-6;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..3 {
            for k in 0..64 {
                let orig = d.log_s[i].data()[k];
                d.log_s[i].data_mut()[k] = orig + h;
                let (ep, _) = ssmooth_loss(&d, &weights).unwrap();
                d.log_s[i].data_mut()[k] = orig - h;
                let (em, _) = ssmooth_loss(&d, &weights).unwrap();
                d.log_s[i].data_mut()[k] = orig;
                let fd = (ep - em) / (2.0 * h);
                num += (fd - grads[i].data()[k]).powi(2);
                den += fd * fd;
            }
        }
        let rel = (num / den.max(1e-300)).sqrt();
        assert!(rel < 1e-5, "rel err {rel}");
    }

    #[test]
    fn shadow_edge_weight_drops_in_the_shadowed_frame() {
        // constant reflectance, three even frames, one frame with a step
        // shadow across the middle column
        let shading = |frame: usize, x: usize| -> f64 {
            if frame == 3 && x >= 4 {
                0.3
            } else {
                1.0
            }
        };
        let frames: Vec<Image<f64>> = (0..4)
            .map(|i| Image::from_fn(8, 8, 3, |_, x, c| [0.8, 0.6, 0.4][c] * shading(i, x)))
            .collect();
        let stack = stack_from(frames);
        let weights = build_edge_weights(&stack, params()).unwrap();
        // E-direction edge crossing the shadow boundary: p=(y,3), q=(y,4)
        let dir = &weights.scales[0].dirs[0];
        let shadowed = dir.per_frame[3].at(4, 3, 0);
        for clear in 0..3 {
            let v = dir.per_frame[clear].at(4, 3, 0);
            assert!(
                shadowed < v,
                "shadow frame weight {shadowed} not below clear frame weight {v}"
            );
        }
    }

    #[test]
    fn weights_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let frames: Vec<Image<f64>> = (0..2)
            .map(|_| Image::from_fn(5, 5, 3, |_, _, _| rng.gen_range(0.05..0.95)))
            .collect();
        let stack = stack_from(frames);
        let a = build_edge_weights(&stack, params()).unwrap();
        let b = build_edge_weights(&stack, params()).unwrap();
        for (sa, sb) in a.scales.iter().zip(b.scales.iter()) {
            for (da, db) in sa.dirs.iter().zip(sb.dirs.iter()) {
                assert_eq!(da.median_j.data(), db.median_j.data());
                for (fa, fb) in da.per_frame.iter().zip(db.per_frame.iter()) {
                    assert_eq!(fa.data(), fb.data());
                }
            }
        }
    }
}

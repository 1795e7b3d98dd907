//! Average precision for smooth/non-smooth shading classification.
//!
//! Pixels are scored by the gradient magnitude of log shading, which is
//! invariant to the global scale of the prediction. Non-smooth (shadow
//! boundary) annotations are scored from a 10x10 max-filtered copy of the
//! gradient image because those annotations are not precisely localized;
//! smooth-region annotations use the unfiltered gradients so the filter
//! cannot bleed boundary responses into them.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

/// Annotated pixels for one image: smooth-shading region pixels and
/// non-smooth (shadow boundary) point pixels, as (y, x). Disjoint.
#[derive(Debug, Clone, Default)]
pub struct SawLabels {
    pub smooth: Vec<(usize, usize)>,
    pub non_smooth: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct SawConfig {
    /// Side of the square max filter applied before scoring non-smooth
    /// annotations.
    pub max_filter: usize,
    /// Fraction of smooth-region pixels used (deterministic stride in
    /// scan order); the exact sampling protocol is not pinned upstream.
    pub smooth_sample_rate: f64,
    /// Compatibility switch for the earlier metric definition: linear
    /// gradients normalized to [0,1], max filter applied to both classes.
    pub use_original_metric: bool,
}

impl Default for SawConfig {
    fn default() -> Self {
        Self {
            max_filter: 10,
            smooth_sample_rate: 1.0,
            use_original_metric: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SawPrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone)]
pub struct SawApResult {
    pub ap: f64,
    /// One point per distinct score threshold, preceded by (recall 0,
    /// precision 1).
    pub pr: Vec<SawPrPoint>,
    pub positives: usize,
    pub negatives: usize,
}

/// ||grad log S||_2 by forward differences; last row/column differences
/// are zero. Errors on any non-positive shading value.
pub fn log_gradient_magnitude<T: Scalar>(shading: &Image<T>) -> Result<Image<f64>> {
    let (h, w, ch) = shading.dims();
    if ch != 1 {
        return Err(Error::ShapeMismatch(format!(
            "shading must be single-channel, got {ch}"
        )));
    }
    let mut logs = Image::<f64>::zeros(h, w, 1);
    for y in 0..h {
        for x in 0..w {
            let v = shading.at(y, x, 0).as_f64();
            if !(v > 0.0) {
                return Err(Error::NonPositiveShading { x, y, value: v });
            }
            logs.set(y, x, 0, v.ln());
        }
    }
    Ok(gradient_magnitude(&logs))
}

fn gradient_magnitude(img: &Image<f64>) -> Image<f64> {
    let (h, w, _) = img.dims();
    Image::from_fn(h, w, 1, |y, x, _| {
        let gx = if x + 1 < w {
            img.at(y, x + 1, 0) - img.at(y, x, 0)
        } else {
            0.0
        };
        let gy = if y + 1 < h {
            img.at(y + 1, x, 0) - img.at(y, x, 0)
        } else {
            0.0
        };
        (gx * gx + gy * gy).sqrt()
    })
}

/// Square max filter of side `size`; the window spans offsets
/// [-size/2, size/2) like the usual even-kernel convention.
fn max_filter(img: &Image<f64>, size: usize) -> Image<f64> {
    let (h, w, _) = img.dims();
    let lo = -(size as isize / 2);
    let hi = size as isize + lo; // exclusive
    Image::from_fn(h, w, 1, |y, x, _| {
        let mut best = f64::NEG_INFINITY;
        for dy in lo..hi {
            for dx in lo..hi {
                let yy = y as isize + dy;
                let xx = x as isize + dx;
                if yy >= 0 && yy < h as isize && xx >= 0 && xx < w as isize {
                    best = best.max(img.at(yy as usize, xx as usize, 0));
                }
            }
        }
        best
    })
}

/// Pooled average precision over a set of predicted shadings with labels.
/// The PR curve sweeps every distinct score as a threshold; AP is the
/// trapezoidal area under precision over recall.
pub fn saw_ap<T: Scalar>(
    predictions: &[(&Image<T>, &SawLabels)],
    cfg: &SawConfig,
) -> Result<SawApResult> {
    if predictions.is_empty() {
        return Err(Error::NoUsableAnnotations(
            "no prediction/label pairs".into(),
        ));
    }
    if !(cfg.smooth_sample_rate > 0.0 && cfg.smooth_sample_rate <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "smooth_sample_rate must lie in (0,1], got {}",
            cfg.smooth_sample_rate
        )));
    }
    let stride = (1.0 / cfg.smooth_sample_rate).round().max(1.0) as usize;

    // (score, is_non_smooth)
    let mut samples: Vec<(f64, bool)> = Vec::new();
    for (shading, labels) in predictions {
        let (h, w, _) = shading.dims();
        let g = if cfg.use_original_metric {
            let linear: Image<f64> =
                Image::from_fn(h, w, 1, |y, x, _| shading.at(y, x, 0).as_f64());
            let raw = gradient_magnitude(&linear);
            let peak = raw.data().iter().cloned().fold(0.0f64, f64::max);
            if peak > 0.0 {
                raw.map(|v| v / peak)
            } else {
                raw
            }
        } else {
            log_gradient_magnitude(*shading)?
        };
        let g_max = max_filter(&g, cfg.max_filter);
        let smooth_scores = if cfg.use_original_metric { &g_max } else { &g };

        for &(y, x) in &labels.non_smooth {
            if y >= h || x >= w {
                return Err(Error::Annotation {
                    path: Path::new("<labels>").to_path_buf(),
                    reason: format!("non-smooth label ({x},{y}) outside {w}x{h}"),
                });
            }
            samples.push((g_max.at(y, x, 0), true));
        }
        for (k, &(y, x)) in labels.smooth.iter().enumerate() {
            if y >= h || x >= w {
                return Err(Error::Annotation {
                    path: Path::new("<labels>").to_path_buf(),
                    reason: format!("smooth label ({x},{y}) outside {w}x{h}"),
                });
            }
            if k % stride == 0 {
                samples.push((smooth_scores.at(y, x, 0), false));
            }
        }
    }

    let positives = samples.iter().filter(|(_, p)| *p).count();
    let negatives = samples.len() - positives;
    if positives == 0 {
        return Err(Error::NoUsableAnnotations(
            "no non-smooth annotations".into(),
        ));
    }

    // descending score sweep; one PR point per distinct score
    samples.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut pr = vec![SawPrPoint {
        threshold: f64::INFINITY,
        recall: 0.0,
        precision: 1.0,
    }];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0usize;
    while i < samples.len() {
        let threshold = samples[i].0;
        while i < samples.len() && samples[i].0 == threshold {
            if samples[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        pr.push(SawPrPoint {
            threshold,
            recall: tp as f64 / positives as f64,
            precision: tp as f64 / (tp + fp) as f64,
        });
    }

    let mut ap = 0.0f64;
    for pair in pr.windows(2) {
        ap += (pair[1].recall - pair[0].recall) * 0.5 * (pair[1].precision + pair[0].precision);
    }
    Ok(SawApResult {
        ap,
        pr,
        positives,
        negatives,
    })
}

/// Reads a label map PNG: class codes 0 = unlabeled, 1 = smooth,
/// 2 = non-smooth. Any other code is an annotation error.
pub fn load_saw_labels(path: &Path) -> Result<SawLabels> {
    let dynimg = image::open(path).map_err(|source| Error::ImageDecode {
        path: path.to_path_buf(),
        source,
    })?;
    let gray = dynimg.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let mut labels = SawLabels::default();
    for y in 0..h {
        for x in 0..w {
            match gray.get_pixel(x as u32, y as u32).0[0] {
                0 => {}
                1 => labels.smooth.push((y, x)),
                2 => labels.non_smooth.push((y, x)),
                other => {
                    return Err(Error::Annotation {
                        path: path.to_path_buf(),
                        reason: format!("unknown class code {other} at ({x},{y})"),
                    })
                }
            }
        }
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_shading(h: usize, w: usize, left: f64, right: f64) -> Image<f64> {
        Image::from_fn(h, w, 1, |_, x, _| if x < w / 2 { left } else { right })
    }

    fn step_labels(h: usize, w: usize) -> SawLabels {
        let mut labels = SawLabels::default();
        for y in 0..h {
            labels.non_smooth.push((y, w / 2 - 1)); // on the step
            labels.smooth.push((y, 1)); // deep in the flat region
        }
        labels
    }

    #[test]
    fn constant_shading_has_zero_gradients() {
        let s = Image::<f64>::constant(6, 6, 1, 0.42);
        let g = log_gradient_magnitude(&s).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_positive_shading_is_rejected_with_location() {
        let mut s = Image::<f64>::constant(3, 3, 1, 0.5);
        s.set(1, 2, 0, 0.0);
        match log_gradient_magnitude(&s) {
            Err(Error::NonPositiveShading { x, y, .. }) => assert_eq!((x, y), (2, 1)),
            other => panic!("expected NonPositiveShading, got {other:?}"),
        }
    }

    #[test]
    fn step_edge_scores_perfect_ap() {
        let s = step_shading(12, 12, 1.0, 0.25);
        let labels = step_labels(12, 12);
        let result = saw_ap(&[(&s, &labels)], &SawConfig::default()).unwrap();
        assert_eq!(result.ap, 1.0);

        // brute-force PR oracle over every distinct threshold
        let g = log_gradient_magnitude(&s).unwrap();
        let gmax = max_filter(&g, 10);
        let mut scored: Vec<(f64, bool)> = labels
            .non_smooth
            .iter()
            .map(|&(y, x)| (gmax.at(y, x, 0), true))
            .chain(labels.smooth.iter().map(|&(y, x)| (g.at(y, x, 0), false)))
            .collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let pos = scored.iter().filter(|(_, p)| *p).count() as f64;
        let mut oracle_pts = vec![(0.0f64, 1.0f64)];
        let thresholds: Vec<f64> = {
            let mut t: Vec<f64> = scored.iter().map(|(s, _)| *s).collect();
            t.dedup();
            t
        };
        for tau in thresholds {
            let tp = scored.iter().filter(|(s, p)| *p && *s >= tau).count() as f64;
            let fp = scored.iter().filter(|(s, p)| !*p && *s >= tau).count() as f64;
            oracle_pts.push((tp / pos, tp / (tp + fp)));
        }
        let mut oracle_ap = 0.0;
        for pair in oracle_pts.windows(2) {
            oracle_ap += (pair[1].0 - pair[0].0) * 0.5 * (pair[1].1 + pair[0].1);
        }
        assert!((result.ap - oracle_ap).abs() < 1e-12);
    }

    #[test]
    fn asymmetric_rule_protects_smooth_pixels_near_the_edge() {
        // a smooth annotation within max-filter range of the step is
        // still scored from the unfiltered gradients
        let s = step_shading(12, 12, 1.0, 0.25);
        let mut labels = SawLabels::default();
        for y in 0..12 {
            labels.non_smooth.push((y, 5));
            labels.smooth.push((y, 3)); // 2 columns from the step
        }
        let result = saw_ap(&[(&s, &labels)], &SawConfig::default()).unwrap();
        assert_eq!(result.ap, 1.0);
        // the compatibility metric max-filters both classes and breaks here
        let original = saw_ap(
            &[(&s, &labels)],
            &SawConfig {
                use_original_metric: true,
                ..SawConfig::default()
            },
        )
        .unwrap();
        assert!(original.ap < 1.0);
    }

    #[test]
    fn ap_is_scale_invariant_in_log_domain() {
        let s = Image::from_fn(10, 10, 1, |y, x, _| {
            0.2 + 0.07 * ((y * 3 + x * 5) % 9) as f64
        });
        let labels = SawLabels {
            smooth: (0..10).map(|y| (y, 2)).collect(),
            non_smooth: (0..10).map(|y| (y, 7)).collect(),
        };
        let a = saw_ap(&[(&s, &labels)], &SawConfig::default()).unwrap();
        let scaled = s.map(|v| v * 1000.0);
        let b = saw_ap(&[(&scaled, &labels)], &SawConfig::default()).unwrap();
        assert_eq!(a.ap, b.ap);
        for (pa, pb) in a.pr.iter().zip(b.pr.iter()) {
            assert_eq!(pa.recall, pb.recall);
            assert_eq!(pa.precision, pb.precision);
        }
    }

    #[test]
    fn smooth_sampling_stride_is_deterministic() {
        let s = step_shading(8, 8, 1.0, 0.5);
        let labels = step_labels(8, 8);
        let cfg = SawConfig {
            smooth_sample_rate: 0.5,
            ..SawConfig::default()
        };
        let a = saw_ap(&[(&s, &labels)], &cfg).unwrap();
        let b = saw_ap(&[(&s, &labels)], &cfg).unwrap();
        assert_eq!(a.negatives, 4); // every 2nd of 8 smooth pixels
        assert_eq!(a.ap, b.ap);
    }

    #[test]
    fn no_positive_annotations_is_an_error() {
        let s = step_shading(6, 6, 1.0, 0.5);
        let labels = SawLabels {
            smooth: vec![(0, 0)],
            non_smooth: vec![],
        };
        assert!(matches!(
            saw_ap(&[(&s, &labels)], &SawConfig::default()),
            Err(Error::NoUsableAnnotations(_))
        ));
    }
}

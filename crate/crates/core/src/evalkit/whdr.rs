//! Weighted Human Disagreement Rate over sparse relative reflectance
//! judgments.

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::scalar::Scalar;

/// Which point a human judged darker (or neither).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DarkerLabel {
    Point1,
    Point2,
    Equal,
}

/// One pairwise judgment with normalized point coordinates in [0,1]^2.
#[derive(Debug, Clone, Copy)]
pub struct Judgment {
    /// (x, y), normalized by image width and height.
    pub point1: (f64, f64),
    pub point2: (f64, f64),
    pub darker: DarkerLabel,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct WhdrResult {
    /// Weighted fraction of disagreements in [0,1].
    pub whdr: f64,
    pub used: usize,
    pub skipped: usize,
    pub disagreement_weight: f64,
    pub total_weight: f64,
}

fn lum_at<T: Scalar>(img: &Image<T>, y: usize, x: usize) -> f64 {
    let ch = img.channels();
    (0..ch).map(|c| img.at(y, x, c).as_f64()).sum::<f64>() / ch as f64
}

fn to_pixel(p: (f64, f64), h: usize, w: usize) -> Option<(usize, usize)> {
    let (x, y) = p;
    if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
        return None;
    }
    let px = ((x * w as f64).floor() as usize).min(w - 1);
    let py = ((y * h as f64).floor() as usize).min(h - 1);
    Some((py, px))
}

/// Classifies a luminance pair with the equality band `delta`:
/// "equal" iff 1/(1+delta) <= lum1/lum2 <= 1+delta, else the darker side.
fn predict(lum1: f64, lum2: f64, delta: f64) -> DarkerLabel {
    let band = 1.0 + delta;
    if lum1 <= band * lum2 && lum2 <= band * lum1 {
        DarkerLabel::Equal
    } else if lum1 < lum2 {
        DarkerLabel::Point1
    } else {
        DarkerLabel::Point2
    }
}

/// Scores a predicted reflectance against judgments. Judgments whose
/// points fall outside the image, on masked-out pixels, or that carry a
/// nonpositive weight are skipped and tallied.
pub fn whdr<T: Scalar>(
    pred_r: &Image<T>,
    judgments: &[Judgment],
    delta: f64,
    mask: Option<&Mask>,
) -> Result<WhdrResult> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "delta must be positive, got {delta}"
        )));
    }
    let (h, w, _) = pred_r.dims();
    // weights are summed in sorted order so the score is independent of
    // the annotation ordering, bit for bit
    let mut disagreements: Vec<f64> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut skipped = 0usize;
    for j in judgments {
        if !(j.weight > 0.0) || !j.weight.is_finite() {
            skipped += 1;
            continue;
        }
        let (Some(p1), Some(p2)) = (to_pixel(j.point1, h, w), to_pixel(j.point2, h, w)) else {
            skipped += 1;
            continue;
        };
        if let Some(m) = mask {
            if !m.valid(p1.0, p1.1) || !m.valid(p2.0, p2.1) {
                skipped += 1;
                continue;
            }
        }
        let predicted = predict(
            lum_at(pred_r, p1.0, p1.1),
            lum_at(pred_r, p2.0, p2.1),
            delta,
        );
        if predicted != j.darker {
            disagreements.push(j.weight);
        }
        weights.push(j.weight);
    }
    let used = weights.len();
    if used == 0 {
        return Err(Error::NoUsableAnnotations(
            "every judgment was skipped".into(),
        ));
    }
    let sorted_sum = |mut v: Vec<f64>| -> f64 {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.iter().sum()
    };
    let disagreement_weight = sorted_sum(disagreements);
    let total_weight = sorted_sum(weights);
    Ok(WhdrResult {
        whdr: disagreement_weight / total_weight,
        used,
        skipped,
        disagreement_weight,
        total_weight,
    })
}

#[derive(Deserialize)]
struct IiwFile {
    #[serde(default)]
    intrinsic_points: Vec<IiwPoint>,
    #[serde(default)]
    intrinsic_comparisons: Vec<IiwComparison>,
}

#[derive(Deserialize)]
struct IiwPoint {
    id: i64,
    x: f64,
    y: f64,
    #[serde(default)]
    opaque: Option<bool>,
}

#[derive(Deserialize)]
struct IiwComparison {
    point1: i64,
    point2: i64,
    #[serde(default)]
    darker: Option<String>,
    #[serde(default)]
    darker_score: Option<f64>,
}

/// Reads judgments from the public annotation JSON: points with ids and
/// normalized coordinates, comparisons with `darker` in {"1","2","E"} and
/// a `darker_score` weight. Comparisons with missing labels, nonpositive
/// scores, unknown point ids, or non-opaque endpoints are dropped.
pub fn load_iiw_judgments(path: &Path) -> Result<Vec<Judgment>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: IiwFile = serde_json::from_str(&text).map_err(|e| Error::Annotation {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let points: std::collections::HashMap<i64, &IiwPoint> =
        file.intrinsic_points.iter().map(|p| (p.id, p)).collect();
    let mut out = Vec::new();
    for c in &file.intrinsic_comparisons {
        let (Some(p1), Some(p2)) = (points.get(&c.point1), points.get(&c.point2)) else {
            continue;
        };
        if p1.opaque == Some(false) || p2.opaque == Some(false) {
            continue;
        }
        let darker = match c.darker.as_deref() {
            Some("1") => DarkerLabel::Point1,
            Some("2") => DarkerLabel::Point2,
            Some("E") => DarkerLabel::Equal,
            _ => continue,
        };
        let Some(weight) = c.darker_score else {
            continue;
        };
        if !(weight > 0.0) || !weight.is_finite() {
            continue;
        }
        out.push(Judgment {
            point1: (p1.x, p1.y),
            point2: (p2.x, p2.y),
            darker,
            weight,
        });
    }
    Ok(out)
}

//! `lsplit eval-*`: score predictions against annotations, matched by
//! filename stem. Per-image results and the aggregate (mean over images)
//! are printed; unmatched files are listed and skipped.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use lsplit_core::evalkit::{
    load_iiw_judgments, load_saw_labels, mit_scores, saw_ap, whdr, MitGroundTruth, MitTriple,
};
use lsplit_core::image::Image;
use lsplit_core::imagestack::{load_gray_image, load_mask_image, load_rgb_image};
use lsplit_core::rawfloat::read_raw;

use crate::config::RunConfig;

const IMAGE_EXTS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Files in `dir` with one of `exts`, keyed by stem, deterministic order.
fn stems_in(dir: &Path, exts: &[&str]) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if !path.is_file() {
            continue;
        }
        let Some(ext) = path.extension().and_then(|e| e.to_str()) else {
            continue;
        };
        if !exts.contains(&ext.to_ascii_lowercase().as_str()) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.entry(stem.to_string()).or_insert(path);
        }
    }
    Ok(out)
}

fn find_with_exts(dir: &Path, stem: &str, exts: &[&str]) -> Option<PathBuf> {
    for ext in exts {
        let candidate = dir.join(format!("{stem}.{ext}"));
        if candidate.is_file() {
            return Some(candidate);
        }
    }
    None
}

/// Loads a single-image prediction: raw log-domain floats when a
/// `.lsplit` file exists (multi-frame stacks reduce to the frame-mean in
/// the log domain), otherwise a plain image file in linear [0,1].
fn load_prediction(dir: &Path, stem: &str, channels: usize) -> Result<Option<Image<f64>>> {
    let raw_path = dir.join(format!("{stem}.lsplit"));
    if raw_path.is_file() {
        let frames = read_raw::<f64>(&raw_path)?;
        let (h, w, ch) = frames[0].dims();
        if ch != channels {
            anyhow::bail!(
                "{}: expected {channels} channels, found {ch}",
                raw_path.display()
            );
        }
        let m = frames.len() as f64;
        return Ok(Some(Image::from_fn(h, w, ch, |y, x, c| {
            (frames.iter().map(|f| f.at(y, x, c)).sum::<f64>() / m).exp()
        })));
    }
    match find_with_exts(dir, stem, &IMAGE_EXTS) {
        Some(path) if channels == 3 => Ok(Some(load_rgb_image::<f64>(&path)?)),
        Some(path) => Ok(Some(load_gray_image::<f64>(&path)?)),
        None => Ok(None),
    }
}

fn finish(scored: usize, skipped: &[String]) -> Result<()> {
    for stem in skipped {
        eprintln!("skipped (no matching annotation/prediction): {stem}");
    }
    if scored == 0 {
        anyhow::bail!("no prediction/annotation pairs could be scored");
    }
    Ok(())
}

pub fn run_iiw(pred_dir: &Path, annot_dir: &Path, cfg: &RunConfig) -> Result<()> {
    let preds = stems_in(pred_dir, &IMAGE_EXTS)?;
    let mut whdr_sum = 0.0f64;
    let mut scored = 0usize;
    let mut skipped = Vec::new();
    for (stem, pred_path) in &preds {
        let annot = annot_dir.join(format!("{stem}.json"));
        if !annot.is_file() {
            skipped.push(stem.clone());
            continue;
        }
        let judgments = load_iiw_judgments(&annot)?;
        let pred = load_rgb_image::<f64>(pred_path)?;
        let result = whdr(&pred, &judgments, cfg.whdr_delta, None)
            .with_context(|| format!("scoring {stem}"))?;
        println!(
            "{stem} whdr={} used={} skipped={}",
            result.whdr, result.used, result.skipped
        );
        whdr_sum += result.whdr;
        scored += 1;
    }
    finish(scored, &skipped)?;
    println!(
        "aggregate whdr={} images={scored}",
        whdr_sum / scored as f64
    );
    Ok(())
}

pub fn run_saw(pred_dir: &Path, annot_dir: &Path, out_dir: &Path, cfg: &RunConfig) -> Result<()> {
    let annots = stems_in(annot_dir, &["png"])?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let saw_cfg = cfg.saw_config();
    let mut ap_sum = 0.0f64;
    let mut scored = 0usize;
    let mut skipped = Vec::new();
    for (stem, annot_path) in &annots {
        let Some(pred) = load_prediction(pred_dir, stem, 1)? else {
            skipped.push(stem.clone());
            continue;
        };
        let labels = load_saw_labels(annot_path)?;
        let result =
            saw_ap(&[(&pred, &labels)], &saw_cfg).with_context(|| format!("scoring {stem}"))?;
        println!(
            "{stem} ap={} positives={} negatives={}",
            result.ap, result.positives, result.negatives
        );
        let mut pr_text = String::from("# recall precision\n");
        for point in &result.pr {
            pr_text.push_str(&format!("{} {}\n", point.recall, point.precision));
        }
        let pr_path = out_dir.join(format!("pr_{stem}.txt"));
        std::fs::write(&pr_path, pr_text)
            .with_context(|| format!("writing {}", pr_path.display()))?;
        ap_sum += result.ap;
        scored += 1;
    }
    finish(scored, &skipped)?;
    println!("aggregate ap={} images={scored}", ap_sum / scored as f64);
    Ok(())
}

fn print_triple(prefix: &str, t: &MitTriple) -> String {
    format!(
        "{prefix}_mse={} {prefix}_lmse={} {prefix}_dssim={}",
        t.mse, t.lmse, t.dssim
    )
}

pub fn run_mit(pred_dir: &Path, annot_dir: &Path, _cfg: &RunConfig) -> Result<()> {
    // ground-truth stems come from *_reflectance images in the annotation dir
    let mut stems: Vec<String> = stems_in(annot_dir, &IMAGE_EXTS)?
        .keys()
        .filter_map(|s| s.strip_suffix("_reflectance").map(str::to_string))
        .collect();
    stems.sort();
    let mut sums = [0.0f64; 6];
    let mut scored = 0usize;
    let mut skipped = Vec::new();
    for stem in &stems {
        let gt_r = find_with_exts(annot_dir, &format!("{stem}_reflectance"), &IMAGE_EXTS);
        let gt_s = find_with_exts(annot_dir, &format!("{stem}_shading"), &IMAGE_EXTS);
        let gt_m = find_with_exts(annot_dir, &format!("{stem}_mask"), &IMAGE_EXTS);
        let (Some(gt_r), Some(gt_s), Some(gt_m)) = (gt_r, gt_s, gt_m) else {
            skipped.push(stem.clone());
            continue;
        };
        let pred_r = load_prediction(pred_dir, &format!("{stem}_reflectance"), 3)?;
        let pred_s = load_prediction(pred_dir, &format!("{stem}_shading"), 1)?;
        let (Some(pred_r), Some(pred_s)) = (pred_r, pred_s) else {
            skipped.push(stem.clone());
            continue;
        };
        let gt = MitGroundTruth {
            reflectance: load_rgb_image::<f64>(&gt_r)?,
            shading: load_gray_image::<f64>(&gt_s)?,
            mask: load_mask_image(&gt_m)?,
        };
        let scores =
            mit_scores(&pred_r, &pred_s, &gt).with_context(|| format!("scoring {stem}"))?;
        println!(
            "{stem} {} {}",
            print_triple("refl", &scores.reflectance),
            print_triple("shade", &scores.shading)
        );
        for (k, v) in [
            scores.reflectance.mse,
            scores.reflectance.lmse,
            scores.reflectance.dssim,
            scores.shading.mse,
            scores.shading.lmse,
            scores.shading.dssim,
        ]
        .iter()
        .enumerate()
        {
            sums[k] += v;
        }
        scored += 1;
    }
    finish(scored, &skipped)?;
    let n = scored as f64;
    println!(
        "aggregate refl_mse={} refl_lmse={} refl_dssim={} shade_mse={} shade_lmse={} shade_dssim={} images={scored}",
        sums[0] / n,
        sums[1] / n,
        sums[2] / n,
        sums[3] / n,
        sums[4] / n,
        sums[5] / n
    );
    Ok(())
}

//! `lsplit decompose`: solve one sequence and write the decomposition.

use std::path::Path;

use anyhow::{Context, Result};
use lsplit_core::image::Image;
use lsplit_core::imagestack::{load_sequence, to_log_stack};
use lsplit_core::rawfloat::write_raw;
use lsplit_core::solver::{minimize, SolveReport};

use crate::commands::{
    write_illum, CONFIG_ECHO_FILE, ILLUM_FILE, RAW_REFLECTANCE, RAW_SHADING, REPORT_FILE,
};
use crate::config::RunConfig;
use crate::display::write_display_png;

fn write_report(
    path: &Path,
    sequence_id: &str,
    m: usize,
    h: usize,
    w: usize,
    report: &SolveReport,
) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("sequence: {sequence_id}\n"));
    out.push_str(&format!("frames: {m}\n"));
    out.push_str(&format!("size: {w}x{h}\n"));
    out.push_str(&format!("iterations: {}\n", report.iterations));
    out.push_str(&format!("converged: {}\n", report.converged));
    out.push_str(&format!("final_grad_norm: {}\n", report.final_grad_norm));
    out.push_str(&format!(
        "term reconstruct = {}\n",
        report.final_terms.reconstruct
    ));
    out.push_str(&format!(
        "term consistency = {}\n",
        report.final_terms.consistency
    ));
    out.push_str(&format!("term rsmooth = {}\n", report.final_terms.rsmooth));
    out.push_str(&format!("term ssmooth = {}\n", report.final_terms.ssmooth));
    out.push_str(&format!("total = {}\n", report.final_terms.total));
    out.push_str("energy_trace:\n");
    for (i, e) in report.energy_trace.iter().enumerate() {
        out.push_str(&format!("{i} {e}\n"));
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn run(seq_dir: &Path, out_dir: &Path, cfg: &RunConfig) -> Result<()> {
    let mask_dir = (!cfg.mask_dir.is_empty()).then(|| Path::new(&cfg.mask_dir));
    let seq = load_sequence::<f64>(seq_dir, mask_dir)?;
    let stack = to_log_stack(&seq, cfg.eps_img)?;
    let (m, h, w) = (stack.frame_count(), stack.h(), stack.w());

    let (d, report) = minimize(&stack, &cfg.energy_config(), &cfg.solve_options())?;

    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    write_raw(&out_dir.join(RAW_REFLECTANCE), &d.log_r)?;
    write_raw(&out_dir.join(RAW_SHADING), &d.log_s)?;
    write_illum(&out_dir.join(ILLUM_FILE), &d.illum)?;
    write_report(
        &out_dir.join(REPORT_FILE),
        stack.sequence_id(),
        m,
        h,
        w,
        &report,
    )?;
    std::fs::write(out_dir.join(CONFIG_ECHO_FILE), cfg.canonical())
        .with_context(|| format!("writing {}", out_dir.join(CONFIG_ECHO_FILE).display()))?;

    // one shared reflectance display from the frame-mean log reflectance
    let mean_r = Image::from_fn(h, w, 3, |y, x, c| {
        ((0..m).map(|i| d.log_r[i].at(y, x, c)).sum::<f64>() / m as f64).exp()
    });
    write_display_png(&out_dir.join("reflectance.png"), &mean_r)?;
    for i in 0..m {
        let shading = Image::from_fn(h, w, 1, |y, x, _| d.log_s[i].at(y, x, 0).exp());
        write_display_png(&out_dir.join(format!("shading_{:04}.png", i + 1)), &shading)?;
    }

    println!(
        "decomposed {} ({m} frames, {w}x{h}): {} iterations, converged={}, total energy {}",
        stack.sequence_id(),
        report.iterations,
        report.converged,
        report.final_terms.total
    );
    Ok(())
}

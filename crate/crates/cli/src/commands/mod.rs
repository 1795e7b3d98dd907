//! Subcommand implementations.

pub mod bench;
pub mod decompose;
pub mod eval;
pub mod losses;

use std::path::Path;

use anyhow::{Context, Result};

pub const RAW_REFLECTANCE: &str = "reflectance.lsplit";
pub const RAW_SHADING: &str = "shading.lsplit";
pub const ILLUM_FILE: &str = "illum.txt";
pub const REPORT_FILE: &str = "report.txt";
pub const CONFIG_ECHO_FILE: &str = "config_resolved.txt";

/// Writes the per-frame illumination colors as a text table:
/// `frame c_r c_g c_b`, one row per frame, 1-based frame indices.
pub fn write_illum(path: &Path, illum: &[[f64; 3]]) -> Result<()> {
    let mut out = String::from("# per-frame illumination color (log domain): frame c_r c_g c_b\n");
    for (i, c) in illum.iter().enumerate() {
        out.push_str(&format!("{} {} {} {}\n", i + 1, c[0], c[1], c[2]));
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn read_illum(path: &Path) -> Result<Vec<[f64; 3]>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows: Vec<(usize, [f64; 3])> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            anyhow::bail!("{}: line {} needs 4 fields", path.display(), lineno + 1);
        }
        let frame: usize = fields[0]
            .parse()
            .with_context(|| format!("{}: line {}", path.display(), lineno + 1))?;
        let mut c = [0.0; 3];
        for k in 0..3 {
            c[k] = fields[k + 1]
                .parse()
                .with_context(|| format!("{}: line {}", path.display(), lineno + 1))?;
        }
        rows.push((frame, c));
    }
    rows.sort_by_key(|(frame, _)| *frame);
    for (i, (frame, _)) in rows.iter().enumerate() {
        if *frame != i + 1 {
            anyhow::bail!(
                "{}: frame indices must be 1..=m without gaps",
                path.display()
            );
        }
    }
    Ok(rows.into_iter().map(|(_, c)| c).collect())
}

//! `lsplit losses`: evaluate the energy terms for a stored decomposition.
//! Usable as an external loss oracle: values match the library evaluation
//! on the file contents bit for bit.

use std::path::Path;

use anyhow::{Context, Result};
use lsplit_core::energy::{total_energy, Decomposition, Precomp};
use lsplit_core::imagestack::{load_sequence, to_log_stack};
use lsplit_core::rawfloat::read_raw;

use crate::commands::{read_illum, ILLUM_FILE, RAW_REFLECTANCE, RAW_SHADING};
use crate::config::RunConfig;

pub fn run(seq_dir: &Path, decomp_dir: &Path, cfg: &RunConfig) -> Result<()> {
    let mask_dir = (!cfg.mask_dir.is_empty()).then(|| Path::new(&cfg.mask_dir));
    let seq = load_sequence::<f64>(seq_dir, mask_dir)?;
    let stack = to_log_stack(&seq, cfg.eps_img)?;

    let log_r = read_raw::<f64>(&decomp_dir.join(RAW_REFLECTANCE))
        .with_context(|| format!("loading reflectance from {}", decomp_dir.display()))?;
    let log_s = read_raw::<f64>(&decomp_dir.join(RAW_SHADING))
        .with_context(|| format!("loading shading from {}", decomp_dir.display()))?;
    let illum = read_illum(&decomp_dir.join(ILLUM_FILE))?;
    let d = Decomposition {
        log_r,
        log_s,
        illum,
    };

    let energy_cfg = cfg.energy_config();
    let precomp = Precomp::build(&stack, &energy_cfg)?;
    let e = total_energy(&stack, &d, &energy_cfg, &precomp)?;

    println!("reconstruct = {}", e.reconstruct);
    println!("consistency = {}", e.consistency);
    println!("rsmooth = {}", e.rsmooth);
    println!("ssmooth = {}", e.ssmooth);
    println!("total = {}", e.total);
    Ok(())
}

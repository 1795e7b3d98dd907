//! Flat key-value run configuration.
//!
//! Every key has a default; unknown keys are errors. Parsing the
//! canonical text form reproduces the config exactly, so each run can
//! echo the fully resolved configuration it used.

use std::path::Path;

use anyhow::{bail, Context, Result};
use lsplit_core::energy::EnergyConfig;
use lsplit_core::evalkit::SawConfig;
use lsplit_core::solver::SolveOptions;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // energy
    pub w_rc: f64,
    pub w_rsm: f64,
    pub w_ssm: f64,
    pub bandwidth_x: f64,
    pub bandwidth_y: f64,
    pub bandwidth_intensity: f64,
    pub bandwidth_c1: f64,
    pub bandwidth_c2: f64,
    pub lambda_med: f64,
    pub lambda_med_bar: f64,
    pub eps_med: f64,
    pub eps_img: f64,
    pub bisto_max_iters: usize,
    pub bisto_tol: f64,
    pub grayscale_shading: bool,
    // solver
    pub max_iters: usize,
    /// 0 selects the automatic threshold 1e-6 * sqrt(mn).
    pub grad_tol: f64,
    pub armijo_c1: f64,
    pub max_backtracks: usize,
    pub report_every: usize,
    // evaluation conventions
    pub whdr_delta: f64,
    pub saw_max_filter: usize,
    pub saw_smooth_sample_rate: f64,
    pub saw_original_metric: bool,
    pub lmse_window: usize,
    pub lmse_step: usize,
    // io
    pub mask_dir: String,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let e = EnergyConfig::default();
        let s = SolveOptions::default();
        Self {
            w_rc: e.w_rc,
            w_rsm: e.w_rsm,
            w_ssm: e.w_ssm,
            bandwidth_x: e.bandwidths[0],
            bandwidth_y: e.bandwidths[1],
            bandwidth_intensity: e.bandwidths[2],
            bandwidth_c1: e.bandwidths[3],
            bandwidth_c2: e.bandwidths[4],
            lambda_med: e.lambda_med,
            lambda_med_bar: e.lambda_med_bar,
            eps_med: e.eps_med,
            eps_img: e.eps_img,
            bisto_max_iters: e.bisto_max_iters,
            bisto_tol: e.bisto_tol,
            grayscale_shading: e.grayscale_shading,
            max_iters: s.max_iters,
            grad_tol: 0.0,
            armijo_c1: s.armijo_c1,
            max_backtracks: s.max_backtracks,
            report_every: s.report_every,
            whdr_delta: 0.1,
            saw_max_filter: 10,
            saw_smooth_sample_rate: 1.0,
            saw_original_metric: false,
            lmse_window: 20,
            lmse_step: 10,
            mask_dir: String::new(),
            seed: 0,
        }
    }
}

macro_rules! config_keys {
    ($($key:ident : $kind:ident),* $(,)?) => {
        impl RunConfig {
            /// Applies one `key = value` assignment.
            fn apply(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($key) => {
                        self.$key = parse_value!($kind, key, value)?;
                    })*
                    _ => bail!("unknown configuration key `{key}`"),
                }
                Ok(())
            }

            /// Canonical text form: sorted keys already, one per line.
            pub fn canonical(&self) -> String {
                let mut out = String::new();
                $(
                    out.push_str(stringify!($key));
                    out.push_str(" = ");
                    out.push_str(&self.$key.to_string());
                    out.push('\n');
                )*
                out
            }
        }
    };
}

macro_rules! parse_value {
    (f64, $key:ident, $value:ident) => {
        $value
            .parse::<f64>()
            .with_context(|| format!("key `{}`: `{}` is not a number", $key, $value))
    };
    (usize, $key:ident, $value:ident) => {
        $value
            .parse::<usize>()
            .with_context(|| format!("key `{}`: `{}` is not a nonnegative integer", $key, $value))
    };
    (u64, $key:ident, $value:ident) => {
        $value
            .parse::<u64>()
            .with_context(|| format!("key `{}`: `{}` is not a nonnegative integer", $key, $value))
    };
    (bool, $key:ident, $value:ident) => {
        $value
            .parse::<bool>()
            .with_context(|| format!("key `{}`: `{}` is not true/false", $key, $value))
    };
    (string, $key:ident, $value:ident) => {
        Ok::<String, anyhow::Error>($value.to_string())
    };
}

// keys are listed alphabetically so the canonical form is sorted
config_keys! {
    armijo_c1: f64,
    bandwidth_c1: f64,
    bandwidth_c2: f64,
    bandwidth_intensity: f64,
    bandwidth_x: f64,
    bandwidth_y: f64,
    bisto_max_iters: usize,
    bisto_tol: f64,
    eps_img: f64,
    eps_med: f64,
    grad_tol: f64,
    grayscale_shading: bool,
    lambda_med: f64,
    lambda_med_bar: f64,
    lmse_step: usize,
    lmse_window: usize,
    mask_dir: string,
    max_backtracks: usize,
    max_iters: usize,
    report_every: usize,
    saw_max_filter: usize,
    saw_original_metric: bool,
    saw_smooth_sample_rate: f64,
    seed: u64,
    w_rc: f64,
    w_rsm: f64,
    w_ssm: f64,
    whdr_delta: f64,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {}: expected `key = value`, got `{line}`", lineno + 1);
            };
            cfg.apply(key.trim(), value.trim())
                .with_context(|| format!("line {}", lineno + 1))?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn energy_config(&self) -> EnergyConfig {
        EnergyConfig {
            w_rc: self.w_rc,
            w_rsm: self.w_rsm,
            w_ssm: self.w_ssm,
            bandwidths: [
                self.bandwidth_x,
                self.bandwidth_y,
                self.bandwidth_intensity,
                self.bandwidth_c1,
                self.bandwidth_c2,
            ],
            lambda_med: self.lambda_med,
            lambda_med_bar: self.lambda_med_bar,
            eps_med: self.eps_med,
            eps_img: self.eps_img,
            bisto_max_iters: self.bisto_max_iters,
            bisto_tol: self.bisto_tol,
            grayscale_shading: self.grayscale_shading,
        }
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            max_iters: self.max_iters,
            grad_tol: (self.grad_tol > 0.0).then_some(self.grad_tol),
            armijo_c1: self.armijo_c1,
            max_backtracks: self.max_backtracks,
            report_every: self.report_every.max(1),
        }
    }

    pub fn saw_config(&self) -> SawConfig {
        SawConfig {
            max_filter: self.saw_max_filter,
            smooth_sample_rate: self.saw_smooth_sample_rate,
            use_original_metric: self.saw_original_metric,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_canonical_text() {
        let cfg = RunConfig::default();
        let text = cfg.canonical();
        let parsed = RunConfig::parse(&text).unwrap();
        assert_eq!(parsed, cfg);
        assert_eq!(parsed.canonical(), text);
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(RunConfig::parse("no_such_key = 1\n").is_err());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = RunConfig::parse("# comment\n\nw_rc = 0.5\n").unwrap();
        assert_eq!(cfg.w_rc, 0.5);
    }

    #[test]
    fn non_default_values_survive_the_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.w_rsm = 0.12345678901234567;
        cfg.bisto_tol = 1e-13;
        cfg.grayscale_shading = true;
        cfg.mask_dir = "masks".to_string();
        cfg.seed = 42;
        let parsed = RunConfig::parse(&cfg.canonical()).unwrap();
        assert_eq!(parsed, cfg);
    }
}

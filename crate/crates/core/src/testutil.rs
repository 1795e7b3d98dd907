//! Shared fixtures for the unit tests.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::energy::{Decomposition, EnergyConfig};
use crate::image::{Image, Mask};
use crate::imagestack::{to_log_stack, ImageSequence, LogStack};

/// Default config with the bistochasticization run to convergence, so
/// invariances that hold "up to the residual" are visible at test
/// tolerances.
pub fn tight_config() -> EnergyConfig {
    EnergyConfig {
        bisto_max_iters: 5000,
        bisto_tol: 1e-13,
        ..EnergyConfig::default()
    }
}

pub fn random_stack(
    rng: &mut ChaCha8Rng,
    m: usize,
    h: usize,
    w: usize,
    with_holes: bool,
) -> LogStack<f64> {
    let frames: Vec<Image<f64>> = (0..m)
        .map(|_| Image::from_fn(h, w, 3, |_, _, _| rng.gen_range(0.05..0.95)))
        .collect();
    let masks: Vec<Mask> = (0..m)
        .map(|i| {
            if with_holes {
                Mask::from_fn(h, w, |y, x| (y * 7 + x * 3 + i) % 11 != 0)
            } else {
                Mask::all_valid(h, w)
            }
        })
        .collect();
    let seq = ImageSequence::new(frames, masks, "random").unwrap();
    to_log_stack(&seq, 1e-4).unwrap()
}

pub fn random_decomposition(
    rng: &mut ChaCha8Rng,
    m: usize,
    h: usize,
    w: usize,
) -> Decomposition<f64> {
    Decomposition {
        log_r: (0..m)
            .map(|_| Image::from_fn(h, w, 3, |_, _, _| rng.gen_range(-1.0..0.0)))
            .collect(),
        log_s: (0..m)
            .map(|_| Image::from_fn(h, w, 1, |_, _, _| rng.gen_range(-0.5..0.5)))
            .collect(),
        illum: (0..m)
            .map(|_| {
                [
                    rng.gen_range(-0.2..0.2),
                    rng.gen_range(-0.2..0.2),
                    rng.gen_range(-0.2..0.2),
                ]
            })
            .collect(),
    }
}

/// A stack and a decomposition that reconstructs it exactly: log I =
/// log R + log S + c with the reflectance shared across frames.
pub fn exact_instance(
    rng: &mut ChaCha8Rng,
    m: usize,
    h: usize,
    w: usize,
) -> (LogStack<f64>, Decomposition<f64>) {
    let log_r = Image::from_fn(h, w, 3, |_, _, _| rng.gen_range(0.3f64..0.8).ln());
    let log_s: Vec<Image<f64>> = (0..m)
        .map(|_| Image::from_fn(h, w, 1, |_, _, _| rng.gen_range(-0.15..0.0)))
        .collect();
    let illum: Vec<[f64; 3]> = (0..m)
        .map(|_| {
            [
                rng.gen_range(-0.05..0.05),
                rng.gen_range(-0.05..0.05),
                rng.gen_range(-0.05..0.05),
            ]
        })
        .collect();
    let frames: Vec<Image<f64>> = (0..m)
        .map(|i| {
            Image::from_fn(h, w, 3, |y, x, c| {
                (log_r.at(y, x, c) + log_s[i].at(y, x, 0) + illum[i][c]).exp()
            })
        })
        .collect();
    let masks = vec![Mask::all_valid(h, w); m];
    let seq = ImageSequence::new(frames, masks, "exact").unwrap();
    let stack = to_log_stack(&seq, 1e-4).unwrap();
    let d = Decomposition {
        log_r: vec![log_r; m],
        log_s,
        illum,
    };
    (stack, d)
}

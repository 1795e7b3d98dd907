//! `lsplit bench`: brute-force vs closed-form timings for the all-pairs
//! loss. The table is the linearity evidence: closed-form time grows
//! linearly in the frame count, the double loop quadratically.

use std::hint::black_box;
use std::time::Instant;

use anyhow::Result;
use lsplit_core::apwls::{apwls_bruteforce, apwls_closed, PairLossInputs};
use lsplit_core::image::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MIN_MEASURE_SECS: f64 = 0.25;
const MAX_REPS: usize = 2000;

fn random_images(rng: &mut ChaCha8Rng, m: usize, size: usize, lo: f64, hi: f64) -> Vec<Image<f64>> {
    (0..m)
        .map(|_| Image::from_fn(size, size, 3, |_, _, _| rng.gen_range(lo..hi)))
        .collect()
}

/// Seconds per call, measured over enough repetitions to be stable.
fn time_per_call(mut f: impl FnMut() -> f64) -> f64 {
    black_box(f()); // warmup
    let start = Instant::now();
    let mut reps = 0usize;
    loop {
        black_box(f());
        reps += 1;
        if start.elapsed().as_secs_f64() >= MIN_MEASURE_SECS || reps >= MAX_REPS {
            break;
        }
    }
    start.elapsed().as_secs_f64() / reps as f64
}

pub fn run(m_list: &[usize], size: usize, seed: u64) -> Result<()> {
    if m_list.is_empty() {
        anyhow::bail!("bench needs at least one frame count (--m)");
    }
    println!("# all-pairs weighted least squares, {size}x{size}, 3 channels, seed {seed}");
    println!("# columns: m, seconds per brute-force call, seconds per closed-form call, relative disagreement");
    for &m in m_list {
        if m == 0 {
            anyhow::bail!("frame counts must be positive");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (m as u64).wrapping_mul(0x9e3779b97f4a7c15));
        let p = random_images(&mut rng, m, size, 0.0, 1.0);
        let q = random_images(&mut rng, m, size, 0.0, 1.0);
        let x = random_images(&mut rng, m, size, -1.0, 1.0);
        let y = random_images(&mut rng, m, size, -1.0, 1.0);
        let inputs = PairLossInputs::new(&p, &q, &x, &y)?;

        let brute = apwls_bruteforce(&inputs);
        let closed = apwls_closed(&inputs);
        let rel_err = (brute - closed).abs() / brute.abs().max(1e-300);

        let brute_s = time_per_call(|| apwls_bruteforce(&inputs));
        let closed_s = time_per_call(|| apwls_closed(&inputs));
        println!("m={m} brute_s={brute_s:.6e} closed_s={closed_s:.6e} rel_err={rel_err:.3e}");
    }
    Ok(())
}

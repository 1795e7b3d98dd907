//! Benchmark metrics: WHDR over pairwise reflectance judgments, average
//! precision for shading smoothness classification (log-domain,
//! asymmetrically max-filtered), and the MIT triple (scale-invariant MSE,
//! LMSE, DSSIM).

mod mit;
mod saw;
mod whdr;

pub use mit::{dssim, lmse, mit_scores, si_mse, MitGroundTruth, MitScores, MitTriple};
pub use saw::{
    load_saw_labels, log_gradient_magnitude, saw_ap, SawApResult, SawConfig, SawLabels, SawPrPoint,
};
pub use whdr::{load_iiw_judgments, whdr, DarkerLabel, Judgment, WhdrResult};

//! Testing pipeline: noisy-image initialization, reverse sampling,
//! post-processing to detection labels, and metrics.

mod io;
mod metrics;
mod pipeline;
mod postprocess;
mod reverse;

pub use io::{write_metrics_files, write_results, METRICS_KV_FILE, METRICS_TABLE_FILE, RESULTS_FILE};
pub use pipeline::{predict_pairs, InitKind};
pub use metrics::{
    average_precision, average_precision_by_pr_enumeration, evaluate, ClassAp, InteractionMetrics,
    MetricsReport,
};
pub use postprocess::{postprocess, DetectionResult, ObjectDecision, PairDecision, PairPrediction, ScoreMode};
pub use reverse::{
    reverse_sample, reverse_sample_gaussian, CleanPredictor, ModelPredictor, OraclePredictor,
    ReverseMode, TrajectoryRecord,
};

use crate::error::Result;
use crate::image::{compose, HoiImage, InteractionMatrix, ObjectDist};

/// Builds the noisy starting image for a pair: the detector prior as the
/// object distribution times all-(0.5, 0.5) interaction rows, so every entry
/// is `prior[h]·0.5`.
pub fn init_noisy_hoi_image(prior: &ObjectDist, w: usize) -> Result<HoiImage> {
    compose(prior, &InteractionMatrix::undecided(w))
}

/// A uniform image (every entry `1/(2H)`), used by the uniform-start
/// ablation in place of the noisy initialization.
pub fn uniform_image(h: usize, w: usize) -> Result<HoiImage> {
    compose(&ObjectDist::uniform(h), &InteractionMatrix::undecided(w))
}

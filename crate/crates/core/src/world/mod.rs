//! Synthetic HOI benchmark.
//!
//! Replaces the pre-trained detector stage with a controllable generator:
//! scenes of human-object pairs with ground-truth object classes and
//! interaction sets, linear-embedding appearance features with a noise knob,
//! and corrupted detector priors (temperature-diffused, occasionally
//! mode-flipped). A seeded affinity table makes some (object, interaction)
//! combinations rare, echoing the rare/non-rare split of real benchmarks.

mod gen;
mod io;

pub use gen::{generate_dataset, ground_truth_image, AffinityTable, Dataset};
pub use io::{read_dataset, write_dataset, DatasetHeader};

use crate::error::{Error, Result};
use crate::image::ObjectDist;
use serde::{Deserialize, Serialize};

/// One synthetic human-object pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSample {
    pub pair_id: u64,
    /// Objects may be shared across pairs within a scene.
    pub object_id: u64,
    pub true_object: usize,
    /// Sorted indices of the interactions present in this pair.
    pub true_interactions: Vec<usize>,
    /// Appearance feature f_a.
    pub appearance: Vec<f64>,
    /// Detector prior over object classes; identical for pairs sharing an
    /// object.
    pub detector_prior: ObjectDist,
}

/// Benchmark generation knobs. Dataset content is a pure function of this
/// struct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    /// Object category count.
    pub h: usize,
    /// Interaction category count.
    pub w: usize,
    /// Appearance feature width.
    pub d_appearance: usize,
    /// Inclusive range of pairs per scene.
    pub pairs_per_scene: (usize, usize),
    pub scenes: usize,
    /// Appearance noise is standard normal scaled by 1/appearance_snr;
    /// `inf` gives noiseless features.
    pub appearance_snr: f64,
    /// Detector prior sharpness; the one-hot logit is 1/prior_temperature.
    pub prior_temperature: f64,
    /// Probability that the prior's mode is a wrong class.
    pub prior_error_rate: f64,
    /// Expected fraction of interactions present per pair, before the
    /// per-cell affinity adjustment (which is normalized to mean 1).
    pub interaction_rate: f64,
    /// Fraction of scenes assigned to the training split.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            h: 6,
            w: 5,
            d_appearance: 16,
            pairs_per_scene: (2, 4),
            scenes: 840,
            appearance_snr: 4.0,
            prior_temperature: 0.25,
            prior_error_rate: 0.1,
            interaction_rate: 0.25,
            train_fraction: 0.8,
            seed: 7,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.w == 0 {
            return Err(Error::Config("h and w must be at least 1".into()));
        }
        if self.d_appearance == 0 {
            return Err(Error::Config("d_appearance must be at least 1".into()));
        }
        let (lo, hi) = self.pairs_per_scene;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!(
                "pairs_per_scene range ({lo}, {hi}) must satisfy 1 <= lo <= hi"
            )));
        }
        if self.scenes == 0 {
            return Err(Error::Config("scenes must be at least 1".into()));
        }
        if self.appearance_snr <= 0.0 || self.appearance_snr.is_nan() {
            return Err(Error::Config("appearance_snr must be positive (inf allowed)".into()));
        }
        if !(self.prior_temperature > 0.0 && self.prior_temperature.is_finite()) {
            return Err(Error::Config("prior_temperature must be positive and finite".into()));
        }
        if !(0.0..=1.0).contains(&self.prior_error_rate) {
            return Err(Error::Config("prior_error_rate must lie in [0, 1]".into()));
        }
        if !(self.interaction_rate > 0.0 && self.interaction_rate < 1.0) {
            return Err(Error::Config("interaction_rate must lie in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::Config("train_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

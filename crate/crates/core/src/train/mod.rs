//! Training: forward-process supervision, MSE loss, decoupled weight-decay
//! adaptive-moment optimization, and the epoch loop.

mod adamw;
mod loss;
mod targets;
mod trainer;

pub use adamw::{optimizer_step, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use loss::mse_loss;
pub use targets::{make_training_targets, TrainingTarget};
pub use trainer::{train, TrainOutcome};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Which target image the MSE supervises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LossMode {
    /// Predict the clean image I_0.
    #[default]
    CleanTarget,
    /// Predict the previous step I_{k-1}.
    PrevStepTarget,
    /// Sum of both losses.
    Both,
}

impl std::str::FromStr for LossMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "clean-target" => LossMode::CleanTarget,
            "prev-step-target" => LossMode::PrevStepTarget,
            "both" => LossMode::Both,
            other => {
                return Err(Error::Config(format!(
                    "unknown loss mode {other:?} (expected clean-target, prev-step-target or both)"
                )))
            }
        })
    }
}

/// How steps are supervised along each trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum StepMode {
    /// One uniformly sampled step per trajectory.
    #[default]
    Sampled,
    /// Every step of every trajectory (K tuples per trajectory).
    FullSweep,
}

impl std::str::FromStr for StepMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "sampled" => StepMode::Sampled,
            "full-sweep" => StepMode::FullSweep,
            other => {
                return Err(Error::Config(format!(
                    "unknown step mode {other:?} (expected sampled or full-sweep)"
                )))
            }
        })
    }
}

/// Which forward process produces the supervision (the Gaussian baseline is
/// an ablation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ProcessKind {
    #[default]
    Multinomial,
    Gaussian,
}

impl std::str::FromStr for ProcessKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "multinomial" => ProcessKind::Multinomial,
            "gaussian" => ProcessKind::Gaussian,
            other => {
                return Err(Error::Config(format!(
                    "unknown process {other:?} (expected multinomial or gaussian)"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Forward trajectories per pair per epoch (M).
    pub m_samples: usize,
    /// Pairs per optimizer step.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    pub loss_mode: LossMode,
    pub step_mode: StepMode,
    pub process: ProcessKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            m_samples: 10,
            batch_size: 8,
            learning_rate: 1e-4,
            weight_decay: 0.0,
            epochs: 2,
            seed: 0,
            loss_mode: LossMode::CleanTarget,
            step_mode: StepMode::Sampled,
            process: ProcessKind::Multinomial,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_samples == 0 {
            return Err(Error::Config("m_samples must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and nonnegative".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be finite and nonnegative".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

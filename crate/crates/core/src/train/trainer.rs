//! The epoch loop.

use super::adamw::{optimizer_step, OptimizerState};
use super::loss::mse_loss;
use super::targets::make_training_targets;
use super::{LossMode, TrainConfig};
use crate::denoiser::{backward, forward_cached, Conditioning, DenoiserParams, ModelConfig};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::rng;
use crate::world::PairSample;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

/// Final state of a training run.
pub struct TrainOutcome {
    pub params: DenoiserParams,
    pub optimizer: OptimizerState,
    /// Mean tuple loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Metrics log: `epoch<TAB>step<TAB>loss<TAB>wall_ms` lines.
    pub log: String,
    pub steps_run: usize,
    /// Set when a stop request ended the run early.
    pub interrupted: bool,
}

/// Trains a fresh model on `pairs`.
///
/// Deterministic given (config, model config, schedule, dataset): parameter
/// initialization, batch shuffling and every noise draw derive from
/// `cfg.seed`. Only the wall-clock column of the log varies between runs.
/// A set `stop` flag ends training at the next batch boundary with the
/// current state marked `interrupted` (the caller persists it). Divergence
/// (non-finite loss) aborts with an error; per-epoch checkpoints written by
/// `on_epoch` are the resume points. `on_epoch` receives (epoch index,
/// params, mean epoch loss) after every completed epoch.
pub fn train(
    pairs: &[PairSample],
    model_cfg: ModelConfig,
    cfg: &TrainConfig,
    sched: &NoiseSchedule,
    stop: Option<&AtomicBool>,
    mut on_epoch: impl FnMut(usize, &DenoiserParams, f64) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Config("training needs a nonempty dataset".into()));
    }
    let start = Instant::now();
    let mut params = DenoiserParams::init(model_cfg, cfg.seed)?;
    let mut optimizer = OptimizerState::new(params.len());
    let mut log = String::new();
    let mut epoch_losses = Vec::new();
    let mut steps_run = 0usize;
    let mut interrupted = false;

    'epochs: for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut shuffle_rng = rng::stream(cfg.seed, 0x5u64 << 32 | epoch as u64);
        for i in (1..order.len()).rev() {
            let j = rand::Rng::random_range(&mut shuffle_rng, 0..=i);
            order.swap(i, j);
        }

        let mut epoch_loss_sum = 0.0f64;
        let mut epoch_tuples = 0usize;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            if stop.map(|s| s.load(Ordering::Relaxed)).unwrap_or(false) {
                interrupted = true;
                break 'epochs;
            }
            params.zero_grads();
            let mut batch_loss = 0.0f64;
            let mut tuple_count = 0usize;
            for (slot, &pair_idx) in batch.iter().enumerate() {
                let pair = &pairs[pair_idx];
                let mut noise_rng = rng::stream(
                    cfg.seed,
                    0x7u64 << 56
                        | (epoch as u64) << 40
                        | (batch_idx as u64) << 16
                        | slot as u64,
                );
                let targets =
                    make_training_targets(pair, model_cfg.w, sched, cfg, &mut noise_rng)?;
                for t in &targets {
                    let cond =
                        Conditioning::for_step(&pair.appearance, t.k, model_cfg.d_step);
                    let cache = match forward_cached(&t.noisy, &cond, &params) {
                        Ok(c) => c,
                        // Blown-up activations are the divergence signal.
                        Err(Error::NonFiniteActivation(_)) => {
                            return Err(Error::Diverged {
                                epoch,
                                step: steps_run,
                                loss: f64::NAN,
                            })
                        }
                        Err(e) => return Err(e),
                    };
                    let (loss, dout) = match cfg.loss_mode {
                        LossMode::CleanTarget => mse_loss(cache.output(), &t.clean)?,
                        LossMode::PrevStepTarget => mse_loss(cache.output(), &t.prev)?,
                        LossMode::Both => {
                            let (l1, g1) = mse_loss(cache.output(), &t.clean)?;
                            let (l2, g2) = mse_loss(cache.output(), &t.prev)?;
                            (l1 + l2, g1.iter().zip(&g2).map(|(a, b)| a + b).collect())
                        }
                    };
                    if !loss.is_finite() {
                        return Err(Error::Diverged {
                            epoch,
                            step: steps_run,
                            loss,
                        });
                    }
                    backward(&dout, &cache, &cond, &mut params)?;
                    batch_loss += loss;
                    tuple_count += 1;
                }
            }
            // Mean gradient over the batch's tuples.
            let scale = 1.0 / tuple_count as f64;
            params.grads_mut().iter_mut().for_each(|g| *g *= scale);
            let (values, grads) = params.values_and_grads_mut();
            optimizer_step(values, grads, &mut optimizer, cfg.learning_rate, cfg.weight_decay)?;
            let mean_loss = batch_loss / tuple_count as f64;
            epoch_loss_sum += batch_loss;
            epoch_tuples += tuple_count;
            steps_run += 1;
            let _ = writeln!(
                log,
                "{epoch}\t{steps_run}\t{mean_loss}\t{}",
                start.elapsed().as_millis()
            );
        }
        if !interrupted {
            let mean = epoch_loss_sum / epoch_tuples.max(1) as f64;
            epoch_losses.push(mean);
            on_epoch(epoch, &params, mean)?;
        }
    }

    Ok(TrainOutcome {
        params,
        optimizer,
        epoch_losses,
        log,
        steps_run,
        interrupted,
    })
}

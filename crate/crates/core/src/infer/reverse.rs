//! Reverse sampling: step-wise denoising from the noisy initialization.

use crate::denoiser::{denoise, Conditioning, DenoiserParams};
use crate::diffusion::{gaussian_posterior, sample_scaled_multinomial, NoiseSchedule};
use crate::error::{Error, Result};
use crate::image::{HoiImage, INTERNAL_TOL};
use crate::rng::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Predicts the clean image from a noisy one at step `k`. The trained model
/// implements this; tests may substitute oracles.
pub trait CleanPredictor {
    fn predict_clean(&self, img: &HoiImage, k: usize) -> Result<HoiImage>;
}

/// The trained denoiser bound to one pair's appearance feature.
pub struct ModelPredictor<'a> {
    pub params: &'a DenoiserParams,
    pub appearance: &'a [f64],
}

impl CleanPredictor for ModelPredictor<'_> {
    fn predict_clean(&self, img: &HoiImage, k: usize) -> Result<HoiImage> {
        let cond = Conditioning::for_step(self.appearance, k, self.params.config().d_step);
        denoise(img, &cond, self.params)
    }
}

/// Always answers with a fixed image; validates the sampler's conventions.
pub struct OraclePredictor {
    pub clean: HoiImage,
}

impl CleanPredictor for OraclePredictor {
    fn predict_clean(&self, _img: &HoiImage, _k: usize) -> Result<HoiImage> {
        Ok(self.clean.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReverseMode {
    /// The noise term is replaced by its mean (the initialization image);
    /// the whole reverse pass is a pure function of its inputs.
    Deterministic,
    /// Fresh scaled multinomial noise around the initialization each step.
    Stochastic,
}

/// The per-step images of one reverse pass, stored from k = K down to 0.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    /// (step index, image) pairs ordered K, K-1, ..., 0.
    pub steps: Vec<(usize, HoiImage)>,
}

/// Runs the reverse process from `init` down to the clean prediction.
///
/// At each step k the model predicts the clean image, then the next state is
/// `ᾱ_{k-1}·clean + (1-ᾱ_{k-1})·noise` with noise either the initialization
/// itself (deterministic) or a fresh scaled multinomial draw around it with
/// `round(S_{k-1}·T)` trials (stochastic). With `ᾱ_0 = 1` the final step
/// returns the model's clean prediction exactly.
pub fn reverse_sample(
    init: &HoiImage,
    predictor: &dyn CleanPredictor,
    sched: &NoiseSchedule,
    mode: ReverseMode,
    rng: &mut Rng,
    record: bool,
) -> Result<(HoiImage, Option<TrajectoryRecord>)> {
    let shape = init.shape();
    let report = init.validate(crate::image::EXTERNAL_TOL);
    if !report.passed() {
        return Err(Error::InvalidImage {
            reason: "reverse sampling needs a valid initialization".into(),
            slice: report.worst_slice,
            deviation: report.max_slice_deviation.max(-report.min_entry),
        });
    }
    let k_total = sched.steps();
    let mut trajectory = record.then(|| TrajectoryRecord {
        steps: Vec::with_capacity(k_total + 1),
    });
    let mut current = init.clone();
    if let Some(t) = trajectory.as_mut() {
        t.steps.push((k_total, current.clone()));
    }
    for k in (1..=k_total).rev() {
        let clean = predictor.predict_clean(&current, k)?;
        if clean.shape() != shape {
            return Err(Error::ShapeMismatch("predictor changed the image shape".into()));
        }
        let abar_prev = sched.alpha_bar(k - 1);
        current = if k == 1 {
            // abar_0 = 1: the chain terminates at the clean prediction.
            clean
        } else {
            let noise = match mode {
                ReverseMode::Deterministic => init.clone(),
                ReverseMode::Stochastic => {
                    let trials = sched.jump_trials(k - 1);
                    let mut slices = Vec::with_capacity(shape.w);
                    for w in 0..shape.w {
                        let draw = sample_scaled_multinomial(&init.vertical_slice(w), trials, rng)?;
                        slices.push(draw.into_values());
                    }
                    HoiImage::from_vertical_slices(shape, &slices)?
                }
            };
            clean.lerp(&noise, abar_prev)
        };
        let report = current.validate(INTERNAL_TOL);
        if !report.passed() {
            return Err(Error::NonFiniteActivation(format!(
                "reverse step {k} produced an invalid image (deviation {:.3e})",
                report.max_slice_deviation
            )));
        }
        if let Some(t) = trajectory.as_mut() {
            t.steps.push((k - 1, current.clone()));
        }
    }
    Ok((current, trajectory))
}

/// Reverse pass for the Gaussian baseline mode: the posterior mean of the
/// standard process given the model's clean prediction, plus posterior noise
/// in stochastic mode. Intermediates are generally not valid images; the
/// final output is the model's (projected, hence valid) clean prediction at
/// k = 1.
pub fn reverse_sample_gaussian(
    init_raw: &HoiImage,
    predictor: &dyn CleanPredictor,
    sched: &NoiseSchedule,
    mode: ReverseMode,
    rng: &mut Rng,
    record: bool,
) -> Result<(HoiImage, Option<TrajectoryRecord>)> {
    let shape = init_raw.shape();
    let k_total = sched.steps();
    let mut trajectory = record.then(|| TrajectoryRecord {
        steps: Vec::with_capacity(k_total + 1),
    });
    let mut current = init_raw.clone();
    if let Some(t) = trajectory.as_mut() {
        t.steps.push((k_total, current.clone()));
    }
    for k in (1..=k_total).rev() {
        let clean = predictor.predict_clean(&current, k)?;
        current = if k == 1 {
            clean
        } else {
            let post = gaussian_posterior(clean.data(), current.data(), k, sched)?;
            let sd = post.variance.sqrt();
            let data: Vec<f64> = match mode {
                ReverseMode::Deterministic => post.mean,
                ReverseMode::Stochastic => post
                    .mean
                    .iter()
                    .map(|&m| {
                        let z: f64 = StandardNormal.sample(rng);
                        m + sd * z
                    })
                    .collect(),
            };
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteActivation(format!("gaussian reverse step {k}")));
            }
            HoiImage::from_data_unchecked(shape, data)
        };
        if let Some(t) = trajectory.as_mut() {
            t.steps.push((k - 1, current.clone()));
        }
    }
    Ok((current, trajectory))
}

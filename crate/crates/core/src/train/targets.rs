//! Forward-process supervision tuples.

use super::{ProcessKind, StepMode, TrainConfig};
use crate::diffusion::{forward_step_image, gaussian_forward_step, NoiseSchedule};
use crate::error::Result;
use crate::image::HoiImage;
use crate::infer::init_noisy_hoi_image;
use crate::rng::Rng;
use crate::world::{ground_truth_image, PairSample};
use rand::Rng as _;

/// One supervision tuple: the noisy image at step `k` with its clean and
/// previous-step targets.
#[derive(Debug, Clone)]
pub struct TrainingTarget {
    pub k: usize,
    pub noisy: HoiImage,
    pub clean: HoiImage,
    pub prev: HoiImage,
}

/// Draws `m_samples` independent forward trajectories of the pair's
/// ground-truth image toward its noisy initialization (per-slice independent
/// noise) and emits supervision tuples: one uniformly sampled step per
/// trajectory, or every step in full-sweep mode.
pub fn make_training_targets(
    pair: &PairSample,
    w: usize,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<Vec<TrainingTarget>> {
    let clean = ground_truth_image(pair, w)?;
    let init = init_noisy_hoi_image(&pair.detector_prior, w)?;
    let k_total = sched.steps();
    let mut out = Vec::new();
    for _ in 0..cfg.m_samples {
        match cfg.step_mode {
            StepMode::Sampled => {
                let k = rng.random_range(1..=k_total);
                let (noisy, prev) = diffuse_to(&clean, &init, k, sched, cfg.process, rng)?;
                out.push(TrainingTarget {
                    k,
                    noisy,
                    clean: clean.clone(),
                    prev,
                });
            }
            StepMode::FullSweep => {
                let mut prev = clean.clone();
                for k in 1..=k_total {
                    let noisy = one_step(&prev, &init, k, sched, cfg.process, rng)?;
                    out.push(TrainingTarget {
                        k,
                        noisy: noisy.clone(),
                        clean: clean.clone(),
                        prev,
                    });
                    prev = noisy;
                }
            }
        }
    }
    Ok(out)
}

/// Iterates the forward chain to step `k`, returning (I_k, I_{k-1}).
fn diffuse_to(
    clean: &HoiImage,
    init: &HoiImage,
    k: usize,
    sched: &NoiseSchedule,
    process: ProcessKind,
    rng: &mut Rng,
) -> Result<(HoiImage, HoiImage)> {
    let mut prev = clean.clone();
    for step in 1..k {
        prev = one_step(&prev, init, step, sched, process, rng)?;
    }
    let noisy = one_step(&prev, init, k, sched, process, rng)?;
    Ok((noisy, prev))
}

fn one_step(
    img: &HoiImage,
    init: &HoiImage,
    k: usize,
    sched: &NoiseSchedule,
    process: ProcessKind,
    rng: &mut Rng,
) -> Result<HoiImage> {
    match process {
        ProcessKind::Multinomial => forward_step_image(img, init, k, sched, rng),
        ProcessKind::Gaussian => {
            // Entrywise Gaussian corruption; intermediates are generally not
            // valid images (that is the point of the baseline).
            let data = gaussian_forward_step(img.data(), k, sched, rng)?;
            Ok(HoiImage::from_data_unchecked(img.shape(), data))
        }
    }
}

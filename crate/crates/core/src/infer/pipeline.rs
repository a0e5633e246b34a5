//! Batch prediction over pairs.

use super::reverse::{reverse_sample, reverse_sample_gaussian, ModelPredictor, ReverseMode};
use super::{init_noisy_hoi_image, uniform_image, PairPrediction};
use crate::denoiser::DenoiserParams;
use crate::diffusion::NoiseSchedule;
use crate::error::Result;
use crate::image::HoiImage;
use crate::rng;
use crate::train::ProcessKind;
use crate::world::PairSample;
use rand_distr::{Distribution, StandardNormal};

/// Starting image for the reverse process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitKind {
    /// Detector prior times undecided interaction rows.
    #[default]
    NoisyPrior,
    /// Uniform image (the no-initialization ablation).
    Uniform,
}

/// Runs reverse sampling for every pair and returns predictions in input
/// order. Each pair draws from its own stream `(seed, pair_id)`, so the
/// result is independent of `threads`.
pub fn predict_pairs(
    params: &DenoiserParams,
    pairs: &[PairSample],
    sched: &NoiseSchedule,
    mode: ReverseMode,
    init_kind: InitKind,
    process: ProcessKind,
    seed: u64,
    threads: usize,
) -> Result<Vec<PairPrediction>> {
    let threads = threads.max(1).min(pairs.len().max(1));
    let chunk_len = pairs.len().div_ceil(threads);

    let predict_one = |pair: &PairSample| -> Result<PairPrediction> {
        let cfg = params.config();
        let mut r = rng::stream(seed, pair.pair_id);
        let predictor = ModelPredictor {
            params,
            appearance: &pair.appearance,
        };
        let image = match process {
            ProcessKind::Multinomial => {
                let init = match init_kind {
                    InitKind::NoisyPrior => init_noisy_hoi_image(&pair.detector_prior, cfg.w)?,
                    InitKind::Uniform => uniform_image(cfg.h, cfg.w)?,
                };
                reverse_sample(&init, &predictor, sched, mode, &mut r, false)?.0
            }
            ProcessKind::Gaussian => {
                // The baseline starts from entrywise standard normal noise.
                let shape = crate::image::HoiShape { h: cfg.h, w: cfg.w };
                let data: Vec<f64> = (0..shape.len()).map(|_| StandardNormal.sample(&mut r)).collect();
                let init = HoiImage::from_data_unchecked(shape, data);
                reverse_sample_gaussian(&init, &predictor, sched, mode, &mut r, false)?.0
            }
        };
        Ok(PairPrediction {
            pair_id: pair.pair_id,
            object_id: pair.object_id,
            image,
        })
    };

    if threads == 1 || pairs.len() <= 1 {
        return pairs.iter().map(predict_one).collect();
    }

    let chunks: Vec<&[PairSample]> = pairs.chunks(chunk_len).collect();
    let mut results: Vec<Result<Vec<PairPrediction>>> = Vec::new();
    std::thread::scope(|scope| {
        let handles: Vec<_> = chunks
            .iter()
            .map(|chunk| scope.spawn(move || chunk.iter().map(predict_one).collect::<Result<Vec<_>>>()))
            .collect();
        for h in handles {
            results.push(h.join().expect("prediction worker panicked"));
        }
    });
    let mut out = Vec::with_capacity(pairs.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

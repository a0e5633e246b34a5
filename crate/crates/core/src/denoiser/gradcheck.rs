//! Finite-difference verification of the hand-rolled backward pass.
//!
//! The oracle is central differences of the scalar MSE loss with respect to
//! individual parameters; it never touches the analytic gradient path.

use super::config::ModelConfig;
use super::embedding::Conditioning;
use super::net::{backward, denoise, forward_cached};
use super::params::DenoiserParams;
use crate::error::Result;
use crate::image::{compose, HoiImage, InteractionMatrix, ObjectDist};
use crate::rng;
use rand::Rng as _;

fn fixture_image(h: usize, w: usize, seed: u64) -> Result<HoiImage> {
    let mut r = rng::stream(seed, 0);
    let mut v: Vec<f64> = (0..h).map(|_| r.random::<f64>() + 0.05).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    let total: f64 = v.iter().sum();
    let i = crate::image::argmax(&v);
    v[i] += 1.0 - total;
    let rows = (0..w)
        .map(|_| {
            let p = r.random::<f64>();
            [p, 1.0 - p]
        })
        .collect();
    compose(&ObjectDist::new(v)?, &InteractionMatrix::new(rows)?)
}

fn mse_and_grad(pred: &HoiImage, target: &HoiImage) -> (f64, Vec<f64>) {
    let n = pred.data().len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.data().len()];
    for (i, (p, t)) in pred.data().iter().zip(target.data()).enumerate() {
        let diff = p - t;
        loss += diff * diff;
        grad[i] = 2.0 * diff / n;
    }
    (loss / n, grad)
}

/// Compares analytic gradients against central finite differences (step
/// 1e-5) at `n_samples` randomly chosen parameters of a seeded model, on a
/// fixed (input, conditioning, target) triple. Returns the max relative
/// error, with the denominator floored at 1e-8 to keep near-zero gradients
/// from inflating the ratio.
pub fn finite_difference_check(cfg: ModelConfig, n_samples: usize, seed: u64) -> Result<f64> {
    let mut params = DenoiserParams::init(cfg, seed)?;
    let img = fixture_image(cfg.h, cfg.w, seed ^ 1)?;
    let mut r = rng::stream(seed ^ 2, 0);
    let fa: Vec<f64> = (0..cfg.d_appearance)
        .map(|_| r.random::<f64>() * 2.0 - 1.0)
        .collect();
    let cond = Conditioning::for_step(&fa, 3, cfg.d_step);
    let target = fixture_image(cfg.h, cfg.w, seed ^ 3)?;

    let cache = forward_cached(&img, &cond, &params)?;
    let (_, dout) = mse_and_grad(cache.output(), &target);
    params.zero_grads();
    backward(&dout, &cache, &cond, &mut params)?;
    let analytic = params.grads().to_vec();

    let mut pick = rng::stream(seed ^ 4, 1);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..n_samples {
        let idx = pick.random_range(0..params.len());
        let orig = params.values()[idx];
        params.values_mut()[idx] = orig + h;
        let plus = mse_and_grad(&denoise(&img, &cond, &params)?, &target).0;
        params.values_mut()[idx] = orig - h;
        let minus = mse_and_grad(&denoise(&img, &cond, &params)?, &target).0;
        params.values_mut()[idx] = orig;
        let fd = (plus - minus) / (2.0 * h);
        let denom = analytic[idx].abs().max(fd.abs()).max(1e-8);
        worst = worst.max(((analytic[idx] - fd) / denom).abs());
    }
    Ok(worst)
}

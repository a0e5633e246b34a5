//! Standard Gaussian diffusion, kept as a baseline mode for ablations.
//!
//! Unlike the multinomial process, these steps use sqrt regulators and
//! additive Gaussian noise, so they preserve neither nonnegativity nor slice
//! sums.

use super::schedule::NoiseSchedule;
use crate::error::Result;
use crate::rng::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Posterior of the Gaussian process given `(d_k, d_0)`: an isotropic normal
/// with the returned mean and per-entry variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub mean: Vec<f64>,
    pub variance: f64,
}

/// One Gaussian forward step: `d_k = sqrt(1-β_k) d_{k-1} + sqrt(β_k) ε`.
pub fn gaussian_forward_step(
    d_prev: &[f64],
    k: usize,
    sched: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    sched.check_step(k)?;
    let beta = sched.beta(k);
    let keep = (1.0 - beta).sqrt();
    let noise = beta.sqrt();
    Ok(d_prev
        .iter()
        .map(|&d| {
            let eps: f64 = StandardNormal.sample(rng);
            keep * d + noise * eps
        })
        .collect())
}

/// Closed-form Gaussian jump: `d_k = sqrt(ᾱ_k) d_0 + sqrt(1-ᾱ_k) ε`.
pub fn gaussian_forward_jump(
    d0: &[f64],
    k: usize,
    sched: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    sched.check_step(k)?;
    let abar = sched.alpha_bar(k);
    let keep = abar.sqrt();
    let noise = (1.0 - abar).sqrt();
    Ok(d0
        .iter()
        .map(|&d| {
            let eps: f64 = StandardNormal.sample(rng);
            keep * d + noise * eps
        })
        .collect())
}

/// Gaussian posterior mean and variance:
/// mean = `sqrt(ᾱ_{k-1}) β_k / (1-ᾱ_k) d_0 + sqrt(α_k)(1-ᾱ_{k-1})/(1-ᾱ_k) d_k`,
/// variance = `(1-ᾱ_{k-1})/(1-ᾱ_k) β_k`.
pub fn gaussian_posterior(
    d0: &[f64],
    d_k: &[f64],
    k: usize,
    sched: &NoiseSchedule,
) -> Result<GaussianPosterior> {
    sched.check_step(k)?;
    let beta = sched.beta(k);
    let alpha = sched.alpha(k);
    let abar_k = sched.alpha_bar(k);
    let abar_prev = sched.alpha_bar(k - 1);
    let denom = 1.0 - abar_k;
    let coef_d0 = abar_prev.sqrt() * beta / denom;
    let coef_dk = alpha.sqrt() * (1.0 - abar_prev) / denom;
    let mean = d0
        .iter()
        .zip(d_k)
        .map(|(&a, &b)| coef_d0 * a + coef_dk * b)
        .collect();
    Ok(GaussianPosterior {
        mean,
        variance: (1.0 - abar_prev) / denom * beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::check_simplex;
    use crate::rng;

    #[test]
    fn tiny_beta_is_nearly_identity() {
        let sched = NoiseSchedule::from_betas(vec![1e-16], 10).unwrap();
        let mut r = rng::stream(41, 0);
        let d = vec![0.4, 0.6];
        let next = gaussian_forward_step(&d, 1, &sched, &mut r).unwrap();
        for (a, b) in next.iter().zip(&d) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn posterior_matches_direct_coefficients() {
        // abar_{k-1} = 0.9, abar_k = 0.72, beta_k = 0.2 (so alpha_k = 0.8).
        let sched = NoiseSchedule::from_betas(vec![0.1, 0.2], 10).unwrap();
        assert!((sched.alpha_bar(1) - 0.9).abs() < 1e-15);
        assert!((sched.alpha_bar(2) - 0.72).abs() < 1e-15);
        let d0 = vec![1.0, 0.0];
        let dk = vec![0.3, 0.7];
        let post = gaussian_posterior(&d0, &dk, 2, &sched).unwrap();
        let coef_d0 = 0.9f64.sqrt() * 0.2 / 0.28;
        let coef_dk = 0.8f64.sqrt() * 0.1 / 0.28;
        for i in 0..2 {
            let expected = coef_d0 * d0[i] + coef_dk * dk[i];
            assert!((post.mean[i] - expected).abs() < 1e-14);
        }
        assert!((post.variance - 0.1 / 0.28 * 0.2).abs() < 1e-14);
    }

    #[test]
    fn gaussian_diffusion_breaks_the_simplex() {
        // At mid-schedule nearly every diffused simplex vector stops being one.
        let sched = NoiseSchedule::default_schedule();
        let d0 = vec![0.25; 4];
        let mut invalid = 0;
        let n = 1000;
        for i in 0..n {
            let mut r = rng::stream(42, i);
            let d = gaussian_forward_jump(&d0, 25, &sched, &mut r).unwrap();
            if check_simplex(&d, "gaussian sample").is_err() {
                invalid += 1;
            }
        }
        assert!(
            invalid as f64 / n as f64 > 0.99,
            "only {invalid}/{n} samples left the simplex"
        );
    }
}

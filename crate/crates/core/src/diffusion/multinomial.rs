//! Scaled multinomial draws: counts from Multinomial(trials, p) divided by
//! the trial count, giving a lattice point on the simplex with mean p.

use crate::error::{Error, Result};
use crate::image::check_simplex;
use crate::rng::Rng;
use rand_distr::{Binomial, Distribution};

/// One scaled multinomial draw. Every entry is an integer multiple of
/// 1/trials and the entries sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MultinomialDraw {
    values: Vec<f64>,
}

impl MultinomialDraw {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Samples counts ~ Multinomial(trials, p) by conditional binomials and
/// divides by `trials`.
pub fn sample_scaled_multinomial(p: &[f64], trials: u64, rng: &mut Rng) -> Result<MultinomialDraw> {
    check_simplex(p, "multinomial probabilities")?;
    if trials == 0 {
        return Err(Error::InvalidRange("trial count must be positive".into()));
    }
    let counts = sample_counts(p, trials, rng);
    let t = trials as f64;
    Ok(MultinomialDraw {
        values: counts.into_iter().map(|c| c as f64 / t).collect(),
    })
}

/// Raw multinomial counts. `p` must be a simplex vector.
pub(crate) fn sample_counts(p: &[f64], trials: u64, rng: &mut Rng) -> Vec<u64> {
    let n = p.len();
    let mut counts = vec![0u64; n];
    let mut remaining_trials = trials;
    let mut remaining_mass = 1.0f64;
    for i in 0..n - 1 {
        if remaining_trials == 0 {
            break;
        }
        let cond = if remaining_mass <= 0.0 {
            1.0
        } else {
            (p[i] / remaining_mass).clamp(0.0, 1.0)
        };
        let c = if cond >= 1.0 {
            remaining_trials
        } else if cond <= 0.0 {
            0
        } else {
            Binomial::new(remaining_trials, cond)
                .expect("conditional probability is in [0, 1]")
                .sample(rng)
        };
        counts[i] = c;
        remaining_trials -= c;
        remaining_mass -= p[i];
    }
    counts[n - 1] = remaining_trials;
    counts
}

//! Step conditioning.

/// Sinusoidal embedding of the diffusion step index: `dim/2` frequencies
/// geometrically spaced down from 1 to 1/10000, cos half then sin half.
/// Deterministic in `k`.
pub fn step_embedding(k: usize, dim: usize) -> Vec<f64> {
    debug_assert!(dim % 2 == 0);
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    let max_period: f64 = 10_000.0;
    for i in 0..half {
        let freq = (-(max_period.ln()) * i as f64 / half as f64).exp();
        out.push((k as f64 * freq).cos());
    }
    for i in 0..half {
        let freq = (-(max_period.ln()) * i as f64 / half as f64).exp();
        out.push((k as f64 * freq).sin());
    }
    out
}

/// Per-pair, per-step conditioning inputs fed to the denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    /// Appearance feature of the human-object pair.
    pub appearance: Vec<f64>,
    /// Sinusoidal embedding of the current step.
    pub step_embedding: Vec<f64>,
}

impl Conditioning {
    pub fn for_step(appearance: &[f64], k: usize, d_step: usize) -> Self {
        Self {
            appearance: appearance.to_vec(),
            step_embedding: step_embedding(k, d_step),
        }
    }
}

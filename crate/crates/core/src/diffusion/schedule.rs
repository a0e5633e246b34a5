//! Noise schedule: β_k, derived retention products, and the effective
//! trial-count scaling for the closed-form jump.

use crate::error::{Error, Result};
use crate::util::{format_hex_f64, fnv1a64, parse_hex_f64};
use std::fmt::Write as _;
use std::path::Path;

pub const DEFAULT_STEPS: usize = 50;
pub const DEFAULT_TRIALS: u64 = 2000;
pub const DEFAULT_BETA_START: f64 = 1e-3;
/// With `DEFAULT_BETA_START` and 50 steps this drives the cumulative
/// retention down to ᾱ_50 ≈ 4.66e-3, below the 0.01 the terminal-convergence
/// property requires.
pub const DEFAULT_BETA_END: f64 = 0.2;

/// All per-step coefficients the forward and reverse processes need.
///
/// Indexing: the chain runs k = 1..=K; accessor methods take that 1-based k.
/// `alpha_bar(0)` is defined as 1 so the final reverse step returns the
/// model's clean prediction unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    s_factors: Vec<f64>,
    trials: u64,
    steps: usize,
}

impl NoiseSchedule {
    /// Builds a schedule from explicit β values.
    ///
    /// The jump scaling S_k = (1-ᾱ_k)²/D_k is computed by the recurrence
    /// D_1 = β_1², D_k = α_k²·D_{k-1} + β_k², which telescopes the sum of
    /// squared per-step noise weights.
    pub fn from_betas(betas: Vec<f64>, trials: u64) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidRange("schedule needs at least one step".into()));
        }
        if trials == 0 {
            return Err(Error::InvalidRange("trial count must be positive".into()));
        }
        for (i, &b) in betas.iter().enumerate() {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::InvalidRange(format!(
                    "beta[{i}] = {b} outside (0, 1)"
                )));
            }
        }
        let steps = betas.len();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut prod = 1.0;
        for &a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        let mut s_factors = Vec::with_capacity(steps);
        let mut d = 0.0;
        for k in 0..steps {
            d = alphas[k] * alphas[k] * d + betas[k] * betas[k];
            s_factors.push((1.0 - alpha_bars[k]).powi(2) / d);
        }
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
            s_factors,
            trials,
            steps,
        })
    }

    /// Linear interpolation of β from `beta_start` to `beta_end` over `steps`.
    pub fn linear(steps: usize, trials: u64, beta_start: f64, beta_end: f64) -> Result<Self> {
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidRange(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidRange("schedule needs at least one step".into()));
        }
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas, trials)
    }

    /// The default schedule: K=50, T=2000, β linear 1e-3..0.2.
    pub fn default_schedule() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_TRIALS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule constants are valid")
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn trials(&self) -> u64 {
        self.trials
    }

    /// β_k for k in 1..=K.
    pub fn beta(&self, k: usize) -> f64 {
        self.betas[k - 1]
    }

    /// α_k = 1 − β_k for k in 1..=K.
    pub fn alpha(&self, k: usize) -> f64 {
        self.alphas[k - 1]
    }

    /// ᾱ_k = Π_{s<=k} α_s for k in 0..=K; ᾱ_0 := 1.
    pub fn alpha_bar(&self, k: usize) -> f64 {
        if k == 0 {
            1.0
        } else {
            self.alpha_bars[k - 1]
        }
    }

    /// S_k for k in 1..=K.
    pub fn s_factor(&self, k: usize) -> f64 {
        self.s_factors[k - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// Integer trial count for the jump to step k: round(S_k·T), at least 1.
    pub fn jump_trials(&self, k: usize) -> u64 {
        let raw = (self.s_factor(k) * self.trials as f64).round();
        (raw as u64).max(1)
    }

    pub fn check_step(&self, k: usize) -> Result<()> {
        if k < 1 || k > self.steps {
            return Err(Error::StepOutOfRange {
                k,
                lo: 1,
                hi: self.steps,
            });
        }
        Ok(())
    }

    /// Serializes to the plain-text key-value format. β values are encoded as
    /// hex floats so a dump/load round trip is bit exact.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "schedule.steps = {}", self.steps);
        let _ = writeln!(out, "schedule.trials = {}", self.trials);
        for (i, &b) in self.betas.iter().enumerate() {
            let _ = writeln!(out, "schedule.beta.{i} = {}", format_hex_f64(b));
        }
        let _ = writeln!(out, "schedule.checksum = {:016x}", checksum(&self.betas, self.trials));
        out
    }

    pub fn load(text: &str) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            path: "<schedule>".into(),
            reason,
        };
        let mut steps = None;
        let mut trials = None;
        let mut betas: Vec<(usize, f64)> = Vec::new();
        let mut stored_sum = None;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "schedule.steps" => steps = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "schedule.trials" => trials = Some(value.parse::<u64>().map_err(|e| bad(e.to_string()))?),
                "schedule.checksum" => {
                    stored_sum = Some(u64::from_str_radix(value, 16).map_err(|e| bad(e.to_string()))?)
                }
                _ => {
                    let idx = key
                        .strip_prefix("schedule.beta.")
                        .ok_or_else(|| bad(format!("unknown key {key:?}")))?
                        .parse::<usize>()
                        .map_err(|e| bad(e.to_string()))?;
                    betas.push((idx, parse_hex_f64(value)?));
                }
            }
        }
        let steps = steps.ok_or_else(|| bad("missing schedule.steps".into()))?;
        let trials = trials.ok_or_else(|| bad("missing schedule.trials".into()))?;
        if betas.len() != steps {
            return Err(bad(format!("expected {steps} betas, found {}", betas.len())));
        }
        betas.sort_by_key(|&(i, _)| i);
        for (pos, &(i, _)) in betas.iter().enumerate() {
            if i != pos {
                return Err(bad(format!("beta indices not contiguous at {i}")));
            }
        }
        let betas: Vec<f64> = betas.into_iter().map(|(_, b)| b).collect();
        if let Some(sum) = stored_sum {
            let actual = checksum(&betas, trials);
            if sum != actual {
                return Err(bad(format!(
                    "checksum mismatch: stored {sum:016x}, computed {actual:016x}"
                )));
            }
        }
        Self::from_betas(betas, trials)
    }

    pub fn save_to(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.dump())?;
        Ok(())
    }

    pub fn load_from(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::load(&text)
    }
}

fn checksum(betas: &[f64], trials: u64) -> u64 {
    let mut bytes = Vec::with_capacity(betas.len() * 8 + 8);
    bytes.extend_from_slice(&trials.to_le_bytes());
    for b in betas {
        bytes.extend_from_slice(&b.to_bits().to_le_bytes());
    }
    fnv1a64(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_s_is_one() {
        let s = NoiseSchedule::from_betas(vec![0.5], 100).unwrap();
        assert_eq!(s.alpha_bar(1), 0.5);
        assert!((s.s_factor(1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn three_step_matches_hand_computation() {
        let s = NoiseSchedule::from_betas(vec![0.1, 0.2, 0.3], 10).unwrap();
        assert!((s.alpha_bar(3) - 0.504).abs() < 1e-15);
        // D_3 = 0.49*(0.64*0.01 + 0.04) + 0.09
        let d3 = 0.49 * (0.64 * 0.01 + 0.04) + 0.09;
        let expected = (1.0 - 0.504f64).powi(2) / d3;
        assert!((s.s_factor(3) - expected).abs() / expected < 1e-14);
    }

    #[test]
    fn default_schedule_terminal_retention_is_small() {
        let s = NoiseSchedule::default_schedule();
        assert_eq!(s.steps(), 50);
        assert_eq!(s.trials(), 2000);
        assert!(s.alpha_bar(50) < 0.01, "alpha_bar_50 = {}", s.alpha_bar(50));
    }

    #[test]
    fn alpha_bars_strictly_decrease() {
        let s = NoiseSchedule::default_schedule();
        for k in 1..=s.steps() {
            assert!(s.alpha_bar(k) < s.alpha_bar(k - 1));
            assert!(s.s_factor(k) > 0.0);
        }
    }

    #[test]
    fn rejects_out_of_range_betas() {
        assert!(NoiseSchedule::linear(10, 100, 0.0, 0.5).is_err());
        assert!(NoiseSchedule::linear(10, 100, 0.2, 1.0).is_err());
        assert!(NoiseSchedule::linear(10, 100, 0.5, 0.2).is_err());
        assert!(NoiseSchedule::from_betas(vec![], 100).is_err());
    }

    #[test]
    fn dump_load_round_trips_bit_exact() {
        let s = NoiseSchedule::default_schedule();
        let text = s.dump();
        let loaded = NoiseSchedule::load(&text).unwrap();
        assert_eq!(s, loaded);
        for (a, b) in s.betas().iter().zip(loaded.betas()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn load_rejects_corrupted_checksum() {
        let s = NoiseSchedule::linear(3, 10, 0.1, 0.3).unwrap();
        let text = s.dump().replace("schedule.trials = 10", "schedule.trials = 11");
        assert!(NoiseSchedule::load(&text).is_err());
    }

    #[test]
    fn jump_trials_rounds_and_floors() {
        let s = NoiseSchedule::from_betas(vec![0.5], 7).unwrap();
        // S_1 = 1 -> round(7) = 7
        assert_eq!(s.jump_trials(1), 7);
    }
}

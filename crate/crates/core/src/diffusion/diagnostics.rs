//! Statistical checks on the diffusion process.
//!
//! Each check runs an independent oracle (direct formula evaluation, chain
//! simulation, exhaustive lattice enumeration) against the production code
//! and reports a pass/fail with the measured margin. The CLI `diag` command
//! prints these, and the acceptance suite asserts them at pinned sizes.

use super::process::{forward_chain_image, forward_jump, forward_step, DiffusionState};
use super::schedule::NoiseSchedule;
use crate::diffusion::posterior_logdensity;
use crate::error::Result;
use crate::image::{compose, InteractionMatrix, ObjectDist, INTERNAL_TOL};
use crate::rng;
use rand::Rng as _;

/// Outcome of one diagnostic check.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: &'static str,
    pub passed: bool,
    /// Human-readable measurement, e.g. `max rel err 3.1e-15 < 1e-12`.
    pub detail: String,
}

impl CheckReport {
    pub fn status(&self) -> &'static str {
        if self.passed {
            "PASS"
        } else {
            "FAIL"
        }
    }
}

/// Direct evaluation of the jump-scaling denominator:
/// `D_k = Σ_{i=1..k} (Π_{j=i+1..k} α_j)² β_i²`, written as the literal sum of
/// products. Serves as the oracle for the recurrence used by the schedule.
pub fn direct_s_factor(betas: &[f64], k: usize) -> f64 {
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut denom = 0.0;
    for i in 1..=k {
        let mut weight = 1.0;
        for j in (i + 1)..=k {
            weight *= alphas[j - 1];
        }
        denom += weight * weight * betas[i - 1] * betas[i - 1];
    }
    let alpha_bar: f64 = alphas[..k].iter().product();
    (1.0 - alpha_bar).powi(2) / denom
}

/// Recurrence vs. direct sum for every step of the schedule.
pub fn s_factor_recurrence_check(sched: &NoiseSchedule) -> CheckReport {
    let mut max_rel = 0.0f64;
    for k in 1..=sched.steps() {
        let direct = direct_s_factor(sched.betas(), k);
        let rel = ((sched.s_factor(k) - direct) / direct).abs();
        max_rel = max_rel.max(rel);
    }
    CheckReport {
        name: "s-factor-recurrence",
        passed: max_rel < 1e-12,
        detail: format!("max rel err {max_rel:.3e} (threshold 1e-12)"),
    }
}

fn random_simplex(n: usize, r: &mut rng::Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| r.random::<f64>() + 1e-3).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    let total: f64 = v.iter().sum();
    let i = crate::image::argmax(&v);
    v[i] += 1.0 - total;
    v
}

/// Runs seeded full-image chains and validates every intermediate slice sum.
pub fn slice_conservation_check(
    sched: &NoiseSchedule,
    h: usize,
    w: usize,
    chains: u64,
    seed: u64,
) -> Result<CheckReport> {
    let mut worst = 0.0f64;
    for chain in 0..chains {
        let mut r = rng::stream(seed, chain);
        let object = r.random_range(0..h);
        let present: Vec<usize> = (0..w).filter(|_| r.random::<bool>()).collect();
        let img0 = compose(
            &ObjectDist::one_hot(h, object)?,
            &InteractionMatrix::from_present(w, &present)?,
        )?;
        let prior = ObjectDist::new(random_simplex(h, &mut r))?;
        let init = compose(&prior, &InteractionMatrix::undecided(w))?;
        let chain_imgs = forward_chain_image(&img0, &init, sched.steps(), sched, &mut r)?;
        for img in &chain_imgs {
            let report = img.validate(INTERNAL_TOL);
            worst = worst
                .max(report.max_slice_deviation)
                .max(-report.min_entry.min(0.0));
            if !report.passed() {
                return Ok(CheckReport {
                    name: "slice-conservation",
                    passed: false,
                    detail: format!(
                        "chain {chain} produced deviation {:.3e} (threshold 1e-9)",
                        report.max_slice_deviation
                    ),
                });
            }
        }
    }
    Ok(CheckReport {
        name: "slice-conservation",
        passed: true,
        detail: format!("{chains} chains, worst deviation {worst:.3e} (threshold 1e-9)"),
    })
}

/// Checks that the mean of chain terminals lands on d_init:
/// for each of `pairs` random (d_0, d_init) pairs, the mean of `samples`
/// simulated terminals must lie within `tol` of d_init in max norm.
pub fn terminal_convergence_check(
    sched: &NoiseSchedule,
    slice_len: usize,
    pairs: u64,
    samples: u64,
    tol: f64,
    seed: u64,
) -> Result<CheckReport> {
    let k_last = sched.steps();
    let mut worst = 0.0f64;
    for pair in 0..pairs {
        let mut setup = rng::stream(seed, pair * 2);
        let d0 = random_simplex(slice_len, &mut setup);
        let d_init = random_simplex(slice_len, &mut setup);
        let mut mean = vec![0.0f64; slice_len];
        let mut r = rng::stream(seed, pair * 2 + 1);
        for _ in 0..samples {
            let mut state = DiffusionState::start(d0.clone(), d_init.clone())?;
            for _ in 0..k_last {
                state = forward_step(&state, sched, &mut r)?;
            }
            for (m, v) in mean.iter_mut().zip(&state.d_k) {
                *m += v;
            }
        }
        let linf = mean
            .iter()
            .zip(&d_init)
            .map(|(m, &t)| (m / samples as f64 - t).abs())
            .fold(0.0f64, f64::max);
        worst = worst.max(linf);
        if linf >= tol {
            return Ok(CheckReport {
                name: "terminal-convergence",
                passed: false,
                detail: format!("pair {pair}: linf {linf:.4} >= tolerance {tol}"),
            });
        }
    }
    Ok(CheckReport {
        name: "terminal-convergence",
        passed: true,
        detail: format!(
            "{pairs} pairs x {samples} chains, worst linf {worst:.4} < {tol} (alpha_bar_K = {:.3e})",
            sched.alpha_bar(k_last)
        ),
    })
}

/// Compares per-entry first and second moments of the closed-form jump with
/// the iterated chain at step `k`, requiring agreement within `z_limit`
/// Monte-Carlo standard errors.
pub fn jump_chain_moment_check(
    sched: &NoiseSchedule,
    slice_len: usize,
    k: usize,
    samples: u64,
    z_limit: f64,
    seed: u64,
) -> Result<CheckReport> {
    sched.check_step(k)?;
    let mut setup = rng::stream(seed, 0);
    let d0 = random_simplex(slice_len, &mut setup);
    let d_init = random_simplex(slice_len, &mut setup);

    // Accumulate running moments up to fourth order (needed for the standard
    // error of the variance estimate).
    struct Moments {
        n: f64,
        sum: Vec<f64>,
        sum2: Vec<f64>,
        sum3: Vec<f64>,
        sum4: Vec<f64>,
    }
    impl Moments {
        fn new(len: usize) -> Self {
            Self {
                n: 0.0,
                sum: vec![0.0; len],
                sum2: vec![0.0; len],
                sum3: vec![0.0; len],
                sum4: vec![0.0; len],
            }
        }
        fn push(&mut self, xs: &[f64]) {
            self.n += 1.0;
            for (i, &x) in xs.iter().enumerate() {
                let x2 = x * x;
                self.sum[i] += x;
                self.sum2[i] += x2;
                self.sum3[i] += x2 * x;
                self.sum4[i] += x2 * x2;
            }
        }
        fn mean(&self, i: usize) -> f64 {
            self.sum[i] / self.n
        }
        fn var(&self, i: usize) -> f64 {
            let m = self.mean(i);
            (self.sum2[i] / self.n - m * m).max(0.0)
        }
        /// Central fourth moment.
        fn mu4(&self, i: usize) -> f64 {
            let m = self.mean(i);
            let raw2 = self.sum2[i] / self.n;
            let raw3 = self.sum3[i] / self.n;
            let raw4 = self.sum4[i] / self.n;
            raw4 - 4.0 * m * raw3 + 6.0 * m * m * raw2 - 3.0 * m.powi(4)
        }
        fn se_mean(&self, i: usize) -> f64 {
            (self.var(i) / self.n).sqrt()
        }
        fn se_var(&self, i: usize) -> f64 {
            let v = self.var(i);
            ((self.mu4(i) - v * v).max(0.0) / self.n).sqrt()
        }
    }

    let mut jump_m = Moments::new(slice_len);
    let mut r = rng::stream(seed, 1);
    for _ in 0..samples {
        jump_m.push(&forward_jump(&d0, &d_init, k, sched, &mut r)?);
    }
    let mut chain_m = Moments::new(slice_len);
    let mut r = rng::stream(seed, 2);
    for _ in 0..samples {
        let mut state = DiffusionState::start(d0.clone(), d_init.clone())?;
        for _ in 0..k {
            state = forward_step(&state, sched, &mut r)?;
        }
        chain_m.push(&state.d_k);
    }

    let mut worst_z = 0.0f64;
    let mut worst_what = String::new();
    for i in 0..slice_len {
        let se_mean = (jump_m.se_mean(i).powi(2) + chain_m.se_mean(i).powi(2)).sqrt();
        let z_mean = (jump_m.mean(i) - chain_m.mean(i)).abs() / se_mean.max(1e-300);
        if z_mean > worst_z {
            worst_z = z_mean;
            worst_what = format!("mean[{i}]");
        }
        let se_var = (jump_m.se_var(i).powi(2) + chain_m.se_var(i).powi(2)).sqrt();
        let z_var = (jump_m.var(i) - chain_m.var(i)).abs() / se_var.max(1e-300);
        if z_var > worst_z {
            worst_z = z_var;
            worst_what = format!("var[{i}]");
        }
    }
    Ok(CheckReport {
        name: "jump-chain-moments",
        passed: worst_z < z_limit,
        detail: format!(
            "worst |z| {worst_z:.2} at {worst_what} over {samples} samples (limit {z_limit})"
        ),
    })
}

/// Posterior fidelity on a tiny exactly-enumerable instance.
///
/// Slice length 2, T = 10, K = 3 with β = (1/2, 1/3, 1/4). The constraint
/// β_2 = β_1 / (1 + β_1) makes the two-step value depend on the total noise
/// count c_1 + c_2 only, so conditioning on d_2 is conditioning on that sum
/// and every predecessor lattice point stays reachable with integer implied
/// counts. The normalized posterior over the 11 reachable d_1 values is then
/// compared in total variation against the empirical conditional from
/// simulated chains at the modal conditioning event.
pub fn posterior_tv_check(chains: u64, tv_limit: f64, seed: u64) -> Result<CheckReport> {
    let t = 10u64;
    let betas = vec![0.5, 1.0 / 3.0, 0.25];
    let sched = NoiseSchedule::from_betas(betas, t)?;
    let d0 = vec![0.7, 0.3];
    let d_init = vec![0.2, 0.8];

    // Simulate chains, recovering the integer noise counts from the slice
    // values (lattice spacing is far above float error).
    let count_from = |d_next: &[f64], d_prev: &[f64], beta: f64| -> usize {
        let eps0 = (d_next[0] - (1.0 - beta) * d_prev[0]) / beta;
        (eps0 * t as f64).round() as usize
    };
    // joint[c1][s] where s = c1 + c2
    let mut joint = vec![[0u64; 21]; 11];
    for chain in 0..chains {
        let mut r = rng::stream(seed, chain);
        let state0 = DiffusionState::start(d0.clone(), d_init.clone())?;
        let state1 = forward_step(&state0, &sched, &mut r)?;
        let state2 = forward_step(&state1, &sched, &mut r)?;
        let c1 = count_from(&state1.d_k, &state0.d_k, sched.beta(1));
        let c2 = count_from(&state2.d_k, &state1.d_k, sched.beta(2));
        joint[c1][c1 + c2] += 1;
    }

    // Modal conditioning event: the most frequent value of c1 + c2.
    let mut s_totals = [0u64; 21];
    for row in &joint {
        for (s, &n) in row.iter().enumerate() {
            s_totals[s] += n;
        }
    }
    let s_star = (0..21).max_by_key(|&s| s_totals[s]).unwrap();
    let n_cond = s_totals[s_star] as f64;

    // The observed d_2 for that event (same for every compatible (c1, c2)).
    let d1_at = |c1: usize| -> Vec<f64> {
        let e = c1 as f64 / t as f64;
        vec![
            (1.0 - sched.beta(1)) * d0[0] + sched.beta(1) * e,
            (1.0 - sched.beta(1)) * d0[1] + sched.beta(1) * (1.0 - e),
        ]
    };
    let d2_at = |c1: usize, c2: usize| -> Vec<f64> {
        let d1 = d1_at(c1);
        let e = c2 as f64 / t as f64;
        vec![
            (1.0 - sched.beta(2)) * d1[0] + sched.beta(2) * e,
            (1.0 - sched.beta(2)) * d1[1] + sched.beta(2) * (1.0 - e),
        ]
    };
    let c1_example = s_star.min(10);
    let d2_obs = d2_at(c1_example, s_star - c1_example);

    // Normalized posterior over the 11 reachable predecessors.
    let state = DiffusionState {
        d0: d0.clone(),
        d_init: d_init.clone(),
        d_k: d2_obs,
        k: 2,
    };
    let log_weights: Vec<f64> = (0..=10)
        .map(|c1| {
            posterior_logdensity(&d1_at(c1), &state, &sched).map(|eval| eval.log_density)
        })
        .collect::<Result<_>>()?;
    let max_lw = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_weights.iter().map(|lw| (lw - max_lw).exp()).collect();
    let z: f64 = weights.iter().sum();

    let mut tv = 0.0;
    for c1 in 0..=10 {
        let q = weights[c1] / z;
        let p = joint[c1][s_star] as f64 / n_cond;
        tv += (p - q).abs();
    }
    tv *= 0.5;

    Ok(CheckReport {
        name: "posterior-fidelity",
        passed: tv < tv_limit,
        detail: format!(
            "TV {tv:.4} < {tv_limit} (conditioning on modal event, {} of {chains} chains)",
            n_cond as u64
        ),
    })
}

/// The full suite at the sizes the acceptance criteria pin.
pub fn default_suite(sched: &NoiseSchedule, seed: u64) -> Result<Vec<CheckReport>> {
    let moment_sched = NoiseSchedule::linear(
        sched.steps().max(5),
        100,
        super::DEFAULT_BETA_START,
        super::DEFAULT_BETA_END,
    )?;
    Ok(vec![
        s_factor_recurrence_check(sched),
        slice_conservation_check(sched, 6, 5, 1000, seed)?,
        terminal_convergence_check(sched, 12, 20, 10_000, 0.02, seed.wrapping_add(1))?,
        jump_chain_moment_check(&moment_sched, 6, 5, 100_000, 4.0, seed.wrapping_add(2))?,
        posterior_tv_check(1_000_000, 0.05, seed.wrapping_add(3))?,
    ])
}

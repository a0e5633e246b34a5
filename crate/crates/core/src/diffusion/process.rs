//! Forward steps, the closed-form jump, and the posterior density.

use super::multinomial::sample_scaled_multinomial;
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::image::{check_simplex, HoiImage};
use crate::rng::Rng;
use crate::util::ln_factorial;

/// One vertical slice moving through the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    /// Ground-truth slice d_0.
    pub d0: Vec<f64>,
    /// Initialization slice d_init (the corruption target).
    pub d_init: Vec<f64>,
    /// Current slice d_k.
    pub d_k: Vec<f64>,
    /// Current step index, 0 ..= K.
    pub k: usize,
}

impl DiffusionState {
    /// A chain positioned at k = 0.
    pub fn start(d0: Vec<f64>, d_init: Vec<f64>) -> Result<Self> {
        check_simplex(&d0, "d0")?;
        check_simplex(&d_init, "d_init")?;
        if d0.len() != d_init.len() {
            return Err(Error::DimensionMismatch(format!(
                "d0 has {} entries, d_init has {}",
                d0.len(),
                d_init.len()
            )));
        }
        Ok(Self {
            d_k: d0.clone(),
            d0,
            d_init,
            k: 0,
        })
    }
}

/// Evaluation of the posterior density at one candidate predecessor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorEval {
    /// Log density; −∞ encodes an infeasible candidate.
    pub log_density: f64,
    /// The normalizer is constant in the candidate and treated as a fixed
    /// hyperparameter equal to 1.
    pub gamma: f64,
}

/// Advances a chain one step: `d_{k+1} = (1-β) d_k + β ε` with
/// `ε ~ scaled multinomial(T, d_init)`.
pub fn forward_step(state: &DiffusionState, sched: &NoiseSchedule, rng: &mut Rng) -> Result<DiffusionState> {
    let k_next = state.k + 1;
    sched.check_step(k_next)?;
    let beta = sched.beta(k_next);
    let eps = sample_scaled_multinomial(&state.d_init, sched.trials(), rng)?;
    let d_next: Vec<f64> = state
        .d_k
        .iter()
        .zip(eps.values())
        .map(|(&d, &e)| (1.0 - beta) * d + beta * e)
        .collect();
    Ok(DiffusionState {
        d0: state.d0.clone(),
        d_init: state.d_init.clone(),
        d_k: d_next,
        k: k_next,
    })
}

/// Jumps straight from `d_0` to step `k`:
/// `d_k = ᾱ_k d_0 + (1-ᾱ_k) ε̄` with `ε̄ ~ scaled multinomial(round(S_k·T), d_init)`.
pub fn forward_jump(
    d0: &[f64],
    d_init: &[f64],
    k: usize,
    sched: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    sched.check_step(k)?;
    check_simplex(d0, "d0")?;
    check_simplex(d_init, "d_init")?;
    let abar = sched.alpha_bar(k);
    let eps = sample_scaled_multinomial(d_init, sched.jump_trials(k), rng)?;
    Ok(d0
        .iter()
        .zip(eps.values())
        .map(|(&d, &e)| abar * d + (1.0 - abar) * e)
        .collect())
}

/// Log pmf of the multinomial generalized to real-valued counts via the
/// log-gamma continuation. `counts` may be non-integer; any entry below
/// `-tol` (scaled by the total) makes the result −∞. A zero probability cell
/// with positive count is likewise infeasible.
pub fn generalized_multinomial_log_pmf(total: f64, counts: &[f64], p: &[f64]) -> f64 {
    debug_assert_eq!(counts.len(), p.len());
    let tol = 1e-9 * total.abs().max(1.0);
    let mut log_pmf = ln_factorial(total);
    for (&n_raw, &prob) in counts.iter().zip(p) {
        if n_raw < -tol {
            return f64::NEG_INFINITY;
        }
        let n = n_raw.max(0.0);
        if prob <= 0.0 {
            if n > tol {
                return f64::NEG_INFINITY;
            }
            continue; // 0^0 = 1
        }
        log_pmf += n * prob.ln() - ln_factorial(n);
    }
    log_pmf
}

/// Scores a candidate `d_{k-1}` under the posterior `q(d_{k-1} | d_k, d_0)`:
/// the product of the step likelihood and the jump density at k−1, each a
/// generalized multinomial with implied count vectors
/// `T (d_k - (1-β_k) d_{k-1}) / β_k` and
/// `S_{k-1} T (d_{k-1} - ᾱ_{k-1} d_0) / (1 - ᾱ_{k-1})`.
pub fn posterior_logdensity(
    d_prev_candidate: &[f64],
    state: &DiffusionState,
    sched: &NoiseSchedule,
) -> Result<PosteriorEval> {
    let k = state.k;
    if k < 2 {
        return Err(Error::StepOutOfRange {
            k,
            lo: 2,
            hi: sched.steps(),
        });
    }
    sched.check_step(k)?;
    check_simplex(d_prev_candidate, "posterior candidate")?;
    check_simplex(&state.d_k, "d_k")?;
    check_simplex(&state.d0, "d0")?;
    check_simplex(&state.d_init, "d_init")?;
    let n = d_prev_candidate.len();
    if state.d_k.len() != n || state.d0.len() != n || state.d_init.len() != n {
        return Err(Error::DimensionMismatch(
            "posterior vectors must share one slice length".into(),
        ));
    }

    let t = sched.trials() as f64;
    let beta_k = sched.beta(k);
    let abar_prev = sched.alpha_bar(k - 1);
    let s_prev = sched.s_factor(k - 1);

    // Step factor: the noise that moves d_{k-1} to d_k.
    let step_counts: Vec<f64> = state
        .d_k
        .iter()
        .zip(d_prev_candidate)
        .map(|(&dk, &dp)| t * (dk - (1.0 - beta_k) * dp) / beta_k)
        .collect();
    let log_step = generalized_multinomial_log_pmf(t, &step_counts, &state.d_init);

    // Jump factor: the accumulated noise that reaches d_{k-1} from d_0.
    let jump_total = s_prev * t;
    let jump_counts: Vec<f64> = d_prev_candidate
        .iter()
        .zip(&state.d0)
        .map(|(&dp, &d0)| jump_total * (dp - abar_prev * d0) / (1.0 - abar_prev))
        .collect();
    let log_jump = generalized_multinomial_log_pmf(jump_total, &jump_counts, &state.d_init);

    Ok(PosteriorEval {
        log_density: log_step + log_jump,
        gamma: 1.0,
    })
}

/// Advances every vertical slice of an image by one forward step, drawing
/// slice noises independently.
pub fn forward_step_image(
    img: &HoiImage,
    init: &HoiImage,
    k_next: usize,
    sched: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<HoiImage> {
    sched.check_step(k_next)?;
    let shape = img.shape();
    if init.shape() != shape {
        return Err(Error::ShapeMismatch("image and init shapes differ".into()));
    }
    let beta = sched.beta(k_next);
    let mut out = Vec::with_capacity(shape.w);
    for w in 0..shape.w {
        let d_init = init.vertical_slice(w);
        let eps = sample_scaled_multinomial(&d_init, sched.trials(), rng)?;
        let slice: Vec<f64> = img
            .vertical_slice(w)
            .iter()
            .zip(eps.values())
            .map(|(&d, &e)| (1.0 - beta) * d + beta * e)
            .collect();
        out.push(slice);
    }
    HoiImage::from_vertical_slices(shape, &out)
}

/// Jumps every vertical slice of an image straight to step `k`.
pub fn forward_jump_image(
    img0: &HoiImage,
    init: &HoiImage,
    k: usize,
    sched: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<HoiImage> {
    sched.check_step(k)?;
    let shape = img0.shape();
    if init.shape() != shape {
        return Err(Error::ShapeMismatch("image and init shapes differ".into()));
    }
    let mut out = Vec::with_capacity(shape.w);
    for w in 0..shape.w {
        out.push(forward_jump(
            &img0.vertical_slice(w),
            &init.vertical_slice(w),
            k,
            sched,
            rng,
        )?);
    }
    HoiImage::from_vertical_slices(shape, &out)
}

/// Runs a full image chain `I_0 -> I_1 -> ... -> I_upto`, returning every
/// intermediate including the endpoints.
pub fn forward_chain_image(
    img0: &HoiImage,
    init: &HoiImage,
    upto: usize,
    sched: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<Vec<HoiImage>> {
    if upto > sched.steps() {
        return Err(Error::StepOutOfRange {
            k: upto,
            lo: 0,
            hi: sched.steps(),
        });
    }
    let mut chain = Vec::with_capacity(upto + 1);
    chain.push(img0.clone());
    for k in 1..=upto {
        let next = forward_step_image(chain.last().unwrap(), init, k, sched, rng)?;
        chain.push(next);
    }
    Ok(chain)
}

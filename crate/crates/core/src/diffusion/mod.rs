//! The simplex-preserving diffusion process.
//!
//! The forward process corrupts a clean slice `d_0` toward an initialization
//! slice `d_init` by convex steps `d_k = (1-β_k) d_{k-1} + β_k ε` where `ε`
//! is a scaled multinomial draw around `d_init`. Because every step is a
//! convex combination of simplex vectors, all intermediates remain valid
//! probability distributions, and the terminal distribution concentrates on
//! `d_init` as the cumulative retention `ᾱ_K` falls to zero.
//!
//! A closed-form jump reaches step `k` directly from `d_0` using an effective
//! trial count `S_k·T` chosen to match the iterated chain's first and second
//! moments, and a generalized-multinomial posterior density scores candidate
//! predecessors given `(d_k, d_0)`. A standard Gaussian process is included
//! as a baseline mode for ablations; it preserves none of the simplex
//! structure by construction.

mod gaussian;
mod multinomial;
mod process;
mod schedule;

pub mod diagnostics;

pub use gaussian::{gaussian_forward_jump, gaussian_forward_step, gaussian_posterior, GaussianPosterior};
pub use multinomial::{sample_scaled_multinomial, MultinomialDraw};
pub use process::{
    forward_chain_image, forward_jump, forward_jump_image, forward_step, forward_step_image,
    generalized_multinomial_log_pmf, posterior_logdensity, DiffusionState, PosteriorEval,
};
pub use schedule::{NoiseSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEPS, DEFAULT_TRIALS};

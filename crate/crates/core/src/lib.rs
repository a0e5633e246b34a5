//! HOI image diffusion at desk scale.
//!
//! A human-object interaction detection output for one pair — an object-class
//! distribution times per-interaction presence/absence distributions — is an
//! H×W×2 "HOI image" whose every vertical slice is a probability distribution.
//! This crate builds the full pipeline around that representation:
//!
//! - [`image`]: the HOI image algebra (compose, decompose, validate, project).
//! - [`diffusion`]: a simplex-preserving multinomial noise process with a
//!   closed-form jump, its posterior density, and a Gaussian baseline mode.
//! - [`denoiser`]: a slice-patchified transformer with hand-rolled
//!   backpropagation, conditioned on appearance and step embeddings.
//! - [`train`]: forward-process supervision, MSE loss, and a decoupled
//!   weight-decay adaptive-moment optimizer.
//! - [`world`]: a synthetic HOI benchmark standing in for a detector stage.
//! - [`infer`]: noisy-image initialization, reverse sampling, post-processing
//!   to labels, and detection metrics (AP/mAP).
//!
//! Everything is deterministic given explicit seeds; random streams are
//! derived per task from a master seed (see [`rng`]).

pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod image;
pub mod infer;
pub mod rng;
pub mod train;
pub mod util;
pub mod world;

pub use error::{Error, Result};
pub use image::{HoiImage, HoiShape, InteractionMatrix, ObjectDist};

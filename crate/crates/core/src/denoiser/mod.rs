//! The slice-patchified transformer denoiser.
//!
//! An H×W×2 image is split into H horizontal and W vertical slice patches
//! (H+W tokens total) instead of local square patches, so attention runs
//! over whole rows and columns — the axes along which HOI image pixels
//! correlate. Tokens pass through pre-normalized attention/feed-forward
//! blocks whose normalized activations are scale-and-shift modulated by a
//! summed projection of the appearance feature and a sinusoidal step
//! embedding. Each token decodes back to its slice through an
//! orientation-specific head; overlapping decodings are averaged and the
//! result is projected onto the valid image set by per-slice softmax, so
//! the output is a valid HOI image by construction.
//!
//! Single-orientation and per-pixel ("local") patchifications are available
//! as ablation variants of the same network.
//!
//! Differentiation is hand-rolled: [`forward_cached`] records every
//! intermediate activation and [`backward`] accumulates exact gradients for
//! all parameters, including through the output softmax projection.

mod checkpoint;
mod config;
mod embedding;
mod gradcheck;
mod net;
mod params;
mod patchify;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{ModelConfig, Patchify};
pub use embedding::{step_embedding, Conditioning};
pub use gradcheck::finite_difference_check;
pub use net::{backward, denoise, forward_cached, patches_to_tokens, ForwardCache};
pub use params::{param_count, DenoiserParams};
pub use patchify::{slice_patchify, GroupSpec, Orientation, PatchSet};

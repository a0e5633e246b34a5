//! Model hyperparameters.

use crate::error::{Error, Result};
use crate::image::HoiShape;
use serde::{Deserialize, Serialize};

/// How the image is split into tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Patchify {
    /// H horizontal + W vertical slice patches (H+W tokens).
    #[default]
    Slice,
    /// Horizontal slice patches only (H tokens).
    HorizontalOnly,
    /// Vertical slice patches only (W tokens).
    VerticalOnly,
    /// One token per pixel (H·W tokens of the 2 channel values).
    Local,
}

impl Patchify {
    pub fn code(self) -> u32 {
        match self {
            Patchify::Slice => 0,
            Patchify::HorizontalOnly => 1,
            Patchify::VerticalOnly => 2,
            Patchify::Local => 3,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        Ok(match code {
            0 => Patchify::Slice,
            1 => Patchify::HorizontalOnly,
            2 => Patchify::VerticalOnly,
            3 => Patchify::Local,
            other => {
                return Err(Error::Config(format!("unknown patchify code {other}")));
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Patchify::Slice => "slice",
            Patchify::HorizontalOnly => "horizontal-only",
            Patchify::VerticalOnly => "vertical-only",
            Patchify::Local => "local",
        }
    }
}

impl std::str::FromStr for Patchify {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "slice" => Patchify::Slice,
            "horizontal-only" => Patchify::HorizontalOnly,
            "vertical-only" => Patchify::VerticalOnly,
            "local" => Patchify::Local,
            other => {
                return Err(Error::Config(format!(
                    "unknown patchify mode {other:?} (expected slice, horizontal-only, vertical-only or local)"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Object category count H.
    pub h: usize,
    /// Interaction category count W.
    pub w: usize,
    /// Token width.
    pub d_model: usize,
    /// Transformer block count.
    pub blocks: usize,
    /// Attention head count; must divide `d_model`.
    pub heads: usize,
    /// Appearance feature width.
    pub d_appearance: usize,
    /// Step embedding width; must be even.
    pub d_step: usize,
    pub patchify: Patchify,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            h: 6,
            w: 5,
            d_model: 128,
            blocks: 4,
            heads: 4,
            d_appearance: 16,
            d_step: 64,
            patchify: Patchify::Slice,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.w == 0 {
            return Err(Error::Config("h and w must be at least 1".into()));
        }
        if self.d_model == 0 || self.blocks == 0 || self.heads == 0 {
            return Err(Error::Config("d_model, blocks and heads must be at least 1".into()));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "heads ({}) must divide d_model ({})",
                self.heads, self.d_model
            )));
        }
        if self.d_step % 2 != 0 || self.d_step == 0 {
            return Err(Error::Config("d_step must be positive and even".into()));
        }
        if self.d_appearance == 0 {
            return Err(Error::Config("d_appearance must be at least 1".into()));
        }
        Ok(())
    }

    pub fn shape(&self) -> HoiShape {
        HoiShape { h: self.h, w: self.w }
    }

    /// Feed-forward inner width.
    pub fn d_ff(&self) -> usize {
        4 * self.d_model
    }

    /// Width of one attention head.
    pub fn d_head(&self) -> usize {
        self.d_model / self.heads
    }
}

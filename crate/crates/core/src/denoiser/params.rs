//! Parameter storage.
//!
//! All parameters live in one flat `Vec<f64>` with a paired gradient
//! accumulator of the same length. The layout allocates named segments in a
//! fixed canonical order — the same order the checkpoint format serializes —
//! so the optimizer and serialization treat parameters uniformly while the
//! network code addresses them through typed ranges.

use super::config::ModelConfig;
use super::patchify::{token_groups, total_tokens, GroupSpec};
use crate::error::{Error, Result};
use crate::rng;
use rand_distr::{Distribution, StandardNormal};
use std::ops::Range;

/// Segments of one patch group: a two-layer patch-to-token perceptron and the
/// token-to-slice output head.
#[derive(Debug, Clone)]
pub struct GroupLayout {
    pub spec: GroupSpec,
    pub emb_w1: Range<usize>,
    pub emb_b1: Range<usize>,
    pub emb_w2: Range<usize>,
    pub emb_b2: Range<usize>,
    pub head_w: Range<usize>,
    pub head_b: Range<usize>,
}

/// Segments of one transformer block.
#[derive(Debug, Clone)]
pub struct BlockLayout {
    /// Scale/shift modulation: 4·d_model outputs from the conditioning vector.
    pub mod_w: Range<usize>,
    pub mod_b: Range<usize>,
    pub wq: Range<usize>,
    pub bq: Range<usize>,
    pub wk: Range<usize>,
    pub bk: Range<usize>,
    pub wv: Range<usize>,
    pub bv: Range<usize>,
    pub wo: Range<usize>,
    pub bo: Range<usize>,
    pub ff_w1: Range<usize>,
    pub ff_b1: Range<usize>,
    pub ff_w2: Range<usize>,
    pub ff_b2: Range<usize>,
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub groups: Vec<GroupLayout>,
    pub pos: Range<usize>,
    pub cond_a_w: Range<usize>,
    pub cond_a_b: Range<usize>,
    pub cond_s_w: Range<usize>,
    pub cond_s_b: Range<usize>,
    pub blocks: Vec<BlockLayout>,
    pub total: usize,
}

fn build_layout(cfg: &ModelConfig) -> Layout {
    let d = cfg.d_model;
    let mut cursor = 0usize;
    let mut seg = |len: usize| -> Range<usize> {
        let r = cursor..cursor + len;
        cursor += len;
        r
    };
    let groups = token_groups(cfg)
        .into_iter()
        .map(|spec| GroupLayout {
            spec,
            emb_w1: seg(d * spec.patch_len),
            emb_b1: seg(d),
            emb_w2: seg(d * d),
            emb_b2: seg(d),
            head_w: seg(spec.patch_len * d),
            head_b: seg(spec.patch_len),
        })
        .collect();
    let pos = seg(total_tokens(cfg) * d);
    let cond_a_w = seg(d * cfg.d_appearance);
    let cond_a_b = seg(d);
    let cond_s_w = seg(d * cfg.d_step);
    let cond_s_b = seg(d);
    let blocks = (0..cfg.blocks)
        .map(|_| BlockLayout {
            mod_w: seg(4 * d * d),
            mod_b: seg(4 * d),
            wq: seg(d * d),
            bq: seg(d),
            wk: seg(d * d),
            bk: seg(d),
            wv: seg(d * d),
            bv: seg(d),
            wo: seg(d * d),
            bo: seg(d),
            ff_w1: seg(cfg.d_ff() * d),
            ff_b1: seg(cfg.d_ff()),
            ff_w2: seg(d * cfg.d_ff()),
            ff_b2: seg(d),
        })
        .collect();
    Layout {
        groups,
        pos,
        cond_a_w,
        cond_a_b,
        cond_s_w,
        cond_s_b,
        blocks,
        total: cursor,
    }
}

/// Closed-form parameter count for a configuration.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let d = cfg.d_model;
    let per_group: usize = token_groups(cfg)
        .iter()
        .map(|g| d * g.patch_len + d + d * d + d + g.patch_len * d + g.patch_len)
        .sum();
    let pos = total_tokens(cfg) * d;
    let cond = d * cfg.d_appearance + d + d * cfg.d_step + d;
    let per_block = 4 * d * d + 4 * d + 4 * (d * d + d) + cfg.d_ff() * d + cfg.d_ff() + d * cfg.d_ff() + d;
    per_group + pos + cond + cfg.blocks * per_block
}

/// The full parameter set with paired gradient accumulators.
#[derive(Debug, Clone)]
pub struct DenoiserParams {
    cfg: ModelConfig,
    layout: Layout,
    values: Vec<f64>,
    grads: Vec<f64>,
}

impl DenoiserParams {
    /// Zero-initialized parameters (useful for tests that set weights by hand).
    pub fn zeros(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = build_layout(&cfg);
        let n = layout.total;
        Ok(Self {
            cfg,
            layout,
            values: vec![0.0; n],
            grads: vec![0.0; n],
        })
    }

    /// Seeded random initialization: linear weights scaled by 1/sqrt(fan_in),
    /// modulation and positional tables at scale 0.02, biases zero.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(cfg)?;
        let mut r = rng::stream(seed, 0x9a7a);
        let d = cfg.d_model;
        let fill = |range: Range<usize>, scale: f64, values: &mut Vec<f64>, r: &mut rng::Rng| {
            for v in &mut values[range] {
                let z: f64 = StandardNormal.sample(r);
                *v = scale * z;
            }
        };
        let layout = p.layout.clone();
        for g in &layout.groups {
            fill(g.emb_w1.clone(), 1.0 / (g.spec.patch_len as f64).sqrt(), &mut p.values, &mut r);
            fill(g.emb_w2.clone(), 1.0 / (d as f64).sqrt(), &mut p.values, &mut r);
            fill(g.head_w.clone(), 1.0 / (d as f64).sqrt(), &mut p.values, &mut r);
        }
        fill(layout.pos.clone(), 0.02, &mut p.values, &mut r);
        fill(layout.cond_a_w.clone(), 1.0 / (cfg.d_appearance as f64).sqrt(), &mut p.values, &mut r);
        fill(layout.cond_s_w.clone(), 1.0 / (cfg.d_step as f64).sqrt(), &mut p.values, &mut r);
        for b in &layout.blocks {
            fill(b.mod_w.clone(), 0.02, &mut p.values, &mut r);
            for w in [&b.wq, &b.wk, &b.wv, &b.wo] {
                fill(w.clone(), 1.0 / (d as f64).sqrt(), &mut p.values, &mut r);
            }
            fill(b.ff_w1.clone(), 1.0 / (d as f64).sqrt(), &mut p.values, &mut r);
            fill(b.ff_w2.clone(), 1.0 / (cfg.d_ff() as f64).sqrt(), &mut p.values, &mut r);
        }
        Ok(p)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut [f64] {
        &mut self.grads
    }

    /// Disjoint borrows for the backward pass: read the values, accumulate
    /// into the gradients.
    pub fn split_mut(&mut self) -> (&ModelConfig, &Layout, &[f64], &mut [f64]) {
        (&self.cfg, &self.layout, &self.values, &mut self.grads)
    }

    /// Disjoint borrows for the optimizer: write the values, read the
    /// gradients.
    pub fn values_and_grads_mut(&mut self) -> (&mut [f64], &[f64]) {
        (&mut self.values, &self.grads)
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Replaces the parameter vector, e.g. when loading a checkpoint.
    pub fn set_values(&mut self, values: Vec<f64>) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.values.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector".into()));
        }
        self.values = values;
        Ok(())
    }
}

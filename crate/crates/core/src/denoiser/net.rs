//! Forward and backward passes.
//!
//! The forward pass records every intermediate activation in a
//! [`ForwardCache`]; the backward pass walks the cache in reverse and
//! accumulates exact parameter gradients. No approximation anywhere: the
//! gradient of every primitive (perceptron, normalization, attention,
//! softmax projection, de-patchify averaging) is written out analytically
//! and finite-difference checked in the tests below.

#[cfg(test)]
use super::config::ModelConfig;
use super::embedding::Conditioning;
use super::params::DenoiserParams;
use super::patchify::{extract_group, pixel_of, token_groups, PatchSet};
use crate::error::{Error, Result};
use crate::image::{project_to_valid, HoiImage};
use std::ops::Range;

const LN_EPS: f64 = 1e-5;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// y = W·x + b, with W row-major (rows × cols).
fn affine(w: &[f64], b: &[f64], x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(b.len(), rows);
    debug_assert_eq!(x.len(), cols);
    let mut y = b.to_vec();
    for (i, yi) in y.iter_mut().enumerate() {
        let row = &w[i * cols..(i + 1) * cols];
        let mut acc = 0.0;
        for (wij, xj) in row.iter().zip(x) {
            acc += wij * xj;
        }
        *yi += acc;
    }
    y
}

/// Simultaneous mutable views of a weight segment and its bias segment,
/// which the layout always allocates back to back.
fn wb_grads<'a>(
    grads: &'a mut [f64],
    w: &Range<usize>,
    b: &Range<usize>,
) -> (&'a mut [f64], &'a mut [f64]) {
    debug_assert_eq!(w.end, b.start);
    grads[w.start..b.end].split_at_mut(w.end - w.start)
}

/// Accumulates dW += dy ⊗ x, db += dy and optionally dx += Wᵀ·dy.
fn affine_backward(
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    rows: usize,
    cols: usize,
    dw: &mut [f64],
    db: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    for i in 0..rows {
        let g = dy[i];
        db[i] += g;
        let drow = &mut dw[i * cols..(i + 1) * cols];
        for (d, xj) in drow.iter_mut().zip(x) {
            *d += g * xj;
        }
    }
    if let Some(dx) = dx {
        for i in 0..rows {
            let g = dy[i];
            let row = &w[i * cols..(i + 1) * cols];
            for (dxj, wij) in dx.iter_mut().zip(row) {
                *dxj += g * wij;
            }
        }
    }
}

struct LnOut {
    norm: Vec<f64>,
    rstd: f64,
}

/// Layer normalization without affine parameters (scale and shift come from
/// the conditioning modulation instead).
fn layer_norm(x: &[f64]) -> LnOut {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let rstd = 1.0 / (var + LN_EPS).sqrt();
    LnOut {
        norm: x.iter().map(|v| (v - mean) * rstd).collect(),
        rstd,
    }
}

/// dx for layer norm given d(norm), the normalized values and 1/std.
fn layer_norm_backward(dnorm: &[f64], norm: &[f64], rstd: f64) -> Vec<f64> {
    let n = dnorm.len() as f64;
    let mean_d = dnorm.iter().sum::<f64>() / n;
    let mean_dn: f64 = dnorm.iter().zip(norm).map(|(d, y)| d * y).sum::<f64>() / n;
    dnorm
        .iter()
        .zip(norm)
        .map(|(d, y)| rstd * (d - mean_d - y * mean_dn))
        .collect()
}

struct BlockCache {
    mods: Vec<f64>,
    ln1_norm: Vec<Vec<f64>>,
    ln1_rstd: Vec<f64>,
    m1: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// Attention weights, flattened as [head][query][key].
    probs: Vec<f64>,
    ctx: Vec<Vec<f64>>,
    ln2_norm: Vec<Vec<f64>>,
    ln2_rstd: Vec<f64>,
    m2: Vec<Vec<f64>>,
    ff_pre: Vec<Vec<f64>>,
    ff_mid: Vec<Vec<f64>>,
}

/// Two-layer perceptron from one patch to (pre-activation, activation,
/// token before the positional term).
fn embed_patch(
    patch: &[f64],
    gl: &crate::denoiser::params::GroupLayout,
    values: &[f64],
    d: usize,
    patch_len: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let pre = affine(
        &values[gl.emb_w1.clone()],
        &values[gl.emb_b1.clone()],
        patch,
        d,
        patch_len,
    );
    let mid: Vec<f64> = pre.iter().map(|&z| silu(z)).collect();
    let token = affine(&values[gl.emb_w2.clone()], &values[gl.emb_b2.clone()], &mid, d, d);
    (pre, mid, token)
}

/// Converts a slice patch set into its H+W input tokens: each patch through
/// its orientation's two-layer perceptron plus the learned positional term
/// for its (orientation, index) slot.
pub fn patches_to_tokens(ps: &PatchSet, params: &DenoiserParams) -> Result<Vec<Vec<f64>>> {
    let cfg = params.config();
    let layout = params.layout();
    let values = params.values();
    if cfg.patchify != crate::denoiser::Patchify::Slice {
        return Err(Error::ShapeMismatch(
            "patches_to_tokens expects a slice-patchified model".into(),
        ));
    }
    if ps.horizontal.len() != cfg.h || ps.vertical.len() != cfg.w {
        return Err(Error::ShapeMismatch(format!(
            "patch set has {}+{} patches, model expects {}+{}",
            ps.horizontal.len(),
            ps.vertical.len(),
            cfg.h,
            cfg.w
        )));
    }
    let d = cfg.d_model;
    let mut tokens = Vec::with_capacity(cfg.h + cfg.w);
    for (patches, gl) in [&ps.horizontal, &ps.vertical].iter().zip(&layout.groups) {
        for patch in patches.iter() {
            if patch.len() != gl.spec.patch_len {
                return Err(Error::ShapeMismatch(format!(
                    "patch has {} entries, expected {}",
                    patch.len(),
                    gl.spec.patch_len
                )));
            }
            let (_, _, token) = embed_patch(patch, gl, values, d, gl.spec.patch_len);
            tokens.push(token);
        }
    }
    let pos = &values[layout.pos.clone()];
    for (t, token) in tokens.iter_mut().enumerate() {
        for (i, xi) in token.iter_mut().enumerate() {
            *xi += pos[t * d + i];
        }
    }
    Ok(tokens)
}

/// Every intermediate of one forward pass, consumed by [`backward`].
pub struct ForwardCache {
    patches: Vec<Vec<Vec<f64>>>,
    emb_pre: Vec<Vec<Vec<f64>>>,
    emb_mid: Vec<Vec<Vec<f64>>>,
    cond_pre: Vec<f64>,
    cond_act: Vec<f64>,
    blocks: Vec<BlockCache>,
    x_final: Vec<Vec<f64>>,
    dec: Vec<Vec<Vec<f64>>>,
    coverage: Vec<f64>,
    output: HoiImage,
}

impl ForwardCache {
    pub fn output(&self) -> &HoiImage {
        &self.output
    }

    pub fn into_output(self) -> HoiImage {
        self.output
    }
}

/// Runs the denoiser and keeps all activations for a later [`backward`].
pub fn forward_cached(
    img: &HoiImage,
    cond: &Conditioning,
    params: &DenoiserParams,
) -> Result<ForwardCache> {
    let cfg = *params.config();
    let layout = params.layout();
    let values = params.values();
    let shape = img.shape();
    if shape != cfg.shape() {
        return Err(Error::ShapeMismatch(format!(
            "model expects {}x{}, image is {}x{}",
            cfg.h, cfg.w, shape.h, shape.w
        )));
    }
    if cond.appearance.len() != cfg.d_appearance || cond.step_embedding.len() != cfg.d_step {
        return Err(Error::ShapeMismatch(format!(
            "conditioning widths ({}, {}) do not match model ({}, {})",
            cond.appearance.len(),
            cond.step_embedding.len(),
            cfg.d_appearance,
            cfg.d_step
        )));
    }
    if img.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("denoiser input image".into()));
    }
    let d = cfg.d_model;

    // Patch embedding.
    let groups = token_groups(&cfg);
    let mut patches = Vec::with_capacity(groups.len());
    let mut emb_pre = Vec::with_capacity(groups.len());
    let mut emb_mid = Vec::with_capacity(groups.len());
    let mut x: Vec<Vec<f64>> = Vec::new();
    for (g, gl) in groups.iter().zip(&layout.groups) {
        let gp = extract_group(img, g);
        let mut pres = Vec::with_capacity(g.tokens);
        let mut mids = Vec::with_capacity(g.tokens);
        for patch in &gp {
            let (pre, mid, token) = embed_patch(patch, gl, values, d, g.patch_len);
            x.push(token);
            pres.push(pre);
            mids.push(mid);
        }
        patches.push(gp);
        emb_pre.push(pres);
        emb_mid.push(mids);
    }
    let pos = &values[layout.pos.clone()];
    for (t, token) in x.iter_mut().enumerate() {
        for (i, xi) in token.iter_mut().enumerate() {
            *xi += pos[t * d + i];
        }
    }
    let s_tokens = x.len();

    // Conditioning vector: projected appearance + projected step embedding.
    let mut cond_pre = affine(
        &values[layout.cond_a_w.clone()],
        &values[layout.cond_a_b.clone()],
        &cond.appearance,
        d,
        cfg.d_appearance,
    );
    let from_step = affine(
        &values[layout.cond_s_w.clone()],
        &values[layout.cond_s_b.clone()],
        &cond.step_embedding,
        d,
        cfg.d_step,
    );
    for (c, s) in cond_pre.iter_mut().zip(&from_step) {
        *c += s;
    }
    let cond_act: Vec<f64> = cond_pre.iter().map(|&z| silu(z)).collect();

    // Transformer blocks.
    let nh = cfg.heads;
    let dh = cfg.d_head();
    let scale = 1.0 / (dh as f64).sqrt();
    let dff = cfg.d_ff();
    let mut blocks = Vec::with_capacity(layout.blocks.len());
    for bl in &layout.blocks {
        let mods = affine(
            &values[bl.mod_w.clone()],
            &values[bl.mod_b.clone()],
            &cond_act,
            4 * d,
            d,
        );
        let (shift1, rest) = mods.split_at(d);
        let (scale1, rest) = rest.split_at(d);
        let (shift2, scale2) = rest.split_at(d);

        let mut ln1_norm = Vec::with_capacity(s_tokens);
        let mut ln1_rstd = Vec::with_capacity(s_tokens);
        let mut m1 = Vec::with_capacity(s_tokens);
        for token in &x {
            let ln = layer_norm(token);
            let modulated: Vec<f64> = ln
                .norm
                .iter()
                .enumerate()
                .map(|(i, &n)| n * (1.0 + scale1[i]) + shift1[i])
                .collect();
            ln1_norm.push(ln.norm);
            ln1_rstd.push(ln.rstd);
            m1.push(modulated);
        }

        let q: Vec<Vec<f64>> = m1
            .iter()
            .map(|t| affine(&values[bl.wq.clone()], &values[bl.bq.clone()], t, d, d))
            .collect();
        let k: Vec<Vec<f64>> = m1
            .iter()
            .map(|t| affine(&values[bl.wk.clone()], &values[bl.bk.clone()], t, d, d))
            .collect();
        let v: Vec<Vec<f64>> = m1
            .iter()
            .map(|t| affine(&values[bl.wv.clone()], &values[bl.bv.clone()], t, d, d))
            .collect();

        let mut probs = vec![0.0; nh * s_tokens * s_tokens];
        let mut ctx = vec![vec![0.0; d]; s_tokens];
        let mut scores = vec![0.0; s_tokens];
        for hh in 0..nh {
            let off = hh * dh;
            for i in 0..s_tokens {
                let mut max = f64::NEG_INFINITY;
                for (j, sj) in scores.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for u in 0..dh {
                        acc += q[i][off + u] * k[j][off + u];
                    }
                    *sj = acc * scale;
                    max = max.max(*sj);
                }
                let mut z = 0.0;
                for sj in scores.iter_mut() {
                    *sj = (*sj - max).exp();
                    z += *sj;
                }
                let row = &mut probs[(hh * s_tokens + i) * s_tokens..(hh * s_tokens + i + 1) * s_tokens];
                for (p, sj) in row.iter_mut().zip(&scores) {
                    *p = sj / z;
                }
                for u in 0..dh {
                    let mut acc = 0.0;
                    for (j, p) in row.iter().enumerate() {
                        acc += p * v[j][off + u];
                    }
                    ctx[i][off + u] = acc;
                }
            }
        }

        let mut x_mid = Vec::with_capacity(s_tokens);
        for (token, c) in x.iter().zip(&ctx) {
            let attn_out = affine(&values[bl.wo.clone()], &values[bl.bo.clone()], c, d, d);
            x_mid.push(token.iter().zip(&attn_out).map(|(a, b)| a + b).collect::<Vec<f64>>());
        }

        let mut ln2_norm = Vec::with_capacity(s_tokens);
        let mut ln2_rstd = Vec::with_capacity(s_tokens);
        let mut m2 = Vec::with_capacity(s_tokens);
        let mut ff_pre = Vec::with_capacity(s_tokens);
        let mut ff_mid = Vec::with_capacity(s_tokens);
        let mut x_out = Vec::with_capacity(s_tokens);
        for token in &x_mid {
            let ln = layer_norm(token);
            let modulated: Vec<f64> = ln
                .norm
                .iter()
                .enumerate()
                .map(|(i, &n)| n * (1.0 + scale2[i]) + shift2[i])
                .collect();
            let pre = affine(&values[bl.ff_w1.clone()], &values[bl.ff_b1.clone()], &modulated, dff, d);
            let mid: Vec<f64> = pre.iter().map(|&z| silu(z)).collect();
            let out = affine(&values[bl.ff_w2.clone()], &values[bl.ff_b2.clone()], &mid, d, dff);
            x_out.push(token.iter().zip(&out).map(|(a, b)| a + b).collect::<Vec<f64>>());
            ln2_norm.push(ln.norm);
            ln2_rstd.push(ln.rstd);
            m2.push(modulated);
            ff_pre.push(pre);
            ff_mid.push(mid);
        }

        blocks.push(BlockCache {
            mods,
            ln1_norm,
            ln1_rstd,
            m1,
            q,
            k,
            v,
            probs,
            ctx,
            ln2_norm,
            ln2_rstd,
            m2,
            ff_pre,
            ff_mid,
        });
        x = x_out;
    }

    // Decode tokens back to slices and average overlapping coverage.
    let mut raw = vec![0.0; shape.len()];
    let mut coverage = vec![0.0; shape.len()];
    let mut dec = Vec::with_capacity(groups.len());
    let mut base = 0usize;
    for (g, gl) in groups.iter().zip(&layout.groups) {
        let mut gdec = Vec::with_capacity(g.tokens);
        for t in 0..g.tokens {
            let out = affine(
                &values[gl.head_w.clone()],
                &values[gl.head_b.clone()],
                &x[base + t],
                g.patch_len,
                d,
            );
            for (j, &o) in out.iter().enumerate() {
                let p = pixel_of(shape, g, t, j);
                raw[p] += o;
                coverage[p] += 1.0;
            }
            gdec.push(out);
        }
        dec.push(gdec);
        base += g.tokens;
    }
    for (r, &c) in raw.iter_mut().zip(&coverage) {
        debug_assert!(c > 0.0);
        *r /= c;
    }

    let output = project_to_valid(shape, &raw)
        .map_err(|_| Error::NonFiniteActivation("output projection".into()))?;

    Ok(ForwardCache {
        patches,
        emb_pre,
        emb_mid,
        cond_pre,
        cond_act,
        blocks,
        x_final: x,
        dec,
        coverage,
        output,
    })
}

/// Predicts the clean image for a noisy input (forward pass only).
pub fn denoise(img: &HoiImage, cond: &Conditioning, params: &DenoiserParams) -> Result<HoiImage> {
    Ok(forward_cached(img, cond, params)?.into_output())
}

/// Accumulates d(loss)/d(parameter) into the gradient buffers of `params`
/// for the pass recorded in `cache`, given the loss gradient at the output
/// image.
pub fn backward(
    loss_grad_at_output: &[f64],
    cache: &ForwardCache,
    cond: &Conditioning,
    params: &mut DenoiserParams,
) -> Result<()> {
    let (cfg, layout, values, grads_out) = params.split_mut();
    let cfg = *cfg;
    let shape = cfg.shape();
    if loss_grad_at_output.len() != shape.len() {
        return Err(Error::ShapeMismatch(format!(
            "loss gradient has {} entries, expected {}",
            loss_grad_at_output.len(),
            shape.len()
        )));
    }
    // Accumulate this pass into a local buffer and fold it into the shared
    // accumulators once at the end, so each parameter receives exactly one
    // addend per pass.
    let mut grads_buf = vec![0.0f64; grads_out.len()];
    let grads = &mut grads_buf[..];
    let d = cfg.d_model;
    let groups = token_groups(&cfg);
    let s_tokens: usize = groups.iter().map(|g| g.tokens).sum();

    // Through the per-slice softmax projection: for each vertical slice with
    // probabilities o and upstream gradient g, d(raw) = o ⊙ (g − Σ o·g).
    let out = cache.output.data();
    let mut draw = vec![0.0; shape.len()];
    for w in 0..shape.w {
        let mut dot = 0.0;
        for h in 0..shape.h {
            for c in 0..2 {
                let i = (h * shape.w + w) * 2 + c;
                dot += out[i] * loss_grad_at_output[i];
            }
        }
        for h in 0..shape.h {
            for c in 0..2 {
                let i = (h * shape.w + w) * 2 + c;
                draw[i] = out[i] * (loss_grad_at_output[i] - dot);
            }
        }
    }

    // Through the averaging de-patchify into per-token decodings, then the
    // output heads.
    let mut dx: Vec<Vec<f64>> = vec![vec![0.0; d]; s_tokens];
    let mut base = 0usize;
    for ((g, gl), gdec) in groups.iter().zip(&layout.groups).zip(&cache.dec) {
        let _ = gdec;
        for t in 0..g.tokens {
            let mut ddec = vec![0.0; g.patch_len];
            for (j, dd) in ddec.iter_mut().enumerate() {
                let p = pixel_of(shape, g, t, j);
                *dd = draw[p] / cache.coverage[p];
            }
            let (dw, db) = wb_grads(grads, &gl.head_w, &gl.head_b);
            affine_backward(
                &values[gl.head_w.clone()],
                &cache.x_final[base + t],
                &ddec,
                g.patch_len,
                d,
                dw,
                db,
                Some(&mut dx[base + t]),
            );
        }
        base += g.tokens;
    }

    // Through the blocks, last to first.
    let nh = cfg.heads;
    let dh = cfg.d_head();
    let att_scale = 1.0 / (dh as f64).sqrt();
    let dff = cfg.d_ff();
    let mut dcond_act = vec![0.0; d];
    for (bc, bl) in cache.blocks.iter().zip(&layout.blocks).rev() {
        let mods = &bc.mods;
        let (_, rest) = mods.split_at(d);
        let (scale1, rest) = rest.split_at(d);
        let (_, scale2) = rest.split_at(d);
        let mut dmods = vec![0.0; 4 * d];

        // Feed-forward sublayer: x_out = x_mid + FF2·silu(FF1·m2 + b1) + b2.
        let mut dx_mid: Vec<Vec<f64>> = Vec::with_capacity(s_tokens);
        for t in 0..s_tokens {
            let dcur = &dx[t];
            let mut dff_mid = vec![0.0; dff];
            let (dw, db) = wb_grads(grads, &bl.ff_w2, &bl.ff_b2);
            affine_backward(
                &values[bl.ff_w2.clone()],
                &bc.ff_mid[t],
                dcur,
                d,
                dff,
                dw,
                db,
                Some(&mut dff_mid),
            );
            let dff_pre: Vec<f64> = dff_mid
                .iter()
                .zip(&bc.ff_pre[t])
                .map(|(g, &z)| g * silu_prime(z))
                .collect();
            let mut dm2 = vec![0.0; d];
            let (dw, db) = wb_grads(grads, &bl.ff_w1, &bl.ff_b1);
            affine_backward(
                &values[bl.ff_w1.clone()],
                &bc.m2[t],
                &dff_pre,
                dff,
                d,
                dw,
                db,
                Some(&mut dm2),
            );
            // Modulation m2 = n2 (1+scale2) + shift2.
            let mut dn2 = vec![0.0; d];
            for i in 0..d {
                dn2[i] = dm2[i] * (1.0 + scale2[i]);
                dmods[2 * d + i] += dm2[i]; // shift2
                dmods[3 * d + i] += dm2[i] * bc.ln2_norm[t][i]; // scale2
            }
            let dln2 = layer_norm_backward(&dn2, &bc.ln2_norm[t], bc.ln2_rstd[t]);
            // Residual: x_out = x_mid + ff_out.
            dx_mid.push(dcur.iter().zip(&dln2).map(|(a, b)| a + b).collect());
        }

        // Attention sublayer: x_mid = x_in + Wo·ctx + bo.
        let mut dctx: Vec<Vec<f64>> = vec![vec![0.0; d]; s_tokens];
        for t in 0..s_tokens {
            let (dw, db) = wb_grads(grads, &bl.wo, &bl.bo);
            affine_backward(
                &values[bl.wo.clone()],
                &bc.ctx[t],
                &dx_mid[t],
                d,
                d,
                dw,
                db,
                Some(&mut dctx[t]),
            );
        }
        let mut dq = vec![vec![0.0; d]; s_tokens];
        let mut dk = vec![vec![0.0; d]; s_tokens];
        let mut dv = vec![vec![0.0; d]; s_tokens];
        let mut dprobs_row = vec![0.0; s_tokens];
        for hh in 0..nh {
            let off = hh * dh;
            for i in 0..s_tokens {
                let row = &bc.probs[(hh * s_tokens + i) * s_tokens..(hh * s_tokens + i + 1) * s_tokens];
                let mut dot = 0.0;
                for (j, dp) in dprobs_row.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for u in 0..dh {
                        acc += dctx[i][off + u] * bc.v[j][off + u];
                    }
                    *dp = acc;
                    dot += row[j] * acc;
                    for u in 0..dh {
                        dv[j][off + u] += row[j] * dctx[i][off + u];
                    }
                }
                for j in 0..s_tokens {
                    let dscore = row[j] * (dprobs_row[j] - dot);
                    for u in 0..dh {
                        dq[i][off + u] += dscore * bc.k[j][off + u] * att_scale;
                        dk[j][off + u] += dscore * bc.q[i][off + u] * att_scale;
                    }
                }
            }
        }
        let mut dm1 = vec![vec![0.0; d]; s_tokens];
        for t in 0..s_tokens {
            let (dw, db) = wb_grads(grads, &bl.wq, &bl.bq);
            affine_backward(&values[bl.wq.clone()], &bc.m1[t], &dq[t], d, d, dw, db, Some(&mut dm1[t]));
            let (dw, db) = wb_grads(grads, &bl.wk, &bl.bk);
            affine_backward(&values[bl.wk.clone()], &bc.m1[t], &dk[t], d, d, dw, db, Some(&mut dm1[t]));
            let (dw, db) = wb_grads(grads, &bl.wv, &bl.bv);
            affine_backward(&values[bl.wv.clone()], &bc.m1[t], &dv[t], d, d, dw, db, Some(&mut dm1[t]));
        }
        // Modulation m1 = n1 (1+scale1) + shift1, then the first residual.
        for t in 0..s_tokens {
            let mut dn1 = vec![0.0; d];
            for i in 0..d {
                dn1[i] = dm1[t][i] * (1.0 + scale1[i]);
                dmods[i] += dm1[t][i]; // shift1
                dmods[d + i] += dm1[t][i] * bc.ln1_norm[t][i]; // scale1
            }
            let dln1 = layer_norm_backward(&dn1, &bc.ln1_norm[t], bc.ln1_rstd[t]);
            for i in 0..d {
                dx[t][i] = dx_mid[t][i] + dln1[i];
            }
        }

        // Modulation projection from the conditioning vector.
        let (dw, db) = wb_grads(grads, &bl.mod_w, &bl.mod_b);
        affine_backward(
            &values[bl.mod_w.clone()],
            &cache.cond_act,
            &dmods,
            4 * d,
            d,
            dw,
            db,
            Some(&mut dcond_act),
        );
    }

    // Conditioning projections.
    let dcond_pre: Vec<f64> = dcond_act
        .iter()
        .zip(&cache.cond_pre)
        .map(|(g, &z)| g * silu_prime(z))
        .collect();
    let (dw, db) = wb_grads(grads, &layout.cond_a_w, &layout.cond_a_b);
    affine_backward(
        &values[layout.cond_a_w.clone()],
        &cond.appearance,
        &dcond_pre,
        d,
        cfg.d_appearance,
        dw,
        db,
        None,
    );
    let (dw, db) = wb_grads(grads, &layout.cond_s_w, &layout.cond_s_b);
    affine_backward(
        &values[layout.cond_s_w.clone()],
        &cond.step_embedding,
        &dcond_pre,
        d,
        cfg.d_step,
        dw,
        db,
        None,
    );

    // Positional embeddings and the patch-to-token perceptrons.
    {
        let pos_grads = &mut grads[layout.pos.clone()];
        for (t, dtoken) in dx.iter().enumerate() {
            for (i, g) in dtoken.iter().enumerate() {
                pos_grads[t * d + i] += g;
            }
        }
    }
    let mut base = 0usize;
    for (gi, (g, gl)) in groups.iter().zip(&layout.groups).enumerate() {
        for t in 0..g.tokens {
            let dtoken = &dx[base + t];
            let mut demb_mid = vec![0.0; d];
            let (dw, db) = wb_grads(grads, &gl.emb_w2, &gl.emb_b2);
            affine_backward(
                &values[gl.emb_w2.clone()],
                &cache.emb_mid[gi][t],
                dtoken,
                d,
                d,
                dw,
                db,
                Some(&mut demb_mid),
            );
            let demb_pre: Vec<f64> = demb_mid
                .iter()
                .zip(&cache.emb_pre[gi][t])
                .map(|(gr, &z)| gr * silu_prime(z))
                .collect();
            let (dw, db) = wb_grads(grads, &gl.emb_w1, &gl.emb_b1);
            affine_backward(
                &values[gl.emb_w1.clone()],
                &cache.patches[gi][t],
                &demb_pre,
                d,
                g.patch_len,
                dw,
                db,
                None,
            );
        }
        base += g.tokens;
    }

    for (g, l) in grads_out.iter_mut().zip(&grads_buf) {
        *g += l;
    }

    Ok(())
}

// Test-support: hand-arranged parameter configurations.
#[cfg(test)]
pub(crate) fn passthrough_params(cfg: ModelConfig) -> DenoiserParams {
    let mut p = DenoiserParams::zeros(cfg).unwrap();
    let d = cfg.d_model;
    let layout = p.layout().clone();
    let values = p.values_mut();
    // Patch embedding acts as the identity on the first patch_len lanes: a
    // large bias keeps the activation in its asymptotically linear region,
    // and the second layer subtracts the bias back out.
    const SHIFT: f64 = 30.0;
    for gl in &layout.groups {
        let patch_len = gl.spec.patch_len;
        assert!(patch_len <= d, "passthrough needs d_model >= patch_len");
        for j in 0..patch_len {
            values[gl.emb_w1.clone()][j * patch_len + j] = 1.0;
        }
        for b in &mut values[gl.emb_b1.clone()] {
            *b = SHIFT;
        }
        for i in 0..d {
            values[gl.emb_w2.clone()][i * d + i] = 1.0;
        }
        for b in &mut values[gl.emb_b2.clone()] {
            *b = -SHIFT;
        }
        for j in 0..patch_len {
            values[gl.head_w.clone()][j * d + j] = 1.0;
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::config::Patchify;
    use crate::denoiser::embedding::Conditioning;
    use crate::image::{compose, InteractionMatrix, ObjectDist, INTERNAL_TOL};
    use crate::rng;
    use rand::Rng as _;

    fn small_cfg(patchify: Patchify) -> ModelConfig {
        ModelConfig {
            h: 4,
            w: 3,
            d_model: 16,
            blocks: 2,
            heads: 2,
            d_appearance: 5,
            d_step: 8,
            patchify,
        }
    }

    fn sample_image(h: usize, w: usize, seed: u64) -> HoiImage {
        let mut r = rng::stream(seed, 0);
        let mut v: Vec<f64> = (0..h).map(|_| r.random::<f64>() + 0.05).collect();
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= s);
        let total: f64 = v.iter().sum();
        let i = crate::image::argmax(&v);
        v[i] += 1.0 - total;
        let rows = (0..w)
            .map(|_| {
                let p = r.random::<f64>();
                [p, 1.0 - p]
            })
            .collect();
        compose(&ObjectDist::new(v).unwrap(), &InteractionMatrix::new(rows).unwrap()).unwrap()
    }

    fn sample_cond(cfg: &ModelConfig, k: usize, seed: u64) -> Conditioning {
        let mut r = rng::stream(seed, 1);
        let fa: Vec<f64> = (0..cfg.d_appearance).map(|_| r.random::<f64>() * 2.0 - 1.0).collect();
        Conditioning::for_step(&fa, k, cfg.d_step)
    }

    #[test]
    fn output_is_a_valid_image_of_the_right_shape() {
        for patchify in [
            Patchify::Slice,
            Patchify::HorizontalOnly,
            Patchify::VerticalOnly,
            Patchify::Local,
        ] {
            let cfg = small_cfg(patchify);
            let params = DenoiserParams::init(cfg, 7).unwrap();
            let img = sample_image(cfg.h, cfg.w, 1);
            let cond = sample_cond(&cfg, 3, 2);
            let out = denoise(&img, &cond, &params).unwrap();
            assert_eq!(out.shape(), img.shape());
            assert!(out.validate(INTERNAL_TOL).passed(), "{patchify:?}");
        }
    }

    #[test]
    fn step_embedding_changes_the_output() {
        let cfg = small_cfg(Patchify::Slice);
        let params = DenoiserParams::init(cfg, 11).unwrap();
        let img = sample_image(cfg.h, cfg.w, 3);
        let fa: Vec<f64> = vec![0.2; cfg.d_appearance];
        let out_a = denoise(&img, &Conditioning::for_step(&fa, 3, cfg.d_step), &params).unwrap();
        let out_b = denoise(&img, &Conditioning::for_step(&fa, 4, cfg.d_step), &params).unwrap();
        let max_diff = out_a
            .data()
            .iter()
            .zip(out_b.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff > 1e-12, "conditioning is degenerate: {max_diff}");
    }

    #[test]
    fn appearance_changes_the_output() {
        let cfg = small_cfg(Patchify::Slice);
        let params = DenoiserParams::init(cfg, 13).unwrap();
        let img = sample_image(cfg.h, cfg.w, 4);
        let out_a = denoise(&img, &Conditioning::for_step(&[0.1; 5], 2, cfg.d_step), &params).unwrap();
        let out_b = denoise(&img, &Conditioning::for_step(&[0.9; 5], 2, cfg.d_step), &params).unwrap();
        assert_ne!(out_a.data(), out_b.data());
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = small_cfg(Patchify::Slice);
        let params = DenoiserParams::init(cfg, 17).unwrap();
        let img = sample_image(cfg.h, cfg.w, 5);
        let cond = sample_cond(&cfg, 7, 6);
        let a = denoise(&img, &cond, &params).unwrap();
        let b = denoise(&img, &cond, &params).unwrap();
        assert_eq!(
            a.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn passthrough_configuration_reproduces_projected_input() {
        for patchify in [Patchify::Slice, Patchify::HorizontalOnly, Patchify::Local] {
            let cfg = small_cfg(patchify);
            let params = passthrough_params(cfg);
            let img = sample_image(cfg.h, cfg.w, 8);
            let cond = sample_cond(&cfg, 1, 9);
            let out = denoise(&img, &cond, &params).unwrap();
            let expected = project_to_valid(img.shape(), img.data()).unwrap();
            let max_diff = out
                .data()
                .iter()
                .zip(expected.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(max_diff < 1e-9, "{patchify:?}: max diff {max_diff}");
        }
    }

    #[test]
    fn zero_loss_gradient_gives_zero_parameter_gradients() {
        let cfg = small_cfg(Patchify::Slice);
        let mut params = DenoiserParams::init(cfg, 19).unwrap();
        let img = sample_image(cfg.h, cfg.w, 10);
        let cond = sample_cond(&cfg, 2, 11);
        let cache = forward_cached(&img, &cond, &params).unwrap();
        let zeros = vec![0.0; img.shape().len()];
        backward(&zeros, &cache, &cond, &mut params).unwrap();
        assert!(params.grads().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn repeated_backward_accumulates_exactly_twice() {
        let cfg = small_cfg(Patchify::Slice);
        let mut params = DenoiserParams::init(cfg, 23).unwrap();
        let img = sample_image(cfg.h, cfg.w, 12);
        let cond = sample_cond(&cfg, 5, 13);
        let cache = forward_cached(&img, &cond, &params).unwrap();
        let mut r = rng::stream(14, 0);
        let dout: Vec<f64> = (0..img.shape().len()).map(|_| r.random::<f64>() - 0.5).collect();
        backward(&dout, &cache, &cond, &mut params).unwrap();
        let once = params.grads().to_vec();
        backward(&dout, &cache, &cond, &mut params).unwrap();
        for (g2, g1) in params.grads().iter().zip(&once) {
            assert_eq!(g2.to_bits(), (2.0 * g1).to_bits());
        }
    }

    // -- primitive gradients, finite-difference checked --------------------

    fn fd_check(f: &dyn Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64], tol: f64) {
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.to_vec();
            xp[i] += h;
            let mut xm = x.to_vec();
            xm[i] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            let denom = analytic[i].abs().max(fd.abs()).max(1e-8);
            assert!(
                ((analytic[i] - fd) / denom).abs() < tol,
                "index {i}: analytic {} vs fd {fd}",
                analytic[i]
            );
        }
    }

    #[test]
    fn silu_gradient_matches_finite_differences() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 4.0] {
            let f = |v: &[f64]| silu(v[0]);
            fd_check(&f, &[x], &[silu_prime(x)], 1e-6);
        }
    }

    #[test]
    fn layer_norm_gradient_matches_finite_differences() {
        let mut r = rng::stream(15, 0);
        let x: Vec<f64> = (0..6).map(|_| r.random::<f64>() * 2.0 - 1.0).collect();
        let c: Vec<f64> = (0..6).map(|_| r.random::<f64>() - 0.5).collect();
        let f = |v: &[f64]| -> f64 {
            let ln = layer_norm(v);
            ln.norm.iter().zip(&c).map(|(n, ci)| n * ci).sum()
        };
        let ln = layer_norm(&x);
        let analytic = layer_norm_backward(&c, &ln.norm, ln.rstd);
        fd_check(&f, &x, &analytic, 1e-5);
    }

    #[test]
    fn affine_gradient_matches_finite_differences() {
        let mut r = rng::stream(16, 0);
        let (rows, cols) = (3, 4);
        let w: Vec<f64> = (0..rows * cols).map(|_| r.random::<f64>() - 0.5).collect();
        let b: Vec<f64> = (0..rows).map(|_| r.random::<f64>() - 0.5).collect();
        let x: Vec<f64> = (0..cols).map(|_| r.random::<f64>() - 0.5).collect();
        let c: Vec<f64> = (0..rows).map(|_| r.random::<f64>() - 0.5).collect();

        // d/dx of c·(Wx + b)
        let f = |v: &[f64]| -> f64 {
            affine(&w, &b, v, rows, cols).iter().zip(&c).map(|(y, ci)| y * ci).sum()
        };
        let mut dw = vec![0.0; rows * cols];
        let mut db = vec![0.0; rows];
        let mut dx = vec![0.0; cols];
        affine_backward(&w, &x, &c, rows, cols, &mut dw, &mut db, Some(&mut dx));
        fd_check(&f, &x, &dx, 1e-6);

        // d/dW of the same loss
        let fw = |v: &[f64]| -> f64 {
            affine(v, &b, &x, rows, cols).iter().zip(&c).map(|(y, ci)| y * ci).sum()
        };
        fd_check(&fw, &w, &dw, 1e-6);
    }

    #[test]
    fn non_finite_parameters_surface_as_activation_errors() {
        // The softmax projection bounds outputs, so the only way a pass can
        // go non-finite is through the parameters themselves.
        let cfg = small_cfg(Patchify::Slice);
        let mut params = DenoiserParams::init(cfg, 77).unwrap();
        params.values_mut()[3] = f64::INFINITY;
        let img = sample_image(cfg.h, cfg.w, 24);
        let cond = sample_cond(&cfg, 2, 25);
        assert!(matches!(
            denoise(&img, &cond, &params),
            Err(Error::NonFiniteActivation(_))
        ));
    }

    #[test]
    fn tokens_with_zero_weights_equal_the_bias() {
        let cfg = small_cfg(Patchify::Slice);
        let mut params = DenoiserParams::zeros(cfg).unwrap();
        let layout = params.layout().clone();
        for gl in &layout.groups {
            for (i, b) in params.values_mut()[gl.emb_b2.clone()].iter_mut().enumerate() {
                *b = 0.25 * (i as f64 + 1.0);
            }
        }
        let img = sample_image(cfg.h, cfg.w, 20);
        let ps = crate::denoiser::slice_patchify(&img);
        let tokens = patches_to_tokens(&ps, &params).unwrap();
        assert_eq!(tokens.len(), cfg.h + cfg.w);
        for token in &tokens {
            for (i, &x) in token.iter().enumerate() {
                assert_eq!(x, 0.25 * (i as f64 + 1.0));
            }
        }
    }

    #[test]
    fn token_count_is_h_plus_w() {
        let cfg = small_cfg(Patchify::Slice);
        let params = DenoiserParams::init(cfg, 33).unwrap();
        let img = sample_image(cfg.h, cfg.w, 21);
        let tokens = patches_to_tokens(&crate::denoiser::slice_patchify(&img), &params).unwrap();
        assert_eq!(tokens.len(), 7);
        assert!(tokens.iter().all(|t| t.len() == cfg.d_model));
    }

    #[test]
    fn permuting_patches_and_positions_permutes_tokens() {
        let cfg = small_cfg(Patchify::Slice);
        let params = DenoiserParams::init(cfg, 34).unwrap();
        let img = sample_image(cfg.h, cfg.w, 22);
        let ps = crate::denoiser::slice_patchify(&img);
        let base = patches_to_tokens(&ps, &params).unwrap();

        // Rotate the vertical patches and the matching positional rows.
        let d = cfg.d_model;
        let perm: Vec<usize> = (0..cfg.w).map(|i| (i + 1) % cfg.w).collect();
        let mut ps2 = ps.clone();
        for (i, &src) in perm.iter().enumerate() {
            ps2.vertical[i] = ps.vertical[src].clone();
        }
        let mut params2 = params.clone();
        let pos_range = params.layout().pos.clone();
        for (i, &src) in perm.iter().enumerate() {
            let dst_row = (cfg.h + i) * d;
            let src_row = (cfg.h + src) * d;
            for j in 0..d {
                params2.values_mut()[pos_range.start + dst_row + j] =
                    params.values()[pos_range.start + src_row + j];
            }
        }
        let permuted = patches_to_tokens(&ps2, &params2).unwrap();
        for i in 0..cfg.h {
            assert_eq!(base[i], permuted[i], "horizontal token {i} moved");
        }
        for (i, &src) in perm.iter().enumerate() {
            assert_eq!(permuted[cfg.h + i], base[cfg.h + src], "vertical token {i}");
        }
    }

    #[test]
    fn patches_to_tokens_rejects_mismatched_models() {
        let cfg = small_cfg(Patchify::Local);
        let params = DenoiserParams::init(cfg, 35).unwrap();
        let img = sample_image(cfg.h, cfg.w, 23);
        assert!(patches_to_tokens(&crate::denoiser::slice_patchify(&img), &params).is_err());
    }

    // -- whole-model finite differences ------------------------------------

    use crate::denoiser::gradcheck::finite_difference_check;

    #[test]
    fn whole_model_gradients_match_finite_differences() {
        let worst = finite_difference_check(small_cfg(Patchify::Slice), 200, 29).unwrap();
        assert!(worst < 1e-4, "max rel err {worst}");
    }

    #[test]
    fn local_patchify_gradients_match_finite_differences() {
        let worst = finite_difference_check(small_cfg(Patchify::Local), 100, 31).unwrap();
        assert!(worst < 1e-4, "max rel err {worst}");
    }

    #[test]
    fn vertical_only_gradients_match_finite_differences() {
        let worst = finite_difference_check(small_cfg(Patchify::VerticalOnly), 100, 37).unwrap();
        assert!(worst < 1e-4, "max rel err {worst}");
    }
}

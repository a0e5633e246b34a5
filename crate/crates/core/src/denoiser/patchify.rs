//! Slice patchification and its ablation variants.

use super::config::{ModelConfig, Patchify};
use crate::image::{HoiImage, HoiShape};

/// Patch orientation; determines which slice a token sees and decodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Horizontal,
    Vertical,
    Pixel,
}

/// One family of equally-shaped patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupSpec {
    pub orientation: Orientation,
    pub tokens: usize,
    pub patch_len: usize,
}

/// The full slice patchification of an image: H horizontal patches of shape
/// W×2 and W vertical patches of shape H×2, flattened with the channel index
/// innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub horizontal: Vec<Vec<f64>>,
    pub vertical: Vec<Vec<f64>>,
}

impl PatchSet {
    pub fn count(&self) -> usize {
        self.horizontal.len() + self.vertical.len()
    }
}

/// Splits an image into its H+W slice patches.
pub fn slice_patchify(img: &HoiImage) -> PatchSet {
    let shape = img.shape();
    PatchSet {
        horizontal: (0..shape.h).map(|h| horizontal_patch(img, h)).collect(),
        vertical: (0..shape.w).map(|w| vertical_patch(img, w)).collect(),
    }
}

fn horizontal_patch(img: &HoiImage, h: usize) -> Vec<f64> {
    let shape = img.shape();
    let mut out = Vec::with_capacity(2 * shape.w);
    for w in 0..shape.w {
        out.push(img.at(h, w, 0));
        out.push(img.at(h, w, 1));
    }
    out
}

fn vertical_patch(img: &HoiImage, w: usize) -> Vec<f64> {
    let shape = img.shape();
    let mut out = Vec::with_capacity(2 * shape.h);
    for h in 0..shape.h {
        out.push(img.at(h, w, 0));
        out.push(img.at(h, w, 1));
    }
    out
}

fn pixel_patch(img: &HoiImage, h: usize, w: usize) -> Vec<f64> {
    vec![img.at(h, w, 0), img.at(h, w, 1)]
}

/// Token groups for a model configuration.
pub fn token_groups(cfg: &ModelConfig) -> Vec<GroupSpec> {
    let (h, w) = (cfg.h, cfg.w);
    match cfg.patchify {
        Patchify::Slice => vec![
            GroupSpec { orientation: Orientation::Horizontal, tokens: h, patch_len: 2 * w },
            GroupSpec { orientation: Orientation::Vertical, tokens: w, patch_len: 2 * h },
        ],
        Patchify::HorizontalOnly => vec![GroupSpec {
            orientation: Orientation::Horizontal,
            tokens: h,
            patch_len: 2 * w,
        }],
        Patchify::VerticalOnly => vec![GroupSpec {
            orientation: Orientation::Vertical,
            tokens: w,
            patch_len: 2 * h,
        }],
        Patchify::Local => vec![GroupSpec {
            orientation: Orientation::Pixel,
            tokens: h * w,
            patch_len: 2,
        }],
    }
}

pub fn total_tokens(cfg: &ModelConfig) -> usize {
    token_groups(cfg).iter().map(|g| g.tokens).sum()
}

/// Extracts the patches of one group in token order.
pub fn extract_group(img: &HoiImage, group: &GroupSpec) -> Vec<Vec<f64>> {
    let shape = img.shape();
    match group.orientation {
        Orientation::Horizontal => (0..shape.h).map(|h| horizontal_patch(img, h)).collect(),
        Orientation::Vertical => (0..shape.w).map(|w| vertical_patch(img, w)).collect(),
        Orientation::Pixel => {
            let mut out = Vec::with_capacity(shape.h * shape.w);
            for h in 0..shape.h {
                for w in 0..shape.w {
                    out.push(pixel_patch(img, h, w));
                }
            }
            out
        }
    }
}

/// Image index covered by position `j` of token `t` in a group.
pub fn pixel_of(shape: HoiShape, group: &GroupSpec, token: usize, j: usize) -> usize {
    match group.orientation {
        Orientation::Horizontal => (token * shape.w + j / 2) * 2 + j % 2,
        Orientation::Vertical => ((j / 2) * shape.w + token) * 2 + j % 2,
        Orientation::Pixel => token * 2 + j,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{compose, InteractionMatrix, ObjectDist};
    use crate::rng;
    use rand::Rng as _;

    fn sample_image(h: usize, w: usize, seed: u64) -> HoiImage {
        let mut r = rng::stream(seed, 0);
        let mut v: Vec<f64> = (0..h).map(|_| r.random::<f64>() + 0.01).collect();
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
        compose(
            &ObjectDist::new(v).unwrap(),
            &InteractionMatrix::new(rows).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn patch_counts_and_shapes() {
        let img = sample_image(5, 6, 1);
        let ps = slice_patchify(&img);
        assert_eq!(ps.count(), 11);
        assert_eq!(ps.horizontal.len(), 5);
        assert_eq!(ps.vertical.len(), 6);
        assert!(ps.horizontal.iter().all(|p| p.len() == 12));
        assert!(ps.vertical.iter().all(|p| p.len() == 10));
    }

    #[test]
    fn degenerate_shape_has_two_matching_patches() {
        let img = sample_image(1, 1, 2);
        let ps = slice_patchify(&img);
        assert_eq!(ps.count(), 2);
        assert_eq!(ps.horizontal[0], ps.vertical[0]);
        assert_eq!(ps.horizontal[0].len(), 2);
    }

    #[test]
    fn every_pixel_covered_once_per_orientation() {
        let img = sample_image(4, 3, 3);
        let shape = img.shape();
        let cfg = ModelConfig { h: 4, w: 3, ..ModelConfig::default() };
        for group in token_groups(&cfg) {
            let mut counts = vec![0u32; shape.len()];
            for t in 0..group.tokens {
                for j in 0..group.patch_len {
                    counts[pixel_of(shape, &group, t, j)] += 1;
                }
            }
            assert!(counts.iter().all(|&c| c == 1), "{:?}", group.orientation);
        }
    }

    #[test]
    fn extraction_agrees_with_pixel_mapping() {
        let img = sample_image(3, 4, 4);
        let shape = img.shape();
        for patchify in [
            Patchify::Slice,
            Patchify::HorizontalOnly,
            Patchify::VerticalOnly,
            Patchify::Local,
        ] {
            let cfg = ModelConfig { h: 3, w: 4, patchify, ..ModelConfig::default() };
            for group in token_groups(&cfg) {
                let patches = extract_group(&img, &group);
                assert_eq!(patches.len(), group.tokens);
                for (t, patch) in patches.iter().enumerate() {
                    assert_eq!(patch.len(), group.patch_len);
                    for (j, &v) in patch.iter().enumerate() {
                        assert_eq!(v, img.data()[pixel_of(shape, &group, t, j)]);
                    }
                }
            }
        }
    }

    #[test]
    fn local_mode_covers_all_pixels() {
        let cfg = ModelConfig { h: 4, w: 3, patchify: Patchify::Local, ..ModelConfig::default() };
        assert_eq!(total_tokens(&cfg), 12);
        let img = sample_image(4, 3, 5);
        let shape = img.shape();
        let group = token_groups(&cfg)[0];
        let mut counts = vec![0u32; shape.len()];
        for t in 0..group.tokens {
            for j in 0..group.patch_len {
                counts[pixel_of(shape, &group, t, j)] += 1;
            }
        }
        assert!(counts.iter().all(|&c| c == 1));
    }
}

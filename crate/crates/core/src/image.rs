//! The HOI image and its factors.
//!
//! An HOI image is an H×W×2 nonnegative array in which every vertical slice
//! (the H×2 sub-array at a fixed interaction index) sums to 1. It is composed
//! from an object-class distribution of length H and a W×2 matrix of
//! per-interaction presence/absence distributions, and decomposes back into
//! them by marginals.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Tolerance applied to externally produced data (files, user input).
pub const EXTERNAL_TOL: f64 = 1e-6;
/// Tolerance applied to internally produced images.
pub const INTERNAL_TOL: f64 = 1e-9;

/// Image dimensions: `h` object categories, `w` interaction categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoiShape {
    pub h: usize,
    pub w: usize,
}

impl HoiShape {
    pub fn new(h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::DimensionMismatch(format!(
                "shape must be at least 1x1, got {h}x{w}"
            )));
        }
        Ok(Self { h, w })
    }

    /// Entries per image.
    pub fn len(&self) -> usize {
        self.h * self.w * 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Entries per vertical slice.
    pub fn slice_len(&self) -> usize {
        2 * self.h
    }
}

/// Discrete distribution over object categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectDist {
    probs: Vec<f64>,
}

impl ObjectDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_simplex(&probs, "object distribution")?;
        Ok(Self { probs })
    }

    pub fn one_hot(h: usize, index: usize) -> Result<Self> {
        if index >= h {
            return Err(Error::InvalidRange(format!(
                "one-hot index {index} out of range for {h} classes"
            )));
        }
        let mut probs = vec![0.0; h];
        probs[index] = 1.0;
        Ok(Self { probs })
    }

    pub fn uniform(h: usize) -> Self {
        Self {
            probs: vec![1.0 / h as f64; h],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

/// W presence/absence distributions, one per interaction category.
/// Row layout is `[presence, absence]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionMatrix {
    rows: Vec<[f64; 2]>,
}

impl InteractionMatrix {
    pub fn new(rows: Vec<[f64; 2]>) -> Result<Self> {
        for (w, row) in rows.iter().enumerate() {
            check_simplex(row, &format!("interaction row {w}"))?;
        }
        Ok(Self { rows })
    }

    /// All rows set to (0.5, 0.5): every interaction equally likely present
    /// or absent. This is the no-prior initialization.
    pub fn undecided(w: usize) -> Self {
        Self {
            rows: vec![[0.5, 0.5]; w],
        }
    }

    /// Rows (1, 0) for interactions in `present`, (0, 1) otherwise.
    pub fn from_present(w: usize, present: &[usize]) -> Result<Self> {
        let mut rows = vec![[0.0, 1.0]; w];
        for &i in present {
            if i >= w {
                return Err(Error::InvalidRange(format!(
                    "interaction index {i} out of range for {w} categories"
                )));
            }
            rows[i] = [1.0, 0.0];
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[[f64; 2]] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// The H×W×2 image. Storage is row-major `(h, w, c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoiImage {
    shape: HoiShape,
    data: Vec<f64>,
}

/// Validity report for an image: worst slice-sum deviation and smallest entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidityReport {
    pub max_slice_deviation: f64,
    pub worst_slice: usize,
    pub min_entry: f64,
    pub min_entry_at: (usize, usize, usize),
    pub tolerance: f64,
}

impl ValidityReport {
    pub fn passed(&self) -> bool {
        self.max_slice_deviation <= self.tolerance && self.min_entry >= -self.tolerance
    }
}

impl HoiImage {
    /// Wraps raw data after checking the image invariants at `tol`.
    pub fn from_data(shape: HoiShape, data: Vec<f64>, tol: f64) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} entries for {}x{}x2, got {}",
                shape.len(),
                shape.h,
                shape.w,
                data.len()
            )));
        }
        let img = Self { shape, data };
        let report = img.validate(tol);
        if !report.passed() {
            return Err(Error::InvalidImage {
                reason: "slice sums or negativity out of tolerance".into(),
                slice: report.worst_slice,
                deviation: report.max_slice_deviation.max(-report.min_entry),
            });
        }
        Ok(img)
    }

    /// Internal constructor for data already known to satisfy the invariants
    /// (convex combinations, softmax outputs).
    pub(crate) fn from_data_unchecked(shape: HoiShape, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), shape.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> HoiShape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn index(&self, h: usize, w: usize, c: usize) -> usize {
        (h * self.shape.w + w) * 2 + c
    }

    #[inline]
    pub fn at(&self, h: usize, w: usize, c: usize) -> f64 {
        self.data[self.index(h, w, c)]
    }

    /// Vertical slice at interaction `w`, flattened as `[h0c0, h0c1, h1c0, ...]`.
    pub fn vertical_slice(&self, w: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.shape.slice_len());
        for h in 0..self.shape.h {
            out.push(self.at(h, w, 0));
            out.push(self.at(h, w, 1));
        }
        out
    }

    /// Writes a flattened vertical slice back at interaction `w`.
    pub fn set_vertical_slice(&mut self, w: usize, slice: &[f64]) {
        assert_eq!(slice.len(), self.shape.slice_len());
        for h in 0..self.shape.h {
            let i0 = self.index(h, w, 0);
            self.data[i0] = slice[2 * h];
            self.data[i0 + 1] = slice[2 * h + 1];
        }
    }

    /// Builds an image from per-interaction vertical slices.
    pub fn from_vertical_slices(shape: HoiShape, slices: &[Vec<f64>]) -> Result<Self> {
        if slices.len() != shape.w {
            return Err(Error::DimensionMismatch(format!(
                "expected {} slices, got {}",
                shape.w,
                slices.len()
            )));
        }
        let mut img = Self::from_data_unchecked(shape, vec![0.0; shape.len()]);
        for (w, s) in slices.iter().enumerate() {
            if s.len() != shape.slice_len() {
                return Err(Error::DimensionMismatch(format!(
                    "slice {w} has {} entries, expected {}",
                    s.len(),
                    shape.slice_len()
                )));
            }
            img.set_vertical_slice(w, s);
        }
        Ok(img)
    }

    /// Total mass in object row `h` (sums over interactions and channels).
    pub fn row_mass(&self, h: usize) -> f64 {
        let mut sum = 0.0;
        for w in 0..self.shape.w {
            sum += self.at(h, w, 0) + self.at(h, w, 1);
        }
        sum
    }

    /// Checks slice sums and nonnegativity; never fails, only reports.
    pub fn validate(&self, tolerance: f64) -> ValidityReport {
        let mut max_dev = 0.0f64;
        let mut worst_slice = 0;
        let mut min_entry = f64::INFINITY;
        let mut min_at = (0, 0, 0);
        for w in 0..self.shape.w {
            let mut sum = 0.0;
            for h in 0..self.shape.h {
                for c in 0..2 {
                    let v = self.at(h, w, c);
                    sum += v;
                    if v < min_entry {
                        min_entry = v;
                        min_at = (h, w, c);
                    }
                }
            }
            let dev = (sum - 1.0).abs();
            if dev > max_dev {
                max_dev = dev;
                worst_slice = w;
            }
        }
        ValidityReport {
            max_slice_deviation: max_dev,
            worst_slice,
            min_entry,
            min_entry_at: min_at,
            tolerance,
        }
    }

    /// Elementwise convex combination `a*self + (1-a)*other`; preserves the
    /// image invariants exactly for `a` in [0, 1].
    pub fn lerp(&self, other: &HoiImage, a: f64) -> HoiImage {
        debug_assert_eq!(self.shape, other.shape);
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&x, &y)| a * x + (1.0 - a) * y)
            .collect();
        HoiImage::from_data_unchecked(self.shape, data)
    }
}

/// Forms the image `out[h,w,c] = v[h] * m[w][c]` (the product of the object
/// distribution and the interaction matrix).
pub fn compose(v: &ObjectDist, m: &InteractionMatrix) -> Result<HoiImage> {
    if v.is_empty() || m.is_empty() {
        return Err(Error::DimensionMismatch(
            "compose requires at least one object and one interaction category".into(),
        ));
    }
    let shape = HoiShape::new(v.len(), m.len())?;
    let mut data = Vec::with_capacity(shape.len());
    for &vh in v.probs() {
        for row in m.rows() {
            data.push(vh * row[0]);
            data.push(vh * row[1]);
        }
    }
    Ok(HoiImage::from_data_unchecked(shape, data))
}

/// Recovers the factors of an image by marginals:
/// `v[h] = (1/W) Σ_{w,c} img[h,w,c]` and `m[w][c] = Σ_h img[h,w,c]`.
///
/// For product-form images this inverts [`compose`] exactly; for general
/// slice-normalized images it is the marginal projection.
pub fn decompose(img: &HoiImage) -> Result<(ObjectDist, InteractionMatrix)> {
    let report = img.validate(EXTERNAL_TOL);
    if !report.passed() {
        return Err(Error::InvalidImage {
            reason: "decompose requires a valid image".into(),
            slice: report.worst_slice,
            deviation: report.max_slice_deviation.max(-report.min_entry),
        });
    }
    let shape = img.shape();
    let w_f = shape.w as f64;
    let mut v = vec![0.0; shape.h];
    let mut rows = vec![[0.0; 2]; shape.w];
    for h in 0..shape.h {
        for w in 0..shape.w {
            for c in 0..2 {
                let x = img.at(h, w, c);
                v[h] += x;
                rows[w][c] += x;
            }
        }
    }
    for vh in &mut v {
        *vh /= w_f;
    }
    Ok((ObjectDist { probs: v }, InteractionMatrix { rows }))
}

/// Projects an arbitrary finite H×W×2 array onto the valid image set by
/// exponential normalization of every vertical slice (softmax over its 2H
/// entries). Inputs are treated as logits.
pub fn project_to_valid(shape: HoiShape, raw: &[f64]) -> Result<HoiImage> {
    if raw.len() != shape.len() {
        return Err(Error::DimensionMismatch(format!(
            "expected {} entries, got {}",
            shape.len(),
            raw.len()
        )));
    }
    if raw.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("project_to_valid".into()));
    }
    let mut data = vec![0.0; raw.len()];
    let idx = |h: usize, w: usize, c: usize| (h * shape.w + w) * 2 + c;
    for w in 0..shape.w {
        let mut max = f64::NEG_INFINITY;
        for h in 0..shape.h {
            for c in 0..2 {
                max = max.max(raw[idx(h, w, c)]);
            }
        }
        let mut sum = 0.0;
        for h in 0..shape.h {
            for c in 0..2 {
                let e = (raw[idx(h, w, c)] - max).exp();
                data[idx(h, w, c)] = e;
                sum += e;
            }
        }
        for h in 0..shape.h {
            for c in 0..2 {
                data[idx(h, w, c)] /= sum;
            }
        }
    }
    Ok(HoiImage::from_data_unchecked(shape, data))
}

/// Largest-entry index with lowest-index tie-breaking.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Checks that `xs` is a probability vector: nonnegative, sums to 1 within 1e-9.
pub fn check_simplex(xs: &[f64], what: &str) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::InvalidSimplex(format!("{what}: empty")));
    }
    let mut sum = 0.0;
    for &x in xs {
        if !x.is_finite() {
            return Err(Error::InvalidSimplex(format!("{what}: non-finite entry")));
        }
        if x < 0.0 {
            return Err(Error::InvalidSimplex(format!("{what}: negative entry {x}")));
        }
        sum += x;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidSimplex(format!(
            "{what}: sum {sum} deviates from 1 by {:.3e}",
            (sum - 1.0).abs()
        )));
    }
    Ok(())
}

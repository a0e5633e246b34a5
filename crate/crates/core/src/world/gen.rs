//! Dataset generation.

use super::{PairSample, WorldConfig};
use crate::error::{Error, Result};
use crate::image::{argmax, compose, HoiImage, InteractionMatrix, ObjectDist};
use crate::rng;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

// Stream indices carved out of the world seed.
const STREAM_TABLES: u64 = 0x01;
const STREAM_AFFINITY: u64 = 0x02;
const STREAM_SCENE_BASE: u64 = 0x1000;

/// Per-(object, interaction) presence-rate multipliers. A fixed seeded
/// subset of cells is rare (multiplier far below 1); multipliers are
/// normalized to mean 1 so the global presence rate stays at
/// `interaction_rate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinityTable {
    pub h: usize,
    pub w: usize,
    /// Row-major (h, w) multipliers.
    pub multipliers: Vec<f64>,
    /// Row-major rare-cell mask.
    pub rare: Vec<bool>,
}

impl AffinityTable {
    pub fn build(cfg: &WorldConfig) -> Self {
        let cells = cfg.h * cfg.w;
        let mut r = rng::stream(cfg.seed, STREAM_AFFINITY);
        // Seeded permutation picks the rare cells.
        let mut order: Vec<usize> = (0..cells).collect();
        for i in (1..cells).rev() {
            let j = r.random_range(0..=i);
            order.swap(i, j);
        }
        let n_rare = (cells as f64 * 0.25).ceil() as usize;
        let mut rare = vec![false; cells];
        for &c in order.iter().take(n_rare) {
            rare[c] = true;
        }
        let mut multipliers: Vec<f64> = (0..cells)
            .map(|c| if rare[c] { 0.01 } else { 0.5 + r.random::<f64>() })
            .collect();
        let mean: f64 = multipliers.iter().sum::<f64>() / cells as f64;
        multipliers.iter_mut().for_each(|m| *m /= mean);
        Self {
            h: cfg.h,
            w: cfg.w,
            multipliers,
            rare,
        }
    }

    pub fn multiplier(&self, h: usize, w: usize) -> f64 {
        self.multipliers[h * self.w + w]
    }

    pub fn is_rare(&self, h: usize, w: usize) -> bool {
        self.rare[h * self.w + w]
    }

    /// Presence probability for interaction `w` given object class `h`.
    pub fn presence_prob(&self, cfg: &WorldConfig, h: usize, w: usize) -> f64 {
        (cfg.interaction_rate * self.multiplier(h, w)).clamp(0.0, 0.95)
    }
}

/// A generated benchmark with its train/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: WorldConfig,
    pub affinity: AffinityTable,
    pub train: Vec<PairSample>,
    pub test: Vec<PairSample>,
}

impl Dataset {
    pub fn all_pairs(&self) -> impl Iterator<Item = &PairSample> {
        self.train.iter().chain(self.test.iter())
    }
}

/// Fixed class and interaction embeddings (rows of unit-variance normals).
fn embedding_tables(cfg: &WorldConfig) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut r = rng::stream(cfg.seed, STREAM_TABLES);
    let table = |rows: usize, cols: usize, r: &mut rng::Rng| -> Vec<Vec<f64>> {
        (0..rows)
            .map(|_| (0..cols).map(|_| StandardNormal.sample(r)).collect())
            .collect()
    };
    let class = table(cfg.h, cfg.d_appearance, &mut r);
    let inter = table(cfg.w, cfg.d_appearance, &mut r);
    (class, inter)
}

/// Generates the benchmark. Scenes draw from independent derived streams;
/// the split assigns the first `train_fraction` of scenes to training.
pub fn generate_dataset(cfg: &WorldConfig) -> Result<Dataset> {
    cfg.validate()?;
    let affinity = AffinityTable::build(cfg);
    let (class_emb, inter_emb) = embedding_tables(cfg);

    let train_scenes = (cfg.scenes as f64 * cfg.train_fraction).floor() as usize;
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut pair_id = 0u64;
    let mut object_id = 0u64;

    for scene in 0..cfg.scenes {
        let mut r = rng::stream(cfg.seed, STREAM_SCENE_BASE + scene as u64);
        let (lo, hi) = cfg.pairs_per_scene;
        let n_pairs = r.random_range(lo..=hi);
        let out = if scene < train_scenes { &mut train } else { &mut test };
        let mut remaining = n_pairs;
        while remaining > 0 {
            let true_object = r.random_range(0..cfg.h);
            let share = r.random_range(1..=3usize).min(remaining);
            let prior = detector_prior(cfg, true_object, &mut r);
            for _ in 0..share {
                let true_interactions: Vec<usize> = (0..cfg.w)
                    .filter(|&w| r.random::<f64>() < affinity.presence_prob(cfg, true_object, w))
                    .collect();
                let appearance =
                    appearance_feature(cfg, true_object, &true_interactions, &class_emb, &inter_emb, &mut r);
                out.push(PairSample {
                    pair_id,
                    object_id,
                    true_object,
                    true_interactions,
                    appearance,
                    detector_prior: prior.clone(),
                });
                pair_id += 1;
            }
            object_id += 1;
            remaining -= share;
        }
    }

    verify_rare_echo(cfg, &affinity, &train)?;
    Ok(Dataset {
        config: cfg.clone(),
        affinity,
        train,
        test,
    })
}

fn detector_prior(cfg: &WorldConfig, true_object: usize, r: &mut rng::Rng) -> ObjectDist {
    let mode = if cfg.h > 1 && r.random::<f64>() < cfg.prior_error_rate {
        // Flip to a uniformly chosen wrong class.
        let mut m = r.random_range(0..cfg.h - 1);
        if m >= true_object {
            m += 1;
        }
        m
    } else {
        true_object
    };
    let logits: Vec<f64> = (0..cfg.h)
        .map(|i| {
            let base = if i == mode { 1.0 / cfg.prior_temperature } else { 0.0 };
            let noise: f64 = StandardNormal.sample(r);
            base + noise
        })
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= z);
    // Absorb rounding into the mode so the simplex check is exact.
    let total: f64 = probs.iter().sum();
    let i = argmax(&probs);
    probs[i] += 1.0 - total;
    ObjectDist::new(probs).expect("softmax output is a simplex")
}

fn appearance_feature(
    cfg: &WorldConfig,
    true_object: usize,
    present: &[usize],
    class_emb: &[Vec<f64>],
    inter_emb: &[Vec<f64>],
    r: &mut rng::Rng,
) -> Vec<f64> {
    let noise_scale = if cfg.appearance_snr.is_infinite() {
        0.0
    } else {
        1.0 / cfg.appearance_snr
    };
    (0..cfg.d_appearance)
        .map(|i| {
            let mut x = class_emb[true_object][i];
            for &w in present {
                x += inter_emb[w][i];
            }
            let eps: f64 = StandardNormal.sample(r);
            x + noise_scale * eps
        })
        .collect()
}

/// Checks that at least ceil(0.2·H·W) (object, interaction) combinations
/// have fewer than 10 training samples.
fn verify_rare_echo(cfg: &WorldConfig, affinity: &AffinityTable, train: &[PairSample]) -> Result<()> {
    if train.is_empty() {
        return Ok(());
    }
    let mut counts = vec![0usize; cfg.h * cfg.w];
    for pair in train {
        for &w in &pair.true_interactions {
            counts[pair.true_object * cfg.w + w] += 1;
        }
    }
    let scarce = counts.iter().filter(|&&c| c < 10).count();
    let required = (0.2 * (cfg.h * cfg.w) as f64).ceil() as usize;
    if scarce < required {
        return Err(Error::Config(format!(
            "rare-combination echo violated: only {scarce} of {} cells have < 10 training samples (need {required}); \
             lower interaction_rate or shrink the dataset",
            cfg.h * cfg.w
        )));
    }
    let _ = affinity;
    Ok(())
}

/// The binary ground-truth image of a pair: one-hot object row times
/// presence/absence interaction rows.
pub fn ground_truth_image(pair: &PairSample, w: usize) -> Result<HoiImage> {
    let h = pair.detector_prior.len();
    let v = ObjectDist::one_hot(h, pair.true_object)?;
    let m = InteractionMatrix::from_present(w, &pair.true_interactions)?;
    compose(&v, &m)
}

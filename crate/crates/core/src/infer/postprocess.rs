//! From predicted images to detection labels.

use crate::error::{Error, Result};
use crate::image::{argmax, HoiImage};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// One pair's predicted clean image, tagged with its identities.
#[derive(Debug, Clone)]
pub struct PairPrediction {
    pub pair_id: u64,
    pub object_id: u64,
    pub image: HoiImage,
}

/// How triplet confidence scores are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreMode {
    /// Presence probability times the object's normalized averaged row mass.
    #[default]
    PresenceTimesObject,
    /// Presence probability alone.
    PresenceOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectDecision {
    pub object_id: u64,
    pub predicted_class: usize,
    /// Per-class mass of the averaged image, summed over interactions and
    /// channels (the argmax input).
    pub class_mass: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDecision {
    pub pair_id: u64,
    pub object_id: u64,
    pub predicted_class: usize,
    /// Interactions judged present: `img[h, w, presence] > img[h, w, absence]`.
    pub interactions: Vec<usize>,
    /// Confidence per predicted-present interaction, in [0, 1].
    pub scores: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub objects: Vec<ObjectDecision>,
    pub pairs: Vec<PairDecision>,
}

/// Aggregates per-pair predicted images into detection decisions.
///
/// Objects are classified from the mean of all images of pairs sharing the
/// object (argmax over summed row mass, ties to the lowest index); each
/// pair's interactions are then read off the presence/absence channels at
/// the predicted class row. Grouping and averaging run in ascending
/// object/pair id order, so the result does not depend on input order.
pub fn postprocess(preds: &[PairPrediction], score_mode: ScoreMode) -> Result<DetectionResult> {
    if preds.is_empty() {
        return Err(Error::Alignment("no predictions to post-process".into()));
    }
    let shape = preds[0].image.shape();
    for p in preds {
        if p.image.shape() != shape {
            return Err(Error::ShapeMismatch("predictions disagree on image shape".into()));
        }
    }
    let mut groups: BTreeMap<u64, Vec<&PairPrediction>> = BTreeMap::new();
    for p in preds {
        groups.entry(p.object_id).or_default().push(p);
    }

    let mut objects = Vec::with_capacity(groups.len());
    let mut pairs = Vec::new();
    for (&object_id, members) in &mut groups {
        if members.is_empty() {
            return Err(Error::EmptyGroup(object_id));
        }
        members.sort_by_key(|p| p.pair_id);
        // Mean image over the group's pairs.
        let mut avg = vec![0.0f64; shape.len()];
        for p in members.iter() {
            for (a, v) in avg.iter_mut().zip(p.image.data()) {
                *a += v;
            }
        }
        let n = members.len() as f64;
        avg.iter_mut().for_each(|a| *a /= n);

        let class_mass: Vec<f64> = (0..shape.h)
            .map(|h| {
                let mut sum = 0.0;
                for w in 0..shape.w {
                    sum += avg[(h * shape.w + w) * 2] + avg[(h * shape.w + w) * 2 + 1];
                }
                sum
            })
            .collect();
        let predicted_class = argmax(&class_mass);
        let object_strength = class_mass[predicted_class] / shape.w as f64;

        for p in members.iter() {
            let mut interactions = Vec::new();
            let mut scores = Vec::new();
            for w in 0..shape.w {
                let presence = p.image.at(predicted_class, w, 0);
                let absence = p.image.at(predicted_class, w, 1);
                if presence > absence {
                    interactions.push(w);
                    let score = match score_mode {
                        ScoreMode::PresenceTimesObject => presence * object_strength,
                        ScoreMode::PresenceOnly => presence,
                    };
                    scores.push((w, score));
                }
            }
            pairs.push(PairDecision {
                pair_id: p.pair_id,
                object_id,
                predicted_class,
                interactions,
                scores,
            });
        }
        objects.push(ObjectDecision {
            object_id,
            predicted_class,
            class_mass,
        });
    }
    Ok(DetectionResult { objects, pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{compose, InteractionMatrix, ObjectDist};

    fn product_image(v: Vec<f64>, rows: Vec<[f64; 2]>) -> HoiImage {
        compose(&ObjectDist::new(v).unwrap(), &InteractionMatrix::new(rows).unwrap()).unwrap()
    }

    #[test]
    fn exact_truth_recovers_labels() {
        let img = compose(
            &ObjectDist::one_hot(4, 2).unwrap(),
            &InteractionMatrix::from_present(3, &[1]).unwrap(),
        )
        .unwrap();
        let result = postprocess(
            &[PairPrediction { pair_id: 0, object_id: 0, image: img }],
            ScoreMode::PresenceTimesObject,
        )
        .unwrap();
        assert_eq!(result.objects[0].predicted_class, 2);
        assert_eq!(result.pairs[0].interactions, vec![1]);
        let (w, s) = result.pairs[0].scores[0];
        assert_eq!(w, 1);
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shared_object_classifies_from_averaged_row_masses() {
        // Two pairs share object 0. Pair A puts row mass 0.6 on class 1 and
        // 0.4 on class 3; pair B puts 0.8 on class 3 and 0.2 on class 1.
        // Averaged masses: class 1 -> 0.4, class 3 -> 0.6, so class 3 wins.
        let a = product_image(vec![0.0, 0.6, 0.0, 0.4], vec![[0.5, 0.5]; 3]);
        let b = product_image(vec![0.0, 0.2, 0.0, 0.8], vec![[0.5, 0.5]; 3]);
        let result = postprocess(
            &[
                PairPrediction { pair_id: 0, object_id: 0, image: a },
                PairPrediction { pair_id: 1, object_id: 0, image: b },
            ],
            ScoreMode::PresenceTimesObject,
        )
        .unwrap();
        assert_eq!(result.objects.len(), 1);
        assert_eq!(result.objects[0].predicted_class, 3);
        // class_mass sums over W interactions and both channels: W * v[h].
        assert!((result.objects[0].class_mass[3] - 3.0 * 0.6).abs() < 1e-12);
        assert!((result.objects[0].class_mass[1] - 3.0 * 0.4).abs() < 1e-12);
    }

    #[test]
    fn argmax_ties_break_to_lowest_index() {
        let img = product_image(vec![0.5, 0.5], vec![[0.5, 0.5]; 2]);
        let result = postprocess(
            &[PairPrediction { pair_id: 0, object_id: 0, image: img }],
            ScoreMode::PresenceTimesObject,
        )
        .unwrap();
        assert_eq!(result.objects[0].predicted_class, 0);
    }

    #[test]
    fn result_is_invariant_to_input_order() {
        let a = product_image(vec![0.1, 0.9], vec![[0.8, 0.2], [0.3, 0.7]]);
        let b = product_image(vec![0.7, 0.3], vec![[0.6, 0.4], [0.1, 0.9]]);
        let c = product_image(vec![0.4, 0.6], vec![[0.2, 0.8], [0.9, 0.1]]);
        let mk = |id: u64, oid: u64, img: &HoiImage| PairPrediction {
            pair_id: id,
            object_id: oid,
            image: img.clone(),
        };
        let fwd = postprocess(
            &[mk(0, 0, &a), mk(1, 0, &b), mk(2, 1, &c)],
            ScoreMode::PresenceTimesObject,
        )
        .unwrap();
        let rev = postprocess(
            &[mk(2, 1, &c), mk(1, 0, &b), mk(0, 0, &a)],
            ScoreMode::PresenceTimesObject,
        )
        .unwrap();
        assert_eq!(fwd.objects, rev.objects);
        for (x, y) in fwd.pairs.iter().zip(&rev.pairs) {
            assert_eq!(x.pair_id, y.pair_id);
            assert_eq!(x.interactions, y.interactions);
            for ((wx, sx), (wy, sy)) in x.scores.iter().zip(&y.scores) {
                assert_eq!(wx, wy);
                assert!((sx - sy).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scores_stay_in_unit_interval() {
        let img = product_image(vec![0.3, 0.7], vec![[0.9, 0.1], [0.6, 0.4]]);
        for mode in [ScoreMode::PresenceTimesObject, ScoreMode::PresenceOnly] {
            let result = postprocess(
                &[PairPrediction { pair_id: 0, object_id: 0, image: img.clone() }],
                mode,
            )
            .unwrap();
            for p in &result.pairs {
                for &(_, s) in &p.scores {
                    assert!((0.0..=1.0).contains(&s));
                }
            }
        }
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(postprocess(&[], ScoreMode::PresenceOnly).is_err());
    }
}

//! Detection metrics: object accuracy, per-interaction precision/recall, and
//! mAP over (object class × interaction) triplet classes.

use super::postprocess::DetectionResult;
use crate::error::{Error, Result};
use crate::world::{AffinityTable, PairSample};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Average precision of one class from `(score, is_true_positive)`
/// detections against `n_gt` ground-truth positives.
///
/// Detections are ranked by descending score (ties by submission order) and
/// AP is the mean of the precisions at each true-positive rank — the
/// continuous precision-recall area, no fixed-point interpolation.
pub fn average_precision(detections: &[(f64, bool)], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].0.total_cmp(&detections[a].0).then(a.cmp(&b)));
    let mut tp = 0usize;
    let mut sum_precision = 0.0f64;
    for (pos, &i) in order.iter().enumerate() {
        if detections[i].1 {
            tp += 1;
            sum_precision += tp as f64 / (pos + 1) as f64;
        }
    }
    sum_precision / n_gt as f64
}

/// Reference AP by brute-force enumeration of the precision-recall curve:
/// at every rank the true-positive count is recomputed by rescanning the
/// ranked prefix. Exists to verify [`average_precision`]; evaluation never
/// calls it.
pub fn average_precision_by_pr_enumeration(detections: &[(f64, bool)], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut ranked: Vec<(usize, f64, bool)> = detections
        .iter()
        .enumerate()
        .map(|(i, &(s, t))| (i, s, t))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut area = 0.0f64;
    for rank in 1..=ranked.len() {
        // Recall rises at this rank only if the detection is a true positive.
        if ranked[rank - 1].2 {
            let mut tp_here = 0usize;
            for item in ranked.iter().take(rank) {
                if item.2 {
                    tp_here += 1;
                }
            }
            area += tp_here as f64 / rank as f64;
        }
    }
    area / n_gt as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionMetrics {
    pub interaction: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub object: usize,
    pub interaction: usize,
    pub rare: bool,
    pub n_gt: usize,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub objects_total: usize,
    pub object_accuracy: f64,
    pub triplet_tp: usize,
    pub triplet_fp: usize,
    pub triplet_fn: usize,
    pub triplet_precision: f64,
    pub triplet_recall: f64,
    pub triplet_f1: f64,
    pub per_interaction: Vec<InteractionMetrics>,
    pub per_class_ap: Vec<ClassAp>,
    pub map: f64,
    pub map_rare: Option<f64>,
    pub map_nonrare: Option<f64>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1_of(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Scores a detection result against ground truth.
///
/// `truth` is the full evaluated split: pairs without predictions count as
/// misses. Every predicted pair must exist in `truth`.
pub fn evaluate(
    result: &DetectionResult,
    truth: &[PairSample],
    affinity: &AffinityTable,
) -> Result<MetricsReport> {
    let by_pair: BTreeMap<u64, &PairSample> = truth.iter().map(|p| (p.pair_id, p)).collect();
    let mut true_object_of: BTreeMap<u64, usize> = BTreeMap::new();
    for p in truth {
        true_object_of.insert(p.object_id, p.true_object);
    }

    // Object accuracy over decided objects.
    let mut correct_objects = 0usize;
    for obj in &result.objects {
        let truth_class = true_object_of.get(&obj.object_id).ok_or_else(|| {
            Error::Alignment(format!("object {} not present in ground truth", obj.object_id))
        })?;
        if obj.predicted_class == *truth_class {
            correct_objects += 1;
        }
    }

    let (h, w) = (affinity.h, affinity.w);
    // Ground-truth triplet counts per (object class, interaction).
    let mut gt_count = vec![0usize; h * w];
    for p in truth {
        for &iw in &p.true_interactions {
            gt_count[p.true_object * w + iw] += 1;
        }
    }
    let total_gt: usize = gt_count.iter().sum();

    // Predicted triplets and per-class detection lists.
    let mut detections: Vec<Vec<(f64, bool)>> = vec![Vec::new(); h * w];
    let mut triplet_tp = 0usize;
    let mut triplet_pred = 0usize;
    let mut inter_tp = vec![0usize; w];
    let mut inter_fp = vec![0usize; w];
    let mut inter_fn = vec![0usize; w];
    let mut predicted_pairs: BTreeMap<u64, &super::postprocess::PairDecision> = BTreeMap::new();
    for pair in &result.pairs {
        let gt = by_pair.get(&pair.pair_id).ok_or_else(|| {
            Error::Alignment(format!("pair {} not present in ground truth", pair.pair_id))
        })?;
        predicted_pairs.insert(pair.pair_id, pair);
        for &(iw, score) in &pair.scores {
            let is_tp = pair.predicted_class == gt.true_object && gt.true_interactions.contains(&iw);
            detections[pair.predicted_class * w + iw].push((score, is_tp));
            triplet_pred += 1;
            if is_tp {
                triplet_tp += 1;
            }
        }
        for iw in 0..w {
            let pred = pair.interactions.contains(&iw);
            let actual = gt.true_interactions.contains(&iw);
            match (pred, actual) {
                (true, true) => inter_tp[iw] += 1,
                (true, false) => inter_fp[iw] += 1,
                (false, true) => inter_fn[iw] += 1,
                (false, false) => {}
            }
        }
    }
    // Pairs in the split that received no prediction miss all their
    // interactions.
    for p in truth {
        if !predicted_pairs.contains_key(&p.pair_id) {
            for &iw in &p.true_interactions {
                inter_fn[iw] += 1;
            }
        }
    }

    let per_interaction: Vec<InteractionMetrics> = (0..w)
        .map(|iw| {
            let p = ratio(inter_tp[iw], inter_tp[iw] + inter_fp[iw]);
            let r = ratio(inter_tp[iw], inter_tp[iw] + inter_fn[iw]);
            InteractionMetrics {
                interaction: iw,
                tp: inter_tp[iw],
                fp: inter_fp[iw],
                fn_: inter_fn[iw],
                precision: p,
                recall: r,
                f1: f1_of(p, r),
            }
        })
        .collect();

    // AP per class with at least one ground-truth instance.
    let mut per_class_ap = Vec::new();
    let mut ap_all = 0.0f64;
    let mut n_all = 0usize;
    let mut ap_rare = 0.0f64;
    let mut n_rare = 0usize;
    let mut ap_nonrare = 0.0f64;
    let mut n_nonrare = 0usize;
    for oh in 0..h {
        for iw in 0..w {
            let n_gt = gt_count[oh * w + iw];
            if n_gt == 0 {
                continue;
            }
            let ap = average_precision(&detections[oh * w + iw], n_gt);
            let rare = affinity.is_rare(oh, iw);
            per_class_ap.push(ClassAp {
                object: oh,
                interaction: iw,
                rare,
                n_gt,
                ap,
            });
            ap_all += ap;
            n_all += 1;
            if rare {
                ap_rare += ap;
                n_rare += 1;
            } else {
                ap_nonrare += ap;
                n_nonrare += 1;
            }
        }
    }

    let triplet_precision = ratio(triplet_tp, triplet_pred);
    let triplet_recall = ratio(triplet_tp, total_gt);
    Ok(MetricsReport {
        objects_total: result.objects.len(),
        object_accuracy: ratio(correct_objects, result.objects.len()),
        triplet_tp,
        triplet_fp: triplet_pred - triplet_tp,
        triplet_fn: total_gt - triplet_tp.min(total_gt),
        triplet_precision,
        triplet_recall,
        triplet_f1: f1_of(triplet_precision, triplet_recall),
        per_interaction,
        per_class_ap,
        map: if n_all == 0 { 0.0 } else { ap_all / n_all as f64 },
        map_rare: (n_rare > 0).then(|| ap_rare / n_rare as f64),
        map_nonrare: (n_nonrare > 0).then(|| ap_nonrare / n_nonrare as f64),
    })
}

impl MetricsReport {
    /// Machine-readable `key = value` lines, deterministic formatting.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "metric.objects_total = {}", self.objects_total);
        let _ = writeln!(out, "metric.object_accuracy = {}", self.object_accuracy);
        let _ = writeln!(out, "metric.triplet_tp = {}", self.triplet_tp);
        let _ = writeln!(out, "metric.triplet_fp = {}", self.triplet_fp);
        let _ = writeln!(out, "metric.triplet_fn = {}", self.triplet_fn);
        let _ = writeln!(out, "metric.triplet_precision = {}", self.triplet_precision);
        let _ = writeln!(out, "metric.triplet_recall = {}", self.triplet_recall);
        let _ = writeln!(out, "metric.triplet_f1 = {}", self.triplet_f1);
        let _ = writeln!(out, "metric.map = {}", self.map);
        match self.map_rare {
            Some(v) => {
                let _ = writeln!(out, "metric.map_rare = {v}");
            }
            None => {
                let _ = writeln!(out, "metric.map_rare = n/a");
            }
        }
        match self.map_nonrare {
            Some(v) => {
                let _ = writeln!(out, "metric.map_nonrare = {v}");
            }
            None => {
                let _ = writeln!(out, "metric.map_nonrare = n/a");
            }
        }
        for m in &self.per_interaction {
            let _ = writeln!(
                out,
                "metric.interaction.{}.precision = {}",
                m.interaction, m.precision
            );
            let _ = writeln!(out, "metric.interaction.{}.recall = {}", m.interaction, m.recall);
            let _ = writeln!(out, "metric.interaction.{}.f1 = {}", m.interaction, m.f1);
        }
        for c in &self.per_class_ap {
            let _ = writeln!(
                out,
                "metric.ap.{}.{} = {} # rare={} n_gt={}",
                c.object, c.interaction, c.ap, c.rare, c.n_gt
            );
        }
        out
    }

    /// Human-readable summary table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "objects           {}", self.objects_total);
        let _ = writeln!(out, "object accuracy   {:.4}", self.object_accuracy);
        let _ = writeln!(
            out,
            "triplets          tp {}  fp {}  fn {}",
            self.triplet_tp, self.triplet_fp, self.triplet_fn
        );
        let _ = writeln!(
            out,
            "triplet P/R/F1    {:.4} / {:.4} / {:.4}",
            self.triplet_precision, self.triplet_recall, self.triplet_f1
        );
        let _ = writeln!(out, "mAP               {:.4}", self.map);
        if let Some(v) = self.map_rare {
            let _ = writeln!(out, "mAP (rare)        {v:.4}");
        }
        if let Some(v) = self.map_nonrare {
            let _ = writeln!(out, "mAP (non-rare)    {v:.4}");
        }
        let _ = writeln!(out, "interaction       prec    recall  f1");
        for m in &self.per_interaction {
            let _ = writeln!(
                out,
                "  {:<15} {:.4}  {:.4}  {:.4}",
                m.interaction, m.precision, m.recall, m.f1
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ObjectDist;
    use crate::infer::postprocess::{PairDecision, ObjectDecision};
    use crate::rng;
    use crate::world::WorldConfig;
    use rand::Rng as _;

    #[test]
    fn ap_hand_case_tp_fp_tp_fp() {
        // Ranked TP, FP, TP, FP with 2 ground-truth positives:
        // precisions at true positives are 1/1 and 2/3, AP = (1 + 2/3)/2.
        let detections = vec![(0.9, true), (0.8, false), (0.7, true), (0.6, false)];
        let ap = average_precision(&detections, 2);
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(ap, average_precision_by_pr_enumeration(&detections, 2));
    }

    #[test]
    fn ap_matches_enumeration_oracle_on_random_instances() {
        let mut r = rng::stream(71, 0);
        for _ in 0..50 {
            let n = r.random_range(1..20usize);
            let detections: Vec<(f64, bool)> =
                (0..n).map(|_| (r.random::<f64>(), r.random::<bool>())).collect();
            let tp_present = detections.iter().filter(|d| d.1).count();
            let n_gt = tp_present + r.random_range(0..4usize);
            if n_gt == 0 {
                continue;
            }
            let fast = average_precision(&detections, n_gt);
            let slow = average_precision_by_pr_enumeration(&detections, n_gt);
            assert_eq!(fast.to_bits(), slow.to_bits());
        }
    }

    #[test]
    fn ap_is_invariant_under_monotone_score_transforms() {
        let mut r = rng::stream(72, 0);
        for _ in 0..20 {
            let n = r.random_range(2..15usize);
            let detections: Vec<(f64, bool)> =
                (0..n).map(|_| (r.random::<f64>(), r.random::<bool>())).collect();
            let transformed: Vec<(f64, bool)> =
                detections.iter().map(|&(s, t)| ((3.0 * s + 1.0).exp(), t)).collect();
            let a = average_precision(&detections, 3);
            let b = average_precision(&transformed, 3);
            assert!((a - b).abs() < 1e-15);
        }
    }

    fn tiny_truth() -> (Vec<PairSample>, AffinityTable) {
        let mk = |pair_id, object_id, true_object, inters: Vec<usize>| PairSample {
            pair_id,
            object_id,
            true_object,
            true_interactions: inters,
            appearance: vec![0.0; 2],
            detector_prior: ObjectDist::uniform(3),
        };
        let truth = vec![
            mk(0, 0, 1, vec![0]),
            mk(1, 0, 1, vec![1]),
            mk(2, 1, 2, vec![]),
        ];
        let cfg = WorldConfig {
            h: 3,
            w: 2,
            ..WorldConfig::default()
        };
        (truth, AffinityTable::build(&cfg))
    }

    fn perfect_result(truth: &[PairSample]) -> DetectionResult {
        let mut objects = std::collections::BTreeMap::new();
        let pairs = truth
            .iter()
            .map(|t| {
                objects.insert(t.object_id, t.true_object);
                PairDecision {
                    pair_id: t.pair_id,
                    object_id: t.object_id,
                    predicted_class: t.true_object,
                    interactions: t.true_interactions.clone(),
                    scores: t.true_interactions.iter().map(|&w| (w, 0.9)).collect(),
                }
            })
            .collect();
        DetectionResult {
            objects: objects
                .into_iter()
                .map(|(object_id, predicted_class)| ObjectDecision {
                    object_id,
                    predicted_class,
                    class_mass: vec![],
                })
                .collect(),
            pairs,
        }
    }

    #[test]
    fn perfect_predictions_score_one() {
        let (truth, affinity) = tiny_truth();
        let report = evaluate(&perfect_result(&truth), &truth, &affinity).unwrap();
        assert_eq!(report.object_accuracy, 1.0);
        assert_eq!(report.triplet_f1, 1.0);
        assert_eq!(report.map, 1.0);
    }

    #[test]
    fn all_wrong_predictions_score_zero() {
        let (truth, affinity) = tiny_truth();
        let mut result = perfect_result(&truth);
        for p in &mut result.pairs {
            p.predicted_class = (p.predicted_class + 1) % 3;
        }
        for o in &mut result.objects {
            o.predicted_class = (o.predicted_class + 1) % 3;
        }
        let report = evaluate(&result, &truth, &affinity).unwrap();
        assert_eq!(report.object_accuracy, 0.0);
        assert_eq!(report.triplet_f1, 0.0);
        assert_eq!(report.map, 0.0);
    }

    #[test]
    fn unknown_pair_is_an_alignment_error() {
        let (truth, affinity) = tiny_truth();
        let mut result = perfect_result(&truth);
        result.pairs[0].pair_id = 99;
        assert!(matches!(
            evaluate(&result, &truth, &affinity),
            Err(Error::Alignment(_))
        ));
    }
}

//! HICO-DET style evaluation.
//!
//! Predictions of one category are ranked by score and greedily matched to
//! ground truth: a prediction is a true positive when an unmatched ground
//! truth in the same image overlaps it with IoU >= 0.5 on both the human and
//! the object box. Among several such ground truths the one with the largest
//! min(human IoU, object IoU) is taken. Average precision is the area under
//! the interpolated precision envelope.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::BoundingBox;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthTriplet {
    pub image: String,
    pub human: BoundingBox,
    pub object: BoundingBox,
    pub category: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTriplet {
    pub image: String,
    pub human: BoundingBox,
    pub object: BoundingBox,
    pub category: usize,
    pub score: f64,
}

/// Indices of `predictions` ordered by score descending, then image id, then
/// input position.
pub fn rank(predictions: &[PredictionTriplet]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&predictions[a], &predictions[b]);
        pb.score.total_cmp(&pa.score).then_with(|| pa.image.cmp(&pb.image))
    });
    order
}

/// For each prediction, in the given order, the index of the ground truth it
/// claims, or `None` for a false positive.
pub fn match_assignments(
    predictions: &[&PredictionTriplet],
    ground_truth: &[&GroundTruthTriplet],
    iou_threshold: f64,
) -> Vec<Option<usize>> {
    let mut by_image: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (g, gt) in ground_truth.iter().enumerate() {
        by_image.entry(gt.image.as_str()).or_default().push(g);
    }
    let mut taken = vec![false; ground_truth.len()];
    predictions
        .iter()
        .map(|p| {
            let candidates = by_image.get(p.image.as_str())?;
            let mut best: Option<(usize, f64)> = None;
            for &g in candidates {
                if taken[g] {
                    continue;
                }
                let overlap_h = p.human.iou(&ground_truth[g].human);
                let overlap_o = p.object.iou(&ground_truth[g].object);
                if overlap_h < iou_threshold || overlap_o < iou_threshold {
                    continue;
                }
                let overlap = overlap_h.min(overlap_o);
                if best.is_none_or(|(_, b)| overlap > b) {
                    best = Some((g, overlap));
                }
            }
            let (g, _) = best?;
            taken[g] = true;
            Some(g)
        })
        .collect()
}

/// True-positive flags for `predictions`, which must already be ranked.
pub fn match_category(
    predictions: &[&PredictionTriplet],
    ground_truth: &[&GroundTruthTriplet],
    iou_threshold: f64,
) -> Vec<bool> {
    match_assignments(predictions, ground_truth, iou_threshold).iter().map(Option::is_some).collect()
}

/// All-point interpolated average precision; `None` when `n_gt == 0`.
pub fn average_precision(flags: &[bool], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(flags.len());
    let mut precision = Vec::with_capacity(flags.len());
    for (rank, &hit) in flags.iter().enumerate() {
        tp += usize::from(hit);
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (rank + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut previous = 0.0;
    for (r, p) in recall.into_iter().zip(precision) {
        ap += (r - previous) * p;
        previous = r;
    }
    Some(ap)
}

/// Per-category AP over `num_classes` categories. Predictions of categories
/// without ground truth are ignored and their entry is `None`.
pub fn evaluate(
    predictions: &[PredictionTriplet],
    ground_truth: &[GroundTruthTriplet],
    num_classes: usize,
    iou_threshold: f64,
) -> Result<Vec<Option<f64>>> {
    let mut gt_by_class: Vec<Vec<&GroundTruthTriplet>> = vec![Vec::new(); num_classes];
    for gt in ground_truth {
        gt_by_class.get_mut(gt.category).ok_or(Error::UnknownCategory(gt.category))?.push(gt);
    }
    let mut pred_by_class: Vec<Vec<&PredictionTriplet>> = vec![Vec::new(); num_classes];
    for i in rank(predictions) {
        let p = &predictions[i];
        pred_by_class.get_mut(p.category).ok_or(Error::UnknownCategory(p.category))?.push(p);
    }
    Ok(pred_by_class
        .iter()
        .zip(&gt_by_class)
        .map(|(preds, gts)| average_precision(&match_category(preds, gts, iou_threshold), gts.len()))
        .collect())
}

fn mean<'a>(values: impl Iterator<Item = &'a f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Rare / non-rare / full / arithmetic-full mean AP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub rare: f64,
    pub non_rare: f64,
    /// Mean over every evaluable category.
    pub full: f64,
    /// Mean of `rare` and `non_rare`.
    pub afull: f64,
    pub rare_count: usize,
    pub non_rare_count: usize,
}

pub fn aggregate(aps: &[Option<f64>], rare: &[bool]) -> Result<Summary> {
    if aps.len() != rare.len() {
        return Err(Error::BadCount { expected: rare.len(), found: aps.len() });
    }
    let split = |want: bool| -> Vec<f64> {
        aps.iter().zip(rare).filter(|(_, &r)| r == want).filter_map(|(ap, _)| *ap).collect()
    };
    let (rare_aps, non_rare_aps) = (split(true), split(false));
    let rare_mean = mean(rare_aps.iter()).ok_or(Error::EmptySplit("rare"))?;
    let non_rare_mean = mean(non_rare_aps.iter()).ok_or(Error::EmptySplit("non-rare"))?;
    let full = mean(rare_aps.iter().chain(&non_rare_aps)).unwrap_or(0.0);
    Ok(Summary {
        rare: rare_mean,
        non_rare: non_rare_mean,
        full,
        afull: (rare_mean + non_rare_mean) / 2.0,
        rare_count: rare_aps.len(),
        non_rare_count: non_rare_aps.len(),
    })
}

/// Zero-shot split: categories held out of the registry are "unseen".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroShotSummary {
    pub seen: f64,
    pub unseen: f64,
    pub afull: f64,
    pub full: f64,
}

pub fn split_seen_unseen(aps: &[Option<f64>], held_out: &BTreeSet<usize>) -> Result<ZeroShotSummary> {
    if let Some(&bad) = held_out.iter().find(|&&c| c >= aps.len()) {
        return Err(Error::UnknownCategory(bad));
    }
    let pick = |unseen: bool| -> Vec<f64> {
        aps.iter()
            .enumerate()
            .filter(|(c, _)| held_out.contains(c) == unseen)
            .filter_map(|(_, ap)| *ap)
            .collect()
    };
    let (seen_aps, unseen_aps) = (pick(false), pick(true));
    let seen = mean(seen_aps.iter()).ok_or(Error::EmptySplit("seen"))?;
    let unseen = mean(unseen_aps.iter()).ok_or(Error::EmptySplit("unseen"))?;
    let full = mean(seen_aps.iter().chain(&unseen_aps)).unwrap_or(0.0);
    Ok(ZeroShotSummary { seen, unseen, afull: (seen + unseen) / 2.0, full })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f32) -> BoundingBox {
        BoundingBox::new(x, 0.0, x + 10.0, 10.0).unwrap()
    }

    fn gt(image: &str, h: f32, o: f32) -> GroundTruthTriplet {
        GroundTruthTriplet { image: image.into(), human: bx(h), object: bx(o), category: 0 }
    }

    fn pred(image: &str, h: f32, o: f32, score: f64) -> PredictionTriplet {
        PredictionTriplet { image: image.into(), human: bx(h), object: bx(o), category: 0, score }
    }

    fn flags(preds: &[PredictionTriplet], gts: &[GroundTruthTriplet]) -> Vec<bool> {
        let p: Vec<_> = rank(preds).into_iter().map(|i| &preds[i]).collect();
        let g: Vec<_> = gts.iter().collect();
        match_category(&p, &g, DEFAULT_IOU_THRESHOLD)
    }

    #[test]
    fn match_examples() {
        assert_eq!(flags(&[pred("a", 0., 20., 0.9)], &[gt("a", 0., 20.)]), [true]);
        let preds = [pred("a", 0., 20., 0.9), pred("a", 0., 20., 0.8)];
        assert_eq!(flags(&preds, &[gt("a", 0., 20.)]), [true, false]);
        // shift 2.5 of 10: IoU 7.5/12.5 = 0.6; shift 5: IoU 5/15 = 0.33
        assert_eq!(flags(&[pred("a", 2.5, 25., 0.9)], &[gt("a", 0., 20.)]), [false]);
        assert_eq!(flags(&[pred("a", 2.5, 22.5, 0.9)], &[gt("a", 0., 20.)]), [true]);
        assert_eq!(flags(&[pred("b", 0., 20., 0.9)], &[gt("a", 0., 20.)]), [false]);
    }

    #[test]
    fn match_prefers_best_overlap() {
        let preds = [pred("a", 1., 21., 0.9)];
        let gts = [gt("a", 2., 22.), gt("a", 1., 21.)];
        let p: Vec<_> = preds.iter().collect();
        let g: Vec<_> = gts.iter().collect();
        assert_eq!(match_assignments(&p, &g, 0.5), [Some(1)]);
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[true, true], 2), Some(1.0));
        let ap = average_precision(&[true, false, true], 2).unwrap();
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
        assert!((ap - 0.8333).abs() < 1e-4);
        assert_eq!(average_precision(&[false, false], 1), Some(0.0));
        assert_eq!(average_precision(&[], 3), Some(0.0));
        assert_eq!(average_precision(&[true], 0), None);
    }

    #[test]
    fn aggregate_table_rows() {
        let row = |rare: f64, non_rare: f64| {
            let mut aps = vec![Some(rare); 138];
            aps.extend(vec![Some(non_rare); 462]);
            let mut flags = vec![true; 138];
            flags.extend(vec![false; 462]);
            aggregate(&aps, &flags).unwrap()
        };
        let s = row(34.22, 26.46);
        assert!((s.full - 28.24).abs() < 0.01);
        assert!((s.afull - 30.34).abs() < 0.01);
        let s = row(27.61, 24.48);
        assert!((s.full - 25.20).abs() < 0.01);
        assert!((s.afull - 26.04).abs() <= 0.01);
    }

    #[test]
    fn aggregate_constant_and_empty() {
        let s = aggregate(&[Some(0.3), Some(0.3), Some(0.3)], &[true, false, false]).unwrap();
        assert!([s.rare, s.non_rare, s.full, s.afull].iter().all(|v| (v - 0.3).abs() < 1e-15));
        assert_eq!(aggregate(&[Some(0.3), None], &[false, true]), Err(Error::EmptySplit("rare")));
    }

    #[test]
    fn zero_shot_split() {
        let aps = [Some(0.2396), Some(0.3036)];
        let z = split_seen_unseen(&aps, &BTreeSet::from([1])).unwrap();
        assert!((z.afull - 0.2716).abs() < 1e-4);
        assert_eq!(split_seen_unseen(&aps, &BTreeSet::new()), Err(Error::EmptySplit("unseen")));
        let z = split_seen_unseen(&[Some(0.4); 4], &BTreeSet::from([0, 3])).unwrap();
        assert_eq!(z.seen, z.unseen);
        assert_eq!(split_seen_unseen(&aps, &BTreeSet::from([5])), Err(Error::UnknownCategory(5)));
    }

    #[test]
    fn evaluate_skips_categories_without_gt() {
        let mut p = pred("a", 0., 20., 0.9);
        p.category = 1;
        let aps = evaluate(&[pred("a", 0., 20., 0.5), p], &[gt("a", 0., 20.)], 2, 0.5).unwrap();
        assert_eq!(aps, [Some(1.0), None]);
    }
}

//! Independent reference implementations used by the integration tests.
//!
//! Nothing here calls the scoring or evaluation code under test.

#![allow(dead_code)]

use std::collections::BTreeMap;

use hoi_core::eval::{GroundTruthTriplet, PredictionTriplet};
use hoi_core::{
    BoundingBox, Detection, Embedding, HeadKind, InteractionCategory, PairKey, PairProposal, Registry,
    RegistryEntry, ScoringConfig, SignatureSet, Source, Vocabulary,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn to_f64(e: &Embedding) -> Vec<f64> {
    e.as_slice().iter().map(|&v| v as f64).collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let inner = b.len();
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| (0..cols).map(|j| (0..inner).map(|k| row[k] * b[k][j]).sum()).collect())
        .collect()
}

fn transpose(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cols = m.first().map_or(0, Vec::len);
    (0..cols).map(|j| m.iter().map(|r| r[j]).collect()).collect()
}

/// Key matrix, one-hot label matrix and query of one head, all materialized.
struct Materialized {
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    query: Vec<f64>,
}

fn materialize(
    kind: HeadKind,
    proposal: &PairProposal,
    signatures: &SignatureSet,
    registry: &Registry,
    classes: usize,
) -> Materialized {
    let one_hot = |c: usize| (0..classes).map(|j| if j == c { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
    let mut keys = Vec::new();
    let mut values = Vec::new();
    let mut add = |k: Vec<f64>, c: usize| {
        keys.push(k);
        values.push(one_hot(c));
    };
    let query = match kind {
        HeadKind::TextualFine => {
            for c in 0..classes {
                for row in signatures.get(c).unwrap().rows() {
                    add(to_f64(row), c);
                }
            }
            to_f64(&proposal.z_u)
        }
        HeadKind::TextualCoarse => {
            for c in 0..classes {
                let rows = signatures.get(c).unwrap().rows();
                let mut mean = vec![0.0; rows[0].dim()];
                for r in rows {
                    for (m, v) in mean.iter_mut().zip(to_f64(r)) {
                        *m += v / rows.len() as f64;
                    }
                }
                add(mean, c);
            }
            to_f64(&proposal.z_u)
        }
        HeadKind::VisualInstance => {
            for c in 0..classes {
                for e in registry.entries(c) {
                    add(unit([to_f64(&e.human), to_f64(&e.object)].concat()), c);
                }
            }
            unit([to_f64(&proposal.z_h), to_f64(&proposal.z_o)].concat())
        }
        HeadKind::VisualContextual => {
            for c in 0..classes {
                let entries = registry.entries(c);
                if entries.is_empty() {
                    continue;
                }
                let mut mean = vec![0.0; entries[0].union.dim()];
                for e in entries {
                    for (m, v) in mean.iter_mut().zip(to_f64(&e.union)) {
                        *m += v / entries.len() as f64;
                    }
                }
                add(mean, c);
            }
            to_f64(&proposal.z_u)
        }
    };
    Materialized { keys, values, query }
}

/// `(q K^T) V` divided by the label counts `1^T V`; classes without keys are
/// `-inf`. With `bias`, visual heads add `-lambda * (q K^T)(1 - V) / 1^T(1 - V)`.
fn naive_head(kind: HeadKind, m: &Materialized, config: &ScoringConfig, classes: usize) -> Vec<f64> {
    let q = vec![m.query.clone()];
    if m.keys.is_empty() {
        return vec![f64::NEG_INFINITY; classes];
    }
    let logits = matmul(&q, &transpose(&m.keys));
    let sums = &matmul(&logits, &m.values)[0];
    let ones = vec![vec![1.0; m.keys.len()]];
    let counts = &matmul(&ones, &m.values)[0];
    let complement: Vec<Vec<f64>> = m.values.iter().map(|r| r.iter().map(|v| 1.0 - v).collect()).collect();
    let other_sums = &matmul(&logits, &complement)[0];
    let other_counts = &matmul(&ones, &complement)[0];
    (0..classes)
        .map(|j| {
            if counts[j] == 0.0 {
                return f64::NEG_INFINITY;
            }
            let mut a = sums[j] / counts[j];
            if config.bias && kind.is_visual() && other_counts[j] > 0.0 {
                a -= config.lambda_neg * other_sums[j] / other_counts[j];
            }
            a
        })
        .collect()
}

/// `C[h][i] = exp(A[h][i]/tau) / (1 + sum_k exp(A[k][i]/tau))`, evaluated
/// literally; masked cells contribute nothing and get zero.
pub fn literal_mhom(scores: &[Vec<f64>], tau: f64) -> Vec<Vec<f64>> {
    let classes = scores.first().map_or(0, Vec::len);
    let mut out = vec![vec![0.0; classes]; scores.len()];
    for i in 0..classes {
        let mut denominator = 1.0;
        for row in scores {
            if row[i].is_finite() {
                denominator += (row[i] / tau).exp();
            }
        }
        for (h, row) in scores.iter().enumerate() {
            if row[i].is_finite() {
                out[h][i] = (row[i] / tau).exp() / denominator;
            }
        }
    }
    out
}

/// Ranked `(category, final score)` computed from materialized matrices.
pub fn naive_score_pair(
    proposal: &PairProposal,
    vocabulary: &Vocabulary,
    signatures: &SignatureSet,
    registry: &Registry,
    config: &ScoringConfig,
) -> Vec<(usize, f64)> {
    let classes = vocabulary.len();
    let scores: Vec<Vec<f64>> = config
        .heads
        .iter()
        .map(|kind| naive_head(kind, &materialize(kind, proposal, signatures, registry, classes), config, classes))
        .collect();
    let contributions = if config.mhom {
        literal_mhom(&scores, config.tau)
    } else {
        vec![vec![0.0; classes]; scores.len()]
    };
    let weight = ((proposal.human.confidence as f64) * (proposal.object.confidence as f64)).powf(config.gamma);
    let mut out = Vec::new();
    for i in 0..classes {
        if config.object_filter && vocabulary.category(i).unwrap().object != proposal.object.label {
            continue;
        }
        let live: Vec<f64> = (0..scores.len())
            .filter(|&h| scores[h][i].is_finite())
            .map(|h| scores[h][i] * (1.0 + contributions[h][i]))
            .collect();
        if live.is_empty() {
            continue;
        }
        out.push((i, live.iter().sum::<f64>() / live.len() as f64 * weight));
    }
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    out
}

pub fn random_embedding(rng: &mut impl Rng, dim: usize) -> Embedding {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        if let Ok(e) = Embedding::normalize(&v) {
            return e;
        }
    }
}

/// A small random world for the head oracle.
pub struct Instance {
    pub vocabulary: Vocabulary,
    pub signatures: SignatureSet,
    pub registry: Registry,
    pub proposal: PairProposal,
    pub config: ScoringConfig,
}

/// At most five categories and at most twenty key rows per head.
pub fn random_instance(seed: u64) -> Instance {
    use hoi_core::signature::assemble_signature;
    let mut rng = rng(seed);
    let dim = rng.random_range(2..=8);
    let classes = rng.random_range(1..=5usize);
    let objects = ["person".to_string(), "cup".to_string(), "kite".to_string()];
    let categories: Vec<InteractionCategory> = (0..classes)
        .map(|id| InteractionCategory {
            id,
            verb: format!("v{id}"),
            object: objects[1 + rng.random_range(0..2)].clone(),
            rare: rng.random_bool(0.3),
        })
        .collect();
    let vocabulary = Vocabulary::new("person", objects.iter().cloned(), categories).unwrap();
    let m = rng.random_range(1..=20 / classes);
    let signatures = vocabulary
        .categories()
        .iter()
        .map(|c| {
            let rows: Vec<Vec<f32>> = (0..m).map(|_| random_embedding(&mut rng, dim).as_slice().to_vec()).collect();
            assemble_signature(c.clone(), &rows, vec![String::new(); m], m).unwrap()
        })
        .collect();
    let signatures = SignatureSet::new(&vocabulary, signatures).unwrap();

    let capacity = rng.random_range(1..=20 / classes).min(4);
    let mut entries = Vec::new();
    for c in 0..classes {
        for k in 0..rng.random_range(0..=capacity) {
            entries.push(RegistryEntry {
                category: c,
                human: random_embedding(&mut rng, dim),
                object: random_embedding(&mut rng, dim),
                union: random_embedding(&mut rng, dim),
                source: Source::Labeled,
                origin: PairKey { image: format!("r{c}"), human: 0, object: k + 1 },
            });
        }
    }
    let registry = Registry::from_entries(classes, capacity, entries).unwrap();

    let bbox = BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
    let proposal = PairProposal {
        key: PairKey { image: "q".into(), human: 0, object: 1 },
        human: Detection::new(bbox, "person", rng.random_range(0.05..=1.0)).unwrap(),
        object: Detection::new(bbox, objects[1 + rng.random_range(0..2)].clone(), rng.random_range(0.05..=1.0))
            .unwrap(),
        z_h: random_embedding(&mut rng, dim),
        z_o: random_embedding(&mut rng, dim),
        z_u: random_embedding(&mut rng, dim),
    };
    let mut heads = hoi_core::HeadSet { tf: false, tc: false, vi: false, vc: false };
    while heads.iter().next().is_none() {
        for kind in HeadKind::ALL {
            heads.set(kind, rng.random_bool(0.6));
        }
    }
    let config = ScoringConfig {
        tau: rng.random_range(0.1..=1.0),
        gamma: rng.random_range(0.0..=2.0),
        lambda_neg: rng.random_range(0.0..=2.0),
        heads,
        bias: rng.random_bool(0.7),
        mhom: rng.random_bool(0.7),
        object_filter: rng.random_bool(0.5),
    };
    Instance { vocabulary, signatures, registry, proposal, config }
}

/// The unique assignment of ground truth to ranked predictions in which each
/// prediction takes, among the unclaimed ground truths of its image with both
/// IoUs at least `threshold`, one of largest min-IoU (earliest on ties), and
/// is a false positive only when there is none. Found by enumerating every
/// injective partial assignment.
pub fn reference_assignment(
    ranked: &[&PredictionTriplet],
    ground_truth: &[&GroundTruthTriplet],
    threshold: f64,
) -> Vec<Option<usize>> {
    fn overlap(p: &PredictionTriplet, g: &GroundTruthTriplet, threshold: f64) -> Option<f64> {
        if p.image != g.image {
            return None;
        }
        let (h, o) = (p.human.iou(&g.human), p.object.iou(&g.object));
        (h >= threshold && o >= threshold).then_some(h.min(o))
    }

    fn consistent(
        ranked: &[&PredictionTriplet],
        ground_truth: &[&GroundTruthTriplet],
        threshold: f64,
        assignment: &[Option<usize>],
    ) -> bool {
        let mut taken = vec![false; ground_truth.len()];
        for (p, choice) in ranked.iter().zip(assignment) {
            let open: Vec<(usize, f64)> = (0..ground_truth.len())
                .filter(|&g| !taken[g])
                .filter_map(|g| overlap(p, ground_truth[g], threshold).map(|o| (g, o)))
                .collect();
            match choice {
                None if !open.is_empty() => return false,
                None => {}
                Some(g) => {
                    let Some(&(_, mine)) = open.iter().find(|(h, _)| h == g) else { return false };
                    let best = open.iter().map(|&(_, o)| o).fold(f64::NEG_INFINITY, f64::max);
                    let first_best = open.iter().find(|&&(_, o)| o == best).map(|&(h, _)| h);
                    if mine != best || first_best != Some(*g) {
                        return false;
                    }
                    taken[*g] = true;
                }
            }
        }
        true
    }

    fn enumerate(depth: usize, n_pred: usize, n_gt: usize, used: &mut Vec<bool>, current: &mut Vec<Option<usize>>, out: &mut Vec<Vec<Option<usize>>>) {
        if depth == n_pred {
            out.push(current.clone());
            return;
        }
        current.push(None);
        enumerate(depth + 1, n_pred, n_gt, used, current, out);
        current.pop();
        for g in 0..n_gt {
            if !used[g] {
                used[g] = true;
                current.push(Some(g));
                enumerate(depth + 1, n_pred, n_gt, used, current, out);
                current.pop();
                used[g] = false;
            }
        }
    }

    let mut all = Vec::new();
    enumerate(0, ranked.len(), ground_truth.len(), &mut vec![false; ground_truth.len()], &mut Vec::new(), &mut all);
    let valid: Vec<_> = all.into_iter().filter(|a| consistent(ranked, ground_truth, threshold, a)).collect();
    assert_eq!(valid.len(), 1, "the matching rule must determine a unique assignment");
    valid.into_iter().next().unwrap()
}

/// AP as `(1 / n_gt) * sum over true positives k of max_{j >= k} precision(j)`.
pub fn reference_ap(flags: &[bool], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let precision: Vec<f64> = (0..flags.len())
        .map(|k| flags[..=k].iter().filter(|&&f| f).count() as f64 / (k + 1) as f64)
        .collect();
    let total: f64 = (0..flags.len())
        .filter(|&k| flags[k])
        .map(|k| precision[k..].iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .sum();
    Some(total / n_gt as f64)
}

/// Per-category reference AP over `classes` categories.
pub fn reference_evaluate(
    predictions: &[PredictionTriplet],
    ground_truth: &[GroundTruthTriplet],
    classes: usize,
    threshold: f64,
) -> Vec<Option<f64>> {
    (0..classes)
        .map(|c| {
            let mut preds: Vec<(usize, &PredictionTriplet)> =
                predictions.iter().enumerate().filter(|(_, p)| p.category == c).collect();
            preds.sort_by(|(ia, a), (ib, b)| {
                b.score.partial_cmp(&a.score).unwrap().then(a.image.cmp(&b.image)).then(ia.cmp(ib))
            });
            let ranked: Vec<&PredictionTriplet> = preds.into_iter().map(|(_, p)| p).collect();
            let gts: Vec<&GroundTruthTriplet> = ground_truth.iter().filter(|g| g.category == c).collect();
            let flags: Vec<bool> =
                reference_assignment(&ranked, &gts, threshold).iter().map(Option::is_some).collect();
            reference_ap(&flags, gts.len())
        })
        .collect()
}

/// Tiny prediction and ground-truth sets with deliberately overlapping boxes.
pub fn random_eval_case(seed: u64) -> (Vec<PredictionTriplet>, Vec<GroundTruthTriplet>) {
    let mut rng = rng(seed);
    let palette = [
        BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap(),
        BoundingBox::new(1.0, 1.0, 11.0, 11.0).unwrap(),
        BoundingBox::new(0.0, 2.0, 10.0, 12.0).unwrap(),
        BoundingBox::new(3.0, 0.0, 13.0, 10.0).unwrap(),
        BoundingBox::new(20.0, 20.0, 30.0, 30.0).unwrap(),
    ];
    let images = ["a", "b"];
    let pick = |rng: &mut ChaCha8Rng| palette[rng.random_range(0..palette.len())];
    let n_gt = rng.random_range(0..=4);
    let gts = (0..n_gt)
        .map(|_| GroundTruthTriplet {
            image: images[rng.random_range(0..2)].into(),
            human: pick(&mut rng),
            object: pick(&mut rng),
            category: rng.random_range(0..2),
        })
        .collect();
    let n_pred = rng.random_range(0..=5);
    let preds = (0..n_pred)
        .map(|_| PredictionTriplet {
            image: images[rng.random_range(0..2)].into(),
            human: pick(&mut rng),
            object: pick(&mut rng),
            category: rng.random_range(0..2),
            score: rng.random_range(0.0..1.0),
        })
        .collect();
    (preds, gts)
}

/// Category ids grouped by `RegistryEntry::origin`, for set comparisons.
pub fn registry_keys(registry: &Registry) -> BTreeMap<PairKey, usize> {
    registry.iter().map(|e| (e.origin.clone(), e.category)).collect()
}

//! Human-object pair generation.
//!
//! Detections are thresholded separately for humans and non-humans, every
//! kept human is paired with every other kept detection (other humans
//! included), and each pair picks up its human, object and union embeddings
//! from a precomputed [`FeatureBundle`].

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{CropKind, Error, Result};
use crate::model::{Detection, Embedding};

/// Confidence filtering with a per-subset minimum and maximum budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairingRules {
    pub threshold: f32,
    pub min_keep: usize,
    pub max_keep: usize,
}

impl Default for PairingRules {
    fn default() -> Self {
        PairingRules { threshold: 0.2, min_keep: 3, max_keep: 15 }
    }
}

impl PairingRules {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::InvalidConfig(alloc::format!(
                "detection threshold {} outside [0, 1]",
                self.threshold
            )));
        }
        if self.min_keep == 0 || self.min_keep > self.max_keep {
            return Err(Error::InvalidConfig(alloc::format!(
                "need 1 <= min_keep ({}) <= max_keep ({})",
                self.min_keep,
                self.max_keep
            )));
        }
        Ok(())
    }
}

/// Indices of the detections that survived filtering, each list ordered by
/// confidence descending.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct KeptDetections {
    pub humans: Vec<usize>,
    pub objects: Vec<usize>,
}

fn select(detections: &[Detection], mut subset: Vec<usize>, rules: &PairingRules) -> Vec<usize> {
    subset.sort_by(|&a, &b| {
        detections[b]
            .confidence
            .partial_cmp(&detections[a].confidence)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let above = subset.iter().take_while(|&&i| detections[i].confidence >= rules.threshold).count();
    let keep = above.max(rules.min_keep.min(subset.len())).min(rules.max_keep);
    subset.truncate(keep);
    subset
}

/// Splits detections into humans and non-humans and applies `rules` to each.
pub fn filter_detections(detections: &[Detection], person: &str, rules: &PairingRules) -> KeptDetections {
    let (humans, objects): (Vec<usize>, Vec<usize>) =
        (0..detections.len()).partition(|&i| detections[i].label == person);
    KeptDetections { humans: select(detections, humans, rules), objects: select(detections, objects, rules) }
}

/// All ordered `(human, other)` pairs over the kept detections, self-pairs
/// excluded. Both loops run in ascending detection index.
pub fn enumerate_pairs(kept: &KeptDetections) -> Vec<(usize, usize)> {
    let mut humans = kept.humans.clone();
    humans.sort_unstable();
    let mut all: Vec<usize> = kept.humans.iter().chain(&kept.objects).copied().collect();
    all.sort_unstable();
    all.dedup();
    let mut pairs = Vec::with_capacity(humans.len() * all.len().saturating_sub(1));
    for &h in &humans {
        pairs.extend(all.iter().filter(|&&o| o != h).map(|&o| (h, o)));
    }
    pairs
}

/// Identifies a pair within a dataset.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PairKey {
    pub image: String,
    pub human: usize,
    pub object: usize,
}

/// Everything the scorer needs for one image: detections and crop embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub image: String,
    pub detections: Vec<Detection>,
    pub crops: BTreeMap<usize, Embedding>,
    pub unions: BTreeMap<(usize, usize), Embedding>,
}

impl FeatureBundle {
    pub fn dim(&self) -> Option<usize> {
        self.crops.values().chain(self.unions.values()).next().map(Embedding::dim)
    }

    /// Checks index ranges and that all embeddings share one dimension.
    pub fn validate(&self) -> Result<()> {
        let n = self.detections.len();
        let dim = self.dim();
        for (&i, e) in &self.crops {
            if i >= n {
                return Err(Error::BadCount { expected: n, found: i + 1 });
            }
            check_dim(dim, e)?;
        }
        for (&(h, o), e) in &self.unions {
            if h >= n || o >= n {
                return Err(Error::BadCount { expected: n, found: h.max(o) + 1 });
            }
            check_dim(dim, e)?;
        }
        Ok(())
    }

    fn crop(&self, index: usize) -> Result<&Embedding> {
        self.crops.get(&index).ok_or_else(|| Error::MissingEmbedding {
            image: self.image.clone(),
            crop: CropKind::Instance(index),
        })
    }

    fn union(&self, human: usize, object: usize) -> Result<&Embedding> {
        self.unions.get(&(human, object)).ok_or_else(|| Error::MissingEmbedding {
            image: self.image.clone(),
            crop: CropKind::Union(human, object),
        })
    }

    /// Filter, enumerate and attach in one step.
    pub fn proposals(&self, person: &str, rules: &PairingRules) -> Result<Vec<PairProposal>> {
        let kept = filter_detections(&self.detections, person, rules);
        attach_features(&enumerate_pairs(&kept), self)
    }
}

fn check_dim(dim: Option<usize>, e: &Embedding) -> Result<()> {
    match dim {
        Some(d) if d != e.dim() => Err(Error::DimensionMismatch { expected: d, found: e.dim() }),
        _ => Ok(()),
    }
}

/// A human-object pair with its three crop embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct PairProposal {
    pub key: PairKey,
    pub human: Detection,
    pub object: Detection,
    pub z_h: Embedding,
    pub z_o: Embedding,
    pub z_u: Embedding,
}

impl PairProposal {
    pub fn dim(&self) -> usize {
        self.z_u.dim()
    }
}

pub fn attach_features(pairs: &[(usize, usize)], bundle: &FeatureBundle) -> Result<Vec<PairProposal>> {
    pairs
        .iter()
        .map(|&(h, o)| {
            if h == o || h >= bundle.detections.len() || o >= bundle.detections.len() {
                return Err(Error::NotAPair(PairKey { image: bundle.image.clone(), human: h, object: o }));
            }
            Ok(PairProposal {
                key: PairKey { image: bundle.image.clone(), human: h, object: o },
                human: bundle.detections[h].clone(),
                object: bundle.detections[o].clone(),
                z_h: bundle.crop(h)?.clone(),
                z_o: bundle.crop(o)?.clone(),
                z_u: bundle.union(h, o)?.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BoundingBox;
    use alloc::vec;

    fn det(label: &str, confidence: f32) -> Detection {
        Detection::new(BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap(), label, confidence).unwrap()
    }

    fn confidences(dets: &[Detection], idx: &[usize]) -> Vec<f32> {
        idx.iter().map(|&i| dets[i].confidence).collect()
    }

    #[test]
    fn backfills_to_minimum() {
        let dets: Vec<_> = [0.1, 0.9, 0.05, 0.5].iter().map(|&c| det("person", c)).collect();
        let kept = filter_detections(&dets, "person", &PairingRules::default());
        assert_eq!(confidences(&dets, &kept.humans), [0.9, 0.5, 0.1]);
        assert!(kept.objects.is_empty());
    }

    #[test]
    fn truncates_to_maximum() {
        let dets: Vec<_> = (0..20).map(|i| det("cup", 0.2 + 0.03 * i as f32)).collect();
        let kept = filter_detections(&dets, "person", &PairingRules::default());
        assert_eq!(kept.objects, (5..20).rev().collect::<Vec<_>>());
    }

    #[test]
    fn minimum_unreachable() {
        let dets = vec![det("person", 0.7), det("person", 0.3)];
        let kept = filter_detections(&dets, "person", &PairingRules::default());
        assert_eq!(kept.humans, [0, 1]);
    }

    #[test]
    fn ties_keep_original_order() {
        let dets = vec![det("cup", 0.5), det("cup", 0.5), det("cup", 0.5)];
        let rules = PairingRules { threshold: 0.2, min_keep: 1, max_keep: 2 };
        assert_eq!(filter_detections(&dets, "person", &rules).objects, [0, 1]);
    }

    #[test]
    fn enumerate_examples() {
        let kept = KeptDetections { humans: vec![1, 0], objects: vec![2] };
        assert_eq!(enumerate_pairs(&kept), [(0, 1), (0, 2), (1, 0), (1, 2)]);
        let kept = KeptDetections { humans: vec![0], objects: vec![1] };
        assert_eq!(enumerate_pairs(&kept), [(0, 1)]);
        let kept = KeptDetections { humans: vec![], objects: vec![0, 1] };
        assert!(enumerate_pairs(&kept).is_empty());
    }

    fn unit(dim: usize, axis: usize) -> Embedding {
        let mut v = vec![0.0f32; dim];
        v[axis] = 1.0;
        Embedding::normalize(&v).unwrap()
    }

    fn bundle() -> FeatureBundle {
        let detections = vec![det("person", 0.9), det("person", 0.8), det("cup", 0.7)];
        let crops = (0..3).map(|i| (i, unit(4, i))).collect();
        let pairs = [(0, 1), (0, 2), (1, 0), (1, 2)];
        let unions = pairs.iter().map(|&p| (p, unit(4, 3))).collect();
        FeatureBundle { image: "img".into(), detections, crops, unions }
    }

    #[test]
    fn attach_complete_bundle() {
        let b = bundle();
        b.validate().unwrap();
        let props = b.proposals("person", &PairingRules::default()).unwrap();
        assert_eq!(props.len(), 4);
        assert_eq!(props[1].key, PairKey { image: "img".into(), human: 0, object: 2 });
        assert_eq!(props[1].z_o, unit(4, 2));
        assert!(attach_features(&[], &b).unwrap().is_empty());
    }

    #[test]
    fn attach_reports_missing_union() {
        let mut b = bundle();
        b.unions.remove(&(0, 2));
        let err = b.proposals("person", &PairingRules::default()).unwrap_err();
        assert_eq!(err, Error::MissingEmbedding { image: "img".into(), crop: CropKind::Union(0, 2) });
        let mut b = bundle();
        b.crops.remove(&1);
        let err = attach_features(&[(1, 2)], &b).unwrap_err();
        assert_eq!(err, Error::MissingEmbedding { image: "img".into(), crop: CropKind::Instance(1) });
    }

    #[test]
    fn rejects_bad_rules() {
        assert!(PairingRules { threshold: 1.5, ..Default::default() }.validate().is_err());
        assert!(PairingRules { threshold: 0.2, min_keep: 4, max_keep: 3 }.validate().is_err());
        assert!(PairingRules::default().validate().is_ok());
    }
}

//! The visual exemplar registry.
//!
//! Each interaction category holds at most `capacity` exemplars, each made of
//! a human, an object and a union embedding. Exemplars come either from
//! annotated images ([`build_labeled`]) or from unlabeled images whose
//! best-scoring interaction clears a confidence threshold ([`build_pseudo`]).

use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::attention::{Scorer, ScoringConfig};
use crate::error::{CropKind, Error, Result};
use crate::eval::GroundTruthTriplet;
use crate::model::{BoundingBox, Embedding, Vocabulary};
use crate::pairs::{FeatureBundle, PairKey, PairProposal, PairingRules};
use crate::signature::SignatureSet;

/// Default number of exemplars per category.
pub const DEFAULT_CAPACITY: usize = 8;

/// Default admission threshold for pseudolabels.
pub const DEFAULT_PSEUDO_THRESHOLD: f64 = 0.9;

/// Annotations are matched to detections at this IoU.
const ANNOTATION_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Source {
    Labeled,
    Pseudo { score: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistryEntry {
    pub category: usize,
    pub human: Embedding,
    pub object: Embedding,
    pub union: Embedding,
    pub source: Source,
    pub origin: PairKey,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registry {
    capacity: usize,
    entries: Vec<Vec<RegistryEntry>>,
}

impl Registry {
    pub fn empty(num_classes: usize, capacity: usize) -> Self {
        Registry { capacity, entries: alloc::vec![Vec::new(); num_classes] }
    }

    /// Rebuilds a registry from a flat entry list, keeping the given order
    /// within each category.
    pub fn from_entries(num_classes: usize, capacity: usize, entries: Vec<RegistryEntry>) -> Result<Self> {
        let mut registry = Registry::empty(num_classes, capacity);
        let mut dim = None;
        for entry in entries {
            let d = *dim.get_or_insert(entry.human.dim());
            for e in [&entry.human, &entry.object, &entry.union] {
                if e.dim() != d {
                    return Err(Error::DimensionMismatch { expected: d, found: e.dim() });
                }
            }
            let category = entry.category;
            if !registry.push(entry)? {
                return Err(Error::BadCount { expected: capacity, found: capacity + 1 });
            }
            debug_assert!(category < num_classes);
        }
        Ok(registry)
    }

    /// Appends `entry` unless its category is full. Returns whether it was added.
    pub fn push(&mut self, entry: RegistryEntry) -> Result<bool> {
        let slot = self.entries.get_mut(entry.category).ok_or(Error::UnknownCategory(entry.category))?;
        if slot.len() >= self.capacity {
            return Ok(false);
        }
        slot.push(entry);
        Ok(true)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn num_classes(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self, category: usize) -> &[RegistryEntry] {
        self.entries.get(category).map(Vec::as_slice).unwrap_or(&[])
    }

    /// All entries, category-major.
    pub fn iter(&self) -> impl Iterator<Item = &RegistryEntry> {
        self.entries.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.entries.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> Option<usize> {
        self.iter().next().map(|e| e.human.dim())
    }
}

fn best_match(
    detections: &[crate::model::Detection],
    target: &BoundingBox,
    accept: impl Fn(usize) -> bool,
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, d) in detections.iter().enumerate() {
        if !accept(i) {
            continue;
        }
        let overlap = d.bbox.iou(target);
        if overlap >= ANNOTATION_IOU && best.is_none_or(|(_, b)| overlap > b) {
            best = Some((i, overlap));
        }
    }
    best.map(|(i, _)| i)
}

/// Takes the first `capacity` annotations of each category, in the order given.
///
/// Each annotation is tied to the bundle detections that overlap its boxes
/// best (IoU of at least 0.5); the human side must be a person detection.
/// Annotations past a full category are not looked up.
pub fn build_labeled<'a>(
    annotations: &[GroundTruthTriplet],
    bundle: impl Fn(&str) -> Option<&'a FeatureBundle>,
    vocabulary: &Vocabulary,
    capacity: usize,
) -> Result<Registry> {
    let mut registry = Registry::empty(vocabulary.len(), capacity);
    for ann in annotations {
        vocabulary.category(ann.category)?;
        if registry.entries(ann.category).len() >= capacity {
            continue;
        }
        let unmatched = || Error::UnmatchedAnnotation { image: ann.image.clone(), category: ann.category };
        let b = bundle(&ann.image).ok_or_else(unmatched)?;
        let h = best_match(&b.detections, &ann.human, |i| vocabulary.is_person(&b.detections[i].label))
            .ok_or_else(unmatched)?;
        let o = best_match(&b.detections, &ann.object, |i| i != h).ok_or_else(unmatched)?;
        let missing = |crop| Error::MissingEmbedding { image: ann.image.clone(), crop };
        let entry = RegistryEntry {
            category: ann.category,
            human: b.crops.get(&h).ok_or_else(|| missing(CropKind::Instance(h)))?.clone(),
            object: b.crops.get(&o).ok_or_else(|| missing(CropKind::Instance(o)))?.clone(),
            union: b.unions.get(&(h, o)).ok_or_else(|| missing(CropKind::Union(h, o)))?.clone(),
            source: Source::Labeled,
            origin: PairKey { image: ann.image.clone(), human: h, object: o },
        };
        registry.push(entry)?;
    }
    Ok(registry)
}

/// Supplies one candidate label per pair for pseudolabeling.
pub trait PseudoLabeler {
    /// The pair's best `(category, score)`, or `None` if it has no candidate.
    fn label(&self, proposal: &PairProposal) -> Result<Option<(usize, f64)>>;
}

/// Scores pairs with the two textual heads only; the score is the fused
/// textual output for the argmax category.
pub struct TextualLabeler {
    scorer: Scorer,
}

impl TextualLabeler {
    pub fn new(vocabulary: &Vocabulary, signatures: &SignatureSet, config: &ScoringConfig) -> Result<Self> {
        Ok(TextualLabeler { scorer: Scorer::textual(vocabulary, signatures, config)? })
    }

    pub fn scorer(&self) -> &Scorer {
        &self.scorer
    }
}

impl PseudoLabeler for TextualLabeler {
    fn label(&self, proposal: &PairProposal) -> Result<Option<(usize, f64)>> {
        let panel = self.scorer.panel(proposal)?;
        Ok(self
            .scorer
            .candidates(proposal)
            .filter_map(|c| {
                let p = panel.fused()[c];
                p.is_finite().then_some((c, p))
            })
            .fold(None, |best: Option<(usize, f64)>, (c, p)| match best {
                Some((_, b)) if b >= p => best,
                _ => Some((c, p)),
            }))
    }
}

/// Builds a registry from unlabeled bundles.
///
/// Every pair of every bundle is labeled by `labeler`; a pair is admitted to
/// its argmax category when the score is at least `threshold`. Each category
/// keeps its `capacity` highest-scoring admissions, ties broken by pair key.
pub fn build_pseudo<'a>(
    bundles: impl IntoIterator<Item = &'a FeatureBundle>,
    labeler: &impl PseudoLabeler,
    vocabulary: &Vocabulary,
    rules: &PairingRules,
    threshold: f64,
    capacity: usize,
) -> Result<Registry> {
    let mut pools: Vec<Vec<RegistryEntry>> = alloc::vec![Vec::new(); vocabulary.len()];
    for bundle in bundles {
        for proposal in bundle.proposals(vocabulary.person_label(), rules)? {
            if let Some(entry) = admit(proposal, labeler, threshold)? {
                pools.get_mut(entry.category).ok_or(Error::UnknownCategory(entry.category))?.push(entry);
            }
        }
    }
    Ok(select_admissions(pools, capacity))
}

/// Scores one proposal and turns it into a pseudo entry if it clears `threshold`.
pub fn admit(proposal: PairProposal, labeler: &impl PseudoLabeler, threshold: f64) -> Result<Option<RegistryEntry>> {
    let Some((category, score)) = labeler.label(&proposal)? else {
        return Ok(None);
    };
    if score < threshold {
        return Ok(None);
    }
    Ok(Some(RegistryEntry {
        category,
        human: proposal.z_h,
        object: proposal.z_o,
        union: proposal.z_u,
        source: Source::Pseudo { score },
        origin: proposal.key,
    }))
}

fn pseudo_score(entry: &RegistryEntry) -> f64 {
    match entry.source {
        Source::Pseudo { score } => score,
        Source::Labeled => f64::INFINITY,
    }
}

/// Sorts each category's pool by score (descending, then pair key) and keeps
/// the top `capacity`. The result does not depend on pool order.
pub fn select_admissions(pools: Vec<Vec<RegistryEntry>>, capacity: usize) -> Registry {
    let entries = pools
        .into_iter()
        .map(|mut pool| {
            pool.sort_by(|a, b| {
                pseudo_score(b)
                    .partial_cmp(&pseudo_score(a))
                    .unwrap_or(Ordering::Equal)
                    .then_with(|| a.origin.cmp(&b.origin))
            });
            pool.truncate(capacity);
            pool
        })
        .collect();
    Registry { capacity, entries }
}

/// Empties the lists of held-out categories, leaving the others untouched.
pub fn filter_zero_shot(registry: &Registry, held_out: &BTreeSet<usize>) -> Result<Registry> {
    if let Some(&bad) = held_out.iter().find(|&&c| c >= registry.num_classes()) {
        return Err(Error::UnknownCategory(bad));
    }
    let mut out = registry.clone();
    for &c in held_out {
        out.entries[c].clear();
    }
    Ok(out)
}

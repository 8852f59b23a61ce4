//! In-memory stages behind the subcommands.

use std::collections::{BTreeMap, BTreeSet};

use hoi_core::eval::{aggregate, evaluate, split_seen_unseen, GroundTruthTriplet, PredictionTriplet, DEFAULT_IOU_THRESHOLD};
use hoi_core::registry::{build_labeled, build_pseudo, filter_zero_shot, PseudoLabeler, TextualLabeler};
use hoi_core::signature::{assemble_signature, fill_templates};
use hoi_core::{FeatureBundle, PairKey, PairProposal, PromptTemplate, Registry, Scorer, SignatureSet, Vocabulary};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::formats::PairScoreRecord;
use crate::tensor::Tensor;

/// Builds signatures from a `[categories * m, d]` tensor of raw description
/// embeddings, rows grouped by category id. Without explicit descriptions
/// the filled templates are recorded instead.
pub fn build_signatures(
    vocabulary: &Vocabulary,
    embeddings: &Tensor,
    descriptions: Option<&BTreeMap<usize, Vec<String>>>,
    templates: &[PromptTemplate],
    m: usize,
) -> Result<SignatureSet> {
    let expected = vocabulary.len() * m;
    if embeddings.num_rows() != expected {
        return Err(hoi_core::Error::BadCount { expected, found: embeddings.num_rows() }.into());
    }
    let signatures = vocabulary
        .categories()
        .iter()
        .map(|c| {
            let text = match descriptions {
                Some(d) => d.get(&c.id).cloned().ok_or(hoi_core::Error::MissingCategory(c.id))?,
                None => fill_templates(templates, c, m)?,
            };
            let rows: Vec<&[f32]> = (c.id * m..(c.id + 1) * m).filter_map(|r| embeddings.row(r)).collect();
            Ok(assemble_signature(c.clone(), &rows, text, m)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SignatureSet::new(vocabulary, signatures)?)
}

pub fn labeled_registry(
    vocabulary: &Vocabulary,
    bundles: &[FeatureBundle],
    annotations: &[GroundTruthTriplet],
    config: &RunConfig,
) -> Result<Registry> {
    let by_image: BTreeMap<&str, &FeatureBundle> = bundles.iter().map(|b| (b.image.as_str(), b)).collect();
    let registry = build_labeled(annotations, |id| by_image.get(id).copied(), vocabulary, config.j)?;
    Ok(filter_zero_shot(&registry, &config.held_out_set())?)
}

/// Pseudolabels from externally computed per-category scores.
pub struct ScoreTable {
    best: BTreeMap<PairKey, (usize, f64)>,
}

impl ScoreTable {
    /// Keeps, per pair, the highest score; ties go to the lower category id.
    pub fn new(records: &[PairScoreRecord], vocabulary: &Vocabulary) -> Result<Self> {
        let mut best: BTreeMap<PairKey, (usize, f64)> = BTreeMap::new();
        for r in records {
            vocabulary.category(r.category)?;
            if !r.score.is_finite() {
                return Err(Error::Format(format!("score for pair {:?} is not finite", (&r.image, r.human, r.object))));
            }
            let key = PairKey { image: r.image.clone(), human: r.human, object: r.object };
            let slot = best.entry(key).or_insert((r.category, r.score));
            if r.score > slot.1 || (r.score == slot.1 && r.category < slot.0) {
                *slot = (r.category, r.score);
            }
        }
        Ok(ScoreTable { best })
    }
}

impl PseudoLabeler for ScoreTable {
    fn label(&self, proposal: &PairProposal) -> hoi_core::Result<Option<(usize, f64)>> {
        Ok(self.best.get(&proposal.key).copied())
    }
}

pub fn pseudo_registry(
    vocabulary: &Vocabulary,
    bundles: &[FeatureBundle],
    labeler: &impl PseudoLabeler,
    config: &RunConfig,
) -> Result<Registry> {
    let registry =
        build_pseudo(bundles, labeler, vocabulary, &config.pairing(), config.pseudo.threshold, config.j)?;
    Ok(filter_zero_shot(&registry, &config.held_out_set())?)
}

pub fn textual_pseudo_registry(
    vocabulary: &Vocabulary,
    signatures: &SignatureSet,
    bundles: &[FeatureBundle],
    config: &RunConfig,
) -> Result<Registry> {
    let labeler = TextualLabeler::new(vocabulary, signatures, &config.scoring())?;
    pseudo_registry(vocabulary, bundles, &labeler, config)
}

fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Usage(format!("cannot start worker threads: {e}")))
}

/// Scores every pair of every bundle. Output order follows `bundles`, then
/// pair order, then score rank, regardless of `jobs`.
pub fn predict(
    vocabulary: &Vocabulary,
    signatures: &SignatureSet,
    registry: Option<&Registry>,
    bundles: &[FeatureBundle],
    config: &RunConfig,
    jobs: Option<usize>,
) -> Result<Vec<PredictionTriplet>> {
    let scoring = config.scoring();
    let visual = scoring.heads.vi || scoring.heads.vc;
    let filtered;
    let registry = match registry {
        Some(r) => {
            filtered = filter_zero_shot(r, &config.held_out_set())?;
            Some(&filtered)
        }
        None if visual => {
            return Err(Error::Usage("visual heads are enabled but no registry was given".into()));
        }
        None => None,
    };
    let scorer = Scorer::new(vocabulary, signatures, registry, &scoring)?;
    let rules = config.pairing();
    let per_image = thread_pool(jobs)?.install(|| {
        bundles
            .par_iter()
            .map(|bundle| -> Result<Vec<PredictionTriplet>> {
                let mut out = Vec::new();
                for proposal in bundle.proposals(vocabulary.person_label(), &rules)? {
                    for (category, score) in scorer.score_pair(&proposal)? {
                        out.push(PredictionTriplet {
                            image: bundle.image.clone(),
                            human: proposal.human.bbox,
                            object: proposal.object.bbox,
                            category,
                            score,
                        });
                    }
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(per_image.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotMetrics {
    pub seen: f64,
    pub unseen: f64,
    pub afull: f64,
    pub full: f64,
    pub held_out: Vec<usize>,
}

/// Mean APs as fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub full: f64,
    pub rare: f64,
    pub non_rare: f64,
    pub afull: f64,
    pub rare_categories: usize,
    pub non_rare_categories: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zero_shot: Option<ZeroShotMetrics>,
    pub per_category: Vec<Option<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

pub fn evaluate_predictions(
    vocabulary: &Vocabulary,
    predictions: &[PredictionTriplet],
    ground_truth: &[GroundTruthTriplet],
    held_out: &BTreeSet<usize>,
) -> Result<Metrics> {
    let aps = evaluate(predictions, ground_truth, vocabulary.len(), DEFAULT_IOU_THRESHOLD)?;
    let summary = aggregate(&aps, &vocabulary.rare_flags())?;
    let zero_shot = if held_out.is_empty() {
        None
    } else {
        let z = split_seen_unseen(&aps, held_out)?;
        Some(ZeroShotMetrics {
            seen: z.seen,
            unseen: z.unseen,
            afull: z.afull,
            full: z.full,
            held_out: held_out.iter().copied().collect(),
        })
    };
    Ok(Metrics {
        full: summary.full,
        rare: summary.rare,
        non_rare: summary.non_rare,
        afull: summary.afull,
        rare_categories: summary.rare_count,
        non_rare_categories: summary.non_rare_count,
        zero_shot,
        per_category: aps,
        config: None,
    })
}

impl Metrics {
    /// Human-readable table in percent.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<10} {:>9}\n", "split", "mAP (%)"));
        for (name, value) in [("full", self.full), ("rare", self.rare), ("non-rare", self.non_rare), ("afull", self.afull)] {
            out.push_str(&format!("{name:<10} {:>9.2}\n", 100.0 * value));
        }
        if let Some(z) = &self.zero_shot {
            for (name, value) in [("seen", z.seen), ("unseen", z.unseen), ("zs-afull", z.afull), ("zs-full", z.full)] {
                out.push_str(&format!("{name:<10} {:>9.2}\n", 100.0 * value));
            }
        }
        out
    }
}

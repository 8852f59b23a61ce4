//! Attention heads, negative bias, head orchestration and fusion.
//!
//! Every head compares a query vector against labeled key rows. The values
//! are one-hot class labels, so a head's output for class `i` is the mean
//! similarity between the query and the key rows of class `i`. Taking the
//! mean rather than the sum keeps all four heads on the cosine scale, which
//! the orchestrator's exponentials rely on.
//!
//! | head | query        | keys per class                         |
//! |------|--------------|----------------------------------------|
//! | TF   | union        | every signature row                    |
//! | TC   | union        | mean signature row                     |
//! | VI   | human‖object | every registry exemplar (human‖object) |
//! | VC   | union        | mean of the registry union embeddings  |
//!
//! Classes without key rows are masked and carry [`MASKED`].

use alloc::borrow::Cow;
use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::linalg::{dot_mixed, norm_f64};
use crate::model::{Embedding, Vocabulary};
use crate::pairs::PairProposal;
use crate::registry::Registry;
use crate::signature::SignatureSet;

/// Score of a masked (head, class) cell.
pub const MASKED: f64 = f64::NEG_INFINITY;

pub const DEFAULT_TAU: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HeadKind {
    TextualFine,
    TextualCoarse,
    VisualInstance,
    VisualContextual,
}

impl HeadKind {
    pub const ALL: [HeadKind; 4] =
        [HeadKind::TextualFine, HeadKind::TextualCoarse, HeadKind::VisualInstance, HeadKind::VisualContextual];

    pub fn is_visual(self) -> bool {
        matches!(self, HeadKind::VisualInstance | HeadKind::VisualContextual)
    }

    pub fn short_name(self) -> &'static str {
        match self {
            HeadKind::TextualFine => "tf",
            HeadKind::TextualCoarse => "tc",
            HeadKind::VisualInstance => "vi",
            HeadKind::VisualContextual => "vc",
        }
    }

    pub fn from_short_name(name: &str) -> Option<Self> {
        HeadKind::ALL.into_iter().find(|h| h.short_name() == name)
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

/// Which heads take part in scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadSet {
    pub tf: bool,
    pub tc: bool,
    pub vi: bool,
    pub vc: bool,
}

impl HeadSet {
    pub const ALL: HeadSet = HeadSet { tf: true, tc: true, vi: true, vc: true };
    pub const TEXTUAL: HeadSet = HeadSet { tf: true, tc: true, vi: false, vc: false };

    pub fn only(kind: HeadKind) -> Self {
        let mut set = HeadSet { tf: false, tc: false, vi: false, vc: false };
        set.set(kind, true);
        set
    }

    pub fn contains(&self, kind: HeadKind) -> bool {
        match kind {
            HeadKind::TextualFine => self.tf,
            HeadKind::TextualCoarse => self.tc,
            HeadKind::VisualInstance => self.vi,
            HeadKind::VisualContextual => self.vc,
        }
    }

    pub fn set(&mut self, kind: HeadKind, on: bool) {
        match kind {
            HeadKind::TextualFine => self.tf = on,
            HeadKind::TextualCoarse => self.tc = on,
            HeadKind::VisualInstance => self.vi = on,
            HeadKind::VisualContextual => self.vc = on,
        }
    }

    pub fn iter(self) -> impl Iterator<Item = HeadKind> {
        HeadKind::ALL.into_iter().filter(move |&h| self.contains(h))
    }
}

impl Default for HeadSet {
    fn default() -> Self {
        HeadSet::ALL
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoringConfig {
    /// Orchestrator temperature.
    pub tau: f64,
    /// Exponent on the product of detection confidences in the final score.
    pub gamma: f64,
    /// Weight of the negative bias on visual heads.
    pub lambda_neg: f64,
    pub heads: HeadSet,
    pub bias: bool,
    /// When off, heads are fused by a plain mean.
    pub mhom: bool,
    /// Only rank categories whose object class matches the object detection.
    pub object_filter: bool,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            tau: DEFAULT_TAU,
            gamma: 1.0,
            lambda_neg: 1.0,
            heads: HeadSet::ALL,
            bias: true,
            mhom: true,
            object_filter: true,
        }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return bad("tau must be positive and finite");
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return bad("gamma must be non-negative and finite");
        }
        if !self.lambda_neg.is_finite() {
            return bad("lambda_neg must be finite");
        }
        if self.heads.iter().next().is_none() {
            return bad("at least one head must be enabled");
        }
        Ok(())
    }
}

/// Labeled key rows of one head, stored row-major as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadKeys {
    kind: HeadKind,
    dim: usize,
    rows: Vec<f32>,
    labels: Vec<usize>,
    counts: Vec<usize>,
}

impl HeadKeys {
    fn new(kind: HeadKind, dim: usize, num_classes: usize) -> Self {
        HeadKeys { kind, dim, rows: Vec::new(), labels: Vec::new(), counts: vec![0; num_classes] }
    }

    fn push(&mut self, row: &[f32], class: usize) {
        debug_assert_eq!(row.len(), self.dim);
        self.rows.extend_from_slice(row);
        self.labels.push(class);
        self.counts[class] += 1;
    }

    fn push_f64(&mut self, row: &[f64], class: usize) {
        self.rows.extend(row.iter().map(|&v| v as f32));
        self.labels.push(class);
        self.counts[class] += 1;
    }

    /// Textual keys: all signature rows (fine) or one mean row per class (coarse).
    pub fn textual(kind: HeadKind, signatures: &SignatureSet) -> Result<Self> {
        let mut keys = HeadKeys::new(kind, signatures.dim(), signatures.len());
        for (class, signature) in signatures.iter().enumerate() {
            match kind {
                HeadKind::TextualFine => {
                    for row in signature.rows() {
                        keys.push(row.as_slice(), class);
                    }
                }
                HeadKind::TextualCoarse => keys.push(signature.coarse(), class),
                _ => return Err(Error::InvalidConfig(alloc::format!("{kind} is not a textual head"))),
            }
        }
        Ok(keys)
    }

    /// Visual keys from the registry. Instance keys are the renormalized
    /// human‖object concatenation of each exemplar; contextual keys are one
    /// mean union embedding per non-empty class.
    pub fn visual(kind: HeadKind, registry: &Registry, dim: usize) -> Result<Self> {
        let key_dim = match kind {
            HeadKind::VisualInstance => 2 * dim,
            HeadKind::VisualContextual => dim,
            _ => return Err(Error::InvalidConfig(alloc::format!("{kind} is not a visual head"))),
        };
        let mut keys = HeadKeys::new(kind, key_dim, registry.num_classes());
        for class in 0..registry.num_classes() {
            let entries = registry.entries(class);
            for e in entries {
                if e.human.dim() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, found: e.human.dim() });
                }
            }
            match kind {
                HeadKind::VisualInstance => {
                    for e in entries {
                        keys.push_f64(&concat_normalized(&e.human, &e.object)?, class);
                    }
                }
                _ if !entries.is_empty() => {
                    let mut mean = vec![0.0f64; dim];
                    for e in entries {
                        for (acc, &v) in mean.iter_mut().zip(e.union.as_slice()) {
                            *acc += f64::from(v);
                        }
                    }
                    let n = entries.len() as f64;
                    mean.iter_mut().for_each(|v| *v /= n);
                    keys.push_f64(&mean, class);
                }
                _ => {}
            }
        }
        Ok(keys)
    }

    pub fn kind(&self) -> HeadKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Key rows per class.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f32], usize)> {
        self.rows.chunks_exact(self.dim.max(1)).zip(self.labels.iter().copied())
    }

    /// The query this head uses for `proposal`.
    pub fn query(&self, proposal: &PairProposal) -> Result<Vec<f64>> {
        match self.kind {
            HeadKind::VisualInstance => concat_normalized(&proposal.z_h, &proposal.z_o),
            _ => Ok(proposal.z_u.to_f64()),
        }
    }
}

fn concat_normalized(a: &Embedding, b: &Embedding) -> Result<Vec<f64>> {
    let mut v: Vec<f64> = a.as_slice().iter().chain(b.as_slice()).map(|&x| f64::from(x)).collect();
    let norm = norm_f64(&v);
    if norm < crate::model::MIN_NORM {
        return Err(Error::ZeroNorm);
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

/// A query paired with the key rows it attends over.
#[derive(Debug, Clone)]
pub struct HeadInputs<'a> {
    pub query: Vec<f64>,
    pub keys: Cow<'a, HeadKeys>,
}

impl<'a> HeadInputs<'a> {
    pub fn new(query: Vec<f64>, keys: impl Into<Cow<'a, HeadKeys>>) -> Self {
        HeadInputs { query, keys: keys.into() }
    }

    pub fn kind(&self) -> HeadKind {
        self.keys.kind
    }
}

impl<'a> From<&'a HeadKeys> for Cow<'a, HeadKeys> {
    fn from(keys: &'a HeadKeys) -> Self {
        Cow::Borrowed(keys)
    }
}

impl From<HeadKeys> for Cow<'_, HeadKeys> {
    fn from(keys: HeadKeys) -> Self {
        Cow::Owned(keys)
    }
}

pub fn build_textual_inputs(
    kind: HeadKind,
    proposal: &PairProposal,
    signatures: &SignatureSet,
) -> Result<HeadInputs<'static>> {
    let keys = HeadKeys::textual(kind, signatures)?;
    Ok(HeadInputs::new(keys.query(proposal)?, keys))
}

pub fn build_visual_inputs(
    kind: HeadKind,
    proposal: &PairProposal,
    registry: &Registry,
) -> Result<HeadInputs<'static>> {
    let keys = HeadKeys::visual(kind, registry, proposal.dim())?;
    Ok(HeadInputs::new(keys.query(proposal)?, keys))
}

/// Per-class sums of query-key similarities.
fn class_sums(inputs: &HeadInputs<'_>) -> Result<Vec<f64>> {
    let keys = &inputs.keys;
    if inputs.query.len() != keys.dim {
        return Err(Error::DimensionMismatch { expected: keys.dim, found: inputs.query.len() });
    }
    let mut sums = vec![0.0f64; keys.num_classes()];
    for (row, class) in keys.rows() {
        sums[class] += dot_mixed(&inputs.query, row);
    }
    Ok(sums)
}

fn attention_from_sums(sums: &[f64], counts: &[usize]) -> Vec<f64> {
    sums.iter().zip(counts).map(|(&s, &n)| if n == 0 { MASKED } else { s / n as f64 }).collect()
}

fn bias_from_sums(sums: &[f64], counts: &[usize]) -> Vec<f64> {
    let total: f64 = sums.iter().sum();
    let rows: usize = counts.iter().sum();
    sums.iter()
        .zip(counts)
        .map(|(&s, &n)| {
            let others = rows - n;
            if others == 0 {
                0.0
            } else {
                -(total - s) / others as f64
            }
        })
        .collect()
}

/// Mean query-key similarity per class; [`MASKED`] where a class has no keys.
pub fn head_attention(inputs: &HeadInputs<'_>) -> Result<Vec<f64>> {
    Ok(attention_from_sums(&class_sums(inputs)?, inputs.keys.counts()))
}

/// Minus the mean similarity to the key rows of every other class.
pub fn negative_bias(inputs: &HeadInputs<'_>) -> Result<Vec<f64>> {
    Ok(bias_from_sums(&class_sums(inputs)?, inputs.keys.counts()))
}

/// Dense row-major `f64` matrix; rows are heads, columns are classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::BadCount { expected: rows * cols, found: data.len() });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch { expected: cols, found: r.len() });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix { rows: rows.len(), cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn column(&self, col: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.rows).map(move |r| self.get(r, col))
    }
}

/// Head contributions `C[h,i] = exp(a[h,i]/tau) / (1 + sum_k exp(a[k,i]/tau))`.
///
/// Evaluated in log space: the log of the denominator is a log-sum-exp over
/// `{0} ∪ {a[k,i]/tau}` shifted by its maximum. Masked cells get 0 and drop
/// out of the denominator.
pub fn mhom_contributions(scores: &Matrix, tau: f64) -> Matrix {
    let mut out = Matrix::zeros(scores.rows, scores.cols);
    for col in 0..scores.cols {
        let max = scores.column(col).filter(|a| a.is_finite()).fold(0.0f64, |m, a| m.max(a / tau));
        let mut acc = libm::exp(-max);
        for a in scores.column(col).filter(|a| a.is_finite()) {
            acc += libm::exp(a / tau - max);
        }
        let log_acc = libm::log(acc);
        for row in 0..scores.rows {
            let a = scores.get(row, col);
            if a.is_finite() {
                out.set(row, col, libm::exp((a / tau - max) - log_acc));
            }
        }
    }
    out
}

/// `p[i]` is the mean over unmasked heads of `A[h,i] * (1 + C[h,i])`;
/// [`MASKED`] when every head is masked for class `i`.
pub fn fuse(scores: &Matrix, contributions: &Matrix) -> Result<Vec<f64>> {
    if scores.rows != contributions.rows || scores.cols != contributions.cols {
        return Err(Error::DimensionMismatch { expected: scores.data.len(), found: contributions.data.len() });
    }
    Ok((0..scores.cols)
        .map(|col| {
            let (sum, n) = (0..scores.rows)
                .filter(|&row| scores.get(row, col).is_finite())
                .fold((0.0, 0usize), |(sum, n), row| {
                    (sum + scores.get(row, col) * (1.0 + contributions.get(row, col)), n + 1)
                });
            if n == 0 {
                MASKED
            } else {
                sum / n as f64
            }
        })
        .collect())
}

/// Per-head outputs, contributions and fused scores for one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorePanel {
    heads: Vec<HeadKind>,
    scores: Matrix,
    contributions: Matrix,
    fused: Vec<f64>,
}

impl ScorePanel {
    pub fn heads(&self) -> &[HeadKind] {
        &self.heads
    }

    /// Head outputs after the negative bias, one row per enabled head.
    pub fn scores(&self) -> &Matrix {
        &self.scores
    }

    pub fn contributions(&self) -> &Matrix {
        &self.contributions
    }

    pub fn fused(&self) -> &[f64] {
        &self.fused
    }

    pub fn is_masked(&self, head: usize, class: usize) -> bool {
        !self.scores.get(head, class).is_finite()
    }
}

/// Scoring engine holding the prepared keys of every enabled head.
#[derive(Debug, Clone)]
pub struct Scorer {
    config: ScoringConfig,
    heads: Vec<HeadKeys>,
    by_object: Vec<(alloc::string::String, Vec<usize>)>,
    num_classes: usize,
}

impl Scorer {
    /// `registry = None` scores with whatever textual heads are enabled; the
    /// visual heads are then masked everywhere.
    pub fn new(
        vocabulary: &Vocabulary,
        signatures: &SignatureSet,
        registry: Option<&Registry>,
        config: &ScoringConfig,
    ) -> Result<Self> {
        config.validate()?;
        if signatures.len() != vocabulary.len() {
            return Err(Error::MissingSignature(signatures.len().min(vocabulary.len())));
        }
        let empty;
        let registry = match registry {
            Some(r) => {
                if r.num_classes() != vocabulary.len() {
                    return Err(Error::BadCount { expected: vocabulary.len(), found: r.num_classes() });
                }
                r
            }
            None => {
                empty = Registry::empty(vocabulary.len(), 0);
                &empty
            }
        };
        let heads = config
            .heads
            .iter()
            .map(|kind| match kind.is_visual() {
                false => HeadKeys::textual(kind, signatures),
                true => HeadKeys::visual(kind, registry, signatures.dim()),
            })
            .collect::<Result<Vec<_>>>()?;
        let by_object = vocabulary
            .objects()
            .map(|o| (o.into(), vocabulary.categories_for_object(o).to_vec()))
            .collect();
        Ok(Scorer { config: *config, heads, by_object, num_classes: vocabulary.len() })
    }

    /// Textual heads only, regardless of `config.heads`.
    pub fn textual(vocabulary: &Vocabulary, signatures: &SignatureSet, config: &ScoringConfig) -> Result<Self> {
        let config = ScoringConfig { heads: HeadSet::TEXTUAL, ..*config };
        Scorer::new(vocabulary, signatures, None, &config)
    }

    pub fn config(&self) -> &ScoringConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn head_keys(&self) -> &[HeadKeys] {
        &self.heads
    }

    pub fn inputs<'s>(&'s self, kind: HeadKind, proposal: &PairProposal) -> Option<Result<HeadInputs<'s>>> {
        let keys = self.heads.iter().find(|k| k.kind == kind)?;
        Some(keys.query(proposal).map(|q| HeadInputs::new(q, keys)))
    }

    pub fn panel(&self, proposal: &PairProposal) -> Result<ScorePanel> {
        let mut rows = Vec::with_capacity(self.heads.len());
        for keys in &self.heads {
            let inputs = HeadInputs::new(keys.query(proposal)?, keys);
            let sums = class_sums(&inputs)?;
            let mut scores = attention_from_sums(&sums, keys.counts());
            if self.config.bias && keys.kind.is_visual() {
                let bias = bias_from_sums(&sums, keys.counts());
                for (s, b) in scores.iter_mut().zip(bias) {
                    *s += self.config.lambda_neg * b;
                }
            }
            rows.push(scores);
        }
        let scores = Matrix::from_rows(&rows)?;
        let contributions = if self.config.mhom {
            mhom_contributions(&scores, self.config.tau)
        } else {
            Matrix::zeros(scores.rows, scores.cols)
        };
        let fused = fuse(&scores, &contributions)?;
        Ok(ScorePanel { heads: self.heads.iter().map(|k| k.kind).collect(), scores, contributions, fused })
    }

    /// Categories eligible for `proposal`.
    pub fn candidates<'s>(&'s self, proposal: &PairProposal) -> Box<dyn Iterator<Item = usize> + 's> {
        if !self.config.object_filter {
            return Box::new(0..self.num_classes);
        }
        let ids = self
            .by_object
            .iter()
            .find(|(label, _)| *label == proposal.object.label)
            .map_or(&[][..], |(_, ids)| ids.as_slice());
        Box::new(ids.iter().copied())
    }

    /// Final triplet scores `p[i] * (conf_h * conf_o)^gamma`, sorted
    /// descending with ties broken by category id. Masked categories are
    /// left out.
    pub fn score_pair(&self, proposal: &PairProposal) -> Result<Vec<(usize, f64)>> {
        let panel = self.panel(proposal)?;
        let confidence = f64::from(proposal.human.confidence) * f64::from(proposal.object.confidence);
        let weight = libm::pow(confidence, self.config.gamma);
        let mut ranked: Vec<(usize, f64)> = self
            .candidates(proposal)
            .filter(|&c| panel.fused[c].is_finite())
            .map(|c| (c, panel.fused[c] * weight))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(ranked)
    }
}

/// One-shot scoring of a single pair. Prefer [`Scorer`] for many pairs.
pub fn score_pair(
    proposal: &PairProposal,
    vocabulary: &Vocabulary,
    signatures: &SignatureSet,
    registry: Option<&Registry>,
    config: &ScoringConfig,
) -> Result<Vec<(usize, f64)>> {
    Scorer::new(vocabulary, signatures, registry, config)?.score_pair(proposal)
}

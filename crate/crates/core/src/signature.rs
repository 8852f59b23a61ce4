//! Interaction signatures: prompt templates filled per category and the
//! matrix of embedded descriptions that serves as textual keys.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{Embedding, InteractionCategory, Vocabulary};

pub const VERB_PLACEHOLDER: &str = "{verb}";
pub const OBJECT_PLACEHOLDER: &str = "{object}";

/// Default number of descriptions per interaction category.
pub const DEFAULT_DESCRIPTIONS: usize = 50;

/// A prompt containing `{verb}` and `{object}` exactly once each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

impl PromptTemplate {
    /// Wraps `text` without checking it; [`fill_templates`] validates.
    pub fn new(text: impl Into<String>) -> Self {
        PromptTemplate { text: text.into() }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn validate(&self) -> Result<()> {
        for placeholder in [VERB_PLACEHOLDER, OBJECT_PLACEHOLDER] {
            if self.text.matches(placeholder).count() != 1 {
                return Err(Error::PlaceholderMissing { template: self.text.clone(), placeholder });
            }
        }
        Ok(())
    }

    /// Substitutes both placeholders in a single left-to-right pass, so a verb
    /// that itself contains `{object}` is never substituted twice.
    pub fn fill(&self, verb: &str, object: &str) -> Result<String> {
        self.validate()?;
        let verb_at = self.text.find(VERB_PLACEHOLDER).unwrap_or_default();
        let object_at = self.text.find(OBJECT_PLACEHOLDER).unwrap_or_default();
        let mut spans = [
            (verb_at, VERB_PLACEHOLDER.len(), verb),
            (object_at, OBJECT_PLACEHOLDER.len(), object),
        ];
        spans.sort_by_key(|s| s.0);
        let mut out = String::with_capacity(self.text.len() + verb.len() + object.len());
        let mut cursor = 0;
        for (at, len, value) in spans {
            out.push_str(&self.text[cursor..at]);
            out.push_str(value);
            cursor = at + len;
        }
        out.push_str(&self.text[cursor..]);
        Ok(out)
    }
}

/// Fills every template with the category's verb and object, preserving order.
pub fn fill_templates(
    templates: &[PromptTemplate],
    category: &InteractionCategory,
    expected: usize,
) -> Result<Vec<String>> {
    if templates.len() != expected {
        return Err(Error::BadCount { expected, found: templates.len() });
    }
    if category.verb.is_empty() || category.object.is_empty() {
        return Err(Error::InvalidConfig(alloc::format!(
            "category {} has an empty verb or object",
            category.id
        )));
    }
    templates.iter().map(|t| t.fill(&category.verb, &category.object)).collect()
}

/// The embedded descriptions of one category plus their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionSignature {
    pub category: InteractionCategory,
    rows: Vec<Embedding>,
    coarse: Vec<f32>,
    descriptions: Vec<String>,
}

impl InteractionSignature {
    pub fn rows(&self) -> &[Embedding] {
        &self.rows
    }

    /// Arithmetic mean of the rows. Not renormalized, so its norm is at most one.
    pub fn coarse(&self) -> &[f32] {
        &self.coarse
    }

    pub fn descriptions(&self) -> &[String] {
        &self.descriptions
    }

    pub fn dim(&self) -> usize {
        self.coarse.len()
    }
}

/// Builds a signature from `expected` raw description embeddings.
///
/// Rows are normalized here; the coarse vector is the per-coordinate mean of
/// the normalized rows.
pub fn assemble_signature<R: AsRef<[f32]>>(
    category: InteractionCategory,
    embeddings: &[R],
    descriptions: Vec<String>,
    expected: usize,
) -> Result<InteractionSignature> {
    if embeddings.len() != expected || expected == 0 {
        return Err(Error::BadCount { expected, found: embeddings.len() });
    }
    if descriptions.len() != expected {
        return Err(Error::BadCount { expected, found: descriptions.len() });
    }
    let dim = embeddings[0].as_ref().len();
    let rows = embeddings
        .iter()
        .map(|row| {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: row.len() });
            }
            Embedding::normalize(row)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut sum = alloc::vec![0.0f64; dim];
    for row in &rows {
        for (acc, &v) in sum.iter_mut().zip(row.as_slice()) {
            *acc += f64::from(v);
        }
    }
    let count = rows.len() as f64;
    let coarse = sum.into_iter().map(|s| (s / count) as f32).collect();
    Ok(InteractionSignature { category, rows, coarse, descriptions })
}

/// One signature per vocabulary category, indexed by category id.
#[derive(Debug, Clone, PartialEq)]
pub struct SignatureSet {
    per_category: usize,
    dim: usize,
    signatures: Vec<InteractionSignature>,
}

impl SignatureSet {
    /// Orders `signatures` by category id and checks they cover `vocabulary`.
    pub fn new(vocabulary: &Vocabulary, mut signatures: Vec<InteractionSignature>) -> Result<Self> {
        signatures.sort_by_key(|s| s.category.id);
        let first = signatures.first().ok_or(Error::MissingCategory(0))?;
        let per_category = first.rows.len();
        let dim = first.dim();
        for (index, category) in vocabulary.categories().iter().enumerate() {
            let signature = signatures.get(index).ok_or(Error::MissingCategory(index))?;
            if signature.category.id != index {
                return Err(Error::MissingCategory(index));
            }
            if signature.category != *category {
                return Err(Error::InvalidConfig(alloc::format!(
                    "signature {index} does not match the vocabulary entry"
                )));
            }
            if signature.rows.len() != per_category {
                return Err(Error::BadCount { expected: per_category, found: signature.rows.len() });
            }
            if signature.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: signature.dim() });
            }
        }
        if signatures.len() != vocabulary.len() {
            return Err(Error::UnknownCategory(vocabulary.len()));
        }
        Ok(SignatureSet { per_category, dim, signatures })
    }

    pub fn len(&self) -> usize {
        self.signatures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signatures.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of description rows per category.
    pub fn per_category(&self) -> usize {
        self.per_category
    }

    pub fn get(&self, id: usize) -> Result<&InteractionSignature> {
        self.signatures.get(id).ok_or(Error::MissingSignature(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &InteractionSignature> {
        self.signatures.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn category(verb: &str, object: &str) -> InteractionCategory {
        InteractionCategory { id: 0, verb: verb.into(), object: object.into(), rare: false }
    }

    fn strings(n: usize) -> Vec<String> {
        (0..n).map(|i| i.to_string()).collect()
    }

    #[test]
    fn fill_examples() {
        let t = [PromptTemplate::new("a person {verb} a {object}")];
        assert_eq!(fill_templates(&t, &category("ride", "horse"), 1).unwrap(), ["a person ride a horse"]);
        let t = [PromptTemplate::new("{object} being {verb}")];
        assert_eq!(fill_templates(&t, &category("feed", "sheep"), 1).unwrap(), ["sheep being feed"]);
        let t = [PromptTemplate::new("a person and a {object}")];
        assert!(matches!(
            fill_templates(&t, &category("ride", "horse"), 1),
            Err(Error::PlaceholderMissing { placeholder: "{verb}", .. })
        ));
    }

    #[test]
    fn fill_rejects_bad_count_and_repeats() {
        let t = [PromptTemplate::new("{verb} {object}")];
        assert_eq!(
            fill_templates(&t, &category("ride", "horse"), 2),
            Err(Error::BadCount { expected: 2, found: 1 })
        );
        let t = [PromptTemplate::new("{verb} {verb} {object}")];
        assert!(fill_templates(&t, &category("ride", "horse"), 1).is_err());
    }

    #[test]
    fn fill_does_not_resubstitute() {
        let t = PromptTemplate::new("{verb} the {object}");
        assert_eq!(t.fill("{object}", "cup").unwrap(), "{object} the cup");
    }

    #[test]
    fn assemble_examples() {
        let sig = assemble_signature(category("a", "b"), &[vec![0.0f32, 1.0]], strings(1), 1).unwrap();
        assert_eq!(sig.rows()[0].as_slice(), &[0.0, 1.0]);
        assert_eq!(sig.coarse(), &[0.0, 1.0]);

        let sig = assemble_signature(
            category("a", "b"),
            &[vec![1.0f32, 0.0, 0.0], vec![0.0, 1.0, 0.0]],
            strings(2),
            2,
        )
        .unwrap();
        assert_eq!(sig.coarse(), &[0.5, 0.5, 0.0]);

        let rows = vec![vec![1.0f32, 0.0]; 49];
        assert_eq!(
            assemble_signature(category("a", "b"), &rows, strings(49), 50),
            Err(Error::BadCount { expected: 50, found: 49 })
        );
        assert_eq!(
            assemble_signature(category("a", "b"), &[vec![0.0f32, 0.0]], strings(1), 1),
            Err(Error::ZeroNorm)
        );
    }
}

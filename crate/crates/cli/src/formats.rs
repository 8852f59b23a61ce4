//! JSON manifests and their tensor side files.
//!
//! | file                         | contents                                        |
//! |------------------------------|-------------------------------------------------|
//! | `vocabulary.json`            | object classes and interaction categories       |
//! | `signatures.json` + `.dytf`  | descriptions and `[rows, d]` embedding blocks   |
//! | `bundles/<image>.json/.dytf` | detections plus crop and union embeddings       |
//! | `registry.json` + `.dytf`    | exemplar metadata; three rows (h, o, u) each    |
//! | ground truth                 | JSON array of triplets                          |
//! | `predictions.jsonl`          | one scored triplet per line                     |
//!
//! Tensor paths inside a manifest are relative to the manifest's directory.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use hoi_core::eval::{GroundTruthTriplet, PredictionTriplet};
use hoi_core::signature::assemble_signature;
use hoi_core::{
    BoundingBox, Detection, Embedding, FeatureBundle, InteractionCategory, PairKey, Registry, RegistryEntry,
    SignatureSet, Source, Vocabulary,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{read_tensor, write_tensor, Tensor};

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path: path.into(), source })
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json { path: path.into(), source })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| Error::Json { path: path.into(), source })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: impl IntoIterator<Item = T>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut out, &record).map_err(|source| Error::Json { path: path.into(), source })?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn create_dir(path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn sibling(manifest: &Path, name: &str) -> PathBuf {
    manifest.parent().unwrap_or(Path::new(".")).join(name)
}

fn to_box(corners: [f32; 4]) -> Result<BoundingBox> {
    Ok(BoundingBox::new(corners[0], corners[1], corners[2], corners[3])?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRecord {
    pub id: usize,
    pub verb: String,
    pub object: String,
    pub rare: bool,
}

impl From<&InteractionCategory> for CategoryRecord {
    fn from(c: &InteractionCategory) -> Self {
        CategoryRecord { id: c.id, verb: c.verb.clone(), object: c.object.clone(), rare: c.rare }
    }
}

impl From<CategoryRecord> for InteractionCategory {
    fn from(c: CategoryRecord) -> Self {
        InteractionCategory { id: c.id, verb: c.verb, object: c.object, rare: c.rare }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabularyFile {
    pub person: String,
    pub objects: Vec<String>,
    pub categories: Vec<CategoryRecord>,
}

pub fn load_vocabulary(path: impl AsRef<Path>) -> Result<Vocabulary> {
    let file: VocabularyFile = read_json(path)?;
    Ok(Vocabulary::new(file.person, file.objects, file.categories.into_iter().map(Into::into).collect())?)
}

pub fn save_vocabulary(vocabulary: &Vocabulary, path: impl AsRef<Path>) -> Result<()> {
    let file = VocabularyFile {
        person: vocabulary.person_label().into(),
        objects: vocabulary.objects().map(String::from).collect(),
        categories: vocabulary.categories().iter().map(Into::into).collect(),
    };
    write_json(path, &file)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureRecord {
    pub id: usize,
    pub verb: String,
    pub object: String,
    pub rare: bool,
    pub descriptions: Vec<String>,
    /// First row of this category's block in the tensor.
    pub offset: usize,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureManifest {
    pub dim: usize,
    pub descriptions_per_category: usize,
    pub tensor: String,
    /// Set when descriptions fell back to the filled templates.
    #[serde(default)]
    pub degraded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    pub categories: Vec<SignatureRecord>,
}

/// Loads one signature per vocabulary category. Rows are normalized on load.
pub fn load_signature_set(manifest_path: impl AsRef<Path>, vocabulary: &Vocabulary) -> Result<SignatureSet> {
    let manifest_path = manifest_path.as_ref();
    let manifest: SignatureManifest = read_json(manifest_path)?;
    let tensor = read_tensor(sibling(manifest_path, &manifest.tensor))?;
    if tensor.row_len() != manifest.dim {
        return Err(hoi_core::Error::DimensionMismatch { expected: manifest.dim, found: tensor.row_len() }.into());
    }
    let by_id: BTreeMap<usize, &SignatureRecord> = manifest.categories.iter().map(|r| (r.id, r)).collect();
    let m = manifest.descriptions_per_category;
    let signatures = vocabulary
        .categories()
        .iter()
        .map(|category| {
            let record = by_id.get(&category.id).ok_or(hoi_core::Error::MissingCategory(category.id))?;
            if record.verb != category.verb || record.object != category.object {
                return Err(Error::Format(format!(
                    "signature {} is ({}, {}), vocabulary says ({}, {})",
                    record.id, record.verb, record.object, category.verb, category.object
                )));
            }
            let rows = (record.offset..record.offset + record.rows)
                .map(|r| {
                    tensor.row(r).ok_or_else(|| {
                        Error::Format(format!("signature {} reads past the end of the tensor", record.id))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(assemble_signature(category.clone(), &rows, record.descriptions.clone(), m)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SignatureSet::new(vocabulary, signatures)?)
}

pub fn save_signature_set(
    signatures: &SignatureSet,
    dir: impl AsRef<Path>,
    degraded: bool,
    config: Option<serde_json::Value>,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    let m = signatures.per_category();
    let mut rows: Vec<&[f32]> = Vec::with_capacity(signatures.len() * m);
    let mut categories = Vec::with_capacity(signatures.len());
    for s in signatures.iter() {
        categories.push(SignatureRecord {
            id: s.category.id,
            verb: s.category.verb.clone(),
            object: s.category.object.clone(),
            rare: s.category.rare,
            descriptions: s.descriptions().to_vec(),
            offset: rows.len(),
            rows: s.rows().len(),
        });
        rows.extend(s.rows().iter().map(Embedding::as_slice));
    }
    write_tensor(&Tensor::from_rows(signatures.dim(), &rows)?, dir.join("signatures.dytf"))?;
    let manifest = SignatureManifest {
        dim: signatures.dim(),
        descriptions_per_category: m,
        tensor: "signatures.dytf".into(),
        degraded,
        config,
        categories,
    };
    let path = dir.join("signatures.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    #[serde(rename = "box")]
    pub bbox: [f32; 4],
    pub label: String,
    pub confidence: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropRecord {
    pub detection: usize,
    pub row: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnionRecord {
    pub human: usize,
    pub object: usize,
    pub row: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleFile {
    pub image: String,
    pub tensor: String,
    pub detections: Vec<DetectionRecord>,
    pub crops: Vec<CropRecord>,
    pub unions: Vec<UnionRecord>,
}

/// Reads one bundle; labels are checked against `vocabulary` and every
/// embedding is normalized.
pub fn load_bundle(path: impl AsRef<Path>, vocabulary: &Vocabulary) -> Result<FeatureBundle> {
    let path = path.as_ref();
    let file: BundleFile = read_json(path)?;
    let tensor = read_tensor(sibling(path, &file.tensor))?;
    let row = |r: usize| -> Result<Embedding> {
        let values = tensor
            .row(r)
            .ok_or_else(|| Error::Format(format!("{}: row {r} is outside the tensor", path.display())))?;
        Ok(Embedding::normalize(values)?)
    };
    let detections = file
        .detections
        .iter()
        .map(|d| {
            if !vocabulary.knows_label(&d.label) {
                return Err(hoi_core::Error::UnknownLabel(d.label.clone()).into());
            }
            Ok(Detection::new(to_box(d.bbox)?, d.label.clone(), d.confidence)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let crops = file.crops.iter().map(|c| Ok((c.detection, row(c.row)?))).collect::<Result<_>>()?;
    let unions = file.unions.iter().map(|u| Ok(((u.human, u.object), row(u.row)?))).collect::<Result<_>>()?;
    let bundle = FeatureBundle { image: file.image, detections, crops, unions };
    bundle.validate()?;
    Ok(bundle)
}

/// Writes `<dir>/<image>.json` and `<dir>/<image>.dytf`.
pub fn save_bundle(bundle: &FeatureBundle, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    let dim = bundle.dim().unwrap_or(0);
    let mut rows: Vec<&[f32]> = Vec::new();
    let crops = bundle
        .crops
        .iter()
        .map(|(&detection, e)| {
            rows.push(e.as_slice());
            CropRecord { detection, row: rows.len() - 1 }
        })
        .collect();
    let unions = bundle
        .unions
        .iter()
        .map(|(&(human, object), e)| {
            rows.push(e.as_slice());
            UnionRecord { human, object, row: rows.len() - 1 }
        })
        .collect();
    let tensor_name = format!("{}.dytf", bundle.image);
    write_tensor(&Tensor::from_rows(dim, &rows)?, dir.join(&tensor_name))?;
    let file = BundleFile {
        image: bundle.image.clone(),
        tensor: tensor_name,
        detections: bundle
            .detections
            .iter()
            .map(|d| DetectionRecord { bbox: d.bbox.corners(), label: d.label.clone(), confidence: d.confidence })
            .collect(),
        crops,
        unions,
    };
    let path = dir.join(format!("{}.json", bundle.image));
    write_json(&path, &file)?;
    Ok(path)
}

/// Bundle manifests in `dir`, sorted by file name.
pub fn bundle_paths(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|ext| ext == "json") {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

pub fn load_bundles(dir: impl AsRef<Path>, vocabulary: &Vocabulary) -> Result<Vec<FeatureBundle>> {
    bundle_paths(dir)?.iter().map(|p| load_bundle(p, vocabulary)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Labeled,
    Pseudo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryRecord {
    pub category: usize,
    pub source: SourceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    pub image: String,
    pub human: usize,
    pub object: usize,
    /// First of three consecutive rows: human, object, union.
    pub row: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryManifest {
    pub capacity: usize,
    pub num_categories: usize,
    pub dim: usize,
    pub tensor: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    pub entries: Vec<RegistryRecord>,
}

pub fn save_registry(
    registry: &Registry,
    dir: impl AsRef<Path>,
    dim: usize,
    config: Option<serde_json::Value>,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    let mut rows: Vec<&[f32]> = Vec::with_capacity(3 * registry.len());
    let entries = registry
        .iter()
        .map(|e| {
            let row = rows.len();
            rows.extend([e.human.as_slice(), e.object.as_slice(), e.union.as_slice()]);
            let (source, score) = match e.source {
                Source::Labeled => (SourceKind::Labeled, None),
                Source::Pseudo { score } => (SourceKind::Pseudo, Some(score)),
            };
            RegistryRecord {
                category: e.category,
                source,
                score,
                image: e.origin.image.clone(),
                human: e.origin.human,
                object: e.origin.object,
                row,
            }
        })
        .collect();
    write_tensor(&Tensor::from_rows(dim, &rows)?, dir.join("registry.dytf"))?;
    let manifest = RegistryManifest {
        capacity: registry.capacity(),
        num_categories: registry.num_classes(),
        dim,
        tensor: "registry.dytf".into(),
        config,
        entries,
    };
    let path = dir.join("registry.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Loads a registry written by [`save_registry`]; embeddings keep their bits.
pub fn load_registry(path: impl AsRef<Path>) -> Result<Registry> {
    let path = path.as_ref();
    let manifest: RegistryManifest = read_json(path)?;
    let tensor = read_tensor(sibling(path, &manifest.tensor))?;
    if tensor.row_len() != manifest.dim && !manifest.entries.is_empty() {
        return Err(hoi_core::Error::DimensionMismatch { expected: manifest.dim, found: tensor.row_len() }.into());
    }
    let row = |r: usize| -> Result<Embedding> {
        let values = tensor
            .row(r)
            .ok_or_else(|| Error::Format(format!("{}: row {r} is outside the tensor", path.display())))?;
        Ok(Embedding::from_unit(values.to_vec())?)
    };
    let entries = manifest
        .entries
        .iter()
        .map(|r| {
            let source = match (r.source, r.score) {
                (SourceKind::Labeled, None) => Source::Labeled,
                (SourceKind::Pseudo, Some(score)) => Source::Pseudo { score },
                _ => return Err(Error::Format(format!("registry entry at row {} has an inconsistent score", r.row))),
            };
            Ok(RegistryEntry {
                category: r.category,
                human: row(r.row)?,
                object: row(r.row + 1)?,
                union: row(r.row + 2)?,
                source,
                origin: PairKey { image: r.image.clone(), human: r.human, object: r.object },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Registry::from_entries(manifest.num_categories, manifest.capacity, entries)?)
}

/// A triplet as stored on disk; `score` is present for predictions only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub image: String,
    pub human: [f32; 4],
    pub object: [f32; 4],
    pub category: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl From<&GroundTruthTriplet> for TripletRecord {
    fn from(t: &GroundTruthTriplet) -> Self {
        TripletRecord {
            image: t.image.clone(),
            human: t.human.corners(),
            object: t.object.corners(),
            category: t.category,
            score: None,
        }
    }
}

impl From<&PredictionTriplet> for TripletRecord {
    fn from(t: &PredictionTriplet) -> Self {
        TripletRecord {
            image: t.image.clone(),
            human: t.human.corners(),
            object: t.object.corners(),
            category: t.category,
            score: Some(t.score),
        }
    }
}

impl TripletRecord {
    pub fn to_ground_truth(&self) -> Result<GroundTruthTriplet> {
        Ok(GroundTruthTriplet {
            image: self.image.clone(),
            human: to_box(self.human)?,
            object: to_box(self.object)?,
            category: self.category,
        })
    }

    pub fn to_prediction(&self) -> Result<PredictionTriplet> {
        let score = self.score.filter(|s| s.is_finite()).ok_or_else(|| {
            Error::Format(format!("prediction in image `{}` has no finite score", self.image))
        })?;
        Ok(PredictionTriplet {
            image: self.image.clone(),
            human: to_box(self.human)?,
            object: to_box(self.object)?,
            category: self.category,
            score,
        })
    }
}

pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<Vec<GroundTruthTriplet>> {
    read_json::<Vec<TripletRecord>>(path)?.iter().map(TripletRecord::to_ground_truth).collect()
}

pub fn save_ground_truth(triplets: &[GroundTruthTriplet], path: impl AsRef<Path>) -> Result<()> {
    write_json(path, &triplets.iter().map(TripletRecord::from).collect::<Vec<_>>())
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionTriplet>> {
    read_jsonl::<TripletRecord>(path)?.iter().map(TripletRecord::to_prediction).collect()
}

pub fn save_predictions(predictions: &[PredictionTriplet], path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(path, predictions.iter().map(TripletRecord::from))
}

/// One externally computed pseudolabel score, e.g. a multimodal model's
/// yes-likelihood for "is the person {verb} the {object}?".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScoreRecord {
    pub image: String,
    pub human: usize,
    pub object: usize,
    pub category: usize,
    pub score: f64,
}

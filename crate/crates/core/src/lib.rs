//! Training-free human-object interaction (HOI) scoring.
//!
//! Detected human-object pairs are classified by a small set of attention
//! heads. Two textual heads compare the pair's union embedding against
//! embedded interaction descriptions, and two visual heads compare the pair
//! against a registry of exemplars. A temperature-controlled orchestrator
//! reweights every head per interaction class before the outputs are fused.
//!
//! The crate is `no_std` (it only needs `alloc`) and performs no IO. File
//! formats, configuration and the command-line front end live in `hoi-cli`.
//!
//! Module map:
//!
//! - [`model`]: embeddings, boxes, detections and the interaction vocabulary
//! - [`signature`]: prompt templates and interaction signatures
//! - [`pairs`]: detection filtering, pair enumeration and feature attachment
//! - [`attention`]: attention heads, negative bias, orchestration and fusion
//! - [`registry`]: the visual exemplar registry (labeled and pseudolabeled)
//! - [`eval`]: triplet matching, average precision and split aggregation

#![no_std]

extern crate alloc;

pub mod attention;
pub mod error;
pub mod eval;
pub mod model;
pub mod pairs;
pub mod registry;
pub mod signature;

mod linalg;

pub use attention::{HeadKind, HeadSet, ScorePanel, Scorer, ScoringConfig};
pub use error::{Error, Result};
pub use model::{BoundingBox, Detection, Embedding, InteractionCategory, Vocabulary};
pub use pairs::{FeatureBundle, PairKey, PairProposal, PairingRules};
pub use registry::{Registry, RegistryEntry, Source};
pub use signature::{InteractionSignature, PromptTemplate, SignatureSet};

use alloc::string::String;
use core::fmt;

use crate::pairs::PairKey;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Which crop of a pair a missing embedding refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropKind {
    Instance(usize),
    Union(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    ZeroNorm,
    NonFinite,
    NotUnitNorm(f64),
    DimensionMismatch { expected: usize, found: usize },
    InvalidBox { x1: f32, y1: f32, x2: f32, y2: f32 },
    InvalidConfidence(f32),
    UnknownLabel(String),
    DuplicateCategory { verb: String, object: String },
    PlaceholderMissing { template: String, placeholder: &'static str },
    BadCount { expected: usize, found: usize },
    MissingCategory(usize),
    MissingSignature(usize),
    UnknownCategory(usize),
    MissingEmbedding { image: String, crop: CropKind },
    UnmatchedAnnotation { image: String, category: usize },
    EmptySplit(&'static str),
    InvalidConfig(String),
    NotAPair(PairKey),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ZeroNorm => f.write_str("vector has (near) zero norm"),
            Error::NonFinite => f.write_str("vector contains non-finite values"),
            Error::NotUnitNorm(n) => write!(f, "stored embedding has norm {n}, expected 1"),
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::InvalidBox { x1, y1, x2, y2 } => {
                write!(f, "invalid box ({x1}, {y1}, {x2}, {y2})")
            }
            Error::InvalidConfidence(c) => write!(f, "confidence {c} outside [0, 1]"),
            Error::UnknownLabel(label) => write!(f, "unknown object label `{label}`"),
            Error::DuplicateCategory { verb, object } => {
                write!(f, "duplicate interaction category ({verb}, {object})")
            }
            Error::PlaceholderMissing { template, placeholder } => {
                write!(f, "template `{template}` must contain {placeholder} exactly once")
            }
            Error::BadCount { expected, found } => {
                write!(f, "expected {expected} items, found {found}")
            }
            Error::MissingCategory(id) => write!(f, "category {id} is missing"),
            Error::MissingSignature(id) => write!(f, "no interaction signature for category {id}"),
            Error::UnknownCategory(id) => write!(f, "category {id} is not in the vocabulary"),
            Error::MissingEmbedding { image, crop } => match crop {
                CropKind::Instance(i) => {
                    write!(f, "image `{image}`: missing crop embedding for detection {i}")
                }
                CropKind::Union(h, o) => {
                    write!(f, "image `{image}`: missing union embedding for pair ({h}, {o})")
                }
            },
            Error::UnmatchedAnnotation { image, category } => write!(
                f,
                "image `{image}`: annotation of category {category} matches no detection"
            ),
            Error::EmptySplit(split) => write!(f, "split `{split}` has no evaluable categories"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::NotAPair(key) => write!(
                f,
                "image `{}`: ({}, {}) is not a human-object pair",
                key.image, key.human, key.object
            ),
        }
    }
}

impl core::error::Error for Error {}

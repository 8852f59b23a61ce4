//! Shared domain types: embeddings, boxes, detections and the vocabulary.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{dot_f32, norm_f64};

/// Vectors shorter than this cannot be normalized.
pub const MIN_NORM: f64 = 1e-12;

/// Accepted deviation from unit norm for stored embeddings.
pub const UNIT_TOLERANCE: f64 = 1e-5;

/// A unit-norm feature vector in the shared text/image space.
///
/// Coordinates are stored as `f32`; normalization and every dot product
/// accumulate in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    /// Scales `values` to unit L2 norm.
    pub fn normalize(values: &[f32]) -> Result<Self> {
        let wide: Vec<f64> = values.iter().map(|&v| f64::from(v)).collect();
        Self::normalize_f64(&wide)
    }

    pub fn normalize_f64(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::BadCount { expected: 1, found: 0 });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let norm = norm_f64(values);
        if norm < MIN_NORM {
            return Err(Error::ZeroNorm);
        }
        Ok(Embedding(values.iter().map(|&v| (v / norm) as f32).collect()))
    }

    /// Wraps values that are already unit-norm, keeping their bits unchanged.
    pub fn from_unit(values: Vec<f32>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let norm = libm::sqrt(dot_f32(&values, &values));
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::NotUnitNorm(norm));
        }
        Ok(Embedding(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(dot_f32(&self.0, &self.0))
    }

    /// Dot product of two embeddings, i.e. their cosine similarity.
    pub fn cosine(&self, other: &Embedding) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: other.dim() });
        }
        Ok(dot_f32(&self.0, &other.0))
    }
}

impl AsRef<[f32]> for Embedding {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

/// Free-function form of [`Embedding::normalize`].
pub fn normalize(values: &[f32]) -> Result<Embedding> {
    Embedding::normalize(values)
}

pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    a.cosine(b)
}

/// Axis-aligned box in absolute pixel corner form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    x1: f32,
    y1: f32,
    x2: f32,
    y2: f32,
}

impl BoundingBox {
    pub fn new(x1: f32, y1: f32, x2: f32, y2: f32) -> Result<Self> {
        let finite = [x1, y1, x2, y2].iter().all(|v| v.is_finite());
        if !finite || x1 < 0.0 || y1 < 0.0 || x1 >= x2 || y1 >= y2 {
            return Err(Error::InvalidBox { x1, y1, x2, y2 });
        }
        Ok(BoundingBox { x1, y1, x2, y2 })
    }

    /// Converts the detector's center/size form.
    pub fn from_center(cx: f32, cy: f32, width: f32, height: f32) -> Result<Self> {
        Self::new(cx - width / 2.0, cy - height / 2.0, cx + width / 2.0, cy + height / 2.0)
    }

    pub fn corners(&self) -> [f32; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn area(&self) -> f64 {
        (f64::from(self.x2) - f64::from(self.x1)) * (f64::from(self.y2) - f64::from(self.y1))
    }

    /// Smallest box containing both `self` and `other`.
    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
            x2: self.x2.max(other.x2),
            y2: self.y2.max(other.y2),
        }
    }

    pub fn contains(&self, other: &BoundingBox) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && self.x2 >= other.x2 && self.y2 >= other.y2
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let ix = f64::from(self.x2.min(other.x2)) - f64::from(self.x1.max(other.x1));
        let iy = f64::from(self.y2.min(other.y2)) - f64::from(self.y1.max(other.y1));
        if ix <= 0.0 || iy <= 0.0 {
            return 0.0;
        }
        let inter = ix * iy;
        inter / (self.area() + other.area() - inter)
    }
}

pub fn union_box(a: &BoundingBox, b: &BoundingBox) -> BoundingBox {
    a.union(b)
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    a.iou(b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub label: String,
    pub confidence: f32,
}

impl Detection {
    pub fn new(bbox: BoundingBox, label: impl Into<String>, confidence: f32) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidConfidence(confidence));
        }
        Ok(Detection { bbox, label: label.into(), confidence })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionCategory {
    pub id: usize,
    pub verb: String,
    pub object: String,
    pub rare: bool,
}

/// Object classes plus the ordered list of interaction categories.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    person: String,
    objects: BTreeSet<String>,
    categories: Vec<InteractionCategory>,
    by_object: BTreeMap<String, Vec<usize>>,
}

impl Vocabulary {
    /// `categories[i].id` must equal `i`; `person` must be one of `objects`.
    pub fn new(
        person: impl Into<String>,
        objects: impl IntoIterator<Item = String>,
        categories: Vec<InteractionCategory>,
    ) -> Result<Self> {
        let person = person.into();
        let objects: BTreeSet<String> = objects.into_iter().collect();
        if !objects.contains(&person) {
            return Err(Error::UnknownLabel(person));
        }
        let mut seen = BTreeSet::new();
        let mut by_object: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (index, category) in categories.iter().enumerate() {
            if category.id != index {
                return Err(Error::MissingCategory(index));
            }
            if !objects.contains(&category.object) {
                return Err(Error::UnknownLabel(category.object.clone()));
            }
            if !seen.insert((category.verb.clone(), category.object.clone())) {
                return Err(Error::DuplicateCategory {
                    verb: category.verb.clone(),
                    object: category.object.clone(),
                });
            }
            by_object.entry(category.object.clone()).or_default().push(index);
        }
        Ok(Vocabulary { person, objects, categories, by_object })
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn person_label(&self) -> &str {
        &self.person
    }

    pub fn is_person(&self, label: &str) -> bool {
        label == self.person
    }

    pub fn knows_label(&self, label: &str) -> bool {
        self.objects.contains(label)
    }

    pub fn objects(&self) -> impl Iterator<Item = &str> {
        self.objects.iter().map(String::as_str)
    }

    pub fn categories(&self) -> &[InteractionCategory] {
        &self.categories
    }

    pub fn category(&self, id: usize) -> Result<&InteractionCategory> {
        self.categories.get(id).ok_or(Error::UnknownCategory(id))
    }

    /// Category ids whose object class is `label`, ascending.
    pub fn categories_for_object(&self, label: &str) -> &[usize] {
        self.by_object.get(label).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn rare_flags(&self) -> Vec<bool> {
        self.categories.iter().map(|c| c.rare).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn bx(x1: f32, y1: f32, x2: f32, y2: f32) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&[1.0, 0.0, 0.0]).unwrap().as_slice(), &[1.0, 0.0, 0.0]);
        let v = normalize(&[3.0, 4.0]).unwrap();
        assert!((v.as_slice()[0] - 0.6).abs() < 1e-7);
        assert!((v.as_slice()[1] - 0.8).abs() < 1e-7);
        assert_eq!(normalize(&[0.0, 0.0]), Err(Error::ZeroNorm));
        assert_eq!(normalize(&[f32::NAN, 1.0]), Err(Error::NonFinite));
    }

    #[test]
    fn cosine_examples() {
        let e1 = normalize(&[1.0, 0.0]).unwrap();
        let e2 = normalize(&[0.0, 1.0]).unwrap();
        assert_eq!(cosine(&e1, &e1).unwrap(), 1.0);
        assert_eq!(cosine(&e1, &e2).unwrap(), 0.0);
        let v = normalize(&[0.6, 0.8]).unwrap();
        assert!((cosine(&v, &e1).unwrap() - 0.6).abs() < 1e-6);
        let e3 = normalize(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(
            cosine(&e1, &e3),
            Err(Error::DimensionMismatch { expected: 2, found: 3 })
        );
    }

    #[test]
    fn union_box_examples() {
        assert_eq!(union_box(&bx(0., 0., 2., 2.), &bx(1., 1., 3., 3.)), bx(0., 0., 3., 3.));
        let b = bx(1., 2., 5., 7.);
        assert_eq!(union_box(&b, &b), b);
        assert_eq!(union_box(&bx(0., 0., 1., 1.), &bx(5., 5., 6., 6.)), bx(0., 0., 6., 6.));
    }

    #[test]
    fn iou_examples() {
        let b = bx(1., 2., 5., 7.);
        assert_eq!(iou(&b, &b), 1.0);
        assert_eq!(iou(&bx(0., 0., 1., 1.), &bx(2., 2., 3., 3.)), 0.0);
        // touching edges share no area
        assert_eq!(iou(&bx(0., 0., 1., 1.), &bx(1., 0., 2., 1.)), 0.0);
        assert!((iou(&bx(0., 0., 2., 2.), &bx(1., 0., 3., 2.)) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(BoundingBox::new(2., 0., 1., 1.).is_err());
        assert!(BoundingBox::new(0., 0., 0., 1.).is_err());
        assert!(BoundingBox::new(-1., 0., 1., 1.).is_err());
        let c = BoundingBox::from_center(5., 5., 4., 2.).unwrap();
        assert_eq!(c.corners(), [3., 4., 7., 6.]);
    }

    #[test]
    fn vocabulary_validation() {
        let cat = |id, verb: &str, object: &str| InteractionCategory {
            id,
            verb: verb.into(),
            object: object.into(),
            rare: false,
        };
        let objects = || vec!["person".into(), "horse".into()];
        let vocab =
            Vocabulary::new("person", objects(), vec![cat(0, "ride", "horse"), cat(1, "hug", "person")])
                .unwrap();
        assert_eq!(vocab.categories_for_object("horse"), &[0]);
        assert!(vocab.categories_for_object("cat").is_empty());

        let dup = Vocabulary::new("person", objects(), vec![cat(0, "ride", "horse"), cat(1, "ride", "horse")]);
        assert!(matches!(dup, Err(Error::DuplicateCategory { .. })));
        let gap = Vocabulary::new("person", objects(), vec![cat(1, "ride", "horse")]);
        assert_eq!(gap, Err(Error::MissingCategory(0)));
        let unknown = Vocabulary::new("person", objects(), vec![cat(0, "ride", "cat")]);
        assert!(matches!(unknown, Err(Error::UnknownLabel(_))));
    }
}

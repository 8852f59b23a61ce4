//! Seeded synthetic datasets with planted category directions.
//!
//! Base directions are orthonormal when the dimension allows it. A category
//! `(verb, object)` has the compositional text direction
//! `d_c = normalize(t_verb + t_object + specificity * s_c)`, so categories
//! sharing a verb or an object are correlated. Each verb also has a pose
//! direction and each object class an appearance direction. With Gaussian
//! noise `g`:
//!
//! * signature rows are `d_c + noise * g`
//! * a pair's union crop is `d_c + gap * a_c + noise * g`, where `a_c` is a
//!   visual-only appearance direction that text descriptions do not see
//! * a human crop is `person + pose_verb + noise * g`
//! * an object crop is `object_class + noise * g`
//!
//! Every human interacts with every real object in its image, using the
//! verb assigned to that human. Optional low-confidence distractors carry
//! no annotation and random union embeddings.

use std::collections::BTreeMap;
use std::path::Path;

use hoi_core::eval::GroundTruthTriplet;
use hoi_core::signature::assemble_signature;
use hoi_core::{BoundingBox, Detection, Embedding, FeatureBundle, InteractionCategory, PromptTemplate, SignatureSet, Vocabulary};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::formats::{create_dir, save_bundle, save_ground_truth, save_vocabulary, write_json};
use crate::tensor::{write_tensor, Tensor};

pub const PERSON: &str = "person";

const CELL: f32 = 200.0;
const GRID_COLUMNS: usize = 4;
const GRID_ROWS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureSpec {
    pub verbs: usize,
    pub objects: usize,
    pub dim: usize,
    /// Descriptions per signature.
    pub descriptions: usize,
    pub train_images: usize,
    pub test_images: usize,
    pub noise: f64,
    /// Weight of the category-specific part of text directions.
    pub specificity: f64,
    /// Weight of the visual-only appearance component of union crops.
    pub modality_gap: f64,
    pub distractors: bool,
    /// With exactly two categories, plant `d_1 = -d_0`.
    pub antipodal: bool,
    pub rare_fraction: f64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            verbs: 6,
            objects: 4,
            dim: 64,
            descriptions: 50,
            train_images: 40,
            test_images: 30,
            noise: 0.0,
            specificity: 0.5,
            modality_gap: 1.0,
            distractors: true,
            antipodal: false,
            rare_fraction: 0.25,
        }
    }
}

impl FixtureSpec {
    pub fn num_categories(&self) -> usize {
        self.verbs * self.objects
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionRecord {
    pub category: usize,
    pub descriptions: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Split {
    pub bundles: Vec<FeatureBundle>,
    pub ground_truth: Vec<GroundTruthTriplet>,
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub seed: u64,
    pub spec: FixtureSpec,
    pub vocabulary: Vocabulary,
    pub templates: Vec<String>,
    /// Raw (unnormalized) description embeddings, `descriptions` per category.
    pub description_embeddings: Vec<Vec<Vec<f32>>>,
    pub descriptions: Vec<Vec<String>>,
    pub train: Split,
    pub test: Split,
}

impl Fixture {
    pub fn signature_set(&self) -> Result<SignatureSet> {
        let signatures = self
            .vocabulary
            .categories()
            .iter()
            .map(|c| {
                assemble_signature(
                    c.clone(),
                    &self.description_embeddings[c.id],
                    self.descriptions[c.id].clone(),
                    self.spec.descriptions,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SignatureSet::new(&self.vocabulary, signatures)?)
    }

    /// Writes the dataset layout read by the command-line tool:
    ///
    /// ```text
    /// vocabulary.json  templates.json  descriptions.json  descriptions.dytf
    /// train/bundles/  train/annotations.json
    /// test/bundles/   test/ground_truth.json
    /// fixture.json
    /// ```
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        create_dir(dir)?;
        save_vocabulary(&self.vocabulary, dir.join("vocabulary.json"))?;
        write_json(dir.join("templates.json"), &self.templates)?;
        let records: Vec<DescriptionRecord> = self
            .descriptions
            .iter()
            .enumerate()
            .map(|(category, d)| DescriptionRecord { category, descriptions: d.clone() })
            .collect();
        write_json(dir.join("descriptions.json"), &records)?;
        let rows: Vec<&[f32]> = self.description_embeddings.iter().flatten().map(Vec::as_slice).collect();
        write_tensor(&Tensor::from_rows(self.spec.dim, &rows)?, dir.join("descriptions.dytf"))?;
        for (name, split, gt_name) in [("train", &self.train, "annotations.json"), ("test", &self.test, "ground_truth.json")] {
            let bundles = dir.join(name).join("bundles");
            create_dir(&bundles)?;
            for b in &split.bundles {
                save_bundle(b, &bundles)?;
            }
            save_ground_truth(&split.ground_truth, dir.join(name).join(gt_name))?;
        }
        write_json(dir.join("fixture.json"), &serde_json::json!({ "seed": self.seed, "spec": self.spec }))
    }
}

struct Planted {
    category: Vec<Vec<f64>>,
    /// Union-crop signal: category direction plus weighted appearance.
    union: Vec<Vec<f64>>,
    pose: Vec<Vec<f64>>,
    object: Vec<Vec<f64>>,
    person: Vec<f64>,
}

struct Generator {
    rng: ChaCha8Rng,
    dim: usize,
    noise: f64,
}

impl Generator {
    fn gaussian(&mut self) -> Vec<f64> {
        (0..self.dim).map(|_| self.rng.sample(StandardNormal)).collect()
    }

    fn unit(&mut self) -> Vec<f64> {
        loop {
            let v = self.gaussian();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-6 {
                return v.into_iter().map(|x| x / n).collect();
            }
        }
    }

    /// `count` unit directions, orthonormal when `count <= dim`.
    fn directions(&mut self, count: usize) -> Vec<Vec<f64>> {
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
        while basis.len() < count {
            let mut v = self.unit();
            if basis.len() < self.dim {
                for b in &basis {
                    let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                    v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
                }
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n < 1e-6 {
                    continue;
                }
                v.iter_mut().for_each(|x| *x /= n);
            }
            basis.push(v);
        }
        basis
    }

    fn noisy(&mut self, signal: &[f64]) -> Vec<f32> {
        let g = self.gaussian();
        signal.iter().zip(g).map(|(s, g)| (s + self.noise * g) as f32).collect()
    }

    fn embed(&mut self, signal: &[f64]) -> Embedding {
        loop {
            if let Ok(e) = Embedding::normalize(&self.noisy(signal)) {
                return e;
            }
        }
    }

    fn random_embedding(&mut self) -> Embedding {
        let v: Vec<f32> = self.unit().into_iter().map(|x| x as f32).collect();
        Embedding::normalize(&v).expect("unit vector")
    }

    fn bbox(&mut self, cell: usize) -> BoundingBox {
        let x0 = (cell % GRID_COLUMNS) as f32 * CELL;
        let y0 = (cell / GRID_COLUMNS) as f32 * CELL;
        let x1 = x0 + self.rng.random_range(0.0..40.0f32);
        let y1 = y0 + self.rng.random_range(0.0..40.0f32);
        let x2 = x0 + self.rng.random_range(140.0..CELL);
        let y2 = y0 + self.rng.random_range(140.0..CELL);
        BoundingBox::new(x1.round(), y1.round(), x2.round(), y2.round()).expect("box inside its cell")
    }
}

#[derive(Clone, Copy)]
enum Role {
    Human(usize),
    Object(usize),
    Distractor(usize),
}

fn image(gen: &mut Generator, planted: &Planted, spec: &FixtureSpec, id: String, out: &mut Split) {
    let humans = gen.rng.random_range(1..=2usize);
    let objects = gen.rng.random_range(1..=3usize);
    let distractors = if spec.distractors { gen.rng.random_range(0..=2usize) } else { 0 };
    let mut roles: Vec<Role> = Vec::new();
    for _ in 0..humans {
        roles.push(Role::Human(gen.rng.random_range(0..spec.verbs)));
    }
    for _ in 0..objects {
        roles.push(Role::Object(gen.rng.random_range(0..spec.objects)));
    }
    for _ in 0..distractors {
        roles.push(Role::Distractor(gen.rng.random_range(0..spec.objects)));
    }
    roles.shuffle(&mut gen.rng);
    let mut cells: Vec<usize> = (0..GRID_COLUMNS * GRID_ROWS).collect();
    cells.shuffle(&mut gen.rng);

    let mut detections = Vec::with_capacity(roles.len());
    let mut crops = BTreeMap::new();
    for (i, role) in roles.iter().enumerate() {
        let bbox = gen.bbox(cells[i]);
        let (label, confidence, crop) = match *role {
            Role::Human(v) => {
                let signal: Vec<f64> = planted.person.iter().zip(&planted.pose[v]).map(|(a, b)| a + b).collect();
                (PERSON.to_string(), gen.rng.random_range(0.9..=1.0f32), gen.embed(&signal))
            }
            Role::Object(l) => (format!("obj{l}"), gen.rng.random_range(0.9..=1.0f32), gen.embed(&planted.object[l])),
            Role::Distractor(l) => {
                (format!("obj{l}"), gen.rng.random_range(0.05..0.15f32), gen.embed(&planted.object[l]))
            }
        };
        detections.push(Detection::new(bbox, label, confidence).expect("confidence in range"));
        crops.insert(i, crop);
    }

    let mut unions = BTreeMap::new();
    for (h, role_h) in roles.iter().enumerate() {
        let Role::Human(verb) = *role_h else { continue };
        for (o, role_o) in roles.iter().enumerate() {
            if o == h {
                continue;
            }
            let z_u = match *role_o {
                Role::Object(l) => {
                    let category = verb * spec.objects + l;
                    out.ground_truth.push(GroundTruthTriplet {
                        image: id.clone(),
                        human: detections[h].bbox,
                        object: detections[o].bbox,
                        category,
                    });
                    gen.embed(&planted.union[category])
                }
                _ => gen.random_embedding(),
            };
            unions.insert((h, o), z_u);
        }
    }
    out.bundles.push(FeatureBundle { image: id, detections, crops, unions });
}

pub fn templates(count: usize) -> Vec<String> {
    (0..count).map(|k| format!("description {k}: a person is {{verb}} the {{object}}")).collect()
}

/// Generates a dataset; the same `seed` and `spec` give identical output.
pub fn synthesize(seed: u64, spec: &FixtureSpec) -> Result<Fixture> {
    let invalid = |msg: &str| crate::error::Error::Usage(format!("fixture spec: {msg}"));
    if spec.verbs == 0 || spec.objects == 0 || spec.dim == 0 || spec.descriptions == 0 {
        return Err(invalid("verbs, objects, dim and descriptions must be positive"));
    }
    if !(spec.noise.is_finite() && spec.noise >= 0.0) {
        return Err(invalid("noise must be non-negative"));
    }
    if !(spec.modality_gap.is_finite() && spec.modality_gap >= 0.0) {
        return Err(invalid("modality_gap must be non-negative"));
    }
    if !(spec.specificity.is_finite() && spec.specificity > 0.0) {
        return Err(invalid("specificity must be positive"));
    }
    if spec.antipodal && spec.num_categories() != 2 {
        return Err(invalid("antipodal directions need exactly two categories"));
    }
    if !(0.0..=1.0).contains(&spec.rare_fraction) {
        return Err(invalid("rare_fraction must lie in [0, 1]"));
    }

    let mut gen = Generator { rng: ChaCha8Rng::seed_from_u64(seed), dim: spec.dim, noise: spec.noise };
    let num = spec.num_categories();
    let mut all = gen.directions(2 * num + 2 * (spec.verbs + spec.objects) + 1);
    let person = all.pop().expect("person direction");
    let object = all.split_off(2 * num + 2 * spec.verbs + spec.objects);
    let pose = all.split_off(2 * num + spec.verbs + spec.objects);
    let text_object = all.split_off(2 * num + spec.verbs);
    let text_verb = all.split_off(2 * num);
    let mut appearance = all.split_off(num);
    let specific = all;
    let mut category: Vec<Vec<f64>> = (0..num)
        .map(|c| {
            let (v, l) = (c / spec.objects, c % spec.objects);
            let raw: Vec<f64> = (0..spec.dim)
                .map(|k| text_verb[v][k] + text_object[l][k] + spec.specificity * specific[c][k])
                .collect();
            let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
            raw.into_iter().map(|x| x / n).collect()
        })
        .collect();
    if spec.antipodal {
        category[1] = category[0].iter().map(|x| -x).collect();
        appearance[1] = appearance[0].iter().map(|x| -x).collect();
    }
    let union = category
        .iter()
        .zip(&appearance)
        .map(|(d, a)| d.iter().zip(a).map(|(d, a)| d + spec.modality_gap * a).collect())
        .collect();
    let planted = Planted { category, union, pose, object, person };

    let mut order: Vec<usize> = (0..num).collect();
    order.shuffle(&mut gen.rng);
    let rare_count = ((spec.rare_fraction * num as f64).round() as usize).min(num);
    let mut rare = vec![false; num];
    order[..rare_count].iter().for_each(|&c| rare[c] = true);

    let categories: Vec<InteractionCategory> = (0..num)
        .map(|id| InteractionCategory {
            id,
            verb: format!("verb{}", id / spec.objects),
            object: format!("obj{}", id % spec.objects),
            rare: rare[id],
        })
        .collect();
    let objects = std::iter::once(PERSON.to_string()).chain((0..spec.objects).map(|l| format!("obj{l}")));
    let vocabulary = Vocabulary::new(PERSON, objects, categories)?;

    let templates = templates(spec.descriptions);
    let mut descriptions = Vec::with_capacity(num);
    let mut description_embeddings = Vec::with_capacity(num);
    for c in vocabulary.categories() {
        let filled = templates
            .iter()
            .map(|t| PromptTemplate::new(t.as_str()).fill(&c.verb, &c.object))
            .collect::<Result<Vec<_>, _>>()?;
        descriptions.push(filled);
        description_embeddings.push((0..spec.descriptions).map(|_| gen.noisy(&planted.category[c.id])).collect());
    }

    let mut train = Split { bundles: Vec::new(), ground_truth: Vec::new() };
    for i in 0..spec.train_images {
        image(&mut gen, &planted, spec, format!("train_{i:04}"), &mut train);
    }
    let mut test = Split { bundles: Vec::new(), ground_truth: Vec::new() };
    for i in 0..spec.test_images {
        image(&mut gen, &planted, spec, format!("test_{i:04}"), &mut test);
    }

    Ok(Fixture { seed, spec: spec.clone(), vocabulary, templates, description_embeddings, descriptions, train, test })
}

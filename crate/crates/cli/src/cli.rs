//! Command-line parsing and dispatch.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use hoi_core::PromptTemplate;

use crate::config::{parse_heads, Overrides, RunConfig};
use crate::error::{Error, Result};
use crate::fixtures::{synthesize, DescriptionRecord, FixtureSpec};
use crate::formats::{
    load_bundles, load_ground_truth, load_predictions, load_registry, load_signature_set, load_vocabulary,
    read_json, read_jsonl, save_predictions, save_registry, save_signature_set, write_json, PairScoreRecord,
};
use crate::pipeline::{self, ScoreTable};
use crate::tensor::read_tensor;

#[derive(Debug, Parser)]
#[command(name = "hoi", version, about = "Training-free human-object interaction scoring")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Interaction signatures.
    #[command(subcommand)]
    Signatures(SignaturesCommand),
    /// Visual exemplar registries.
    #[command(subcommand)]
    Registry(RegistryCommand),
    /// Score every pair of every bundle.
    Predict(PredictArgs),
    /// Compute mAP of predictions against ground truth.
    Eval(EvalArgs),
    /// Synthetic datasets.
    #[command(subcommand)]
    Fixtures(FixturesCommand),
}

#[derive(Debug, Subcommand)]
pub enum SignaturesCommand {
    /// Assemble signatures from embedded descriptions.
    Build(SignaturesBuildArgs),
}

#[derive(Debug, Subcommand)]
pub enum RegistryCommand {
    /// Registry from annotated training images.
    Build(RegistryBuildArgs),
    /// Registry from unlabeled images via confident pseudolabels.
    Pseudo(RegistryPseudoArgs),
}

#[derive(Debug, Subcommand)]
pub enum FixturesCommand {
    /// Generate a seeded synthetic dataset.
    Synth(SynthArgs),
}

/// Configuration flags shared by all subcommands.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML or JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda_neg: Option<f64>,
    /// Registry capacity per category.
    #[arg(long)]
    pub j: Option<usize>,
    /// Descriptions per signature.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub detection_threshold: Option<f32>,
    /// Comma-separated heads to enable, e.g. `tf,tc`.
    #[arg(long)]
    pub heads: Option<String>,
    #[arg(long)]
    pub no_bias: bool,
    #[arg(long)]
    pub no_mhom: bool,
    /// Rank every category, not only those of the detected object class.
    #[arg(long)]
    pub no_object_filter: bool,
    /// Pseudolabel admission threshold.
    #[arg(long, allow_hyphen_values = true)]
    pub threshold: Option<f64>,
    /// Comma-separated category ids removed from visual memory.
    #[arg(long, value_delimiter = ',')]
    pub held_out: Option<Vec<usize>>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let overrides = Overrides {
            tau: self.tau,
            gamma: self.gamma,
            lambda_neg: self.lambda_neg,
            j: self.j,
            m: self.m,
            detection_threshold: self.detection_threshold,
            heads: self.heads.as_deref().map(parse_heads).transpose()?,
            no_bias: self.no_bias,
            no_mhom: self.no_mhom,
            no_object_filter: self.no_object_filter,
            pseudo_threshold: self.threshold,
            held_out: self.held_out.clone(),
        };
        RunConfig::resolve(self.config.as_deref(), &overrides)
    }
}

#[derive(Debug, Args)]
pub struct SignaturesBuildArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    /// Tensor of raw description embeddings, `m` rows per category in id order.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// JSON array of `{category, descriptions}`.
    #[arg(long, required_unless_present = "templates")]
    pub descriptions: Option<PathBuf>,
    /// JSON array of template strings, used when descriptions are absent.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct RegistryBuildArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub bundles: PathBuf,
    /// Ground-truth triplets of the training images.
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct RegistryPseudoArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub bundles: PathBuf,
    /// Signature manifest for textual-head labeling.
    #[arg(long, required_unless_present = "scores")]
    pub signatures: Option<PathBuf>,
    /// JSONL of external `{image, human, object, category, score}` records.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub signatures: PathBuf,
    #[arg(long)]
    pub bundles: PathBuf,
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// Predictions JSONL; the effective config goes to `<out>.meta.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub ground_truth: PathBuf,
    /// Where to write metrics.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fixture spec file (JSON); flags below override it.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub verbs: Option<usize>,
    #[arg(long)]
    pub objects: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub descriptions: Option<usize>,
    #[arg(long)]
    pub train_images: Option<usize>,
    #[arg(long)]
    pub test_images: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub no_distractors: bool,
    #[arg(long)]
    pub antipodal: bool,
}

impl SynthArgs {
    fn spec(&self) -> Result<FixtureSpec> {
        let mut spec = match &self.spec {
            Some(path) => read_json(path)?,
            None => FixtureSpec::default(),
        };
        let set = |slot: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut spec.verbs, self.verbs);
        set(&mut spec.objects, self.objects);
        set(&mut spec.dim, self.dim);
        set(&mut spec.descriptions, self.descriptions);
        set(&mut spec.train_images, self.train_images);
        set(&mut spec.test_images, self.test_images);
        if let Some(noise) = self.noise {
            spec.noise = noise;
        }
        spec.distractors &= !self.no_distractors;
        spec.antipodal |= self.antipodal;
        Ok(spec)
    }
}

fn registry_dim(bundles: &[hoi_core::FeatureBundle]) -> usize {
    bundles.iter().find_map(|b| b.dim()).unwrap_or(0)
}

fn meta_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    out.with_file_name(name)
}

/// Runs a parsed command, writing human-readable output to `stdout`.
pub fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    let write_err = |e| Error::io("<stdout>", e);
    match cli.command {
        Command::Signatures(SignaturesCommand::Build(a)) => {
            let config = a.config.resolve()?;
            let vocabulary = load_vocabulary(&a.vocab)?;
            let embeddings = read_tensor(&a.embeddings)?;
            let templates: Vec<PromptTemplate> = match &a.templates {
                Some(path) => read_json::<Vec<String>>(path)?.into_iter().map(PromptTemplate::new).collect(),
                None => Vec::new(),
            };
            let descriptions = match &a.descriptions {
                Some(path) => Some(
                    read_json::<Vec<DescriptionRecord>>(path)?
                        .into_iter()
                        .map(|r| (r.category, r.descriptions))
                        .collect::<BTreeMap<_, _>>(),
                ),
                None => None,
            };
            let set = pipeline::build_signatures(&vocabulary, &embeddings, descriptions.as_ref(), &templates, config.m)?;
            let path = save_signature_set(&set, &a.out, descriptions.is_none(), Some(config.to_value()))?;
            writeln!(stdout, "wrote {} signatures to {}", set.len(), path.display()).map_err(write_err)?;
        }
        Command::Registry(RegistryCommand::Build(a)) => {
            let config = a.config.resolve()?;
            let vocabulary = load_vocabulary(&a.vocab)?;
            let bundles = load_bundles(&a.bundles, &vocabulary)?;
            let annotations = load_ground_truth(&a.annotations)?;
            let registry = pipeline::labeled_registry(&vocabulary, &bundles, &annotations, &config)?;
            let path = save_registry(&registry, &a.out, registry_dim(&bundles), Some(config.to_value()))?;
            writeln!(stdout, "wrote {} exemplars to {}", registry.len(), path.display()).map_err(write_err)?;
        }
        Command::Registry(RegistryCommand::Pseudo(a)) => {
            let config = a.config.resolve()?;
            let vocabulary = load_vocabulary(&a.vocab)?;
            let bundles = load_bundles(&a.bundles, &vocabulary)?;
            let registry = match (&a.scores, &a.signatures) {
                (Some(scores), _) => {
                    let table = ScoreTable::new(&read_jsonl::<PairScoreRecord>(scores)?, &vocabulary)?;
                    pipeline::pseudo_registry(&vocabulary, &bundles, &table, &config)?
                }
                (None, Some(signatures)) => {
                    let signatures = load_signature_set(signatures, &vocabulary)?;
                    pipeline::textual_pseudo_registry(&vocabulary, &signatures, &bundles, &config)?
                }
                (None, None) => return Err(Error::Usage("need --signatures or --scores".into())),
            };
            let path = save_registry(&registry, &a.out, registry_dim(&bundles), Some(config.to_value()))?;
            writeln!(stdout, "wrote {} pseudolabeled exemplars to {}", registry.len(), path.display())
                .map_err(write_err)?;
        }
        Command::Predict(a) => {
            let config = a.config.resolve()?;
            let vocabulary = load_vocabulary(&a.vocab)?;
            let signatures = load_signature_set(&a.signatures, &vocabulary)?;
            let registry = a.registry.as_ref().map(load_registry).transpose()?;
            let bundles = load_bundles(&a.bundles, &vocabulary)?;
            let predictions =
                pipeline::predict(&vocabulary, &signatures, registry.as_ref(), &bundles, &config, a.config.jobs)?;
            save_predictions(&predictions, &a.out)?;
            let meta = serde_json::json!({
                "images": bundles.len(),
                "predictions": predictions.len(),
                "config": config.to_value(),
            });
            write_json(meta_path(&a.out), &meta)?;
            writeln!(stdout, "wrote {} predictions for {} images to {}", predictions.len(), bundles.len(), a.out.display())
                .map_err(write_err)?;
        }
        Command::Eval(a) => {
            let config = a.config.resolve()?;
            let vocabulary = load_vocabulary(&a.vocab)?;
            let predictions = load_predictions(&a.predictions)?;
            let ground_truth = load_ground_truth(&a.ground_truth)?;
            let mut metrics =
                pipeline::evaluate_predictions(&vocabulary, &predictions, &ground_truth, &config.held_out_set())?;
            metrics.config = Some(config.to_value());
            write!(stdout, "{}", metrics.table()).map_err(write_err)?;
            let summary = serde_json::json!({
                "full": metrics.full,
                "rare": metrics.rare,
                "non_rare": metrics.non_rare,
                "afull": metrics.afull,
            });
            writeln!(stdout, "{summary}").map_err(write_err)?;
            if let Some(out) = &a.out {
                write_json(out, &metrics)?;
            }
        }
        Command::Fixtures(FixturesCommand::Synth(a)) => {
            let fixture = synthesize(a.seed, &a.spec()?)?;
            fixture.write(&a.out)?;
            writeln!(
                stdout,
                "wrote {} categories, {} train and {} test images to {}",
                fixture.vocabulary.len(),
                fixture.train.bundles.len(),
                fixture.test.bundles.len(),
                a.out.display()
            )
            .map_err(write_err)?;
        }
    }
    Ok(())
}

/// Parses `argv` (program name first), runs it and returns the exit status:
/// 0 on success, 2 for usage errors, 1 for data errors.
pub fn run_command<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let rendered = e.render().to_string();
            let sink: &mut dyn Write = if code == 0 { stdout } else { stderr };
            let _ = write!(sink, "{rendered}");
            return code;
        }
    };
    match execute(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

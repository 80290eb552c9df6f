use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use jeirt::clustering::{agreement_metrics_with, kmeans_unit, NmiNorm};
use jeirt::data::{load_features, load_responses, make_split_with_mode, Dataset, FeatureMatrix, Split, SplitMode, SplitPart};
use jeirt::engine::{evaluate_indices, train, AdamConfig, TrainConfig};
use jeirt::geometry::{
    cosine_to_mean_stats, directional_alignment, effective_rank, kernel_pca_cosine_2d, norm_quantile_accuracy,
    pca_cumulative_variance, question_geometry, roc_from_norms, Grouping, QuestionGeometry, KPCA_DEFAULT_CAP,
};
use jeirt::irt2pl::{correct_set_inclusion, fit_2pl, mean_log_loss, saturation_report, Irt2plConfig};
use jeirt::onboarding::{onboard_with, subsample_curve, OnboardConfig};
use jeirt::synth::{
    check_ability_shift, check_prob_stability, check_prop1_with, generate_planted, most_opposed_pair, DifficultyProfile,
    DirectionProfile, PlantedConfig,
};
use jeirt::{load_checkpoint, prefixed_paths, save_checkpoint, JeirtCheckpoint};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{required, resolve, Outputs};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "jeirt", version, about = "Joint-embedding item response analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Partition response records into train/validation/test.
    Split(SplitArgs),
    /// Train adapter and model table.
    Fit(FitArgs),
    /// Accuracy and log-loss of a checkpoint on one split part.
    Eval(EvalArgs),
    /// Fit the two-parameter logistic baseline and report saturation.
    #[command(name = "fit-2pl")]
    Fit2pl(Fit2plArgs),
    /// Correct-set inclusion ratios between weaker and stronger models.
    Inclusion(InclusionArgs),
    /// Add a new model to a frozen checkpoint.
    Onboard(OnboardArgs),
    /// Embedding-geometry diagnostics.
    Diagnose {
        #[command(subcommand)]
        kind: Diagnose,
    },
    /// k-means on question directions and agreement with labels.
    Cluster(ClusterArgs),
    /// Generate a planted world.
    Synth(SynthArgs),
    /// Run the proposition checkers.
    CheckProps(CheckPropsArgs),
}

#[derive(Debug, Subcommand)]
pub enum Diagnose {
    /// Accuracy by question-norm quantile.
    Norms(NormsArgs),
    /// ROC of question norm against incorrect responses.
    Roc(GeomArgs),
    /// Directional alignment of each benchmark against the rest.
    Alignment(AlignmentArgs),
    /// Cosine to group mean direction.
    CosineStats(CosineArgs),
    /// PCA cumulative variance of model or question embeddings.
    Pca(SpectrumArgs),
    /// Entropic effective rank of model or question embeddings.
    Rank(SpectrumArgs),
    /// Two-dimensional cosine-kernel PCA of question directions.
    Kpca(KpcaArgs),
    /// Most opposed pair of question directions.
    Opposed(OpposedArgs),
}

/// Flags shared by every command. `config` is never part of the document.
#[derive(Debug, Args, Serialize)]
pub struct Common {
    /// JSON document with settings for this command; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<String>,
}

pub struct Done {
    pub summary: Value,
    /// False when a checked proposition was violated.
    pub holds: bool,
}

fn done(summary: Value) -> Result<Done> {
    Ok(Done { summary, holds: true })
}

fn progress(stage: &str, detail: Value) {
    let mut line = json!({ "stage": stage });
    if let (Value::Object(l), Value::Object(d)) = (&mut line, detail) {
        l.extend(d);
    }
    eprintln!("{line}");
}

pub fn run(command: Command) -> Result<Done> {
    match command {
        Command::Split(a) => split(a),
        Command::Fit(a) => fit(a),
        Command::Eval(a) => eval(a),
        Command::Fit2pl(a) => fit2pl(a),
        Command::Inclusion(a) => inclusion(a),
        Command::Onboard(a) => onboard(a),
        Command::Diagnose { kind } => diagnose(kind),
        Command::Cluster(a) => cluster(a),
        Command::Synth(a) => synth(a),
        Command::CheckProps(a) => check_props(a),
    }
}

fn load_ds(path: &str) -> Result<Dataset> {
    let ds = load_responses(path)?;
    progress("load", json!({ "responses": path, "records": ds.len() }));
    Ok(ds)
}

fn feature_paths(prefix: &str) -> (PathBuf, PathBuf) {
    prefixed_paths(prefix)
}

fn load_feats(prefix: &str) -> Result<FeatureMatrix> {
    let (m, b) = feature_paths(prefix);
    Ok(load_features(m, b)?)
}

fn load_ckpt(prefix: &str) -> Result<JeirtCheckpoint> {
    let (m, b) = prefixed_paths(prefix);
    Ok(load_checkpoint(m, b)?)
}

fn save_ckpt(out: &Outputs, name: &str, ckpt: &JeirtCheckpoint) -> Result<String> {
    let (m, b) = out.prefixed(name)?;
    save_checkpoint(ckpt, &m, &b)?;
    Ok(b.with_extension("").display().to_string())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &str) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(jeirt::Error::io(path, e)))?;
    serde_json::from_str(&text).map_err(|source| {
        CliError::Data(jeirt::Error::Json {
            path: path.into(),
            source,
        })
    })
}

fn parse_mode(mode: &str) -> Result<SplitMode> {
    match mode {
        "record" => Ok(SplitMode::Record),
        "question" => Ok(SplitMode::Question),
        other => Err(CliError::Config(format!("split mode must be `record` or `question`, got `{other}`"))),
    }
}

/// Either a saved split or one derived from ratios and a seed.
fn obtain_split(ds: &Dataset, split: &Option<String>, ratios: [f64; 3], seed: Option<u64>, mode: &str) -> Result<Split> {
    match split {
        Some(path) => {
            let s: Split = read_json(path)?;
            if s.total() != ds.len() || s.train.iter().chain(&s.val).chain(&s.test).any(|&i| i >= ds.len()) {
                return Err(CliError::Data(jeirt::Error::Shape(format!(
                    "split {path} covers {} records but the dataset has {}",
                    s.total(),
                    ds.len()
                ))));
            }
            Ok(s)
        }
        None => Ok(make_split_with_mode(ds, ratios, required(&seed, "seed")?, parse_mode(mode)?)?),
    }
}

// ---------------------------------------------------------------- split

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// Response records (JSON lines).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    responses: Option<String>,
    /// Train, validation and test shares.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    #[serde(skip_serializing_if = "Option::is_none")]
    ratios: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// `record` or `question`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SplitConfig {
    responses: Option<String>,
    ratios: [f64; 3],
    seed: Option<u64>,
    mode: String,
    out: Option<String>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            responses: None,
            ratios: [0.8, 0.1, 0.1],
            seed: None,
            mode: "record".into(),
            out: None,
        }
    }
}

fn split(a: SplitArgs) -> Result<Done> {
    let cfg: SplitConfig = resolve(a.common.config.as_deref(), &a)?;
    let responses = required(&cfg.responses, "responses")?;
    let seed = required(&cfg.seed, "seed")?;
    let out = Outputs::require(cfg.out.as_deref(), &[Path::new(&responses)])?;
    let ds = load_ds(&responses)?;
    let s = make_split_with_mode(&ds, cfg.ratios, seed, parse_mode(&cfg.mode)?)?;
    out.json("resolved-config.json", &cfg)?;
    out.json("split.json", &s)?;
    done(json!({ "train": s.train.len(), "val": s.val.len(), "test": s.test.len() }))
}

// ---------------------------------------------------------------- fit

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    responses: Option<String>,
    /// Feature prefix: reads `<prefix>.manifest.json` and `<prefix>.f32`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    features: Option<String>,
    /// Saved split; otherwise one is made from `ratios` and `seed`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    split: Option<String>,
    #[arg(long, value_delimiter = ',', num_args = 3)]
    #[serde(skip_serializing_if = "Option::is_none")]
    ratios: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// Embedding dimension.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    patience: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FitConfig {
    responses: Option<String>,
    features: Option<String>,
    split: Option<String>,
    ratios: [f64; 3],
    mode: String,
    seed: Option<u64>,
    dim: usize,
    batch_size: usize,
    max_epochs: usize,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    patience: usize,
    norm_guard: f64,
    init_table_variance: f64,
    out: Option<String>,
}

impl Default for FitConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            responses: None,
            features: None,
            split: None,
            ratios: [0.8, 0.1, 0.1],
            mode: "record".into(),
            seed: None,
            dim: t.dim,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            lr: t.adam.lr,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            eps: t.adam.eps,
            patience: t.patience,
            norm_guard: t.norm_guard,
            init_table_variance: t.init_table_variance,
            out: None,
        }
    }
}

fn fit(a: FitArgs) -> Result<Done> {
    let cfg: FitConfig = resolve(a.common.config.as_deref(), &a)?;
    let responses = required(&cfg.responses, "responses")?;
    let features = required(&cfg.features, "features")?;
    let seed = required(&cfg.seed, "seed")?;
    let train_cfg = TrainConfig {
        dim: cfg.dim,
        batch_size: cfg.batch_size,
        max_epochs: cfg.max_epochs,
        seed,
        norm_guard: cfg.norm_guard,
        adam: AdamConfig {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
        },
        patience: cfg.patience,
        init_table_variance: cfg.init_table_variance,
    };
    train_cfg.validate()?;
    let (fm, fb) = feature_paths(&features);
    let mut inputs = vec![Path::new(&responses), fm.as_path(), fb.as_path()];
    if let Some(s) = &cfg.split {
        inputs.push(Path::new(s));
    }
    let out = Outputs::require(cfg.out.as_deref(), &inputs)?;
    let ds = load_ds(&responses)?;
    let feats = load_feats(&features)?;
    let split = obtain_split(&ds, &cfg.split, cfg.ratios, cfg.seed, &cfg.mode)?;
    progress(
        "train",
        json!({ "train": split.train.len(), "val": split.val.len(), "dim": cfg.dim, "max_epochs": cfg.max_epochs }),
    );
    let outcome = train(&ds, &split, &feats, &train_cfg)?;
    for e in &outcome.history {
        progress("epoch", json!({ "epoch": e.epoch, "train_loss": e.train_loss, "val_loss": e.val_loss }));
    }
    out.json("resolved-config.json", &cfg)?;
    if cfg.split.is_none() {
        out.json("split.json", &split)?;
    }
    out.json("history.json", &outcome.history)?;
    let ckpt = save_ckpt(&out, "checkpoint", &outcome.checkpoint)?;
    done(json!({
        "checkpoint": ckpt,
        "best_epoch": outcome.checkpoint.meta.epoch,
        "val_loss": outcome.checkpoint.meta.val_loss,
        "init_val_loss": outcome.init_val_loss,
        "epochs_run": outcome.history.len(),
    }))
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// Checkpoint prefix.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoint: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    responses: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    features: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    split: Option<String>,
    #[arg(long, value_delimiter = ',', num_args = 3)]
    #[serde(skip_serializing_if = "Option::is_none")]
    ratios: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// `train`, `val`, `test` or `all`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    part: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct EvalConfig {
    checkpoint: Option<String>,
    responses: Option<String>,
    features: Option<String>,
    split: Option<String>,
    ratios: [f64; 3],
    mode: String,
    seed: Option<u64>,
    part: String,
    out: Option<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            responses: None,
            features: None,
            split: None,
            ratios: [0.8, 0.1, 0.1],
            mode: "record".into(),
            seed: None,
            part: "test".into(),
            out: None,
        }
    }
}

fn eval(a: EvalArgs) -> Result<Done> {
    let cfg: EvalConfig = resolve(a.common.config.as_deref(), &a)?;
    let ckpt_prefix = required(&cfg.checkpoint, "checkpoint")?;
    let responses = required(&cfg.responses, "responses")?;
    let features = required(&cfg.features, "features")?;
    let out = Outputs::new(cfg.out.as_deref(), &[Path::new(&responses)])?;
    let ds = load_ds(&responses)?;
    let feats = load_feats(&features)?;
    let ckpt = load_ckpt(&ckpt_prefix)?;
    let all: Vec<usize>;
    let split;
    let indices: &[usize] = match cfg.part.as_str() {
        "all" => {
            all = (0..ds.len()).collect();
            &all
        }
        part => {
            let part = match part {
                "train" => SplitPart::Train,
                "val" => SplitPart::Val,
                "test" => SplitPart::Test,
                other => return Err(CliError::Config(format!("unknown part `{other}`"))),
            };
            split = obtain_split(&ds, &cfg.split, cfg.ratios, cfg.seed, &cfg.mode)?;
            split.part(part)
        }
    };
    let report = evaluate_indices(&ckpt, &ds, indices, &feats)?;
    out.json("resolved-config.json", &cfg)?;
    out.json("eval.json", &report)?;
    done(json!({
        "part": cfg.part,
        "records": report.records,
        "accuracy": report.overall_accuracy,
        "log_loss": report.mean_log_loss,
    }))
}

// ---------------------------------------------------------------- fit-2pl

#[derive(Debug, Args, Serialize)]
pub struct Fit2plArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    responses: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    l2: Option<f64>,
    /// Probability above which every model counts as predicted correct.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    p_hi: Option<f64>,
    /// Probability below which every model counts as predicted incorrect.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    p_lo: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct Fit2plConfig {
    responses: Option<String>,
    seed: Option<u64>,
    epochs: usize,
    lr: f64,
    l2: f64,
    p_hi: f64,
    p_lo: f64,
    out: Option<String>,
}

impl Default for Fit2plConfig {
    fn default() -> Self {
        let d = Irt2plConfig::default();
        Self {
            responses: None,
            seed: None,
            epochs: d.epochs,
            lr: d.lr,
            l2: d.l2,
            p_hi: 0.99,
            p_lo: 0.01,
            out: None,
        }
    }
}

fn fit2pl(a: Fit2plArgs) -> Result<Done> {
    let cfg: Fit2plConfig = resolve(a.common.config.as_deref(), &a)?;
    let responses = required(&cfg.responses, "responses")?;
    let seed = required(&cfg.seed, "seed")?;
    if !(0.0 < cfg.p_lo && cfg.p_lo < cfg.p_hi && cfg.p_hi < 1.0) {
        return Err(CliError::Config("need 0 < p_lo < p_hi < 1".into()));
    }
    let out = Outputs::new(cfg.out.as_deref(), &[Path::new(&responses)])?;
    let ds = load_ds(&responses)?;
    let params = fit_2pl(
        &ds,
        &Irt2plConfig {
            epochs: cfg.epochs,
            lr: cfg.lr,
            l2: cfg.l2,
            seed,
        },
    )?;
    let sat = saturation_report(&params, &ds, cfg.p_hi, cfg.p_lo)?;
    let negative = params.a.iter().filter(|&&a| a < 0.0).count();
    out.json("resolved-config.json", &cfg)?;
    out.json("irt2pl.json", &params)?;
    out.json("saturation.json", &sat)?;
    done(json!({
        "items": params.a.len(),
        "models": params.theta.len(),
        "negative_discrimination": negative,
        "predicted_unanimous_fraction": sat.predicted_unanimous_fraction,
        "actual_unanimous_fraction": sat.actual_unanimous_fraction,
        "log_loss": mean_log_loss(&params, &ds)?,
    }))
}

// ---------------------------------------------------------------- inclusion

#[derive(Debug, Args, Serialize)]
pub struct InclusionArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    responses: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct InclusionConfig {
    responses: Option<String>,
    out: Option<String>,
}

fn inclusion(a: InclusionArgs) -> Result<Done> {
    let cfg: InclusionConfig = resolve(a.common.config.as_deref(), &a)?;
    let responses = required(&cfg.responses, "responses")?;
    let out = Outputs::new(cfg.out.as_deref(), &[Path::new(&responses)])?;
    let ds = load_ds(&responses)?;
    let inc = correct_set_inclusion(&ds);
    let values: Vec<f64> = inc.defined_values().collect();
    let positive = values.iter().filter(|&&v| v > 0.0).count();
    let mean = if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    };
    out.json("resolved-config.json", &cfg)?;
    out.json("inclusion.json", &inc)?;
    done(json!({
        "models": inc.model_ids.len(),
        "defined_pairs": values.len(),
        "pairs_violating_inclusion": positive,
        "mean_ratio": mean,
    }))
}

// ---------------------------------------------------------------- onboard

#[derive(Debug, Args, Serialize)]
pub struct OnboardArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// Checkpoint prefix of the frozen space.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoint: Option<String>,
    /// Records of the new model only.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    responses: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    features: Option<String>,
    /// Training fractions of the curve, ascending.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    fractions: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    test_fraction: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    l2: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct OnboardRunConfig {
    checkpoint: Option<String>,
    responses: Option<String>,
    features: Option<String>,
    fractions: Vec<f64>,
    seed: Option<u64>,
    test_fraction: f64,
    l2: f64,
    max_iters: usize,
    tol: f64,
    out: Option<String>,
}

impl Default for OnboardRunConfig {
    fn default() -> Self {
        let d = OnboardConfig::default();
        Self {
            checkpoint: None,
            responses: None,
            features: None,
            fractions: d.fractions,
            seed: None,
            test_fraction: d.test_fraction,
            l2: d.l2,
            max_iters: d.max_iters,
            tol: d.tol,
            out: None,
        }
    }
}

fn onboard(a: OnboardArgs) -> Result<Done> {
    let cfg: OnboardRunConfig = resolve(a.common.config.as_deref(), &a)?;
    let ckpt_prefix = required(&cfg.checkpoint, "checkpoint")?;
    let responses = required(&cfg.responses, "responses")?;
    let features = required(&cfg.features, "features")?;
    let ob = OnboardConfig {
        fractions: cfg.fractions.clone(),
        seed: required(&cfg.seed, "seed")?,
        test_fraction: cfg.test_fraction,
        l2: cfg.l2,
        max_iters: cfg.max_iters,
        tol: cfg.tol,
    };
    ob.validate()?;
    let (cm, cb) = prefixed_paths(&ckpt_prefix);
    let out = Outputs::require(cfg.out.as_deref(), &[Path::new(&responses), cm.as_path(), cb.as_path()])?;
    let ds = load_ds(&responses)?;
    let feats = load_feats(&features)?;
    let ckpt = load_ckpt(&ckpt_prefix)?;
    let curve = subsample_curve(&ckpt, ds.records(), &feats, &ob)?;
    for row in &curve.rows {
        progress("fraction", json!(row));
    }
    let last = *ob.fractions.last().expect("validated non-empty");
    let result = onboard_with(&ckpt, ds.records(), &feats, last, &ob)?;
    out.json("resolved-config.json", &cfg)?;
    out.json("curve.json", &curve)?;
    out.json(
        "onboard.json",
        &json!({
            "model_id": result.model_id,
            "fraction": last,
            "embedding": result.embedding,
            "fit": result.fit,
            "train_records": result.train_records,
            "test": result.test,
        }),
    )?;
    let saved = save_ckpt(&out, "checkpoint", &result.checkpoint)?;
    done(json!({
        "model_id": result.model_id,
        "checkpoint": saved,
        "curve": curve.rows,
    }))
}

// ---------------------------------------------------------------- diagnose

/// Inputs every geometry diagnostic needs.
#[derive(Debug, Args, Serialize)]
pub struct GeomArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoint: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    features: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    responses: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct NormsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    geom: GeomArgs,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    bins: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct AlignmentArgs {
    #[command(flatten)]
    #[serde(flatten)]
    geom: GeomArgs,
    /// Single benchmark; all benchmarks when absent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    benchmark: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct CosineArgs {
    #[command(flatten)]
    #[serde(flatten)]
    geom: GeomArgs,
    /// `benchmark` or `subject`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    grouping: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct SpectrumArgs {
    #[command(flatten)]
    #[serde(flatten)]
    geom: GeomArgs,
    /// `models` (table rows) or `questions` (adapter outputs).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    target: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct KpcaArgs {
    #[command(flatten)]
    #[serde(flatten)]
    geom: GeomArgs,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    cap: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct OpposedArgs {
    #[command(flatten)]
    #[serde(flatten)]
    geom: GeomArgs,
    /// Restrict to one subject (or benchmark when subjects are absent).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    within: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct DiagnoseConfig {
    checkpoint: Option<String>,
    features: Option<String>,
    responses: Option<String>,
    bins: usize,
    benchmark: Option<String>,
    grouping: String,
    target: String,
    cap: usize,
    within: Option<String>,
    seed: Option<u64>,
    out: Option<String>,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            features: None,
            responses: None,
            bins: 10,
            benchmark: None,
            grouping: "benchmark".into(),
            target: "models".into(),
            cap: KPCA_DEFAULT_CAP,
            within: None,
            seed: None,
            out: None,
        }
    }
}

struct GeomInputs {
    ds: Dataset,
    ckpt: JeirtCheckpoint,
    geom: Vec<QuestionGeometry>,
    out: Outputs,
}

fn geometry_inputs(cfg: &DiagnoseConfig) -> Result<GeomInputs> {
    let responses = required(&cfg.responses, "responses")?;
    let features = required(&cfg.features, "features")?;
    let ckpt_prefix = required(&cfg.checkpoint, "checkpoint")?;
    let out = Outputs::new(cfg.out.as_deref(), &[Path::new(&responses)])?;
    let ds = load_ds(&responses)?;
    let feats = load_feats(&features)?;
    let ckpt = load_ckpt(&ckpt_prefix)?;
    let geom = question_geometry(&ckpt, &feats, &ds)?;
    progress("geometry", json!({ "questions": geom.len(), "dim": ckpt.dim() }));
    Ok(GeomInputs { ds, ckpt, geom, out })
}

fn diagnose(kind: Diagnose) -> Result<Done> {
    let (name, cfg): (&str, DiagnoseConfig) = match &kind {
        Diagnose::Norms(a) => ("norms", resolve(a.geom.common.config.as_deref(), a)?),
        Diagnose::Roc(a) => ("roc", resolve(a.common.config.as_deref(), a)?),
        Diagnose::Alignment(a) => ("alignment", resolve(a.geom.common.config.as_deref(), a)?),
        Diagnose::CosineStats(a) => ("cosine-stats", resolve(a.geom.common.config.as_deref(), a)?),
        Diagnose::Pca(a) => ("pca", resolve(a.geom.common.config.as_deref(), a)?),
        Diagnose::Rank(a) => ("rank", resolve(a.geom.common.config.as_deref(), a)?),
        Diagnose::Kpca(a) => ("kpca", resolve(a.geom.common.config.as_deref(), a)?),
        Diagnose::Opposed(a) => ("opposed", resolve(a.geom.common.config.as_deref(), a)?),
    };
    let seed = if name == "opposed" {
        Some(required(&cfg.seed, "seed")?)
    } else {
        None
    };
    let g = geometry_inputs(&cfg)?;
    let (report, summary): (Value, Value) = match name {
        "norms" => {
            let bins = norm_quantile_accuracy(&g.geom, &g.ds, cfg.bins)?;
            let acc: Vec<Option<f64>> = bins.iter().map(|b| b.accuracy).collect();
            (json!(bins), json!({ "bins": bins.len(), "accuracy": acc }))
        }
        "roc" => {
            let roc = roc_from_norms(&g.geom, &g.ds)?;
            let s = json!({ "auc": roc.auc, "positives": roc.positives, "negatives": roc.negatives });
            (json!(roc), s)
        }
        "alignment" => {
            let benches: Vec<String> = match &cfg.benchmark {
                Some(b) => vec![b.clone()],
                None => g.ds.benchmark_map().into_values().collect::<std::collections::BTreeSet<_>>().into_iter().collect(),
            };
            let mut values = BTreeMap::new();
            let mut skipped = BTreeMap::new();
            for b in benches {
                match directional_alignment(&g.geom, &b) {
                    Ok(v) => {
                        values.insert(b, v);
                    }
                    Err(e) if cfg.benchmark.is_none() => {
                        skipped.insert(b, e.to_string());
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            let r = json!({ "alignment": values, "skipped": skipped });
            (r.clone(), r)
        }
        "cosine-stats" => {
            let grouping = match cfg.grouping.as_str() {
                "benchmark" => Grouping::Benchmark,
                "subject" => Grouping::Subject,
                other => return Err(CliError::Config(format!("grouping must be `benchmark` or `subject`, got `{other}`"))),
            };
            let stats = cosine_to_mean_stats(&g.geom, grouping)?;
            (json!(stats), json!({ "groups": stats.groups.len(), "global": stats.global }))
        }
        "pca" | "rank" => {
            let vectors = match cfg.target.as_str() {
                "models" => g.ckpt.table().to_vectors(),
                "questions" => g.geom.iter().map(|q| q.embedding.clone()).collect(),
                other => return Err(CliError::Config(format!("target must be `models` or `questions`, got `{other}`"))),
            };
            if name == "pca" {
                let spec = pca_cumulative_variance(&vectors)?;
                let s = json!({ "target": cfg.target, "components": spec.eigenvalues.len(), "cumulative": spec.cumulative });
                (json!(spec), s)
            } else {
                let r = json!({ "target": cfg.target, "vectors": vectors.len(), "effective_rank": effective_rank(&vectors)? });
                (r.clone(), r)
            }
        }
        "kpca" => {
            let coords = kernel_pca_cosine_2d(&g.geom, cfg.cap)?;
            let rows: Vec<Value> = g
                .geom
                .iter()
                .zip(&coords)
                .map(|(q, c)| json!({ "question_id": q.question_id, "benchmark": q.benchmark, "subject": q.subject, "x": c[0], "y": c[1] }))
                .collect();
            (json!(rows), json!({ "points": rows.len() }))
        }
        "opposed" => {
            let pair = most_opposed_pair(&g.geom, cfg.within.as_deref(), seed.expect("checked above"))?;
            (json!(pair), json!(pair))
        }
        _ => unreachable!("every diagnostic is matched above"),
    };
    g.out.json("resolved-config.json", &cfg)?;
    g.out.json(&format!("{name}.json"), &report)?;
    done(summary)
}

// ---------------------------------------------------------------- cluster

#[derive(Debug, Args, Serialize)]
pub struct ClusterArgs {
    #[command(flatten)]
    #[serde(flatten)]
    geom: GeomArgs,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_iters: Option<usize>,
    /// Reference labels: `benchmark` or `subject`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    labels: Option<String>,
    /// NMI normalization: `arithmetic` or `geometric`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    nmi: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ClusterConfig {
    checkpoint: Option<String>,
    features: Option<String>,
    responses: Option<String>,
    k: Option<usize>,
    seed: Option<u64>,
    max_iters: usize,
    labels: String,
    nmi: NmiNorm,
    out: Option<String>,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            features: None,
            responses: None,
            k: None,
            seed: None,
            max_iters: 300,
            labels: "subject".into(),
            nmi: NmiNorm::Arithmetic,
            out: None,
        }
    }
}

fn cluster(a: ClusterArgs) -> Result<Done> {
    let cfg: ClusterConfig = resolve(a.geom.common.config.as_deref(), &a)?;
    let k = required(&cfg.k, "k")?;
    let seed = required(&cfg.seed, "seed")?;
    let g = geometry_inputs(&DiagnoseConfig {
        checkpoint: cfg.checkpoint.clone(),
        features: cfg.features.clone(),
        responses: cfg.responses.clone(),
        out: cfg.out.clone(),
        ..DiagnoseConfig::default()
    })?;
    let labels = match cfg.labels.as_str() {
        "benchmark" => g.ds.benchmark_map(),
        "subject" => g.ds.subject_map(),
        other => return Err(CliError::Config(format!("labels must be `benchmark` or `subject`, got `{other}`"))),
    };
    let assign = kmeans_unit(&g.geom, k, seed, cfg.max_iters)?;
    progress("kmeans", json!({ "iterations": assign.iterations, "converged": assign.converged, "inertia": assign.inertia }));
    let metrics = agreement_metrics_with(&assign, &labels, cfg.nmi)?;
    g.out.json("resolved-config.json", &cfg)?;
    g.out.json("clusters.json", &assign)?;
    g.out.json("metrics.json", &metrics)?;
    done(json!({ "k": k, "inertia": assign.inertia, "converged": assign.converged, "metrics": metrics }))
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// Number of models.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    m: Option<usize>,
    /// Number of questions.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    /// Embedding dimension.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    d: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// Median question norm of the log-normal difficulty profile.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    median_norm: Option<f64>,
    /// Log-scale spread of question norms.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma_log: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model_spread: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    target_mean_prob: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SynthConfig {
    m: usize,
    n: usize,
    d: usize,
    seed: Option<u64>,
    median_norm: f64,
    sigma_log: f64,
    /// Overrides the log-normal profile with one fixed norm.
    constant_norm: Option<f64>,
    direction: DirectionProfile,
    model_spread: f64,
    target_mean_prob: f64,
    feature_offset: f64,
    out: Option<String>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let p = PlantedConfig::default();
        let (median_norm, sigma_log) = match p.difficulty {
            DifficultyProfile::LogNormal { median, sigma_log } => (median, sigma_log),
            DifficultyProfile::Constant { norm } => (norm, 0.0),
        };
        Self {
            m: p.models,
            n: p.questions,
            d: p.dim,
            seed: None,
            median_norm,
            sigma_log,
            constant_norm: None,
            direction: p.direction,
            model_spread: p.model_spread,
            target_mean_prob: p.target_mean_prob,
            feature_offset: p.feature_offset,
            out: None,
        }
    }
}

fn synth(a: SynthArgs) -> Result<Done> {
    let cfg: SynthConfig = resolve(a.common.config.as_deref(), &a)?;
    let planted = PlantedConfig {
        models: cfg.m,
        questions: cfg.n,
        dim: cfg.d,
        seed: required(&cfg.seed, "seed")?,
        difficulty: match cfg.constant_norm {
            Some(norm) => DifficultyProfile::Constant { norm },
            None => DifficultyProfile::LogNormal {
                median: cfg.median_norm,
                sigma_log: cfg.sigma_log,
            },
        },
        direction: cfg.direction.clone(),
        model_spread: cfg.model_spread,
        target_mean_prob: cfg.target_mean_prob,
        feature_offset: cfg.feature_offset,
    };
    planted.validate()?;
    let out = Outputs::require(cfg.out.as_deref(), &[])?;
    progress("synth", json!({ "models": cfg.m, "questions": cfg.n, "dim": cfg.d }));
    let world = generate_planted(&planted)?;
    let dir = out.path("")?.expect("required above");
    world.save(&dir)?;
    out.json("resolved-config.json", &cfg)?;
    done(json!({
        "records": world.records.len(),
        "mean_planted_probability": world.mean_true_prob(),
        "bayes_log_loss": world.bayes_log_loss,
        "shift": world.shift,
        "spread": world.spread,
        "responses": dir.join("responses.jsonl"),
        "features": dir.join("features"),
        "oracle_checkpoint": dir.join("oracle"),
    }))
}

// ---------------------------------------------------------------- check-props

#[derive(Debug, Args, Serialize)]
pub struct CheckPropsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// Random triples per bound.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    trials: Option<usize>,
    /// Random direction pairs for the ordering construction.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pairs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct CheckPropsConfig {
    trials: usize,
    pairs: usize,
    seed: Option<u64>,
    out: Option<String>,
}

impl Default for CheckPropsConfig {
    fn default() -> Self {
        Self {
            trials: 100_000,
            pairs: 1000,
            seed: None,
            out: None,
        }
    }
}

fn check_props(a: CheckPropsArgs) -> Result<Done> {
    let cfg: CheckPropsConfig = resolve(a.common.config.as_deref(), &a)?;
    let seed = required(&cfg.seed, "seed")?;
    let out = Outputs::new(cfg.out.as_deref(), &[])?;
    let prob = check_prob_stability(cfg.trials, seed);
    progress("probability-bound", json!({ "violations": prob.violations }));
    let shift = check_ability_shift(cfg.trials, seed.wrapping_add(1));
    progress("ability-bound", json!({ "violations": shift.violations }));
    let order = check_prop1_with(cfg.pairs, seed.wrapping_add(2));
    progress("ordering-construction", json!({ "violations": order.violations }));
    let holds = prob.holds() && shift.holds() && order.holds();
    let report = json!({
        "holds": holds,
        "probability_stability": prob,
        "ability_shift": shift,
        "ordering_construction": order,
    });
    out.json("resolved-config.json", &cfg)?;
    out.json("props.json", &report)?;
    Ok(Done { summary: report, holds })
}

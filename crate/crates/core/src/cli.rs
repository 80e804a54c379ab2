//! Command-line pipeline: corpus synthesis, label splitting, the three
//! training stages, evaluation, verification and plotting. Every command
//! snapshots its effective config into the run directory before doing any
//! work, so a finished run is reproducible from the snapshot alone.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::corpus::{
    generate_synthetic_corpus, load_corpus, load_world, save_corpus, save_world,
    split_by_label_proportion, CorpusSplit, DialogSession, GeneratorConfig,
};
use crate::evaluation::{evaluate_corpus, MetricReport, RolloutCaps};
use crate::model::{load_checkpoint, save_checkpoint, Checkpoint, ModelConfig, ModelParameters, ModelRole};
use crate::training::{self_train, semi_supervised_train, supervised_train, EvalContext, StScheme, TrainConfig, TrainOutcome};
use crate::verification::run_verification;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

fn fail<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Failure(e.to_string())
}

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ModelShape {
    pub layers: usize,
    pub heads: usize,
    pub hidden_dim: usize,
    pub context_len: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 2,
            hidden_dim: 64,
            context_len: 256,
        }
    }
}

impl ModelShape {
    pub fn to_config(self, vocab_size: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            vocab_size,
            layers: self.layers,
            heads: self.heads,
            hidden_dim: self.hidden_dim,
            context_len: self.context_len,
            seed,
        }
    }
}

/// The effective configuration of a run; file values are overridden by
/// `--set key=value` pairs and `--seed`.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct AppConfig {
    pub seed: u64,
    pub proportion: f64,
    pub generator: GeneratorConfig,
    pub model: ModelShape,
    pub train: TrainConfig,
    pub caps: RolloutCaps,
}

impl AppConfig {
    fn base() -> Self {
        Self {
            seed: 0,
            proportion: 0.1,
            generator: GeneratorConfig::default(),
            model: ModelShape::default(),
            train: TrainConfig::default(),
            caps: RolloutCaps::default(),
        }
    }
}

fn json_kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "bool",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

/// Merges `overlay` onto `base`, rejecting keys absent from the base
/// skeleton and scalar type changes.
fn merge_checked(base: &mut Value, overlay: &Value, path: &str) -> Result<(), CliError> {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let sub = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                let slot = b
                    .get_mut(k)
                    .ok_or_else(|| CliError::Usage(format!("unknown config key {sub:?}")))?;
                merge_checked(slot, v, &sub)?;
            }
            Ok(())
        }
        (b, o) => {
            if json_kind(b) != json_kind(o) && !b.is_null() && !o.is_null() {
                return Err(CliError::Usage(format!(
                    "type mismatch for key {path:?}: config holds {}, override is {}",
                    json_kind(b),
                    json_kind(o)
                )));
            }
            *b = o.clone();
            Ok(())
        }
    }
}

fn apply_set(base: &mut Value, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {spec:?}")))?;
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut overlay = value;
    for part in key.rsplit('.') {
        overlay = serde_json::json!({ part: overlay });
    }
    merge_checked(base, &overlay, "")
}

/// File values < override values; unknown keys rejected at any depth.
pub fn resolve_config(
    file: Option<&Path>,
    sets: &[String],
    seed: Option<u64>,
) -> Result<AppConfig, CliError> {
    let mut base = serde_json::to_value(AppConfig::base()).expect("config serializes");
    if let Some(path) = file {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let overlay: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {} is not valid JSON: {e}", path.display())))?;
        merge_checked(&mut base, &overlay, "")?;
    }
    for spec in sets {
        apply_set(&mut base, spec)?;
    }
    if let Some(s) = seed {
        apply_set(&mut base, &format!("seed={s}"))?;
    }
    serde_json::from_value(base).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
}

// ---------------------------------------------------------------------------
// argument surface
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct Common {
    /// JSON config file; command-line overrides win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted-key overrides, e.g. --set train.max_lr=0.003
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory (defaults under $DIALVAR_OUT or ./runs).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Parser)]
#[command(
    name = "dialvar",
    about = "Semi-supervised variational training for latent-state dialog models",
    arg_required_else_help = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Generate a synthetic dialog corpus with exact latent ground truth
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Split a corpus into labeled and unlabeled sessions
    Split {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        proportion: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Supervised pre-training of the generative and inference models
    TrainSup {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        world: PathBuf,
        /// Validation corpus for checkpoint selection
        #[arg(long)]
        val: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Semi-supervised variational training from a supervised run
    TrainSemiVl {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        /// Run directory holding p.ckpt and q.ckpt to start from
        #[arg(long)]
        init: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Semi-supervised self-training baseline (generative model only)
    TrainSemiSt {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        init: PathBuf,
        /// One of response_stt, joint_stt, response, joint
        #[arg(long)]
        scheme: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// End-to-end evaluation of a generative checkpoint
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        world: PathBuf,
        /// Generative model checkpoint (p.ckpt)
        #[arg(long)]
        model: PathBuf,
        /// Method label recorded into the report (for plotting)
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        proportion: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the verification suite on the shipped enumerable fixtures
    Verify {
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value = "1,2,3")]
        seeds: String,
        #[command(flatten)]
        common: Common,
    },
    /// Plot combined score against label proportion from eval reports
    Plot {
        /// Eval report files (report.json) or run directories containing one
        #[arg(long, num_args = 1.., required = true)]
        reports: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

// ---------------------------------------------------------------------------
// run directories and artifacts
// ---------------------------------------------------------------------------

fn run_dir(common: &Common, name: &str) -> Result<PathBuf, CliError> {
    let dir = match &common.out {
        Some(d) => d.clone(),
        None => std::env::var_os("DIALVAR_OUT")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"))
            .join(name),
    };
    fs::create_dir_all(&dir).map_err(fail)?;
    Ok(dir)
}

fn snapshot_config(dir: &Path, cfg: &AppConfig) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(cfg).expect("config serializes");
    fs::write(dir.join("config.json"), text).map_err(fail)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    fs::write(path, serde_json::to_string_pretty(value).expect("serializes")).map_err(fail)
}

fn write_run_record(dir: &Path, outcome: &TrainOutcome) -> Result<(), CliError> {
    write_json(&dir.join("record.json"), &outcome.record)?;
    let mut lines = String::new();
    for e in &outcome.record.epochs {
        lines.push_str(&serde_json::to_string(e).expect("serializes"));
        lines.push('\n');
    }
    fs::write(dir.join("metrics.jsonl"), lines).map_err(fail)?;
    let log: String = outcome
        .record
        .batch_log
        .iter()
        .map(|k| match k {
            crate::training::BatchKind::Labeled => 'L',
            crate::training::BatchKind::Unlabeled => 'U',
        })
        .collect();
    fs::write(dir.join("batches.log"), log).map_err(fail)
}

/// Eval artifact: the metric report plus plot metadata.
#[derive(Debug, Serialize, Deserialize)]
pub struct EvalReportFile {
    pub label: String,
    pub proportion: f64,
    pub report: MetricReport,
}

fn split_from_sessions(sessions: Vec<DialogSession>, proportion: f64, seed: u64) -> CorpusSplit {
    let (labeled, unlabeled): (Vec<_>, Vec<_>) = sessions.into_iter().partition(|s| s.labeled);
    CorpusSplit {
        labeled,
        unlabeled,
        proportion,
        seed,
    }
}

fn load_models(init: &Path) -> Result<(ModelParameters, Option<ModelParameters>), CliError> {
    let p = load_checkpoint(&init.join("p.ckpt"), None).map_err(fail)?;
    let q_path = init.join("q.ckpt");
    let q = if q_path.exists() {
        Some(load_checkpoint(&q_path, Some(&p.model.config)).map_err(fail)?.model)
    } else {
        None
    };
    Ok((p.model, q))
}

struct EvalData {
    vocab: crate::vocab::Vocab,
    ontology: crate::corpus::Ontology,
    database: crate::corpus::Database,
    validation: Vec<DialogSession>,
}

fn load_eval_ctx(
    world_path: &Path,
    val: Option<&PathBuf>,
) -> Result<Option<EvalData>, CliError> {
    let Some(val_path) = val else {
        return Ok(None);
    };
    let world = load_world(world_path).map_err(fail)?;
    let validation = load_corpus(val_path).map_err(fail)?;
    Ok(Some(EvalData {
        vocab: world.vocab,
        ontology: world.ontology,
        database: world.database,
        validation,
    }))
}

// ---------------------------------------------------------------------------
// command bodies
// ---------------------------------------------------------------------------

fn cmd_synth(common: &Common) -> Result<(), CliError> {
    let cfg = resolve_config(common.config.as_deref(), &common.set, common.seed)?;
    let dir = run_dir(common, "synth")?;
    snapshot_config(&dir, &cfg)?;
    let corpus = generate_synthetic_corpus(&cfg.generator, cfg.seed).map_err(fail)?;
    let vocab = corpus.vocab();
    save_corpus(&dir.join("corpus.jsonl"), &corpus.sessions).map_err(fail)?;
    save_world(&dir.join("world.json"), &corpus.ontology, &corpus.database, &vocab).map_err(fail)?;
    println!(
        "wrote {} sessions, vocab {} tokens -> {}",
        corpus.sessions.len(),
        vocab.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_split(corpus_path: &Path, proportion: Option<f64>, common: &Common) -> Result<(), CliError> {
    let mut cfg = resolve_config(common.config.as_deref(), &common.set, common.seed)?;
    if let Some(p) = proportion {
        cfg.proportion = p;
    }
    let dir = run_dir(common, "split")?;
    snapshot_config(&dir, &cfg)?;
    let sessions = load_corpus(corpus_path).map_err(fail)?;
    let split = split_by_label_proportion(&sessions, cfg.proportion, cfg.seed).map_err(fail)?;
    let mut merged = split.labeled.clone();
    merged.extend(split.unlabeled.clone());
    merged.sort_by(|a, b| a.id.cmp(&b.id));
    save_corpus(&dir.join("split.jsonl"), &merged).map_err(fail)?;
    println!(
        "split {} sessions into {} labeled / {} unlabeled -> {}",
        merged.len(),
        split.labeled.len(),
        split.unlabeled.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_train_sup(
    corpus_path: &Path,
    world_path: &Path,
    val: Option<&PathBuf>,
    common: &Common,
) -> Result<(), CliError> {
    let cfg = resolve_config(common.config.as_deref(), &common.set, common.seed)?;
    let dir = run_dir(common, "train-sup")?;
    snapshot_config(&dir, &cfg)?;
    let world = load_world(world_path).map_err(fail)?;
    let sessions = load_corpus(corpus_path).map_err(fail)?;
    let labeled: Vec<DialogSession> = sessions.into_iter().filter(|s| s.labeled).collect();
    let mcfg = cfg.model.to_config(world.vocab.len(), cfg.seed);
    let mut p = ModelParameters::init(ModelRole::Generative, mcfg).map_err(fail)?;
    let mut q = ModelParameters::init(ModelRole::Inference, mcfg).map_err(fail)?;
    let eval_data = load_eval_ctx(world_path, val)?;
    let ctx = eval_data.as_ref().map(|d| EvalContext {
        vocab: &d.vocab,
        ontology: &d.ontology,
        database: &d.database,
        validation: &d.validation,
        caps: cfg.caps,
    });
    let outcome =
        supervised_train(&mut p, &mut q, &labeled, &world.vocab, &cfg.train, ctx.as_ref())
            .map_err(fail)?;
    save_checkpoint(&dir.join("p.ckpt"), &Checkpoint { model: outcome.best_p.clone(), optimizer: None })
        .map_err(fail)?;
    if let Some(bq) = &outcome.best_q {
        save_checkpoint(&dir.join("q.ckpt"), &Checkpoint { model: bq.clone(), optimizer: None })
            .map_err(fail)?;
    }
    write_run_record(&dir, &outcome)?;
    println!(
        "supervised training done: {} epochs over {} labeled sessions -> {}",
        outcome.record.epochs.len(),
        labeled.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_train_semi(
    corpus_path: &Path,
    world_path: &Path,
    val: Option<&PathBuf>,
    init: &Path,
    scheme: Option<&str>,
    variational: bool,
    common: &Common,
) -> Result<(), CliError> {
    let mut cfg = resolve_config(common.config.as_deref(), &common.set, common.seed)?;
    if let Some(s) = scheme {
        let parsed: StScheme = serde_json::from_value(Value::String(s.to_string()))
            .map_err(|_| CliError::Usage(format!("unknown self-training scheme {s:?}")))?;
        cfg.train.st_scheme = Some(parsed);
    }
    let dir = run_dir(common, if variational { "train-semi-vl" } else { "train-semi-st" })?;
    snapshot_config(&dir, &cfg)?;
    let world = load_world(world_path).map_err(fail)?;
    let sessions = load_corpus(corpus_path).map_err(fail)?;
    let split = split_from_sessions(sessions, cfg.proportion, cfg.seed);
    let (mut p, q) = load_models(init)?;
    let eval_data = load_eval_ctx(world_path, val)?;
    let ctx = eval_data.as_ref().map(|d| EvalContext {
        vocab: &d.vocab,
        ontology: &d.ontology,
        database: &d.database,
        validation: &d.validation,
        caps: cfg.caps,
    });
    let outcome = if variational {
        let mut q = q.ok_or_else(|| {
            CliError::Usage(format!("{} holds no q.ckpt, required for variational training", init.display()))
        })?;
        let requery_ctx = crate::variational::RequeryContext {
            vocab: &world.vocab,
            ontology: &world.ontology,
            database: &world.database,
        };
        let requery = cfg.train.estimator.db_requery.then_some(&requery_ctx);
        semi_supervised_train(&mut p, &mut q, &split, &world.vocab, &cfg.train, ctx.as_ref(), requery)
            .map_err(fail)?
    } else {
        self_train(&mut p, &split, &world.vocab, &cfg.train, ctx.as_ref()).map_err(fail)?
    };
    save_checkpoint(&dir.join("p.ckpt"), &Checkpoint { model: outcome.best_p.clone(), optimizer: None })
        .map_err(fail)?;
    if let Some(bq) = &outcome.best_q {
        save_checkpoint(&dir.join("q.ckpt"), &Checkpoint { model: bq.clone(), optimizer: None })
            .map_err(fail)?;
    }
    write_run_record(&dir, &outcome)?;
    println!(
        "{} training done: {} labeled / {} unlabeled -> {}",
        if variational { "semi-variational" } else { "self-training" },
        split.labeled.len(),
        split.unlabeled.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_eval(
    corpus_path: &Path,
    world_path: &Path,
    model_path: &Path,
    label: Option<&str>,
    proportion: Option<f64>,
    common: &Common,
) -> Result<(), CliError> {
    let cfg = resolve_config(common.config.as_deref(), &common.set, common.seed)?;
    let dir = run_dir(common, "eval")?;
    snapshot_config(&dir, &cfg)?;
    let world = load_world(world_path).map_err(fail)?;
    let sessions = load_corpus(corpus_path).map_err(fail)?;
    let ckpt = load_checkpoint(model_path, None).map_err(fail)?;
    let report = evaluate_corpus(
        &ckpt.model,
        &sessions,
        &world.vocab,
        &world.ontology,
        &world.database,
        cfg.caps,
    )
    .map_err(fail)?;
    print!("{}", report.table());
    let file = EvalReportFile {
        label: label.unwrap_or("model").to_string(),
        proportion: proportion.unwrap_or(cfg.proportion),
        report,
    };
    write_json(&dir.join("report.json"), &file)?;
    println!("report -> {}", dir.join("report.json").display());
    Ok(())
}

fn cmd_verify(samples: usize, seeds: &str, common: &Common) -> Result<(), CliError> {
    let cfg = resolve_config(common.config.as_deref(), &common.set, common.seed)?;
    let dir = run_dir(common, "verify")?;
    snapshot_config(&dir, &cfg)?;
    let seed_list: Vec<u64> = seeds
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("bad seed {s:?}")))
        })
        .collect::<Result<_, _>>()?;
    let report = run_verification(samples, &seed_list).map_err(fail)?;
    write_json(&dir.join("probe_report.json"), &report)?;
    print!("{}", report.summary());
    if report.all_pass {
        Ok(())
    } else {
        Err(CliError::Failure("verification failed".into()))
    }
}

fn cmd_plot(reports: &[PathBuf], common: &Common) -> Result<(), CliError> {
    let dir = run_dir(common, "plot")?;
    let mut by_label: std::collections::BTreeMap<String, Vec<(f64, f64)>> = Default::default();
    for path in reports {
        let file = if path.is_dir() {
            path.join("report.json")
        } else {
            path.clone()
        };
        let text = fs::read_to_string(&file)
            .map_err(|e| CliError::Usage(format!("cannot read report {}: {e}", file.display())))?;
        let rep: EvalReportFile = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{} is not an eval report: {e}", file.display())))?;
        by_label
            .entry(rep.label.clone())
            .or_default()
            .push((rep.proportion, rep.report.combined));
    }
    let series: Vec<crate::plot::Series> = by_label
        .into_iter()
        .map(|(label, points)| crate::plot::Series { label, points })
        .collect();
    let svg = crate::plot::line_chart(
        "combined score vs label proportion",
        "label proportion",
        "combined score",
        &series,
    );
    let out = dir.join("scores.svg");
    fs::write(&out, svg).map_err(fail)?;
    println!("plot -> {}", out.display());
    Ok(())
}

/// Executes a parsed command; errors carry the process exit code.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.cmd {
        Cmd::Synth { common } => cmd_synth(common),
        Cmd::Split {
            corpus,
            proportion,
            common,
        } => cmd_split(corpus, *proportion, common),
        Cmd::TrainSup {
            corpus,
            world,
            val,
            common,
        } => cmd_train_sup(corpus, world, val.as_ref(), common),
        Cmd::TrainSemiVl {
            corpus,
            world,
            val,
            init,
            common,
        } => cmd_train_semi(corpus, world, val.as_ref(), init, None, true, common),
        Cmd::TrainSemiSt {
            corpus,
            world,
            val,
            init,
            scheme,
            common,
        } => cmd_train_semi(corpus, world, val.as_ref(), init, scheme.as_deref(), false, common),
        Cmd::Eval {
            corpus,
            world,
            model,
            label,
            proportion,
            common,
        } => cmd_eval(corpus, world, model, label.as_deref(), *proportion, common),
        Cmd::Verify {
            samples,
            seeds,
            common,
        } => cmd_verify(*samples, seeds, common),
        Cmd::Plot { reports, common } => cmd_plot(reports, common),
    }
}

/// Entry point used by the binary: returns the process exit code.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/usage itself; help and version are successes
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

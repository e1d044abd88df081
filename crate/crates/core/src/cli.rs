//! Command-line front end.
//!
//! Subcommands: `train`, `eval`, `classify`, `ensemble train|eval`,
//! `verify`, `transform` and `synth`. Data goes to stdout, diagnostics to
//! stderr. Exit codes: 0 success, 1 verification failure or other error,
//! 2 usage error, 3 I/O or parse error.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use sha2::{Digest, Sha256};

use crate::ensemble::{self, EnsembleScorer, DEFAULT_REG};
use crate::error::{KgError, Result};
use crate::eval::{self, MetricsSummary};
use crate::kb::{load_dir, KnowledgeBase, Split};
use crate::models::io::{read_model, read_sidecar, write_atomic, write_model, write_sidecar};
use crate::models::{Embedding, Model, ModelKind};
use crate::synthetic::{self, SyntheticConfig};
use crate::training::{self, TrainConfig};
use crate::transforms::{self, verify};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "kgb", version, about = "Bilinear knowledge-graph embeddings")]
pub struct Cli {
    /// Worker threads (1 gives fully deterministic runs; default: all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// More log output on stderr (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write it with a sidecar and a run manifest
    Train(TrainArgs),
    /// Filtered entity-ranking metrics of a model
    Eval(EvalArgs),
    /// Triple classification with per-relation thresholds
    Classify(ClassifyArgs),
    /// Relation-level stacking ensemble
    #[command(subcommand)]
    Ensemble(EnsembleCommand),
    /// Run seeded checks of the model constructions
    Verify(VerifyArgs),
    /// Rewrite a model as an equivalent RESCAL model
    Transform(TransformArgs),
    /// Write a seeded synthetic dataset
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Kv,
    Both,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory with train.txt, valid.txt, test.txt
    #[arg(long)]
    pub data: PathBuf,
    /// Flat `key = value` config; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda_e: Option<f64>,
    #[arg(long)]
    pub lambda_r: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, env = "KGB_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub negatives: Option<usize>,
    /// Output model file
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Model file
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long, value_enum, default_value_t = Format::Both)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Valid,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Valid => Split::Valid,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Directory holding `valid.cls.tsv` / `test.cls.tsv`; created from the
    /// seed when missing
    #[arg(long)]
    pub sets: Option<PathBuf>,
    #[arg(long, env = "KGB_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum EnsembleCommand {
    /// Fit per-relation meta learners over two or more models
    Train(EnsembleTrainArgs),
    /// Ranking metrics of a fitted ensemble
    Eval(EnsembleEvalArgs),
}

#[derive(Debug, Args)]
pub struct EnsembleTrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Base model files
    #[arg(long, num_args = 1.., required = true)]
    pub models: Vec<PathBuf>,
    #[arg(long, env = "KGB_SEED", default_value_t = 0)]
    pub seed: u64,
    /// L2 weight of the logistic regression
    #[arg(long, default_value_t = DEFAULT_REG)]
    pub reg: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EnsembleEvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    pub models: Vec<PathBuf>,
    #[arg(long)]
    pub ensemble: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long, value_enum, default_value_t = Format::Both)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// One of the construction names, or `all`
    #[arg(long, default_value = "all")]
    pub theorem: String,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// Largest number of entities drawn
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    /// Largest embedding dimension drawn
    #[arg(long, default_value_t = 4)]
    pub r: usize,
    /// Largest number of relations drawn
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, env = "KGB_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    /// Input model file (TransE, HolE, DISTMULT or ComplEx)
    #[arg(long)]
    pub from: PathBuf,
    /// Output RESCAL model file
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = "KGB_SEED", default_value_t = 0)]
    pub seed: u64,
}

/// Exit code for an error.
pub fn exit_code(e: &KgError) -> i32 {
    match e {
        KgError::Io { .. } | KgError::Parse { .. } | KgError::Format(_) => EXIT_IO,
        KgError::InvalidArgument(_) => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

/// Runs a parsed command line and returns the exit code.
pub fn run(cli: Cli) -> Result<i32> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(KgError::InvalidArgument("--threads must be ≥ 1".into()));
        }
        // fails only if a pool already exists, e.g. when called twice in-process
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            warn!("thread pool already initialized: {e}");
        }
    }
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Classify(a) => cmd_classify(a),
        Command::Ensemble(EnsembleCommand::Train(a)) => cmd_ensemble_train(a),
        Command::Ensemble(EnsembleCommand::Eval(a)) => cmd_ensemble_eval(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Transform(a) => cmd_transform(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

// ---- checksums and manifests ----

const SPLIT_FILES: [&str; 3] = ["train.txt", "valid.txt", "test.txt"];

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| KgError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Per-file checksums of a dataset directory and one combined checksum.
pub fn dataset_checksums(dir: &Path) -> Result<(Vec<(String, String)>, String)> {
    let mut files = Vec::new();
    let mut all = Sha256::new();
    for f in SPLIT_FILES {
        let h = sha256_file(&dir.join(f))?;
        all.update(h.as_bytes());
        files.push((f.to_string(), h));
    }
    Ok((files, hex::encode(all.finalize())))
}

/// Provenance record written next to every artifact as `<artifact>.manifest`.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    pub config: Vec<(String, String)>,
    pub dataset: Vec<(String, String)>,
    pub seed: Option<u64>,
    pub version: &'static str,
    pub started_unix: u64,
    pub elapsed_secs: f64,
}

impl RunManifest {
    fn start(config: Vec<(String, String)>, dataset: Vec<(String, String)>, seed: Option<u64>) -> Self {
        RunManifest {
            command_line: std::env::args().collect(),
            config,
            dataset,
            seed,
            version: env!("CARGO_PKG_VERSION"),
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            elapsed_secs: 0.0,
        }
    }

    pub fn render(&self) -> String {
        let mut s = format!("version = {}\ncommand = {}\n", self.version, self.command_line.join(" "));
        if let Some(seed) = self.seed {
            s.push_str(&format!("seed = {seed}\n"));
        }
        for (k, v) in &self.config {
            s.push_str(&format!("config.{k} = {v}\n"));
        }
        for (k, v) in &self.dataset {
            s.push_str(&format!("sha256.{k} = {v}\n"));
        }
        s.push_str(&format!(
            "started_unix = {}\nelapsed_secs = {:.3}\n",
            self.started_unix, self.elapsed_secs
        ));
        s
    }

    fn write_for(mut self, artifact: &Path, timer: Instant) -> Result<()> {
        self.elapsed_secs = timer.elapsed().as_secs_f64();
        let mut p = artifact.as_os_str().to_owned();
        p.push(".manifest");
        write_atomic(Path::new(&p), self.render().as_bytes())
    }
}

fn dataset_entries(files: &[(String, String)], combined: &str) -> Vec<(String, String)> {
    let mut v = files.to_vec();
    v.push(("dataset".into(), combined.to_string()));
    v
}

// ---- commands ----

fn build_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).map_err(|e| KgError::io(path, e))?;
        cfg.apply_kv(&crate::models::io::parse_kv(&text, path)?)?;
    }
    if let Some(v) = a.model {
        cfg.kind = v;
    }
    if let Some(v) = a.dim {
        cfg.dim = v;
    }
    if let Some(v) = a.margin {
        cfg.gamma = v;
    }
    if let Some(v) = a.lr {
        cfg.eta = v;
    }
    if let Some(v) = a.lambda_e {
        cfg.lambda_e = v;
    }
    if let Some(v) = a.lambda_r {
        cfg.lambda_r = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.negatives {
        cfg.negatives_per_positive = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(a: TrainArgs) -> Result<i32> {
    let timer = Instant::now();
    let cfg = build_config(&a)?;
    let kb = load_dir(&a.data)?;
    let (files, combined) = dataset_checksums(&a.data)?;
    info!("training {cfg} on {} triples", kb.train().len());
    let out = training::train(&kb, &cfg)?;
    if !out.model.is_finite() {
        warn!("trained parameters contain non-finite values");
    }
    write_model(&a.out, &out.model)?;
    let mut meta = cfg.to_kv();
    meta.push(("entities".into(), kb.num_entities().to_string()));
    meta.push(("relations".into(), kb.num_relations().to_string()));
    meta.push(("dataset".into(), combined.clone()));
    write_sidecar(&a.out, &meta)?;
    RunManifest::start(cfg.to_kv(), dataset_entries(&files, &combined), Some(cfg.seed)).write_for(&a.out, timer)?;
    if let Some(last) = out.loss_trace.last() {
        println!("final_loss={last}");
    }
    println!("epochs={}", out.loss_trace.len());
    println!("model={}", a.out.display());
    Ok(EXIT_OK)
}

/// Dataset checksum recorded in a model's sidecar, if any.
fn sidecar_dataset(model: &Path) -> Result<Option<String>> {
    match read_sidecar(model) {
        Ok(kv) => Ok(kv.into_iter().find(|(k, _)| k == "dataset").map(|(_, v)| v)),
        Err(KgError::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e),
    }
}

fn load_model_for(kb: &KnowledgeBase, path: &Path) -> Result<Model> {
    let m = read_model(path)?;
    eval::check_model(&m, kb)?;
    Ok(m)
}

fn print_metrics(label: &str, m: &MetricsSummary, format: Format) {
    if matches!(format, Format::Text | Format::Both) {
        println!("{label}");
        print!("{}", m.render_table());
    }
    if format == Format::Both {
        println!();
    }
    if matches!(format, Format::Kv | Format::Both) {
        println!("model={label}");
        print!("{}", m.render_kv());
    }
}

fn cmd_eval(a: EvalArgs) -> Result<i32> {
    let kb = load_dir(&a.data)?;
    let model = load_model_for(&kb, &a.model)?;
    let m = eval::evaluate_ranking(&model, &kb, a.split.into())?;
    print_metrics(model.kind().name(), &m, a.format);
    Ok(EXIT_OK)
}

fn classification_set(kb: &KnowledgeBase, split: Split, dir: Option<&Path>, seed: u64) -> Result<Vec<eval::LabeledTriple>> {
    let Some(dir) = dir else {
        return Ok(eval::build_classification_set(kb, split, seed));
    };
    let path = dir.join(format!("{}.cls.tsv", split.name()));
    if path.exists() {
        return eval::read_classification_set(&path);
    }
    fs::create_dir_all(dir).map_err(|e| KgError::io(dir, e))?;
    let set = eval::build_classification_set(kb, split, seed);
    eval::write_classification_set(&path, &set)?;
    info!("wrote {}", path.display());
    Ok(set)
}

fn cmd_classify(a: ClassifyArgs) -> Result<i32> {
    let kb = load_dir(&a.data)?;
    if kb.valid().is_empty() {
        return Err(KgError::InvalidArgument("classification needs a validation split".into()));
    }
    let model = load_model_for(&kb, &a.model)?;
    let valid = classification_set(&kb, Split::Valid, a.sets.as_deref(), a.seed)?;
    let test = classification_set(&kb, Split::Test, a.sets.as_deref(), a.seed.wrapping_add(1))?;
    let thresholds = eval::select_thresholds(&model, &valid);
    let acc_valid = eval::classify_triples(&model, &thresholds, &valid);
    let acc = eval::classify_triples(&model, &thresholds, &test);
    println!("{:<10}{:>12}{:>12}", "model", "valid acc", "test acc");
    println!("{:<10}{:>12.1}{:>12.1}", model.kind().name(), 100.0 * acc_valid, 100.0 * acc);
    println!();
    println!("valid_accuracy={:.4}", 100.0 * acc_valid);
    println!("accuracy={:.4}", 100.0 * acc);
    Ok(EXIT_OK)
}

/// Loads base models and checks that their sidecars agree with each other
/// and with the dataset directory.
fn load_base_models(kb: &KnowledgeBase, data: &Path, paths: &[PathBuf]) -> Result<Vec<Model>> {
    if paths.len() < 2 {
        return Err(KgError::InvalidArgument(format!(
            "an ensemble needs at least 2 model files, got {}",
            paths.len()
        )));
    }
    let (_, combined) = dataset_checksums(data)?;
    let mut models = Vec::new();
    for p in paths {
        match sidecar_dataset(p)? {
            Some(sum) if sum != combined => {
                return Err(KgError::Mismatch(format!(
                    "{} was trained on a different dataset (checksum {sum}, expected {combined})",
                    p.display()
                )))
            }
            None => warn!("{} has no dataset checksum; not verified", p.display()),
            _ => {}
        }
        models.push(load_model_for(kb, p)?);
    }
    Ok(models)
}

fn cmd_ensemble_train(a: EnsembleTrainArgs) -> Result<i32> {
    let timer = Instant::now();
    let kb = load_dir(&a.data)?;
    let models = load_base_models(&kb, &a.data, &a.models)?;
    let ens = ensemble::train_ensemble(&kb, &models, a.seed, a.reg)?;
    ensemble::write_ensemble(&a.out, &ens)?;
    let (files, combined) = dataset_checksums(&a.data)?;
    let mut config = vec![("reg".to_string(), a.reg.to_string())];
    for (i, p) in a.models.iter().enumerate() {
        config.push((format!("model{i}"), p.display().to_string()));
        config.push((format!("model{i}.sha256"), sha256_file(p)?));
    }
    RunManifest::start(config, dataset_entries(&files, &combined), Some(a.seed)).write_for(&a.out, timer)?;
    let fitted = ens.relations.iter().filter(|r| r.is_some()).count();
    println!("ensemble={}", ens.label());
    println!("fitted_relations={fitted}");
    println!("fallback_relations={}", ens.relations.len() - fitted);
    Ok(EXIT_OK)
}

fn cmd_ensemble_eval(a: EnsembleEvalArgs) -> Result<i32> {
    let kb = load_dir(&a.data)?;
    let models = load_base_models(&kb, &a.data, &a.models)?;
    let ens = ensemble::read_ensemble(&a.ensemble)?;
    let labels: Vec<String> = models.iter().map(|m| m.kind().letter().to_string()).collect();
    if labels != ens.models {
        return Err(KgError::Mismatch(format!(
            "ensemble was fitted on {} but got models {}",
            ens.label(),
            labels.join("+")
        )));
    }
    let scorer = EnsembleScorer::new(&ens, &models)?;
    let m = eval::evaluate_ranking(&scorer, &kb, a.split.into())?;
    print_metrics(&ens.label(), &m, a.format);
    Ok(EXIT_OK)
}

fn cmd_verify(a: VerifyArgs) -> Result<i32> {
    let theorems: Vec<verify::Theorem> = if a.theorem == "all" {
        verify::Theorem::ALL.to_vec()
    } else {
        vec![a.theorem.parse()?]
    };
    let cfg = verify::VerifyConfig {
        trials: a.trials,
        max_entities: a.n,
        max_dim: a.r,
        max_relations: a.k,
        seed: a.seed,
    };
    if a.trials == 0 {
        warn!("--trials 0: nothing is checked");
    }
    let mut ok = true;
    for t in theorems {
        let timer = Instant::now();
        let report = verify::run(t, &cfg);
        info!("{t}: {:.2?}", timer.elapsed());
        if matches!(a.format, Format::Text | Format::Both) {
            print!("{}", report.render_text());
        }
        if matches!(a.format, Format::Kv | Format::Both) {
            print!("{}", report.render_kv());
        }
        if let Some(c) = &report.failure {
            eprintln!("{t}: FAILED at seed {}: {}", c.seed, c.reason);
            ok = false;
        }
    }
    Ok(if ok { EXIT_OK } else { EXIT_FAILURE })
}

fn cmd_transform(a: TransformArgs) -> Result<i32> {
    let timer = Instant::now();
    let src = read_model(&a.from)?;
    let lifted = match &src {
        Model::Transe(p) => transforms::transe_to_rescal(p),
        Model::Hole(p) => transforms::hole_to_rescal(p),
        Model::Distmult(p) => transforms::distmult_to_rescal(p),
        Model::Complex(p) => transforms::complex_to_rescal(p),
        Model::Rescal(_) => {
            return Err(KgError::InvalidArgument("model is already a RESCAL model".into()));
        }
    };
    let out = Model::Rescal(lifted);
    write_model(&a.out, &out)?;
    let config = vec![
        ("source".to_string(), a.from.display().to_string()),
        ("source.sha256".to_string(), sha256_file(&a.from)?),
        ("source.kind".to_string(), src.kind().to_string()),
    ];
    RunManifest::start(config, Vec::new(), None).write_for(&a.out, timer)?;
    println!("source={} r={}", src.kind(), src.dim());
    println!("target={} r={}", ModelKind::Rescal, out.dim());
    if src.kind() == ModelKind::Transe {
        println!("note=scores shift by +||r_k||^2 per relation; rankings are unchanged");
    }
    Ok(EXIT_OK)
}

fn cmd_synth(a: SynthArgs) -> Result<i32> {
    let kb = synthetic::generate(&SyntheticConfig::default(), a.seed)?;
    fs::create_dir_all(&a.out).map_err(|e| KgError::io(&a.out, e))?;
    kb.write_dir(&a.out)?;
    println!(
        "entities={} relations={} train={} valid={} test={}",
        kb.num_entities(),
        kb.num_relations(),
        kb.train().len(),
        kb.valid().len(),
        kb.test().len()
    );
    Ok(EXIT_OK)
}

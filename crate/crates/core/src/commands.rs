//! The five command flows behind the `exlab` binary, driven by one flat
//! `key = value` config file.
//!
//! Every command writes only inside its output directory and echoes the
//! resolved config there as `config.resolved`, which is itself a valid
//! config file. Errors carry their exit code via [`Error::exit_code`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::attacks::{attack_dataset, evaluate_asr, uniform_noise, AdvBatch, AttackConfig, AttackKind, Scenario};
use crate::autodiff::Tensor;
use crate::data_io::format_sig;
use crate::data_io::{
    load_checkpoint, load_idx, load_tensors, make_toy_dataset, read_trace_csv, save_checkpoint, save_tensors,
    write_image_grid, write_scatter_pgm, write_trace_csv, CheckpointHeader, Dataset, SeedTree, ToyKind,
};
use crate::diagnostics::{
    check_assumption_argmax, check_assumption_confidence, check_ce_kl, check_lemma1, check_theorem1, PropertyReport,
    RunArtifacts, Thresholds,
};
use crate::error::{Error, Result};
use crate::nets::{generator_forward, parse_widths, Activation, Head, NetworkSpec, Parameters};
use crate::oracle::{train_target, AccessMode, LedgerKind, TargetOracle, TrainTargetConfig};
use crate::stealing::{steal, Algorithm, NoiseSeedSet, RoundCheckpoint, StealConfig, StealOutcome, StealSetup};

pub const CONFIG_RESOLVED: &str = "config.resolved";
pub const TARGET_CKPT: &str = "target.ckpt";
pub const METRICS: &str = "metrics.txt";
pub const TRACE: &str = "trace.csv";
pub const HELDOUT: &str = "heldout.csv";
pub const SUMMARY: &str = "summary.txt";
pub const SUBSTITUTE_CKPT: &str = "substitute.ckpt";
pub const GENERATOR_CKPT: &str = "generator.ckpt";
pub const GENERATOR_INIT_CKPT: &str = "generator_init.ckpt";
pub const NOISE_CKPT: &str = "noise.ckpt";
pub const ROUNDS_DIR: &str = "checkpoints";
pub const ATTACK_REPORT: &str = "attack_report.txt";

/// Every config key with its documentation, in file order.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "master seed; every random stream derives from it"),
    ("dataset", "blobs | moons | grid | idx"),
    ("train_size", "toy training examples (divisible by num_classes)"),
    ("test_size", "toy held-out examples (divisible by num_classes)"),
    ("num_classes", "toy classes"),
    ("noise_scale", "toy cluster standard deviation"),
    ("idx_train_images", "IDX image file (dataset = idx)"),
    ("idx_train_labels", "IDX label file (dataset = idx)"),
    ("idx_test_images", "IDX image file (dataset = idx)"),
    ("idx_test_labels", "IDX label file (dataset = idx)"),
    ("oracle_mode", "label_only | probability_only"),
    ("target_widths", "target layer widths, input first"),
    ("target_activation", "relu | tanh"),
    ("target_epochs", "target training epochs"),
    ("target_batch_size", "target training mini-batch"),
    ("target_optimizer", "adam | sgd"),
    ("target_lr", "target learning rate"),
    ("substitute_widths", "substitute layer widths, input first"),
    ("substitute_activation", "relu | tanh"),
    (
        "generator_widths",
        "generator layer widths; the first is the noise dimension",
    ),
    ("generator_activation", "relu | tanh"),
    ("algorithm", "mega | dast | dfme"),
    ("rounds", "mega outer rounds"),
    ("n_seeds", "size of the fixed noise set (also the evaluation set)"),
    (
        "batch_size",
        "substitute mini-batch (mega) or per-iteration batch (baselines)",
    ),
    ("max_epochs", "substitute inner loop cap"),
    ("plateau_window", "plateau window in epochs"),
    ("plateau_delta", "relative improvement below which the inner loop stops"),
    ("gen_epochs", "generator passes over the noise set per round"),
    ("substitute_optimizer", "adam | sgd"),
    ("substitute_lr", "substitute learning rate"),
    ("generator_optimizer", "adam | sgd"),
    ("generator_lr", "generator learning rate"),
    ("reset_optimizer_each_round", "fresh optimizer moments every round"),
    ("iterations", "baseline iterations"),
    ("trace_every", "baselines record a trace row every this many iterations"),
    ("m_dirs", "dfme forward-difference directions per example"),
    ("fd_step", "dfme forward-difference step"),
    (
        "query_budget",
        "if positive, sets rounds or iterations to fit this many steal queries",
    ),
    (
        "trace_wall_time",
        "record wall-clock milliseconds in the trace (breaks byte reproducibility)",
    ),
    ("attack_kind", "fgsm | bim | pgd"),
    ("attack_eps", "L-infinity budget"),
    ("attack_alpha", "step size of bim and pgd"),
    ("attack_iterations", "steps of bim and pgd"),
    ("attack_target_class", "class forced by the targeted scenario"),
    ("attack_restarts", "pgd restarts"),
    ("attack_random_start", "pgd starts at a uniform point of the ball"),
    ("lemma1_threshold", "minimum satisfied fraction"),
    ("lemma1_slack", "per-pair slack"),
    ("theorem1_threshold", "minimum non-increasing fraction"),
    ("theorem1_slack", "per-step slack"),
    ("argmax_threshold", "minimum per-round argmax agreement"),
    (
        "confidence_threshold",
        "minimum fraction of generator phases raising confidence",
    ),
    ("out_dir", "default output directory"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// `idx` or a toy kind name.
    pub dataset: String,
    pub train_size: usize,
    pub test_size: usize,
    pub num_classes: usize,
    pub noise_scale: f64,
    pub idx_train_images: Option<PathBuf>,
    pub idx_train_labels: Option<PathBuf>,
    pub idx_test_images: Option<PathBuf>,
    pub idx_test_labels: Option<PathBuf>,
    pub oracle_mode: AccessMode,
    pub target_widths: Vec<usize>,
    pub target_activation: Activation,
    /// Its `mode` is ignored; `oracle_mode` wins.
    pub target: TrainTargetConfig,
    pub substitute_widths: Vec<usize>,
    pub substitute_activation: Activation,
    pub generator_widths: Vec<usize>,
    pub generator_activation: Activation,
    pub steal: StealConfig,
    pub query_budget: u64,
    /// Its `scenario` is ignored; attacks always run both scenarios.
    pub attack: AttackConfig,
    pub thresholds: Thresholds,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            dataset: "blobs".into(),
            train_size: 300,
            test_size: 300,
            num_classes: 3,
            noise_scale: 0.05,
            idx_train_images: None,
            idx_train_labels: None,
            idx_test_images: None,
            idx_test_labels: None,
            oracle_mode: AccessMode::LabelOnly,
            target_widths: vec![2, 16, 16, 3],
            target_activation: Activation::Relu,
            target: TrainTargetConfig::default(),
            substitute_widths: vec![2, 16, 3],
            substitute_activation: Activation::Relu,
            generator_widths: vec![64, 128, 128, 2],
            generator_activation: Activation::Tanh,
            steal: StealConfig::default(),
            query_budget: 0,
            attack: AttackConfig::default(),
            thresholds: Thresholds::default(),
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got `{value}`"))),
    }
}

fn parse_kind<T: std::str::FromStr<Err = Error>>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|e: Error| Error::Config(format!("{key}: {e}")))
}

fn join_widths(w: &[usize]) -> String {
    w.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    /// Parses a config document over the defaults. Unknown and repeated
    /// keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected `key = value`", i + 1)));
            };
            let (key, value) = (key.trim(), value.trim());
            if let Some(prev) = seen.insert(key.to_string(), i + 1) {
                return Err(Error::Config(format!(
                    "line {}: `{key}` already set on line {prev}",
                    i + 1
                )));
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "seed" => self.seed = parse_value(key, v)?,
            "dataset" => {
                if v != "idx" {
                    parse_kind::<ToyKind>(key, v)?;
                }
                self.dataset = v.to_string();
            }
            "train_size" => self.train_size = parse_value(key, v)?,
            "test_size" => self.test_size = parse_value(key, v)?,
            "num_classes" => self.num_classes = parse_value(key, v)?,
            "noise_scale" => self.noise_scale = parse_value(key, v)?,
            "idx_train_images" => self.idx_train_images = (!v.is_empty()).then(|| v.into()),
            "idx_train_labels" => self.idx_train_labels = (!v.is_empty()).then(|| v.into()),
            "idx_test_images" => self.idx_test_images = (!v.is_empty()).then(|| v.into()),
            "idx_test_labels" => self.idx_test_labels = (!v.is_empty()).then(|| v.into()),
            "oracle_mode" => self.oracle_mode = parse_kind(key, v)?,
            "target_widths" => self.target_widths = parse_widths(v)?,
            "target_activation" => self.target_activation = parse_kind(key, v)?,
            "target_epochs" => self.target.epochs = parse_value(key, v)?,
            "target_batch_size" => self.target.batch_size = parse_value(key, v)?,
            "target_optimizer" => self.target.optimizer.algorithm = parse_kind(key, v)?,
            "target_lr" => self.target.optimizer.learning_rate = parse_value(key, v)?,
            "substitute_widths" => self.substitute_widths = parse_widths(v)?,
            "substitute_activation" => self.substitute_activation = parse_kind(key, v)?,
            "generator_widths" => self.generator_widths = parse_widths(v)?,
            "generator_activation" => self.generator_activation = parse_kind(key, v)?,
            "algorithm" => self.steal.algorithm = parse_kind(key, v)?,
            "rounds" => self.steal.rounds = parse_value(key, v)?,
            "n_seeds" => self.steal.n_seeds = parse_value(key, v)?,
            "batch_size" => self.steal.batch_size = parse_value(key, v)?,
            "max_epochs" => self.steal.max_epochs = parse_value(key, v)?,
            "plateau_window" => self.steal.plateau_window = parse_value(key, v)?,
            "plateau_delta" => self.steal.plateau_delta = parse_value(key, v)?,
            "gen_epochs" => self.steal.gen_epochs = parse_value(key, v)?,
            "substitute_optimizer" => self.steal.substitute_opt.algorithm = parse_kind(key, v)?,
            "substitute_lr" => self.steal.substitute_opt.learning_rate = parse_value(key, v)?,
            "generator_optimizer" => self.steal.generator_opt.algorithm = parse_kind(key, v)?,
            "generator_lr" => self.steal.generator_opt.learning_rate = parse_value(key, v)?,
            "reset_optimizer_each_round" => self.steal.reset_optimizer_each_round = parse_bool(key, v)?,
            "iterations" => self.steal.iterations = parse_value(key, v)?,
            "trace_every" => self.steal.trace_every = parse_value(key, v)?,
            "m_dirs" => self.steal.m_dirs = parse_value(key, v)?,
            "fd_step" => self.steal.fd_step = parse_value(key, v)?,
            "query_budget" => self.query_budget = parse_value(key, v)?,
            "trace_wall_time" => self.steal.trace_wall_time = parse_bool(key, v)?,
            "attack_kind" => self.attack.kind = parse_kind(key, v)?,
            "attack_eps" => self.attack.eps = parse_value(key, v)?,
            "attack_alpha" => self.attack.alpha = parse_value(key, v)?,
            "attack_iterations" => self.attack.iterations = parse_value(key, v)?,
            "attack_target_class" => self.attack.target_class = parse_value(key, v)?,
            "attack_restarts" => self.attack.restarts = parse_value(key, v)?,
            "attack_random_start" => self.attack.random_start = parse_bool(key, v)?,
            "lemma1_threshold" => self.thresholds.lemma1 = parse_value(key, v)?,
            "lemma1_slack" => self.thresholds.lemma1_slack = parse_value(key, v)?,
            "theorem1_threshold" => self.thresholds.theorem1 = parse_value(key, v)?,
            "theorem1_slack" => self.thresholds.theorem1_slack = parse_value(key, v)?,
            "argmax_threshold" => self.thresholds.argmax = parse_value(key, v)?,
            "confidence_threshold" => self.thresholds.confidence = parse_value(key, v)?,
            "out_dir" => self.out_dir = v.into(),
            _ => return Err(Error::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// The current value of `key` in config syntax.
    pub fn get(&self, key: &str) -> Option<String> {
        let s = &self.steal;
        let a = &self.attack;
        let t = &self.thresholds;
        Some(match key {
            "seed" => self.seed.to_string(),
            "dataset" => self.dataset.clone(),
            "train_size" => self.train_size.to_string(),
            "test_size" => self.test_size.to_string(),
            "num_classes" => self.num_classes.to_string(),
            "noise_scale" => self.noise_scale.to_string(),
            "idx_train_images" => opt_path(&self.idx_train_images),
            "idx_train_labels" => opt_path(&self.idx_train_labels),
            "idx_test_images" => opt_path(&self.idx_test_images),
            "idx_test_labels" => opt_path(&self.idx_test_labels),
            "oracle_mode" => self.oracle_mode.to_string(),
            "target_widths" => join_widths(&self.target_widths),
            "target_activation" => self.target_activation.to_string(),
            "target_epochs" => self.target.epochs.to_string(),
            "target_batch_size" => self.target.batch_size.to_string(),
            "target_optimizer" => self.target.optimizer.algorithm.to_string(),
            "target_lr" => self.target.optimizer.learning_rate.to_string(),
            "substitute_widths" => join_widths(&self.substitute_widths),
            "substitute_activation" => self.substitute_activation.to_string(),
            "generator_widths" => join_widths(&self.generator_widths),
            "generator_activation" => self.generator_activation.to_string(),
            "algorithm" => s.algorithm.to_string(),
            "rounds" => s.rounds.to_string(),
            "n_seeds" => s.n_seeds.to_string(),
            "batch_size" => s.batch_size.to_string(),
            "max_epochs" => s.max_epochs.to_string(),
            "plateau_window" => s.plateau_window.to_string(),
            "plateau_delta" => s.plateau_delta.to_string(),
            "gen_epochs" => s.gen_epochs.to_string(),
            "substitute_optimizer" => s.substitute_opt.algorithm.to_string(),
            "substitute_lr" => s.substitute_opt.learning_rate.to_string(),
            "generator_optimizer" => s.generator_opt.algorithm.to_string(),
            "generator_lr" => s.generator_opt.learning_rate.to_string(),
            "reset_optimizer_each_round" => s.reset_optimizer_each_round.to_string(),
            "iterations" => s.iterations.to_string(),
            "trace_every" => s.trace_every.to_string(),
            "m_dirs" => s.m_dirs.to_string(),
            "fd_step" => s.fd_step.to_string(),
            "query_budget" => self.query_budget.to_string(),
            "trace_wall_time" => s.trace_wall_time.to_string(),
            "attack_kind" => a.kind.to_string(),
            "attack_eps" => a.eps.to_string(),
            "attack_alpha" => a.alpha.to_string(),
            "attack_iterations" => a.iterations.to_string(),
            "attack_target_class" => a.target_class.to_string(),
            "attack_restarts" => a.restarts.to_string(),
            "attack_random_start" => a.random_start.to_string(),
            "lemma1_threshold" => t.lemma1.to_string(),
            "lemma1_slack" => t.lemma1_slack.to_string(),
            "theorem1_threshold" => t.theorem1.to_string(),
            "theorem1_slack" => t.theorem1_slack.to_string(),
            "argmax_threshold" => t.argmax.to_string(),
            "confidence_threshold" => t.confidence.to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            _ => return None,
        })
    }

    /// The full config with every key and its documentation; parses back
    /// to an equal value.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, doc) in KEYS {
            let value = self.get(key).expect("listed key");
            let _ = writeln!(out, "# {doc}\n{key} = {value}");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.steal.validate()?;
        if self.dataset != "idx" && (self.train_size == 0 || self.test_size == 0) {
            return Err(Error::Config("train_size and test_size must be positive".into()));
        }
        if self.target.epochs == 0 || self.target.batch_size == 0 {
            return Err(Error::Config(
                "target_epochs and target_batch_size must be positive".into(),
            ));
        }
        let (t, s, g) = (self.target_spec()?, self.substitute_spec()?, self.generator_spec()?);
        if t.input_dim() != s.input_dim() || t.output_dim() != s.output_dim() {
            return Err(Error::Config(format!(
                "target {t} and substitute {s} disagree on input or class count"
            )));
        }
        if g.output_dim() != t.input_dim() {
            return Err(Error::Config(format!(
                "generator {g} must emit {} features",
                t.input_dim()
            )));
        }
        for (name, v) in [
            ("lemma1_threshold", self.thresholds.lemma1),
            ("theorem1_threshold", self.thresholds.theorem1),
            ("argmax_threshold", self.thresholds.argmax),
            ("confidence_threshold", self.thresholds.confidence),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        self.attack
            .validate(t.output_dim())
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn target_spec(&self) -> Result<NetworkSpec> {
        NetworkSpec::new(self.target_widths.clone(), self.target_activation, Head::Softmax)
            .map_err(|e| Error::Config(format!("target_widths: {e}")))
    }

    pub fn substitute_spec(&self) -> Result<NetworkSpec> {
        NetworkSpec::new(
            self.substitute_widths.clone(),
            self.substitute_activation,
            Head::Softmax,
        )
        .map_err(|e| Error::Config(format!("substitute_widths: {e}")))
    }

    pub fn generator_spec(&self) -> Result<NetworkSpec> {
        NetworkSpec::new(
            self.generator_widths.clone(),
            self.generator_activation,
            Head::UnitInterval,
        )
        .map_err(|e| Error::Config(format!("generator_widths: {e}")))
    }

    /// The steal config with the query budget applied.
    pub fn resolved_steal(&self) -> Result<StealConfig> {
        let mut s = self.steal.clone();
        if self.query_budget > 0 {
            s.fit_budget(self.query_budget)?;
        }
        Ok(s)
    }

    /// Train and held-out splits. Toy data draws the held-out split from
    /// its own derived seed.
    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        let (train, test) = if self.dataset == "idx" {
            let need = |p: &Option<PathBuf>, key: &str| {
                p.clone()
                    .ok_or_else(|| Error::Config(format!("dataset = idx needs {key}")))
            };
            let train = load_idx(
                &need(&self.idx_train_images, "idx_train_images")?,
                &need(&self.idx_train_labels, "idx_train_labels")?,
            )?;
            let test = load_idx(
                &need(&self.idx_test_images, "idx_test_images")?,
                &need(&self.idx_test_labels, "idx_test_labels")?,
            )?;
            (train, test)
        } else {
            let kind: ToyKind = self.dataset.parse()?;
            let tree = SeedTree::new(self.seed);
            let train = make_toy_dataset(
                kind,
                self.train_size,
                self.num_classes,
                self.noise_scale,
                tree.derive_seed("train_set", 0),
            )
            .map_err(|e| Error::Config(e.to_string()))?;
            let test = make_toy_dataset(
                kind,
                self.test_size,
                self.num_classes,
                self.noise_scale,
                tree.derive_seed("test_set", 0),
            )
            .map_err(|e| Error::Config(e.to_string()))?;
            (train, test)
        };
        let spec = self.target_spec()?;
        if train.dim() != spec.input_dim() || test.dim() != spec.input_dim() {
            return Err(Error::Config(format!(
                "dataset has {} features but target_widths start at {}",
                train.dim(),
                spec.input_dim()
            )));
        }
        Ok((train, test))
    }
}

/// Reads `path` (or the defaults) and applies a seed override.
pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn prepare_out(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_file(&out_dir.join(CONFIG_RESOLVED), cfg.to_text().as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn require(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingCheckpoint(path.display().to_string()))
    }
}

/// `key = value` lines into a map (the summary and metrics format).
pub fn parse_kv(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

fn kv_text(pairs: &[(&str, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub train_accuracy: f64,
    pub heldout_accuracy: f64,
}

/// Trains the target and writes `target.ckpt`, `metrics.txt`, and the
/// resolved config.
pub fn cmd_train_target(cfg: &RunConfig, out_dir: &Path) -> Result<TrainSummary> {
    cfg.validate()?;
    let (train, test) = cfg.datasets()?;
    let spec = cfg.target_spec()?;
    if train.num_classes() > spec.output_dim() {
        return Err(Error::Config(format!(
            "dataset has {} classes but the target has {} outputs",
            train.num_classes(),
            spec.output_dim()
        )));
    }
    prepare_out(cfg, out_dir)?;
    let tc = TrainTargetConfig {
        mode: cfg.oracle_mode,
        ..cfg.target
    };
    let oracle = train_target(&spec, &train, Some(&test), &tc, cfg.seed)?;
    oracle.save(&out_dir.join(TARGET_CKPT), cfg.seed)?;
    let summary = TrainSummary {
        train_accuracy: labels_accuracy(
            &oracle.query_labels(LedgerKind::Eval, train.examples())?,
            train.labels(),
        ),
        heldout_accuracy: oracle.heldout_accuracy().expect("test split given"),
    };
    let metrics = kv_text(&[
        ("target", spec.to_string()),
        ("train_examples", train.len().to_string()),
        ("test_examples", test.len().to_string()),
        ("train_accuracy", format_sig(summary.train_accuracy, 6)),
        ("heldout_accuracy", format_sig(summary.heldout_accuracy, 6)),
    ]);
    write_file(&out_dir.join(METRICS), metrics.as_bytes())?;
    Ok(summary)
}

fn labels_accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    predicted.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct StealSummary {
    pub algorithm: Algorithm,
    pub mode: AccessMode,
    pub rows: usize,
    pub final_agreement: f64,
    pub final_heldout: f64,
    pub best_heldout: f64,
    pub queries_to_best: u64,
    pub total_queries: u64,
}

impl StealSummary {
    pub fn line(&self) -> String {
        format!(
            "{} {}: final held-out agreement {:.4}, best {:.4} at {} queries, {} queries total",
            self.algorithm, self.mode, self.final_heldout, self.best_heldout, self.queries_to_best, self.total_queries
        )
    }
}

fn round_path(dir: &Path, round: usize, what: &str) -> PathBuf {
    dir.join(ROUNDS_DIR).join(format!("round_{round:04}_{what}.ckpt"))
}

fn write_samples(x: &Tensor, labels: &[usize], path: &Path) -> Result<()> {
    let d = x.shape()[1];
    if d == 2 {
        return write_scatter_pgm(x, Some(labels), 256, path);
    }
    let side = (d as f64).sqrt().round() as usize;
    if side * side == d {
        write_image_grid(
            &x.select_rows(&(0..x.shape()[0].min(100)).collect::<Vec<_>>()),
            side,
            path,
        )
    } else {
        Ok(())
    }
}

/// Steals the target at `target_path` with the configured algorithm.
///
/// Writes `trace.csv`, `heldout.csv`, `summary.txt`, final substitute,
/// generator and noise checkpoints, per-round checkpoints (MEGA), a copy
/// of the target, and `generated.pgm`.
pub fn cmd_steal(cfg: &RunConfig, target_path: &Path, out_dir: &Path) -> Result<StealSummary> {
    cfg.validate()?;
    let steal_cfg = cfg.resolved_steal()?;
    if steal_cfg.algorithm == Algorithm::Dfme && cfg.oracle_mode == AccessMode::LabelOnly {
        return Err(Error::Mode(
            "dfme needs class probabilities and can not be applied to a label_only oracle".into(),
        ));
    }
    require(target_path)?;
    let oracle = TargetOracle::load(target_path, cfg.oracle_mode)?;
    let (_, test) = cfg.datasets()?;
    let gen_spec = cfg.generator_spec()?;
    let sub_spec = cfg.substitute_spec()?;
    prepare_out(cfg, out_dir)?;
    let target_bytes = fs::read(target_path).map_err(|e| Error::io(target_path, e))?;
    write_file(&out_dir.join(TARGET_CKPT), &target_bytes)?;

    let setup = StealSetup {
        oracle: &oracle,
        generator: &gen_spec,
        substitute: &sub_spec,
        config: &steal_cfg,
        seed: cfg.seed,
        heldout: Some(&test),
    };
    let out = steal(&setup)?;
    write_steal_artifacts(cfg, &gen_spec, &sub_spec, &out, out_dir)?;

    let last = out.trace.last().expect("at least one row");
    let (best_heldout, queries_to_best) = out.trace.best_heldout().expect("held-out tracked");
    let summary = StealSummary {
        algorithm: out.algorithm,
        mode: cfg.oracle_mode,
        rows: out.trace.len(),
        final_agreement: last.agreement,
        final_heldout: last.heldout_agreement.expect("held-out tracked"),
        best_heldout,
        queries_to_best,
        total_queries: oracle.ledger(LedgerKind::Steal),
    };
    let text = kv_text(&[
        ("algorithm", summary.algorithm.to_string()),
        ("oracle_mode", summary.mode.to_string()),
        ("rows", summary.rows.to_string()),
        ("final_agreement_z", format_sig(summary.final_agreement, 6)),
        ("final_heldout_agreement", format_sig(summary.final_heldout, 6)),
        ("best_heldout_agreement", format_sig(summary.best_heldout, 6)),
        ("queries_to_best", summary.queries_to_best.to_string()),
        ("total_queries", summary.total_queries.to_string()),
        ("substitute_phase_queries", out.phase_queries.substitute.to_string()),
        ("generator_phase_queries", out.phase_queries.generator.to_string()),
        (
            "reset_optimizer_each_round",
            steal_cfg.reset_optimizer_each_round.to_string(),
        ),
    ]);
    write_file(&out_dir.join(SUMMARY), text.as_bytes())?;
    let x = generator_forward(&gen_spec, &out.generator, out.noise.vectors())?;
    let labels = oracle.query_labels(LedgerKind::Eval, &x)?;
    write_samples(&x, &labels, &out_dir.join("generated.pgm"))?;
    Ok(summary)
}

fn write_steal_artifacts(
    cfg: &RunConfig,
    gen_spec: &NetworkSpec,
    sub_spec: &NetworkSpec,
    out: &StealOutcome,
    dir: &Path,
) -> Result<()> {
    write_trace_csv(&out.trace.rows, &dir.join(TRACE))?;
    let mut heldout = String::from("round,queries_cum,heldout_agreement\n");
    for r in &out.trace.rows {
        let h = r.heldout_agreement.map(|v| format_sig(v, 9)).unwrap_or_default();
        let _ = writeln!(heldout, "{},{},{h}", r.round, r.queries_cum);
    }
    write_file(&dir.join(HELDOUT), heldout.as_bytes())?;

    let rounds = out.trace.len() as u64;
    let header = |round, phase: &str| CheckpointHeader::new("", cfg.seed, round, phase);
    save_checkpoint(
        &dir.join(SUBSTITUTE_CKPT),
        sub_spec,
        &out.substitute,
        &header(rounds, "substitute"),
    )?;
    save_checkpoint(
        &dir.join(GENERATOR_CKPT),
        gen_spec,
        &out.generator,
        &header(rounds, "generator"),
    )?;
    save_checkpoint(
        &dir.join(GENERATOR_INIT_CKPT),
        gen_spec,
        &out.generator_init,
        &header(0, "generator"),
    )?;
    save_tensors(
        &dir.join(NOISE_CKPT),
        &CheckpointHeader::new("noise", out.noise.seed(), 0, "noise"),
        &[out.noise.vectors()],
    )?;
    if !out.checkpoints.is_empty() {
        let rounds_dir = dir.join(ROUNDS_DIR);
        fs::create_dir_all(&rounds_dir).map_err(|e| Error::io(&rounds_dir, e))?;
    }
    // generator_before of a round is the previous round's generator_after
    for c in &out.checkpoints {
        let r = c.round as u64;
        save_checkpoint(
            &round_path(dir, c.round, "sub"),
            sub_spec,
            &c.substitute,
            &header(r, "substitute"),
        )?;
        save_checkpoint(
            &round_path(dir, c.round, "gen"),
            gen_spec,
            &c.generator_after,
            &header(r, "generator"),
        )?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackSummary {
    pub kind: AttackKind,
    pub untargeted: f64,
    pub targeted: f64,
    pub noise_untargeted: f64,
    pub attack_queries: u64,
}

/// Crafts adversarial examples on the held-out split with the substitute
/// and scores them on the target, for both scenarios plus a uniform-noise
/// baseline of the same budget.
pub fn cmd_attack(
    cfg: &RunConfig,
    substitute_path: &Path,
    target_path: &Path,
    out_dir: &Path,
) -> Result<AttackSummary> {
    cfg.validate()?;
    require(substitute_path)?;
    require(target_path)?;
    let oracle = TargetOracle::load(target_path, cfg.oracle_mode)?;
    let (sub_spec, sub, _) = load_checkpoint(substitute_path)?;
    if sub_spec.input_dim() != oracle.input_dim() || sub_spec.output_dim() != oracle.num_classes() {
        return Err(Error::Config(format!(
            "substitute {sub_spec} does not match the target"
        )));
    }
    let (_, test) = cfg.datasets()?;
    prepare_out(cfg, out_dir)?;
    let seed = SeedTree::new(cfg.seed).derive_seed("attack", 0);

    let untargeted_cfg = AttackConfig {
        scenario: Scenario::Untargeted,
        ..cfg.attack
    };
    let (adv, untargeted) = attack_dataset(&oracle, &sub_spec, &sub, &test, &untargeted_cfg, seed)?;
    let targeted_cfg = AttackConfig {
        scenario: Scenario::Targeted,
        ..cfg.attack
    };
    let (_, targeted) = attack_dataset(&oracle, &sub_spec, &sub, &test, &targeted_cfg, seed)?;
    let noisy = uniform_noise(test.examples(), cfg.attack.eps, seed)?;
    let mut noise_batch = AdvBatch::new(test.examples().clone(), noisy, test.labels().to_vec())?;
    let noise = evaluate_asr(&oracle, &mut noise_batch, Scenario::Untargeted, cfg.attack.target_class)?;

    let summary = AttackSummary {
        kind: cfg.attack.kind,
        untargeted: untargeted.rate,
        targeted: targeted.rate,
        noise_untargeted: noise.rate,
        attack_queries: oracle.ledger(LedgerKind::Attack),
    };
    let mut text = kv_text(&[
        ("attack", summary.kind.to_string()),
        ("oracle_mode", cfg.oracle_mode.to_string()),
        ("eps", cfg.attack.eps.to_string()),
        ("target_class", cfg.attack.target_class.to_string()),
        ("asr_untargeted", format_sig(untargeted.rate, 6)),
        (
            "successes_untargeted",
            format!("{}/{}", untargeted.successes, untargeted.attempts),
        ),
        ("asr_targeted", format_sig(targeted.rate, 6)),
        (
            "successes_targeted",
            format!("{}/{}", targeted.successes, targeted.attempts),
        ),
        ("asr_uniform_noise", format_sig(noise.rate, 6)),
        ("attack_queries", summary.attack_queries.to_string()),
    ]);
    text.push_str(ASR_REFERENCE);
    write_file(&out_dir.join(ATTACK_REPORT), text.as_bytes())?;
    let labels = oracle.query_labels(LedgerKind::Eval, &adv.adversarials)?;
    write_samples(&adv.adversarials, &labels, &out_dir.join("adversarial.pgm"))?;
    Ok(summary)
}

/// Published full-scale values, quoted as context only.
pub const ASR_REFERENCE: &str = "\
# -- published reference (MNIST, convolutional target; context only, not reproduced here) --
# label_only       FGSM untargeted ASR 53.72   targeted 16.47
# label_only       BIM  untargeted ASR 65.26   targeted 18.94
# label_only       PGD  untargeted ASR 65.19   targeted 18.97
# probability_only FGSM untargeted ASR 52.00   targeted 16.04
";

pub const STEALING_REFERENCE: &str = "\
# -- published reference (MNIST, convolutional target; context only, not reproduced here) --
# substitute accuracy  label_only: dast 68.69  mega 89.43   probability_only: dfme 63.14  dast 66.11  mega 90.93
# queries to best (x10^4)  label_only: dast 2150  mega 34   probability_only: dfme 72  dast 590  mega 35
";

#[derive(Clone, Debug)]
pub struct DiagnoseSummary {
    pub reports: Vec<PropertyReport>,
}

impl DiagnoseSummary {
    pub fn all_passed(&self) -> bool {
        self.reports.iter().all(|r| r.passed)
    }
}

fn load_params(path: &Path) -> Result<(NetworkSpec, Parameters)> {
    require(path)?;
    let (spec, params, _) = load_checkpoint(path)?;
    Ok((spec, params))
}

/// Replays the checks over a MEGA run directory (as written by
/// [`cmd_steal`]) and writes one JSON report per check into `out_dir`.
pub fn cmd_diagnose(run_dir: &Path, out_dir: &Path) -> Result<DiagnoseSummary> {
    let cfg_path = run_dir.join(CONFIG_RESOLVED);
    require(&cfg_path)?;
    let cfg = RunConfig::from_file(&cfg_path)?;
    let target_path = run_dir.join(TARGET_CKPT);
    require(&target_path)?;
    let oracle = TargetOracle::load(&target_path, cfg.oracle_mode)?;
    let (gen_spec, generator_init) = load_params(&run_dir.join(GENERATOR_INIT_CKPT))?;
    let (sub_spec, substitute) = load_params(&run_dir.join(SUBSTITUTE_CKPT))?;
    let noise_path = run_dir.join(NOISE_CKPT);
    require(&noise_path)?;
    let (noise_header, mut noise) = load_tensors(&noise_path)?;
    if noise.len() != 1 {
        return Err(Error::CorruptPayload(format!(
            "{} holds {} tensors",
            noise_path.display(),
            noise.len()
        )));
    }
    let noise = NoiseSeedSet::from_tensor(noise.remove(0), noise_header.seed);
    let trace_path = run_dir.join(TRACE);
    require(&trace_path)?;
    let rows = read_trace_csv(&trace_path)?;

    let mut checkpoints = Vec::with_capacity(rows.len());
    let mut before = generator_init;
    for round in 1..=rows.len() {
        let (_, sub) = load_params(&round_path(run_dir, round, "sub"))?;
        let (_, after) = load_params(&round_path(run_dir, round, "gen"))?;
        checkpoints.push(RoundCheckpoint {
            round,
            generator_before: before,
            substitute: sub,
            generator_after: after.clone(),
        });
        before = after;
    }
    let run = RunArtifacts {
        generator: &gen_spec,
        substitute: &sub_spec,
        checkpoints: &checkpoints,
        noise: &noise,
        oracle: &oracle,
    };
    let th = cfg.thresholds;
    let twin = (cfg.oracle_mode == AccessMode::ProbabilityOnly).then(|| oracle.twin(AccessMode::ProbabilityOnly));

    // constant target: the target's output on the first generated example
    let x = generator_forward(
        &gen_spec,
        &checkpoints.last().expect("rows").generator_after,
        noise.vectors(),
    )?;
    let probe = x.select_rows(&(0..x.shape()[0].min(16)).collect::<Vec<_>>());
    let t0 = oracle
        .twin(AccessMode::ProbabilityOnly)
        .query_as(LedgerKind::Eval, &probe.select_rows(&[0]))?;
    let reports = vec![
        check_lemma1(&run, &th)?,
        check_theorem1(&rows, &th)?,
        check_assumption_argmax(&run, &th)?,
        check_assumption_confidence(&run, twin.as_ref(), &th)?,
        check_ce_kl(&sub_spec, &substitute, t0.data(), &probe, cfg.seed)?,
    ];
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for r in &reports {
        write_file(&out_dir.join(format!("{}.json", r.name)), r.to_json().as_bytes())?;
    }
    Ok(DiagnoseSummary { reports })
}

/// One data row per run directory: algorithm, mode, agreement, queries,
/// and attack success rates when an attack report sits in the directory.
pub fn cmd_report(run_dirs: &[PathBuf]) -> Result<String> {
    if run_dirs.is_empty() {
        return Err(Error::Config("report needs at least one run directory".into()));
    }
    let header = [
        "run",
        "algorithm",
        "mode",
        "final_agreement",
        "best_agreement",
        "queries_to_best",
        "total_queries",
        "asr_untargeted",
        "asr_targeted",
    ];
    let mut table = vec![header.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
    for dir in run_dirs {
        let path = dir.join(SUMMARY);
        require(&path)?;
        let s = parse_kv(&read_file(&path)?);
        let a = match dir.join(ATTACK_REPORT) {
            p if p.is_file() => parse_kv(&read_file(&p)?),
            _ => BTreeMap::new(),
        };
        let get = |m: &BTreeMap<String, String>, k: &str| m.get(k).cloned().unwrap_or_else(|| "-".into());
        table.push(vec![
            dir.display().to_string(),
            get(&s, "algorithm"),
            get(&s, "oracle_mode"),
            get(&s, "final_heldout_agreement"),
            get(&s, "best_heldout_agreement"),
            get(&s, "queries_to_best"),
            get(&s, "total_queries"),
            get(&a, "asr_untargeted"),
            get(&a, "asr_targeted"),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| table.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &table {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (v, &w))| if c == 0 { format!("{v:<w$}") } else { format!("{v:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out.push_str(STEALING_REFERENCE);
    out.push_str(ASR_REFERENCE);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{OptimizerAlgorithm, OptimizerConfig};

    #[test]
    fn text_round_trips_every_key() {
        let mut cfg = RunConfig::default();
        cfg.seed = 9;
        cfg.oracle_mode = AccessMode::ProbabilityOnly;
        cfg.steal.algorithm = Algorithm::Dast;
        cfg.steal.substitute_opt = OptimizerConfig::sgd(0.05);
        cfg.idx_test_labels = Some("a/b".into());
        cfg.attack.random_start = false;
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        for (key, _) in KEYS {
            assert!(cfg.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn defaults_are_the_documented_ones() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg.steal.substitute_opt.learning_rate, 1e-2);
        assert_eq!(cfg.generator_activation, Activation::Tanh);
        assert_eq!(cfg.target.optimizer.algorithm, OptimizerAlgorithm::Adam);
        assert_eq!(cfg.generator_widths, vec![64, 128, 128, 2]);
    }

    #[test]
    fn rejects_bad_documents() {
        let e = RunConfig::parse("foo = 1").unwrap_err();
        assert!(matches!(&e, Error::UnknownKey(k) if k == "foo"));
        assert_eq!(e.exit_code(), 2);
        for bad in [
            "rounds = x",
            "rounds = 1\nrounds = 2",
            "no equals sign",
            "algorithm = gan",
            "generator_widths = 64,3",
            "substitute_widths = 2,16,4",
            "attack_target_class = 3",
            "lemma1_threshold = 1.5",
        ] {
            let e = RunConfig::parse(bad).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{bad}: {e}");
        }
    }

    #[test]
    fn comments_and_blank_lines() {
        let cfg = RunConfig::parse("# hi\n\n rounds = 7 # trailing\nattack_kind=pgd\n").unwrap();
        assert_eq!(cfg.steal.rounds, 7);
        assert_eq!(cfg.attack.kind, AttackKind::Pgd);
    }

    #[test]
    fn budget_sets_rounds() {
        let cfg = RunConfig::parse("query_budget = 2560").unwrap();
        assert_eq!(cfg.resolved_steal().unwrap().rounds, 10);
    }

    #[test]
    fn toy_splits_differ_and_repeat() {
        let cfg = RunConfig::default();
        let (a, b) = cfg.datasets().unwrap();
        let (c, _) = cfg.datasets().unwrap();
        assert_eq!(a.examples(), c.examples());
        assert_ne!(a.examples(), b.examples());
        assert_eq!(a.len(), 300);
    }
}

//! Command-line front end: config layering, the five subcommands and
//! their JSON run reports.
//!
//! Settings resolve as flag over config file over default. Every report
//! echoes the fully resolved config and carries no timestamps, so identical
//! inputs give byte-identical reports.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::dataset::{generate_synthetic, load_neutral, save_neutral, DatasetError, ModulationScheme, SignalDataset};
use crate::metrics::{evaluate, kmeans, MetricReport, MetricsError};
use crate::nn::{ModelState, NnError};
use crate::trainer::{finetune_cluster, pretrain, EpochRecord, TrainConfig, TrainError};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Dataset { path: PathBuf, source: DatasetError },
    #[error("{path}: {source}")]
    Checkpoint { path: PathBuf, source: NnError },
    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Model(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DatasetError),
}

impl CliError {
    /// 1 usage or validation, 2 I/O or unreadable file, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } | CliError::Dataset { .. } | CliError::Checkpoint { .. } => 2,
            CliError::Train(TrainError::NonFiniteLoss { .. } | TrainError::Nn(NnError::NonFinite(_)))
            | CliError::Model(NnError::NonFinite(_)) => 3,
            CliError::Data(DatasetError::Io(_)) | CliError::Model(NnError::Io(_)) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Parser)]
#[command(name = "dtc", version, about = "Cluster I/Q radio signals with a network transferred from labeled auxiliary data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Generate a synthetic labeled dataset in the neutral format.
    Gen,
    /// Supervised pairwise pre-training on the auxiliary set.
    Pretrain,
    /// Self-labeled fine-tuning and clustering of the target set.
    Cluster,
    /// K-means on raw flattened signals.
    Baseline,
    /// Score a stored assignments file against dataset labels.
    Eval,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Pretrain => "pretrain",
            Command::Cluster => "cluster",
            Command::Baseline => "baseline",
            Command::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// TOML config file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Labeled auxiliary dataset.
    #[arg(long, global = true, value_name = "PATH")]
    pub aux: Option<PathBuf>,
    /// Target dataset (clustered, or scored by `eval`).
    #[arg(long, global = true, value_name = "PATH")]
    pub target: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    pub ckpt_in: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    pub ckpt_out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    pub report: Option<PathBuf>,
    /// Assignments file, written by `cluster`/`baseline`, read by `eval`.
    #[arg(long, global = true, value_name = "PATH")]
    pub assignments: Option<PathBuf>,
    /// Output dataset for `gen`.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Negative-pair weight of the running stage.
    #[arg(long, global = true, value_name = "X")]
    pub lambda: Option<f64>,
    #[arg(long, global = true, value_name = "X")]
    pub u: Option<f64>,
    #[arg(long, global = true, value_name = "X")]
    pub l: Option<f64>,
    #[arg(long, global = true, value_name = "N")]
    pub batch: Option<usize>,
    #[arg(long, global = true, value_name = "X")]
    pub lr: Option<f64>,
    #[arg(long, global = true, value_name = "N")]
    pub max_epochs: Option<usize>,
    /// Comma-separated scheme names for `gen`.
    #[arg(long, global = true, value_name = "LIST")]
    pub schemes: Option<String>,
    #[arg(long, global = true, value_name = "N")]
    pub per_class: Option<usize>,
    #[arg(long, global = true, value_name = "N")]
    pub length: Option<usize>,
    #[arg(long, global = true, value_name = "DB", allow_hyphen_values = true)]
    pub snr_db: Option<i16>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub schemes: Vec<String>,
    pub per_class: usize,
    pub length: usize,
    pub snr_db: i16,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            schemes: ["BPSK", "QPSK", "4PAM", "CPFSK"].map(String::from).to_vec(),
            per_class: 250,
            length: 128,
            snr_db: 10,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathConfig {
    pub aux: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub ckpt_in: Option<PathBuf>,
    pub ckpt_out: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub assignments: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Everything one run needs. `seed` drives model initialization, data
/// generation, K-means seeding and (copied into `train.seed`) batching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub kmeans_max_iter: usize,
    pub train: TrainConfig,
    pub paths: PathConfig,
    pub generator: GeneratorConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            kmeans_max_iter: 300,
            train: TrainConfig::default(),
            paths: PathConfig::default(),
            generator: GeneratorConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_owned(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }

    /// Layers `flags` over the config file (if any) over defaults.
    /// `--lambda` sets the weight of whichever stage `command` runs.
    pub fn resolve(command: Command, flags: &Flags) -> Result<Self> {
        let mut cfg = match &flags.config {
            Some(path) => Self::from_toml_file(path)?,
            None => Self::default(),
        };
        let p = &mut cfg.paths;
        for (slot, flag) in [
            (&mut p.aux, &flags.aux),
            (&mut p.target, &flags.target),
            (&mut p.ckpt_in, &flags.ckpt_in),
            (&mut p.ckpt_out, &flags.ckpt_out),
            (&mut p.report, &flags.report),
            (&mut p.assignments, &flags.assignments),
            (&mut p.out, &flags.out),
        ] {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
        let t = &mut cfg.train;
        if let Some(lambda) = flags.lambda {
            match command {
                Command::Pretrain => t.lambda_pretrain = lambda,
                _ => t.lambda_finetune = lambda,
            }
        }
        t.u = flags.u.unwrap_or(t.u);
        t.l = flags.l.unwrap_or(t.l);
        t.batch_size = flags.batch.unwrap_or(t.batch_size);
        t.lr = flags.lr.unwrap_or(t.lr);
        t.max_epochs = flags.max_epochs.unwrap_or(t.max_epochs);
        let g = &mut cfg.generator;
        if let Some(list) = &flags.schemes {
            g.schemes = list.split(',').map(|s| s.trim().to_owned()).collect();
        }
        g.per_class = flags.per_class.unwrap_or(g.per_class);
        g.length = flags.length.unwrap_or(g.length);
        g.snr_db = flags.snr_db.unwrap_or(g.snr_db);
        cfg.seed = flags.seed.unwrap_or(cfg.seed);
        cfg.train.seed = cfg.seed;
        cfg.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub records: usize,
    pub classes: usize,
    pub signal_length: usize,
    pub labeled: bool,
}

impl DatasetSummary {
    fn of(ds: &SignalDataset) -> Self {
        DatasetSummary {
            records: ds.len(),
            classes: ds.num_classes(),
            signal_length: ds.signal_length,
            labeled: ds.labeled,
        }
    }
}

/// One JSON document per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: Command,
    pub config: ExperimentConfig,
    pub dataset: Option<DatasetSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretrained: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs_run: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_val_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_val_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected_pair_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inertia: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricReport>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub epochs: Vec<EpochRecord>,
}

impl RunReport {
    fn new(command: Command, config: &ExperimentConfig) -> Self {
        RunReport {
            command,
            config: config.clone(),
            dataset: None,
            pretrained: None,
            epochs_run: None,
            best_epoch: None,
            initial_val_loss: None,
            best_val_loss: None,
            final_loss: None,
            selected_pair_fraction: None,
            inertia: None,
            metrics: None,
            epochs: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Short human-readable summary.
    pub fn summary(&self) -> String {
        let mut line = self.command.name().to_owned();
        if let Some(d) = &self.dataset {
            line += &format!(" n={} k={} L={}", d.records, d.classes, d.signal_length);
        }
        if self.command == Command::Gen {
            line += &format!(" snr_db={}", self.config.generator.snr_db);
        }
        if let Some(e) = self.epochs_run {
            line += &format!(" epochs={e}");
        }
        if let Some(v) = self.best_val_loss {
            line += &format!(" best_val_loss={v:.6}");
        }
        if let Some(m) = &self.metrics {
            line += &format!(" nmi={:.4} ari={:.4} acc={:.4}", m.nmi, m.ari, m.acc);
        }
        line
    }
}

fn require<'a>(path: &'a Option<PathBuf>, flag: &str, command: Command) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| CliError::Usage(format!("`{}` needs --{flag}", command.name())))
}

fn load_dataset(path: &Path) -> Result<SignalDataset> {
    load_neutral(path).map_err(|source| CliError::Dataset {
        path: path.to_owned(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

fn write_assignments(path: &Path, assignments: &[usize]) -> Result<()> {
    let text: String = assignments.iter().map(|a| format!("{a}\n")).collect();
    write_file(path, text.as_bytes())
}

/// Parses one non-negative cluster index per line; blank lines are skipped.
pub fn read_assignments(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            line.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("{}:{}: `{}` is not a cluster index", path.display(), i + 1, line.trim())))
        })
        .collect()
}

fn scheme_list(names: &[String]) -> Result<Vec<ModulationScheme>> {
    if names.is_empty() {
        return Err(CliError::Usage("no schemes given".into()));
    }
    ModulationScheme::parse_list(&names.join(",")).map_err(|e| CliError::Usage(e.to_string()))
}

pub fn cmd_gen(cfg: &ExperimentConfig) -> Result<RunReport> {
    let out = require(&cfg.paths.out, "out", Command::Gen)?;
    let g = &cfg.generator;
    let schemes = scheme_list(&g.schemes)?;
    let ds = generate_synthetic(&schemes, g.per_class, g.length, g.snr_db, cfg.seed)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    save_neutral(&ds, out).map_err(|source| CliError::Dataset {
        path: out.to_owned(),
        source,
    })?;
    let mut report = RunReport::new(Command::Gen, cfg);
    report.dataset = Some(DatasetSummary::of(&ds));
    Ok(report)
}

pub fn cmd_pretrain(cfg: &ExperimentConfig) -> Result<RunReport> {
    let aux_path = require(&cfg.paths.aux, "aux", Command::Pretrain)?;
    let ckpt_out = require(&cfg.paths.ckpt_out, "ckpt-out", Command::Pretrain)?;
    let mut aux = load_dataset(aux_path)?;
    if !aux.labeled {
        return Err(CliError::Usage(format!("{}: auxiliary dataset must be labeled", aux_path.display())));
    }
    if let Some(target_path) = &cfg.paths.target {
        let target = load_dataset(target_path)?;
        if target.signal_length != aux.signal_length {
            aux = aux.adjust_length(target.signal_length)?;
        }
    }
    let model = ModelState::init(aux.signal_length, aux.num_classes(), cfg.seed)?;
    let outcome = pretrain(model, &aux, &cfg.train)?;
    outcome.model.save_checkpoint(ckpt_out).map_err(|source| CliError::Checkpoint {
        path: ckpt_out.to_owned(),
        source,
    })?;
    let mut report = RunReport::new(Command::Pretrain, cfg);
    report.dataset = Some(DatasetSummary::of(&aux));
    report.epochs_run = Some(outcome.epochs_run);
    report.best_epoch = Some(outcome.best_epoch);
    report.initial_val_loss = outcome.initial_val_loss;
    report.best_val_loss = outcome.best_val_loss.is_finite().then_some(outcome.best_val_loss);
    report.final_loss = outcome.final_train_loss();
    report.epochs = outcome.log;
    Ok(report)
}

/// Model for clustering: the checkpoint if given, otherwise a fresh seeded
/// network. A checkpoint trained for a different cluster count gets a new
/// output layer.
fn clustering_model(cfg: &ExperimentConfig, target: &SignalDataset) -> Result<(ModelState, bool)> {
    let k = target.num_classes();
    let Some(path) = &cfg.paths.ckpt_in else {
        return Ok((ModelState::init(target.signal_length, k, cfg.seed)?, false));
    };
    let mut model = ModelState::load_checkpoint(path).map_err(|source| CliError::Checkpoint {
        path: path.clone(),
        source,
    })?;
    if model.signal_length() != target.signal_length {
        return Err(CliError::Usage(format!(
            "checkpoint expects signal length {} but the target has {}",
            model.signal_length(),
            target.signal_length
        )));
    }
    if model.num_classes() != k {
        model.reinit_output(k, cfg.seed)?;
    }
    Ok((model, true))
}

fn target_metrics(target: &SignalDataset, assignments: &[usize]) -> Result<Option<MetricReport>> {
    match target.labels() {
        Some(truth) if truth.len() >= 2 => Ok(Some(evaluate(&truth, assignments, target.num_classes())?)),
        _ => Ok(None),
    }
}

fn assignments_path(cfg: &ExperimentConfig) -> Option<PathBuf> {
    cfg.paths
        .assignments
        .clone()
        .or_else(|| cfg.paths.report.as_ref().map(|r| r.with_extension("assignments.txt")))
}

pub fn cmd_cluster(cfg: &ExperimentConfig) -> Result<RunReport> {
    let target_path = require(&cfg.paths.target, "target", Command::Cluster)?;
    let target = load_dataset(target_path)?;
    if target.num_classes() == 0 {
        return Err(CliError::Usage("target declares no clusters".into()));
    }
    let (model, pretrained) = clustering_model(cfg, &target)?;
    let result = finetune_cluster(model, &target, &cfg.train)?;
    if let Some(path) = assignments_path(cfg) {
        write_assignments(&path, &result.assignments)?;
    }
    let mut report = RunReport::new(Command::Cluster, cfg);
    report.dataset = Some(DatasetSummary::of(&target));
    report.pretrained = Some(pretrained);
    report.epochs_run = Some(result.epochs_run);
    report.final_loss = Some(result.final_loss);
    report.selected_pair_fraction = Some(result.selected_pair_fraction);
    report.metrics = target_metrics(&target, &result.assignments)?;
    report.epochs = result.log;
    Ok(report)
}

/// Flattens each record to `[I..., Q...]` as `f64`.
pub fn flatten_records(ds: &SignalDataset) -> Vec<f64> {
    ds.records.iter().flat_map(|r| r.iq.iter().map(|&v| f64::from(v))).collect()
}

pub fn cmd_baseline(cfg: &ExperimentConfig) -> Result<RunReport> {
    let target_path = require(&cfg.paths.target, "target", Command::Baseline)?;
    let target = load_dataset(target_path)?;
    let k = target.num_classes();
    let out = kmeans(&flatten_records(&target), 2 * target.signal_length, k, cfg.seed, cfg.kmeans_max_iter)?;
    if let Some(path) = assignments_path(cfg) {
        write_assignments(&path, &out.assignments)?;
    }
    let mut report = RunReport::new(Command::Baseline, cfg);
    report.dataset = Some(DatasetSummary::of(&target));
    report.epochs_run = Some(out.iterations);
    report.inertia = Some(out.inertia);
    report.metrics = target_metrics(&target, &out.assignments)?;
    Ok(report)
}

pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<RunReport> {
    let assignments_file = require(&cfg.paths.assignments, "assignments", Command::Eval)?;
    let target_path = require(&cfg.paths.target, "target", Command::Eval)?;
    let target = load_dataset(target_path)?;
    let truth = target.labels().ok_or(CliError::Data(DatasetError::Unlabeled))?;
    let assignments = read_assignments(assignments_file)?;
    if assignments.len() != truth.len() {
        return Err(CliError::Usage(format!(
            "{} holds {} assignments but the dataset has {} records",
            assignments_file.display(),
            assignments.len(),
            truth.len()
        )));
    }
    let k = target.num_classes().max(assignments.iter().max().map_or(0, |m| m + 1));
    let mut report = RunReport::new(Command::Eval, cfg);
    report.dataset = Some(DatasetSummary::of(&target));
    report.metrics = Some(evaluate(&truth, &assignments, k)?);
    Ok(report)
}

/// Runs one subcommand and writes its report to `paths.report` when set.
pub fn execute(command: Command, cfg: &ExperimentConfig) -> Result<RunReport> {
    let report = match command {
        Command::Gen => cmd_gen(cfg),
        Command::Pretrain => cmd_pretrain(cfg),
        Command::Cluster => cmd_cluster(cfg),
        Command::Baseline => cmd_baseline(cfg),
        Command::Eval => cmd_eval(cfg),
    }?;
    if let Some(path) = &cfg.paths.report {
        write_file(path, report.to_json().as_bytes())?;
    }
    Ok(report)
}

/// Entry point for the binary: resolves the config, runs, prints the
/// summary (and the report when no report path is set).
pub fn run(cli: &Cli) -> Result<RunReport> {
    let cfg = ExperimentConfig::resolve(cli.command, &cli.flags)?;
    let report = execute(cli.command, &cfg)?;
    if cfg.paths.report.is_none() && cli.command != Command::Gen {
        print!("{}", report.to_json());
    }
    for rec in &report.epochs {
        eprintln!("{rec}");
    }
    println!("{}", report.summary());
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_and_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "seed = 4\n[train]\nu = 0.9\nlr = 0.01\n[generator]\nper_class = 3\n").unwrap();
        let flags = Flags {
            config: Some(path),
            lr: Some(0.5),
            lambda: Some(7.0),
            ..Default::default()
        };
        let cfg = ExperimentConfig::resolve(Command::Pretrain, &flags).unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.train.seed, 4);
        assert_eq!(cfg.train.u, 0.9);
        assert_eq!(cfg.train.lr, 0.5);
        assert_eq!(cfg.train.lambda_pretrain, 7.0);
        assert_eq!(cfg.train.lambda_finetune, 100.0);
        assert_eq!(cfg.generator.per_class, 3);
        assert_eq!(cfg.generator.length, 128);
    }

    #[test]
    fn bad_config_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "[train]\nbogus = 1\n").unwrap();
        let flags = Flags {
            config: Some(path),
            ..Default::default()
        };
        let err = ExperimentConfig::resolve(Command::Cluster, &flags).unwrap_err();
        assert!(matches!(err, CliError::Config { .. }));
        assert_eq!(err.exit_code(), 1);

        let flags = Flags {
            u: Some(0.3),
            l: Some(0.5),
            ..Default::default()
        };
        assert_eq!(ExperimentConfig::resolve(Command::Cluster, &flags).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn exit_codes() {
        let io = CliError::Io {
            path: "x".into(),
            source: std::io::Error::other("gone"),
        };
        assert_eq!(io.exit_code(), 2);
        let nan = CliError::Train(TrainError::NonFiniteLoss {
            stage: crate::trainer::Stage::Finetune,
            epoch: 1,
        });
        assert_eq!(nan.exit_code(), 3);
        assert_eq!(CliError::Usage("x".into()).exit_code(), 1);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<ExperimentConfig>(&text).unwrap(), cfg);
    }
}

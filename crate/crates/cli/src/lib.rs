//! Command-line front end: config parsing, command dispatch, artifact
//! writing and exit-code mapping.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nocnn::experiments::{
    ablation_csv, approx_csv, dataset_rng, load_mnist_idx, loss_ablation, make_measurement_model,
    run_approximation_study, run_cs_experiment, split_rng, synth_sparse_dataset, ApproxStudy,
    CsMethods, ExperimentReport, SignalDataset,
};
use nocnn::network::stage_lengths;
use nocnn::{model_io, Error};
use sha2::{Digest, Sha256};

pub use config::{parse_config, Command, DatasetSource, Diagnostic, RunConfig};

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const USAGE: u8 = 2;
    pub const CONFIG: u8 = 3;
    pub const STRUCTURE: u8 = 4;
    pub const PARAMETER: u8 = 5;
    pub const NUMERIC: u8 = 6;
    pub const IO_FORMAT: u8 = 7;
    pub const UNSUPPORTED: u8 = 8;
}

pub const EXIT_CODE_HELP: &str = "\
Exit codes:
  0  success
  2  command-line usage error
  3  configuration rejected (diagnostics list the key paths)
  4  network structure violation
  5  invalid parameter or shape
  6  numeric failure during training
  7  I/O or file-format error
  8  unsupported configuration (e.g. the CelebA settings)";

#[derive(Debug)]
pub enum CliError {
    Config(Vec<Diagnostic>),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(Error::Io(e))
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Run(e) => match e {
                Error::Structure(_) | Error::Violation(_) => exit::STRUCTURE,
                Error::Shape(_) | Error::Parameter(_) => exit::PARAMETER,
                Error::Numeric(_) => exit::NUMERIC,
                Error::Format { .. } | Error::Io(_) => exit::IO_FORMAT,
                Error::Unsupported(_) => exit::UNSUPPORTED,
            },
        }
    }

    pub fn render(&self) -> String {
        match self {
            CliError::Config(diags) => {
                let mut out = format!("configuration rejected ({} problem(s)):", diags.len());
                for d in diags {
                    let _ = write!(out, "\n  {d}");
                }
                out
            }
            CliError::Run(e) => format!("error: {e}"),
        }
    }
}

/// First 12 hex digits of the SHA-256 of the config document.
pub fn config_hash(document: &str) -> String {
    Sha256::digest(document.as_bytes())
        .iter()
        .take(6)
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Files produced by one command, written together at the end.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub files: Vec<(String, String)>,
}

impl Artifacts {
    fn add(&mut self, name: String, contents: String) {
        self.files.push((name, contents));
    }

    /// Writes every file to a temporary name first and renames only once
    /// all writes succeeded.
    pub fn commit(&self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        if self.files.is_empty() {
            return Ok(Vec::new());
        }
        fs::create_dir_all(dir)?;
        let mut staged = Vec::with_capacity(self.files.len());
        let result = (|| {
            for (name, contents) in &self.files {
                let tmp = dir.join(format!(".{name}.partial"));
                fs::write(&tmp, contents)?;
                staged.push((tmp, dir.join(name)));
            }
            for (tmp, dest) in &staged {
                fs::rename(tmp, dest)?;
            }
            Ok(staged.iter().map(|(_, d)| d.clone()).collect())
        })();
        if result.is_err() {
            for (tmp, _) in &staged {
                let _ = fs::remove_file(tmp);
            }
        }
        result
    }
}

pub struct Invocation<'a> {
    pub command: Command,
    pub document: &'a str,
    pub seed_override: Option<u64>,
    /// Input CSV for `report`.
    pub input: Option<&'a Path>,
}

pub struct Outcome {
    pub stdout: String,
    pub artifacts: Artifacts,
}

/// Parses the config, runs the command and returns its artifacts without
/// touching the filesystem (except to read inputs).
pub fn execute(inv: &Invocation<'_>) -> Result<Outcome, CliError> {
    if inv.command == Command::Report {
        let path = inv
            .input
            .ok_or_else(|| Error::Parameter("report needs an input CSV".into()))?;
        let text = fs::read_to_string(path)?;
        let report = ExperimentReport::from_csv(&text).map_err(|e| e.context(&path.display().to_string()))?;
        let summary = report.summary_text();
        let stem = path.file_stem().map_or("report".into(), |s| s.to_string_lossy().into_owned());
        let mut artifacts = Artifacts::default();
        artifacts.add(format!("{stem}.summary.toml"), summary.clone());
        return Ok(Outcome {
            stdout: summary,
            artifacts,
        });
    }

    let mut cfg = parse_config(inv.document, inv.command).map_err(CliError::Config)?;
    if let Some(s) = inv.seed_override {
        cfg.seed = s;
    }
    let stem = format!("{}-{}-s{}", inv.command.name(), config_hash(inv.document), cfg.seed);
    let started = SystemTime::now();
    let mut artifacts = Artifacts::default();
    let mut stdout = String::new();

    match inv.command {
        Command::Validate => {
            let exp = cfg.experiment.as_ref().expect("validated");
            let ks: Vec<usize> = cfg.network.as_ref().expect("validated").iter().map(|s| s.k).collect();
            let lengths = stage_lengths(exp.n, &ks).map_err(Error::Violation)?;
            let chain: Vec<String> = lengths.iter().map(usize::to_string).collect();
            let _ = writeln!(stdout, "structure ok: n = {} = product of {:?}", exp.n, ks);
            let _ = writeln!(stdout, "stage lengths: {}", chain.join(" -> "));
        }
        Command::Train => {
            let exp = cfg.experiment.as_ref().expect("validated");
            let dataset = load_dataset(&cfg)?;
            let model = make_measurement_model::<f64>(exp.n, exp.m, exp.delta, cfg.seed)?;
            let (art, lasso) = cfg.baselines.clone().expect("validated");
            let methods = CsMethods {
                cascade: cfg.network.clone().expect("validated"),
                art,
                lasso,
            };
            let train_cfg = cfg.train_config().expect("validated");
            let outcome = run_cs_experiment(&model, &dataset, &methods, &train_cfg)?;
            stdout.push_str(&outcome.report.summary_text());
            artifacts.add(format!("{stem}.csv"), outcome.report.to_csv());
            artifacts.add(format!("{stem}.summary.toml"), outcome.report.summary_text());
            artifacts.add(
                format!("{stem}.history.csv"),
                outcome.trained.history.to_csv_deterministic(),
            );
            artifacts.add(format!("{stem}.model"), model_io::to_text(&outcome.trained.net));
            let mut meta = String::new();
            let _ = writeln!(meta, "experiment_wall_seconds = {}", outcome.report.wall_seconds);
            let _ = writeln!(meta, "\n[epoch_wall_seconds]");
            for r in &outcome.trained.history.records {
                let _ = writeln!(meta, "{} = {}", r.epoch, r.wall_seconds);
            }
            artifacts.add(format!("{stem}.meta.toml"), meta_header(&started, &cfg) + &meta);
        }
        Command::Approx => {
            let a = cfg.approx.clone().expect("validated");
            let study = ApproxStudy {
                target: a.target,
                n: a.n,
                plans: a.plans,
                grid_resolution: a.grid_resolution,
                train_samples: a.train_samples,
                train: cfg.train_config().expect("validated"),
            };
            let rows = run_approximation_study(&study)?;
            let csv = approx_csv(&rows);
            stdout.push_str(&csv);
            artifacts.add(format!("{stem}.csv"), csv);
            artifacts.add(format!("{stem}.meta.toml"), meta_header(&started, &cfg));
        }
        Command::Ablate => {
            let exp = cfg.experiment.as_ref().expect("validated");
            let dataset = load_dataset(&cfg)?;
            let model = make_measurement_model::<f64>(exp.n, exp.m, exp.delta, cfg.seed)?;
            let rows = loss_ablation(
                &model,
                &dataset,
                cfg.network.as_ref().expect("validated"),
                &cfg.train_config().expect("validated"),
                cfg.alphas.as_ref().expect("validated"),
            )?;
            let csv = ablation_csv(&rows);
            stdout.push_str(&csv);
            artifacts.add(format!("{stem}.csv"), csv);
            artifacts.add(format!("{stem}.meta.toml"), meta_header(&started, &cfg));
        }
        Command::Report => unreachable!("handled above"),
    }
    Ok(Outcome { stdout, artifacts })
}

fn meta_header(started: &SystemTime, cfg: &RunConfig) -> String {
    let start = started.duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
    let elapsed = started.elapsed().map_or(0.0, |d| d.as_secs_f64());
    format!(
        "command = \"{}\"\nseed = {}\nstarted_unix_seconds = {start}\nwall_seconds = {elapsed}\n",
        cfg.command.name(),
        cfg.seed
    )
}

fn load_dataset(cfg: &RunConfig) -> Result<SignalDataset<f64>, CliError> {
    let exp = cfg.experiment.as_ref().expect("validated");
    let total = exp.train + exp.validation + exp.test;
    let mut dataset = match &exp.source {
        DatasetSource::Synthetic { sparsity } => {
            let mut d = synth_sparse_dataset(exp.m, *sparsity, total, &mut dataset_rng(cfg.seed))?;
            d.assign_splits(exp.train, exp.validation, exp.test, None)?;
            d
        }
        DatasetSource::Mnist { images, labels, limit } => {
            let mut d = load_mnist_idx(images, labels, *limit)?;
            d.assign_splits(exp.train, exp.validation, exp.test, Some(&mut split_rng(cfg.seed)))?;
            d
        }
        DatasetSource::Celeba => {
            return Err(Error::Unsupported(
                "the CelebA settings are shipped as documentation; no CelebA loader is included".into(),
            )
            .into())
        }
    };
    if dataset.signal_len() != exp.m {
        return Err(Error::Shape(format!(
            "dataset signals have {} entries, config says m = {}",
            dataset.signal_len(),
            exp.m
        ))
        .into());
    }
    dataset.labels = None;
    Ok(dataset)
}

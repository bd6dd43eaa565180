//! Run configuration: a TOML document parsed into typed sections, with every
//! problem reported against its key path.

use std::fmt;
use std::path::PathBuf;

use nocnn::baselines::ArtConfig;
use nocnn::experiments::{LassoSelection, TargetFunction};
use nocnn::training::{AdamWConfig, LossConfig, ScheduleConfig, TrainConfig};
use nocnn::{validate_nonoverlap, StageSpec};
use toml::{Table, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Validate,
    Train,
    Approx,
    Ablate,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Train => "train",
            Command::Approx => "approx",
            Command::Ablate => "ablate",
            Command::Report => "report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Synthetic {
        sparsity: usize,
    },
    Mnist {
        images: PathBuf,
        labels: PathBuf,
        limit: Option<usize>,
    },
    /// Accepted so the paper's CelebA settings can be shipped; not runnable.
    Celeba,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSection {
    pub source: DatasetSource,
    pub n: usize,
    pub m: usize,
    pub delta: f64,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApproxSection {
    pub target: TargetFunction,
    pub n: usize,
    pub grid_resolution: usize,
    pub train_samples: usize,
    pub plans: Vec<Vec<StageSpec>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub seed: u64,
    pub experiment: Option<ExperimentSection>,
    pub network: Option<Vec<StageSpec>>,
    pub training: Option<TrainConfig>,
    pub baselines: Option<(ArtConfig, LassoSelection)>,
    pub approx: Option<ApproxSection>,
    pub alphas: Option<Vec<f64>>,
}

impl RunConfig {
    /// Training settings with the run seed applied.
    pub fn train_config(&self) -> Option<TrainConfig> {
        self.training.map(|mut t| {
            t.seed = self.seed;
            t
        })
    }
}

struct Walker {
    diags: Vec<Diagnostic>,
}

impl Walker {
    fn report(&mut self, path: &str, message: impl Into<String>) {
        self.diags.push(Diagnostic {
            path: path.to_string(),
            message: message.into(),
        });
    }

    fn check_keys(&mut self, table: &Table, prefix: &str, allowed: &[&str]) {
        for key in table.keys() {
            if !allowed.contains(&key.as_str()) {
                self.report(&join(prefix, key), "unknown key");
            }
        }
    }

    fn section<'t>(&mut self, root: &'t Table, name: &str, required: bool) -> Option<&'t Table> {
        match root.get(name) {
            Some(Value::Table(t)) => Some(t),
            Some(_) => {
                self.report(name, "expected a table");
                None
            }
            None => {
                if required {
                    self.report(name, "missing required section");
                }
                None
            }
        }
    }

    fn raw<'t>(&mut self, t: &'t Table, prefix: &str, key: &str, required: bool) -> Option<&'t Value> {
        let v = t.get(key);
        if v.is_none() && required {
            self.report(&join(prefix, key), "missing required key");
        }
        v
    }

    fn usize_at(&mut self, path: &str, v: &Value) -> Option<usize> {
        match v {
            Value::Integer(i) if *i >= 0 => Some(*i as usize),
            _ => {
                self.report(path, format!("expected a non-negative integer, found {v}"));
                None
            }
        }
    }

    fn uint(&mut self, t: &Table, prefix: &str, key: &str) -> Option<usize> {
        let v = self.raw(t, prefix, key, true)?;
        self.usize_at(&join(prefix, key), v)
    }

    fn uint_or(&mut self, t: &Table, prefix: &str, key: &str, default: usize) -> Option<usize> {
        match self.raw(t, prefix, key, false) {
            Some(v) => self.usize_at(&join(prefix, key), v),
            None => Some(default),
        }
    }

    fn float_at(&mut self, path: &str, v: &Value) -> Option<f64> {
        match v {
            Value::Float(f) => Some(*f),
            Value::Integer(i) => Some(*i as f64),
            _ => {
                self.report(path, format!("expected a number, found {v}"));
                None
            }
        }
    }

    fn float(&mut self, t: &Table, prefix: &str, key: &str) -> Option<f64> {
        let v = self.raw(t, prefix, key, true)?;
        self.float_at(&join(prefix, key), v)
    }

    fn float_or(&mut self, t: &Table, prefix: &str, key: &str, default: f64) -> Option<f64> {
        match self.raw(t, prefix, key, false) {
            Some(v) => self.float_at(&join(prefix, key), v),
            None => Some(default),
        }
    }

    fn string(&mut self, t: &Table, prefix: &str, key: &str) -> Option<String> {
        match self.raw(t, prefix, key, true)? {
            Value::String(s) => Some(s.clone()),
            v => {
                self.report(&join(prefix, key), format!("expected a string, found {v}"));
                None
            }
        }
    }

    fn array<T>(
        &mut self,
        t: &Table,
        prefix: &str,
        key: &str,
        item: impl Fn(&mut Self, &str, &Value) -> Option<T>,
    ) -> Option<Vec<T>> {
        let path = join(prefix, key);
        match self.raw(t, prefix, key, true)? {
            Value::Array(items) => {
                let parsed: Vec<Option<T>> = items
                    .iter()
                    .enumerate()
                    .map(|(i, v)| item(self, &format!("{path}[{i}]"), v))
                    .collect();
                parsed.into_iter().collect()
            }
            v => {
                self.report(&path, format!("expected an array, found {v}"));
                None
            }
        }
    }

    /// `kernel_lengths` / `kernel_counts` pair, checked against `n`.
    fn stages(&mut self, t: &Table, prefix: &str, n: Option<usize>) -> Option<Vec<StageSpec>> {
        let ks = self.array(t, prefix, "kernel_lengths", |w, p, v| w.usize_at(p, v));
        let cs = self.array(t, prefix, "kernel_counts", |w, p, v| w.usize_at(p, v));
        let (ks, cs) = (ks?, cs?);
        if ks.is_empty() {
            self.report(&join(prefix, "kernel_lengths"), "at least one stage is required");
            return None;
        }
        if ks.len() != cs.len() {
            self.report(
                &join(prefix, "kernel_counts"),
                format!("{} kernel counts for {} kernel lengths", cs.len(), ks.len()),
            );
            return None;
        }
        let mut specs = Vec::with_capacity(ks.len());
        for (i, (&k, &c)) in ks.iter().zip(&cs).enumerate() {
            match StageSpec::new(k, c) {
                Ok(s) => specs.push(s),
                Err(e) => self.report(&format!("{}[{i}]", join(prefix, "kernel_lengths")), e.to_string()),
            }
        }
        if specs.len() != ks.len() {
            return None;
        }
        if let Some(n) = n {
            if let Err(v) = validate_nonoverlap(n, &ks) {
                self.report(&join(prefix, "kernel_lengths"), v.to_string());
                return None;
            }
        }
        Some(specs)
    }
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

const TOP_KEYS: &[&str] = &["seed", "experiment", "network", "training", "baselines", "approx", "ablation"];
const EXPERIMENT_KEYS: &[&str] = &[
    "dataset", "n", "m", "delta", "sparsity", "images", "labels", "limit", "train", "validation", "test",
];
const NETWORK_KEYS: &[&str] = &["kernel_lengths", "kernel_counts"];
const TRAINING_KEYS: &[&str] = &[
    "epochs", "batch_size", "alpha", "learning_rate", "beta1", "beta2", "epsilon", "weight_decay",
    "decay_factor", "decay_period",
];
const BASELINE_KEYS: &[&str] = &[
    "art_sweeps", "art_relaxation", "lasso_factors", "lasso_max_iters", "lasso_tolerance",
];
const APPROX_KEYS: &[&str] = &["target", "n", "grid_resolution", "train_samples", "plans"];
const PLAN_KEYS: &[&str] = &["kernel_lengths", "kernel_counts"];
const ABLATION_KEYS: &[&str] = &["alphas"];

fn needs(command: Command) -> (bool, bool, bool, bool, bool, bool) {
    // experiment, network, training, baselines, approx, ablation
    match command {
        Command::Validate => (true, true, false, false, false, false),
        Command::Train => (true, true, true, true, false, false),
        Command::Approx => (false, false, true, false, true, false),
        Command::Ablate => (true, true, true, false, false, true),
        Command::Report => (false, false, false, false, false, false),
    }
}

/// Parses and validates `document` for `command`. Sections the command does
/// not use are still checked if present.
pub fn parse_config(document: &str, command: Command) -> Result<RunConfig, Vec<Diagnostic>> {
    let root: Table = match document.parse() {
        Ok(t) => t,
        Err(e) => {
            return Err(vec![Diagnostic {
                path: String::new(),
                message: format!("not a valid TOML document: {}", e.message()),
            }])
        }
    };
    let mut w = Walker { diags: Vec::new() };
    w.check_keys(&root, "", TOP_KEYS);
    let (need_exp, need_net, need_train, need_base, need_approx, need_abl) = needs(command);

    let seed = match w.raw(&root, "", "seed", command != Command::Report) {
        Some(Value::Integer(s)) if *s >= 0 => *s as u64,
        Some(v) => {
            w.report("seed", format!("expected a non-negative integer, found {v}"));
            0
        }
        None => 0,
    };

    let experiment = w.section(&root, "experiment", need_exp).and_then(|t| parse_experiment(&mut w, t));
    let network = w.section(&root, "network", need_net).and_then(|t| {
        w.check_keys(t, "network", NETWORK_KEYS);
        w.stages(t, "network", experiment.as_ref().map(|e| e.n))
    });
    let training = w.section(&root, "training", need_train).and_then(|t| parse_training(&mut w, t, seed));
    let baselines = w.section(&root, "baselines", need_base).and_then(|t| parse_baselines(&mut w, t));
    let approx = w.section(&root, "approx", need_approx).and_then(|t| parse_approx(&mut w, t));
    let alphas = w.section(&root, "ablation", need_abl).and_then(|t| {
        w.check_keys(t, "ablation", ABLATION_KEYS);
        let alphas = w.array(t, "ablation", "alphas", |w, p, v| {
            let a = w.float_at(p, v)?;
            if !(0.0..=1.0).contains(&a) {
                w.report(p, format!("alpha {a} outside [0, 1]"));
                return None;
            }
            Some(a)
        })?;
        if alphas.is_empty() {
            w.report("ablation.alphas", "at least one alpha is required");
            return None;
        }
        Some(alphas)
    });

    if let (Some(e), Some(t)) = (&experiment, &training) {
        if t.batch_size > e.train {
            w.report(
                "training.batch_size",
                format!("batch size {} exceeds the {} training signals", t.batch_size, e.train),
            );
        }
    }
    if let (Some(a), Some(t)) = (&approx, &training) {
        if t.batch_size > a.train_samples {
            w.report(
                "training.batch_size",
                format!("batch size {} exceeds the {} training samples", t.batch_size, a.train_samples),
            );
        }
    }

    if w.diags.is_empty() {
        Ok(RunConfig {
            command,
            seed,
            experiment,
            network,
            training,
            baselines,
            approx,
            alphas,
        })
    } else {
        Err(w.diags)
    }
}

fn parse_experiment(w: &mut Walker, t: &Table) -> Option<ExperimentSection> {
    let p = "experiment";
    w.check_keys(t, p, EXPERIMENT_KEYS);
    let dataset = w.string(t, p, "dataset");
    let n = w.uint(t, p, "n");
    let m = w.uint(t, p, "m");
    let delta = w.float(t, p, "delta");
    let train = w.uint(t, p, "train");
    let validation = w.uint(t, p, "validation");
    let test = w.uint(t, p, "test");
    let source = match dataset.as_deref() {
        Some("synthetic") => w.uint(t, p, "sparsity").map(|sparsity| DatasetSource::Synthetic { sparsity }),
        Some("mnist") => {
            let images = w.string(t, p, "images");
            let labels = w.string(t, p, "labels");
            let limit = match t.get("limit") {
                Some(v) => Some(w.usize_at("experiment.limit", v)?),
                None => None,
            };
            Some(DatasetSource::Mnist {
                images: images?.into(),
                labels: labels?.into(),
                limit,
            })
        }
        Some("celeba") => Some(DatasetSource::Celeba),
        Some(other) => {
            w.report(
                "experiment.dataset",
                format!("unknown dataset {other:?} (expected synthetic, mnist or celeba)"),
            );
            None
        }
        None => None,
    };
    let (n, m, delta) = (n?, m?, delta?);
    let mut ok = true;
    if n == 0 || n >= m {
        w.report("experiment.n", format!("compressive setting needs 1 <= n < m, got n = {n}, m = {m}"));
        ok = false;
    }
    if !(delta >= 0.0) {
        w.report("experiment.delta", format!("noise level must be >= 0, got {delta}"));
        ok = false;
    }
    if let Some(DatasetSource::Synthetic { sparsity }) = &source {
        if *sparsity == 0 || *sparsity > m {
            w.report("experiment.sparsity", format!("sparsity must lie in 1..={m}, got {sparsity}"));
            ok = false;
        }
    }
    if let Some(DatasetSource::Mnist { .. }) = &source {
        if m != 784 {
            w.report("experiment.m", format!("MNIST signals have 784 pixels, got m = {m}"));
            ok = false;
        }
    }
    let (train, validation, test) = (train?, validation?, test?);
    if train == 0 || test == 0 {
        w.report("experiment.train", "train and test splits must be non-empty");
        ok = false;
    }
    if !ok {
        return None;
    }
    Some(ExperimentSection {
        source: source?,
        n,
        m,
        delta,
        train,
        validation,
        test,
    })
}

fn parse_training(w: &mut Walker, t: &Table, seed: u64) -> Option<TrainConfig> {
    let p = "training";
    w.check_keys(t, p, TRAINING_KEYS);
    let d = AdamWConfig::default();
    let s = ScheduleConfig::default();
    let epochs = w.uint(t, p, "epochs");
    let batch_size = w.uint(t, p, "batch_size");
    let alpha = w.float(t, p, "alpha");
    let learning_rate = w.float_or(t, p, "learning_rate", d.learning_rate);
    let beta1 = w.float_or(t, p, "beta1", d.beta1);
    let beta2 = w.float_or(t, p, "beta2", d.beta2);
    let epsilon = w.float_or(t, p, "epsilon", d.epsilon);
    let weight_decay = w.float_or(t, p, "weight_decay", d.weight_decay);
    let factor = w.float_or(t, p, "decay_factor", s.factor);
    let period = w.uint_or(t, p, "decay_period", s.period);
    let loss = match LossConfig::new(alpha?) {
        Ok(l) => l,
        Err(e) => {
            w.report("training.alpha", e.to_string());
            return None;
        }
    };
    let optimizer = AdamWConfig {
        learning_rate: learning_rate?,
        beta1: beta1?,
        beta2: beta2?,
        epsilon: epsilon?,
        weight_decay: weight_decay?,
    };
    if let Err(e) = optimizer.validate() {
        w.report("training", e.to_string());
        return None;
    }
    let (epochs, batch_size) = (epochs?, batch_size?);
    let schedule = ScheduleConfig {
        factor: factor?,
        period: period?,
    };
    if epochs == 0 {
        w.report("training.epochs", "must be at least 1");
    }
    if batch_size == 0 {
        w.report("training.batch_size", "must be at least 1");
    }
    if schedule.period == 0 || !(schedule.factor > 0.0 && schedule.factor <= 1.0) {
        w.report("training.decay_factor", "decay needs a factor in (0, 1] and a period >= 1");
    }
    if epochs == 0 || batch_size == 0 {
        return None;
    }
    Some(TrainConfig {
        epochs,
        batch_size,
        seed,
        loss,
        optimizer,
        schedule,
    })
}

fn parse_baselines(w: &mut Walker, t: &Table) -> Option<(ArtConfig, LassoSelection)> {
    let p = "baselines";
    w.check_keys(t, p, BASELINE_KEYS);
    let ad = ArtConfig::default();
    let ld = LassoSelection::default();
    let sweeps = w.uint_or(t, p, "art_sweeps", ad.sweeps);
    let relaxation = w.float_or(t, p, "art_relaxation", ad.relaxation);
    let factors = if t.contains_key("lasso_factors") {
        w.array(t, p, "lasso_factors", |w, path, v| {
            let f = w.float_at(path, v)?;
            if !(f >= 0.0) {
                w.report(path, "Lasso factors must be >= 0");
                return None;
            }
            Some(f)
        })
    } else {
        Some(ld.factors.clone())
    };
    let max_iters = w.uint_or(t, p, "lasso_max_iters", ld.max_iters);
    let tolerance = w.float_or(t, p, "lasso_tolerance", ld.tolerance);
    let art = ArtConfig {
        sweeps: sweeps?,
        relaxation: relaxation?,
    };
    if let Err(e) = art.validate() {
        w.report("baselines.art_relaxation", e.to_string());
        return None;
    }
    let factors = factors?;
    if factors.is_empty() {
        w.report("baselines.lasso_factors", "at least one factor is required");
        return None;
    }
    Some((
        art,
        LassoSelection {
            factors,
            max_iters: max_iters?,
            tolerance: tolerance?,
        },
    ))
}

fn parse_approx(w: &mut Walker, t: &Table) -> Option<ApproxSection> {
    let p = "approx";
    w.check_keys(t, p, APPROX_KEYS);
    let target_name = w.string(t, p, "target");
    let n = w.uint(t, p, "n");
    let grid_resolution = w.uint(t, p, "grid_resolution");
    let train_samples = w.uint(t, p, "train_samples");
    let target = target_name.and_then(|name| {
        let parsed = TargetFunction::from_name(&name);
        if parsed.is_none() {
            w.report(
                "approx.target",
                format!("unknown target {name:?} (expected constant:<v>, first-coordinate or sin-cos-product)"),
            );
        }
        parsed
    });
    let plans = match w.raw(t, p, "plans", true) {
        Some(Value::Array(items)) if !items.is_empty() => {
            let mut plans = Vec::with_capacity(items.len());
            let mut ok = true;
            for (i, item) in items.iter().enumerate() {
                let path = format!("approx.plans[{i}]");
                match item {
                    Value::Table(pt) => {
                        w.check_keys(pt, &path, PLAN_KEYS);
                        match w.stages(pt, &path, n) {
                            Some(s) => plans.push(s),
                            None => ok = false,
                        }
                    }
                    v => {
                        w.report(&path, format!("expected a table, found {v}"));
                        ok = false;
                    }
                }
            }
            ok.then_some(plans)
        }
        Some(_) => {
            w.report("approx.plans", "expected a non-empty array of tables");
            None
        }
        None => None,
    };
    let (target, n, grid_resolution, train_samples) = (target?, n?, grid_resolution?, train_samples?);
    if n < target.min_dim() {
        w.report("approx.n", format!("target {} needs n >= {}", target.name(), target.min_dim()));
        return None;
    }
    if grid_resolution < 2 {
        w.report("approx.grid_resolution", "must be at least 2");
        return None;
    }
    if train_samples == 0 {
        w.report("approx.train_samples", "must be at least 1");
        return None;
    }
    Some(ApproxSection {
        target,
        n,
        grid_resolution,
        train_samples,
        plans: plans?,
    })
}

//! Compressive-sensing benchmark and the empirical approximation study.
//!
//! Measurements follow `x = A y + v` with `A_ij ~ N(0, 1/n)` and
//! `v ~ N(0, δ I)` (δ is the noise variance). Every random quantity is drawn
//! from a child stream of the run seed, so a config and seed fully determine
//! the report.

use std::path::Path;
use std::time::Instant;

use crate::baselines::{art_solve, lasso_solve_traced, lipschitz_bound, ArtConfig, LassoConfig};
use crate::error::{Error, Result};
use crate::metrics::{psnr, rre, ssim_windowed, ImagePair, SSIM_WINDOW};
use crate::network::{build_cascade, validate_nonoverlap, CascadeNet, Initializer, StageSpec};
use crate::numerics::{gaussian_sample, DenseArray, SeededRng};
use crate::scalar::Scalar;
use crate::training::{train, TrainConfig, TrainHistory, TrainingData};

// Child-stream identifiers under the run seed.
const STREAM_DATASET: u64 = 1;
const STREAM_VALIDATION_NOISE: u64 = 2;
const STREAM_TEST_NOISE: u64 = 3;
const STREAM_INIT: u64 = 4;
const STREAM_SPLIT: u64 = 5;
const STREAM_APPROX_POINTS: u64 = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementModel<T> {
    pub a: DenseArray<T>,
    pub delta: f64,
    pub seed: u64,
}

impl<T: Scalar> MeasurementModel<T> {
    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn m(&self) -> usize {
        self.a.cols()
    }
}

/// Gaussian `n × m` measurement matrix with entries `N(0, 1/n)`.
pub fn make_measurement_model<T: Scalar>(
    n: usize,
    m: usize,
    delta: f64,
    seed: u64,
) -> Result<MeasurementModel<T>> {
    if n == 0 || n >= m {
        return Err(Error::param(format!(
            "compressive setting needs 1 <= n < m, got n = {n}, m = {m}"
        )));
    }
    if !(delta >= 0.0) {
        return Err(Error::param(format!("noise level must be >= 0, got {delta}")));
    }
    let std = T::lit(1.0 / (n as f64).sqrt());
    let a = gaussian_sample(&mut SeededRng::new(seed), &[n, m], T::zero(), std)?;
    Ok(MeasurementModel { a, delta, seed })
}

/// `x = A y + v` with fresh `v ~ N(0, δ I)` from `rng`.
pub fn measure<T: Scalar>(model: &MeasurementModel<T>, y: &[T], rng: &mut SeededRng) -> Result<Vec<T>> {
    let mut x = vec![T::zero(); model.n()];
    measure_into(model, y, rng, &mut x)?;
    Ok(x)
}

fn measure_into<T: Scalar>(
    model: &MeasurementModel<T>,
    y: &[T],
    rng: &mut SeededRng,
    x: &mut [T],
) -> Result<()> {
    if y.len() != model.m() || x.len() != model.n() {
        return Err(Error::shape(format!(
            "signal of length {} for a {}x{} measurement matrix",
            y.len(),
            model.n(),
            model.m()
        )));
    }
    let noise_std = T::lit(model.delta.sqrt());
    for (i, xi) in x.iter_mut().enumerate() {
        let clean = crate::numerics::dot(model.a.row(i), y);
        *xi = if model.delta > 0.0 {
            clean + noise_std * T::lit(rng.standard_normal())
        } else {
            clean
        };
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    MnistIdx { images: String, labels: String },
    SyntheticSparse { sparsity: usize },
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Provenance::MnistIdx { images, .. } => write!(f, "mnist-idx:{images}"),
            Provenance::SyntheticSparse { sparsity } => write!(f, "synthetic-sparse:s={sparsity}"),
        }
    }
}

/// Signals in `[0, 1]` with split tags and image geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalDataset<T> {
    pub signals: Vec<Vec<T>>,
    pub splits: Vec<Split>,
    pub labels: Option<Vec<u8>>,
    pub width: usize,
    pub height: usize,
    pub provenance: Provenance,
}

impl<T: Scalar> SignalDataset<T> {
    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }

    pub fn signal_len(&self) -> usize {
        self.width * self.height
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn split(&self, split: Split) -> Vec<&[T]> {
        self.indices(split)
            .into_iter()
            .map(|i| self.signals[i].as_slice())
            .collect()
    }

    /// Tags the first `train` items (after an optional seeded shuffle) as
    /// training, the next `validation` as validation, the next `test` as
    /// test, and drops the rest.
    pub fn assign_splits(
        &mut self,
        train: usize,
        validation: usize,
        test: usize,
        shuffle: Option<&mut SeededRng>,
    ) -> Result<()> {
        let total = train + validation + test;
        if total > self.len() || train == 0 || test == 0 {
            return Err(Error::param(format!(
                "split {train}/{validation}/{test} does not fit {} signals",
                self.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        if let Some(rng) = shuffle {
            rng.shuffle(&mut order);
        }
        order.truncate(total);
        let mut signals = Vec::with_capacity(total);
        let mut labels = self.labels.as_ref().map(|_| Vec::with_capacity(total));
        let mut splits = Vec::with_capacity(total);
        for (rank, &i) in order.iter().enumerate() {
            signals.push(std::mem::take(&mut self.signals[i]));
            if let (Some(out), Some(src)) = (labels.as_mut(), self.labels.as_ref()) {
                out.push(src[i]);
            }
            splits.push(if rank < train {
                Split::Train
            } else if rank < train + validation {
                Split::Validation
            } else {
                Split::Test
            });
        }
        self.signals = signals;
        self.labels = labels;
        self.splits = splits;
        Ok(())
    }
}

fn image_geometry(m: usize) -> (usize, usize) {
    let side = (m as f64).sqrt().round() as usize;
    if side * side == m {
        (side, side)
    } else {
        (m, 1)
    }
}

/// `count` signals of length `m`, each with exactly `sparsity` non-zeros at
/// uniformly random positions, values uniform on `[0.2, 1.0]`.
pub fn synth_sparse_dataset<T: Scalar>(
    m: usize,
    sparsity: usize,
    count: usize,
    rng: &mut SeededRng,
) -> Result<SignalDataset<T>> {
    if sparsity == 0 || sparsity > m {
        return Err(Error::param(format!(
            "sparsity must lie in 1..={m}, got {sparsity}"
        )));
    }
    let mut positions: Vec<usize> = (0..m).collect();
    let signals = (0..count)
        .map(|_| {
            // Partial Fisher–Yates: the first `sparsity` slots are the support.
            for i in 0..sparsity {
                let j = i + rng.below(m - i);
                positions.swap(i, j);
            }
            let mut y = vec![T::zero(); m];
            for &p in &positions[..sparsity] {
                y[p] = T::lit(rng.uniform(0.2, 1.0));
            }
            y
        })
        .collect();
    let (width, height) = image_geometry(m);
    Ok(SignalDataset {
        signals,
        splits: vec![Split::Train; count],
        labels: None,
        width,
        height,
        provenance: Provenance::SyntheticSparse { sparsity },
    })
}

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(offset as u64, "file ends inside the header"))
}

/// Parsed IDX image file: `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(
            0,
            format!("image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        ));
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let need = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::format(4, "image dimensions overflow"))?;
    let payload = &bytes[16..];
    if payload.len() < need {
        return Err(Error::format(
            bytes.len() as u64,
            format!(
                "truncated image payload: header promises {need} bytes, file has {}",
                payload.len()
            ),
        ));
    }
    Ok((count, rows, cols, &payload[..need]))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(
            0,
            format!("label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        ));
    }
    let count = be_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated label payload: header promises {count} bytes, file has {}", payload.len()),
        ));
    }
    Ok(&payload[..count])
}

/// Loads MNIST images (scaled to `[0, 1]`) and labels; `limit` caps the
/// number of samples read. Every sample starts in the training split.
pub fn load_mnist_idx<T: Scalar>(
    images: &Path,
    labels: &Path,
    limit: Option<usize>,
) -> Result<SignalDataset<T>> {
    let image_bytes = std::fs::read(images)?;
    let label_bytes = std::fs::read(labels)?;
    let (count, rows, cols, pixels) =
        parse_idx_images(&image_bytes).map_err(|e| e.context(&images.display().to_string()))?;
    let label_data =
        parse_idx_labels(&label_bytes).map_err(|e| e.context(&labels.display().to_string()))?;
    if label_data.len() != count {
        return Err(Error::format(
            4,
            format!("{count} images but {} labels", label_data.len()),
        ));
    }
    let take = limit.map_or(count, |l| l.min(count));
    let size = rows * cols;
    let scale = T::lit(1.0 / 255.0);
    let signals = pixels
        .chunks_exact(size.max(1))
        .take(take)
        .map(|img| img.iter().map(|&p| T::lit(p as f64) * scale).collect())
        .collect();
    Ok(SignalDataset {
        signals,
        splits: vec![Split::Train; take],
        labels: Some(label_data[..take].to_vec()),
        width: cols,
        height: rows,
        provenance: Provenance::MnistIdx {
            images: images.display().to_string(),
            labels: labels.display().to_string(),
        },
    })
}

/// Measured training pairs, with fresh noise on every draw.
struct MeasuredSignals<'a, T> {
    model: &'a MeasurementModel<T>,
    signals: Vec<&'a [T]>,
}

impl<T: Scalar> TrainingData<T> for MeasuredSignals<'_, T> {
    fn len(&self) -> usize {
        self.signals.len()
    }

    fn input_len(&self) -> usize {
        self.model.n()
    }

    fn target_len(&self) -> usize {
        self.model.m()
    }

    fn fill(&self, index: usize, rng: &mut SeededRng, input: &mut [T], target: &mut [T]) {
        let y = self.signals[index];
        target.copy_from_slice(y);
        measure_into(self.model, y, rng, input).expect("shapes checked at construction");
    }
}

/// Lasso with λ chosen per measurement as `factor · ‖Aᵀx‖∞`, the factor
/// picked from `factors` by mean validation RRE.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoSelection {
    pub factors: Vec<f64>,
    pub max_iters: usize,
    pub tolerance: f64,
}

impl Default for LassoSelection {
    fn default() -> Self {
        Self {
            factors: vec![0.001, 0.01, 0.05, 0.1],
            max_iters: 500,
            tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsMethods {
    pub cascade: Vec<StageSpec>,
    pub art: ArtConfig,
    pub lasso: LassoSelection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Cnn,
    Lasso,
    Art,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Cnn, Method::Lasso, Method::Art];

    pub fn name(self) -> &'static str {
        match self {
            Method::Cnn => "cnn",
            Method::Lasso => "lasso",
            Method::Art => "art",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageScores {
    pub rre: f64,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageRow {
    pub item: usize,
    pub method: Method,
    pub scores: ImageScores,
}

/// Per-method means; infinite PSNR values are left out of the PSNR mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub count: usize,
    pub rre: f64,
    pub psnr: f64,
    pub psnr_finite: usize,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<ImageRow>,
    pub summaries: Vec<MethodSummary>,
    /// `key = value` echo of the configuration that produced the report.
    pub config: Vec<(String, String)>,
    pub seed: u64,
    pub wall_seconds: f64,
}

pub const REPORT_HEADER: &str = "item,method,rre,psnr,ssim";

fn fmt_metric(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".to_string()
    } else {
        v.to_string()
    }
}

impl ExperimentReport {
    pub fn from_rows(rows: Vec<ImageRow>, config: Vec<(String, String)>, seed: u64) -> Self {
        let summaries = summarize(&rows);
        Self {
            rows,
            summaries,
            config,
            seed,
            wall_seconds: 0.0,
        }
    }

    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    /// Per-image rows; byte-stable for a fixed config and seed.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.item,
                r.method.name(),
                fmt_metric(r.scores.rre),
                fmt_metric(r.scores.psnr),
                fmt_metric(r.scores.ssim)
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == REPORT_HEADER => {}
            other => {
                return Err(Error::format(0, format!("expected header {REPORT_HEADER:?}, found {other:?}")))
            }
        }
        let mut rows = Vec::new();
        let mut offset = REPORT_HEADER.len() as u64 + 1;
        for line in lines {
            let bad = |what: &str| Error::format(offset, format!("{what} in row {line:?}"));
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != 5 {
                return Err(bad("expected 5 fields"));
            }
            let num = |s: &str| -> Result<f64> {
                if s == "inf" {
                    Ok(f64::INFINITY)
                } else {
                    s.parse().map_err(|_| bad("bad number"))
                }
            };
            rows.push(ImageRow {
                item: fields[0].parse().map_err(|_| bad("bad item index"))?,
                method: Method::from_name(fields[1]).ok_or_else(|| bad("unknown method"))?,
                scores: ImageScores {
                    rre: num(fields[2])?,
                    psnr: num(fields[3])?,
                    ssim: num(fields[4])?,
                },
            });
            offset += line.len() as u64 + 1;
        }
        Ok(Self::from_rows(rows, Vec::new(), 0))
    }

    /// Structured-text summary (TOML-compatible).
    pub fn summary_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("seed = {}\n", self.seed));
        if !self.config.is_empty() {
            out.push_str("\n[config]\n");
            for (k, v) in &self.config {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        for s in &self.summaries {
            out.push_str(&format!(
                "\n[methods.{}]\ncount = {}\nrre = {}\npsnr = {}\npsnr_finite = {}\nssim = {}\n",
                s.method.name(),
                s.count,
                s.rre,
                if s.psnr.is_finite() { s.psnr.to_string() } else { "\"inf\"".into() },
                s.psnr_finite,
                s.ssim
            ));
        }
        out
    }
}

/// Arithmetic means per method, in [`Method::ALL`] order.
pub fn summarize(rows: &[ImageRow]) -> Vec<MethodSummary> {
    Method::ALL
        .into_iter()
        .filter_map(|method| {
            let mine: Vec<&ImageRow> = rows.iter().filter(|r| r.method == method).collect();
            if mine.is_empty() {
                return None;
            }
            let n = mine.len() as f64;
            let finite: Vec<f64> = mine
                .iter()
                .map(|r| r.scores.psnr)
                .filter(|p| p.is_finite())
                .collect();
            Some(MethodSummary {
                method,
                count: mine.len(),
                rre: mine.iter().map(|r| r.scores.rre).sum::<f64>() / n,
                psnr: if finite.is_empty() {
                    f64::INFINITY
                } else {
                    finite.iter().sum::<f64>() / finite.len() as f64
                },
                psnr_finite: finite.len(),
                ssim: mine.iter().map(|r| r.scores.ssim).sum::<f64>() / n,
            })
        })
        .collect()
}

/// Per-image metrics. Images narrower or shorter than the SSIM window use a
/// window clipped to the image.
fn score<T: Scalar>(recovered: &[T], truth: &[T], width: usize, height: usize) -> Result<ImageScores> {
    let pair = ImagePair::new(recovered, truth, width, height)?;
    let ssim_value = ssim_windowed(&pair, width.min(SSIM_WINDOW), height.min(SSIM_WINDOW))?;
    Ok(ImageScores {
        rre: rre(&pair)?.to_f64_exact(),
        psnr: psnr(&pair).to_f64_exact(),
        ssim: ssim_value.to_f64_exact(),
    })
}

fn measure_all<T: Scalar>(
    model: &MeasurementModel<T>,
    signals: &[&[T]],
    rng: &mut SeededRng,
) -> Result<Vec<Vec<T>>> {
    signals.iter().map(|y| measure(model, y, rng)).collect()
}

fn mean_rre<T: Scalar>(estimates: &[Vec<T>], truths: &[&[T]]) -> Result<f64> {
    let mut total = 0.0;
    for (e, t) in estimates.iter().zip(truths) {
        total += rre(&ImagePair::new(e, t, t.len(), 1)?)?.to_f64_exact();
    }
    Ok(total / truths.len() as f64)
}

/// Lasso estimate with `λ = factor · ‖Aᵀx‖∞`.
pub fn lasso_relative<T: Scalar>(
    model: &MeasurementModel<T>,
    x: &[T],
    factor: f64,
    selection: &LassoSelection,
    lipschitz: T,
) -> Result<Vec<T>> {
    let scale = model
        .a
        .matvec_t(x)?
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs().to_f64_exact()));
    let cfg = LassoConfig {
        lambda: factor * scale,
        max_iters: selection.max_iters,
        tolerance: selection.tolerance,
    };
    lasso_solve_traced(&model.a, x, &cfg, lipschitz).map(|s| s.estimate)
}

/// Picks the Lasso factor with the lowest mean RRE on the given pairs
/// (first one wins ties).
pub fn select_lasso_factor<T: Scalar>(
    model: &MeasurementModel<T>,
    measurements: &[Vec<T>],
    truths: &[&[T]],
    selection: &LassoSelection,
) -> Result<f64> {
    if selection.factors.is_empty() {
        return Err(Error::param("Lasso factor grid is empty"));
    }
    if measurements.is_empty() {
        return Ok(selection.factors[0]);
    }
    let l = lipschitz_bound(&model.a)?;
    let mut best = (f64::INFINITY, selection.factors[0]);
    for &f in &selection.factors {
        let est = measurements
            .iter()
            .map(|x| lasso_relative(model, x, f, selection, l))
            .collect::<Result<Vec<_>>>()?;
        let score = mean_rre(&est, truths)?;
        if score < best.0 {
            best = (score, f);
        }
    }
    Ok(best.1)
}

/// Fixed measurements of the validation and test splits.
pub struct HeldOut<'a, T> {
    pub validation: Vec<&'a [T]>,
    pub validation_x: Vec<Vec<T>>,
    pub test: Vec<&'a [T]>,
    pub test_x: Vec<Vec<T>>,
}

/// Measures the validation and test splits once, from dedicated streams.
pub fn held_out_measurements<'a, T: Scalar>(
    model: &MeasurementModel<T>,
    dataset: &'a SignalDataset<T>,
    seed: u64,
) -> Result<HeldOut<'a, T>> {
    let root = SeededRng::new(seed);
    let validation = dataset.split(Split::Validation);
    let test = dataset.split(Split::Test);
    let validation_x = measure_all(model, &validation, &mut root.child(STREAM_VALIDATION_NOISE))?;
    let test_x = measure_all(model, &test, &mut root.child(STREAM_TEST_NOISE))?;
    Ok(HeldOut {
        validation,
        validation_x,
        test,
        test_x,
    })
}

/// Trained cascade with its history.
pub struct TrainedCascade<T> {
    pub net: CascadeNet<T>,
    pub history: TrainHistory,
}

/// Builds (Glorot, from the run seed) and trains a cascade on measured
/// training signals; validation RRE is recorded every epoch.
pub fn train_cs_cascade<T: Scalar>(
    model: &MeasurementModel<T>,
    dataset: &SignalDataset<T>,
    held_out: &HeldOut<'_, T>,
    stages: &[StageSpec],
    train_cfg: &TrainConfig,
) -> Result<TrainedCascade<T>> {
    let mut init_rng = SeededRng::new(train_cfg.seed).child(STREAM_INIT);
    let mut net = build_cascade(model.n(), stages, model.m(), Initializer::Glorot, &mut init_rng)?;
    let data = MeasuredSignals {
        model,
        signals: dataset.split(Split::Train),
    };
    let validator = |net: &CascadeNet<T>| -> Result<f64> {
        if held_out.validation.is_empty() {
            return Ok(f64::NAN);
        }
        let est = held_out
            .validation_x
            .iter()
            .map(|x| net.forward(x))
            .collect::<Result<Vec<_>>>()?;
        mean_rre(&est, &held_out.validation)
    };
    let history = train(&mut net, &data, train_cfg, Some(&validator))
        .map_err(|e| e.context("training the cascade"))?;
    Ok(TrainedCascade { net, history })
}

pub struct CsOutcome<T> {
    pub report: ExperimentReport,
    pub trained: TrainedCascade<T>,
    pub lasso_factor: f64,
}

/// Trains the cascade, then scores cascade, Lasso and ART on the same
/// test measurements.
pub fn run_cs_experiment<T: Scalar>(
    model: &MeasurementModel<T>,
    dataset: &SignalDataset<T>,
    methods: &CsMethods,
    train_cfg: &TrainConfig,
) -> Result<CsOutcome<T>> {
    let started = Instant::now();
    if dataset.signal_len() != model.m() {
        return Err(Error::shape(format!(
            "signals of length {} for a measurement model with m = {}",
            dataset.signal_len(),
            model.m()
        )));
    }
    let ks: Vec<usize> = methods.cascade.iter().map(|s| s.k).collect();
    validate_nonoverlap(model.n(), &ks).map_err(Error::Violation)?;
    methods.art.validate()?;

    let held_out = held_out_measurements(model, dataset, train_cfg.seed)?;
    let trained = train_cs_cascade(model, dataset, &held_out, &methods.cascade, train_cfg)?;
    let lasso_factor =
        select_lasso_factor(model, &held_out.validation_x, &held_out.validation, &methods.lasso)
            .map_err(|e| e.context("selecting the Lasso weight"))?;
    let lipschitz = lipschitz_bound(&model.a)?;

    let (w, h) = (dataset.width, dataset.height);
    let mut rows = Vec::with_capacity(3 * held_out.test.len());
    let zeros = vec![T::zero(); model.m()];
    for (item, (truth, x)) in held_out.test.iter().zip(&held_out.test_x).enumerate() {
        let cnn = trained.net.forward(x)?;
        let lasso = lasso_relative(model, x, lasso_factor, &methods.lasso, lipschitz)?;
        let art = art_solve(&model.a, x, &methods.art, &zeros)?;
        for (method, est) in [(Method::Cnn, cnn), (Method::Lasso, lasso), (Method::Art, art)] {
            rows.push(ImageRow {
                item,
                method,
                scores: score(&est, truth, w, h)?,
            });
        }
    }
    let config = vec![
        ("provenance".into(), format!("\"{}\"", dataset.provenance)),
        ("n".into(), model.n().to_string()),
        ("m".into(), model.m().to_string()),
        ("delta".into(), model.delta.to_string()),
        ("kernel_lengths".into(), format!("{:?}", ks)),
        (
            "kernel_counts".into(),
            format!("{:?}", methods.cascade.iter().map(|s| s.c).collect::<Vec<_>>()),
        ),
        ("alpha".into(), train_cfg.loss.alpha.to_string()),
        ("epochs".into(), train_cfg.epochs.to_string()),
        ("batch_size".into(), train_cfg.batch_size.to_string()),
        ("art_sweeps".into(), methods.art.sweeps.to_string()),
        ("lasso_factor".into(), lasso_factor.to_string()),
    ];
    let mut report = ExperimentReport::from_rows(rows, config, train_cfg.seed);
    report.wall_seconds = started.elapsed().as_secs_f64();
    Ok(CsOutcome {
        report,
        trained,
        lasso_factor,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationRow {
    pub alpha: f64,
    pub scores: ImageScores,
}

/// One cascade training run per α (all else equal), scored on the test
/// split. Rows come back sorted by α.
pub fn loss_ablation<T: Scalar>(
    model: &MeasurementModel<T>,
    dataset: &SignalDataset<T>,
    stages: &[StageSpec],
    base: &TrainConfig,
    alphas: &[f64],
) -> Result<Vec<AblationRow>> {
    if let Some(a) = alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::param(format!("alpha {a} outside [0, 1]")));
    }
    let ks: Vec<usize> = stages.iter().map(|s| s.k).collect();
    validate_nonoverlap(model.n(), &ks).map_err(Error::Violation)?;
    let mut sorted = alphas.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    sorted.dedup();

    let held_out = held_out_measurements(model, dataset, base.seed)?;
    let (w, h) = (dataset.width, dataset.height);
    let mut rows = Vec::with_capacity(sorted.len());
    for alpha in sorted {
        let mut cfg = *base;
        cfg.loss.alpha = alpha;
        let trained = train_cs_cascade(model, dataset, &held_out, stages, &cfg)
            .map_err(|e| e.context(&format!("alpha = {alpha}")))?;
        let mut acc = [0.0f64; 3];
        let mut finite_psnr = 0usize;
        for (truth, x) in held_out.test.iter().zip(&held_out.test_x) {
            let s = score(&trained.net.forward(x)?, truth, w, h)?;
            acc[0] += s.rre;
            if s.psnr.is_finite() {
                acc[1] += s.psnr;
                finite_psnr += 1;
            }
            acc[2] += s.ssim;
        }
        let count = held_out.test.len() as f64;
        rows.push(AblationRow {
            alpha,
            scores: ImageScores {
                rre: acc[0] / count,
                psnr: if finite_psnr > 0 { acc[1] / finite_psnr as f64 } else { f64::INFINITY },
                ssim: acc[2] / count,
            },
        });
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("alpha,rre,psnr,ssim\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.alpha,
            fmt_metric(r.scores.rre),
            fmt_metric(r.scores.psnr),
            fmt_metric(r.scores.ssim)
        ));
    }
    out
}

/// Named continuous targets on `[0, 1]ⁿ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetFunction {
    Constant(f64),
    /// `f(x) = x₀`
    FirstCoordinate,
    /// `f(x) = sin(πx₀)·cos(πx₁) + 0.2·x₂·x₃` (needs `n ≥ 4`)
    SinCosProduct,
}

impl TargetFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        use std::f64::consts::PI;
        match *self {
            TargetFunction::Constant(c) => c,
            TargetFunction::FirstCoordinate => x[0],
            TargetFunction::SinCosProduct => {
                (PI * x[0]).sin() * (PI * x[1]).cos() + 0.2 * x[2] * x[3]
            }
        }
    }

    pub fn min_dim(&self) -> usize {
        match self {
            TargetFunction::Constant(_) => 1,
            TargetFunction::FirstCoordinate => 1,
            TargetFunction::SinCosProduct => 4,
        }
    }

    pub fn name(&self) -> String {
        match self {
            TargetFunction::Constant(c) => format!("constant:{c}"),
            TargetFunction::FirstCoordinate => "first-coordinate".into(),
            TargetFunction::SinCosProduct => "sin-cos-product".into(),
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "first-coordinate" => Some(TargetFunction::FirstCoordinate),
            "sin-cos-product" => Some(TargetFunction::SinCosProduct),
            _ => s
                .strip_prefix("constant:")
                .and_then(|v| v.parse().ok())
                .map(TargetFunction::Constant),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApproxStudy {
    pub target: TargetFunction,
    pub n: usize,
    pub plans: Vec<Vec<StageSpec>>,
    /// Points per axis of the held-out grid (includes both endpoints).
    pub grid_resolution: usize,
    pub train_samples: usize,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApproxRow {
    pub plan: Vec<StageSpec>,
    pub parameters: usize,
    pub sup_error: f64,
    pub rms_error: f64,
    pub final_loss: f64,
}

/// Uniform grid on `[0, 1]ⁿ` with `resolution` points per axis.
pub fn uniform_grid(n: usize, resolution: usize) -> Vec<Vec<f64>> {
    let total = resolution.pow(n as u32);
    let step = if resolution > 1 { 1.0 / (resolution - 1) as f64 } else { 0.0 };
    (0..total)
        .map(|mut idx| {
            (0..n)
                .map(|_| {
                    let c = idx % resolution;
                    idx /= resolution;
                    c as f64 * step
                })
                .collect()
        })
        .collect()
}

/// Trains one single-output cascade per plan on uniform samples of
/// `[0, 1]ⁿ` and reports the sup-norm error on a held-out uniform grid.
/// Every plan is validated before any training starts.
pub fn run_approximation_study(study: &ApproxStudy) -> Result<Vec<ApproxRow>> {
    if study.n < study.target.min_dim() {
        return Err(Error::param(format!(
            "target {} needs n >= {}",
            study.target.name(),
            study.target.min_dim()
        )));
    }
    if study.plans.is_empty() || study.grid_resolution < 2 || study.train_samples == 0 {
        return Err(Error::param(
            "approximation study needs plans, grid resolution >= 2 and training samples",
        ));
    }
    for plan in &study.plans {
        let ks: Vec<usize> = plan.iter().map(|s| s.k).collect();
        validate_nonoverlap(study.n, &ks).map_err(Error::Violation)?;
        for s in plan {
            StageSpec::new(s.k, s.c)?;
        }
    }
    let root = SeededRng::new(study.train.seed);
    let mut point_rng = root.child(STREAM_APPROX_POINTS);
    let inputs: Vec<Vec<f64>> = (0..study.train_samples)
        .map(|_| (0..study.n).map(|_| point_rng.next_unit()).collect())
        .collect();
    let targets: Vec<Vec<f64>> = inputs.iter().map(|x| vec![study.target.eval(x)]).collect();
    let data = crate::training::PairDataset::new(inputs, targets)?;
    let grid = uniform_grid(study.n, study.grid_resolution);

    let mut rows = Vec::with_capacity(study.plans.len());
    for plan in &study.plans {
        let mut net: CascadeNet<f64> =
            build_cascade(study.n, plan, 1, Initializer::Glorot, &mut root.child(STREAM_INIT))?;
        let history = train(&mut net, &data, &study.train, None)?;
        let mut sup = 0.0f64;
        let mut sq = 0.0f64;
        for x in &grid {
            let err = (net.forward(x)?[0] - study.target.eval(x)).abs();
            sup = sup.max(err);
            sq += err * err;
        }
        rows.push(ApproxRow {
            plan: plan.clone(),
            parameters: net.parameter_count(),
            sup_error: sup,
            rms_error: (sq / grid.len() as f64).sqrt(),
            final_loss: history.records.last().map_or(f64::NAN, |r| r.train_loss),
        });
    }
    Ok(rows)
}

pub fn approx_csv(rows: &[ApproxRow]) -> String {
    let mut out = String::from("kernel_lengths,kernel_counts,parameters,sup_error,rms_error,final_loss\n");
    for r in rows {
        let ks: Vec<String> = r.plan.iter().map(|s| s.k.to_string()).collect();
        let cs: Vec<String> = r.plan.iter().map(|s| s.c.to_string()).collect();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            ks.join("x"),
            cs.join("x"),
            r.parameters,
            r.sup_error,
            r.rms_error,
            r.final_loss
        ));
    }
    out
}

/// Splits a synthetic dataset with a seeded shuffle.
pub fn split_rng(seed: u64) -> SeededRng {
    SeededRng::new(seed).child(STREAM_SPLIT)
}

/// Generator used for synthetic signal draws under `seed`.
pub fn dataset_rng(seed: u64) -> SeededRng {
    SeededRng::new(seed).child(STREAM_DATASET)
}

//! Combined MSE/L1 loss, Glorot initialization, AdamW with a step-drop
//! learning rate, and the deterministic mini-batch loop.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::{CascadeGradients, CascadeNet};
use crate::numerics::{uniform_sample, DenseArray, SeededRng};
use crate::scalar::Scalar;

/// Mixing weight between the MSE term (`1 − alpha`) and the L1 term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
}

impl LossConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::param(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        Ok(Self { alpha })
    }
}

fn check_batch<T: Scalar>(pred: &DenseArray<T>, target: &DenseArray<T>, alpha: T) -> Result<()> {
    if pred.shape() != target.shape() || pred.rank() != 2 {
        return Err(Error::shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if !(alpha >= T::zero() && alpha <= T::one()) {
        return Err(Error::param(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    Ok(())
}

/// `(1−α)/N Σ mean((p−t)²) + α/N Σ mean(|p−t|)` over an `N × m` batch.
pub fn loss<T: Scalar>(pred: &DenseArray<T>, target: &DenseArray<T>, alpha: T) -> Result<T> {
    check_batch(pred, target, alpha)?;
    let (n, m) = (T::of_usize(pred.rows()), T::of_usize(pred.cols()));
    let mut mse = T::zero();
    let mut l1 = T::zero();
    for i in 0..pred.rows() {
        let (mut sq, mut ab) = (T::zero(), T::zero());
        for (&p, &t) in pred.row(i).iter().zip(target.row(i)) {
            let d = p - t;
            sq += d * d;
            ab += d.abs();
        }
        mse += sq / m;
        l1 += ab / m;
    }
    Ok((T::one() - alpha) * (mse / n) + alpha * (l1 / n))
}

/// Subgradient sign with `sign(0) = 0`.
#[inline]
fn sign0<T: Scalar>(d: T) -> T {
    if d > T::zero() {
        T::one()
    } else if d < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Derivative of one sample's contribution to [`loss`] for batch size `n`.
pub fn sample_loss_gradient<T: Scalar>(pred: &[T], target: &[T], alpha: T, n: usize) -> Vec<T> {
    let scale = T::one() / (T::of_usize(n) * T::of_usize(pred.len()));
    let two = T::lit(2.0);
    pred.iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p - t;
            scale * ((T::one() - alpha) * two * d + alpha * sign0(d))
        })
        .collect()
}

/// Analytic gradient of [`loss`] with respect to the predictions.
pub fn loss_gradient<T: Scalar>(
    pred: &DenseArray<T>,
    target: &DenseArray<T>,
    alpha: T,
) -> Result<DenseArray<T>> {
    check_batch(pred, target, alpha)?;
    let n = pred.rows();
    let data = (0..n)
        .flat_map(|i| sample_loss_gradient(pred.row(i), target.row(i), alpha, n))
        .collect();
    DenseArray::new(pred.shape().to_vec(), data)
}

/// Half-width of the Glorot uniform interval.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Glorot-uniform draws on `[−L, L]`, `L = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_init<T: Scalar>(
    fan_in: usize,
    fan_out: usize,
    shape: &[usize],
    rng: &mut SeededRng,
) -> Result<DenseArray<T>> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::param("Glorot fans must be at least 1"));
    }
    let l = glorot_bound(fan_in, fan_out);
    uniform_sample(rng, shape, T::from_f64_lossy(-l), T::from_f64_lossy(l))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.003,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.weight_decay >= 0.0;
        if !ok {
            return Err(Error::param(format!("invalid AdamW hyperparameters {self:?}")));
        }
        Ok(())
    }
}

/// First/second moment estimates for every parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub config: AdamWConfig,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(config: AdamWConfig, group_sizes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            first: group_sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            second: group_sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn for_net(config: AdamWConfig, net: &CascadeNet<T>) -> Self {
        let sizes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
        Self::new(config, &sizes)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One decoupled-weight-decay Adam update:
/// `θ ← θ − lr·m̂/(√v̂ + ε) − lr·λ·θ` with bias-corrected moments.
///
/// All gradients are checked for finiteness before anything is modified.
pub fn adamw_step<T: Scalar>(
    params: &mut [&mut [T]],
    grads: &[&[T]],
    state: &mut OptimizerState<T>,
    lr: T,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::shape(format!(
            "{} parameter groups, {} gradient groups, {} moment groups",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.first[i].len() {
            return Err(Error::shape(format!(
                "group {i}: {} parameters, {} gradients, {} moments",
                p.len(),
                g.len(),
                state.first[i].len()
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient in parameter group {i}; step aborted"
            )));
        }
    }
    state.step += 1;
    let c = state.config;
    let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
    let eps = T::lit(c.epsilon);
    let decay = lr * T::lit(c.weight_decay);
    let t = state.step as i32;
    let corr1 = T::one() - b1.powi(t);
    let corr2 = T::one() - b2.powi(t);
    for (gi, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m1, m2) = (&mut state.first[gi], &mut state.second[gi]);
        for j in 0..p.len() {
            let gj = g[j];
            m1[j] = b1 * m1[j] + (T::one() - b1) * gj;
            m2[j] = b2 * m2[j] + (T::one() - b2) * gj * gj;
            let m_hat = m1[j] / corr1;
            let v_hat = m2[j] / corr2;
            let old = p[j];
            p[j] = old - lr * m_hat / (v_hat.sqrt() + eps) - decay * old;
        }
    }
    Ok(())
}

/// Multiply the learning rate by `factor` every `period` epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleConfig {
    pub factor: f64,
    pub period: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            factor: 0.7,
            period: 70,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 0.0 && self.factor <= 1.0) || self.period == 0 {
            return Err(Error::param(format!("invalid schedule {self:?}")));
        }
        Ok(())
    }
}

/// `base · factor^⌊epoch / period⌋`.
pub fn lr_at(epoch: usize, schedule: &ScheduleConfig, base: f64) -> f64 {
    base * schedule.factor.powi((epoch / schedule.period) as i32)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub optimizer: AdamWConfig,
    pub schedule: ScheduleConfig,
}

impl TrainConfig {
    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::param("epochs must be at least 1"));
        }
        if self.batch_size == 0 || self.batch_size > dataset_len {
            return Err(Error::param(format!(
                "batch size {} must lie in 1..={dataset_len}",
                self.batch_size
            )));
        }
        LossConfig::new(self.loss.alpha)?;
        self.optimizer.validate()?;
        self.schedule.validate()
    }
}

/// Source of `(input, target)` training pairs.
///
/// `fill` receives the epoch generator so implementations can draw fresh
/// randomness (for example measurement noise) per epoch; the loop calls it
/// sequentially in batch order.
pub trait TrainingData<T: Scalar>: Sync {
    fn len(&self) -> usize;
    fn input_len(&self) -> usize;
    fn target_len(&self) -> usize;
    fn fill(&self, index: usize, rng: &mut SeededRng, input: &mut [T], target: &mut [T]);

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fixed in-memory pairs.
#[derive(Debug, Clone)]
pub struct PairDataset<T> {
    pub inputs: Vec<Vec<T>>,
    pub targets: Vec<Vec<T>>,
}

impl<T: Scalar> PairDataset<T> {
    pub fn new(inputs: Vec<Vec<T>>, targets: Vec<Vec<T>>) -> Result<Self> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(Error::shape(format!(
                "{} inputs and {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        let (ni, nt) = (inputs[0].len(), targets[0].len());
        if inputs.iter().any(|x| x.len() != ni) || targets.iter().any(|y| y.len() != nt) {
            return Err(Error::shape("pairs of unequal length"));
        }
        Ok(Self { inputs, targets })
    }
}

impl<T: Scalar> TrainingData<T> for PairDataset<T> {
    fn len(&self) -> usize {
        self.inputs.len()
    }

    fn input_len(&self) -> usize {
        self.inputs[0].len()
    }

    fn target_len(&self) -> usize {
        self.targets[0].len()
    }

    fn fill(&self, index: usize, _rng: &mut SeededRng, input: &mut [T], target: &mut [T]) {
        input.copy_from_slice(&self.inputs[index]);
        target.copy_from_slice(&self.targets[index]);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_rre: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub const HEADER: &'static str = "epoch,lr,train_loss,val_rre,wall_seconds";
    pub const HEADER_NO_TIMING: &'static str = "epoch,lr,train_loss,val_rre";

    /// CSV with the columns of [`Self::HEADER`].
    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{:.3}\n",
                r.epoch,
                r.lr,
                r.train_loss,
                fmt_opt(r.val_rre),
                r.wall_seconds
            ));
        }
        out
    }

    /// Same rows without wall-clock timing, byte-stable across reruns.
    pub fn to_csv_deterministic(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER_NO_TIMING);
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.epoch,
                r.lr,
                r.train_loss,
                fmt_opt(r.val_rre)
            ));
        }
        out
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Samples per gradient work unit; fixed so the reduction order does not
/// depend on the thread count.
const GRAD_CHUNK: usize = 16;

/// Validation hook: returns a relative restoration error for the network.
pub type Validator<'a, T> = &'a (dyn Fn(&CascadeNet<T>) -> Result<f64> + Sync);

/// Mini-batch AdamW training. Shuffling and sample generation draw from
/// `SeededRng::new(seed).child(epoch)`; gradients are reduced in a fixed
/// order, so a given config and seed always produce the same parameters.
pub fn train<T: Scalar>(
    net: &mut CascadeNet<T>,
    data: &dyn TrainingData<T>,
    config: &TrainConfig,
    validator: Option<Validator<'_, T>>,
) -> Result<TrainHistory> {
    if data.is_empty() {
        return Err(Error::param("training set is empty"));
    }
    if data.input_len() != net.n() || data.target_len() != net.m() {
        return Err(Error::shape(format!(
            "samples map {} -> {}, network maps {} -> {}",
            data.input_len(),
            data.target_len(),
            net.n(),
            net.m()
        )));
    }
    config.validate(data.len())?;

    let started = Instant::now();
    let root = SeededRng::new(config.seed);
    let alpha = T::lit(config.loss.alpha);
    let mut state = OptimizerState::for_net(config.optimizer, net);
    let mut history = TrainHistory::default();
    let (n_in, n_out) = (net.n(), net.m());
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..config.epochs {
        let lr = lr_at(epoch, &config.schedule, config.optimizer.learning_rate);
        let mut rng = root.child(epoch as u64);
        order.sort_unstable();
        rng.shuffle(&mut order);

        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut inputs = vec![T::zero(); batch.len() * n_in];
            let mut targets = vec![T::zero(); batch.len() * n_out];
            for (slot, &idx) in batch.iter().enumerate() {
                data.fill(
                    idx,
                    &mut rng,
                    &mut inputs[slot * n_in..(slot + 1) * n_in],
                    &mut targets[slot * n_out..(slot + 1) * n_out],
                );
            }
            let (grads, batch_loss) = batch_gradients(net, &inputs, &targets, alpha)?;
            if !batch_loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training loss at epoch {epoch}; aborting"
                )));
            }
            loss_sum += batch_loss * batch.len() as f64;
            let grad_slices = grads.slices();
            let mut params = net.params_mut();
            adamw_step(&mut params, &grad_slices, &mut state, T::lit(lr))
                .map_err(|e| e.context(&format!("epoch {epoch}")))?;
        }
        let val_rre = match validator {
            Some(v) => Some(v(net)?),
            None => None,
        };
        history.records.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / data.len() as f64,
            val_rre,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(history)
}

/// Summed gradients and mean loss over a batch laid out row-major.
fn batch_gradients<T: Scalar>(
    net: &CascadeNet<T>,
    inputs: &[T],
    targets: &[T],
    alpha: T,
) -> Result<(CascadeGradients<T>, f64)> {
    let (n_in, n_out) = (net.n(), net.m());
    let count = inputs.len() / n_in;
    let one_m = T::one() / T::of_usize(n_out);
    let partials: Vec<Result<(CascadeGradients<T>, T)>> = (0..count)
        .collect::<Vec<_>>()
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut acc = CascadeGradients::zeros_like(net);
            let mut loss = T::zero();
            for &s in chunk {
                let x = &inputs[s * n_in..(s + 1) * n_in];
                let y = &targets[s * n_out..(s + 1) * n_out];
                let (pred, trace) = net.forward_traced(x)?;
                let (mut sq, mut ab) = (T::zero(), T::zero());
                for (&p, &t) in pred.iter().zip(y) {
                    let d = p - t;
                    sq += d * d;
                    ab += d.abs();
                }
                loss += (T::one() - alpha) * sq * one_m + alpha * ab * one_m;
                let g = sample_loss_gradient(&pred, y, alpha, count);
                net.backward_accumulate(&trace, &g, &mut acc)?;
            }
            Ok((acc, loss))
        })
        .collect();
    let mut total = CascadeGradients::zeros_like(net);
    let mut loss = T::zero();
    for part in partials {
        let (g, l) = part?;
        total.accumulate(&g);
        loss += l;
    }
    Ok((total, (loss / T::of_usize(count)).to_f64_exact()))
}

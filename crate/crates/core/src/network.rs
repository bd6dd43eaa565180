//! Cascades of non-overlapping stages with a multi-output head.
//!
//! A cascade `G = g_M ∘ ⋯ ∘ g_1` takes a length-`n` input. Every stage but
//! the last convolves with `c_i` kernels of length `k_i`, applies the
//! logistic, and collapses the `c_i` channels with its β-vector, so stage
//! `i + 1` sees a plain vector of length `n / (k_1 ⋯ k_i)`. The last stage
//! leaves exactly one block; its `c_M` activated features feed an unbiased
//! `m × c_M` head whose rows are the per-output β-vectors.

use crate::error::{Error, Result, StructureViolation};
use crate::layers::{
    activated_forward, activation_backward_into, beta_project, stage_backward_into, BetaVector,
    ConvKernelBank, LayerCache, StageGradients,
};
use crate::numerics::{dot, DenseArray, SeededRng};
use crate::scalar::Scalar;
use crate::training::glorot_init;

/// Kernel length and kernel count of one stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSpec {
    pub k: usize,
    pub c: usize,
}

impl StageSpec {
    pub fn new(k: usize, c: usize) -> Result<Self> {
        if k == 0 || c == 0 {
            return Err(Error::param(format!(
                "stage needs k >= 1 and c >= 1, got k = {k}, c = {c}"
            )));
        }
        Ok(Self { k, c })
    }
}

/// Layer list of an overlapping network: `(k_i, s_i)` per layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapSpec {
    pub n: usize,
    pub layers: Vec<(usize, usize)>,
}

pub const NONOVERLAP_RULE: &str = "n = k_1 * k_2 * ... * k_M";
pub const OVERLAP_RULE: &str =
    "n - sum_i (k_i * s_0 * ... * s_(i-1) - s_1 * ... * s_i) = s_1 * ... * s_M (s_0 = 1)";

/// Checks `n = ∏ k_i`.
pub fn validate_nonoverlap(n: usize, ks: &[usize]) -> Result<(), StructureViolation> {
    let product = ks
        .iter()
        .try_fold(1i128, |acc, &k| acc.checked_mul(k as i128))
        .unwrap_or(i128::MAX);
    if ks.is_empty() || ks.contains(&0) || product != n as i128 {
        return Err(StructureViolation {
            n,
            derived: product,
            layers: format!("{ks:?}"),
            rule: NONOVERLAP_RULE,
        });
    }
    Ok(())
}

/// Both sides of the overlapping-structure identity, with `s_0 = 1`:
/// `(n − Σ_i (k_i ∏_{j<i} s_j − ∏_{j≤i} s_j), ∏_j s_j)`.
///
/// No domain checks; with `s_i = k_i` every summand cancels and the identity
/// reduces to `n = ∏ k_i`.
pub fn overlap_identity(n: usize, layers: &[(usize, usize)]) -> (i128, i128) {
    let mut lhs = n as i128;
    // ∏_{j=0}^{i-1} s_j, starting from s_0 = 1.
    let mut prefix: i128 = 1;
    for &(k, s) in layers {
        let upto = prefix.saturating_mul(s as i128);
        lhs = lhs.saturating_sub((k as i128).saturating_mul(prefix).saturating_sub(upto));
        prefix = upto;
    }
    (lhs, prefix)
}

/// Checks the stride identity for an overlapping layer list.
pub fn validate_overlap(spec: &OverlapSpec) -> Result<()> {
    if spec.layers.is_empty() {
        return Err(Error::param("overlapping network needs at least one layer"));
    }
    if let Some(&(k, s)) = spec.layers.iter().find(|&&(k, s)| s == 0 || s >= k) {
        return Err(Error::param(format!(
            "overlapping layer needs 1 <= s < k, got k = {k}, s = {s}"
        )));
    }
    let (lhs, rhs) = overlap_identity(spec.n, &spec.layers);
    if lhs != rhs {
        // Report the value n would need to take.
        return Err(Error::Violation(StructureViolation {
            n: spec.n,
            derived: spec.n as i128 - lhs + rhs,
            layers: format!("{:?}", spec.layers),
            rule: OVERLAP_RULE,
        }));
    }
    Ok(())
}

/// Per-stage input lengths `n, n/k_1, …, 1` for a valid kernel list.
pub fn stage_lengths(n: usize, ks: &[usize]) -> Result<Vec<usize>, StructureViolation> {
    validate_nonoverlap(n, ks)?;
    let mut lengths = vec![n];
    let mut len = n;
    for &k in ks {
        len /= k;
        lengths.push(len);
    }
    Ok(lengths)
}

/// Weight initialization for [`build_cascade`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Initializer {
    /// Glorot-uniform kernels (fan-in `k`, fan-out `c·k`), β-vectors and
    /// head rows (fan-in `c`, fan-out 1); zero biases.
    Glorot,
    Zeros,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeNet<T> {
    n: usize,
    m: usize,
    banks: Vec<ConvKernelBank<T>>,
    betas: Vec<BetaVector<T>>,
    head: DenseArray<T>,
}

/// Stage caches from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    caches: Vec<LayerCache<T>>,
}

impl<T> ForwardTrace<T> {
    pub fn caches(&self) -> &[LayerCache<T>] {
        &self.caches
    }
}

/// Gradients for every parameter of a [`CascadeNet`], same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeGradients<T> {
    pub weights: Vec<DenseArray<T>>,
    pub biases: Vec<Vec<T>>,
    pub betas: Vec<Vec<T>>,
    pub head: DenseArray<T>,
    pub input: Vec<T>,
}

impl<T: Scalar> CascadeGradients<T> {
    pub fn zeros_like(net: &CascadeNet<T>) -> Self {
        Self {
            weights: net
                .banks
                .iter()
                .map(|b| DenseArray::zeros(b.weights().shape()))
                .collect(),
            biases: net.banks.iter().map(|b| vec![T::zero(); b.q()]).collect(),
            betas: net.betas.iter().map(|b| vec![T::zero(); b.q()]).collect(),
            head: DenseArray::zeros(net.head.shape()),
            input: vec![T::zero(); net.n],
        }
    }

    /// Parameter gradients in [`CascadeNet::params_mut`] order.
    pub fn slices(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            out.push(w.data());
            out.push(b);
            if let Some(beta) = self.betas.get(i) {
                out.push(beta);
            }
        }
        out.push(self.head.data());
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        let mut betas = self.betas.iter_mut();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.data_mut());
            out.push(b);
            if let Some(beta) = betas.next() {
                out.push(beta);
            }
        }
        out.push(self.head.data_mut());
        out
    }

    /// `self += other`, parameter groups only.
    pub fn accumulate(&mut self, other: &Self) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| *v == T::zero()))
            && self.input.iter().all(|v| *v == T::zero())
    }
}

impl<T: Scalar> CascadeNet<T> {
    /// Assembles a cascade from explicit parameters, checking every shape.
    pub fn from_parts(
        n: usize,
        banks: Vec<ConvKernelBank<T>>,
        betas: Vec<BetaVector<T>>,
        head: DenseArray<T>,
    ) -> Result<Self> {
        let ks: Vec<usize> = banks.iter().map(ConvKernelBank::k).collect();
        validate_nonoverlap(n, &ks).map_err(Error::Violation)?;
        if betas.len() + 1 != banks.len() {
            return Err(Error::shape(format!(
                "{} stages need {} β-vectors, got {}",
                banks.len(),
                banks.len() - 1,
                betas.len()
            )));
        }
        for (i, (bank, beta)) in banks.iter().zip(&betas).enumerate() {
            if bank.q() != beta.q() {
                return Err(Error::shape(format!(
                    "stage {}: {} kernels but β of length {}",
                    i + 1,
                    bank.q(),
                    beta.q()
                )));
            }
        }
        let last_q = banks.last().map(ConvKernelBank::q).unwrap_or(0);
        if head.rank() != 2 || head.cols() != last_q {
            return Err(Error::shape(format!(
                "head {:?} does not read the {last_q} final features",
                head.shape()
            )));
        }
        Ok(Self {
            n,
            m: head.rows(),
            banks,
            betas,
            head,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn stage_count(&self) -> usize {
        self.banks.len()
    }

    pub fn specs(&self) -> Vec<StageSpec> {
        self.banks
            .iter()
            .map(|b| StageSpec { k: b.k(), c: b.q() })
            .collect()
    }

    pub fn banks(&self) -> &[ConvKernelBank<T>] {
        &self.banks
    }

    pub fn betas(&self) -> &[BetaVector<T>] {
        &self.betas
    }

    pub fn head(&self) -> &DenseArray<T> {
        &self.head
    }

    pub fn bank_mut(&mut self, stage: usize) -> &mut ConvKernelBank<T> {
        &mut self.banks[stage]
    }

    pub fn beta_mut(&mut self, stage: usize) -> &mut BetaVector<T> {
        &mut self.betas[stage]
    }

    pub fn head_mut(&mut self) -> &mut DenseArray<T> {
        &mut self.head
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|s| s.len()).sum()
    }

    /// Parameter groups in a fixed order: per stage weights, biases and
    /// (for all but the last stage) β; then the head.
    pub fn params(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for (i, bank) in self.banks.iter().enumerate() {
            out.push(bank.weights().data());
            out.push(bank.biases());
            if let Some(beta) = self.betas.get(i) {
                out.push(beta.values());
            }
        }
        out.push(self.head.data());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        let mut betas = self.betas.iter_mut();
        for bank in self.banks.iter_mut() {
            let (w, b) = bank.parts_mut();
            out.push(w);
            out.push(b);
            if let Some(beta) = betas.next() {
                out.push(beta.values_mut());
            }
        }
        out.push(self.head.data_mut());
        out
    }

    /// Single-output cascade sharing every stage, with head row `row`.
    pub fn output_slice(&self, row: usize) -> Result<Self> {
        if row >= self.m {
            return Err(Error::param(format!("output {row} of {}", self.m)));
        }
        let head = DenseArray::new(vec![1, self.head.cols()], self.head.row(row).to_vec())?;
        Ok(Self {
            n: self.n,
            m: 1,
            banks: self.banks.clone(),
            betas: self.betas.clone(),
            head,
        })
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        self.forward_traced(x).map(|(out, _)| out)
    }

    pub fn forward_traced(&self, x: &[T]) -> Result<(Vec<T>, ForwardTrace<T>)> {
        if x.len() != self.n {
            return Err(Error::shape(format!(
                "cascade expects input length {}, got {}",
                self.n,
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite network input".into()));
        }
        let mut caches = Vec::with_capacity(self.banks.len());
        let mut signal = x.to_vec();
        for (i, bank) in self.banks.iter().enumerate() {
            let cache = activated_forward(&signal, bank)?;
            if let Some(beta) = self.betas.get(i) {
                signal = beta_project(&cache.post, beta)?;
            }
            caches.push(cache);
        }
        let features = caches.last().expect("at least one stage").post.row(0);
        let out = (0..self.m).map(|r| dot(self.head.row(r), features)).collect();
        Ok((out, ForwardTrace { caches }))
    }

    /// Chain rule through head and stages for `∂/∂output = grad_out`.
    pub fn backward(&self, trace: &ForwardTrace<T>, grad_out: &[T]) -> Result<CascadeGradients<T>> {
        let mut acc = CascadeGradients::zeros_like(self);
        self.backward_accumulate(trace, grad_out, &mut acc)?;
        Ok(acc)
    }

    /// Adds the gradients for one sample into `acc` (parameter groups and
    /// the input gradient).
    pub fn backward_accumulate(
        &self,
        trace: &ForwardTrace<T>,
        grad_out: &[T],
        acc: &mut CascadeGradients<T>,
    ) -> Result<()> {
        if grad_out.len() != self.m {
            return Err(Error::shape(format!(
                "output gradient of length {} for {} outputs",
                grad_out.len(),
                self.m
            )));
        }
        if trace.caches.len() != self.banks.len()
            || trace
                .caches
                .iter()
                .zip(&self.banks)
                .any(|(c, b)| c.post.cols() != b.q() || c.input.len() != c.post.rows() * b.k())
        {
            return Err(Error::structure(
                "forward trace does not belong to this network",
            ));
        }
        if acc.weights.len() != self.banks.len() || acc.head.shape() != self.head.shape() {
            return Err(Error::shape("gradient accumulator does not match the network"));
        }
        let stages = self.banks.len();
        let last = &trace.caches[stages - 1];
        let c_last = self.head.cols();

        let features = last.post.row(0);
        let mut grad_post = vec![T::zero(); c_last];
        for (r, &g) in grad_out.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            for (gh, &f) in acc.head.row_mut(r).iter_mut().zip(features) {
                *gh += g * f;
            }
            for (gp, &h) in grad_post.iter_mut().zip(self.head.row(r)) {
                *gp += g * h;
            }
        }
        let mut upstream = vec![T::zero(); last.input.len()];
        activation_backward_into(
            last,
            &self.banks[stages - 1],
            &grad_post,
            &mut upstream,
            &mut acc.weights[stages - 1],
            &mut acc.biases[stages - 1],
        )?;
        for i in (0..stages - 1).rev() {
            let cache = &trace.caches[i];
            let mut stage = StageGradients {
                input: vec![T::zero(); cache.input.len()],
                weights: std::mem::replace(&mut acc.weights[i], DenseArray::zeros(&[1])),
                biases: std::mem::take(&mut acc.biases[i]),
                beta: std::mem::take(&mut acc.betas[i]),
            };
            let res = stage_backward_into(cache, &self.banks[i], &self.betas[i], &upstream, &mut stage);
            acc.weights[i] = stage.weights;
            acc.biases[i] = stage.biases;
            acc.betas[i] = stage.beta;
            res?;
            upstream = stage.input;
        }
        for (a, u) in acc.input.iter_mut().zip(&upstream) {
            *a += *u;
        }
        Ok(())
    }
}

/// Builds and initializes a cascade after validating `n = ∏ k_i`.
pub fn build_cascade<T: Scalar>(
    n: usize,
    specs: &[StageSpec],
    m: usize,
    init: Initializer,
    rng: &mut SeededRng,
) -> Result<CascadeNet<T>> {
    let ks: Vec<usize> = specs.iter().map(|s| s.k).collect();
    validate_nonoverlap(n, &ks).map_err(Error::Violation)?;
    if m == 0 {
        return Err(Error::param("output dimension m must be at least 1"));
    }
    for s in specs {
        StageSpec::new(s.k, s.c)?;
    }
    let draw = |rng: &mut SeededRng, rows: usize, cols: usize, fan_in: usize, fan_out: usize| {
        match init {
            Initializer::Glorot => glorot_init(fan_in, fan_out, &[rows, cols], rng),
            Initializer::Zeros => Ok(DenseArray::zeros(&[rows, cols])),
        }
    };
    let mut banks = Vec::with_capacity(specs.len());
    let mut betas = Vec::with_capacity(specs.len().saturating_sub(1));
    for (i, s) in specs.iter().enumerate() {
        let w = draw(rng, s.c, s.k, s.k, s.c * s.k)?;
        banks.push(ConvKernelBank::new(w, vec![T::zero(); s.c])?);
        if i + 1 < specs.len() {
            let beta = draw(rng, 1, s.c, s.c, 1)?;
            betas.push(BetaVector::new(beta.into_data())?);
        }
    }
    let c_last = specs.last().expect("validated non-empty").c;
    let head = draw(rng, m, c_last, c_last, 1)?;
    CascadeNet::from_parts(n, banks, betas, head)
}

/// Applies `f` to each disjoint length-`k` block of `x`.
pub fn blockwise_lift<T: Scalar>(f: impl Fn(&[T]) -> T, x: &[T], k: usize) -> Result<Vec<T>> {
    if k == 0 || x.is_empty() || !x.len().is_multiple_of(k) {
        return Err(Error::structure(format!(
            "block length {k} does not divide input length {}",
            x.len()
        )));
    }
    Ok(x.chunks_exact(k).map(f).collect())
}

//! Convolution layers with stride equal to (or below) the kernel length,
//! the logistic activation, and the unbiased β-projection.
//!
//! A non-overlapping layer splits a length-`n` input into `n / k` disjoint
//! blocks and evaluates `q` affine kernels on every block, giving an
//! `(n / k) × q` pre-activation matrix. Column `i` is the feature vector of
//! kernel `i`; row `j` belongs to block `j`.

use crate::error::{Error, Result};
use crate::numerics::{dot, DenseArray};
use crate::scalar::Scalar;

/// Logistic function, evaluated without overflow for large `|t|`.
#[inline]
pub fn sigmoid<T: Scalar>(t: T) -> T {
    if t >= T::zero() {
        T::one() / (T::one() + (-t).exp())
    } else {
        let e = t.exp();
        e / (T::one() + e)
    }
}

/// `q` kernels of length `k` with one shared bias per kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernelBank<T> {
    weights: DenseArray<T>,
    biases: Vec<T>,
}

impl<T: Scalar> ConvKernelBank<T> {
    pub fn new(weights: DenseArray<T>, biases: Vec<T>) -> Result<Self> {
        if weights.rank() != 2 {
            return Err(Error::shape(format!(
                "kernel weights must be rank 2 (q, k), got {:?}",
                weights.shape()
            )));
        }
        if biases.len() != weights.rows() {
            return Err(Error::shape(format!(
                "{} biases for {} kernels",
                biases.len(),
                weights.rows()
            )));
        }
        if !weights.is_finite() || biases.iter().any(|b| !b.is_finite()) {
            return Err(Error::Numeric("non-finite kernel parameter".into()));
        }
        Ok(Self { weights, biases })
    }

    pub fn zeros(q: usize, k: usize) -> Self {
        Self {
            weights: DenseArray::zeros(&[q, k]),
            biases: vec![T::zero(); q],
        }
    }

    /// Kernel length.
    pub fn k(&self) -> usize {
        self.weights.cols()
    }

    /// Kernel count.
    pub fn q(&self) -> usize {
        self.weights.rows()
    }

    pub fn weights(&self) -> &DenseArray<T> {
        &self.weights
    }

    pub fn biases(&self) -> &[T] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut DenseArray<T> {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [T] {
        &mut self.biases
    }

    /// Weights and biases borrowed mutably together.
    pub fn parts_mut(&mut self) -> (&mut [T], &mut [T]) {
        (self.weights.data_mut(), &mut self.biases)
    }

    pub fn kernel(&self, i: usize) -> &[T] {
        self.weights.row(i)
    }
}

/// Unbiased length-1 convolution collapsing `q` feature channels to one.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> BetaVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::shape("β-vector must be non-empty"));
        }
        Ok(Self { values })
    }

    pub fn q(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }
}

/// Intermediate values of one layer evaluation, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct LayerCache<T> {
    pub input: Vec<T>,
    pub pre: DenseArray<T>,
    pub post: DenseArray<T>,
}

/// Gradients of one stage `x ↦ β-project(σ(conv(x)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageGradients<T> {
    pub input: Vec<T>,
    pub weights: DenseArray<T>,
    pub biases: Vec<T>,
    pub beta: Vec<T>,
}

/// Pre-activation matrix of the non-overlapping layer, shape `(n/k) × q`.
pub fn nonoverlap_forward<T: Scalar>(x: &[T], bank: &ConvKernelBank<T>) -> Result<DenseArray<T>> {
    let (n, k) = (x.len(), bank.k());
    if n == 0 || n % k != 0 {
        return Err(Error::structure(format!(
            "kernel length {k} does not divide input length {n}; a non-overlapping \
             layer needs n to be a multiple of k (n = product of kernel lengths)"
        )));
    }
    let blocks = n / k;
    let q = bank.q();
    let mut out = DenseArray::zeros(&[blocks, q]);
    for (j, block) in x.chunks_exact(k).enumerate() {
        let row = out.row_mut(j);
        for (i, cell) in row.iter_mut().enumerate() {
            *cell = dot(bank.kernel(i), block) + bank.biases[i];
        }
    }
    Ok(out)
}

/// Pre-activation matrix of the overlapping layer with stride `s < k`,
/// shape `((n − k)/s + 1) × q`.
pub fn overlap_forward<T: Scalar>(
    x: &[T],
    bank: &ConvKernelBank<T>,
    stride: usize,
) -> Result<DenseArray<T>> {
    let (n, k) = (x.len(), bank.k());
    if stride == 0 || stride >= k {
        return Err(Error::structure(format!(
            "overlapping stride must satisfy 1 <= s < k, got s = {stride}, k = {k}"
        )));
    }
    if k > n || (n - k) % stride != 0 {
        return Err(Error::structure(format!(
            "stride {stride} does not divide n - k = {n} - {k}"
        )));
    }
    let windows = (n - k) / stride + 1;
    let q = bank.q();
    let mut out = DenseArray::zeros(&[windows, q]);
    for j in 0..windows {
        let window = &x[j * stride..j * stride + k];
        for i in 0..q {
            *out.at_mut(j, i) = dot(bank.kernel(i), window) + bank.biases[i];
        }
    }
    Ok(out)
}

/// Row-wise dot product of an `L × q` matrix with β.
pub fn beta_project<T: Scalar>(activated: &DenseArray<T>, beta: &BetaVector<T>) -> Result<Vec<T>> {
    if activated.rank() != 2 || activated.cols() != beta.q() {
        return Err(Error::shape(format!(
            "β of length {} against feature matrix {:?}",
            beta.q(),
            activated.shape()
        )));
    }
    Ok((0..activated.rows())
        .map(|j| dot(activated.row(j), beta.values()))
        .collect())
}

/// Non-overlapping layer followed by the elementwise logistic, with cache.
pub fn activated_forward<T: Scalar>(x: &[T], bank: &ConvKernelBank<T>) -> Result<LayerCache<T>> {
    let pre = nonoverlap_forward(x, bank)?;
    let post = pre.map(sigmoid);
    Ok(LayerCache {
        input: x.to_vec(),
        pre,
        post,
    })
}

/// One full stage: convolution, logistic, β-projection.
pub fn stage_forward<T: Scalar>(
    x: &[T],
    bank: &ConvKernelBank<T>,
    beta: &BetaVector<T>,
) -> Result<(Vec<T>, LayerCache<T>)> {
    let cache = activated_forward(x, bank)?;
    let out = beta_project(&cache.post, beta)?;
    Ok((out, cache))
}

/// Backpropagate a gradient on the post-activation matrix through the
/// logistic and the convolution. Returns `(d input, d weights, d biases)`.
pub fn activation_backward<T: Scalar>(
    cache: &LayerCache<T>,
    bank: &ConvKernelBank<T>,
    grad_post: &DenseArray<T>,
) -> Result<(Vec<T>, DenseArray<T>, Vec<T>)> {
    let mut grad_input = vec![T::zero(); cache.input.len()];
    let mut grad_w = DenseArray::zeros(&[bank.q(), bank.k()]);
    let mut grad_b = vec![T::zero(); bank.q()];
    activation_backward_into(
        cache,
        bank,
        grad_post.data(),
        &mut grad_input,
        &mut grad_w,
        &mut grad_b,
    )?;
    Ok((grad_input, grad_w, grad_b))
}

/// Accumulating form of [`activation_backward`]: adds into the buffers.
/// `grad_post` is the row-major `blocks × q` gradient.
pub fn activation_backward_into<T: Scalar>(
    cache: &LayerCache<T>,
    bank: &ConvKernelBank<T>,
    grad_post: &[T],
    grad_input: &mut [T],
    grad_w: &mut DenseArray<T>,
    grad_b: &mut [T],
) -> Result<()> {
    let k = bank.k();
    let q = bank.q();
    let blocks = cache.post.rows();
    if cache.post.shape() != [blocks, q]
        || grad_post.len() != blocks * q
        || cache.input.len() != blocks * k
        || grad_input.len() != blocks * k
        || grad_w.shape() != [q, k]
        || grad_b.len() != q
    {
        return Err(Error::shape(format!(
            "cache {:?} / gradient of {} entries / input {} inconsistent with bank (q={q}, k={k})",
            cache.post.shape(),
            grad_post.len(),
            cache.input.len()
        )));
    }
    for j in 0..blocks {
        let block = &cache.input[j * k..(j + 1) * k];
        let gin = &mut grad_input[j * k..(j + 1) * k];
        let post = cache.post.row(j);
        for i in 0..q {
            let s = post[i];
            let delta = grad_post[j * q + i] * s * (T::one() - s);
            if delta == T::zero() {
                continue;
            }
            grad_b[i] += delta;
            for ((gw, &xv), (gx, &w)) in grad_w
                .row_mut(i)
                .iter_mut()
                .zip(block)
                .zip(gin.iter_mut().zip(bank.kernel(i)))
            {
                *gw += delta * xv;
                *gx += delta * w;
            }
        }
    }
    Ok(())
}

/// Exact gradients of `β-project(σ(conv(x)))` given `∂/∂output`.
pub fn stage_backward<T: Scalar>(
    cache: &LayerCache<T>,
    bank: &ConvKernelBank<T>,
    beta: &BetaVector<T>,
    grad_out: &[T],
) -> Result<StageGradients<T>> {
    let mut g = StageGradients {
        input: vec![T::zero(); cache.input.len()],
        weights: DenseArray::zeros(&[bank.q(), bank.k()]),
        biases: vec![T::zero(); bank.q()],
        beta: vec![T::zero(); bank.q()],
    };
    stage_backward_into(cache, bank, beta, grad_out, &mut g)?;
    Ok(g)
}

/// Accumulating form of [`stage_backward`]: adds into `grads`.
pub fn stage_backward_into<T: Scalar>(
    cache: &LayerCache<T>,
    bank: &ConvKernelBank<T>,
    beta: &BetaVector<T>,
    grad_out: &[T],
    grads: &mut StageGradients<T>,
) -> Result<()> {
    let blocks = cache.post.rows();
    let q = bank.q();
    if grad_out.len() != blocks || beta.q() != q || grads.beta.len() != q {
        return Err(Error::shape(format!(
            "output gradient of length {} for {blocks} blocks; β length {} vs {q} kernels",
            grad_out.len(),
            beta.q(),
        )));
    }
    let mut grad_post = vec![T::zero(); blocks * q];
    for (j, &g) in grad_out.iter().enumerate() {
        for ((gb, &p), (gp, &b)) in grads
            .beta
            .iter_mut()
            .zip(cache.post.row(j))
            .zip(grad_post[j * q..(j + 1) * q].iter_mut().zip(beta.values()))
        {
            *gb += g * p;
            *gp = g * b;
        }
    }
    activation_backward_into(
        cache,
        bank,
        &grad_post,
        &mut grads.input,
        &mut grads.weights,
        &mut grads.biases,
    )
}

//! Dense row-major arrays and the seeded random source.
//!
//! All random draws in the crate go through [`SeededRng`]: ChaCha20 for the
//! bit stream, 53-bit mantissa construction for uniforms, and the Marsaglia
//! polar transform for standard normals. The sequence depends only on the
//! seed and the call order, never on the platform.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseArray<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> DenseArray<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 || shape.contains(&0) {
            return Err(Error::shape(format!(
                "extents must be 1 to 3 positive values, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(data: Vec<T>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut out = Self::zeros(&[n, n]);
        for i in 0..n {
            out.data[i * n + i] = T::one();
        }
        out
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Rows of a rank-2 array (a rank-1 array is treated as one row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().expect("non-empty shape")
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols() + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut T {
        let cols = self.cols();
        &mut self.data[i * cols + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn transpose(&self) -> Result<Self> {
        self.expect_rank(2, "transpose")?;
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = Self::zeros(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Matrix-vector product for a rank-2 array.
    pub fn matvec(&self, v: &[T]) -> Result<Vec<T>> {
        self.expect_rank(2, "matvec")?;
        if v.len() != self.cols() {
            return Err(Error::shape(format!(
                "matvec of {:?} with vector of length {}",
                self.shape,
                v.len()
            )));
        }
        Ok((0..self.rows()).map(|i| dot(self.row(i), v)).collect())
    }

    /// Transposed matrix-vector product `selfᵀ v`.
    pub fn matvec_t(&self, v: &[T]) -> Result<Vec<T>> {
        self.expect_rank(2, "matvec_t")?;
        if v.len() != self.rows() {
            return Err(Error::shape(format!(
                "transposed matvec of {:?} with vector of length {}",
                self.shape,
                v.len()
            )));
        }
        let mut out = vec![T::zero(); self.cols()];
        for (i, &vi) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        Ok(out)
    }

    fn expect_rank(&self, rank: usize, op: &str) -> Result<()> {
        if self.shape.len() != rank {
            return Err(Error::shape(format!(
                "{op} expects rank {rank}, got shape {:?}",
                self.shape
            )));
        }
        Ok(())
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub fn norm2<T: Scalar>(v: &[T]) -> T {
    dot(v, v).sqrt()
}

/// Standard matrix product of two rank-2 arrays.
pub fn matmul<T: Scalar>(a: &DenseArray<T>, b: &DenseArray<T>) -> Result<DenseArray<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::shape(format!(
            "cannot multiply {:?} by {:?}",
            a.shape, b.shape
        )));
    }
    let (r, inner, c) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = DenseArray::zeros(&[r, c]);
    for i in 0..r {
        let orow = &mut out.data[i * c..(i + 1) * c];
        for p in 0..inner {
            let aip = a.data[i * inner + p];
            for (o, &bv) in orow.iter_mut().zip(&b.data[p * c..(p + 1) * c]) {
                *o += aip * bv;
            }
        }
    }
    Ok(out)
}

/// Deterministic random source.
///
/// Child generators for parallel or per-purpose work come from
/// [`SeededRng::child`], which keeps the seed and selects a distinct ChaCha
/// stream; the parent state is untouched.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha20Rng,
    spare_normal: Option<f64>,
}

impl SeededRng {
    pub const ALGORITHM: &'static str = "chacha20+polar-normal";

    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha20Rng::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    /// Generator on stream `stream + 1` of the same seed.
    pub fn child(&self, stream: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(self.seed);
        inner.set_stream(stream.wrapping_add(1));
        Self {
            seed: self.seed,
            inner,
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 random mantissa bits.
    pub fn next_unit(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_unit()
    }

    /// Uniform integer in `0..bound` by rejection (no modulo bias).
    pub fn below(&mut self, bound: usize) -> usize {
        assert!(bound > 0, "empty range");
        let bound = bound as u64;
        let zone = u64::MAX - (u64::MAX % bound);
        loop {
            let v = self.inner.next_u64();
            if v < zone {
                return (v % bound) as usize;
            }
        }
    }

    /// Standard normal variate (Marsaglia polar method, pairs cached).
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.next_unit() - 1.0;
            let v = 2.0 * self.next_unit() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let factor = (-2.0 * s.ln() / s).sqrt();
                self.spare_normal = Some(v * factor);
                return u * factor;
            }
        }
    }

    /// In-place Fisher–Yates shuffle.
    pub fn shuffle<E>(&mut self, items: &mut [E]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// I.i.d. normal draws, computed as `mean + std * z`.
pub fn gaussian_sample<T: Scalar>(
    rng: &mut SeededRng,
    shape: &[usize],
    mean: T,
    std: T,
) -> Result<DenseArray<T>> {
    if !(std >= T::zero()) {
        return Err(Error::param(format!(
            "standard deviation must be non-negative, got {std}"
        )));
    }
    let len: usize = shape.iter().product();
    let data = (0..len)
        .map(|_| mean + std * T::from_f64_lossy(rng.standard_normal()))
        .collect();
    DenseArray::new(shape.to_vec(), data)
}

/// I.i.d. uniform draws on `[lo, hi)`.
pub fn uniform_sample<T: Scalar>(
    rng: &mut SeededRng,
    shape: &[usize],
    lo: T,
    hi: T,
) -> Result<DenseArray<T>> {
    if !(lo <= hi) {
        return Err(Error::param(format!("empty uniform range [{lo}, {hi})")));
    }
    let len: usize = shape.iter().product();
    let (lo64, hi64) = (lo.to_f64_exact(), hi.to_f64_exact());
    let data = (0..len)
        .map(|_| T::from_f64_lossy(rng.uniform(lo64, hi64)))
        .collect();
    DenseArray::new(shape.to_vec(), data)
}

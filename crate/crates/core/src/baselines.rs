//! Classical compressive-sensing solvers: cyclic Kaczmarz (ART) and ISTA
//! for the Lasso objective `½‖Ay − x‖² + λ‖y‖₁`.

use crate::error::{Error, Result};
use crate::numerics::{dot, DenseArray, SeededRng};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArtConfig {
    pub sweeps: usize,
    pub relaxation: f64,
}

impl Default for ArtConfig {
    fn default() -> Self {
        Self {
            sweeps: 10,
            relaxation: 1.0,
        }
    }
}

impl ArtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sweeps == 0 || !(self.relaxation > 0.0 && self.relaxation <= 2.0) {
            return Err(Error::param(format!(
                "ART needs sweeps >= 1 and relaxation in (0, 2], got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoConfig {
    pub lambda: f64,
    pub max_iters: usize,
    pub tolerance: f64,
}

impl LassoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || self.max_iters == 0 || !(self.tolerance >= 0.0) {
            return Err(Error::param(format!(
                "Lasso needs lambda >= 0, max_iters >= 1, tolerance >= 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

fn check_system<T: Scalar>(a: &DenseArray<T>, x: &[T]) -> Result<()> {
    if a.rank() != 2 || a.rows() != x.len() {
        return Err(Error::shape(format!(
            "system matrix {:?} with measurement of length {}",
            a.shape(),
            x.len()
        )));
    }
    Ok(())
}

/// Cyclic Kaczmarz sweeps starting from `y0`:
/// `y ← y + ω (x_i − a_i·y) / ‖a_i‖² · a_i` for every row `i`.
pub fn art_solve<T: Scalar>(
    a: &DenseArray<T>,
    x: &[T],
    cfg: &ArtConfig,
    y0: &[T],
) -> Result<Vec<T>> {
    check_system(a, x)?;
    cfg.validate()?;
    if y0.len() != a.cols() {
        return Err(Error::shape(format!(
            "initial estimate of length {} for {} unknowns",
            y0.len(),
            a.cols()
        )));
    }
    let row_norms: Vec<T> = (0..a.rows()).map(|i| dot(a.row(i), a.row(i))).collect();
    if let Some(i) = row_norms.iter().position(|&r| r == T::zero()) {
        return Err(Error::param(format!("row {i} of the system matrix is zero")));
    }
    let omega = T::lit(cfg.relaxation);
    let mut y = y0.to_vec();
    for _ in 0..cfg.sweeps {
        for (i, &norm) in row_norms.iter().enumerate() {
            let row = a.row(i);
            let step = omega * (x[i] - dot(row, &y)) / norm;
            for (yj, &aij) in y.iter_mut().zip(row) {
                *yj += step * aij;
            }
        }
    }
    Ok(y)
}

/// `sign(v) · max(|v| − t, 0)`.
#[inline]
pub fn soft_threshold<T: Scalar>(v: T, t: T) -> T {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        T::zero()
    }
}

/// Lasso objective `½‖Ay − x‖² + λ‖y‖₁`.
pub fn lasso_objective<T: Scalar>(a: &DenseArray<T>, x: &[T], y: &[T], lambda: T) -> Result<T> {
    let r = a.matvec(y)?;
    let fit: T = r.iter().zip(x).map(|(&ri, &xi)| (ri - xi) * (ri - xi)).sum();
    let l1: T = y.iter().map(|v| v.abs()).sum();
    Ok(T::lit(0.5) * fit + lambda * l1)
}

const POWER_ITERS: usize = 100;
/// Seed for the power-iteration start vector.
const POWER_SEED: u64 = 0x5_eed0_fa7a;

/// Estimate of the largest eigenvalue of `AᵀA` by power iteration from a
/// fixed seeded start, inflated by 1% so it upper-bounds the true value in
/// practice. The ISTA loop still backtracks if the bound turns out low.
pub fn lipschitz_bound<T: Scalar>(a: &DenseArray<T>) -> Result<T> {
    let mut rng = SeededRng::new(POWER_SEED);
    let mut v: Vec<T> = (0..a.cols())
        .map(|_| T::from_f64_lossy(rng.standard_normal()))
        .collect();
    let mut estimate = T::zero();
    for _ in 0..POWER_ITERS {
        let norm = v.iter().map(|&t| t * t).sum::<T>().sqrt();
        if norm == T::zero() {
            return Ok(T::zero());
        }
        for t in v.iter_mut() {
            *t /= norm;
        }
        let w = a.matvec_t(&a.matvec(&v)?)?;
        estimate = dot(&v, &w);
        v = w;
    }
    Ok(estimate * T::lit(1.01))
}

/// ISTA result with the objective after every iteration (index 0 is the
/// starting point `y = 0`).
#[derive(Debug, Clone)]
pub struct LassoSolution<T> {
    pub estimate: Vec<T>,
    pub objectives: Vec<T>,
    pub lipschitz: T,
}

/// ISTA from `y = 0` with step `1/L`. Stops after `max_iters` or once the
/// objective decreases by less than `tolerance`.
pub fn lasso_solve<T: Scalar>(a: &DenseArray<T>, x: &[T], cfg: &LassoConfig) -> Result<Vec<T>> {
    let l = lipschitz_bound(a)?;
    lasso_solve_traced(a, x, cfg, l).map(|s| s.estimate)
}

/// [`lasso_solve`] with a caller-supplied Lipschitz bound and the full
/// objective trace. If a step would raise the objective, `L` doubles and the
/// step is retried, so the trace is non-increasing.
pub fn lasso_solve_traced<T: Scalar>(
    a: &DenseArray<T>,
    x: &[T],
    cfg: &LassoConfig,
    lipschitz: T,
) -> Result<LassoSolution<T>> {
    check_system(a, x)?;
    cfg.validate()?;
    let lambda = T::lit(cfg.lambda);
    let tol = T::lit(cfg.tolerance);
    let mut l = if lipschitz > T::zero() { lipschitz } else { T::one() };
    let mut y = vec![T::zero(); a.cols()];
    let mut obj = lasso_objective(a, x, &y, lambda)?;
    let mut objectives = vec![obj];
    for _ in 0..cfg.max_iters {
        let residual: Vec<T> = a
            .matvec(&y)?
            .iter()
            .zip(x)
            .map(|(&r, &xi)| r - xi)
            .collect();
        let grad = a.matvec_t(&residual)?;
        let (next, next_obj) = loop {
            let cand: Vec<T> = y
                .iter()
                .zip(&grad)
                .map(|(&yi, &gi)| soft_threshold(yi - gi / l, lambda / l))
                .collect();
            let cand_obj = lasso_objective(a, x, &cand, lambda)?;
            if cand_obj <= obj || l > T::lit(1e300) {
                break (cand, cand_obj);
            }
            l *= T::lit(2.0);
        };
        let decrease = obj - next_obj;
        y = next;
        obj = next_obj;
        objectives.push(obj);
        if decrease < tol {
            break;
        }
    }
    Ok(LassoSolution {
        estimate: y,
        objectives,
        lipschitz: l,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gaussian_sample;

    #[test]
    fn identity_one_sweep() {
        let a = DenseArray::<f64>::identity(4);
        let x = [0.5, -1.0, 2.0, 0.25];
        let y = art_solve(&a, &x, &ArtConfig { sweeps: 1, relaxation: 1.0 }, &[0.0; 4]).unwrap();
        assert_eq!(y, x.to_vec());
    }

    #[test]
    fn zero_row_rejected() {
        let a = DenseArray::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(
            art_solve(&a, &[1.0, 1.0], &ArtConfig::default(), &[0.0, 0.0]),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn fixed_point_is_kept() {
        let mut rng = SeededRng::new(1);
        let a = gaussian_sample::<f64>(&mut rng, &[3, 6], 0.0, 1.0).unwrap();
        let y_star = gaussian_sample::<f64>(&mut rng, &[6], 0.0, 1.0).unwrap().into_data();
        let x = a.matvec(&y_star).unwrap();
        let y = art_solve(&a, &x, &ArtConfig::default(), &y_star).unwrap();
        for (u, v) in y.iter().zip(&y_star) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn single_projection_zeroes_row_residual() {
        let mut rng = SeededRng::new(2);
        let a = gaussian_sample::<f64>(&mut rng, &[1, 5], 0.0, 1.0).unwrap();
        let x = [0.7];
        let y = art_solve(&a, &x, &ArtConfig { sweeps: 1, relaxation: 1.0 }, &[0.3; 5]).unwrap();
        assert!((x[0] - dot(a.row(0), &y)).abs() < 1e-12);
    }

    #[test]
    fn soft_threshold_cases() {
        assert!((soft_threshold(0.5, 0.2) - 0.3f64).abs() < 1e-16);
        assert!((soft_threshold(-0.5, 0.2) + 0.3f64).abs() < 1e-16);
        assert_eq!(soft_threshold(0.1f64, 0.2), 0.0);
    }

    #[test]
    fn full_shrinkage_gives_zero() {
        let mut rng = SeededRng::new(3);
        let a = gaussian_sample::<f64>(&mut rng, &[6, 10], 0.0, 0.5).unwrap();
        let x = gaussian_sample::<f64>(&mut rng, &[6], 0.0, 1.0).unwrap().into_data();
        let at_x = a.matvec_t(&x).unwrap();
        let lam = at_x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let cfg = LassoConfig { lambda: lam, max_iters: 50, tolerance: 0.0 };
        assert!(lasso_solve(&a, &x, &cfg).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lipschitz_bound_dominates_rayleigh_quotients() {
        let mut rng = SeededRng::new(4);
        let a = gaussian_sample::<f64>(&mut rng, &[8, 12], 0.0, 1.0).unwrap();
        let l = lipschitz_bound(&a).unwrap();
        for _ in 0..20 {
            let v = gaussian_sample::<f64>(&mut rng, &[12], 0.0, 1.0).unwrap().into_data();
            let av = a.matvec(&v).unwrap();
            assert!(dot(&av, &av) / dot(&v, &v) <= l);
        }
    }
}

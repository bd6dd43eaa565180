use nocnn::baselines::{
    art_solve, lasso_objective, lasso_solve, lasso_solve_traced, lipschitz_bound, soft_threshold, ArtConfig,
    LassoConfig,
};
use nocnn::numerics::{matmul, DenseArray};
use nocnn::{gaussian_sample, SeededRng};
use proptest::prelude::*;

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    num / b.iter().map(|y| y * y).sum::<f64>().sqrt()
}

/// Least squares through the normal equations, solved by Gaussian
/// elimination with partial pivoting.
fn least_squares(a: &DenseArray<f64>, x: &[f64]) -> Vec<f64> {
    let at = a.transpose().unwrap();
    let ata = matmul(&at, a).unwrap();
    let atx = at.matvec(x).unwrap();
    let n = ata.rows();
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| {
        let mut r = ata.row(i).to_vec();
        r.push(atx[i]);
        r
    }).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
        m.swap(col, piv);
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            for c in col..=n {
                m[r][c] -= f * m[col][c];
            }
        }
    }
    let mut y = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| m[r][c] * y[c]).sum();
        y[r] = (m[r][n] - s) / m[r][r];
    }
    y
}

#[test]
fn zero_lambda_matches_least_squares() {
    let mut rng = SeededRng::new(12);
    let a = gaussian_sample(&mut rng, &[30, 6], 0.0, 1.0).unwrap();
    let x: Vec<f64> = (0..30).map(|_| rng.standard_normal()).collect();
    let y = lasso_solve(&a, &x, &LassoConfig { lambda: 0.0, max_iters: 5000, tolerance: 0.0 }).unwrap();
    assert!(rel(&y, &least_squares(&a, &x)) < 1e-4);
}

#[test]
fn art_converges_on_consistent_square_system() {
    let mut rng = SeededRng::new(3);
    let mut a = gaussian_sample(&mut rng, &[8, 8], 0.0, 0.1).unwrap();
    for i in 0..8 {
        *a.at_mut(i, i) += 1.0;
    }
    let truth: Vec<f64> = (0..8).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let x = a.matvec(&truth).unwrap();
    let y = art_solve(&a, &x, &ArtConfig { sweeps: 200, relaxation: 1.0 }, &[0.0; 8]).unwrap();
    assert!(rel(&y, &truth) < 1e-6);
}

#[test]
fn art_underdetermined_reaches_minimum_norm_solution() {
    // From y0 = 0 Kaczmarz stays in the row space of A.
    let mut rng = SeededRng::new(5);
    let a = gaussian_sample(&mut rng, &[4, 10], 0.0, 1.0).unwrap();
    let x: Vec<f64> = (0..4).map(|_| rng.standard_normal()).collect();
    let y = art_solve(&a, &x, &ArtConfig { sweeps: 2000, relaxation: 1.0 }, &[0.0; 10]).unwrap();
    let residual: Vec<f64> = a.matvec(&y).unwrap().iter().zip(&x).map(|(p, t)| p - t).collect();
    assert!(residual.iter().all(|r| r.abs() < 1e-9));
    // Minimum-norm solution Aᵀ(AAᵀ)⁻¹x, via least squares on Aᵀ.
    let at = a.transpose().unwrap();
    let z = least_squares(&matmul(&a, &at).unwrap(), &x);
    let min_norm = at.matvec(&z).unwrap();
    assert!(rel(&y, &min_norm) < 1e-8);
}

#[test]
fn relaxation_outside_range_is_rejected() {
    let a = DenseArray::<f64>::identity(2);
    for omega in [0.0, 2.5, -1.0, f64::NAN] {
        assert!(art_solve(&a, &[1.0, 1.0], &ArtConfig { sweeps: 1, relaxation: omega }, &[0.0; 2]).is_err());
    }
}

#[test]
fn lasso_rejects_bad_parameters() {
    let a = DenseArray::<f64>::identity(2);
    assert!(lasso_solve(&a, &[1.0, 1.0], &LassoConfig { lambda: -1.0, max_iters: 10, tolerance: 0.0 }).is_err());
    assert!(lasso_solve(&a, &[1.0, 1.0], &LassoConfig { lambda: 0.1, max_iters: 0, tolerance: 0.0 }).is_err());
    assert!(lasso_solve(&a, &[1.0], &LassoConfig { lambda: 0.1, max_iters: 10, tolerance: 0.0 }).is_err());
}

#[test]
fn identity_lasso_is_soft_thresholding() {
    let a = DenseArray::<f64>::identity(4);
    let x = [1.5, -0.2, 0.05, -3.0];
    let y = lasso_solve(&a, &x, &LassoConfig { lambda: 0.3, max_iters: 100, tolerance: 0.0 }).unwrap();
    for (yi, &xi) in y.iter().zip(&x) {
        assert!((yi - soft_threshold(xi, 0.3)).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn ista_objective_never_increases(seed in any::<u64>(), lambda in 0.0f64..1.0) {
        let mut rng = SeededRng::new(seed);
        let a = gaussian_sample(&mut rng, &[10, 20], 0.0, 0.3).unwrap();
        let x: Vec<f64> = (0..10).map(|_| rng.standard_normal()).collect();
        let sol = lasso_solve_traced(&a, &x, &LassoConfig { lambda, max_iters: 200, tolerance: 0.0 },
            lipschitz_bound(&a).unwrap()).unwrap();
        for w in sol.objectives.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        let last = *sol.objectives.last().unwrap();
        prop_assert_eq!(last, lasso_objective(&a, &x, &sol.estimate, lambda).unwrap());
    }

    #[test]
    fn lambda_above_threshold_gives_zero(seed in any::<u64>(), extra in 1.0f64..3.0) {
        let mut rng = SeededRng::new(seed);
        let a = gaussian_sample(&mut rng, &[6, 12], 0.0, 0.5).unwrap();
        let x: Vec<f64> = (0..6).map(|_| rng.standard_normal()).collect();
        let lam = extra * a.matvec_t(&x).unwrap().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let y = lasso_solve(&a, &x, &LassoConfig { lambda: lam, max_iters: 100, tolerance: 0.0 }).unwrap();
        prop_assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn soft_threshold_is_a_shrinkage(v in -10.0f64..10.0, t in 0.0f64..5.0) {
        let s = soft_threshold(v, t);
        prop_assert!(s.abs() <= v.abs());
        prop_assert!(s == 0.0 || s.signum() == v.signum());
        prop_assert!(((v - s).abs() - t.min(v.abs())).abs() < 1e-12);
    }
}

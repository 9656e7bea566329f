//! Jacobi-preconditioned Krylov solvers and a dense LU used as an oracle.
//!
//! Convergence is declared on the recursively updated residual and then
//! confirmed against the true residual `b − Ax`; the reported residual is
//! always the true one. Near a fixed point the initial residual can itself be
//! at rounding level, so iterations also stop once the true residual reaches
//! the floating-point noise floor of `Ax`; such solves report
//! `at_noise_floor` rather than `converged`.

use thiserror::Error;

use crate::sparse::{dot, norm2, SparseMatrix};

pub const DENSE_LU_MAX_DIM: usize = 2000;
const NOISE_FACTOR: f64 = 16.0 * f64::EPSILON;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: matrix {matrix}, vector {vector}")]
    Dimension { matrix: usize, vector: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("{solver} breakdown after {iterations} iterations")]
    Breakdown { solver: &'static str, iterations: usize },
    #[error("matrix is singular (zero pivot in column {0})")]
    Singular(usize),
    #[error("dense solve limited to n <= {DENSE_LU_MAX_DIM}, got {0}")]
    TooLarge(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// `‖b − Ax‖₂ / ‖b − Ax₀‖₂`, recomputed from the returned `x`.
    pub final_residual: f64,
    pub converged: bool,
    /// The true residual reached rounding level before the relative target.
    pub at_noise_floor: bool,
}

impl SolveStats {
    pub fn accepted(&self) -> bool {
        self.converged || self.at_noise_floor
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrylovSettings {
    pub rel_tol: f64,
    /// `None` means `10·n`.
    pub max_iter: Option<usize>,
}

impl Default for KrylovSettings {
    fn default() -> Self {
        KrylovSettings {
            rel_tol: 1e-10,
            max_iter: None,
        }
    }
}

impl KrylovSettings {
    pub fn max_iter_for(&self, n: usize) -> usize {
        self.max_iter.unwrap_or(10 * n.max(1))
    }
}

fn check_inputs(a: &SparseMatrix, b: &[f64], x0: &[f64]) -> Result<(), LinalgError> {
    for v in [b, x0] {
        if v.len() != a.dim() {
            return Err(LinalgError::Dimension {
                matrix: a.dim(),
                vector: v.len(),
            });
        }
    }
    if !a.values().iter().all(|v| v.is_finite()) {
        return Err(LinalgError::NonFinite("matrix"));
    }
    if !b.iter().all(|v| v.is_finite()) {
        return Err(LinalgError::NonFinite("right-hand side"));
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(LinalgError::NonFinite("initial guess"));
    }
    Ok(())
}

fn inverse_diagonal(a: &SparseMatrix) -> Vec<f64> {
    a.diagonal()
        .into_iter()
        .map(|d| if d != 0.0 { 1.0 / d } else { 1.0 })
        .collect()
}

fn residual(a: &SparseMatrix, b: &[f64], x: &[f64]) -> Vec<f64> {
    let mut r = a.mul_vec(x);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    r
}

struct Targets {
    r0: f64,
    relative: f64,
    b_norm: f64,
    a_norm: f64,
}

impl Targets {
    fn new(a: &SparseMatrix, b: &[f64], r0: f64, rel_tol: f64) -> Self {
        Targets {
            r0,
            relative: rel_tol * r0,
            b_norm: norm2(b),
            a_norm: a.norm_inf(),
        }
    }

    fn noise(&self, x: &[f64]) -> f64 {
        NOISE_FACTOR * (self.b_norm + self.a_norm * norm2(x))
    }

    fn stop_level(&self, x: &[f64]) -> f64 {
        self.relative.max(self.noise(x))
    }

    fn stats(&self, iterations: usize, true_res: f64, x: &[f64]) -> SolveStats {
        let converged = true_res <= self.relative;
        SolveStats {
            iterations,
            final_residual: if self.r0 > 0.0 { true_res / self.r0 } else { 0.0 },
            converged,
            at_noise_floor: !converged && true_res <= self.noise(x),
        }
    }
}

/// Preconditioned conjugate gradients for symmetric positive definite `a`.
pub fn cg_solve(
    a: &SparseMatrix,
    b: &[f64],
    x0: &[f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveStats), LinalgError> {
    check_inputs(a, b, x0)?;
    let n = a.dim();
    let dinv = inverse_diagonal(a);
    let mut x = x0.to_vec();
    let mut r = residual(a, b, &x);
    let targets = Targets::new(a, b, norm2(&r), rel_tol);
    if targets.r0 == 0.0 {
        return Ok((x, targets.stats(0, 0.0, x0)));
    }
    let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut it = 0;
    while it < max_iter {
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !pap.is_finite() {
            return Err(LinalgError::NonFinite("cg iterate"));
        }
        if pap <= 0.0 {
            return Err(LinalgError::Breakdown {
                solver: "cg",
                iterations: it,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        it += 1;
        let rn = norm2(&r);
        if !rn.is_finite() {
            return Err(LinalgError::NonFinite("cg residual"));
        }
        if rn <= targets.stop_level(&x) {
            let true_r = residual(a, b, &x);
            let tn = norm2(&true_r);
            if tn <= targets.stop_level(&x) {
                return Ok((x.clone(), targets.stats(it, tn, &x)));
            }
            // Recurrence drifted from the true residual: resync and restart
            // the search directions.
            r = true_r;
            z = r.iter().zip(&dinv).map(|(r, d)| r * d).collect();
            p.clone_from(&z);
            rz = dot(&r, &z);
            continue;
        }
        for i in 0..n {
            z[i] = r[i] * dinv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let tn = norm2(&residual(a, b, &x));
    Ok((x.clone(), targets.stats(it, tn, &x)))
}

/// Right-preconditioned BiCGStab for general nonsingular `a`. A breakdown
/// restarts once from the current iterate; a second one is an error.
pub fn bicgstab_solve(
    a: &SparseMatrix,
    b: &[f64],
    x0: &[f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveStats), LinalgError> {
    check_inputs(a, b, x0)?;
    let n = a.dim();
    let dinv = inverse_diagonal(a);
    let mut x = x0.to_vec();
    let mut r = residual(a, b, &x);
    let targets = Targets::new(a, b, norm2(&r), rel_tol);
    if targets.r0 == 0.0 {
        return Ok((x, targets.stats(0, 0.0, x0)));
    }

    let mut breakdowns = 0;
    let mut it = 0;
    let mut r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut zv = vec![0.0; n];
    let mut t = vec![0.0; n];

    macro_rules! restart {
        () => {{
            r = residual(a, b, &x);
            r_hat.clone_from(&r);
            rho = 1.0;
            alpha = 1.0;
            omega = 1.0;
            v.iter_mut().for_each(|e| *e = 0.0);
            p.iter_mut().for_each(|e| *e = 0.0);
        }};
    }

    while it < max_iter {
        let rho_new = dot(&r_hat, &r);
        if !rho_new.is_finite() {
            return Err(LinalgError::NonFinite("bicgstab iterate"));
        }
        if rho_new.abs() <= f64::EPSILON * norm2(&r_hat) * norm2(&r) || omega == 0.0 {
            breakdowns += 1;
            if breakdowns > 1 {
                return Err(LinalgError::Breakdown {
                    solver: "bicgstab",
                    iterations: it,
                });
            }
            log::debug!("bicgstab breakdown at iteration {it}; restarting");
            restart!();
            continue;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = p[i] * dinv[i];
        }
        a.mul_vec_into(&y, &mut v);
        let rv = dot(&r_hat, &v);
        if rv == 0.0 || !rv.is_finite() {
            if !rv.is_finite() {
                return Err(LinalgError::NonFinite("bicgstab iterate"));
            }
            breakdowns += 1;
            if breakdowns > 1 {
                return Err(LinalgError::Breakdown {
                    solver: "bicgstab",
                    iterations: it,
                });
            }
            restart!();
            continue;
        }
        alpha = rho / rv;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        it += 1;
        if norm2(&s) <= targets.stop_level(&x) {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            let true_r = residual(a, b, &x);
            let tn = norm2(&true_r);
            if tn <= targets.stop_level(&x) {
                return Ok((x.clone(), targets.stats(it, tn, &x)));
            }
            restart!();
            continue;
        }
        for i in 0..n {
            zv[i] = s[i] * dinv[i];
        }
        a.mul_vec_into(&zv, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * zv[i];
            r[i] = s[i] - omega * t[i];
        }
        let rn = norm2(&r);
        if !rn.is_finite() {
            return Err(LinalgError::NonFinite("bicgstab residual"));
        }
        if rn <= targets.stop_level(&x) {
            let true_r = residual(a, b, &x);
            let tn = norm2(&true_r);
            if tn <= targets.stop_level(&x) {
                return Ok((x.clone(), targets.stats(it, tn, &x)));
            }
            restart!();
        }
    }
    let tn = norm2(&residual(a, b, &x));
    Ok((x.clone(), targets.stats(it, tn, &x)))
}

/// Partial-pivoting Gaussian elimination on a dense copy of `a`.
pub fn dense_lu_solve(a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let n = a.len();
    if n > DENSE_LU_MAX_DIM {
        return Err(LinalgError::TooLarge(n));
    }
    if b.len() != n || a.iter().any(|row| row.len() != n) {
        return Err(LinalgError::Dimension {
            matrix: n,
            vector: b.len(),
        });
    }
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut x = b.to_vec();
    for k in 0..n {
        let (piv, pmax) = (k..n)
            .map(|i| (i, m[i][k].abs()))
            .fold((k, -1.0), |best, c| if c.1 > best.1 { c } else { best });
        if !pmax.is_finite() {
            return Err(LinalgError::NonFinite("dense matrix"));
        }
        if pmax == 0.0 {
            return Err(LinalgError::Singular(k));
        }
        m.swap(k, piv);
        x.swap(k, piv);
        let (upper, lower) = m.split_at_mut(k + 1);
        let pivot_row = &upper[k];
        for (off, row) in lower.iter_mut().enumerate() {
            let f = row[k] / pivot_row[k];
            if f == 0.0 {
                continue;
            }
            for j in k..n {
                row[j] -= f * pivot_row[j];
            }
            x[k + 1 + off] -= f * x[k];
        }
    }
    for k in (0..n).rev() {
        let mut acc = x[k];
        for j in k + 1..n {
            acc -= m[k][j] * x[j];
        }
        x[k] = acc / m[k][k];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }

    fn random_spd(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                a[i][j] = (0..n).map(|k| b[k][i] * b[k][j]).sum::<f64>();
            }
            a[i][i] += 1.0;
        }
        a
    }

    #[test]
    fn identity_and_diagonal() {
        let b = vec![3.0, -1.0, 0.5];
        let id = SparseMatrix::identity(3);
        let (x, st) = cg_solve(&id, &b, &[0.0; 3], 1e-10, 30).unwrap();
        assert_eq!(x, b);
        assert!(st.iterations <= 1 && st.converged);
        let (x, _) = bicgstab_solve(&id, &b, &[0.0; 3], 1e-10, 30).unwrap();
        assert_eq!(x, b);

        let d = SparseMatrix::from_dense(&[vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0], vec![0.0, 0.0, 4.0]]);
        let (x, _) = cg_solve(&d, &[1.0, 2.0, 4.0], &[0.0; 3], 1e-10, 30).unwrap();
        assert_eq!(x, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn cg_matches_dense_oracle() {
        let dense = random_spd(50, 7);
        let a = SparseMatrix::from_dense(&dense);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let exact = dense_lu_solve(&dense, &b).unwrap();
        let (x, st) = cg_solve(&a, &b, &vec![0.0; 50], 1e-12, 5000).unwrap();
        assert!(st.converged);
        assert!(diff_norm(&x, &exact) <= 1e-9);
        let (y, st) = bicgstab_solve(&a, &b, &vec![0.0; 50], 1e-12, 5000).unwrap();
        assert!(st.converged);
        assert!(diff_norm(&x, &y) <= 1e-9);
    }

    #[test]
    fn bicgstab_nonsymmetric_matches_dense_oracle() {
        let n = 50;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            let mut off = 0.0;
            for j in 0..n {
                if i != j && rng.gen_bool(0.3) {
                    dense[i][j] = rng.gen_range(-1.0..1.0);
                    off += f64::abs(dense[i][j]);
                }
            }
            dense[i][i] = off + rng.gen_range(0.5..2.0);
        }
        let a = SparseMatrix::from_dense(&dense);
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let exact = dense_lu_solve(&dense, &b).unwrap();
        let (x, st) = bicgstab_solve(&a, &b, &vec![0.0; n], 1e-12, 500).unwrap();
        assert!(st.converged);
        assert!(diff_norm(&x, &exact) <= 1e-9);
    }

    #[test]
    fn reported_residual_is_reproducible() {
        let dense = random_spd(30, 3);
        let a = SparseMatrix::from_dense(&dense);
        let b: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        let x0: Vec<f64> = (0..30).map(|i| 0.1 * i as f64).collect();
        for solver in [cg_solve, bicgstab_solve] {
            let (x, st) = solver(&a, &b, &x0, 1e-10, 300).unwrap();
            let r0 = norm2(&residual(&a, &b, &x0));
            let r = norm2(&residual(&a, &b, &x));
            assert!((st.final_residual - r / r0).abs() <= 1e-14);
            assert!(st.converged && st.final_residual <= 1e-10);
        }
    }

    #[test]
    fn exact_initial_guess_returns_immediately() {
        let a = SparseMatrix::identity(4);
        let (x, st) = cg_solve(&a, &[1.0; 4], &[1.0; 4], 1e-10, 40).unwrap();
        assert_eq!(x, vec![1.0; 4]);
        assert_eq!(st.iterations, 0);
        assert!(st.converged);
    }

    #[test]
    fn nan_input_is_an_error() {
        let a = SparseMatrix::identity(2);
        assert!(matches!(
            cg_solve(&a, &[f64::NAN, 0.0], &[0.0; 2], 1e-10, 20),
            Err(LinalgError::NonFinite(_))
        ));
        assert!(matches!(
            bicgstab_solve(&a, &[0.0, 1.0], &[f64::INFINITY, 0.0], 1e-10, 20),
            Err(LinalgError::NonFinite(_))
        ));
    }

    #[test]
    fn cg_reports_indefinite_matrix() {
        let b = SparseMatrix::from_dense(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(matches!(
            cg_solve(&b, &[1.0, -1.0], &[0.0; 2], 1e-10, 20),
            Err(LinalgError::Breakdown { solver: "cg", .. })
        ));
    }

    #[test]
    fn nonconvergence_is_reported_not_raised() {
        let dense = random_spd(40, 5);
        let a = SparseMatrix::from_dense(&dense);
        let (_, st) = cg_solve(&a, &vec![1.0; 40], &vec![0.0; 40], 1e-14, 2).unwrap();
        assert_eq!(st.iterations, 2);
        assert!(!st.converged);
    }

    #[test]
    fn dense_lu_small_cases() {
        assert_eq!(dense_lu_solve(&[vec![2.0]], &[4.0]).unwrap(), vec![2.0]);
        // Permutation: x = Pᵀ b.
        let p = vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]];
        assert_eq!(dense_lu_solve(&p, &[1.0, 2.0, 3.0]).unwrap(), vec![3.0, 1.0, 2.0]);
        assert_eq!(
            dense_lu_solve(&[vec![1.0, 2.0], vec![2.0, 4.0]], &[1.0, 1.0]),
            Err(LinalgError::Singular(1))
        );
        assert_eq!(
            dense_lu_solve(&vec![vec![0.0; 2001]; 2001], &[0.0; 2001]),
            Err(LinalgError::TooLarge(2001))
        );
    }

    #[test]
    fn dense_lu_hilbert_against_rational_solution() {
        // H₄ x = 1 has the integer solution (−4, 60, −180, 140).
        let h: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| 1.0 / (i + j + 1) as f64).collect()).collect();
        let x = dense_lu_solve(&h, &[1.0; 4]).unwrap();
        let exact = [-4.0, 60.0, -180.0, 140.0];
        assert!(diff_norm(&x, &exact) / norm2(&exact) <= 1e-9);
    }

    #[test]
    fn dense_lu_residual_small_on_well_conditioned() {
        let dense = random_spd(20, 13);
        let b: Vec<f64> = (0..20).map(|i| (i as f64 * 0.3).cos()).collect();
        let x = dense_lu_solve(&dense, &b).unwrap();
        let a = SparseMatrix::from_dense(&dense);
        assert!(norm2(&residual(&a, &b, &x)) <= 1e-12 * norm2(&b));
    }
}

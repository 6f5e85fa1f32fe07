//! Eigenvalues and paired left/right eigenvectors of a real square matrix.
//!
//! The real Schur form from nalgebra is rotated into a complex upper
//! triangular form, right eigenvectors come from back-substitution, and left
//! eigenvectors are the rows of `V⁻¹`, so `w_kᵀ v_k = 1` holds by construction.

use std::cmp::Ordering;

use nalgebra::{DMatrix, Schur};
use num_complex::Complex64;

use super::ModalDecomposition;
use crate::error::{Error, Result};

const SCHUR_MAX_ITER: usize = 10_000;
/// Eigenvector condition `‖w‖‖v‖` above which a warning is attached.
pub const WARN_CONDITION: f64 = 1e10;
/// Above this the matrix is treated as defective.
pub const DEFECTIVE_CONDITION: f64 = 1e13;

fn real_schur(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !a.is_square() {
        return Err(Error::InvalidInput(format!("matrix is {}x{}, not square", a.nrows(), a.ncols())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("matrix has non-finite entries".into()));
    }
    Schur::try_new(a.clone(), f64::EPSILON, SCHUR_MAX_ITER)
        .map(|s| s.unpack())
        .ok_or_else(|| Error::Eigen("Schur iteration did not converge".into()))
}

/// Spectrum only.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    let (_, t) = real_schur(a)?;
    let (_, tc) = complex_schur(&DMatrix::identity(a.nrows(), a.nrows()), &t);
    Ok((0..a.nrows()).map(|i| tc[(i, i)]).collect())
}

fn to_complex(x: &DMatrix<f64>) -> DMatrix<Complex64> {
    x.map(|v| Complex64::new(v, 0.0))
}

/// Eigenvalues of a 2×2 block `[a b; c d]`.
fn block_eigs(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> (Complex64, Complex64) {
    let half_tr = (a + d) * 0.5;
    let disc = ((a - d) * (a - d) * 0.25 + b * c).sqrt();
    (half_tr + disc, half_tr - disc)
}

/// Unitary rotations that triangularize the 2×2 blocks of a real Schur form.
fn complex_schur(q: &DMatrix<f64>, t: &DMatrix<f64>) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
    let n = t.nrows();
    let mut u = to_complex(q);
    let mut tc = to_complex(t);
    for m in (1..n).rev() {
        let sub = tc[(m, m - 1)];
        if sub == Complex64::new(0.0, 0.0) {
            continue;
        }
        let (mu, _) = block_eigs(tc[(m - 1, m - 1)], tc[(m - 1, m)], tc[(m, m - 1)], tc[(m, m)]);
        let mu = mu - tc[(m, m)];
        let r = mu.norm().hypot(sub.norm());
        let c = mu / r;
        let s = sub / r;
        // G = [c̄ s̄; −s c]; apply G from the left and Gᴴ from the right.
        for j in (m - 1)..n {
            let x = tc[(m - 1, j)];
            let y = tc[(m, j)];
            tc[(m - 1, j)] = c.conj() * x + s.conj() * y;
            tc[(m, j)] = -s * x + c * y;
        }
        for i in 0..=m {
            let x = tc[(i, m - 1)];
            let y = tc[(i, m)];
            tc[(i, m - 1)] = x * c + y * s;
            tc[(i, m)] = -x * s.conj() + y * c.conj();
        }
        for i in 0..n {
            let x = u[(i, m - 1)];
            let y = u[(i, m)];
            u[(i, m - 1)] = x * c + y * s;
            u[(i, m)] = -x * s.conj() + y * c.conj();
        }
        tc[(m, m - 1)] = Complex64::new(0.0, 0.0);
    }
    (u, tc)
}

/// Descending by real part (quantized to `quantum` so conjugate pairs tie),
/// then by imaginary part.
fn order(a: &Complex64, b: &Complex64, quantum: f64) -> Ordering {
    let q = |x: f64| (x / quantum).round();
    q(b.re).total_cmp(&q(a.re)).then(b.im.total_cmp(&a.im))
}

/// Scale so the largest-magnitude entry is exactly 1.
fn inf_normalize(v: &mut [Complex64]) {
    let pivot = v.iter().copied().max_by(|a, b| a.norm().total_cmp(&b.norm()));
    if let Some(p) = pivot.filter(|p| p.norm() > 0.0) {
        v.iter_mut().for_each(|x| *x /= p);
    }
}

pub fn eigen_decompose(a: &DMatrix<f64>) -> Result<ModalDecomposition> {
    let n = a.nrows();
    if n == 0 {
        return Err(Error::InvalidInput("empty matrix".into()));
    }
    let (q, t) = real_schur(a)?;
    let (u, tc) = complex_schur(&q, &t);
    let scale = tc.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let small = f64::EPSILON * scale;

    let mut order_idx: Vec<usize> = (0..n).collect();
    order_idx.sort_by(|&i, &j| order(&tc[(i, i)], &tc[(j, j)], 1e-10 * scale).then(i.cmp(&j)));

    let mut eigenvalues = Vec::with_capacity(n);
    let mut right = DMatrix::<Complex64>::zeros(n, n);
    for (col, &k) in order_idx.iter().enumerate() {
        let lambda = tc[(k, k)];
        let mut x = vec![Complex64::new(0.0, 0.0); n];
        x[k] = Complex64::new(1.0, 0.0);
        for i in (0..k).rev() {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in (i + 1)..=k {
                acc += tc[(i, j)] * x[j];
            }
            let mut denom = tc[(i, i)] - lambda;
            if denom.norm() < small {
                denom = Complex64::new(small, 0.0);
            }
            x[i] = -acc / denom;
        }
        let mut v: Vec<Complex64> = (0..n).map(|r| (0..=k).map(|j| u[(r, j)] * x[j]).sum()).collect();
        inf_normalize(&mut v);
        right.set_column(col, &nalgebra::DVector::from_vec(v));
        eigenvalues.push(lambda);
    }

    let inv = right.clone().try_inverse().ok_or_else(|| Error::Eigen("eigenvector matrix is singular (defective matrix)".into()))?;
    let left = inv.transpose();

    let mut condition = Vec::with_capacity(n);
    let mut warnings = Vec::new();
    for k in 0..n {
        let kappa = left.column(k).norm() * right.column(k).norm();
        if !(kappa <= DEFECTIVE_CONDITION) {
            let resid = (a.map(|v| Complex64::new(v, 0.0)) * right.column(k) - right.column(k) * eigenvalues[k]).norm();
            return Err(Error::Eigen(format!(
                "matrix is defective or nearly so at eigenvalue {:.6} (condition {kappa:.3e}, residual {resid:.3e})",
                eigenvalues[k]
            )));
        }
        if kappa > WARN_CONDITION {
            warnings.push(format!("eigenvalue {:.6} is ill-conditioned (condition {kappa:.3e})", eigenvalues[k]));
        }
        condition.push(kappa);
    }

    let tol = 1e-9 * scale;
    let conjugate = eigenvalues
        .iter()
        .map(|l| l.im < -tol && eigenvalues.iter().any(|o| (o - l.conj()).norm() <= 1e-6 * scale.max(1.0)))
        .collect();

    Ok(ModalDecomposition { eigenvalues, right, left, conjugate, condition, warnings })
}

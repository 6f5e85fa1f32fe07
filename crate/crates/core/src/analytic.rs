//! Exact linearization of the COI model and the Lyapunov covariance oracle.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{kron, symmetrize};
use crate::modal;
use crate::netmodel::ReducedNetwork;
use crate::swingsim::{CoiModel, Equilibrium};

/// `∂Pe/∂δ` over all machines, ignoring the COI correction. Rows sum to zero.
pub fn pe_jacobian_full(delta: &[f64], net: &ReducedNetwork) -> DMatrix<f64> {
    let n = net.n();
    let mut j = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut diag = 0.0;
        for k in 0..n {
            if k == i {
                continue;
            }
            let (s, c) = (delta[i] - delta[k]).sin_cos();
            let v = net.e[i] * net.e[k] * (net.g[(i, k)] * s - net.b[(i, k)] * c);
            j[(i, k)] = v;
            diag -= v;
        }
        j[(i, i)] = diag;
    }
    j
}

/// `∂Pe/∂δ̃ + (M/M_T)·∂P_coi/∂δ̃` over all machines, where
/// `∂P_coi/∂δ̃_j = −Σ_i ∂Pe_i/∂δ̃_j`.
pub fn coi_jacobian_full(delta: &[f64], model: &CoiModel) -> DMatrix<f64> {
    let j = pe_jacobian_full(delta, &model.network);
    let mt = model.m_total();
    let col_sums = j.row_sum();
    DMatrix::from_fn(j.nrows(), j.ncols(), |r, c| j[(r, c)] - model.m[r] / mt * col_sums[c])
}

/// COI Jacobian `K` over the independent machines. The dependent angle is a
/// function of the others, `∂δ̃_r/∂δ̃_j = −M_j/M_r`, and is folded in.
pub fn jacobian_coi(delta: &DVector<f64>, model: &CoiModel) -> DMatrix<f64> {
    let f = coi_jacobian_full(delta.as_slice(), model);
    let r = model.reference();
    let idx = model.independent();
    let mr = model.m[r];
    DMatrix::from_fn(idx.len(), idx.len(), |a, b| {
        let (i, j) = (idx[a], idx[b]);
        f[(i, j)] - f[(i, r)] * model.m[j] / mr
    })
}

/// `A = [0 I; −M⁻¹K −M⁻¹D]` over the independent machines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMatrix {
    pub a: DMatrix<f64>,
}

impl StateMatrix {
    pub fn n_indep(&self) -> usize {
        self.a.nrows() / 2
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// The `−M⁻¹K` block.
    pub fn j_block(&self) -> DMatrix<f64> {
        let k = self.n_indep();
        self.a.view((k, 0), (k, k)).into_owned()
    }

    /// Largest real part of the spectrum; NaN when the eigensolver fails.
    pub fn max_real_eigenvalue(&self) -> f64 {
        modal::eigenvalues(&self.a)
            .map(|ev| ev.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max))
            .unwrap_or(f64::NAN)
    }
}

pub fn state_matrix(k: &DMatrix<f64>, m: &DVector<f64>, d: &DVector<f64>) -> StateMatrix {
    let n = k.nrows();
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        a[(i, n + i)] = 1.0;
        a[(n + i, n + i)] = -d[i] / m[i];
        for j in 0..n {
            a[(n + i, j)] = -k[(i, j)] / m[i];
        }
    }
    StateMatrix { a }
}

/// `B = [0; M⁻¹Σ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputMatrix {
    pub b: DMatrix<f64>,
}

pub fn input_matrix(m: &DVector<f64>, sigma: &DVector<f64>) -> InputMatrix {
    let n = m.len();
    let mut b = DMatrix::zeros(2 * n, n);
    for i in 0..n {
        b[(n + i, i)] = sigma[i] / m[i];
    }
    InputMatrix { b }
}

/// Analytic `K`, `A` and `B` of a model at an equilibrium.
pub fn linearize(model: &CoiModel, eq: &Equilibrium) -> (DMatrix<f64>, StateMatrix, InputMatrix) {
    let k = jacobian_coi(&eq.delta, model);
    let a = state_matrix(&k, &model.m_indep(), &model.d_indep());
    let b = input_matrix(&model.m_indep(), &model.sigma_indep());
    (k, a, b)
}

/// Stationary covariance: solves `AC + CAᵀ = −BBᵀ` by vectorization.
pub fn solve_lyapunov(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::InvalidInput("solve_lyapunov: dimension mismatch".into()));
    }
    let eig = modal::eigenvalues(a)?;
    let max_real = eig.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
    if !(max_real < 0.0) {
        return Err(Error::NotHurwitz { max_real });
    }
    let q = b * b.transpose();
    let eye = DMatrix::identity(n, n);
    let op = kron(&eye, a) + kron(a, &eye);
    let rhs = DVector::from_iterator(n * n, q.iter().map(|v| -v));
    let x = op.lu().solve(&rhs).ok_or(Error::Singular("Lyapunov operator"))?;
    Ok(symmetrize(&DMatrix::from_column_slice(n, n, x.as_slice())))
}

/// `‖AC + CAᵀ + BBᵀ‖_F`.
pub fn lyapunov_residual(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> f64 {
    (a * c + c * a.transpose() + b * b.transpose()).norm()
}

/// Closed-form covariance predictions: `C_δω = 0`, `C_ωω = ½M⁻¹D⁻¹Σ²`,
/// `C_δδ = K⁻¹M C_ωω`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoreticalCovariances {
    pub c_dd: DMatrix<f64>,
    pub c_dw: DMatrix<f64>,
    pub c_ww: DMatrix<f64>,
}

pub fn predicted_covariances(
    k: &DMatrix<f64>,
    m: &DVector<f64>,
    d: &DVector<f64>,
    sigma: &DVector<f64>,
) -> Result<TheoreticalCovariances> {
    let n = k.nrows();
    if d.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::InvalidInput("closed-form covariances need D > 0".into()));
    }
    let c_ww = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| 0.5 * sigma[i] * sigma[i] / (m[i] * d[i])));
    let k_inv = k.clone().try_inverse().ok_or(Error::Singular("Jacobian K"))?;
    let c_dd = k_inv * DMatrix::from_diagonal(m) * &c_ww;
    Ok(TheoreticalCovariances { c_dd, c_dw: DMatrix::zeros(n, n), c_ww })
}

pub fn theoretical_covariances(model: &CoiModel, eq: &Equilibrium) -> Result<TheoreticalCovariances> {
    let k = jacobian_coi(&eq.delta, model);
    predicted_covariances(&k, &model.m_indep(), &model.d_indep(), &model.sigma_indep())
}

#[cfg(test)]
mod tests;

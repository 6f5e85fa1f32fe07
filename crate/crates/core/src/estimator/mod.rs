//! Covariance-based estimation of the COI Jacobian and generator damping.
//!
//! From the stationary relations `C_ωω = ½M⁻¹D⁻¹Σ²` and `C_δδ = K⁻¹M C_ωω`
//! the Jacobian follows as `K★ = M C_ωω C_δδ⁻¹` and the damping as
//! `D★ = ½ Σ² M⁻¹ C_ωω⁻¹`.

mod streaming;

pub use streaming::SlidingCovariance;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::analytic::{state_matrix, StateMatrix};
use crate::error::{Error, Result};
use crate::linalg::{condition_number, symmetrize};
use crate::trajectory::Trajectory;

/// Largest acceptable condition number of `C_δδ`.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceBlocks {
    pub c_dd: DMatrix<f64>,
    pub c_dw: DMatrix<f64>,
    pub c_ww: DMatrix<f64>,
    /// `[t_start, t_end]` in seconds.
    pub window: (f64, f64),
    pub samples: usize,
}

impl CovarianceBlocks {
    /// Split a joint `[δ̃, ω̃]` covariance into blocks; diagonal blocks are symmetrized.
    pub fn from_joint(c: &DMatrix<f64>, window: (f64, f64), samples: usize) -> Self {
        let k = c.nrows() / 2;
        Self {
            c_dd: symmetrize(&c.view((0, 0), (k, k)).into_owned()),
            c_dw: c.view((0, k), (k, k)).into_owned(),
            c_ww: symmetrize(&c.view((k, k), (k, k)).into_owned()),
            window,
            samples,
        }
    }

    pub fn n_indep(&self) -> usize {
        self.c_dd.nrows()
    }
}

/// Sample covariance (divisor `N − 1`) of equal-length rows.
pub fn batch_covariance<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<DMatrix<f64>> {
    let rows: Vec<&[f64]> = rows.into_iter().collect();
    let n = rows.len();
    if n < 2 {
        return Err(Error::InsufficientSamples { have: n, need: 2 });
    }
    let dim = rows[0].len();
    let mut mean = vec![0.0; dim];
    for r in &rows {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut c = DMatrix::zeros(dim, dim);
    let mut dev = vec![0.0; dim];
    for r in &rows {
        for (d, (v, m)) in dev.iter_mut().zip(r.iter().zip(&mean)) {
            *d = v - m;
        }
        for j in 0..dim {
            for i in j..dim {
                c[(i, j)] += dev[i] * dev[j];
            }
        }
    }
    for j in 0..dim {
        for i in j..dim {
            let v = c[(i, j)] / (n - 1) as f64;
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    Ok(c)
}

/// Windowed covariance blocks with window-mean removal.
pub fn sample_covariance(traj: &Trajectory, t_start: f64, t_end: f64) -> Result<CovarianceBlocks> {
    let rows = traj.window_rows(t_start, t_end)?;
    let need = traj.width().max(2);
    if rows.len() < need {
        return Err(Error::InsufficientSamples { have: rows.len(), need });
    }
    let samples = rows.len();
    let c = batch_covariance(rows.map(|i| traj.row(i)))?;
    Ok(CovarianceBlocks::from_joint(&c, (t_start, t_end), samples))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianEstimate {
    pub k: DMatrix<f64>,
    /// Condition number of `C_δδ`.
    pub condition: f64,
    pub window: (f64, f64),
    pub samples: usize,
}

/// `K★ = M C_ωω C_δδ⁻¹`; `m` holds the independent-machine inertias.
pub fn estimate_jacobian(m: &DVector<f64>, cov: &CovarianceBlocks) -> Result<JacobianEstimate> {
    let n = cov.n_indep();
    if m.len() != n {
        return Err(Error::InvalidInput(format!("inertia vector has {} entries, covariance {n}", m.len())));
    }
    let condition = condition_number(&cov.c_dd);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned { what: "C_dd", cond: condition });
    }
    // Solve K★ C_δδ = M C_ωω through the transpose.
    let rhs = (DMatrix::from_diagonal(m) * &cov.c_ww).transpose();
    let kt = cov.c_dd.transpose().lu().solve(&rhs).ok_or(Error::Singular("C_dd"))?;
    Ok(JacobianEstimate { k: kt.transpose(), condition, window: cov.window, samples: cov.samples })
}

/// State matrix built from an estimated Jacobian.
pub fn assemble_estimated_state_matrix(k: &DMatrix<f64>, m: &DVector<f64>, d: &DVector<f64>) -> StateMatrix {
    state_matrix(k, m, d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DampingEstimate {
    /// Diagonal of `D★`, one entry per independent machine.
    pub d: DVector<f64>,
    pub full: DMatrix<f64>,
    /// `‖offdiag(D★)‖_F / ‖diag(D★)‖_F`.
    pub off_diagonal_ratio: f64,
    pub condition: f64,
}

/// `D★ = ½ Σ² M⁻¹ C_ωω⁻¹`, reported as its diagonal.
pub fn estimate_damping(m: &DVector<f64>, sigma: &DVector<f64>, c_ww: &DMatrix<f64>) -> Result<DampingEstimate> {
    let n = c_ww.nrows();
    if m.len() != n || sigma.len() != n {
        return Err(Error::InvalidInput("damping estimate: dimension mismatch".into()));
    }
    let condition = condition_number(c_ww);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned { what: "C_ww", cond: condition });
    }
    let inv = c_ww.clone().try_inverse().ok_or(Error::Singular("C_ww"))?;
    let scale = DVector::from_fn(n, |i, _| 0.5 * sigma[i] * sigma[i] / m[i]);
    let full = DMatrix::from_diagonal(&scale) * inv;
    let d = full.diagonal();
    let off = (&full - DMatrix::from_diagonal(&d)).norm();
    Ok(DampingEstimate { off_diagonal_ratio: off / d.norm(), d, full, condition })
}

/// `‖X★ − X‖_F / ‖X‖_F`.
pub fn frobenius_relative_error(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    if estimate.shape() != truth.shape() {
        return Err(Error::InvalidInput("frobenius_relative_error: shape mismatch".into()));
    }
    let denom = truth.norm();
    if denom == 0.0 {
        return Err(Error::InvalidInput("reference matrix has zero norm".into()));
    }
    Ok((estimate - truth).norm() / denom)
}

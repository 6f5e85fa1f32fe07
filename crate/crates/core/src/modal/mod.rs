//! Modal analysis of state matrices: spectrum, participation factors,
//! critical-eigenvalue monitoring, the saddle-node normal vector and the
//! re-dispatch plan derived from it.

mod eigen;

pub use eigen::{eigen_decompose, eigenvalues, DEFECTIVE_CONDITION, WARN_CONDITION};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::Event;
use crate::swingsim::CoiModel;

/// Eigenvalues sorted by real part then imaginary part (both descending),
/// with right eigenvectors `v_k` (columns, ∞-normalized) and left
/// eigenvectors `w_k` (columns) scaled so that `w_kᵀ v_k = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalDecomposition {
    pub eigenvalues: Vec<Complex64>,
    pub right: DMatrix<Complex64>,
    pub left: DMatrix<Complex64>,
    /// True for the negative-frequency member of a conjugate pair.
    pub conjugate: Vec<bool>,
    /// `‖w_k‖·‖v_k‖`, the eigenvalue condition number.
    pub condition: Vec<f64>,
    pub warnings: Vec<String>,
}

impl ModalDecomposition {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// `max_k ‖A v_k − λ_k v_k‖ / ‖A‖`.
    pub fn residual(&self, a: &DMatrix<f64>) -> f64 {
        let ac = a.map(|v| Complex64::new(v, 0.0));
        let norm = a.norm().max(f64::MIN_POSITIVE);
        (0..self.len())
            .map(|k| (&ac * self.right.column(k) - self.right.column(k) * self.eigenvalues[k]).norm() / norm)
            .fold(0.0, f64::max)
    }

    /// `max_k ‖w_kᵀ A − λ_k w_kᵀ‖ / ‖A‖`.
    pub fn left_residual(&self, a: &DMatrix<f64>) -> f64 {
        let ac = a.map(|v| Complex64::new(v, 0.0));
        let norm = a.norm().max(f64::MIN_POSITIVE);
        (0..self.len())
            .map(|k| {
                let w = self.left.column(k);
                (ac.transpose() * w - w * self.eigenvalues[k]).norm() / norm
            })
            .fold(0.0, f64::max)
    }

    /// `max_{j≠k} |w_jᵀ v_k|` and `max_k |w_kᵀ v_k − 1|`.
    pub fn biorthogonality_error(&self) -> (f64, f64) {
        let g = self.left.transpose() * &self.right;
        let mut off = 0.0f64;
        let mut diag = 0.0f64;
        for j in 0..self.len() {
            for k in 0..self.len() {
                if j == k {
                    diag = diag.max((g[(j, k)] - Complex64::new(1.0, 0.0)).norm());
                } else {
                    off = off.max(g[(j, k)].norm());
                }
            }
        }
        (off, diag)
    }
}

/// `p_km = |w_{m,k} v_{m,k}|` (state `k`, mode `m`), each column summing to 1.
pub fn participation_factors(md: &ModalDecomposition) -> DMatrix<f64> {
    let n = md.len();
    let mut p = DMatrix::from_fn(n, n, |k, m| (md.left[(k, m)] * md.right[(k, m)]).norm());
    for mut col in p.column_iter_mut() {
        let s = col.sum();
        if s > 0.0 {
            col /= s;
        }
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeRow {
    /// Position in the sorted spectrum.
    pub index: usize,
    pub re: f64,
    pub im: f64,
    pub frequency_hz: f64,
    /// `−Re λ / |λ|`.
    pub damping_ratio: f64,
}

/// One row per mode; conjugate pairs appear once, with positive frequency.
pub fn mode_table(md: &ModalDecomposition) -> Vec<ModeRow> {
    md.eigenvalues
        .iter()
        .enumerate()
        .filter(|&(k, _)| !md.conjugate[k])
        .map(|(index, l)| ModeRow {
            index,
            re: l.re,
            im: l.im,
            frequency_hz: l.im.abs() / std::f64::consts::TAU,
            damping_ratio: if l.norm() > 0.0 { -l.re / l.norm() } else { 0.0 },
        })
        .collect()
}

/// Index and value of the eigenvalue with the largest real part; ties (to a
/// relative `1e-10`) go to the larger `|Im|`, then the lower index.
pub fn critical_eigenvalue(md: &ModalDecomposition) -> (usize, Complex64) {
    let scale = md.eigenvalues.iter().map(|l| l.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let tol = 1e-10 * scale;
    let mut best = 0;
    for (k, l) in md.eigenvalues.iter().enumerate().skip(1) {
        let b = md.eigenvalues[best];
        if l.re > b.re + tol || ((l.re - b.re).abs() <= tol && l.im.abs() > b.im.abs() + tol) {
            best = k;
        }
    }
    (best, md.eigenvalues[best])
}

/// Least-damped oscillatory mode (positive frequency member), if any.
pub fn least_damped_pair(md: &ModalDecomposition, min_freq_hz: f64) -> Option<(usize, Complex64)> {
    md.eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, l)| l.im / std::f64::consts::TAU > min_freq_hz)
        .max_by(|a, b| a.1.re.total_cmp(&b.1.re))
        .map(|(k, l)| (k, *l))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MachineComponent {
    /// Generator id.
    pub machine: usize,
    /// Angle component of the normalized eigenvector (real part).
    pub value: f64,
    pub magnitude: f64,
}

/// Rank machines by the angle block of the right eigenvector of mode `k`.
/// The vector is ∞-normalized over the angle block with its dominant entry
/// made positive; the dependent machine's component follows from the COI
/// relation.
pub fn unstable_machine_ranking(md: &ModalDecomposition, k: usize, model: &CoiModel) -> Vec<MachineComponent> {
    let ni = model.n_indep();
    let v = md.right.column(k);
    let mut comps: Vec<Complex64> = (0..ni).map(|i| v[i]).collect();
    let r = model.reference();
    let dep = -model.independent().iter().zip(&comps).map(|(&i, c)| c * model.m[i]).sum::<Complex64>() / model.m[r];
    let mut labels = model.indep_labels();
    labels.push(model.labels()[r]);
    comps.push(dep);
    let pivot = comps.iter().copied().max_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap_or(Complex64::new(1.0, 0.0));
    let scale = if pivot.norm() > 0.0 { pivot } else { Complex64::new(1.0, 0.0) };
    let mut out: Vec<MachineComponent> = labels
        .into_iter()
        .zip(comps)
        .map(|(machine, c)| {
            let z = c / scale;
            MachineComponent { machine, value: z.re, magnitude: z.norm() }
        })
        .collect();
    out.sort_by(|a, b| b.magnitude.total_cmp(&a.magnitude).then(a.machine.cmp(&b.machine)));
    out
}

/// Normal vector to the saddle-node surface in the space of independent
/// mechanical powers: `n = (∂h/∂Pm)ᵀ w` with
/// `∂ω̃̇_i/∂Pm_j = (δ_ij − M_i/M_T)/M_i`. Unit length, dominant entry positive.
pub fn normal_vector(model: &CoiModel, md: &ModalDecomposition, k: usize) -> Result<DVector<f64>> {
    let lambda = md.eigenvalues[k];
    if lambda.im.abs() > 1e-9 * lambda.norm().max(1.0) {
        return Err(Error::ComplexCritical { re: lambda.re, im: lambda.im });
    }
    let ni = model.n_indep();
    let w = md.left.column(k);
    // Rotate w onto the real axis (it is real up to a phase for real λ).
    let pivot = w.iter().copied().max_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap_or(Complex64::new(1.0, 0.0));
    let phase = if pivot.norm() > 0.0 { pivot / pivot.norm() } else { Complex64::new(1.0, 0.0) };
    let w_omega: Vec<f64> = (0..ni).map(|i| (w[ni + i] / phase).re).collect();
    let m = model.m_indep();
    let total: f64 = w_omega.iter().sum::<f64>() / model.m_total();
    let mut n = DVector::from_fn(ni, |j, _| w_omega[j] / m[j] - total);
    let norm = n.norm();
    if norm == 0.0 {
        return Err(Error::Singular("normal vector"));
    }
    n /= norm;
    let dominant = n.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(1.0);
    if dominant < 0.0 {
        n = -n;
    }
    Ok(n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedispatchPlan {
    /// `(generator id, ΔPm)` for every machine, in model order.
    pub delta_pm: Vec<(usize, f64)>,
    pub slack: usize,
    pub step: f64,
    /// Extra power assigned to the slack, `step·Σn_i`.
    pub slack_pickup: f64,
}

impl RedispatchPlan {
    pub fn total(&self) -> f64 {
        self.delta_pm.iter().map(|(_, p)| p).sum()
    }

    pub fn delta_for(&self, machine: usize) -> Option<f64> {
        self.delta_pm.iter().find(|(m, _)| *m == machine).map(|(_, p)| *p)
    }

    /// The plan as `set_pm` events against `model`.
    pub fn events(&self, model: &CoiModel) -> Result<Vec<Event>> {
        self.delta_pm
            .iter()
            .map(|&(gen, dp)| Ok(Event::SetPm { gen, value: model.pm[model.position(gen)?] + dp }))
            .collect()
    }

    pub fn apply(&self, model: &CoiModel) -> Result<CoiModel> {
        self.events(model)?.iter().try_fold(model.clone(), |m, e| m.apply_event(e))
    }
}

/// Move the independent machines by `−step·n` and let `slack` absorb the
/// imbalance. `machines` are the ids matching `n`; `all` lists every
/// generator id. Without an explicit slack the machine with the smallest
/// `|n_i|` is used.
pub fn redispatch_plan(n: &DVector<f64>, machines: &[usize], all: &[usize], step: f64, slack: Option<usize>) -> Result<RedispatchPlan> {
    if n.len() != machines.len() {
        return Err(Error::InvalidInput("normal vector and machine list differ in length".into()));
    }
    if !step.is_finite() {
        return Err(Error::InvalidInput("step must be finite".into()));
    }
    let slack = match slack {
        Some(s) => s,
        None => machines[n.iamin()],
    };
    if !all.contains(&slack) {
        return Err(Error::UnknownGenerator(slack));
    }
    let slack_pickup = step * n.sum();
    let mut delta_pm: Vec<(usize, f64)> = all.iter().map(|&g| (g, 0.0)).collect();
    for (&g, ni) in machines.iter().zip(n.iter()) {
        let slot = delta_pm.iter_mut().find(|(m, _)| *m == g).ok_or(Error::UnknownGenerator(g))?;
        slot.1 -= step * ni;
    }
    delta_pm.iter_mut().find(|(m, _)| *m == slack).expect("slack checked above").1 += slack_pickup;
    Ok(RedispatchPlan { delta_pm, slack, step, slack_pickup })
}

#[cfg(test)]
mod tests;

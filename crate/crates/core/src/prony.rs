//! Least-squares Prony analysis: fit a sum of damped complex exponentials to a
//! uniformly sampled signal and pair the result with modal eigenvalues.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modal::{self, ModalDecomposition};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PronyConfig {
    pub order: usize,
    /// Subtract the sample mean before fitting.
    pub remove_mean: bool,
    /// Average non-overlapping blocks of this many samples first (1 = off).
    pub decimate: usize,
}

impl PronyConfig {
    pub fn new(order: usize) -> Self {
        Self { order, remove_mean: true, decimate: 1 }
    }

    pub fn with_mean_removal(mut self, on: bool) -> Self {
        self.remove_mean = on;
        self
    }

    pub fn with_decimation(mut self, factor: usize) -> Self {
        self.decimate = factor;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PronyMode {
    /// Continuous-time pole, 1/s.
    pub lambda: Complex64,
    /// Complex residue at the first fitted sample.
    pub residue: Complex64,
    pub amplitude: f64,
    pub phase: f64,
    /// `Σ_n |h zⁿ|²` over the fitted samples.
    pub energy: f64,
}

impl PronyMode {
    pub fn frequency_hz(&self) -> f64 {
        self.lambda.im.abs() / std::f64::consts::TAU
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PronyResult {
    /// Sorted by energy, largest first.
    pub modes: Vec<PronyMode>,
    pub order: usize,
    /// Sample period of the fitted (possibly decimated) series.
    pub dt: f64,
    /// Mean removed before fitting; added back by [`reconstruct`].
    pub offset: f64,
    pub n_samples: usize,
    /// RMS of the residual over RMS of the mean-removed fitted series.
    pub rms_error: f64,
}

impl PronyResult {
    /// Copy keeping only the `k` most energetic modes.
    pub fn truncated(&self, k: usize) -> Self {
        let mut out = self.clone();
        out.modes.truncate(k);
        out
    }

    /// Sample times of the fitted series, starting at zero.
    pub fn time_grid(&self) -> Vec<f64> {
        (0..self.n_samples).map(|i| i as f64 * self.dt).collect()
    }
}

/// The series actually fitted: optional block averaging, then optional mean
/// removal. Returns `(series, dt, offset)`.
pub fn preprocess(signal: &[f64], dt: f64, config: &PronyConfig) -> Result<(Vec<f64>, f64, f64)> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput("sample period must be positive".into()));
    }
    if config.decimate == 0 {
        return Err(Error::InvalidInput("decimation factor must be at least 1".into()));
    }
    let f = config.decimate;
    let series: Vec<f64> = if f == 1 {
        signal.to_vec()
    } else {
        signal.chunks_exact(f).map(|c| c.iter().sum::<f64>() / f as f64).collect()
    };
    let offset = if config.remove_mean && !series.is_empty() { series.iter().sum::<f64>() / series.len() as f64 } else { 0.0 };
    Ok((series.into_iter().map(|v| v - offset).collect(), dt * f as f64, offset))
}

pub fn prony_fit(signal: &[f64], dt: f64, config: &PronyConfig) -> Result<PronyResult> {
    let p = config.order;
    if p == 0 {
        return Err(Error::InvalidInput("model order must be at least 1".into()));
    }
    let (x, dt_eff, offset) = preprocess(signal, dt, config)?;
    let n = x.len();
    if n < 2 * p + 1 {
        return Err(Error::InsufficientSamples { have: n, need: 2 * p + 1 });
    }

    // Linear prediction x[k] = Σ_j a_j x[k−j], least squares over k = p..n−1.
    let rows = n - p;
    let lp = DMatrix::from_fn(rows, p, |r, c| x[r + p - 1 - c]);
    let rhs = DVector::from_fn(rows, |r, _| x[r + p]);
    let svd = lp.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * rows.max(p) as f64 * f64::EPSILON * 10.0;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < p {
        return Err(Error::RankDeficient { rank, order: p });
    }
    let a = svd.solve(&rhs, tol).map_err(|e| Error::InvalidInput(e.to_string()))?;

    // Companion matrix of zᵖ − a₁zᵖ⁻¹ − … − aₚ.
    let mut comp = DMatrix::zeros(p, p);
    for j in 0..p {
        comp[(0, j)] = a[j];
    }
    for i in 1..p {
        comp[(i, i - 1)] = 1.0;
    }
    let roots: Vec<Complex64> = modal::eigenvalues(&comp)?.into_iter().filter(|z| z.norm() > 0.0).collect();
    if roots.is_empty() {
        return Err(Error::RankDeficient { rank: 0, order: p });
    }

    // Residues from the Vandermonde system Σ_k h_k z_kⁿ = x[n].
    let m = roots.len();
    let vand = DMatrix::from_fn(n, m, |r, c| roots[c].powu(r as u32));
    let xc = DVector::from_iterator(n, x.iter().map(|&v| Complex64::new(v, 0.0)));
    let h = vand
        .clone()
        .svd(true, true)
        .solve(&xc, 1e-14)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let (roots, h) = polish(roots, h, &xc);

    let mut modes: Vec<PronyMode> = roots
        .iter()
        .zip(h.iter())
        .map(|(&z, &res)| {
            let energy = (0..n).map(|k| (res * z.powu(k as u32)).norm_sqr()).sum();
            PronyMode { lambda: z.ln() / dt_eff, residue: res, amplitude: res.norm(), phase: res.arg(), energy }
        })
        .collect();
    modes.sort_by(|a, b| b.energy.total_cmp(&a.energy).then(b.lambda.im.total_cmp(&a.lambda.im)));

    let mut out = PronyResult { modes, order: p, dt: dt_eff, offset, n_samples: n, rms_error: 0.0 };
    out.rms_error = relative_rms(&x, &reconstruct_zero_mean(&out, &out.time_grid()));
    Ok(out)
}

/// Gauss-Newton refinement of poles and residues for near-exact fits.
/// Oversampled signals make the prediction step lose digits; noisy fits are
/// left untouched and a step is kept only when it lowers the residual.
fn polish(mut z: Vec<Complex64>, mut h: DVector<Complex64>, x: &DVector<Complex64>) -> (Vec<Complex64>, DVector<Complex64>) {
    const NEAR_EXACT: f64 = 1e-4;
    let n = x.len();
    let m = z.len();
    let residual = |z: &[Complex64], h: &DVector<Complex64>| {
        DVector::from_fn(n, |k, _| x[k] - z.iter().zip(h.iter()).map(|(zj, hj)| hj * zj.powu(k as u32)).sum::<Complex64>())
    };
    let scale = x.norm();
    if scale == 0.0 {
        return (z, h);
    }
    let mut r = residual(&z, &h);
    if r.norm() > NEAR_EXACT * scale {
        return (z, h);
    }
    for _ in 0..8 {
        let jac = DMatrix::from_fn(n, 2 * m, |k, c| {
            let j = c % m;
            if c < m {
                z[j].powu(k as u32)
            } else if k == 0 {
                Complex64::new(0.0, 0.0)
            } else {
                h[j] * z[j].powu(k as u32 - 1) * k as f64
            }
        });
        let Ok(step) = jac.svd(true, true).solve(&r, 1e-14) else { break };
        let z_new: Vec<Complex64> = z.iter().enumerate().map(|(j, zj)| zj + step[m + j]).collect();
        let h_new = DVector::from_fn(m, |j, _| h[j] + step[j]);
        let r_new = residual(&z_new, &h_new);
        if !(r_new.norm() < r.norm()) {
            break;
        }
        (z, h, r) = (z_new, h_new, r_new);
    }
    (z, h)
}

fn reconstruct_zero_mean(result: &PronyResult, t: &[f64]) -> Vec<f64> {
    t.iter()
        .map(|&ti| result.modes.iter().map(|m| (m.residue * (m.lambda * ti).exp()).re).sum())
        .collect()
}

/// Sum of the fitted exponentials plus the removed mean, at times `t`
/// measured from the first fitted sample.
pub fn reconstruct(result: &PronyResult, t: &[f64]) -> Vec<f64> {
    reconstruct_zero_mean(result, t).into_iter().map(|v| v + result.offset).collect()
}

/// `‖x − y‖₂ / ‖x‖₂`; zero when both vanish.
pub fn relative_rms(x: &[f64], y: &[f64]) -> f64 {
    let num: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = x.iter().map(|a| a * a).sum();
    if den == 0.0 {
        if num == 0.0 { 0.0 } else { f64::INFINITY }
    } else {
        (num / den).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModePair {
    /// Index into the Prony modes.
    pub prony: usize,
    /// Index into the modal eigenvalues.
    pub modal: usize,
    pub frequency_gap_hz: f64,
    pub damping_gap: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModeMatching {
    pub pairs: Vec<ModePair>,
    pub unpaired_prony: Vec<usize>,
    pub unpaired_modal: Vec<usize>,
}

/// Greedy nearest-frequency pairing of oscillatory modes (positive
/// frequency only) within `tol_f` Hz and `tol_sigma` 1/s.
pub fn match_modes(prony: &PronyResult, md: &ModalDecomposition, tol_f: f64, tol_sigma: f64) -> ModeMatching {
    let modal: Vec<(usize, Complex64)> = md.eigenvalues.iter().copied().enumerate().filter(|(_, l)| l.im > 0.0).collect();
    let fitted: Vec<(usize, Complex64)> =
        prony.modes.iter().enumerate().filter(|(_, m)| m.lambda.im > 0.0).map(|(i, m)| (i, m.lambda)).collect();
    let hz = |l: &Complex64| l.im / std::f64::consts::TAU;

    let mut candidates = Vec::new();
    for &(pi, pl) in &fitted {
        for &(mi, ml) in &modal {
            let df = (hz(&pl) - hz(&ml)).abs();
            let ds = (pl.re - ml.re).abs();
            if df <= tol_f && ds <= tol_sigma {
                candidates.push(ModePair { prony: pi, modal: mi, frequency_gap_hz: df, damping_gap: ds });
            }
        }
    }
    candidates.sort_by(|a, b| {
        a.frequency_gap_hz.total_cmp(&b.frequency_gap_hz).then(a.damping_gap.total_cmp(&b.damping_gap)).then(a.prony.cmp(&b.prony))
    });

    let mut out = ModeMatching::default();
    for c in candidates {
        if out.pairs.iter().all(|p| p.prony != c.prony && p.modal != c.modal) {
            out.pairs.push(c);
        }
    }
    out.unpaired_prony = fitted.iter().map(|&(i, _)| i).filter(|i| out.pairs.iter().all(|p| p.prony != *i)).collect();
    out.unpaired_modal = modal.iter().map(|&(i, _)| i).filter(|i| out.pairs.iter().all(|p| p.modal != *i)).collect();
    out
}

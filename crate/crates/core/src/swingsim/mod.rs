//! Classical-model swing dynamics in center-of-inertia coordinates.
//!
//! One machine (the reference, by default the last) is dependent: its COI
//! angle and speed follow from `Σ Mᵢ δ̃ᵢ = 0` and `Σ Mᵢ ω̃ᵢ = 0`, so the
//! integrated state is `[δ̃_indep, ω̃_indep]` of length `2(n−1)`.

mod sde;
pub mod third_order;

pub use sde::{simulate, NormalStream, ScheduledEvent, SimConfig, SimOutcome, SimStatus, StochasticSystem};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::analytic;
use crate::error::{Error, Result};
use crate::netmodel::{apply_contingency, reduce_case, Event, RawCase, ReducedNetwork};

/// Angles beyond this magnitude mean the machines lost synchronism.
pub const DIVERGENCE_ANGLE: f64 = 10.0 * std::f64::consts::PI;

const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX_ITER: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct CoiModel {
    pub network: ReducedNetwork,
    pub m: DVector<f64>,
    pub d: DVector<f64>,
    pub pm: DVector<f64>,
    pub sigma: DVector<f64>,
    reference: usize,
    labels: Vec<usize>,
    source: Option<Box<RawCase>>,
}

impl CoiModel {
    pub fn new(
        network: ReducedNetwork,
        m: DVector<f64>,
        d: DVector<f64>,
        pm: DVector<f64>,
        sigma: DVector<f64>,
    ) -> Result<Self> {
        let n = network.n();
        if [m.len(), d.len(), pm.len(), sigma.len()].iter().any(|&l| l != n) {
            return Err(Error::InvalidInput(format!("parameter vectors must have length {n}")));
        }
        if m.iter().any(|&x| !(x > 0.0)) || d.iter().any(|&x| !(x >= 0.0)) || sigma.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::InvalidInput("need M > 0, D >= 0, sigma >= 0".into()));
        }
        Ok(Self { network, m, d, pm, sigma, reference: n - 1, labels: (1..=n).collect(), source: None })
    }

    /// Build from a case file; also returns the internal angles at the stored
    /// operating point, a good starting guess for [`find_equilibrium`].
    pub fn from_case(case: &RawCase) -> Result<(Self, DVector<f64>)> {
        case.validate()?;
        let red = reduce_case(case, None)?;
        let col = |f: fn(&crate::netmodel::Generator) -> f64| {
            DVector::from_iterator(case.n_generators(), case.generators.iter().map(f))
        };
        let mut model = Self::new(red.network, col(|g| g.m), col(|g| g.d), col(|g| g.pm), col(|g| g.sigma))?;
        model.labels = case.generators.iter().map(|g| g.id).collect();
        model.source = Some(Box::new(case.clone()));
        Ok((model, red.internal_angles))
    }

    /// Choose the dependent machine (0-based position).
    pub fn with_reference(mut self, reference: usize) -> Result<Self> {
        if reference >= self.n() {
            return Err(Error::InvalidInput(format!("reference index {reference} out of range")));
        }
        self.reference = reference;
        Ok(self)
    }

    pub fn with_sigma(mut self, sigma: DVector<f64>) -> Result<Self> {
        if sigma.len() != self.n() || sigma.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::InvalidInput("sigma override must have one non-negative entry per machine".into()));
        }
        self.sigma = sigma;
        if let Some(case) = self.source.as_mut() {
            for (g, s) in case.generators.iter_mut().zip(self.sigma.iter()) {
                g.sigma = *s;
            }
        }
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.network.n()
    }

    /// Number of independent machines, `n − 1`.
    pub fn n_indep(&self) -> usize {
        self.n() - 1
    }

    pub fn reference(&self) -> usize {
        self.reference
    }

    pub fn m_total(&self) -> f64 {
        self.m.sum()
    }

    /// Generator ids in model order.
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn source_case(&self) -> Option<&RawCase> {
        self.source.as_deref()
    }

    /// Positions of the independent machines, in state order.
    pub fn independent(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| i != self.reference).collect()
    }

    pub fn indep_labels(&self) -> Vec<usize> {
        self.independent().into_iter().map(|i| self.labels[i]).collect()
    }

    pub fn select_indep(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.n_indep(), self.independent().into_iter().map(|i| v[i]))
    }

    pub fn m_indep(&self) -> DVector<f64> {
        self.select_indep(&self.m)
    }

    pub fn d_indep(&self) -> DVector<f64> {
        self.select_indep(&self.d)
    }

    pub fn sigma_indep(&self) -> DVector<f64> {
        self.select_indep(&self.sigma)
    }

    /// Full COI angle vector from the independent angles.
    pub fn expand(&self, indep: &[f64]) -> DVector<f64> {
        let mut full = DVector::zeros(self.n());
        let mut weighted = 0.0;
        for (k, i) in self.independent().into_iter().enumerate() {
            full[i] = indep[k];
            weighted += self.m[i] * indep[k];
        }
        full[self.reference] = -weighted / self.m[self.reference];
        full
    }

    /// Shift absolute angles into the COI frame.
    pub fn to_coi(&self, delta: &DVector<f64>) -> DVector<f64> {
        let center = self.m.dot(delta) / self.m_total();
        delta.add_scalar(-center)
    }

    /// `Pm − Pe − (M/M_T)·P_coi` for every machine.
    pub fn accelerating_power(&self, delta_full: &DVector<f64>) -> DVector<f64> {
        let pe = electrical_power(delta_full.as_slice(), &self.network);
        let unbalanced = &self.pm - pe;
        let p_coi = unbalanced.sum();
        let mt = self.m_total();
        unbalanced - &self.m * (p_coi / mt)
    }

    /// Apply a parameter event. Network events re-reduce the source case with
    /// the internal EMFs held at their current values.
    pub fn apply_event(&self, event: &Event) -> Result<Self> {
        let mut out = self.clone();
        if let Some(case) = &self.source {
            let updated = apply_contingency(case, std::slice::from_ref(event))?;
            if event.is_electrical() {
                out.network = reduce_case(&updated, Some(&self.network.e))?.network;
            }
            out.source = Some(Box::new(updated));
        } else if event.is_electrical() {
            return Err(Error::InvalidInput(format!(
                "event '{event}' needs the source case to rebuild the network"
            )));
        }
        match *event {
            Event::ScaleDamping { gen, factor } => {
                let k = self.position(gen)?;
                if !(factor >= 0.0) {
                    return Err(Error::InvalidInput("damping factor must be >= 0".into()));
                }
                out.d[k] *= factor;
            }
            Event::SetPm { gen, value } => {
                let k = self.position(gen)?;
                out.pm[k] = value;
            }
            Event::SetXdPrime { .. } | Event::BranchStatus { .. } => {}
        }
        Ok(out)
    }

    pub fn position(&self, gen_id: usize) -> Result<usize> {
        self.labels.iter().position(|&l| l == gen_id).ok_or(Error::UnknownGenerator(gen_id))
    }

    /// Linear blend of network and injections, used for continuation.
    fn blend(&self, other: &Self, s: f64) -> Self {
        let mix = |a: &DMatrix<f64>, b: &DMatrix<f64>| a * (1.0 - s) + b * s;
        let mut out = self.clone();
        out.network = ReducedNetwork {
            g: mix(&self.network.g, &other.network.g),
            b: mix(&self.network.b, &other.network.b),
            e: &self.network.e * (1.0 - s) + &other.network.e * s,
        };
        out.pm = &self.pm * (1.0 - s) + &other.pm * s;
        out
    }
}

/// `Pe_i = Σ_j E_iE_j (G_ij cos(δ_i−δ_j) + B_ij sin(δ_i−δ_j))`.
pub fn electrical_power(delta: &[f64], net: &ReducedNetwork) -> DVector<f64> {
    let n = net.n();
    let (sin, cos): (Vec<f64>, Vec<f64>) = delta.iter().map(|d| d.sin_cos()).unzip();
    DVector::from_fn(n, |i, _| {
        let mut acc = 0.0;
        for j in 0..n {
            // cos(a−b) and sin(a−b) from the per-angle values.
            let c = cos[i] * cos[j] + sin[i] * sin[j];
            let s = sin[i] * cos[j] - cos[i] * sin[j];
            acc += net.e[j] * (net.g[(i, j)] * c + net.b[(i, j)] * s);
        }
        net.e[i] * acc
    })
}

/// Dependent machine's COI angle and speed from the independent ones.
pub fn recover_dependent(delta_indep: &[f64], omega_indep: &[f64], m: &DVector<f64>, reference: usize) -> (f64, f64) {
    let mut sd = 0.0;
    let mut sw = 0.0;
    let others = (0..m.len()).filter(|&i| i != reference);
    for (k, i) in others.enumerate() {
        sd += m[i] * delta_indep[k];
        sw += m[i] * omega_indep[k];
    }
    (-sd / m[reference], -sw / m[reference])
}

/// Time derivative of `[δ̃_indep, ω̃_indep]` without the noise term.
pub fn coi_rhs(state: &[f64], model: &CoiModel) -> DVector<f64> {
    let k = model.n_indep();
    let delta = model.expand(&state[..k]);
    let acc = model.accelerating_power(&delta);
    let mut out = DVector::zeros(2 * k);
    for (s, i) in model.independent().into_iter().enumerate() {
        let omega = state[k + s];
        out[s] = omega;
        out[k + s] = (acc[i] - model.d[i] * omega) / model.m[i];
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    /// Full COI angle vector (dependent machine included).
    pub delta: DVector<f64>,
    /// Max-norm of the acceleration residual.
    pub residual: f64,
    pub iterations: usize,
    /// Whether the state matrix at this point is Hurwitz.
    pub stable: bool,
    pub max_real_eigenvalue: f64,
}

impl Equilibrium {
    pub fn delta_indep(&self, model: &CoiModel) -> DVector<f64> {
        model.select_indep(&self.delta)
    }

    /// `[δ̃*, 0]` in simulation state layout.
    pub fn state(&self, model: &CoiModel) -> Vec<f64> {
        let mut x = self.delta_indep(model).as_slice().to_vec();
        x.resize(2 * model.n_indep(), 0.0);
        x
    }
}

fn residual_indep(model: &CoiModel, indep: &DVector<f64>) -> DVector<f64> {
    let acc = model.accelerating_power(&model.expand(indep.as_slice()));
    DVector::from_iterator(model.n_indep(), model.independent().into_iter().map(|i| acc[i] / model.m[i]))
}

/// Newton iteration on the independent-machine acceleration residual.
/// `guess` holds one angle per machine in any frame.
pub fn find_equilibrium(model: &CoiModel, guess: &DVector<f64>) -> Result<Equilibrium> {
    if guess.len() != model.n() {
        return Err(Error::InvalidInput(format!("guess must have {} angles", model.n())));
    }
    let mut x = model.select_indep(&model.to_coi(guess));
    let m_inv = model.m_indep().map(|m| 1.0 / m);
    let mut r = residual_indep(model, &x);
    let mut norm = r.amax();
    let mut iterations = 0;
    while norm > NEWTON_TOL {
        if iterations == NEWTON_MAX_ITER || !norm.is_finite() {
            return Err(Error::NoConvergence { iterations, residual: norm });
        }
        iterations += 1;
        // r = M⁻¹(Pm − Pe − ...) so ∂r/∂δ = −M⁻¹K.
        let k = analytic::jacobian_coi(&model.expand(x.as_slice()), model);
        let jac = DMatrix::from_diagonal(&m_inv) * k;
        let step = jac.lu().solve(&r).ok_or(Error::NoConvergence { iterations, residual: norm })?;
        let mut alpha = 1.0;
        loop {
            let trial = &x + &step * alpha;
            let r_trial = residual_indep(model, &trial);
            let n_trial = r_trial.amax();
            if n_trial < norm || alpha < 1e-6 {
                x = trial;
                r = r_trial;
                norm = n_trial;
                break;
            }
            alpha *= 0.5;
        }
    }
    let delta = model.expand(x.as_slice());
    let k = analytic::jacobian_coi(&delta, model);
    let a = analytic::state_matrix(&k, &model.m_indep(), &model.d_indep());
    let max_real = a.max_real_eigenvalue();
    Ok(Equilibrium { delta, residual: norm, iterations, stable: max_real < 0.0, max_real_eigenvalue: max_real })
}

/// Track an equilibrium from `from` to `to` by blending network and
/// injections in `steps` increments. Both models must share M.
pub fn continue_equilibrium(from: &CoiModel, to: &CoiModel, start: &Equilibrium, steps: usize) -> Result<Equilibrium> {
    if from.n() != to.n() || from.m != to.m {
        return Err(Error::InvalidInput("continuation endpoints must share machines and inertia".into()));
    }
    let steps = steps.max(1);
    let mut eq = start.clone();
    for s in 1..=steps {
        let model = from.blend(to, s as f64 / steps as f64);
        eq = find_equilibrium(&model, &eq.delta)?;
    }
    // Report stability with the true target damping.
    find_equilibrium(to, &eq.delta)
}

impl StochasticSystem for CoiModel {
    fn state_dim(&self) -> usize {
        2 * self.n_indep()
    }

    fn drift(&self, x: &[f64], dx: &mut [f64]) {
        dx.copy_from_slice(coi_rhs(x, self).as_slice());
    }

    fn noise_channels(&self) -> Vec<(usize, f64)> {
        let k = self.n_indep();
        self.independent()
            .into_iter()
            .enumerate()
            .filter(|&(_, i)| self.sigma[i] > 0.0)
            .map(|(s, i)| (k + s, self.sigma[i] / self.m[i]))
            .collect()
    }

    fn observed_dim(&self) -> usize {
        2 * self.n_indep()
    }

    fn observe(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&x[..2 * self.n_indep()]);
    }

    fn diverged(&self, x: &[f64]) -> bool {
        let k = self.n_indep();
        let (dep, _) = recover_dependent(&x[..k], &x[k..2 * k], &self.m, self.reference);
        !dep.is_finite() || dep.abs() > DIVERGENCE_ANGLE || x[..k].iter().any(|d| !d.is_finite() || d.abs() > DIVERGENCE_ANGLE)
    }

    fn apply_event(&self, event: &Event) -> Result<Self> {
        CoiModel::apply_event(self, event)
    }

    fn machine_labels(&self) -> Vec<usize> {
        self.indep_labels()
    }
}

/// Ordered list of timed events; times strictly increasing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContingencySchedule {
    events: Vec<ScheduledEvent>,
}

impl ContingencySchedule {
    pub fn new(events: Vec<ScheduledEvent>) -> Result<Self> {
        let s = Self { events };
        s.validate()?;
        Ok(s)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        for w in self.events.windows(2) {
            if !(w[1].time > w[0].time) {
                return Err(Error::InvalidInput(format!(
                    "schedule times must be strictly increasing ({} then {})",
                    w[0].time, w[1].time
                )));
            }
        }
        if self.events.iter().any(|e| !e.time.is_finite() || e.time < 0.0) {
            return Err(Error::InvalidInput("schedule times must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn events(&self) -> &[ScheduledEvent] {
        &self.events
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events with `time <= t`, in order.
    pub fn up_to(&self, t: f64) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.time <= t).map(|e| &e.event)
    }

    /// First event strictly inside `(start, end)`, if any. An event exactly
    /// at either edge leaves every sample of the window on one side.
    pub fn crossing(&self, start: f64, end: f64) -> Option<&ScheduledEvent> {
        self.events.iter().find(|e| e.time > start && e.time < end)
    }
}

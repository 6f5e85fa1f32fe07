//! Third-order machine variant: classical swing plus flux decay of `e'_q` and
//! a first-order exciter driving `E_fd` from the terminal voltage.
//!
//! State layout: `[δ̃_indep, ω̃_indep, e'_q (n), E_fd (n)]`.

use nalgebra::{DMatrix, DVector};

use super::{find_equilibrium, CoiModel, Equilibrium, StochasticSystem};
use crate::analytic;
use crate::error::{Error, Result};
use crate::netmodel::{Event, RawCase};

#[derive(Debug, Clone, PartialEq)]
pub struct ThirdOrderModel {
    /// Swing parameters and reduced network; its EMF vector is the
    /// operating-point `e'_q` and is not used during integration.
    pub base: CoiModel,
    pub xd: DVector<f64>,
    pub xd_prime: DVector<f64>,
    pub td0_prime: DVector<f64>,
    pub ka: DVector<f64>,
    pub ta: DVector<f64>,
    pub v_ref: DVector<f64>,
}

/// Operating point of the third-order model.
#[derive(Debug, Clone, PartialEq)]
pub struct ThirdOrderEquilibrium {
    pub classical: Equilibrium,
    pub state: Vec<f64>,
}

impl ThirdOrderModel {
    /// Build from a case whose generators all carry `third_order` data, and
    /// initialize field voltages and references so that the classical
    /// equilibrium is also a third-order equilibrium.
    pub fn from_case(case: &RawCase) -> Result<(Self, ThirdOrderEquilibrium)> {
        let (base, angles) = CoiModel::from_case(case)?;
        let params: Vec<_> = case
            .generators
            .iter()
            .map(|g| {
                g.third_order
                    .clone()
                    .ok_or_else(|| Error::InvalidCase(format!("generator {} has no third_order parameters", g.id)))
            })
            .collect::<Result<_>>()?;
        let n = base.n();
        let col = |f: &dyn Fn(usize) -> f64| DVector::from_fn(n, |i, _| f(i));
        let mut model = Self {
            xd: col(&|i| params[i].xd),
            xd_prime: col(&|i| case.generators[i].xd_prime),
            td0_prime: col(&|i| params[i].td0_prime),
            ka: col(&|i| params[i].ka),
            ta: col(&|i| params[i].ta),
            v_ref: DVector::zeros(n),
            base,
        };
        if model.td0_prime.iter().chain(model.ta.iter()).any(|&t| !(t > 0.0)) {
            return Err(Error::InvalidCase("time constants must be positive".into()));
        }
        let eq = find_equilibrium(&model.base, &angles)?;
        let state = model.initialize(&eq);
        Ok((model, ThirdOrderEquilibrium { classical: eq, state }))
    }

    fn initialize(&mut self, eq: &Equilibrium) -> Vec<f64> {
        let n = self.base.n();
        let eq_prime = self.base.network.e.clone();
        let (a, b) = self.currents(eq.delta.as_slice(), eq_prime.as_slice());
        let mut efd = DVector::zeros(n);
        for i in 0..n {
            let i_d = -b[i];
            efd[i] = eq_prime[i] + (self.xd[i] - self.xd_prime[i]) * i_d;
            self.v_ref[i] = self.terminal_voltage(i, eq_prime[i], a[i], b[i]) + efd[i] / self.ka[i];
        }
        let mut x = eq.state(&self.base);
        x.extend(eq_prime.iter());
        x.extend(efd.iter());
        x
    }

    /// Replace both time constants, e.g. to approach the classical limit.
    pub fn with_time_constants(mut self, td0_prime: f64, ta: f64) -> Self {
        self.td0_prime.fill(td0_prime);
        self.ta.fill(ta);
        self
    }

    pub fn n(&self) -> usize {
        self.base.n()
    }

    /// Machine-frame current components `(a, b)` with `I_q = a`, `I_d = −b`.
    fn currents(&self, delta: &[f64], eq_prime: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let net = &self.base.network;
        let n = self.n();
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                let (s, c) = (delta[j] - delta[i]).sin_cos();
                a[i] += eq_prime[j] * (net.g[(i, j)] * c - net.b[(i, j)] * s);
                b[i] += eq_prime[j] * (net.g[(i, j)] * s + net.b[(i, j)] * c);
            }
        }
        (a, b)
    }

    fn terminal_voltage(&self, i: usize, eq_prime: f64, a: f64, b: f64) -> f64 {
        let xdp = self.xd_prime[i];
        let v_d = xdp * a;
        let v_q = eq_prime + xdp * b;
        v_d.hypot(v_q)
    }

    /// Classical Jacobian with the EMFs at their operating-point values.
    pub fn deterministic_jacobian(&self, eq: &ThirdOrderEquilibrium) -> DMatrix<f64> {
        analytic::jacobian_coi(&eq.classical.delta, &self.base)
    }

    /// Central-difference linearization of the full third-order drift.
    pub fn linearize(&self, x: &[f64]) -> DMatrix<f64> {
        let dim = self.state_dim();
        let mut jac = DMatrix::zeros(dim, dim);
        let mut xp = x.to_vec();
        let h = 1e-6;
        for j in 0..dim {
            xp[j] = x[j] + h;
            let fp = third_order_rhs(&xp, self);
            xp[j] = x[j] - h;
            let fm = third_order_rhs(&xp, self);
            xp[j] = x[j];
            jac.set_column(j, &((fp - fm) / (2.0 * h)));
        }
        jac
    }
}

/// Drift of the third-order model.
pub fn third_order_rhs(state: &[f64], model: &ThirdOrderModel) -> DVector<f64> {
    let base = &model.base;
    let n = base.n();
    let k = base.n_indep();
    let delta = base.expand(&state[..k]);
    let eq_prime = &state[2 * k..2 * k + n];
    let efd = &state[2 * k + n..2 * k + 2 * n];
    let (a, b) = model.currents(delta.as_slice(), eq_prime);

    let pe: Vec<f64> = (0..n).map(|i| eq_prime[i] * a[i]).collect();
    let p_coi: f64 = (0..n).map(|i| base.pm[i] - pe[i]).sum();
    let mt = base.m_total();

    let mut out = DVector::zeros(2 * k + 2 * n);
    for (s, i) in base.independent().into_iter().enumerate() {
        let omega = state[k + s];
        out[s] = omega;
        out[k + s] = (base.pm[i] - pe[i] - base.m[i] / mt * p_coi - base.d[i] * omega) / base.m[i];
    }
    for i in 0..n {
        let i_d = -b[i];
        out[2 * k + i] = (-eq_prime[i] - (model.xd[i] - model.xd_prime[i]) * i_d + efd[i]) / model.td0_prime[i];
        let vt = model.terminal_voltage(i, eq_prime[i], a[i], b[i]);
        out[2 * k + n + i] = (-efd[i] + model.ka[i] * (model.v_ref[i] - vt)) / model.ta[i];
    }
    out
}

impl StochasticSystem for ThirdOrderModel {
    fn state_dim(&self) -> usize {
        2 * self.base.n_indep() + 2 * self.n()
    }

    fn drift(&self, x: &[f64], dx: &mut [f64]) {
        dx.copy_from_slice(third_order_rhs(x, self).as_slice());
    }

    fn noise_channels(&self) -> Vec<(usize, f64)> {
        self.base.noise_channels()
    }

    fn observed_dim(&self) -> usize {
        2 * self.base.n_indep()
    }

    fn observe(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&x[..self.observed_dim()]);
    }

    fn diverged(&self, x: &[f64]) -> bool {
        self.base.diverged(x) || x.iter().any(|v| !v.is_finite())
    }

    fn apply_event(&self, event: &Event) -> Result<Self> {
        let mut out = self.clone();
        out.base = self.base.apply_event(event)?;
        if let Event::SetXdPrime { gen, value } = *event {
            out.xd_prime[self.base.position(gen)?] = value;
        }
        Ok(out)
    }

    fn machine_labels(&self) -> Vec<usize> {
        self.base.indep_labels()
    }
}

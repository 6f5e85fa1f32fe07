//! Scripted pipelines: simulate a case under a contingency schedule, estimate
//! per window, run the requested analyses and write an output bundle.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::analytic;
use crate::error::{Error, Result, StageContext};
use crate::estimator::{self, frobenius_relative_error};
use crate::modal::{self, MachineComponent, ModalDecomposition, RedispatchPlan};
use crate::netmodel::{Event, RawCase};
use crate::prony::{self, PronyConfig};
use crate::swingsim::third_order::ThirdOrderModel;
use crate::swingsim::{
    continue_equilibrium, find_equilibrium, simulate, CoiModel, ContingencySchedule, Equilibrium, ScheduledEvent,
    SimConfig, SimOutcome, SimStatus,
};
use crate::trajectory::Trajectory;

/// Continuation steps used when a direct Newton solve fails after an event.
const CONTINUATION_STEPS: usize = 20;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Classical,
    ThirdOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub label: String,
    pub start: f64,
    pub end: f64,
}

/// Bisection on one generator's `xd'` so that the analytic critical
/// eigenvalue lands near `target`. The tuned value replaces the value of
/// scheduled event number `event`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tuning {
    pub gen: usize,
    pub event: usize,
    pub target: f64,
    pub tolerance: f64,
    #[serde(default = "default_march_step")]
    pub march_step: f64,
}

fn default_march_step() -> f64 {
    0.02
}

fn default_tol() -> f64 {
    0.15
}

fn default_true() -> bool {
    true
}

fn default_one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Analysis {
    /// Jacobian estimate for every window (always performed; listed for clarity).
    Estimate,
    Modal {
        window: String,
    },
    Damping {
        window: String,
    },
    Prony {
        signal: String,
        start: f64,
        end: f64,
        order: usize,
        #[serde(default = "default_one")]
        decimate: usize,
        #[serde(default = "default_true")]
        remove_mean: bool,
        /// Window whose estimated state matrix the fit is compared with.
        /// Window whose estimated modes the fit is matched against.
        #[serde(default)]
        compare_window: Option<String>,
        #[serde(default = "default_tol")]
        tol_f: f64,
        #[serde(default = "default_tol")]
        tol_sigma: f64,
    },
    Redispatch {
        window: String,
        step: f64,
        #[serde(default)]
        slack: Option<usize>,
    },
    /// Raise `xd'` of `gen` by `increase` from the final operating point and
    /// simulate from that equilibrium for `t_end` seconds.
    Divergence {
        gen: usize,
        increase: f64,
        t_end: f64,
    },
}

impl Analysis {
    /// Stage name used in error messages.
    pub fn kind(&self) -> &'static str {
        match self {
            Analysis::Estimate => "estimate",
            Analysis::Modal { .. } => "modal",
            Analysis::Damping { .. } => "damping",
            Analysis::Prony { .. } => "prony",
            Analysis::Redispatch { .. } => "redispatch",
            Analysis::Divergence { .. } => "divergence",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// Built-in case name or a path relative to the scenario file.
    pub case: String,
    #[serde(default)]
    pub model: ModelKind,
    /// Per-generator noise override.
    #[serde(default)]
    pub sigma: Option<Vec<f64>>,
    /// Parameter changes applied before the run starts.
    #[serde(default)]
    pub initial_events: Vec<Event>,
    pub dt: f64,
    pub t_end: f64,
    pub record_every: usize,
    pub seed: u64,
    #[serde(default)]
    pub events: Vec<ScheduledEvent>,
    #[serde(default)]
    pub windows: Vec<Window>,
    #[serde(default)]
    pub analyses: Vec<Analysis>,
    #[serde(default)]
    pub allow_event_crossing: bool,
    #[serde(default)]
    pub tune: Option<Tuning>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, PathBuf)> {
        let path = path.as_ref();
        let s = Self::from_json(&std::fs::read_to_string(path)?)?;
        Ok((s, path.parent().map(Path::to_path_buf).unwrap_or_default()))
    }

    pub fn config(&self) -> SimConfig {
        SimConfig { dt: self.dt, t_end: self.t_end, record_every: self.record_every, seed: self.seed }
    }

    pub fn schedule(&self) -> Result<ContingencySchedule> {
        ContingencySchedule::new(self.events.clone())
    }

    pub fn window(&self, label: &str) -> Result<&Window> {
        self.windows
            .iter()
            .find(|w| w.label == label)
            .ok_or_else(|| Error::InvalidInput(format!("scenario has no window labelled '{label}'")))
    }

    pub fn validate(&self) -> Result<()> {
        self.config().validate()?;
        let schedule = self.schedule()?;
        for w in &self.windows {
            if !(w.end > w.start) || w.start < 0.0 || w.end > self.t_end + 1e-9 {
                return Err(Error::InvalidInput(format!("window '{}' [{}, {}] is not inside [0, T]", w.label, w.start, w.end)));
            }
            if !self.allow_event_crossing {
                if let Some(e) = schedule.crossing(w.start, w.end) {
                    return Err(Error::WindowCrossesEvent { start: w.start, end: w.end, event_time: e.time });
                }
            }
        }
        for a in &self.analyses {
            match a {
                Analysis::Modal { window } | Analysis::Damping { window } | Analysis::Redispatch { window, .. } => {
                    self.window(window)?;
                }
                Analysis::Prony { compare_window, start, end, .. } => {
                    if let Some(w) = compare_window {
                        self.window(w)?;
                    }
                    if !self.allow_event_crossing {
                        if let Some(e) = schedule.crossing(*start, *end) {
                            return Err(Error::WindowCrossesEvent { start: *start, end: *end, event_time: e.time });
                        }
                    }
                }
                Analysis::Estimate | Analysis::Divergence { .. } => {}
            }
        }
        if let Some(t) = &self.tune {
            match self.events.get(t.event).map(|e| &e.event) {
                Some(Event::SetXdPrime { gen, .. }) if *gen == t.gen => {}
                _ => {
                    return Err(Error::InvalidInput(format!(
                        "tuning refers to event {} which is not set_xd_prime for generator {}",
                        t.event, t.gen
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn resolve_case(&self, base_dir: &Path) -> Result<RawCase> {
        match RawCase::builtin(&self.case) {
            Some(c) => Ok(c),
            None => {
                let path = base_dir.join(&self.case);
                RawCase::load(&path).map_err(|e| match e {
                    Error::Io(io) => Error::InvalidInput(format!(
                        "case '{}' is not a built-in case (wscc9, ieee39) and {} cannot be read: {io}",
                        self.case,
                        path.display()
                    )),
                    other => other,
                })
            }
        }
    }
}

/// Matrix as nested rows for JSON output.
pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eig {
    pub re: f64,
    pub im: f64,
}

impl From<Complex64> for Eig {
    fn from(z: Complex64) -> Self {
        Self { re: z.re, im: z.im }
    }
}

impl Eig {
    pub fn frequency_hz(&self) -> f64 {
        self.im.abs() / std::f64::consts::TAU
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub gen: usize,
    pub xd_prime: f64,
    pub critical: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub label: String,
    pub start: f64,
    pub end: f64,
    pub samples: usize,
    pub condition: f64,
    pub k_estimated: Vec<Vec<f64>>,
    pub k_true: Vec<Vec<f64>>,
    pub error: f64,
    /// Error of the first window's true Jacobian against this window's truth.
    pub stale_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipationEntry {
    pub state: String,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSet {
    pub eigenvalues: Vec<Eig>,
    pub least_damped: Option<Eig>,
    /// Participation of the least-damped pair, largest first.
    pub participation: Vec<ParticipationEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalReport {
    pub window: String,
    pub analytic: ModeSet,
    pub estimated: ModeSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DampingReport {
    pub window: String,
    pub machines: Vec<usize>,
    pub d_true: Vec<f64>,
    pub d_estimated: Vec<f64>,
    pub relative_error: Vec<f64>,
    pub off_diagonal_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PronyModeRow {
    pub re: f64,
    pub im: f64,
    pub frequency_hz: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PronyMatch {
    pub prony: Eig,
    pub modal: Eig,
    pub frequency_gap_hz: f64,
    pub damping_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PronyReport {
    pub signal: String,
    pub start: f64,
    pub end: f64,
    pub order: usize,
    pub decimate: usize,
    pub rms_error: f64,
    pub modes: Vec<PronyModeRow>,
    pub compare_window: Option<String>,
    /// Fitted mode paired with the estimated least-damped eigenvalue.
    pub matched: Option<PronyMatch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedispatchReport {
    pub window: String,
    pub critical_analytic: Eig,
    pub critical_estimated: Eig,
    pub ranking: Vec<MachineComponent>,
    pub normal_vector: Vec<f64>,
    pub normal_machines: Vec<usize>,
    pub plan: RedispatchPlan,
    pub critical_after: f64,
    pub stable_after: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub gen: usize,
    pub xd_prime: f64,
    /// Whether a stable equilibrium still exists at the raised value.
    pub stable_equilibrium: bool,
    pub status: SimStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    pub seed: u64,
    pub status: SimStatus,
    pub samples: usize,
    pub tuning: Option<TuningReport>,
    pub windows: Vec<WindowReport>,
    pub modal: Vec<ModalReport>,
    pub damping: Vec<DampingReport>,
    pub prony: Vec<PronyReport>,
    pub redispatch: Vec<RedispatchReport>,
    pub divergence: Vec<DivergenceReport>,
}

impl ScenarioReport {
    pub fn window(&self, label: &str) -> Option<&WindowReport> {
        self.windows.iter().find(|w| w.label == label)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Everything a run produces in memory.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub scenario: Scenario,
    pub trajectory: Trajectory,
    pub report: ScenarioReport,
}

/// A model and its equilibrium at some point of the schedule.
#[derive(Debug, Clone)]
pub struct OperatingPoint {
    pub model: CoiModel,
    pub equilibrium: Equilibrium,
}

impl OperatingPoint {
    pub fn critical(&self) -> Result<(ModalDecomposition, usize, Complex64)> {
        let (_, a, _) = analytic::linearize(&self.model, &self.equilibrium);
        let md = modal::eigen_decompose(&a.a)?;
        let (k, l) = modal::critical_eigenvalue(&md);
        Ok((md, k, l))
    }

    /// Move to a new parameter set, with continuation as fallback.
    pub fn step_to(&self, model: CoiModel) -> Result<Self> {
        let eq = match find_equilibrium(&model, &self.equilibrium.delta) {
            Ok(eq) if eq.stable || !self.equilibrium.stable => eq,
            _ => continue_equilibrium(&self.model, &model, &self.equilibrium, CONTINUATION_STEPS)?,
        };
        Ok(Self { model, equilibrium: eq })
    }

    pub fn apply(&self, event: &Event) -> Result<Self> {
        self.step_to(self.model.apply_event(event)?)
    }
}

fn critical_re(op: &OperatingPoint) -> f64 {
    op.critical().map(|(_, _, l)| l.re).unwrap_or(f64::NAN)
}

/// March `xd'` of `gen` upward from `start`, then bisect, until the analytic
/// critical eigenvalue is within `tolerance` of `target` (from below).
pub fn tune_xd_prime(start: &OperatingPoint, gen: usize, target: f64, tolerance: f64, march_step: f64) -> Result<(f64, OperatingPoint)> {
    let k = start.model.position(gen)?;
    let case = start
        .model
        .source_case()
        .ok_or_else(|| Error::InvalidInput("tuning needs a model built from a case".into()))?;
    let mut lo_x = case.generators[k].xd_prime;
    let mut lo = start.clone();
    let attempt = |from: &OperatingPoint, x: f64| -> Option<(OperatingPoint, f64)> {
        let op = from.apply(&Event::SetXdPrime { gen, value: x }).ok()?;
        let l = critical_re(&op);
        (op.equilibrium.stable && l.is_finite()).then_some((op, l))
    };
    let l0 = critical_re(&lo);
    if !(l0 < target) {
        return Err(Error::InvalidInput(format!("starting critical eigenvalue {l0:.4} is already above target {target}")));
    }
    if (l0 - target).abs() <= tolerance {
        return Ok((lo_x, lo));
    }
    let mut hi_x;
    loop {
        let x = lo_x + march_step;
        match attempt(&lo, x) {
            Some((op, l)) if l < target - tolerance => {
                lo_x = x;
                lo = op;
            }
            Some((op, l)) if l <= target => return Ok((x, op)),
            _ => {
                hi_x = x;
                break;
            }
        }
        if lo_x > 100.0 {
            return Err(Error::NoConvergence { iterations: 0, residual: f64::NAN });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo_x + hi_x);
        match attempt(&lo, mid) {
            Some((op, l)) if l < target - tolerance => {
                lo_x = mid;
                lo = op;
            }
            Some((op, l)) if l <= target => return Ok((mid, op)),
            _ => hi_x = mid,
        }
        if hi_x - lo_x < 1e-12 {
            break;
        }
    }
    Err(Error::NoConvergence { iterations: 200, residual: hi_x - lo_x })
}

fn state_names(machines: &[usize]) -> Vec<String> {
    let d = machines.iter().map(|m| format!("dtilde_{m}"));
    let w = machines.iter().map(|m| format!("wtilde_{m}"));
    d.chain(w).collect()
}

fn mode_set(a: &DMatrix<f64>, machines: &[usize]) -> Result<(ModeSet, ModalDecomposition)> {
    let md = modal::eigen_decompose(a)?;
    let names = state_names(machines);
    let least = modal::least_damped_pair(&md, 0.0);
    let participation = match least {
        Some((k, _)) => {
            let pf = modal::participation_factors(&md);
            let mut entries: Vec<ParticipationEntry> =
                names.iter().enumerate().map(|(i, s)| ParticipationEntry { state: s.clone(), factor: pf[(i, k)] }).collect();
            entries.sort_by(|a, b| b.factor.total_cmp(&a.factor));
            entries
        }
        None => Vec::new(),
    };
    let set = ModeSet {
        eigenvalues: md.eigenvalues.iter().map(|&l| l.into()).collect(),
        least_damped: least.map(|(_, l)| l.into()),
        participation,
    };
    Ok((set, md))
}

/// Simulate and analyse a scenario. `base_dir` resolves relative case paths.
pub fn execute(scenario: &Scenario, base_dir: &Path) -> Result<ScenarioRun> {
    run_pipeline(scenario, base_dir, None)
}

/// Run the windows and analyses of `scenario` on a recorded trajectory
/// instead of simulating one.
pub fn analyze(scenario: &Scenario, base_dir: &Path, trajectory: Trajectory) -> Result<ScenarioRun> {
    run_pipeline(scenario, base_dir, Some(trajectory))
}

fn run_pipeline(scenario: &Scenario, base_dir: &Path, recorded: Option<Trajectory>) -> Result<ScenarioRun> {
    scenario.validate().stage("scenario")?;
    let case = scenario.resolve_case(base_dir).stage("case")?;
    let (mut base, angles) = CoiModel::from_case(&case).stage("case")?;
    if let Some(s) = &scenario.sigma {
        base = base.with_sigma(DVector::from_column_slice(s)).stage("case")?;
    }
    for e in &scenario.initial_events {
        base = base.apply_event(e).stage("case")?;
    }
    let eq0 = find_equilibrium(&base, &angles).stage("equilibrium")?;
    if !eq0.stable {
        return Err(Error::NotHurwitz { max_real: eq0.max_real_eigenvalue }).stage("equilibrium");
    }
    let start = OperatingPoint { model: base.clone(), equilibrium: eq0 };

    let mut events = scenario.events.clone();
    let mut tuning = None;
    if let Some(t) = &scenario.tune {
        let mut before = start.clone();
        for e in &events[..t.event] {
            before = before.apply(&e.event).stage("tuning")?;
        }
        let (x, op) = tune_xd_prime(&before, t.gen, t.target, t.tolerance, t.march_step).stage("tuning")?;
        events[t.event].event = Event::SetXdPrime { gen: t.gen, value: x };
        tuning = Some(TuningReport { gen: t.gen, xd_prime: x, critical: critical_re(&op) });
    }
    let schedule = ContingencySchedule::new(events)?;

    // Operating point in force after each prefix of the schedule.
    let mut points = vec![start.clone()];
    for e in schedule.events() {
        let next = points.last().expect("non-empty").apply(&e.event).stage(format!("event at {} s", e.time))?;
        points.push(next);
    }
    let point_at = |t: f64| -> &OperatingPoint {
        let applied = schedule.events().iter().filter(|e| e.time <= t).count();
        &points[applied]
    };

    let config = scenario.config();
    let (traj, status) = match recorded {
        Some(t) => {
            if t.n_machines() != base.n_indep() {
                return Err(Error::InvalidInput(format!(
                    "trajectory has {} independent machines, case has {}",
                    t.n_machines(),
                    base.n_indep()
                )))
                .stage("trajectory");
            }
            (t, SimStatus::Completed)
        }
        None => {
            let outcome: SimOutcome = match scenario.model {
                ModelKind::Classical => simulate(&base, &schedule, &start.equilibrium.state(&base), &config),
                ModelKind::ThirdOrder => third_order_run(&case, &base, scenario, &schedule, &config),
            }
            .stage("simulate")?;
            (outcome.trajectory, outcome.status)
        }
    };
    let machines = base.indep_labels();

    let mut windows = Vec::new();
    let mut estimates = Vec::new();
    let mut first_truth: Option<DMatrix<f64>> = None;
    for w in &scenario.windows {
        let op = point_at(w.start);
        let truth = analytic::jacobian_coi(&op.equilibrium.delta, &op.model);
        let tag = format!("estimate window '{}'", w.label);
        let cov = estimator::sample_covariance(&traj, w.start, w.end).stage(&tag)?;
        let est = estimator::estimate_jacobian(&op.model.m_indep(), &cov).stage(&tag)?;
        let stale_error = match &first_truth {
            Some(k0) => Some(frobenius_relative_error(k0, &truth)?),
            None => {
                first_truth = Some(truth.clone());
                None
            }
        };
        windows.push(WindowReport {
            label: w.label.clone(),
            start: w.start,
            end: w.end,
            samples: cov.samples,
            condition: est.condition,
            k_estimated: rows(&est.k),
            k_true: rows(&truth),
            error: frobenius_relative_error(&est.k, &truth)?,
            stale_error,
        });
        estimates.push((w.label.clone(), est, cov));
    }
    let estimate_for = |label: &str| estimates.iter().find(|(l, _, _)| l == label).expect("validated window");

    let mut report = ScenarioReport {
        name: scenario.name.clone(),
        seed: scenario.seed,
        status,
        samples: traj.len(),
        tuning,
        windows,
        modal: vec![],
        damping: vec![],
        prony: vec![],
        redispatch: vec![],
        divergence: vec![],
    };

    for analysis in &scenario.analyses {
        let mut run = || -> Result<()> {
            match analysis {
                Analysis::Estimate => {}
                Analysis::Modal { window } => {
                    let w = scenario.window(window)?;
                    let op = point_at(w.start);
                    let (_, a_true, _) = analytic::linearize(&op.model, &op.equilibrium);
                    let (_, est, _) = estimate_for(window);
                    let a_est = estimator::assemble_estimated_state_matrix(&est.k, &op.model.m_indep(), &op.model.d_indep());
                    report.modal.push(ModalReport {
                        window: window.clone(),
                        analytic: mode_set(&a_true.a, &machines)?.0,
                        estimated: mode_set(&a_est.a, &machines)?.0,
                    });
                }
                Analysis::Damping { window } => {
                    let w = scenario.window(window)?;
                    let op = point_at(w.start);
                    let (_, _, cov) = estimate_for(window);
                    let d = estimator::estimate_damping(&op.model.m_indep(), &op.model.sigma_indep(), &cov.c_ww)?;
                    let d_true = op.model.d_indep();
                    report.damping.push(DampingReport {
                        window: window.clone(),
                        machines: machines.clone(),
                        relative_error: d.d.iter().zip(d_true.iter()).map(|(e, t)| (e - t).abs() / t).collect(),
                        d_true: d_true.iter().copied().collect(),
                        d_estimated: d.d.iter().copied().collect(),
                        off_diagonal_ratio: d.off_diagonal_ratio,
                    });
                }
                Analysis::Prony { signal, start, end, order, decimate, remove_mean, compare_window, tol_f, tol_sigma } => {
                    let col = traj.column_index(signal)?;
                    let rows_in = traj.window_rows(*start, *end)?;
                    let x: Vec<f64> = rows_in.map(|i| traj.row(i)[col]).collect();
                    let cfg = PronyConfig { order: *order, remove_mean: *remove_mean, decimate: *decimate };
                    let fit = prony::prony_fit(&x, traj.sample_period(), &cfg)?;
                    let matched = match compare_window {
                        Some(label) => {
                            let op = point_at(scenario.window(label)?.start);
                            let (_, est, _) = estimate_for(label);
                            let a_est = estimator::assemble_estimated_state_matrix(&est.k, &op.model.m_indep(), &op.model.d_indep());
                            let md = modal::eigen_decompose(&a_est.a)?;
                            let matching = prony::match_modes(&fit, &md, *tol_f, *tol_sigma);
                            let least = modal::least_damped_pair(&md, 0.0).map(|(k, _)| k);
                            matching.pairs.iter().find(|p| Some(p.modal) == least).map(|p| PronyMatch {
                                prony: fit.modes[p.prony].lambda.into(),
                                modal: md.eigenvalues[p.modal].into(),
                                frequency_gap_hz: p.frequency_gap_hz,
                                damping_gap: p.damping_gap,
                            })
                        }
                        None => None,
                    };
                    report.prony.push(PronyReport {
                        signal: signal.clone(),
                        start: *start,
                        end: *end,
                        order: *order,
                        decimate: *decimate,
                        rms_error: fit.rms_error,
                        modes: fit
                            .modes
                            .iter()
                            .map(|m| PronyModeRow { re: m.lambda.re, im: m.lambda.im, frequency_hz: m.frequency_hz(), amplitude: m.amplitude })
                            .collect(),
                        compare_window: compare_window.clone(),
                        matched,
                    });
                }
                Analysis::Redispatch { window, step, slack } => {
                    let w = scenario.window(window)?;
                    let op = point_at(w.start);
                    let (_, _, crit_true) = op.critical()?;
                    let (_, est, _) = estimate_for(window);
                    let a_est = estimator::assemble_estimated_state_matrix(&est.k, &op.model.m_indep(), &op.model.d_indep());
                    let md = modal::eigen_decompose(&a_est.a)?;
                    let (kc, crit_est) = modal::critical_eigenvalue(&md);
                    let ranking = modal::unstable_machine_ranking(&md, kc, &op.model);
                    let n = modal::normal_vector(&op.model, &md, kc)?;
                    let plan = modal::redispatch_plan(&n, &machines, op.model.labels(), *step, *slack)?;
                    let after = op.step_to(plan.apply(&op.model)?)?;
                    report.redispatch.push(RedispatchReport {
                        window: window.clone(),
                        critical_analytic: crit_true.into(),
                        critical_estimated: crit_est.into(),
                        ranking,
                        normal_vector: n.iter().copied().collect(),
                        normal_machines: machines.clone(),
                        plan,
                        critical_after: critical_re(&after),
                        stable_after: after.equilibrium.stable,
                    });
                }
                Analysis::Divergence { gen, increase, t_end } => {
                    let last = points.last().expect("non-empty");
                    let k = last.model.position(*gen)?;
                    let current = last.model.source_case().map(|c| c.generators[k].xd_prime).ok_or_else(|| {
                        Error::InvalidInput("divergence check needs a model built from a case".into())
                    })?;
                    let raised = last.model.apply_event(&Event::SetXdPrime { gen: *gen, value: current + increase })?;
                    let stable_equilibrium = matches!(find_equilibrium(&raised, &last.equilibrium.delta), Ok(eq) if eq.stable);
                    let cfg = SimConfig { t_end: *t_end, ..config };
                    let out = simulate(&raised, &ContingencySchedule::empty(), &last.equilibrium.state(&last.model), &cfg)?;
                    report.divergence.push(DivergenceReport {
                        gen: *gen,
                        xd_prime: current + increase,
                        stable_equilibrium,
                        status: out.status,
                    });
                }
            }
            Ok(())
        };
        run().stage(analysis.kind())?;
    }

    Ok(ScenarioRun { scenario: scenario.clone(), trajectory: traj, report })
}

fn third_order_run(
    case: &RawCase,
    base: &CoiModel,
    scenario: &Scenario,
    schedule: &ContingencySchedule,
    config: &SimConfig,
) -> Result<SimOutcome> {
    let (mut m3, eq3) = ThirdOrderModel::from_case(case)?;
    m3.base = m3.base.clone().with_sigma(base.sigma.clone())?;
    for e in &scenario.initial_events {
        m3 = crate::swingsim::StochasticSystem::apply_event(&m3, e)?;
    }
    simulate(&m3, schedule, &eq3.state, config)
}

/// Load a scenario file and run it.
pub fn run_scenario(path: impl AsRef<Path>) -> Result<ScenarioRun> {
    let (s, dir) = Scenario::load(path)?;
    execute(&s, &dir)
}

fn fmt_matrix(out: &mut String, m: &[Vec<f64>]) {
    for r in m {
        let cells: Vec<String> = r.iter().map(|v| format!("{v:>10.4}")).collect();
        let _ = writeln!(out, "    [{}]", cells.join(" "));
    }
}

/// Human-readable summary of a report.
pub fn render_report(r: &ScenarioReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "scenario: {}", r.name);
    let _ = writeln!(out, "seed: {}", r.seed);
    let _ = writeln!(out, "simulation: {:?}, {} samples", r.status, r.samples);
    if let Some(t) = &r.tuning {
        let _ = writeln!(out, "tuned xd' of generator {}: {:.6} (critical eigenvalue {:.4})", t.gen, t.xd_prime, t.critical);
    }
    for w in &r.windows {
        let _ = writeln!(out, "\nwindow {} [{}, {}] s, {} samples, cond(C_dd) = {:.3e}", w.label, w.start, w.end, w.samples, w.condition);
        let _ = writeln!(out, "  estimated K:");
        fmt_matrix(&mut out, &w.k_estimated);
        let _ = writeln!(out, "  analytic K:");
        fmt_matrix(&mut out, &w.k_true);
        let _ = writeln!(out, "  relative error: {:.2}%", 100.0 * w.error);
        if let Some(s) = w.stale_error {
            let _ = writeln!(out, "  stale-model error: {:.2}%", 100.0 * s);
        }
    }
    for m in &r.modal {
        let _ = writeln!(out, "\nmodal analysis, window {}", m.window);
        for (name, set) in [("analytic", &m.analytic), ("estimated", &m.estimated)] {
            if let Some(l) = set.least_damped {
                let top: Vec<String> = set.participation.iter().take(2).map(|p| format!("{} {:.3}", p.state, p.factor)).collect();
                let _ = writeln!(out, "  {name}: least-damped {:.4} {:+.4}i ({:.3} Hz); top PF {}", l.re, l.im, l.frequency_hz(), top.join(", "));
            }
        }
    }
    for d in &r.damping {
        let _ = writeln!(out, "\ndamping estimate, window {}", d.window);
        for i in 0..d.machines.len() {
            let _ = writeln!(
                out,
                "  gen {:>2}: true {:.5} estimated {:.5} error {:.2}%",
                d.machines[i],
                d.d_true[i],
                d.d_estimated[i],
                100.0 * d.relative_error[i]
            );
        }
        let _ = writeln!(out, "  off-diagonal ratio {:.3e}", d.off_diagonal_ratio);
    }
    for p in &r.prony {
        let _ = writeln!(out, "\nprony {} [{}, {}] s, order {}, decimate {}, rms error {:.3}", p.signal, p.start, p.end, p.order, p.decimate, p.rms_error);
        match &p.matched {
            Some(m) => {
                let _ = writeln!(
                    out,
                    "  fitted {:.4} {:+.4}i ({:.3} Hz) vs estimated {:.4} {:+.4}i ({:.3} Hz)",
                    m.prony.re,
                    m.prony.im,
                    m.prony.frequency_hz(),
                    m.modal.re,
                    m.modal.im,
                    m.modal.frequency_hz()
                );
            }
            None if p.compare_window.is_some() => {
                let _ = writeln!(out, "  no fitted mode within tolerance of the least-damped eigenvalue");
            }
            None => {
                for m in p.modes.iter().filter(|m| m.im >= 0.0).take(5) {
                    let _ = writeln!(out, "  {:.4} {:+.4}i ({:.3} Hz) amplitude {:.3e}", m.re, m.im, m.frequency_hz, m.amplitude);
                }
            }
        }
    }
    for d in &r.redispatch {
        let _ = writeln!(out, "\nstability, window {}", d.window);
        let _ = writeln!(out, "  critical eigenvalue: analytic {:.4}, estimated {:.4}", d.critical_analytic.re, d.critical_estimated.re);
        let rank: Vec<String> = d.ranking.iter().take(3).map(|c| format!("{} ({:.4})", c.machine, c.value)).collect();
        let _ = writeln!(out, "  machines most involved: {}", rank.join(", "));
        let nv: Vec<String> = d.normal_vector.iter().map(|v| format!("{v:.4}")).collect();
        let _ = writeln!(out, "  normal vector: [{}]", nv.join(", "));
        let _ = writeln!(out, "  re-dispatch step {} slack {} pickup {:.4}", d.plan.step, d.plan.slack, d.plan.slack_pickup);
        let _ = writeln!(out, "  critical eigenvalue after re-dispatch: {:.4} (stable: {})", d.critical_after, d.stable_after);
    }
    for d in &r.divergence {
        let _ = writeln!(
            out,
            "\nxd' of generator {} raised to {:.6}: stable equilibrium {}, simulation {:?}",
            d.gen, d.xd_prime, d.stable_equilibrium, d.status
        );
    }
    out
}

/// Mode table CSV (`source,window,index,re,im,frequency_hz,damping_ratio`).
pub fn modes_csv(r: &ScenarioReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["source", "window", "index", "re", "im", "frequency_hz", "damping_ratio"])?;
    for m in &r.modal {
        for (name, set) in [("analytic", &m.analytic), ("estimated", &m.estimated)] {
            for (i, e) in set.eigenvalues.iter().enumerate() {
                if e.im < 0.0 {
                    continue;
                }
                let mag = e.re.hypot(e.im);
                let zeta = if mag > 0.0 { -e.re / mag } else { 0.0 };
                w.write_record([
                    name.to_string(),
                    m.window.clone(),
                    i.to_string(),
                    e.re.to_string(),
                    e.im.to_string(),
                    e.frequency_hz().to_string(),
                    zeta.to_string(),
                ])?;
            }
        }
    }
    for p in &r.prony {
        for (i, m) in p.modes.iter().enumerate() {
            if m.im < 0.0 {
                continue;
            }
            let mag = m.re.hypot(m.im);
            w.write_record([
                "prony".to_string(),
                p.signal.clone(),
                i.to_string(),
                m.re.to_string(),
                m.im.to_string(),
                m.frequency_hz.to_string(),
                (if mag > 0.0 { -m.re / mag } else { 0.0 }).to_string(),
            ])?;
        }
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?).map_err(|e| Error::InvalidInput(e.to_string()))
}

/// Participation factors of the least-damped pair (`source,window,state,factor`).
pub fn participation_csv(r: &ScenarioReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["source", "window", "state", "factor"])?;
    for m in &r.modal {
        for (name, set) in [("analytic", &m.analytic), ("estimated", &m.estimated)] {
            for p in &set.participation {
                w.write_record([name, m.window.as_str(), p.state.as_str(), p.factor.to_string().as_str()])?;
            }
        }
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?).map_err(|e| Error::InvalidInput(e.to_string()))
}

/// Write `trajectory.csv`, `estimates.json`, `modes.csv`, `pf.csv` and
/// `report.txt` (plus any `extra` text appended to the report).
pub fn write_bundle(run: &ScenarioRun, dir: impl AsRef<Path>, extra: &str) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    run.trajectory.save(dir.join("trajectory.csv"))?;
    std::fs::write(dir.join("estimates.json"), run.report.to_json()?)?;
    std::fs::write(dir.join("modes.csv"), modes_csv(&run.report)?)?;
    std::fs::write(dir.join("pf.csv"), participation_csv(&run.report)?)?;
    std::fs::write(dir.join("report.txt"), render_report(&run.report) + extra)?;
    Ok(())
}

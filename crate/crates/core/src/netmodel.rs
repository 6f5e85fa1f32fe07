//! Case data, network admittance construction and Kron reduction to the
//! generator internal nodes.
//!
//! Loads are modelled as constant impedances evaluated at the voltage stored
//! in the case; the operating point is never solved here.

use std::collections::{HashMap, HashSet, VecDeque};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    /// Voltage magnitude, p.u.
    pub vm: f64,
    /// Voltage angle, rad.
    #[serde(default)]
    pub va: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub id: usize,
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance.
    #[serde(default)]
    pub b: f64,
    /// Fixed off-nominal turns ratio on the `from` side.
    #[serde(default = "unity", skip_serializing_if = "is_unity")]
    pub tap: f64,
    #[serde(default = "in_service", skip_serializing_if = "Clone::clone")]
    pub status: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub bus: usize,
    pub p: f64,
    pub q: f64,
}

/// Flux-decay and exciter constants for the third-order machine model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThirdOrderParams {
    /// Synchronous d-axis reactance.
    pub xd: f64,
    /// d-axis open-circuit transient time constant, s.
    pub td0_prime: f64,
    /// Exciter gain.
    pub ka: f64,
    /// Exciter time constant, s.
    pub ta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub id: usize,
    pub bus: usize,
    pub xd_prime: f64,
    /// Inertia coefficient.
    pub m: f64,
    pub d: f64,
    /// Mechanical power, p.u.
    pub pm: f64,
    /// Reactive output at the stored operating point, p.u.
    #[serde(default)]
    pub q: f64,
    /// Standard deviation of the mechanical power noise.
    #[serde(default)]
    pub sigma: f64,
    /// Internal EMF magnitude; computed from the operating point when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub third_order: Option<ThirdOrderParams>,
}

/// A pre-reduced network supplied directly in the case file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedData {
    pub e: Vec<f64>,
    pub g: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    /// Internal angles at the operating point (Newton starting guess).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCase {
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_base")]
    pub base_mva: f64,
    #[serde(default)]
    pub buses: Vec<Bus>,
    #[serde(default)]
    pub branches: Vec<Branch>,
    #[serde(default)]
    pub loads: Vec<Load>,
    pub generators: Vec<Generator>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduced: Option<ReducedData>,
}

fn unity() -> f64 {
    1.0
}

fn is_unity(x: &f64) -> bool {
    *x == 1.0
}

fn in_service() -> bool {
    true
}

fn default_base() -> f64 {
    100.0
}

const WSCC9: &str = include_str!("../data/cases/wscc9.json");
const IEEE39: &str = include_str!("../data/cases/ieee39.json");

/// Names of the cases compiled into the library.
pub const BUILTIN_CASES: [&str; 2] = ["wscc9", "ieee39"];

impl RawCase {
    pub fn from_json(text: &str) -> Result<Self> {
        let case: RawCase = serde_json::from_str(text)?;
        case.validate()?;
        Ok(case)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn builtin(name: &str) -> Option<Self> {
        let text = match name {
            "wscc9" => WSCC9,
            "ieee39" => IEEE39,
            _ => return None,
        };
        Some(Self::from_json(text).expect("builtin case is valid"))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn n_generators(&self) -> usize {
        self.generators.len()
    }

    /// Position of generator `id` in `generators`.
    pub fn generator_index(&self, id: usize) -> Result<usize> {
        self.generators
            .iter()
            .position(|g| g.id == id)
            .ok_or(Error::UnknownGenerator(id))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidCase(msg));
        if !(self.base_mva > 0.0) {
            return bad(format!("base_mva must be positive, got {}", self.base_mva));
        }
        if self.generators.len() < 2 {
            return bad("at least two generators are required".into());
        }
        let mut bus_ids = HashSet::new();
        for bus in &self.buses {
            if !bus_ids.insert(bus.id) {
                return bad(format!("duplicate bus id {}", bus.id));
            }
            if !(bus.vm > 0.0) || !bus.va.is_finite() {
                return bad(format!("bus {} has invalid voltage {}∠{}", bus.id, bus.vm, bus.va));
            }
        }
        let mut branch_ids = HashSet::new();
        for br in &self.branches {
            if !branch_ids.insert(br.id) {
                return bad(format!("duplicate branch id {}", br.id));
            }
            if br.r == 0.0 && br.x == 0.0 {
                return bad(format!("branch {} has zero impedance", br.id));
            }
            if !(br.tap > 0.0) {
                return bad(format!("branch {} has non-positive tap {}", br.id, br.tap));
            }
            for end in [br.from, br.to] {
                if !bus_ids.contains(&end) {
                    return bad(format!("branch {} references unknown bus {end}", br.id));
                }
            }
        }
        for load in &self.loads {
            if !bus_ids.contains(&load.bus) {
                return bad(format!("load references unknown bus {}", load.bus));
            }
        }
        let mut gen_ids = HashSet::new();
        for g in &self.generators {
            if !gen_ids.insert(g.id) {
                return bad(format!("duplicate generator id {}", g.id));
            }
            if self.reduced.is_none() && !bus_ids.contains(&g.bus) {
                return bad(format!("generator {} references unknown bus {}", g.id, g.bus));
            }
            if !(g.m > 0.0) || !(g.d >= 0.0) || !(g.sigma >= 0.0) || !(g.xd_prime >= 0.0) {
                return bad(format!(
                    "generator {} needs m > 0, d >= 0, sigma >= 0, xd' >= 0",
                    g.id
                ));
            }
            if !g.pm.is_finite() || !g.q.is_finite() {
                return bad(format!("generator {} has a non-finite operating point", g.id));
            }
        }
        if let Some(red) = &self.reduced {
            let n = self.generators.len();
            let square = |m: &Vec<Vec<f64>>| m.len() == n && m.iter().all(|r| r.len() == n);
            if red.e.len() != n || !square(&red.g) || !square(&red.b) {
                return bad(format!("reduced network must be {n}×{n} with {n} EMFs"));
            }
            if red.delta.as_ref().is_some_and(|d| d.len() != n) {
                return bad("reduced.delta length must equal the generator count".into());
            }
            let net = red.to_network()?;
            net.check_symmetric()?;
        }
        Ok(())
    }
}

impl ReducedData {
    fn to_network(&self) -> Result<ReducedNetwork> {
        let n = self.e.len();
        let g = DMatrix::from_fn(n, n, |i, j| self.g[i][j]);
        let b = DMatrix::from_fn(n, n, |i, j| self.b[i][j]);
        ReducedNetwork::new(g, b, DVector::from_column_slice(&self.e))
    }
}

/// Electrical model among the generator internal nodes after Kron reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedNetwork {
    pub g: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub e: DVector<f64>,
}

impl ReducedNetwork {
    pub fn new(g: DMatrix<f64>, b: DMatrix<f64>, e: DVector<f64>) -> Result<Self> {
        let n = e.len();
        if n < 2 {
            return Err(Error::InvalidCase("reduced network needs n >= 2".into()));
        }
        if g.shape() != (n, n) || b.shape() != (n, n) {
            return Err(Error::InvalidCase(format!("G and B must be {n}×{n}")));
        }
        Ok(Self { g, b, e })
    }

    pub fn from_admittance(y: &DMatrix<Complex64>, e: DVector<f64>) -> Result<Self> {
        Self::new(y.map(|c| c.re), y.map(|c| c.im), e)
    }

    pub fn n(&self) -> usize {
        self.e.len()
    }

    pub fn check_symmetric(&self) -> Result<()> {
        let asym = crate::linalg::asymmetry(&self.g).max(crate::linalg::asymmetry(&self.b));
        if asym > SYMMETRY_TOL {
            return Err(Error::InvalidCase(format!(
                "reduced network is not reciprocal (asymmetry {asym:.3e})"
            )));
        }
        Ok(())
    }

    pub fn with_emf(&self, e: DVector<f64>) -> Self {
        Self { g: self.g.clone(), b: self.b.clone(), e }
    }
}

/// Node admittance matrix over all buses followed by one internal node per
/// generator (in case order).
#[derive(Debug, Clone)]
pub struct AugmentedYbus {
    pub matrix: DMatrix<Complex64>,
    pub bus_ids: Vec<usize>,
    pub n_generators: usize,
}

impl AugmentedYbus {
    pub fn n_buses(&self) -> usize {
        self.bus_ids.len()
    }

    pub fn internal_nodes(&self) -> Vec<usize> {
        (self.n_buses()..self.n_buses() + self.n_generators).collect()
    }

    /// Bus id, or `None` for an internal node.
    fn node_label(&self, node: usize) -> Option<usize> {
        self.bus_ids.get(node).copied()
    }
}

pub fn build_augmented_ybus(case: &RawCase) -> Result<AugmentedYbus> {
    if case.buses.is_empty() {
        return Err(Error::InvalidCase("case has no bus data to build an admittance matrix".into()));
    }
    let nb = case.buses.len();
    let ng = case.generators.len();
    let index: HashMap<usize, usize> = case.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
    let mut y = DMatrix::<Complex64>::zeros(nb + ng, nb + ng);

    for br in case.branches.iter().filter(|b| b.status) {
        let (f, t) = (index[&br.from], index[&br.to]);
        let ys = Complex64::new(br.r, br.x).inv();
        let ysh = Complex64::new(0.0, br.b / 2.0);
        y[(f, f)] += (ys + ysh) / (br.tap * br.tap);
        y[(t, t)] += ys + ysh;
        y[(f, t)] -= ys / br.tap;
        y[(t, f)] -= ys / br.tap;
    }
    for load in &case.loads {
        let i = index[&load.bus];
        let vm = case.buses[i].vm;
        y[(i, i)] += Complex64::new(load.p, -load.q) / (vm * vm);
    }
    for (k, g) in case.generators.iter().enumerate() {
        if g.xd_prime == 0.0 {
            return Err(Error::InvalidCase(format!(
                "generator {} has xd' = 0; its internal node coincides with the terminal bus",
                g.id
            )));
        }
        let (t, int) = (index[&g.bus], nb + k);
        let yg = Complex64::new(0.0, g.xd_prime).inv();
        y[(t, t)] += yg;
        y[(int, int)] += yg;
        y[(t, int)] -= yg;
        y[(int, t)] -= yg;
    }
    Ok(AugmentedYbus { matrix: y, bus_ids: case.buses.iter().map(|b| b.id).collect(), n_generators: ng })
}

/// Schur-complement elimination of every node not in `keep`:
/// `Y_red = Y_kk − Y_ke · Y_ee⁻¹ · Y_ek`.
pub fn kron_reduce(y: &DMatrix<Complex64>, keep: &[usize]) -> Result<DMatrix<Complex64>> {
    let n = y.nrows();
    if y.ncols() != n {
        return Err(Error::InvalidInput("admittance matrix must be square".into()));
    }
    let keep_set: HashSet<usize> = keep.iter().copied().collect();
    if keep_set.len() != keep.len() || keep.iter().any(|&k| k >= n) {
        return Err(Error::InvalidInput("keep set has duplicates or out-of-range nodes".into()));
    }
    let elim: Vec<usize> = (0..n).filter(|i| !keep_set.contains(i)).collect();
    let y_kk = y.select_rows(keep).select_columns(keep);
    if elim.is_empty() {
        return Ok(y_kk);
    }
    let y_ke = y.select_rows(keep).select_columns(&elim);
    let y_ek = y.select_rows(&elim).select_columns(keep);
    let y_ee = y.select_rows(&elim).select_columns(&elim);

    let scale = y_ee.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let lu = y_ee.clone().lu();
    let pivot_min = lu.u().diagonal().iter().map(|c| c.norm()).fold(f64::INFINITY, f64::min);
    let solved = if pivot_min > 1e-12 * scale { lu.solve(&y_ek) } else { None };
    let Some(x) = solved else {
        return Err(match find_island(y, &elim, &keep_set) {
            Some(nodes) => Error::IslandedReduction { nodes },
            None => Error::SingularReduction,
        });
    };
    Ok(y_kk - y_ke * x)
}

/// First connected group of eliminated nodes with no branch to a kept node
/// and no shunt to ground.
fn find_island(y: &DMatrix<Complex64>, elim: &[usize], keep: &HashSet<usize>) -> Option<Vec<usize>> {
    let n = y.nrows();
    let scale = y.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let tiny = 1e-12 * scale.max(1.0);
    let mut seen = HashSet::new();
    for &start in elim {
        if !seen.insert(start) {
            continue;
        }
        let mut comp = vec![start];
        let mut queue = VecDeque::from([start]);
        let mut touches_kept = false;
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                if i == j || y[(i, j)].norm() <= tiny {
                    continue;
                }
                if keep.contains(&j) {
                    touches_kept = true;
                } else if seen.insert(j) {
                    comp.push(j);
                    queue.push_back(j);
                }
            }
        }
        let shunt: Complex64 = comp.iter().map(|&i| (0..n).map(|j| y[(i, j)]).sum::<Complex64>()).sum();
        if !touches_kept && shunt.norm() <= tiny * comp.len() as f64 {
            comp.sort_unstable();
            return Some(comp);
        }
    }
    None
}

/// Internal EMF behind the transient reactance: `E∠δ = V + j·xd'·(S/V)*`.
pub fn internal_emf(v_terminal: Complex64, s_gen: Complex64, xd_prime: f64) -> Result<(f64, f64)> {
    if !(v_terminal.norm() > 0.0) {
        return Err(Error::InvalidInput("terminal voltage magnitude must be positive".into()));
    }
    let current = (s_gen / v_terminal).conj();
    let e = v_terminal + Complex64::new(0.0, xd_prime) * current;
    Ok((e.norm(), e.arg()))
}

/// Reduced network plus the internal angles at the stored operating point.
#[derive(Debug, Clone)]
pub struct NetworkReduction {
    pub network: ReducedNetwork,
    pub internal_angles: DVector<f64>,
}

/// Reduce `case` to its generator internal nodes. EMFs come from `emf` when
/// given, otherwise from each generator's `e` or its operating point.
pub fn reduce_case(case: &RawCase, emf: Option<&DVector<f64>>) -> Result<NetworkReduction> {
    let ng = case.n_generators();
    if let Some(red) = &case.reduced {
        let mut network = red.to_network()?;
        if let Some(e) = emf {
            network.e = e.clone();
        }
        let angles = red.delta.clone().map(DVector::from_vec).unwrap_or_else(|| DVector::zeros(ng));
        return Ok(NetworkReduction { network, internal_angles: angles });
    }
    let aug = build_augmented_ybus(case)?;
    let keep = aug.internal_nodes();
    let y_red = kron_reduce(&aug.matrix, &keep).map_err(|err| match err {
        Error::IslandedReduction { nodes } => Error::InvalidCase(format!(
            "eliminated buses {:?} are islanded",
            nodes.iter().filter_map(|&k| aug.node_label(k)).collect::<Vec<_>>()
        )),
        other => other,
    })?;
    let bus_pos: HashMap<usize, usize> = case.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
    let mut e = DVector::zeros(ng);
    let mut angles = DVector::zeros(ng);
    for (k, g) in case.generators.iter().enumerate() {
        let bus = &case.buses[bus_pos[&g.bus]];
        let v = Complex64::from_polar(bus.vm, bus.va);
        let (mag, ang) = internal_emf(v, Complex64::new(g.pm, g.q), g.xd_prime)?;
        e[k] = emf.map(|x| x[k]).or(g.e).unwrap_or(mag);
        angles[k] = ang;
    }
    let network = ReducedNetwork::from_admittance(&y_red, e)?;
    Ok(NetworkReduction { network, internal_angles: angles })
}

/// A discrete change to case parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    SetXdPrime { gen: usize, value: f64 },
    ScaleDamping { gen: usize, factor: f64 },
    SetPm { gen: usize, value: f64 },
    BranchStatus { branch: usize, in_service: bool },
}

impl Event {
    /// Whether the event changes the reduced network (requires re-reduction).
    pub fn is_electrical(&self) -> bool {
        matches!(self, Event::SetXdPrime { .. } | Event::BranchStatus { .. })
    }
}

impl std::fmt::Display for Event {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Event::SetXdPrime { gen, value } => write!(f, "xd'(G{gen}) := {value}"),
            Event::ScaleDamping { gen, factor } => write!(f, "D(G{gen}) *= {factor}"),
            Event::SetPm { gen, value } => write!(f, "Pm(G{gen}) := {value}"),
            Event::BranchStatus { branch, in_service } => {
                write!(f, "branch {branch} {}", if *in_service { "in service" } else { "out of service" })
            }
        }
    }
}

/// Apply `events` in order and return the modified case.
pub fn apply_contingency(case: &RawCase, events: &[Event]) -> Result<RawCase> {
    let mut out = case.clone();
    for ev in events {
        match *ev {
            Event::SetXdPrime { gen, value } => {
                if !(value >= 0.0) {
                    return Err(Error::InvalidInput(format!("xd' must be >= 0, got {value}")));
                }
                if out.reduced.is_some() {
                    return Err(Error::InvalidInput(
                        "xd' changes need bus/branch data; the case only supplies a reduced network".into(),
                    ));
                }
                let k = out.generator_index(gen)?;
                out.generators[k].xd_prime = value;
            }
            Event::ScaleDamping { gen, factor } => {
                if !(factor >= 0.0) || !factor.is_finite() {
                    return Err(Error::InvalidInput(format!("damping factor must be >= 0, got {factor}")));
                }
                let k = out.generator_index(gen)?;
                out.generators[k].d *= factor;
            }
            Event::SetPm { gen, value } => {
                if !value.is_finite() {
                    return Err(Error::InvalidInput("Pm must be finite".into()));
                }
                let k = out.generator_index(gen)?;
                out.generators[k].pm = value;
            }
            Event::BranchStatus { branch, in_service } => {
                if out.reduced.is_some() {
                    return Err(Error::InvalidInput(
                        "branch switching needs bus/branch data; the case only supplies a reduced network".into(),
                    ));
                }
                let br = out
                    .branches
                    .iter_mut()
                    .find(|b| b.id == branch)
                    .ok_or(Error::UnknownBranch(branch))?;
                br.status = in_service;
            }
        }
    }
    Ok(out)
}

//! Hybrid measurement/model estimation of the dynamic state Jacobian of a
//! multi-machine power system.
//!
//! The crate simulates ambient stochastic swing dynamics in center-of-inertia
//! (COI) coordinates, recovers the COI Jacobian `∂Pe/∂δ̃` and generator damping
//! from windowed trajectory covariances, and feeds the estimated state matrix
//! into modal analysis, stability monitoring and re-dispatch planning.
//!
//! Module map:
//!
//! * [`netmodel`]: case files, admittance matrices, Kron reduction, contingencies.
//! * [`swingsim`]: COI swing model, equilibria, Euler–Maruyama simulation.
//! * [`analytic`]: exact linearization and the Lyapunov covariance oracle.
//! * [`estimator`]: covariance blocks, Jacobian and damping estimators.
//! * [`modal`]: eigen-analysis, participation factors, normal vector, re-dispatch.
//! * [`prony`]: Prony fitting used to cross-check modal results.
//! * [`scenario`] / [`repro`]: scripted pipelines and the shipped experiments.

pub mod analytic;
pub mod error;
pub mod estimator;
pub mod linalg;
pub mod modal;
pub mod netmodel;
pub mod prony;
pub mod repro;
pub mod scenario;
pub mod swingsim;
pub mod trajectory;

pub use analytic::{StateMatrix, TheoreticalCovariances};
pub use error::{Error, Result};
pub use estimator::{CovarianceBlocks, DampingEstimate, JacobianEstimate, SlidingCovariance};
pub use modal::{ModalDecomposition, RedispatchPlan};
pub use netmodel::{Event, RawCase, ReducedNetwork};
pub use prony::PronyResult;
pub use swingsim::{CoiModel, ContingencySchedule, Equilibrium, SimConfig, SimOutcome, SimStatus};
pub use trajectory::Trajectory;

pub use nalgebra::{DMatrix, DVector};
pub use num_complex::Complex64;

//! Euler–Maruyama integration with additive noise and scheduled events.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use super::ContingencySchedule;
use crate::error::{Error, Result};
use crate::netmodel::Event;
use crate::trajectory::Trajectory;

/// A system integrable by [`simulate`]: deterministic drift plus additive
/// white noise on selected state components.
pub trait StochasticSystem: Clone {
    fn state_dim(&self) -> usize;
    fn drift(&self, x: &[f64], dx: &mut [f64]);
    /// `(state index, amplitude)`; the state receives `amplitude·√dt·N(0,1)` per step.
    fn noise_channels(&self) -> Vec<(usize, f64)>;
    /// Recorded columns: the independent `δ̃` then `ω̃`.
    fn observed_dim(&self) -> usize;
    fn observe(&self, x: &[f64], out: &mut [f64]);
    fn diverged(&self, x: &[f64]) -> bool;
    fn apply_event(&self, event: &Event) -> Result<Self>;
    fn machine_labels(&self) -> Vec<usize>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub record_every: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { dt: 1e-3, t_end: 10.0, record_every: 10, seed: 0 }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidInput(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(Error::InvalidInput(format!("T must be non-negative, got {}", self.t_end)));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidInput("record_every must be at least 1".into()));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledEvent {
    pub time: f64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SimStatus {
    Completed,
    Diverged { time: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub trajectory: Trajectory,
    pub status: SimStatus,
}

impl SimOutcome {
    pub fn diverged(&self) -> bool {
        matches!(self.status, SimStatus::Diverged { .. })
    }
}

/// Standard normal draws: ChaCha8 stream, 53-bit uniforms, Box–Muller pairs.
pub struct NormalStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), spare: None }
    }

    /// Uniform on the open interval (0, 1).
    fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let r = (-2.0 * self.uniform().ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * self.uniform()).sin_cos();
        self.spare = Some(r * s);
        r * c
    }
}

/// Step index at which an event at `time` takes effect.
fn event_step(time: f64, dt: f64) -> usize {
    let k = time / dt;
    let nearest = k.round();
    if (k - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest as usize
    } else {
        k.ceil() as usize
    }
}

pub fn simulate<S: StochasticSystem>(
    system: &S,
    schedule: &ContingencySchedule,
    x0: &[f64],
    config: &SimConfig,
) -> Result<SimOutcome> {
    config.validate()?;
    schedule.validate()?;
    let dim = system.state_dim();
    if x0.len() != dim {
        return Err(Error::InvalidInput(format!("initial state has length {}, expected {dim}", x0.len())));
    }
    if let Some(e) = schedule.events().iter().find(|e| e.time > config.t_end) {
        return Err(Error::InvalidInput(format!("event at {} s lies beyond T = {} s", e.time, config.t_end)));
    }

    let n_steps = config.n_steps();
    let period = config.dt * config.record_every as f64;
    let mut traj = Trajectory::new(period, 0.0, system.machine_labels())?;
    let mut row = vec![0.0; system.observed_dim()];

    let mut sys = system.clone();
    let mut channels = sys.noise_channels();
    let mut pending = schedule.events().iter().map(|e| (event_step(e.time, config.dt), &e.event)).peekable();

    let mut x = x0.to_vec();
    let mut dx = vec![0.0; dim];
    let mut noise = NormalStream::new(config.seed);
    let sqrt_dt = config.dt.sqrt();

    for k in 0..=n_steps {
        while let Some(&(at, event)) = pending.peek() {
            if at > k {
                break;
            }
            sys = sys.apply_event(event)?;
            channels = sys.noise_channels();
            pending.next();
        }
        if k % config.record_every == 0 {
            sys.observe(&x, &mut row);
            traj.push_row(&row)?;
        }
        if k == n_steps {
            break;
        }
        sys.drift(&x, &mut dx);
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += config.dt * di;
        }
        for &(idx, amp) in &channels {
            x[idx] += amp * sqrt_dt * noise.next();
        }
        if sys.diverged(&x) {
            return Ok(SimOutcome {
                trajectory: traj,
                status: SimStatus::Diverged { time: (k + 1) as f64 * config.dt },
            });
        }
    }
    Ok(SimOutcome { trajectory: traj, status: SimStatus::Completed })
}

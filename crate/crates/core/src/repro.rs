//! The shipped experiments: each is a scenario file plus acceptance bands.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{self, Scenario, ScenarioReport, ScenarioRun};
use crate::swingsim::SimStatus;

pub const EXPERIMENTS: [&str; 5] = ["9bus", "39bus-oscillation", "39bus-stability", "39bus-damping", "appendix-3rd-order"];

fn scenario_text(name: &str) -> Option<&'static str> {
    Some(match name {
        "9bus" => include_str!("../data/scenarios/9bus.json"),
        "39bus-oscillation" => include_str!("../data/scenarios/39bus-oscillation.json"),
        "39bus-stability" => include_str!("../data/scenarios/39bus-stability.json"),
        "39bus-damping" => include_str!("../data/scenarios/39bus-damping.json"),
        "appendix-3rd-order" => include_str!("../data/scenarios/appendix-3rd-order.json"),
        _ => return None,
    })
}

/// The shipped scenario for `name`, optionally with a different seed.
pub fn scenario(name: &str, seed: Option<u64>) -> Result<Scenario> {
    let text = scenario_text(name)
        .ok_or_else(|| Error::UnknownExperiment { name: name.to_string(), valid: EXPERIMENTS.join(", ") })?;
    let mut s = Scenario::from_json(text)?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    Ok(s)
}

/// Fixed six decimals, switching to scientific notation for small magnitudes.
fn num(v: f64) -> String {
    if v != 0.0 && v.abs() < 1e-3 {
        format!("{v:.3e}")
    } else {
        format!("{v:.6}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub band: String,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, band: format!("<= {}", num(limit)), pass: value <= limit }
    }

    pub fn at_least(name: &str, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, band: format!(">= {}", num(limit)), pass: value >= limit }
    }

    pub fn within(name: &str, value: f64, lo: f64, hi: f64) -> Self {
        Self { name: name.into(), value, band: format!("in [{}, {}]", num(lo), num(hi)), pass: (lo..=hi).contains(&value) }
    }

    pub fn holds(name: &str, ok: bool) -> Self {
        Self { name: name.into(), value: if ok { 1.0 } else { 0.0 }, band: "true".into(), pass: ok }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {} ({})", if self.pass { "PASS" } else { "FAIL" }, self.name, num(self.value), self.band)
    }
}

#[derive(Debug, Clone)]
pub struct ReproOutcome {
    pub name: String,
    pub run: ScenarioRun,
    pub checks: Vec<Check>,
}

impl ReproOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "\nacceptance checks for {}:", self.name);
        for c in &self.checks {
            let _ = writeln!(out, "  {}", c.line());
        }
        out
    }

    /// Write the scenario bundle with the check summary appended to the report.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        scenario::write_bundle(&self.run, dir, &self.summary())
    }
}

fn missing(what: &str) -> Check {
    Check { name: what.into(), value: f64::NAN, band: "present".into(), pass: false }
}

fn window_checks(r: &ScenarioReport, checks: &mut Vec<Check>, label: &str, limit: f64) {
    match r.window(label) {
        Some(w) => checks.push(Check::at_most(&format!("{label} estimate relative error"), w.error, limit)),
        None => checks.push(missing(&format!("{label} window"))),
    }
}

fn checks_for(name: &str, r: &ScenarioReport) -> Vec<Check> {
    let mut c = Vec::new();
    match name {
        "9bus" => {
            window_checks(r, &mut c, "pre", 0.10);
            window_checks(r, &mut c, "post", 0.10);
            match r.window("post").and_then(|w| w.stale_error) {
                Some(s) => c.push(Check::at_least("stale pre-contingency matrix error", s, 0.20)),
                None => c.push(missing("stale error")),
            }
        }
        "39bus-oscillation" => {
            match r.modal.iter().find(|m| m.window == "post") {
                Some(m) => {
                    for (src, set) in [("analytic", &m.analytic), ("estimated", &m.estimated)] {
                        match set.least_damped {
                            Some(l) => c.push(Check::within(&format!("{src} least-damped frequency (Hz)"), l.frequency_hz(), 0.5, 3.0)),
                            None => c.push(missing(&format!("{src} least-damped pair"))),
                        }
                        let top: Vec<&str> = set.participation.iter().take(2).map(|p| p.state.as_str()).collect();
                        let dominant = top.contains(&"dtilde_4") && top.contains(&"wtilde_4");
                        c.push(Check::holds(&format!("{src} participation dominated by generator 4"), dominant));
                        let pf = set.participation.first().map(|p| p.factor).unwrap_or(f64::NAN);
                        c.push(Check::at_least(&format!("{src} maximum participation factor"), pf, 0.3));
                    }
                }
                None => c.push(missing("post-contingency modal analysis")),
            }
            match r.prony.first().and_then(|p| p.matched.as_ref()) {
                Some(m) => {
                    c.push(Check::at_most("prony frequency gap (Hz)", m.frequency_gap_hz, 0.15));
                    c.push(Check::at_most("prony damping gap (1/s)", m.damping_gap, 0.15));
                }
                None => c.push(missing("prony mode matching the least-damped eigenvalue")),
            }
        }
        "39bus-stability" => {
            match &r.tuning {
                Some(t) => c.push(Check::within("tuned analytic critical eigenvalue", t.critical, -0.05, -0.01)),
                None => c.push(missing("tuning")),
            }
            match r.redispatch.first() {
                Some(d) => {
                    c.push(Check::at_most(
                        "estimated vs analytic critical eigenvalue gap",
                        (d.critical_estimated.re - d.critical_analytic.re).abs(),
                        0.05,
                    ));
                    c.push(Check::holds("machine 1 ranked first", d.ranking.first().map(|m| m.machine) == Some(1)));
                    c.push(Check::at_most("re-dispatch imbalance", d.plan.total().abs(), 1e-12));
                    let sum_n: f64 = d.normal_vector.iter().sum();
                    c.push(Check::at_most("slack pickup minus step times sum of n", (d.plan.slack_pickup - d.plan.step * sum_n).abs(), 1e-12));
                    c.push(Check::at_least("critical eigenvalue decrease after re-dispatch", d.critical_analytic.re - d.critical_after, 0.1));
                    c.push(Check::holds("stable after re-dispatch", d.stable_after));
                }
                None => c.push(missing("re-dispatch analysis")),
            }
            match r.divergence.first() {
                Some(d) => c.push(Check::holds(
                    "raising xd' by 1e-3 leads to divergence",
                    matches!(d.status, SimStatus::Diverged { .. }),
                )),
                None => c.push(missing("divergence run")),
            }
        }
        "39bus-damping" => match r.damping.first() {
            Some(d) => {
                let worst = d.relative_error.iter().copied().fold(0.0, f64::max);
                c.push(Check::at_most("largest damping relative error", worst, 0.10));
            }
            None => c.push(missing("damping analysis")),
        },
        "appendix-3rd-order" => window_checks(r, &mut c, "all", 0.10),
        _ => {}
    }
    c
}

/// Run a shipped experiment in memory and evaluate its acceptance bands.
pub fn repro(name: &str, seed: Option<u64>) -> Result<ReproOutcome> {
    let s = scenario(name, seed)?;
    let run = scenario::execute(&s, Path::new("."))?;
    let checks = checks_for(name, &run.report);
    Ok(ReproOutcome { name: name.to_string(), run, checks })
}

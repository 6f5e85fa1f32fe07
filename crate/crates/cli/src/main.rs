use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gridjac_core::prony::{prony_fit, PronyConfig};
use gridjac_core::repro;
use gridjac_core::scenario::{self, Analysis, ModelKind, Scenario, ScenarioRun, Window};
use gridjac_core::swingsim::ScheduledEvent;
use gridjac_core::{Error, Trajectory};

const EXIT_INPUT: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_BAND: u8 = 4;

#[derive(Parser)]
#[command(name = "gridjac", version, about = "Estimate power-system state Jacobians from ambient swing dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate ambient dynamics and write the trajectory.
    Simulate(Source),
    /// Estimate the COI Jacobian over one or more windows.
    Estimate {
        #[command(flatten)]
        source: Source,
        /// Estimation window `start,end` in seconds; repeatable.
        #[arg(long, value_parser = parse_window, required = true)]
        window: Vec<(f64, f64)>,
    },
    /// Eigenvalues and participation factors of the analytic and estimated state matrices.
    Modal {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_parser = parse_window)]
        window: (f64, f64),
    },
    /// Estimate generator damping from speed variances.
    Damping {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_parser = parse_window)]
        window: (f64, f64),
    },
    /// Fit damped sinusoids to one trajectory column.
    Prony {
        #[command(flatten)]
        source: Source,
        /// Fitting span `start,end` in seconds.
        #[arg(long, value_parser = parse_window)]
        window: (f64, f64),
        /// Column name, e.g. `dtilde_4`.
        #[arg(long, default_value = "dtilde_1")]
        signal: String,
        #[arg(long, default_value_t = 19)]
        order: usize,
        #[arg(long, default_value_t = 1)]
        decimate: usize,
        /// Match the fit against the modes estimated over this window.
        #[arg(long, value_parser = parse_window)]
        compare: Option<(f64, f64)>,
    },
    /// Critical mode, machine ranking and the normal-vector re-dispatch plan.
    Redispatch {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_parser = parse_window)]
        window: (f64, f64),
        /// Re-dispatch step in p.u.
        #[arg(long, default_value_t = 1.0)]
        step: f64,
        /// Generator id absorbing the imbalance (default: least sensitive).
        #[arg(long)]
        slack: Option<usize>,
    },
    /// Run a shipped experiment and check its acceptance bands.
    Repro {
        name: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario file.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Classical,
    ThirdOrder,
}

/// Where the trajectory comes from: a recorded CSV or a fresh simulation.
#[derive(Args)]
struct Source {
    /// Built-in case (`wscc9`, `ieee39`) or case file path.
    #[arg(long)]
    case: Option<String>,
    /// JSON list of timed events.
    #[arg(long)]
    schedule: Option<PathBuf>,
    /// Analyze this trajectory CSV instead of simulating.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "classical")]
    model: Model,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Integration step in seconds.
    #[arg(long, default_value_t = 0.001)]
    dt: f64,
    /// Simulated horizon in seconds (default: end of the last window).
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long, default_value_t = 10)]
    record_every: usize,
    /// Per-generator noise intensities, comma separated.
    #[arg(long, value_delimiter = ',')]
    sigma: Option<Vec<f64>>,
    /// Output directory for the bundle.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_window(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected start,end but got '{s}'"))?;
    let a: f64 = a.trim().parse().map_err(|e| format!("bad window start '{a}': {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("bad window end '{b}': {e}"))?;
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(format!("window needs finite start < end, got {a},{b}"));
    }
    Ok((a, b))
}

enum Failure {
    Core(Error),
    Band(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn window(label: &str, (start, end): (f64, f64)) -> Window {
    Window { label: label.into(), start, end }
}

impl Source {
    fn scenario(&self, name: &str, windows: Vec<Window>, analyses: Vec<Analysis>) -> Result<(Scenario, Option<Trajectory>), Error> {
        let case = self.case.clone().ok_or_else(|| Error::InvalidInput("--case is required".into()))?;
        let events: Vec<ScheduledEvent> = match &self.schedule {
            Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
            None => vec![],
        };
        let recorded = self.trajectory.as_ref().map(Trajectory::load).transpose()?;
        let t_end = match (&recorded, self.t_end) {
            (Some(t), _) => t.end_time(),
            (None, Some(t)) => t,
            (None, None) => windows
                .iter()
                .map(|w| w.end)
                .fold(None, |m: Option<f64>, e| Some(m.map_or(e, |m| m.max(e))))
                .ok_or_else(|| Error::InvalidInput("--t-end is required without a window".into()))?,
        };
        let scenario = Scenario {
            name: name.into(),
            case,
            model: match self.model {
                Model::Classical => ModelKind::Classical,
                Model::ThirdOrder => ModelKind::ThirdOrder,
            },
            sigma: self.sigma.clone(),
            initial_events: vec![],
            dt: self.dt,
            t_end,
            record_every: self.record_every,
            seed: self.seed,
            events,
            windows,
            analyses,
            allow_event_crossing: false,
            tune: None,
        };
        scenario.validate()?;
        Ok((scenario, recorded))
    }

    fn run(&self, name: &str, windows: Vec<Window>, analyses: Vec<Analysis>) -> Result<(), Failure> {
        let (scenario, recorded) = self.scenario(name, windows, analyses)?;
        let base = std::env::current_dir().map_err(Error::from)?;
        let run = match recorded {
            Some(t) => scenario::analyze(&scenario, &base, t)?,
            None => scenario::execute(&scenario, &base)?,
        };
        emit(&run, self.out.as_deref(), "")
    }
}

fn emit(run: &ScenarioRun, out: Option<&Path>, extra: &str) -> Result<(), Failure> {
    print!("{}{extra}", scenario::render_report(&run.report));
    if let Some(dir) = out {
        scenario::write_bundle(run, dir, extra)?;
        println!("\nbundle written to {}", dir.display());
    }
    Ok(())
}

/// Prony on a bare trajectory, with no case to compare against.
fn prony_only(path: &Path, signal: &str, (start, end): (f64, f64), order: usize, decimate: usize, out: Option<&Path>) -> Result<(), Failure> {
    let traj = Trajectory::load(path)?;
    let col = traj.column_index(signal)?;
    let x: Vec<f64> = traj.window_rows(start, end)?.map(|i| traj.row(i)[col]).collect();
    let fit = prony_fit(&x, traj.sample_period(), &PronyConfig::new(order).with_decimation(decimate))?;
    let mut csv = String::from("index,re,im,frequency_hz,amplitude,phase\n");
    println!("prony {signal} [{start}, {end}] s, order {order}, rms error {:.4}", fit.rms_error);
    for (i, m) in fit.modes.iter().enumerate() {
        csv.push_str(&format!("{i},{},{},{},{},{}\n", m.lambda.re, m.lambda.im, m.frequency_hz(), m.amplitude, m.phase));
        if m.lambda.im >= 0.0 {
            println!("  {:.4} {:+.4}i ({:.3} Hz) amplitude {:.3e}", m.lambda.re, m.lambda.im, m.frequency_hz(), m.amplitude);
        }
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(Error::from)?;
        std::fs::write(dir.join("modes.csv"), csv).map_err(Error::from)?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate(source) => source.run("simulate", vec![], vec![]),
        Command::Estimate { source, window: ws } => {
            let windows = ws.iter().enumerate().map(|(i, &w)| window(&format!("w{}", i + 1), w)).collect();
            source.run("estimate", windows, vec![Analysis::Estimate])
        }
        Command::Modal { source, window: w } => {
            source.run("modal", vec![window("w", w)], vec![Analysis::Modal { window: "w".into() }])
        }
        Command::Damping { source, window: w } => {
            source.run("damping", vec![window("w", w)], vec![Analysis::Damping { window: "w".into() }])
        }
        Command::Prony { source, window: (start, end), signal, order, decimate, compare } => {
            if source.case.is_none() {
                let path = source.trajectory.as_deref().ok_or_else(|| Error::InvalidInput("prony needs --trajectory or --case".into()))?;
                if compare.is_some() {
                    return Err(Error::InvalidInput("--compare needs --case".into()).into());
                }
                return prony_only(path, &signal, (start, end), order, decimate, source.out.as_deref());
            }
            let windows = compare.map(|c| vec![window("compare", c)]).unwrap_or_default();
            let analysis = Analysis::Prony {
                signal,
                start,
                end,
                order,
                decimate,
                remove_mean: true,
                compare_window: compare.map(|_| "compare".into()),
                tol_f: 0.15,
                tol_sigma: 0.15,
            };
            source.run("prony", windows, vec![analysis])
        }
        Command::Redispatch { source, window: w, step, slack } => {
            source.run("redispatch", vec![window("w", w)], vec![Analysis::Redispatch { window: "w".into(), step, slack }])
        }
        Command::Repro { name, seed, out } => {
            let outcome = repro::repro(&name, seed)?;
            emit(&outcome.run, out.as_deref(), &outcome.summary())?;
            if outcome.passed() {
                Ok(())
            } else {
                Err(Failure::Band(format!("{name}: acceptance band check failed")))
            }
        }
        Command::Run { scenario: path, seed, out } => {
            let (mut s, dir) = Scenario::load(&path)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let run = scenario::execute(&s, &dir)?;
            emit(&run, out.as_deref(), "")
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Band(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_BAND)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_INPUT })
        }
    }
}

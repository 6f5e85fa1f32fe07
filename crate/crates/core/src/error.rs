use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid case: {0}")]
    InvalidCase(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown generator id {0}")]
    UnknownGenerator(usize),

    #[error("unknown branch id {0}")]
    UnknownBranch(usize),

    #[error("kron reduction failed: eliminated nodes {nodes:?} form an island with no path to kept nodes")]
    IslandedReduction { nodes: Vec<usize> },

    #[error("kron reduction failed: eliminated block is numerically singular")]
    SingularReduction,

    #[error("equilibrium search did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("no stationary covariance: state matrix is not Hurwitz (max real part {max_real:.3e})")]
    NotHurwitz { max_real: f64 },

    #[error("{what} is ill-conditioned (condition number {cond:.3e}); use a longer window")]
    IllConditioned { what: &'static str, cond: f64 },

    #[error("singular matrix: {0}")]
    Singular(&'static str),

    #[error("insufficient samples: have {have}, need at least {need}")]
    InsufficientSamples { have: usize, need: usize },

    #[error("eigen decomposition failed: {0}")]
    Eigen(String),

    #[error("normal vector is defined at a real critical eigenvalue only (got {re:.4} {im:+.4}i)")]
    ComplexCritical { re: f64, im: f64 },

    #[error("prony prediction matrix is rank deficient (rank {rank} < order {order}); lower the model order")]
    RankDeficient { rank: usize, order: usize },

    #[error("window [{start}, {end}] s crosses scheduled event at {event_time} s")]
    WindowCrossesEvent { start: f64, end: f64, event_time: f64 },

    #[error("unknown repro experiment '{name}'; valid names: {valid}")]
    UnknownExperiment { name: String, valid: String },

    #[error("{stage}: {source}")]
    Stage { stage: String, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of a numerical stage (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        if let Error::Stage { source, .. } = self {
            return source.is_numerical();
        }
        matches!(
            self,
            Error::SingularReduction
                | Error::NoConvergence { .. }
                | Error::NotHurwitz { .. }
                | Error::IllConditioned { .. }
                | Error::Singular(_)
                | Error::InsufficientSamples { .. }
                | Error::Eigen(_)
                | Error::ComplexCritical { .. }
                | Error::RankDeficient { .. }
        )
    }
}

/// Tag an error with the pipeline stage that produced it.
pub trait StageContext<T> {
    fn stage(self, stage: impl Into<String>) -> Result<T>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: impl Into<String>) -> Result<T> {
        self.map_err(|e| Error::Stage { stage: stage.into(), source: Box::new(e) })
    }
}

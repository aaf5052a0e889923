use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-positive conductivity {value} on triangle {triangle}")]
    NonPositiveConductivity { triangle: usize, value: f64 },

    #[error("incompatible Neumann datum: boundary mean {mean:e}")]
    IncompatibleNeumann { mean: f64 },

    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),

    #[error("degenerate region: no triangle rasterizes into it")]
    DegenerateRegion,

    #[error("matrix is not symmetric (relative asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("linear solve did not reach tolerance (relative residual {residual:e})")]
    SolveResidual { residual: f64 },

    #[error("data not monotonically consistent: smallest eigenvalue {lambda_min:e}")]
    DataNotMonotone { lambda_min: f64 },

    #[error("box QP did not converge in {iterations} sweeps (optimality residual {residual:e})")]
    QpNotConverged {
        iterations: usize,
        residual: f64,
        last: Vec<f64>,
    },

    #[error("CFL violation: dt = {dt:e} exceeds admissible {admissible:e}")]
    Cfl { dt: f64, admissible: f64 },

    #[error("stationary initialization: no descent at the minimal time step")]
    StationaryInitialization,

    #[error("empty monotonicity reconstruction")]
    EmptyReconstruction,

    #[error("lost the sign-change bracket for sigma1: {0}")]
    BracketLost(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}

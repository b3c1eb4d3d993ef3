use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong across system construction, stepping,
/// optimization, diagnostics, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{context}: expected dimension {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("J(x) is not skew-symmetric at x = {sample:?} (defect {defect:.3e})")]
    NonSkewJ { sample: Vec<f64>, defect: f64 },

    #[error("R(x) is not symmetric positive semidefinite at x = {sample:?}: {detail}")]
    NonPsdR { sample: Vec<f64>, detail: String },

    #[error("Q is not symmetric positive definite: {detail}")]
    NonPdQ { detail: String },

    #[error("I - (h/2)(J-R)Q is singular at the evaluated state (smallest pivot {pivot:.3e})")]
    SingularJminus { pivot: f64 },

    #[error("Newton iteration hit a singular Jacobian")]
    SingularJacobian,

    #[error("Newton iteration stopped after {iterations} steps with residual {residual:.3e}")]
    NewtonDivergence { iterations: usize, residual: f64 },

    #[error(
        "discrete gradient violates the secant identity: residual {residual:.3e} > {tolerance:.3e}"
    )]
    QuadratureFailure { residual: f64, tolerance: f64 },

    #[error("{context} requires a quadratic Hamiltonian")]
    NonQuadraticHamiltonian { context: String },

    #[error("parse error at byte {position}: expected {expected}")]
    SyntaxError { position: usize, expected: String },

    #[error("unknown identifier `{name}` at byte {position}")]
    UnknownIdentifier { name: String, position: usize },

    #[error("expression evaluation failed: {reason}")]
    EvalError { reason: String },

    #[error("{path}: {message}")]
    SchemaError { path: String, message: String },

    #[error("unknown registry system `{name}` (available: {available})")]
    UnknownSystem { name: String, available: String },

    #[error("step {k} failed: {source}")]
    StepFailed {
        k: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("grid enumeration would visit {total:.3e} points, above the 1e7 cap")]
    GridTooLarge { total: f64 },

    #[error(
        "no grid point meets the terminal condition within {tolerance:.3e} (best defect {best_defect:.3e})"
    )]
    NoFeasibleGridPoint { tolerance: f64, best_defect: f64 },

    #[error("phase trajectories do not line up: {detail}")]
    PhaseMismatch { detail: String },

    #[error("projection onto the residual zero set stalled (last residual {residual:.3e})")]
    ProjectionDivergence { residual: f64 },

    #[error("constant estimate needs at least 10 off-manifold samples, found {valid}")]
    DegenerateSampling { valid: usize },

    #[error("counterexample construction does not apply: {reason}")]
    NotApplicable { reason: String },

    #[error("invalid problem: {reason}")]
    InvalidProblem { reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Attach a step index to an error raised while advancing a trajectory.
    pub fn at_step(self, k: usize) -> Error {
        Error::StepFailed {
            k,
            source: Box::new(self),
        }
    }
}

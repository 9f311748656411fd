use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum KdvError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("characteristic cubic has a repeated root at lambda = {lambda}; perturb lambda")]
    DegenerateCubic { lambda: f64 },

    #[error("length L = {length} is critical (nearest critical length {nearest}, distance {distance:e})")]
    CriticalLength {
        length: f64,
        nearest: f64,
        distance: f64,
    },

    #[error("root finder did not converge for mode k = {k}")]
    RootNotConverged { k: i32 },

    #[error("modes {k1} and {k2} converged to the same frequency {lambda}")]
    DuplicateRoot { k1: i32, k2: i32, lambda: f64 },

    #[error("frequency gap is not positive (gamma = {gamma:e}); spectrum invalid")]
    NonPositiveGap { gamma: f64 },

    #[error("boundary slope of mode k = {k} is degenerate (|phi'_k(L)| = {slope:e})")]
    DegenerateSlope { k: i32, slope: f64 },

    #[error("window quadrature did not converge (estimated error {estimate:e})")]
    Quadrature { estimate: f64 },

    #[error("Paley-Wiener support check failed: tail mass fraction {tail:e} exceeds {bound:e}")]
    SupportViolation { tail: f64, bound: f64 },

    #[error("imaginary residue {ratio:e} exceeds bound {bound:e}; control is not real")]
    ImaginaryResidue { ratio: f64, bound: f64 },

    #[error(
        "Gram matrix condition number {cond:e} exceeds cap {cap:e}; use larger T or fewer modes"
    )]
    IllConditioned { cond: f64, cap: f64 },

    #[error("Gram matrix is not numerically positive definite")]
    NotPositiveDefinite,

    #[error("gamma calibration failed after {doublings} doublings (last gamma {gamma})")]
    CalibrationFailed { doublings: usize, gamma: f64 },

    #[error("singular linear system in {context}")]
    Singular { context: &'static str },

    #[error("non-finite state detected at time step {step}")]
    NonFinite { step: usize },

    #[error("time step violates the nonlinear stability bound at step {step}: dt*max|y|/h = {ratio:e} > {kappa}")]
    Unstable { step: usize, ratio: f64, kappa: f64 },

    #[error("Picard inner iteration did not converge at step {step}")]
    PicardNotConverged { step: usize },

    #[error(
        "modal basis of {modes} modes cannot represent the initial state (relative tail {tail:e})"
    )]
    ProjectionTail { modes: usize, tail: f64 },

    #[error("eigensolve failed: {0}")]
    Eigensolve(String),

    #[error("iteration diverged: residuals {residuals:?}")]
    Diverged { residuals: Vec<f64> },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<KdvError>,
    },

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl KdvError {
    /// Wrap an error with the name of the pipeline stage that produced it.
    pub fn at(self, stage: &'static str) -> KdvError {
        KdvError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, KdvError>;

use thiserror::Error;

/// Failures raised anywhere in the simulation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid coupling k_F a = {0}: only the attractive branch k_F a < 0 is supported")]
    InvalidCoupling(f64),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("root solver did not converge after {iterations} iterations ({context})")]
    NoConvergence { iterations: usize, context: String },

    #[error("overlap row {row} has norm {norm:.3e}, below 1 - epsilon")]
    UnitarityViolation { row: usize, norm: f64 },

    #[error("particle number {low:.6} .. {high:.6} on the chemical-potential bracket does not straddle {target}")]
    BracketFailure { low: f64, high: f64, target: f64 },

    #[error("truncation needs {needed} perturbed states but only {available} were solved")]
    TruncationOverflow { needed: usize, available: usize },

    #[error("harmonic sector not converged: low-lying level shifted by {shift:.3e} when the basis was doubled")]
    ConvergenceFailure { shift: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("time grid too coarse: phase jumps by {jump:.3} rad between t = {t0} and t = {t1}")]
    GridTooCoarse { t0: f64, t1: f64, jump: f64 },

    #[error("Fock space of {modes} modes exceeds the cap of {cap}")]
    FockSpaceTooLarge { modes: usize, cap: usize },

    #[error("spectral window too weak: |v| e^(-eta t) = {tail:.3e} at the end of the trace")]
    WindowTooWeak { tail: f64 },

    #[error("thermodynamic limit not reached after shell count {shell_count} (max |dv| = {delta:.3e})")]
    NonConvergence { shell_count: usize, delta: f64 },

    #[error("polylogarithm evaluation failed to converge (order {order}, argument {argument})")]
    PolylogDivergence { order: f64, argument: f64 },

    #[error("weak-coupling validity violated: pi * alpha * T = {0}")]
    ValidityViolation(f64),

    #[error("phase branches at T(1 +/- dT) differ by {gap:.3} rad at t = {t}")]
    BranchMisalignment { t: f64, gap: f64 },

    #[error("SLD angle undefined: no temperature sensitivity")]
    UndefinedAngle,

    #[error("deterministic outcome: 1 - <X>^2 = {0:.3e}")]
    DegenerateOutcome(f64),

    #[error("QSNR still rising at the end of the time grid (t = {0}); extend the grid")]
    ExtendGrid(f64),

    #[error("likelihood maximum sits on the bracket edge T = {0}")]
    BoundaryMaximum(f64),

    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),

    #[error("harmonic trap trace requested beyond the half period: omega0 t = {0}")]
    RecurrenceExcluded(f64),

    #[error("io: {0}")]
    Io(String),

    #[error("format: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

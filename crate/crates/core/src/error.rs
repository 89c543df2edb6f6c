use thiserror::Error;

/// Errors raised by the amplifier model and its analyses.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),

    #[error("order {order} exceeds the largest supported order {max}")]
    UnsupportedOrder { order: i32, max: i32 },

    #[error("imaginary residue {residue:.3e} exceeds tolerance (relative to {scale:.3e})")]
    ResidueTooLarge { residue: f64, scale: f64 },

    #[error("input {value} outside the admissible range {range}")]
    OutOfRange { value: f64, range: &'static str },

    #[error("linear system is numerically singular (condition estimate {condition:.3e})")]
    SingularSystem { condition: f64 },

    #[error("division by zero: {0}")]
    DivisionByZero(&'static str),

    #[error("switching is not transversal: 1 - T*slope/2 = {0:.3e}")]
    TransversalityViolation(f64),

    #[error("candidate multiplier lies on a pole of the scalar eigenvalue equation (mode {mode})")]
    Pole { mode: usize },

    #[error("no sign change of the stability margin between {lo} and {hi}")]
    NoSignChange { lo: f64, hi: f64 },

    #[error("resonance: e^(i w T) is within {distance:.3e} of an eigenvalue")]
    Resonance { distance: f64 },

    #[error("duty cycle saturates: |U| = {0} >= 1")]
    Saturation(f64),

    #[error("no crossing in [{lo:.6e}, {hi:.6e}]")]
    NoCrossing { lo: f64, hi: f64 },

    #[error("root bracket could not be refined below {width:.3e} (target {tol:.3e})")]
    ToleranceFailure { width: f64, tol: f64 },

    #[error("no admissible next duty cycle in (0, 1)")]
    NoRoot,

    #[error("analysis window misaligned: {0}")]
    WindowMisaligned(String),

    #[error("fundamental coefficient is zero")]
    ZeroFundamental,
}

pub type Result<T> = std::result::Result<T, Error>;

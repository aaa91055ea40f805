use thiserror::Error;

use crate::geometry::Violation;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid geometry: {}", join_violations(.0))]
    InvalidGeometry(Vec<Violation>),

    #[error("unsupported in full-order solver: {0}")]
    Unsupported(String),

    #[error("coincident points: the singular kernel must be handled by the quadrature rule")]
    CoincidentPoints,

    #[error("multiple propagating modes unsupported (Re k = {re_k}, cutoff {cutoff})")]
    MultiplePropagatingModes { re_k: f64, cutoff: f64 },

    #[error("numerically singular operator (condition estimate {condition:.3e})")]
    SingularOperator { condition: f64 },

    #[error("boundary system residual {residual:.3e} exceeds tolerance")]
    InaccurateSolve { residual: f64 },

    #[error("degenerate spectrum: relative eigenvalue gap {gap:.3e}")]
    DegenerateSpectrum { gap: f64 },

    #[error("resonant singularity at omega = {omega}")]
    ResonantSingularity { omega: f64 },

    #[error("sound-hard limit, impedance infinite")]
    SoundHardLimit,

    #[error("J^res undefined: Im λ = 0")]
    LosslessResonanceObjective,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

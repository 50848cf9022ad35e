use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid torus spec: {0}")]
    InvalidSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-integer torus side {0}: integer lattice sites do not tile the torus")]
    NonIntegerSide(f64),

    #[error("lattice site {0:?} outside the fundamental domain")]
    SiteOutOfDomain(Vec<i64>),

    #[error("file format error: {0}")]
    Format(String),

    #[error("negative potential: min value {0} < 0")]
    NegativePotential(f64),

    #[error("eigensolver did not converge: worst residual {achieved:.3e} > {needed:.3e} after {iterations} iterations")]
    NotConverged {
        achieved: f64,
        needed: f64,
        iterations: usize,
    },

    #[error("scale geometry broken: {0} (window constraint 1 ≤ r ≤ L/2 violated)")]
    GeometryBroken(String),

    #[error("decay model not invertible at E = {0}: {1}")]
    NotInvertible(f64, String),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("cutoff constant {name} = {measured:.4} exceeds cap {cap}")]
    CutoffCap {
        name: &'static str,
        measured: f64,
        cap: f64,
    },

    #[error("degenerate center: all contributing amplitudes vanish at x0")]
    DegenerateCenter,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

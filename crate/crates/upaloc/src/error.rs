//! Error types shared across the crate.

use thiserror::Error;

/// Errors raised by geometry, channel, phase, estimator, and bound routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Antenna index outside the (2N+1)x(2N+1) grid.
    #[error("antenna index ({n}, {m}) outside half-size {half_size}")]
    IndexOutOfRange { n: i64, m: i64, half_size: i64 },

    /// Configuration value violates an invariant (non-positive spacing, bad angle range, ...).
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Distance radicand went negative; inputs do not describe a real geometry.
    #[error("negative distance radicand {0}")]
    NegativeRadicand(f64),

    /// A parameter that must satisfy A > 0 (squared range) was non-positive.
    #[error("non-positive squared range A = {0}")]
    NonPositiveRange(f64),

    /// User coincides with an antenna element; channel magnitude undefined.
    #[error("zero user-element distance at ({n}, {m})")]
    ZeroDistance { n: i64, m: i64 },

    /// An observation had zero magnitude; its phase is undefined.
    #[error("zero-magnitude observation at ({n}, {m})")]
    DegenerateObservation { n: i64, m: i64 },

    /// Summed phase-difference index violates -N <= L < M <= N or the fixed-index range.
    #[error("invalid sum index (axis {axis}, L={l}, M={m}, fixed={fixed})")]
    InvalidSumIndex {
        axis: &'static str,
        l: i64,
        m: i64,
        fixed: i64,
    },

    /// Model-sum radicand went negative: (A, B, C) outside the feasible region.
    #[error("infeasible parameters: model radicand {0} < 0")]
    InfeasibleParameters(f64),

    /// Center-line sums need N >= 1.
    #[error("insufficient aperture: half-size must be at least 1")]
    InsufficientAperture,

    /// Closed-form denominator below the degeneracy threshold; range unidentifiable.
    #[error("range unidentifiable: |denominator| {den:.3e} below threshold {threshold:.3e}")]
    RangeUnidentifiable { den: f64, threshold: f64 },

    /// Closed-form B radicand negative; measurements inconsistent with the model.
    #[error("infeasible measurement: B radicand {0:.3e} < 0")]
    InfeasibleMeasurement(f64),

    /// Closed-form range came out non-positive.
    #[error("inconsistent measurement: recovered range {0:.3e} <= 0")]
    InconsistentMeasurement(f64),

    /// Least-squares initialization cannot be projected into the feasible region.
    #[error("infeasible start: A = {0:.3e} not positive")]
    InfeasibleStart(f64),

    /// Zero noise power makes the Fisher information unbounded.
    #[error("unbounded information: noise power is zero")]
    UnboundedInformation,

    /// Fisher matrix singular or indefinite; bound undefined at this geometry.
    #[error("degenerate geometry: Fisher matrix not positive definite")]
    DegenerateGeometry,
}

pub type Result<T> = std::result::Result<T, Error>;

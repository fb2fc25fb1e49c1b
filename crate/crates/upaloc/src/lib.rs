//! Near-field 3D localization on a uniform planar array.
//!
//! The receive array observes a spherical wavefront; adjacent-element phase
//! differences stay wrap-free for half-wavelength spacing and telescope into
//! long-baseline sums. Those sums feed a closed-form position estimator, an
//! all-data nonlinear least-squares refinement, and a Cramer-Rao bound used
//! as the accuracy benchmark. A Monte Carlo harness and CLI reproduce RMSE
//! sweeps over pilot count and array size.

pub mod channel;
pub mod crb;
pub mod error;
pub mod estimators;
pub mod geometry;
pub mod harness;
pub mod phase;

pub use error::{Error, Result};

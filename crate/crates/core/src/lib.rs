//! Multi-surrogate tensor emulation.
//!
//! Simulator runs are stored in a dense K-way [`Tensor`], factorized with a
//! (truncated) higher-order SVD, and each tensor mode is either used as a
//! fixed grid or regressed onto its continuous coordinates with a
//! Gaussian process, random forest or small neural network. The crate also
//! ships the two reference simulators used to exercise the method (an
//! oscillating shallow-ice glacier and a collective-movement agent model),
//! residual-bootstrap predictive sampling and a Gibbs calibration engine.

pub mod abm;
pub mod binio;
pub mod calibrate;
pub mod design;
pub mod emulator;
pub mod error;
pub mod glacier;
pub mod linalg;
pub mod surrogate;
pub mod tensor;

pub use design::{Bounds, RngSeed};
pub use emulator::{build_emulator, build_svd_emulator, ModeSpec, SvdEmulator, TensorEmulator};
pub use error::{Error, Result};
pub use surrogate::{Surrogate, SurrogateConfig, SurrogateKind, TrainingSet};
pub use tensor::{HosvdFactors, Tensor};

/// Dense column-major matrix used throughout the crate.
pub type Matrix = nalgebra::DMatrix<f64>;

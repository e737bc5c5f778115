//! Inexact-feasible dual logarithmic barrier method for standard-form linear
//! optimization, with pluggable solvers for the normal equation system
//! (exact QR, truncated CG, and a simulated quantum linear-system +
//! tomography error model), an iterative-refinement driver, seeded instance
//! generators and the property suites used to check the method's guarantees.
//!
//! All numerical code is generic over [`Real`]; the aliases at the crate
//! root fix the scalar to `f64` (or `f32`).

pub mod error;
pub mod experiment;
pub mod factor;
pub mod gen;
pub mod io;
pub mod lo;
pub mod nes;
pub mod refine;
pub mod scalar;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Instance = lo::LoInstance<f64>;
pub type Instance32 = lo::LoInstance<f32>;
pub type Iterate = lo::DualIterate<f64>;
pub type Iterate32 = lo::DualIterate<f32>;
pub type Report = nes::DirectionReport<f64>;

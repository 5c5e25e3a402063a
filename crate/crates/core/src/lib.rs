//! Numerical laboratory for quantum circuit Born machines: statevector
//! simulation, explicit and kernel losses, loss-concentration diagnostics and
//! training loops.

pub mod bits;
pub mod concentration;
pub mod distributions;
pub mod error;
pub mod losses;
pub mod rng;
pub mod simulator;
pub mod training;

pub use bits::{BitString, SubsetMask};
pub use distributions::{Distribution, SampleSet};
pub use error::{Error, Result};

//! Numerical checks for the hypotheses and conclusions of invariance-type
//! stability theorems on time-varying ODEs: Liapunov-like certificates with
//! nonnegative (not necessarily definite) `V`, zero-set and invariant-set
//! estimation, detectability of output pairs and robust stabilization by
//! output feedback under sector-bounded perturbations.
//!
//! All verdicts are falsification-style: a pass means that no violation was
//! found at the sampled resolution and over the simulated horizon.

pub mod error;
pub mod expr;
pub mod sampling;
pub mod dynsys;
pub mod integrate;
pub mod verdict;
pub mod lyapunov;
pub mod invariance;
pub mod detect;
pub mod robust;
pub mod acceptance;

pub use error::{Error, Result};

//! Zero sets, invariant sets, ω-limit sets and ε-δ probes.
//!
//! Sets are point clouds ([`SetSample`]), never manifolds. Stability and
//! attractivity verdicts are qualified by the simulated horizon.

mod limits;
mod probes;
mod sets;

pub use limits::*;
pub use probes::*;
pub use sets::*;

//! Bounded-confidence opinion dynamics with a unit confidence radius.
//!
//! Agents hold real opinions and carry positive weights. At every step each
//! agent moves to the weighted mean of all opinions strictly closer than 1
//! to its own. The crate simulates this map, extracts clusters, classifies
//! the stability of equilibria, and provides continuum diagnostics on
//! weighted discretizations.

pub mod clustering;
pub mod continuum;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod io;
pub mod stability;
pub mod state;

pub use clustering::{detect_clusters, Cluster, Equilibrium};
pub use dynamics::{simulate, step, step_naive, SimParams, SimResult, Termination, Trajectory};
pub use error::{Error, Result};
pub use state::OpinionState;

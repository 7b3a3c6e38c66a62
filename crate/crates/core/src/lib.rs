//! Directed polymers in random environment with a general reference walk.
//!
//! - [`env_field`]: disorder laws, their log-moment generating function, and a
//!   seeded, randomly accessible space-time environment.
//! - [`walk`]: finite-support step distributions.
//! - [`polymer_dp`]: partition functions and endpoint distributions by dynamic
//!   programming, with path-enumeration oracles.
//! - [`pspm`]: partitioned subprobability measures and the `d_α` metric.
//! - [`chain`]: the endpoint Markov chain, its energy functional and diagnostics.
//! - [`localization`]: atomic-mass and geometric localization statistics.
//! - [`experiment`]: configuration and the command implementations behind the CLI.

pub mod assignment;
pub mod chain;
pub mod env_field;
pub mod error;
pub mod experiment;
pub mod instances;
pub mod lattice;
pub mod localization;
pub mod numeric;
pub mod polymer_dp;
pub mod pspm;
pub mod rng;
pub mod walk;

pub use env_field::{EnvironmentLaw, SeededField};
pub use error::{PolylabError, Result};
pub use lattice::Point;
pub use polymer_dp::{PolymerState, Truncation};
pub use pspm::{Degree, EmpiricalMeasure, Isometry, Pspm, Site};
pub use walk::StepDistribution;

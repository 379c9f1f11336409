//! Slow and fast light in a Coulomb-coupled optomechanical cavity.
//!
//! The crate computes the steady state of a driven Fabry-Pérot cavity whose
//! movable mirror is electrostatically coupled to a second charged
//! nanoresonator, the weak-probe reflection spectrum with its two
//! transparency windows, the dispersion slope at each window (sign decides
//! slow versus fast light), and checks the analytic response against a
//! direct time-domain integration of the mean-value equations of motion.

pub mod cli;
pub mod config;
pub mod group_index;
pub mod model;
pub mod oracle;
pub mod output;
pub mod response;
pub mod steady_state;
pub mod sweep;

pub use model::{build_params, ModelParams, RawConfig};
pub use steady_state::{solve_direct, solve_selfconsistent, SteadyState};

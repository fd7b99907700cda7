//! Generalization certificates for learning from trajectories of contractive
//! iterated random functions `Z_n = F(Z_{n−1}, ϑ_n)`.
//!
//! The crate simulates such chains ([`irf`]), measures distances between
//! empirical laws ([`transport`]), evaluates bounded Lipschitz losses
//! ([`hypothesis`]), runs ε-ERM ([`erm`]), estimates Rademacher complexities
//! ([`complexity`]) and turns them into radius/confidence statements
//! ([`certificates`]). [`validate`] checks the bounds by simulation and
//! [`experiments`] drives everything from a JSON config.

pub mod certificates;
pub mod complexity;
pub mod erm;
pub mod error;
pub mod experiments;
pub mod hypothesis;
pub mod irf;
pub mod metric;
pub mod transport;
pub mod validate;

pub use error::{Error, Result};
pub use metric::{MetricSpec, SeedSpec, ZPoint};

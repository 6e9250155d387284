//! Distributed dual subgradient methods for multi-agent convex programs with
//! affine coupling constraints.
//!
//! The crate is organised bottom-up:
//!
//! * [`problem`] holds the multi-agent program, its Lagrangian and dual cone.
//! * [`graph`] builds the communication graph and Metropolis consensus weights.
//! * [`cone`] has the projections, a dense conic interior-point solver and the
//!   per-agent Lagrangian minimizer.
//! * [`oracle`] solves the stacked program centrally for reference values.
//! * [`ddsa`] runs the averaged dual subgradient method, the classical
//!   baseline, and the diagnostics around them.

pub mod cone;
pub mod ddsa;
pub mod graph;
pub mod linalg;
pub mod oracle;
pub mod problem;

pub use linalg::{Matrix, Vector};
pub use problem::{AgentSpec, ConvexSetSpec, DualPoint, ProblemError, ProblemInstance};

//! Network models for the multi-area, DER and transmission-distribution
//! dispatch problems, plus case-file ingestion.
//!
//! All builders work in per-unit on the case base; cost coefficients are
//! converted so that objectives come out in currency units.

mod assemble;
pub mod feeder;
pub mod fixtures;
pub mod matpower;
pub mod multiarea;
pub mod random;
pub mod stitch;
pub mod td;

pub use assemble::find_witness;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("{0}")]
    Model(String),
    #[error("tie {tie}: {reason}")]
    Tie { tie: usize, reason: String },
    #[error("grouping cell {cell}: {reason}")]
    Grouping { cell: usize, reason: String },
    #[error("agent {agent}: local set appears empty (closest point violates it by {violation:e})")]
    EmptySet { agent: String, violation: f64 },
    #[error(transparent)]
    Case(#[from] matpower::ParseError),
    #[error(transparent)]
    Problem(#[from] dualgrid_core::ProblemError),
}

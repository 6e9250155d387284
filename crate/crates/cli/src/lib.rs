//! Configuration-driven experiments over the grid problem families.

pub mod config;
pub mod experiment;
pub mod problems;

//! Distributed dual subgradient methods and their diagnostics.

pub mod algorithm;
pub mod bounds;
pub mod metric;
pub mod rate;
pub mod trace;

pub use algorithm::{run_classic, run_ddsa, AgentState, RunConfig, RunError, RunOutput, RunSummary, StepSize};
pub use bounds::{bound_diagnostics, BoundDiagnostics};
pub use metric::{metric_v, MetricError, MetricV};
pub use rate::{power_fit, rate_fit, PowerFit, RateReport};
pub use trace::{IterateTrace, RecordSchedule, TraceRow, CSV_HEADER};

//! Projections, a dense conic interior-point solver and the per-agent
//! Lagrangian minimizer built on top of them.

pub mod ipm;
pub mod projections;
pub mod qp;
pub mod subproblem;

pub use ipm::{solve_conic, ConeDims, ConicQp, IpmResult, IpmSettings, IpmStatus};
pub use projections::{
    dykstra_project, project_box, project_psd, project_soc, DykstraConfig, DykstraError, DykstraResult,
    ProjectionTarget,
};
pub use qp::{solve_qp_polytope, QpError, QpSolution};
pub use subproblem::{minimize_local_lagrangian, LocalSolver, SubproblemSolution, SubsolverError};

use serde::{Deserialize, Serialize};

/// Which algorithm solves agent subproblems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsolverMethod {
    /// Conic interior point for every set; closed form for separable boxes.
    InteriorPoint,
    /// Accelerated projected gradient with Dykstra projections for sets with
    /// cone slices, interior point for polyhedra.
    ProjectedGradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    Fixed(f64),
    Backtracking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsolverConfig {
    pub method: SubsolverMethod,
    pub max_iters: usize,
    pub step: StepRule,
    /// Relative residual and gap target of the interior-point solver.
    pub ipm_tol: f64,
    /// Projected-gradient norm target of the first-order solver.
    pub pg_tol: f64,
    pub dykstra_max_sweeps: usize,
    /// Results less accurate than this are reported as failures.
    pub accept_tol: f64,
}

impl Default for SubsolverConfig {
    fn default() -> Self {
        Self {
            method: SubsolverMethod::InteriorPoint,
            max_iters: 100,
            step: StepRule::Backtracking,
            ipm_tol: 1e-9,
            pg_tol: 1e-6,
            dykstra_max_sweeps: 5_000,
            accept_tol: 1e-6,
        }
    }
}

impl SubsolverConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_iters == 0 {
            return Err("subsolver max_iters must be at least 1".into());
        }
        for (name, v) in [("ipm_tol", self.ipm_tol), ("pg_tol", self.pg_tol), ("accept_tol", self.accept_tol)] {
            if !(v > 0.0) {
                return Err(format!("subsolver {name} must be positive"));
            }
        }
        if let StepRule::Fixed(a) = self.step {
            if !(a > 0.0) {
                return Err("fixed step must be positive".into());
            }
        }
        Ok(())
    }

    pub(crate) fn ipm_settings(&self) -> IpmSettings {
        IpmSettings {
            feas_tol: self.ipm_tol,
            gap_tol: self.ipm_tol,
            max_iters: self.max_iters,
            ..IpmSettings::default()
        }
    }
}

//! The combined suboptimality and violation metric.

use serde::{Deserialize, Serialize};

use super::algorithm::{dual_value, Executor};
use crate::cone::{LocalSolver, SubsolverConfig, SubsolverError};
use crate::linalg::Vector;
use crate::problem::{project_dual_in_place, ProblemInstance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricV {
    pub value: f64,
    /// `Σ f_j(x_j)`.
    pub objective: f64,
    /// `Σ D_j(z̄)`.
    pub dual: f64,
    /// `(η T / 2N) ‖π_Z[Σ g_j(x_j)]‖²`.
    pub penalty: f64,
    /// Worst subsolver accuracy among the dual evaluations.
    pub subsolver_tol: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("{0}")]
    Dimensions(String),
    #[error("dual evaluation for agent {agent} failed: {source}")]
    Subsolver {
        agent: usize,
        #[source]
        source: SubsolverError,
    },
}

pub fn metric_v(
    problem: &ProblemInstance,
    x: &[Vector],
    z_locals: &[Vector],
    eta: f64,
    horizon: usize,
    subsolver: &SubsolverConfig,
) -> Result<MetricV, MetricError> {
    let n = problem.n_agents();
    let m = problem.m_total();
    if x.len() != n || z_locals.len() != n {
        return Err(MetricError::Dimensions(format!(
            "{} primal blocks and {} duals for {n} agents",
            x.len(),
            z_locals.len()
        )));
    }
    if let Some(j) = z_locals.iter().position(|z| z.len() != m) {
        return Err(MetricError::Dimensions(format!("dual of agent {j} has length {}", z_locals[j].len())));
    }
    let gsum = problem
        .coupling_residual(x)
        .map_err(|e| MetricError::Dimensions(e.to_string()))?
        .stacked();
    let objective = problem.objective(x).map_err(|e| MetricError::Dimensions(e.to_string()))?;
    let zbar = z_locals.iter().fold(Vector::zeros(m), |a, z| a + z) / n as f64;
    let solvers: Vec<LocalSolver> = problem.agents.iter().map(|a| LocalSolver::new(a, subsolver)).collect();
    let (dual, tol) =
        dual_value(&Executor::new(0), &solvers, &zbar).map_err(|(agent, source)| MetricError::Subsolver { agent, source })?;
    let mut p = gsum;
    project_dual_in_place(&mut p, problem.m_eq);
    let penalty = eta * horizon as f64 / (2.0 * n as f64) * p.norm_squared();
    Ok(MetricV {
        value: objective - dual + penalty,
        objective,
        dual,
        penalty,
        subsolver_tol: tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{oracle_solve, OracleSettings};
    use crate::problem::tests::toy_problem;

    fn v(x: &[f64], z: &[f64]) -> MetricV {
        let xs: Vec<Vector> = x.iter().map(|&v| Vector::from_element(1, v)).collect();
        let zs: Vec<Vector> = z.iter().map(|&v| Vector::from_element(1, v)).collect();
        metric_v(&toy_problem(), &xs, &zs, 1.0, 1, &SubsolverConfig::default()).unwrap()
    }

    #[test]
    fn hand_evaluation_at_origin() {
        let m = v(&[0.0, 0.0], &[0.0, 0.0]);
        assert_eq!(m.objective, 0.0);
        assert_eq!(m.dual, 0.0);
        assert!((m.penalty - 0.25).abs() < 1e-15);
        assert!((m.value - 0.25).abs() < 1e-15);
    }

    #[test]
    fn zero_at_saddle_point() {
        let p = toy_problem();
        let o = oracle_solve(&p, &OracleSettings::default());
        let zs = vec![o.z.z.clone(); 2];
        let m = metric_v(&p, &o.x, &zs, 1.0, 1, &SubsolverConfig::default()).unwrap();
        assert!(m.value.abs() <= 2e-9, "{m:?}");
    }

    #[test]
    fn feasible_point_has_no_penalty() {
        for z in [-3.0, -0.2, 0.0, 0.7, 4.0] {
            let m = v(&[0.25, 0.75], &[z, z + 1.0]);
            assert_eq!(m.penalty, 0.0);
            assert!(m.value >= -1e-9);
        }
    }

    #[test]
    fn shape_errors() {
        let p = toy_problem();
        let x = vec![Vector::zeros(1)];
        assert!(metric_v(&p, &x, &x, 1.0, 1, &SubsolverConfig::default()).is_err());
    }
}

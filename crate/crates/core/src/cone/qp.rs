//! Dense convex QP over a polytope, a thin front end to the interior-point
//! solver.

use thiserror::Error;

use super::ipm::{solve_conic, IpmStatus};
use super::subproblem::conic_form;
use super::SubsolverConfig;
use crate::linalg::{Matrix, Vector};
use crate::problem::{ConvexSetSpec, LinearBlock};

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vector,
    pub objective: f64,
    /// Multipliers of `Ax <= b` and `Cx = d`.
    pub ineq_multipliers: Vector,
    pub eq_multipliers: Vector,
    pub kkt_residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("problem is infeasible")]
    Infeasible,
    #[error("interior point stopped after {iterations} iterations, residual {residual:e}")]
    MaxIterations { x: Vector, residual: f64, iterations: usize },
    #[error("inconsistent dimensions: {0}")]
    Dimensions(String),
}

/// `min ½xᵀQx + cᵀx  s.t.  Ax <= b, Cx = d, lower <= x <= upper`.
///
/// For LPs with a non-unique optimum the returned point is the limit of the
/// central path, the analytic centre of the optimal face.
#[allow(clippy::too_many_arguments)]
pub fn solve_qp_polytope(
    q: &Matrix,
    c: &Vector,
    a: &Matrix,
    b: &Vector,
    ceq: &Matrix,
    d: &Vector,
    lower: &Vector,
    upper: &Vector,
    config: &SubsolverConfig,
) -> Result<QpSolution, QpError> {
    let n = c.len();
    let dims_ok = q.shape() == (n, n)
        && a.ncols() == n
        && a.nrows() == b.len()
        && ceq.ncols() == n
        && ceq.nrows() == d.len()
        && lower.len() == n
        && upper.len() == n;
    if !dims_ok {
        return Err(QpError::Dimensions(format!(
            "n={n}, Q {:?}, A {:?}, b {}, C {:?}, d {}, bounds {}/{}",
            q.shape(),
            a.shape(),
            b.len(),
            ceq.shape(),
            d.len(),
            lower.len(),
            upper.len()
        )));
    }
    if (0..n).any(|i| lower[i] > upper[i]) {
        return Err(QpError::Infeasible);
    }
    let set = ConvexSetSpec {
        ineq: LinearBlock::new(a.clone(), b.clone()),
        eq: LinearBlock::new(ceq.clone(), d.clone()),
        ..ConvexSetSpec::boxed(lower.clone(), upper.clone())
    };
    let prob = conic_form(&set, q, c);
    let x0 = (lower + upper) * 0.5;
    let r = solve_conic(&prob, &config.ipm_settings(), Some(&x0));
    let n_box = 2 * (0..n).filter(|&i| lower[i] != upper[i]).count();
    let sol = || QpSolution {
        objective: prob.objective(&r.x),
        ineq_multipliers: r.z.rows(n_box, a.nrows()).into_owned(),
        eq_multipliers: r.y.rows(0, ceq.nrows()).into_owned(),
        kkt_residual: r.accuracy(),
        iterations: r.iterations,
        x: r.x.clone(),
    };
    match r.status {
        IpmStatus::Optimal => Ok(sol()),
        IpmStatus::PrimalInfeasible => Err(QpError::Infeasible),
        _ if r.accuracy() <= config.accept_tol => Ok(sol()),
        _ => Err(QpError::MaxIterations {
            residual: r.accuracy(),
            iterations: r.iterations,
            x: r.x.clone(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn none(n: usize) -> (Matrix, Vector) {
        (Matrix::zeros(0, n), Vector::zeros(0))
    }

    #[test]
    fn min_x_over_unit_interval() {
        let (a, b) = none(1);
        let r = solve_qp_polytope(
            &Matrix::zeros(1, 1),
            &Vector::from_element(1, 1.0),
            &a,
            &b,
            &a,
            &b,
            &Vector::zeros(1),
            &Vector::from_element(1, 1.0),
            &SubsolverConfig::default(),
        )
        .unwrap();
        assert!(r.x[0].abs() < 1e-8);
    }

    #[test]
    fn symmetric_lp_face_tie_break() {
        let (c0, d0) = none(2);
        let r = solve_qp_polytope(
            &Matrix::zeros(2, 2),
            &Vector::from_element(2, 1.0),
            &Matrix::from_row_slice(1, 2, &[-1.0, -1.0]),
            &Vector::from_element(1, -1.0),
            &c0,
            &d0,
            &Vector::zeros(2),
            &Vector::from_element(2, 1.0),
            &SubsolverConfig::default(),
        )
        .unwrap();
        assert!((r.objective - 1.0).abs() < 1e-8);
        assert!((r.x[0] - 0.5).abs() < 1e-6 && (r.x[1] - 0.5).abs() < 1e-6);
        assert!((r.ineq_multipliers[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn clamped_quadratic() {
        // (x-3)² = x² - 6x + 9
        let (a, b) = none(1);
        let r = solve_qp_polytope(
            &Matrix::from_element(1, 1, 2.0),
            &Vector::from_element(1, -6.0),
            &a,
            &b,
            &a,
            &b,
            &Vector::zeros(1),
            &Vector::from_element(1, 1.0),
            &SubsolverConfig::default(),
        )
        .unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn infeasible_polytope() {
        let (a, b) = none(2);
        let r = solve_qp_polytope(
            &Matrix::zeros(2, 2),
            &Vector::zeros(2),
            &a,
            &b,
            &Matrix::from_row_slice(1, 2, &[1.0, 1.0]),
            &Vector::from_element(1, 3.0),
            &Vector::zeros(2),
            &Vector::from_element(2, 1.0),
            &SubsolverConfig::default(),
        );
        assert_eq!(r.unwrap_err(), QpError::Infeasible);
    }
}

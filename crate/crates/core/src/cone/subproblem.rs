//! Minimizing one agent's Lagrangian `f_j(x) + zᵀ g_j(x)` over its local set.

use thiserror::Error;

use super::ipm::{solve_conic, svec, svec_len, ConeDims, ConicQp, IpmStatus};
use super::projections::{dykstra_project, targets_for_set, DykstraConfig, ProjectionTarget};
use super::{StepRule, SubsolverConfig, SubsolverMethod};
use crate::linalg::{jacobi_eigen, Matrix, Vector};
use crate::problem::{embed_psd_coordinates, AgentSpec, ConvexSetSpec, DualPoint};

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSolution {
    pub x: Vector,
    /// Achieved optimality measure: relative KKT residual for the interior
    /// point, projected-gradient norm for the first-order method, zero for
    /// closed forms.
    pub accuracy: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SubsolverError {
    #[error("local set is empty (infeasibility certificate found)")]
    Infeasible,
    #[error("subsolver stopped after {iterations} iterations with accuracy {accuracy:e}")]
    NotConverged { x: Vector, accuracy: f64, iterations: usize },
    #[error("multiplier has length {actual}, expected {expected}")]
    DualLength { expected: usize, actual: usize },
}

/// Writes `½xᵀQx + cᵀx` over a local set in the cone form of
/// [`solve_conic`]. Coordinates with `lower == upper` become equality rows.
pub fn conic_form(set: &ConvexSetSpec, hessian: &Matrix, linear: &Vector) -> ConicQp {
    let n = set.dim();
    let fixed: Vec<usize> = (0..n).filter(|&i| set.lower[i] == set.upper[i]).collect();
    let free: Vec<usize> = (0..n).filter(|&i| set.lower[i] != set.upper[i]).collect();

    let n_lin = 2 * free.len() + set.ineq.rows();
    let soc_dims: Vec<usize> = set.soc.iter().map(|s| s.cone_dim()).collect();
    let psd_orders: Vec<usize> = set.psd.iter().map(|p| p.layout.matrix_order()).collect();
    let dims = ConeDims {
        nonneg: n_lin,
        soc: soc_dims,
        psd: psd_orders,
    };
    let m = dims.total();
    let mut g = Matrix::zeros(m, n);
    let mut h = Vector::zeros(m);
    let mut r = 0;
    for &i in &free {
        g[(r, i)] = 1.0;
        h[r] = set.upper[i];
        g[(r + 1, i)] = -1.0;
        h[r + 1] = -set.lower[i];
        r += 2;
    }
    for k in 0..set.ineq.rows() {
        g.row_mut(r).copy_from(&set.ineq.matrix.row(k));
        h[r] = set.ineq.rhs[k];
        r += 1;
    }
    for s in &set.soc {
        // y = F x_S + o must lie in the cone; solver cones put the scalar first
        let k = s.cone_dim();
        for row in 0..k {
            let dst = if row == k - 1 { r } else { r + 1 + row };
            for (c, &i) in s.indices.iter().enumerate() {
                g[(dst, i)] -= s.transform[(row, c)];
            }
            h[dst] = s.offset[row];
        }
        r += k;
    }
    for p in &set.psd {
        let order = p.layout.matrix_order();
        let len = svec_len(order);
        let cnt = p.layout.coordinate_count();
        for (c, &i) in p.indices.iter().enumerate() {
            let mut unit = vec![0.0; cnt];
            unit[c] = 1.0;
            let col = svec(&embed_psd_coordinates(&p.layout, &unit));
            for k in 0..len {
                g[(r + k, i)] -= col[k];
            }
        }
        r += len;
    }
    debug_assert_eq!(r, m);

    let p_eq = set.eq.rows() + fixed.len();
    let mut a = Matrix::zeros(p_eq, n);
    let mut b = Vector::zeros(p_eq);
    a.view_mut((0, 0), (set.eq.rows(), n)).copy_from(&set.eq.matrix);
    b.rows_mut(0, set.eq.rows()).copy_from(&set.eq.rhs);
    for (k, &i) in fixed.iter().enumerate() {
        a[(set.eq.rows() + k, i)] = 1.0;
        b[set.eq.rows() + k] = set.lower[i];
    }
    ConicQp {
        p: hessian.clone(),
        q: linear.clone(),
        g,
        h,
        a,
        b,
        dims,
    }
}

/// Recovers a point's cone slack in solver ordering, used by tests.
#[cfg(test)]
pub(crate) fn psd_block_matrix(s: &Vector, start: usize, order: usize) -> Matrix {
    super::ipm::smat(s.rows(start, svec_len(order)), order)
}

enum Strategy {
    /// Box set with diagonal Hessian.
    Separable { diag: Vector },
    Conic(ConicQp),
    FirstOrder { targets: Vec<ProjectionTarget>, lipschitz: f64 },
}

/// Reusable solver for one agent: the cone form is assembled once and only
/// the linear term changes with `z`.
pub struct LocalSolver {
    agent: AgentSpec,
    coupling: Matrix,
    strategy: Strategy,
    config: SubsolverConfig,
}

impl LocalSolver {
    pub fn new(agent: &AgentSpec, config: &SubsolverConfig) -> Self {
        let set = &agent.local_set;
        let q = &agent.objective.hessian;
        let n = agent.dim();
        let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || q[(i, j)] == 0.0));
        let strategy = if set.kind() == crate::problem::SetKind::Box && diagonal {
            Strategy::Separable { diag: q.diagonal() }
        } else if config.method == SubsolverMethod::ProjectedGradient && !set.is_polyhedral() {
            let lipschitz = if n == 0 { 0.0 } else { jacobi_eigen(q).max_value().max(0.0) };
            Strategy::FirstOrder {
                targets: targets_for_set(set),
                lipschitz,
            }
        } else {
            Strategy::Conic(conic_form(set, q, &agent.objective.linear))
        };
        Self {
            agent: agent.clone(),
            coupling: agent.coupling_matrix(),
            strategy,
            config: config.clone(),
        }
    }

    pub fn agent(&self) -> &AgentSpec {
        &self.agent
    }

    /// Linear term `c + Eᵀz_E + Iᵀz_I` of the Lagrangian at `z`.
    fn linear_term(&self, z: &Vector) -> Vector {
        &self.agent.objective.linear + self.coupling.tr_mul(z)
    }

    pub fn solve(&self, z: &Vector) -> Result<SubproblemSolution, SubsolverError> {
        if z.len() != self.coupling.nrows() {
            return Err(SubsolverError::DualLength {
                expected: self.coupling.nrows(),
                actual: z.len(),
            });
        }
        let c = self.linear_term(z);
        let set = &self.agent.local_set;
        match &self.strategy {
            Strategy::Separable { diag } => {
                let x = Vector::from_fn(c.len(), |i, _| {
                    let (lo, hi) = (set.lower[i], set.upper[i]);
                    if diag[i] > 0.0 {
                        (-c[i] / diag[i]).clamp(lo, hi)
                    } else if c[i] > 0.0 {
                        lo
                    } else if c[i] < 0.0 {
                        hi
                    } else {
                        0.5 * (lo + hi)
                    }
                });
                Ok(SubproblemSolution {
                    x,
                    accuracy: 0.0,
                    iterations: 0,
                })
            }
            Strategy::Conic(template) => {
                let mut prob = template.clone();
                prob.q = c;
                let mut settings = self.config.ipm_settings();
                let mut r = solve_conic(&prob, &settings, Some(&set.witness));
                // the regularization can swamp tiny pivots of a nearly degenerate
                // scaling, or be too small for dependent rows; try both ways
                for reg in [0.0, 1e-11] {
                    if matches!(r.status, IpmStatus::Optimal | IpmStatus::PrimalInfeasible) {
                        break;
                    }
                    settings.regularization = reg;
                    let again = solve_conic(&prob, &settings, Some(&set.witness));
                    if again.status == IpmStatus::Optimal || again.accuracy() < r.accuracy() {
                        r = again;
                    }
                }
                match r.status {
                    IpmStatus::PrimalInfeasible => Err(SubsolverError::Infeasible),
                    IpmStatus::Optimal => Ok(SubproblemSolution {
                        accuracy: r.accuracy(),
                        iterations: r.iterations,
                        x: r.x,
                    }),
                    _ if r.accuracy() <= self.config.accept_tol => Ok(SubproblemSolution {
                        accuracy: r.accuracy(),
                        iterations: r.iterations,
                        x: r.x,
                    }),
                    _ => Err(SubsolverError::NotConverged {
                        accuracy: r.accuracy(),
                        iterations: r.iterations,
                        x: r.x,
                    }),
                }
            }
            Strategy::FirstOrder { targets, lipschitz } => {
                accelerated_projected_gradient(&self.agent.objective.hessian, &c, set, targets, *lipschitz, &self.config)
            }
        }
    }
}

/// FISTA from the set witness; projections by Dykstra over the set's pieces.
fn accelerated_projected_gradient(
    q: &Matrix,
    c: &Vector,
    set: &ConvexSetSpec,
    targets: &[ProjectionTarget],
    lipschitz: f64,
    config: &SubsolverConfig,
) -> Result<SubproblemSolution, SubsolverError> {
    let dcfg = DykstraConfig {
        max_sweeps: config.dykstra_max_sweeps,
        tol: 1e-12,
    };
    let project = |v: &Vector| -> Vector {
        match dykstra_project(v, targets, &dcfg) {
            Ok(r) => r.point,
            Err(e) => e.best,
        }
    };
    let f = |x: &Vector| 0.5 * x.dot(&(q * x)) + c.dot(x);
    let grad = |x: &Vector| q * x + c;
    let mut step = match config.step {
        StepRule::Fixed(a) => a,
        StepRule::Backtracking => {
            if lipschitz > 0.0 {
                1.0 / lipschitz
            } else {
                1.0
            }
        }
    };
    let mut x = set.witness.clone();
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut accuracy = f64::INFINITY;
    let max_iters = config.max_iters.max(1) * 100;
    for it in 1..=max_iters {
        let gy = grad(&y);
        let mut x_next = project(&(&y - &gy * step));
        if config.step == StepRule::Backtracking {
            let fy = f(&y);
            for _ in 0..60 {
                let d = &x_next - &y;
                if f(&x_next) <= fy + gy.dot(&d) + d.norm_squared() / (2.0 * step) + 1e-15 * fy.abs() {
                    break;
                }
                step *= 0.5;
                x_next = project(&(&y - &gy * step));
            }
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &x_next + (&x_next - &x) * ((t - 1.0) / t_next);
        x = x_next;
        t = t_next;
        let gx = grad(&x);
        accuracy = (&x - project(&(&x - &gx * step))).norm() / step;
        if accuracy <= config.pg_tol {
            return Ok(SubproblemSolution { x, accuracy, iterations: it });
        }
    }
    if accuracy <= config.accept_tol {
        Ok(SubproblemSolution {
            x,
            accuracy,
            iterations: max_iters,
        })
    } else {
        Err(SubsolverError::NotConverged {
            x,
            accuracy,
            iterations: max_iters,
        })
    }
}

/// One-shot version of [`LocalSolver::solve`].
pub fn minimize_local_lagrangian(
    agent: &AgentSpec,
    z: &DualPoint,
    config: &SubsolverConfig,
) -> Result<SubproblemSolution, SubsolverError> {
    LocalSolver::new(agent, config).solve(&z.z)
}

//! Runtime estimates of the constants appearing in the convergence bound.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cone::ipm::{solve_conic, IpmSettings};
use crate::cone::project_box;
use crate::cone::subproblem::conic_form;
use crate::graph::WeightMatrix;
use crate::linalg::{operator_norm, Matrix, Vector};
use crate::problem::{ConvexSetSpec, ProblemInstance, SetKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundDiagnostics {
    /// Largest box diameter over agents.
    pub d_x: f64,
    /// Largest `‖g_j(x_j)‖` found by sampling; a lower bound on the true
    /// supremum.
    pub d_g: f64,
    pub d_g_is_lower_bound: bool,
    /// Largest operator norm of an agent's stacked coupling matrix.
    pub l_g: f64,
    pub d_z: f64,
    pub sigma2: f64,
}

const POLISH_STEPS: usize = 25;

/// Euclidean projection onto the local set, `x` itself for plain boxes.
fn project_onto(set: &ConvexSetSpec, v: &Vector) -> Option<Vector> {
    if set.kind() == SetKind::Box {
        return Some(project_box(v, &set.lower, &set.upper));
    }
    let n = v.len();
    let prob = conic_form(set, &(Matrix::identity(n, n) * 2.0), &(v * -2.0));
    let r = solve_conic(&prob, &IpmSettings::default(), Some(&set.witness));
    (r.accuracy() <= 1e-6).then_some(r.x)
}

fn sample_vertex(set: &ConvexSetSpec, rng: &mut ChaCha8Rng) -> Vector {
    Vector::from_iterator(
        set.dim(),
        (0..set.dim()).map(|i| {
            let (lo, hi) = (set.lower[i], set.upper[i]);
            let pick = if rng.random::<bool>() { hi } else { lo };
            if pick.is_finite() {
                pick
            } else if lo.is_finite() {
                lo
            } else if hi.is_finite() {
                hi
            } else {
                set.witness[i]
            }
        }),
    )
}

pub fn bound_diagnostics(problem: &ProblemInstance, w: &WeightMatrix, samples: usize, seed: u64) -> BoundDiagnostics {
    let samples = samples.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d_x: f64 = 0.0;
    let mut l_g: f64 = 0.0;
    let mut d_g: f64 = 0.0;
    for agent in &problem.agents {
        let set = &agent.local_set;
        d_x = d_x.max(set.box_diameter());
        let k = agent.coupling_matrix();
        let lj = operator_norm(&k);
        l_g = l_g.max(lj);
        let mut best = agent.coupling(&set.witness).norm();
        for _ in 0..samples {
            let Some(mut x) = project_onto(set, &sample_vertex(set, &mut rng)) else {
                continue;
            };
            let mut val = agent.coupling(&x).norm();
            // ascent on ½‖g‖², step 1/L²
            if lj > 0.0 {
                for _ in 0..POLISH_STEPS {
                    let grad = k.transpose() * agent.coupling(&x);
                    let Some(y) = project_onto(set, &(&x + grad / (lj * lj))) else {
                        break;
                    };
                    let vy = agent.coupling(&y).norm();
                    if vy <= val * (1.0 + 1e-12) {
                        break;
                    }
                    x = y;
                    val = vy;
                }
            }
            best = best.max(val);
        }
        d_g = d_g.max(best);
    }
    BoundDiagnostics {
        d_x,
        d_g,
        d_g_is_lower_bound: true,
        l_g,
        d_z: l_g * d_x + d_g,
        sigma2: w.sigma2(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{metropolis_weights, CommGraph};
    use crate::problem::tests::toy_problem;
    use crate::problem::AffineMap;

    fn w2() -> WeightMatrix {
        metropolis_weights(&CommGraph::complete(2)).unwrap()
    }

    #[test]
    fn toy_constants() {
        let b = bound_diagnostics(&toy_problem(), &w2(), 8, 1);
        assert_eq!(b.d_x, 1.0);
        assert!((b.l_g - 1.0).abs() < 1e-12);
        assert_eq!(b.d_g, 0.5);
        assert!((b.d_z - 1.5).abs() < 1e-12);
        assert_eq!(b.d_z, b.l_g * b.d_x + b.d_g);
        assert!(b.sigma2.abs() < 1e-12);
    }

    #[test]
    fn zero_coupling_map() {
        let mut p = toy_problem();
        for a in &mut p.agents {
            a.coupling_eq = AffineMap::new(Matrix::zeros(1, 1), Vector::from_element(1, -0.75));
        }
        let b = bound_diagnostics(&p, &w2(), 4, 2);
        assert_eq!(b.l_g, 0.0);
        assert_eq!(b.d_g, 0.75);
    }

    #[test]
    fn scaling_the_coupling() {
        let p = toy_problem();
        let mut q = p.clone();
        for a in &mut q.agents {
            a.coupling_eq.matrix *= 2.0;
            a.coupling_eq.offset *= 2.0;
        }
        let a = bound_diagnostics(&p, &w2(), 4, 3);
        let b = bound_diagnostics(&q, &w2(), 4, 3);
        assert_eq!(a.d_x, b.d_x);
        assert!((b.l_g - 2.0 * a.l_g).abs() < 1e-12);
        assert!((b.d_g - 2.0 * a.d_g).abs() < 1e-12);
    }

    #[test]
    fn polish_reaches_disc_boundary() {
        // unit disc in a [-1,1]² box, g(x) = x₁ + x₂: sup ‖g‖ = √2, attained off
        // the box vertices
        use crate::problem::{AgentSpec, QuadraticObjective, SocSlice};
        let mut set = ConvexSetSpec::boxed(Vector::from_element(2, -1.0), Vector::from_element(2, 1.0));
        set.soc.push(SocSlice::ball(vec![0, 1], 1.0));
        let agent = AgentSpec {
            name: "disc".into(),
            local_set: set,
            objective: QuadraticObjective::zero(2),
            coupling_eq: AffineMap::new(Matrix::from_row_slice(1, 2, &[1.0, 1.0]), Vector::zeros(1)),
            coupling_ineq: AffineMap::zero(0, 2),
            variable_names: vec!["a".into(), "b".into()],
        };
        let p = ProblemInstance::new("disc", 1, 0, vec![agent]).unwrap();
        let w = WeightMatrix::from_matrix(Matrix::identity(1, 1));
        let b = bound_diagnostics(&p, &w, 4, 0);
        assert!((b.d_g - 2f64.sqrt()).abs() < 1e-5, "{}", b.d_g);
        assert!(b.d_g <= 2f64.sqrt() + 1e-7);
    }
}

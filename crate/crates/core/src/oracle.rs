//! Centralized reference solutions of the stacked multi-agent program.
//!
//! Two independent routes are available. [`OracleRoute::Direct`] hands the
//! whole program, coupling rows included, to the conic interior-point solver.
//! [`OracleRoute::AugmentedLagrangian`] keeps the coupling rows out of the
//! solver and drives them to zero with multiplier updates, each inner problem
//! being a conic QP over the product of the local sets.

use serde::{Deserialize, Serialize};

use crate::cone::ipm::{solve_conic, ConicQp, IpmSettings, IpmStatus};
use crate::cone::subproblem::conic_form;
use crate::linalg::{inf_norm, Matrix, Vector};
use crate::problem::{project_dual, ConvexSetSpec, DualPoint, ProblemInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleRoute {
    /// Direct for polyhedral programs, augmented Lagrangian when any agent
    /// carries a cone slice.
    Auto,
    Direct,
    AugmentedLagrangian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleStatus {
    Optimal,
    Infeasible,
    NotConverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSettings {
    pub route: OracleRoute,
    pub ipm: IpmSettings,
    /// Coupling residual target of the augmented-Lagrangian route.
    pub alm_tol: f64,
    pub alm_max_outer: usize,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            route: OracleRoute::Auto,
            ipm: IpmSettings {
                feas_tol: 1e-9,
                gap_tol: 1e-9,
                max_iters: 200,
                ..IpmSettings::default()
            },
            alm_tol: 1e-7,
            alm_max_outer: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub value: f64,
    pub x: Vec<Vector>,
    pub z: DualPoint,
    pub status: OracleStatus,
    pub route: OracleRoute,
    /// Largest local-set violation at `x`.
    pub local_residual: f64,
    /// `‖π_Z[Σ g]‖` at `x`.
    pub coupling_residual: f64,
    /// Stationarity residual reported by the last solve.
    pub dual_residual: f64,
    pub iterations: usize,
}

impl OracleResult {
    pub fn is_optimal(&self) -> bool {
        self.status == OracleStatus::Optimal
    }
}

/// Row-wise upper bound of `M x + o` over the box `[lower, upper]`.
fn row_upper_bounds(m: &Matrix, o: &Vector, lower: &Vector, upper: &Vector) -> Vector {
    Vector::from_fn(m.nrows(), |r, _| {
        o[r] + (0..m.ncols())
            .map(|k| {
                let a = m[(r, k)];
                if a >= 0.0 {
                    a * upper[k]
                } else {
                    a * lower[k]
                }
            })
            .sum::<f64>()
    })
}

/// Inserts rows at the end of the orthant block.
fn push_orthant_rows(prob: &mut ConicQp, rows: &Matrix, rhs: &Vector) -> usize {
    let at = prob.dims.nonneg;
    let k = rows.nrows();
    let n = prob.n();
    let m = prob.g.nrows();
    let mut g = Matrix::zeros(m + k, n);
    let mut h = Vector::zeros(m + k);
    g.view_mut((0, 0), (at, n)).copy_from(&prob.g.rows(0, at));
    h.rows_mut(0, at).copy_from(&prob.h.rows(0, at));
    g.view_mut((at, 0), (k, n)).copy_from(rows);
    h.rows_mut(at, k).copy_from(rhs);
    g.view_mut((at + k, 0), (m - at, n)).copy_from(&prob.g.rows(at, m - at));
    h.rows_mut(at + k, m - at).copy_from(&prob.h.rows(at, m - at));
    prob.g = g;
    prob.h = h;
    prob.dims.nonneg += k;
    at
}

fn push_eq_rows(prob: &mut ConicQp, rows: &Matrix, rhs: &Vector) -> usize {
    let at = prob.a.nrows();
    let n = prob.n();
    let mut a = Matrix::zeros(at + rows.nrows(), n);
    a.view_mut((0, 0), (at, n)).copy_from(&prob.a);
    a.view_mut((at, 0), (rows.nrows(), n)).copy_from(rows);
    prob.a = a;
    prob.b = crate::linalg::vconcat(&[&prob.b, rhs]);
    at
}

struct Stacked {
    set: ConvexSetSpec,
    hessian: Matrix,
    linear: Vector,
    ceq: Matrix,
    oeq: Vector,
    cin: Matrix,
    oin: Vector,
}

fn stacked(problem: &ProblemInstance) -> Stacked {
    let merged = problem.merged();
    let a = merged.agents.into_iter().next().expect("merged problem has one agent");
    Stacked {
        set: a.local_set,
        hessian: a.objective.hessian,
        linear: a.objective.linear,
        ceq: a.coupling_eq.matrix,
        oeq: a.coupling_eq.offset,
        cin: a.coupling_ineq.matrix,
        oin: a.coupling_ineq.offset,
    }
}

fn finish(
    problem: &ProblemInstance,
    x: &Vector,
    z: Vector,
    status: OracleStatus,
    route: OracleRoute,
    dual_residual: f64,
    iterations: usize,
) -> OracleResult {
    let xs = problem.split(x);
    let value = problem.objective(&xs).expect("split matches agent dimensions");
    let coupling = problem
        .coupling_residual(&xs)
        .expect("split matches agent dimensions")
        .violation_norm();
    let local = problem.local_violation(&xs).expect("split matches agent dimensions");
    OracleResult {
        value,
        x: xs,
        z: project_dual(&z, problem.m_eq),
        status,
        route,
        local_residual: local,
        coupling_residual: coupling,
        dual_residual,
        iterations,
    }
}

/// Solves the stacked program centrally.
pub fn oracle_solve(problem: &ProblemInstance, settings: &OracleSettings) -> OracleResult {
    let route = match settings.route {
        OracleRoute::Auto => {
            if problem.agents.iter().all(|a| a.local_set.is_polyhedral()) {
                OracleRoute::Direct
            } else {
                OracleRoute::AugmentedLagrangian
            }
        }
        r => r,
    };
    match route {
        OracleRoute::AugmentedLagrangian => solve_alm(problem, settings),
        _ => solve_direct(problem, settings),
    }
}

fn solve_direct(problem: &ProblemInstance, settings: &OracleSettings) -> OracleResult {
    let st = stacked(problem);
    let mut prob = conic_form(&st.set, &st.hessian, &st.linear);
    let zi_at = push_orthant_rows(&mut prob, &st.cin, &(-&st.oin));
    let ye_at = push_eq_rows(&mut prob, &st.ceq, &(-&st.oeq));
    let r = solve_conic(&prob, &settings.ipm, Some(&st.set.witness));
    let z = crate::linalg::vconcat(&[
        &r.y.rows(ye_at, problem.m_eq).into_owned(),
        &r.z.rows(zi_at, problem.m_ineq).into_owned(),
    ]);
    let status = match r.status {
        IpmStatus::Optimal => OracleStatus::Optimal,
        IpmStatus::PrimalInfeasible => OracleStatus::Infeasible,
        _ => OracleStatus::NotConverged,
    };
    finish(problem, &r.x, z, status, OracleRoute::Direct, r.dual_residual, r.iterations)
}

fn solve_alm(problem: &ProblemInstance, settings: &OracleSettings) -> OracleResult {
    let st = stacked(problem);
    let n = st.set.dim();
    let (me, mi) = (problem.m_eq, problem.m_ineq);
    let m = me + mi;

    // slack s >= 0 turns Ix + i <= 0 into Ix + i + s = 0; s gets a finite box
    let slack_cap = row_upper_bounds(&(-&st.cin), &(-&st.oin), &st.set.lower, &st.set.upper).map(|v| v.max(0.0) + 1.0);
    let nt = n + mi;
    let mut lower = Vector::zeros(nt);
    let mut upper = Vector::zeros(nt);
    lower.rows_mut(0, n).copy_from(&st.set.lower);
    upper.rows_mut(0, n).copy_from(&st.set.upper);
    upper.rows_mut(n, mi).copy_from(&slack_cap);
    let widen = |mat: &Matrix| {
        let mut out = Matrix::zeros(mat.nrows(), nt);
        out.view_mut((0, 0), (mat.nrows(), n)).copy_from(mat);
        out
    };
    let mut set = ConvexSetSpec::boxed(lower, upper);
    set.ineq = crate::problem::LinearBlock::new(widen(&st.set.ineq.matrix), st.set.ineq.rhs.clone());
    set.eq = crate::problem::LinearBlock::new(widen(&st.set.eq.matrix), st.set.eq.rhs.clone());
    set.soc = st.set.soc.clone();
    set.psd = st.set.psd.clone();
    let mut witness = Vector::zeros(nt);
    witness.rows_mut(0, n).copy_from(&st.set.witness);
    witness.rows_mut(n, mi).copy_from(&(&slack_cap * 0.5));
    set.witness = witness.clone();

    let mut k = Matrix::zeros(m, nt);
    k.view_mut((0, 0), (me, n)).copy_from(&st.ceq);
    k.view_mut((me, 0), (mi, n)).copy_from(&st.cin);
    for r in 0..mi {
        k[(me + r, n + r)] = 1.0;
    }
    let k0 = crate::linalg::vconcat(&[&st.oeq, &st.oin]);
    let mut hess = Matrix::zeros(nt, nt);
    hess.view_mut((0, 0), (n, n)).copy_from(&st.hessian);
    let mut lin = Vector::zeros(nt);
    lin.rows_mut(0, n).copy_from(&st.linear);

    let scale = st.linear.amax().max(st.hessian.amax()).max(1.0);
    let mut rho = scale;
    let mut lambda = Vector::zeros(m);
    let template = conic_form(&set, &hess, &lin);
    let ktk = k.tr_mul(&k);
    let mut x = witness;
    let mut prev_viol = f64::INFINITY;
    let mut status = OracleStatus::NotConverged;
    let mut iterations = 0;
    let mut dual_residual = f64::INFINITY;
    for _ in 0..settings.alm_max_outer {
        let mut prob = template.clone();
        prob.p = &hess + &ktk * rho;
        prob.q = &lin + k.tr_mul(&(&lambda + &k0 * rho));
        let r = solve_conic(&prob, &settings.ipm, Some(&x));
        iterations += r.iterations;
        match r.status {
            IpmStatus::PrimalInfeasible => {
                status = OracleStatus::Infeasible;
                x = r.x;
                break;
            }
            IpmStatus::Optimal => {}
            _ if r.accuracy() <= 1e-7 => {}
            _ => {
                x = r.x;
                break;
            }
        }
        dual_residual = r.dual_residual;
        x = r.x;
        let c = &k * &x + &k0;
        lambda += &c * rho;
        let viol = inf_norm(&c);
        if viol <= settings.alm_tol {
            status = OracleStatus::Optimal;
            break;
        }
        if viol > 0.25 * prev_viol {
            rho = (rho * 10.0).min(1e10 * scale);
        }
        prev_viol = viol;
    }
    let xo = x.rows(0, n).into_owned();
    finish(problem, &xo, lambda, status, OracleRoute::AugmentedLagrangian, dual_residual, iterations)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlaterStatus {
    Found,
    NotFound,
    /// The feasibility solve did not converge; nothing is claimed.
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlaterReport {
    pub status: SlaterStatus,
    pub witness: Option<Vec<Vector>>,
    /// Largest `s` with `Σ g^I + s·1 <= 0` (capped at 1), when known.
    pub margin: Option<f64>,
    /// Equality residual `‖Σ g^E‖_∞` at the witness.
    pub eq_residual: Option<f64>,
}

/// Looks for a point with coupling equalities satisfied and every coupling
/// inequality strictly negative, by maximising a common slack `s <= 1`.
pub fn check_slater(problem: &ProblemInstance, tol: f64) -> SlaterReport {
    let st = stacked(problem);
    let n = st.set.dim();
    let mi = problem.m_ineq;
    let worst = row_upper_bounds(&st.cin, &st.oin, &st.set.lower, &st.set.upper);
    let s_lo = -(worst.iter().cloned().fold(0.0, f64::max) + 1.0);
    let mut lower = Vector::zeros(n + 1);
    let mut upper = Vector::zeros(n + 1);
    lower.rows_mut(0, n).copy_from(&st.set.lower);
    upper.rows_mut(0, n).copy_from(&st.set.upper);
    lower[n] = s_lo;
    upper[n] = 1.0;
    let widen = |mat: &Matrix| {
        let mut out = Matrix::zeros(mat.nrows(), n + 1);
        out.view_mut((0, 0), (mat.nrows(), n)).copy_from(mat);
        out
    };
    let mut set = ConvexSetSpec::boxed(lower, upper);
    set.ineq = crate::problem::LinearBlock::new(widen(&st.set.ineq.matrix), st.set.ineq.rhs.clone());
    set.eq = crate::problem::LinearBlock::new(widen(&st.set.eq.matrix), st.set.eq.rhs.clone());
    set.soc = st.set.soc.clone();
    set.psd = st.set.psd.clone();
    let mut witness = Vector::zeros(n + 1);
    witness.rows_mut(0, n).copy_from(&st.set.witness);
    witness[n] = s_lo;
    let mut c = Vector::zeros(n + 1);
    c[n] = -1.0;
    let mut prob = conic_form(&set, &Matrix::zeros(n + 1, n + 1), &c);
    let mut cin = widen(&st.cin);
    for r in 0..mi {
        cin[(r, n)] = 1.0;
    }
    push_orthant_rows(&mut prob, &cin, &(-&st.oin));
    push_eq_rows(&mut prob, &widen(&st.ceq), &(-&st.oeq));
    let settings = OracleSettings::default().ipm;
    let r = solve_conic(&prob, &settings, Some(&witness));
    match r.status {
        IpmStatus::PrimalInfeasible => SlaterReport {
            status: SlaterStatus::NotFound,
            witness: None,
            margin: None,
            eq_residual: None,
        },
        IpmStatus::Optimal => {
            let x = r.x.rows(0, n).into_owned();
            let xs = problem.split(&x);
            let res = problem.coupling_residual(&xs).expect("split matches agent dimensions");
            let margin = r.x[n];
            let eq_res = inf_norm(&res.eq);
            let strict = res.ineq.iter().all(|v| *v < -tol) || mi == 0;
            let found = margin > tol && strict && eq_res <= 1e-6;
            SlaterReport {
                status: if found { SlaterStatus::Found } else { SlaterStatus::NotFound },
                witness: found.then_some(xs),
                margin: Some(margin),
                eq_residual: Some(eq_res),
            }
        }
        _ => SlaterReport {
            status: SlaterStatus::Indeterminate,
            witness: None,
            margin: None,
            eq_residual: None,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::tests::toy_problem;
    use crate::problem::{AffineMap, AgentSpec, QuadraticObjective, SocSlice};

    fn linear_pair(rhs: f64) -> ProblemInstance {
        // x1 + x2 = rhs over [0, 1]², zero cost
        let agent = |name: &str, off: f64| AgentSpec {
            name: name.into(),
            local_set: ConvexSetSpec::boxed(Vector::zeros(1), Vector::from_element(1, 1.0)),
            objective: QuadraticObjective::zero(1),
            coupling_eq: AffineMap::new(Matrix::from_element(1, 1, 1.0), Vector::from_element(1, off)),
            coupling_ineq: AffineMap::zero(0, 1),
            variable_names: vec!["x".into()],
        };
        ProblemInstance::new("pair", 1, 0, vec![agent("a", -rhs), agent("b", 0.0)]).unwrap()
    }

    #[test]
    fn toy_oracle_both_routes() {
        let p = toy_problem();
        for route in [OracleRoute::Direct, OracleRoute::AugmentedLagrangian] {
            let r = oracle_solve(&p, &OracleSettings { route, ..OracleSettings::default() });
            assert!(r.is_optimal(), "{route:?}");
            assert!((r.value - 0.5).abs() < 1e-7, "{route:?} {}", r.value);
            assert!((r.x[0][0] - 0.5).abs() < 1e-6 && (r.x[1][0] - 0.5).abs() < 1e-6);
            assert!((r.z.z[0] + 1.0).abs() < 1e-5, "{route:?} z={}", r.z.z[0]);
        }
    }

    #[test]
    fn decoupled_problem_sums_local_minima() {
        let mut p = toy_problem();
        for a in &mut p.agents {
            a.coupling_eq = AffineMap::zero(1, 1);
            a.objective.linear[0] = -1.0; // x² - x, minimum -1/4 at 1/2
        }
        let r = oracle_solve(&p, &OracleSettings::default());
        assert!((r.value + 0.5).abs() < 1e-8);
    }

    #[test]
    fn routes_agree_with_inequality_coupling_and_cone() {
        // two agents, each (x, y, u) with 2xy >= u², coupling u1 + u2 <= 1 and x1 - x2 = 0.2
        let agent = |sign: f64| {
            let set = ConvexSetSpec {
                soc: vec![SocSlice::rotated(&[2], 0, 1)],
                ..ConvexSetSpec::boxed(Vector::from_vec(vec![0.0, 0.0, -2.0]), Vector::from_vec(vec![2.0, 2.0, 2.0]))
            }
            .with_witness(Vector::from_vec(vec![1.0, 1.0, 0.0]));
            AgentSpec {
                name: "c".into(),
                local_set: set,
                objective: QuadraticObjective {
                    hessian: Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 1.0, 0.0])),
                    linear: Vector::from_vec(vec![0.0, 0.0, -1.0]),
                    constant: 0.0,
                },
                coupling_eq: AffineMap::new(Matrix::from_row_slice(1, 3, &[sign, 0.0, 0.0]), Vector::from_element(1, -0.1)),
                coupling_ineq: AffineMap::new(Matrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]), Vector::from_element(1, -0.5)),
                variable_names: vec!["x".into(), "y".into(), "u".into()],
            }
        };
        let p = ProblemInstance::new("cone pair", 1, 1, vec![agent(1.0), agent(-1.0)]).unwrap();
        let d = oracle_solve(&p, &OracleSettings { route: OracleRoute::Direct, ..OracleSettings::default() });
        let a = oracle_solve(&p, &OracleSettings { route: OracleRoute::AugmentedLagrangian, ..OracleSettings::default() });
        assert!(d.is_optimal() && a.is_optimal(), "{d:?}\n{a:?}");
        assert!((d.value - a.value).abs() <= 1e-6 * d.value.abs().max(1.0), "{} vs {}", d.value, a.value);
        assert!(a.coupling_residual < 1e-6);
        // merged single-agent instance gives the same value
        let m = oracle_solve(&p.merged(), &OracleSettings::default());
        assert!((m.value - a.value).abs() <= 1e-6 * a.value.abs().max(1.0));
    }

    #[test]
    fn infeasible_coupling_is_certified() {
        let r = oracle_solve(&linear_pair(3.0), &OracleSettings::default());
        assert_eq!(r.status, OracleStatus::Infeasible);
    }

    #[test]
    fn slater_examples() {
        let r = check_slater(&linear_pair(1.0), 1e-6);
        assert_eq!(r.status, SlaterStatus::Found);
        let w = r.witness.unwrap();
        assert!((w[0][0] - 0.5).abs() < 1e-6 && (w[1][0] - 0.5).abs() < 1e-6);

        assert_eq!(check_slater(&linear_pair(3.0), 1e-6).status, SlaterStatus::NotFound);

        let mut free = toy_problem();
        free.m_eq = 0;
        for a in &mut free.agents {
            a.coupling_eq = AffineMap::zero(0, 1);
        }
        assert_eq!(check_slater(&free, 1e-6).status, SlaterStatus::Found);
    }

    #[test]
    fn slater_rejects_tight_inequalities() {
        // x1 + x2 <= 0 over [0, 1]² has no strictly feasible point
        let mut p = linear_pair(0.0);
        p.m_ineq = 1;
        p.m_eq = 0;
        for a in &mut p.agents {
            a.coupling_ineq = AffineMap::new(Matrix::from_element(1, 1, 1.0), Vector::zeros(1));
            a.coupling_eq = AffineMap::zero(0, 1);
        }
        let r = check_slater(&p, 1e-6);
        assert_eq!(r.status, SlaterStatus::NotFound);
        assert!(r.margin.unwrap().abs() < 1e-6);
    }
}

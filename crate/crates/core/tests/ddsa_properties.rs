use dualgrid_core::ddsa::{run_classic, run_ddsa, RecordSchedule, RunConfig, StepSize};
use dualgrid_core::graph::{metropolis_weights, random_connected_graph};
use dualgrid_core::oracle::{oracle_solve, OracleSettings};
use dualgrid_core::problem::{AffineMap, QuadraticObjective};
use dualgrid_core::{AgentSpec, ConvexSetSpec, Matrix, ProblemInstance, Vector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Agents with box sets around the origin, one coupling equality and two
/// coupling inequalities; the origin is strictly feasible.
fn random_problem(seed: u64) -> ProblemInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=5);
    let agents = (0..n)
        .map(|j| {
            let d = rng.random_range(1..=3);
            let mut r = |lo: f64, hi: f64| rng.random_range(lo..hi);
            let hessian = Matrix::from_diagonal(&Vector::from_fn(d, |_, _| r(0.0, 2.0)));
            let linear = Vector::from_fn(d, |_, _| r(-1.0, 1.0));
            let eq = Matrix::from_fn(1, d, |_, _| r(-1.0, 1.0));
            let ineq = Matrix::from_fn(2, d, |_, _| r(-1.0, 1.0));
            AgentSpec {
                name: format!("a{j}"),
                local_set: ConvexSetSpec::boxed(Vector::from_element(d, -1.0), Vector::from_element(d, 1.0)),
                objective: QuadraticObjective {
                    hessian,
                    linear,
                    constant: 0.0,
                },
                coupling_eq: AffineMap::new(eq, Vector::zeros(1)),
                coupling_ineq: AffineMap::new(ineq, Vector::from_element(2, -0.2)),
                variable_names: (0..d).map(|i| format!("x{i}")).collect(),
            }
        })
        .collect();
    ProblemInstance::new("random", 1, 2, agents).unwrap()
}

fn config(horizon: usize, threads: usize, reference: Option<f64>) -> RunConfig {
    let mut rc = RunConfig::new(horizon, StepSize::Scaled { eta0: 1.0 });
    rc.record = RecordSchedule::Every(1);
    rc.threads = threads;
    rc.reference_value = reference;
    rc
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn traces_do_not_depend_on_thread_count(seed in any::<u64>()) {
        let p = random_problem(seed);
        let g = random_connected_graph(p.n_agents(), 0.3, &mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let w = metropolis_weights(&g).unwrap();
        let one = run_ddsa(&p, &w, &config(40, 1, None)).unwrap();
        let three = run_ddsa(&p, &w, &config(40, 3, None)).unwrap();
        prop_assert_eq!(one.trace.to_csv(), three.trace.to_csv());
        let one = run_classic(&p, &w, &config(40, 1, None), true).unwrap();
        let three = run_classic(&p, &w, &config(40, 3, None), true).unwrap();
        prop_assert_eq!(one.trace.to_csv(), three.trace.to_csv());
    }

    #[test]
    fn duals_stay_in_cone_and_below_the_optimum(seed in any::<u64>()) {
        let p = random_problem(seed);
        let o = oracle_solve(&p, &OracleSettings::default());
        prop_assert!(o.is_optimal());
        let g = random_connected_graph(p.n_agents(), 0.3, &mut ChaCha8Rng::seed_from_u64(seed ^ 2));
        let w = metropolis_weights(&g).unwrap();
        let out = run_ddsa(&p, &w, &config(60, 1, Some(o.value))).unwrap();
        for s in &out.states {
            // rows after the equality block are inequality multipliers
            prop_assert!(s.z.iter().skip(p.m_eq).all(|v| *v >= 0.0));
        }
        prop_assert!(out.summary.max_weak_duality_excess.unwrap() <= 1e-6);
        prop_assert!(out.summary.max_centroid_error <= 1e-10);
        for row in &out.trace.rows {
            prop_assert!(row.dual_value <= o.value + 1e-6);
        }
    }
}

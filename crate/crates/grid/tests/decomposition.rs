//! The agent-wise instances describe the same feasible sets as direct,
//! whole-network checks, and every bundled fixture admits a Slater point.

use dualgrid_core::oracle::{check_slater, oracle_solve, OracleSettings, SlaterStatus};
use dualgrid_core::{ProblemInstance, Vector};
use dualgrid_grid::feeder::{build_der_socp, build_der_socp_with_layout, FeederModel, FeederOptions};
use dualgrid_grid::matpower::parse_case;
use dualgrid_grid::multiarea::{build_from_data, unpack, MultiAreaData};
use dualgrid_grid::stitch::{stitch_areas, StitchSpec, TieSpec};
use dualgrid_grid::td::{build_td_with_layout, td_violation, TransmissionModel};
use dualgrid_grid::fixtures;
use dualgrid_core::graph::CommGraph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-6;

fn decomposed_verdict(p: &ProblemInstance, xs: &[Vector], tol: f64) -> bool {
    p.local_violation(xs).unwrap() <= tol && p.coupling_residual(xs).unwrap().is_feasible(tol)
}

/// Optimal points of the instance under a few randomly tilted linear costs.
fn vertices(p: &ProblemInstance, rng: &mut ChaCha8Rng, k: usize) -> Vec<Vec<Vector>> {
    (0..k)
        .map(|i| {
            let mut q = p.clone();
            if i > 0 {
                for a in &mut q.agents {
                    let n = a.objective.linear.len();
                    a.objective.linear += Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
                }
            }
            let o = oracle_solve(&q, &OracleSettings::default());
            assert!(o.is_optimal(), "{:?}", o.status);
            o.x
        })
        .collect()
}

/// A third of the points are convex combinations of optimal points, a third
/// are such combinations nudged in one coordinate, and the rest are drawn
/// uniformly from the variable boxes.
fn sample_points(p: &ProblemInstance, rng: &mut ChaCha8Rng, verts: &[Vec<Vector>], count: usize) -> Vec<Vec<Vector>> {
    let stacked: Vec<Vector> = verts.iter().map(|v| p.stack(v)).collect();
    let witness = p.stack(&p.witness());
    let n = witness.len();
    let bounds: Vec<(f64, f64)> = p
        .agents
        .iter()
        .flat_map(|a| {
            let s = &a.local_set;
            (0..s.dim())
                .map(|i| {
                    let (lo, hi) = (s.lower[i].max(-10.0), s.upper[i].min(10.0));
                    (lo, hi.max(lo))
                })
                .collect::<Vec<_>>()
        })
        .collect();
    (0..count)
        .map(|k| {
            let x = match k % 3 {
                2 => Vector::from_fn(n, |i, _| {
                    let (lo, hi) = bounds[i];
                    if hi > lo {
                        rng.random_range(lo..hi)
                    } else {
                        lo
                    }
                }),
                kind => {
                    let mut w: Vec<f64> = stacked.iter().map(|_| rng.random::<f64>()).collect();
                    let s: f64 = w.iter().sum();
                    w.iter_mut().for_each(|v| *v /= s);
                    let mut x = Vector::zeros(n);
                    for (wi, v) in w.iter().zip(&stacked) {
                        x += v * *wi;
                    }
                    if kind == 1 {
                        let i = rng.random_range(0..n);
                        x[i] += if rng.random::<bool>() { 0.05 } else { -0.05 };
                    }
                    x
                }
            };
            p.split(&x)
        })
        .collect()
}

fn agreement(direct: &[bool], decomposed: &[bool]) {
    let feasible = direct.iter().filter(|&&v| v).count();
    assert!(feasible >= 20 && direct.len() - feasible >= 20, "{feasible} feasible of {}", direct.len());
    for (k, (a, b)) in direct.iter().zip(decomposed).enumerate() {
        assert_eq!(a, b, "point {k}: direct says {a}, decomposed says {b}");
    }
}

fn two_area() -> MultiAreaData {
    let cases = [parse_case(fixtures::AREA_A).unwrap(), parse_case(fixtures::AREA_B).unwrap()];
    let spec = StitchSpec::new(vec!["a".into(), "b".into()], vec![TieSpec::new("a", 3, "b", 1)]);
    stitch_areas(&cases, &spec).unwrap()
}

fn feeder(text: &str) -> FeederModel {
    FeederModel::from_case(&parse_case(text).unwrap(), &FeederOptions::default()).unwrap()
}

#[test]
fn multiarea_matches_flat_network() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data = two_area();
    let models = data.area_models().unwrap();
    let p = build_from_data(&data, &CommGraph::complete(2)).unwrap();
    let flat = data.flatten();
    let verts = vertices(&p, &mut rng, 4);
    let points = sample_points(&p, &mut rng, &verts, 100);
    let mut direct = Vec::new();
    let mut decomposed = Vec::new();
    for xs in &points {
        let (th, pg) = unpack(&models, xs);
        direct.push(flat.is_feasible(&th.concat(), &pg.concat(), TOL));
        decomposed.push(decomposed_verdict(&p, xs, TOL));
    }
    agreement(&direct, &decomposed);
}

#[test]
fn feeder_cells_match_branch_flow_model() {
    for (text, grouping) in [(fixtures::FEEDER4, vec![vec![0, 1], vec![2, 3]]), (fixtures::FEEDER3, vec![vec![0], vec![1], vec![2]])] {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = feeder(text);
        let (p, layout) = build_der_socp_with_layout(&f, &grouping).unwrap();
        let verts = vertices(&p, &mut rng, 4);
        let points = sample_points(&p, &mut rng, &verts, 100);
        let mut direct = Vec::new();
        let mut decomposed = Vec::new();
        for xs in &points {
            let (b, l) = layout.unpack(xs);
            direct.push(f.branch_flow_residual(&b, &l).max() <= TOL);
            decomposed.push(decomposed_verdict(&p, xs, TOL));
        }
        agreement(&direct, &decomposed);
    }
}

#[test]
fn td_agents_match_joint_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tm = TransmissionModel::from_case(&parse_case(fixtures::TRANS2).unwrap()).unwrap();
    let feeders = vec![feeder(fixtures::FEEDER3), feeder(fixtures::FEEDER3)];
    let (p, layout) = build_td_with_layout(&tm, &feeders).unwrap();
    let verts = vertices(&p, &mut rng, 3);
    let points = sample_points(&p, &mut rng, &verts, 100);
    // the joint solve is iterative, so its points are only accurate to ~1e-7
    let tol = 1e-5;
    let mut direct = Vec::new();
    let mut decomposed = Vec::new();
    for xs in &points {
        direct.push(td_violation(&tm, &feeders, &layout, xs) <= tol);
        decomposed.push(decomposed_verdict(&p, xs, tol));
    }
    agreement(&direct, &decomposed);
}

#[test]
fn bundled_fixtures_admit_slater_points() {
    let data = two_area();
    let mut instances = vec![build_from_data(&data, &CommGraph::complete(2)).unwrap()];
    for text in [fixtures::FEEDER4, fixtures::FEEDER3] {
        let f = feeder(text);
        instances.push(build_der_socp(&f, &f.singleton_grouping()).unwrap());
        instances.push(build_der_socp(&f, &f.whole_grouping()).unwrap());
    }
    let tm = TransmissionModel::from_case(&parse_case(fixtures::TRANS2).unwrap()).unwrap();
    instances.push(build_td_with_layout(&tm, &[feeder(fixtures::FEEDER3), feeder(fixtures::FEEDER3)]).unwrap().0);
    for p in &instances {
        let r = check_slater(p, 1e-8);
        assert_eq!(r.status, SlaterStatus::Found, "{}", p.metadata.name);
    }
}

//! Turning a configuration into a problem instance and its graph.

use std::path::Path;

use dualgrid_core::graph::CommGraph;
use dualgrid_core::problem::{AffineMap, AgentSpec, ConvexSetSpec, QuadraticObjective};
use dualgrid_core::{Matrix, ProblemInstance, Vector};
use dualgrid_grid::feeder::{build_der_socp, FeederModel, FeederOptions};
use dualgrid_grid::matpower::{parse_case, CaseData};
use dualgrid_grid::multiarea::{build_from_data, MultiAreaData};
use dualgrid_grid::random::GaussianStream;
use dualgrid_grid::stitch::{stitch_areas, StitchSpec, TieSpec};
use dualgrid_grid::td::{build_td_with_layout, TdLayout, TransmissionModel};
use dualgrid_grid::{fixtures, GridError};

use crate::config::{ExperimentConfig, GraphChoice, Grouping, ProblemKind};

/// Two agents, `f_j(x) = x²`, `x_j - 0.5` summing to zero, `x_j ∈ [0, 1]`.
/// The optimum is `x = (0.5, 0.5)` with value 0.5 and multiplier −1.
pub fn toy_problem() -> ProblemInstance {
    let agent = |name: &str| AgentSpec {
        name: name.into(),
        local_set: ConvexSetSpec::boxed(Vector::from_element(1, 0.0), Vector::from_element(1, 1.0)),
        objective: QuadraticObjective {
            hessian: Matrix::from_element(1, 1, 2.0),
            linear: Vector::zeros(1),
            constant: 0.0,
        },
        coupling_eq: AffineMap::new(Matrix::from_element(1, 1, 1.0), Vector::from_element(1, -0.5)),
        coupling_ineq: AffineMap::zero(0, 1),
        variable_names: vec!["x".into()],
    };
    ProblemInstance::new("toy", 1, 0, vec![agent("a1"), agent("a2")]).expect("toy problem is valid")
}

pub fn load_case(reference: &str, base_dir: &Path) -> Result<CaseData, GridError> {
    let text = match reference.strip_prefix("fixture:") {
        Some(name) => fixtures::get(name)
            .ok_or_else(|| GridError::Model(format!("no bundled fixture {name:?}")))?
            .to_string(),
        None => {
            let path = base_dir.join(reference);
            std::fs::read_to_string(&path).map_err(|e| GridError::Model(format!("{}: {e}", path.display())))?
        }
    };
    Ok(parse_case(&text)?)
}

#[derive(Debug, Clone)]
pub enum Context {
    Toy,
    MultiArea(MultiAreaData),
    Feeder { feeder: FeederModel, grouping: Vec<Vec<usize>> },
    Td { layout: TdLayout },
}

#[derive(Debug, Clone)]
pub struct Built {
    pub problem: ProblemInstance,
    pub graph: CommGraph,
    pub context: Context,
}

fn generic_graph(choice: &GraphChoice, n: usize) -> Result<Option<CommGraph>, GridError> {
    let g = match choice {
        GraphChoice::Auto => return Ok(None),
        GraphChoice::Complete => CommGraph::complete(n),
        GraphChoice::Path => CommGraph::path(n),
        GraphChoice::Star => CommGraph::star(n, n.saturating_sub(1)),
        GraphChoice::Edges(e) => CommGraph::new(n, e.iter().copied()).map_err(|e| GridError::Model(e.to_string()))?,
    };
    Ok(Some(g))
}

/// Cells joined by a feeder line become neighbours.
pub fn feeder_cell_graph(feeder: &FeederModel, grouping: &[Vec<usize>]) -> Result<CommGraph, GridError> {
    let mut cell = vec![0; feeder.n_bus()];
    for (c, members) in grouping.iter().enumerate() {
        for &b in members {
            cell[b] = c;
        }
    }
    let mut edges: Vec<(usize, usize)> = feeder
        .lines
        .iter()
        .map(|l| (cell[l.from].min(cell[l.to]), cell[l.from].max(cell[l.to])))
        .filter(|(a, b)| a != b)
        .collect();
    edges.sort_unstable();
    edges.dedup();
    CommGraph::new(grouping.len(), edges).map_err(|e| GridError::Model(e.to_string()))
}

fn grouping_for(feeder: &FeederModel, g: &Grouping) -> Result<Vec<Vec<usize>>, GridError> {
    Ok(match g {
        Grouping::Singleton => feeder.singleton_grouping(),
        Grouping::Whole => feeder.whole_grouping(),
        Grouping::Cells(cells) => cells
            .iter()
            .map(|cell| {
                cell.iter()
                    .map(|id| {
                        feeder
                            .buses
                            .iter()
                            .position(|b| b.id == *id)
                            .ok_or_else(|| GridError::Model(format!("grouping names unknown bus {id}")))
                    })
                    .collect()
            })
            .collect::<Result<_, _>>()?,
    })
}

pub fn multiarea_data(cfg: &ExperimentConfig) -> Result<MultiAreaData, GridError> {
    let cases = cfg
        .cases
        .iter()
        .map(|c| load_case(c, &cfg.base_dir))
        .collect::<Result<Vec<_>, _>>()?;
    let ties = cfg
        .ties
        .iter()
        .map(|t| {
            let mut s = TieSpec::new(&t.area_a, t.bus_a, &t.area_b, t.bus_b);
            s.reactance = t.reactance;
            s.reactance_base_mva = t.reactance_base_mva;
            s.capacity_mw = t.capacity_mw;
            s
        })
        .collect();
    let mut spec = StitchSpec::new(cfg.areas.clone(), ties);
    spec.internal_capacity_mw = cfg.internal_capacity_mw;
    spec.cleanup_boundary = cfg.cleanup_boundary;
    spec.base_mva = cfg.base_mva;
    let mut data = stitch_areas(&cases, &spec)?;
    if cfg.perturb_costs {
        data.perturb_costs(&mut GaussianStream::new(cfg.seed));
    }
    Ok(data)
}

pub fn feeder_model(cfg: &ExperimentConfig, reference: &str) -> Result<FeederModel, GridError> {
    let opts = FeederOptions {
        der_disc: cfg.der_disc,
        ..FeederOptions::default()
    };
    FeederModel::from_case(&load_case(reference, &cfg.base_dir)?, &opts)
}

pub fn build(cfg: &ExperimentConfig) -> Result<Built, GridError> {
    match cfg.kind {
        ProblemKind::Toy => {
            let problem = toy_problem();
            let graph = generic_graph(&cfg.graph, 2)?.unwrap_or_else(|| CommGraph::complete(2));
            Ok(Built {
                problem,
                graph,
                context: Context::Toy,
            })
        }
        ProblemKind::P1 => {
            let data = multiarea_data(cfg)?;
            let n = data.areas.len();
            let graph = match generic_graph(&cfg.graph, n)? {
                Some(g) => g,
                None => {
                    let mut e: Vec<(usize, usize)> = data
                        .ties
                        .iter()
                        .map(|t| (t.area_a.min(t.area_b), t.area_a.max(t.area_b)))
                        .collect();
                    e.sort_unstable();
                    e.dedup();
                    CommGraph::new(n, e).map_err(|e| GridError::Model(e.to_string()))?
                }
            };
            let problem = build_from_data(&data, &graph)?;
            Ok(Built {
                problem,
                graph,
                context: Context::MultiArea(data),
            })
        }
        ProblemKind::P2 => {
            let feeder = feeder_model(cfg, &cfg.cases[0])?;
            let grouping = grouping_for(&feeder, &cfg.grouping)?;
            let problem = build_der_socp(&feeder, &grouping)?;
            let graph = match generic_graph(&cfg.graph, grouping.len())? {
                Some(g) => g,
                None => feeder_cell_graph(&feeder, &grouping)?,
            };
            Ok(Built {
                problem,
                graph,
                context: Context::Feeder { feeder, grouping },
            })
        }
        ProblemKind::P3 => {
            let tm = TransmissionModel::from_case(&load_case(&cfg.cases[0], &cfg.base_dir)?)?;
            let feeders = cfg
                .feeders
                .iter()
                .map(|f| feeder_model(cfg, f))
                .collect::<Result<Vec<_>, _>>()?;
            let (problem, layout) = build_td_with_layout(&tm, &feeders)?;
            let n = problem.n_agents();
            let graph = generic_graph(&cfg.graph, n)?.unwrap_or_else(|| CommGraph::star(n, n - 1));
            Ok(Built {
                problem,
                graph,
                context: Context::Td { layout },
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::parse(text, &BTreeMap::new()).unwrap()
    }

    #[test]
    fn every_kind_builds() {
        let b = build(&cfg("[experiment]\nkind = toy\n")).unwrap();
        assert_eq!(b.problem.n_agents(), 2);
        let b = build(&cfg(
            "[experiment]\nkind = p1\n[data]\ncases = fixture:area_a, fixture:area_b\nareas = a, b\n[tie.1]\nfrom = a:3\nto = b:1\n",
        ))
        .unwrap();
        assert_eq!(b.problem.n_agents(), 2);
        assert!(b.graph.has_edge(0, 1));
        let b = build(&cfg("[experiment]\nkind = p2\n[data]\ncases = fixture:feeder4\ngrouping = 1,2;3,4\n")).unwrap();
        assert_eq!(b.problem.n_agents(), 2);
        let b = build(&cfg(
            "[experiment]\nkind = p3\n[data]\ncases = fixture:trans2\nfeeders = fixture:feeder3, fixture:feeder3\n",
        ))
        .unwrap();
        assert_eq!(b.problem.n_agents(), 3);
        assert!(b.graph.has_edge(0, 2) && b.graph.has_edge(1, 2) && !b.graph.has_edge(0, 1));
    }

    #[test]
    fn singleton_cells_follow_the_feeder() {
        let b = build(&cfg("[experiment]\nkind = p2\n[data]\ncases = fixture:feeder4\n")).unwrap();
        assert_eq!(b.graph.n_edges(), 3);
        assert!(b.graph.has_edge(0, 1) && b.graph.has_edge(1, 2) && b.graph.has_edge(2, 3));
    }

    #[test]
    fn unknown_fixture_is_reported() {
        let e = build(&cfg("[experiment]\nkind = p2\n[data]\ncases = fixture:nope\n")).unwrap_err();
        assert!(e.to_string().contains("nope"));
    }
}

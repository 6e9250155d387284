//! Multi-area DC dispatch: one agent per area, tie-line physics in the
//! coupling rows.

use dualgrid_core::graph::CommGraph;
use dualgrid_core::{Matrix, ProblemInstance};

use crate::assemble::Vars;
use crate::GridError;

/// Default phase-angle box half-width.
pub const ANGLE_LIMIT: f64 = std::f64::consts::FRAC_PI_6;

#[derive(Debug, Clone, PartialEq)]
pub struct DcLine {
    pub from: usize,
    pub to: usize,
    /// Susceptance `1/x`, per unit.
    pub b: f64,
    /// Flow limit, per unit; infinite when unlimited.
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcGen {
    pub bus: usize,
    pub pmin: f64,
    pub pmax: f64,
    /// Linear cost per unit of per-unit output.
    pub cost: f64,
}

/// One control area in per unit. Bus indices are local to the area.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaNetwork {
    pub name: String,
    pub bus_ids: Vec<usize>,
    pub load: Vec<f64>,
    pub lines: Vec<DcLine>,
    pub gens: Vec<DcGen>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TieLine {
    pub area_a: usize,
    pub bus_a: usize,
    pub area_b: usize,
    pub bus_b: usize,
    pub b: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiAreaData {
    pub base_mva: f64,
    pub areas: Vec<AreaNetwork>,
    pub ties: Vec<TieLine>,
    pub angle_limit: f64,
}

/// A tie seen from one of its ends.
#[derive(Debug, Clone, PartialEq)]
pub struct TieBlock {
    pub tie: usize,
    /// Boundary position at this end.
    pub own: usize,
    pub other_area: usize,
    pub other: usize,
    pub b: f64,
    pub limit: f64,
    /// True at the `area_a` end; the flow `b(θ_a − θ_b)` is signed from it.
    pub is_from: bool,
}

/// Matrix form of one area, ordered as internal buses then boundary buses.
///
/// `B` blocks are the rows of the full network Laplacian restricted to the
/// area, so boundary rows include the tie susceptances on the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaModel {
    pub name: String,
    /// Local bus indices of internal and boundary buses.
    pub internal: Vec<usize>,
    pub boundary: Vec<usize>,
    pub b_jj: Matrix,
    pub b_jjbar: Matrix,
    pub b_jbarj: Matrix,
    pub b_jbarjbar: Matrix,
    /// Internal-line flow rows against internal and boundary angles.
    pub h_j: Matrix,
    pub h_jbar: Matrix,
    pub line_limits: Vec<f64>,
    pub ties: Vec<TieBlock>,
    pub gen_bus: Vec<usize>,
    pub pmin: Vec<f64>,
    pub pmax: Vec<f64>,
    pub cost: Vec<f64>,
    /// Load per local bus.
    pub load: Vec<f64>,
    pub angle_limit: f64,
}

impl AreaModel {
    pub fn n_internal(&self) -> usize {
        self.internal.len()
    }

    pub fn n_boundary(&self) -> usize {
        self.boundary.len()
    }
}

impl MultiAreaData {
    pub fn validate(&self) -> Result<(), GridError> {
        for (a, area) in self.areas.iter().enumerate() {
            let n = area.bus_ids.len();
            if area.load.len() != n {
                return Err(GridError::Model(format!("area {a}: {} loads for {n} buses", area.load.len())));
            }
            for l in &area.lines {
                if l.from >= n || l.to >= n || l.from == l.to {
                    return Err(GridError::Model(format!("area {a}: bad line {}-{}", l.from, l.to)));
                }
                if !(l.b > 0.0) || l.limit < 0.0 {
                    return Err(GridError::Model(format!("area {a}: line {}-{} needs b > 0, limit >= 0", l.from, l.to)));
                }
            }
            for g in &area.gens {
                if g.bus >= n || g.pmin > g.pmax {
                    return Err(GridError::Model(format!("area {a}: bad generator at {}", g.bus)));
                }
            }
        }
        for (t, tie) in self.ties.iter().enumerate() {
            let bad = |reason: String| Err(GridError::Tie { tie: t, reason });
            if tie.area_a >= self.areas.len() || tie.area_b >= self.areas.len() {
                return bad("references a missing area".into());
            }
            if tie.area_a == tie.area_b {
                return bad("joins an area to itself".into());
            }
            if tie.bus_a >= self.areas[tie.area_a].bus_ids.len() || tie.bus_b >= self.areas[tie.area_b].bus_ids.len() {
                return bad("references a missing bus".into());
            }
            if !(tie.b > 0.0) || tie.limit < 0.0 {
                return bad("needs b > 0 and limit >= 0".into());
            }
        }
        if !(self.angle_limit > 0.0) || !self.angle_limit.is_finite() {
            return Err(GridError::Model("angle limit must be positive and finite".into()));
        }
        Ok(())
    }

    /// Boundary buses of area `a`, local indices in increasing order.
    pub fn boundary_of(&self, a: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .ties
            .iter()
            .flat_map(|t| {
                let mut e = Vec::new();
                if t.area_a == a {
                    e.push(t.bus_a);
                }
                if t.area_b == a {
                    e.push(t.bus_b);
                }
                e
            })
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Per-area matrix forms.
    pub fn area_models(&self) -> Result<Vec<AreaModel>, GridError> {
        self.validate()?;
        let boundaries: Vec<Vec<usize>> = (0..self.areas.len()).map(|a| self.boundary_of(a)).collect();
        let mut out = Vec::with_capacity(self.areas.len());
        for (a, area) in self.areas.iter().enumerate() {
            let n = area.bus_ids.len();
            let boundary = boundaries[a].clone();
            let internal: Vec<usize> = (0..n).filter(|i| !boundary.contains(i)).collect();
            // position of each local bus in the (internal, boundary) ordering
            let mut pos = vec![0; n];
            for (k, &i) in internal.iter().chain(&boundary).enumerate() {
                pos[i] = k;
            }
            let ni = internal.len();
            let mut lap = Matrix::zeros(n, n);
            let mut h = Matrix::zeros(0, n);
            let mut limits = Vec::new();
            for l in &area.lines {
                let (f, t) = (pos[l.from], pos[l.to]);
                lap[(f, f)] += l.b;
                lap[(t, t)] += l.b;
                lap[(f, t)] -= l.b;
                lap[(t, f)] -= l.b;
                if l.limit.is_finite() {
                    let r = h.nrows();
                    h = h.insert_row(r, 0.0);
                    h[(r, f)] = l.b;
                    h[(r, t)] = -l.b;
                    limits.push(l.limit);
                }
            }
            let mut ties = Vec::new();
            for (ti, t) in self.ties.iter().enumerate() {
                for (is_from, own_area, own_bus, oa, ob) in
                    [(true, t.area_a, t.bus_a, t.area_b, t.bus_b), (false, t.area_b, t.bus_b, t.area_a, t.bus_a)]
                {
                    if own_area != a {
                        continue;
                    }
                    let own = boundary.iter().position(|&x| x == own_bus).expect("boundary bus");
                    let other = boundaries[oa].iter().position(|&x| x == ob).expect("boundary bus");
                    lap[(pos[own_bus], pos[own_bus])] += t.b;
                    ties.push(TieBlock {
                        tie: ti,
                        own,
                        other_area: oa,
                        other,
                        b: t.b,
                        limit: t.limit,
                        is_from,
                    });
                }
            }
            let nb = boundary.len();
            out.push(AreaModel {
                name: area.name.clone(),
                b_jj: lap.view((0, 0), (ni, ni)).into_owned(),
                b_jjbar: lap.view((0, ni), (ni, nb)).into_owned(),
                b_jbarj: lap.view((ni, 0), (nb, ni)).into_owned(),
                b_jbarjbar: lap.view((ni, ni), (nb, nb)).into_owned(),
                h_j: h.columns(0, ni).into_owned(),
                h_jbar: h.columns(ni, nb).into_owned(),
                line_limits: limits,
                ties,
                gen_bus: area.gens.iter().map(|g| g.bus).collect(),
                pmin: area.gens.iter().map(|g| g.pmin).collect(),
                pmax: area.gens.iter().map(|g| g.pmax).collect(),
                cost: area.gens.iter().map(|g| g.cost).collect(),
                load: area.load.clone(),
                internal,
                boundary,
                angle_limit: self.angle_limit,
            });
        }
        Ok(out)
    }

    /// The whole system as one network, buses numbered area by area.
    pub fn flatten(&self) -> DcNetwork {
        let offsets: Vec<usize> = self
            .areas
            .iter()
            .scan(0, |acc, a| {
                let o = *acc;
                *acc += a.bus_ids.len();
                Some(o)
            })
            .collect();
        let mut lines = Vec::new();
        let mut load = Vec::new();
        let mut gens = Vec::new();
        for (a, area) in self.areas.iter().enumerate() {
            let o = offsets[a];
            load.extend_from_slice(&area.load);
            lines.extend(area.lines.iter().map(|l| DcLine {
                from: l.from + o,
                to: l.to + o,
                ..l.clone()
            }));
            gens.extend(area.gens.iter().map(|g| DcGen { bus: g.bus + o, ..g.clone() }));
        }
        for t in &self.ties {
            lines.push(DcLine {
                from: t.bus_a + offsets[t.area_a],
                to: t.bus_b + offsets[t.area_b],
                b: t.b,
                limit: t.limit,
            });
        }
        DcNetwork {
            n_bus: load.len(),
            lines,
            gens,
            load,
            angle_limit: self.angle_limit,
        }
    }
}

/// A single DC network, used for direct feasibility checks.
#[derive(Debug, Clone, PartialEq)]
pub struct DcNetwork {
    pub n_bus: usize,
    pub lines: Vec<DcLine>,
    pub gens: Vec<DcGen>,
    pub load: Vec<f64>,
    pub angle_limit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcResidualReport {
    /// `b(θ_from − θ_to)` per line.
    pub flows: Vec<f64>,
    /// Largest `|s − b(θ_from − θ_to)|` over supplied flows; 0 when none given.
    pub flow_definition: f64,
    /// Largest nodal mismatch between injections and net outflow.
    pub balance: f64,
    /// Largest `|s| − limit` excess.
    pub limit: f64,
}

impl DcResidualReport {
    pub fn max(&self) -> f64 {
        self.flow_definition.max(self.balance).max(self.limit)
    }
}

impl DcNetwork {
    /// Checks a candidate `(θ, p)` with `p` the net injection per bus.
    pub fn residuals(&self, theta: &[f64], injection: &[f64], flows: Option<&[f64]>) -> DcResidualReport {
        assert_eq!(theta.len(), self.n_bus);
        assert_eq!(injection.len(), self.n_bus);
        let computed: Vec<f64> = self.lines.iter().map(|l| l.b * (theta[l.from] - theta[l.to])).collect();
        let flow_definition = flows.map_or(0.0, |s| {
            s.iter().zip(&computed).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        });
        let used = flows.unwrap_or(&computed);
        let mut net = vec![0.0; self.n_bus];
        for (l, s) in self.lines.iter().zip(used) {
            net[l.from] += s;
            net[l.to] -= s;
        }
        let balance = net.iter().zip(injection).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let limit = self
            .lines
            .iter()
            .zip(used)
            .map(|(l, s)| (s.abs() - l.limit).max(0.0))
            .fold(0.0, f64::max);
        DcResidualReport {
            flows: computed,
            flow_definition,
            balance,
            limit,
        }
    }

    /// Net injections from generator outputs listed in `gens` order.
    pub fn injections(&self, pg: &[f64]) -> Vec<f64> {
        let mut inj: Vec<f64> = self.load.iter().map(|l| -l).collect();
        for (g, p) in self.gens.iter().zip(pg) {
            inj[g.bus] += p;
        }
        inj
    }

    /// Direct membership test for the dispatch problem, used as the
    /// monolithic reference.
    pub fn is_feasible(&self, theta: &[f64], pg: &[f64], tol: f64) -> bool {
        let boxes = theta.iter().all(|t| t.abs() <= self.angle_limit + tol)
            && self.gens.iter().zip(pg).all(|(g, p)| *p >= g.pmin - tol && *p <= g.pmax + tol);
        boxes && self.residuals(theta, &self.injections(pg), None).max() <= tol
    }
}

/// Row layout of the coupling constraints, shared by the builder and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingLayout {
    /// First balance row of each area; rows follow its boundary order.
    pub balance_start: Vec<usize>,
    /// First of the two limit rows of each tie.
    pub tie_rows: Vec<usize>,
    pub m_eq: usize,
    pub m_ineq: usize,
}

fn layout(models: &[AreaModel], n_ties: usize) -> CouplingLayout {
    let mut balance_start = Vec::new();
    let mut m_eq = 0;
    for m in models {
        balance_start.push(m_eq);
        m_eq += m.n_boundary();
    }
    CouplingLayout {
        balance_start,
        tie_rows: (0..n_ties).map(|t| 2 * t).collect(),
        m_eq,
        m_ineq: 2 * n_ties,
    }
}

fn check_ties(models: &[AreaModel], graph: &CommGraph) -> Result<usize, GridError> {
    let mut n_ties = 0;
    for (a, m) in models.iter().enumerate() {
        for t in &m.ties {
            let bad = |reason: String| Err(GridError::Tie { tie: t.tie, reason });
            let Some(o) = models.get(t.other_area) else {
                return bad(format!("area {a} points to missing area {}", t.other_area));
            };
            let Some(mirror) = o.ties.iter().find(|u| u.tie == t.tie) else {
                return bad(format!("area {} has no matching end", t.other_area));
            };
            if mirror.other_area != a
                || mirror.own != t.other
                || mirror.other != t.own
                || mirror.b != t.b
                || mirror.limit != t.limit
                || mirror.is_from == t.is_from
            {
                return bad(format!("ends in areas {a} and {} disagree", t.other_area));
            }
            if t.own >= m.n_boundary() || t.other >= o.n_boundary() {
                return bad(format!(
                    "boundary index out of range (areas {a} and {} have {} and {} boundary buses)",
                    t.other_area,
                    m.n_boundary(),
                    o.n_boundary()
                ));
            }
            if !graph.has_edge(a, t.other_area) {
                return bad(format!("areas {a} and {} are not neighbours in the graph", t.other_area));
            }
            n_ties = n_ties.max(t.tie + 1);
        }
    }
    Ok(n_ties)
}

/// One agent per area with `x_j = (θ_internal, θ_boundary, p^G)`.
///
/// Local set: angle box, generator box, balance at internal buses and
/// internal line limits. Coupling equalities are the boundary balance rows;
/// coupling inequalities are the two-sided tie limits. A generator or load
/// sitting on a boundary bus enters that bus's balance row.
pub fn build_multiarea(models: &[AreaModel], graph: &CommGraph) -> Result<ProblemInstance, GridError> {
    if graph.n_nodes() != models.len() {
        return Err(GridError::Model(format!(
            "graph has {} nodes for {} areas",
            graph.n_nodes(),
            models.len()
        )));
    }
    let n_ties = check_ties(models, graph)?;
    let lay = layout(models, n_ties);
    let mut agents = Vec::with_capacity(models.len());
    for (a, m) in models.iter().enumerate() {
        let (ni, nb) = (m.n_internal(), m.n_boundary());
        let lim = m.angle_limit;
        let mut v = Vars::default();
        for &i in &m.internal {
            v.var(format!("theta[{i}]"), -lim, lim);
        }
        for &i in &m.boundary {
            v.var(format!("theta[{i}]"), -lim, lim);
        }
        let gen0 = v.len();
        for (g, &bus) in m.gen_bus.iter().enumerate() {
            v.var(format!("pg[{g}@{bus}]"), m.pmin[g], m.pmax[g]);
        }
        let mut d = v.into_agent(m.name.clone(), lay.m_eq, lay.m_ineq);
        for (g, &c) in m.cost.iter().enumerate() {
            d.linear(gen0 + g, c);
        }

        // balance rows: B θ − Σ gens at bus = −load
        for r in 0..ni + nb {
            let mut terms = Vec::new();
            for c in 0..ni + nb {
                let val = if r < ni {
                    if c < ni {
                        m.b_jj[(r, c)]
                    } else {
                        m.b_jjbar[(r, c - ni)]
                    }
                } else if c < ni {
                    m.b_jbarj[(r - ni, c)]
                } else {
                    m.b_jbarjbar[(r - ni, c - ni)]
                };
                if val != 0.0 {
                    terms.push((c, val));
                }
            }
            let bus = if r < ni { m.internal[r] } else { m.boundary[r - ni] };
            for (g, &gb) in m.gen_bus.iter().enumerate() {
                if gb == bus {
                    terms.push((gen0 + g, -1.0));
                }
            }
            if r < ni {
                d.local_eq(&terms, -m.load[bus]);
            } else {
                d.coupling_eq(lay.balance_start[a] + r - ni, &terms, m.load[bus]);
            }
        }
        for (k, &l) in m.line_limits.iter().enumerate() {
            let mut terms = Vec::new();
            for c in 0..ni {
                if m.h_j[(k, c)] != 0.0 {
                    terms.push((c, m.h_j[(k, c)]));
                }
            }
            for c in 0..nb {
                if m.h_jbar[(k, c)] != 0.0 {
                    terms.push((ni + c, m.h_jbar[(k, c)]));
                }
            }
            let neg: Vec<(usize, f64)> = terms.iter().map(|&(i, v)| (i, -v)).collect();
            d.local_le(&terms, l);
            d.local_le(&neg, l);
        }
        for t in &m.ties {
            // this area's angle in the neighbour's boundary balance row
            let row = lay.balance_start[t.other_area] + t.other;
            d.coupling_eq(row, &[(ni + t.own, -t.b)], 0.0);
            // flow b(θ_a − θ_b) signed from the a end; rows: flow − f, −flow − f
            let s = if t.is_from { 1.0 } else { -1.0 };
            let r0 = lay.tie_rows[t.tie];
            let off = if t.is_from { -t.limit } else { 0.0 };
            d.coupling_le(r0, &[(ni + t.own, s * t.b)], off);
            d.coupling_le(r0 + 1, &[(ni + t.own, -s * t.b)], off);
        }
        agents.push(d.finish()?);
    }
    Ok(ProblemInstance::new("multiarea-dc", lay.m_eq, lay.m_ineq, agents)?)
}

/// Builds the area models and the instance in one go.
pub fn build_from_data(data: &MultiAreaData, graph: &CommGraph) -> Result<ProblemInstance, GridError> {
    build_multiarea(&data.area_models()?, graph)
}

/// Splits a stacked agent point back into angles per local bus and
/// generator outputs.
pub fn unpack(models: &[AreaModel], xs: &[dualgrid_core::Vector]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut thetas = Vec::new();
    let mut pgs = Vec::new();
    for (m, x) in models.iter().zip(xs) {
        let n = m.n_internal() + m.n_boundary();
        let mut th = vec![0.0; n];
        for (k, &i) in m.internal.iter().chain(&m.boundary).enumerate() {
            th[i] = x[k];
        }
        thetas.push(th);
        pgs.push(x.rows(n, m.gen_bus.len()).iter().copied().collect());
    }
    (thetas, pgs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dualgrid_core::oracle::{oracle_solve, OracleSettings};

    fn single_bus_pair(limit: f64) -> MultiAreaData {
        let area = |name: &str, load: f64, cost: f64| AreaNetwork {
            name: name.into(),
            bus_ids: vec![1],
            load: vec![load],
            lines: vec![],
            gens: vec![DcGen {
                bus: 0,
                pmin: 0.0,
                pmax: 10.0,
                cost,
            }],
        };
        MultiAreaData {
            base_mva: 1.0,
            areas: vec![area("one", 1.0, 1.0), area("two", 0.0, 2.0)],
            ties: vec![TieLine {
                area_a: 0,
                bus_a: 0,
                area_b: 1,
                bus_b: 0,
                b: 10.0,
                limit,
            }],
            angle_limit: ANGLE_LIMIT,
        }
    }

    #[test]
    fn single_bus_areas() {
        let data = single_bus_pair(0.5);
        let p = build_from_data(&data, &CommGraph::complete(2)).unwrap();
        assert_eq!((p.m_eq, p.m_ineq), (2, 2));
        let o = oracle_solve(&p, &OracleSettings::default());
        assert!(o.is_optimal());
        assert!((o.value - 1.0).abs() < 1e-7, "{}", o.value);
        let models = data.area_models().unwrap();
        let (th, pg) = unpack(&models, &o.x);
        assert!((pg[0][0] - 1.0).abs() < 1e-6 && pg[1][0].abs() < 1e-6);
        // tie flow
        assert!((10.0 * (th[0][0] - th[1][0])).abs() < 1e-6);
    }

    #[test]
    fn coupling_rows_touch_only_incident_areas() {
        let mut data = single_bus_pair(0.5);
        data.areas.push(data.areas[0].clone());
        let p = build_from_data(&data, &CommGraph::complete(3)).unwrap();
        let third = &p.agents[2];
        assert_eq!(third.coupling_eq.matrix.amax(), 0.0);
        assert_eq!(third.coupling_ineq.matrix.amax(), 0.0);
    }

    #[test]
    fn zero_tie_limits_separate_the_areas() {
        let a = crate::stitch::tests::stitched(0.0);
        let p = build_from_data(&a, &CommGraph::complete(2)).unwrap();
        let joint = oracle_solve(&p, &OracleSettings::default());
        let mut sum = 0.0;
        for k in 0..2 {
            let mut solo = a.clone();
            solo.areas = vec![a.areas[k].clone()];
            solo.ties.clear();
            let q = build_from_data(&solo, &CommGraph::complete(1)).unwrap();
            sum += oracle_solve(&q, &OracleSettings::default()).value;
        }
        assert!((joint.value - sum).abs() <= 1e-6 * sum.abs(), "{} vs {sum}", joint.value);
    }

    #[test]
    fn laplacian_rows_sum_to_zero() {
        let data = crate::stitch::tests::stitched(1.0);
        let models = data.area_models().unwrap();
        let mut total = 0.0;
        for m in &models {
            let ni = m.n_internal();
            let nb = m.n_boundary();
            for r in 0..ni {
                let s: f64 = m.b_jj.row(r).sum() + m.b_jjbar.row(r).sum();
                assert!(s.abs() < 1e-12);
            }
            for r in 0..nb {
                // tie susceptance leaves the area
                let ext: f64 = m.ties.iter().filter(|t| t.own == r).map(|t| t.b).sum();
                let s: f64 = m.b_jbarj.row(r).sum() + m.b_jbarjbar.row(r).sum() - ext;
                assert!(s.abs() < 1e-12);
                total += ext;
            }
        }
        assert!(total > 0.0);
    }

    #[test]
    fn dc_residuals_by_hand() {
        let net = DcNetwork {
            n_bus: 2,
            lines: vec![DcLine {
                from: 0,
                to: 1,
                b: 10.0,
                limit: 0.5,
            }],
            gens: vec![],
            load: vec![0.0, 0.0],
            angle_limit: ANGLE_LIMIT,
        };
        let r = net.residuals(&[0.1, 0.0], &[1.0, -1.0], None);
        assert!((r.flows[0] - 1.0).abs() < 1e-15);
        assert!(r.balance < 1e-15);
        assert!((r.limit - 0.5).abs() < 1e-15);
        let z = net.residuals(&[0.0, 0.0], &[0.0, 0.0], None);
        assert_eq!(z.flows, vec![0.0]);
        assert_eq!(z.max(), 0.0);
        let s = net.residuals(&[0.1, 0.0], &[1.0, -1.0], Some(&[0.4]));
        assert!((s.flow_definition - 0.6).abs() < 1e-15);
    }

    #[test]
    fn mismatched_tie_ends_are_named() {
        let data = single_bus_pair(0.5);
        let mut models = data.area_models().unwrap();
        models[1].ties[0].b = 3.0;
        let e = build_multiarea(&models, &CommGraph::complete(2)).unwrap_err();
        assert!(matches!(e, GridError::Tie { tie: 0, .. }), "{e}");
        let e = build_from_data(&data, &CommGraph::unchecked(2, []).unwrap()).unwrap_err();
        assert!(matches!(e, GridError::Tie { tie: 0, .. }), "{e}");
    }
}

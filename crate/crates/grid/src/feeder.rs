//! Radial distribution feeders: the branch-flow relaxation with DERs and
//! the linearised (LinDistFlow) voltage model.

use dualgrid_core::problem::SocSlice;
use dualgrid_core::{Matrix, ProblemInstance, Vector};

use crate::assemble::{AgentDraft, Vars};
use crate::matpower::CaseData;
use crate::GridError;

/// Cost `α_p p² + β_p p + α_q q² + β_q q + c` of a bus's DER, per-unit powers.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BusCost {
    pub alpha_p: f64,
    pub beta_p: f64,
    pub alpha_q: f64,
    pub beta_q: f64,
    pub constant: f64,
}

/// DER capability: a box, optionally intersected with `p² + q² <= s_max²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Der {
    pub pmin: f64,
    pub pmax: f64,
    pub qmin: f64,
    pub qmax: f64,
    pub s_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeederBus {
    pub id: usize,
    pub pd: f64,
    pub qd: f64,
    pub wmin: f64,
    pub wmax: f64,
    pub der: Option<Der>,
    pub cost: BusCost,
}

/// Line from parent bus `from` to child bus `to`, indices into `buses`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeederLine {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    /// Bound on the squared current `ℓ`.
    pub current_limit: f64,
    /// Bound on `|P|` and `|Q|` at the sending end.
    pub flow_limit: f64,
}

/// A radial feeder in per unit; bus 0 is the substation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeederModel {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<FeederBus>,
    pub lines: Vec<FeederLine>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeederOptions {
    pub current_limit: f64,
    /// Flow bound in MW/MVAr for branches whose `rateA` is zero.
    pub default_flow_limit_mw: f64,
    /// Add the apparent-power disc with radius `Pmax` to every DER.
    pub der_disc: bool,
}

impl Default for FeederOptions {
    fn default() -> Self {
        Self {
            current_limit: 200.0,
            default_flow_limit_mw: 1.0,
            der_disc: false,
        }
    }
}

impl FeederModel {
    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    /// Index of the line feeding bus `j`.
    pub fn parent_line(&self, j: usize) -> Option<usize> {
        self.lines.iter().position(|l| l.to == j)
    }

    pub fn child_lines(&self, j: usize) -> Vec<usize> {
        (0..self.lines.len()).filter(|&e| self.lines[e].from == j).collect()
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let n = self.n_bus();
        let err = |s: String| Err(GridError::Model(format!("feeder {:?}: {s}", self.name)));
        if n == 0 {
            return err("no buses".into());
        }
        if self.lines.len() != n - 1 {
            return err(format!("{} lines for {n} buses; not a tree", self.lines.len()));
        }
        let mut parent = vec![None; n];
        for (e, l) in self.lines.iter().enumerate() {
            if l.from >= n || l.to >= n || l.from == l.to {
                return err(format!("line {e} has bad endpoints"));
            }
            if l.to == 0 {
                return err(format!("line {e} points into the root"));
            }
            if parent[l.to].replace(e).is_some() {
                return err(format!("bus {} has two parents", self.buses[l.to].id));
            }
            if l.r < 0.0 || l.x < 0.0 {
                return err(format!("line {e} has a negative impedance"));
            }
            if !(l.current_limit >= 0.0 && l.flow_limit >= 0.0) || !l.current_limit.is_finite() || !l.flow_limit.is_finite() {
                return err(format!("line {e} needs finite nonnegative limits"));
            }
        }
        // every bus reaches the root through its parents
        for j in 1..n {
            let mut k = j;
            for _ in 0..n {
                match parent[k] {
                    Some(e) => k = self.lines[e].from,
                    None => break,
                }
            }
            if k != 0 {
                return err(format!("bus {} is not connected to the root", self.buses[j].id));
            }
        }
        for b in &self.buses {
            if !(b.wmin <= b.wmax) || b.wmin < 0.0 || !b.wmax.is_finite() {
                return err(format!("bus {} has an empty voltage box", b.id));
            }
            if let Some(d) = b.der {
                if d.pmin > d.pmax || d.qmin > d.qmax || ![d.pmin, d.pmax, d.qmin, d.qmax].iter().all(|v| v.is_finite()) {
                    return err(format!("bus {} has an empty DER box", b.id));
                }
            }
        }
        Ok(())
    }

    /// Root-to-bus line paths.
    fn path_lines(&self, j: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut k = j;
        while let Some(e) = self.parent_line(k) {
            out.push(e);
            k = self.lines[e].from;
        }
        out
    }

    /// Reads a radial case. The reference bus (type 3) becomes the root and
    /// lines are oriented away from it. Each bus may hold at most one unit;
    /// the root's unit is the substation supply.
    pub fn from_case(case: &CaseData, opts: &FeederOptions) -> Result<Self, GridError> {
        let base = case.base_mva;
        let roots: Vec<usize> = (0..case.bus.len()).filter(|&i| case.bus[i].kind() == 3).collect();
        if roots.len() != 1 {
            return Err(GridError::Model(format!("{} reference buses; need exactly one root", roots.len())));
        }
        let root = roots[0];
        let order: Vec<usize> = std::iter::once(root).chain((0..case.bus.len()).filter(|&i| i != root)).collect();
        let mut pos = vec![0; case.bus.len()];
        for (k, &i) in order.iter().enumerate() {
            pos[i] = k;
        }
        let mut buses: Vec<FeederBus> = order
            .iter()
            .map(|&i| {
                let b = &case.bus[i];
                FeederBus {
                    id: b.id(),
                    pd: b.pd() / base,
                    qd: b.qd() / base,
                    wmin: b.vmin() * b.vmin(),
                    wmax: b.vmax() * b.vmax(),
                    der: None,
                    cost: BusCost::default(),
                }
            })
            .collect();
        for (g, row) in case.gen.iter().enumerate() {
            if !row.in_service() {
                continue;
            }
            let k = pos[case.bus_index(row.bus()).unwrap()];
            if buses[k].der.is_some() {
                return Err(GridError::Model(format!("bus {} holds more than one unit", row.bus())));
            }
            buses[k].der = Some(Der {
                pmin: row.pmin() / base,
                pmax: row.pmax() / base,
                qmin: row.qmin() / base,
                qmax: row.qmax() / base,
                s_max: opts.der_disc.then(|| row.pmax() / base),
            });
            let (pc, qc) = case.cost_of(g);
            let mut c = BusCost::default();
            if let Some((c2, c1, c0)) = pc.and_then(|r| r.quadratic()) {
                c.alpha_p = c2 * base * base;
                c.beta_p = c1 * base;
                c.constant += c0;
            }
            if let Some((c2, c1, c0)) = qc.and_then(|r| r.quadratic()) {
                c.alpha_q = c2 * base * base;
                c.beta_q = c1 * base;
                c.constant += c0;
            }
            buses[k].cost = c;
        }
        // orient by breadth-first search from the root
        let n = buses.len();
        let edges: Vec<(usize, usize, &crate::matpower::BranchRow)> = case
            .branch
            .iter()
            .filter(|b| b.in_service())
            .map(|b| (pos[case.bus_index(b.from()).unwrap()], pos[case.bus_index(b.to()).unwrap()], b))
            .collect();
        if edges.len() != n - 1 {
            return Err(GridError::Model(format!("{} lines for {n} buses; not a tree", edges.len())));
        }
        let mut seen = vec![false; n];
        seen[0] = true;
        let mut queue = std::collections::VecDeque::from([0]);
        let mut lines = Vec::new();
        while let Some(u) = queue.pop_front() {
            for &(a, b, br) in &edges {
                let v = if a == u {
                    b
                } else if b == u {
                    a
                } else {
                    continue;
                };
                if seen[v] {
                    continue;
                }
                seen[v] = true;
                queue.push_back(v);
                let rate = if br.rate_a() > 0.0 { br.rate_a() } else { opts.default_flow_limit_mw };
                lines.push(FeederLine {
                    from: u,
                    to: v,
                    r: br.r(),
                    x: br.x(),
                    current_limit: opts.current_limit,
                    flow_limit: rate / base,
                });
            }
        }
        let f = Self {
            name: case.name.clone(),
            base_mva: base,
            buses,
            lines,
        };
        f.validate()?;
        Ok(f)
    }

    /// Buses `0..n` as one cell each.
    pub fn singleton_grouping(&self) -> Vec<Vec<usize>> {
        (0..self.n_bus()).map(|j| vec![j]).collect()
    }

    pub fn whole_grouping(&self) -> Vec<Vec<usize>> {
        vec![(0..self.n_bus()).collect()]
    }

    /// Returns a copy with loads replaced.
    pub fn with_loads(&self, pd: &[f64], qd: &[f64]) -> Self {
        let mut f = self.clone();
        for (b, (p, q)) in f.buses.iter_mut().zip(pd.iter().zip(qd)) {
            b.pd = *p;
            b.qd = *q;
        }
        f
    }

    fn der_bounds(&self, j: usize) -> (f64, f64, f64, f64) {
        match self.buses[j].der {
            Some(d) => (d.pmin, d.pmax, d.qmin, d.qmax),
            None => (0.0, 0.0, 0.0, 0.0),
        }
    }

    fn add_der(&self, d: &mut AgentDraft, j: usize, p: usize, q: usize) {
        let c = self.buses[j].cost;
        d.square(p, c.alpha_p);
        d.linear(p, c.beta_p);
        d.square(q, c.alpha_q);
        d.linear(q, c.beta_q);
        d.constant(c.constant);
        if let Some(s) = self.buses[j].der.and_then(|d| d.s_max) {
            d.soc(SocSlice::ball(vec![p, q], s));
        }
    }
}

/// Where each bus's and line's quantities live in the agent vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DerLayout {
    /// `(agent, p, q, w)` per bus.
    pub bus: Vec<(usize, usize, usize, usize)>,
    /// `(agent, P, Q, ℓ)` per line.
    pub line: Vec<(usize, usize, usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BusPoint {
    pub p: f64,
    pub q: f64,
    pub w: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinePoint {
    pub p: f64,
    pub q: f64,
    pub l: f64,
}

impl DerLayout {
    pub fn unpack(&self, xs: &[Vector]) -> (Vec<BusPoint>, Vec<LinePoint>) {
        let b = self
            .bus
            .iter()
            .map(|&(a, p, q, w)| BusPoint {
                p: xs[a][p],
                q: xs[a][q],
                w: xs[a][w],
            })
            .collect();
        let l = self
            .line
            .iter()
            .map(|&(a, p, q, l)| LinePoint {
                p: xs[a][p],
                q: xs[a][q],
                l: xs[a][l],
            })
            .collect();
        (b, l)
    }

    /// Inverse of [`unpack`](Self::unpack); `dims` are the agent dimensions.
    pub fn pack(&self, dims: &[usize], buses: &[BusPoint], lines: &[LinePoint]) -> Vec<Vector> {
        let mut xs: Vec<Vector> = dims.iter().map(|&n| Vector::zeros(n)).collect();
        for (&(a, p, q, w), b) in self.bus.iter().zip(buses) {
            xs[a][p] = b.p;
            xs[a][q] = b.q;
            xs[a][w] = b.w;
        }
        for (&(a, p, q, l), v) in self.line.iter().zip(lines) {
            xs[a][p] = v.p;
            xs[a][q] = v.q;
            xs[a][l] = v.l;
        }
        xs
    }
}

fn check_grouping(feeder: &FeederModel, grouping: &[Vec<usize>]) -> Result<Vec<usize>, GridError> {
    let n = feeder.n_bus();
    let mut cell_of = vec![usize::MAX; n];
    for (c, cell) in grouping.iter().enumerate() {
        if cell.is_empty() {
            return Err(GridError::Grouping {
                cell: c,
                reason: "empty".into(),
            });
        }
        for &j in cell {
            if j >= n {
                return Err(GridError::Grouping {
                    cell: c,
                    reason: format!("bus index {j} out of range"),
                });
            }
            if cell_of[j] != usize::MAX {
                return Err(GridError::Grouping {
                    cell: c,
                    reason: format!("bus {} already in cell {}", feeder.buses[j].id, cell_of[j]),
                });
            }
            cell_of[j] = c;
        }
        // a subset of a tree is connected iff it spans |cell| − 1 tree edges
        let inner = feeder.lines.iter().filter(|l| cell.contains(&l.from) && cell.contains(&l.to)).count();
        if inner + 1 != cell.len() {
            return Err(GridError::Grouping {
                cell: c,
                reason: "not a connected subtree".into(),
            });
        }
    }
    if let Some(j) = cell_of.iter().position(|&c| c == usize::MAX) {
        return Err(GridError::Grouping {
            cell: grouping.len(),
            reason: format!("bus {} is not covered", feeder.buses[j].id),
        });
    }
    Ok(cell_of)
}

struct Row {
    terms: Vec<(usize, usize, f64)>,
    /// `(agent, value)`.
    offset: (usize, f64),
}

impl Row {
    fn agents(&self) -> Vec<usize> {
        let mut a: Vec<usize> = self.terms.iter().map(|t| t.0).chain([self.offset.0]).collect();
        a.sort_unstable();
        a.dedup();
        a
    }
}

/// Branch-flow SOCP relaxation with one agent per grouping cell.
pub fn build_der_socp(feeder: &FeederModel, grouping: &[Vec<usize>]) -> Result<ProblemInstance, GridError> {
    build_der_socp_with_layout(feeder, grouping).map(|(p, _)| p)
}

pub fn build_der_socp_with_layout(
    feeder: &FeederModel,
    grouping: &[Vec<usize>],
) -> Result<(ProblemInstance, DerLayout), GridError> {
    feeder.validate()?;
    check_grouping(feeder, grouping)?;
    let mut vars: Vec<Vars> = grouping.iter().map(|_| Vars::default()).collect();
    let mut layout = DerLayout {
        bus: vec![(0, 0, 0, 0); feeder.n_bus()],
        line: vec![(0, 0, 0, 0); feeder.lines.len()],
    };
    for (c, cell) in grouping.iter().enumerate() {
        for &j in cell {
            let v = &mut vars[c];
            let b = &feeder.buses[j];
            let (pl, ph, ql, qh) = feeder.der_bounds(j);
            let p = v.var(format!("p[{}]", b.id), pl, ph);
            let q = v.var(format!("q[{}]", b.id), ql, qh);
            let w = v.var(format!("w[{}]", b.id), b.wmin, b.wmax);
            layout.bus[j] = (c, p, q, w);
            let kids = feeder.child_lines(j);
            let tag = |e: usize| format!("{}-{}", b.id, feeder.buses[feeder.lines[e].to].id);
            let ps: Vec<usize> = kids
                .iter()
                .map(|&e| v.var(format!("P[{}]", tag(e)), -feeder.lines[e].flow_limit, feeder.lines[e].flow_limit))
                .collect();
            let qs: Vec<usize> = kids
                .iter()
                .map(|&e| v.var(format!("Q[{}]", tag(e)), -feeder.lines[e].flow_limit, feeder.lines[e].flow_limit))
                .collect();
            let ls: Vec<usize> = kids
                .iter()
                .map(|&e| v.var(format!("l[{}]", tag(e)), 0.0, feeder.lines[e].current_limit))
                .collect();
            for (k, &e) in kids.iter().enumerate() {
                layout.line[e] = (c, ps[k], qs[k], ls[k]);
            }
        }
    }

    let mut rows = Vec::new();
    for j in 0..feeder.n_bus() {
        let (a, p, q, _) = layout.bus[j];
        let b = &feeder.buses[j];
        let mut rp = Row {
            terms: vec![(a, p, 1.0)],
            offset: (a, -b.pd),
        };
        let mut rq = Row {
            terms: vec![(a, q, 1.0)],
            offset: (a, -b.qd),
        };
        for e in feeder.child_lines(j) {
            let (o, pe, qe, _) = layout.line[e];
            rp.terms.push((o, pe, -1.0));
            rq.terms.push((o, qe, -1.0));
        }
        if let Some(e) = feeder.parent_line(j) {
            let (o, pe, qe, le) = layout.line[e];
            let l = &feeder.lines[e];
            rp.terms.extend([(o, pe, 1.0), (o, le, -l.r)]);
            rq.terms.extend([(o, qe, 1.0), (o, le, -l.x)]);
        }
        rows.push(rp);
        rows.push(rq);
    }
    for (e, l) in feeder.lines.iter().enumerate() {
        let (o, pe, qe, le) = layout.line[e];
        let (_, _, _, wj) = layout.bus[l.from];
        let (k, _, _, wk) = layout.bus[l.to];
        rows.push(Row {
            terms: vec![
                (k, wk, 1.0),
                (o, wj, -1.0),
                (o, pe, 2.0 * l.r),
                (o, qe, 2.0 * l.x),
                (o, le, -(l.r * l.r + l.x * l.x)),
            ],
            offset: (o, 0.0),
        });
    }
    let coupled: Vec<bool> = rows.iter().map(|r| r.agents().len() > 1).collect();
    let m_eq = coupled.iter().filter(|&&c| c).count();

    let mut drafts: Vec<AgentDraft> = vars
        .into_iter()
        .enumerate()
        .map(|(c, v)| {
            let ids: Vec<String> = grouping[c].iter().map(|&j| feeder.buses[j].id.to_string()).collect();
            v.into_agent(format!("cell[{}]", ids.join(",")), m_eq, 0)
        })
        .collect();
    let mut next = 0;
    for (r, row) in rows.iter().enumerate() {
        if coupled[r] {
            for &(a, i, v) in &row.terms {
                drafts[a].coupling_eq(next, &[(i, v)], 0.0);
            }
            drafts[row.offset.0].coupling_eq(next, &[], row.offset.1);
            next += 1;
        } else {
            let a = row.offset.0;
            let terms: Vec<(usize, f64)> = row.terms.iter().map(|&(_, i, v)| (i, v)).collect();
            drafts[a].local_eq(&terms, -row.offset.1);
        }
    }
    for (e, l) in feeder.lines.iter().enumerate() {
        let (o, pe, qe, le) = layout.line[e];
        let (_, _, _, wj) = layout.bus[l.from];
        drafts[o].soc(loss_cone(pe, qe, le, wj));
    }
    for j in 0..feeder.n_bus() {
        let (a, p, q, _) = layout.bus[j];
        feeder.add_der(&mut drafts[a], j, p, q);
    }
    let agents = drafts.into_iter().map(AgentDraft::finish).collect::<Result<Vec<_>, _>>()?;
    let inst = ProblemInstance::new(format!("der-socp:{}", feeder.name), m_eq, 0, agents)?;
    Ok((inst, layout))
}

/// `ℓ w >= P² + Q²` written as `‖(2P, 2Q, ℓ − w)‖ <= ℓ + w`.
pub fn loss_cone(p: usize, q: usize, l: usize, w: usize) -> SocSlice {
    let t = Matrix::from_row_slice(
        4,
        4,
        &[
            2.0, 0.0, 0.0, 0.0, //
            0.0, 2.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, -1.0, //
            0.0, 0.0, 1.0, 1.0,
        ],
    );
    SocSlice {
        indices: vec![p, q, l, w],
        transform: t,
        offset: Vector::zeros(4),
    }
}

/// Violations of the branch-flow model evaluated bus by bus, without any
/// agent decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchFlowResidual {
    pub boxes: f64,
    pub balance: f64,
    pub voltage_drop: f64,
    pub cone: f64,
}

impl BranchFlowResidual {
    pub fn max(&self) -> f64 {
        self.boxes.max(self.balance).max(self.voltage_drop).max(self.cone)
    }
}

impl FeederModel {
    pub fn branch_flow_residual(&self, buses: &[BusPoint], lines: &[LinePoint]) -> BranchFlowResidual {
        let over = |v: f64, lo: f64, hi: f64| (lo - v).max(v - hi).max(0.0);
        let mut boxes: f64 = 0.0;
        let mut cone: f64 = 0.0;
        for (j, b) in buses.iter().enumerate() {
            let (pl, ph, ql, qh) = self.der_bounds(j);
            boxes = boxes
                .max(over(b.p, pl, ph))
                .max(over(b.q, ql, qh))
                .max(over(b.w, self.buses[j].wmin, self.buses[j].wmax));
            if let Some(s) = self.buses[j].der.and_then(|d| d.s_max) {
                cone = cone.max((b.p.hypot(b.q) - s).max(0.0));
            }
        }
        for (e, l) in self.lines.iter().enumerate() {
            let v = lines[e];
            boxes = boxes
                .max(over(v.p, -l.flow_limit, l.flow_limit))
                .max(over(v.q, -l.flow_limit, l.flow_limit))
                .max(over(v.l, 0.0, l.current_limit));
            // ℓ w >= P² + Q² with ℓ, w >= 0, in the scaled form used above
            let lhs = (2.0 * v.p).hypot(2.0 * v.q).hypot(v.l - buses[l.from].w);
            cone = cone.max((lhs - (v.l + buses[l.from].w)).max(0.0));
        }
        let mut balance: f64 = 0.0;
        for j in 0..self.n_bus() {
            let b = &self.buses[j];
            let mut sp = buses[j].p - b.pd;
            let mut sq = buses[j].q - b.qd;
            for e in self.child_lines(j) {
                sp -= lines[e].p;
                sq -= lines[e].q;
            }
            if let Some(e) = self.parent_line(j) {
                sp += lines[e].p - self.lines[e].r * lines[e].l;
                sq += lines[e].q - self.lines[e].x * lines[e].l;
            }
            balance = balance.max(sp.abs()).max(sq.abs());
        }
        let mut voltage_drop: f64 = 0.0;
        for (e, l) in self.lines.iter().enumerate() {
            let v = lines[e];
            let rhs = buses[l.from].w - 2.0 * (l.r * v.p + l.x * v.q) + (l.r * l.r + l.x * l.x) * v.l;
            voltage_drop = voltage_drop.max((buses[l.to].w - rhs).abs());
        }
        BranchFlowResidual {
            boxes,
            balance,
            voltage_drop,
            cone,
        }
    }

    /// Largest `ℓw − (P² + Q²)` over lines, relative to the largest `ℓw`.
    /// Zero means the relaxation is tight at this point.
    pub fn relaxation_gap(&self, buses: &[BusPoint], lines: &[LinePoint]) -> f64 {
        let mut gap: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for (e, l) in self.lines.iter().enumerate() {
            let v = lines[e];
            let lw = v.l * buses[l.from].w;
            gap = gap.max(lw - (v.p * v.p + v.q * v.q));
            scale = scale.max(lw.abs());
        }
        if scale > 0.0 {
            gap / scale
        } else {
            gap
        }
    }
}

/// Voltage sensitivities of the linearised model over the non-root buses.
#[derive(Debug, Clone, PartialEq)]
pub struct LinDistFlowMatrices {
    pub rho: Matrix,
    pub chi: Matrix,
    /// Reduced incidence: rows are non-root buses, columns are lines,
    /// `+1` at the sending end and `−1` at the receiving end.
    pub m: Matrix,
}

pub fn lindistflow_matrices(feeder: &FeederModel) -> Result<LinDistFlowMatrices, GridError> {
    feeder.validate()?;
    let n = feeder.n_bus();
    let e = feeder.lines.len();
    let mut full = Matrix::zeros(n, e);
    for (k, l) in feeder.lines.iter().enumerate() {
        full[(l.from, k)] = 1.0;
        full[(l.to, k)] = -1.0;
    }
    let m = full.rows(1, n - 1).into_owned();
    let minv = m
        .clone()
        .try_inverse()
        .ok_or_else(|| GridError::Model("reduced incidence matrix is singular".into()))?;
    let r = Matrix::from_diagonal(&Vector::from_iterator(e, feeder.lines.iter().map(|l| l.r)));
    let x = Matrix::from_diagonal(&Vector::from_iterator(e, feeder.lines.iter().map(|l| l.x)));
    let rho = minv.transpose() * r * &minv * 2.0;
    let chi = minv.transpose() * x * &minv * 2.0;
    Ok(LinDistFlowMatrices {
        rho: dualgrid_core::linalg::symmetrize(&rho),
        chi: dualgrid_core::linalg::symmetrize(&chi),
        m,
    })
}

/// `2 Σ r_e` over lines shared by the root paths of buses `j` and `k`,
/// for every pair of non-root buses.
pub fn common_path_matrix(feeder: &FeederModel, value: impl Fn(&FeederLine) -> f64) -> Matrix {
    let n = feeder.n_bus();
    let paths: Vec<Vec<usize>> = (1..n).map(|j| feeder.path_lines(j)).collect();
    Matrix::from_fn(n - 1, n - 1, |a, b| {
        2.0 * paths[a]
            .iter()
            .filter(|e| paths[b].contains(e))
            .map(|&e| value(&feeder.lines[e]))
            .sum::<f64>()
    })
}

/// Single-agent LinDistFlow dispatch with the same buses, DERs and costs:
/// `x = (p^G, q^G, w_root)`, lossless balance, voltage box at every bus.
/// Line limits are not modelled.
pub fn build_der_lindistflow(feeder: &FeederModel) -> Result<ProblemInstance, GridError> {
    let mats = lindistflow_matrices(feeder)?;
    let n = feeder.n_bus();
    let mut v = Vars::default();
    let mut pv = Vec::new();
    let mut qv = Vec::new();
    for j in 0..n {
        let (pl, ph, ql, qh) = feeder.der_bounds(j);
        pv.push(v.var(format!("p[{}]", feeder.buses[j].id), pl, ph));
        qv.push(v.var(format!("q[{}]", feeder.buses[j].id), ql, qh));
    }
    let root = &feeder.buses[0];
    let w0 = v.var(format!("w[{}]", root.id), root.wmin, root.wmax);
    let mut d = v.into_agent(format!("lindistflow:{}", feeder.name), 0, 0);
    let pd: f64 = feeder.buses.iter().map(|b| b.pd).sum();
    let qd: f64 = feeder.buses.iter().map(|b| b.qd).sum();
    d.local_eq(&pv.iter().map(|&i| (i, 1.0)).collect::<Vec<_>>(), pd);
    d.local_eq(&qv.iter().map(|&i| (i, 1.0)).collect::<Vec<_>>(), qd);
    for a in 1..n {
        // w_a = w0 + Σ ρ (p^G − p^D) + χ (q^G − q^D)
        let mut terms = vec![(w0, 1.0)];
        let mut shift = 0.0;
        for b in 1..n {
            let (r, c) = (mats.rho[(a - 1, b - 1)], mats.chi[(a - 1, b - 1)]);
            terms.push((pv[b], r));
            terms.push((qv[b], c));
            shift += r * feeder.buses[b].pd + c * feeder.buses[b].qd;
        }
        let neg: Vec<(usize, f64)> = terms.iter().map(|&(i, x)| (i, -x)).collect();
        d.local_le(&terms, feeder.buses[a].wmax + shift);
        d.local_le(&neg, -feeder.buses[a].wmin - shift);
    }
    for j in 0..n {
        feeder.add_der(&mut d, j, pv[j], qv[j]);
    }
    Ok(ProblemInstance::new(format!("der-lindistflow:{}", feeder.name), 0, 0, vec![d.finish()?])?)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::fixtures;
    use crate::matpower::parse_case;
    use dualgrid_core::oracle::{oracle_solve, OracleSettings};

    pub(crate) fn feeder4() -> FeederModel {
        FeederModel::from_case(&parse_case(fixtures::FEEDER4).unwrap(), &FeederOptions::default()).unwrap()
    }

    pub(crate) fn feeder3() -> FeederModel {
        FeederModel::from_case(&parse_case(fixtures::FEEDER3).unwrap(), &FeederOptions::default()).unwrap()
    }

    fn bus(id: usize, pd: f64, der: Option<Der>, beta: f64) -> FeederBus {
        FeederBus {
            id,
            pd,
            qd: 0.0,
            wmin: 0.81,
            wmax: 1.21,
            der,
            cost: BusCost {
                beta_p: beta,
                ..BusCost::default()
            },
        }
    }

    pub(crate) fn path_feeder(r: &[f64]) -> FeederModel {
        let n = r.len() + 1;
        FeederModel {
            name: "path".into(),
            base_mva: 1.0,
            buses: (0..n).map(|j| bus(j + 1, 0.0, None, 0.0)).collect(),
            lines: r
                .iter()
                .enumerate()
                .map(|(k, &r)| FeederLine {
                    from: k,
                    to: k + 1,
                    r,
                    x: r / 2.0,
                    current_limit: 10.0,
                    flow_limit: 1.0,
                })
                .collect(),
        }
    }

    #[test]
    fn lossless_two_bus_dispatch() {
        let big = Der {
            pmin: -5.0,
            pmax: 5.0,
            qmin: -5.0,
            qmax: 5.0,
            s_max: None,
        };
        let small = Der {
            pmin: 0.0,
            pmax: 1.0,
            qmin: -1.0,
            qmax: 1.0,
            s_max: None,
        };
        let f = FeederModel {
            name: "two".into(),
            base_mva: 1.0,
            buses: vec![bus(1, 0.0, Some(big), 30.0), bus(2, 1.0, Some(small), 18.0)],
            lines: vec![FeederLine {
                from: 0,
                to: 1,
                r: 0.0,
                x: 0.0,
                current_limit: 200.0,
                flow_limit: 1.0,
            }],
        };
        for g in [f.singleton_grouping(), f.whole_grouping()] {
            let p = build_der_socp(&f, &g).unwrap();
            let o = oracle_solve(&p, &OracleSettings::default());
            assert!(o.is_optimal(), "{:?}", o.status);
            assert!((o.value - 18.0).abs() < 1e-6, "{}", o.value);
        }
    }

    #[test]
    fn agent_and_row_counts() {
        let f = feeder4();
        assert_eq!(f.n_bus(), 4);
        let p = build_der_socp(&f, &f.singleton_grouping()).unwrap();
        assert_eq!(p.n_agents(), 4);
        // two balance rows per bus except the root, plus one voltage row per line
        assert_eq!(p.m_eq, 2 * 3 + 3);
        assert_eq!(p.m_ineq, 0);
        let whole = build_der_socp(&f, &f.whole_grouping()).unwrap();
        assert_eq!(whole.m_eq, 0);
        let pair = build_der_socp(&f, &[vec![0, 1], vec![2, 3]]).unwrap();
        assert_eq!(pair.m_eq, 3);
    }

    #[test]
    fn costs_follow_the_case_tables() {
        let f = feeder4();
        let ap: Vec<f64> = f.buses.iter().map(|b| b.cost.alpha_p).collect();
        let bp: Vec<f64> = f.buses.iter().map(|b| b.cost.beta_p).collect();
        let aq: Vec<f64> = f.buses.iter().map(|b| b.cost.alpha_q).collect();
        assert_eq!(ap, vec![0.0, 6.0, 7.0, 8.0]);
        assert_eq!(bp, vec![30.0, 19.0, 18.0, 17.0]);
        assert_eq!(aq, vec![5.0, 5.1, 5.2, 5.3]);
    }

    #[test]
    fn bad_groupings() {
        let f = feeder4();
        for g in [vec![vec![0, 2], vec![1, 3]], vec![vec![0, 1, 2]], vec![vec![0, 1], vec![1, 2, 3]]] {
            assert!(matches!(build_der_socp(&f, &g), Err(GridError::Grouping { .. })), "{g:?}");
        }
    }

    #[test]
    fn groupings_agree_on_the_optimum() {
        let f = feeder4();
        let vals: Vec<f64> = [f.singleton_grouping(), vec![vec![0, 1], vec![2, 3]], f.whole_grouping()]
            .iter()
            .map(|g| oracle_solve(&build_der_socp(&f, g).unwrap(), &OracleSettings::default()).value)
            .collect();
        for v in &vals[1..] {
            assert!((v - vals[0]).abs() <= 1e-6 * vals[0].abs().max(1.0), "{vals:?}");
        }
    }

    #[test]
    fn relaxation_is_tight_at_the_optimum() {
        for f in [feeder4(), feeder3()] {
            let (p, lay) = build_der_socp_with_layout(&f, &f.singleton_grouping()).unwrap();
            let o = oracle_solve(&p, &OracleSettings::default());
            assert!(o.is_optimal());
            let (b, l) = lay.unpack(&o.x);
            assert!(f.branch_flow_residual(&b, &l).max() <= 1e-6);
            let gap = f.relaxation_gap(&b, &l);
            assert!(gap <= 1e-5, "{}: {gap}", f.name);
        }
    }

    #[test]
    fn socp_costs_at_least_lindistflow() {
        let f = feeder3();
        let s = oracle_solve(&build_der_socp(&f, &f.whole_grouping()).unwrap(), &OracleSettings::default());
        let l = oracle_solve(&build_der_lindistflow(&f).unwrap(), &OracleSettings::default());
        assert!(s.is_optimal() && l.is_optimal());
        assert!(s.value >= l.value, "{} < {}", s.value, l.value);
    }

    #[test]
    fn rho_examples() {
        let m = lindistflow_matrices(&path_feeder(&[0.1, 0.2])).unwrap();
        let want = Matrix::from_row_slice(2, 2, &[0.2, 0.2, 0.2, 0.6]);
        assert!((&m.rho - want).amax() < 1e-12);
        let one = lindistflow_matrices(&path_feeder(&[0.3])).unwrap();
        assert!((one.rho[(0, 0)] - 0.6).abs() < 1e-15);
        let mut star = path_feeder(&[0.1, 0.4]);
        star.lines[1].from = 0;
        let s = lindistflow_matrices(&star).unwrap();
        assert!((&s.rho - Matrix::from_diagonal(&Vector::from_vec(vec![0.2, 0.8]))).amax() < 1e-15);
    }

    #[test]
    fn disc_option_bounds_apparent_power() {
        let mut opts = FeederOptions::default();
        opts.der_disc = true;
        let f = FeederModel::from_case(&parse_case(fixtures::FEEDER4).unwrap(), &opts).unwrap();
        let p = build_der_socp(&f, &f.singleton_grouping()).unwrap();
        assert_eq!(p.agents[1].local_set.soc.len(), 2);
        let o = oracle_solve(&p, &OracleSettings::default());
        assert!(o.is_optimal());
        for (a, x) in o.x.iter().enumerate().skip(1) {
            assert!(x[0].hypot(x[1]) <= f.buses[a].der.unwrap().pmax + 1e-6);
        }
    }
}

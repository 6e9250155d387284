//! Joint transmission-distribution dispatch: an SDP relaxation for the
//! transmission network run by the system operator, LinDistFlow feeders run
//! by one aggregator per transmission bus.

use dualgrid_core::problem::{PsdLayout, PsdSlice};
use dualgrid_core::{Matrix, ProblemInstance, Vector};
use nalgebra::{Complex, DMatrix};

use crate::assemble::{AgentDraft, Vars};
use crate::feeder::{lindistflow_matrices, BusCost, Der, FeederModel, LinDistFlowMatrices};
use crate::matpower::CaseData;
use crate::GridError;

pub type CMatrix = DMatrix<Complex<f64>>;

const I: Complex<f64> = Complex { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, PartialEq)]
pub struct TransLine {
    pub from: usize,
    pub to: usize,
    /// Series admittance.
    pub y: Complex<f64>,
    /// Bound on the real power entering the line, either direction.
    pub flow_limit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransBus {
    pub id: usize,
    pub pd: f64,
    pub qd: f64,
    pub wmin: f64,
    pub wmax: f64,
    pub shunt: Complex<f64>,
    pub gen: Option<Der>,
    pub cost: BusCost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionModel {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<TransBus>,
    pub lines: Vec<TransLine>,
}

impl TransmissionModel {
    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let n = self.n_bus();
        if n == 0 {
            return Err(GridError::Model("transmission network has no buses".into()));
        }
        for (k, l) in self.lines.iter().enumerate() {
            if l.from >= n || l.to >= n || l.from == l.to {
                return Err(GridError::Model(format!("transmission line {k} has bad endpoints")));
            }
            if !(l.flow_limit >= 0.0) || !l.flow_limit.is_finite() {
                return Err(GridError::Model(format!("transmission line {k} needs a finite flow limit")));
            }
        }
        for b in &self.buses {
            if !(0.0 <= b.wmin && b.wmin <= b.wmax) || !b.wmax.is_finite() {
                return Err(GridError::Model(format!("bus {} has an empty voltage box", b.id)));
            }
        }
        Ok(())
    }

    /// Series admittance `1/(r + jx)`; line charging and bus shunts go to
    /// the shunt terms. Lines without a positive `rateA` are rejected since
    /// every variable needs a bounded box.
    pub fn from_case(case: &CaseData) -> Result<Self, GridError> {
        let base = case.base_mva;
        let mut buses: Vec<TransBus> = case
            .bus
            .iter()
            .map(|b| TransBus {
                id: b.id(),
                pd: b.pd() / base,
                qd: b.qd() / base,
                wmin: b.vmin() * b.vmin(),
                wmax: b.vmax() * b.vmax(),
                shunt: Complex::new(b.gs(), b.bs()) / base,
                gen: None,
                cost: BusCost::default(),
            })
            .collect();
        let mut lines = Vec::new();
        for br in case.branch.iter().filter(|b| b.in_service()) {
            let (f, t) = (case.bus_index(br.from()).unwrap(), case.bus_index(br.to()).unwrap());
            let z = Complex::new(br.r(), br.x());
            if z.norm() == 0.0 {
                return Err(GridError::Model(format!("branch {}-{} has zero impedance", br.from(), br.to())));
            }
            if !(br.rate_a() > 0.0) {
                return Err(GridError::Model(format!("branch {}-{} needs a positive rateA", br.from(), br.to())));
            }
            let charging = I * (br.b() / 2.0);
            buses[f].shunt += charging;
            buses[t].shunt += charging;
            lines.push(TransLine {
                from: f,
                to: t,
                y: z.inv(),
                flow_limit: br.rate_a() / base,
            });
        }
        for (g, row) in case.gen.iter().enumerate() {
            if !row.in_service() {
                continue;
            }
            let k = case.bus_index(row.bus()).unwrap();
            if buses[k].gen.is_some() {
                return Err(GridError::Model(format!("bus {} holds more than one unit", row.bus())));
            }
            buses[k].gen = Some(Der {
                pmin: row.pmin() / base,
                pmax: row.pmax() / base,
                qmin: row.qmin() / base,
                qmax: row.qmax() / base,
                s_max: None,
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
        let m = Self {
            name: case.name.clone(),
            base_mva: base,
            buses,
            lines,
        };
        m.validate()?;
        Ok(m)
    }
}

/// Hermitian matrices giving line flows and bus injections as `Tr(Φ W)`
/// (real power) and `Tr(Ψ W)` (reactive power) with `W = V Vᴴ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiPsi {
    /// `(ℓ, k, Φ_ℓk, Ψ_ℓk)` for each line in both directions.
    pub directed: Vec<(usize, usize, CMatrix, CMatrix)>,
    pub phi: Vec<CMatrix>,
    pub psi: Vec<CMatrix>,
}

fn line_pair(n: usize, l: usize, k: usize, y: Complex<f64>) -> (CMatrix, CMatrix) {
    let mut phi = CMatrix::zeros(n, n);
    let mut psi = CMatrix::zeros(n, n);
    phi[(l, l)] = (y + y.conj()) * 0.5;
    phi[(l, k)] = -y * 0.5;
    phi[(k, l)] = -y.conj() * 0.5;
    psi[(l, l)] = (y.conj() - y) / (I * 2.0);
    psi[(l, k)] = y / (I * 2.0);
    psi[(k, l)] = (y / (I * 2.0)).conj();
    (phi, psi)
}

pub fn phi_psi_matrices(tm: &TransmissionModel) -> PhiPsi {
    let n = tm.n_bus();
    let mut directed = Vec::new();
    let mut phi: Vec<CMatrix> = (0..n).map(|_| CMatrix::zeros(n, n)).collect();
    let mut psi = phi.clone();
    for (l, b) in tm.buses.iter().enumerate() {
        let y = b.shunt;
        phi[l][(l, l)] += (y + y.conj()) * 0.5;
        psi[l][(l, l)] += (y.conj() - y) / (I * 2.0);
    }
    for line in &tm.lines {
        for (a, b) in [(line.from, line.to), (line.to, line.from)] {
            let (f, s) = line_pair(n, a, b, line.y);
            phi[a] += &f;
            psi[a] += &s;
            directed.push((a, b, f, s));
        }
    }
    PhiPsi { directed, phi, psi }
}

/// Coefficients of `Tr(φ W)` against `(vec Re W, vec Im W)`, row-major.
pub fn trace_coefficients(phi: &CMatrix) -> Vec<f64> {
    let n = phi.nrows();
    let mut c = vec![0.0; 2 * n * n];
    for a in 0..n {
        for b in 0..n {
            c[a * n + b] = phi[(a, b)].re;
            c[n * n + a * n + b] = phi[(a, b)].im;
        }
    }
    c
}

/// `Tr(φ W)` for Hermitian `φ`, `W`; the imaginary part vanishes.
pub fn trace_product(phi: &CMatrix, w: &CMatrix) -> f64 {
    (phi * w).trace().re
}

/// Where quantities live in the T&D agent vectors. Agents `0..n` are the
/// aggregators, agent `n` is the system operator.
#[derive(Debug, Clone, PartialEq)]
pub struct TdLayout {
    pub n_tran: usize,
    /// Per aggregator: indices of `p`, `q` per non-root feeder bus, and of the
    /// voltage copy.
    pub agg: Vec<(Vec<usize>, Vec<usize>, usize)>,
    /// SO indices of `P^G`, `Q^G`, first `Re W` entry, first `Im W` entry.
    pub so_pg: usize,
    pub so_qg: usize,
    pub so_re: usize,
    pub so_im: usize,
}

impl TdLayout {
    pub fn gram(&self, so: &Vector) -> CMatrix {
        let n = self.n_tran;
        CMatrix::from_fn(n, n, |a, b| Complex::new(so[self.so_re + a * n + b], so[self.so_im + a * n + b]))
    }

    /// The real embedding `[[Re W, Im W], [−Im W, Re W]]` at the SO iterate.
    pub fn real_embedding(&self, so: &Vector) -> Matrix {
        let n = self.n_tran;
        let vals: Vec<f64> = (0..2 * n * n).map(|i| so[self.so_re + i]).collect();
        dualgrid_core::problem::embed_psd_coordinates(&PsdLayout::HermitianEmbedding { order: n }, &vals)
    }
}

fn agg_cost(d: &mut AgentDraft, p: usize, q: usize, pd: f64, qd: f64, c: &BusCost) {
    // c(p + pd) expanded in the net injection p
    d.square(p, c.alpha_p);
    d.linear(p, 2.0 * c.alpha_p * pd + c.beta_p);
    d.square(q, c.alpha_q);
    d.linear(q, 2.0 * c.alpha_q * qd + c.beta_q);
    d.constant(c.alpha_p * pd * pd + c.beta_p * pd + c.alpha_q * qd * qd + c.beta_q * qd + c.constant);
}

pub fn build_td(tm: &TransmissionModel, feeders: &[FeederModel]) -> Result<ProblemInstance, GridError> {
    build_td_with_layout(tm, feeders).map(|(p, _)| p)
}

pub fn build_td_with_layout(
    tm: &TransmissionModel,
    feeders: &[FeederModel],
) -> Result<(ProblemInstance, TdLayout), GridError> {
    tm.validate()?;
    let n = tm.n_bus();
    if feeders.len() != n {
        return Err(GridError::Model(format!("{} feeders for {n} transmission buses", feeders.len())));
    }
    let mats: Vec<LinDistFlowMatrices> = feeders.iter().map(lindistflow_matrices).collect::<Result<_, _>>()?;
    let m_eq = 3 * n;
    let mut agents = Vec::with_capacity(n + 1);
    let mut agg_layout = Vec::with_capacity(n);
    for (l, (f, m)) in feeders.iter().zip(&mats).enumerate() {
        let mut v = Vars::default();
        let nd = f.n_bus() - 1;
        let bounds = |j: usize| match f.buses[j].der {
            Some(d) => (d.pmin, d.pmax, d.qmin, d.qmax),
            None => (0.0, 0.0, 0.0, 0.0),
        };
        let mut pv = Vec::with_capacity(nd);
        let mut qv = Vec::with_capacity(nd);
        for j in 1..=nd {
            let (pl, ph, _, _) = bounds(j);
            let b = &f.buses[j];
            pv.push(v.var(format!("p[{}]", b.id), pl - b.pd, ph - b.pd));
        }
        for j in 1..=nd {
            let (_, _, ql, qh) = bounds(j);
            let b = &f.buses[j];
            qv.push(v.var(format!("q[{}]", b.id), ql - b.qd, qh - b.qd));
        }
        let tb = &tm.buses[l];
        let wc = v.var(format!("W[{0},{0}]", tb.id), tb.wmin, tb.wmax);
        let mut d = v.into_agent(format!("aggregator[{}]", tb.id), m_eq, 0);
        for a in 0..nd {
            let mut terms = vec![(wc, 1.0)];
            for b in 0..nd {
                terms.push((pv[b], m.rho[(a, b)]));
                terms.push((qv[b], m.chi[(a, b)]));
            }
            let neg: Vec<(usize, f64)> = terms.iter().map(|&(i, x)| (i, -x)).collect();
            d.local_le(&terms, f.buses[a + 1].wmax);
            d.local_le(&neg, -f.buses[a + 1].wmin);
        }
        for j in 1..=nd {
            let b = &f.buses[j];
            if let Some(s) = b.der.and_then(|d| d.s_max) {
                // disc on generation, shifted by the demand
                let mut slice = dualgrid_core::problem::SocSlice::ball(vec![pv[j - 1], qv[j - 1]], s);
                slice.offset[0] = b.pd;
                slice.offset[1] = b.qd;
                d.soc(slice);
            }
            agg_cost(&mut d, pv[j - 1], qv[j - 1], b.pd, b.qd, &b.cost);
        }
        let sum_p: Vec<(usize, f64)> = pv.iter().map(|&i| (i, 1.0)).collect();
        let sum_q: Vec<(usize, f64)> = qv.iter().map(|&i| (i, 1.0)).collect();
        d.coupling_eq(l, &sum_p, 0.0);
        d.coupling_eq(n + l, &sum_q, 0.0);
        d.coupling_eq(2 * n + l, &[(wc, 1.0)], 0.0);
        agents.push(d.finish()?);
        agg_layout.push((pv, qv, wc));
    }

    // system operator
    let pp = phi_psi_matrices(tm);
    let mut v = Vars::default();
    let gb = |b: &TransBus| b.gen.map_or((0.0, 0.0, 0.0, 0.0), |g| (g.pmin, g.pmax, g.qmin, g.qmax));
    let so_pg = v.len();
    for b in &tm.buses {
        v.var(format!("PG[{}]", b.id), gb(b).0, gb(b).1);
    }
    let so_qg = v.len();
    for b in &tm.buses {
        v.var(format!("QG[{}]", b.id), gb(b).2, gb(b).3);
    }
    let bound = |a: usize, b: usize| (tm.buses[a].wmax * tm.buses[b].wmax).sqrt();
    let so_re = v.len();
    for a in 0..n {
        for b in 0..n {
            let (id_a, id_b) = (tm.buses[a].id, tm.buses[b].id);
            if a == b {
                v.var(format!("ReW[{id_a},{id_b}]"), tm.buses[a].wmin, tm.buses[a].wmax);
            } else {
                v.var(format!("ReW[{id_a},{id_b}]"), -bound(a, b), bound(a, b));
            }
        }
    }
    let so_im = v.len();
    for a in 0..n {
        for b in 0..n {
            let (id_a, id_b) = (tm.buses[a].id, tm.buses[b].id);
            let r = if a == b { 0.0 } else { bound(a, b) };
            v.var(format!("ImW[{id_a},{id_b}]"), -r, r);
        }
    }
    let mut d = v.into_agent("system-operator", m_eq, 0);
    for a in 0..n {
        for b in a + 1..n {
            d.local_eq(&[(so_re + a * n + b, 1.0), (so_re + b * n + a, -1.0)], 0.0);
            d.local_eq(&[(so_im + a * n + b, 1.0), (so_im + b * n + a, 1.0)], 0.0);
        }
    }
    d.psd(PsdSlice {
        indices: (so_re..so_re + 2 * n * n).collect(),
        layout: PsdLayout::HermitianEmbedding { order: n },
    });
    let tr_terms = |phi: &CMatrix, sign: f64| -> Vec<(usize, f64)> {
        trace_coefficients(phi)
            .into_iter()
            .enumerate()
            .filter(|(_, c)| *c != 0.0)
            .map(|(i, c)| (so_re + i, sign * c))
            .collect()
    };
    for (k, line) in pp.directed.iter().enumerate() {
        let limit = tm.lines[k / 2].flow_limit;
        d.local_le(&tr_terms(&line.2, 1.0), limit);
    }
    for (l, b) in tm.buses.iter().enumerate() {
        let mut tp = tr_terms(&pp.phi[l], -1.0);
        tp.push((so_pg + l, 1.0));
        d.coupling_eq(l, &tp, -b.pd);
        let mut tq = tr_terms(&pp.psi[l], -1.0);
        tq.push((so_qg + l, 1.0));
        d.coupling_eq(n + l, &tq, -b.qd);
        d.coupling_eq(2 * n + l, &[(so_re + l * n + l, -1.0)], 0.0);
        let c = b.cost;
        d.square(so_pg + l, c.alpha_p);
        d.linear(so_pg + l, c.beta_p);
        d.square(so_qg + l, c.alpha_q);
        d.linear(so_qg + l, c.beta_q);
        d.constant(c.constant);
    }
    agents.push(d.finish()?);
    let layout = TdLayout {
        n_tran: n,
        agg: agg_layout,
        so_pg,
        so_qg,
        so_re,
        so_im,
    };
    Ok((ProblemInstance::new(format!("td:{}", tm.name), m_eq, 0, agents)?, layout))
}

/// Direct evaluation of the joint dispatch constraints, in complex form and
/// without reference to the agent split. Returns the largest violation.
pub fn td_violation(tm: &TransmissionModel, feeders: &[FeederModel], layout: &TdLayout, xs: &[Vector]) -> f64 {
    let n = tm.n_bus();
    let so = &xs[n];
    let w = layout.gram(so);
    let over = |v: f64, lo: f64, hi: f64| (lo - v).max(v - hi).max(0.0);
    let mut viol: f64 = 0.0;
    // Hermitian and PSD
    viol = viol.max((&w - w.adjoint()).iter().map(|c| c.norm()).fold(0.0, f64::max));
    let emb = layout.real_embedding(so);
    viol = viol.max((-dualgrid_core::linalg::jacobi_eigen(&emb).min_value()).max(0.0));
    let pp = phi_psi_matrices(tm);
    for (k, (_, _, phi, _)) in pp.directed.iter().enumerate() {
        viol = viol.max((trace_product(phi, &w) - tm.lines[k / 2].flow_limit).max(0.0));
    }
    for (l, b) in tm.buses.iter().enumerate() {
        let (pg, qg) = (so[layout.so_pg + l], so[layout.so_qg + l]);
        let g = b.gen.unwrap_or(Der {
            pmin: 0.0,
            pmax: 0.0,
            qmin: 0.0,
            qmax: 0.0,
            s_max: None,
        });
        viol = viol.max(over(pg, g.pmin, g.pmax)).max(over(qg, g.qmin, g.qmax));
        viol = viol.max(over(w[(l, l)].re, b.wmin, b.wmax));
        let (pv, qv, wc) = &layout.agg[l];
        let x = &xs[l];
        let f = &feeders[l];
        let p: Vec<f64> = pv.iter().map(|&i| x[i]).collect();
        let q: Vec<f64> = qv.iter().map(|&i| x[i]).collect();
        let sp: f64 = p.iter().sum();
        let sq: f64 = q.iter().sum();
        viol = viol.max((pg - b.pd + sp - trace_product(&pp.phi[l], &w)).abs());
        viol = viol.max((qg - b.qd + sq - trace_product(&pp.psi[l], &w)).abs());
        viol = viol.max((x[*wc] - w[(l, l)].re).abs());
        viol = viol.max(over(x[*wc], b.wmin, b.wmax));
        // feeder: generation boxes and LinDistFlow voltages via common paths
        let rho = crate::feeder::common_path_matrix(f, |e| e.r);
        let chi = crate::feeder::common_path_matrix(f, |e| e.x);
        for j in 1..f.n_bus() {
            let fb = &f.buses[j];
            let dd = fb.der.unwrap_or(Der {
                pmin: 0.0,
                pmax: 0.0,
                qmin: 0.0,
                qmax: 0.0,
                s_max: None,
            });
            let (gp, gq) = (p[j - 1] + fb.pd, q[j - 1] + fb.qd);
            viol = viol.max(over(gp, dd.pmin, dd.pmax)).max(over(gq, dd.qmin, dd.qmax));
            if let Some(s) = dd.s_max {
                viol = viol.max((gp.hypot(gq) - s).max(0.0));
            }
            let vj: f64 = x[*wc]
                + (0..f.n_bus() - 1)
                    .map(|k| rho[(j - 1, k)] * p[k] + chi[(j - 1, k)] * q[k])
                    .sum::<f64>();
            viol = viol.max(over(vj, fb.wmin, fb.wmax));
        }
    }
    viol
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feeder::{FeederBus, FeederLine};
    use dualgrid_core::oracle::{oracle_solve, OracleSettings};
    use proptest::prelude::*;

    fn one_line(y: Complex<f64>) -> TransmissionModel {
        let bus = |id| TransBus {
            id,
            pd: 0.0,
            qd: 0.0,
            wmin: 0.9,
            wmax: 1.1,
            shunt: Complex::new(0.0, 0.0),
            gen: None,
            cost: BusCost::default(),
        };
        TransmissionModel {
            name: "pair".into(),
            base_mva: 1.0,
            buses: vec![bus(1), bus(2)],
            lines: vec![TransLine {
                from: 0,
                to: 1,
                y,
                flow_limit: 1.0,
            }],
        }
    }

    #[test]
    fn real_admittance_by_hand() {
        let pp = phi_psi_matrices(&one_line(Complex::new(2.0, 0.0)));
        let (_, _, phi, psi) = &pp.directed[0];
        assert_eq!(phi[(0, 0)], Complex::new(2.0, 0.0));
        assert_eq!(phi[(0, 1)], Complex::new(-1.0, 0.0));
        // conductance alone still carries reactive power through angle differences
        assert_eq!(psi[(0, 0)].norm(), 0.0);
        assert!((psi[(0, 1)] - Complex::new(0.0, -1.0)).norm() < 1e-15);
        assert!((psi[(1, 0)] - Complex::new(0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn imaginary_admittance_by_hand() {
        let pp = phi_psi_matrices(&one_line(I));
        let (_, _, phi, psi) = &pp.directed[0];
        assert_eq!(phi[(0, 0)].norm(), 0.0);
        assert!((psi[(0, 0)] - Complex::new(-1.0, 0.0)).norm() < 1e-15);
    }

    fn random_network(seed: u64) -> TransmissionModel {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..6);
        let mut tm = one_line(I);
        tm.buses = (0..n)
            .map(|i| TransBus {
                id: i + 1,
                pd: 0.0,
                qd: 0.0,
                wmin: 0.9,
                wmax: 1.1,
                shunt: Complex::new(rng.random_range(0.0..0.1), rng.random_range(-0.2..0.2)),
                gen: None,
                cost: BusCost::default(),
            })
            .collect();
        tm.lines = (1..n)
            .map(|k| TransLine {
                from: rng.random_range(0..k),
                to: k,
                y: Complex::new(rng.random_range(0.5..3.0), rng.random_range(-8.0..-1.0)),
                flow_limit: 1.0,
            })
            .collect();
        tm
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn injection_identity(seed in 0u64..10_000, vr in proptest::collection::vec(-1.0f64..1.0, 10)) {
            let tm = random_network(seed);
            let n = tm.n_bus();
            let v: Vec<Complex<f64>> = (0..n).map(|i| Complex::new(1.0 + 0.1 * vr[i], 0.1 * vr[5 + i % 5])).collect();
            let vv = nalgebra::DVector::from_vec(v.clone());
            let w = &vv * vv.adjoint();
            let pp = phi_psi_matrices(&tm);
            for l in 0..n {
                // textbook: S_ℓ = V_ℓ conj(I_ℓ) with I_ℓ = y_ℓℓ V_ℓ + Σ y (V_ℓ − V_k)
                let mut cur = tm.buses[l].shunt * v[l];
                for line in &tm.lines {
                    if line.from == l {
                        cur += line.y * (v[l] - v[line.to]);
                    } else if line.to == l {
                        cur += line.y * (v[l] - v[line.from]);
                    }
                }
                let s = v[l] * cur.conj();
                let got = Complex::new(trace_product(&pp.phi[l], &w), trace_product(&pp.psi[l], &w));
                prop_assert!((got - s).norm() < 1e-10);
                prop_assert!((&pp.phi[l] - pp.phi[l].adjoint()).iter().all(|c| c.norm() < 1e-12));
                prop_assert!((&pp.psi[l] - pp.psi[l].adjoint()).iter().all(|c| c.norm() < 1e-12));
                // real-vector form of the trace
                let c = trace_coefficients(&pp.phi[l]);
                let x: Vec<f64> = w.iter().map(|_| 0.0).collect::<Vec<_>>();
                let _ = x;
                let lin: f64 = (0..n * n).map(|i| c[i] * w[(i / n, i % n)].re + c[n * n + i] * w[(i / n, i % n)].im).sum();
                prop_assert!((lin - got.re).abs() < 1e-10);
            }
            // line flows sum to the bus injection minus the shunt term
            for l in 0..n {
                let sum: f64 = pp.directed.iter().filter(|d| d.0 == l).map(|d| trace_product(&d.2, &w)).sum();
                let sh = tm.buses[l].shunt.re * w[(l, l)].re;
                prop_assert!((sum + sh - trace_product(&pp.phi[l], &w)).abs() < 1e-10);
            }
        }
    }

    fn lossy_pair_feeder() -> FeederModel {
        let der = Der {
            pmin: 0.0,
            pmax: 1.0,
            qmin: -1.0,
            qmax: 1.0,
            s_max: None,
        };
        let bus = |id, pd, der: Option<Der>| FeederBus {
            id,
            pd,
            qd: 0.1,
            wmin: 0.81,
            wmax: 1.21,
            der,
            cost: BusCost {
                alpha_p: 1.0,
                beta_p: 5.0,
                ..BusCost::default()
            },
        };
        FeederModel {
            name: "f".into(),
            base_mva: 1.0,
            buses: vec![bus(1, 0.0, None), bus(2, 0.5, Some(der))],
            lines: vec![FeederLine {
                from: 0,
                to: 1,
                r: 0.05,
                x: 0.05,
                current_limit: 200.0,
                flow_limit: 1.0,
            }],
        }
    }

    fn single_bus_system(beta: f64) -> TransmissionModel {
        TransmissionModel {
            name: "one".into(),
            base_mva: 1.0,
            buses: vec![TransBus {
                id: 1,
                pd: 0.0,
                qd: 0.0,
                wmin: 0.9,
                wmax: 1.1,
                shunt: Complex::new(0.0, 0.0),
                gen: Some(Der {
                    pmin: -2.0,
                    pmax: 2.0,
                    qmin: -2.0,
                    qmax: 2.0,
                    s_max: None,
                }),
                cost: BusCost {
                    beta_p: beta,
                    ..BusCost::default()
                },
            }],
            lines: vec![],
        }
    }

    #[test]
    fn single_bus_joint_dispatch() {
        let tm = single_bus_system(10.0);
        let f = lossy_pair_feeder();
        let p = build_td(&tm, std::slice::from_ref(&f)).unwrap();
        assert_eq!(p.n_agents(), 2);
        assert_eq!(p.m_eq, 3);
        let o = oracle_solve(&p, &OracleSettings::default());
        assert!(o.is_optimal(), "{:?}", o.status);
        // DER marginal cost 2p + 5 meets the price 10 at p = 2.5, capped at 1;
        // transmission supplies the rest of 0.5 at 10
        let want = (1.0 + 5.0) + 10.0 * (0.5 - 1.0);
        assert!((o.value - want).abs() < 1e-5, "{} vs {want}", o.value);
    }

    #[test]
    fn zero_demand_costs_nothing() {
        let mut f = lossy_pair_feeder();
        for b in &mut f.buses {
            b.pd = 0.0;
            b.qd = 0.0;
            b.der = None;
        }
        let mut tm = one_line(Complex::new(1.0, -4.0));
        for b in &mut tm.buses {
            b.gen = single_bus_system(7.0).buses[0].gen;
            b.cost.beta_p = 7.0;
        }
        let p = build_td(&tm, &[f.clone(), f]).unwrap();
        let o = oracle_solve(&p, &OracleSettings::default());
        assert!(o.is_optimal());
        assert!(o.value.abs() < 1e-6, "{}", o.value);
    }

    #[test]
    fn embedding_shape() {
        let tm = one_line(Complex::new(1.0, -4.0));
        let f = lossy_pair_feeder();
        let (p, lay) = build_td_with_layout(&tm, &[f.clone(), f]).unwrap();
        let so = &p.agents[2];
        assert_eq!(so.local_set.psd.len(), 1);
        assert_eq!(so.local_set.psd[0].layout.matrix_order(), 4);
        let mut x = so.local_set.witness.clone();
        x[lay.so_re] = 1.0;
        x[lay.so_re + 1] = 0.2;
        x[lay.so_re + 2] = 0.2;
        x[lay.so_re + 3] = 1.0;
        x[lay.so_im + 1] = 0.3;
        x[lay.so_im + 2] = -0.3;
        let e = lay.real_embedding(&x);
        let want = Matrix::from_row_slice(
            4,
            4,
            &[1.0, 0.2, 0.0, 0.3, 0.2, 1.0, -0.3, 0.0, 0.0, -0.3, 1.0, 0.2, 0.3, 0.0, 0.2, 1.0],
        );
        assert!((e - want).amax() < 1e-15);
    }

    #[test]
    fn feeder_count_must_match() {
        let tm = one_line(Complex::new(1.0, -4.0));
        assert!(build_td(&tm, &[lossy_pair_feeder()]).is_err());
    }
}

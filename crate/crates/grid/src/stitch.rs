//! Joining single-area cases into a multi-area system with tie lines.

use crate::matpower::CaseData;
use crate::multiarea::{AreaNetwork, DcGen, DcLine, MultiAreaData, TieLine, ANGLE_LIMIT};
use crate::random::{perturb_costs, NormalSource};
use crate::GridError;

pub const DEFAULT_TIE_REACTANCE: f64 = 0.25;
pub const DEFAULT_TIE_CAPACITY_MW: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TieSpec {
    pub area_a: String,
    /// Bus id as written in the case file.
    pub bus_a: usize,
    pub area_b: String,
    pub bus_b: usize,
    /// Per unit on `reactance_base_mva`.
    pub reactance: f64,
    pub reactance_base_mva: f64,
    pub capacity_mw: f64,
}

impl TieSpec {
    pub fn new(area_a: impl Into<String>, bus_a: usize, area_b: impl Into<String>, bus_b: usize) -> Self {
        Self {
            area_a: area_a.into(),
            bus_a,
            area_b: area_b.into(),
            bus_b,
            reactance: DEFAULT_TIE_REACTANCE,
            reactance_base_mva: 100.0,
            capacity_mw: DEFAULT_TIE_CAPACITY_MW,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StitchSpec {
    /// Area names, one per case in the same order.
    pub areas: Vec<String>,
    pub ties: Vec<TieSpec>,
    /// Overrides every internal line rating; `None` keeps `rateA`
    /// (zero meaning unlimited).
    pub internal_capacity_mw: Option<f64>,
    /// Drop loads and generators at boundary buses.
    pub cleanup_boundary: bool,
    /// System base; defaults to the first case's base.
    pub base_mva: Option<f64>,
    pub angle_limit: f64,
}

impl StitchSpec {
    pub fn new(areas: Vec<String>, ties: Vec<TieSpec>) -> Self {
        Self {
            areas,
            ties,
            internal_capacity_mw: Some(100.0),
            cleanup_boundary: true,
            base_mva: None,
            angle_limit: ANGLE_LIMIT,
        }
    }

    fn area(&self, name: &str, tie: usize) -> Result<usize, GridError> {
        self.areas.iter().position(|a| a == name).ok_or_else(|| GridError::Tie {
            tie,
            reason: format!("unknown area {name:?}"),
        })
    }
}

/// Builds the per-unit multi-area data set.
///
/// Branch and tie reactances are rescaled to the system base, susceptance is
/// `1/x`, resistance is ignored. Generator costs keep only
/// their linear term.
pub fn stitch_areas(cases: &[CaseData], spec: &StitchSpec) -> Result<MultiAreaData, GridError> {
    if cases.len() != spec.areas.len() {
        return Err(GridError::Model(format!(
            "{} cases for {} area names",
            cases.len(),
            spec.areas.len()
        )));
    }
    let base = spec.base_mva.unwrap_or_else(|| cases.first().map_or(100.0, |c| c.base_mva));
    if !(base > 0.0) {
        return Err(GridError::Model("system base must be positive".into()));
    }
    let mut ties = Vec::with_capacity(spec.ties.len());
    for (t, ts) in spec.ties.iter().enumerate() {
        let area_a = spec.area(&ts.area_a, t)?;
        let area_b = spec.area(&ts.area_b, t)?;
        let find = |a: usize, id: usize| {
            cases[a].bus_index(id).ok_or_else(|| GridError::Tie {
                tie: t,
                reason: format!("bus {id} not in area {:?}", spec.areas[a]),
            })
        };
        if !(ts.reactance > 0.0) || !(ts.reactance_base_mva > 0.0) {
            return Err(GridError::Tie {
                tie: t,
                reason: "reactance must be positive".into(),
            });
        }
        ties.push(TieLine {
            area_a,
            bus_a: find(area_a, ts.bus_a)?,
            area_b,
            bus_b: find(area_b, ts.bus_b)?,
            b: ts.reactance_base_mva / (ts.reactance * base),
            limit: ts.capacity_mw / base,
        });
    }
    let mut data = MultiAreaData {
        base_mva: base,
        areas: Vec::with_capacity(cases.len()),
        ties,
        angle_limit: spec.angle_limit,
    };
    for (a, case) in cases.iter().enumerate() {
        let boundary = data.boundary_of(a);
        let is_bnd = |i: usize| spec.cleanup_boundary && boundary.contains(&i);
        let mut lines = Vec::new();
        for br in case.branch.iter().filter(|b| b.in_service()) {
            let (f, t) = (case.bus_index(br.from()).unwrap(), case.bus_index(br.to()).unwrap());
            if br.x() == 0.0 {
                return Err(GridError::Model(format!(
                    "area {:?}: branch {}-{} has zero reactance",
                    spec.areas[a],
                    br.from(),
                    br.to()
                )));
            }
            let x = br.x() * base / case.base_mva;
            let limit = match spec.internal_capacity_mw {
                Some(mw) => mw / base,
                None if br.rate_a() > 0.0 => br.rate_a() / base,
                None => f64::INFINITY,
            };
            lines.push(DcLine {
                from: f,
                to: t,
                b: 1.0 / x,
                limit,
            });
        }
        if case.bus.len() > 1 {
            for &i in &boundary {
                if !lines.iter().any(|l| l.from == i || l.to == i) {
                    return Err(GridError::Model(format!(
                        "area {:?}: boundary bus {} has no remaining connection inside its area",
                        spec.areas[a],
                        case.bus[i].id()
                    )));
                }
            }
        }
        let load = (0..case.bus.len())
            .map(|i| if is_bnd(i) { 0.0 } else { case.bus[i].pd() / base })
            .collect();
        let mut gens = Vec::new();
        for (g, row) in case.gen.iter().enumerate() {
            let bus = case.bus_index(row.bus()).unwrap();
            if !row.in_service() || is_bnd(bus) {
                continue;
            }
            let linear = case.cost_of(g).0.and_then(|c| c.quadratic()).map_or(0.0, |(_, c1, _)| c1);
            gens.push(DcGen {
                bus,
                pmin: row.pmin() / base,
                pmax: row.pmax() / base,
                cost: linear * base,
            });
        }
        data.areas.push(AreaNetwork {
            name: spec.areas[a].clone(),
            bus_ids: case.bus.iter().map(|b| b.id()).collect(),
            load,
            lines,
            gens,
        });
    }
    data.validate()?;
    Ok(data)
}

impl MultiAreaData {
    /// Applies the multiplicative cost perturbation to every generator, area
    /// by area in generator order.
    pub fn perturb_costs(&mut self, source: &mut impl NormalSource) {
        for area in &mut self.areas {
            let c: Vec<f64> = area.gens.iter().map(|g| g.cost).collect();
            for (g, v) in area.gens.iter_mut().zip(perturb_costs(&c, source)) {
                g.cost = v;
            }
        }
    }

    pub fn total_load(&self) -> f64 {
        self.areas.iter().flat_map(|a| &a.load).sum()
    }

    pub fn total_capacity(&self) -> f64 {
        self.areas.iter().flat_map(|a| &a.gens).map(|g| g.pmax).sum()
    }
}

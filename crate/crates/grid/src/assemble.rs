//! Incremental construction of agent specifications.

use dualgrid_core::cone::subproblem::conic_form;
use dualgrid_core::cone::{solve_conic, IpmSettings};
use dualgrid_core::problem::{AffineMap, PsdSlice, QuadraticObjective, SocSlice};
use dualgrid_core::{AgentSpec, ConvexSetSpec, Matrix, Vector};

use crate::GridError;

const WITNESS_TOL: f64 = 1e-7;

/// A point of the set, close to the centre of its bounding box.
///
/// Plain boxes return the midpoint. Anything else is projected with the
/// interior-point solver; `Err` carries the residual violation when the
/// projection fails, which is how an empty set shows up.
pub fn find_witness(set: &ConvexSetSpec) -> Result<Vector, f64> {
    let mid = (&set.lower + &set.upper) * 0.5;
    if set.ineq.rows() == 0 && set.eq.rows() == 0 && set.soc.is_empty() && set.psd.is_empty() {
        return Ok(mid);
    }
    let n = set.dim();
    let prob = conic_form(set, &Matrix::identity(n, n), &(-&mid));
    let r = solve_conic(&prob, &IpmSettings::default(), None);
    let v = set.violation(&r.x);
    if v <= WITNESS_TOL {
        Ok(r.x)
    } else {
        Err(v)
    }
}

#[derive(Default)]
pub(crate) struct Vars {
    names: Vec<String>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Vars {
    pub fn var(&mut self, name: impl Into<String>, lo: f64, hi: f64) -> usize {
        self.names.push(name.into());
        self.lower.push(lo);
        self.upper.push(hi);
        self.names.len() - 1
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn into_agent(self, name: impl Into<String>, m_eq: usize, m_ineq: usize) -> AgentDraft {
        let n = self.names.len();
        AgentDraft {
            name: name.into(),
            set: ConvexSetSpec::boxed(Vector::from_vec(self.lower), Vector::from_vec(self.upper)),
            names: self.names,
            hessian: Matrix::zeros(n, n),
            linear: Vector::zeros(n),
            constant: 0.0,
            ceq: Matrix::zeros(m_eq, n),
            oeq: Vector::zeros(m_eq),
            cin: Matrix::zeros(m_ineq, n),
            oin: Vector::zeros(m_ineq),
        }
    }
}

pub(crate) struct AgentDraft {
    name: String,
    names: Vec<String>,
    set: ConvexSetSpec,
    hessian: Matrix,
    linear: Vector,
    constant: f64,
    ceq: Matrix,
    oeq: Vector,
    cin: Matrix,
    oin: Vector,
}

impl AgentDraft {
    fn dense(&self, terms: &[(usize, f64)]) -> Vec<f64> {
        let mut row = vec![0.0; self.names.len()];
        for &(i, a) in terms {
            row[i] += a;
        }
        row
    }

    /// `Σ a·x = rhs` inside the local set.
    pub fn local_eq(&mut self, terms: &[(usize, f64)], rhs: f64) {
        let row = self.dense(terms);
        self.set.eq.push_row(&row, rhs);
    }

    /// `Σ a·x <= rhs` inside the local set.
    pub fn local_le(&mut self, terms: &[(usize, f64)], rhs: f64) {
        let row = self.dense(terms);
        self.set.ineq.push_row(&row, rhs);
    }

    pub fn soc(&mut self, s: SocSlice) {
        self.set.soc.push(s);
    }

    pub fn psd(&mut self, p: PsdSlice) {
        self.set.psd.push(p);
    }

    /// Adds `a·x_i²` to the objective.
    pub fn square(&mut self, i: usize, a: f64) {
        self.hessian[(i, i)] += 2.0 * a;
    }

    pub fn linear(&mut self, i: usize, c: f64) {
        self.linear[i] += c;
    }

    pub fn constant(&mut self, c: f64) {
        self.constant += c;
    }

    pub fn coupling_eq(&mut self, row: usize, terms: &[(usize, f64)], offset: f64) {
        for &(i, a) in terms {
            self.ceq[(row, i)] += a;
        }
        self.oeq[row] += offset;
    }

    pub fn coupling_le(&mut self, row: usize, terms: &[(usize, f64)], offset: f64) {
        for &(i, a) in terms {
            self.cin[(row, i)] += a;
        }
        self.oin[row] += offset;
    }

    pub fn finish(self) -> Result<AgentSpec, GridError> {
        let witness = find_witness(&self.set).map_err(|violation| GridError::EmptySet {
            agent: self.name.clone(),
            violation,
        })?;
        Ok(AgentSpec {
            name: self.name,
            local_set: self.set.with_witness(witness),
            objective: QuadraticObjective {
                hessian: self.hessian,
                linear: self.linear,
                constant: self.constant,
            },
            coupling_eq: AffineMap::new(self.ceq, self.oeq),
            coupling_ineq: AffineMap::new(self.cin, self.oin),
            variable_names: self.names,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn witness_of_a_disc_and_a_halfspace() {
        let mut set = ConvexSetSpec::boxed(Vector::from_element(2, -1.0), Vector::from_element(2, 1.0));
        set.soc.push(SocSlice::ball(vec![0, 1], 0.5));
        set.ineq.push_row(&[1.0, 1.0], -0.2);
        let w = find_witness(&set).unwrap();
        assert!(set.violation(&w) <= 1e-9);
    }

    #[test]
    fn empty_set_is_reported() {
        let mut set = ConvexSetSpec::boxed(Vector::from_element(2, 0.0), Vector::from_element(2, 1.0));
        set.eq.push_row(&[1.0, 1.0], 3.0);
        assert!(find_witness(&set).unwrap_err() > 0.1);
    }
}

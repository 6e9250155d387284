//! Multi-agent convex programs with affine coupling.
//!
//! A [`ProblemInstance`] is a list of agents. Agent `j` owns a compact local
//! set, a convex quadratic cost and two affine maps whose sums over all agents
//! form the shared coupling rows:
//!
//! ```text
//!   minimize   Σ_j f_j(x_j)
//!   subject to Σ_j (E_j x_j + e_j)  = 0      (m_eq rows)
//!              Σ_j (I_j x_j + i_j) <= 0      (m_ineq rows)
//!              x_j ∈ X_j
//! ```
//!
//! Multipliers live in `R^{m_eq} × R^{m_ineq}_+`, equality block first.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{inf_norm, jacobi_eigen, serde_rowmajor, serde_vector, Matrix, Vector};

/// Absolute tolerance used for "feasible" verdicts unless a run overrides it.
pub const DEFAULT_FEASIBILITY_TOL: f64 = 1e-6;

const PSD_EIG_TOL: f64 = -1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("agent {agent}: {what} has length {actual}, expected {expected}")]
    DimensionMismatch {
        agent: usize,
        what: String,
        expected: usize,
        actual: usize,
    },
    #[error("agent {agent}: objective Hessian is not PSD (min eigenvalue {min_eig:e})")]
    NotPsd { agent: usize, min_eig: f64 },
    #[error("agent {agent}: invalid local set: {reason}")]
    InvalidSet { agent: usize, reason: String },
    #[error("problem has no agents")]
    NoAgents,
    #[error("dual point: {0}")]
    InvalidDual(String),
    #[error("problem JSON: {0}")]
    Json(String),
}

/// A block of linear rows `M x (<=|=) rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearBlock {
    #[serde(with = "serde_rowmajor")]
    pub matrix: Matrix,
    #[serde(with = "serde_vector")]
    pub rhs: Vector,
}

impl LinearBlock {
    pub fn empty(dim: usize) -> Self {
        Self {
            matrix: Matrix::zeros(0, dim),
            rhs: Vector::zeros(0),
        }
    }

    pub fn new(matrix: Matrix, rhs: Vector) -> Self {
        Self { matrix, rhs }
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn push_row(&mut self, row: &[f64], rhs: f64) {
        let r = self.matrix.nrows();
        let cols = self.matrix.ncols();
        assert_eq!(row.len(), cols);
        let m = std::mem::replace(&mut self.matrix, Matrix::zeros(0, 0));
        self.matrix = m.insert_row(r, 0.0);
        for (j, v) in row.iter().enumerate() {
            self.matrix[(r, j)] = *v;
        }
        let b = std::mem::replace(&mut self.rhs, Vector::zeros(0));
        self.rhs = b.insert_row(r, rhs);
    }
}

/// `{x : ‖y_head‖₂ <= y_last}` with `y = transform · x[indices] + offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocSlice {
    pub indices: Vec<usize>,
    #[serde(with = "serde_rowmajor")]
    pub transform: Matrix,
    #[serde(with = "serde_vector")]
    pub offset: Vector,
}

impl SocSlice {
    /// Plain cone over the listed coordinates, scalar part last.
    pub fn plain(indices: Vec<usize>) -> Self {
        let k = indices.len();
        Self {
            indices,
            transform: Matrix::identity(k, k),
            offset: Vector::zeros(k),
        }
    }

    /// Rotated cone `2·a·b >= ‖u‖²` with `a, b >= 0`, written through the
    /// orthogonal map `(u, (a-b)/√2, (a+b)/√2)`. Coordinates ordered
    /// `[u..., a, b]`.
    pub fn rotated(u: &[usize], a: usize, b: usize) -> Self {
        let k = u.len() + 2;
        let mut indices = u.to_vec();
        indices.push(a);
        indices.push(b);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut t = Matrix::zeros(k, k);
        for i in 0..u.len() {
            t[(i, i)] = 1.0;
        }
        t[(k - 2, k - 2)] = h;
        t[(k - 2, k - 1)] = -h;
        t[(k - 1, k - 2)] = h;
        t[(k - 1, k - 1)] = h;
        Self {
            indices,
            transform: t,
            offset: Vector::zeros(k),
        }
    }

    /// Euclidean ball `‖x[indices]‖ <= radius`.
    pub fn ball(indices: Vec<usize>, radius: f64) -> Self {
        let k = indices.len();
        let mut t = Matrix::zeros(k + 1, k);
        for i in 0..k {
            t[(i, i)] = 1.0;
        }
        let mut offset = Vector::zeros(k + 1);
        offset[k] = radius;
        Self {
            indices,
            transform: t,
            offset,
        }
    }

    pub fn cone_dim(&self) -> usize {
        self.transform.nrows()
    }

    pub fn image(&self, x: &Vector) -> Vector {
        let local = Vector::from_iterator(self.indices.len(), self.indices.iter().map(|&i| x[i]));
        &self.transform * local + &self.offset
    }

    /// `max(0, ‖u‖ - s)` at the image of `x`.
    pub fn violation(&self, x: &Vector) -> f64 {
        let y = self.image(x);
        let k = y.len();
        let head = y.rows(0, k - 1).norm();
        (head - y[k - 1]).max(0.0)
    }
}

/// How the coordinates of a PSD slice are laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "snake_case")]
pub enum PsdLayout {
    /// `order²` entries of a real matrix, row-major; its symmetric part is PSD.
    Symmetric { order: usize },
    /// `order²` entries of `Re W` then `order²` of `Im W`, row-major; the real
    /// embedding `[[Re W, Im W], [-Im W, Re W]]` is PSD.
    HermitianEmbedding { order: usize },
}

impl PsdLayout {
    pub fn coordinate_count(&self) -> usize {
        match *self {
            PsdLayout::Symmetric { order } => order * order,
            PsdLayout::HermitianEmbedding { order } => 2 * order * order,
        }
    }

    /// Order of the real symmetric matrix the constraint acts on.
    pub fn matrix_order(&self) -> usize {
        match *self {
            PsdLayout::Symmetric { order } => order,
            PsdLayout::HermitianEmbedding { order } => 2 * order,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdSlice {
    pub indices: Vec<usize>,
    #[serde(flatten)]
    pub layout: PsdLayout,
}

impl PsdSlice {
    /// The real symmetric matrix constrained to be PSD, evaluated at `x`.
    pub fn matrix(&self, x: &Vector) -> Matrix {
        let vals: Vec<f64> = self.indices.iter().map(|&i| x[i]).collect();
        embed_psd_coordinates(&self.layout, &vals)
    }

    pub fn violation(&self, x: &Vector) -> f64 {
        (-jacobi_eigen(&self.matrix(x)).min_value()).max(0.0)
    }
}

/// Maps slice coordinates to the symmetric matrix that must be PSD.
pub fn embed_psd_coordinates(layout: &PsdLayout, vals: &[f64]) -> Matrix {
    match *layout {
        PsdLayout::Symmetric { order: n } => {
            let m = Matrix::from_fn(n, n, |i, j| vals[i * n + j]);
            crate::linalg::symmetrize(&m)
        }
        PsdLayout::HermitianEmbedding { order: n } => {
            let re = Matrix::from_fn(n, n, |i, j| vals[i * n + j]);
            let im = Matrix::from_fn(n, n, |i, j| vals[n * n + i * n + j]);
            let re = (&re + re.transpose()) * 0.5;
            let im = (&im - im.transpose()) * 0.5;
            let mut out = Matrix::zeros(2 * n, 2 * n);
            out.view_mut((0, 0), (n, n)).copy_from(&re);
            out.view_mut((n, n), (n, n)).copy_from(&re);
            out.view_mut((0, n), (n, n)).copy_from(&im);
            out.view_mut((n, 0), (n, n)).copy_from(&(-im));
            out
        }
    }
}

/// Coarse classification of a local set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetKind {
    Box,
    Polyhedron,
    SecondOrderConeSlice,
    PsdConeSlice,
    Intersection,
}

/// A compact convex set: a finite box intersected with optional linear rows
/// and conic slices. A witness point inside the set is always carried.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexSetSpec {
    #[serde(with = "serde_vector")]
    pub lower: Vector,
    #[serde(with = "serde_vector")]
    pub upper: Vector,
    pub ineq: LinearBlock,
    pub eq: LinearBlock,
    #[serde(default)]
    pub soc: Vec<SocSlice>,
    #[serde(default)]
    pub psd: Vec<PsdSlice>,
    #[serde(with = "serde_vector")]
    pub witness: Vector,
}

impl ConvexSetSpec {
    pub fn boxed(lower: Vector, upper: Vector) -> Self {
        let dim = lower.len();
        let witness = (&lower + &upper) * 0.5;
        Self {
            lower,
            upper,
            ineq: LinearBlock::empty(dim),
            eq: LinearBlock::empty(dim),
            soc: Vec::new(),
            psd: Vec::new(),
            witness,
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn kind(&self) -> SetKind {
        let has_rows = self.ineq.rows() > 0 || self.eq.rows() > 0;
        match (self.soc.is_empty(), self.psd.is_empty()) {
            (true, true) if !has_rows => SetKind::Box,
            (true, true) => SetKind::Polyhedron,
            (false, true) if !has_rows => SetKind::SecondOrderConeSlice,
            (true, false) if !has_rows => SetKind::PsdConeSlice,
            _ => SetKind::Intersection,
        }
    }

    pub fn is_polyhedral(&self) -> bool {
        self.soc.is_empty() && self.psd.is_empty()
    }

    pub fn with_witness(mut self, witness: Vector) -> Self {
        self.witness = witness;
        self
    }

    /// Largest constraint violation of `x` over all pieces of the set.
    pub fn violation(&self, x: &Vector) -> f64 {
        let mut v: f64 = 0.0;
        for i in 0..self.dim() {
            v = v.max(self.lower[i] - x[i]).max(x[i] - self.upper[i]);
        }
        if self.ineq.rows() > 0 {
            let r = &self.ineq.matrix * x - &self.ineq.rhs;
            v = v.max(r.max());
        }
        if self.eq.rows() > 0 {
            let r = &self.eq.matrix * x - &self.eq.rhs;
            v = v.max(inf_norm(&r));
        }
        for s in &self.soc {
            v = v.max(s.violation(x));
        }
        for p in &self.psd {
            v = v.max(p.violation(x));
        }
        v.max(0.0)
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> bool {
        x.len() == self.dim() && self.violation(x) <= tol
    }

    /// Euclidean diameter of the bounding box.
    pub fn box_diameter(&self) -> f64 {
        (&self.upper - &self.lower).norm()
    }

    pub fn validate(&self) -> Result<(), String> {
        let n = self.dim();
        if self.upper.len() != n {
            return Err(format!("upper has {} entries, lower has {n}", self.upper.len()));
        }
        for i in 0..n {
            if !self.lower[i].is_finite() || !self.upper[i].is_finite() {
                return Err(format!("coordinate {i} lacks finite box bounds"));
            }
            if self.lower[i] > self.upper[i] {
                return Err(format!(
                    "coordinate {i}: lower {} exceeds upper {}",
                    self.lower[i], self.upper[i]
                ));
            }
        }
        for (name, blk) in [("inequality", &self.ineq), ("equality", &self.eq)] {
            if blk.matrix.ncols() != n || blk.rhs.len() != blk.matrix.nrows() {
                return Err(format!(
                    "{name} block is {}x{} with {} right-hand sides, set dimension {n}",
                    blk.matrix.nrows(),
                    blk.matrix.ncols(),
                    blk.rhs.len()
                ));
            }
        }
        for (k, s) in self.soc.iter().enumerate() {
            if s.indices.iter().any(|&i| i >= n) {
                return Err(format!("cone slice {k} references a coordinate out of range"));
            }
            if s.transform.ncols() != s.indices.len() || s.transform.nrows() != s.offset.len() {
                return Err(format!("cone slice {k} has an inconsistent transform"));
            }
            if s.transform.nrows() < 1 {
                return Err(format!("cone slice {k} is empty"));
            }
        }
        for (k, p) in self.psd.iter().enumerate() {
            if p.indices.iter().any(|&i| i >= n) {
                return Err(format!("psd slice {k} references a coordinate out of range"));
            }
            if p.indices.len() != p.layout.coordinate_count() {
                return Err(format!(
                    "psd slice {k} lists {} coordinates, layout needs {}",
                    p.indices.len(),
                    p.layout.coordinate_count()
                ));
            }
        }
        if self.witness.len() != n {
            return Err(format!("witness has {} entries, expected {n}", self.witness.len()));
        }
        let viol = self.violation(&self.witness);
        if viol > DEFAULT_FEASIBILITY_TOL {
            return Err(format!("witness point violates the set by {viol:e}"));
        }
        Ok(())
    }
}

/// `½ xᵀ Q x + cᵀ x + constant`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticObjective {
    #[serde(with = "serde_rowmajor")]
    pub hessian: Matrix,
    #[serde(with = "serde_vector")]
    pub linear: Vector,
    pub constant: f64,
}

impl QuadraticObjective {
    pub fn zero(dim: usize) -> Self {
        Self {
            hessian: Matrix::zeros(dim, dim),
            linear: Vector::zeros(dim),
            constant: 0.0,
        }
    }

    pub fn linear(c: Vector) -> Self {
        let n = c.len();
        Self {
            hessian: Matrix::zeros(n, n),
            linear: c,
            constant: 0.0,
        }
    }

    pub fn eval(&self, x: &Vector) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x) + self.constant
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        &self.hessian * x + &self.linear
    }

    pub fn is_linear(&self) -> bool {
        self.hessian.iter().all(|v| *v == 0.0)
    }
}

/// `x ↦ M x + offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    #[serde(with = "serde_rowmajor")]
    pub matrix: Matrix,
    #[serde(with = "serde_vector")]
    pub offset: Vector,
}

impl AffineMap {
    pub fn zero(rows: usize, dim: usize) -> Self {
        Self {
            matrix: Matrix::zeros(rows, dim),
            offset: Vector::zeros(rows),
        }
    }

    pub fn new(matrix: Matrix, offset: Vector) -> Self {
        Self { matrix, offset }
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn eval(&self, x: &Vector) -> Vector {
        &self.matrix * x + &self.offset
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub name: String,
    pub local_set: ConvexSetSpec,
    pub objective: QuadraticObjective,
    pub coupling_eq: AffineMap,
    pub coupling_ineq: AffineMap,
    pub variable_names: Vec<String>,
}

impl AgentSpec {
    pub fn dim(&self) -> usize {
        self.local_set.dim()
    }

    /// Stacked coupling value `g_j(x) = (E x + e, I x + i)`.
    pub fn coupling(&self, x: &Vector) -> Vector {
        let eq = self.coupling_eq.eval(x);
        let ineq = self.coupling_ineq.eval(x);
        crate::linalg::vconcat(&[&eq, &ineq])
    }

    /// Stacked coupling matrix `[E; I]`.
    pub fn coupling_matrix(&self) -> Matrix {
        crate::linalg::vstack(&[&self.coupling_eq.matrix, &self.coupling_ineq.matrix], self.dim())
    }

    pub fn coupling_offset(&self) -> Vector {
        crate::linalg::vconcat(&[&self.coupling_eq.offset, &self.coupling_ineq.offset])
    }

    /// Agent-wise Lagrangian `f_j(x) + zᵀ g_j(x)`.
    pub fn lagrangian(&self, x: &Vector, z: &Vector) -> f64 {
        self.objective.eval(x) + z.dot(&self.coupling(x))
    }

    fn validate(&self, index: usize, m_eq: usize, m_ineq: usize) -> Result<(), ProblemError> {
        let n = self.dim();
        self.local_set
            .validate()
            .map_err(|reason| ProblemError::InvalidSet { agent: index, reason })?;
        let checks = [
            ("objective Hessian rows", self.objective.hessian.nrows(), n),
            ("objective Hessian cols", self.objective.hessian.ncols(), n),
            ("objective linear term", self.objective.linear.len(), n),
            ("equality coupling rows", self.coupling_eq.matrix.nrows(), m_eq),
            ("equality coupling cols", self.coupling_eq.matrix.ncols(), n),
            ("equality coupling offset", self.coupling_eq.offset.len(), m_eq),
            ("inequality coupling rows", self.coupling_ineq.matrix.nrows(), m_ineq),
            ("inequality coupling cols", self.coupling_ineq.matrix.ncols(), n),
            ("inequality coupling offset", self.coupling_ineq.offset.len(), m_ineq),
            ("variable names", self.variable_names.len(), n),
        ];
        for (what, actual, expected) in checks {
            if actual != expected {
                return Err(ProblemError::DimensionMismatch {
                    agent: index,
                    what: what.to_string(),
                    expected,
                    actual,
                });
            }
        }
        let asym = (&self.objective.hessian - self.objective.hessian.transpose()).amax();
        if asym > 1e-10 {
            return Err(ProblemError::InvalidSet {
                agent: index,
                reason: format!("objective Hessian is not symmetric (deviation {asym:e})"),
            });
        }
        if n > 0 && !self.objective.is_linear() {
            let min_eig = jacobi_eigen(&self.objective.hessian).min_value();
            if min_eig < PSD_EIG_TOL {
                return Err(ProblemError::NotPsd { agent: index, min_eig });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemMetadata {
    pub name: String,
    #[serde(default)]
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub metadata: ProblemMetadata,
    pub m_eq: usize,
    pub m_ineq: usize,
    pub agents: Vec<AgentSpec>,
}

fn schema_version() -> u32 {
    1
}

impl ProblemInstance {
    /// Builds and validates an instance.
    pub fn new(
        name: impl Into<String>,
        m_eq: usize,
        m_ineq: usize,
        agents: Vec<AgentSpec>,
    ) -> Result<Self, ProblemError> {
        let p = Self {
            schema_version: schema_version(),
            metadata: ProblemMetadata {
                name: name.into(),
                provenance: String::new(),
            },
            m_eq,
            m_ineq,
            agents,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.metadata.provenance = provenance.into();
        self
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        if self.agents.is_empty() {
            return Err(ProblemError::NoAgents);
        }
        for (j, a) in self.agents.iter().enumerate() {
            a.validate(j, self.m_eq, self.m_ineq)?;
        }
        Ok(())
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn m_total(&self) -> usize {
        self.m_eq + self.m_ineq
    }

    pub fn total_dim(&self) -> usize {
        self.agents.iter().map(|a| a.dim()).sum()
    }

    pub fn witness(&self) -> Vec<Vector> {
        self.agents.iter().map(|a| a.local_set.witness.clone()).collect()
    }

    pub fn objective(&self, xs: &[Vector]) -> Result<f64, ProblemError> {
        self.check_primal(xs)?;
        Ok(self.agents.iter().zip(xs).map(|(a, x)| a.objective.eval(x)).sum())
    }

    fn check_primal(&self, xs: &[Vector]) -> Result<(), ProblemError> {
        if xs.len() != self.agents.len() {
            return Err(ProblemError::DimensionMismatch {
                agent: xs.len().min(self.agents.len()),
                what: "primal point list".into(),
                expected: self.agents.len(),
                actual: xs.len(),
            });
        }
        for (j, (a, x)) in self.agents.iter().zip(xs).enumerate() {
            if x.len() != a.dim() {
                return Err(ProblemError::DimensionMismatch {
                    agent: j,
                    what: "primal vector".into(),
                    expected: a.dim(),
                    actual: x.len(),
                });
            }
        }
        Ok(())
    }

    fn check_dual(&self, z: &DualPoint) -> Result<(), ProblemError> {
        if z.z.len() != self.m_total() || z.m_eq != self.m_eq {
            return Err(ProblemError::InvalidDual(format!(
                "expected {} entries ({} equality), got {} ({} equality)",
                self.m_total(),
                self.m_eq,
                z.z.len(),
                z.m_eq
            )));
        }
        Ok(())
    }

    /// `Σ_j g_j(x_j)` split into equality and inequality parts.
    pub fn coupling_residual(&self, xs: &[Vector]) -> Result<CouplingResidual, ProblemError> {
        self.check_primal(xs)?;
        let mut eq = Vector::zeros(self.m_eq);
        let mut ineq = Vector::zeros(self.m_ineq);
        for (a, x) in self.agents.iter().zip(xs) {
            eq += a.coupling_eq.eval(x);
            ineq += a.coupling_ineq.eval(x);
        }
        Ok(CouplingResidual { eq, ineq })
    }

    /// `Σ_j [f_j(x_j) + zᵀ g_j(x_j)]` with the per-agent terms.
    pub fn lagrangian(&self, xs: &[Vector], z: &DualPoint) -> Result<LagrangianValue, ProblemError> {
        self.check_primal(xs)?;
        self.check_dual(z)?;
        let per_agent: Vec<f64> = self
            .agents
            .iter()
            .zip(xs)
            .map(|(a, x)| a.lagrangian(x, &z.z))
            .collect();
        let total = per_agent.iter().sum();
        Ok(LagrangianValue { total, per_agent })
    }

    pub fn project_dual(&self, v: &Vector) -> Result<DualPoint, ProblemError> {
        if v.len() != self.m_total() {
            return Err(ProblemError::InvalidDual(format!(
                "expected {} entries, got {}",
                self.m_total(),
                v.len()
            )));
        }
        Ok(project_dual(v, self.m_eq))
    }

    /// Largest set-membership residual over all agents.
    pub fn local_violation(&self, xs: &[Vector]) -> Result<f64, ProblemError> {
        self.check_primal(xs)?;
        Ok(self
            .agents
            .iter()
            .zip(xs)
            .map(|(a, x)| a.local_set.violation(x))
            .fold(0.0, f64::max))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ProblemError> {
        let p: Self = serde_json::from_str(text).map_err(|e| ProblemError::Json(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    /// Splits a stacked vector into per-agent pieces.
    pub fn split(&self, x: &Vector) -> Vec<Vector> {
        let mut out = Vec::with_capacity(self.agents.len());
        let mut off = 0;
        for a in &self.agents {
            out.push(x.rows(off, a.dim()).into_owned());
            off += a.dim();
        }
        out
    }

    pub fn stack(&self, xs: &[Vector]) -> Vector {
        let parts: Vec<&Vector> = xs.iter().collect();
        crate::linalg::vconcat(&parts)
    }

    /// The same program written as a single agent over the stacked variables.
    pub fn merged(&self) -> ProblemInstance {
        let n = self.total_dim();
        let mut lower = Vector::zeros(n);
        let mut upper = Vector::zeros(n);
        let mut witness = Vector::zeros(n);
        let mut hess = Matrix::zeros(n, n);
        let mut lin = Vector::zeros(n);
        let mut constant = 0.0;
        let ineq_rows: usize = self.agents.iter().map(|a| a.local_set.ineq.rows()).sum();
        let eq_rows: usize = self.agents.iter().map(|a| a.local_set.eq.rows()).sum();
        let mut ineq = LinearBlock::new(Matrix::zeros(ineq_rows, n), Vector::zeros(ineq_rows));
        let mut eq = LinearBlock::new(Matrix::zeros(eq_rows, n), Vector::zeros(eq_rows));
        let mut ceq = AffineMap::zero(self.m_eq, n);
        let mut cineq = AffineMap::zero(self.m_ineq, n);
        let mut soc = Vec::new();
        let mut psd = Vec::new();
        let mut names = Vec::with_capacity(n);
        let (mut off, mut ri, mut re) = (0, 0, 0);
        for a in &self.agents {
            let d = a.dim();
            let s = &a.local_set;
            lower.rows_mut(off, d).copy_from(&s.lower);
            upper.rows_mut(off, d).copy_from(&s.upper);
            witness.rows_mut(off, d).copy_from(&s.witness);
            hess.view_mut((off, off), (d, d)).copy_from(&a.objective.hessian);
            lin.rows_mut(off, d).copy_from(&a.objective.linear);
            constant += a.objective.constant;
            ineq.matrix.view_mut((ri, off), (s.ineq.rows(), d)).copy_from(&s.ineq.matrix);
            ineq.rhs.rows_mut(ri, s.ineq.rows()).copy_from(&s.ineq.rhs);
            eq.matrix.view_mut((re, off), (s.eq.rows(), d)).copy_from(&s.eq.matrix);
            eq.rhs.rows_mut(re, s.eq.rows()).copy_from(&s.eq.rhs);
            ceq.matrix.view_mut((0, off), (self.m_eq, d)).copy_from(&a.coupling_eq.matrix);
            ceq.offset += &a.coupling_eq.offset;
            cineq.matrix.view_mut((0, off), (self.m_ineq, d)).copy_from(&a.coupling_ineq.matrix);
            cineq.offset += &a.coupling_ineq.offset;
            for c in &s.soc {
                let mut c = c.clone();
                c.indices.iter_mut().for_each(|i| *i += off);
                soc.push(c);
            }
            for p in &s.psd {
                let mut p = p.clone();
                p.indices.iter_mut().for_each(|i| *i += off);
                psd.push(p);
            }
            names.extend(a.variable_names.iter().map(|v| format!("{}.{}", a.name, v)));
            off += d;
            ri += s.ineq.rows();
            re += s.eq.rows();
        }
        let agent = AgentSpec {
            name: "merged".into(),
            local_set: ConvexSetSpec {
                lower,
                upper,
                ineq,
                eq,
                soc,
                psd,
                witness,
            },
            objective: QuadraticObjective {
                hessian: hess,
                linear: lin,
                constant,
            },
            coupling_eq: ceq,
            coupling_ineq: cineq,
            variable_names: names,
        };
        ProblemInstance {
            schema_version: schema_version(),
            metadata: ProblemMetadata {
                name: format!("{} (merged)", self.metadata.name),
                provenance: self.metadata.provenance.clone(),
            },
            m_eq: self.m_eq,
            m_ineq: self.m_ineq,
            agents: vec![agent],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianValue {
    pub total: f64,
    pub per_agent: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingResidual {
    pub eq: Vector,
    pub ineq: Vector,
}

impl CouplingResidual {
    pub fn stacked(&self) -> Vector {
        crate::linalg::vconcat(&[&self.eq, &self.ineq])
    }

    pub fn is_feasible(&self, tol: f64) -> bool {
        inf_norm(&self.eq) <= tol && self.ineq.iter().all(|v| *v <= tol)
    }

    /// `‖Σ g^E‖₂`.
    pub fn eq_violation(&self) -> f64 {
        self.eq.norm()
    }

    /// `‖max(Σ g^I, 0)‖₂`.
    pub fn ineq_violation(&self) -> f64 {
        self.ineq.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt()
    }

    /// `‖π_Z[Σ g]‖₂`.
    pub fn violation_norm(&self) -> f64 {
        self.eq_violation().hypot(self.ineq_violation())
    }
}

/// A multiplier vector, equality block unconstrained and inequality block
/// nonnegative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualPoint {
    #[serde(with = "serde_vector")]
    pub z: Vector,
    pub m_eq: usize,
}

impl DualPoint {
    pub fn zeros(m_eq: usize, m_ineq: usize) -> Self {
        Self {
            z: Vector::zeros(m_eq + m_ineq),
            m_eq,
        }
    }

    pub fn new(z: Vector, m_eq: usize) -> Result<Self, ProblemError> {
        if m_eq > z.len() {
            return Err(ProblemError::InvalidDual(format!(
                "{m_eq} equality entries requested but vector has {}",
                z.len()
            )));
        }
        if let Some((i, v)) = z.iter().enumerate().skip(m_eq).find(|(_, v)| **v < 0.0) {
            return Err(ProblemError::InvalidDual(format!(
                "inequality multiplier {} is negative ({v})",
                i - m_eq
            )));
        }
        Ok(Self { z, m_eq })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn m_ineq(&self) -> usize {
        self.z.len() - self.m_eq
    }
}

/// Euclidean projection onto `R^{m_eq} × R_+^{rest}`.
pub fn project_dual(v: &Vector, m_eq: usize) -> DualPoint {
    let mut z = v.clone();
    for i in m_eq..z.len() {
        if z[i] < 0.0 {
            z[i] = 0.0;
        }
    }
    DualPoint { z, m_eq }
}

/// Same projection applied in place, for hot loops.
pub fn project_dual_in_place(v: &mut Vector, m_eq: usize) {
    for i in m_eq..v.len() {
        if v[i] < 0.0 {
            v[i] = 0.0;
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Two agents, `f_j(x) = x²`, `g_j(x) = x - 0.5` (equality), `X_j = [0, 1]`.
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
        ProblemInstance::new("toy", 1, 0, vec![agent("a1"), agent("a2")]).unwrap()
    }

    fn v1(x: f64) -> Vector {
        Vector::from_element(1, x)
    }

    #[test]
    fn lagrangian_examples() {
        let p = toy_problem();
        let z = DualPoint::new(v1(3.0), 1).unwrap();
        let l = p.lagrangian(&[v1(0.5), v1(0.5)], &z).unwrap();
        assert!((l.total - 0.5).abs() < 1e-15);
        let z = DualPoint::new(v1(1.0), 1).unwrap();
        let l = p.lagrangian(&[v1(0.0), v1(0.0)], &z).unwrap();
        assert!((l.total + 1.0).abs() < 1e-15);
        assert_eq!(l.per_agent, vec![-0.5, -0.5]);
    }

    #[test]
    fn lagrangian_at_zero_multiplier_is_objective() {
        let p = toy_problem();
        let xs = [v1(0.3), v1(0.9)];
        let l = p.lagrangian(&xs, &DualPoint::zeros(1, 0)).unwrap();
        assert_eq!(l.total, p.objective(&xs).unwrap());
    }

    #[test]
    fn dimension_mismatch_names_agent() {
        let p = toy_problem();
        let err = p.lagrangian(&[v1(0.5), Vector::zeros(2)], &DualPoint::zeros(1, 0)).unwrap_err();
        match err {
            ProblemError::DimensionMismatch { agent, expected, actual, .. } => {
                assert_eq!((agent, expected, actual), (1, 1, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn coupling_residual_examples() {
        let p = toy_problem();
        let r = p.coupling_residual(&[v1(0.5), v1(0.5)]).unwrap();
        assert_eq!(r.eq[0], 0.0);
        assert!(r.is_feasible(1e-12));
        let r = p.coupling_residual(&[v1(1.0), v1(1.0)]).unwrap();
        assert_eq!(r.eq[0], 1.0);
        assert_eq!(r.ineq.len(), 0);
    }

    #[test]
    fn project_dual_examples() {
        let d = project_dual(&Vector::from_vec(vec![-2.0, -3.0]), 1);
        assert_eq!(d.z.as_slice(), &[-2.0, 0.0]);
        let d = project_dual(&Vector::from_vec(vec![5.0, -1.0, 2.0]), 1);
        assert_eq!(d.z.as_slice(), &[5.0, 0.0, 2.0]);
        let inside = Vector::from_vec(vec![-4.0, 0.0, 7.0]);
        assert_eq!(project_dual(&inside, 1).z, inside);
    }

    #[test]
    fn dual_point_rejects_negative_inequality_multiplier() {
        assert!(DualPoint::new(Vector::from_vec(vec![-1.0, -0.1]), 1).is_err());
        assert!(DualPoint::new(Vector::from_vec(vec![-1.0, 0.1]), 1).is_ok());
    }

    #[test]
    fn json_roundtrip_preserves_instance() {
        let p = toy_problem();
        let text = p.to_json();
        assert!(text.contains("\"m_eq\": 1"));
        let back = ProblemInstance::from_json(&text).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn validation_catches_bad_instances() {
        let mut p = toy_problem();
        p.agents[1].objective.hessian[(0, 0)] = -1.0;
        assert!(matches!(p.validate(), Err(ProblemError::NotPsd { agent: 1, .. })));

        let mut p = toy_problem();
        p.agents[0].local_set.upper[0] = f64::INFINITY;
        assert!(matches!(p.validate(), Err(ProblemError::InvalidSet { agent: 0, .. })));

        let mut p = toy_problem();
        p.agents[0].local_set.witness[0] = 4.0;
        assert!(p.validate().is_err());

        let mut p = toy_problem();
        p.agents[1].coupling_eq = AffineMap::zero(2, 1);
        assert!(matches!(p.validate(), Err(ProblemError::DimensionMismatch { agent: 1, .. })));

        assert!(matches!(ProblemInstance::new("empty", 0, 0, vec![]), Err(ProblemError::NoAgents)));
    }

    #[test]
    fn rotated_cone_slice_matches_definition() {
        // coordinates: u = (p, q), a = l, b = w ; cone: 2 l w >= p² + q²
        let s = SocSlice::rotated(&[0, 1], 2, 3);
        let inside = Vector::from_vec(vec![0.3, 0.4, 0.5, 0.5]);
        assert_eq!(s.violation(&inside), 0.0);
        let outside = Vector::from_vec(vec![1.0, 1.0, 0.1, 0.1]);
        assert!(s.violation(&outside) > 0.0);
        // orthogonal transform
        let t = &s.transform;
        assert!((t.transpose() * t - Matrix::identity(4, 4)).norm() < 1e-15);
    }

    #[test]
    fn merged_problem_keeps_values() {
        let p = toy_problem();
        let m = p.merged();
        assert_eq!(m.n_agents(), 1);
        m.validate().unwrap();
        let xs = [v1(0.2), v1(0.7)];
        let stacked = p.stack(&xs);
        assert!((m.objective(&[stacked.clone()]).unwrap() - p.objective(&xs).unwrap()).abs() < 1e-15);
        let (a, b) = (m.coupling_residual(&[stacked]).unwrap().eq, p.coupling_residual(&xs).unwrap().eq);
        assert!((a - b).amax() < 1e-15);
    }

    fn random_problem(seed: u64, n_agents: usize, m_eq: usize, m_ineq: usize) -> ProblemInstance {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let agents = (0..n_agents)
            .map(|j| {
                let d = 1 + (j % 3);
                let a = Matrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
                AgentSpec {
                    name: format!("a{j}"),
                    local_set: ConvexSetSpec::boxed(Vector::from_element(d, -1.0), Vector::from_element(d, 2.0)),
                    objective: QuadraticObjective {
                        hessian: &a * a.transpose(),
                        linear: Vector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)),
                        constant: rng.random_range(-1.0..1.0),
                    },
                    coupling_eq: AffineMap::new(
                        Matrix::from_fn(m_eq, d, |_, _| rng.random_range(-1.0..1.0)),
                        Vector::from_fn(m_eq, |_, _| rng.random_range(-1.0..1.0)),
                    ),
                    coupling_ineq: AffineMap::new(
                        Matrix::from_fn(m_ineq, d, |_, _| rng.random_range(-1.0..1.0)),
                        Vector::from_fn(m_ineq, |_, _| rng.random_range(-1.0..1.0)),
                    ),
                    variable_names: (0..d).map(|i| format!("v{i}")).collect(),
                }
            })
            .collect();
        ProblemInstance::new("random", m_eq, m_ineq, agents).unwrap()
    }

    proptest! {
        #[test]
        fn lagrangian_separates(seed in 0u64..10_000, zs in proptest::collection::vec(-5.0f64..5.0, 4)) {
            let p = random_problem(seed, 4, 2, 2);
            let xs: Vec<Vector> = p.agents.iter().enumerate()
                .map(|(j, a)| Vector::from_fn(a.dim(), |i, _| ((seed as f64) * 0.37 + (i + j) as f64).sin()))
                .collect();
            let z = project_dual(&Vector::from_vec(zs), 2);
            let l = p.lagrangian(&xs, &z).unwrap();
            let parts: f64 = l.per_agent.iter().sum();
            prop_assert!((parts - l.total).abs() <= 1e-12 * l.total.abs().max(1.0));
        }

        #[test]
        fn project_dual_is_idempotent_and_nonexpansive(
            u in proptest::collection::vec(-10.0f64..10.0, 5),
            v in proptest::collection::vec(-10.0f64..10.0, 5),
            m_eq in 0usize..=5,
        ) {
            let u = Vector::from_vec(u);
            let v = Vector::from_vec(v);
            let pu = project_dual(&u, m_eq);
            let pv = project_dual(&v, m_eq);
            prop_assert_eq!(&project_dual(&pu.z, m_eq).z, &pu.z);
            prop_assert!((&pu.z - &pv.z).norm() <= (&u - &v).norm() + 1e-12);
            prop_assert!(pu.z.iter().skip(m_eq).all(|x| *x >= 0.0));
        }

        #[test]
        fn feasible_points_have_nonpositive_dual_term(
            seed in 0u64..1000,
            zs in proptest::collection::vec(-5.0f64..5.0, 3),
        ) {
            // Coupling rows shifted so that the witness point is exactly feasible.
            let mut p = random_problem(seed, 3, 1, 2);
            let xs = p.witness();
            let r = p.coupling_residual(&xs).unwrap();
            p.agents[0].coupling_eq.offset -= &r.eq;
            // inequality rows strictly satisfied by 0.25
            p.agents[0].coupling_ineq.offset -= r.ineq.add_scalar(0.25);
            let r = p.coupling_residual(&xs).unwrap();
            prop_assert!(r.is_feasible(1e-12));
            let z = project_dual(&Vector::from_vec(zs), 1);
            let g = r.stacked();
            let eq_term: f64 = z.z[0] * g[0];
            let ineq_term: f64 = (1..3).map(|i| z.z[i] * g[i]).sum();
            prop_assert!(eq_term.abs() <= 1e-12);
            prop_assert!(ineq_term <= 1e-12);
        }
    }
}

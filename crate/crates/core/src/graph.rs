//! Communication graphs and doubly stochastic consensus weights.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::linalg::{jacobi_eigen, Matrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph is disconnected ({components} components)")]
    Disconnected { components: usize },
    #[error("edge ({0}, {1}) is a self-loop")]
    SelfLoop(usize, usize),
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    OutOfRange(usize, usize, usize),
    #[error("graph has no nodes")]
    Empty,
    #[error("edge list line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Undirected simple graph on nodes `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommGraph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl CommGraph {
    /// Builds a graph and checks that it is connected.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, GraphError> {
        let g = Self::unchecked(n, edges)?;
        let c = g.component_count();
        if c != 1 {
            return Err(GraphError::Disconnected { components: c });
        }
        Ok(g)
    }

    /// Builds a graph without the connectivity check.
    pub fn unchecked(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return Err(GraphError::SelfLoop(a, b));
            }
            if a >= n || b >= n {
                return Err(GraphError::OutOfRange(a, b, n));
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok(Self { n, edges: set })
    }

    pub fn path(n: usize) -> Self {
        Self::new(n, (1..n).map(|i| (i - 1, i))).expect("path graph is connected")
    }

    pub fn complete(n: usize) -> Self {
        let edges = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j)));
        Self::new(n, edges).expect("complete graph is connected")
    }

    /// Star with `hub` adjacent to every other node.
    pub fn star(n: usize, hub: usize) -> Self {
        Self::new(n, (0..n).filter(|&i| i != hub).map(|i| (hub, i))).expect("star graph is connected")
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n];
        for &(a, b) in &self.edges {
            d[a] += 1;
            d[b] += 1;
        }
        d
    }

    pub fn neighbors(&self, j: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == j {
                    Some(b)
                } else if b == j {
                    Some(a)
                } else {
                    None
                }
            })
            .collect()
    }

    pub fn is_connected(&self) -> bool {
        self.component_count() == 1
    }

    fn component_count(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.n).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for &(a, b) in &self.edges {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
        (0..self.n).filter(|&i| find(&mut parent, i) == i).count()
    }

    /// Parses `N` on the first line followed by one 1-indexed `j k` pair per
    /// line. `#` starts a comment.
    pub fn parse_edge_list(text: &str) -> Result<Self, GraphError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let (first_line, header) = lines.next().ok_or(GraphError::Parse {
            line: 1,
            reason: "missing node count".into(),
        })?;
        let n: usize = header.parse().map_err(|_| GraphError::Parse {
            line: first_line,
            reason: format!("node count {header:?} is not a positive integer"),
        })?;
        let mut edges = Vec::new();
        for (line, l) in lines {
            let toks: Vec<&str> = l.split_whitespace().collect();
            if toks.len() != 2 {
                return Err(GraphError::Parse {
                    line,
                    reason: format!("expected two node ids, found {}", toks.len()),
                });
            }
            let parse = |t: &str| -> Result<usize, GraphError> {
                match t.parse::<usize>() {
                    Ok(v) if v >= 1 && v <= n => Ok(v - 1),
                    _ => Err(GraphError::Parse {
                        line,
                        reason: format!("node id {t:?} outside 1..={n}"),
                    }),
                }
            };
            edges.push((parse(toks[0])?, parse(toks[1])?));
        }
        Self::new(n, edges)
    }

    pub fn to_edge_list(&self) -> String {
        let mut s = format!("{}\n", self.n);
        for (a, b) in self.edges() {
            s.push_str(&format!("{} {}\n", a + 1, b + 1));
        }
        s
    }
}

/// Symmetric doubly stochastic consensus matrix with its cached `σ₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    w: Matrix,
    sigma2: f64,
}

impl WeightMatrix {
    /// Wraps an arbitrary square matrix. No validation, see
    /// [`verify_weight_matrix`].
    pub fn from_matrix(w: Matrix) -> Self {
        let sigma2 = second_singular_value(&w);
        Self { w, sigma2 }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.w
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.w[(j, k)]
    }
}

/// `W_jk = 1 / (1 + max(deg_j, deg_k))` on edges, remaining mass on the
/// diagonal.
pub fn metropolis_weights(graph: &CommGraph) -> Result<WeightMatrix, GraphError> {
    let c = graph.component_count();
    if c != 1 {
        return Err(GraphError::Disconnected { components: c });
    }
    let n = graph.n_nodes();
    let deg = graph.degrees();
    let mut w = Matrix::zeros(n, n);
    for (a, b) in graph.edges() {
        let v = 1.0 / (1 + deg[a].max(deg[b])) as f64;
        w[(a, b)] = v;
        w[(b, a)] = v;
    }
    for j in 0..n {
        // accumulate in index order so the result is independent of edge order
        let off: f64 = (0..n).filter(|&k| k != j).map(|k| w[(j, k)]).sum();
        w[(j, j)] = 1.0 - off;
    }
    Ok(WeightMatrix::from_matrix(w))
}

/// Second largest singular value. Uses the eigenvalues of `W` directly when
/// `W` is symmetric and those of `WᵀW` otherwise. Zero for `N = 1`.
pub fn second_singular_value(w: &Matrix) -> f64 {
    let n = w.nrows();
    if n < 2 {
        return 0.0;
    }
    let asym = (w - w.transpose()).amax();
    let mut sv: Vec<f64> = if asym == 0.0 {
        jacobi_eigen(w).values.iter().map(|v| v.abs()).collect()
    } else {
        jacobi_eigen(&(w.transpose() * w))
            .values
            .iter()
            .map(|v| v.max(0.0).sqrt())
            .collect()
    };
    sv.sort_by(|a, b| b.total_cmp(a));
    sv[1]
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightDiagnostics {
    /// Largest `|row sum - 1|`.
    pub max_row_residual: f64,
    /// Largest `|column sum - 1|`.
    pub max_col_residual: f64,
    pub min_entry: f64,
    pub symmetric: bool,
    /// Entries nonzero off the graph, or zero on an edge.
    pub pattern_violations: Vec<(usize, usize)>,
    /// Support graph of the off-diagonal entries is connected.
    pub irreducible: bool,
    /// Some diagonal entry is strictly positive.
    pub aperiodic: bool,
}

impl WeightDiagnostics {
    pub fn doubly_stochastic(&self, tol: f64) -> bool {
        self.max_row_residual <= tol && self.max_col_residual <= tol && self.min_entry >= 0.0
    }

    pub fn all_pass(&self, tol: f64) -> bool {
        self.doubly_stochastic(tol) && self.pattern_violations.is_empty() && self.irreducible && self.aperiodic
    }
}

impl fmt::Display for WeightDiagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "row residual {:.3e}, column residual {:.3e}, min entry {:.3e}, {} pattern violations, irreducible={}, aperiodic={}",
            self.max_row_residual,
            self.max_col_residual,
            self.min_entry,
            self.pattern_violations.len(),
            self.irreducible,
            self.aperiodic
        )
    }
}

pub fn verify_weight_matrix(w: &Matrix, graph: &CommGraph) -> WeightDiagnostics {
    let n = w.nrows();
    let mut max_row: f64 = 0.0;
    let mut max_col: f64 = 0.0;
    for i in 0..n {
        max_row = max_row.max((w.row(i).sum() - 1.0).abs());
        max_col = max_col.max((w.column(i).sum() - 1.0).abs());
    }
    let mut pattern_violations = Vec::new();
    let mut support = Vec::new();
    for j in 0..n {
        for k in 0..n {
            if j == k {
                continue;
            }
            let nz = w[(j, k)] != 0.0;
            if nz != graph.has_edge(j, k) {
                pattern_violations.push((j, k));
            }
            if nz && j < k {
                support.push((j, k));
            }
        }
    }
    let irreducible = CommGraph::unchecked(n.max(1), support)
        .map(|g| g.is_connected())
        .unwrap_or(false);
    WeightDiagnostics {
        max_row_residual: max_row,
        max_col_residual: max_col,
        min_entry: w.iter().cloned().fold(f64::INFINITY, f64::min),
        symmetric: (w - w.transpose()).amax() <= 1e-14,
        pattern_violations,
        irreducible,
        aperiodic: (0..n).any(|i| w[(i, i)] > 0.0),
    }
}

/// Random connected graph: a random spanning tree plus extra edges with
/// probability `p`.
pub fn random_connected_graph<R: rand::Rng>(n: usize, p: f64, rng: &mut R) -> CommGraph {
    let mut edges = Vec::new();
    for i in 1..n {
        edges.push((rng.random_range(0..i), i));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    CommGraph::new(n, edges).expect("spanning tree keeps the graph connected")
}

//! Dense primal-dual interior-point method for convex quadratic cone programs
//!
//! ```text
//!   minimize   ½ xᵀPx + qᵀx
//!   subject to Gx + s = h,  Ax = b,  s ∈ K
//! ```
//!
//! `K` is a nonnegative orthant followed by second-order cones and PSD cones,
//! in that order. PSD blocks use the scaled lower-triangle vectorisation
//! (off-diagonals times √2) so that the Euclidean inner product of two blocks
//! equals the trace inner product of the matrices.
//!
//! Steps use Nesterov–Todd scaling and Mehrotra's predictor-corrector. The
//! reduced Newton system `[[P + G̃ᵀG̃, Aᵀ], [A, 0]]` with `G̃ = W⁻ᵀG` is solved
//! by LU with a tiny regularisation and iterative refinement against the
//! unregularised matrix.

use nalgebra::{Cholesky, DVectorView};

use crate::linalg::{jacobi_eigen, Matrix, Vector};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConeDims {
    pub nonneg: usize,
    /// Dimension of each second-order cone, scalar part first.
    pub soc: Vec<usize>,
    /// Order of each PSD cone.
    pub psd: Vec<usize>,
}

impl ConeDims {
    pub fn total(&self) -> usize {
        self.nonneg + self.soc.iter().sum::<usize>() + self.psd.iter().map(|&n| svec_len(n)).sum::<usize>()
    }

    pub fn degree(&self) -> usize {
        self.nonneg + self.soc.len() + self.psd.iter().sum::<usize>()
    }

    fn blocks(&self) -> Vec<Block> {
        let mut out = Vec::with_capacity(self.soc.len() + self.psd.len());
        let mut start = self.nonneg;
        for &d in &self.soc {
            out.push(Block { kind: BlockKind::Soc, start, len: d });
            start += d;
        }
        for &n in &self.psd {
            let len = svec_len(n);
            out.push(Block { kind: BlockKind::Psd(n), start, len });
            start += len;
        }
        out
    }

    /// Identity element `e` of the cone.
    pub fn identity(&self) -> Vector {
        let mut e = Vector::zeros(self.total());
        for i in 0..self.nonneg {
            e[i] = 1.0;
        }
        for b in self.blocks() {
            match b.kind {
                BlockKind::Soc => e[b.start] = 1.0,
                BlockKind::Psd(n) => {
                    let id = svec(&Matrix::identity(n, n));
                    e.rows_mut(b.start, b.len).copy_from(&id);
                }
            }
        }
        e
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BlockKind {
    Soc,
    Psd(usize),
}

#[derive(Debug, Clone, Copy)]
struct Block {
    kind: BlockKind,
    start: usize,
    len: usize,
}

pub fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Lower triangle, column by column, off-diagonals scaled by √2.
pub fn svec(m: &Matrix) -> Vector {
    let n = m.nrows();
    let mut out = Vector::zeros(svec_len(n));
    let mut k = 0;
    for j in 0..n {
        for i in j..n {
            out[k] = if i == j {
                m[(i, i)]
            } else {
                std::f64::consts::SQRT_2 * 0.5 * (m[(i, j)] + m[(j, i)])
            };
            k += 1;
        }
    }
    out
}

pub fn smat(v: DVectorView<'_, f64>, n: usize) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        for i in j..n {
            if i == j {
                m[(i, i)] = v[k];
            } else {
                let x = v[k] * std::f64::consts::FRAC_1_SQRT_2;
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
            k += 1;
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicQp {
    pub p: Matrix,
    pub q: Vector,
    pub g: Matrix,
    pub h: Vector,
    pub a: Matrix,
    pub b: Vector,
    pub dims: ConeDims,
}

impl ConicQp {
    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, x: &Vector) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }

    fn check(&self) {
        let n = self.n();
        assert_eq!(self.p.shape(), (n, n), "P shape");
        assert_eq!(self.g.ncols(), n, "G columns");
        assert_eq!(self.g.nrows(), self.h.len(), "G rows vs h");
        assert_eq!(self.g.nrows(), self.dims.total(), "G rows vs cone");
        assert_eq!(self.a.ncols(), n, "A columns");
        assert_eq!(self.a.nrows(), self.b.len(), "A rows vs b");
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IpmSettings {
    pub max_iters: usize,
    /// Relative tolerance on primal and dual residuals.
    pub feas_tol: f64,
    /// Relative tolerance on the duality gap `sᵀz`.
    pub gap_tol: f64,
    /// Stop with a primal infeasibility certificate when
    /// `‖Aᵀy + Gᵀz‖ <= infeas_tol · (-(bᵀy + hᵀz))`.
    pub infeas_tol: f64,
    pub step_fraction: f64,
    pub regularization: f64,
    pub refine_steps: usize,
}

impl Default for IpmSettings {
    fn default() -> Self {
        Self {
            max_iters: 100,
            feas_tol: 1e-9,
            gap_tol: 1e-9,
            infeas_tol: 1e-9,
            step_fraction: 0.99,
            regularization: 1e-13,
            refine_steps: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IpmStatus {
    Optimal,
    /// Dual ray found: `Aᵀy + Gᵀz ≈ 0`, `bᵀy + hᵀz < 0`, `z ∈ K`.
    PrimalInfeasible,
    MaxIterations,
    /// Step length collapsed or a factorisation failed.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct IpmResult {
    pub x: Vector,
    pub s: Vector,
    pub y: Vector,
    pub z: Vector,
    pub status: IpmStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub objective: f64,
}

impl IpmResult {
    /// Largest of the relative residuals and gap, a single optimality measure.
    pub fn accuracy(&self) -> f64 {
        self.primal_residual.max(self.dual_residual).max(self.gap)
    }
}

enum BlockScaling {
    /// Symmetric `W` with its inverse.
    Soc { w: Matrix, winv: Matrix },
    /// `W(X) = RᵀXR` as a matrix on svec coordinates; `lam` are the
    /// eigenvalues of the scaled point.
    Psd { w: Matrix, winv: Matrix, lam: Vec<f64> },
}

struct Scaling {
    d: Vector,
    blocks: Vec<(Block, BlockScaling)>,
    lambda: Vector,
}

#[derive(Clone, Copy)]
enum Op {
    W,
    Wt,
    Winv,
    WinvT,
}

impl Scaling {
    fn compute(dims: &ConeDims, s: &Vector, z: &Vector) -> Option<Self> {
        let l = dims.nonneg;
        let mut d = Vector::zeros(l);
        let mut lambda = Vector::zeros(s.len());
        for i in 0..l {
            d[i] = (s[i] / z[i]).sqrt();
            lambda[i] = (s[i] * z[i]).sqrt();
        }
        let mut blocks = Vec::new();
        for b in dims.blocks() {
            let sb = s.rows(b.start, b.len).into_owned();
            let zb = z.rows(b.start, b.len).into_owned();
            let sc = match b.kind {
                BlockKind::Soc => soc_scaling(&sb, &zb)?,
                BlockKind::Psd(n) => psd_scaling(&sb, &zb, n)?,
            };
            let lam_b = match &sc {
                BlockScaling::Soc { w, .. } => w * &zb,
                BlockScaling::Psd { lam, .. } => svec(&Matrix::from_diagonal(&Vector::from_vec(lam.clone()))),
            };
            lambda.rows_mut(b.start, b.len).copy_from(&lam_b);
            blocks.push((b, sc));
        }
        Some(Self { d, blocks, lambda })
    }

    fn apply(&self, op: Op, v: &Vector) -> Vector {
        let mut out = v.clone();
        for i in 0..self.d.len() {
            out[i] = match op {
                Op::W | Op::Wt => v[i] * self.d[i],
                Op::Winv | Op::WinvT => v[i] / self.d[i],
            };
        }
        for (b, sc) in &self.blocks {
            let vb = v.rows(b.start, b.len);
            let r = match (sc, op) {
                (BlockScaling::Soc { w, .. }, Op::W | Op::Wt) => w * vb,
                (BlockScaling::Soc { winv, .. }, Op::Winv | Op::WinvT) => winv * vb,
                (BlockScaling::Psd { w, .. }, Op::W) => w * vb,
                (BlockScaling::Psd { w, .. }, Op::Wt) => w.tr_mul(&vb),
                (BlockScaling::Psd { winv, .. }, Op::Winv) => winv * vb,
                (BlockScaling::Psd { winv, .. }, Op::WinvT) => winv.tr_mul(&vb),
            };
            out.rows_mut(b.start, b.len).copy_from(&r);
        }
        out
    }

    /// `W⁻ᵀ G`, applied block row by block row.
    fn scale_rows(&self, g: &Matrix) -> Matrix {
        let mut out = g.clone();
        for i in 0..self.d.len() {
            let di = self.d[i];
            out.row_mut(i).scale_mut(1.0 / di);
        }
        for (b, sc) in &self.blocks {
            let gb = g.rows(b.start, b.len);
            let r = match sc {
                BlockScaling::Soc { winv, .. } => winv * gb,
                BlockScaling::Psd { winv, .. } => winv.tr_mul(&gb),
            };
            out.rows_mut(b.start, b.len).copy_from(&r);
        }
        out
    }

    /// Solves `λ ∘ x = r` for `x`.
    fn lambda_div(&self, r: &Vector) -> Vector {
        let mut out = r.clone();
        for i in 0..self.d.len() {
            out[i] = r[i] / self.lambda[i];
        }
        for (b, sc) in &self.blocks {
            let rb = r.rows(b.start, b.len);
            let x = match sc {
                BlockScaling::Soc { .. } => {
                    let lam = self.lambda.rows(b.start, b.len);
                    let l0 = lam[0];
                    let l1 = lam.rows(1, b.len - 1);
                    let r1 = rb.rows(1, b.len - 1);
                    let det = l0 * l0 - l1.norm_squared();
                    let x0 = (l0 * rb[0] - l1.dot(&r1)) / det;
                    let mut x = Vector::zeros(b.len);
                    x[0] = x0;
                    x.rows_mut(1, b.len - 1).copy_from(&((r1 - l1 * x0) / l0));
                    x
                }
                BlockScaling::Psd { lam, .. } => {
                    let n = lam.len();
                    let rm = smat(rb, n);
                    let xm = Matrix::from_fn(n, n, |i, j| 2.0 * rm[(i, j)] / (lam[i] + lam[j]));
                    svec(&xm)
                }
            };
            out.rows_mut(b.start, b.len).copy_from(&x);
        }
        out
    }
}

fn soc_scaling(s: &Vector, z: &Vector) -> Option<BlockScaling> {
    let k = s.len();
    // factored to avoid cancellation near the boundary
    let (ns, nz) = (s.rows(1, k - 1).norm(), z.rows(1, k - 1).norm());
    let sjs = (s[0] - ns) * (s[0] + ns);
    let zjz = (z[0] - nz) * (z[0] + nz);
    if !(sjs > 0.0 && zjz > 0.0 && s[0] > 0.0 && z[0] > 0.0) {
        return None;
    }
    let sn = sjs.sqrt();
    let zn = zjz.sqrt();
    let sbar = s / sn;
    let zbar = z / zn;
    let gamma = ((1.0 + zbar.dot(&sbar)) / 2.0).sqrt();
    let mut wbar = sbar.clone();
    wbar[0] += zbar[0];
    for i in 1..k {
        wbar[i] -= zbar[i];
    }
    wbar /= 2.0 * gamma;
    let beta = (sn / zn).sqrt();
    let mut v = wbar.clone();
    v[0] += 1.0;
    v /= (2.0 * (wbar[0] + 1.0)).sqrt();
    let mut j = Matrix::identity(k, k);
    for i in 1..k {
        j[(i, i)] = -1.0;
    }
    let vvt = &v * v.transpose();
    let w = (&vvt * 2.0 - &j) * beta;
    let jv = &j * &v;
    let winv = (&jv * jv.transpose() * 2.0 - &j) / beta;
    Some(BlockScaling::Soc { w, winv })
}

fn psd_scaling(s: &Vector, z: &Vector, n: usize) -> Option<BlockScaling> {
    let sm = smat(s.rows(0, s.len()), n);
    let zm = smat(z.rows(0, z.len()), n);
    let ls = Cholesky::new(sm)?.l();
    let lz = Cholesky::new(zm)?.l();
    let svd = (lz.transpose() * &ls).svd(true, true);
    let v = svd.v_t?.transpose();
    let lam: Vec<f64> = svd.singular_values.iter().cloned().collect();
    if lam.iter().any(|l| !(*l > 0.0)) {
        return None;
    }
    let inv_sqrt = Matrix::from_diagonal(&Vector::from_iterator(n, lam.iter().map(|l| 1.0 / l.sqrt())));
    let r = &ls * v * inv_sqrt;
    let rinv = r.clone().try_inverse()?;
    let m = svec_len(n);
    let mut w = Matrix::zeros(m, m);
    let mut winv = Matrix::zeros(m, m);
    for k in 0..m {
        let mut e = Vector::zeros(m);
        e[k] = 1.0;
        let ek = smat(e.rows(0, m), n);
        w.set_column(k, &svec(&(r.transpose() * &ek * &r)));
        winv.set_column(k, &svec(&(rinv.transpose() * &ek * &rinv)));
    }
    Some(BlockScaling::Psd { w, winv, lam })
}

/// Jordan product `u ∘ v` for the cone `dims`.
pub fn jordan_product(dims: &ConeDims, u: &Vector, v: &Vector) -> Vector {
    let mut out = u.component_mul(v);
    for b in dims.blocks() {
        let ub = u.rows(b.start, b.len);
        let vb = v.rows(b.start, b.len);
        let r = match b.kind {
            BlockKind::Soc => {
                let mut r = Vector::zeros(b.len);
                r[0] = ub.dot(&vb);
                for i in 1..b.len {
                    r[i] = ub[0] * vb[i] + vb[0] * ub[i];
                }
                r
            }
            BlockKind::Psd(n) => {
                let um = smat(ub, n);
                let vm = smat(vb, n);
                svec(&((&um * &vm + &vm * &um) * 0.5))
            }
        };
        out.rows_mut(b.start, b.len).copy_from(&r);
    }
    out
}

/// Largest `α` with `x + α dx ∈ K`, assuming `x` is interior. `f64::INFINITY`
/// when the ray never leaves the cone.
pub fn max_step(dims: &ConeDims, x: &Vector, dx: &Vector) -> f64 {
    let mut alpha = f64::INFINITY;
    for i in 0..dims.nonneg {
        if dx[i] < 0.0 {
            alpha = alpha.min(-x[i] / dx[i]);
        }
    }
    for b in dims.blocks() {
        let xb = x.rows(b.start, b.len);
        let db = dx.rows(b.start, b.len);
        let a = match b.kind {
            BlockKind::Soc => soc_step(xb, db),
            BlockKind::Psd(n) => psd_step(xb, db, n),
        };
        alpha = alpha.min(a);
    }
    alpha
}

fn soc_step(x: DVectorView<'_, f64>, d: DVectorView<'_, f64>) -> f64 {
    let k = x.len();
    let jdot = |u: &DVectorView<'_, f64>, v: &DVectorView<'_, f64>| u[0] * v[0] - u.rows(1, k - 1).dot(&v.rows(1, k - 1));
    // f(α) = c + bα + aα², positive at 0; first positive root is the boundary
    let a = jdot(&d, &d);
    let b = 2.0 * jdot(&x, &d);
    let c = jdot(&x, &x);
    let mut alpha = f64::INFINITY;
    if a == 0.0 {
        if b < 0.0 {
            alpha = -c / b;
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            let qq = -0.5 * (b + b.signum() * sq);
            for r in [qq / a, if qq != 0.0 { c / qq } else { f64::INFINITY }] {
                if r > 0.0 {
                    alpha = alpha.min(r);
                }
            }
        }
    }
    if d[0] < 0.0 {
        alpha = alpha.min(-x[0] / d[0]);
    }
    alpha
}

fn psd_step(x: DVectorView<'_, f64>, d: DVectorView<'_, f64>, n: usize) -> f64 {
    let Some(chol) = Cholesky::new(smat(x, n)) else {
        return 0.0;
    };
    let l = chol.l();
    let dm = smat(d, n);
    let Some(linv) = l.try_inverse() else {
        return 0.0;
    };
    let m = &linv * dm * linv.transpose();
    let lmin = jacobi_eigen(&m).min_value();
    if lmin < 0.0 {
        -1.0 / lmin
    } else {
        f64::INFINITY
    }
}

/// Shifts `x` along `e` so that every block sits at least one unit inside the
/// cone.
fn push_interior(dims: &ConeDims, x: &mut Vector) {
    for i in 0..dims.nonneg {
        if x[i] < 1.0 {
            x[i] = 1.0;
        }
    }
    for b in dims.blocks() {
        match b.kind {
            BlockKind::Soc => {
                let tail = x.rows(b.start + 1, b.len - 1).norm();
                if x[b.start] - tail < 1.0 {
                    x[b.start] = tail + 1.0;
                }
            }
            BlockKind::Psd(n) => {
                let m = smat(x.rows(b.start, b.len), n);
                let lmin = jacobi_eigen(&m).min_value();
                if lmin < 1.0 {
                    let shifted = m + Matrix::identity(n, n) * (1.0 - lmin);
                    x.rows_mut(b.start, b.len).copy_from(&svec(&shifted));
                }
            }
        }
    }
}

/// Symmetrically equilibrated and regularized KKT factorization, refined
/// against the unregularized matrix.
struct Kkt {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    k: Matrix,
    d: Vector,
    n: usize,
    refine: usize,
}

impl Kkt {
    fn new(h: &Matrix, a: &Matrix, reg: f64, refine: usize) -> Option<Self> {
        let n = h.nrows();
        let p = a.nrows();
        let mut d = Vector::from_iterator(n + p, (0..n).map(|i| 1.0 / h[(i, i)].abs().max(1.0).sqrt()).chain((0..p).map(|_| 1.0)));
        for r in 0..p {
            let m = (0..n).fold(0.0f64, |acc, c| acc.max((a[(r, c)] * d[c]).abs()));
            if m > 0.0 {
                d[n + r] = 1.0 / m;
            }
        }
        let mut k = Matrix::zeros(n + p, n + p);
        k.view_mut((0, 0), (n, n)).copy_from(h);
        k.view_mut((n, 0), (p, n)).copy_from(a);
        k.view_mut((0, n), (n, p)).copy_from(&a.transpose());
        for i in 0..n + p {
            for j in 0..n + p {
                k[(i, j)] *= d[i] * d[j];
            }
        }
        let mut kr = k.clone();
        for i in 0..n {
            kr[(i, i)] += reg;
        }
        for i in n..(n + p) {
            kr[(i, i)] -= reg;
        }
        let lu = kr.lu();
        if !lu.is_invertible() {
            return None;
        }
        Some(Self { lu, k, d, n, refine })
    }

    fn solve(&self, rx: &Vector, ry: &Vector) -> Option<(Vector, Vector)> {
        let rhs = crate::linalg::vconcat(&[rx, ry]).component_mul(&self.d);
        let mut sol = self.lu.solve(&rhs)?;
        for _ in 0..self.refine {
            let res = &rhs - &self.k * &sol;
            sol += self.lu.solve(&res)?;
        }
        sol.component_mul_assign(&self.d);
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let p = ry.len();
        Some((sol.rows(0, self.n).into_owned(), sol.rows(self.n, p).into_owned()))
    }
}

struct Direction {
    dx: Vector,
    dy: Vector,
    dz: Vector,
    ds: Vector,
}

fn newton(
    sc: &Scaling,
    gt: &Matrix,
    kkt: &Kkt,
    res: (&Vector, &Vector, &Vector),
    u: &Vector,
) -> Option<Direction> {
    let (rx, ry, rz) = res;
    // (P + G̃ᵀG̃) dx + Aᵀ dy = -rx - G̃ᵀ(u + W⁻ᵀ rz),  A dx = -ry
    let t = u + sc.apply(Op::WinvT, rz);
    let bx = -rx - gt.tr_mul(&t);
    let by = -ry;
    let (dx, dy) = kkt.solve(&bx, &by)?;
    let wdz = gt * &dx + &t;
    let dz = sc.apply(Op::Winv, &wdz);
    let ds = sc.apply(Op::Wt, &(u - &wdz));
    Some(Direction { dx, dy, dz, ds })
}

/// Solves the cone program. `x0` seeds the primal point; slacks are pushed
/// into the cone interior and `z` starts at the identity element.
pub fn solve_conic(prob: &ConicQp, settings: &IpmSettings, x0: Option<&Vector>) -> IpmResult {
    prob.check();
    let n = prob.n();
    let dims = &prob.dims;
    let degree = dims.degree();
    let mut x = x0.cloned().unwrap_or_else(|| Vector::zeros(n));
    let mut y = Vector::zeros(prob.a.nrows());
    let mut s = &prob.h - &prob.g * &x;
    push_interior(dims, &mut s);
    let mut z = dims.identity();
    let e = dims.identity();

    let bnorm = 1.0 + prob.b.amax();
    let hnorm = 1.0 + prob.h.amax();
    let qnorm = 1.0 + prob.q.amax();

    let mut status = IpmStatus::MaxIterations;
    let mut iterations = 0;
    let (mut pres, mut dres, mut gap_rel);
    // late iterates can lose accuracy in the scaling; keep the best one seen
    let mut best: Option<(f64, Vector, Vector, Vector, Vector, [f64; 3])> = None;
    loop {
        let rx = &prob.p * &x + &prob.q + prob.a.tr_mul(&y) + prob.g.tr_mul(&z);
        let ry = &prob.a * &x - &prob.b;
        let rz = &prob.g * &x + &s - &prob.h;
        let gap = s.dot(&z);
        let pobj = prob.objective(&x);
        pres = (ry.amax() / bnorm).max(rz.amax() / hnorm);
        dres = rx.amax() / qnorm;
        gap_rel = if degree == 0 { 0.0 } else { gap / (1.0 + pobj.abs()) };
        if pres <= settings.feas_tol && dres <= settings.feas_tol && gap_rel <= settings.gap_tol {
            status = IpmStatus::Optimal;
            break;
        }
        let merit = pres.max(dres).max(gap_rel);
        if best.as_ref().is_none_or(|b| merit < b.0) {
            best = Some((merit, x.clone(), s.clone(), y.clone(), z.clone(), [pres, dres, gap_rel]));
        }
        let tau = -(prob.b.dot(&y) + prob.h.dot(&z));
        if tau > 0.0 {
            let ray = prob.a.tr_mul(&y) + prob.g.tr_mul(&z);
            if ray.norm() <= settings.infeas_tol * tau && tau > 1e3 * qnorm {
                status = IpmStatus::PrimalInfeasible;
                break;
            }
        }
        if iterations >= settings.max_iters {
            break;
        }
        iterations += 1;

        let Some(sc) = Scaling::compute(dims, &s, &z) else {
            status = IpmStatus::Stalled;
            break;
        };
        let gt = sc.scale_rows(&prob.g);
        let h = &prob.p + gt.tr_mul(&gt);
        let Some(kkt) = Kkt::new(&h, &prob.a, settings.regularization, settings.refine_steps) else {
            status = IpmStatus::Stalled;
            break;
        };
        let res = (&rx, &ry, &rz);
        let mu = if degree == 0 { 0.0 } else { gap / degree as f64 };

        // predictor
        let u_aff = -&sc.lambda;
        let Some(aff) = newton(&sc, &gt, &kkt, res, &u_aff) else {
            status = IpmStatus::Stalled;
            break;
        };
        let a_aff = max_step(dims, &s, &aff.ds).min(max_step(dims, &z, &aff.dz)).min(1.0);
        let sigma = (1.0 - a_aff).powi(3);

        // corrector
        let ds_t = sc.apply(Op::WinvT, &aff.ds);
        let dz_t = sc.apply(Op::W, &aff.dz);
        let rc = -jordan_product(dims, &sc.lambda, &sc.lambda) - jordan_product(dims, &ds_t, &dz_t) + &e * (sigma * mu);
        let u = sc.lambda_div(&rc);
        let Some(dir) = newton(&sc, &gt, &kkt, res, &u) else {
            status = IpmStatus::Stalled;
            break;
        };
        let amax = max_step(dims, &s, &dir.ds).min(max_step(dims, &z, &dir.dz));
        let alpha = (settings.step_fraction * amax).min(1.0);
        if !(alpha > 1e-14) {
            status = IpmStatus::Stalled;
            break;
        }
        x += &dir.dx * alpha;
        y += &dir.dy * alpha;
        z += &dir.dz * alpha;
        s += &dir.ds * alpha;
    }
    if status != IpmStatus::Optimal && status != IpmStatus::PrimalInfeasible {
        if let Some((merit, bx, bs, by, bz, m)) = best {
            if merit < pres.max(dres).max(gap_rel) {
                (x, s, y, z) = (bx, bs, by, bz);
                [pres, dres, gap_rel] = m;
            }
        }
    }
    let objective = prob.objective(&x);
    IpmResult {
        x,
        s,
        y,
        z,
        status,
        iterations,
        primal_residual: pres,
        dual_residual: dres,
        gap: gap_rel,
        objective,
    }
}

//! Euclidean projections onto the sets that make up agent feasible regions,
//! and Dykstra's method for their intersections.

use thiserror::Error;

use crate::linalg::{jacobi_eigen, symmetrize, Matrix, Vector};
use crate::problem::{ConvexSetSpec, PsdLayout};

/// Componentwise clamp onto `[lower, upper]`.
pub fn project_box(x: &Vector, lower: &Vector, upper: &Vector) -> Vector {
    Vector::from_fn(x.len(), |i, _| x[i].max(lower[i]).min(upper[i]))
}

/// Projection onto `{(u, s) : ‖u‖ <= s}`.
pub fn project_soc(u: &Vector, s: f64) -> (Vector, f64) {
    let nu = u.norm();
    if nu <= s {
        return (u.clone(), s);
    }
    if nu <= -s {
        return (Vector::zeros(u.len()), 0.0);
    }
    let a = 0.5 * (nu + s);
    (u * (a / nu), a)
}

/// Nearest PSD matrix in Frobenius norm. The input is symmetrized first.
pub fn project_psd(m: &Matrix) -> Matrix {
    let eig = jacobi_eigen(m);
    if eig.min_value() >= 0.0 {
        return symmetrize(m);
    }
    symmetrize(&eig.reassemble(|l| l.max(0.0)))
}

/// Nearest point of a PSD slice's coordinate block, see [`PsdLayout`].
pub fn project_psd_coordinates(layout: &PsdLayout, vals: &[f64]) -> Vec<f64> {
    match *layout {
        PsdLayout::Symmetric { order: n } => {
            // the skew part is unconstrained and orthogonal to the symmetric part
            let m = Matrix::from_fn(n, n, |i, j| vals[i * n + j]);
            let skew = (&m - m.transpose()) * 0.5;
            let p = project_psd(&m) + skew;
            (0..n * n).map(|k| p[(k / n, k % n)]).collect()
        }
        PsdLayout::HermitianEmbedding { order: n } => {
            let re = Matrix::from_fn(n, n, |i, j| vals[i * n + j]);
            let im = Matrix::from_fn(n, n, |i, j| vals[n * n + i * n + j]);
            let re_free = (&re - re.transpose()) * 0.5;
            let im_free = (&im + im.transpose()) * 0.5;
            let emb = crate::problem::embed_psd_coordinates(layout, vals);
            let p = project_psd(&emb);
            // the projection of a complex-structured matrix keeps the structure
            let a = (p.view((0, 0), (n, n)) + p.view((n, n), (n, n))) * 0.5;
            let b = (p.view((0, n), (n, n)) - p.view((n, 0), (n, n))) * 0.5;
            let re_new = a + re_free;
            let im_new = b + im_free;
            let mut out = vec![0.0; 2 * n * n];
            for i in 0..n {
                for j in 0..n {
                    out[i * n + j] = re_new[(i, j)];
                    out[n * n + i * n + j] = im_new[(i, j)];
                }
            }
            out
        }
    }
}

/// A set with a cheap exact projection. Index lists refer to coordinates of
/// the ambient vector.
#[derive(Debug, Clone, PartialEq)]
pub enum ProjectionTarget {
    Box { lower: Vector, upper: Vector },
    /// `aᵀx <= b`.
    Halfspace { a: Vector, b: f64 },
    /// `Cx = d`, assumed consistent.
    Affine { c: Matrix, d: Vector },
    /// `{x : T x[indices] + offset ∈ SOC}` with `T` orthogonal, scalar last.
    Soc { indices: Vec<usize>, transform: Matrix, offset: Vector },
    /// `‖x[indices] - center‖ <= radius`.
    Ball { indices: Vec<usize>, center: Vector, radius: f64 },
    Psd { indices: Vec<usize>, layout: PsdLayout },
    Intersection(Vec<ProjectionTarget>),
}

impl ProjectionTarget {
    pub fn project(&self, x: &Vector) -> Vector {
        match self {
            ProjectionTarget::Box { lower, upper } => project_box(x, lower, upper),
            ProjectionTarget::Halfspace { a, b } => {
                let r = a.dot(x) - b;
                if r <= 0.0 {
                    x.clone()
                } else {
                    x - a * (r / a.norm_squared())
                }
            }
            ProjectionTarget::Affine { c, d } => {
                let r = c * x - d;
                let gram = c * c.transpose();
                let lam = gram
                    .pseudo_inverse(1e-12)
                    .expect("pseudo-inverse of a Gram matrix")
                    * r;
                x - c.transpose() * lam
            }
            ProjectionTarget::Soc { indices, transform, offset } => {
                let k = indices.len();
                let local = Vector::from_iterator(k, indices.iter().map(|&i| x[i]));
                let y = transform * local + offset;
                let (u, s) = project_soc(&y.rows(0, k - 1).into_owned(), y[k - 1]);
                let mut yp = u.push(s);
                yp -= offset;
                let back = transform.tr_mul(&yp);
                let mut out = x.clone();
                for (j, &i) in indices.iter().enumerate() {
                    out[i] = back[j];
                }
                out
            }
            ProjectionTarget::Ball { indices, center, radius } => {
                let k = indices.len();
                let local = Vector::from_iterator(k, indices.iter().map(|&i| x[i])) - center;
                let nrm = local.norm();
                if nrm <= *radius {
                    return x.clone();
                }
                let p = center + local * (radius / nrm);
                let mut out = x.clone();
                for (j, &i) in indices.iter().enumerate() {
                    out[i] = p[j];
                }
                out
            }
            ProjectionTarget::Psd { indices, layout } => {
                let vals: Vec<f64> = indices.iter().map(|&i| x[i]).collect();
                let p = project_psd_coordinates(layout, &vals);
                let mut out = x.clone();
                for (j, &i) in indices.iter().enumerate() {
                    out[i] = p[j];
                }
                out
            }
            ProjectionTarget::Intersection(parts) => {
                dykstra_project(x, parts, &DykstraConfig::default())
                    .map(|r| r.point)
                    .unwrap_or_else(|e| e.best)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DykstraConfig {
    pub max_sweeps: usize,
    pub tol: f64,
}

impl Default for DykstraConfig {
    fn default() -> Self {
        Self {
            max_sweeps: 5_000,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DykstraResult {
    pub point: Vector,
    /// Change over the final sweep.
    pub residual: f64,
    pub sweeps: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("Dykstra did not converge in {sweeps} sweeps (residual {residual:e})")]
pub struct DykstraError {
    pub best: Vector,
    pub residual: f64,
    pub sweeps: usize,
}

/// Dykstra's alternating projections onto the intersection of `targets`.
pub fn dykstra_project(
    point: &Vector,
    targets: &[ProjectionTarget],
    config: &DykstraConfig,
) -> Result<DykstraResult, DykstraError> {
    if targets.len() == 1 {
        return Ok(DykstraResult {
            point: targets[0].project(point),
            residual: 0.0,
            sweeps: 1,
        });
    }
    let mut x = point.clone();
    let mut incr: Vec<Vector> = vec![Vector::zeros(point.len()); targets.len()];
    let mut residual = f64::INFINITY;
    for sweep in 1..=config.max_sweeps {
        let start = x.clone();
        for (t, p) in targets.iter().zip(incr.iter_mut()) {
            let y = &x + &*p;
            let nx = t.project(&y);
            *p = y - &nx;
            x = nx;
        }
        residual = (&x - &start).norm();
        if residual <= config.tol * (1.0 + x.norm()) {
            return Ok(DykstraResult { point: x, residual, sweeps: sweep });
        }
    }
    Err(DykstraError {
        best: x,
        residual,
        sweeps: config.max_sweeps,
    })
}

/// Splits a local set into projection targets: the box, each linear row, the
/// equality block, and every cone slice.
pub fn targets_for_set(set: &ConvexSetSpec) -> Vec<ProjectionTarget> {
    let mut out = vec![ProjectionTarget::Box {
        lower: set.lower.clone(),
        upper: set.upper.clone(),
    }];
    for r in 0..set.ineq.rows() {
        out.push(ProjectionTarget::Halfspace {
            a: set.ineq.matrix.row(r).transpose(),
            b: set.ineq.rhs[r],
        });
    }
    if set.eq.rows() > 0 {
        out.push(ProjectionTarget::Affine {
            c: set.eq.matrix.clone(),
            d: set.eq.rhs.clone(),
        });
    }
    for s in &set.soc {
        let k = s.cone_dim();
        if s.transform.is_square() && (s.transform.tr_mul(&s.transform) - Matrix::identity(k, k)).amax() < 1e-12 {
            out.push(ProjectionTarget::Soc {
                indices: s.indices.clone(),
                transform: s.transform.clone(),
                offset: s.offset.clone(),
            });
        } else {
            // ball form: identity head, zero last row, constant radius
            let m = s.indices.len();
            let head = s.transform.rows(0, k - 1);
            let is_ball = k == m + 1
                && (head - Matrix::identity(m, m)).amax() < 1e-12
                && s.transform.row(k - 1).amax() == 0.0;
            assert!(is_ball, "cone slice is neither orthogonal nor a ball; no projection available");
            out.push(ProjectionTarget::Ball {
                indices: s.indices.clone(),
                center: -s.offset.rows(0, m).into_owned(),
                radius: s.offset[k - 1],
            });
        }
    }
    for p in &set.psd {
        out.push(ProjectionTarget::Psd {
            indices: p.indices.clone(),
            layout: p.layout,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_row_slice(xs)
    }

    #[test]
    fn box_examples() {
        let lo = v(&[0.0, 0.0]);
        assert_eq!(project_box(&v(&[2.0, -2.0]), &lo, &v(&[1.0, 1.0])), v(&[1.0, 0.0]));
        assert_eq!(project_box(&v(&[0.3, 0.7]), &lo, &v(&[1.0, 1.0])), v(&[0.3, 0.7]));
        assert_eq!(project_box(&v(&[0.5, 3.0]), &lo, &v(&[1.0, 2.0])), v(&[0.5, 2.0]));
    }

    #[test]
    fn soc_examples() {
        assert_eq!(project_soc(&v(&[3.0]), 4.0), (v(&[3.0]), 4.0));
        assert_eq!(project_soc(&v(&[1.0]), -2.0), (v(&[0.0]), 0.0));
        assert_eq!(project_soc(&v(&[1.0]), 0.0), (v(&[0.5]), 0.5));
    }

    #[test]
    fn psd_examples() {
        let d = Matrix::from_diagonal(&v(&[2.0, -3.0]));
        assert!((project_psd(&d) - Matrix::from_diagonal(&v(&[2.0, 0.0]))).amax() < 1e-14);
        let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!((project_psd(&a) - Matrix::from_element(2, 2, 0.5)).amax() < 1e-14);
        let s = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert!((project_psd(&s) - &s).amax() < 1e-10);
    }

    #[test]
    fn dykstra_examples() {
        let unit_box = ProjectionTarget::Box { lower: v(&[0.0, 0.0]), upper: v(&[1.0, 1.0]) };
        let half = ProjectionTarget::Halfspace { a: v(&[1.0, 1.0]), b: 1.0 };
        let targets = [unit_box.clone(), half];
        let r = dykstra_project(&v(&[2.0, 2.0]), &targets, &DykstraConfig::default()).unwrap();
        assert!((&r.point - v(&[0.5, 0.5])).amax() < 1e-8, "{}", r.point);
        let inside = v(&[0.2, 0.3]);
        let r = dykstra_project(&inside, &targets, &DykstraConfig::default()).unwrap();
        assert!((&r.point - &inside).amax() < 1e-14);
        let p = v(&[3.0, -1.0]);
        let r = dykstra_project(&p, std::slice::from_ref(&unit_box), &DykstraConfig::default()).unwrap();
        assert_eq!(r.point, unit_box.project(&p));
    }

    #[test]
    fn dykstra_reports_nonconvergence() {
        let targets = [
            ProjectionTarget::Box { lower: v(&[0.0, 0.0]), upper: v(&[1.0, 1.0]) },
            ProjectionTarget::Halfspace { a: v(&[1.0, 1.0]), b: 1.0 },
        ];
        let cfg = DykstraConfig { max_sweeps: 1, tol: 1e-15 };
        let e = dykstra_project(&v(&[5.0, 0.3]), &targets, &cfg).unwrap_err();
        assert_eq!(e.sweeps, 1);
        assert!(e.residual > 0.0);
    }

    #[test]
    fn hermitian_psd_projection_keeps_structure() {
        // Re W = [[1, 0], [0, -1]], Im W = [[0, 2], [-2, 0]] plus free parts
        let vals = [1.0, 0.3, -0.3, -1.0, 0.5, 2.0, -2.0, 0.5];
        let layout = PsdLayout::HermitianEmbedding { order: 2 };
        let p = project_psd_coordinates(&layout, &vals);
        let emb = crate::problem::embed_psd_coordinates(&layout, &p);
        assert!(jacobi_eigen(&emb).min_value() > -1e-10);
        let again = project_psd_coordinates(&layout, &p);
        for (a, b) in p.iter().zip(&again) {
            assert!((a - b).abs() < 1e-10);
        }
        // free parts untouched
        assert!((p[1] - 0.3).abs() < 1e-12 && (p[2] + 0.3).abs() < 1e-12);
        assert!((p[4] - 0.5).abs() < 1e-12 && (p[7] - 0.5).abs() < 1e-12);
    }

    fn vec_strategy(n: usize) -> impl Strategy<Value = Vector> {
        proptest::collection::vec(-5.0f64..5.0, n).prop_map(Vector::from_vec)
    }

    fn sym_strategy(n: usize) -> impl Strategy<Value = Matrix> {
        proptest::collection::vec(-3.0f64..3.0, n * n).prop_map(move |d| symmetrize(&Matrix::from_vec(n, n, d)))
    }

    fn soc_pair(u: &Vector) -> Vector {
        let k = u.len();
        let (a, s) = project_soc(&u.rows(0, k - 1).into_owned(), u[k - 1]);
        a.push(s)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn box_idempotent_nonexpansive(x in vec_strategy(4), y in vec_strategy(4)) {
            let lo = Vector::from_element(4, -1.0);
            let hi = Vector::from_element(4, 2.0);
            let px = project_box(&x, &lo, &hi);
            prop_assert!((project_box(&px, &lo, &hi) - &px).norm() <= 1e-9);
            prop_assert!((&px - project_box(&y, &lo, &hi)).norm() <= (&x - &y).norm() + 1e-9);
        }

        #[test]
        fn soc_idempotent_nonexpansive(x in vec_strategy(4), y in vec_strategy(4)) {
            let px = soc_pair(&x);
            let py = soc_pair(&y);
            prop_assert!(px.rows(0, 3).norm() <= px[3] + 1e-12);
            prop_assert!((soc_pair(&px) - &px).norm() <= 1e-9);
            prop_assert!((&px - &py).norm() <= (&x - &y).norm() + 1e-9);
        }

        #[test]
        fn soc_closed_form_is_nearest(x in vec_strategy(3), w in vec_strategy(3)) {
            // any cone member is at least as far from x as the projection
            let member = {
                let k = w.rows(0, 2).norm();
                let mut m = w.clone();
                m[2] = k + w[2].abs();
                m
            };
            let px = soc_pair(&x);
            prop_assert!((&x - &px).norm() <= (&x - member).norm() + 1e-9);
        }

        #[test]
        fn psd_idempotent_nonexpansive_nearest(a in sym_strategy(4), b in sym_strategy(4), c in sym_strategy(4)) {
            let pa = project_psd(&a);
            let pb = project_psd(&b);
            prop_assert!(jacobi_eigen(&pa).min_value() >= -1e-9);
            prop_assert!((project_psd(&pa) - &pa).norm() <= 1e-9);
            prop_assert!((&pa - &pb).norm() <= (&a - &b).norm() + 1e-9);
            let witness = &c * c.transpose();
            prop_assert!((&a - &pa).norm() <= (&a - witness).norm() + 1e-8);
        }

        #[test]
        fn halfspace_and_affine_idempotent_nonexpansive(x in vec_strategy(3), y in vec_strategy(3)) {
            let h = ProjectionTarget::Halfspace { a: Vector::from_vec(vec![1.0, -2.0, 0.5]), b: 0.7 };
            let a = ProjectionTarget::Affine {
                c: Matrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 0.0, 1.0, -1.0]),
                d: Vector::from_vec(vec![1.0, 0.0]),
            };
            for t in [h, a] {
                let px = t.project(&x);
                prop_assert!((t.project(&px) - &px).norm() <= 1e-9);
                prop_assert!((&px - t.project(&y)).norm() <= (&x - &y).norm() + 1e-9);
            }
        }
    }
}

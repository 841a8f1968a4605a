//! Riemannian submanifold geometry for Stiefel manifolds, Euclidean factors
//! and their products.
//!
//! Points and tangent vectors are stored as flat ambient buffers; a product
//! manifold concatenates its factors, so an iterate is a single allocation.
//! Stiefel factors are laid out column-major (`d x r`).

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Tolerance on `||X^T X - I||_F` for a valid Stiefel point.
pub const POINT_TOL: f64 = 1e-10;
/// Tolerance factor on `||X^T V + V^T X||_F` for a valid tangent vector.
pub const TANGENT_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub enum Manifold {
    /// St(d, r): d x r matrices with orthonormal columns, 1 <= r <= d.
    Stiefel { rows: usize, cols: usize },
    /// An open Euclidean factor of the given shape.
    Euclidean { shape: Vec<usize> },
    /// Product of factors, laid out as concatenated flat buffers.
    Product { factors: Vec<Manifold> },
}

impl Manifold {
    pub fn stiefel(rows: usize, cols: usize) -> Result<Self> {
        if cols == 0 || cols > rows {
            return Err(Error::InvalidParameter(format!(
                "Stiefel({rows}, {cols}) requires 1 <= r <= d"
            )));
        }
        Ok(Manifold::Stiefel { rows, cols })
    }

    pub fn euclidean(shape: &[usize]) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::InvalidParameter(
                "Euclidean shape must be non-empty with positive extents".into(),
            ));
        }
        Ok(Manifold::Euclidean { shape: shape.to_vec() })
    }

    pub fn product(factors: Vec<Manifold>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidParameter("product of zero factors".into()));
        }
        Ok(Manifold::Product { factors })
    }

    pub fn ambient_dim(&self) -> usize {
        match self {
            Manifold::Stiefel { rows, cols } => rows * cols,
            Manifold::Euclidean { shape } => shape.iter().product(),
            Manifold::Product { factors } => factors.iter().map(|f| f.ambient_dim()).sum(),
        }
    }

    /// Leaf factors with their offsets into the flat ambient buffer.
    pub fn leaves(&self) -> Vec<(&Manifold, std::ops::Range<usize>)> {
        let mut out = Vec::new();
        self.collect_leaves(0, &mut out);
        out
    }

    fn collect_leaves<'a>(
        &'a self,
        offset: usize,
        out: &mut Vec<(&'a Manifold, std::ops::Range<usize>)>,
    ) -> usize {
        match self {
            Manifold::Product { factors } => {
                let mut at = offset;
                for f in factors {
                    at = f.collect_leaves(at, out);
                }
                at
            }
            leaf => {
                let end = offset + leaf.ambient_dim();
                out.push((leaf, offset..end));
                end
            }
        }
    }

    /// Validates that `data` lies on the manifold.
    pub fn check_point(&self, data: &[f64]) -> Result<()> {
        self.check_len(data.len())?;
        for (leaf, range) in self.leaves() {
            let slice = &data[range];
            match leaf {
                Manifold::Stiefel { rows, cols } => {
                    let x = DMatrix::from_column_slice(*rows, *cols, slice);
                    let gram = x.transpose() * &x;
                    let dev = (&gram - DMatrix::identity(*cols, *cols)).norm();
                    if dev > POINT_TOL {
                        return Err(Error::Infeasible(format!(
                            "Stiefel orthonormality violated: ||X^T X - I|| = {dev:.3e}"
                        )));
                    }
                }
                _ => {
                    if slice.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Infeasible("non-finite Euclidean entry".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Validates that `v` is tangent at `x`.
    pub fn check_tangent(&self, x: &[f64], v: &[f64]) -> Result<()> {
        self.check_len(x.len())?;
        self.check_len(v.len())?;
        for (leaf, range) in self.leaves() {
            if let Manifold::Stiefel { rows, cols } = leaf {
                let xm = DMatrix::from_column_slice(*rows, *cols, &x[range.clone()]);
                let vm = DMatrix::from_column_slice(*rows, *cols, &v[range]);
                let sym = xm.transpose() * &vm + vm.transpose() * &xm;
                let bound = TANGENT_TOL * (1.0 + vm.norm());
                if sym.norm() > bound {
                    return Err(Error::Infeasible(format!(
                        "tangent violation ||X^T V + V^T X|| = {:.3e} > {:.3e}",
                        sym.norm(),
                        bound
                    )));
                }
            }
        }
        Ok(())
    }

    fn check_len(&self, len: usize) -> Result<()> {
        let expected = self.ambient_dim();
        if len != expected {
            return Err(Error::DimensionMismatch { expected, got: len });
        }
        Ok(())
    }

    /// Euclidean projection of an ambient vector onto the tangent space at `x`,
    /// written into `out`. For a Stiefel factor: V = xi - X sym(X^T xi).
    pub fn project_tangent(&self, x: &[f64], xi: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_len(x.len())?;
        self.check_len(xi.len())?;
        self.check_len(out.len())?;
        for (leaf, range) in self.leaves() {
            match leaf {
                Manifold::Stiefel { rows, cols } => {
                    let xm = DMatrix::from_column_slice(*rows, *cols, &x[range.clone()]);
                    let gm = DMatrix::from_column_slice(*rows, *cols, &xi[range.clone()]);
                    let xtg = xm.transpose() * &gm;
                    let sym = (&xtg + xtg.transpose()) * 0.5;
                    let v = &gm - &xm * sym;
                    out[range].copy_from_slice(v.as_slice());
                }
                _ => out[range.clone()].copy_from_slice(&xi[range]),
            }
        }
        Ok(())
    }

    /// QR retraction (sign-fixed so the triangular factor has positive
    /// diagonal) on Stiefel factors; plain addition on Euclidean factors.
    /// Exact identity at v = 0.
    pub fn retract(&self, x: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_len(x.len())?;
        self.check_len(v.len())?;
        self.check_len(out.len())?;
        if v.iter().all(|&c| c == 0.0) {
            out.copy_from_slice(x);
            return Ok(());
        }
        for (leaf, range) in self.leaves() {
            match leaf {
                Manifold::Stiefel { rows, cols } => {
                    let xm = DMatrix::from_column_slice(*rows, *cols, &x[range.clone()]);
                    let vm = DMatrix::from_column_slice(*rows, *cols, &v[range.clone()]);
                    let q = qr_orthonormalize(&(xm + vm))?;
                    out[range].copy_from_slice(q.as_slice());
                }
                _ => {
                    for (o, (a, b)) in out[range.clone()]
                        .iter_mut()
                        .zip(x[range.clone()].iter().zip(v[range.clone()].iter()))
                    {
                        *o = a + b;
                    }
                }
            }
        }
        Ok(())
    }

    /// Deterministic random point: seeded Gaussian draws, QR-orthonormalized
    /// on Stiefel factors.
    pub fn random_point(&self, seed: u64) -> ManifoldPoint {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = vec![0.0; self.ambient_dim()];
        for (leaf, range) in self.leaves() {
            match leaf {
                Manifold::Stiefel { rows, cols } => {
                    let g = DMatrix::from_fn(*rows, *cols, |_, _| {
                        StandardNormal.sample(&mut rng)
                    });
                    let q = qr_orthonormalize(&g)
                        .expect("Gaussian matrix is full rank almost surely");
                    data[range].copy_from_slice(q.as_slice());
                }
                _ => {
                    for slot in &mut data[range] {
                        *slot = StandardNormal.sample(&mut rng);
                    }
                }
            }
        }
        ManifoldPoint { manifold: self.clone(), data }
    }
}

/// Thin QR factor with the sign of each R diagonal entry fixed positive.
fn qr_orthonormalize(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cols = m.ncols();
    let scale = m.norm().max(1.0);
    let qr = m.clone().qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..cols {
        let rjj = r[(j, j)];
        if rjj.abs() <= 1e-14 * scale {
            return Err(Error::DegenerateRetraction(format!(
                "rank-deficient X + V (|R[{j},{j}]| = {:.3e})",
                rjj.abs()
            )));
        }
        if rjj < 0.0 {
            for i in 0..q.nrows() {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    Ok(q)
}

/// A point on a manifold, stored as a flat ambient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldPoint {
    manifold: Manifold,
    data: Vec<f64>,
}

impl ManifoldPoint {
    pub fn new(manifold: Manifold, data: Vec<f64>) -> Result<Self> {
        manifold.check_point(&data)?;
        Ok(ManifoldPoint { manifold, data })
    }

    pub fn manifold(&self) -> &Manifold {
        &self.manifold
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn check(&self) -> Result<()> {
        self.manifold.check_point(&self.data)
    }
}

/// A tangent vector anchored at a base point.
#[derive(Clone, Debug)]
pub struct TangentVector {
    base: ManifoldPoint,
    data: Vec<f64>,
}

impl TangentVector {
    /// Builds a tangent vector from a base point and raw components; callers
    /// are responsible for tangency (used by subproblem solvers whose output
    /// satisfies the constraint by construction).
    pub(crate) fn from_parts(base: ManifoldPoint, data: Vec<f64>) -> Self {
        TangentVector { base, data }
    }

    pub fn manifold(&self) -> &Manifold {
        self.base.manifold()
    }

    pub fn base(&self) -> &ManifoldPoint {
        &self.base
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Scales the vector in place (same base point).
    pub fn scaled(&self, alpha: f64) -> TangentVector {
        TangentVector {
            base: self.base.clone(),
            data: self.data.iter().map(|v| alpha * v).collect(),
        }
    }
}

/// Projects an ambient direction onto the tangent space at `x`.
pub fn tangent_project(x: &ManifoldPoint, xi: &[f64]) -> Result<TangentVector> {
    let mut out = vec![0.0; xi.len()];
    x.manifold().project_tangent(x.data(), xi, &mut out)?;
    Ok(TangentVector { base: x.clone(), data: out })
}

/// Riemannian gradient: the tangent projection of the Euclidean gradient.
pub fn riemannian_grad(x: &ManifoldPoint, euclid_grad: &[f64]) -> Result<TangentVector> {
    tangent_project(x, euclid_grad)
}

/// Retracts `v` (anchored at `x`) back onto the manifold.
pub fn retract(x: &ManifoldPoint, v: &TangentVector) -> Result<ManifoldPoint> {
    if v.base().data() != x.data() || v.manifold() != x.manifold() {
        return Err(Error::InvalidParameter(
            "tangent vector is not based at the given point".into(),
        ));
    }
    let mut out = vec![0.0; x.data().len()];
    x.manifold().retract(x.data(), v.data(), &mut out)?;
    Ok(ManifoldPoint { manifold: x.manifold().clone(), data: out })
}

/// Deterministic seeded random point.
pub fn random_point(manifold: &Manifold, seed: u64) -> ManifoldPoint {
    manifold.random_point(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn st(d: usize, r: usize) -> Manifold {
        Manifold::stiefel(d, r).unwrap()
    }

    fn eucl(dim: usize) -> Manifold {
        Manifold::euclidean(&[dim]).unwrap()
    }

    #[test]
    fn stiefel_requires_valid_dims() {
        assert!(Manifold::stiefel(3, 0).is_err());
        assert!(Manifold::stiefel(2, 3).is_err());
        assert!(Manifold::stiefel(3, 3).is_ok());
    }

    #[test]
    fn euclidean_projection_is_identity() {
        let m = Manifold::euclidean(&[4]).unwrap();
        let x = ManifoldPoint::new(m, vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let xi = [0.3, -0.7, 2.0, -1.0];
        let v = tangent_project(&x, &xi).unwrap();
        assert_eq!(v.data(), &xi);
    }

    #[test]
    fn stiefel_projection_of_base_is_zero() {
        let x = random_point(&st(5, 2), 7);
        let v = tangent_project(&x, x.data()).unwrap();
        assert!(v.norm() < 1e-14);
    }

    #[test]
    fn stiefel_projection_e1_case() {
        // X = e1 on St(3,1), xi = (1,2,3): projection keeps the components
        // orthogonal to X, here (0,2,3).
        let m = st(3, 1);
        let x = ManifoldPoint::new(m, vec![1.0, 0.0, 0.0]).unwrap();
        let v = tangent_project(&x, &[1.0, 2.0, 3.0]).unwrap();
        assert_abs_diff_eq!(v.data()[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v.data()[1], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v.data()[2], 3.0, epsilon = 1e-15);

        // Oracle: the residual xi - V must be orthogonal to a computed tangent
        // basis, and V must satisfy the tangent equation.
        let xi = [1.0f64, 2.0, 3.0];
        let residual: Vec<f64> = xi.iter().zip(v.data()).map(|(a, b)| a - b).collect();
        for basis in [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] {
            let ip: f64 = residual.iter().zip(basis.iter()).map(|(a, b)| a * b).sum();
            assert!(ip.abs() < 1e-14);
        }
        x.manifold().check_tangent(x.data(), v.data()).unwrap();
    }

    #[test]
    fn retract_zero_is_identity() {
        let x = random_point(&st(6, 3), 3);
        let zero = tangent_project(&x, &[0.0; 18]).unwrap();
        let y = retract(&x, &zero).unwrap();
        assert_eq!(x.data(), y.data());
    }

    #[test]
    fn retract_euclidean_adds() {
        let m = Manifold::euclidean(&[1]).unwrap();
        let x = ManifoldPoint::new(m, vec![1.0]).unwrap();
        let v = tangent_project(&x, &[0.5]).unwrap();
        assert_eq!(retract(&x, &v).unwrap().data(), &[1.5]);
    }

    #[test]
    fn retract_stiefel_2x1_hand_qr() {
        // X = (1,0), V = (0,t): QR of (1,t) gives the normalized column.
        let m = st(2, 1);
        let x = ManifoldPoint::new(m, vec![1.0, 0.0]).unwrap();
        for t in [0.3, -1.7, 4.0] {
            let v = tangent_project(&x, &[0.0, t]).unwrap();
            let y = retract(&x, &v).unwrap();
            let n = (1.0 + t * t).sqrt();
            assert_abs_diff_eq!(y.data()[0], 1.0 / n, epsilon = 1e-14);
            assert_abs_diff_eq!(y.data()[1], t / n, epsilon = 1e-14);
        }
    }

    #[test]
    fn retract_second_order_bound_fitted() {
        // ||R_x(v) - (x+v)|| <= M2 ||v||^2 with an empirically fitted M2:
        // calibrate on one sample set, then verify on a fresh one.
        let x = random_point(&st(7, 3), 11);
        let mut fit = 0.0f64;
        for seed in 0..20 {
            let dir = random_point(&Manifold::euclidean(&[21]).unwrap(), 100 + seed);
            let v = tangent_project(&x, dir.data()).unwrap();
            let scale = 0.1 / v.norm();
            let v = v.scaled(scale);
            let y = retract(&x, &v).unwrap();
            let dev: f64 = y
                .data()
                .iter()
                .zip(x.data().iter().zip(v.data()))
                .map(|(yi, (xi, vi))| (yi - xi - vi).powi(2))
                .sum::<f64>()
                .sqrt();
            fit = fit.max(dev / v.norm().powi(2));
        }
        let m2 = 2.0 * fit.max(1e-6);
        for seed in 0..20 {
            let dir = random_point(&Manifold::euclidean(&[21]).unwrap(), 500 + seed);
            let v = tangent_project(&x, dir.data()).unwrap();
            let v = v.scaled(0.05 / v.norm());
            let y = retract(&x, &v).unwrap();
            let dev: f64 = y
                .data()
                .iter()
                .zip(x.data().iter().zip(v.data()))
                .map(|(yi, (xi, vi))| (yi - xi - vi).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(dev <= m2 * v.norm().powi(2) + 1e-14);
        }
    }

    #[test]
    fn degenerate_retraction_errors() {
        let m = st(2, 1);
        let x = ManifoldPoint::new(m.clone(), vec![1.0, 0.0]).unwrap();
        // x + v = 0 is rank deficient; bypass tangency by calling the raw op.
        let mut out = vec![0.0; 2];
        let err = m.retract(x.data(), &[-1.0, 0.0], &mut out).unwrap_err();
        assert!(matches!(err, Error::DegenerateRetraction(_)));
    }

    #[test]
    fn riemannian_grad_normal_component_vanishes() {
        // euclid grad = X * S with symmetric S lies in the normal space.
        let x = random_point(&st(5, 2), 21);
        let xm = DMatrix::from_column_slice(5, 2, x.data());
        let s = DMatrix::from_row_slice(2, 2, &[1.3, -0.4, -0.4, 2.0]);
        let g = &xm * s;
        let v = riemannian_grad(&x, g.as_slice()).unwrap();
        assert!(v.norm() < 1e-13);
    }

    #[test]
    fn riemannian_grad_matches_finite_differences() {
        // phi(x) = <c, x> restricted to St(5,2): directional derivatives along
        // a tangent basis match <grad phi, basis dir>.
        let x = random_point(&st(5, 2), 33);
        let c = random_point(&Manifold::euclidean(&[10]).unwrap(), 99);
        let phi = |p: &[f64]| -> f64 { p.iter().zip(c.data()).map(|(a, b)| a * b).sum() };
        let grad = riemannian_grad(&x, c.data()).unwrap();

        // Tangent basis via projecting coordinate directions (spanning set).
        for i in 0..10 {
            let mut e = vec![0.0; 10];
            e[i] = 1.0;
            let dir = tangent_project(&x, &e).unwrap();
            let n = dir.norm();
            if n < 1e-12 {
                continue;
            }
            let dir = dir.scaled(1.0 / n);
            let t = 1e-6;
            let plus = retract(&x, &dir.scaled(t)).unwrap();
            let minus = retract(&x, &dir.scaled(-t)).unwrap();
            let fd = (phi(plus.data()) - phi(minus.data())) / (2.0 * t);
            let ip: f64 = grad.data().iter().zip(dir.data()).map(|(a, b)| a * b).sum();
            assert_abs_diff_eq!(fd, ip, epsilon = 1e-6 * (1.0 + ip.abs()));
        }
    }

    #[test]
    fn random_point_orthonormal_and_deterministic() {
        let m = st(4, 2);
        let a = random_point(&m, 42);
        let b = random_point(&m, 42);
        assert_eq!(a.data(), b.data());
        let xm = DMatrix::from_column_slice(4, 2, a.data());
        let dev = (xm.transpose() * &xm - DMatrix::identity(2, 2)).norm();
        assert!(dev < 1e-12);
        let c = random_point(&m, 43);
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn random_euclidean_point_is_finite() {
        let m = Manifold::euclidean(&[1]).unwrap();
        let p = random_point(&m, 5);
        assert!(p.data()[0].is_finite());
    }

    #[test]
    fn product_layout_offsets() {
        let m = Manifold::product(vec![st(3, 1), Manifold::euclidean(&[2, 2]).unwrap()]).unwrap();
        assert_eq!(m.ambient_dim(), 7);
        let leaves = m.leaves();
        assert_eq!(leaves.len(), 2);
        assert_eq!(leaves[0].1, 0..3);
        assert_eq!(leaves[1].1, 3..7);
        let p = random_point(&m, 8);
        p.check().unwrap();
    }

    #[test]
    fn projection_idempotent_and_self_adjoint() {
        let m = Manifold::product(vec![st(6, 2), Manifold::euclidean(&[3]).unwrap()]).unwrap();
        let x = random_point(&m, 17);
        let dim = m.ambient_dim();
        for seed in 0..20 {
            let xi = random_point(&eucl(dim), 300 + seed);
            let zeta = random_point(&eucl(dim), 600 + seed);
            let p_xi = tangent_project(&x, xi.data()).unwrap();
            let pp_xi = tangent_project(&x, p_xi.data()).unwrap();
            let dev: f64 = p_xi
                .data()
                .iter()
                .zip(pp_xi.data())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(dev < 1e-12, "projection not idempotent: {dev:.3e}");

            let p_zeta = tangent_project(&x, zeta.data()).unwrap();
            let lhs: f64 = p_xi.data().iter().zip(zeta.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = xi.data().iter().zip(p_zeta.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10, "projection not self-adjoint");
        }
    }

    #[test]
    fn retract_stays_on_manifold_for_large_tangents() {
        let m = st(8, 3);
        let x = random_point(&m, 2);
        for seed in 0..10 {
            let xi = random_point(&eucl(24), 40 + seed);
            let v = tangent_project(&x, xi.data()).unwrap();
            let v = v.scaled(10.0 / v.norm());
            let y = retract(&x, &v).unwrap();
            y.check().unwrap();
        }
    }

    #[test]
    fn retraction_first_order_ratio() {
        // ||R_x(tv) - (x + tv)|| / t at t = 1e-4 stays below 1e-3 * ||v||^2.
        let m = st(6, 2);
        let x = random_point(&m, 9);
        for seed in 0..10 {
            let xi = random_point(&eucl(12), 70 + seed);
            let v = tangent_project(&x, xi.data()).unwrap();
            let t = 1e-4;
            let y = retract(&x, &v.scaled(t)).unwrap();
            let dev: f64 = y
                .data()
                .iter()
                .zip(x.data().iter().zip(v.data()))
                .map(|(yi, (xi_, vi))| (yi - xi_ - t * vi).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(dev / t <= 1e-3 * v.norm().powi(2) + 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let x = random_point(&st(3, 1), 1);
        assert!(matches!(
            tangent_project(&x, &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}

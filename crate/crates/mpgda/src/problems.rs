//! Concrete minimax problem instances: the analytic circle example, fair
//! sparse PCA on the Stiefel manifold, and sparse spectral clustering on a
//! Stiefel x Euclidean product, plus synthetic data generators and the
//! credit CSV loader.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::manifold::{random_point, Manifold, ManifoldPoint};
use crate::proxsets::{FeasibleSet, Regularizer};

/// The minimax problem contract: smooth coupling f (concave in y), its
/// partial gradients, the nonsmooth terms via their regularizers, and
/// optional linear-in-y structure f(x, y) = <A(x), y> (+ a y-independent
/// part) exposed through `linear_y`.
pub trait MinimaxProblem {
    fn manifold(&self) -> &Manifold;
    fn feasible_set(&self) -> &FeasibleSet;
    fn reg_h(&self) -> &Regularizer;
    fn reg_g(&self) -> &Regularizer;
    fn eval_f(&self, x: &[f64], y: &[f64]) -> f64;
    fn grad_x_f(&self, x: &[f64], y: &[f64]) -> Vec<f64>;
    fn grad_y_f(&self, x: &[f64], y: &[f64]) -> Vec<f64>;
    /// A(x) with grad_y f(x, y) = A(x) for all y, when f is (affine) linear
    /// in y; None otherwise.
    fn linear_y(&self, x: &[f64]) -> Option<Vec<f64>>;
    /// (L_x, L_y) gradient Lipschitz metadata.
    fn lipschitz(&self) -> (f64, f64);

    /// Full objective F(x, y) = f(x, y) + h(x) - g(y).
    fn objective(&self, x: &[f64], y: &[f64]) -> f64 {
        self.eval_f(x, y) + self.reg_h().eval(self.manifold(), x)
            - self.reg_g().eval_flat(y)
    }

    /// The scalar the experiments report; defaults to F(x, y).
    fn reported_objective(&self, x: &[f64], y: &[f64]) -> f64 {
        self.objective(x, y)
    }

    /// Problem-specific default initialization for a given seed.
    fn default_init(&self, seed: u64) -> (ManifoldPoint, Vec<f64>) {
        let x = random_point(self.manifold(), seed);
        let y = default_center(self.feasible_set());
        (x, y)
    }
}

fn default_center(set: &FeasibleSet) -> Vec<f64> {
    match set {
        FeasibleSet::Simplex { dim } => vec![1.0 / *dim as f64; *dim],
        FeasibleSet::LinfBall { dim, .. } => vec![0.0; *dim],
        FeasibleSet::Box { lo, hi, dim } => vec![0.5 * (lo + hi); *dim],
        FeasibleSet::Interval { lo, hi } => vec![0.5 * (lo + hi)],
    }
}

/// min over the unit circle, max over [0.3, 1] of -0.01 x1^3 y - y ln y.
pub struct AnalyticProblem {
    manifold: Manifold,
    set: FeasibleSet,
}

impl AnalyticProblem {
    pub fn new() -> Self {
        AnalyticProblem {
            manifold: Manifold::stiefel(2, 1).expect("static dims"),
            set: FeasibleSet::interval(0.3, 1.0).expect("static interval"),
        }
    }

    /// The known game-stationary point (x*, y*) = ((1, 0), e^{-1.01}).
    pub fn stationary_point(&self) -> (ManifoldPoint, Vec<f64>) {
        let x = ManifoldPoint::new(self.manifold.clone(), vec![1.0, 0.0]).expect("on circle");
        (x, vec![(-1.01f64).exp()])
    }
}

impl Default for AnalyticProblem {
    fn default() -> Self {
        Self::new()
    }
}

impl MinimaxProblem for AnalyticProblem {
    fn manifold(&self) -> &Manifold {
        &self.manifold
    }
    fn feasible_set(&self) -> &FeasibleSet {
        &self.set
    }
    fn reg_h(&self) -> &Regularizer {
        &Regularizer::Zero
    }
    fn reg_g(&self) -> &Regularizer {
        &Regularizer::Zero
    }
    fn eval_f(&self, x: &[f64], y: &[f64]) -> f64 {
        -0.01 * x[0].powi(3) * y[0] - y[0] * y[0].ln()
    }
    fn grad_x_f(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        vec![-0.03 * x[0] * x[0] * y[0], 0.0]
    }
    fn grad_y_f(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        vec![-0.01 * x[0].powi(3) - y[0].ln() - 1.0]
    }
    fn linear_y(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }
    fn lipschitz(&self) -> (f64, f64) {
        // |d^2 f / dx1^2| <= 0.06 on the circle; |d^2 f / dy^2| <= 1/0.3 on S
        // plus the 0.03 cross-term bound.
        (0.06, 1.0 / 0.3 + 0.03)
    }
    fn default_init(&self, _seed: u64) -> (ManifoldPoint, Vec<f64>) {
        let x = ManifoldPoint::new(self.manifold.clone(), vec![0.8, 0.6]).expect("on circle");
        (x, vec![0.3])
    }
}

/// Fair sparse PCA: min over St(d, r), max over the simplex, of
/// -sum_i y_i Tr(X^T G_i X) + mu ||X||_1 with G_i = A_i^T A_i.
pub struct FspcaProblem {
    manifold: Manifold,
    set: FeasibleSet,
    reg_h: Regularizer,
    grams: Vec<DMatrix<f64>>,
    lx: f64,
    ly: f64,
}

impl FspcaProblem {
    pub fn new(groups: &[DMatrix<f64>], r: usize, mu: f64) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::Data("no groups".into()));
        }
        let d = groups[0].ncols();
        for a in groups {
            if a.ncols() != d {
                return Err(Error::DimensionMismatch { expected: d, got: a.ncols() });
            }
        }
        if r > d {
            return Err(Error::InvalidParameter(format!("r = {r} exceeds d = {d}")));
        }
        let grams: Vec<DMatrix<f64>> = groups.iter().map(|a| a.transpose() * a).collect();
        let norms: Vec<f64> = grams.iter().map(spectral_norm_symmetric).collect();
        let lx = 2.0 * norms.iter().cloned().fold(0.0, f64::max);
        let ly = 2.0 * (r as f64).sqrt() * norms.iter().map(|n| n * n).sum::<f64>().sqrt();
        Ok(FspcaProblem {
            manifold: Manifold::stiefel(d, r)?,
            set: FeasibleSet::simplex(groups.len())?,
            reg_h: Regularizer::l1(mu)?,
            grams,
            lx,
            ly,
        })
    }

    /// Convenience constructor from raw row data (one Vec per sample).
    pub fn from_rows(groups: &[Vec<Vec<f64>>], r: usize, mu: f64) -> Result<Self> {
        let mats: Vec<DMatrix<f64>> = groups
            .iter()
            .map(|rows| {
                let m = rows.len();
                let d = rows[0].len();
                DMatrix::from_fn(m, d, |i, j| rows[i][j])
            })
            .collect();
        Self::new(&mats, r, mu)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        match &self.manifold {
            Manifold::Stiefel { rows, cols } => (*rows, *cols, self.grams.len()),
            _ => unreachable!(),
        }
    }

    fn x_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        let (d, r, _) = self.dims();
        DMatrix::from_column_slice(d, r, x)
    }
}

impl MinimaxProblem for FspcaProblem {
    fn manifold(&self) -> &Manifold {
        &self.manifold
    }
    fn feasible_set(&self) -> &FeasibleSet {
        &self.set
    }
    fn reg_h(&self) -> &Regularizer {
        &self.reg_h
    }
    fn reg_g(&self) -> &Regularizer {
        &Regularizer::Zero
    }
    fn eval_f(&self, x: &[f64], y: &[f64]) -> f64 {
        let a = self.linear_y(x).expect("fspca is linear in y");
        a.iter().zip(y).map(|(ai, yi)| ai * yi).sum()
    }
    fn grad_x_f(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let xm = self.x_matrix(x);
        let mut acc = DMatrix::<f64>::zeros(xm.nrows(), xm.ncols());
        for (g, yi) in self.grams.iter().zip(y) {
            acc += (g * &xm) * (-2.0 * yi);
        }
        acc.as_slice().to_vec()
    }
    fn grad_y_f(&self, x: &[f64], _y: &[f64]) -> Vec<f64> {
        self.linear_y(x).expect("fspca is linear in y")
    }
    fn linear_y(&self, x: &[f64]) -> Option<Vec<f64>> {
        let xm = self.x_matrix(x);
        Some(
            self.grams
                .iter()
                .map(|g| {
                    let gx = g * &xm;
                    -xm.iter().zip(gx.iter()).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect(),
        )
    }
    fn lipschitz(&self) -> (f64, f64) {
        (self.lx, self.ly)
    }
    /// The fair sparse PCA value: worst-group term plus the sparsity penalty.
    fn reported_objective(&self, x: &[f64], _y: &[f64]) -> f64 {
        let a = self.linear_y(x).expect("fspca is linear in y");
        let worst = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        worst + self.reg_h.eval(&self.manifold, x)
    }
    fn default_init(&self, seed: u64) -> (ManifoldPoint, Vec<f64>) {
        let x = random_point(&self.manifold, seed);
        let n = self.grams.len();
        (x, vec![1.0 / n as f64; n])
    }
}

/// Sparse spectral clustering: min over St(N, p) x R^{NxN}, max over the
/// inf-ball of radius mu, of <L, XX^T> + mu ||Z||_1 + <Y, XX^T - Z>.
pub struct SscProblem {
    manifold: Manifold,
    set: FeasibleSet,
    reg_h: Regularizer,
    laplacian: DMatrix<f64>,
    n: usize,
    p: usize,
    mu: f64,
    lx: f64,
}

impl SscProblem {
    pub fn new(w: &DMatrix<f64>, p: usize, mu: f64) -> Result<Self> {
        let n = w.nrows();
        if w.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, got: w.ncols() });
        }
        if p == 0 || p > n {
            return Err(Error::InvalidParameter(format!("p = {p} out of range for N = {n}")));
        }
        if mu <= 0.0 {
            return Err(Error::InvalidParameter("mu must be positive".into()));
        }
        for i in 0..n {
            for j in 0..i {
                if (w[(i, j)] - w[(j, i)]).abs() > 1e-10 * (1.0 + w[(i, j)].abs()) {
                    return Err(Error::Data("affinity matrix is not symmetric".into()));
                }
            }
        }
        if w.iter().any(|&v| v < 0.0) {
            return Err(Error::Data("affinity matrix has negative entries".into()));
        }
        let mut inv_sqrt = Vec::with_capacity(n);
        for i in 0..n {
            let s: f64 = w.row(i).iter().sum();
            if s <= 0.0 {
                return Err(Error::Data(format!("degenerate graph: zero row sum at {i}")));
            }
            inv_sqrt.push(1.0 / s.sqrt());
        }
        let mut lap = DMatrix::<f64>::identity(n, n);
        for i in 0..n {
            for j in 0..n {
                lap[(i, j)] -= inv_sqrt[i] * w[(i, j)] * inv_sqrt[j];
            }
        }
        // Symmetrize away the last bits of roundoff.
        lap = (&lap + lap.transpose()) * 0.5;
        let lx = 2.0 * spectral_norm_symmetric(&lap) + 2.0 * mu * n as f64;
        Ok(SscProblem {
            manifold: Manifold::product(vec![
                Manifold::stiefel(n, p)?,
                Manifold::euclidean(&[n, n])?,
            ])?,
            set: FeasibleSet::linf_ball(mu, n * n)?,
            reg_h: Regularizer::l1_on_factor(mu, 1)?,
            laplacian: lap,
            n,
            p,
            mu,
            lx,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n, self.p)
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    fn split<'a>(&self, x: &'a [f64]) -> (DMatrix<f64>, &'a [f64]) {
        let np = self.n * self.p;
        (DMatrix::from_column_slice(self.n, self.p, &x[..np]), &x[np..])
    }

    /// Eigenvector initialization: X0 holds the p eigenvectors of the
    /// smallest Laplacian eigenvalues, Z0 = X0 X0^T.
    pub fn eigen_init(&self) -> ManifoldPoint {
        let eig = self.laplacian.clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..self.n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
        let mut x0 = DMatrix::<f64>::zeros(self.n, self.p);
        for (col, &idx) in order.iter().take(self.p).enumerate() {
            x0.set_column(col, &eig.eigenvectors.column(idx));
        }
        let z0 = &x0 * x0.transpose();
        let mut data = Vec::with_capacity(self.n * self.p + self.n * self.n);
        data.extend_from_slice(x0.as_slice());
        data.extend_from_slice(z0.as_slice());
        ManifoldPoint::new(self.manifold.clone(), data)
            .expect("eigenvectors are orthonormal")
    }
}

impl MinimaxProblem for SscProblem {
    fn manifold(&self) -> &Manifold {
        &self.manifold
    }
    fn feasible_set(&self) -> &FeasibleSet {
        &self.set
    }
    fn reg_h(&self) -> &Regularizer {
        &self.reg_h
    }
    fn reg_g(&self) -> &Regularizer {
        &Regularizer::Zero
    }
    fn eval_f(&self, x: &[f64], y: &[f64]) -> f64 {
        let (xm, z) = self.split(x);
        let lx = &self.laplacian * &xm;
        let smooth: f64 = lx.iter().zip(xm.iter()).map(|(a, b)| a * b).sum();
        // <Y, XX^T - Z> accumulated without forming XX^T: <Y, XX^T> = sum of
        // (Y^T X) .* X.
        let ym = DMatrix::from_column_slice(self.n, self.n, y);
        let ytx = ym.transpose() * &xm;
        let coupling: f64 = ytx.iter().zip(xm.iter()).map(|(a, b)| a * b).sum();
        let yz: f64 = y.iter().zip(z).map(|(a, b)| a * b).sum();
        smooth + coupling - yz
    }
    fn grad_x_f(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let (xm, _) = self.split(x);
        let ym = DMatrix::from_column_slice(self.n, self.n, y);
        let sym_y = &ym + ym.transpose();
        let gx = &self.laplacian * &xm * 2.0 + sym_y * &xm;
        let mut out = Vec::with_capacity(x.len());
        out.extend_from_slice(gx.as_slice());
        out.extend(y.iter().map(|v| -v));
        out
    }
    fn grad_y_f(&self, x: &[f64], _y: &[f64]) -> Vec<f64> {
        self.linear_y(x).expect("ssc is affine in y")
    }
    fn linear_y(&self, x: &[f64]) -> Option<Vec<f64>> {
        let (xm, z) = self.split(x);
        let xxt = &xm * xm.transpose();
        Some(xxt.iter().zip(z).map(|(a, b)| a - b).collect())
    }
    fn lipschitz(&self) -> (f64, f64) {
        // ||d_y f(x1) - d_y f(x2)|| <= 2 ||dX|| + ||dZ|| <= sqrt(5) ||dx||.
        (self.lx, 5.0f64.sqrt())
    }
    /// The primal sparse-spectral-clustering value <L, XX^T> + mu ||XX^T||_1.
    fn reported_objective(&self, x: &[f64], _y: &[f64]) -> f64 {
        let (xm, _) = self.split(x);
        let lx = &self.laplacian * &xm;
        let smooth: f64 = lx.iter().zip(xm.iter()).map(|(a, b)| a * b).sum();
        let xxt = &xm * xm.transpose();
        smooth + self.mu * xxt.iter().map(|v| v.abs()).sum::<f64>()
    }
    fn default_init(&self, _seed: u64) -> (ManifoldPoint, Vec<f64>) {
        (self.eigen_init(), vec![0.0; self.n * self.n])
    }
}

/// Largest eigenvalue magnitude of a symmetric matrix by power iteration
/// from a deterministic start.
fn spectral_norm_symmetric(g: &DMatrix<f64>) -> f64 {
    let n = g.nrows();
    let mut v = nalgebra::DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut norm = 0.0;
    for _ in 0..200 {
        let w = g * &v;
        let next = w.norm();
        if next <= 1e-300 {
            return 0.0;
        }
        v = w / next;
        if (next - norm).abs() <= 1e-12 * next {
            norm = next;
            break;
        }
        norm = next;
    }
    norm
}

/// Synthetic fair-PCA data: two groups of 200 x 40 Gaussian samples sharing
/// a block KMS(0.8) covariance, the second group mean-shifted by 1/3 on the
/// even (1-based) coordinates.
pub fn gen_fspca_synthetic(seed: u64) -> Vec<DMatrix<f64>> {
    let d = 40;
    let m = 200;
    let block = 8;
    let mut sigma = DMatrix::<f64>::zeros(d, d);
    for b in 0..d / block {
        for i in 0..block {
            for j in 0..block {
                sigma[(b * block + i, b * block + j)] = 0.8f64.powi((i as i32 - j as i32).abs());
            }
        }
    }
    let chol = sigma.cholesky().expect("KMS blocks are positive definite").l();
    let mut mean2 = vec![0.0; d];
    for j in (1..d).step_by(2) {
        mean2[j] = 1.0 / 3.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw_group = |mean: &[f64]| -> DMatrix<f64> {
        let mut a = DMatrix::<f64>::zeros(m, d);
        for i in 0..m {
            let z = nalgebra::DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
            let x = &chol * z;
            for j in 0..d {
                a[(i, j)] = mean[j] + x[j];
            }
        }
        a
    };
    let a1 = draw_group(&vec![0.0; d]);
    let a2 = draw_group(&mean2);
    vec![a1, a2]
}

/// Synthetic SSC affinity: rows a_i ~ N(0, I_dim), W_ij = |<a_i, a_j>|.
pub fn gen_ssc_synthetic(n: usize, dim: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::<f64>::from_fn(n, dim, |_, _| StandardNormal.sample(&mut rng));
    let mut w = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v: f64 = a.row(i).iter().zip(a.row(j).iter()).map(|(x, y)| x * y).sum();
            let v = v.abs();
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    w
}

/// Centers every column and rescales it to unit variance (population
/// convention); near-constant columns are zeroed instead of amplified.
pub fn standardize_columns(a: &mut DMatrix<f64>) {
    let m = a.nrows() as f64;
    for j in 0..a.ncols() {
        let mean: f64 = a.column(j).iter().sum::<f64>() / m;
        let var: f64 = a.column(j).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
        let std = var.sqrt();
        for i in 0..a.nrows() {
            a[(i, j)] = if std > 1e-12 { (a[(i, j)] - mean) / std } else { 0.0 };
        }
    }
}

/// Experiment preprocessing for fair sparse PCA inputs: per-group column
/// standardization followed by the 1/sqrt(m_i) row scaling that turns
/// A_i^T A_i into the per-sample Gram.
pub fn fspca_preprocess(groups: &mut [DMatrix<f64>]) {
    for a in groups.iter_mut() {
        standardize_columns(a);
        let scale = 1.0 / (a.nrows() as f64).sqrt();
        a.scale_mut(scale);
    }
}

/// Loads the credit CSV: any numeric feature columns plus a configured group
/// column; features are standardized over the full dataset, rows partitioned
/// into exactly two groups by the group-column value.
pub fn load_credit_csv(path: &std::path::Path, group_column: &str) -> Result<Vec<DMatrix<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("bad header: {e}")))?
        .clone();
    let group_idx = headers
        .iter()
        .position(|h| h == group_column)
        .ok_or_else(|| Error::Data(format!("group column '{group_column}' not found")))?;

    let mut labels: Vec<String> = Vec::new();
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Data(format!("row {line}: {e}")))?;
        let mut feats = Vec::with_capacity(record.len().saturating_sub(1));
        let mut label = None;
        for (idx, field) in record.iter().enumerate() {
            if idx == group_idx {
                label = Some(field.to_string());
            } else {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::Data(format!("row {line}: non-numeric cell '{field}'")))?;
                feats.push(v);
            }
        }
        let label = label.unwrap_or_default();
        let gid = match labels.iter().position(|l| *l == label) {
            Some(i) => i,
            None => {
                labels.push(label);
                labels.len() - 1
            }
        };
        rows.push((gid, feats));
    }
    if labels.len() != 2 {
        return Err(Error::Data(format!(
            "expected exactly 2 group labels, found {}: {labels:?}",
            labels.len()
        )));
    }
    if rows.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    let d = rows[0].1.len();
    if rows.iter().any(|(_, f)| f.len() != d) {
        return Err(Error::Data("ragged rows".into()));
    }

    // Standardize features over the full dataset.
    let mut full = DMatrix::<f64>::from_fn(rows.len(), d, |i, j| rows[i].1[j]);
    standardize_columns(&mut full);

    // Stable group order: sort labels so the partition does not depend on
    // row order.
    let mut order: Vec<usize> = vec![0, 1];
    order.sort_by(|&a, &b| labels[a].cmp(&labels[b]));
    let mut groups = Vec::new();
    for &gid in &order {
        let idxs: Vec<usize> = rows
            .iter()
            .enumerate()
            .filter(|(_, (g, _))| *g == gid)
            .map(|(i, _)| i)
            .collect();
        if idxs.is_empty() {
            return Err(Error::Data(format!("group '{}' has no rows", labels[gid])));
        }
        let a = DMatrix::<f64>::from_fn(idxs.len(), d, |i, j| full[(idxs[i], j)]);
        groups.push(a);
    }
    Ok(groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fd_partial(f: &dyn Fn(&[f64]) -> f64, at: &[f64], dir: &[f64], step: f64) -> f64 {
        let plus: Vec<f64> = at.iter().zip(dir).map(|(a, d)| a + step * d).collect();
        let minus: Vec<f64> = at.iter().zip(dir).map(|(a, d)| a - step * d).collect();
        (f(&plus) - f(&minus)) / (2.0 * step)
    }

    #[test]
    fn analytic_values_at_stationary_point() {
        let p = AnalyticProblem::new();
        let (xs, ys) = p.stationary_point();
        let want = (-1.01f64).exp();
        // f(1, 0, e^-1.01) = -0.01 e^-1.01 + 1.01 e^-1.01 = e^-1.01.
        assert_abs_diff_eq!(p.eval_f(xs.data(), &ys), want, epsilon = 1e-15);
        // The y-gradient vanishes there: -0.01 - ln y - 1 = 0.
        assert_abs_diff_eq!(p.grad_y_f(xs.data(), &ys)[0], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn analytic_grad_y_simple_value() {
        let p = AnalyticProblem::new();
        let g = p.grad_y_f(&[0.0, 1.0], &[1.0]);
        assert_abs_diff_eq!(g[0], -1.0, epsilon = 1e-15);
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let p = AnalyticProblem::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let x = [t.cos(), t.sin()];
            let y = [rng.random_range(0.35..0.95)];
            let gx = p.grad_x_f(&x, &y);
            let gy = p.grad_y_f(&x, &y);
            for dir in [[1.0, 0.0], [0.0, 1.0], [0.6, -0.8]] {
                let fd = fd_partial(&|xx| p.eval_f(xx, &y), &x, &dir, 1e-5);
                let ip = gx[0] * dir[0] + gx[1] * dir[1];
                assert!((fd - ip).abs() <= 1e-6 * (1.0 + ip.abs()));
            }
            let fd = fd_partial(&|yy| p.eval_f(&x, yy), &y, &[1.0], 1e-5);
            assert!((fd - gy[0]).abs() <= 1e-6 * (1.0 + gy[0].abs()));
        }
    }

    fn toy_fspca(seed: u64, groups: usize, m: usize, d: usize, r: usize) -> FspcaProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mats: Vec<DMatrix<f64>> = (0..groups)
            .map(|_| DMatrix::from_fn(m, d, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        FspcaProblem::new(&mats, r, 0.1).unwrap()
    }

    #[test]
    fn fspca_single_group_reduces_to_sparse_pca() {
        let p = toy_fspca(1, 1, 10, 6, 2);
        let x = random_point(p.manifold(), 3);
        let f = p.eval_f(x.data(), &[1.0]);
        let a = p.linear_y(x.data()).unwrap();
        assert_abs_diff_eq!(f, a[0], epsilon = 1e-12);
    }

    #[test]
    fn fspca_rejects_inconsistent_dims() {
        let g1 = DMatrix::<f64>::zeros(4, 6);
        let g2 = DMatrix::<f64>::zeros(4, 5);
        assert!(FspcaProblem::new(&[g1, g2], 2, 0.1).is_err());
    }

    #[test]
    fn fspca_gradients_match_finite_differences() {
        let p = toy_fspca(5, 2, 10, 6, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_point(p.manifold(), 11);
        let y = vec![0.3, 0.7];
        let gx = p.grad_x_f(x.data(), &y);
        for _ in 0..20 {
            let dir: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fd = fd_partial(&|xx| p.eval_f(xx, &y), x.data(), &dir, 1e-5);
            let ip: f64 = gx.iter().zip(&dir).map(|(a, b)| a * b).sum();
            assert!((fd - ip).abs() <= 1e-6 * (1.0 + ip.abs()), "{fd} vs {ip}");
        }
    }

    #[test]
    fn fspca_linear_consistency_at_vertices() {
        let p = toy_fspca(6, 3, 8, 5, 2);
        let x = random_point(p.manifold(), 4);
        let a = p.linear_y(x.data()).unwrap();
        for i in 0..3 {
            let mut y = vec![0.0; 3];
            y[i] = 1.0;
            assert_abs_diff_eq!(p.eval_f(x.data(), &y), a[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn concavity_in_y_on_random_triples() {
        let p = toy_fspca(9, 3, 8, 5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random_point(p.manifold(), 13);
        for _ in 0..50 {
            let raw1: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
            let raw2: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
            let y1 = crate::proxsets::simplex_project(&raw1);
            let y2 = crate::proxsets::simplex_project(&raw2);
            let mid: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| 0.5 * (a + b)).collect();
            let lhs = p.eval_f(x.data(), &mid);
            let rhs = 0.5 * (p.eval_f(x.data(), &y1) + p.eval_f(x.data(), &y2));
            assert!(lhs >= rhs - 1e-12);
        }
        // Same midpoint test on the (strictly concave) analytic coupling.
        let a = AnalyticProblem::new();
        let x = [0.6, -0.8];
        for _ in 0..50 {
            let y1 = rng.random_range(0.3..1.0);
            let y2 = rng.random_range(0.3..1.0);
            let lhs = a.eval_f(&x, &[0.5 * (y1 + y2)]);
            let rhs = 0.5 * (a.eval_f(&x, &[y1]) + a.eval_f(&x, &[y2]));
            assert!(lhs >= rhs - 1e-12);
        }
    }

    #[test]
    fn ssc_reduces_when_y_is_zero() {
        let w = gen_ssc_synthetic(6, 4, 1);
        let p = SscProblem::new(&w, 2, 0.1).unwrap();
        let x0 = p.eigen_init();
        let y0 = vec![0.0; 36];
        let f = p.eval_f(x0.data(), &y0);
        let (xm, _) = p.split(x0.data());
        let lx = p.laplacian() * &xm;
        let want: f64 = lx.iter().zip(xm.iter()).map(|(a, b)| a * b).sum();
        assert_abs_diff_eq!(f, want, epsilon = 1e-12);
        // objective adds mu ||Z||_1
        let z_l1: f64 = x0.data()[12..].iter().map(|v| v.abs()).sum();
        assert_abs_diff_eq!(
            p.objective(x0.data(), &y0),
            want + 0.1 * z_l1,
            epsilon = 1e-12
        );
    }

    #[test]
    fn ssc_gradients_match_finite_differences() {
        let w = gen_ssc_synthetic(6, 4, 2);
        let p = SscProblem::new(&w, 2, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_point(p.manifold(), 14);
        let y: Vec<f64> = (0..36).map(|_| rng.random_range(-0.09..0.09)).collect();
        let gx = p.grad_x_f(x.data(), &y);
        let gy = p.grad_y_f(x.data(), &y);
        for _ in 0..20 {
            let dir: Vec<f64> = (0..48).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fd = fd_partial(&|xx| p.eval_f(xx, &y), x.data(), &dir, 1e-5);
            let ip: f64 = gx.iter().zip(&dir).map(|(a, b)| a * b).sum();
            assert!((fd - ip).abs() <= 1e-6 * (1.0 + ip.abs()), "{fd} vs {ip}");
            let diry: Vec<f64> = (0..36).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fdy = fd_partial(&|yy| p.eval_f(x.data(), yy), &y, &diry, 1e-5);
            let ipy: f64 = gy.iter().zip(&diry).map(|(a, b)| a * b).sum();
            assert!((fdy - ipy).abs() <= 1e-6 * (1.0 + ipy.abs()));
        }
    }

    #[test]
    fn ssc_affine_consistency_at_ball_corners() {
        let w = gen_ssc_synthetic(5, 3, 4);
        let p = SscProblem::new(&w, 2, 0.2).unwrap();
        let x = random_point(p.manifold(), 6);
        let a = p.linear_y(x.data()).unwrap();
        let f0 = p.eval_f(x.data(), &[0.0; 25]);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            let y: Vec<f64> = (0..25)
                .map(|_| if rng.random_range(0.0..1.0) < 0.5 { -0.2 } else { 0.2 })
                .collect();
            let want: f64 = a.iter().zip(&y).map(|(ai, yi)| ai * yi).sum();
            assert_abs_diff_eq!(p.eval_f(x.data(), &y) - f0, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn ssc_eigen_init_is_orthonormal() {
        let w = gen_ssc_synthetic(8, 5, 7);
        let p = SscProblem::new(&w, 3, 0.1).unwrap();
        let x0 = p.eigen_init();
        let (xm, z) = p.split(x0.data());
        let dev = (xm.transpose() * &xm - DMatrix::identity(3, 3)).norm();
        assert!(dev <= 1e-10);
        let xxt = &xm * xm.transpose();
        for (a, b) in xxt.iter().zip(z) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-14);
        }
    }

    #[test]
    fn ssc_rejects_degenerate_graphs() {
        let w = DMatrix::<f64>::zeros(4, 4);
        assert!(matches!(SscProblem::new(&w, 2, 0.1), Err(Error::Data(_))));
        let mut w2 = gen_ssc_synthetic(4, 3, 1);
        w2[(0, 1)] += 1.0;
        assert!(SscProblem::new(&w2, 2, 0.1).is_err());
    }

    #[test]
    fn ssc_laplacian_spectrum_in_range() {
        let w = gen_ssc_synthetic(10, 6, 9);
        let p = SscProblem::new(&w, 2, 0.1).unwrap();
        // Eigenvalues of S^{-1/2} W S^{-1/2} = I - L lie in [-1, 1].
        let m = DMatrix::<f64>::identity(10, 10) - p.laplacian();
        let eig = m.symmetric_eigen();
        for v in eig.eigenvalues.iter() {
            assert!(*v >= -1.0 - 1e-8 && *v <= 1.0 + 1e-8);
        }
    }

    #[test]
    fn fspca_generator_shapes_and_determinism() {
        let g1 = gen_fspca_synthetic(0);
        let g2 = gen_fspca_synthetic(0);
        assert_eq!(g1.len(), 2);
        for a in &g1 {
            assert_eq!((a.nrows(), a.ncols()), (200, 40));
        }
        assert_eq!(g1[0], g2[0]);
        assert_eq!(g1[1], g2[1]);
        assert_ne!(g1[0], gen_fspca_synthetic(1)[0]);
    }

    #[test]
    fn fspca_generator_group_means() {
        // Group 1 mean ~ 0 within 3 sqrt(Sigma_jj / m) = 3 / sqrt(200)
        // per coordinate; group 2 carries the 1/3 shift on even (1-based)
        // coordinates.
        let g = gen_fspca_synthetic(12345);
        let bound = 3.0 / 200.0f64.sqrt();
        for j in 0..40 {
            let mean1: f64 = g[0].column(j).iter().sum::<f64>() / 200.0;
            assert!(mean1.abs() <= bound, "col {j}: |{mean1}| > {bound}");
            let mean2: f64 = g[1].column(j).iter().sum::<f64>() / 200.0;
            let shift = if j % 2 == 1 { 1.0 / 3.0 } else { 0.0 };
            assert!((mean2 - shift).abs() <= bound);
        }
    }

    #[test]
    fn ssc_generator_symmetric_nonneg() {
        let w = gen_ssc_synthetic(12, 5, 3);
        for i in 0..12 {
            for j in 0..12 {
                assert!(w[(i, j)] >= 0.0);
                assert_eq!(w[(i, j)].to_bits(), w[(j, i)].to_bits());
            }
        }
        // Diagonal is ||a_i||^2 >= 0.
        assert!(w[(0, 0)] > 0.0);
    }

    #[test]
    fn credit_loader_toy_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.csv");
        std::fs::write(
            &path,
            "f1,f2,grp\n1.0,2.0,0\n3.0,4.0,1\n5.0,6.0,0\n7.0,8.0,1\n",
        )
        .unwrap();
        let groups = load_credit_csv(&path, "grp").unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].nrows(), 2);
        assert_eq!(groups[0].ncols(), 2);
        // Standardization: concatenated columns have mean ~ 0.
        for j in 0..2 {
            let total: f64 =
                groups[0].column(j).iter().sum::<f64>() + groups[1].column(j).iter().sum::<f64>();
            assert_abs_diff_eq!(total / 4.0, 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn credit_loader_rejects_bad_input() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "f1,grp\nxyz,0\n").unwrap();
        assert!(load_credit_csv(&path, "grp").is_err());
        std::fs::write(&path, "f1,grp\n1.0,0\n2.0,1\n3.0,2\n").unwrap();
        assert!(load_credit_csv(&path, "grp").is_err());
        assert!(load_credit_csv(&path, "missing").is_err());
        assert!(load_credit_csv(dir.path().join("nope.csv").as_path(), "grp").is_err());
    }

    #[test]
    fn two_row_toy_yields_two_1xd_matrices() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("two.csv");
        std::fs::write(&path, "a,b,grp\n1.0,2.0,0\n3.0,4.0,1\n").unwrap();
        let groups = load_credit_csv(&path, "grp").unwrap();
        assert_eq!(groups[0].nrows(), 1);
        assert_eq!(groups[1].nrows(), 1);
        assert_eq!(groups[0].ncols(), 2);
    }

    #[test]
    fn cholesky_of_block_covariance_succeeds() {
        // Exercised inside the generator; rebuild explicitly for the check.
        let mut sigma = DMatrix::<f64>::zeros(16, 16);
        for b in 0..2 {
            for i in 0..8 {
                for j in 0..8 {
                    sigma[(b * 8 + i, b * 8 + j)] = 0.8f64.powi((i as i32 - j as i32).abs());
                }
            }
        }
        assert!(sigma.cholesky().is_some());
    }
}

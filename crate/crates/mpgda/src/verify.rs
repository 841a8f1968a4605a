//! Independent oracles for tests and acceptance: finite-difference gradient
//! checks, brute-force inner maximization, sign-pattern enumeration for the
//! tangent proximal subproblem, and replay of the accepted-step inequalities
//! from raw iterate snapshots.
//!
//! Evaluators here re-implement the benchmark objectives in plain scalar
//! loops and share no code paths with the production problem types.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::problems::MinimaxProblem;
use crate::proxsets::FeasibleSet;
use crate::solver::{PASettings, PGASettings, SolveOutcome, StepSnapshots};

#[derive(Clone, Debug)]
pub struct FDReport {
    pub max_rel_error: f64,
    pub worst_direction: Vec<f64>,
}

/// Central finite differences along random unit directions; the error is
/// relative to the claimed directional derivative (floored at 1).
pub fn fd_gradient_check(
    f: &dyn Fn(&[f64]) -> f64,
    grad: &dyn Fn(&[f64]) -> Vec<f64>,
    point: &[f64],
    n_samples: usize,
    step: f64,
    seed: u64,
) -> Result<FDReport> {
    if step <= 0.0 {
        return Err(Error::InvalidParameter("finite-difference step must be positive".into()));
    }
    let g = grad(point);
    if g.len() != point.len() {
        return Err(Error::DimensionMismatch { expected: point.len(), got: g.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = FDReport { max_rel_error: 0.0, worst_direction: vec![0.0; point.len()] };
    for _ in 0..n_samples {
        let mut dir: Vec<f64> = (0..point.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        for d in &mut dir {
            *d /= n;
        }
        let plus: Vec<f64> = point.iter().zip(&dir).map(|(p, d)| p + step * d).collect();
        let minus: Vec<f64> = point.iter().zip(&dir).map(|(p, d)| p - step * d).collect();
        let fd = (f(&plus) - f(&minus)) / (2.0 * step);
        let ip: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        let err = (fd - ip).abs() / ip.abs().max(1.0);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_direction = dir;
        }
    }
    Ok(report)
}

/// Grid maximizer of f(x, y) - g(y) over low-dimensional feasible sets.
/// `grid_resolution` is the grid spacing (defaults to 1e-4 of the set
/// diameter when None).
pub fn brute_force_y_max(
    problem: &dyn MinimaxProblem,
    x: &[f64],
    grid_resolution: Option<f64>,
) -> Result<(Vec<f64>, f64)> {
    let set = problem.feasible_set();
    if set.dim() > 3 {
        return Err(Error::UnsupportedComposition(format!(
            "grid search unsupported for dim {} > 3",
            set.dim()
        )));
    }
    let value = |y: &[f64]| problem.eval_f(x, y) - problem.reg_g().eval_flat(y);
    let mut best_y: Option<Vec<f64>> = None;
    let mut best = f64::NEG_INFINITY;
    let mut consider = |y: Vec<f64>| {
        let v = value(&y);
        if v > best {
            best = v;
            best_y = Some(y);
        }
    };
    match set {
        FeasibleSet::Interval { lo, hi } => {
            let diam = hi - lo;
            let h = grid_resolution.unwrap_or(1e-4 * diam);
            let n = (diam / h).ceil() as usize;
            for i in 0..=n {
                consider(vec![lo + diam * i as f64 / n as f64]);
            }
        }
        FeasibleSet::Box { .. } | FeasibleSet::LinfBall { .. } => {
            let (lo, hi, dim) = match set {
                FeasibleSet::Box { lo, hi, dim } => (*lo, *hi, *dim),
                FeasibleSet::LinfBall { radius, dim } => (-radius, *radius, *dim),
                _ => unreachable!(),
            };
            let diam = hi - lo;
            let h = grid_resolution.unwrap_or(1e-2 * diam);
            let n = ((diam / h).ceil() as usize).max(1);
            let mut idx = vec![0usize; dim];
            loop {
                let y: Vec<f64> =
                    idx.iter().map(|&i| lo + diam * i as f64 / n as f64).collect();
                consider(y);
                let mut carry = 0;
                loop {
                    idx[carry] += 1;
                    if idx[carry] <= n {
                        break;
                    }
                    idx[carry] = 0;
                    carry += 1;
                    if carry == dim {
                        break;
                    }
                }
                if carry == dim {
                    break;
                }
            }
        }
        FeasibleSet::Simplex { dim } => {
            let h = grid_resolution.unwrap_or(1e-2);
            let n = ((1.0 / h).ceil() as usize).max(1);
            match dim {
                1 => consider(vec![1.0]),
                2 => {
                    for i in 0..=n {
                        let a = i as f64 / n as f64;
                        consider(vec![a, 1.0 - a]);
                    }
                }
                3 => {
                    for i in 0..=n {
                        for j in 0..=(n - i) {
                            let a = i as f64 / n as f64;
                            let b = j as f64 / n as f64;
                            consider(vec![a, b, 1.0 - a - b]);
                        }
                    }
                }
                _ => unreachable!("dim checked above"),
            }
        }
    }
    Ok((best_y.expect("grid is non-empty"), best))
}

/// Scalar-loop re-implementations of the benchmark objectives, used by the
/// replay and as an independent cross-check of the production evaluators.
pub enum OracleProblem {
    Analytic,
    Fspca { groups: Vec<Vec<Vec<f64>>>, d: usize, r: usize, mu: f64 },
    Ssc { w: Vec<Vec<f64>>, p: usize, mu: f64 },
}

impl OracleProblem {
    pub fn fspca(groups: &[DMatrix<f64>], r: usize, mu: f64) -> Self {
        let d = groups[0].ncols();
        let rows = groups
            .iter()
            .map(|a| (0..a.nrows()).map(|i| a.row(i).iter().cloned().collect()).collect())
            .collect();
        OracleProblem::Fspca { groups: rows, d, r, mu }
    }

    pub fn ssc(w: &DMatrix<f64>, p: usize, mu: f64) -> Self {
        let rows = (0..w.nrows())
            .map(|i| w.row(i).iter().cloned().collect())
            .collect();
        OracleProblem::Ssc { w: rows, p, mu }
    }

    pub fn eval_f(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            OracleProblem::Analytic => -0.01 * x[0] * x[0] * x[0] * y[0] - y[0] * y[0].ln(),
            OracleProblem::Fspca { groups, d, r, .. } => {
                let a = self.a_of_x(x);
                let _ = (d, r, groups);
                a.iter().zip(y).map(|(ai, yi)| ai * yi).sum()
            }
            OracleProblem::Ssc { w, p, .. } => {
                let n = w.len();
                let lap = ssc_laplacian(w);
                let xxt = xxt_entries(x, n, *p);
                let mut val = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        let z = x[n * p + j * n + i];
                        val += lap[i][j] * xxt[i][j] + y[j * n + i] * (xxt[i][j] - z);
                    }
                }
                val
            }
        }
    }

    /// A(x) for the linear-in-y oracles.
    pub fn a_of_x(&self, x: &[f64]) -> Vec<f64> {
        match self {
            OracleProblem::Analytic => unreachable!("analytic oracle is not linear in y"),
            OracleProblem::Fspca { groups, d, r, .. } => groups
                .iter()
                .map(|rows| {
                    let mut total = 0.0;
                    for row in rows {
                        for col in 0..*r {
                            let mut dot = 0.0;
                            for t in 0..*d {
                                dot += row[t] * x[col * d + t];
                            }
                            total += dot * dot;
                        }
                    }
                    -total
                })
                .collect(),
            OracleProblem::Ssc { w, p, .. } => {
                let n = w.len();
                let xxt = xxt_entries(x, n, *p);
                let mut out = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        out[j * n + i] = xxt[i][j] - x[n * p + j * n + i];
                    }
                }
                out
            }
        }
    }

    pub fn h(&self, x: &[f64]) -> f64 {
        match self {
            OracleProblem::Analytic => 0.0,
            OracleProblem::Fspca { d, r, mu, .. } => {
                mu * x[..d * r].iter().map(|v| v.abs()).sum::<f64>()
            }
            OracleProblem::Ssc { w, p, mu } => {
                let n = w.len();
                mu * x[n * p..].iter().map(|v| v.abs()).sum::<f64>()
            }
        }
    }

    pub fn sigma_y(&self) -> f64 {
        match self {
            OracleProblem::Analytic => 1.0,
            OracleProblem::Fspca { .. } => 1.0,
            OracleProblem::Ssc { w, mu, .. } => mu * w.len() as f64,
        }
    }

    /// max_{y in S} f(x, y) - (gamma/2)||y||^2 - (rho/2)||y - y_k||^2
    /// (g = 0 for all three benchmarks), via an independent route.
    pub fn inner_max_value(&self, x: &[f64], y_k: &[f64], rho: f64, gamma: f64) -> f64 {
        match self {
            OracleProblem::Analytic => {
                let dphi = |y: f64| {
                    -0.01 * x[0] * x[0] * x[0] - y.ln() - 1.0 - gamma * y - rho * (y - y_k[0])
                };
                let (mut a, mut b) = (0.3f64, 1.0f64);
                let y = if dphi(a) <= 0.0 {
                    a
                } else if dphi(b) >= 0.0 {
                    b
                } else {
                    for _ in 0..80 {
                        let m = 0.5 * (a + b);
                        if dphi(m) > 0.0 {
                            a = m;
                        } else {
                            b = m;
                        }
                    }
                    0.5 * (a + b)
                };
                self.eval_f(x, &[y]) - 0.5 * gamma * y * y - 0.5 * rho * (y - y_k[0]).powi(2)
            }
            OracleProblem::Fspca { .. } => {
                let a = self.a_of_x(x);
                let w: Vec<f64> = y_k
                    .iter()
                    .zip(&a)
                    .map(|(yk, ai)| (rho * yk + ai) / (rho + gamma))
                    .collect();
                let y = simplex_project_enum(&w);
                self.envelope_at(&a, &y, y_k, rho, gamma)
            }
            OracleProblem::Ssc { mu, .. } => {
                let a = self.a_of_x(x);
                let y: Vec<f64> = y_k
                    .iter()
                    .zip(&a)
                    .map(|(yk, ai)| ((rho * yk + ai) / (rho + gamma)).clamp(-mu, *mu))
                    .collect();
                self.envelope_at(&a, &y, y_k, rho, gamma)
            }
        }
    }

    fn envelope_at(&self, a: &[f64], y: &[f64], y_k: &[f64], rho: f64, gamma: f64) -> f64 {
        let lin: f64 = a.iter().zip(y).map(|(ai, yi)| ai * yi).sum();
        let qr: f64 = y.iter().map(|v| v * v).sum::<f64>() * 0.5 * gamma;
        let qp: f64 = y.iter().zip(y_k).map(|(a2, b)| (a2 - b) * (a2 - b)).sum::<f64>() * 0.5 * rho;
        lin - qr - qp
    }

    fn q_value(&self, x: &[f64], y_k: &[f64], rho: f64, gamma: f64) -> f64 {
        self.h(x) + self.inner_max_value(x, y_k, rho, gamma)
    }

    fn merit(
        &self,
        x: &[f64],
        y: &[f64],
        y_prev: &[f64],
        gamma_km1: f64,
        gamma_k: f64,
        rho: f64,
    ) -> f64 {
        let n2 = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
        let d2 = |a: &[f64], b: &[f64]| {
            a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>()
        };
        let sigma2 = self.sigma_y().powi(2);
        let ratio = gamma_km1 / gamma_k;
        self.eval_f(x, y) + self.h(x) - 0.5 * gamma_km1 * n2(y)
            + d2(y, y_prev) / (2.0 * rho)
            + ((4.0 / rho) * ratio + 0.5 * gamma_km1) * sigma2
            + (4.0 / (rho * rho * gamma_k) - 4.0 / rho) * d2(y, y_prev)
            + (4.0 / rho) * (1.0 - ratio) * n2(y)
    }
}

fn ssc_laplacian(w: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = w.len();
    let mut inv_sqrt = vec![0.0; n];
    for i in 0..n {
        let s: f64 = w[i].iter().sum();
        inv_sqrt[i] = 1.0 / s.sqrt();
    }
    let mut lap = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let base = if i == j { 1.0 } else { 0.0 };
            lap[i][j] = base - inv_sqrt[i] * w[i][j] * inv_sqrt[j];
        }
    }
    lap
}

fn xxt_entries(x: &[f64], n: usize, p: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut dot = 0.0;
            for t in 0..p {
                dot += x[t * n + i] * x[t * n + j];
            }
            out[i][j] = dot;
        }
    }
    out
}

/// Exact simplex projection by support enumeration (2^n - 1 candidate
/// supports); exponential but exact, for oracle use on small n.
pub fn simplex_project_enum(w: &[f64]) -> Vec<f64> {
    let n = w.len();
    assert!(n <= 20, "support enumeration is exponential");
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << n) {
        let members: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let s: f64 = members.iter().map(|&i| w[i]).sum();
        let shift = (1.0 - s) / members.len() as f64;
        let mut y = vec![0.0; n];
        let mut ok = true;
        for &i in &members {
            y[i] = w[i] + shift;
            if y[i] < 0.0 {
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }
        let d: f64 = y.iter().zip(w).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, y));
        }
    }
    best.expect("the full support is always feasible").1
}

/// Brute-force dist(grad, N_y Simplex) by a two-stage scan over the scalar
/// parameter of the cone (the inner minimization over the nonpositive part
/// is closed-form per coordinate).
pub fn simplex_cone_distance_brute(y: &[f64], grad: &[f64], active_tol: f64) -> f64 {
    let phi = |c: f64| -> f64 {
        let mut v = 0.0;
        for (&yi, &gi) in y.iter().zip(grad) {
            if yi > active_tol {
                v += (gi - c) * (gi - c);
            } else {
                v += (gi - c).max(0.0).powi(2);
            }
        }
        v
    };
    let lo = grad.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
    let hi = grad.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1.0;
    let n = 2000;
    let mut best_c = lo;
    let mut best = f64::INFINITY;
    for i in 0..=n {
        let c = lo + (hi - lo) * i as f64 / n as f64;
        let v = phi(c);
        if v < best {
            best = v;
            best_c = c;
        }
    }
    let w = (hi - lo) / n as f64;
    let (mut a, mut b) = (best_c - 2.0 * w, best_c + 2.0 * w);
    for _ in 0..200 {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if phi(m1) < phi(m2) {
            b = m2;
        } else {
            a = m1;
        }
    }
    phi(0.5 * (a + b)).min(best).sqrt()
}

/// Exact minimizer value of
/// <g, v> + (beta/2)||v||^2 + mu ||x + v||_1 over the Stiefel tangent space,
/// by enumerating all 3^{dr} sign/zero patterns of x + v and solving the
/// equality-constrained quadratic program of each pattern.
pub fn tangent_prox_enumerate(x: &DMatrix<f64>, g: &DMatrix<f64>, beta: f64, mu: f64) -> f64 {
    let (d, r) = (x.nrows(), x.ncols());
    let dr = d * r;
    assert!(dr <= 8, "pattern enumeration is 3^(d r)");
    let n_tangent = r * (r + 1) / 2;

    // Tangent rows of the constraint matrix over vec(V), column-major.
    let mut tangent_rows: Vec<Vec<f64>> = Vec::with_capacity(n_tangent);
    for p in 0..r {
        for q in p..r {
            let mut row = vec![0.0; dr];
            for i in 0..d {
                row[q * d + i] += x[(i, p)];
                row[p * d + i] += x[(i, q)];
            }
            tangent_rows.push(row);
        }
    }

    let xv: Vec<f64> = x.as_slice().to_vec();
    let gv: Vec<f64> = g.as_slice().to_vec();
    let objective = |v: &[f64]| -> f64 {
        let lin: f64 = gv.iter().zip(v).map(|(a, b)| a * b).sum();
        let quad: f64 = v.iter().map(|a| a * a).sum::<f64>() * beta / 2.0;
        let l1: f64 = xv.iter().zip(v).map(|(a, b)| (a + b).abs()).sum::<f64>() * mu;
        lin + quad + l1
    };

    let patterns = 3usize.pow(dr as u32);
    let mut best = objective(&vec![0.0; dr]);
    for code in 0..patterns {
        let mut digits = vec![0u8; dr];
        let mut c = code;
        for d_i in digits.iter_mut() {
            *d_i = (c % 3) as u8;
            c /= 3;
        }
        // Assemble rows: tangent constraints plus (x + v)_i = 0 on the zero set.
        let mut rows = tangent_rows.clone();
        let mut rhs: Vec<f64> = vec![0.0; n_tangent];
        let mut sigma = vec![0.0; dr];
        for (i, &dig) in digits.iter().enumerate() {
            match dig {
                0 => {
                    let mut row = vec![0.0; dr];
                    row[i] = 1.0;
                    rows.push(row);
                    rhs.push(-xv[i]);
                }
                1 => sigma[i] = 1.0,
                _ => sigma[i] = -1.0,
            }
        }
        let m = rows.len();
        let a = DMatrix::from_fn(m, dr, |i, j| rows[i][j]);
        let b = DVector::from_vec(rhs);

        // Min-norm least squares via the eigendecomposition of A^T A; the
        // eigenvectors with vanishing eigenvalue span the feasible subspace.
        let ata = a.transpose() * &a;
        let atb = a.transpose() * &b;
        let eig = ata.symmetric_eigen();
        let lam_max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        let tol = 1e-10 * lam_max.max(1.0);
        let mut v0 = DVector::<f64>::zeros(dr);
        for idx in 0..dr {
            let lam = eig.eigenvalues[idx];
            if lam > tol {
                let q = eig.eigenvectors.column(idx);
                v0 += q * (q.dot(&atb) / lam);
            }
        }
        if (&a * &v0 - &b).norm() > 1e-8 {
            continue; // infeasible pattern
        }
        // Stationarity over the nullspace: c = -Q^T (g_tilde / beta + v0).
        let gt = DVector::from_fn(dr, |i, _| gv[i] + mu * sigma[i]);
        let mut v = v0.clone();
        for idx in 0..dr {
            if eig.eigenvalues[idx] <= tol {
                let q = eig.eigenvectors.column(idx);
                let coef = -(q.dot(&gt) / beta + q.dot(&v0));
                v += q * coef;
            }
        }
        best = best.min(objective(v.as_slice()));
    }
    best
}

pub enum AlgoSettings<'a> {
    Pa(&'a PASettings),
    Pga(&'a PGASettings),
}

#[derive(Clone, Debug)]
pub struct StepVerdict {
    pub k: usize,
    pub i: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct LedgerReport {
    pub steps: Vec<StepVerdict>,
    /// True when the snapshot buffer was truncated and only a prefix was
    /// replayable.
    pub truncated: bool,
}

impl LedgerReport {
    pub fn all_pass(&self) -> bool {
        self.steps.iter().all(|s| s.pass)
    }

    pub fn failures(&self) -> Vec<&StepVerdict> {
        self.steps.iter().filter(|s| !s.pass).collect()
    }
}

/// Recomputes both sides of every accepted-step inequality from the raw
/// iterate snapshots using the independent oracle evaluators, flagging any
/// violation beyond `slack`.
pub fn replay_descent_ledger(
    outcome: &SolveOutcome,
    oracle: &OracleProblem,
    settings: AlgoSettings,
    slack: f64,
) -> Result<LedgerReport> {
    let snaps = outcome
        .snapshots
        .as_ref()
        .ok_or_else(|| Error::InsufficientData("run recorded no snapshots".into()))?;
    let mut report = LedgerReport { steps: Vec::new(), truncated: snaps.truncated };
    match (&snaps.steps, settings) {
        (StepSnapshots::Pa(steps), AlgoSettings::Pa(s)) => {
            let sigma2 = oracle.sigma_y().powi(2);
            for st in steps {
                let y_k = &snaps
                    .outer
                    .get(st.k)
                    .ok_or_else(|| Error::InsufficientData("missing outer snapshot".into()))?
                    .y;
                let q_before = oracle.q_value(&st.x_before, y_k, st.rho, st.gamma);
                let q_after = oracle.q_value(&st.x_after, y_k, st.rho, st.gamma);
                let step = s.eta.powi(st.j as i32);
                let nv2: f64 = st.v.iter().map(|a| a * a).sum();
                let rhs = q_before - s.c1 * step * st.beta * nv2 + 2.0 * st.rho * sigma2;
                report.steps.push(StepVerdict {
                    k: st.k,
                    i: st.i,
                    lhs: q_after,
                    rhs,
                    pass: q_after <= rhs + slack,
                });
            }
        }
        (StepSnapshots::Pga(steps), AlgoSettings::Pga(s)) => {
            let gamma = |k: i64| 2.0 / (s.rho * (k as f64 + s.kappa + 2.0).powf(0.25));
            for st in steps {
                let k = st.k as i64;
                let merit_cur = oracle.merit(
                    &st.x_before,
                    &st.y_cur,
                    &st.y_prev,
                    gamma(k - 1),
                    gamma(k),
                    s.rho,
                );
                let merit_next = oracle.merit(
                    &st.x_after,
                    &st.y_next,
                    &st.y_cur,
                    gamma(k),
                    gamma(k + 1),
                    s.rho,
                );
                let step = s.eta.powi(st.j as i32);
                let nv2: f64 = st.v.iter().map(|a| a * a).sum();
                let dy2: f64 = st
                    .y_next
                    .iter()
                    .zip(&st.y_cur)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                let rhs = merit_cur - s.c1 * step * st.beta * nv2 - dy2 / (10.0 * s.rho);
                report.steps.push(StepVerdict {
                    k: st.k,
                    i: 0,
                    lhs: merit_next,
                    rhs,
                    pass: merit_next <= rhs + slack,
                });
            }
        }
        _ => {
            return Err(Error::InvalidParameter(
                "snapshot kind does not match the settings tag".into(),
            ))
        }
    }
    Ok(report)
}

//! Inner subproblems of the two solvers:
//!
//! * the tangent-space proximal descent direction
//!   `argmin_{v in T_x M} <grad, v> + h(x + v) + (beta/2) ||v||^2`,
//!   closed-form on Euclidean and smooth Stiefel factors, semismooth Newton
//!   on the dual multiplier for l1-regularized Stiefel factors;
//! * the strongly concave y-maximization behind the proximal ascent step,
//!   closed-form when f is linear in y, derivative bisection on 1-D
//!   intervals, FISTA otherwise.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::manifold::{Manifold, ManifoldPoint, TangentVector};
use crate::problems::MinimaxProblem;
use crate::proxsets::{prox_g_over_s, soft_threshold, FeasibleSet, Regularizer};

/// Default KKT tolerance for inner subproblems: two orders below the
/// tightest outer termination threshold.
pub const SUBPROBLEM_TOL: f64 = 1e-10;
/// Semismooth Newton iteration cap.
const SSN_MAX_NEWTON: usize = 50;
/// Conjugate-gradient cap per Newton step.
const SSN_MAX_CG: usize = 100;
/// Dual-ascent fallback cap when Newton stalls.
const SSN_MAX_FALLBACK: usize = 5000;
/// FISTA iteration cap.
const FISTA_MAX_ITERS: usize = 2000;

#[derive(Clone, Debug)]
pub struct TangentProxResult {
    pub v: TangentVector,
    pub kkt_residual: f64,
    pub inner_iterations: usize,
}

#[derive(Clone, Debug)]
pub struct ConcaveMaxResult {
    pub y: Vec<f64>,
    pub residual: f64,
    pub inner_iterations: usize,
}

/// Solves `argmin_{v in T_x M} <grad, v> + h(x + v) + (beta/2) ||v||^2`.
///
/// Dispatch per product factor: Euclidean factors reduce to a prox step,
/// Stiefel factors without regularization to a projected gradient, Stiefel
/// factors carrying an l1 term to a semismooth Newton solve on the dual
/// multiplier of the tangency constraint.
pub fn solve_tangent_prox(
    x: &ManifoldPoint,
    grad: &[f64],
    beta: f64,
    reg: &Regularizer,
    tol: f64,
) -> Result<TangentProxResult> {
    if beta <= 0.0 || !beta.is_finite() {
        return Err(Error::InvalidParameter(format!("beta {beta} must be positive")));
    }
    let manifold = x.manifold();
    if grad.len() != manifold.ambient_dim() {
        return Err(Error::DimensionMismatch {
            expected: manifold.ambient_dim(),
            got: grad.len(),
        });
    }
    let mut v = vec![0.0; grad.len()];
    let mut residual = 0.0f64;
    let mut iterations = 0usize;
    for (idx, (leaf, range)) in manifold.leaves().into_iter().enumerate() {
        let xs = &x.data()[range.clone()];
        let gs = &grad[range.clone()];
        let mu = reg.weight_on_factor(idx);
        match leaf {
            Manifold::Euclidean { .. } => {
                if mu > 0.0 {
                    let shifted: Vec<f64> =
                        xs.iter().zip(gs).map(|(xi, gi)| xi - gi / beta).collect();
                    let d = soft_threshold(&shifted, mu / beta);
                    for (slot, (di, xi)) in v[range].iter_mut().zip(d.iter().zip(xs)) {
                        *slot = di - xi;
                    }
                } else {
                    for (slot, gi) in v[range].iter_mut().zip(gs) {
                        *slot = -gi / beta;
                    }
                }
            }
            Manifold::Stiefel { rows, cols } => {
                let xm = DMatrix::from_column_slice(*rows, *cols, xs);
                let gm = DMatrix::from_column_slice(*rows, *cols, gs);
                if mu > 0.0 {
                    let (vm, res, iters) = ssn_stiefel_l1(&xm, &gm, beta, mu, tol)?;
                    v[range].copy_from_slice(vm.as_slice());
                    residual = residual.max(res);
                    iterations += iters;
                } else {
                    let xtg = xm.transpose() * &gm;
                    let sym = (&xtg + xtg.transpose()) * 0.5;
                    let proj = (&gm - &xm * sym) * (-1.0 / beta);
                    v[range].copy_from_slice(proj.as_slice());
                }
            }
            Manifold::Product { .. } => unreachable!("leaves are not products"),
        }
    }
    if residual > tol {
        return Err(Error::SubproblemFailure { residual, iterations });
    }
    let v = TangentVector::from_parts(x.clone(), v);
    Ok(TangentProxResult { v, kkt_residual: residual, inner_iterations: iterations })
}

/// Semismooth Newton on the dual multiplier of the Stiefel tangency
/// constraint, with a conjugate-gradient inner solve and a guaranteed
/// dual-ascent fallback.
///
/// With U(L) = X - (G + 2 X L) / beta and D(L) the soft threshold of U at
/// mu/beta, the residual map is E(L) = X^T D + D^T X - 2I; the subproblem
/// solution is V = D(L*) - X at the root L*.
fn ssn_stiefel_l1(
    x: &DMatrix<f64>,
    g: &DMatrix<f64>,
    beta: f64,
    mu: f64,
    tol: f64,
) -> Result<(DMatrix<f64>, f64, usize)> {
    let r = x.ncols();
    let thresh = mu / beta;
    let eye = DMatrix::<f64>::identity(r, r);

    let eval = |lam: &DMatrix<f64>| -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let u = x - (g + x * lam * 2.0) / beta;
        let d = u.map(|v| v.signum() * (v.abs() - thresh).max(0.0));
        let e = x.transpose() * &d + d.transpose() * x - &eye * 2.0;
        (e, d, u)
    };

    let mut lam = DMatrix::<f64>::zeros(r, r);
    let mut iterations = 0usize;
    let (mut e, mut d, mut u) = eval(&lam);
    let mut best = (lam.clone(), e.norm());

    for _ in 0..SSN_MAX_NEWTON {
        let norm_e = e.norm();
        if norm_e <= tol {
            return Ok((d - x, norm_e, iterations));
        }
        if norm_e < best.1 {
            best = (lam.clone(), norm_e);
        }
        iterations += 1;

        // Generalized Jacobian action K[S] = X^T (Theta .* (X S)) + (..)^T X
        // with Theta the non-thresholded mask; solve K[S] = (beta/2) E by CG.
        let theta = u.map(|v| if v.abs() > thresh { 1.0 } else { 0.0 });
        let apply = |s: &DMatrix<f64>| -> DMatrix<f64> {
            let t = (x * s).component_mul(&theta);
            x.transpose() * &t + t.transpose() * x + s * 1e-12
        };
        let rhs = &e * (beta / 2.0);
        let mut s = DMatrix::<f64>::zeros(r, r);
        let mut res = rhs.clone();
        let mut p = res.clone();
        let mut rs = res.dot(&res);
        let rhs_norm = rhs.norm().max(1e-300);
        for _ in 0..SSN_MAX_CG {
            if rs.sqrt() <= 1e-6 * rhs_norm {
                break;
            }
            let kp = apply(&p);
            let denom = p.dot(&kp).max(1e-300);
            let alpha = rs / denom;
            s += &p * alpha;
            res -= kp * alpha;
            let rs_next = res.dot(&res);
            p = &res + &p * (rs_next / rs);
            rs = rs_next;
        }
        s = (&s + s.transpose()) * 0.5;

        // Backtrack on ||E||.
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let cand = &lam + &s * step;
            let (e2, d2, u2) = eval(&cand);
            if e2.norm() < norm_e * (1.0 - 1e-4 * step) {
                lam = cand;
                e = e2;
                d = d2;
                u = u2;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }

    // Newton stalled: dual gradient ascent with the safe step beta/4
    // (the dual gradient is E and is (4/beta)-Lipschitz).
    if best.1 < e.norm() {
        lam = best.0.clone();
        let out = eval(&lam);
        e = out.0;
        d = out.1;
    }
    for _ in 0..SSN_MAX_FALLBACK {
        let norm_e = e.norm();
        if norm_e <= tol {
            return Ok((d - x, norm_e, iterations));
        }
        iterations += 1;
        lam += &e * (beta / 4.0);
        let out = eval(&lam);
        e = out.0;
        d = out.1;
    }
    let norm_e = e.norm();
    if norm_e <= tol {
        Ok((d - x, norm_e, iterations))
    } else {
        Err(Error::SubproblemFailure { residual: norm_e.min(best.1), iterations })
    }
}

/// Closed-form proximal ascent target when f is linear in y:
/// prox of g over S at w = (rho * y_prev + A(x)) / (rho + gamma).
pub fn ybar_linear(
    a_of_x: &[f64],
    y_prev: &[f64],
    rho: f64,
    gamma: f64,
    reg_g: &Regularizer,
    set: &FeasibleSet,
) -> Result<Vec<f64>> {
    if rho <= 0.0 || gamma <= 0.0 {
        return Err(Error::InvalidParameter("rho and gamma must be positive".into()));
    }
    if a_of_x.len() != y_prev.len() {
        return Err(Error::DimensionMismatch { expected: y_prev.len(), got: a_of_x.len() });
    }
    let scale = rho + gamma;
    let w: Vec<f64> = y_prev
        .iter()
        .zip(a_of_x)
        .map(|(yp, a)| (rho * yp + a) / scale)
        .collect();
    prox_g_over_s(reg_g, set, &w, 1.0 / scale)
}

/// Maximizes `f(x, y) - g(y) - (gamma/2)||y||^2 - (rho/2)||y - y_prev||^2`
/// over S, to projected-gradient residual `tol`.
///
/// Linear-in-y problems use the closed form, 1-D intervals use derivative
/// bisection, everything else runs FISTA with stepsize 1/(L_y + gamma + rho)
/// and restart on non-monotone steps.
pub fn maximize_concave(
    problem: &dyn MinimaxProblem,
    x: &ManifoldPoint,
    y_prev: &[f64],
    rho: f64,
    gamma: f64,
    tol: f64,
) -> Result<ConcaveMaxResult> {
    if rho + gamma <= 0.0 {
        return Err(Error::InvalidParameter("strong concavity modulus must be positive".into()));
    }
    if let Some(a) = problem.linear_y(x.data()) {
        let y = ybar_linear(&a, y_prev, rho, gamma, problem.reg_g(), problem.feasible_set())?;
        return Ok(ConcaveMaxResult { y, residual: 0.0, inner_iterations: 0 });
    }
    if let FeasibleSet::Interval { lo, hi } = *problem.feasible_set() {
        if !problem.reg_g().is_zero() {
            return Err(Error::UnsupportedComposition(
                "interval bisection requires g = 0".into(),
            ));
        }
        return bisect_interval(problem, x, y_prev, rho, gamma, lo, hi, tol);
    }
    fista(problem, x, y_prev, rho, gamma, tol)
}

#[allow(clippy::too_many_arguments)]
fn bisect_interval(
    problem: &dyn MinimaxProblem,
    x: &ManifoldPoint,
    y_prev: &[f64],
    rho: f64,
    gamma: f64,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<ConcaveMaxResult> {
    let dphi = |y: f64| -> f64 {
        problem.grad_y_f(x.data(), &[y])[0] - gamma * y - rho * (y - y_prev[0])
    };
    let mut iterations = 0usize;
    let (mut a, mut b) = (lo, hi);
    let da = dphi(a);
    if da <= 0.0 {
        return Ok(ConcaveMaxResult { y: vec![a], residual: 0.0, inner_iterations: 0 });
    }
    let db = dphi(b);
    if db >= 0.0 {
        return Ok(ConcaveMaxResult { y: vec![b], residual: 0.0, inner_iterations: 0 });
    }
    while b - a > tol {
        iterations += 1;
        let m = 0.5 * (a + b);
        if dphi(m) > 0.0 {
            a = m;
        } else {
            b = m;
        }
        if iterations > 200 {
            break;
        }
    }
    let y = 0.5 * (a + b);
    Ok(ConcaveMaxResult { y: vec![y], residual: dphi(y).abs().min(b - a), inner_iterations: iterations })
}

fn fista(
    problem: &dyn MinimaxProblem,
    x: &ManifoldPoint,
    y_prev: &[f64],
    rho: f64,
    gamma: f64,
    tol: f64,
) -> Result<ConcaveMaxResult> {
    let set = problem.feasible_set();
    let reg_g = problem.reg_g();
    let (_, ly) = problem.lipschitz();
    let lip = ly + gamma + rho;
    let step = 1.0 / lip;

    // psi(y) = -f(x,y) + (gamma/2)||y||^2 + (rho/2)||y - y_prev||^2
    let grad_psi = |y: &[f64]| -> Vec<f64> {
        let gy = problem.grad_y_f(x.data(), y);
        y.iter()
            .zip(y_prev)
            .zip(&gy)
            .map(|((yi, ypi), gi)| -gi + gamma * yi + rho * (yi - ypi))
            .collect()
    };
    let obj = |y: &[f64]| -> f64 {
        let quad: f64 = y
            .iter()
            .zip(y_prev)
            .map(|(yi, ypi)| 0.5 * gamma * yi * yi + 0.5 * rho * (yi - ypi) * (yi - ypi))
            .sum();
        -problem.eval_f(x.data(), y) + quad + reg_g.eval_flat(y)
    };
    let forward = |y: &[f64]| -> Result<Vec<f64>> {
        let g = grad_psi(y);
        let shifted: Vec<f64> = y.iter().zip(&g).map(|(yi, gi)| yi - step * gi).collect();
        prox_g_over_s(reg_g, set, &shifted, step)
    };

    let mut y = set.project(y_prev)?;
    let mut z = y.clone();
    let mut t = 1.0f64;
    let mut f_cur = obj(&y);
    let mut residual = f64::INFINITY;
    let mut iterations = 0usize;
    for _ in 0..FISTA_MAX_ITERS {
        iterations += 1;
        let y_next = forward(&z)?;
        let f_next = obj(&y_next);
        if f_next > f_cur {
            // Restart the momentum from the last monotone iterate.
            t = 1.0;
            z = y.clone();
            let y_retry = forward(&z)?;
            let f_retry = obj(&y_retry);
            let diff: f64 = y_retry
                .iter()
                .zip(&y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            residual = diff / step;
            y = y_retry;
            f_cur = f_retry;
        } else {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let momentum = (t - 1.0) / t_next;
            let mut z_next: Vec<f64> = y_next
                .iter()
                .zip(&y)
                .map(|(a, b)| a + momentum * (a - b))
                .collect();
            // Keep the extrapolation inside S so f stays in-domain.
            z_next = set.project(&z_next)?;
            let diff: f64 = y_next
                .iter()
                .zip(&y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            residual = diff / step;
            y = y_next;
            f_cur = f_next;
            z = z_next;
            t = t_next;
        }
        if residual <= tol {
            // Confirm with the fixed-point residual at y itself.
            let check = forward(&y)?;
            let fp: f64 = check
                .iter()
                .zip(&y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
                / step;
            if fp <= tol {
                return Ok(ConcaveMaxResult { y, residual: fp, inner_iterations: iterations });
            }
            residual = fp;
        }
    }
    Err(Error::SubproblemFailure { residual, iterations })
}

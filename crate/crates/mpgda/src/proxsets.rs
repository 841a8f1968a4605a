//! Proximal operators and feasible-set machinery: l1 prox, simplex
//! projection, box/ball clamps, and the normal-cone distances used by the
//! stationarity measure.

use crate::error::{Error, Result};
use crate::manifold::Manifold;

/// Active-set threshold: a simplex coordinate counts as zero below this.
pub const ACTIVE_TOL: f64 = 1e-10;
/// Feasibility tolerance for points handed to the normal-cone distance.
pub const FEAS_TOL: f64 = 1e-8;

/// Convex nonsmooth term attached to the x-side (h) or y-side (g).
#[derive(Clone, Debug, PartialEq)]
pub enum Regularizer {
    Zero,
    /// weight * ||.||_1, optionally restricted to one factor of a product
    /// manifold (None applies to the whole buffer).
    L1 { weight: f64, factor: Option<usize> },
}

impl Regularizer {
    pub fn l1(weight: f64) -> Result<Self> {
        if weight < 0.0 || !weight.is_finite() {
            return Err(Error::InvalidParameter(format!("l1 weight {weight} < 0")));
        }
        Ok(Regularizer::L1 { weight, factor: None })
    }

    pub fn l1_on_factor(weight: f64, factor: usize) -> Result<Self> {
        if weight < 0.0 || !weight.is_finite() {
            return Err(Error::InvalidParameter(format!("l1 weight {weight} < 0")));
        }
        Ok(Regularizer::L1 { weight, factor: Some(factor) })
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Regularizer::Zero)
    }

    /// Weight applied to leaf factor `idx` of the manifold layout (0 when the
    /// regularizer does not touch that factor).
    pub fn weight_on_factor(&self, idx: usize) -> f64 {
        match self {
            Regularizer::Zero => 0.0,
            Regularizer::L1 { weight, factor } => match factor {
                Some(f) if *f != idx => 0.0,
                _ => *weight,
            },
        }
    }

    /// Evaluates the regularizer on a flat buffer laid out by `manifold`.
    pub fn eval(&self, manifold: &Manifold, x: &[f64]) -> f64 {
        match self {
            Regularizer::Zero => 0.0,
            Regularizer::L1 { weight, factor } => match factor {
                None => weight * x.iter().map(|v| v.abs()).sum::<f64>(),
                Some(f) => {
                    let leaves = manifold.leaves();
                    let range = leaves[*f].1.clone();
                    weight * x[range].iter().map(|v| v.abs()).sum::<f64>()
                }
            },
        }
    }

    /// Evaluates on a plain vector (y-side regularizers have no layout).
    pub fn eval_flat(&self, y: &[f64]) -> f64 {
        match self {
            Regularizer::Zero => 0.0,
            Regularizer::L1 { weight, .. } => weight * y.iter().map(|v| v.abs()).sum::<f64>(),
        }
    }

    /// Lipschitz constant of the regularizer on its domain:
    /// weight * sqrt(dim of the covered factor).
    pub fn lipschitz(&self, manifold: &Manifold) -> f64 {
        match self {
            Regularizer::Zero => 0.0,
            Regularizer::L1 { weight, factor } => {
                let dim = match factor {
                    None => manifold.ambient_dim(),
                    Some(f) => manifold.leaves()[*f].1.len(),
                };
                weight * (dim as f64).sqrt()
            }
        }
    }
}

/// Compact convex feasible set S for the y-player.
#[derive(Clone, Debug, PartialEq)]
pub enum FeasibleSet {
    Simplex { dim: usize },
    Box { lo: f64, hi: f64, dim: usize },
    LinfBall { radius: f64, dim: usize },
    Interval { lo: f64, hi: f64 },
}

impl FeasibleSet {
    pub fn simplex(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("simplex dimension 0".into()));
        }
        Ok(FeasibleSet::Simplex { dim })
    }

    pub fn linf_ball(radius: f64, dim: usize) -> Result<Self> {
        if radius <= 0.0 || dim == 0 {
            return Err(Error::InvalidParameter("linf ball needs radius > 0".into()));
        }
        Ok(FeasibleSet::LinfBall { radius, dim })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        if lo >= hi {
            return Err(Error::InvalidParameter(format!("empty interval [{lo}, {hi}]")));
        }
        Ok(FeasibleSet::Interval { lo, hi })
    }

    pub fn boxed(lo: f64, hi: f64, dim: usize) -> Result<Self> {
        if lo >= hi || dim == 0 {
            return Err(Error::InvalidParameter(format!("empty box [{lo}, {hi}]")));
        }
        Ok(FeasibleSet::Box { lo, hi, dim })
    }

    pub fn dim(&self) -> usize {
        match self {
            FeasibleSet::Simplex { dim }
            | FeasibleSet::Box { dim, .. }
            | FeasibleSet::LinfBall { dim, .. } => *dim,
            FeasibleSet::Interval { .. } => 1,
        }
    }

    /// sigma_y = sup_{y in S} ||y||, in closed form per set kind.
    pub fn sigma_y(&self) -> f64 {
        match self {
            FeasibleSet::Simplex { .. } => 1.0,
            FeasibleSet::Box { lo, hi, dim } => lo.abs().max(hi.abs()) * (*dim as f64).sqrt(),
            FeasibleSet::LinfBall { radius, dim } => radius * (*dim as f64).sqrt(),
            FeasibleSet::Interval { lo, hi } => lo.abs().max(hi.abs()),
        }
    }

    pub fn contains(&self, y: &[f64], tol: f64) -> bool {
        if y.len() != self.dim() {
            return false;
        }
        match self {
            FeasibleSet::Simplex { .. } => {
                y.iter().all(|&v| v >= -tol)
                    && (y.iter().sum::<f64>() - 1.0).abs() <= tol * (y.len() as f64).sqrt()
            }
            FeasibleSet::Box { lo, hi, .. } | FeasibleSet::Interval { lo, hi } => {
                y.iter().all(|&v| v >= lo - tol && v <= hi + tol)
            }
            FeasibleSet::LinfBall { radius, .. } => y.iter().all(|&v| v.abs() <= radius + tol),
        }
    }

    /// Euclidean projection onto S.
    pub fn project(&self, w: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: w.len() });
        }
        Ok(match self {
            FeasibleSet::Simplex { .. } => simplex_project(w),
            FeasibleSet::Box { lo, hi, .. } | FeasibleSet::Interval { lo, hi } => {
                w.iter().map(|&v| v.clamp(*lo, *hi)).collect()
            }
            FeasibleSet::LinfBall { radius, .. } => {
                w.iter().map(|&v| v.clamp(-radius, *radius)).collect()
            }
        })
    }
}

/// Coordinatewise soft threshold.
pub fn soft_threshold(u: &[f64], t: f64) -> Vec<f64> {
    u.iter()
        .map(|&v| v.signum() * (v.abs() - t).max(0.0))
        .collect()
}

/// Euclidean projection onto the probability simplex (sort-based threshold).
pub fn simplex_project(w: &[f64]) -> Vec<f64> {
    let n = w.len();
    let mut sorted = w.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut tau = (w.iter().sum::<f64>() - 1.0) / n as f64;
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            tau = t;
        } else {
            break;
        }
    }
    w.iter().map(|&v| (v - tau).max(0.0)).collect()
}

/// argmin_x h(x) + ||x - u||^2 / (2 alpha) for the supported regularizers.
///
/// The buffer `u` is taken to be the domain the regularizer acts on; callers
/// with a factor-scoped h pass the factor slice.
pub fn prox_h(reg: &Regularizer, u: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if alpha <= 0.0 || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("prox stepsize {alpha} <= 0")));
    }
    Ok(match reg {
        Regularizer::Zero => u.to_vec(),
        Regularizer::L1 { weight, .. } => soft_threshold(u, alpha * weight),
    })
}

/// argmin_{y in S} g(y) + ||y - w||^2 / (2 alpha).
///
/// Supported compositions: (Zero, any set) and (L1, LinfBall). The l1-over-
/// ball case is soft-threshold followed by clamp, exact by separability
/// because the ball contains the origin.
pub fn prox_g_over_s(
    reg: &Regularizer,
    set: &FeasibleSet,
    w: &[f64],
    alpha: f64,
) -> Result<Vec<f64>> {
    if alpha <= 0.0 || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("prox stepsize {alpha} <= 0")));
    }
    if w.len() != set.dim() {
        return Err(Error::DimensionMismatch { expected: set.dim(), got: w.len() });
    }
    match (reg, set) {
        (Regularizer::Zero, _) => set.project(w),
        (Regularizer::L1 { weight, .. }, FeasibleSet::LinfBall { radius, .. }) => {
            Ok(soft_threshold(w, alpha * weight)
                .into_iter()
                .map(|v| v.clamp(-radius, *radius))
                .collect())
        }
        (reg, set) => Err(Error::UnsupportedComposition(format!(
            "prox of {reg:?} over {set:?} is not supported"
        ))),
    }
}

/// Exact Euclidean distance from 0 to grad - dg(y) - N_y(S).
pub fn normal_cone_distance(
    set: &FeasibleSet,
    reg: &Regularizer,
    y: &[f64],
    grad: &[f64],
) -> Result<f64> {
    if y.len() != set.dim() || grad.len() != set.dim() {
        return Err(Error::DimensionMismatch { expected: set.dim(), got: y.len().max(grad.len()) });
    }
    if !set.contains(y, FEAS_TOL) {
        return Err(Error::Infeasible("point not in the feasible set".into()));
    }
    match (set, reg) {
        (FeasibleSet::Simplex { .. }, Regularizer::Zero) => Ok(simplex_cone_distance(y, grad)),
        (FeasibleSet::Simplex { .. }, _) => Err(Error::UnsupportedComposition(
            "normal-cone distance over the simplex needs g = 0".into(),
        )),
        (set, reg) => {
            // Separable sets: per coordinate, D_i = mu * d|y_i| + N_i is an
            // interval; the residual is the distance from grad_i to it.
            let (lo, hi) = match set {
                FeasibleSet::Box { lo, hi, .. } | FeasibleSet::Interval { lo, hi } => (*lo, *hi),
                FeasibleSet::LinfBall { radius, .. } => (-radius, *radius),
                FeasibleSet::Simplex { .. } => unreachable!(),
            };
            let mu = match reg {
                Regularizer::Zero => 0.0,
                Regularizer::L1 { weight, .. } => *weight,
            };
            let mut sq = 0.0;
            for (&yi, &gi) in y.iter().zip(grad) {
                let (mut a, mut b) = subgrad_abs_interval(yi, mu);
                // Normal cone of [lo, hi] at yi.
                if yi <= lo + ACTIVE_TOL {
                    a = f64::NEG_INFINITY;
                }
                if yi >= hi - ACTIVE_TOL {
                    b = f64::INFINITY;
                }
                let r = if gi < a {
                    a - gi
                } else if gi > b {
                    gi - b
                } else {
                    0.0
                };
                sq += r * r;
            }
            Ok(sq.sqrt())
        }
    }
}

/// Interval of mu * d|.|(y).
fn subgrad_abs_interval(y: f64, mu: f64) -> (f64, f64) {
    if mu == 0.0 {
        (0.0, 0.0)
    } else if y > ACTIVE_TOL {
        (mu, mu)
    } else if y < -ACTIVE_TOL {
        (-mu, -mu)
    } else {
        (-mu, mu)
    }
}

/// dist(grad, N_y Simplex): minimize over c the piecewise quadratic
/// sum_{active}(g_i - c)^2 + sum_{inactive} max(g_i - c, 0)^2,
/// scanning the sorted breakpoints exactly.
fn simplex_cone_distance(y: &[f64], grad: &[f64]) -> f64 {
    let mut s_active = 0.0;
    let mut n_active = 0usize;
    let mut inactive: Vec<f64> = Vec::new();
    for (&yi, &gi) in y.iter().zip(grad) {
        if yi > ACTIVE_TOL {
            s_active += gi;
            n_active += 1;
        } else {
            inactive.push(gi);
        }
    }
    inactive.sort_by(|a, b| b.partial_cmp(a).unwrap());

    let phi = |c: f64| -> f64 {
        let mut v = 0.0;
        for (&yi, &gi) in y.iter().zip(grad) {
            if yi > ACTIVE_TOL {
                v += (gi - c) * (gi - c);
            } else {
                let r = (gi - c).max(0.0);
                v += r * r;
            }
        }
        v
    };

    // Candidate stationary points on each breakpoint interval, plus the
    // breakpoints themselves; phi is convex so the minimum is among these.
    let mut best = f64::INFINITY;
    let mut prefix = 0.0;
    for j in 0..=inactive.len() {
        if j > 0 {
            prefix += inactive[j - 1];
        }
        let c = (s_active + prefix) / (n_active + j) as f64;
        best = best.min(phi(c));
    }
    for &b in &inactive {
        best = best.min(phi(b));
    }
    best.max(0.0).sqrt()
}

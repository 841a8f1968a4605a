//! The two outer solvers: an alternating scheme that takes one or more
//! manifold proximal gradient descent steps followed by a proximal ascent
//! step (PA), and a single-loop variant that pairs each descent step with one
//! proximal gradient ascent step against a merit function (PGA). Includes the
//! BB stepsize, the adaptive proximal-weight schedule, the game-stationarity
//! measure, and iterate logging with optional raw snapshots for replay.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::manifold::{retract, tangent_project, ManifoldPoint};
use crate::problems::MinimaxProblem;
use crate::proxsets::{normal_cone_distance, FEAS_TOL};
use crate::subsolver::{maximize_concave, solve_tangent_prox, SUBPROBLEM_TOL};

/// Snapshot buffers stop growing past this many stored floats (~480 MB) to
/// bound memory on large instances; the replay then covers the recorded
/// prefix and the report is marked truncated.
const MAX_SNAPSHOT_FLOATS: usize = 60_000_000;

#[derive(Clone, Debug)]
pub struct PASettings {
    pub c1: f64,
    pub eta: f64,
    pub gamma0: f64,
    pub xi0: f64,
    pub theta: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub l_min: f64,
    pub l_max: f64,
    pub t_k: usize,
    pub delta0: f64,
    pub epsilon: f64,
    pub max_outer: usize,
    pub max_backtracks: usize,
}

impl PASettings {
    /// Experiment-specific knobs with the shared defaults
    /// (c1 = 1e-4, eta = 0.1, l in [1e-16, 1e16], delta0 = 1e10,
    /// tau1 = 0.999, tau2 = 0.9, 50 backtracks).
    pub fn new(
        gamma0: f64,
        xi0: f64,
        theta: f64,
        t_k: usize,
        epsilon: f64,
        max_outer: usize,
    ) -> Self {
        PASettings {
            c1: 1e-4,
            eta: 0.1,
            gamma0,
            xi0,
            theta,
            tau1: 0.999,
            tau2: 0.9,
            l_min: 1e-16,
            l_max: 1e16,
            t_k,
            delta0: 1e10,
            epsilon,
            max_outer,
            max_backtracks: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.c1 > 0.0
            && self.c1 < 1.0
            && self.eta > 0.0
            && self.eta < 1.0
            && self.gamma0 > 0.0
            && self.xi0 > 0.0
            && self.theta > 1.0
            && self.tau1 > 0.0
            && self.tau1 < 1.0
            && self.tau2 > 0.0
            && self.tau2 < 1.0
            && self.l_min > 0.0
            && self.l_min < self.l_max
            && self.t_k >= 1
            && self.delta0 > 0.0
            && self.epsilon > 0.0
            && self.max_outer >= 1;
        if !ok {
            return Err(Error::InvalidParameter("PA settings out of range".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct PGASettings {
    pub c1: f64,
    pub eta: f64,
    pub kappa: f64,
    pub rho: f64,
    pub l_min: f64,
    pub l_max: f64,
    pub epsilon: f64,
    pub max_outer: usize,
    pub max_backtracks: usize,
}

impl PGASettings {
    pub fn new(kappa: f64, rho: f64, epsilon: f64, max_outer: usize) -> Self {
        PGASettings {
            c1: 1e-4,
            eta: 0.5,
            kappa,
            rho,
            l_min: 1e-16,
            l_max: 1e8,
            epsilon,
            max_outer,
            max_backtracks: 50,
        }
    }

    /// Largest admissible proximal weight for a given y-gradient Lipschitz
    /// constant: (1 - 2 (kappa + 1)^{-1/4}) / L_y.
    pub fn rho_upper_bound(kappa: f64, l_y: f64) -> f64 {
        (1.0 - 2.0 * (kappa + 1.0).powf(-0.25)) / l_y
    }

    pub fn validate(&self, l_y: f64) -> Result<()> {
        if self.kappa <= 15.0 {
            return Err(Error::InvalidParameter(format!("kappa = {} must exceed 15", self.kappa)));
        }
        let ok = self.c1 > 0.0
            && self.c1 < 1.0
            && self.eta > 0.0
            && self.eta < 1.0
            && self.l_min > 0.0
            && self.l_min < self.l_max
            && self.epsilon > 0.0
            && self.max_outer >= 1;
        if !ok {
            return Err(Error::InvalidParameter("PGA settings out of range".into()));
        }
        if l_y > 0.0 {
            let hi = Self::rho_upper_bound(self.kappa, l_y);
            if self.rho <= 0.0 || self.rho > hi {
                return Err(Error::InvalidParameter(format!(
                    "rho = {} outside (0, {hi:.6}] for L_y = {l_y}",
                    self.rho
                )));
            }
        } else if self.rho <= 0.0 {
            return Err(Error::InvalidParameter("rho must be positive".into()));
        }
        Ok(())
    }

    fn gamma(&self, k: i64) -> f64 {
        2.0 / (self.rho * (k as f64 + self.kappa + 2.0).powf(0.25))
    }
}

/// The two components of the game-stationarity measure and their max.
#[derive(Clone, Copy, Debug)]
pub struct StationarityReport {
    /// ||beta u|| with u the tangent proximal descent direction.
    pub primal: f64,
    /// dist(0, grad_y f - dg - N_y S).
    pub dual: f64,
    /// max of the two.
    pub measure: f64,
}

#[derive(Clone, Debug)]
pub struct IterateRecord {
    pub k: usize,
    /// F(x_k, y_k).
    pub objective: f64,
    pub primal: f64,
    pub dual: f64,
    pub g_beta: f64,
    /// Rejected line-search trials during outer step k.
    pub backtracks: usize,
    /// Subsolver iterations consumed during outer step k.
    pub inner_iters: usize,
    /// Wall seconds since solve start (monotonic clock; not part of the
    /// determinism contract).
    pub elapsed: f64,
    /// Set when the backtracking cap was hit and the last step was accepted.
    pub backtrack_overflow: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    SubproblemFailure,
}

/// Raw per-outer-iterate state, recorded when snapshots are enabled.
#[derive(Clone, Debug)]
pub struct OuterSnapshot {
    pub k: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// One accepted PA inner step, with everything needed to replay the descent
/// inequality; y_k lives in the outer snapshot of the same k.
#[derive(Clone, Debug)]
pub struct PaStepSnapshot {
    pub k: usize,
    pub i: usize,
    pub gamma: f64,
    pub rho: f64,
    pub beta: f64,
    pub j: u32,
    pub x_before: Vec<f64>,
    pub x_after: Vec<f64>,
    pub v: Vec<f64>,
}

/// One accepted PGA outer step for the merit-decrease replay.
#[derive(Clone, Debug)]
pub struct PgaStepSnapshot {
    pub k: usize,
    pub beta: f64,
    pub j: u32,
    pub x_before: Vec<f64>,
    pub x_after: Vec<f64>,
    pub v: Vec<f64>,
    pub y_prev: Vec<f64>,
    pub y_cur: Vec<f64>,
    pub y_next: Vec<f64>,
}

#[derive(Clone, Debug)]
pub enum StepSnapshots {
    Pa(Vec<PaStepSnapshot>),
    Pga(Vec<PgaStepSnapshot>),
}

#[derive(Clone, Debug)]
pub struct RunSnapshots {
    pub outer: Vec<OuterSnapshot>,
    pub steps: StepSnapshots,
    pub truncated: bool,
}



#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub x: ManifoldPoint,
    pub y: Vec<f64>,
    pub status: SolveStatus,
    pub trace: Vec<IterateRecord>,
    pub snapshots: Option<RunSnapshots>,
}

impl SolveOutcome {
    pub fn final_measure(&self) -> Option<f64> {
        self.trace.last().map(|r| r.g_beta)
    }
}

/// Safeguarded BB stepsize
/// l = clamp(scale * |<dX, dR>| / ||dX||^2, l_min, l_max), l_max when dX = 0.
pub fn bb_stepsize(delta_x: &[f64], delta_r: &[f64], scale: f64, bounds: (f64, f64)) -> f64 {
    let (l_min, l_max) = bounds;
    let nx: f64 = delta_x.iter().map(|v| v * v).sum();
    if nx == 0.0 {
        return l_max;
    }
    let ip: f64 = delta_x.iter().zip(delta_r).map(|(a, b)| a * b).sum();
    let l = scale * (ip / nx).abs();
    if !l.is_finite() {
        return l_max;
    }
    l.clamp(l_min, l_max)
}

/// One step of the adaptive proximal-weight schedule: from
/// (xi_{k-1}, delta_{k-1}) and the last two y iterates, computes
/// delta_k = ||gamma_{k-1} y_k + rho_{k-1}(y_k - y_{k-1})||_inf,
/// shrinks xi by tau2 when delta stalls, and returns rho_k = xi_k / k^theta.
#[allow(clippy::too_many_arguments)]
pub fn rho_schedule_step(
    state: (f64, f64),
    y_k: &[f64],
    y_km1: &[f64],
    gamma_km1: f64,
    rho_km1: f64,
    k: usize,
    theta: f64,
    tau1: f64,
    tau2: f64,
) -> (f64, (f64, f64)) {
    debug_assert!(k >= 1);
    let (xi_prev, delta_prev) = state;
    let delta_k = y_k
        .iter()
        .zip(y_km1)
        .map(|(a, b)| (gamma_km1 * a + rho_km1 * (a - b)).abs())
        .fold(0.0f64, f64::max);
    let xi_k = if delta_k >= tau1 * delta_prev { tau2 * xi_prev } else { xi_prev };
    let rho_k = xi_k / (k as f64).powf(theta);
    (rho_k, (xi_k, delta_k))
}

/// Evaluates the game-stationarity measure at (x, y) for a given beta.
pub fn game_stationarity(
    problem: &dyn MinimaxProblem,
    x: &ManifoldPoint,
    y: &[f64],
    beta: f64,
) -> Result<StationarityReport> {
    let gfx = problem.grad_x_f(x.data(), y);
    let u = solve_tangent_prox(x, &gfx, beta, problem.reg_h(), SUBPROBLEM_TOL)?;
    let primal = beta * u.v.norm();
    let gy = problem.grad_y_f(x.data(), y);
    let dual = normal_cone_distance(problem.feasible_set(), problem.reg_g(), y, &gy)?;
    Ok(StationarityReport { primal, dual, measure: primal.max(dual) })
}

/// Phi_k(x) evaluated through its maximizer:
/// f(x, yb) - g(yb) - (gamma/2)||yb||^2 - (rho/2)||yb - y_k||^2.
fn phi_value(
    problem: &dyn MinimaxProblem,
    x: &ManifoldPoint,
    ybar: &[f64],
    rho: f64,
    gamma: f64,
    y_k: &[f64],
) -> f64 {
    let quad_reg: f64 = ybar.iter().map(|v| v * v).sum::<f64>() * 0.5 * gamma;
    let quad_prox: f64 =
        ybar.iter().zip(y_k).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() * 0.5 * rho;
    problem.eval_f(x.data(), ybar) - problem.reg_g().eval_flat(ybar) - quad_reg - quad_prox
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Runs the multi-descent-step / proximal-ascent solver.
pub fn run_mpgda_pa(
    problem: &dyn MinimaxProblem,
    x0: &ManifoldPoint,
    y0: &[f64],
    settings: &PASettings,
    record_snapshots: bool,
) -> Result<SolveOutcome> {
    settings.validate()?;
    if x0.manifold() != problem.manifold() {
        return Err(Error::InvalidParameter("x0 lives on a different manifold".into()));
    }
    x0.check()?;
    if !problem.feasible_set().contains(y0, FEAS_TOL) {
        return Err(Error::Infeasible("y0 is not in the feasible set".into()));
    }

    let sigma2 = problem.feasible_set().sigma_y().powi(2);
    let (lx, _) = problem.lipschitz();
    let start = Instant::now();

    let mut x = x0.clone();
    let mut y = y0.to_vec();
    let mut xi = settings.xi0;
    let mut delta_prev = settings.delta0;
    let mut gamma_prev = settings.gamma0;
    let mut rho_prev = settings.xi0;
    let mut y_outer_prev = y.clone();

    let mut trace: Vec<IterateRecord> = Vec::new();
    let mut snaps = record_snapshots.then(|| RunSnapshots {
        outer: Vec::new(),
        steps: StepSnapshots::Pa(Vec::new()),
        truncated: false,
    });
    let mut snap_floats = 0usize;
    // BB cache: the previous inner iterate, and its grad Phi gradient when it
    // was computed under the current outer index (stale across k boundaries).
    let mut bb_point: Option<ManifoldPoint> = None;
    let mut bb_grad_fresh: Option<Vec<f64>> = None;

    let mut status = SolveStatus::MaxIterations;

    'outer: for k in 0..settings.max_outer {
        let gamma = if k == 0 {
            settings.gamma0
        } else {
            settings.gamma0 / (k as f64).cbrt()
        };
        let rho = if k == 0 {
            settings.xi0
        } else {
            let (rho_k, state) = rho_schedule_step(
                (xi, delta_prev),
                &y,
                &y_outer_prev,
                gamma_prev,
                rho_prev,
                k,
                settings.theta,
                settings.tau1,
                settings.tau2,
            );
            xi = state.0;
            delta_prev = state.1;
            rho_k
        };
        gamma_prev = gamma;
        rho_prev = rho;
        y_outer_prev = y.clone();

        if let Some(s) = snaps.as_mut() {
            s.outer.push(OuterSnapshot { k, x: x.data().to_vec(), y: y.clone() });
        }

        let mut inner_iters = 0usize;
        let mut backtracks = 0usize;
        let mut overflow = false;

        // Maximizer and Phi gradient at the current point (feeds both the BB
        // stepsize and inner step i = 0).
        let yb0 = match maximize_concave(problem, &x, &y, rho, gamma, SUBPROBLEM_TOL) {
            Ok(r) => r,
            Err(Error::SubproblemFailure { .. }) => {
                status = SolveStatus::SubproblemFailure;
                break 'outer;
            }
            Err(e) => return Err(e),
        };
        inner_iters += yb0.inner_iterations;
        let gphi0 = tangent_project(&x, &problem.grad_x_f(x.data(), &yb0.y))?;

        let l0 = match &bb_point {
            None => (lx.max(1e-12) * (rho + gamma)).clamp(settings.l_min, settings.l_max),
            Some(xp) => {
                let gp = match bb_grad_fresh.take() {
                    Some(g) => g,
                    None => {
                        // Re-evaluate grad Phi_k at the cached point under the
                        // current (rho, gamma, y_k).
                        let ybp = match maximize_concave(problem, xp, &y, rho, gamma, SUBPROBLEM_TOL)
                        {
                            Ok(r) => r,
                            Err(Error::SubproblemFailure { .. }) => {
                                status = SolveStatus::SubproblemFailure;
                                break 'outer;
                            }
                            Err(e) => return Err(e),
                        };
                        inner_iters += ybp.inner_iterations;
                        tangent_project(xp, &problem.grad_x_f(xp.data(), &ybp.y))?
                            .data()
                            .to_vec()
                    }
                };
                let dx: Vec<f64> =
                    x.data().iter().zip(xp.data()).map(|(a, b)| a - b).collect();
                let dr: Vec<f64> = gphi0.data().iter().zip(&gp).map(|(a, b)| a - b).collect();
                bb_stepsize(&dx, &dr, rho + gamma, (settings.l_min, settings.l_max))
            }
        };
        let beta0 = l0 / (rho + gamma);

        // Termination measure at (x_k, y_k).
        let report = match game_stationarity(problem, &x, &y, beta0) {
            Ok(r) => r,
            Err(Error::SubproblemFailure { .. }) => {
                status = SolveStatus::SubproblemFailure;
                break 'outer;
            }
            Err(e) => return Err(e),
        };
        let objective = problem.objective(x.data(), &y);
        if report.measure < settings.epsilon {
            trace.push(IterateRecord {
                k,
                objective,
                primal: report.primal,
                dual: report.dual,
                g_beta: report.measure,
                backtracks: 0,
                inner_iters,
                elapsed: start.elapsed().as_secs_f64(),
                backtrack_overflow: false,
            });
            status = SolveStatus::Converged;
            break 'outer;
        }

        // Inner descent steps.
        let mut x_i = x.clone();
        let mut yb_i = yb0;
        let mut gphi_i = gphi0;
        let mut l_i = l0;
        let mut prev_point: Option<(ManifoldPoint, Vec<f64>)> = None;
        for i in 0..settings.t_k {
            if i > 0 {
                let (xp, gp) = prev_point.as_ref().expect("set at the end of each step");
                let dx: Vec<f64> =
                    x_i.data().iter().zip(xp.data()).map(|(a, b)| a - b).collect();
                let dr: Vec<f64> = gphi_i.data().iter().zip(gp).map(|(a, b)| a - b).collect();
                l_i = bb_stepsize(&dx, &dr, rho + gamma, (settings.l_min, settings.l_max));
            }
            let beta = l_i / (rho + gamma);
            let grad = problem.grad_x_f(x_i.data(), &yb_i.y);
            let vres = match solve_tangent_prox(&x_i, &grad, beta, problem.reg_h(), SUBPROBLEM_TOL)
            {
                Ok(r) => r,
                Err(Error::SubproblemFailure { .. }) => {
                    status = SolveStatus::SubproblemFailure;
                    break 'outer;
                }
                Err(e) => return Err(e),
            };
            inner_iters += vres.inner_iterations;
            let nv2 = norm2(vres.v.data());
            let q_cur = problem.reg_h().eval(problem.manifold(), x_i.data())
                + phi_value(problem, &x_i, &yb_i.y, rho, gamma, &y);

            let mut j = 0u32;
            let (x_next, yb_next) = loop {
                let step = settings.eta.powi(j as i32);
                let x_t = retract(&x_i, &vres.v.scaled(step))?;
                let yb_t = match maximize_concave(problem, &x_t, &y, rho, gamma, SUBPROBLEM_TOL) {
                    Ok(r) => r,
                    Err(Error::SubproblemFailure { .. }) => {
                        status = SolveStatus::SubproblemFailure;
                        break 'outer;
                    }
                    Err(e) => return Err(e),
                };
                inner_iters += yb_t.inner_iterations;
                let q_t = problem.reg_h().eval(problem.manifold(), x_t.data())
                    + phi_value(problem, &x_t, &yb_t.y, rho, gamma, &y);
                if q_t <= q_cur - settings.c1 * step * beta * nv2 + 2.0 * rho * sigma2 {
                    break (x_t, yb_t);
                }
                if j as usize >= settings.max_backtracks {
                    // Accept the smallest step tried; flag the record.
                    overflow = true;
                    break (x_t, yb_t);
                }
                j += 1;
                backtracks += 1;
            };

            if let Some(s) = snaps.as_mut() {
                let cost = 3 * x_i.data().len();
                if snap_floats + cost <= MAX_SNAPSHOT_FLOATS {
                    snap_floats += cost;
                    if let StepSnapshots::Pa(steps) = &mut s.steps {
                        steps.push(PaStepSnapshot {
                            k,
                            i,
                            gamma,
                            rho,
                            beta,
                            j,
                            x_before: x_i.data().to_vec(),
                            x_after: x_next.data().to_vec(),
                            v: vres.v.data().to_vec(),
                        });
                    }
                } else {
                    s.truncated = true;
                }
            }

            prev_point = Some((x_i.clone(), gphi_i.data().to_vec()));
            x_i = x_next;
            yb_i = yb_next;
            if i + 1 < settings.t_k {
                gphi_i = tangent_project(&x_i, &problem.grad_x_f(x_i.data(), &yb_i.y))?;
            }
        }

        // x_{k+1} = x_{k, T_k}; y_{k+1} = ybar_k(x_{k+1}), already at hand.
        x = x_i;
        y = yb_i.y;
        if let Some((xp, _)) = prev_point {
            bb_point = Some(xp);
            bb_grad_fresh = None;
        }

        trace.push(IterateRecord {
            k,
            objective,
            primal: report.primal,
            dual: report.dual,
            g_beta: report.measure,
            backtracks,
            inner_iters,
            elapsed: start.elapsed().as_secs_f64(),
            backtrack_overflow: overflow,
        });
    }

    Ok(SolveOutcome { x, y, status, trace, snapshots: snaps })
}

/// The proximal gradient ascent target
/// yhat_k(x) = prox of g over S at y_k + rho (grad_y f(x, y_k) - gamma_k y_k).
fn yhat(
    problem: &dyn MinimaxProblem,
    x: &ManifoldPoint,
    y_k: &[f64],
    gamma_k: f64,
    rho: f64,
) -> Result<Vec<f64>> {
    let gy = problem.grad_y_f(x.data(), y_k);
    let w: Vec<f64> = y_k
        .iter()
        .zip(&gy)
        .map(|(yi, gi)| yi + rho * (gi - gamma_k * yi))
        .collect();
    crate::proxsets::prox_g_over_s(problem.reg_g(), problem.feasible_set(), &w, rho)
}

/// Merit value F_k(x, y) + (1/(2 rho))||y - y_{k-1}||^2 + shift + H_k(y),
/// with F_k the gamma_{k-1}-regularized objective and H_k the stabilization
/// quadratic.
#[allow(clippy::too_many_arguments)]
fn merit_value(
    problem: &dyn MinimaxProblem,
    x: &[f64],
    y: &[f64],
    y_prev: &[f64],
    gamma_km1: f64,
    gamma_k: f64,
    rho: f64,
    sigma2: f64,
) -> f64 {
    let f_reg = problem.objective(x, y) - 0.5 * gamma_km1 * norm2(y);
    let dy2 = dist2(y, y_prev);
    let ratio = gamma_km1 / gamma_k;
    f_reg
        + dy2 / (2.0 * rho)
        + ((4.0 / rho) * ratio + 0.5 * gamma_km1) * sigma2
        + (4.0 / (rho * rho * gamma_k) - 4.0 / rho) * dy2
        + (4.0 / rho) * (1.0 - ratio) * norm2(y)
}

/// Runs the single-loop descent / proximal-gradient-ascent solver.
pub fn run_mpgda_pga(
    problem: &dyn MinimaxProblem,
    x0: &ManifoldPoint,
    y_init: &[f64],
    settings: &PGASettings,
    record_snapshots: bool,
) -> Result<SolveOutcome> {
    let (lx, ly) = problem.lipschitz();
    settings.validate(ly)?;
    if x0.manifold() != problem.manifold() {
        return Err(Error::InvalidParameter("x0 lives on a different manifold".into()));
    }
    x0.check()?;
    if !problem.feasible_set().contains(y_init, FEAS_TOL) {
        return Err(Error::Infeasible("y_init is not in the feasible set".into()));
    }

    let sigma2 = problem.feasible_set().sigma_y().powi(2);
    let rho = settings.rho;
    let start = Instant::now();

    let mut x = x0.clone();
    // y_0 = yhat_{-1}(x_0) from y_{-1} = y_init.
    let mut y = yhat(problem, &x, y_init, settings.gamma(-1), rho)?;
    let mut y_prev = y_init.to_vec();

    let mut trace: Vec<IterateRecord> = Vec::new();
    let mut snaps = record_snapshots.then(|| RunSnapshots {
        outer: Vec::new(),
        steps: StepSnapshots::Pga(Vec::new()),
        truncated: false,
    });
    let mut snap_floats = 0usize;
    let mut bb_prev: Option<(ManifoldPoint, Vec<f64>)> = None;
    let mut status = SolveStatus::MaxIterations;

    'outer: for k in 0..settings.max_outer {
        let gamma_km1 = settings.gamma(k as i64 - 1);
        let gamma_k = settings.gamma(k as i64);
        let gamma_kp1 = settings.gamma(k as i64 + 1);

        if let Some(s) = snaps.as_mut() {
            s.outer.push(OuterSnapshot { k, x: x.data().to_vec(), y: y.clone() });
        }

        let gfx = problem.grad_x_f(x.data(), &y);
        let grad_r = tangent_project(&x, &gfx)?;
        let l_k = match &bb_prev {
            None => (lx.max(1e-12) * gamma_k * gamma_k).clamp(settings.l_min, settings.l_max),
            Some((xp, gp)) => {
                let dx: Vec<f64> =
                    x.data().iter().zip(xp.data()).map(|(a, b)| a - b).collect();
                let dr: Vec<f64> = grad_r.data().iter().zip(gp).map(|(a, b)| a - b).collect();
                bb_stepsize(&dx, &dr, gamma_k * gamma_k, (settings.l_min, settings.l_max))
            }
        };
        let beta = l_k / (gamma_k * gamma_k);

        // The descent direction doubles as the measure's u.
        let vres = match solve_tangent_prox(&x, &gfx, beta, problem.reg_h(), SUBPROBLEM_TOL) {
            Ok(r) => r,
            Err(Error::SubproblemFailure { .. }) => {
                status = SolveStatus::SubproblemFailure;
                break 'outer;
            }
            Err(e) => return Err(e),
        };
        let mut inner_iters = vres.inner_iterations;
        let primal = beta * vres.v.norm();
        let gy = problem.grad_y_f(x.data(), &y);
        let dual = normal_cone_distance(problem.feasible_set(), problem.reg_g(), &y, &gy)?;
        let measure = primal.max(dual);
        let objective = problem.objective(x.data(), &y);

        if measure < settings.epsilon {
            trace.push(IterateRecord {
                k,
                objective,
                primal,
                dual,
                g_beta: measure,
                backtracks: 0,
                inner_iters,
                elapsed: start.elapsed().as_secs_f64(),
                backtrack_overflow: false,
            });
            status = SolveStatus::Converged;
            break 'outer;
        }

        let merit_cur =
            merit_value(problem, x.data(), &y, &y_prev, gamma_km1, gamma_k, rho, sigma2);
        let nv2 = norm2(vres.v.data());

        let mut j = 0u32;
        let mut backtracks = 0usize;
        let mut overflow = false;
        let (x_next, y_next) = loop {
            let step = settings.eta.powi(j as i32);
            let x_t = retract(&x, &vres.v.scaled(step))?;
            let y_t = yhat(problem, &x_t, &y, gamma_k, rho)?;
            inner_iters += 1;
            let lhs =
                merit_value(problem, x_t.data(), &y_t, &y, gamma_k, gamma_kp1, rho, sigma2);
            let rhs = merit_cur
                - settings.c1 * step * beta * nv2
                - dist2(&y_t, &y) / (10.0 * rho);
            if lhs <= rhs {
                break (x_t, y_t);
            }
            if j as usize >= settings.max_backtracks {
                overflow = true;
                break (x_t, y_t);
            }
            j += 1;
            backtracks += 1;
        };

        if let Some(s) = snaps.as_mut() {
            let cost = 3 * x.data().len() + 3 * y.len();
            if snap_floats + cost <= MAX_SNAPSHOT_FLOATS {
                snap_floats += cost;
                if let StepSnapshots::Pga(steps) = &mut s.steps {
                    steps.push(PgaStepSnapshot {
                        k,
                        beta,
                        j,
                        x_before: x.data().to_vec(),
                        x_after: x_next.data().to_vec(),
                        v: vres.v.data().to_vec(),
                        y_prev: y_prev.clone(),
                        y_cur: y.clone(),
                        y_next: y_next.clone(),
                    });
                }
            } else {
                s.truncated = true;
            }
        }

        bb_prev = Some((x.clone(), grad_r.data().to_vec()));
        y_prev = std::mem::replace(&mut y, y_next);
        x = x_next;

        trace.push(IterateRecord {
            k,
            objective,
            primal,
            dual,
            g_beta: measure,
            backtracks,
            inner_iters,
            elapsed: start.elapsed().as_secs_f64(),
            backtrack_overflow: overflow,
        });
    }

    Ok(SolveOutcome { x, y, status, trace, snapshots: snaps })
}

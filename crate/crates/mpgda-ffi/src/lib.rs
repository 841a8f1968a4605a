//! C ABI over the minimax solvers: opaque problem/outcome handles, plain
//! option structs, and status codes. The generated header lands in
//! `include/mpgda.h`.
//!
//! Ownership rules: every `*_new` return value must be released with the
//! matching `*_free`; buffers passed in are caller-owned and copied.

use std::panic::{catch_unwind, AssertUnwindSafe};

use mpgda::manifold::ManifoldPoint;
use mpgda::problems::{
    fspca_preprocess, gen_fspca_synthetic, gen_ssc_synthetic, AnalyticProblem, FspcaProblem,
    MinimaxProblem, SscProblem,
};
use mpgda::solver::{
    game_stationarity, run_mpgda_pa, run_mpgda_pga, PASettings, PGASettings, SolveOutcome,
    SolveStatus,
};

/// Result code of every fallible entry point.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum MpgdaStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    SolverFailure = 3,
}

/// Terminal state of a solve.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum MpgdaSolveStatus {
    Converged = 0,
    MaxIterations = 1,
    SubproblemFailure = 2,
}

enum ProblemKind {
    Analytic,
    Fspca { r: usize },
    Ssc { n: usize, p: usize },
}

/// Opaque problem handle.
pub struct MpgdaProblem {
    inner: Box<dyn MinimaxProblem>,
    kind: ProblemKind,
}

/// Opaque solve-outcome handle.
pub struct MpgdaOutcome {
    inner: SolveOutcome,
}

/// Options of the multi-descent-step / proximal-ascent solver.
#[repr(C)]
#[derive(Clone, Copy)]
pub struct MpgdaPaOptions {
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

/// Options of the single-loop proximal-gradient-ascent solver.
#[repr(C)]
#[derive(Clone, Copy)]
pub struct MpgdaPgaOptions {
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

/// One per-iteration log row.
#[repr(C)]
#[derive(Clone, Copy)]
pub struct MpgdaRecord {
    pub k: usize,
    pub objective: f64,
    pub primal: f64,
    pub dual: f64,
    pub g_beta: f64,
    pub backtracks: usize,
    pub inner_iters: usize,
    pub elapsed_s: f64,
    /// Nonzero when the backtracking cap was hit at this iteration.
    pub backtrack_overflow: i32,
}

impl From<&PASettings> for MpgdaPaOptions {
    fn from(s: &PASettings) -> Self {
        MpgdaPaOptions {
            c1: s.c1,
            eta: s.eta,
            gamma0: s.gamma0,
            xi0: s.xi0,
            theta: s.theta,
            tau1: s.tau1,
            tau2: s.tau2,
            l_min: s.l_min,
            l_max: s.l_max,
            t_k: s.t_k,
            delta0: s.delta0,
            epsilon: s.epsilon,
            max_outer: s.max_outer,
            max_backtracks: s.max_backtracks,
        }
    }
}

impl From<&MpgdaPaOptions> for PASettings {
    fn from(o: &MpgdaPaOptions) -> Self {
        PASettings {
            c1: o.c1,
            eta: o.eta,
            gamma0: o.gamma0,
            xi0: o.xi0,
            theta: o.theta,
            tau1: o.tau1,
            tau2: o.tau2,
            l_min: o.l_min,
            l_max: o.l_max,
            t_k: o.t_k,
            delta0: o.delta0,
            epsilon: o.epsilon,
            max_outer: o.max_outer,
            max_backtracks: o.max_backtracks,
        }
    }
}

impl From<&MpgdaPgaOptions> for PGASettings {
    fn from(o: &MpgdaPgaOptions) -> Self {
        PGASettings {
            c1: o.c1,
            eta: o.eta,
            kappa: o.kappa,
            rho: o.rho,
            l_min: o.l_min,
            l_max: o.l_max,
            epsilon: o.epsilon,
            max_outer: o.max_outer,
            max_backtracks: o.max_backtracks,
        }
    }
}

/// The analytic circle benchmark.
#[no_mangle]
pub extern "C" fn mpgda_problem_analytic_new() -> *mut MpgdaProblem {
    Box::into_raw(Box::new(MpgdaProblem {
        inner: Box::new(AnalyticProblem::new()),
        kind: ProblemKind::Analytic,
    }))
}

/// Fair sparse PCA on synthetic two-group data generated from `seed`
/// (standardized per group), with `r` components and l1 weight `mu`.
/// Returns NULL on invalid arguments.
#[no_mangle]
pub extern "C" fn mpgda_problem_fspca_synthetic_new(
    seed: u64,
    r: usize,
    mu: f64,
) -> *mut MpgdaProblem {
    let built = catch_unwind(|| {
        let mut groups = gen_fspca_synthetic(seed);
        fspca_preprocess(&mut groups);
        FspcaProblem::new(&groups, r, mu)
    });
    match built {
        Ok(Ok(problem)) => Box::into_raw(Box::new(MpgdaProblem {
            inner: Box::new(problem),
            kind: ProblemKind::Fspca { r },
        })),
        _ => std::ptr::null_mut(),
    }
}

/// Sparse spectral clustering on a synthetic affinity built from `n` points
/// of dimension `dim` drawn with `seed`; `p` clusters, l1 weight `mu`.
/// Returns NULL on invalid arguments.
#[no_mangle]
pub extern "C" fn mpgda_problem_ssc_synthetic_new(
    n: usize,
    dim: usize,
    seed: u64,
    p: usize,
    mu: f64,
) -> *mut MpgdaProblem {
    let built = catch_unwind(|| {
        let w = gen_ssc_synthetic(n, dim, seed);
        SscProblem::new(&w, p, mu)
    });
    match built {
        Ok(Ok(problem)) => Box::into_raw(Box::new(MpgdaProblem {
            inner: Box::new(problem),
            kind: ProblemKind::Ssc { n, p },
        })),
        _ => std::ptr::null_mut(),
    }
}

/// # Safety
/// `problem` must come from one of the `mpgda_problem_*_new` constructors and
/// not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mpgda_problem_free(problem: *mut MpgdaProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Ambient dimension of the x iterate.
///
/// # Safety
/// `problem` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mpgda_problem_x_dim(problem: *const MpgdaProblem) -> usize {
    match problem.as_ref() {
        Some(p) => p.inner.manifold().ambient_dim(),
        None => 0,
    }
}

/// Dimension of the y iterate.
///
/// # Safety
/// `problem` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mpgda_problem_y_dim(problem: *const MpgdaProblem) -> usize {
    match problem.as_ref() {
        Some(p) => p.inner.feasible_set().dim(),
        None => 0,
    }
}

/// Fills `out` with the experiment defaults for this problem kind.
///
/// # Safety
/// `problem` must be a live handle; `out` must point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn mpgda_pa_options_default(
    problem: *const MpgdaProblem,
    out: *mut MpgdaPaOptions,
) -> MpgdaStatus {
    let Some(p) = problem.as_ref() else { return MpgdaStatus::NullArgument };
    if out.is_null() {
        return MpgdaStatus::NullArgument;
    }
    let settings = match p.kind {
        ProblemKind::Analytic => PASettings::new(5e-3, 1.0, 1.5, 1, 1e-9, 5000),
        ProblemKind::Fspca { r } => {
            PASettings::new(1e-6, 4.0 * (r as f64).sqrt() * 1e4, 1.5, 15, 1e-6, 1000)
        }
        ProblemKind::Ssc { n, p } => PASettings::new(
            1e-5,
            (p as f64).sqrt() * (n * n) as f64,
            2.0,
            3,
            1e-4,
            1000,
        ),
    };
    out.write(MpgdaPaOptions::from(&settings));
    MpgdaStatus::Ok
}

/// Fills `out` with PGA defaults; rho is chosen admissible for the problem's
/// y-gradient Lipschitz constant.
///
/// # Safety
/// `problem` must be a live handle; `out` must point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn mpgda_pga_options_default(
    problem: *const MpgdaProblem,
    out: *mut MpgdaPgaOptions,
) -> MpgdaStatus {
    let Some(p) = problem.as_ref() else { return MpgdaStatus::NullArgument };
    if out.is_null() {
        return MpgdaStatus::NullArgument;
    }
    let kappa = 1e16;
    let rho = match p.kind {
        ProblemKind::Analytic => 0.2,
        _ => 0.5 * PGASettings::rho_upper_bound(kappa, p.inner.lipschitz().1),
    };
    out.write(MpgdaPgaOptions {
        c1: 1e-4,
        eta: 0.5,
        kappa,
        rho,
        l_min: 1e-16,
        l_max: 1e8,
        epsilon: 1e-9,
        max_outer: 5000,
        max_backtracks: 50,
    });
    MpgdaStatus::Ok
}

unsafe fn solve_common(
    problem: *const MpgdaProblem,
    out: *mut *mut MpgdaOutcome,
    run: impl FnOnce(&dyn MinimaxProblem, &ManifoldPoint, &[f64]) -> mpgda::Result<SolveOutcome>,
    init_seed: u64,
) -> MpgdaStatus {
    let Some(p) = (unsafe { problem.as_ref() }) else { return MpgdaStatus::NullArgument };
    if out.is_null() {
        return MpgdaStatus::NullArgument;
    }
    let result = catch_unwind(AssertUnwindSafe(|| {
        let (x0, y0) = p.inner.default_init(init_seed);
        run(p.inner.as_ref(), &x0, &y0)
    }));
    match result {
        Ok(Ok(outcome)) => {
            unsafe { out.write(Box::into_raw(Box::new(MpgdaOutcome { inner: outcome }))) };
            MpgdaStatus::Ok
        }
        Ok(Err(mpgda::Error::SubproblemFailure { .. })) => MpgdaStatus::SolverFailure,
        Ok(Err(_)) => MpgdaStatus::InvalidArgument,
        Err(_) => MpgdaStatus::SolverFailure,
    }
}

/// Runs the PA solver from the problem's default initialization for
/// `init_seed`; on success `*out` owns the outcome.
///
/// # Safety
/// `problem` must be a live handle, `options` and `out` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mpgda_solve_pa(
    problem: *const MpgdaProblem,
    options: *const MpgdaPaOptions,
    init_seed: u64,
    out: *mut *mut MpgdaOutcome,
) -> MpgdaStatus {
    let Some(opts) = options.as_ref() else { return MpgdaStatus::NullArgument };
    let settings = PASettings::from(opts);
    solve_common(
        problem,
        out,
        move |p, x0, y0| run_mpgda_pa(p, x0, y0, &settings, false),
        init_seed,
    )
}

/// Runs the PGA solver from the problem's default initialization.
///
/// # Safety
/// `problem` must be a live handle, `options` and `out` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mpgda_solve_pga(
    problem: *const MpgdaProblem,
    options: *const MpgdaPgaOptions,
    init_seed: u64,
    out: *mut *mut MpgdaOutcome,
) -> MpgdaStatus {
    let Some(opts) = options.as_ref() else { return MpgdaStatus::NullArgument };
    let settings = PGASettings::from(opts);
    solve_common(
        problem,
        out,
        move |p, x0, y0| run_mpgda_pga(p, x0, y0, &settings, false),
        init_seed,
    )
}

/// # Safety
/// `outcome` must come from a solve call and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mpgda_outcome_free(outcome: *mut MpgdaOutcome) {
    if !outcome.is_null() {
        drop(Box::from_raw(outcome));
    }
}

/// # Safety
/// `outcome` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mpgda_outcome_status(outcome: *const MpgdaOutcome) -> MpgdaSolveStatus {
    match outcome.as_ref().map(|o| o.inner.status) {
        Some(SolveStatus::Converged) => MpgdaSolveStatus::Converged,
        Some(SolveStatus::MaxIterations) => MpgdaSolveStatus::MaxIterations,
        _ => MpgdaSolveStatus::SubproblemFailure,
    }
}

/// Number of logged outer iterations.
///
/// # Safety
/// `outcome` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mpgda_outcome_trace_len(outcome: *const MpgdaOutcome) -> usize {
    outcome.as_ref().map_or(0, |o| o.inner.trace.len())
}

/// Copies trace row `idx` into `record`.
///
/// # Safety
/// `outcome` must be a live handle; `record` must point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn mpgda_outcome_record(
    outcome: *const MpgdaOutcome,
    idx: usize,
    record: *mut MpgdaRecord,
) -> MpgdaStatus {
    let Some(o) = outcome.as_ref() else { return MpgdaStatus::NullArgument };
    if record.is_null() {
        return MpgdaStatus::NullArgument;
    }
    let Some(r) = o.inner.trace.get(idx) else { return MpgdaStatus::InvalidArgument };
    record.write(MpgdaRecord {
        k: r.k,
        objective: r.objective,
        primal: r.primal,
        dual: r.dual,
        g_beta: r.g_beta,
        backtracks: r.backtracks,
        inner_iters: r.inner_iters,
        elapsed_s: r.elapsed,
        backtrack_overflow: r.backtrack_overflow as i32,
    });
    MpgdaStatus::Ok
}

/// Copies the final x iterate into `buf` (length must equal the ambient
/// dimension).
///
/// # Safety
/// `outcome` must be a live handle; `buf` must point to `len` writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn mpgda_outcome_x(
    outcome: *const MpgdaOutcome,
    buf: *mut f64,
    len: usize,
) -> MpgdaStatus {
    let Some(o) = outcome.as_ref() else { return MpgdaStatus::NullArgument };
    if buf.is_null() {
        return MpgdaStatus::NullArgument;
    }
    let data = o.inner.x.data();
    if data.len() != len {
        return MpgdaStatus::InvalidArgument;
    }
    std::ptr::copy_nonoverlapping(data.as_ptr(), buf, len);
    MpgdaStatus::Ok
}

/// Copies the final y iterate into `buf` (length must equal the y dimension).
///
/// # Safety
/// `outcome` must be a live handle; `buf` must point to `len` writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn mpgda_outcome_y(
    outcome: *const MpgdaOutcome,
    buf: *mut f64,
    len: usize,
) -> MpgdaStatus {
    let Some(o) = outcome.as_ref() else { return MpgdaStatus::NullArgument };
    if buf.is_null() {
        return MpgdaStatus::NullArgument;
    }
    if o.inner.y.len() != len {
        return MpgdaStatus::InvalidArgument;
    }
    std::ptr::copy_nonoverlapping(o.inner.y.as_ptr(), buf, len);
    MpgdaStatus::Ok
}

/// Evaluates the game-stationarity measure at a caller-supplied pair.
///
/// # Safety
/// `problem` must be a live handle; `x`/`y` must point to `x_len`/`y_len`
/// readable doubles; `out_measure` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mpgda_game_stationarity(
    problem: *const MpgdaProblem,
    x: *const f64,
    x_len: usize,
    y: *const f64,
    y_len: usize,
    beta: f64,
    out_measure: *mut f64,
) -> MpgdaStatus {
    let Some(p) = problem.as_ref() else { return MpgdaStatus::NullArgument };
    if x.is_null() || y.is_null() || out_measure.is_null() {
        return MpgdaStatus::NullArgument;
    }
    let xs = std::slice::from_raw_parts(x, x_len);
    let ys = std::slice::from_raw_parts(y, y_len);
    let result = catch_unwind(AssertUnwindSafe(|| {
        let point = ManifoldPoint::new(p.inner.manifold().clone(), xs.to_vec())?;
        game_stationarity(p.inner.as_ref(), &point, ys, beta)
    }));
    match result {
        Ok(Ok(report)) => {
            out_measure.write(report.measure);
            MpgdaStatus::Ok
        }
        Ok(Err(_)) => MpgdaStatus::InvalidArgument,
        Err(_) => MpgdaStatus::SolverFailure,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_roundtrip_through_the_c_surface() {
        unsafe {
            let problem = mpgda_problem_analytic_new();
            assert!(!problem.is_null());
            assert_eq!(mpgda_problem_x_dim(problem), 2);
            assert_eq!(mpgda_problem_y_dim(problem), 1);

            let mut opts = std::mem::zeroed::<MpgdaPaOptions>();
            assert!(mpgda_pa_options_default(problem, &mut opts) == MpgdaStatus::Ok);
            opts.max_outer = 200;
            opts.epsilon = 1e-12;

            let mut outcome: *mut MpgdaOutcome = std::ptr::null_mut();
            assert!(mpgda_solve_pa(problem, &opts, 0, &mut outcome) == MpgdaStatus::Ok);
            let n = mpgda_outcome_trace_len(outcome);
            assert!(n > 0);
            let mut rec = std::mem::zeroed::<MpgdaRecord>();
            assert!(mpgda_outcome_record(outcome, n - 1, &mut rec) == MpgdaStatus::Ok);
            assert!(rec.g_beta.is_finite());

            let mut x = [0.0f64; 2];
            let mut y = [0.0f64; 1];
            assert!(mpgda_outcome_x(outcome, x.as_mut_ptr(), 2) == MpgdaStatus::Ok);
            assert!(mpgda_outcome_y(outcome, y.as_mut_ptr(), 1) == MpgdaStatus::Ok);
            // Close to the known stationary point.
            assert!((x[0] - 1.0).abs() < 1e-2);
            assert!((y[0] - (-1.01f64).exp()).abs() < 1e-2);

            let mut measure = f64::NAN;
            let xs = [1.0, 0.0];
            let ys = [(-1.01f64).exp()];
            assert!(
                mpgda_game_stationarity(
                    problem,
                    xs.as_ptr(),
                    2,
                    ys.as_ptr(),
                    1,
                    1.0,
                    &mut measure
                ) == MpgdaStatus::Ok
            );
            assert!(measure <= 1e-8);

            mpgda_outcome_free(outcome);
            mpgda_problem_free(problem);
        }
    }

    #[test]
    fn pga_solve_and_null_handling() {
        unsafe {
            let problem = mpgda_problem_analytic_new();
            let mut opts = std::mem::zeroed::<MpgdaPgaOptions>();
            assert!(mpgda_pga_options_default(problem, &mut opts) == MpgdaStatus::Ok);
            opts.max_outer = 50;
            let mut outcome: *mut MpgdaOutcome = std::ptr::null_mut();
            assert!(mpgda_solve_pga(problem, &opts, 0, &mut outcome) == MpgdaStatus::Ok);
            assert_eq!(mpgda_outcome_trace_len(outcome), 50);

            // Null / mismatch paths.
            assert!(
                mpgda_solve_pa(std::ptr::null(), std::ptr::null(), 0, &mut outcome)
                    == MpgdaStatus::NullArgument
            );
            let mut buf = [0.0f64; 1];
            assert!(
                mpgda_outcome_x(outcome, buf.as_mut_ptr(), 1) == MpgdaStatus::InvalidArgument
            );

            mpgda_outcome_free(outcome);
            mpgda_problem_free(problem);
            mpgda_outcome_free(std::ptr::null_mut());
            mpgda_problem_free(std::ptr::null_mut());
        }
    }

    #[test]
    fn invalid_settings_are_reported() {
        unsafe {
            let problem = mpgda_problem_fspca_synthetic_new(0, 2, 0.1);
            assert!(!problem.is_null());
            let mut opts = std::mem::zeroed::<MpgdaPaOptions>();
            assert!(mpgda_pa_options_default(problem, &mut opts) == MpgdaStatus::Ok);
            opts.theta = 0.5; // out of range
            let mut outcome: *mut MpgdaOutcome = std::ptr::null_mut();
            assert!(
                mpgda_solve_pa(problem, &opts, 0, &mut outcome) == MpgdaStatus::InvalidArgument
            );
            mpgda_problem_free(problem);

            assert!(mpgda_problem_fspca_synthetic_new(0, 100, 0.1).is_null());
            assert!(mpgda_problem_ssc_synthetic_new(6, 3, 0, 9, 0.1).is_null());
        }
    }

    #[test]
    fn header_is_generated() {
        let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/mpgda.h");
        let text = std::fs::read_to_string(header).expect("header generated by build script");
        assert!(text.contains("mpgda_solve_pa"));
        assert!(text.contains("MPGDA_H"));
        assert!(text.contains("typedef struct MpgdaProblem MpgdaProblem;"));
    }
}

//! Experiment runner: flat key=value configs with command-line overrides,
//! solver dispatch per seed, CSV/JSON result files, and plot-ready
//! convergence data.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::manifold::ManifoldPoint;
use crate::problems::{
    fspca_preprocess, gen_fspca_synthetic, gen_ssc_synthetic, load_credit_csv, AnalyticProblem,
    FspcaProblem, MinimaxProblem, SscProblem,
};
use crate::solver::{
    run_mpgda_pa, run_mpgda_pga, PASettings, PGASettings, SolveOutcome, SolveStatus,
};
use crate::verify::fd_gradient_check;

pub const SCHEMA_VERSION: u32 = 1;

const EXIT_OK: i32 = 0;
const EXIT_VALIDATION: i32 = 1;
const EXIT_SOLVER: i32 = 2;

#[derive(Parser)]
#[command(name = "mpgda", about = "Minimax solvers on Riemannian manifolds", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configured experiment and write result/trace files.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// key=value override, repeatable.
        #[arg(long = "set")]
        set: Vec<String>,
        /// Output directory (overrides the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the configured problem's gradients.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Emit (k, log10 D_k) and (elapsed, log10 D_k) files from trace CSVs.
    Plotdata {
        /// One or more trace CSV paths; several traces are merged by k.
        traces: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            // clap handles --help/--version through this path as well.
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Run { config, set, out } => cmd_run(config.as_deref(), &set, out.as_deref()),
        Command::Gradcheck { config, set } => cmd_gradcheck(config.as_deref(), &set),
        Command::Plotdata { traces, out } => cmd_plotdata(&traces, out.as_deref()),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::SubproblemFailure { .. } => EXIT_SOLVER,
                _ => EXIT_VALIDATION,
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    Analytic,
    FspcaSynthetic,
    FspcaCredit,
    SscSynthetic,
}

impl ExperimentKind {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(Self::Analytic),
            "fspca-synthetic" => Ok(Self::FspcaSynthetic),
            "fspca-credit" => Ok(Self::FspcaCredit),
            "ssc-synthetic" => Ok(Self::SscSynthetic),
            other => Err(Error::InvalidParameter(format!("unknown experiment '{other}'"))),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Self::Analytic => "analytic",
            Self::FspcaSynthetic => "fspca-synthetic",
            Self::FspcaCredit => "fspca-credit",
            Self::SscSynthetic => "ssc-synthetic",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlgorithmChoice {
    Pa,
    Pga,
    Both,
}

impl AlgorithmChoice {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "pa" => Ok(Self::Pa),
            "pga" => Ok(Self::Pga),
            "both" => Ok(Self::Both),
            other => Err(Error::InvalidParameter(format!("unknown algorithm '{other}'"))),
        }
    }

    fn runs(&self) -> Vec<&'static str> {
        match self {
            Self::Pa => vec!["pa"],
            Self::Pga => vec!["pga"],
            Self::Both => vec!["pa", "pga"],
        }
    }
}

/// Fully resolved experiment configuration. Every field has an
/// experiment-specific default; unknown keys are rejected.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub algorithm: AlgorithmChoice,
    pub seeds: Vec<u64>,
    pub r: usize,
    pub p: usize,
    pub mu: f64,
    pub output_dir: PathBuf,
    pub snapshot_trace: bool,
    // shared / PA solver settings
    pub c1: f64,
    pub eta: f64,
    pub gamma0: f64,
    pub xi0: Option<f64>,
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
    // PGA settings
    pub kappa: f64,
    pub rho: Option<f64>,
    pub pga_eta: f64,
    pub pga_l_max: f64,
    // data settings
    pub ssc_n: usize,
    pub ssc_dim: usize,
    pub csv_path: Option<PathBuf>,
    pub group_column: String,
    // test hook: scales gradients to force a gradcheck failure
    pub debug_corrupt_gradient: bool,
}

impl ExperimentConfig {
    pub fn defaults(experiment: ExperimentKind) -> Self {
        let (algorithm, gamma0, theta, t_k, epsilon, max_outer, seeds, snapshot) =
            match experiment {
                ExperimentKind::Analytic => (
                    AlgorithmChoice::Both,
                    5e-3,
                    1.5,
                    1,
                    1e-9,
                    5000,
                    vec![0],
                    true,
                ),
                ExperimentKind::FspcaSynthetic | ExperimentKind::FspcaCredit => (
                    AlgorithmChoice::Pa,
                    1e-6,
                    1.5,
                    15,
                    1e-6,
                    1000,
                    (0..50).collect(),
                    false,
                ),
                ExperimentKind::SscSynthetic => (
                    AlgorithmChoice::Pa,
                    1e-5,
                    2.0,
                    3,
                    1e-4,
                    1000,
                    (0..50).collect(),
                    false,
                ),
            };
        ExperimentConfig {
            experiment,
            algorithm,
            seeds,
            r: 2,
            p: 2,
            mu: 0.1,
            output_dir: PathBuf::from("out"),
            snapshot_trace: snapshot,
            c1: 1e-4,
            eta: 0.1,
            gamma0,
            xi0: None,
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
            kappa: 1e16,
            rho: None,
            pga_eta: 0.5,
            pga_l_max: 1e8,
            ssc_n: 200,
            ssc_dim: 50,
            csv_path: None,
            group_column: String::new(),
            debug_corrupt_gradient: false,
        }
    }

    /// Parses a flat key=value map; the `experiment` key picks the default
    /// block, every other key overrides one field, unknown keys error out.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let experiment = map
            .get("experiment")
            .ok_or_else(|| Error::InvalidParameter("missing 'experiment' key".into()))?;
        let mut cfg = Self::defaults(ExperimentKind::parse(experiment)?);
        for (key, value) in map {
            cfg.apply(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::InvalidParameter(format!("bad value for {what}: '{value}'"));
        match key {
            "experiment" => self.experiment = ExperimentKind::parse(value)?,
            "algorithm" => self.algorithm = AlgorithmChoice::parse(value)?,
            "seeds" => {
                let mut seeds = Vec::new();
                for part in value.split(',').filter(|p| !p.trim().is_empty()) {
                    seeds.push(part.trim().parse().map_err(|_| bad("seeds"))?);
                }
                self.seeds = seeds;
            }
            "r" => self.r = value.parse().map_err(|_| bad(key))?,
            "p" => self.p = value.parse().map_err(|_| bad(key))?,
            "mu" => self.mu = value.parse().map_err(|_| bad(key))?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "snapshot_trace" => self.snapshot_trace = value.parse().map_err(|_| bad(key))?,
            "c1" => self.c1 = value.parse().map_err(|_| bad(key))?,
            "eta" => self.eta = value.parse().map_err(|_| bad(key))?,
            "gamma0" => self.gamma0 = value.parse().map_err(|_| bad(key))?,
            "xi0" => self.xi0 = Some(value.parse().map_err(|_| bad(key))?),
            "theta" => self.theta = value.parse().map_err(|_| bad(key))?,
            "tau1" => self.tau1 = value.parse().map_err(|_| bad(key))?,
            "tau2" => self.tau2 = value.parse().map_err(|_| bad(key))?,
            "l_min" => self.l_min = value.parse().map_err(|_| bad(key))?,
            "l_max" => self.l_max = value.parse().map_err(|_| bad(key))?,
            "t_k" => self.t_k = value.parse().map_err(|_| bad(key))?,
            "delta0" => self.delta0 = value.parse().map_err(|_| bad(key))?,
            "epsilon" => self.epsilon = value.parse().map_err(|_| bad(key))?,
            "max_outer" => self.max_outer = value.parse().map_err(|_| bad(key))?,
            "max_backtracks" => self.max_backtracks = value.parse().map_err(|_| bad(key))?,
            "kappa" => self.kappa = value.parse().map_err(|_| bad(key))?,
            "rho" => self.rho = Some(value.parse().map_err(|_| bad(key))?),
            "pga_eta" => self.pga_eta = value.parse().map_err(|_| bad(key))?,
            "pga_l_max" => self.pga_l_max = value.parse().map_err(|_| bad(key))?,
            "ssc_n" => self.ssc_n = value.parse().map_err(|_| bad(key))?,
            "ssc_dim" => self.ssc_dim = value.parse().map_err(|_| bad(key))?,
            "csv_path" => self.csv_path = Some(PathBuf::from(value)),
            "group_column" => self.group_column = value.to_string(),
            "debug_corrupt_gradient" => {
                self.debug_corrupt_gradient = value.parse().map_err(|_| bad(key))?
            }
            other => {
                return Err(Error::InvalidParameter(format!("unknown config key '{other}'")))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidParameter("seed list is empty".into()));
        }
        if self.experiment == ExperimentKind::FspcaCredit {
            if self.csv_path.is_none() {
                return Err(Error::InvalidParameter("fspca-credit requires csv_path".into()));
            }
            if self.group_column.is_empty() {
                return Err(Error::InvalidParameter(
                    "fspca-credit requires group_column".into(),
                ));
            }
        }
        self.pa_settings().validate()
    }

    /// Derived default for the initial proximal weight.
    pub fn resolved_xi0(&self) -> f64 {
        self.xi0.unwrap_or(match self.experiment {
            ExperimentKind::Analytic => 1.0,
            ExperimentKind::FspcaSynthetic | ExperimentKind::FspcaCredit => {
                4.0 * (self.r as f64).sqrt() * 1e4
            }
            ExperimentKind::SscSynthetic => {
                (self.p as f64).sqrt() * (self.ssc_n as f64) * (self.ssc_n as f64)
            }
        })
    }

    pub fn pa_settings(&self) -> PASettings {
        PASettings {
            c1: self.c1,
            eta: self.eta,
            gamma0: self.gamma0,
            xi0: self.resolved_xi0(),
            theta: self.theta,
            tau1: self.tau1,
            tau2: self.tau2,
            l_min: self.l_min,
            l_max: self.l_max,
            t_k: self.t_k,
            delta0: self.delta0,
            epsilon: self.epsilon,
            max_outer: self.max_outer,
            max_backtracks: self.max_backtracks,
        }
    }

    pub fn pga_settings(&self, l_y: f64) -> PGASettings {
        let rho = self.rho.unwrap_or_else(|| match self.experiment {
            ExperimentKind::Analytic => 0.2,
            _ => 0.5 * PGASettings::rho_upper_bound(self.kappa, l_y),
        });
        PGASettings {
            c1: self.c1,
            eta: self.pga_eta,
            kappa: self.kappa,
            rho,
            l_min: self.l_min,
            l_max: self.pga_l_max,
            epsilon: self.epsilon,
            max_outer: self.max_outer,
            max_backtracks: self.max_backtracks,
        }
    }

    /// Serializes the resolved config as a flat string map; parsing the map
    /// back yields an identical configuration.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("experiment".into(), self.experiment.name().into());
        m.insert(
            "algorithm".into(),
            match self.algorithm {
                AlgorithmChoice::Pa => "pa",
                AlgorithmChoice::Pga => "pga",
                AlgorithmChoice::Both => "both",
            }
            .into(),
        );
        m.insert(
            "seeds".into(),
            self.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
        );
        m.insert("r".into(), self.r.to_string());
        m.insert("p".into(), self.p.to_string());
        m.insert("mu".into(), self.mu.to_string());
        m.insert("output_dir".into(), self.output_dir.display().to_string());
        m.insert("snapshot_trace".into(), self.snapshot_trace.to_string());
        m.insert("c1".into(), self.c1.to_string());
        m.insert("eta".into(), self.eta.to_string());
        m.insert("gamma0".into(), self.gamma0.to_string());
        m.insert("xi0".into(), self.resolved_xi0().to_string());
        m.insert("theta".into(), self.theta.to_string());
        m.insert("tau1".into(), self.tau1.to_string());
        m.insert("tau2".into(), self.tau2.to_string());
        m.insert("l_min".into(), self.l_min.to_string());
        m.insert("l_max".into(), self.l_max.to_string());
        m.insert("t_k".into(), self.t_k.to_string());
        m.insert("delta0".into(), self.delta0.to_string());
        m.insert("epsilon".into(), self.epsilon.to_string());
        m.insert("max_outer".into(), self.max_outer.to_string());
        m.insert("max_backtracks".into(), self.max_backtracks.to_string());
        m.insert("kappa".into(), self.kappa.to_string());
        if let Some(rho) = self.rho {
            m.insert("rho".into(), rho.to_string());
        }
        m.insert("pga_eta".into(), self.pga_eta.to_string());
        m.insert("pga_l_max".into(), self.pga_l_max.to_string());
        m.insert("ssc_n".into(), self.ssc_n.to_string());
        m.insert("ssc_dim".into(), self.ssc_dim.to_string());
        if let Some(p) = &self.csv_path {
            m.insert("csv_path".into(), p.display().to_string());
        }
        if !self.group_column.is_empty() {
            m.insert("group_column".into(), self.group_column.clone());
        }
        if self.debug_corrupt_gradient {
            m.insert("debug_corrupt_gradient".into(), "true".into());
        }
        m
    }
}

/// Parses a flat key=value config file (one pair per line, '#' comments).
pub fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    parse_config_text(&text)
}

pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::InvalidParameter(format!("line {}: expected key=value", lineno + 1))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn resolve_config(
    config: Option<&Path>,
    sets: &[String],
    out: Option<&Path>,
) -> Result<ExperimentConfig> {
    let mut map = match config {
        Some(p) => parse_config_file(p)?,
        None => BTreeMap::new(),
    };
    for pair in sets {
        let (key, value) = pair.split_once('=').ok_or_else(|| {
            Error::InvalidParameter(format!("--set expects key=value, got '{pair}'"))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    if let Some(dir) = out {
        map.insert("output_dir".into(), dir.display().to_string());
    }
    ExperimentConfig::from_map(&map)
}

/// A problem instance plus its initial point for one seed.
pub struct Instance {
    pub problem: Box<dyn MinimaxProblem>,
    pub x0: ManifoldPoint,
    pub y0: Vec<f64>,
}

/// Instantiates the configured problem for a given seed (synthetic data is
/// seed-dependent; initial points are decoupled from the data stream).
pub fn instantiate(cfg: &ExperimentConfig, seed: u64) -> Result<Instance> {
    const INIT_SALT: u64 = 0x1000_0000;
    match cfg.experiment {
        ExperimentKind::Analytic => {
            let problem = AnalyticProblem::new();
            let (x0, y0) = problem.default_init(seed);
            Ok(Instance { problem: Box::new(problem), x0, y0 })
        }
        ExperimentKind::FspcaSynthetic => {
            let mut groups = gen_fspca_synthetic(seed);
            fspca_preprocess(&mut groups);
            let problem = FspcaProblem::new(&groups, cfg.r, cfg.mu)?;
            let (x0, y0) = problem.default_init(seed.wrapping_add(INIT_SALT));
            Ok(Instance { problem: Box::new(problem), x0, y0 })
        }
        ExperimentKind::FspcaCredit => {
            let path = cfg.csv_path.as_ref().expect("validated");
            let mut groups = load_credit_csv(path, &cfg.group_column)?;
            for a in groups.iter_mut() {
                let scale = 1.0 / (a.nrows() as f64).sqrt();
                a.scale_mut(scale);
            }
            let problem = FspcaProblem::new(&groups, cfg.r, cfg.mu)?;
            let (x0, y0) = problem.default_init(seed.wrapping_add(INIT_SALT));
            Ok(Instance { problem: Box::new(problem), x0, y0 })
        }
        ExperimentKind::SscSynthetic => {
            let w = gen_ssc_synthetic(cfg.ssc_n, cfg.ssc_dim, seed);
            let problem = SscProblem::new(&w, cfg.p, cfg.mu)?;
            let (x0, y0) = problem.default_init(seed);
            Ok(Instance { problem: Box::new(problem), x0, y0 })
        }
    }
}

struct SeedResult {
    seed: u64,
    status: SolveStatus,
    iterations: usize,
    objective: f64,
    g_final: f64,
    elapsed: f64,
}

fn status_name(s: SolveStatus) -> &'static str {
    match s {
        SolveStatus::Converged => "converged",
        SolveStatus::MaxIterations => "max_iterations",
        SolveStatus::SubproblemFailure => "subproblem_failure",
    }
}

fn cmd_run(config: Option<&Path>, sets: &[String], out: Option<&Path>) -> Result<i32> {
    let cfg = resolve_config(config, sets, out)?;
    std::fs::create_dir_all(&cfg.output_dir)?;

    // The analytic experiment has a known reference point for D_k.
    let reference: Option<(Vec<f64>, Vec<f64>)> = match cfg.experiment {
        ExperimentKind::Analytic => {
            let p = AnalyticProblem::new();
            let (x, y) = p.stationary_point();
            Some((x.data().to_vec(), y))
        }
        _ => None,
    };

    let mut any_failure = false;
    for algo in cfg.algorithm.runs() {
        let mut results: Vec<SeedResult> = Vec::new();
        for &seed in &cfg.seeds {
            let inst = instantiate(&cfg, seed)?;
            let outcome = match algo {
                "pa" => run_mpgda_pa(
                    inst.problem.as_ref(),
                    &inst.x0,
                    &inst.y0,
                    &cfg.pa_settings(),
                    cfg.snapshot_trace,
                )?,
                _ => {
                    let settings = cfg.pga_settings(inst.problem.lipschitz().1);
                    run_mpgda_pga(
                        inst.problem.as_ref(),
                        &inst.x0,
                        &inst.y0,
                        &settings,
                        cfg.snapshot_trace,
                    )?
                }
            };
            if outcome.status == SolveStatus::SubproblemFailure {
                any_failure = true;
            }
            write_trace_csv(
                &cfg.output_dir.join(format!("trace_{algo}_seed{seed}.csv")),
                &outcome,
                reference.as_ref(),
            )?;
            results.push(SeedResult {
                seed,
                status: outcome.status,
                iterations: outcome.trace.len(),
                objective: inst
                    .problem
                    .reported_objective(outcome.x.data(), &outcome.y),
                g_final: outcome.final_measure().unwrap_or(f64::NAN),
                elapsed: outcome.trace.last().map_or(0.0, |r| r.elapsed),
            });
        }
        write_results(&cfg, algo, &results)?;
    }
    Ok(if any_failure { EXIT_SOLVER } else { EXIT_OK })
}

fn write_trace_csv(
    path: &Path,
    outcome: &SolveOutcome,
    reference: Option<&(Vec<f64>, Vec<f64>)>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))?;
    w.write_record(["schema_version", "k", "objective", "g_beta", "d_k", "elapsed_s"])
        .map_err(|e| Error::Data(e.to_string()))?;
    let d_k = |k: usize| -> Option<f64> {
        let (x_ref, y_ref) = reference?;
        let outer = &outcome.snapshots.as_ref()?.outer;
        let snap = outer.get(k)?;
        if snap.k != k {
            return None;
        }
        let dx: f64 = snap.x.iter().zip(x_ref).map(|(a, b)| (a - b) * (a - b)).sum();
        let dy: f64 = snap.y.iter().zip(y_ref).map(|(a, b)| (a - b) * (a - b)).sum();
        Some((dx + dy).sqrt())
    };
    for rec in &outcome.trace {
        let d = d_k(rec.k).map_or(String::new(), |v| v.to_string());
        w.write_record([
            SCHEMA_VERSION.to_string(),
            rec.k.to_string(),
            rec.objective.to_string(),
            rec.g_beta.to_string(),
            d,
            format!("{:.3}", rec.elapsed),
        ])
        .map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn write_results(cfg: &ExperimentConfig, algo: &str, results: &[SeedResult]) -> Result<()> {
    let dir = &cfg.output_dir;
    // Per-seed CSV.
    let per_seed_path = dir.join(format!("per_seed_{algo}.csv"));
    let mut w = csv::Writer::from_path(&per_seed_path)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", per_seed_path.display())))?;
    w.write_record([
        "schema_version",
        "seed",
        "status",
        "iterations",
        "objective",
        "g_final",
        "elapsed_s",
    ])
    .map_err(|e| Error::Data(e.to_string()))?;
    for r in results {
        w.write_record([
            SCHEMA_VERSION.to_string(),
            r.seed.to_string(),
            status_name(r.status).to_string(),
            r.iterations.to_string(),
            r.objective.to_string(),
            r.g_final.to_string(),
            format!("{:.3}", r.elapsed),
        ])
        .map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush()?;

    // Aggregate (arithmetic means over seeds).
    let n = results.len() as f64;
    let obj_mean = results.iter().map(|r| r.objective).sum::<f64>() / n;
    let iter_mean = results.iter().map(|r| r.iterations as f64).sum::<f64>() / n;
    let elapsed_mean = results.iter().map(|r| r.elapsed).sum::<f64>() / n;
    let converged = results.iter().filter(|r| r.status == SolveStatus::Converged).count();

    let agg_path = dir.join(format!("aggregate_{algo}.csv"));
    let mut w = csv::Writer::from_path(&agg_path)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", agg_path.display())))?;
    w.write_record([
        "schema_version",
        "n_seeds",
        "converged",
        "objective_mean",
        "iterations_mean",
        "elapsed_mean_s",
    ])
    .map_err(|e| Error::Data(e.to_string()))?;
    w.write_record([
        SCHEMA_VERSION.to_string(),
        results.len().to_string(),
        converged.to_string(),
        obj_mean.to_string(),
        iter_mean.to_string(),
        format!("{:.3}", elapsed_mean),
    ])
    .map_err(|e| Error::Data(e.to_string()))?;
    w.flush()?;

    // JSON with the embedded config.
    let json = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "algorithm": algo,
        "config": cfg.to_map(),
        "per_seed": results.iter().map(|r| serde_json::json!({
            "seed": r.seed,
            "status": status_name(r.status),
            "iterations": r.iterations,
            "objective": r.objective,
            "g_final": r.g_final,
            "elapsed_s": (r.elapsed * 1000.0).round() / 1000.0,
        })).collect::<Vec<_>>(),
        "aggregate": {
            "n_seeds": results.len(),
            "converged": converged,
            "objective_mean": obj_mean,
            "iterations_mean": iter_mean,
            "elapsed_mean_s": (elapsed_mean * 1000.0).round() / 1000.0,
        },
    });
    let json_path = dir.join(format!("results_{algo}.json"));
    let mut f = std::fs::File::create(&json_path)?;
    writeln!(f, "{}", serde_json::to_string_pretty(&json).expect("serializable"))?;
    Ok(())
}

fn cmd_gradcheck(config: Option<&Path>, sets: &[String]) -> Result<i32> {
    let cfg = resolve_config(config, sets, None)?;
    let seed = *cfg.seeds.first().expect("validated non-empty");
    let inst = instantiate(&cfg, seed)?;
    let problem = inst.problem.as_ref();
    let corrupt = if cfg.debug_corrupt_gradient { 2.0 } else { 1.0 };

    let mut worst: f64 = 0.0;
    for sample in 0..3u64 {
        let (x, y) = {
            let (xp, mut y) = problem.default_init(seed.wrapping_add(7 + sample));
            // Nudge y inside the set so central differences stay feasible.
            if let crate::proxsets::FeasibleSet::Interval { lo, hi } = problem.feasible_set() {
                y[0] = 0.5 * (lo + hi);
            }
            (xp, y)
        };
        let fx = |p: &[f64]| problem.eval_f(p, &y);
        let gx = |p: &[f64]| {
            problem
                .grad_x_f(p, &y)
                .into_iter()
                .map(|v| corrupt * v)
                .collect::<Vec<_>>()
        };
        let rep = fd_gradient_check(&fx, &gx, x.data(), 20, 1e-5, 1000 + sample)?;
        worst = worst.max(rep.max_rel_error);

        let xd = x.data().to_vec();
        let fy = |q: &[f64]| problem.eval_f(&xd, q);
        let gy = |q: &[f64]| {
            problem
                .grad_y_f(&xd, q)
                .into_iter()
                .map(|v| corrupt * v)
                .collect::<Vec<_>>()
        };
        let rep = fd_gradient_check(&fy, &gy, &y, 20, 1e-5, 2000 + sample)?;
        worst = worst.max(rep.max_rel_error);
    }
    println!("gradcheck {}: max relative error {worst:.3e}", cfg.experiment.name());
    Ok(if worst <= 1e-5 { EXIT_OK } else { EXIT_VALIDATION })
}

fn cmd_plotdata(traces: &[PathBuf], out: Option<&Path>) -> Result<i32> {
    if traces.is_empty() {
        return Err(Error::InvalidParameter("plotdata needs at least one trace".into()));
    }
    let out_dir = out.map(Path::to_path_buf).unwrap_or_else(|| {
        traces[0].parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."))
    });
    std::fs::create_dir_all(&out_dir)?;

    struct TraceData {
        stem: String,
        rows: Vec<(u64, f64, f64)>, // (k, log10 d_k, elapsed)
    }
    let mut parsed = Vec::new();
    for path in traces {
        let mut rdr = csv::Reader::from_path(path)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        let headers = rdr.headers().map_err(|e| Error::Data(e.to_string()))?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let (k_col, d_col, e_col) = match (col("k"), col("d_k"), col("elapsed_s")) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => return Err(Error::Data(format!("{} lacks trace columns", path.display()))),
        };
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Data(e.to_string()))?;
            let d_field = rec.get(d_col).unwrap_or("");
            if d_field.is_empty() {
                continue;
            }
            let k: u64 = rec
                .get(k_col)
                .unwrap_or("")
                .parse()
                .map_err(|_| Error::Data("bad k".into()))?;
            let d: f64 = d_field.parse().map_err(|_| Error::Data("bad d_k".into()))?;
            let e: f64 = rec
                .get(e_col)
                .unwrap_or("0")
                .parse()
                .map_err(|_| Error::Data("bad elapsed".into()))?;
            // Clip exact zeros before taking the log.
            rows.push((k, d.max(1e-16).log10(), e));
        }
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "trace".into());
        parsed.push(TraceData { stem, rows });
    }

    if parsed.len() == 1 {
        let t = &parsed[0];
        let iters_path = out_dir.join(format!("{}_dk_iters.csv", t.stem));
        let mut f = std::fs::File::create(&iters_path)?;
        writeln!(f, "k,log10_dk")?;
        for (k, ld, _) in &t.rows {
            writeln!(f, "{k},{ld}")?;
        }
        let time_path = out_dir.join(format!("{}_dk_time.csv", t.stem));
        let mut f = std::fs::File::create(&time_path)?;
        writeln!(f, "elapsed_s,log10_dk")?;
        for (_, ld, e) in &t.rows {
            writeln!(f, "{e},{ld}")?;
        }
    } else {
        // Merge by iteration index for side-by-side comparison plots.
        let mut ks: Vec<u64> = parsed.iter().flat_map(|t| t.rows.iter().map(|r| r.0)).collect();
        ks.sort_unstable();
        ks.dedup();
        let merged_path = out_dir.join("merged_dk_iters.csv");
        let mut f = std::fs::File::create(&merged_path)?;
        let names: Vec<String> =
            parsed.iter().map(|t| format!("log10_dk_{}", t.stem)).collect();
        writeln!(f, "k,{}", names.join(","))?;
        for k in ks {
            let mut fields = vec![k.to_string()];
            for t in &parsed {
                let v = t
                    .rows
                    .iter()
                    .find(|r| r.0 == k)
                    .map(|r| r.1.to_string())
                    .unwrap_or_default();
                fields.push(v);
            }
            writeln!(f, "{}", fields.join(","))?;
        }
    }
    Ok(EXIT_OK)
}

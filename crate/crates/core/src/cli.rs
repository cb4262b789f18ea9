//! Command-line front end. Parsing is clap-based; every run is fully
//! determined by the resolved [`RunConfig`] (scenario, parameters, seed,
//! budgets), so a fixed seed gives byte-identical outputs across runs and
//! thread counts.
//!
//! Exit codes: 0 success, 1 config/parse error, 2 numerical failure, 3 when
//! `--strict` is set and any verdict is Inconclusive. stdout carries the
//! JSON report; stderr carries diagnostics.

use crate::dynamics::{reach_sample, simulate_sde};
use crate::error::{Error, Result};
use crate::manifold::CellGrid;
use crate::measure::{
    check_invariance, occupation_measure, support_estimate, torus_trig_battery,
    verify_equivalence, write_heatmap_pgm, write_histogram_csv, SupportEstimate, Verdict,
};
use crate::rng::RandomStream;
use crate::scenarios::{build_scenario, list_scenarios, sample_point, Budgets, Scenario,
    ScenarioParams};
use crate::vectorfield::{distribution_rank, RankReport, DEFAULT_RANK_TOL};
use clap::{ArgAction, Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(
    name = "folsim",
    about = "Control systems and Stratonovich diffusions on compact manifolds: \
             accessibility, occupation measures, and equivalence-theorem checks",
    version,
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Sample the Lie-algebra distribution rank at random points.
    Rank(CommonOpts),
    /// Estimate the accessible set with randomized control paths.
    Reach(CommonOpts),
    /// Simulate one SDE path and print the recorded trajectory.
    Sde(CommonOpts),
    /// Estimate the occupation measure of one long diffusion path.
    Occupation(CommonOpts),
    /// Quadrature check of the invariance criterion for the attached density.
    Invariance(CommonOpts),
    /// Apply the generator to the scenario battery at the start points.
    Harmonic(CommonOpts),
    /// Run all three assertions of the equivalence theorem.
    Verify(CommonOpts),
    /// Print the scenario catalog.
    ListScenarios(CommonOpts),
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::Rank(_) => "rank",
            Cmd::Reach(_) => "reach",
            Cmd::Sde(_) => "sde",
            Cmd::Occupation(_) => "occupation",
            Cmd::Invariance(_) => "invariance",
            Cmd::Harmonic(_) => "harmonic",
            Cmd::Verify(_) => "verify",
            Cmd::ListScenarios(_) => "list-scenarios",
        }
    }

    fn opts(&self) -> &CommonOpts {
        match self {
            Cmd::Rank(o)
            | Cmd::Reach(o)
            | Cmd::Sde(o)
            | Cmd::Occupation(o)
            | Cmd::Invariance(o)
            | Cmd::Harmonic(o)
            | Cmd::Verify(o)
            | Cmd::ListScenarios(o) => o,
        }
    }
}

fn parse_grid_arg(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected ROWSxCOLS, got {s:?}"))?;
    let rows = a.trim().parse::<usize>().map_err(|e| e.to_string())?;
    let cols = b.trim().parse::<usize>().map_err(|e| e.to_string())?;
    Ok((rows, cols))
}

#[derive(Args, Debug, Default)]
struct CommonOpts {
    /// Scenario name (see `list-scenarios`).
    #[arg(long)]
    scenario: Option<String>,
    /// Slope of the torus line field (torus_line).
    #[arg(long)]
    a: Option<f64>,
    /// Sphere dimension (sphere_height / sphere_bm).
    #[arg(long)]
    n: Option<usize>,
    /// Override the rational-slope auto-detection (torus_line).
    #[arg(long)]
    rational: Option<bool>,
    /// Master seed; required for every simulating command (no wall-clock
    /// default).
    #[arg(long)]
    seed: Option<u64>,
    /// Read a JSON RunConfig; explicit flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the occupation histogram as CSV.
    #[arg(long)]
    hist: Option<PathBuf>,
    /// Write a torus heatmap as binary PGM.
    #[arg(long)]
    heatmap: Option<PathBuf>,
    /// Time horizon T.
    #[arg(long = "T")]
    t_final: Option<f64>,
    /// Integrator step.
    #[arg(long)]
    dt: Option<f64>,
    /// Discarded initial time span.
    #[arg(long)]
    burn_in: Option<f64>,
    /// Number of control/diffusion paths.
    #[arg(long = "paths")]
    n_paths: Option<usize>,
    /// Horizon of each randomized control path.
    #[arg(long)]
    horizon: Option<f64>,
    /// Cell grid resolution, e.g. 32x32.
    #[arg(long, value_parser = parse_grid_arg)]
    grid: Option<(usize, usize)>,
    /// Bracket depth.
    #[arg(long)]
    depth: Option<usize>,
    /// Seed replicas per start for ergodic averaging.
    #[arg(long)]
    replicas: Option<usize>,
    /// Sample count for rank probing.
    #[arg(long)]
    samples: Option<usize>,
    /// Quadrature resolution for invariance checks, e.g. 256x256.
    #[arg(long, value_parser = parse_grid_arg)]
    quad: Option<(usize, usize)>,
    /// Finite-difference step for generator applications.
    #[arg(long)]
    h: Option<f64>,
    /// Record every Nth SDE step.
    #[arg(long)]
    stride: Option<usize>,
    /// Occupation threshold for support estimates.
    #[arg(long)]
    min_count: Option<u64>,
    /// Exit 3 if any verdict is Inconclusive.
    #[arg(long, action = ArgAction::SetTrue)]
    strict: bool,
    /// Print the resolved RunConfig and exit without running.
    #[arg(long, action = ArgAction::SetTrue)]
    dump_config: bool,
    /// Suppress the stderr progress note.
    #[arg(long, action = ArgAction::SetTrue)]
    quiet: bool,
}

/// The full, serializable description of one run. Identical configs (plus
/// the seed inside) produce byte-identical outputs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    pub scenario: Option<String>,
    pub a: Option<f64>,
    pub n: Option<usize>,
    pub rational: Option<bool>,
    pub seed: Option<u64>,
    pub t_final: Option<f64>,
    pub dt: Option<f64>,
    pub burn_in: Option<f64>,
    pub n_paths: Option<usize>,
    pub horizon: Option<f64>,
    pub grid: Option<(usize, usize)>,
    pub depth: Option<usize>,
    pub replicas: Option<usize>,
    pub samples: Option<usize>,
    pub quad: Option<(usize, usize)>,
    pub h: Option<f64>,
    pub stride: Option<usize>,
    pub min_count: Option<u64>,
    pub strict: bool,
}

impl RunConfig {
    /// Merge a config file (if any) with explicit flags; flags win.
    fn resolve(command: &str, opts: &CommonOpts) -> Result<RunConfig> {
        let mut cfg = match &opts.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)?;
                let cfg: RunConfig = serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("config file: {e}")))?;
                if !cfg.command.is_empty() && cfg.command != command {
                    return Err(Error::Config(format!(
                        "config is for command {:?}, invoked as {command:?}",
                        cfg.command
                    )));
                }
                cfg
            }
            None => RunConfig::default(),
        };
        cfg.command = command.to_string();
        cfg.scenario = opts.scenario.clone().or(cfg.scenario);
        cfg.a = opts.a.or(cfg.a);
        cfg.n = opts.n.or(cfg.n);
        cfg.rational = opts.rational.or(cfg.rational);
        cfg.seed = opts.seed.or(cfg.seed);
        cfg.t_final = opts.t_final.or(cfg.t_final);
        cfg.dt = opts.dt.or(cfg.dt);
        cfg.burn_in = opts.burn_in.or(cfg.burn_in);
        cfg.n_paths = opts.n_paths.or(cfg.n_paths);
        cfg.horizon = opts.horizon.or(cfg.horizon);
        cfg.grid = opts.grid.or(cfg.grid);
        cfg.depth = opts.depth.or(cfg.depth);
        cfg.replicas = opts.replicas.or(cfg.replicas);
        cfg.samples = opts.samples.or(cfg.samples);
        cfg.quad = opts.quad.or(cfg.quad);
        cfg.h = opts.h.or(cfg.h);
        cfg.stride = opts.stride.or(cfg.stride);
        cfg.min_count = opts.min_count.or(cfg.min_count);
        cfg.strict = opts.strict || cfg.strict;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            ("T", self.t_final),
            ("dt", self.dt),
            ("horizon", self.horizon),
            ("h", self.h),
        ];
        for (name, v) in positive {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(Error::Config(format!("{name} must be positive, got {v}")));
                }
            }
        }
        if let Some(b) = self.burn_in {
            if b < 0.0 {
                return Err(Error::Config(format!("burn_in must be nonnegative, got {b}")));
            }
        }
        for (name, v) in [
            ("paths", self.n_paths),
            ("depth", self.depth),
            ("replicas", self.replicas),
            ("samples", self.samples),
            ("stride", self.stride),
        ] {
            if v == Some(0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, g) in [("grid", self.grid), ("quad", self.quad)] {
            if let Some((r, c)) = g {
                if r == 0 || c == 0 {
                    return Err(Error::Config(format!("{name} resolution must be positive")));
                }
            }
        }
        if self.min_count == Some(0) {
            return Err(Error::Config("min_count must be at least 1".into()));
        }
        Ok(())
    }

    fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("seed is required (pass --seed)".into()))
    }

    fn scenario(&self) -> Result<Scenario> {
        let name = self
            .scenario
            .as_deref()
            .ok_or_else(|| Error::Config("scenario is required (pass --scenario)".into()))?;
        let params = ScenarioParams { a: self.a, n: self.n, rational: self.rational };
        let mut sc = build_scenario(name, &params)?;
        self.apply_budget_overrides(&mut sc.budgets);
        Ok(sc)
    }

    fn apply_budget_overrides(&self, b: &mut Budgets) {
        if let Some(v) = self.t_final {
            b.t_final = v;
        }
        if let Some(v) = self.dt {
            b.dt = v;
        }
        if let Some(v) = self.burn_in {
            b.burn_in = v;
        }
        if let Some(v) = self.n_paths {
            b.n_paths = v;
        }
        if let Some(v) = self.horizon {
            b.horizon = v;
        }
        if let Some(v) = self.grid {
            b.grid = v;
        }
        if let Some(v) = self.depth {
            b.depth = v;
        }
        if let Some(v) = self.replicas {
            b.replicas = v;
        }
    }
}

// ---------------------------------------------------------------------------
// Report shapes
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ReachReport {
    scenario: String,
    n_paths: usize,
    horizon: f64,
    dt: f64,
    grid: (usize, usize),
    total_samples: u64,
    support: SupportEstimate,
}

#[derive(Serialize)]
struct TrajectoryReport {
    scenario: String,
    t_final: f64,
    dt: f64,
    stride: usize,
    times: Vec<f64>,
    points: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct OccupationReport {
    scenario: String,
    t_final: f64,
    dt: f64,
    burn_in: f64,
    grid: (usize, usize),
    total_samples: u64,
    burn_in_discarded: u64,
    support: SupportEstimate,
}

#[derive(Serialize)]
struct HarmonicEntry {
    function: String,
    start: usize,
    lf: f64,
}

#[derive(Serialize)]
struct HarmonicReport {
    scenario: String,
    h: f64,
    entries: Vec<HarmonicEntry>,
    max_abs: f64,
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

/// Parse `argv` (including the program name) and run; returns the process
/// exit code.
pub fn run(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                eprintln!("error[cli]: {e}");
                return 1;
            }
            // --help / --version
            print!("{e}");
            return 0;
        }
    };
    let command = cli.command.name();
    let opts = cli.command.opts();
    let cfg = match RunConfig::resolve(command, opts) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            return e.exit_code();
        }
    };
    if opts.dump_config {
        return match emit_json(&cfg, &opts.out) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("error[{}]: {e}", e.code());
                e.exit_code()
            }
        };
    }
    if !opts.quiet {
        eprintln!(
            "folsim: {command} {}",
            cfg.scenario.as_deref().unwrap_or("(no scenario)")
        );
    }
    match execute(&cfg, opts) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            e.exit_code()
        }
    }
}

fn emit_json<T: Serialize>(value: &T, out: &Option<PathBuf>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("report serialization: {e}")))?;
    text.push('\n');
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => {
            let stdout = std::io::stdout();
            stdout.lock().write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

fn write_artifacts(
    hist: &crate::measure::OccupationHistogram,
    opts: &CommonOpts,
) -> Result<()> {
    if let Some(path) = &opts.hist {
        let mut buf = Vec::new();
        write_histogram_csv(hist, &mut buf)?;
        std::fs::write(path, buf)?;
    }
    if let Some(path) = &opts.heatmap {
        let mut buf = Vec::new();
        write_heatmap_pgm(hist, &mut buf)?;
        std::fs::write(path, buf)?;
    }
    Ok(())
}

fn execute(cfg: &RunConfig, opts: &CommonOpts) -> Result<i32> {
    match cfg.command.as_str() {
        "list-scenarios" => {
            emit_json(&list_scenarios(), &opts.out)?;
            Ok(0)
        }
        "rank" => {
            let sc = cfg.scenario()?;
            let samples = cfg.samples.unwrap_or(1000);
            let depth = sc.budgets.depth;
            let mut rng = RandomStream::new(cfg.seed()?, 0);
            let mut ranks = Vec::with_capacity(samples);
            for _ in 0..samples {
                let p = sample_point(sc.manifold, &mut rng)?;
                ranks.push(distribution_rank(&sc.family, &p, depth, DEFAULT_RANK_TOL)?);
            }
            let min_rank = *ranks.iter().min().expect("samples >= 1");
            let max_rank = *ranks.iter().max().expect("samples >= 1");
            let report = RankReport {
                samples,
                depth,
                min_rank,
                max_rank,
                full_rank_everywhere: min_rank == sc.manifold.dim(),
                ranks,
            };
            emit_json(&report, &opts.out)?;
            Ok(0)
        }
        "reach" => {
            let sc = cfg.scenario()?;
            let b = &sc.budgets;
            let grid = CellGrid::new(sc.manifold, b.grid)?;
            let csys = sc.control_system()?;
            let hist = reach_sample(
                &csys,
                &sc.starts[0],
                b.n_paths,
                b.horizon,
                b.reach_dt,
                &grid,
                &RandomStream::new(cfg.seed()?, 0),
            )?;
            let support = support_estimate(&hist, cfg.min_count.unwrap_or(1))?;
            write_artifacts(&hist, opts)?;
            let report = ReachReport {
                scenario: sc.name.clone(),
                n_paths: b.n_paths,
                horizon: b.horizon,
                dt: b.reach_dt,
                grid: b.grid,
                total_samples: hist.total_samples,
                support,
            };
            emit_json(&report, &opts.out)?;
            Ok(0)
        }
        "sde" => {
            let sc = cfg.scenario()?;
            let t_final = cfg.t_final.unwrap_or(10.0);
            let dt = cfg.dt.unwrap_or(sc.budgets.dt);
            let stride = cfg.stride.unwrap_or(1);
            let dsys = sc.sde_system()?;
            let mut rng = RandomStream::new(cfg.seed()?, 0);
            let traj = simulate_sde(&dsys, &sc.starts[0], t_final, dt, &mut rng, stride)?;
            let report = TrajectoryReport {
                scenario: sc.name.clone(),
                t_final,
                dt,
                stride,
                times: traj.times,
                points: traj.points.iter().map(|p| p.coords().to_vec()).collect(),
            };
            emit_json(&report, &opts.out)?;
            Ok(0)
        }
        "occupation" => {
            let sc = cfg.scenario()?;
            let b = &sc.budgets;
            let grid = CellGrid::new(sc.manifold, b.grid)?;
            let dsys = sc.sde_system()?;
            let mut rng = RandomStream::new(cfg.seed()?, 0);
            let hist = occupation_measure(
                &dsys,
                &sc.starts[0],
                b.t_final,
                b.dt,
                b.burn_in,
                &grid,
                &mut rng,
            )?;
            let support = support_estimate(&hist, cfg.min_count.unwrap_or(1))?;
            write_artifacts(&hist, opts)?;
            let report = OccupationReport {
                scenario: sc.name.clone(),
                t_final: b.t_final,
                dt: b.dt,
                burn_in: b.burn_in,
                grid: b.grid,
                total_samples: hist.total_samples,
                burn_in_discarded: hist.burn_in_discarded,
                support,
            };
            emit_json(&report, &opts.out)?;
            Ok(0)
        }
        "invariance" => {
            let sc = cfg.scenario()?;
            cfg.seed()?;
            let density = sc.density.ok_or_else(|| {
                Error::Config(format!("scenario {} has no attached density", sc.name))
            })?;
            let dsys = sc.sde_system()?;
            let quad = cfg.quad.unwrap_or((128, 128));
            let h = cfg.h.unwrap_or(1e-4);
            let report = check_invariance(&density, &dsys, &torus_trig_battery(3), quad, h)?;
            emit_json(&report, &opts.out)?;
            Ok(0)
        }
        "harmonic" => {
            let sc = cfg.scenario()?;
            cfg.seed()?;
            if sc.battery.is_empty() {
                return Err(Error::Config(format!(
                    "scenario {} has no test-function battery",
                    sc.name
                )));
            }
            let dsys = sc.sde_system()?;
            let h = cfg.h.unwrap_or(1e-4);
            let mut entries = Vec::new();
            let mut max_abs = 0.0f64;
            for (si, start) in sc.starts.iter().enumerate() {
                for (name, f) in &sc.battery {
                    let lf = crate::dynamics::generator_apply(&dsys, f, start, h)?;
                    max_abs = max_abs.max(lf.abs());
                    entries.push(HarmonicEntry { function: name.clone(), start: si, lf });
                }
            }
            let report = HarmonicReport { scenario: sc.name.clone(), h, entries, max_abs };
            emit_json(&report, &opts.out)?;
            Ok(0)
        }
        "verify" => {
            let sc = cfg.scenario()?;
            let rng = RandomStream::new(cfg.seed()?, 0);
            let report = verify_equivalence(&sc, &rng)?;
            emit_json(&report, &opts.out)?;
            let inconclusive = [
                report.reach_verdict,
                report.support_verdict,
                report.constancy_verdict,
            ]
            .iter()
            .any(|v| *v == Verdict::Inconclusive);
            if cfg.strict && inconclusive {
                return Ok(3);
            }
            Ok(0)
        }
        other => Err(Error::Config(format!("unknown command {other:?}"))),
    }
}

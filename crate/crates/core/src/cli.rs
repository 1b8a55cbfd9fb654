//! Command-line driver. Every command is a pure function of its arguments
//! and seed; `--workers` only changes how paths are scheduled.
//!
//! Exit codes: 0 on success, 1 on runtime errors, 2 on invalid flags, config
//! files or parameter values.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bounds::{certify_coupled, BoundReport, Distance, EstimateWithError};
use crate::error::{Error, Result};
use crate::estimate::{estimate_all, DiscreteTrajectory};
use crate::instability::{
    cir_occupancy_limit, occupancy_average, weak_limit_cdf_for_drift, KsReport, OccupancyCurve,
};
use crate::model::{bessel_sq_density, cir_density, cir_stationary_density, CirParams};
use crate::numeric::integrate_to_infinity;
use crate::simulate::{
    simulate_coupled, simulate_exact, simulate_exact_path, simulate_smoothed_bessel, PathEnsemble, RngStream,
    SmoothedBessel, TimeGrid,
};

/// Comma-separated list of reals, e.g. `0.5,0.2,0.1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatList(pub Vec<f64>);

impl FromStr for FloatList {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(FloatList)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "cirlab",
    version,
    about = "Simulation, bounds, estimation and instability experiments for CIR and squared Bessel processes",
    args_override_self = true,
    allow_negative_numbers = true
)]
pub struct Cli {
    /// Seed of the random streams (path i uses stream i).
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output file for machine-readable results (stdout if absent).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Flat `key=value` file; keys are long flag names, flags given on the
    /// command line take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate paths and write them as CSV or binary.
    #[command(allow_negative_numbers = true)]
    Simulate(SimulateArgs),
    /// Tabulate the transition or stationary density.
    #[command(allow_negative_numbers = true)]
    Density(DensityArgs),
    /// Closed-form moments, optionally next to Monte Carlo estimates.
    #[command(allow_negative_numbers = true)]
    Moments(MomentsArgs),
    /// Certify the coupled-distance bounds between CIR and squared Bessel models.
    #[command(allow_negative_numbers = true)]
    Bounds(BoundsArgs),
    /// Estimate sigma^2 and the drift level from a trajectory.
    #[command(allow_negative_numbers = true)]
    Estimate(EstimateArgs),
    /// Occupancy averages of a bounded set.
    #[command(allow_negative_numbers = true)]
    Instability(InstabilityArgs),
    /// KS test of the rescaled smoothed Bessel process against its weak limit.
    #[command(allow_negative_numbers = true)]
    Limit(LimitArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Initial value.
    #[arg(long, default_value_t = 1.0)]
    pub x0: f64,
    /// Drift level a.
    #[arg(long, default_value_t = 2.0)]
    pub a: f64,
    /// Mean-reversion rate b (0 gives the squared Bessel process).
    #[arg(long, default_value_t = 1.0)]
    pub b: f64,
    /// Diffusion scale sigma.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
}

impl ModelArgs {
    fn params(&self) -> Result<CirParams> {
        CirParams::new(self.x0, self.a, self.b, self.sigma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scheme {
    Exact,
    Euler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PathFormat {
    Csv,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Final time.
    #[arg(long, default_value_t = 1.0)]
    pub t_end: f64,
    /// Number of uniform grid steps.
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    /// Number of paths.
    #[arg(long, default_value_t = 100)]
    pub paths: usize,
    /// Exact transitions or full-truncation Euler.
    #[arg(long, value_enum, default_value_t = Scheme::Exact)]
    pub scheme: Scheme,
    /// Euler substeps per grid step.
    #[arg(long, default_value_t = 1)]
    pub substeps: usize,
    /// Output layout; binary requires --out.
    #[arg(long, value_enum, default_value_t = PathFormat::Csv)]
    pub format: PathFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DensityKind {
    Transition,
    Stationary,
}

#[derive(Debug, Clone, Args)]
pub struct DensityArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Time of the transition density.
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
    #[arg(long, value_enum, default_value_t = DensityKind::Transition)]
    pub kind: DensityKind,
    /// Largest tabulated x.
    #[arg(long, default_value_t = 6.0)]
    pub x_max: f64,
    /// Number of tabulated points on (0, x_max].
    #[arg(long, default_value_t = 30)]
    pub points: usize,
}

#[derive(Debug, Clone, Args)]
pub struct MomentsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Increasing nonnegative times.
    #[arg(long, default_value = "0,0.5,1,2")]
    pub times: FloatList,
    /// Exact-sampling paths for Monte Carlo columns (0 disables them).
    #[arg(long, default_value_t = 0)]
    pub mc_paths: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DistanceArg {
    L1,
    L2Distributional,
    L2Pathwise,
    All,
}

#[derive(Debug, Clone, Args)]
pub struct BoundsArgs {
    /// Common initial value.
    #[arg(long, default_value_t = 1.0)]
    pub x0: f64,
    /// Limit model drift level.
    #[arg(long, default_value_t = 1.0)]
    pub a0: f64,
    /// Limit model mean reversion (0: squared Bessel).
    #[arg(long, default_value_t = 0.0)]
    pub b0: f64,
    /// Limit model diffusion scale.
    #[arg(long, default_value_t = 1.0)]
    pub sigma0: f64,
    /// Approximating models' drift level (defaults to a0).
    #[arg(long)]
    pub an: Option<f64>,
    /// Approximating models' diffusion scale (defaults to sigma0).
    #[arg(long)]
    pub sigman: Option<f64>,
    /// Mean-reversion rates of the approximating models.
    #[arg(long, default_value = "0.5,0.2,0.1,0.05")]
    pub bn: FloatList,
    /// Horizon T.
    #[arg(long, default_value_t = 1.0)]
    pub t_end: f64,
    /// Total Euler steps on [0, T]; a multiple of --output-points.
    #[arg(long, default_value_t = 1024)]
    pub steps: usize,
    /// Number of stored grid intervals.
    #[arg(long, default_value_t = 64)]
    pub output_points: usize,
    #[arg(long, default_value_t = 2000)]
    pub paths: usize,
    /// One-sided Monte Carlo allowance in standard errors.
    #[arg(long, default_value_t = 3.0)]
    pub z: f64,
    /// Rerun with half the step and add twice the change as a bias budget (0 or 1).
    #[arg(long, default_value_t = 1)]
    pub halving: u8,
    #[arg(long, value_enum, default_value_t = DistanceArg::All)]
    pub distance: DistanceArg,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    pub format: ReportFormat,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    /// Trajectory CSV with header `t,value`; simulated when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Known sigma for the drift estimator (otherwise the QV estimate is used).
    #[arg(long)]
    pub sigma_known: Option<f64>,
    /// Initial value of the simulated squared Bessel path.
    #[arg(long, default_value_t = 1.0)]
    pub y0: f64,
    #[arg(long, default_value_t = 2.0)]
    pub a: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 100.0)]
    pub t_end: f64,
    /// Observation step of the simulated path.
    #[arg(long, default_value_t = 0.01)]
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Process {
    Cir,
    Bessel,
    Smoothed,
}

#[derive(Debug, Clone, Args)]
pub struct InstabilityArgs {
    #[arg(long, value_enum, default_value_t = Process::Cir)]
    pub process: Process,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Smoothing parameter of the smoothed Bessel SDE.
    #[arg(long, default_value_t = 1.0)]
    pub eps: f64,
    /// Drift constant of the smoothed Bessel SDE.
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    /// Level N of the set {|x| < N}.
    #[arg(long, default_value_t = 2.0)]
    pub level: f64,
    /// Evaluation times (added to the grid).
    #[arg(long, default_value = "50,100,200")]
    pub times: FloatList,
    /// First positive point of the geometric grid.
    #[arg(long, default_value_t = 0.01)]
    pub t_first: f64,
    /// Points of the geometric grid.
    #[arg(long, default_value_t = 1000)]
    pub points: usize,
    /// Euler substeps per grid interval (smoothed process only).
    #[arg(long, default_value_t = 10)]
    pub substeps: usize,
    #[arg(long, default_value_t = 1000)]
    pub paths: usize,
    #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
    pub format: ReportFormat,
}

#[derive(Debug, Clone, Args)]
pub struct LimitArgs {
    #[arg(long, default_value_t = 1.0)]
    pub eps: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    #[arg(long, default_value_t = 1.0)]
    pub v0: f64,
    /// Time T of the rescaled sample V_T / sqrt(T).
    #[arg(long, default_value_t = 1e4)]
    pub t_end: f64,
    #[arg(long, default_value_t = 0.01)]
    pub t_first: f64,
    #[arg(long, default_value_t = 200)]
    pub points: usize,
    #[arg(long, default_value_t = 20)]
    pub substeps: usize,
    #[arg(long, default_value_t = 2000)]
    pub paths: usize,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    pub format: ReportFormat,
}

/// An error tagged with the exit code it maps to.
#[derive(Debug)]
enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

fn runtime_err(e: Error) -> Failure {
    Failure::Runtime(e.to_string())
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let argv = match merge_config(argv) {
        Ok(a) => a,
        Err(f) => return report(f),
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(f) => report(f),
    }
}

fn report(f: Failure) -> i32 {
    match &f {
        Failure::Config(m) => eprintln!("error: {m}"),
        Failure::Runtime(m) => eprintln!("error: {m}"),
    }
    f.code()
}

const SUBCOMMANDS: [&str; 7] = [
    "simulate",
    "density",
    "moments",
    "bounds",
    "estimate",
    "instability",
    "limit",
];
const VALUED_GLOBALS: [&str; 4] = ["--seed", "--workers", "--out", "--config"];

/// Reads `--config FILE` and inserts its entries as `--key=value` right after
/// the subcommand, so that explicit flags (which come later) override them.
fn merge_config(argv: Vec<OsString>) -> std::result::Result<Vec<OsString>, Failure> {
    let strs: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let mut config = None;
    let mut sub_at = None;
    let mut i = 1;
    while i < strs.len() {
        let s = strs[i].as_str();
        if s == "--" {
            break;
        }
        if let Some(v) = s.strip_prefix("--config=") {
            config = Some(v.to_string());
        } else if s == "--config" {
            config = strs.get(i + 1).cloned();
            i += 1;
        } else if VALUED_GLOBALS.contains(&s) {
            i += 1;
        } else if sub_at.is_none() && SUBCOMMANDS.contains(&s) {
            sub_at = Some(i);
        }
        i += 1;
    }
    let (Some(path), Some(at)) = (config, sub_at) else {
        return Ok(argv);
    };
    let entries = read_config(Path::new(&path))?;
    let mut out = argv[..=at].to_vec();
    for (k, v) in entries {
        if k == "config" {
            return Err(config_err("a config file cannot include another config file"));
        }
        out.push(OsString::from(format!("--{k}={v}")));
    }
    out.extend_from_slice(&argv[at + 1..]);
    Ok(out)
}

fn read_config(path: &Path) -> std::result::Result<BTreeMap<String, String>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| config_err(format!("{}:{}: expected key=value", path.display(), n + 1)))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() || key.starts_with('-') {
            return Err(config_err(format!("{}:{}: bad key {k:?}", path.display(), n + 1)));
        }
        if map.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(config_err(format!("{}:{}: duplicate key {key}", path.display(), n + 1)));
        }
    }
    Ok(map)
}

fn execute(cli: &Cli) -> std::result::Result<(), Failure> {
    let job = prepare(cli)?;
    let pool = match cli.workers {
        Some(0) => return Err(config_err("--workers must be at least 1")),
        Some(k) => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Failure::Runtime(e.to_string()))?,
        ),
        None => None,
    };
    let output = match pool {
        Some(p) => p.install(|| job.run(cli.seed)),
        None => job.run(cli.seed),
    }
    .map_err(runtime_err)?;
    emit(cli, output).map_err(runtime_err)
}

/// Validated work item; building one performs every parameter check.
enum Job {
    Simulate {
        params: CirParams,
        grid: TimeGrid,
        paths: usize,
        scheme: Scheme,
        substeps: usize,
        format: PathFormat,
    },
    Density {
        params: CirParams,
        t: f64,
        kind: DensityKind,
        xs: Vec<f64>,
    },
    Moments {
        params: CirParams,
        times: Vec<f64>,
        mc_paths: usize,
    },
    Bounds {
        p0: CirParams,
        pns: Vec<CirParams>,
        grid: TimeGrid,
        substeps: usize,
        paths: usize,
        z: f64,
        halving: bool,
        distances: Vec<Distance>,
        format: ReportFormat,
    },
    Estimate {
        input: Option<PathBuf>,
        simulated: Option<(CirParams, TimeGrid)>,
        sigma_known: Option<f64>,
    },
    Instability {
        source: OccupancySource,
        grid: TimeGrid,
        level: f64,
        times: Vec<f64>,
        paths: usize,
        format: ReportFormat,
    },
    Limit {
        sde: SmoothedBessel,
        grid: TimeGrid,
        substeps: usize,
        paths: usize,
        format: ReportFormat,
    },
}

enum OccupancySource {
    Exact(CirParams),
    Smoothed(SmoothedBessel, usize),
}

/// What a command produced.
enum Output {
    /// Bytes for `--out` (or stdout), plus an optional human summary.
    Machine { bytes: Vec<u8>, summary: Option<String> },
    /// Human table when no `--out` is given, CSV otherwise.
    Table { header: Vec<String>, rows: Vec<Vec<f64>>, note: Option<String> },
}

fn positive_count(name: &str, n: usize) -> std::result::Result<usize, Failure> {
    if n == 0 {
        Err(config_err(format!("--{name} must be positive")))
    } else {
        Ok(n)
    }
}

fn grid_with_times(t_first: f64, points: usize, times: &[f64]) -> Result<TimeGrid> {
    let t_end = times.iter().copied().fold(f64::NAN, f64::max);
    let mut t: Vec<f64> = if t_first < t_end {
        TimeGrid::geometric(t_first, t_end, points.max(2))?.times().to_vec()
    } else {
        vec![0.0]
    };
    t.extend_from_slice(times);
    t.sort_by(f64::total_cmp);
    t.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1e-300));
    TimeGrid::from_times(t)
}

fn prepare(cli: &Cli) -> std::result::Result<Job, Failure> {
    Ok(match &cli.command {
        Command::Simulate(a) => {
            if a.format == PathFormat::Binary && cli.out.is_none() {
                return Err(config_err("--format binary requires --out"));
            }
            Job::Simulate {
                params: a.model.params().map_err(config_err)?,
                grid: TimeGrid::uniform(a.t_end, positive_count("steps", a.steps)?).map_err(config_err)?,
                paths: positive_count("paths", a.paths)?,
                scheme: a.scheme,
                substeps: positive_count("substeps", a.substeps)?,
                format: a.format,
            }
        }
        Command::Density(a) => {
            let params = a.model.params().map_err(config_err)?;
            if a.kind == DensityKind::Transition && !(a.t > 0.0 && a.t.is_finite()) {
                return Err(config_err("--t must be positive"));
            }
            if a.kind == DensityKind::Stationary && params.is_bessel() {
                return Err(config_err(Error::NoStationaryLaw));
            }
            if !(a.x_max > 0.0 && a.x_max.is_finite()) {
                return Err(config_err("--x-max must be positive"));
            }
            let n = positive_count("points", a.points)?;
            Job::Density {
                params,
                t: a.t,
                kind: a.kind,
                xs: (1..=n).map(|k| a.x_max * k as f64 / n as f64).collect(),
            }
        }
        Command::Moments(a) => {
            let times = a.times.0.clone();
            if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || times.windows(2).any(|w| w[1] <= w[0]) {
                return Err(config_err("--times must be nonnegative and strictly increasing"));
            }
            Job::Moments {
                params: a.model.params().map_err(config_err)?,
                times,
                mc_paths: a.mc_paths,
            }
        }
        Command::Bounds(a) => {
            let p0 = CirParams::new(a.x0, a.a0, a.b0, a.sigma0).map_err(config_err)?;
            let an = a.an.unwrap_or(a.a0);
            let sn = a.sigman.unwrap_or(a.sigma0);
            let pns = a
                .bn
                .0
                .iter()
                .map(|&b| CirParams::new(a.x0, an, b, sn))
                .collect::<Result<Vec<_>>>()
                .map_err(config_err)?;
            let out_pts = positive_count("output-points", a.output_points)?;
            if a.steps == 0 || a.steps % out_pts != 0 {
                return Err(config_err("--steps must be a positive multiple of --output-points"));
            }
            if a.halving > 1 {
                return Err(config_err("--halving must be 0 or 1"));
            }
            let distances = match a.distance {
                DistanceArg::L1 => vec![Distance::L1],
                DistanceArg::L2Distributional => vec![Distance::L2Distributional],
                DistanceArg::L2Pathwise => vec![Distance::L2Pathwise],
                DistanceArg::All => vec![Distance::L1, Distance::L2Distributional, Distance::L2Pathwise],
            };
            if !a.z.is_finite() || a.z < 0.0 {
                return Err(config_err("--z must be nonnegative"));
            }
            Job::Bounds {
                p0,
                pns,
                grid: TimeGrid::uniform(a.t_end, out_pts).map_err(config_err)?,
                substeps: a.steps / out_pts,
                paths: positive_count("paths", a.paths)?,
                z: a.z,
                halving: a.halving == 1,
                distances,
                format: a.format,
            }
        }
        Command::Estimate(a) => {
            if let Some(s) = a.sigma_known {
                if !(s > 0.0 && s.is_finite()) {
                    return Err(config_err("--sigma-known must be positive"));
                }
            }
            let simulated = if a.input.is_none() {
                let p = CirParams::new(a.y0, a.a, 0.0, a.sigma).map_err(config_err)?;
                if !(a.step > 0.0 && a.step.is_finite()) {
                    return Err(config_err("--step must be positive"));
                }
                let n = (a.t_end / a.step).round();
                if n < 1.0 || n.is_nan() || (n * a.step - a.t_end).abs() > 1e-9 * a.t_end {
                    return Err(config_err("--t-end must be a positive multiple of --step"));
                }
                Some((p, TimeGrid::uniform(a.t_end, n as usize).map_err(config_err)?))
            } else {
                None
            };
            Job::Estimate {
                input: a.input.clone(),
                simulated,
                sigma_known: a.sigma_known,
            }
        }
        Command::Instability(a) => {
            let times = a.times.0.clone();
            if times.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
                return Err(config_err("--times must be positive"));
            }
            if !(a.level > 0.0 && a.level.is_finite()) {
                return Err(config_err("--level must be positive"));
            }
            let source = match a.process {
                Process::Cir => {
                    let p = a.model.params().map_err(config_err)?;
                    if p.is_bessel() {
                        return Err(config_err("--process cir needs b > 0; use --process bessel"));
                    }
                    OccupancySource::Exact(p)
                }
                Process::Bessel => OccupancySource::Exact(
                    CirParams::new(a.model.x0, a.model.a, 0.0, a.model.sigma).map_err(config_err)?,
                ),
                Process::Smoothed => OccupancySource::Smoothed(
                    SmoothedBessel::new(a.eps, a.c, a.model.x0.sqrt()).map_err(config_err)?,
                    positive_count("substeps", a.substeps)?,
                ),
            };
            Job::Instability {
                source,
                grid: grid_with_times(a.t_first, a.points, &times).map_err(config_err)?,
                level: a.level,
                times,
                paths: positive_count("paths", a.paths)?,
                format: a.format,
            }
        }
        Command::Limit(a) => {
            let sde = SmoothedBessel::new(a.eps, a.c, a.v0).map_err(config_err)?;
            if sde.c <= 0.0 {
                return Err(config_err("--c must be positive"));
            }
            Job::Limit {
                sde,
                grid: TimeGrid::geometric(a.t_first, a.t_end, a.points).map_err(config_err)?,
                substeps: positive_count("substeps", a.substeps)?,
                paths: positive_count("paths", a.paths)?,
                format: a.format,
            }
        }
    })
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Parse(e.to_string()))?;
    s.push('\n');
    Ok(s.into_bytes())
}

#[derive(Serialize)]
struct BoundsEntry<'a> {
    b_n: f64,
    distance: &'a str,
    report: BoundReport,
}

#[derive(Serialize)]
struct BoundsDocument<'a> {
    seed: u64,
    t_end: f64,
    step: f64,
    paths: usize,
    limit_model: String,
    reports: Vec<BoundsEntry<'a>>,
}

fn distance_name(d: Distance) -> &'static str {
    match d {
        Distance::L1 => "l1",
        Distance::L2Distributional => "l2-distributional",
        Distance::L2Pathwise => "l2-pathwise",
    }
}

impl Job {
    fn run(self, seed: u64) -> Result<Output> {
        match self {
            Job::Simulate {
                params,
                grid,
                paths,
                scheme,
                substeps,
                format,
            } => {
                let e = match scheme {
                    Scheme::Exact => simulate_exact(&params, &grid, paths, seed)?,
                    Scheme::Euler => simulate_coupled(&[params], &grid, substeps, paths, seed)?.remove(0),
                };
                let bytes = match format {
                    PathFormat::Csv => csv_bytes(|w| e.write_csv(w))?,
                    PathFormat::Binary => csv_bytes(|w| e.write_binary(w))?,
                };
                Ok(Output::Machine {
                    bytes,
                    summary: Some(format!("seed: {seed}")),
                })
            }
            Job::Density { params, t, kind, xs } => {
                let f = |x: f64| -> Result<f64> {
                    match kind {
                        DensityKind::Stationary => cir_stationary_density(&params, x),
                        DensityKind::Transition if params.is_bessel() => {
                            bessel_sq_density(&params.bessel_limit(), t, x)
                        }
                        DensityKind::Transition => cir_density(&params, t, x),
                    }
                };
                let rows = xs.iter().map(|&x| Ok(vec![x, f(x)?])).collect::<Result<Vec<_>>>()?;
                let mass = integrate_to_infinity(|x| f(x).unwrap_or(f64::NAN), 0.0, 1e-12, 1e-10)?;
                Ok(Output::Table {
                    header: vec!["x".into(), "density".into()],
                    rows,
                    note: Some(format!("integral over (0, inf): {}", sig6(mass))),
                })
            }
            Job::Moments {
                params,
                times,
                mc_paths,
            } => {
                let positive: Vec<f64> = times.iter().copied().filter(|&t| t > 0.0).collect();
                let ensemble = if mc_paths >= 2 && !positive.is_empty() {
                    let mut g = vec![0.0];
                    g.extend_from_slice(&positive);
                    Some(simulate_exact(&params, &TimeGrid::from_times(g)?, mc_paths, seed)?)
                } else {
                    None
                };
                let mut header = vec!["t".to_string(), "k".into(), "closed_form".into()];
                if ensemble.is_some() {
                    header.push("mc_mean".into());
                    header.push("mc_stderr".into());
                }
                let mut rows = Vec::new();
                for &t in &times {
                    for k in 1..=3u32 {
                        let mut row = vec![t, f64::from(k), params.moment(t, k)?];
                        if let Some(e) = &ensemble {
                            let est = match e.grid.index_of(t) {
                                Some(j) if t > 0.0 => {
                                    EstimateWithError::from_samples(e.column(j).map(|v| v.powi(k as i32)))?
                                }
                                _ => EstimateWithError {
                                    mean: params.x0.powi(k as i32),
                                    stderr: 0.0,
                                    n: mc_paths,
                                },
                            };
                            row.push(est.mean);
                            row.push(est.stderr);
                        }
                        rows.push(row);
                    }
                }
                Ok(Output::Table {
                    header,
                    rows,
                    note: None,
                })
            }
            Job::Bounds {
                p0,
                pns,
                grid,
                substeps,
                paths,
                z,
                halving,
                distances,
                format,
            } => {
                let mut models = vec![p0];
                models.extend_from_slice(&pns);
                let es = simulate_coupled(&models, &grid, substeps, paths, seed)?;
                let fine = if halving {
                    Some(simulate_coupled(&models, &grid, 2 * substeps, paths, seed)?)
                } else {
                    None
                };
                let mut reports = Vec::new();
                let mut summary = String::from("b_n        distance           sup_empirical  stderr     bound(T)   pass\n");
                for (i, pn) in pns.iter().enumerate() {
                    for &d in &distances {
                        let halved = fine.as_ref().map(|f| (&f[i + 1], &f[0]));
                        let r = certify_coupled(&es[i + 1], &es[0], pn, &p0, d, halved, z)?;
                        let best = r
                            .empirical
                            .iter()
                            .max_by(|x, y| x.mean.total_cmp(&y.mean))
                            .expect("nonempty grid");
                        summary.push_str(&format!(
                            "{:<10} {:<18} {:<14} {:<10} {:<10} {}\n",
                            sig6(pn.b),
                            distance_name(d),
                            sig6(best.mean),
                            sig6(best.stderr),
                            sig6(*r.bound.last().expect("nonempty grid")),
                            r.pass
                        ));
                        reports.push(BoundsEntry {
                            b_n: pn.b,
                            distance: distance_name(d),
                            report: r,
                        });
                    }
                }
                let bytes = match format {
                    ReportFormat::Json => json_bytes(&BoundsDocument {
                        seed,
                        t_end: grid.t_end(),
                        step: grid.uniform_step().expect("uniform") / substeps as f64,
                        paths,
                        limit_model: p0.tag(),
                        reports,
                    })?,
                    ReportFormat::Csv => {
                        let mut buf = b"b_n,distance,time,empirical_mean,stderr,bound,pass\n".to_vec();
                        for entry in &reports {
                            let mut body = Vec::new();
                            entry.report.write_csv(&mut body)?;
                            for line in String::from_utf8_lossy(&body).lines().skip(1) {
                                buf.extend_from_slice(
                                    format!("{:.16e},{},{line}\n", entry.b_n, entry.distance).as_bytes(),
                                );
                            }
                        }
                        buf
                    }
                };
                Ok(Output::Machine {
                    bytes,
                    summary: Some(summary),
                })
            }
            Job::Estimate {
                input,
                simulated,
                sigma_known,
            } => {
                let traj = match (input, simulated) {
                    (Some(path), _) => DiscreteTrajectory::read_csv(BufReader::new(File::open(path)?))?,
                    (None, Some((p, grid))) => {
                        let v = simulate_exact_path(&p, &grid, RngStream::new(seed, 0))?;
                        DiscreteTrajectory::new(grid, v)?
                    }
                    (None, None) => unreachable!("prepare fills one source"),
                };
                Ok(Output::Machine {
                    bytes: json_bytes(&estimate_all(&traj, sigma_known)?)?,
                    summary: None,
                })
            }
            Job::Instability {
                source,
                grid,
                level,
                times,
                paths,
                format,
            } => {
                let (e, limit): (PathEnsemble, Option<f64>) = match source {
                    OccupancySource::Exact(p) => {
                        let limit = if p.is_bessel() {
                            Some(0.0)
                        } else {
                            Some(cir_occupancy_limit(&p, level)?)
                        };
                        (simulate_exact(&p, &grid, paths, seed)?, limit)
                    }
                    OccupancySource::Smoothed(sde, substeps) => {
                        (simulate_smoothed_bessel(&sde, &grid, substeps, paths, seed)?, Some(0.0))
                    }
                };
                let curve: OccupancyCurve = occupancy_average(&e, level, &times)?;
                let bytes = match format {
                    ReportFormat::Csv => csv_bytes(|w| curve.write_csv(w))?,
                    ReportFormat::Json => {
                        let mut s = curve.to_json()?;
                        s.push('\n');
                        s.into_bytes()
                    }
                };
                let mut summary = String::from("time       occupancy  stderr\n");
                for (t, v) in curve.times.iter().zip(&curve.value) {
                    summary.push_str(&format!("{:<10} {:<10} {}\n", sig6(*t), sig6(v.mean), sig6(v.stderr)));
                }
                if let Some(l) = limit {
                    summary.push_str(&format!("long-run limit: {}\n", sig6(l)));
                }
                Ok(Output::Machine {
                    bytes,
                    summary: Some(summary),
                })
            }
            Job::Limit {
                sde,
                grid,
                substeps,
                paths,
                format,
            } => {
                let e = simulate_smoothed_bessel(&sde, &grid, substeps, paths, seed)?;
                let t = grid.t_end();
                let last = grid.len() - 1;
                let samples: Vec<f64> = e.column(last).map(|v| v / t.sqrt()).collect();
                let c = sde.c;
                let r = KsReport::new(
                    &samples,
                    |x| weak_limit_cdf_for_drift(c, 1.0, x).unwrap_or(f64::NAN),
                    format!("{} T={t}", e.params_tag),
                    seed,
                )?;
                let bytes = match format {
                    ReportFormat::Csv => csv_bytes(|w| r.write_csv(w))?,
                    ReportFormat::Json => {
                        let mut s = r.to_json()?;
                        s.push('\n');
                        s.into_bytes()
                    }
                };
                Ok(Output::Machine {
                    bytes,
                    summary: Some(format!(
                        "KS statistic {} (n = {}, 1% critical value {})\n",
                        sig6(r.statistic),
                        r.n,
                        sig6(r.critical_1pct)
                    )),
                })
            }
        }
    }
}

fn emit(cli: &Cli, output: Output) -> Result<()> {
    match output {
        Output::Machine { bytes, summary } => match &cli.out {
            Some(path) => {
                let mut f = BufWriter::new(File::create(path)?);
                f.write_all(&bytes)?;
                f.flush()?;
                if let Some(s) = summary {
                    print!("{}", with_newline(s));
                }
                Ok(())
            }
            None => {
                io::stdout().write_all(&bytes)?;
                if let Some(s) = summary {
                    eprint!("{}", with_newline(s));
                }
                Ok(())
            }
        },
        Output::Table { header, rows, note } => match &cli.out {
            Some(path) => {
                let mut f = BufWriter::new(File::create(path)?);
                writeln!(f, "{}", header.join(","))?;
                for r in &rows {
                    crate::simulate::write_row(&mut f, r)?;
                }
                f.flush()?;
                if let Some(n) = note {
                    println!("{n}");
                }
                Ok(())
            }
            None => {
                let mut out = io::stdout().lock();
                let widths = 14;
                let line: Vec<String> = header.iter().map(|h| format!("{h:>widths$}")).collect();
                writeln!(out, "{}", line.join(" "))?;
                for r in &rows {
                    let line: Vec<String> = r.iter().map(|v| format!("{:>widths$}", sig6(*v))).collect();
                    writeln!(out, "{}", line.join(" "))?;
                }
                if let Some(n) = note {
                    writeln!(out, "{n}")?;
                }
                Ok(())
            }
        },
    }
}

fn with_newline(mut s: String) -> String {
    if !s.ends_with('\n') {
        s.push('\n');
    }
    s
}

/// Six significant digits, fixed notation for moderate magnitudes.
pub fn sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let mag = v.abs().log10().floor() as i32;
    if (-4..6).contains(&mag) {
        let decimals = (5 - mag).max(0) as usize;
        format!("{v:.decimals$}")
    } else {
        format!("{v:.5e}")
    }
}

//! `mvo` command line: simulate scenarios, estimate trajectories, dump
//! energy landscapes and evaluate trajectories.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 every frame failed.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use mvo_core::estimator::{energy_landscape, GridAxis, LandscapeGrid};
use mvo_core::eval::{evaluate, TrajectoryRecord, DEFAULT_SEGMENT_LENGTHS};
use mvo_core::io;
use mvo_core::sequence::{run_sequence, FrameDiagnostics, FramePairRecord, ScaleSource, SequenceOptions};
use mvo_core::sim::{chain_poses, generate_matches, generate_scene, simulate_sequence};
use mvo_core::{EstimatorOptions, JacobianMode, LossKind, MetricKind, MotionParams, RobustLoss};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_ALL_FAILED: i32 = 3;

/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "MVO_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "mvo",
    version,
    about = "Frame-to-frame motion estimation for vehicle camera rigs"
)]
struct Cli {
    /// TOML file with defaults for any subcommand; flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Scenario file to matches, rig, ground-truth trajectory and scales.
    Simulate(SimulateArgs),
    /// Rig and matches to a trajectory plus per-frame diagnostics.
    Estimate(EstimateArgs),
    /// Energy over a yaw × arc-length grid as CSV.
    Landscape(LandscapeArgs),
    /// KITTI-style segment errors of a trajectory against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum MetricArg {
    AnglePlane,
    GeoLine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum LossArg {
    None,
    Cauchy,
    Huber,
    Tukey,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum JacobianArg {
    Numeric,
    Analytic,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the scene seed (noise uses seed + 1).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args, Default)]
struct CostArgs {
    #[arg(long, value_enum)]
    metric: Option<MetricArg>,
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    /// Loss width in residual units (sine of angle, or pixels for GeoLine).
    #[arg(long)]
    loss_width: Option<f64>,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[arg(long)]
    rig: PathBuf,
    #[arg(long)]
    matches: PathBuf,
    /// Per-frame arc lengths; used as odometer with --free-in-curves.
    #[arg(long)]
    scale: Option<PathBuf>,
    /// Estimate the arc length in curves.
    #[arg(long)]
    free_in_curves: bool,
    #[arg(long)]
    initial_arc_length: Option<f64>,
    #[arg(long)]
    curve_threshold: Option<f64>,
    #[command(flatten)]
    cost: CostArgs,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long, value_enum)]
    jacobian: Option<JacobianArg>,
    #[arg(long)]
    free_pitch_roll: bool,
    /// Trajectory output (KITTI lines).
    #[arg(long)]
    out: PathBuf,
    /// JSON-lines diagnostics output.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LandscapeArgs {
    /// Simulate the first frame pair of a scenario...
    #[arg(long, conflicts_with_all = ["rig", "matches"])]
    scenario: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// ...or use a recorded pair.
    #[arg(long, requires = "matches")]
    rig: Option<PathBuf>,
    #[arg(long, requires = "rig")]
    matches: Option<PathBuf>,
    /// Index of the frame pair in the matches file.
    #[arg(long, default_value_t = 0)]
    pair: usize,
    /// min max steps
    #[arg(long, num_args = 3, allow_negative_numbers = true, value_names = ["MIN", "MAX", "STEPS"])]
    yaw: Option<Vec<String>>,
    /// min max steps
    #[arg(long, num_args = 3, allow_negative_numbers = true, value_names = ["MIN", "MAX", "STEPS"])]
    arc_length: Option<Vec<String>>,
    #[command(flatten)]
    cost: CostArgs,
    /// CSV output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    est: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Comma-separated segment lengths in meters.
    #[arg(long, value_delimiter = ',')]
    lengths: Option<Vec<f64>>,
    /// Seconds per frame, one per line.
    #[arg(long)]
    timestamps: Option<PathBuf>,
    /// Diagnostics of the estimate run, for runtime statistics.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Config {
    #[serde(default)]
    simulate: SimulateConfig,
    #[serde(default)]
    estimate: EstimateConfig,
    #[serde(default)]
    landscape: LandscapeConfig,
    #[serde(default)]
    eval: EvalConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostConfig {
    metric: Option<MetricArg>,
    loss: Option<LossArg>,
    loss_width: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EstimateConfig {
    #[serde(flatten)]
    cost: CostConfig,
    free_in_curves: Option<bool>,
    initial_arc_length: Option<f64>,
    curve_threshold: Option<f64>,
    max_iterations: Option<usize>,
    jacobian: Option<JacobianArg>,
    free_pitch_roll: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct LandscapeConfig {
    #[serde(flatten)]
    cost: CostConfig,
    seed: Option<u64>,
    yaw: Option<(f64, f64, usize)>,
    arc_length: Option<(f64, f64, usize)>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalConfig {
    lengths: Option<Vec<f64>>,
}

/// Failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl From<mvo_core::Error> for Failure {
    fn from(e: mvo_core::Error) -> Self {
        Failure {
            code: EXIT_DATA,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        mvo_core::Error::Io(e).into()
    }
}

fn data_error(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_DATA,
        message: message.into(),
    }
}

fn usage_error(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn load_config(path: Option<&Path>) -> Result<Config, Failure> {
    let Some(path) = path else {
        return Ok(Config::default());
    };
    // the config stands in for flags, so its errors are usage errors
    let text = std::fs::read_to_string(path).map_err(|e| usage_error(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| usage_error(format!("{}: {e}", path.display())))
}

fn cost(args: &CostArgs, config: &CostConfig) -> Result<(MetricKind, RobustLoss), Failure> {
    let metric = match args.metric.or(config.metric).unwrap_or(MetricArg::AnglePlane) {
        MetricArg::AnglePlane => MetricKind::AnglePlane,
        MetricArg::GeoLine => MetricKind::GeoLine,
    };
    let kind = match args.loss.or(config.loss).unwrap_or(LossArg::Cauchy) {
        LossArg::None => LossKind::None,
        LossArg::Cauchy => LossKind::Cauchy,
        LossArg::Huber => LossKind::Huber,
        LossArg::Tukey => LossKind::Tukey,
    };
    let width = args
        .loss_width
        .or(config.loss_width)
        .unwrap_or(RobustLoss::default().width());
    let loss = if kind == LossKind::None {
        RobustLoss::none()
    } else {
        RobustLoss::new(kind, width)?
    };
    Ok((metric, loss))
}

fn axis(
    flag: Option<&Vec<String>>,
    config: Option<(f64, f64, usize)>,
    default: (f64, f64, usize),
) -> Result<GridAxis, Failure> {
    let (min, max, steps) = match flag {
        Some(v) => {
            let bad = || usage_error(format!("invalid grid axis `{}`", v.join(" ")));
            (
                v[0].parse().map_err(|_| bad())?,
                v[1].parse().map_err(|_| bad())?,
                v[2].parse().map_err(|_| bad())?,
            )
        }
        None => config.unwrap_or(default),
    };
    Ok(GridAxis::new(min, max, steps)?)
}

fn simulate(args: &SimulateArgs, config: &Config, out: &mut dyn Write) -> Result<(), Failure> {
    let mut scenario = io::load_scenario(&args.scenario)?;
    if let Some(seed) = args.seed.or(config.simulate.seed) {
        scenario = scenario.with_seed(seed);
    }
    std::fs::create_dir_all(&args.out)?;
    let sims = simulate_sequence(&scenario.rig, &scenario.scene, &scenario.noise, &scenario.motions)?;
    let records: Vec<FramePairRecord> = sims
        .iter()
        .enumerate()
        .map(|(k, s)| FramePairRecord::from_simulated(k as u64, k as u64 + 1, s))
        .collect();
    io::write_matches(&records, &args.out.join("matches.csv"))?;
    io::write_rig(&scenario.rig, &args.out.join("rig.txt"))?;
    let gt = TrajectoryRecord::new(chain_poses(&scenario.motions));
    io::write_trajectory(&gt, &args.out.join("gt.txt"))?;
    let scales: Vec<f64> = scenario.motions.iter().map(|m| m.arc_length).collect();
    io::write_reals(&scales, &args.out.join("scale.txt"))?;
    if let Some(t) = scenario.timestamps() {
        io::write_reals(&t, &args.out.join("timestamps.txt"))?;
    }
    let total: usize = records.iter().map(FramePairRecord::num_matches).sum();
    writeln!(
        out,
        "simulated {} frame pairs, {total} matches into {}",
        records.len(),
        args.out.display()
    )?;
    Ok(())
}

fn estimate(args: &EstimateArgs, config: &Config, out: &mut dyn Write) -> Result<(), Failure> {
    let c = &config.estimate;
    let rig = io::load_rig(&args.rig)?;
    let records = io::load_matches(&args.matches)?;
    let (metric, loss) = cost(&args.cost, &c.cost)?;
    let scale_values = args.scale.as_deref().map(io::read_reals).transpose()?;
    let free_in_curves = args.free_in_curves || c.free_in_curves.unwrap_or(false);
    let scale = match (free_in_curves, scale_values) {
        (false, Some(v)) => ScaleSource::Fixed(v),
        (false, None) => return Err(usage_error("estimate needs --scale or --free-in-curves")),
        (true, odometer) => ScaleSource::FreeInCurves {
            initial_arc_length: args
                .initial_arc_length
                .or(c.initial_arc_length)
                .or(odometer.as_ref().and_then(|v| v.first().copied()))
                .unwrap_or(1.0),
            odometer,
            curve_threshold: args.curve_threshold.or(c.curve_threshold).unwrap_or(0.01),
        },
    };
    let mut estimator = EstimatorOptions {
        metric,
        loss,
        ..Default::default()
    };
    if let Some(n) = args.max_iterations.or(c.max_iterations) {
        estimator.max_iterations = n;
    }
    estimator.jacobian = match args.jacobian.or(c.jacobian).unwrap_or(JacobianArg::Numeric) {
        JacobianArg::Numeric => JacobianMode::Numeric,
        JacobianArg::Analytic => JacobianMode::Analytic,
    };
    let opts = SequenceOptions {
        estimator,
        free_pitch_roll: args.free_pitch_roll || c.free_pitch_roll.unwrap_or(false),
        ..Default::default()
    };
    let result = run_sequence(&rig, &records, &scale, &opts)?;
    io::write_trajectory(&result.trajectory, &args.out)?;
    if let Some(path) = &args.diagnostics {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        io::write_json_lines(result.frames.iter().map(FrameDiagnostics::from), file)?;
    }
    let failed = result.num_failed();
    writeln!(
        out,
        "estimated {} frame pairs ({failed} failed), trajectory written to {}",
        result.frames.len(),
        args.out.display()
    )?;
    if failed == result.frames.len() {
        return Err(Failure {
            code: EXIT_ALL_FAILED,
            message: format!(
                "every frame pair failed; first error: {}",
                result.frames[0].failure.as_deref().unwrap_or("unknown")
            ),
        });
    }
    Ok(())
}

fn landscape(args: &LandscapeArgs, config: &Config, out: &mut dyn Write) -> Result<(), Failure> {
    let c = &config.landscape;
    let (metric, loss) = cost(&args.cost, &c.cost)?;
    let (rig, sets, fixed) = match (&args.scenario, &args.rig, &args.matches) {
        (Some(path), _, _) => {
            let mut scenario = io::load_scenario(path)?;
            if let Some(seed) = args.seed.or(c.seed) {
                scenario = scenario.with_seed(seed);
            }
            let truth = scenario.motions[0];
            let sim = generate_matches(
                &generate_scene(&scenario.scene)?,
                &scenario.rig,
                &truth,
                &scenario.noise,
            )?;
            (scenario.rig, sim.match_sets, truth)
        }
        (None, Some(rig), Some(matches)) => {
            let rig = io::load_rig(rig)?;
            let records = io::load_matches(matches)?;
            let record = records
                .get(args.pair)
                .ok_or_else(|| data_error(format!("no frame pair {} in {}", args.pair, matches.display())))?;
            let (sets, _) = record.to_match_sets(&rig)?;
            (rig, sets, MotionParams::new(0.0, 1.0)?)
        }
        _ => return Err(usage_error("landscape needs --scenario or --rig with --matches")),
    };
    let grid = LandscapeGrid {
        yaw: axis(args.yaw.as_ref(), c.yaw, (-0.3, 0.3, 61))?,
        arc_length: axis(args.arc_length.as_ref(), c.arc_length, (0.5, 2.0, 31))?,
    };
    let land = energy_landscape(&rig, &sets, &grid, &fixed, &loss, metric)?;
    let pct = land.normalized_percent();
    let mut csv = String::from("yaw,arc_length,energy,percent\n");
    for (i, row) in land.energy.iter().enumerate() {
        for (j, e) in row.iter().enumerate() {
            let fmt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v}"));
            csv.push_str(&format!(
                "{},{},{},{}\n",
                land.yaw[i],
                land.arc_length[j],
                fmt(*e),
                fmt(pct[i][j])
            ));
        }
    }
    match &args.out {
        Some(path) => std::fs::write(path, csv)?,
        None => out.write_all(csv.as_bytes())?,
    }
    Ok(())
}

fn read_runtimes(path: &Path) -> Result<Vec<f64>, Failure> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str::<FrameDiagnostics>(l)
                .map(|d| d.runtime_ms)
                .map_err(|e| data_error(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn eval(args: &EvalArgs, config: &Config, out: &mut dyn Write) -> Result<(), Failure> {
    let est = io::read_trajectory(&args.est)?;
    let mut gt = io::read_trajectory(&args.gt)?;
    if let Some(path) = &args.timestamps {
        gt.timestamps = Some(io::read_reals(path)?);
    }
    let lengths = args
        .lengths
        .clone()
        .or_else(|| config.eval.lengths.clone())
        .unwrap_or_else(|| DEFAULT_SEGMENT_LENGTHS.to_vec());
    let mut report = evaluate(&est, &gt, &lengths)?;
    if let Some(path) = &args.diagnostics {
        report = report.with_runtimes(&read_runtimes(path)?);
    }
    if let Some(path) = &args.csv {
        std::fs::write(path, report.to_csv())?;
    }
    out.write_all(report.to_table().as_bytes())?;
    Ok(())
}

/// Sizes the global worker pool from the environment once per process.
fn init_threads() {
    static INIT: std::sync::Once = std::sync::Once::new();
    INIT.call_once(|| {
        if let Some(n) = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
        {
            // an already initialized pool keeps its size
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    });
}

/// Runs the command line and returns the process exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = sink.write_all(rendered.as_bytes());
            return code;
        }
    };
    init_threads();
    let result = load_config(cli.config.as_deref()).and_then(|config| match &cli.command {
        Command::Simulate(a) => simulate(a, &config, out),
        Command::Estimate(a) => estimate(a, &config, out),
        Command::Landscape(a) => landscape(a, &config, out),
        Command::Eval(a) => eval(a, &config, out),
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            if f.code == EXIT_USAGE {
                let _ = writeln!(err, "\nFor more information, try '--help'.");
            }
            f.code
        }
    }
}

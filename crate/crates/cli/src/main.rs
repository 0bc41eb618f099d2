use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use zc_core::calibration::{fit_scales, CalibrationSeries, FitMethod, FitSettings, Mechanism};
use zc_core::cm::{build_stack_curves, run_bbtree, write_node_csv, BbSettings, IbCqpSettings, IeQpSettings, IeqLpSettings};
use zc_core::fixtures::fixture_instance;
use zc_core::harness::{
    env_threads, generate_instance, profit_sweep, random_suite, run_algorithm, run_benchmark, write_benchmark_csv,
    write_json, write_stack_csv, write_sweep_csv, Algorithm, BenchSettings, EstimateChoice, GenMode, GenSpec,
    OpponentProfile, SweepSpec,
};
use zc_core::market::{check_outcome, ClearingOutcome, MarketInstance};
use zc_core::settings::Tolerances;
use zc_core::ClearError;

#[derive(Parser)]
#[command(name = "zc", version, about = "Zonal day-ahead auction clearing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random or the bundled three-zone instance as JSON.
    Gen(GenArgs),
    /// Clear one instance.
    Clear(ClearArgs),
    /// Compare SWM with the cost-minimisation algorithms.
    Bench(BenchArgs),
    /// Profit of one player over a grid of bid slopes.
    Sweep(SweepArgs),
    /// Per-zone stack curves as `v,y` CSV.
    Stacks(StacksArgs),
    /// Fit per-zone cost scales to observed prices.
    Calibrate(CalibrateArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Random)]
    mode: ModeArg,
    #[arg(long, default_value_t = 3)]
    zones: usize,
    #[arg(long, default_value_t = 2)]
    players_min: usize,
    #[arg(long, default_value_t = 4)]
    players_max: usize,
    #[arg(long, default_value_t = 0.7)]
    density: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    #[value(name = "paper")]
    Fixture,
    Random,
}

#[derive(Args)]
struct InstanceArg {
    /// Instance JSON; the bundled three-zone instance when omitted.
    #[arg(long, short)]
    instance: Option<PathBuf>,
}

impl InstanceArg {
    fn load(&self) -> Result<MarketInstance> {
        match &self.instance {
            Some(p) => MarketInstance::load(p).with_context(|| format!("reading {}", p.display())),
            None => Ok(fixture_instance()),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MechanismArg {
    Swm,
    Cm,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Ieqlp,
    Ieqp,
    Ibcqp,
    Bbtree,
}

impl From<AlgoArg> for Algorithm {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Ieqlp => Algorithm::IeqLpMa,
            AlgoArg::Ieqp => Algorithm::IeQpWr,
            AlgoArg::Ibcqp => Algorithm::IbCqp,
            AlgoArg::Bbtree => Algorithm::BbTree,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimateArg {
    All,
    Dispatched,
    Augmented,
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, value_enum, default_value_t = EstimateArg::All)]
    estimate: EstimateArg,
    #[arg(long)]
    alpha_y: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    delta_b: Option<f64>,
    #[arg(long)]
    gap: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_nodes: Option<usize>,
    #[arg(long)]
    cqp_tol: Option<f64>,
}

impl SolverArgs {
    fn settings(&self) -> BenchSettings {
        let mut ieqlp = IeqLpSettings::default();
        let mut ieqp = IeQpSettings::default();
        let mut bbtree = BbSettings::default();
        let mut ibcqp = IbCqpSettings::default();
        if let Some(v) = self.alpha_y {
            ieqlp.alpha_y = v;
        }
        if let Some(v) = self.tol {
            ieqlp.delta = v;
        }
        if let Some(v) = self.max_iters {
            ieqlp.max_iters = v;
            ieqp.max_iters = v;
        }
        if let Some(v) = self.delta {
            ieqp.delta = v;
        }
        if let Some(v) = self.delta_b {
            ieqp.delta_b = v;
        }
        if let Some(v) = self.gap {
            bbtree.gap = v;
        }
        if let Some(v) = self.seed {
            bbtree.seed = v;
        }
        if let Some(v) = self.max_nodes {
            bbtree.max_nodes = v;
        }
        if let Some(v) = self.cqp_tol {
            ibcqp.cqp_tol = v;
        }
        BenchSettings {
            ieqlp,
            ieqp,
            ibcqp,
            bbtree,
            estimate: match self.estimate {
                EstimateArg::All => EstimateChoice::All,
                EstimateArg::Dispatched => EstimateChoice::Dispatched,
                EstimateArg::Augmented => EstimateChoice::Augmented,
            },
            ..BenchSettings::default()
        }
    }
}

#[derive(Args)]
struct ClearArgs {
    #[command(flatten)]
    instance: InstanceArg,
    #[arg(long, value_enum, default_value_t = MechanismArg::Swm)]
    mechanism: MechanismArg,
    #[arg(long, value_enum, default_value_t = AlgoArg::Bbtree)]
    algo: AlgoArg,
    #[command(flatten)]
    solver: SolverArgs,
    /// Node trace of the tree search (`id,parent,f_ub,f_lb,status`).
    #[arg(long)]
    node_trace: Option<PathBuf>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    instance: InstanceArg,
    /// Run a seeded random suite of this size instead of one instance.
    #[arg(long)]
    suite: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    suite_seed: u64,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [AlgoArg::Ieqlp, AlgoArg::Ieqp, AlgoArg::Ibcqp, AlgoArg::Bbtree])]
    algos: Vec<AlgoArg>,
    #[command(flatten)]
    solver: SolverArgs,
    /// Benchmark table CSV; stdout when omitted.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Given,
    I,
    Ii,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    instance: InstanceArg,
    #[arg(long)]
    player: usize,
    #[arg(long, value_enum, default_value_t = ProfileArg::I)]
    profile: ProfileArg,
    #[arg(long, value_enum, default_value_t = AlgoArg::Ibcqp)]
    algo: AlgoArg,
    #[arg(long, default_value_t = 20)]
    points: usize,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StacksArgs {
    #[command(flatten)]
    instance: InstanceArg,
    /// Directory receiving `zone_<k>.csv`; all zones go to stdout when omitted.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Gd,
    Newton,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Directory of instance JSON files, one per step, or a JSON array.
    #[arg(long)]
    series: PathBuf,
    /// CSV with columns `t,zone,price`.
    #[arg(long)]
    targets: PathBuf,
    #[arg(long, value_enum, default_value_t = MechanismArg::Swm)]
    mechanism: MechanismArg,
    #[arg(long, value_enum, default_value_t = MethodArg::Newton)]
    method: MethodArg,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    /// Fitted scales and error metrics as JSON; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Objective value per accepted step.
    #[arg(long)]
    trace: Option<PathBuf>,
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn validated(inst: &MarketInstance, out: ClearingOutcome) -> Result<ClearingOutcome> {
    let tol = Tolerances {
        feasibility: 1e-6,
        ..Tolerances::default()
    };
    let bad = check_outcome(inst, &out, &tol);
    if !bad.is_empty() {
        return Err(ClearError::Stalled(format!("outcome failed validation: {}", bad.join("; "))).into());
    }
    Ok(out)
}

fn gen(args: GenArgs) -> Result<()> {
    let spec = GenSpec {
        mode: match args.mode {
            ModeArg::Fixture => GenMode::Fixture,
            ModeArg::Random => GenMode::Random,
        },
        zones: args.zones,
        players_per_zone: (args.players_min, args.players_max),
        network_density: args.density,
        seed: args.seed,
        ..GenSpec::default()
    };
    let inst = generate_instance(&spec)?;
    let mut w = sink(args.out.as_deref())?;
    writeln!(w, "{}", inst.to_json()?)?;
    Ok(())
}

fn clear(args: ClearArgs) -> Result<()> {
    let inst = args.instance.load()?;
    let settings = args.solver.settings();
    let out = if args.mechanism == MechanismArg::Swm {
        run_algorithm(&inst, Algorithm::Swm, &settings)?
    } else if let (AlgoArg::Bbtree, Some(path)) = (args.algo, &args.node_trace) {
        let res = run_bbtree(&inst, &settings.estimate.build(&inst)?, &settings.bbtree)?;
        write_node_csv(&res.nodes, BufWriter::new(File::create(path)?))?;
        res.outcome
    } else {
        run_algorithm(&inst, args.algo.into(), &settings)?
    };
    let out = validated(&inst, out)?;
    write_json(&out, sink(args.out.as_deref())?)?;
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let settings = args.solver.settings();
    let algos: Vec<Algorithm> = args.algos.iter().map(|&a| a.into()).collect();
    match args.suite {
        None => {
            let inst = args.instance.load()?;
            let report = run_benchmark(&inst, &algos, &settings);
            write_benchmark_csv(&report, sink(args.csv.as_deref())?)?;
            if let Some(p) = &args.json {
                write_json(&report, File::create(p)?)?;
            }
            if report.cm_dominates(1e-6) == Some(false) {
                bail!(ClearError::Stalled("tree search cleared dearer than SWM".into()));
            }
        }
        Some(n) => {
            let suite = random_suite(n, args.suite_seed)?;
            let mut w = sink(args.csv.as_deref())?;
            writeln!(w, "instance,algo,objective,time_ms,indicator")?;
            let mut reports = Vec::with_capacity(n);
            let mut dearer = 0;
            for (k, inst) in suite.iter().enumerate() {
                let report = run_benchmark(inst, &algos, &settings);
                for r in &report.rows {
                    writeln!(w, "{k},{},{},{},{}", r.algo, r.objective, r.time_ms, r.indicator)?;
                }
                if report.cm_dominates(1e-6) == Some(false) {
                    dearer += 1;
                }
                reports.push(report);
            }
            w.flush()?;
            if let Some(p) = &args.json {
                write_json(&reports, File::create(p)?)?;
            }
            if dearer > 0 {
                bail!(ClearError::Stalled(format!("{dearer} instances cleared dearer than SWM")));
            }
        }
    }
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let inst = args.instance.load()?;
    let profile = match args.profile {
        ProfileArg::Given => OpponentProfile::AsGiven,
        ProfileArg::I => OpponentProfile::PROFILE_I,
        ProfileArg::Ii => OpponentProfile::PROFILE_II,
    };
    if args.player >= inst.num_players() || args.player >= zc_core::fixtures::COST_SLOPE.len() {
        return Err(ClearError::Invalid(format!("player {} out of range", args.player)).into());
    }
    let spec = SweepSpec {
        n_pts: args.points,
        ..SweepSpec::fixture(args.player, profile)
    };
    let curve = profit_sweep(&inst, &spec, args.algo.into(), &args.solver.settings())?;
    write_sweep_csv(&curve, sink(args.out.as_deref())?)?;
    let failed = curve.rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        eprintln!("{failed} of {} points failed to clear", curve.rows.len());
    }
    Ok(())
}

fn stacks(args: StacksArgs) -> Result<()> {
    let inst = args.instance.load()?;
    let curves = build_stack_curves(&inst)?;
    match &args.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            for c in &curves {
                write_stack_csv(c, File::create(dir.join(format!("zone_{}.csv", c.zone)))?)?;
            }
        }
        None => {
            let mut w = sink(None)?;
            for c in &curves {
                writeln!(w, "# zone {}", inst.zones[c.zone])?;
                write_stack_csv(c, &mut w)?;
            }
        }
    }
    Ok(())
}

fn calibrate(args: CalibrateArgs) -> Result<()> {
    let instances = CalibrationSeries::load_instances(&args.series)?;
    let Some(first) = instances.first() else {
        return Err(ClearError::Invalid("empty series".into()).into());
    };
    let zones = first.zones.clone();
    let targets = CalibrationSeries::read_targets(File::open(&args.targets)?, &zones, instances.len())?;
    let series = CalibrationSeries::new(instances, targets)?;
    let settings = FitSettings {
        max_iters: args.max_iters,
        method: match args.method {
            MethodArg::Gd => FitMethod::GradientDescent,
            MethodArg::Newton => FitMethod::Newton,
        },
        mechanism: match args.mechanism {
            MechanismArg::Swm => Mechanism::Swm,
            MechanismArg::Cm => Mechanism::Cm,
        },
        ..FitSettings::default()
    };
    let report = fit_scales(&series, &settings)?;
    if let Some(p) = &args.trace {
        let mut w = BufWriter::new(File::create(p)?);
        writeln!(w, "iteration,f")?;
        for (k, f) in report.trace.iter().enumerate() {
            writeln!(w, "{k},{f}")?;
        }
        w.flush()?;
    }
    write_json(&report, sink(args.out.as_deref())?)?;
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<ClearError>() {
        Some(ClearError::Infeasible(_) | ClearError::Invalid(_) | ClearError::Dimension(_)) => 3,
        Some(ClearError::Io(_) | ClearError::Json(_) | ClearError::Csv(_)) => 3,
        Some(_) => 2,
        None if err.downcast_ref::<io::Error>().is_some() => 3,
        None => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(3) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = env_threads() {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let res = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Clear(a) => clear(a),
        Command::Bench(a) => bench(a),
        Command::Sweep(a) => sweep(a),
        Command::Stacks(a) => stacks(a),
        Command::Calibrate(a) => calibrate(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

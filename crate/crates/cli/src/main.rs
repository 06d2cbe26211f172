use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use momo::harness::{
    emit_runs, emit_summary, log_grid, repro_e4, run, stable_log_width, sweep, verify, write_summary, write_trace,
    ConfigFile, E4Options, HarnessError, LbModeName, RunConfig, ScheduleName,
};
use momo::optimizers::OptimizerKind;
use momo::problems::{ProblemKind, SamplingMode};

#[derive(Parser, Debug)]
#[command(name = "momo", version, about = "Momentum model-based optimizers: runs, sweeps and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train once and write the per-step trace as CSV.
    Run(RunArgs),
    /// Run a learning-rate grid over one or more seeds.
    Sweep(SweepArgs),
    /// Run the oracle suites and print one line per check.
    Verify(VerifyArgs),
    /// Reproduce the least-squares lower-bound experiment.
    ReproE4(ReproArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Momo,
    MomoAdam,
    MomoBias,
    MomoStar,
    MomoAdamStar,
    Sgdm,
    Adamw,
}

impl From<OptimizerArg> for OptimizerKind {
    fn from(v: OptimizerArg) -> Self {
        match v {
            OptimizerArg::Momo => OptimizerKind::Momo,
            OptimizerArg::MomoAdam => OptimizerKind::MomoAdam,
            OptimizerArg::MomoBias => OptimizerKind::MomoBias,
            OptimizerArg::MomoStar => OptimizerKind::MomoStar,
            OptimizerArg::MomoAdamStar => OptimizerKind::MomoAdamStar,
            OptimizerArg::Sgdm => OptimizerKind::Sgdm,
            OptimizerArg::Adamw => OptimizerKind::Adamw,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LbModeArg {
    Fixed,
    Online,
    OnlineMax,
}

impl From<LbModeArg> for LbModeName {
    fn from(v: LbModeArg) -> Self {
        match v {
            LbModeArg::Fixed => LbModeName::Fixed,
            LbModeArg::Online => LbModeName::Online,
            LbModeArg::OnlineMax => LbModeName::OnlineMax,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScheduleArg {
    Const,
    Exp,
    WarmupCosine,
    WarmupInvsqrt,
}

impl From<ScheduleArg> for ScheduleName {
    fn from(v: ScheduleArg) -> Self {
        match v {
            ScheduleArg::Const => ScheduleName::Const,
            ScheduleArg::Exp => ScheduleName::Exp,
            ScheduleArg::WarmupCosine => ScheduleName::WarmupCosine,
            ScheduleArg::WarmupInvsqrt => ScheduleName::WarmupInvsqrt,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProblemArg {
    LeastSquares,
    LeastSquaresNoisy,
    Logreg,
    Mlp,
}

impl From<ProblemArg> for ProblemKind {
    fn from(v: ProblemArg) -> Self {
        match v {
            ProblemArg::LeastSquares => ProblemKind::LeastSquares,
            ProblemArg::LeastSquaresNoisy => ProblemKind::LeastSquaresNoisy,
            ProblemArg::Logreg => ProblemKind::Logreg,
            ProblemArg::Mlp => ProblemKind::Mlp,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SamplingArg {
    WithReplacement,
    EpochShuffle,
}

impl From<SamplingArg> for SamplingMode {
    fn from(v: SamplingArg) -> Self {
        match v {
            SamplingArg::WithReplacement => SamplingMode::WithReplacement,
            SamplingArg::EpochShuffle => SamplingMode::EpochShuffle,
        }
    }
}

/// Flags shared by `run` and `sweep`; each overrides the config file.
#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// TOML config file with [run], [problem], [optimizer] and [schedule] tables.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
    /// Base learning rate (the cap on the step size for the MoMo family).
    #[arg(long)]
    alpha: Option<f64>,
    /// Momentum coefficient (beta1 for Adam variants).
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long, value_enum)]
    lb_mode: Option<LbModeArg>,
    /// Fixed lower bound, or the starting value and floor of an online one.
    #[arg(long, allow_hyphen_values = true)]
    lb_init: Option<f64>,
    #[arg(long, value_enum)]
    schedule: Option<ScheduleArg>,
    /// Warmup length for warmup-* schedules.
    #[arg(long)]
    warmup: Option<u64>,
    /// Decay factor for the exp schedule.
    #[arg(long)]
    gamma: Option<f64>,
    /// Sampler seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    trace_interval: Option<u64>,
    #[arg(long, value_enum)]
    sampling: Option<SamplingArg>,
    #[arg(long, value_enum)]
    problem: Option<ProblemArg>,
    #[arg(long)]
    problem_seed: Option<u64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
}

impl ConfigArgs {
    fn flags(&self) -> ConfigFile {
        let mut f = ConfigFile::default();
        f.optimizer.name = self.optimizer.map(Into::into);
        f.optimizer.alpha = self.alpha;
        f.optimizer.beta = self.beta;
        f.optimizer.beta2 = self.beta2;
        f.optimizer.weight_decay = self.weight_decay;
        f.optimizer.lb_mode = self.lb_mode.map(Into::into);
        f.optimizer.lb_init = self.lb_init;
        f.schedule.kind = self.schedule.map(Into::into);
        f.schedule.warmup = self.warmup;
        f.schedule.gamma = self.gamma;
        f.run.seed = self.seed;
        f.run.iterations = self.iterations;
        f.run.batch_size = self.batch_size;
        f.run.trace_interval = self.trace_interval;
        f.run.sampling = self.sampling.map(Into::into);
        f.problem.kind = self.problem.map(Into::into);
        f.problem.seed = self.problem_seed;
        f.problem.n = self.n;
        f.problem.d = self.d;
        f
    }

    fn resolve(&self, out: Option<PathBuf>) -> Result<RunConfig, HarnessError> {
        let file = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
                    path: path.clone(),
                    source,
                })?;
                ConfigFile::parse(&text)?
            }
            None => ConfigFile::default(),
        };
        let mut flags = self.flags();
        flags.run.out = out;
        file.overlay(&flags).resolve()
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Trace CSV path; the trace goes to stdout when omitted and no file sets one.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Explicit comma-separated learning rates.
    #[arg(long, value_delimiter = ',', conflicts_with = "grid")]
    alphas: Vec<f64>,
    /// Log grid `LO:HI:PER_DECADE` in powers of ten, e.g. `-4:2:2`.
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
    /// Comma-separated sampler seeds.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Summary CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-run CSV path.
    #[arg(long)]
    runs_out: Option<PathBuf>,
    /// Loss threshold used for the reported stable width.
    #[arg(long, default_value_t = 1e-3)]
    threshold: f64,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random instances per prox suite.
    #[arg(long, default_value_t = 1000)]
    instances: usize,
}

#[derive(Args, Debug)]
struct ReproArgs {
    /// Directory for per-arm summary and best-run trace CSVs.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 5000)]
    iterations: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, allow_hyphen_values = true, default_value_t = -10.0)]
    lb_init: f64,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

fn parse_grid(spec: &str) -> Result<Vec<f64>, HarnessError> {
    let bad = || HarnessError::Config(format!("grid must be LO:HI:PER_DECADE, got `{spec}`"));
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].parse().map_err(|_| bad())?;
    let per: u32 = parts[2].parse().map_err(|_| bad())?;
    if per == 0 || hi.is_nan() || lo.is_nan() || hi < lo {
        return Err(bad());
    }
    Ok(log_grid(lo, hi, per))
}

fn cmd_run(args: &RunArgs) -> Result<(), HarnessError> {
    let config = args.config.resolve(args.out.clone())?;
    let summary = run(&config)?;
    if config.out.is_none() {
        let stdout = std::io::stdout();
        write_trace(stdout.lock(), &summary.trace)?;
    }
    log::info!(
        "final loss {:e}, min loss {:e}, final lb {}",
        summary.final_full_loss,
        summary.min_full_loss,
        summary.final_lb
    );
    match summary.diverged_at {
        Some(k) => Err(HarnessError::Diverged { k }),
        None => Ok(()),
    }
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), HarnessError> {
    let base = args.config.resolve(None)?;
    let alphas = match &args.grid {
        Some(g) => parse_grid(g)?,
        None if !args.alphas.is_empty() => args.alphas.clone(),
        None => log_grid(-4.0, 2.0, 2),
    };
    let result = sweep(&base, &alphas, &args.seeds, args.jobs)?;
    match &args.out {
        Some(path) => emit_summary(&result.summary, path)?,
        None => write_summary(std::io::stdout().lock(), &result.summary)
            .map_err(|e| HarnessError::Parse(e.to_string()))?,
    }
    if let Some(path) = &args.runs_out {
        let rows: Vec<_> = result.runs.iter().map(|r| r.row()).collect();
        emit_runs(&rows, path)?;
    }
    eprintln!(
        "{}: stable log10-width at loss < {:e}: {}",
        base.optimizer,
        args.threshold,
        stable_log_width(&result.summary, args.threshold)
    );
    Ok(())
}

fn cmd_verify(args: &VerifyArgs) -> Result<bool, HarnessError> {
    let reports = verify::run_all(args.seed, args.instances);
    let mut out = std::io::stdout().lock();
    let mut all = true;
    for r in &reports {
        all &= r.passed;
        writeln!(
            out,
            "{:<26} {} ({} cases) {}",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.cases,
            r.detail
        )
        .map_err(|source| HarnessError::Io {
            path: "<stdout>".into(),
            source,
        })?;
    }
    Ok(all)
}

fn cmd_repro(args: &ReproArgs) -> Result<(), HarnessError> {
    let opts = E4Options {
        iterations: args.iterations,
        problem_seed: args.seed,
        sampler_seed: args.seed,
        lb_init: args.lb_init,
        jobs: args.jobs,
        ..E4Options::default()
    };
    let report = repro_e4(&opts, args.out.as_deref())?;
    for arm in &report.arms {
        let best = arm.best_run();
        let settled = match (arm.lb_mode.is_online(), arm.lb_settled_at) {
            (false, _) => "fixed".to_string(),
            (true, Some(k)) => format!("|lb| < {} from k = {k}", opts.lb_tolerance),
            (true, None) => format!("|lb| never settles below {}", opts.lb_tolerance),
        };
        println!(
            "{:<16} best alpha {:<8} final loss {:.3e}  final lb {:.3e}  {settled}",
            arm.label,
            arm.best_alpha(),
            best.summary.final_full_loss,
            best.summary.final_lb
        );
    }
    for (online, fixed) in [
        (OptimizerKind::MomoStar, OptimizerKind::Momo),
        (OptimizerKind::MomoAdamStar, OptimizerKind::MomoAdam),
    ] {
        println!(
            "{online} succeeds where fixed lb fails at alpha = {:?}",
            report.stability_gap(online, fixed, 1e-4, 1e-2)
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Verify(a) => match cmd_verify(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(1),
            Err(e) => Err(e),
        },
        Command::ReproE4(a) => cmd_repro(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

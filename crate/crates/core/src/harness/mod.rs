//! Training loops, learning-rate sweeps and their CSV output.

mod config;
mod repro;
mod sweep;
mod trace;
pub mod verify;

use std::path::PathBuf;

pub use config::{
    ConfigFile, LbModeName, OptimizerSection, ProblemSection, RunConfig, RunSection, ScheduleName, ScheduleSection,
};
pub use repro::{repro_e4, E4Arm, E4Options, E4Report};
pub use sweep::{log_grid, stable_interval, stable_log_width, summarize, sweep, SweepResult, SweepRun};
pub use trace::{
    emit_csv, emit_runs, emit_summary, format_f64, parse_trace, read_trace, trace_to_string, write_summary,
    write_trace, RunRow, SummaryRow, TraceRow, RUNS_HEADER, SUMMARY_HEADER, TRACE_HEADER,
};

use crate::error::Error;
use crate::optimizers::{StepInput, StepRecord};
use crate::problems::{BatchSampler, Problem};
use crate::vecops::{dist_sq, is_finite};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed CSV: {0}")]
    Parse(String),

    #[error("run diverged at iteration {k}")]
    Diverged { k: u64 },
}

impl HarnessError {
    /// Process exit code: 1 validation, 2 divergence, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Core(_) => 1,
            HarnessError::Diverged { .. } => 2,
            HarnessError::Io { .. } | HarnessError::Parse(_) => 3,
        }
    }
}

/// Everything that happened in one iteration, for observers.
#[derive(Debug)]
pub struct StepEvent<'a> {
    pub k: u64,
    pub epoch: u64,
    pub batch: &'a [usize],
    pub x: &'a [f64],
    pub loss: f64,
    pub grad: &'a [f64],
    pub x_new: &'a [f64],
    pub record: &'a StepRecord,
    /// Diagonal metric of this step; `None` for the identity.
    pub metric: Option<&'a [f64]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub trace: Vec<TraceRow>,
    pub final_x: Vec<f64>,
    /// Full loss at the last finite iterate (may overflow to `inf`).
    pub final_full_loss: f64,
    /// Minimum full loss over `x^1` and every traced iterate.
    pub min_full_loss: f64,
    pub final_lb: f64,
    /// Iteration whose loss, gradient or update was non-finite.
    pub diverged_at: Option<u64>,
}

/// Runs `config` on an already-built problem, calling `observe` after each step.
///
/// The loop stops early, with `diverged_at` set, as soon as a sampled loss,
/// gradient or new iterate is non-finite.
pub fn run_with(
    problem: &dyn Problem,
    config: &RunConfig,
    mut observe: impl FnMut(&StepEvent<'_>),
) -> Result<RunSummary, HarnessError> {
    config.validate()?;
    if problem.n_samples() < config.batch_size {
        return Err(HarnessError::Config(format!(
            "batch_size {} exceeds the problem's {} samples",
            config.batch_size,
            problem.n_samples()
        )));
    }
    let sampler = BatchSampler::new(problem.n_samples(), config.batch_size, config.seed, config.sampling)?;
    let mut opt = config.optimizer.build(config.optim)?;
    let x_star = problem.x_star().map(<[f64]>::to_vec);
    let mut x = problem.initial_point();
    let mut trace = Vec::new();
    let mut min_full_loss = problem.full_loss(&x);
    let mut final_lb = config.optim.lb_init;
    let mut diverged_at = None;

    for k in 1..=config.iterations {
        let batch = sampler.sample(k);
        let (loss, grad) = problem.loss_grad(&x, &batch);
        if !loss.is_finite() || !is_finite(&grad) {
            diverged_at = Some(k);
            break;
        }
        let out = opt.step(StepInput::new(&x, loss, &grad)?)?;
        if !is_finite(&out.x_new) {
            diverged_at = Some(k);
            break;
        }
        let epoch = sampler.epoch(k);
        observe(&StepEvent {
            k,
            epoch,
            batch: &batch,
            x: &x,
            loss,
            grad: &grad,
            x_new: &out.x_new,
            record: &out.record,
            metric: opt.metric(),
        });
        final_lb = out.record.lb_next;
        x = out.x_new;
        if k % config.trace_interval == 0 || k == config.iterations {
            let full = problem.full_loss(&x);
            if full < min_full_loss {
                min_full_loss = full;
            }
            trace.push(TraceRow {
                k,
                epoch,
                alpha: out.record.alpha,
                tau: out.record.tau,
                zeta: out.record.zeta,
                lb: out.record.lb,
                batch_loss: loss,
                full_loss: Some(full),
                dist: x_star.as_deref().map(|xs| dist_sq(&x, xs).sqrt()),
            });
        }
    }
    if let Some(k) = diverged_at {
        log::warn!("{} diverged at k = {k}", opt.name());
    }
    let final_full_loss = problem.full_loss(&x);
    Ok(RunSummary {
        trace,
        final_x: x,
        final_full_loss,
        min_full_loss: min_full_loss.min(final_full_loss),
        final_lb,
        diverged_at,
    })
}

/// Builds the problem, runs, and writes the trace to `config.out` if set.
pub fn run(config: &RunConfig) -> Result<RunSummary, HarnessError> {
    let problem = config.problem.build()?;
    let summary = run_with(problem.as_ref(), config, |_| {})?;
    if let Some(path) = &config.out {
        emit_csv(&summary.trace, path)?;
    }
    Ok(summary)
}

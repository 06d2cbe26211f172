//! One-command lower-bound experiment on the synthetic least-squares problem.
//!
//! Four arms share the problem, grid and sampler seed: MoMo and MoMo-Adam,
//! each with the online lower bound started at `lb_1` and with the bound held
//! fixed at `lb_1`.

use std::path::Path;

use super::{emit_csv, emit_summary, log_grid, sweep, HarnessError, RunConfig, SummaryRow, SweepRun};
use crate::lowerbound::LowerBoundMode;
use crate::optimizers::{OptimizerConfig, OptimizerKind};
use crate::problems::{ProblemKind, ProblemSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct E4Options {
    pub n: usize,
    pub d: usize,
    pub problem_seed: u64,
    pub sampler_seed: u64,
    pub batch_size: usize,
    pub iterations: u64,
    pub alphas: Vec<f64>,
    pub lb_init: f64,
    /// `|lb_k|` must fall and stay below this.
    pub lb_tolerance: f64,
    pub jobs: usize,
}

impl Default for E4Options {
    fn default() -> Self {
        Self {
            n: 200,
            d: 10,
            problem_seed: 0,
            sampler_seed: 0,
            batch_size: 20,
            iterations: 5000,
            alphas: log_grid(-3.0, 3.0, 1),
            lb_init: -10.0,
            lb_tolerance: 0.1,
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct E4Arm {
    pub label: String,
    pub optimizer: OptimizerKind,
    pub lb_mode: LowerBoundMode,
    pub rows: Vec<SummaryRow>,
    pub runs: Vec<SweepRun>,
    /// Grid index with the smallest final loss.
    pub best: usize,
    /// First `k` after which `|lb_j| < tol` for every traced `j`, for the best α.
    pub lb_settled_at: Option<u64>,
}

impl E4Arm {
    pub fn best_alpha(&self) -> f64 {
        self.rows[self.best].alpha
    }

    pub fn best_run(&self) -> &SweepRun {
        &self.runs[self.best]
    }

    pub fn final_loss_at(&self, index: usize) -> f64 {
        self.runs[index].summary.final_full_loss
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct E4Report {
    pub options: E4Options,
    pub arms: Vec<E4Arm>,
}

impl E4Report {
    pub fn arm(&self, optimizer: OptimizerKind, online: bool) -> &E4Arm {
        self.arms
            .iter()
            .find(|a| a.optimizer == optimizer && a.lb_mode.is_online() == online)
            .expect("all four arms are present")
    }

    /// Grid values where the online arm reaches `ok` but the fixed arm ends above `bad`.
    pub fn stability_gap(&self, online: OptimizerKind, fixed: OptimizerKind, ok: f64, bad: f64) -> Vec<f64> {
        let on = self.arm(online, true);
        let off = self.arm(fixed, false);
        (0..on.rows.len())
            .filter(|&i| {
                let on_run = &on.runs[i].summary;
                let off_run = &off.runs[i].summary;
                let on_ok = on_run.diverged_at.is_none() && on_run.final_full_loss < ok;
                let off_bad = off_run.diverged_at.is_some() || !(off_run.final_full_loss <= bad);
                on_ok && off_bad
            })
            .map(|i| on.rows[i].alpha)
            .collect()
    }
}

fn settled_at(run: &SweepRun, tol: f64) -> Option<u64> {
    let trace = &run.summary.trace;
    if run.summary.diverged_at.is_some() {
        return None;
    }
    let last_bad = trace.iter().rposition(|r| !(r.lb.abs() < tol));
    match last_bad {
        None => trace.first().map(|r| r.k),
        Some(i) if i + 1 < trace.len() => Some(trace[i + 1].k),
        Some(_) => None,
    }
}

/// Runs the four arms and, if `out_dir` is given, writes one summary CSV per
/// arm plus the trace of each arm's best run.
pub fn repro_e4(opts: &E4Options, out_dir: Option<&Path>) -> Result<E4Report, HarnessError> {
    let problem = ProblemSpec {
        kind: ProblemKind::LeastSquares,
        n: opts.n,
        d: opts.d,
        seed: opts.problem_seed,
        ..ProblemSpec::default()
    };
    let arms_spec = [
        ("momo-star", OptimizerKind::MomoStar, LowerBoundMode::Online),
        ("momo-adam-star", OptimizerKind::MomoAdamStar, LowerBoundMode::Online),
        ("momo-fixed", OptimizerKind::Momo, LowerBoundMode::Fixed(opts.lb_init)),
        ("momo-adam-fixed", OptimizerKind::MomoAdam, LowerBoundMode::Fixed(opts.lb_init)),
    ];
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    let mut arms = Vec::new();
    for (label, optimizer, lb_mode) in arms_spec {
        let base = RunConfig {
            problem: problem.clone(),
            optimizer,
            optim: OptimizerConfig::default_for(optimizer).with_lb(lb_mode, opts.lb_init),
            iterations: opts.iterations,
            batch_size: opts.batch_size,
            seed: opts.sampler_seed,
            ..RunConfig::default()
        };
        let result = sweep(&base, &opts.alphas, &[opts.sampler_seed], opts.jobs)?;
        let best = result
            .summary
            .iter()
            .enumerate()
            .filter(|(_, r)| r.diverged == 0 && !r.mean_final_loss.is_nan())
            .min_by(|a, b| a.1.mean_final_loss.total_cmp(&b.1.mean_final_loss))
            .map_or(0, |(i, _)| i);
        let lb_settled_at = lb_mode
            .is_online()
            .then(|| settled_at(&result.runs[best], opts.lb_tolerance))
            .flatten();
        log::info!(
            "{label}: best alpha {} final loss {:e}",
            result.summary[best].alpha,
            result.summary[best].mean_final_loss
        );
        if let Some(dir) = out_dir {
            emit_summary(&result.summary, &dir.join(format!("{label}_summary.csv")))?;
            emit_csv(&result.runs[best].summary.trace, &dir.join(format!("{label}_best_trace.csv")))?;
        }
        arms.push(E4Arm {
            label: label.to_string(),
            optimizer,
            lb_mode,
            rows: result.summary,
            runs: result.runs,
            best,
            lb_settled_at,
        });
    }
    Ok(E4Report {
        options: opts.clone(),
        arms,
    })
}

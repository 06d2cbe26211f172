use rayon::prelude::*;

use super::{run_with, HarnessError, RunConfig, RunRow, RunSummary, SummaryRow};

/// `10^e` for `e = lo, lo + 1/per_decade, …, hi`.
pub fn log_grid(lo_exp: f64, hi_exp: f64, per_decade: u32) -> Vec<f64> {
    let steps = ((hi_exp - lo_exp) * per_decade as f64).round() as i64;
    (0..=steps)
        .map(|i| 10f64.powf(lo_exp + i as f64 / per_decade as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub alpha_index: usize,
    pub alpha: f64,
    pub seed: u64,
    pub summary: RunSummary,
}

impl SweepRun {
    pub fn row(&self) -> RunRow {
        RunRow {
            alpha: self.alpha,
            seed: self.seed,
            final_full_loss: self.summary.final_full_loss,
            min_full_loss: self.summary.min_full_loss,
            final_lb: self.summary.final_lb,
            diverged_at: self.summary.diverged_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Ordered by `(alpha_index, seed position)`.
    pub runs: Vec<SweepRun>,
    /// One row per grid entry, in grid order.
    pub summary: Vec<SummaryRow>,
}

/// Runs every `(α, seed)` pair on up to `jobs` threads (`0` = all cores).
///
/// The sampler stream of a run depends only on its seed, so every α sees the
/// same minibatch sequence and reordering the grid changes no run.
pub fn sweep(base: &RunConfig, alphas: &[f64], seeds: &[u64], jobs: usize) -> Result<SweepResult, HarnessError> {
    if alphas.is_empty() || seeds.is_empty() {
        return Err(HarnessError::Config("sweep needs at least one alpha and one seed".into()));
    }
    for &a in alphas {
        base.with_alpha(a).validate()?;
    }
    let problem = base.problem.build()?;
    let problem = problem.as_ref();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    let jobs: Vec<(usize, f64, u64)> = alphas
        .iter()
        .enumerate()
        .flat_map(|(i, &a)| seeds.iter().map(move |&s| (i, a, s)))
        .collect();
    let runs = pool.install(|| {
        jobs.par_iter()
            .map(|&(alpha_index, alpha, seed)| {
                let cfg = base.with_alpha(alpha).with_seed(seed);
                run_with(problem, &cfg, |_| {}).map(|summary| SweepRun {
                    alpha_index,
                    alpha,
                    seed,
                    summary,
                })
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let summary = summarize(&runs, alphas);
    Ok(SweepResult { runs, summary })
}

/// Aggregates runs per grid entry; diverged runs are counted, not averaged.
pub fn summarize(runs: &[SweepRun], alphas: &[f64]) -> Vec<SummaryRow> {
    alphas
        .iter()
        .enumerate()
        .map(|(i, &alpha)| {
            let group: Vec<&SweepRun> = runs.iter().filter(|r| r.alpha_index == i).collect();
            let ok: Vec<&RunSummary> = group
                .iter()
                .filter(|r| r.summary.diverged_at.is_none())
                .map(|r| &r.summary)
                .collect();
            let m = ok.len() as f64;
            let mean = ok.iter().map(|s| s.final_full_loss).sum::<f64>() / m;
            let var = if ok.len() > 1 {
                ok.iter().map(|s| (s.final_full_loss - mean).powi(2)).sum::<f64>() / (m - 1.0)
            } else {
                0.0
            };
            SummaryRow {
                alpha,
                runs: group.len(),
                diverged: group.len() - ok.len(),
                mean_final_loss: if ok.is_empty() { f64::NAN } else { mean },
                std_final_loss: if ok.is_empty() { f64::NAN } else { var.sqrt() },
                mean_min_loss: if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|s| s.min_full_loss).sum::<f64>() / m
                },
            }
        })
        .collect()
}

/// Longest contiguous stretch of the (sorted) grid on which
/// [`SummaryRow::succeeds`] holds, as `(α_lo, α_hi)`.
pub fn stable_interval(rows: &[SummaryRow], threshold: f64) -> Option<(f64, f64)> {
    let mut sorted: Vec<&SummaryRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.alpha.total_cmp(&b.alpha));
    let mut best: Option<(f64, f64)> = None;
    let mut start: Option<f64> = None;
    let width = |(lo, hi): (f64, f64)| hi.log10() - lo.log10();
    for r in &sorted {
        if r.succeeds(threshold) {
            let lo = *start.get_or_insert(r.alpha);
            let candidate = (lo, r.alpha);
            if best.is_none_or(|b| width(candidate) > width(b)) {
                best = Some(candidate);
            }
        } else {
            start = None;
        }
    }
    best
}

/// `log10(α_hi / α_lo)` of [`stable_interval`]; `0` when nothing succeeds.
pub fn stable_log_width(rows: &[SummaryRow], threshold: f64) -> f64 {
    stable_interval(rows, threshold).map_or(0.0, |(lo, hi)| hi.log10() - lo.log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::trace_to_string;
    use crate::optimizers::OptimizerKind;

    fn row(alpha: f64, loss: f64) -> SummaryRow {
        SummaryRow {
            alpha,
            runs: 1,
            diverged: 0,
            mean_final_loss: loss,
            std_final_loss: 0.0,
            mean_min_loss: loss,
        }
    }

    #[test]
    fn grid() {
        let g = log_grid(-1.0, 1.0, 2);
        assert_eq!(g.len(), 5);
        assert!((g[0] - 0.1).abs() < 1e-15 && (g[4] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn width_picks_longest_run() {
        let rows = vec![
            row(1e-3, 1.0),
            row(1e-2, 1e-5),
            row(1e-1, 1.0),
            row(1.0, 1e-5),
            row(10.0, 1e-5),
            row(100.0, 1e-5),
        ];
        assert_eq!(stable_interval(&rows, 1e-3), Some((1.0, 100.0)));
        assert!((stable_log_width(&rows, 1e-3) - 2.0).abs() < 1e-12);
        assert_eq!(stable_log_width(&rows[..1], 1e-3), 0.0);
    }

    #[test]
    fn single_point_sweep_matches_run() {
        let base = RunConfig {
            iterations: 100,
            ..RunConfig::default()
        };
        let s = sweep(&base, &[0.5], &[3], 1).unwrap();
        let direct = crate::harness::run(&base.with_alpha(0.5).with_seed(3)).unwrap();
        assert_eq!(trace_to_string(&s.runs[0].summary.trace), trace_to_string(&direct.trace));
    }

    #[test]
    fn reordering_grid_leaves_runs_unchanged() {
        let base = RunConfig {
            iterations: 60,
            ..RunConfig::default()
        };
        let a = sweep(&base, &[0.1, 1.0, 10.0], &[0, 1], 2).unwrap();
        let b = sweep(&base, &[10.0, 0.1, 1.0], &[1, 0], 3).unwrap();
        for ra in &a.runs {
            let rb = b.runs.iter().find(|r| r.alpha == ra.alpha && r.seed == ra.seed).unwrap();
            assert_eq!(ra.summary, rb.summary);
        }
    }

    #[test]
    fn divergence_is_isolated() {
        let base = RunConfig {
            iterations: 200,
            optimizer: OptimizerKind::Sgdm,
            ..RunConfig::default()
        };
        let s = sweep(&base, &[0.01, 100.0], &[0], 2).unwrap();
        assert_eq!(s.summary[0].diverged, 0);
        assert_eq!(s.summary[1].diverged, 1);
        assert!(s.summary[1].mean_final_loss.is_nan());
    }
}

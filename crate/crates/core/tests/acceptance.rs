//! Acceptance criteria AC-1 to AC-8. Each test prints one `PASS`/`FAIL` line
//! before asserting, so `cargo test --test acceptance -- --nocapture` gives a
//! readable report.

use std::time::{Duration, Instant};

use momo::harness::verify::{
    averaging_exactness, gradient_checks, lower_bound_validity, lower_bound_validity_config, prox_euclidean,
    prox_preconditioned, reduction_chains,
};
use momo::harness::{log_grid, repro_e4, run_with, stable_interval, stable_log_width, sweep, E4Options, RunConfig};
use momo::lowerbound::LowerBoundMode;
use momo::optimizers::{Momo, Optimizer, OptimizerConfig, OptimizerKind, Schedule, StepInput};
use momo::problems::{BatchSampler, LeastSquares, Problem, SamplingMode};
use momo::vecops::{dist_sq, norm};

fn report(id: &str, passed: bool, elapsed: Duration, detail: &str) {
    println!(
        "{id} {} ({:.1}s) {detail}",
        if passed { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
}

#[test]
fn ac1_online_lower_bound_converges() {
    let start = Instant::now();
    let rep = repro_e4(&E4Options::default(), None).unwrap();
    let mut ok = true;
    let mut detail = String::new();
    for kind in [OptimizerKind::MomoStar, OptimizerKind::MomoAdamStar] {
        let arm = rep.arm(kind, true);
        let final_loss = arm.best_run().summary.final_full_loss;
        let settled = arm.lb_settled_at;
        ok &= settled.is_some() && final_loss < 1e-4;
        detail += &format!(
            "{}: alpha {:e}, |lb| < 0.1 from k = {settled:?}, final loss {final_loss:.2e}; ",
            arm.label,
            arm.best_alpha()
        );
    }
    let gap_momo = rep.stability_gap(OptimizerKind::MomoStar, OptimizerKind::Momo, 1e-4, 1e-2);
    let gap_adam = rep.stability_gap(OptimizerKind::MomoAdamStar, OptimizerKind::MomoAdam, 1e-4, 1e-2);
    ok &= !(gap_momo.is_empty() && gap_adam.is_empty());
    detail += &format!("fixed(-10) fails where online succeeds at {gap_momo:?} / {gap_adam:?}");
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(30);
    report("AC-1", ok, elapsed, &detail);
    assert!(ok, "{detail}");
}

fn ac2_width(kind: OptimizerKind, alphas: &[f64]) -> (f64, Option<(f64, f64)>) {
    let base = RunConfig {
        optimizer: kind,
        optim: OptimizerConfig::default_for(kind).with_lb(LowerBoundMode::Fixed(0.0), 0.0),
        iterations: 2000,
        ..RunConfig::default()
    };
    let res = sweep(&base, alphas, &[0, 1, 2], 0).unwrap();
    (stable_log_width(&res.summary, 1e-3), stable_interval(&res.summary, 1e-3))
}

#[test]
fn ac2_stability_range_widening() {
    let start = Instant::now();
    let alphas = log_grid(-4.0, 2.0, 2);
    let (momo, momo_i) = ac2_width(OptimizerKind::Momo, &alphas);
    let (sgdm, sgdm_i) = ac2_width(OptimizerKind::Sgdm, &alphas);
    let (madam, madam_i) = ac2_width(OptimizerKind::MomoAdam, &alphas);
    let (adamw, adamw_i) = ac2_width(OptimizerKind::Adamw, &alphas);
    let elapsed = start.elapsed();
    let ok = momo - sgdm >= 1.0 && madam - adamw >= 1.0 && elapsed < Duration::from_secs(120);
    let detail = format!(
        "log-widths: momo {momo} {momo_i:?} vs sgd-m {sgdm} {sgdm_i:?}; momo-adam {madam} {madam_i:?} vs adamw {adamw} {adamw_i:?}"
    );
    report("AC-2", ok, elapsed, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn ac3_rate_bound() {
    let start = Instant::now();
    let mut ok = true;
    let mut detail = String::new();
    for beta in [0.0, 0.9] {
        let cfg = RunConfig {
            optim: OptimizerConfig::momo()
                .with_alpha(1e12)
                .with_beta(beta)
                .with_lb(LowerBoundMode::Fixed(0.0), 0.0),
            iterations: 10_000,
            ..RunConfig::default()
        };
        let problem = cfg.problem.build().unwrap();
        let x_star = problem.x_star().unwrap().to_vec();
        let x1 = problem.initial_point();
        let r0 = dist_sq(&x1, &x_star).sqrt();
        let mut g_hat: f64 = 0.0;
        let s = run_with(problem.as_ref(), &cfg, |ev| g_hat = g_hat.max(norm(ev.grad))).unwrap();
        assert!(s.diverged_at.is_none());
        // Running minimum over x^1..x^K; row k holds the loss at x^{k+1}.
        let min_at = |k: u64| {
            s.trace
                .iter()
                .take_while(|r| r.k < k)
                .map(|r| r.full_loss.unwrap())
                .fold(problem.full_loss(&x1), f64::min)
        };
        for k in [100u64, 1000, 10_000] {
            let bound = g_hat * r0 / ((k as f64).sqrt() * (1.0 - beta));
            let m = min_at(k);
            ok &= m <= bound;
            detail += &format!("beta {beta} K {k}: {m:.2e} <= {bound:.2e}; ");
        }
        let (lo, hi) = (min_at(10_000), min_at(100));
        let ratio_ok = lo <= 0.15 * hi;
        ok &= ratio_ok;
        detail += &format!("ratio {:.2e}; ", if hi > 0.0 { lo / hi } else { 0.0 });
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(60);
    report("AC-3", ok, elapsed, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn ac4_descent_invariant() {
    let start = Instant::now();
    let cfg = RunConfig {
        optim: OptimizerConfig::momo().with_lb(LowerBoundMode::Fixed(0.0), 0.0),
        iterations: 2000,
        ..RunConfig::default()
    };
    let problem = cfg.problem.build().unwrap();
    let x_star = problem.x_star().unwrap().to_vec();
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    run_with(problem.as_ref(), &cfg, |ev| {
        let before = dist_sq(ev.x, &x_star);
        let after = dist_sq(ev.x_new, &x_star);
        let excess = after - (before - ev.record.tau * ev.record.h.max(0.0));
        worst = worst.max(excess);
        if excess > 1e-10 {
            violations += 1;
        }
    })
    .unwrap();
    let ok = violations == 0;
    let detail = format!("{violations} violations in 2000 steps, max excess {worst:.2e}");
    report("AC-4", ok, start.elapsed(), &detail);
    assert!(ok, "{detail}");
}

#[test]
fn ac5_closed_form_certification() {
    let start = Instant::now();
    let reports = [
        prox_euclidean(1000, 0),
        prox_preconditioned(1000, 0),
        reduction_chains(100, 0),
    ];
    let elapsed = start.elapsed();
    let ok = reports.iter().all(|r| r.passed) && elapsed < Duration::from_secs(60);
    let detail = reports
        .iter()
        .map(|r| format!("{}: {}", r.name, r.detail))
        .collect::<Vec<_>>()
        .join("; ");
    report("AC-5", ok, elapsed, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn ac6_averaging_exactness() {
    let start = Instant::now();
    let exact = averaging_exactness(50, 20, 0);

    let problem = LeastSquares::interpolating(200, 10, 0).unwrap();
    let sampler = BatchSampler::new(200, 20, 0, SamplingMode::EpochShuffle).unwrap();
    let cfg = OptimizerConfig::momo().with_lb(LowerBoundMode::Fixed(0.0), 0.0);
    let mut plain = Momo::plain(cfg).unwrap();
    let mut bias = Momo::bias_corrected(cfg).unwrap();
    let mut x = problem.initial_point();
    let mut taus = Vec::new();
    for k in 1..=1000u64 {
        let (loss, grad) = problem.loss_grad(&x, &sampler.sample(k));
        let input = StepInput::new(&x, loss, &grad).unwrap();
        let a = plain.step(input).unwrap();
        let b = bias.step(input).unwrap();
        taus.push((a.record.tau, b.record.tau));
        x = a.x_new;
    }
    let max_tau = taus.iter().map(|t| t.0.max(t.1)).fold(0.0, f64::max);
    let max_diff = taus[200..].iter().map(|t| (t.0 - t.1).abs()).fold(0.0, f64::max);
    let close = max_diff < 1e-6 * max_tau;
    // First step from which the bound holds for the rest of the run.
    let holds_from = taus
        .iter()
        .rposition(|t| (t.0 - t.1).abs() >= 1e-6 * max_tau)
        .map_or(1, |i| i + 2);
    let ok = exact.passed && close;
    let detail = format!(
        "{}; momo-bias vs momo after 200 steps: max |dtau| {max_diff:.2e}, max tau {max_tau:.2e}, \
         bound holds from k = {holds_from}",
        exact.detail
    );
    report("AC-6", ok, start.elapsed(), &detail);
    assert!(ok, "{detail}");
}

#[test]
fn ac7_lower_bound_validity() {
    let start = Instant::now();
    let v = lower_bound_validity(&lower_bound_validity_config(500, 0)).unwrap();
    let ok = v.exact_violations == 0
        && (v.bootstrap_exceed as f64) < 0.05 * v.steps as f64
        && v.bootstrap_max_excess <= 1e-3;
    // Not gating: how often the online estimate overshoots on other seeds.
    let overshooting = (1..20u64)
        .filter(|&seed| {
            lower_bound_validity(&lower_bound_validity_config(500, seed))
                .map_or(true, |o| o.bootstrap_max_excess > 1e-3)
        })
        .count();
    let detail = format!(
        "exact bound: {} violations (max excess {:.2e}); online estimate above target on {}/{} steps, max excess {:.2e} \
         [seeds 1..20: {overshooting} runs exceed 1e-3 somewhere]",
        v.exact_violations, v.exact_max_excess, v.bootstrap_exceed, v.steps, v.bootstrap_max_excess
    );
    report("AC-7", ok, start.elapsed(), &detail);
    assert!(ok, "{detail}");
}

#[test]
fn ac8_gradient_correctness() {
    let start = Instant::now();
    let r = gradient_checks(0);
    report("AC-8", r.passed, start.elapsed(), &r.detail);
    assert!(r.passed, "{}", r.detail);
}

#[test]
fn schedule_is_constant_in_acceptance_runs() {
    assert_eq!(RunConfig::default().optim.schedule, Schedule::constant(1.0));
}

//! Property suites over the optimizers, lower bounds and problems.

use momo::harness::{run_with, RunConfig};
use momo::lowerbound::{LowerBoundMode, LowerBoundState};
use momo::model::{general_step, AveragingScheme, Metric, MomentumState};
use momo::optimizers::{OptimizerConfig, OptimizerKind, StepInput};
use momo::problems::{Activation, BatchSampler, LeastSquares, LogReg, Mlp, Problem, SamplingMode};
use momo::vecops::{dist_sq_weighted, norm};
use proptest::prelude::*;

fn e4(iterations: u64, kind: OptimizerKind, optim: OptimizerConfig) -> RunConfig {
    RunConfig {
        optimizer: kind,
        optim,
        iterations,
        ..RunConfig::default()
    }
}

fn momo_kinds() -> impl Strategy<Value = OptimizerKind> {
    prop::sample::select(vec![
        OptimizerKind::Momo,
        OptimizerKind::MomoBias,
        OptimizerKind::MomoAdam,
        OptimizerKind::MomoStar,
        OptimizerKind::MomoAdamStar,
    ])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn biased_rho_increases_to_one(beta in 0.01f64..0.999) {
        let s = AveragingScheme::biased(beta).unwrap();
        let n = AveragingScheme::normalized(beta).unwrap();
        let mut prev = 0.0;
        for k in 1..200u64 {
            let r = s.rho(k);
            prop_assert!(r >= prev);
            prop_assert!(r <= 1.0);
            prop_assert_eq!(n.rho(k), 1.0);
            prev = r;
        }
    }

    #[test]
    fn general_step_is_nonnegative_and_finite(
        dim in 1usize..8,
        seed in any::<u64>(),
        alpha in 1e-4f64..1e4,
        lambda in 0.0f64..3.0,
        lb in -5.0f64..5.0,
        biased in any::<bool>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut v = |s: f64| -> Vec<f64> { (0..dim).map(|_| s * (rng.random::<f64>() - 0.5)).collect() };
        let (x, g, diag) = (v(4.0), v(4.0), v(1.0).iter().map(|t| 1.0 + t).collect::<Vec<_>>());
        let scheme = if biased { AveragingScheme::biased(0.9) } else { AveragingScheme::normalized(0.9) }.unwrap();
        let mut st = MomentumState::zeroed(dim, scheme);
        st.update(&x, 1.5, &g).unwrap();
        let out = general_step(&x, &st, Metric::Diagonal(&diag), alpha, lambda, lb).unwrap();
        prop_assert!(out.tau >= 0.0);
        prop_assert!(out.tau <= alpha / st.rho() * (1.0 + 1e-15));
        prop_assert!(out.x_new.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn cap_dominance_along_runs(kind in momo_kinds(), log_alpha in -3.0f64..3.0, seed in 0u64..1000) {
        let alpha = 10f64.powf(log_alpha);
        let cfg = e4(150, kind, OptimizerConfig::default_for(kind).with_alpha(alpha)).with_seed(seed);
        let problem = cfg.problem.build().unwrap();
        let mut bad = 0;
        run_with(problem.as_ref(), &cfg, |ev| {
            let r = ev.record;
            if r.tau < 0.0 || r.tau > r.alpha / r.rho * (1.0 + 1e-15) {
                bad += 1;
            }
        }).unwrap();
        prop_assert_eq!(bad, 0);
    }

    // The bootstrapped estimate may overshoot the averaged optimum on some
    // seeds; the exact bound may not, and the estimate still reaches f* = 0.
    #[test]
    fn exact_bound_holds_and_estimate_converges(seed in 0u64..1000) {
        let cfg = momo::harness::verify::lower_bound_validity_config(500, seed);
        let v = momo::harness::verify::lower_bound_validity(&cfg).unwrap();
        prop_assert_eq!(v.exact_violations, 0);
        let s = momo::harness::run(&cfg).unwrap();
        prop_assert!(s.final_lb.abs() < 1e-6, "final lb {}", s.final_lb);
    }

    #[test]
    fn floor_preserved_along_runs(lb_init in -20.0f64..0.0, max in any::<bool>()) {
        let mode = if max { LowerBoundMode::OnlineMax } else { LowerBoundMode::Online };
        let cfg = e4(200, OptimizerKind::MomoStar, OptimizerConfig::momo().with_lb(mode, lb_init));
        let problem = cfg.problem.build().unwrap();
        let mut below = 0;
        run_with(problem.as_ref(), &cfg, |ev| {
            if ev.record.lb_next < lb_init || ev.record.lb < lb_init {
                below += 1;
            }
        }).unwrap();
        prop_assert_eq!(below, 0);
    }

    #[test]
    fn sampler_is_deterministic(n in 5usize..300, b in 1usize..5, seed in any::<u64>(), k in 1u64..10_000) {
        let b = b.min(n);
        for mode in [SamplingMode::WithReplacement, SamplingMode::EpochShuffle] {
            let s1 = BatchSampler::new(n, b, seed, mode).unwrap();
            let s2 = BatchSampler::new(n, b, seed, mode).unwrap();
            prop_assert_eq!(s1.sample(k), s2.sample(k));
        }
    }

    #[test]
    fn problems_are_pure(seed in 0u64..1000) {
        let a = LeastSquares::interpolating(50, 5, seed).unwrap();
        let b = LeastSquares::interpolating(50, 5, seed).unwrap();
        prop_assert_eq!(a.to_bytes(), b.to_bytes());
        let a = LogReg::new(200, 10, seed, false).unwrap();
        let b = LogReg::new(200, 10, seed, false).unwrap();
        prop_assert_eq!(a.to_bytes(), b.to_bytes());
    }
}

#[test]
fn small_alpha_matches_baselines() {
    let problem = LeastSquares::interpolating(200, 10, 0).unwrap();
    let sampler = BatchSampler::new(200, 20, 0, SamplingMode::EpochShuffle).unwrap();
    for (a, b) in [
        (OptimizerKind::Momo, OptimizerKind::Sgdm),
        (OptimizerKind::MomoAdam, OptimizerKind::Adamw),
    ] {
        let cfg = OptimizerConfig::default_for(a).with_alpha(1e-6);
        let mut oa = a.build(cfg).unwrap();
        let mut ob = b.build(cfg).unwrap();
        let mut xa = problem.initial_point();
        let mut xb = xa.clone();
        for k in 1..=100 {
            let batch = sampler.sample(k);
            let (la, ga) = problem.loss_grad(&xa, &batch);
            let (lb, gb) = problem.loss_grad(&xb, &batch);
            xa = oa.step(StepInput::new(&xa, la, &ga).unwrap()).unwrap().x_new;
            xb = ob.step(StepInput::new(&xb, lb, &gb).unwrap()).unwrap().x_new;
            for (u, v) in xa.iter().zip(&xb) {
                assert!((u - v).abs() <= 1e-12 * u.abs().max(v.abs()).max(1e-300), "{a} vs {b} at k = {k}");
            }
        }
    }
}

#[test]
fn descent_invariant_in_the_step_metric() {
    for kind in [OptimizerKind::Momo, OptimizerKind::MomoAdam] {
        let optim = OptimizerConfig::default_for(kind).with_lb(LowerBoundMode::Fixed(0.0), 0.0);
        let cfg = e4(2000, kind, optim);
        let problem = cfg.problem.build().unwrap();
        let x_star = problem.x_star().unwrap().to_vec();
        let mut worst = f64::NEG_INFINITY;
        run_with(problem.as_ref(), &cfg, |ev| {
            let ones = vec![1.0; ev.x.len()];
            let d = ev.metric.unwrap_or(&ones);
            let before = dist_sq_weighted(ev.x, &x_star, d);
            let after = dist_sq_weighted(ev.x_new, &x_star, d);
            worst = worst.max(after - before + ev.record.tau * ev.record.h.max(0.0));
        })
        .unwrap();
        assert!(worst <= 1e-10, "{kind}: {worst:e}");
    }
}

#[test]
fn model_gap_under_interpolation() {
    for beta in [0.0, 0.5, 0.9] {
        let optim = OptimizerConfig::momo()
            .with_alpha(1e12)
            .with_beta(beta)
            .with_lb(LowerBoundMode::Fixed(0.0), 0.0);
        let cfg = e4(300, OptimizerKind::Momo, optim);
        let problem = cfg.problem.build().unwrap();
        let mut worst_gap = f64::INFINITY;
        let mut worst_identity: f64 = 0.0;
        run_with(problem.as_ref(), &cfg, |ev| {
            let h = ev.record.h;
            worst_gap = worst_gap.min(h);
            if ev.k > 1 {
                worst_identity = worst_identity.max((h - (1.0 - beta) * ev.loss).abs());
            }
        })
        .unwrap();
        assert!(worst_gap >= -1e-10, "beta {beta}: {worst_gap:e}");
        assert!(worst_identity <= 1e-8, "beta {beta}: {worst_identity:e}");
    }
}

#[test]
fn reset_restores_positive_numerator() {
    let mut lb = LowerBoundState::new(LowerBoundMode::Online, -1.0);
    for h in [0.3, 1.0, 7.5] {
        lb.lb = 2.0 * h;
        assert!(lb.reset(1.0, 0.0, 1.0, h));
        assert_eq!(h - lb.lb, 0.5 * h);
    }
}

// Once the loss is exactly zero, h_k is rounding residue: steps are either
// zero or move x by a negligible amount.
#[test]
fn converged_run_stops_moving() {
    let cfg = e4(
        3000,
        OptimizerKind::Momo,
        OptimizerConfig::momo().with_lb(LowerBoundMode::Fixed(0.0), 0.0),
    );
    let problem = cfg.problem.build().unwrap();
    let mut converged_steps = 0;
    let mut zero_steps = 0;
    let mut largest_move: f64 = 0.0;
    run_with(problem.as_ref(), &cfg, |ev| {
        if ev.loss == 0.0 {
            converged_steps += 1;
            if ev.record.tau == 0.0 {
                zero_steps += 1;
            }
            largest_move = largest_move.max(momo::vecops::dist_sq(ev.x, ev.x_new).sqrt());
        }
    })
    .unwrap();
    assert!(converged_steps > 0);
    assert!(zero_steps > 0);
    let scale = norm(problem.x_star().unwrap());
    assert!(largest_move < f64::EPSILON * scale, "{largest_move:e}");
}

#[test]
fn interpolating_problems_are_optimal_per_sample() {
    let p = LeastSquares::interpolating(200, 10, 3).unwrap();
    let xs = p.x_star().unwrap().to_vec();
    for i in 0..p.n_samples() {
        assert!(norm(&p.grad(&xs, &[i])) <= 1e-8);
        assert!(p.loss(&xs, &[i]).abs() <= 1e-16);
    }
    let m = Mlp::new(&[4, 6, 3], 50, 1, Activation::Tanh).unwrap();
    assert!(m.full_loss(m.teacher()) < (3f64).ln());
}

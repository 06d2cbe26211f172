//! Oracle suites behind `momo verify`.
//!
//! Each check draws its instances from a fixed seed and returns a
//! [`CheckReport`] carrying the worst deviation it saw.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{run_with, HarnessError, RunConfig};
use crate::lowerbound::LowerBoundMode;
use crate::model::{
    general_step, momo_tau, truncated_prox_euclidean, truncated_prox_preconditioned, AveragingMode,
    AveragingScheme, Metric, MomentumState, ProxCase,
};
use crate::optimizers::{Momo, Optimizer, OptimizerConfig, OptimizerKind, StepInput};
use crate::oracle::{
    explicit_averages, exact_fstar_bar, fd_gradient, exact_lower_bound, prox_grid_2d, prox_objective, prox_oracle,
    BoundHistory, Sample,
};
use crate::problems::{rng_for, Activation, LeastSquares, LogReg, Mlp, Problem, ProblemKind, ProblemSpec};
use crate::vecops::{norm, norm_sq};

/// Allowed gap between oracle and closed-form prox objectives.
pub const PROX_TOL: f64 = 1e-8;
/// Relative tolerance for recursive vs explicit averages.
pub const AVERAGING_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    pub worst: f64,
    pub detail: String,
}

impl CheckReport {
    fn new(name: &str, cases: usize, worst: f64, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            passed,
            cases,
            worst,
            detail: detail.into(),
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample::<f64, _>(rand_distr::StandardNormal)
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

fn nonzero_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
        if norm(&v) > 1e-3 {
            return v;
        }
    }
}

/// Random Euclidean prox instances against the ray oracle, plus case logic.
pub fn prox_euclidean(instances: usize, seed: u64) -> CheckReport {
    let mut rng = rng_for(seed, 10);
    let mut worst: f64 = 0.0;
    let mut case_errors = 0;
    for _ in 0..instances {
        let dim = rng.random_range(1..=8);
        let c = 10.0 * rng.random::<f64>() - 5.0;
        let a = nonzero_vec(&mut rng, dim);
        let y0: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
        let beta = log_uniform(&mut rng, 1e-2, 10.0);
        let r = truncated_prox_euclidean(c, &a, &y0, beta).expect("valid instance");
        let ones = vec![1.0; dim];
        let (_, best) = prox_oracle(c, &a, &y0, &ones, beta, 0.0);
        let ours = prox_objective(c, &a, &y0, &ones, beta, 0.0, &r.y_plus);
        worst = worst.max((best - ours).abs());

        let a_sq = norm_sq(&a);
        let expected_case = if c < 0.0 {
            ProxCase::Inactive
        } else if c / a_sq > beta {
            ProxCase::CapActive
        } else {
            ProxCase::Exact
        };
        let mv = (c - r.tau * a_sq).max(0.0);
        if r.case != expected_case || (r.model_value - mv).abs() > 1e-12 {
            case_errors += 1;
        }
    }
    CheckReport::new(
        "prox-euclidean",
        instances,
        worst,
        worst <= PROX_TOL && case_errors == 0,
        format!("max |oracle - closed form| = {worst:.3e}, case mismatches = {case_errors}"),
    )
}

/// Random preconditioned, weight-decayed prox instances against the ray oracle.
pub fn prox_preconditioned(instances: usize, seed: u64) -> CheckReport {
    let mut rng = rng_for(seed, 11);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let dim = rng.random_range(1..=8);
        let c = 10.0 * rng.random::<f64>() - 5.0;
        let a = nonzero_vec(&mut rng, dim);
        let y0: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
        let diag: Vec<f64> = (0..dim).map(|_| log_uniform(&mut rng, 0.1, 10.0)).collect();
        let alpha = log_uniform(&mut rng, 1e-2, 10.0);
        let lambda = if rng.random::<f64>() < 0.25 {
            0.0
        } else {
            2.0 * rng.random::<f64>()
        };
        let r = truncated_prox_preconditioned(c, &a, &y0, Metric::Diagonal(&diag), alpha, lambda)
            .expect("valid instance");
        let (_, best) = prox_oracle(c, &a, &y0, &diag, alpha, lambda);
        let ours = prox_objective(c, &a, &y0, &diag, alpha, lambda, &r.y_plus);
        worst = worst.max((best - ours).abs());
    }
    CheckReport::new(
        "prox-preconditioned",
        instances,
        worst,
        worst <= PROX_TOL,
        format!("max |oracle - closed form| = {worst:.3e}"),
    )
}

/// Two-dimensional instances against an unrestricted grid, confirming that
/// the minimiser lies on the ray the line oracle searches.
pub fn prox_grid_crosscheck(instances: usize, seed: u64) -> CheckReport {
    let mut rng = rng_for(seed, 12);
    let mut worst_excess = f64::NEG_INFINITY;
    for _ in 0..instances {
        let c = 10.0 * rng.random::<f64>() - 5.0;
        let a = nonzero_vec(&mut rng, 2);
        let y0 = vec![normal(&mut rng), normal(&mut rng)];
        let diag = vec![log_uniform(&mut rng, 0.1, 10.0), log_uniform(&mut rng, 0.1, 10.0)];
        let alpha = log_uniform(&mut rng, 0.1, 5.0);
        let lambda = rng.random::<f64>();
        let r = truncated_prox_preconditioned(c, &a, &y0, Metric::Diagonal(&diag), alpha, lambda)
            .expect("valid instance");
        let ours = prox_objective(c, &a, &y0, &diag, alpha, lambda, &r.y_plus);
        let (_, grid) = prox_grid_2d(c, &a, &y0, &diag, alpha, lambda, 400);
        worst_excess = worst_excess.max(ours - grid);
    }
    CheckReport::new(
        "prox-grid-2d",
        instances,
        worst_excess,
        worst_excess <= 1e-10,
        format!("max (closed form - 2-D grid) = {worst_excess:.3e}"),
    )
}

/// `general_step` against the equivalent preconditioned prox problem
/// `c = h − ρ·lb`, `a = d`, `y0 = x`, step `α/ρ`, decay `ρλ`.
pub fn general_step_equivalence(instances: usize, seed: u64) -> CheckReport {
    let mut rng = rng_for(seed, 13);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let dim = rng.random_range(1..=8);
        let beta = 0.99 * rng.random::<f64>();
        let scheme = if rng.random::<bool>() {
            AveragingScheme::normalized(beta)
        } else {
            AveragingScheme::biased(beta)
        }
        .expect("beta in range");
        let mut st = MomentumState::zeroed(dim, scheme);
        for _ in 0..rng.random_range(1..5) {
            let x: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
            let g = nonzero_vec(&mut rng, dim);
            st.update(&x, 3.0 * rng.random::<f64>(), &g).expect("dims match");
        }
        if norm_sq(&st.d) == 0.0 {
            continue;
        }
        let x: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
        let diag: Vec<f64> = (0..dim).map(|_| log_uniform(&mut rng, 0.1, 10.0)).collect();
        let alpha = log_uniform(&mut rng, 1e-2, 10.0);
        let lambda = rng.random::<f64>();
        let lb = 2.0 * normal(&mut rng);
        let g = general_step(&x, &st, Metric::Diagonal(&diag), alpha, lambda, lb).expect("valid step");
        let rho = st.rho();
        let c = st.model_value(&x) - rho * lb;
        let p = truncated_prox_preconditioned(c, &st.d, &x, Metric::Diagonal(&diag), alpha / rho, rho * lambda)
            .expect("valid prox");
        let scale = 1.0 + norm(&x);
        let dev = g
            .x_new
            .iter()
            .zip(&p.y_plus)
            .map(|(u, v)| (u - v).abs() / scale)
            .fold(0.0, f64::max);
        worst = worst.max(dev).max((g.tau - p.tau).abs() / (1.0 + p.tau));
    }
    CheckReport::new(
        "general-step-equivalence",
        instances,
        worst,
        worst <= 1e-12,
        format!("max relative deviation = {worst:.3e}"),
    )
}

/// Bitwise reductions: preconditioned → Euclidean at `λ = 0, D = I`;
/// `general_step` → plain update; `β = 0` MoMo → capped Polyak step.
pub fn reduction_chains(instances: usize, seed: u64) -> CheckReport {
    let mut rng = rng_for(seed, 14);
    let mut failures = Vec::new();
    for i in 0..instances {
        let dim = rng.random_range(1..=8);
        let c = 10.0 * rng.random::<f64>() - 5.0;
        let a = nonzero_vec(&mut rng, dim);
        let y0: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
        let alpha = log_uniform(&mut rng, 1e-2, 10.0);
        let ones = vec![1.0; dim];
        let e = truncated_prox_euclidean(c, &a, &y0, alpha).expect("valid");
        let p = truncated_prox_preconditioned(c, &a, &y0, Metric::Diagonal(&ones), alpha, 0.0).expect("valid");
        if e != p {
            failures.push(format!("prox #{i}"));
        }

        let mut st = MomentumState::warm_started(&y0, c.abs(), &a, AveragingScheme::normalized(0.9).expect("ok"))
            .expect("dims");
        st.update(&y0, c.abs(), &a).expect("dims");
        let lb = normal(&mut rng);
        let g = general_step(&y0, &st, Metric::Identity, alpha, 0.0, lb).expect("valid");
        let tau = momo_tau(st.model_value(&y0), lb, 1.0, alpha, norm_sq(&st.d)).expect("valid");
        let plain: Vec<f64> = y0.iter().zip(&st.d).map(|(x, d)| x - tau * d).collect();
        if g.tau != tau || g.x_new != plain {
            failures.push(format!("general step #{i}"));
        }
    }

    let problem = LeastSquares::interpolating(200, 10, seed).expect("well conditioned");
    let sampler = crate::problems::BatchSampler::new(200, 20, seed, Default::default()).expect("valid");
    let cfg = OptimizerConfig::momo().with_beta(0.0).with_alpha(5.0);
    let mut momo = Momo::plain(cfg).expect("valid");
    let mut x = problem.initial_point();
    for k in 1..=instances as u64 {
        let (loss, grad) = problem.loss_grad(&x, &sampler.sample(k));
        let out = momo.step(StepInput { x: &x, loss, grad: &grad }).expect("valid");
        let tau = 5.0f64.min(loss.max(0.0) / norm_sq(&grad));
        let sps: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi - tau * gi).collect();
        if out.x_new != sps {
            failures.push(format!("polyak step k = {k}"));
        }
        x = out.x_new;
    }
    let n = failures.len();
    CheckReport::new(
        "reduction-chains",
        instances * 3,
        n as f64,
        n == 0,
        if n == 0 {
            "all reductions bitwise".to_string()
        } else {
            format!("{n} failures, first: {}", failures[0])
        },
    )
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Recursive averages against explicit weighted sums for `k ≤ kmax`.
pub fn averaging_exactness(streams: usize, kmax: usize, seed: u64) -> CheckReport {
    let mut rng = rng_for(seed, 15);
    let mut worst: f64 = 0.0;
    for s in 0..streams {
        let dim = rng.random_range(1..=6);
        let beta = 0.99 * rng.random::<f64>();
        let mode = if s % 2 == 0 {
            AveragingMode::Normalized
        } else {
            AveragingMode::Biased
        };
        let history: Vec<Sample> = (0..kmax)
            .map(|_| Sample {
                loss: 5.0 * rng.random::<f64>(),
                grad: (0..dim).map(|_| normal(&mut rng)).collect(),
                x: (0..dim).map(|_| normal(&mut rng)).collect(),
            })
            .collect();
        let scheme = AveragingScheme::new(mode, beta).expect("beta in range");
        let mut st = match mode {
            AveragingMode::Normalized => {
                MomentumState::warm_started(&history[0].x, history[0].loss, &history[0].grad, scheme)
                    .expect("dims")
            }
            AveragingMode::Biased => MomentumState::zeroed(dim, scheme),
        };
        for (k, smp) in history.iter().enumerate() {
            st.update(&smp.x, smp.loss, &smp.grad).expect("dims");
            let e = explicit_averages(&history, mode, beta, k + 1);
            worst = worst
                .max(rel(st.f_bar, e.f_bar))
                .max(rel(st.gamma, e.gamma))
                .max(rel(st.rho(), e.rho));
            for (u, v) in st.d.iter().zip(&e.d) {
                worst = worst.max(rel(*u, *v));
            }
        }
    }
    CheckReport::new(
        "averaging-exactness",
        streams,
        worst,
        worst <= AVERAGING_TOL,
        format!("max relative deviation = {worst:.3e} over k <= {kmax}"),
    )
}

fn grad_rel_error(p: &dyn Problem, x: &[f64], batch: &[usize]) -> f64 {
    let g = p.grad(x, batch);
    let fd = fd_gradient(p, x, batch, 1e-6);
    let diff: Vec<f64> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(&g).max(1e-8)
}

/// Finite-difference checks: 10 points for the convex problems (`1e-5`),
/// 5 points for each MLP activation (`1e-4`).
pub fn gradient_checks(seed: u64) -> CheckReport {
    let mut rng = rng_for(seed, 16);
    let mut worst_convex: f64 = 0.0;
    let mut worst_mlp: f64 = 0.0;
    let mut cases = 0;
    let convex: Vec<Box<dyn Problem>> = vec![
        Box::new(LeastSquares::interpolating(200, 10, seed).expect("ok")),
        Box::new(LeastSquares::noisy(200, 10, seed, 0.1).expect("ok")),
        Box::new(LogReg::new(200, 10, seed, false).expect("ok")),
        Box::new(LogReg::new(200, 10, seed, true).expect("ok")),
    ];
    for p in &convex {
        for _ in 0..10 {
            let x: Vec<f64> = (0..p.dim()).map(|_| normal(&mut rng)).collect();
            let batch: Vec<usize> = (0..20).map(|_| rng.random_range(0..p.n_samples())).collect();
            worst_convex = worst_convex.max(grad_rel_error(p.as_ref(), &x, &batch));
            cases += 1;
        }
    }
    for act in [Activation::Tanh, Activation::Relu] {
        let p = Mlp::new(&[8, 12, 10, 4], 100, seed, act).expect("ok");
        for _ in 0..5 {
            let x: Vec<f64> = (0..p.dim()).map(|_| 0.5 * normal(&mut rng)).collect();
            let batch: Vec<usize> = (0..10).map(|_| rng.random_range(0..p.n_samples())).collect();
            worst_mlp = worst_mlp.max(grad_rel_error(&p, &x, &batch));
            cases += 1;
        }
    }
    CheckReport::new(
        "gradients",
        cases,
        worst_convex.max(worst_mlp),
        worst_convex <= 1e-5 && worst_mlp <= 1e-4,
        format!("max relative error: convex {worst_convex:.3e}, mlp {worst_mlp:.3e}"),
    )
}

/// Outcome of [`lower_bound_validity`].
#[derive(Debug, Clone, PartialEq)]
pub struct LowerBoundValidity {
    pub steps: usize,
    /// Steps where the exact bound exceeds `f̄_*^k` by more than `1e-9`.
    pub exact_violations: usize,
    pub exact_max_excess: f64,
    /// Steps where the online estimate exceeds `f̄_*^k`.
    pub bootstrap_exceed: usize,
    pub bootstrap_max_excess: f64,
}

/// Runs an online-bound MoMo on `config` (which must use a convex problem with
/// known `x*` and the identity metric) and compares both the production
/// estimate and the exact bound against the exact `f̄_*^k`.
pub fn lower_bound_validity(config: &RunConfig) -> Result<LowerBoundValidity, HarnessError> {
    let problem = config.problem.build()?;
    let x_star = problem
        .x_star()
        .ok_or_else(|| HarnessError::Config("lower-bound validity needs a known x*".into()))?
        .to_vec();
    let mut samples = Vec::new();
    let mut taus = Vec::new();
    let mut fstar_samples = Vec::new();
    let mut estimates = Vec::new();
    let mut metrics: Vec<Vec<f64>> = Vec::new();
    let summary = run_with(problem.as_ref(), config, |ev| {
        samples.push(Sample {
            loss: ev.loss,
            grad: ev.grad.to_vec(),
            x: ev.x.to_vec(),
        });
        taus.push(ev.record.tau);
        fstar_samples.push(problem.loss(&x_star, ev.batch));
        estimates.push(ev.record.lb_next);
        metrics.push(ev.metric.map_or_else(|| vec![1.0; ev.x.len()], <[f64]>::to_vec));
    })?;
    if let Some(k) = summary.diverged_at {
        return Err(HarnessError::Diverged { k });
    }
    let mode = match config.optimizer {
        OptimizerKind::Momo | OptimizerKind::MomoStar | OptimizerKind::Sgdm => AveragingMode::Normalized,
        _ => AveragingMode::Biased,
    };
    let beta = config.optim.beta1;
    let exact = exact_lower_bound(
        &BoundHistory {
            samples: &samples,
            taus: &taus,
            metrics: Some(&metrics),
            fstar_samples: &fstar_samples,
            mode,
            beta,
        },
        &x_star,
    );
    let mut out = LowerBoundValidity {
        steps: samples.len(),
        exact_violations: 0,
        exact_max_excess: f64::NEG_INFINITY,
        bootstrap_exceed: 0,
        bootstrap_max_excess: f64::NEG_INFINITY,
    };
    for k in 0..samples.len() {
        let fbar = exact_fstar_bar(&fstar_samples, mode, beta, k + 1);
        let ex = exact[k] - fbar;
        out.exact_max_excess = out.exact_max_excess.max(ex);
        if ex > 1e-9 {
            out.exact_violations += 1;
        }
        let bs = estimates[k] - fbar;
        out.bootstrap_max_excess = out.bootstrap_max_excess.max(bs);
        if bs > 0.0 {
            out.bootstrap_exceed += 1;
        }
    }
    Ok(out)
}

/// The configuration used for the lower-bound validity check: MoMo with the
/// online bound, `α = 1`, `β = 0.9`, `lb_1 = −10`, on the interpolating
/// least-squares problem.
pub fn lower_bound_validity_config(steps: u64, seed: u64) -> RunConfig {
    RunConfig {
        problem: ProblemSpec {
            kind: ProblemKind::LeastSquares,
            seed,
            ..ProblemSpec::default()
        },
        optimizer: OptimizerKind::MomoStar,
        optim: OptimizerConfig::momo().with_lb(LowerBoundMode::Online, -10.0),
        iterations: steps,
        seed,
        ..RunConfig::default()
    }
}

/// Every suite at its default size.
pub fn run_all(seed: u64, instances: usize) -> Vec<CheckReport> {
    let mut reports = vec![
        prox_euclidean(instances, seed),
        prox_preconditioned(instances, seed),
        prox_grid_crosscheck(20.min(instances), seed),
        general_step_equivalence(instances, seed),
        reduction_chains(100.min(instances), seed),
        averaging_exactness(50, 20, seed),
        gradient_checks(seed),
    ];
    let lb = match lower_bound_validity(&lower_bound_validity_config(500, seed)) {
        Ok(v) => CheckReport::new(
            "lower-bound-validity",
            v.steps,
            v.exact_max_excess,
            v.exact_violations == 0
                && (v.bootstrap_exceed as f64) < 0.05 * v.steps as f64
                && v.bootstrap_max_excess <= 1e-3,
            format!(
                "exact bound violations {}, online estimate above target on {} of {} steps (max excess {:.3e})",
                v.exact_violations, v.bootstrap_exceed, v.steps, v.bootstrap_max_excess
            ),
        ),
        Err(e) => CheckReport::new("lower-bound-validity", 0, f64::NAN, false, e.to_string()),
    };
    reports.push(lb);
    reports
}

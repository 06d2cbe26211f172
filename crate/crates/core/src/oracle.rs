//! Brute-force references for the closed forms elsewhere in the crate.
//!
//! Nothing here calls into [`crate::model`], [`crate::lowerbound`] or
//! [`crate::optimizers`]: prox problems are solved by grid search, averages
//! by explicit weighted sums, gradients by central differences.

use crate::model::AveragingMode;
use crate::problems::Problem;

/// Grid points along the prox ray.
pub const PROX_GRID_POINTS: usize = 10_000;
/// Golden-section refinement stops once the bracket is this narrow.
pub const GOLDEN_TOL: f64 = 1e-10;
/// The ray is searched over `t ∈ [0, PROX_RANGE_FACTOR · α]`.
pub const PROX_RANGE_FACTOR: f64 = 3.0;

/// `(c + ⟨a, y − y0⟩)₊ + ‖y − y0‖²_D / (2α) + λ/2 ‖y‖²_D`.
pub fn prox_objective(c: f64, a: &[f64], y0: &[f64], diag: &[f64], alpha: f64, lambda: f64, y: &[f64]) -> f64 {
    let mut lin = c;
    let mut prox = 0.0;
    let mut reg = 0.0;
    for i in 0..y.len() {
        let dy = y[i] - y0[i];
        lin += a[i] * dy;
        prox += diag[i] * dy * dy;
        reg += diag[i] * y[i] * y[i];
    }
    lin.max(0.0) + prox / (2.0 * alpha) + 0.5 * lambda * reg
}

fn ray_point(a: &[f64], y0: &[f64], diag: &[f64], alpha: f64, lambda: f64, t: f64) -> Vec<f64> {
    let shrink = 1.0 + lambda * alpha;
    (0..y0.len()).map(|i| (y0[i] - t * a[i] / diag[i]) / shrink).collect()
}

/// Minimises the prox objective over `y(t) = (y0 − t D⁻¹a) / (1 + λα)`,
/// `t ∈ [0, 3α]`, by a [`PROX_GRID_POINTS`]-point grid followed by
/// golden-section search on the best bracket. Returns `(y_best, value)`.
pub fn prox_oracle(c: f64, a: &[f64], y0: &[f64], diag: &[f64], alpha: f64, lambda: f64) -> (Vec<f64>, f64) {
    let (t, value) = prox_oracle_t(c, a, y0, diag, alpha, lambda);
    (ray_point(a, y0, diag, alpha, lambda, t), value)
}

/// As [`prox_oracle`] but returns the ray parameter `t` instead of the point.
pub fn prox_oracle_t(c: f64, a: &[f64], y0: &[f64], diag: &[f64], alpha: f64, lambda: f64) -> (f64, f64) {
    let obj = |t: f64| prox_objective(c, a, y0, diag, alpha, lambda, &ray_point(a, y0, diag, alpha, lambda, t));
    let hi = PROX_RANGE_FACTOR * alpha;
    let step = hi / (PROX_GRID_POINTS - 1) as f64;
    let mut best = (0usize, obj(0.0));
    for i in 1..PROX_GRID_POINTS {
        let v = obj(i as f64 * step);
        if v < best.1 {
            best = (i, v);
        }
    }
    let lo_t = best.0.saturating_sub(1) as f64 * step;
    let hi_t = ((best.0 + 1).min(PROX_GRID_POINTS - 1)) as f64 * step;
    let (t_ref, v_ref) = golden_section(obj, lo_t, hi_t, GOLDEN_TOL);
    let grid_t = best.0 as f64 * step;
    if v_ref < best.1 {
        (t_ref, v_ref)
    } else {
        (grid_t, best.1)
    }
}

/// Golden-section minimisation of a unimodal `f` on `[lo, hi]`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    let mid = 0.5 * (lo + hi);
    let candidates = [(mid, f(mid)), (x1, f1), (x2, f2), (lo, f(lo)), (hi, f(hi))];
    candidates
        .into_iter()
        .fold((mid, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b })
}

/// Exhaustive search over a `points × points` grid in two dimensions, with
/// three rounds of zooming into the best cell. The initial box covers the
/// segment `y(t)`, `t ∈ [0, 3α]`, padded on every side by its own extent
/// (at least one unit).
pub fn prox_grid_2d(
    c: f64,
    a: &[f64],
    y0: &[f64],
    diag: &[f64],
    alpha: f64,
    lambda: f64,
    points: usize,
) -> (Vec<f64>, f64) {
    assert_eq!(y0.len(), 2, "prox_grid_2d works in two dimensions");
    let p0 = ray_point(a, y0, diag, alpha, lambda, 0.0);
    let p1 = ray_point(a, y0, diag, alpha, lambda, PROX_RANGE_FACTOR * alpha);
    let mut lo = [0.0; 2];
    let mut hi = [0.0; 2];
    for i in 0..2 {
        let (l, h) = (p0[i].min(p1[i]), p0[i].max(p1[i]));
        let pad = (h - l).max(1.0);
        lo[i] = l - pad;
        hi[i] = h + pad;
    }
    let obj = |y: &[f64]| prox_objective(c, a, y0, diag, alpha, lambda, y);
    let mut best = (vec![y0[0], y0[1]], obj(y0));
    for _round in 0..4 {
        let step = [(hi[0] - lo[0]) / (points - 1) as f64, (hi[1] - lo[1]) / (points - 1) as f64];
        for i in 0..points {
            for j in 0..points {
                let y = [lo[0] + i as f64 * step[0], lo[1] + j as f64 * step[1]];
                let v = obj(&y);
                if v < best.1 {
                    best = (y.to_vec(), v);
                }
            }
        }
        for k in 0..2 {
            lo[k] = best.0[k] - 2.0 * step[k];
            hi[k] = best.0[k] + 2.0 * step[k];
        }
    }
    best
}

/// Central differences of `f` at `x`.
pub fn fd_gradient_fn(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let fp = f(&probe);
            probe[i] = orig - h;
            let fm = f(&probe);
            probe[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Central differences of a problem's batch loss.
pub fn fd_gradient(problem: &dyn Problem, x: &[f64], batch: &[usize], h: f64) -> Vec<f64> {
    fd_gradient_fn(|y| problem.loss(y, batch), x, h)
}

/// `ρ_{j,k}` for `j = 1..=k`, from the explicit formula.
///
/// Normalized (warm-started): `ρ_{1,k} = β^{k−1}`, `ρ_{j,k} = (1−β)β^{k−j}`
/// for `j ≥ 2`. Biased: `ρ_{j,k} = (1−β)β^{k−j}`.
pub fn averaging_weights(mode: AveragingMode, beta: f64, k: usize) -> Vec<f64> {
    let power = |e: usize| (0..e).fold(1.0, |acc, _| acc * beta);
    (1..=k)
        .map(|j| match mode {
            AveragingMode::Normalized if j == 1 => power(k - 1),
            _ => (1.0 - beta) * power(k - j),
        })
        .collect()
}

/// One recorded sample: loss and gradient evaluated at the iterate `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitAverages {
    pub d: Vec<f64>,
    pub f_bar: f64,
    pub gamma: f64,
    pub rho: f64,
}

/// Weighted sums over the first `k` samples of `history`.
pub fn explicit_averages(history: &[Sample], mode: AveragingMode, beta: f64, k: usize) -> ExplicitAverages {
    assert!(k >= 1 && k <= history.len(), "k must lie in 1..=history length");
    let w = averaging_weights(mode, beta, k);
    let dim = history[0].grad.len();
    let mut d = vec![0.0; dim];
    let mut f_bar = 0.0;
    let mut gamma = 0.0;
    for (s, wj) in history[..k].iter().zip(&w) {
        f_bar += wj * s.loss;
        let mut gx = 0.0;
        for ((di, gi), xi) in d.iter_mut().zip(&s.grad).zip(&s.x) {
            *di += wj * gi;
            gx += gi * xi;
        }
        gamma += wj * gx;
    }
    ExplicitAverages {
        d,
        f_bar,
        gamma,
        rho: w.iter().sum(),
    }
}

/// `f̄_*^k = ρ_k⁻¹ Σ_l ρ_{l,k} f(x*, s_l)` given `f(x*, s_l)` for each step.
pub fn exact_fstar_bar(fstar_samples: &[f64], mode: AveragingMode, beta: f64, k: usize) -> f64 {
    let w = averaging_weights(mode, beta, k);
    let rho: f64 = w.iter().sum();
    w.iter().zip(fstar_samples).map(|(wj, f)| wj * f).sum::<f64>() / rho
}

/// Everything the exact bound needs about a run.
#[derive(Debug, Clone)]
pub struct BoundHistory<'a> {
    pub samples: &'a [Sample],
    /// `τ_j` actually taken.
    pub taus: &'a [f64],
    /// Metric `D_j` per step; `None` for the identity.
    pub metrics: Option<&'a [Vec<f64>]>,
    /// `f(x*, s_j)` per step.
    pub fstar_samples: &'a [f64],
    pub mode: AveragingMode,
    pub beta: f64,
}

/// Non-bootstrapped bound, for each `k = 1..=K`:
///
/// ```text
/// lb_{k+1} = [Σ_{j≤k} 2η_jτ_j(h_j − ½τ_j‖d_j‖²_{D_j⁻¹}) − ‖x¹ − x*‖²_{D_1}
///             − 2 Σ_{j<k} η_jτ_jρ_j f̄_*^j] / (2η_kτ_kρ_k)
/// ```
///
/// `h_j`, `d_j` and `ρ_j` are rebuilt from explicit sums. Entries with
/// `τ_k = 0` are `−∞`.
pub fn exact_lower_bound(history: &BoundHistory<'_>, x_star: &[f64]) -> Vec<f64> {
    let kmax = history.taus.len();
    let dim = x_star.len();
    let metric = |j: usize| -> Vec<f64> {
        history
            .metrics
            .map_or_else(|| vec![1.0; dim], |m| m[j].clone())
    };
    let x1 = &history.samples[0].x;
    let d1 = metric(0);
    let dist0: f64 = (0..dim).map(|i| d1[i] * (x1[i] - x_star[i]).powi(2)).sum();

    let mut eta = 1.0;
    let mut prev_metric = d1;
    let mut gain_sum = 0.0;
    let mut fstar_sum = 0.0;
    let mut out = Vec::with_capacity(kmax);
    for j in 0..kmax {
        let m = metric(j);
        if j > 0 {
            let ratio = (0..dim).map(|i| prev_metric[i] / m[i]).fold(f64::INFINITY, f64::min);
            eta *= ratio;
        }
        let avg = explicit_averages(history.samples, history.mode, history.beta, j + 1);
        let x = &history.samples[j].x;
        let dx: f64 = (0..dim).map(|i| avg.d[i] * x[i]).sum();
        let h = avg.f_bar + dx - avg.gamma;
        let n: f64 = (0..dim).map(|i| avg.d[i] * avg.d[i] / m[i]).sum();
        let tau = history.taus[j];
        gain_sum += 2.0 * eta * tau * (h - 0.5 * tau * n);
        let denom = 2.0 * eta * tau * avg.rho;
        out.push(if denom > 0.0 {
            (gain_sum - dist0 - fstar_sum) / denom
        } else {
            f64::NEG_INFINITY
        });
        let fbar = exact_fstar_bar(history.fstar_samples, history.mode, history.beta, j + 1);
        fstar_sum += 2.0 * eta * tau * avg.rho * fbar;
        prev_metric = m;
    }
    out
}

//! Truncated-model algebra shared by every MoMo variant.
//!
//! A MoMo step minimises
//!
//! ```text
//! max{ ρ⁻¹(h + ⟨d, y − x⟩), lb } + λ/2 ‖y‖²_D + 1/(2α) ‖y − x‖²_D
//! ```
//!
//! where `d`, `f̄`, `γ` are exponential averages of sampled gradients, losses
//! and gradient/iterate inner products, and `h = f̄ + ⟨d, x⟩ − γ` is the
//! averaged linear model evaluated at the current iterate. The closed forms
//! below solve that problem; [`crate::oracle`] certifies them by brute force.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::vecops::{dot, norm_sq, positive_part};

/// How the averaging weights `ρ_{j,k}` are normalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AveragingMode {
    /// Weights sum to one (`ρ_k = 1`); the state must be warm-started from the
    /// first sample.
    Normalized,
    /// Adam-style weights `(1 − β) β^{k−j}` with `ρ_k = 1 − β^k`; the state
    /// starts at zero.
    Biased,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AveragingScheme {
    pub mode: AveragingMode,
    pub beta: f64,
}

impl AveragingScheme {
    pub fn new(mode: AveragingMode, beta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(invalid("beta", format!("must lie in [0, 1), got {beta}")));
        }
        Ok(Self { mode, beta })
    }

    pub fn normalized(beta: f64) -> Result<Self> {
        Self::new(AveragingMode::Normalized, beta)
    }

    pub fn biased(beta: f64) -> Result<Self> {
        Self::new(AveragingMode::Biased, beta)
    }

    /// Total weight `ρ_k = Σ_j ρ_{j,k}` after `k ≥ 1` updates.
    pub fn rho(&self, k: u64) -> f64 {
        match self.mode {
            AveragingMode::Normalized => 1.0,
            AveragingMode::Biased => 1.0 - pow_k(self.beta, k),
        }
    }
}

pub(crate) fn pow_k(base: f64, k: u64) -> f64 {
    match i32::try_from(k) {
        Ok(k) => base.powi(k),
        Err(_) => base.powf(k as f64),
    }
}

/// One exponential-averaging step: `(1 − β)·new + β·prev`.
#[inline]
pub fn ewa_update(prev: f64, new: f64, beta: f64) -> f64 {
    (1.0 - beta) * new + beta * prev
}

/// In-place vector form of [`ewa_update`].
pub fn ewa_update_slice(prev: &mut [f64], new: &[f64], beta: f64) {
    debug_assert_eq!(prev.len(), new.len());
    for (p, n) in prev.iter_mut().zip(new) {
        *p = ewa_update(*p, *n, beta);
    }
}

/// The averaged triple `(d_k, f̄_k, γ_k)` that defines the momentum model.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState {
    /// Gradient average `d_k`.
    pub d: Vec<f64>,
    /// Loss average `f̄_k`.
    pub f_bar: f64,
    /// Average of `⟨∇f(x^j, s_j), x^j⟩`.
    pub gamma: f64,
    /// Number of updates applied so far.
    pub k: u64,
    pub scheme: AveragingScheme,
}

impl MomentumState {
    pub fn zeroed(dim: usize, scheme: AveragingScheme) -> Self {
        Self {
            d: vec![0.0; dim],
            f_bar: 0.0,
            gamma: 0.0,
            k: 0,
            scheme,
        }
    }

    /// Initialises `f̄_0 = f(x¹, s₁)`, `d_0 = ∇f(x¹, s₁)`, `γ_0 = ⟨d_0, x¹⟩`.
    pub fn warm_started(x: &[f64], loss: f64, grad: &[f64], scheme: AveragingScheme) -> Result<Self> {
        check_dim(x.len(), grad.len())?;
        Ok(Self {
            d: grad.to_vec(),
            f_bar: loss,
            gamma: dot(grad, x),
            k: 0,
            scheme,
        })
    }

    pub fn dim(&self) -> usize {
        self.d.len()
    }

    /// Folds one sample `(f(x^k, s_k), ∇f(x^k, s_k))` taken at `x^k` into the
    /// averages and advances `k`.
    pub fn update(&mut self, x: &[f64], loss: f64, grad: &[f64]) -> Result<()> {
        check_dim(self.dim(), x.len())?;
        check_dim(self.dim(), grad.len())?;
        let beta = self.scheme.beta;
        self.f_bar = ewa_update(self.f_bar, loss, beta);
        self.gamma = ewa_update(self.gamma, dot(grad, x), beta);
        ewa_update_slice(&mut self.d, grad, beta);
        self.k += 1;
        Ok(())
    }

    pub fn rho(&self) -> f64 {
        self.scheme.rho(self.k)
    }

    /// `h_k = f̄_k + ⟨d_k, x⟩ − γ_k`.
    ///
    /// The inner product and `γ_k` are combined first; with `β = 0` they
    /// cancel exactly and `h_k` equals the sampled loss bit for bit.
    pub fn model_value(&self, x: &[f64]) -> f64 {
        self.f_bar + (dot(&self.d, x) - self.gamma)
    }

    /// `h_k^λ = (1 + αλ)(f̄_k − γ_k) + ⟨d_k, x⟩`, the quantity the reset test
    /// compares against.
    pub fn model_value_with_decay(&self, x: &[f64], alpha: f64, lambda: f64) -> f64 {
        (1.0 + alpha * lambda) * (self.f_bar - self.gamma) + dot(&self.d, x)
    }
}

/// A positive diagonal metric `D`; `Identity` avoids the divisions.
#[derive(Debug, Clone, Copy)]
pub enum Metric<'a> {
    Identity,
    Diagonal(&'a [f64]),
}

impl Metric<'_> {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if let Metric::Diagonal(diag) = self {
            check_dim(dim, diag.len())?;
            if let Some((index, &value)) = diag.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
                return Err(Error::NonPositiveMetric { index, value });
            }
        }
        Ok(())
    }

    /// `‖v‖²_{D⁻¹}`.
    pub fn dual_norm_sq(&self, v: &[f64]) -> f64 {
        match self {
            Metric::Identity => norm_sq(v),
            Metric::Diagonal(diag) => v
                .iter()
                .zip(diag.iter())
                .fold(0.0, |acc, (x, w)| acc + x * x / w),
        }
    }

    /// `‖v‖²_D`.
    pub fn norm_sq(&self, v: &[f64]) -> f64 {
        match self {
            Metric::Identity => norm_sq(v),
            Metric::Diagonal(diag) => v
                .iter()
                .zip(diag.iter())
                .fold(0.0, |acc, (x, w)| acc + w * x * x),
        }
    }

    /// `(D⁻¹ v)_i`.
    #[inline]
    pub fn inv_apply(&self, i: usize, v_i: f64) -> f64 {
        match self {
            Metric::Identity => v_i,
            Metric::Diagonal(diag) => v_i / diag[i],
        }
    }

    pub fn to_vec(&self, dim: usize) -> Vec<f64> {
        match self {
            Metric::Identity => vec![1.0; dim],
            Metric::Diagonal(diag) => diag.to_vec(),
        }
    }
}

/// Which branch of the truncated prox solution was taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProxCase {
    /// The linear piece is already below the truncation (`c < 0`): no move.
    Inactive,
    /// The full step `β` still leaves the model positive.
    CapActive,
    /// The step lands exactly on the kink of the positive part.
    Exact,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxResult {
    pub y_plus: Vec<f64>,
    pub tau: f64,
    /// Value of the positive-part term at `y_plus`.
    pub model_value: f64,
    pub case: ProxCase,
}

fn classify(numerator: f64, ratio: f64, cap: f64) -> ProxCase {
    if numerator < 0.0 {
        ProxCase::Inactive
    } else if ratio > cap {
        ProxCase::CapActive
    } else {
        ProxCase::Exact
    }
}

/// `min{a, b}` that propagates NaN from either side.
#[inline]
pub(crate) fn min_nan(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.min(b)
    }
}

/// Solves `argmin_y (c + ⟨a, y − y0⟩)₊ + ‖y − y0‖² / (2β)`.
pub fn truncated_prox_euclidean(c: f64, a: &[f64], y0: &[f64], beta: f64) -> Result<ProxResult> {
    check_dim(a.len(), y0.len())?;
    if !(beta > 0.0) {
        return Err(invalid("beta", format!("must be positive, got {beta}")));
    }
    let a_sq = norm_sq(a);
    if a_sq == 0.0 {
        return Err(Error::ZeroDirection);
    }
    let ratio = positive_part(c) / a_sq;
    let tau = min_nan(beta, ratio);
    let y_plus = y0.iter().zip(a).map(|(y, ai)| y - tau * ai).collect();
    Ok(ProxResult {
        y_plus,
        tau,
        model_value: positive_part(c - tau * a_sq),
        case: classify(c, ratio, beta),
    })
}

/// Solves
/// `argmin_y (c + ⟨a, y − y0⟩)₊ + ‖y − y0‖²_D / (2α) + λ/2 ‖y‖²_D`
/// for a positive diagonal `D`.
///
/// With `λ = 0` and `D = I` this returns exactly what
/// [`truncated_prox_euclidean`] returns for `β = α`.
pub fn truncated_prox_preconditioned(
    c: f64,
    a: &[f64],
    y0: &[f64],
    metric: Metric<'_>,
    alpha: f64,
    lambda: f64,
) -> Result<ProxResult> {
    check_dim(a.len(), y0.len())?;
    metric.validate(a.len())?;
    if !(alpha > 0.0) {
        return Err(invalid("alpha", format!("must be positive, got {alpha}")));
    }
    if !(lambda >= 0.0) {
        return Err(invalid("lambda", format!("must be non-negative, got {lambda}")));
    }
    if norm_sq(a) == 0.0 {
        return Err(Error::ZeroDirection);
    }
    let a_dual = metric.dual_norm_sq(a);
    let la = lambda * alpha;
    let shrink = 1.0 + la;
    let a_y0 = dot(a, y0);
    let numerator = shrink * c - la * a_y0;
    let ratio = positive_part(numerator) / a_dual;
    let tau = min_nan(alpha, ratio);
    let y_plus = y0
        .iter()
        .zip(a)
        .enumerate()
        .map(|(i, (y, ai))| (y - tau * metric.inv_apply(i, *ai)) / shrink)
        .collect();
    let model_value = positive_part(c - (la / shrink) * a_y0 - (tau / shrink) * a_dual);
    Ok(ProxResult {
        y_plus,
        tau,
        model_value,
        case: classify(numerator, ratio, alpha),
    })
}

/// Adaptive step `τ = min{α/ρ, (h − ρ·lb)₊ / ‖d‖²}`.
pub fn momo_tau(h: f64, lb: f64, rho: f64, alpha: f64, d_norm_sq: f64) -> Result<f64> {
    if !(d_norm_sq > 0.0) {
        return Err(Error::ZeroDirection);
    }
    if !(rho > 0.0) {
        return Err(invalid("rho", format!("must be positive, got {rho}")));
    }
    if !(alpha >= 0.0) {
        return Err(invalid("alpha", format!("must be non-negative, got {alpha}")));
    }
    Ok(min_nan(alpha / rho, positive_part(h - rho * lb) / d_norm_sq))
}

/// How weight decay enters the parameter update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecayStyle {
    /// `x⁺ = (x − τ D⁻¹ d) / (1 + αλ)`, the exact prox solution.
    #[default]
    ExactDivision,
    /// `x⁺ = (1 − αλ) x − τ D⁻¹ d`, the AdamW-style first-order approximation.
    DecoupledTaylor,
}

/// Output of [`general_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralStep {
    pub x_new: Vec<f64>,
    pub tau: f64,
    /// Uncapped adaptive term; `+∞` when `d_k = 0`.
    pub zeta: f64,
    /// `h_k` at the current iterate.
    pub h: f64,
    /// `‖d_k‖²_{D⁻¹}`.
    pub d_norm_sq: f64,
}

impl GeneralStep {
    pub fn is_zero_direction(&self) -> bool {
        self.d_norm_sq == 0.0
    }
}

/// The preconditioned, weight-decayed MoMo update:
///
/// ```text
/// ζ = ((1+αλ)(f̄ − ρ·lb − γ) + ⟨d, x⟩)₊ / ‖d‖²_{D⁻¹}
/// τ = min{α/ρ, ζ}
/// x⁺ = (x − τ D⁻¹ d) / (1 + αλ)
/// ```
///
/// A zero gradient average skips the step: `x⁺ = x / (1 + αλ)`, `τ = 0`,
/// `ζ = +∞`.
pub fn general_step(
    x: &[f64],
    state: &MomentumState,
    metric: Metric<'_>,
    alpha: f64,
    lambda: f64,
    lb: f64,
) -> Result<GeneralStep> {
    check_dim(state.dim(), x.len())?;
    metric.validate(x.len())?;
    // α = 0 is allowed so decaying schedules may reach zero; the step is then τ = 0.
    if !(alpha >= 0.0) {
        return Err(invalid("alpha", format!("must be non-negative, got {alpha}")));
    }
    if !(lambda >= 0.0) {
        return Err(invalid("lambda", format!("must be non-negative, got {lambda}")));
    }
    let rho = state.rho();
    if !(rho > 0.0) {
        return Err(invalid("rho", format!("must be positive, got {rho} (k = {})", state.k)));
    }
    let la = alpha * lambda;
    let shrink = 1.0 + la;
    let dx = dot(&state.d, x);
    let h = state.f_bar + (dx - state.gamma);
    let d_norm_sq = metric.dual_norm_sq(&state.d);

    if d_norm_sq == 0.0 {
        log::debug!("zero momentum direction at k = {}; skipping step", state.k);
        return Ok(GeneralStep {
            x_new: x.iter().map(|v| v / shrink).collect(),
            tau: 0.0,
            zeta: f64::INFINITY,
            h,
            d_norm_sq,
        });
    }

    // (1+αλ)(h − ρ·lb) − αλ⟨d,x⟩ is the ζ numerator rearranged so that λ = 0
    // leaves h − ρ·lb untouched.
    let numerator = shrink * (h - rho * lb) - la * dx;
    let zeta = positive_part(numerator) / d_norm_sq;
    let tau = min_nan(alpha / rho, zeta);
    let x_new = x
        .iter()
        .zip(&state.d)
        .enumerate()
        .map(|(i, (xi, di))| (xi - tau * metric.inv_apply(i, *di)) / shrink)
        .collect();
    Ok(GeneralStep {
        x_new,
        tau,
        zeta,
        h,
        d_norm_sq,
    })
}

/// `x⁺ = (1 − αλ) x − τ D⁻¹ d`.
pub fn decoupled_update(x: &[f64], d: &[f64], metric: Metric<'_>, tau: f64, alpha: f64, lambda: f64) -> Vec<f64> {
    let keep = 1.0 - alpha * lambda;
    x.iter()
        .zip(d)
        .enumerate()
        .map(|(i, (xi, di))| keep * xi - tau * metric.inv_apply(i, *di))
        .collect()
}

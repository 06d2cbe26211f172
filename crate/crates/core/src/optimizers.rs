//! Stateful steppers behind one interface.
//!
//! | kind             | averaging           | metric      | lower bound        |
//! |------------------|---------------------|-------------|--------------------|
//! | `momo`           | normalized, warm    | identity    | as configured      |
//! | `momo-bias`      | biased, zero init   | identity    | as configured      |
//! | `momo-adam`      | biased, zero init   | Adam `D_k`  | as configured      |
//! | `momo-star`      | normalized, warm    | identity    | online             |
//! | `momo-adam-star` | biased, zero init   | Adam `D_k`  | online             |
//! | `sgdm`           | normalized, warm    | identity    | none (`τ = α`)     |
//! | `adamw`          | biased, zero init   | Adam `D_k`  | none (`τ = α/ρ`)   |
//!
//! Each MoMo iteration runs: update averages, reset the lower bound if it
//! would zero the step, take the step, then re-estimate the lower bound.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::lowerbound::{LowerBoundMode, LowerBoundState};
use crate::model::{
    decoupled_update, ewa_update, ewa_update_slice, general_step, pow_k, AveragingScheme, DecayStyle,
    Metric, MomentumState,
};

/// Learning-rate schedule `α_k`, indexed from `k = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Schedule {
    Constant {
        alpha: f64,
    },
    /// `α γ^{k−1}`.
    Exponential {
        alpha: f64,
        gamma: f64,
    },
    /// Linear warmup over `warmup` steps, then cosine decay to `floor` at `total`.
    WarmupCosine {
        alpha: f64,
        warmup: u64,
        total: u64,
        #[serde(default)]
        floor: f64,
    },
    /// Linear warmup, then `α sqrt(warmup / k)`.
    WarmupInvSqrt {
        alpha: f64,
        warmup: u64,
    },
}

impl Schedule {
    pub fn constant(alpha: f64) -> Self {
        Schedule::Constant { alpha }
    }

    pub fn base_alpha(&self) -> f64 {
        match *self {
            Schedule::Constant { alpha }
            | Schedule::Exponential { alpha, .. }
            | Schedule::WarmupCosine { alpha, .. }
            | Schedule::WarmupInvSqrt { alpha, .. } => alpha,
        }
    }

    pub fn with_base_alpha(mut self, value: f64) -> Self {
        match &mut self {
            Schedule::Constant { alpha }
            | Schedule::Exponential { alpha, .. }
            | Schedule::WarmupCosine { alpha, .. }
            | Schedule::WarmupInvSqrt { alpha, .. } => *alpha = value,
        }
        self
    }

    pub fn name(&self) -> &'static str {
        match self {
            Schedule::Constant { .. } => "const",
            Schedule::Exponential { .. } => "exp",
            Schedule::WarmupCosine { .. } => "warmup-cosine",
            Schedule::WarmupInvSqrt { .. } => "warmup-invsqrt",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let alpha = self.base_alpha();
        if !(alpha > 0.0) || alpha.is_nan() {
            return Err(invalid("alpha", format!("must be positive, got {alpha}")));
        }
        match *self {
            Schedule::Exponential { gamma, .. } if !(gamma > 0.0 && gamma <= 1.0) => {
                Err(invalid("gamma", format!("must lie in (0, 1], got {gamma}")))
            }
            Schedule::WarmupCosine { warmup, total, floor, .. } => {
                if total <= warmup {
                    Err(invalid("total", format!("must exceed warmup ({warmup}), got {total}")))
                } else if !(floor >= 0.0 && floor < alpha) {
                    Err(invalid("floor", format!("must lie in [0, alpha), got {floor}")))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// `α_k` for `k ≥ 1`.
    pub fn alpha(&self, k: u64) -> f64 {
        let k = k.max(1);
        match *self {
            Schedule::Constant { alpha } => alpha,
            Schedule::Exponential { alpha, gamma } => alpha * pow_k(gamma, k - 1),
            Schedule::WarmupCosine {
                alpha,
                warmup,
                total,
                floor,
            } => {
                if k <= warmup {
                    alpha * k as f64 / warmup as f64
                } else {
                    let progress = ((k - warmup) as f64 / (total - warmup) as f64).min(1.0);
                    floor + 0.5 * (alpha - floor) * (1.0 + (std::f64::consts::PI * progress).cos())
                }
            }
            Schedule::WarmupInvSqrt { alpha, warmup } => {
                if k <= warmup {
                    alpha * k as f64 / warmup as f64
                } else {
                    alpha * (warmup.max(1) as f64 / k as f64).sqrt()
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub schedule: Schedule,
    /// Momentum `β` (or `β₁` for the Adam variants).
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub lb_mode: LowerBoundMode,
    /// `lb_1`: starting value and floor for the online modes.
    pub lb_init: f64,
    pub decay_style: DecayStyle,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::momo()
    }
}

impl OptimizerConfig {
    pub fn momo() -> Self {
        Self {
            schedule: Schedule::constant(1.0),
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
            lb_mode: LowerBoundMode::Fixed(0.0),
            lb_init: 0.0,
            decay_style: DecayStyle::ExactDivision,
        }
    }

    pub fn momo_adam() -> Self {
        Self {
            schedule: Schedule::constant(1e-2),
            ..Self::momo()
        }
    }

    /// Defaults appropriate for `kind`.
    pub fn default_for(kind: OptimizerKind) -> Self {
        match kind {
            OptimizerKind::MomoAdam | OptimizerKind::MomoAdamStar | OptimizerKind::Adamw => Self::momo_adam(),
            _ => Self::momo(),
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.schedule = self.schedule.with_base_alpha(alpha);
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta1 = beta;
        self
    }

    pub fn with_lb(mut self, mode: LowerBoundMode, lb_init: f64) -> Self {
        self.lb_mode = mode;
        self.lb_init = lb_init;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(invalid("beta1", format!("must lie in [0, 1), got {}", self.beta1)));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid("beta2", format!("must lie in [0, 1), got {}", self.beta2)));
        }
        if !(self.epsilon > 0.0) {
            return Err(invalid("epsilon", format!("must be positive, got {}", self.epsilon)));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(invalid(
                "weight_decay",
                format!("must be finite and non-negative, got {}", self.weight_decay),
            ));
        }
        if self.lb_mode.is_online() && !self.lb_init.is_finite() {
            return Err(invalid("lb_init", format!("must be finite in online mode, got {}", self.lb_init)));
        }
        if let LowerBoundMode::Fixed(v) = self.lb_mode {
            if v.is_nan() || v == f64::INFINITY {
                return Err(invalid("lb", format!("fixed lower bound must be below +inf, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Momo,
    MomoAdam,
    MomoBias,
    MomoStar,
    MomoAdamStar,
    Sgdm,
    Adamw,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 7] = [
        OptimizerKind::Momo,
        OptimizerKind::MomoAdam,
        OptimizerKind::MomoBias,
        OptimizerKind::MomoStar,
        OptimizerKind::MomoAdamStar,
        OptimizerKind::Sgdm,
        OptimizerKind::Adamw,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Momo => "momo",
            OptimizerKind::MomoAdam => "momo-adam",
            OptimizerKind::MomoBias => "momo-bias",
            OptimizerKind::MomoStar => "momo-star",
            OptimizerKind::MomoAdamStar => "momo-adam-star",
            OptimizerKind::Sgdm => "sgdm",
            OptimizerKind::Adamw => "adamw",
        }
    }

    /// Builds a stepper; the star kinds switch a fixed lower bound to `Online`.
    pub fn build(self, config: OptimizerConfig) -> Result<Box<dyn Optimizer>> {
        config.validate()?;
        let star = |mut c: OptimizerConfig| {
            if !c.lb_mode.is_online() {
                c.lb_mode = LowerBoundMode::Online;
            }
            c
        };
        Ok(match self {
            OptimizerKind::Momo => Box::new(Momo::new(MomoVariant::Plain, config)?),
            OptimizerKind::MomoBias => Box::new(Momo::new(MomoVariant::BiasCorrected, config)?),
            OptimizerKind::MomoAdam => Box::new(Momo::new(MomoVariant::Adam, config)?),
            OptimizerKind::MomoStar => Box::new(Momo::new(MomoVariant::Plain, star(config))?),
            OptimizerKind::MomoAdamStar => Box::new(Momo::new(MomoVariant::Adam, star(config))?),
            OptimizerKind::Sgdm => Box::new(SgdM::new(config)?),
            OptimizerKind::Adamw => Box::new(AdamW::new(config)?),
        })
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OptimizerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid("optimizer", format!("unknown optimizer `{s}`")))
    }
}

/// One sampled evaluation at the current iterate.
#[derive(Debug, Clone, Copy)]
pub struct StepInput<'a> {
    pub x: &'a [f64],
    pub loss: f64,
    pub grad: &'a [f64],
}

impl<'a> StepInput<'a> {
    pub fn new(x: &'a [f64], loss: f64, grad: &'a [f64]) -> Result<Self> {
        check_dim(x.len(), grad.len())?;
        Ok(Self { x, loss, grad })
    }
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: u64,
    pub alpha: f64,
    pub rho: f64,
    pub tau: f64,
    /// Uncapped adaptive term; `+∞` for the baselines and for `d_k = 0`.
    pub zeta: f64,
    /// Lower bound used in this step, after any reset.
    pub lb: f64,
    pub lb_before_reset: f64,
    /// Lower bound for the next step.
    pub lb_next: f64,
    /// `h_k` at the iterate the step was taken from.
    pub h: f64,
    /// `‖d_k‖²_{D_k⁻¹}`.
    pub d_norm_sq: f64,
    pub reset_fired: bool,
    pub zero_direction: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub x_new: Vec<f64>,
    pub record: StepRecord,
}

pub trait Optimizer: Send {
    fn name(&self) -> &'static str;

    /// Iterations taken so far.
    fn iteration(&self) -> u64;

    /// Consumes the sample at `input.x` and returns `x^{k+1}`.
    fn step(&mut self, input: StepInput<'_>) -> Result<StepOutput>;

    /// Diagonal metric used in the most recent step; `None` means identity.
    fn metric(&self) -> Option<&[f64]> {
        None
    }

    fn momentum(&self) -> Option<&MomentumState> {
        None
    }
}

/// Adam second-moment accumulator and the derived diagonal `D_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamPreconditioner {
    pub v: Vec<f64>,
    pub diag: Vec<f64>,
    pub k: u64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamPreconditioner {
    pub fn new(dim: usize, beta2: f64, epsilon: f64) -> Self {
        Self {
            v: vec![0.0; dim],
            diag: vec![epsilon; dim],
            k: 0,
            beta2,
            epsilon,
        }
    }

    /// `v_k = β₂ v_{k−1} + (1−β₂) g⊙g`, `D_k = ε + sqrt(v_k / (1 − β₂^k))`.
    pub fn update(&mut self, grad: &[f64]) -> Result<&[f64]> {
        check_dim(self.v.len(), grad.len())?;
        self.k += 1;
        let correction = 1.0 - pow_k(self.beta2, self.k);
        for ((v, d), g) in self.v.iter_mut().zip(self.diag.iter_mut()).zip(grad) {
            *v = ewa_update(*v, g * g, self.beta2);
            *d = self.epsilon + (*v / correction).sqrt();
        }
        Ok(&self.diag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomoVariant {
    /// Normalized averages warm-started from the first sample.
    Plain,
    /// Zero-initialized averages with `ρ_k = 1 − β^k`.
    BiasCorrected,
    /// Bias-corrected averages plus the Adam diagonal metric.
    Adam,
}

/// The MoMo family.
#[derive(Debug, Clone)]
pub struct Momo {
    variant: MomoVariant,
    config: OptimizerConfig,
    state: Option<MomentumState>,
    precond: Option<AdamPreconditioner>,
    fixed_metric: Option<Vec<f64>>,
    lb: LowerBoundState,
}

impl Momo {
    pub fn new(variant: MomoVariant, config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            variant,
            config,
            state: None,
            precond: None,
            fixed_metric: None,
            lb: LowerBoundState::new(config.lb_mode, config.lb_init),
        })
    }

    pub fn plain(config: OptimizerConfig) -> Result<Self> {
        Self::new(MomoVariant::Plain, config)
    }

    pub fn bias_corrected(config: OptimizerConfig) -> Result<Self> {
        Self::new(MomoVariant::BiasCorrected, config)
    }

    pub fn adam(config: OptimizerConfig) -> Result<Self> {
        Self::new(MomoVariant::Adam, config)
    }

    /// Replaces the metric by a fixed positive diagonal for every later step.
    pub fn with_fixed_metric(mut self, diag: Vec<f64>) -> Result<Self> {
        Metric::Diagonal(&diag).validate(diag.len())?;
        self.fixed_metric = Some(diag);
        Ok(self)
    }

    pub fn variant(&self) -> MomoVariant {
        self.variant
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn lower_bound(&self) -> &LowerBoundState {
        &self.lb
    }

    /// Overrides the current lower bound; in fixed mode this also moves the floor.
    pub fn set_lower_bound(&mut self, value: f64) {
        self.lb.lb = value;
        if !self.lb.mode.is_online() {
            self.lb.lb_floor = value;
            self.lb.mode = LowerBoundMode::Fixed(value);
        }
    }

    fn ensure_init(&mut self, input: &StepInput<'_>) -> Result<()> {
        if self.state.is_some() {
            return Ok(());
        }
        let beta = self.config.beta1;
        let dim = input.x.len();
        self.state = Some(match self.variant {
            MomoVariant::Plain => {
                MomentumState::warm_started(input.x, input.loss, input.grad, AveragingScheme::normalized(beta)?)?
            }
            MomoVariant::BiasCorrected | MomoVariant::Adam => {
                MomentumState::zeroed(dim, AveragingScheme::biased(beta)?)
            }
        });
        if self.variant == MomoVariant::Adam {
            self.precond = Some(AdamPreconditioner::new(dim, self.config.beta2, self.config.epsilon));
        }
        Ok(())
    }
}

impl Optimizer for Momo {
    fn name(&self) -> &'static str {
        match (self.variant, self.lb.mode.is_online()) {
            (MomoVariant::Plain, false) => "momo",
            (MomoVariant::Plain, true) => "momo-star",
            (MomoVariant::BiasCorrected, _) => "momo-bias",
            (MomoVariant::Adam, false) => "momo-adam",
            (MomoVariant::Adam, true) => "momo-adam-star",
        }
    }

    fn iteration(&self) -> u64 {
        self.state.as_ref().map_or(0, |s| s.k)
    }

    fn step(&mut self, input: StepInput<'_>) -> Result<StepOutput> {
        check_dim(input.x.len(), input.grad.len())?;
        self.ensure_init(&input)?;
        let state = self.state.as_mut().expect("initialized above");
        check_dim(state.dim(), input.x.len())?;
        state.update(input.x, input.loss, input.grad)?;
        if let Some(p) = self.precond.as_mut() {
            p.update(input.grad)?;
        }
        let state = self.state.as_ref().expect("initialized above");
        let k = state.k;
        let alpha = self.config.schedule.alpha(k);
        let lambda = self.config.weight_decay;
        let rho = state.rho();

        let diag: Option<&[f64]> = self
            .fixed_metric
            .as_deref()
            .or(self.precond.as_ref().map(|p| p.diag.as_slice()));
        let metric = diag.map_or(Metric::Identity, Metric::Diagonal);

        let lb_before_reset = self.lb.lb;
        let reset_fired = self
            .lb
            .reset(alpha, lambda, rho, state.model_value_with_decay(input.x, alpha, lambda));
        let lb = self.lb.lb;

        let step = general_step(input.x, state, metric, alpha, lambda, lb)?;
        let x_new = match self.config.decay_style {
            DecayStyle::ExactDivision => step.x_new,
            DecayStyle::DecoupledTaylor => decoupled_update(input.x, &state.d, metric, step.tau, alpha, lambda),
        };
        let lb_next = self.lb.advance(step.h, step.tau, step.d_norm_sq, rho, diag);

        Ok(StepOutput {
            x_new,
            record: StepRecord {
                k,
                alpha,
                rho,
                tau: step.tau,
                zeta: step.zeta,
                lb,
                lb_before_reset,
                lb_next,
                h: step.h,
                d_norm_sq: step.d_norm_sq,
                reset_fired,
                zero_direction: step.d_norm_sq == 0.0,
            },
        })
    }

    fn metric(&self) -> Option<&[f64]> {
        self.fixed_metric
            .as_deref()
            .or(self.precond.as_ref().map(|p| p.diag.as_slice()))
    }

    fn momentum(&self) -> Option<&MomentumState> {
        self.state.as_ref()
    }
}

fn baseline_record(k: u64, alpha: f64, rho: f64, tau: f64, d_norm_sq: f64) -> StepRecord {
    StepRecord {
        k,
        alpha,
        rho,
        tau,
        zeta: f64::INFINITY,
        lb: f64::NEG_INFINITY,
        lb_before_reset: f64::NEG_INFINITY,
        lb_next: f64::NEG_INFINITY,
        h: f64::NAN,
        d_norm_sq,
        reset_fired: false,
        zero_direction: d_norm_sq == 0.0,
    }
}

/// Heavy-ball momentum with dampening `1 − β`: `d_k = (1−β) g_k + β d_{k−1}`,
/// `x⁺ = x − α_k d_k`, warm-started with `d_0 = g_1`.
#[derive(Debug, Clone)]
pub struct SgdM {
    config: OptimizerConfig,
    d: Option<Vec<f64>>,
    k: u64,
}

impl SgdM {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, d: None, k: 0 })
    }

    pub fn direction(&self) -> Option<&[f64]> {
        self.d.as_deref()
    }
}

impl Optimizer for SgdM {
    fn name(&self) -> &'static str {
        "sgdm"
    }

    fn iteration(&self) -> u64 {
        self.k
    }

    fn step(&mut self, input: StepInput<'_>) -> Result<StepOutput> {
        check_dim(input.x.len(), input.grad.len())?;
        let d = self.d.get_or_insert_with(|| input.grad.to_vec());
        check_dim(d.len(), input.x.len())?;
        ewa_update_slice(d, input.grad, self.config.beta1);
        self.k += 1;
        let alpha = self.config.schedule.alpha(self.k);
        let x_new = input.x.iter().zip(d.iter()).map(|(x, di)| x - alpha * di).collect();
        let d_norm_sq = crate::vecops::norm_sq(d);
        Ok(StepOutput {
            x_new,
            record: baseline_record(self.k, alpha, 1.0, alpha, d_norm_sq),
        })
    }
}

/// AdamW: `x⁺ = (1 − αλ) x − α/(1 − β₁^k) D_k⁻¹ d_k`.
#[derive(Debug, Clone)]
pub struct AdamW {
    config: OptimizerConfig,
    state: Option<MomentumState>,
    precond: Option<AdamPreconditioner>,
}

impl AdamW {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            state: None,
            precond: None,
        })
    }
}

impl Optimizer for AdamW {
    fn name(&self) -> &'static str {
        "adamw"
    }

    fn iteration(&self) -> u64 {
        self.state.as_ref().map_or(0, |s| s.k)
    }

    fn step(&mut self, input: StepInput<'_>) -> Result<StepOutput> {
        check_dim(input.x.len(), input.grad.len())?;
        let dim = input.x.len();
        if self.state.is_none() {
            self.state = Some(MomentumState::zeroed(dim, AveragingScheme::biased(self.config.beta1)?));
            self.precond = Some(AdamPreconditioner::new(dim, self.config.beta2, self.config.epsilon));
        }
        let state = self.state.as_mut().expect("initialized above");
        state.update(input.x, input.loss, input.grad)?;
        let precond = self.precond.as_mut().expect("initialized above");
        let diag = precond.update(input.grad)?;
        let metric = Metric::Diagonal(diag);
        let k = state.k;
        let alpha = self.config.schedule.alpha(k);
        let rho = state.rho();
        let tau = alpha / rho;
        let x_new = decoupled_update(input.x, &state.d, metric, tau, alpha, self.config.weight_decay);
        let d_norm_sq = metric.dual_norm_sq(&state.d);
        Ok(StepOutput {
            x_new,
            record: baseline_record(k, alpha, rho, tau, d_norm_sq),
        })
    }

    fn metric(&self) -> Option<&[f64]> {
        self.precond.as_ref().map(|p| p.diag.as_slice())
    }

    fn momentum(&self) -> Option<&MomentumState> {
        self.state.as_ref()
    }
}

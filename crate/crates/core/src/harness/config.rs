//! Run configuration and its text form.
//!
//! Config files are TOML restricted to four tables of scalar keys:
//!
//! ```toml
//! [run]
//! iterations = 2000        # steps
//! batch_size = 20
//! trace_interval = 1       # emit a row every this many steps (and at the end)
//! seed = 0                 # sampler seed
//! sampling = "epoch-shuffle"   # or "with-replacement"
//! out = "trace.csv"
//!
//! [problem]
//! kind = "least-squares"   # least-squares | least-squares-noisy | logreg | mlp
//! n = 200
//! d = 10                   # input width for mlp
//! seed = 0
//! noise = 0.1              # least-squares-noisy
//! separable = false        # logreg
//! hidden = [16]            # mlp
//! classes = 3              # mlp
//! activation = "tanh"      # mlp: tanh | relu
//!
//! [optimizer]
//! name = "momo"            # momo | momo-adam | momo-bias | momo-star | momo-adam-star | sgdm | adamw
//! alpha = 1.0
//! beta = 0.9
//! beta2 = 0.999
//! epsilon = 1e-8
//! weight_decay = 0.0
//! lb_mode = "fixed"        # fixed | online | online-max
//! lb_init = 0.0            # fixed value, or starting value and floor when online
//! decay_style = "exact-division"   # or "decoupled-taylor"
//!
//! [schedule]
//! kind = "const"           # const | exp | warmup-cosine | warmup-invsqrt
//! gamma = 0.999            # exp
//! warmup = 100             # warmup-*
//! total = 2000             # warmup-cosine; defaults to run.iterations
//! floor = 0.0              # warmup-cosine
//! ```
//!
//! Every key is optional. A [`ConfigFile`] can be layered over another with
//! [`ConfigFile::overlay`]; the CLI uses this so flags override file values.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::lowerbound::LowerBoundMode;
use crate::model::DecayStyle;
use crate::optimizers::{OptimizerConfig, OptimizerKind, Schedule};
use crate::problems::{Activation, ProblemKind, ProblemSpec, SamplingMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LbModeName {
    Fixed,
    Online,
    OnlineMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleName {
    Const,
    Exp,
    WarmupCosine,
    WarmupInvsqrt,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub iterations: Option<u64>,
    pub batch_size: Option<usize>,
    pub trace_interval: Option<u64>,
    pub seed: Option<u64>,
    pub sampling: Option<SamplingMode>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSection {
    pub kind: Option<ProblemKind>,
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub seed: Option<u64>,
    pub noise: Option<f64>,
    pub separable: Option<bool>,
    pub hidden: Option<Vec<usize>>,
    pub classes: Option<usize>,
    pub activation: Option<Activation>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub name: Option<OptimizerKind>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub beta2: Option<f64>,
    pub epsilon: Option<f64>,
    pub weight_decay: Option<f64>,
    pub lb_mode: Option<LbModeName>,
    pub lb_init: Option<f64>,
    pub decay_style: Option<DecayStyle>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub kind: Option<ScheduleName>,
    pub gamma: Option<f64>,
    pub warmup: Option<u64>,
    pub total: Option<u64>,
    pub floor: Option<f64>,
}

/// Partial configuration as read from a file or built from flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub run: RunSection,
    pub problem: ProblemSection,
    pub optimizer: OptimizerSection,
    pub schedule: ScheduleSection,
}

macro_rules! layer {
    ($base:expr, $top:expr; $($field:ident),+ $(,)?) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field.clone(); } )+
    };
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config sections serialize")
    }

    /// Fields set in `top` replace those in `self`.
    pub fn overlay(mut self, top: &ConfigFile) -> Self {
        layer!(self.run, top.run; iterations, batch_size, trace_interval, seed, sampling, out);
        layer!(self.problem, top.problem; kind, n, d, seed, noise, separable, hidden, classes, activation);
        layer!(self.optimizer, top.optimizer;
            name, alpha, beta, beta2, epsilon, weight_decay, lb_mode, lb_init, decay_style);
        layer!(self.schedule, top.schedule; kind, gamma, warmup, total, floor);
        self
    }

    /// Fills defaults and validates.
    pub fn resolve(&self) -> Result<RunConfig, HarnessError> {
        let defaults = RunConfig::default();
        let r = &self.run;
        let iterations = r.iterations.unwrap_or(defaults.iterations);

        let pd = ProblemSpec::default();
        let p = &self.problem;
        let problem = ProblemSpec {
            kind: p.kind.unwrap_or(pd.kind),
            n: p.n.unwrap_or(pd.n),
            d: p.d.unwrap_or(pd.d),
            seed: p.seed.unwrap_or(pd.seed),
            noise: p.noise.unwrap_or(pd.noise),
            separable: p.separable.unwrap_or(pd.separable),
            hidden: p.hidden.clone().unwrap_or(pd.hidden),
            classes: p.classes.unwrap_or(pd.classes),
            activation: p.activation.unwrap_or(pd.activation),
        };

        let o = &self.optimizer;
        let kind = o.name.unwrap_or(OptimizerKind::Momo);
        let base = OptimizerConfig::default_for(kind);
        let alpha = o.alpha.unwrap_or(base.schedule.base_alpha());
        let s = &self.schedule;
        let schedule = match s.kind.unwrap_or(ScheduleName::Const) {
            ScheduleName::Const => Schedule::Constant { alpha },
            ScheduleName::Exp => Schedule::Exponential {
                alpha,
                gamma: s.gamma.unwrap_or(0.999),
            },
            ScheduleName::WarmupCosine => Schedule::WarmupCosine {
                alpha,
                warmup: s.warmup.unwrap_or(iterations / 20),
                total: s.total.unwrap_or(iterations),
                floor: s.floor.unwrap_or(0.0),
            },
            ScheduleName::WarmupInvsqrt => Schedule::WarmupInvSqrt {
                alpha,
                warmup: s.warmup.unwrap_or(iterations / 20),
            },
        };
        let lb_init = o.lb_init.unwrap_or(base.lb_init);
        let default_mode = if matches!(kind, OptimizerKind::MomoStar | OptimizerKind::MomoAdamStar) {
            LbModeName::Online
        } else {
            LbModeName::Fixed
        };
        let lb_mode = match o.lb_mode.unwrap_or(default_mode) {
            LbModeName::Fixed => LowerBoundMode::Fixed(lb_init),
            LbModeName::Online => LowerBoundMode::Online,
            LbModeName::OnlineMax => LowerBoundMode::OnlineMax,
        };
        let optim = OptimizerConfig {
            schedule,
            beta1: o.beta.unwrap_or(base.beta1),
            beta2: o.beta2.unwrap_or(base.beta2),
            epsilon: o.epsilon.unwrap_or(base.epsilon),
            weight_decay: o.weight_decay.unwrap_or(base.weight_decay),
            lb_mode,
            lb_init,
            decay_style: o.decay_style.unwrap_or(base.decay_style),
        };

        let config = RunConfig {
            problem,
            optimizer: kind,
            optim,
            iterations,
            batch_size: r.batch_size.unwrap_or(defaults.batch_size),
            sampling: r.sampling.unwrap_or(defaults.sampling),
            trace_interval: r.trace_interval.unwrap_or(defaults.trace_interval),
            seed: r.seed.unwrap_or(defaults.seed),
            out: r.out.clone(),
        };
        config.validate()?;
        Ok(config)
    }
}

/// A fully specified run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub optimizer: OptimizerKind,
    pub optim: OptimizerConfig,
    pub iterations: u64,
    pub batch_size: usize,
    pub sampling: SamplingMode,
    pub trace_interval: u64,
    /// Sampler seed.
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: ProblemSpec::default(),
            optimizer: OptimizerKind::Momo,
            optim: OptimizerConfig::momo(),
            iterations: 2000,
            batch_size: 20,
            sampling: SamplingMode::EpochShuffle,
            trace_interval: 1,
            seed: 0,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.iterations == 0 {
            return Err(HarnessError::Config("iterations must be at least 1".into()));
        }
        if self.trace_interval == 0 {
            return Err(HarnessError::Config("trace_interval must be at least 1".into()));
        }
        if self.batch_size == 0 || self.batch_size > self.problem.n {
            return Err(HarnessError::Config(format!(
                "batch_size must lie in 1..={}, got {}",
                self.problem.n, self.batch_size
            )));
        }
        self.optim.validate()?;
        Ok(())
    }

    /// Same run with a different constant learning rate.
    pub fn with_alpha(&self, alpha: f64) -> Self {
        Self {
            optim: self.optim.with_alpha(alpha),
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    /// The [`ConfigFile`] that resolves back to this config.
    pub fn to_config_file(&self) -> ConfigFile {
        let o = &self.optim;
        let (schedule_kind, gamma, warmup, total, floor) = match o.schedule {
            Schedule::Constant { .. } => (ScheduleName::Const, None, None, None, None),
            Schedule::Exponential { gamma, .. } => (ScheduleName::Exp, Some(gamma), None, None, None),
            Schedule::WarmupCosine {
                warmup, total, floor, ..
            } => (ScheduleName::WarmupCosine, None, Some(warmup), Some(total), Some(floor)),
            Schedule::WarmupInvSqrt { warmup, .. } => (ScheduleName::WarmupInvsqrt, None, Some(warmup), None, None),
        };
        let (lb_mode, lb_init) = match o.lb_mode {
            LowerBoundMode::Fixed(v) => (LbModeName::Fixed, v),
            LowerBoundMode::Online => (LbModeName::Online, o.lb_init),
            LowerBoundMode::OnlineMax => (LbModeName::OnlineMax, o.lb_init),
        };
        let p = &self.problem;
        ConfigFile {
            run: RunSection {
                iterations: Some(self.iterations),
                batch_size: Some(self.batch_size),
                trace_interval: Some(self.trace_interval),
                seed: Some(self.seed),
                sampling: Some(self.sampling),
                out: self.out.clone(),
            },
            problem: ProblemSection {
                kind: Some(p.kind),
                n: Some(p.n),
                d: Some(p.d),
                seed: Some(p.seed),
                noise: Some(p.noise),
                separable: Some(p.separable),
                hidden: Some(p.hidden.clone()),
                classes: Some(p.classes),
                activation: Some(p.activation),
            },
            optimizer: OptimizerSection {
                name: Some(self.optimizer),
                alpha: Some(o.schedule.base_alpha()),
                beta: Some(o.beta1),
                beta2: Some(o.beta2),
                epsilon: Some(o.epsilon),
                weight_decay: Some(o.weight_decay),
                lb_mode: Some(lb_mode),
                lb_init: Some(lb_init),
                decay_style: Some(o.decay_style),
            },
            schedule: ScheduleSection {
                kind: Some(schedule_kind),
                gamma,
                warmup,
                total,
                floor,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ConfigFile::parse("").unwrap().resolve().unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn parses_sections() {
        let text = r#"
            [run]
            iterations = 50
            batch_size = 10

            [problem]
            kind = "logreg"
            n = 40
            d = 3

            [optimizer]
            name = "momo-adam-star"
            lb_init = -10.0

            [schedule]
            kind = "warmup-cosine"
            warmup = 5
        "#;
        let c = ConfigFile::parse(text).unwrap().resolve().unwrap();
        assert_eq!(c.iterations, 50);
        assert_eq!(c.problem.kind, ProblemKind::Logreg);
        assert_eq!(c.optimizer, OptimizerKind::MomoAdamStar);
        assert_eq!(c.optim.lb_mode, LowerBoundMode::Online);
        assert_eq!(c.optim.lb_init, -10.0);
        assert_eq!(c.optim.schedule.base_alpha(), 1e-2);
        assert_eq!(
            c.optim.schedule,
            Schedule::WarmupCosine {
                alpha: 1e-2,
                warmup: 5,
                total: 50,
                floor: 0.0
            }
        );
    }

    #[test]
    fn overlay_prefers_top() {
        let file = ConfigFile::parse("[optimizer]\nalpha = 0.5\nbeta = 0.3\n").unwrap();
        let flags = ConfigFile {
            optimizer: OptimizerSection {
                alpha: Some(2.0),
                ..Default::default()
            },
            ..Default::default()
        };
        let c = file.overlay(&flags).resolve().unwrap();
        assert_eq!(c.optim.schedule.base_alpha(), 2.0);
        assert_eq!(c.optim.beta1, 0.3);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ConfigFile::parse("[run]\nbogus = 1\n").is_err());
        assert!(ConfigFile::parse("[optimizer]\nname = \"sgd\"\n").is_err());
        let bad = ConfigFile::parse("[run]\nbatch_size = 500\n").unwrap();
        assert!(bad.resolve().is_err());
        let bad = ConfigFile::parse("[optimizer]\nbeta = 1.5\n").unwrap();
        assert!(bad.resolve().is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.optimizer = OptimizerKind::MomoStar;
        c.optim = c.optim.with_lb(LowerBoundMode::OnlineMax, -3.0);
        c.optim.schedule = Schedule::Exponential { alpha: 0.5, gamma: 0.99 };
        let text = c.to_config_file().to_text();
        let back = ConfigFile::parse(&text).unwrap().resolve().unwrap();
        assert_eq!(back, c);
    }
}

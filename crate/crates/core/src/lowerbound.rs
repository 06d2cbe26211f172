//! Online estimation of the optimal value used to truncate the model.
//!
//! Three modes are supported:
//!
//! * `Fixed(v)`: the bound never moves.
//! * `Online`: the bootstrapped estimate `ρ⁻¹(h − ½τ‖d‖²_{D⁻¹})`, guarded by
//!   [`reset_star`] so the step never collapses to zero.
//! * `OnlineMax`: a weighted running average of the same per-step quantity,
//!   weighted by `η_j τ_j ρ_j`, which needs no bootstrapping.
//!
//! Every estimate is floored at the initial value `lb_1`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LowerBoundMode {
    Fixed(f64),
    Online,
    OnlineMax,
}

impl LowerBoundMode {
    pub fn is_online(&self) -> bool {
        !matches!(self, LowerBoundMode::Fixed(_))
    }
}

#[inline]
fn max_nan(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

/// Lowers `lb` when it would zero the step.
///
/// Fires when `(1+αλ)·ρ·lb ≥ h_λ` and then returns
/// `max{½ h_λ / ((1+αλ)ρ), lb_floor}`; otherwise `lb` is returned unchanged.
pub fn reset_star(lb: f64, alpha: f64, lambda: f64, rho: f64, h_lambda: f64, lb_floor: f64) -> f64 {
    let scale = (1.0 + alpha * lambda) * rho;
    if scale * lb >= h_lambda {
        max_nan(0.5 * h_lambda / scale, lb_floor)
    } else {
        lb
    }
}

/// Bootstrapped estimate `max{ρ⁻¹(h − ½τ‖d‖²_{D⁻¹}), lb_floor}`.
///
/// `h` is the model value at the iterate the step was taken from and
/// `d_norm_sq` is `‖d‖²_{D⁻¹}` as already computed by the optimizer.
pub fn estimate_star(h: f64, tau: f64, d_norm_sq: f64, rho: f64, lb_floor: f64) -> f64 {
    max_nan((h - 0.5 * tau * d_norm_sq) / rho, lb_floor)
}

/// Running sums of the max-variant estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxSums {
    /// `Σ_j η_j τ_j (h_j − ½τ_j‖d_j‖²_{D_j⁻¹})`.
    pub s_num: f64,
    /// `Σ_j η_j τ_j ρ_j`.
    pub s_den: f64,
    /// Current `η_k`.
    pub eta: f64,
    /// Metric of the previous step; `None` before the first step or for the identity.
    pub d_prev: Option<Vec<f64>>,
    pub steps: u64,
}

impl Default for MaxSums {
    fn default() -> Self {
        Self {
            s_num: 0.0,
            s_den: 0.0,
            eta: 1.0,
            d_prev: None,
            steps: 0,
        }
    }
}

/// `λ_min(D_new⁻¹ D_prev)` for diagonal metrics; `None` means identity.
fn eigen_ratio(d_prev: Option<&[f64]>, d_new: Option<&[f64]>, dim: usize) -> f64 {
    (0..dim)
        .map(|i| {
            let p = d_prev.map_or(1.0, |v| v[i]);
            let n = d_new.map_or(1.0, |v| v[i]);
            p / n
        })
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowerBoundState {
    pub lb: f64,
    pub lb_floor: f64,
    pub mode: LowerBoundMode,
    pub max_sums: Option<MaxSums>,
}

impl LowerBoundState {
    /// `lb_init` is ignored for `Fixed`, which carries its own value.
    pub fn new(mode: LowerBoundMode, lb_init: f64) -> Self {
        let start = match mode {
            LowerBoundMode::Fixed(v) => v,
            _ => lb_init,
        };
        Self {
            lb: start,
            lb_floor: start,
            mode,
            max_sums: matches!(mode, LowerBoundMode::OnlineMax).then(MaxSums::default),
        }
    }

    /// Applies [`reset_star`] in the online modes; returns whether it fired.
    pub fn reset(&mut self, alpha: f64, lambda: f64, rho: f64, h_lambda: f64) -> bool {
        if !self.mode.is_online() {
            return false;
        }
        let before = self.lb;
        self.lb = reset_star(self.lb, alpha, lambda, rho, h_lambda, self.lb_floor);
        (1.0 + alpha * lambda) * rho * before >= h_lambda
    }

    /// Produces `lb_{k+1}` from the step just taken.
    ///
    /// `metric` is the diagonal used for the step (`None` for the identity);
    /// only the max variant reads it.
    pub fn advance(&mut self, h: f64, tau: f64, d_norm_sq: f64, rho: f64, metric: Option<&[f64]>) -> f64 {
        match self.mode {
            LowerBoundMode::Fixed(_) => {}
            LowerBoundMode::Online => {
                self.lb = estimate_star(h, tau, d_norm_sq, rho, self.lb_floor);
            }
            LowerBoundMode::OnlineMax => {
                if let Err(e) = self.estimate_star_max(h, tau, d_norm_sq, rho, metric) {
                    log::debug!("max lower bound kept at {}: {e}", self.lb);
                }
            }
        }
        self.lb
    }

    /// Max-variant update
    ///
    /// ```text
    /// lb_{k+1} = (lb_k Σ_{j<k} η_jτ_jρ_j + η_kτ_k(h_k − ½τ_k‖d_k‖²)) / Σ_{j≤k} η_jτ_jρ_j
    /// ```
    ///
    /// floored at `lb_floor`, with `η_1 = 1` and
    /// `η_k = η_{k−1} · min_i D_{k−1,i} / D_{k,i}`.
    ///
    /// Returns [`Error::DegenerateWeights`] and leaves `lb` unchanged while
    /// every step so far has had `τ = 0`.
    pub fn estimate_star_max(
        &mut self,
        h: f64,
        tau: f64,
        d_norm_sq: f64,
        rho: f64,
        metric: Option<&[f64]>,
    ) -> Result<f64> {
        let floor = self.lb_floor;
        let lb_k = self.lb;
        let sums = self.max_sums.get_or_insert_with(MaxSums::default);
        if sums.steps > 0 {
            let dim = metric
                .map(<[f64]>::len)
                .or(sums.d_prev.as_ref().map(Vec::len))
                .unwrap_or(0);
            if let (Some(p), Some(n)) = (sums.d_prev.as_deref(), metric) {
                check_dim(p.len(), n.len())?;
            }
            if dim > 0 {
                sums.eta *= eigen_ratio(sums.d_prev.as_deref(), metric, dim);
            }
        }
        sums.d_prev = metric.map(<[f64]>::to_vec);
        sums.steps += 1;

        let weight = sums.eta * tau;
        let gain = weight * (h - 0.5 * tau * d_norm_sq);
        let prev_den = sums.s_den;
        sums.s_num += gain;
        sums.s_den += weight * rho;
        if !(sums.s_den > 0.0) {
            return Err(Error::DegenerateWeights);
        }
        let raw = if prev_den > 0.0 {
            (lb_k * prev_den + gain) / sums.s_den
        } else {
            gain / sums.s_den
        };
        self.lb = max_nan(raw, floor);
        Ok(self.lb)
    }
}

//! Statistical priority clipping.
//!
//! [`ClipState`] tracks `p_tilde`, an exponentially-forgetting average of the
//! per-batch estimates of the memory-wide mean absolute TD error, and derives
//! the clipping bounds `[rho_min * p_tilde, rho_max * p_tilde]` from it.

use std::f64::consts::PI;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClipError {
    #[error("input lengths differ: {weights} weights, {errors} TD errors")]
    LengthMismatch { weights: usize, errors: usize },
    #[error("empty input")]
    Empty,
    #[error("non-finite or negative value {0}")]
    InvalidValue(f64),
    #[error("invalid clip parameters: {0}")]
    InvalidParams(String),
}

pub const DEFAULT_LAMBDA: f64 = 0.9985;
pub const DEFAULT_RHO_MIN: f64 = 0.12;
pub const DEFAULT_RHO_MAX: f64 = 3.7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipState {
    kappa: f64,
    p_tilde: f64,
    lambda: f64,
    rho_min: f64,
    rho_max: f64,
    p_min: f64,
    p_max: f64,
}

impl Default for ClipState {
    fn default() -> Self {
        Self::new(DEFAULT_LAMBDA, DEFAULT_RHO_MIN, DEFAULT_RHO_MAX)
            .expect("default clip parameters are valid")
    }
}

impl ClipState {
    /// Fresh estimator with `kappa = p_tilde = 0` and warm-up bounds `[0, 1]`.
    pub fn new(lambda: f64, rho_min: f64, rho_max: f64) -> Result<Self, ClipError> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(ClipError::InvalidParams(format!(
                "lambda must lie in (0, 1), got {lambda}"
            )));
        }
        if !(rho_min > 0.0 && rho_min < rho_max && rho_max.is_finite()) {
            return Err(ClipError::InvalidParams(format!(
                "need 0 < rho_min < rho_max, got {rho_min} and {rho_max}"
            )));
        }
        Ok(Self {
            kappa: 0.0,
            p_tilde: 0.0,
            lambda,
            rho_min,
            rho_max,
            p_min: 0.0,
            p_max: 1.0,
        })
    }

    /// Restores a state from its serialized estimator values.
    pub fn with_estimate(mut self, kappa: f64, p_tilde: f64) -> Result<Self, ClipError> {
        if !(kappa.is_finite() && kappa >= 0.0) {
            return Err(ClipError::InvalidValue(kappa));
        }
        if !(p_tilde.is_finite() && p_tilde >= 0.0) {
            return Err(ClipError::InvalidValue(p_tilde));
        }
        self.kappa = kappa;
        self.p_tilde = p_tilde;
        if kappa > 0.0 {
            self.p_min = self.rho_min * p_tilde;
            self.p_max = self.rho_max * p_tilde;
        }
        Ok(self)
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn p_tilde(&self) -> f64 {
        self.p_tilde
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn rho_min(&self) -> f64 {
        self.rho_min
    }

    pub fn rho_max(&self) -> f64 {
        self.rho_max
    }

    pub fn p_min(&self) -> f64 {
        self.p_min
    }

    pub fn p_max(&self) -> f64 {
        self.p_max
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.p_min, self.p_max)
    }

    /// Folds one batch estimate into `p_tilde` and refreshes the bounds.
    pub fn update(&mut self, delta_a: f64) -> Result<(), ClipError> {
        if !(delta_a.is_finite() && delta_a >= 0.0) {
            return Err(ClipError::InvalidValue(delta_a));
        }
        self.kappa = self.lambda * self.kappa + 1.0;
        self.p_tilde += (delta_a - self.p_tilde) / self.kappa;
        self.p_min = self.rho_min * self.p_tilde;
        self.p_max = self.rho_max * self.p_tilde;
        Ok(())
    }

    /// `median{p_min, p, p_max}`.
    pub fn clip(&self, p: f64) -> Result<f64, ClipError> {
        if !(p.is_finite() && p >= 0.0) {
            return Err(ClipError::InvalidValue(p));
        }
        Ok(p.min(self.p_max).max(self.p_min))
    }
}

/// Ordinary importance-sampling estimate `sum_k w_k |delta_k| / K` of the
/// memory-wide mean absolute TD error. `is_weights` are the raw `(N P(i))^-1`.
pub fn batch_average_estimate(is_weights: &[f64], abs_tds: &[f64]) -> Result<f64, ClipError> {
    if is_weights.len() != abs_tds.len() {
        return Err(ClipError::LengthMismatch {
            weights: is_weights.len(),
            errors: abs_tds.len(),
        });
    }
    if is_weights.is_empty() {
        return Err(ClipError::Empty);
    }
    let mut acc = 0.0;
    for (&w, &d) in is_weights.iter().zip(abs_tds) {
        if !(w.is_finite() && w >= 0.0) {
            return Err(ClipError::InvalidValue(w));
        }
        if !(d.is_finite() && d >= 0.0) {
            return Err(ClipError::InvalidValue(d));
        }
        acc += w * d;
    }
    Ok(acc / is_weights.len() as f64)
}

/// Closed form of the recursive estimate after `n` updates:
/// `sum_m lambda^m mu_{n-m} / sum_m lambda^m`. Accepts `lambda = 1` (plain mean).
pub fn closed_form(mu_hats: &[f64], lambda: f64) -> Result<f64, ClipError> {
    if mu_hats.is_empty() {
        return Err(ClipError::Empty);
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(ClipError::InvalidParams(format!(
            "lambda must lie in [0, 1], got {lambda}"
        )));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    let mut weight = 1.0;
    for mu in mu_hats.iter().rev() {
        num += weight * mu;
        den += weight;
        weight *= lambda;
    }
    Ok(num / den)
}

/// Multiplier that places a clip bound at the `xi`-sigma point of a zero-mean
/// Gaussian when expressed relative to the folded mean `sigma * sqrt(2/pi)`.
pub fn rho_for_sigma_point(xi: f64) -> Result<f64, ClipError> {
    if !(xi.is_finite() && xi >= 0.0) {
        return Err(ClipError::InvalidValue(xi));
    }
    Ok(xi * (PI / 2.0).sqrt())
}

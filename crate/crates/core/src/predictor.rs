//! TD-error predictor.
//!
//! A one-hidden-layer head that reads the Q-network's last hidden features for
//! `s` and `s'`, a one-hot action and the reward, and outputs a signed estimate
//! of the TD error. The encoder is borrowed immutably: predictor gradients stop
//! at the head input and never reach the Q-network.

use rand::Rng;
use thiserror::Error;

use crate::nn::{huber_clamp, DenseNet, NnError, QNetwork, Trace};
use crate::replay::Experience;

pub const ALLOWED_WIDTHS: [usize; 5] = [32, 64, 128, 256, 512];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PredictorError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("non-finite value {0}")]
    NonFinite(f64),
    #[error("length mismatch: {0} TD errors vs {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("hidden width {0} is not one of 32, 64, 128, 256, 512")]
    Width(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PredictorLoss {
    #[default]
    Squared,
    Huber,
}

/// Assembled head input `[phi(s), phi(s'), onehot(a), r]`.
pub fn assemble_input(
    phi_s: &[f64],
    phi_next: &[f64],
    action: usize,
    actions: usize,
    reward: f64,
) -> Vec<f64> {
    let mut input = Vec::with_capacity(phi_s.len() + phi_next.len() + actions + 1);
    input.extend_from_slice(phi_s);
    input.extend_from_slice(phi_next);
    input.extend((0..actions).map(|a| if a == action { 1.0 } else { 0.0 }));
    input.push(reward);
    input
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorNet {
    head: DenseNet,
    feature_dim: usize,
    actions: usize,
}

impl PredictorNet {
    /// Head with `width` ReLU units and a linear scalar output.
    pub fn new<R: Rng + ?Sized>(
        feature_dim: usize,
        actions: usize,
        width: usize,
        rng: &mut R,
    ) -> Result<Self, PredictorError> {
        if !ALLOWED_WIDTHS.contains(&width) {
            return Err(PredictorError::Width(width));
        }
        let head = DenseNet::mlp(2 * feature_dim + actions + 1, &[width], 1, rng)?;
        Ok(Self {
            head,
            feature_dim,
            actions,
        })
    }

    /// Wraps an arbitrary scalar-output head over the standard input layout.
    pub fn with_head(
        head: DenseNet,
        feature_dim: usize,
        actions: usize,
    ) -> Result<Self, PredictorError> {
        let expected = 2 * feature_dim + actions + 1;
        if head.input_dim() != expected {
            return Err(NnError::Shape {
                expected,
                got: head.input_dim(),
            }
            .into());
        }
        if head.output_dim() != 1 {
            return Err(NnError::Shape {
                expected: 1,
                got: head.output_dim(),
            }
            .into());
        }
        Ok(Self {
            head,
            feature_dim,
            actions,
        })
    }

    pub fn head(&self) -> &DenseNet {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut DenseNet {
        &mut self.head
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    /// Head input for `e`, recomputing the encoder features.
    pub fn input_for(
        &self,
        e: &Experience,
        encoder: &QNetwork,
    ) -> Result<Vec<f64>, PredictorError> {
        let phi_s = encoder.features_of(&e.state)?;
        let phi_next = encoder.features_of(&e.next_state)?;
        self.input_from_features(&phi_s, &phi_next, e.action, e.reward)
    }

    pub fn input_from_traces(
        &self,
        state: &Trace,
        next: &Trace,
        action: usize,
        reward: f64,
    ) -> Result<Vec<f64>, PredictorError> {
        self.input_from_features(
            QNetwork::features(state),
            QNetwork::features(next),
            action,
            reward,
        )
    }

    fn input_from_features(
        &self,
        phi_s: &[f64],
        phi_next: &[f64],
        action: usize,
        reward: f64,
    ) -> Result<Vec<f64>, PredictorError> {
        if phi_s.len() != self.feature_dim {
            return Err(NnError::Shape {
                expected: self.feature_dim,
                got: phi_s.len(),
            }
            .into());
        }
        if phi_next.len() != self.feature_dim {
            return Err(NnError::Shape {
                expected: self.feature_dim,
                got: phi_next.len(),
            }
            .into());
        }
        if action >= self.actions {
            return Err(NnError::Shape {
                expected: self.actions,
                got: action,
            }
            .into());
        }
        Ok(assemble_input(
            phi_s,
            phi_next,
            action,
            self.actions,
            reward,
        ))
    }

    pub fn predict(&self, e: &Experience, encoder: &QNetwork) -> Result<f64, PredictorError> {
        self.predict_input(&self.input_for(e, encoder)?)
    }

    pub fn predict_input(&self, input: &[f64]) -> Result<f64, PredictorError> {
        Ok(self.head.forward(input)?[0])
    }

    /// Adds `(delta - delta_hat) * grad(delta_hat)` into `delta_p` and returns
    /// `delta_hat`. Under the Huber loss the residual is clamped to `[-1, 1]`.
    pub fn accumulate_update(
        &self,
        input: &[f64],
        delta: f64,
        loss: PredictorLoss,
        delta_p: &mut [f64],
    ) -> Result<f64, PredictorError> {
        if !delta.is_finite() {
            return Err(PredictorError::NonFinite(delta));
        }
        let trace = self.head.trace(input)?;
        let delta_hat = trace.output()[0];
        if !delta_hat.is_finite() {
            return Err(PredictorError::NonFinite(delta_hat));
        }
        let residual = match loss {
            PredictorLoss::Squared => delta - delta_hat,
            PredictorLoss::Huber => huber_clamp(delta - delta_hat),
        };
        self.head
            .accumulate_param_gradient(&trace, &[1.0], residual, delta_p)?;
        Ok(delta_hat)
    }

    /// The contribution `(delta - delta_hat) * grad(delta_hat)` for a single input.
    pub fn contribution(
        &self,
        input: &[f64],
        delta: f64,
        delta_hat: f64,
    ) -> Result<Vec<f64>, PredictorError> {
        if !delta.is_finite() {
            return Err(PredictorError::NonFinite(delta));
        }
        if !delta_hat.is_finite() {
            return Err(PredictorError::NonFinite(delta_hat));
        }
        let trace = self.head.trace(input)?;
        let mut g = vec![0.0; self.head.param_count()];
        self.head
            .accumulate_param_gradient(&trace, &[1.0], delta - delta_hat, &mut g)?;
        Ok(g)
    }
}

/// Mean over the batch of `(delta_hat - delta)^2`.
pub fn predictor_loss(deltas: &[f64], delta_hats: &[f64]) -> Result<f64, PredictorError> {
    if deltas.len() != delta_hats.len() {
        return Err(PredictorError::LengthMismatch(
            deltas.len(),
            delta_hats.len(),
        ));
    }
    if deltas.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = deltas
        .iter()
        .zip(delta_hats)
        .map(|(d, h)| (h - d) * (h - d))
        .sum();
    Ok(sum / deltas.len() as f64)
}

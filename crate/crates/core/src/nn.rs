//! Small dense networks with hand-written reverse mode, Adam, and the dueling head.
//!
//! Parameters of a [`DenseNet`] live in one flat `Vec<f64>` (per layer: the
//! `out x in` row-major weight matrix followed by the bias), so gradients and
//! optimizer moments are plain slices of the same length.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("non-finite gradient at parameter {0}")]
    NonFiniteGradient(usize),
    #[error("non-finite parameter {0} after optimizer step")]
    NonFiniteParameter(usize),
}

fn check_len(expected: usize, got: usize) -> Result<(), NnError> {
    if expected == got {
        Ok(())
    } else {
        Err(NnError::Shape { expected, got })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    offset: usize,
}

impl Layer {
    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }

    fn weights<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.offset..self.offset + self.in_dim * self.out_dim]
    }

    fn bias<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        let start = self.offset + self.in_dim * self.out_dim;
        &params[start..start + self.out_dim]
    }
}

/// Cached activations of one forward pass: `activations[0]` is the input,
/// `activations[i + 1]` the output of layer `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations
            .last()
            .expect("trace holds at least the input")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
    params: Vec<f64>,
}

impl DenseNet {
    /// Zero-initialized network with the given `(in, out, activation)` layers.
    pub fn zeros(shape: &[(usize, usize, Activation)]) -> Result<Self, NnError> {
        if shape.is_empty() {
            return Err(NnError::Architecture(
                "at least one layer is required".into(),
            ));
        }
        let mut layers = Vec::with_capacity(shape.len());
        let mut offset = 0;
        for (i, &(in_dim, out_dim, activation)) in shape.iter().enumerate() {
            if in_dim == 0 || out_dim == 0 {
                return Err(NnError::Architecture(format!(
                    "layer {i} has a zero dimension"
                )));
            }
            if i > 0 && shape[i - 1].1 != in_dim {
                return Err(NnError::Architecture(format!(
                    "layer {i} expects {in_dim} inputs but layer {} produces {}",
                    i - 1,
                    shape[i - 1].1
                )));
            }
            let layer = Layer {
                in_dim,
                out_dim,
                activation,
                offset,
            };
            offset += layer.param_count();
            layers.push(layer);
        }
        Ok(Self {
            layers,
            params: vec![0.0; offset],
        })
    }

    /// ReLU hidden layers and a linear output, weights and biases drawn from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn mlp<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        output: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let mut shape = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input;
        for &h in hidden {
            shape.push((prev, h, Activation::Relu));
            prev = h;
        }
        shape.push((prev, output, Activation::Linear));
        let mut net = Self::zeros(&shape)?;
        net.init_uniform(rng);
        Ok(net)
    }

    pub fn init_uniform<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for layer in &self.layers {
            let bound = 1.0 / (layer.in_dim as f64).sqrt();
            for p in &mut self.params[layer.offset..layer.offset + layer.param_count()] {
                *p = rng.random_range(-bound..bound);
            }
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<(), NnError> {
        check_len(self.params.len(), params.len())?;
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        check_len(self.input_dim(), x.len())?;
        let mut current = x.to_vec();
        for layer in &self.layers {
            current = self.apply_layer(layer, &current);
        }
        Ok(current)
    }

    pub fn trace(&self, x: &[f64]) -> Result<Trace, NnError> {
        check_len(self.input_dim(), x.len())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        for layer in &self.layers {
            let next = self.apply_layer(layer, activations.last().unwrap());
            activations.push(next);
        }
        Ok(Trace { activations })
    }

    fn apply_layer(&self, layer: &Layer, x: &[f64]) -> Vec<f64> {
        let w = layer.weights(&self.params);
        let b = layer.bias(&self.params);
        let mut out = Vec::with_capacity(layer.out_dim);
        for j in 0..layer.out_dim {
            let row = &w[j * layer.in_dim..(j + 1) * layer.in_dim];
            let mut z = b[j];
            for (wi, xi) in row.iter().zip(x) {
                z += wi * xi;
            }
            out.push(match layer.activation {
                Activation::Relu => z.max(0.0),
                Activation::Linear => z,
            });
        }
        out
    }

    /// Reverse pass for the scalar `upstream . output`. Parameter gradients are
    /// scaled by `scale` and added into `grads`; the input gradient is returned
    /// unscaled.
    pub fn backward_into(
        &self,
        trace: &Trace,
        upstream: &[f64],
        scale: f64,
        grads: &mut [f64],
    ) -> Result<Vec<f64>, NnError> {
        self.reverse(trace, upstream, scale, grads, true)
    }

    /// Like [`DenseNet::backward_into`] but skips the input gradient.
    pub fn accumulate_param_gradient(
        &self,
        trace: &Trace,
        upstream: &[f64],
        scale: f64,
        grads: &mut [f64],
    ) -> Result<(), NnError> {
        self.reverse(trace, upstream, scale, grads, false)
            .map(|_| ())
    }

    fn reverse(
        &self,
        trace: &Trace,
        upstream: &[f64],
        scale: f64,
        grads: &mut [f64],
        input_gradient: bool,
    ) -> Result<Vec<f64>, NnError> {
        check_len(self.output_dim(), upstream.len())?;
        check_len(self.params.len(), grads.len())?;
        check_len(self.layers.len() + 1, trace.activations.len())?;
        let mut delta = upstream.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.activations[i];
            let output = &trace.activations[i + 1];
            check_len(layer.in_dim, input.len())?;
            if layer.activation == Activation::Relu {
                for (d, &y) in delta.iter_mut().zip(output) {
                    if y <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let w = layer.weights(&self.params);
            let (w_grad, b_grad) = grads[layer.offset..layer.offset + layer.param_count()]
                .split_at_mut(layer.in_dim * layer.out_dim);
            let propagate = i > 0 || input_gradient;
            let mut next = vec![0.0; if propagate { layer.in_dim } else { 0 }];
            for (j, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let sd = scale * d;
                let g_row = &mut w_grad[j * layer.in_dim..(j + 1) * layer.in_dim];
                for (g, x) in g_row.iter_mut().zip(input) {
                    *g += sd * x;
                }
                if propagate {
                    let row = &w[j * layer.in_dim..(j + 1) * layer.in_dim];
                    for (n, wk) in next.iter_mut().zip(row) {
                        *n += d * wk;
                    }
                }
                b_grad[j] += sd;
            }
            delta = next;
        }
        Ok(delta)
    }

    pub fn backward(&self, trace: &Trace, upstream: &[f64]) -> Result<Gradients, NnError> {
        let mut params = vec![0.0; self.params.len()];
        let input = self.backward_into(trace, upstream, 1.0, &mut params)?;
        Ok(Gradients { params, input })
    }
}

/// Adam with optional per-element gradient clipping. Gradients are those of a
/// loss to be minimized.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub grad_clip: Option<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(param_count: usize, lr: f64, grad_clip: Option<f64>) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    pub fn restore(&mut self, m: Vec<f64>, v: Vec<f64>, t: u64) -> Result<(), NnError> {
        check_len(self.m.len(), m.len())?;
        check_len(self.v.len(), v.len())?;
        self.m = m;
        self.v = v;
        self.t = t;
        Ok(())
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), NnError> {
        check_len(self.m.len(), params.len())?;
        check_len(self.m.len(), grads.len())?;
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(NnError::NonFiniteGradient(i));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = match self.grad_clip {
                Some(c) => grads[i].clamp(-c, c),
                None => grads[i],
            };
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(NnError::NonFiniteParameter(i));
        }
        Ok(())
    }
}

/// Plain gradient descent, `params -= lr * clip(grad)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub grad_clip: Option<f64>,
}

impl Sgd {
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), NnError> {
        check_len(params.len(), grads.len())?;
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(NnError::NonFiniteGradient(i));
        }
        for (p, &g) in params.iter_mut().zip(grads) {
            let g = match self.grad_clip {
                Some(c) => g.clamp(-c, c),
                None => g,
            };
            *p -= self.lr * g;
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(NnError::NonFiniteParameter(i));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Adam(Adam),
    Sgd(Sgd),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, param_count: usize, lr: f64, grad_clip: Option<f64>) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(param_count, lr, grad_clip)),
            OptimizerKind::Sgd => Optimizer::Sgd(Sgd { lr, grad_clip }),
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), NnError> {
        match self {
            Optimizer::Adam(a) => a.step(params, grads),
            Optimizer::Sgd(s) => s.step(params, grads),
        }
    }
}

/// `Q(a) = V + A(a) - mean(A)`.
pub fn dueling_combine(value: f64, advantages: &[f64]) -> Result<Vec<f64>, NnError> {
    if advantages.is_empty() {
        return Err(NnError::Shape {
            expected: 1,
            got: 0,
        });
    }
    let mean = advantages.iter().sum::<f64>() / advantages.len() as f64;
    Ok(advantages.iter().map(|a| value + a - mean).collect())
}

/// Pulls a gradient on the Q-vector back to the raw `[V, A_1..A_n]` head outputs.
pub fn dueling_backward(upstream_q: &[f64]) -> Vec<f64> {
    let n = upstream_q.len() as f64;
    let total: f64 = upstream_q.iter().sum();
    let mut raw = Vec::with_capacity(upstream_q.len() + 1);
    raw.push(total);
    raw.extend(upstream_q.iter().map(|u| u - total / n));
    raw
}

/// Lowest index among the maxima.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Gradient-side Huber handling: the TD error is clamped to `[-1, 1]`.
pub fn huber_clamp(delta: f64) -> f64 {
    delta.clamp(-1.0, 1.0)
}

/// Dueling Q-network: a dense trunk whose linear output is `[V, A_1..A_n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    net: DenseNet,
    actions: usize,
}

impl QNetwork {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        hidden: &[usize],
        actions: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        if hidden.is_empty() {
            return Err(NnError::Architecture(
                "the Q-network needs at least one hidden layer".into(),
            ));
        }
        if actions == 0 {
            return Err(NnError::Architecture(
                "action count must be positive".into(),
            ));
        }
        Ok(Self {
            net: DenseNet::mlp(obs_dim, hidden, actions + 1, rng)?,
            actions,
        })
    }

    pub fn from_net(net: DenseNet, actions: usize) -> Result<Self, NnError> {
        check_len(actions + 1, net.output_dim())?;
        if net.layers().len() < 2 {
            return Err(NnError::Architecture(
                "the Q-network needs at least one hidden layer".into(),
            ));
        }
        Ok(Self { net, actions })
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    /// Width of the last hidden layer, shared with the TD predictor.
    pub fn feature_dim(&self) -> usize {
        let layers = self.net.layers();
        layers[layers.len() - 1].in_dim
    }

    pub fn q_values(&self, obs: &[f64]) -> Result<Vec<f64>, NnError> {
        let raw = self.net.forward(obs)?;
        dueling_combine(raw[0], &raw[1..])
    }

    pub fn trace(&self, obs: &[f64]) -> Result<Trace, NnError> {
        self.net.trace(obs)
    }

    pub fn q_from_trace(trace: &Trace) -> Vec<f64> {
        let raw = trace.output();
        dueling_combine(raw[0], &raw[1..]).expect("Q-network trace has at least one advantage")
    }

    /// Last hidden activations of a trace.
    pub fn features(trace: &Trace) -> &[f64] {
        &trace.activations[trace.activations.len() - 2]
    }

    pub fn features_of(&self, obs: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(Self::features(&self.net.trace(obs)?).to_vec())
    }

    /// Adds `scale * d Q(s, action) / d theta` into `grads`.
    pub fn accumulate_q_gradient(
        &self,
        trace: &Trace,
        action: usize,
        scale: f64,
        grads: &mut [f64],
    ) -> Result<(), NnError> {
        if action >= self.actions {
            return Err(NnError::Shape {
                expected: self.actions,
                got: action,
            });
        }
        let mut upstream_q = vec![0.0; self.actions];
        upstream_q[action] = 1.0;
        let raw = dueling_backward(&upstream_q);
        self.net
            .accumulate_param_gradient(trace, &raw, scale, grads)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_net_outputs_zero() {
        let net = DenseNet::zeros(&[(3, 4, Activation::Relu), (4, 2, Activation::Linear)]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer() {
        let mut net = DenseNet::zeros(&[(3, 3, Activation::Linear)]).unwrap();
        let mut p = vec![0.0; 12];
        p[0] = 1.0;
        p[4] = 1.0;
        p[8] = 1.0;
        net.set_params(&p).unwrap();
        assert_eq!(
            net.forward(&[0.5, -2.0, 7.0]).unwrap(),
            vec![0.5, -2.0, 7.0]
        );
    }

    #[test]
    fn shape_errors() {
        let net = DenseNet::zeros(&[(3, 2, Activation::Linear)]).unwrap();
        assert_eq!(
            net.forward(&[1.0]),
            Err(NnError::Shape {
                expected: 3,
                got: 1
            })
        );
        let trace = net.trace(&[1.0, 2.0, 3.0]).unwrap();
        assert!(net.backward(&trace, &[1.0]).is_err());
        assert!(DenseNet::zeros(&[(3, 2, Activation::Relu), (3, 1, Activation::Linear)]).is_err());
        assert!(DenseNet::zeros(&[]).is_err());
    }

    #[test]
    fn linear_gradient_is_input() {
        let mut net = DenseNet::zeros(&[(2, 1, Activation::Linear)]).unwrap();
        net.set_params(&[0.3, -0.7, 0.1]).unwrap();
        let x = [2.0, 5.0];
        let g = net.backward(&net.trace(&x).unwrap(), &[1.0]).unwrap();
        assert_eq!(g.params, vec![2.0, 5.0, 1.0]);
        assert_eq!(g.input, vec![0.3, -0.7]);
    }

    #[test]
    fn relu_blocks_negative_preactivation() {
        let mut net =
            DenseNet::zeros(&[(1, 1, Activation::Relu), (1, 1, Activation::Linear)]).unwrap();
        // hidden = relu(-1 * x + 0), out = 2 * hidden
        net.set_params(&[-1.0, 0.0, 2.0, 0.0]).unwrap();
        let g = net.backward(&net.trace(&[3.0]).unwrap(), &[1.0]).unwrap();
        assert_eq!(&g.params[..2], &[0.0, 0.0]);
        assert_eq!(g.input, vec![0.0]);
    }

    #[test]
    fn forward_matches_straight_line_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = DenseNet::mlp(3, &[5], 2, &mut rng).unwrap();
        let p = net.params();
        let x = [0.3, -1.2, 0.8];
        let mut hidden = [0.0; 5];
        for j in 0..5 {
            let mut z = p[15 + j];
            for k in 0..3 {
                z += p[j * 3 + k] * x[k];
            }
            hidden[j] = if z > 0.0 { z } else { 0.0 };
        }
        let base = 20;
        for o in 0..2 {
            let mut z = p[base + 10 + o];
            for j in 0..5 {
                z += p[base + o * 5 + j] * hidden[j];
            }
            let got = net.forward(&x).unwrap()[o];
            assert!((got - z).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut params = vec![0.5, -0.25];
        let mut adam = Adam::new(2, 0.01, Some(10.0));
        adam.step(&mut params, &[0.0, 0.0]).unwrap();
        assert_eq!(params, vec![0.5, -0.25]);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut params = vec![0.0, 0.0];
        let mut adam = Adam::new(2, 0.01, None);
        for _ in 0..100 {
            adam.step(&mut params, &[2.0, -3.0]).unwrap();
        }
        assert!(params[0] < 0.0 && params[1] > 0.0);
    }

    #[test]
    fn adam_clips_per_element() {
        let mut a = Adam::new(1, 0.01, Some(10.0));
        let mut b = Adam::new(1, 0.01, None);
        let mut pa = vec![0.0];
        let mut pb = vec![0.0];
        a.step(&mut pa, &[100.0]).unwrap();
        a.step(&mut pa, &[-3.0]).unwrap();
        b.step(&mut pb, &[10.0]).unwrap();
        b.step(&mut pb, &[-3.0]).unwrap();
        assert_eq!(pa, pb);
        assert_eq!(a.moments(), b.moments());
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut params = vec![0.0];
        let mut adam = Adam::new(1, 0.01, Some(10.0));
        assert_eq!(
            adam.step(&mut params, &[f64::NAN]),
            Err(NnError::NonFiniteGradient(0))
        );
        assert_eq!(adam.steps(), 0);
    }

    #[test]
    fn dueling_examples() {
        assert_eq!(dueling_combine(1.0, &[0.0, 0.0]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(dueling_combine(0.0, &[1.0, 3.0]).unwrap(), vec![-1.0, 1.0]);
        assert!(dueling_combine(0.0, &[]).is_err());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.0, 5.0, 1.0]), 1);
        assert_eq!(argmax(&[3.0, 3.0]), 0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn dueling_argmax_invariant(
                value in -10.0f64..10.0,
                adv in proptest::collection::vec(-10.0f64..10.0, 1..8),
                shift in -100.0f64..100.0,
            ) {
                let q = dueling_combine(value, &adv).unwrap();
                let shifted: Vec<f64> = adv.iter().map(|a| a + shift).collect();
                let q2 = dueling_combine(value, &shifted).unwrap();
                prop_assert_eq!(argmax(&q), argmax(&adv));
                prop_assert_eq!(argmax(&q2), argmax(&q));
            }
        }
    }
}

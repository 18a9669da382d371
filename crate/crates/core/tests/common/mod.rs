//! Oracle checks shared by the acceptance target and the integration tests.

#![allow(dead_code)]

use pper::clip::{batch_average_estimate, closed_form, rho_for_sigma_point, ClipState};
use pper::metrics::{normalized_max_forget, ScoreCurve};
use pper::nn::{DenseNet, QNetwork};
use pper::predictor::{assemble_input, PredictorLoss, PredictorNet};
use pper::replay::{PriorityTree, SamplingMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Outcome of one check: a verdict plus a one-line measurement.
#[derive(Debug, Clone)]
pub struct Check {
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

/// `(p + eps)^alpha / sum`, by direct evaluation.
pub fn oracle_distribution(raw: &[f64], alpha: f64, eps: f64) -> Vec<f64> {
    let t: Vec<f64> = raw.iter().map(|p| (p + eps).powf(alpha)).collect();
    let s: f64 = t.iter().sum();
    t.iter().map(|x| x / s).collect()
}

pub const FIDELITY_PRIORITIES: [f64; 8] = [0.05, 0.3, 1.0, 2.5, 0.0, 4.0, 0.7, 9.0];

/// Empirical sampling frequencies against the oracle distribution.
pub fn sampling_fidelity(draws: usize, mode: SamplingMode, seed: u64) -> (f64, Vec<f64>, Vec<f64>) {
    let (alpha, eps) = (0.6, 1e-6);
    let mut tree = PriorityTree::new(8, alpha, eps).unwrap();
    for p in FIDELITY_PRIORITIES {
        tree.insert(p).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = [0u64; 8];
    let per_call = 1000;
    for _ in 0..draws / per_call {
        for s in tree.sample_slots(per_call, mode, &mut rng).unwrap() {
            counts[s] += 1;
        }
    }
    let empirical: Vec<f64> = counts.iter().map(|&c| c as f64 / draws as f64).collect();
    let oracle = oracle_distribution(&FIDELITY_PRIORITIES, alpha, eps);
    let err = empirical
        .iter()
        .zip(&oracle)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    (err, empirical, oracle)
}

/// Random inserts and updates on a tree mirrored by a plain vector; returns
/// the largest deviation seen between the tree and the linear-scan oracle.
pub fn tree_oracle(ops: usize, capacity: usize, seed: u64) -> f64 {
    let (alpha, eps) = (0.6, 1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tree = PriorityTree::new(capacity, alpha, eps).unwrap();
    let mut mirror: Vec<f64> = Vec::new();
    let mut cursor = 0;
    let mut worst: f64 = 0.0;
    for op in 0..ops {
        // Heavy-tailed priorities so spikes sit next to tiny values.
        let p = rng.random::<f64>().powi(3) * 10f64.powi(rng.random_range(-3..4));
        if mirror.is_empty() || rng.random::<f64>() < 0.4 {
            tree.insert(p).unwrap();
            if mirror.len() < capacity {
                mirror.push(p);
            } else {
                mirror[cursor] = p;
            }
            cursor = (cursor + 1) % capacity;
        } else {
            let slot = rng.random_range(0..mirror.len());
            tree.update(slot, p).unwrap();
            mirror[slot] = p;
        }
        if op % 97 == 0 || op + 1 == ops {
            let oracle = oracle_distribution(&mirror, alpha, eps);
            let full = tree.full_distribution().unwrap();
            for (i, o) in oracle.iter().enumerate() {
                worst = worst.max((full[i] - o).abs());
                worst = worst.max((tree.probability(i).unwrap() - o).abs());
            }
        }
    }
    worst
}

/// Recursive estimate against the closed form over random sequences.
pub fn clip_exactness(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for lambda in [0.5, 0.9, 0.9985] {
        for _ in 0..200 {
            let len = rng.random_range(1..=50);
            let mus: Vec<f64> = (0..len).map(|_| rng.random::<f64>() * 5.0).collect();
            let mut state = ClipState::new(lambda, 0.12, 3.7).unwrap();
            for &m in &mus {
                state.update(m).unwrap();
            }
            worst = worst.max((state.p_tilde() - closed_form(&mus, lambda).unwrap()).abs());
        }
    }
    worst
}

/// Stationary memory of folded-Gaussian priorities sampled with `alpha = 0.6`.
/// Returns `(mu, mean delta_a, mean p_tilde)`.
pub fn unbiasedness(batches: usize, seed: u64) -> (f64, f64, f64) {
    let n = 1000;
    let k = 32;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.3).unwrap();
    let errors: Vec<f64> = (0..n).map(|_| f64::abs(normal.sample(&mut rng))).collect();
    let mu = errors.iter().sum::<f64>() / n as f64;
    let mut tree = PriorityTree::new(n, 0.6, 1e-6).unwrap();
    for &e in &errors {
        tree.insert(e).unwrap();
    }
    let mut state = ClipState::default();
    let (mut sum_a, mut sum_p) = (0.0, 0.0);
    for _ in 0..batches {
        let slots = tree
            .sample_slots(k, SamplingMode::Independent, &mut rng)
            .unwrap();
        let weights: Vec<f64> = slots
            .iter()
            .map(|&s| 1.0 / (n as f64 * tree.probability(s).unwrap()))
            .collect();
        let abs: Vec<f64> = slots.iter().map(|&s| errors[s]).collect();
        let delta_a = batch_average_estimate(&weights, &abs).unwrap();
        state.update(delta_a).unwrap();
        sum_a += delta_a;
        sum_p += state.p_tilde();
    }
    (mu, sum_a / batches as f64, sum_p / batches as f64)
}

/// Monte Carlo mean of `|X|`, `X ~ N(0, sigma^2)`.
pub fn folded_mean_mc(sigma: f64, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).unwrap();
    (0..samples)
        .map(|_| f64::abs(normal.sample(&mut rng)))
        .sum::<f64>()
        / samples as f64
}

pub fn rho_values() -> (f64, f64) {
    (
        rho_for_sigma_point(3.0).unwrap(),
        rho_for_sigma_point(0.1).unwrap(),
    )
}

/// `|a - n| / max(|a| + |n|, tiny)` over whole vectors (Euclidean norms).
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / (na + nn).max(1e-12)
}

fn central_difference(params: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let h = 1e-5;
    let mut p = params.to_vec();
    (0..params.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn jitter(net: &mut DenseNet, rng: &mut ChaCha8Rng) {
    for p in net.params_mut() {
        *p += rng.random_range(-0.3..0.3);
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()
}

/// Worst relative error of dense-net parameter and input gradients.
pub fn dense_gradients(configs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..configs {
        let input = rng.random_range(1..6);
        let hidden: Vec<usize> = (0..rng.random_range(0..3))
            .map(|_| rng.random_range(2..8))
            .collect();
        let output = rng.random_range(1..4);
        let mut net = DenseNet::mlp(input, &hidden, output, &mut rng).unwrap();
        jitter(&mut net, &mut rng);
        let x = random_vec(&mut rng, input);
        let u = random_vec(&mut rng, output);
        let g = net.backward(&net.trace(&x).unwrap(), &u).unwrap();
        let loss = |n: &DenseNet, x: &[f64]| {
            n.forward(x)
                .unwrap()
                .iter()
                .zip(&u)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let numeric = central_difference(net.params(), |p| {
            let mut n = net.clone();
            n.set_params(p).unwrap();
            loss(&n, &x)
        });
        worst = worst.max(relative_error(&g.params, &numeric));
        let numeric_x = central_difference(&x, |xx| loss(&net, xx));
        worst = worst.max(relative_error(&g.input, &numeric_x));
    }
    worst
}

/// Worst relative error of `d Q(s, a) / d theta` through the dueling head.
pub fn q_gradients(configs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..configs {
        let obs = rng.random_range(1..6);
        let hidden: Vec<usize> = (0..rng.random_range(1..3))
            .map(|_| rng.random_range(2..8))
            .collect();
        let actions = rng.random_range(1..5);
        let mut q = QNetwork::new(obs, &hidden, actions, &mut rng).unwrap();
        jitter(q.net_mut(), &mut rng);
        let s = random_vec(&mut rng, obs);
        let a = rng.random_range(0..actions);
        let mut g = vec![0.0; q.net().param_count()];
        q.accumulate_q_gradient(&q.trace(&s).unwrap(), a, 1.0, &mut g)
            .unwrap();
        let numeric = central_difference(q.net().params(), |p| {
            let mut n = q.clone();
            n.net_mut().set_params(p).unwrap();
            n.q_values(&s).unwrap()[a]
        });
        worst = worst.max(relative_error(&g, &numeric));
    }
    worst
}

fn huber(r: f64) -> f64 {
    if r.abs() <= 1.0 {
        0.5 * r * r
    } else {
        r.abs() - 0.5
    }
}

/// Worst relative error of the predictor update against the gradient of its
/// loss, for both the squared and the Huber loss.
pub fn predictor_gradients(configs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for i in 0..configs {
        let features = rng.random_range(1..6);
        let actions = rng.random_range(1..5);
        let mut p = PredictorNet::new(features, actions, 32, &mut rng).unwrap();
        jitter(p.head_mut(), &mut rng);
        let input = assemble_input(
            &random_vec(&mut rng, features),
            &random_vec(&mut rng, features),
            rng.random_range(0..actions),
            actions,
            rng.random_range(-1.0..1.0),
        );
        let delta = rng.random_range(-3.0..3.0);
        let loss = if i % 2 == 0 {
            PredictorLoss::Squared
        } else {
            PredictorLoss::Huber
        };
        let mut acc = vec![0.0; p.head().param_count()];
        p.accumulate_update(&input, delta, loss, &mut acc).unwrap();
        // The accumulator holds the negative loss gradient.
        let analytic: Vec<f64> = acc.iter().map(|g| -g).collect();
        let numeric = central_difference(p.head().params(), |params| {
            let mut n = p.head().clone();
            n.set_params(params).unwrap();
            let r = delta - n.forward(&input).unwrap()[0];
            match loss {
                PredictorLoss::Squared => 0.5 * r * r,
                PredictorLoss::Huber => huber(r),
            }
        });
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

/// The three fixture curves: monotone, `[0, 10, 2, 5]`, peak then global min.
pub fn forget_fixtures() -> [(f64, f64); 3] {
    let eval = |s: &[f64]| normalized_max_forget(&ScoreCurve::from_scores(s).unwrap()).value;
    [
        (eval(&[0.0, 1.0, 2.0, 3.0, 4.0]), 0.0),
        (eval(&[0.0, 10.0, 2.0, 5.0]), 0.8),
        (eval(&[1.0, 10.0, 4.0, 0.0, 3.0]), 1.0),
    ]
}

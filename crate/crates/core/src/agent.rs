//! Double DQN with a dueling head, trained from prioritized replay.
//!
//! One [`Agent::train_step`] is one environment step: act, store the
//! transition with its initial priority, and every `t_replay` steps replay a
//! batch, rewrite the sampled priorities and update the Q-network, the TD
//! predictor and the clip estimator. The target network is synchronized every
//! `t_target` steps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::clip::{
    batch_average_estimate, ClipError, ClipState, DEFAULT_LAMBDA, DEFAULT_RHO_MAX, DEFAULT_RHO_MIN,
};
use crate::env::{Env, EnvError};
use crate::nn::{argmax, huber_clamp, Adam, NnError, Optimizer, OptimizerKind, QNetwork};
use crate::predictor::{PredictorError, PredictorLoss, PredictorNet};
use crate::replay::{Experience, ReplayError, ReplayMemory, SamplingMode};
use crate::strategy::{InitSource, StrategyError, StrategyKind, StrategyState};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("invalid agent configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Clip(#[from] ClipError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("numerical failure at step {step}: {source}")]
    Numerical { step: u64, source: Box<AgentError> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub gamma: f64,
    pub alpha: f64,
    pub beta_start: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: u64,
    pub eta_q: f64,
    /// Defaults to `1.5 * eta_q` when unset.
    pub eta_p: Option<f64>,
    pub t_replay: u64,
    pub t_target: u64,
    pub batch_size: usize,
    pub capacity: usize,
    pub warmup: usize,
    pub t_max: u64,
    pub reward_clip: bool,
    pub priority_epsilon: f64,
    pub hidden: Vec<usize>,
    pub predictor_width: usize,
    pub lambda: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub sampling: SamplingMode,
    pub optimizer: OptimizerKind,
    pub grad_clip: Option<f64>,
    pub huber: bool,
    pub predictor_loss: PredictorLoss,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            alpha: 0.6,
            beta_start: 0.4,
            epsilon_start: 1.0,
            epsilon_end: 0.1,
            epsilon_decay_steps: 20_000,
            eta_q: 5e-4,
            eta_p: None,
            t_replay: 4,
            t_target: 500,
            batch_size: 32,
            capacity: 10_000,
            warmup: 500,
            t_max: 200_000,
            reward_clip: true,
            priority_epsilon: 1e-6,
            hidden: vec![64],
            predictor_width: 64,
            lambda: DEFAULT_LAMBDA,
            rho_min: DEFAULT_RHO_MIN,
            rho_max: DEFAULT_RHO_MAX,
            sampling: SamplingMode::Independent,
            optimizer: OptimizerKind::Adam,
            grad_clip: Some(10.0),
            huber: true,
            predictor_loss: PredictorLoss::Squared,
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn eta_p(&self) -> f64 {
        self.eta_p.unwrap_or(1.5 * self.eta_q)
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |msg: String| Err(AgentError::Config(msg));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.beta_start) {
            return bad(format!(
                "beta_start must lie in [0, 1], got {}",
                self.beta_start
            ));
        }
        for (name, e) in [
            ("epsilon_start", self.epsilon_start),
            ("epsilon_end", self.epsilon_end),
        ] {
            if !(0.0..=1.0).contains(&e) {
                return bad(format!("{name} must lie in [0, 1], got {e}"));
            }
        }
        if !(self.eta_q > 0.0
            && self.eta_q.is_finite()
            && self.eta_p() > 0.0
            && self.eta_p().is_finite())
        {
            return bad("learning rates must be positive".into());
        }
        if self.t_replay == 0 || self.t_target == 0 || self.t_max == 0 {
            return bad("t_replay, t_target and t_max must be positive".into());
        }
        if self.batch_size == 0 || self.capacity == 0 {
            return bad("batch_size and capacity must be positive".into());
        }
        if self.warmup > self.capacity {
            return bad(format!(
                "warmup {} exceeds capacity {}",
                self.warmup, self.capacity
            ));
        }
        if !(self.priority_epsilon > 0.0 && self.priority_epsilon.is_finite()) {
            return bad("priority_epsilon must be positive".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer widths must be non-empty and positive".into());
        }
        ClipState::new(self.lambda, self.rho_min, self.rho_max)?;
        Ok(())
    }

    /// IS exponent at environment step `t`, linear from `beta_start` to 1 at `t_max`.
    pub fn beta(&self, t: u64) -> f64 {
        if t >= self.t_max {
            1.0
        } else {
            self.beta_start + (1.0 - self.beta_start) * t as f64 / self.t_max as f64
        }
    }

    /// Exploration rate at environment step `t`.
    pub fn epsilon(&self, t: u64) -> f64 {
        if t >= self.epsilon_decay_steps {
            self.epsilon_end
        } else {
            self.epsilon_start
                + (self.epsilon_end - self.epsilon_start) * t as f64
                    / self.epsilon_decay_steps as f64
        }
    }
}

/// `r + gamma * (1 - terminal) * Q_target(s', argmax_a Q(s', a))`.
pub fn bootstrapped_target(
    reward: f64,
    next_state: &[f64],
    terminal: bool,
    gamma: f64,
    q: &QNetwork,
    target: &QNetwork,
) -> Result<f64, NnError> {
    if terminal {
        return Ok(reward);
    }
    let best = argmax(&q.q_values(next_state)?);
    Ok(reward + gamma * target.q_values(next_state)?[best])
}

pub fn td_error(
    e: &Experience,
    gamma: f64,
    q: &QNetwork,
    target: &QNetwork,
) -> Result<f64, NnError> {
    let y = bootstrapped_target(e.reward, &e.next_state, e.terminal, gamma, q, target)?;
    Ok(y - q.q_values(&e.state)?[e.action])
}

/// Uniform action with probability `epsilon`, else the greedy one. Always
/// draws the coin so the stream advances identically for every `epsilon`.
pub fn epsilon_greedy<R: Rng + ?Sized>(q_values: &[f64], epsilon: f64, rng: &mut R) -> usize {
    if rng.random::<f64>() < epsilon {
        rng.random_range(0..q_values.len())
    } else {
        argmax(q_values)
    }
}

/// One priority write or batch draw, recorded when the write log is enabled.
#[derive(Debug, Clone, PartialEq)]
pub enum LogEvent {
    Insert {
        step: u64,
        slot: usize,
        priority: f64,
    },
    Sample {
        step: u64,
        slots: Vec<usize>,
    },
    Update {
        step: u64,
        slot: usize,
        priority: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchReport {
    pub deltas: Vec<f64>,
    pub delta_hats: Option<Vec<f64>>,
    pub delta_a: f64,
    pub beta: f64,
    pub max_raw_priority: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepReport {
    pub step: u64,
    pub episode_return: Option<f64>,
    pub batch: Option<BatchReport>,
}

/// Running diagnostics of priority writes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WriteCounters {
    pub writes: u64,
    /// Clipped strategies only: writes outside the live `[p_min, p_max]`.
    pub bound_violations: u64,
    pub p_max_seen_decreases: u64,
    pub max_raw_decreases: u64,
    pub last_max_raw: f64,
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub(crate) config: AgentConfig,
    pub(crate) kind: StrategyKind,
    pub(crate) env: Env,
    pub(crate) q: QNetwork,
    pub(crate) target: QNetwork,
    pub(crate) predictor: Option<PredictorNet>,
    pub(crate) q_opt: Optimizer,
    pub(crate) p_opt: Option<Adam>,
    pub(crate) strategy: StrategyState,
    pub(crate) memory: ReplayMemory<Experience>,
    pub(crate) rng: ChaCha8Rng,
    pub(crate) step: u64,
    pub(crate) obs: Vec<f64>,
    pub(crate) episode_return: f64,
    pub(crate) counters: WriteCounters,
    pub(crate) log: Option<Vec<LogEvent>>,
}

impl Agent {
    pub fn new(config: AgentConfig, kind: StrategyKind, mut env: Env) -> Result<Self, AgentError> {
        config.validate()?;
        let spec = *env.spec();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let q = QNetwork::new(
            spec.observation_dim,
            &config.hidden,
            spec.action_count,
            &mut rng,
        )?;
        // The predictor has its own stream so every strategy shares the Q init
        // and the training stream for a given seed.
        let mut predictor_rng = ChaCha8Rng::seed_from_u64(config.seed);
        predictor_rng.set_stream(1);
        let predictor = if kind.flags().pred {
            Some(PredictorNet::new(
                q.feature_dim(),
                spec.action_count,
                config.predictor_width,
                &mut predictor_rng,
            )?)
        } else {
            None
        };
        let q_opt = Optimizer::new(
            config.optimizer,
            q.net().param_count(),
            config.eta_q,
            config.grad_clip,
        );
        let p_opt = predictor
            .as_ref()
            .map(|p| Adam::new(p.head().param_count(), config.eta_p(), None));
        let clip = ClipState::new(config.lambda, config.rho_min, config.rho_max)?;
        let memory = ReplayMemory::new(
            config.capacity,
            config.alpha,
            config.priority_epsilon,
            config.sampling,
        )?;
        let obs = env.reset(&mut rng);
        Ok(Self {
            target: q.clone(),
            q,
            predictor,
            q_opt,
            p_opt,
            strategy: StrategyState::new(kind, clip),
            memory,
            rng,
            step: 0,
            obs,
            episode_return: 0.0,
            counters: WriteCounters::default(),
            log: None,
            config,
            kind,
            env,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn kind(&self) -> StrategyKind {
        self.kind
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn q_network(&self) -> &QNetwork {
        &self.q
    }

    pub fn q_network_mut(&mut self) -> &mut QNetwork {
        &mut self.q
    }

    pub fn target_network(&self) -> &QNetwork {
        &self.target
    }

    pub fn predictor(&self) -> Option<&PredictorNet> {
        self.predictor.as_ref()
    }

    pub fn strategy(&self) -> &StrategyState {
        &self.strategy
    }

    pub fn memory(&self) -> &ReplayMemory<Experience> {
        &self.memory
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn counters(&self) -> &WriteCounters {
        &self.counters
    }

    pub fn enable_log(&mut self) {
        self.log = Some(Vec::new());
    }

    pub fn take_log(&mut self) -> Vec<LogEvent> {
        self.log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn act(&mut self, obs: &[f64], epsilon: f64) -> Result<usize, AgentError> {
        let q = self.q.q_values(obs)?;
        Ok(epsilon_greedy(&q, epsilon, &mut self.rng))
    }

    pub fn td_error(&self, e: &Experience) -> Result<f64, AgentError> {
        Ok(td_error(e, self.config.gamma, &self.q, &self.target)?)
    }

    fn record(&mut self, event: LogEvent) {
        if let Some(log) = self.log.as_mut() {
            log.push(event);
        }
    }

    fn check_write(&mut self, p: f64) {
        self.counters.writes += 1;
        if self.kind.flags().clip {
            let clip = self.strategy.clip_state();
            if !(clip.p_min() <= p && p <= clip.p_max()) {
                self.counters.bound_violations += 1;
            }
        }
    }

    /// Runs one environment step and, when due, one replay update.
    pub fn train_step(&mut self) -> Result<StepReport, AgentError> {
        let t = self.step + 1;
        self.train_step_inner(t).map_err(|e| match e {
            AgentError::Nn(_)
            | AgentError::Predictor(_)
            | AgentError::Replay(_)
            | AgentError::Clip(_)
            | AgentError::Strategy(_) => AgentError::Numerical {
                step: t,
                source: Box::new(e),
            },
            other => other,
        })
    }

    fn train_step_inner(&mut self, t: u64) -> Result<StepReport, AgentError> {
        let obs = std::mem::take(&mut self.obs);
        let action = self.act(&obs, self.config.epsilon(t - 1))?;
        let result = self.env.step(action)?;
        let reward = if self.config.reward_clip {
            result.reward.clamp(-1.0, 1.0)
        } else {
            result.reward
        };
        self.episode_return += result.reward;
        let e = Experience {
            state: obs,
            action,
            reward,
            next_state: result.observation.clone(),
            terminal: result.terminal,
        };
        let p = self.initial_priority(&e)?;
        self.check_write(p);
        let slot = self.memory.insert(e, p)?;
        self.record(LogEvent::Insert {
            step: t,
            slot,
            priority: p,
        });

        let mut report = StepReport {
            step: t,
            ..StepReport::default()
        };
        if result.done() {
            report.episode_return = Some(self.episode_return);
            self.episode_return = 0.0;
            self.obs = self.env.reset(&mut self.rng);
        } else {
            self.obs = result.observation;
        }
        self.step = t;

        if t % self.config.t_replay == 0 && self.memory.len() >= self.config.warmup {
            report.batch = Some(self.replay(t)?);
        }
        if t % self.config.t_target == 0 {
            self.target = self.q.clone();
        }
        Ok(report)
    }

    fn initial_priority(&self, e: &Experience) -> Result<f64, AgentError> {
        let (td, pred) = match self.kind.init_source() {
            InitSource::MaxSeen => (None, None),
            InitSource::TdError => (Some(self.td_error(e)?), None),
            InitSource::Prediction => {
                let predictor = self
                    .predictor
                    .as_ref()
                    .expect("prediction strategies own a predictor");
                (None, Some(predictor.predict(e, &self.q)?))
            }
        };
        Ok(self.strategy.initial_priority(td, pred)?)
    }

    fn replay(&mut self, t: u64) -> Result<BatchReport, AgentError> {
        let k = self.config.batch_size;
        let beta = self.config.beta(t);
        let batch = self.memory.sample_batch(k, &mut self.rng)?;
        self.record(LogEvent::Sample {
            step: t,
            slots: batch.indices.clone(),
        });
        let weights: Vec<f64> = batch.is_weights.iter().map(|w| w.powf(beta)).collect();
        let max_w = weights.iter().copied().fold(0.0, f64::max);

        let mut grad_q = vec![0.0; self.q.net().param_count()];
        let mut delta_p = self
            .predictor
            .as_ref()
            .map(|p| vec![0.0; p.head().param_count()]);
        let mut deltas = Vec::with_capacity(k);
        let mut delta_hats = self.predictor.as_ref().map(|_| Vec::with_capacity(k));
        let mut abs_tds = Vec::with_capacity(k);

        for (i, e) in batch.experiences.iter().enumerate() {
            let trace_s = self.q.trace(&e.state)?;
            let trace_next = self.q.trace(&e.next_state)?;
            let y = if e.terminal {
                e.reward
            } else {
                let best = argmax(&QNetwork::q_from_trace(&trace_next));
                e.reward + self.config.gamma * self.target.q_values(&e.next_state)?[best]
            };
            let delta = y - QNetwork::q_from_trace(&trace_s)[e.action];
            if !delta.is_finite() {
                return Err(NnError::NonFiniteGradient(0).into());
            }
            let clamped = if self.config.huber {
                huber_clamp(delta)
            } else {
                delta
            };
            // Loss gradient of the IS-weighted update, normalized by the largest weight.
            self.q.accumulate_q_gradient(
                &trace_s,
                e.action,
                -weights[i] * clamped / max_w,
                &mut grad_q,
            )?;

            let hat = match (&self.predictor, delta_p.as_mut()) {
                (Some(predictor), Some(acc)) => {
                    let input =
                        predictor.input_from_traces(&trace_s, &trace_next, e.action, e.reward)?;
                    Some(predictor.accumulate_update(
                        &input,
                        delta,
                        self.config.predictor_loss,
                        acc,
                    )?)
                }
                _ => None,
            };
            let before = self.strategy.p_max_seen();
            let p = self.strategy.batch_priority(delta, hat)?;
            if self.strategy.p_max_seen() < before {
                self.counters.p_max_seen_decreases += 1;
            }
            self.check_write(p);
            self.memory.update_priority(batch.indices[i], p)?;
            self.record(LogEvent::Update {
                step: t,
                slot: batch.indices[i],
                priority: p,
            });
            deltas.push(delta);
            if let (Some(h), Some(v)) = (hat, delta_hats.as_mut()) {
                v.push(h);
            }
            abs_tds.push(delta.abs());
        }

        let mut params = self.q.net().params().to_vec();
        self.q_opt.step(&mut params, &grad_q)?;
        self.q.net_mut().set_params(&params)?;
        if let (Some(predictor), Some(opt), Some(acc)) =
            (self.predictor.as_mut(), self.p_opt.as_mut(), delta_p)
        {
            let grad: Vec<f64> = acc.iter().map(|g| -g).collect();
            let mut params = predictor.head().params().to_vec();
            opt.step(&mut params, &grad)?;
            predictor.head_mut().set_params(&params)?;
        }
        let delta_a = batch_average_estimate(&batch.is_weights, &abs_tds)?;
        self.strategy.update_clip(delta_a)?;

        let max_raw = self.memory.tree().max_raw_priority()?;
        if max_raw < self.counters.last_max_raw {
            self.counters.max_raw_decreases += 1;
        }
        self.counters.last_max_raw = max_raw;
        Ok(BatchReport {
            deltas,
            delta_hats,
            delta_a,
            beta,
            max_raw_priority: max_raw,
        })
    }

    /// Mean return of `episodes` greedy episodes on a frozen copy of the
    /// environment. Uses its own stream so evaluation never perturbs training.
    pub fn evaluate(&self, episodes: usize, epsilon: f64, seed: u64) -> Result<f64, AgentError> {
        let mut env = self.env.frozen_clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut total = 0.0;
        for _ in 0..episodes {
            let mut obs = env.reset(&mut rng);
            loop {
                let q = self.q.q_values(&obs)?;
                let r = env.step(epsilon_greedy(&q, epsilon, &mut rng))?;
                total += r.reward;
                if r.done() {
                    break;
                }
                obs = r.observation;
            }
        }
        Ok(total / episodes.max(1) as f64)
    }
}

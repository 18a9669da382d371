//! TOML run configuration.
//!
//! ```toml
//! [run]
//! master_seed = 7
//! strategies = ["per", "pper"]
//! envs = ["rewardshift"]
//! seeds = 5
//!
//! [agent]
//! eta_q = 1e-3
//!
//! [env.rewardshift]
//! period = 50000
//!
//! [env.rewardshift.agent]
//! t_max = 200000
//! ```
//!
//! Every key is optional and unknown keys are rejected. `[env.<name>.agent]`
//! overrides `[agent]` for runs on that environment.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::agent::AgentConfig;
use crate::env::{Env, EnvKind};
use crate::nn::OptimizerKind;
use crate::predictor::{PredictorLoss, ALLOWED_WIDTHS};
use crate::replay::SamplingMode;
use crate::strategy::StrategyKind;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("invalid value for {field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub agent: AgentSection,
    #[serde(default)]
    pub env: EnvSections,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub master_seed: Option<u64>,
    pub strategies: Option<Vec<String>>,
    pub envs: Option<Vec<String>>,
    pub seeds: Option<usize>,
    pub eval_interval: Option<u64>,
    pub eval_episodes: Option<usize>,
    pub eval_epsilon: Option<f64>,
    pub trace_interval: Option<u64>,
    pub histogram_interval: Option<u64>,
    pub histogram_bins: Option<usize>,
    pub batch_window: Option<usize>,
    pub snapshot_interval: Option<u64>,
    pub out: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSection {
    pub gamma: Option<f64>,
    pub alpha: Option<f64>,
    pub beta_start: Option<f64>,
    pub epsilon_start: Option<f64>,
    pub epsilon_end: Option<f64>,
    pub epsilon_decay_steps: Option<u64>,
    pub eta_q: Option<f64>,
    pub eta_p: Option<f64>,
    pub t_replay: Option<u64>,
    pub t_target: Option<u64>,
    pub batch_size: Option<usize>,
    pub capacity: Option<usize>,
    pub warmup: Option<usize>,
    pub t_max: Option<u64>,
    pub reward_clip: Option<bool>,
    pub priority_epsilon: Option<f64>,
    pub hidden: Option<Vec<usize>>,
    pub predictor_width: Option<usize>,
    pub lambda: Option<f64>,
    pub rho_min: Option<f64>,
    pub rho_max: Option<f64>,
    pub sampling: Option<String>,
    pub optimizer: Option<String>,
    pub grad_clip: Option<f64>,
    pub huber: Option<bool>,
    pub predictor_loss: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSections {
    pub chain: Option<ChainSection>,
    pub gridworld: Option<GridSection>,
    pub cliffwalk: Option<CliffSection>,
    pub rewardshift: Option<ShiftSection>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSection {
    pub n: Option<usize>,
    #[serde(default)]
    pub agent: AgentSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub random_start: Option<bool>,
    #[serde(default)]
    pub agent: AgentSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliffSection {
    #[serde(default)]
    pub agent: AgentSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSection {
    pub period: Option<u64>,
    pub phases: Option<usize>,
    pub random_start: Option<bool>,
    #[serde(default)]
    pub agent: AgentSection,
}

impl AgentSection {
    /// Applies the set fields on top of `base`.
    pub fn apply(
        &self,
        base: &AgentConfig,
        field_prefix: &str,
    ) -> Result<AgentConfig, ConfigError> {
        let mut c = base.clone();
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f.clone() { c.$f = v; } )* };
        }
        set!(
            gamma,
            alpha,
            beta_start,
            epsilon_start,
            epsilon_end,
            epsilon_decay_steps,
            eta_q,
            t_replay,
            t_target,
            batch_size,
            capacity,
            warmup,
            t_max,
            reward_clip,
            priority_epsilon,
            hidden,
            predictor_width,
            lambda,
            rho_min,
            rho_max,
            huber
        );
        if let Some(v) = self.eta_p {
            c.eta_p = Some(v);
        }
        if let Some(v) = self.grad_clip {
            c.grad_clip = if v > 0.0 { Some(v) } else { None };
        }
        if let Some(s) = &self.sampling {
            c.sampling = match s.as_str() {
                "independent" => SamplingMode::Independent,
                "stratified" => SamplingMode::Stratified,
                other => {
                    return Err(invalid(
                        &format!("{field_prefix}.sampling"),
                        format!("unknown mode {other:?}"),
                    ))
                }
            };
        }
        if let Some(s) = &self.optimizer {
            c.optimizer = match s.as_str() {
                "adam" => OptimizerKind::Adam,
                "sgd" => OptimizerKind::Sgd,
                other => {
                    return Err(invalid(
                        &format!("{field_prefix}.optimizer"),
                        format!("unknown optimizer {other:?}"),
                    ))
                }
            };
        }
        if let Some(s) = &self.predictor_loss {
            c.predictor_loss = match s.as_str() {
                "squared" => PredictorLoss::Squared,
                "huber" => PredictorLoss::Huber,
                other => {
                    return Err(invalid(
                        &format!("{field_prefix}.predictor_loss"),
                        format!("unknown loss {other:?}"),
                    ))
                }
            };
        }
        if !ALLOWED_WIDTHS.contains(&c.predictor_width) {
            return Err(invalid(
                &format!("{field_prefix}.predictor_width"),
                "must be one of 32, 64, 128, 256, 512",
            ));
        }
        c.validate()
            .map_err(|e| invalid(field_prefix, e.to_string()))?;
        Ok(c)
    }
}

/// Environment constructor parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvParams {
    Chain {
        n: usize,
    },
    Gridworld {
        random_start: bool,
    },
    Cliffwalk,
    Rewardshift {
        period: u64,
        phases: usize,
        random_start: bool,
    },
}

impl EnvParams {
    pub fn kind(&self) -> EnvKind {
        match self {
            EnvParams::Chain { .. } => EnvKind::Chain,
            EnvParams::Gridworld { .. } => EnvKind::Gridworld,
            EnvParams::Cliffwalk => EnvKind::Cliffwalk,
            EnvParams::Rewardshift { .. } => EnvKind::Rewardshift,
        }
    }

    pub fn build(&self) -> Env {
        match *self {
            EnvParams::Chain { n } => Env::chain(n).expect("validated at load time"),
            EnvParams::Gridworld { random_start } => Env::gridworld(random_start),
            EnvParams::Cliffwalk => Env::cliffwalk(),
            EnvParams::Rewardshift {
                period,
                phases,
                random_start,
            } => Env::rewardshift(period, phases, random_start).expect("validated at load time"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvRun {
    pub params: EnvParams,
    pub agent: AgentConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub master_seed: u64,
    pub strategies: Vec<StrategyKind>,
    pub envs: Vec<EnvRun>,
    pub seeds: usize,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub eval_epsilon: f64,
    pub trace_interval: u64,
    pub histogram_interval: u64,
    pub histogram_bins: usize,
    pub batch_window: usize,
    pub snapshot_interval: u64,
    pub out: Option<String>,
}

/// Desk-scale agent defaults.
pub fn desk_agent() -> AgentConfig {
    AgentConfig {
        eta_q: 1e-3,
        ..AgentConfig::default()
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Self::from_raw(raw)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn from_raw(raw: RawConfig) -> Result<Self, ConfigError> {
        let run = raw.run;
        let base = raw.agent.apply(&desk_agent(), "agent")?;
        let strategies = run
            .strategies
            .unwrap_or_else(|| vec!["per".into(), "pper".into()])
            .iter()
            .map(|s| {
                s.parse::<StrategyKind>()
                    .map_err(|e| invalid("run.strategies", e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if strategies.is_empty() {
            return Err(invalid(
                "run.strategies",
                "at least one strategy is required",
            ));
        }
        let env_names = run.envs.unwrap_or_else(|| vec!["rewardshift".into()]);
        if env_names.is_empty() {
            return Err(invalid("run.envs", "at least one environment is required"));
        }
        let mut envs = Vec::new();
        for name in &env_names {
            let kind: EnvKind = name
                .parse()
                .map_err(|e: crate::env::EnvError| invalid("run.envs", e.to_string()))?;
            let sections = &raw.env;
            let env = match kind {
                EnvKind::Chain => {
                    let s = sections.chain.clone().unwrap_or_default();
                    let n = s.n.unwrap_or(5);
                    if n < 2 {
                        return Err(invalid("env.chain.n", "must be at least 2"));
                    }
                    EnvRun {
                        params: EnvParams::Chain { n },
                        agent: s.agent.apply(&base, "env.chain.agent")?,
                    }
                }
                EnvKind::Gridworld => {
                    let s = sections.gridworld.clone().unwrap_or_default();
                    EnvRun {
                        params: EnvParams::Gridworld {
                            random_start: s.random_start.unwrap_or(false),
                        },
                        agent: s.agent.apply(&base, "env.gridworld.agent")?,
                    }
                }
                EnvKind::Cliffwalk => {
                    let s = sections.cliffwalk.clone().unwrap_or_default();
                    EnvRun {
                        params: EnvParams::Cliffwalk,
                        agent: s.agent.apply(&base, "env.cliffwalk.agent")?,
                    }
                }
                EnvKind::Rewardshift => {
                    let s = sections.rewardshift.clone().unwrap_or_default();
                    let period = s.period.unwrap_or(50_000);
                    let phases = s.phases.unwrap_or(4);
                    if period == 0 {
                        return Err(invalid("env.rewardshift.period", "must be positive"));
                    }
                    if !(1..=4).contains(&phases) {
                        return Err(invalid("env.rewardshift.phases", "must lie in 1..=4"));
                    }
                    EnvRun {
                        params: EnvParams::Rewardshift {
                            period,
                            phases,
                            random_start: s.random_start.unwrap_or(true),
                        },
                        agent: s.agent.apply(&base, "env.rewardshift.agent")?,
                    }
                }
            };
            if envs.iter().any(|e: &EnvRun| e.params.kind() == kind) {
                return Err(invalid("run.envs", format!("{name} listed twice")));
            }
            envs.push(env);
        }
        let positive = |field: &str, v: u64| {
            if v == 0 {
                Err(invalid(field, "must be positive"))
            } else {
                Ok(v)
            }
        };
        let config = RunConfig {
            master_seed: run.master_seed.unwrap_or(0),
            strategies,
            envs,
            seeds: run.seeds.unwrap_or(5),
            eval_interval: positive("run.eval_interval", run.eval_interval.unwrap_or(5000))?,
            eval_episodes: run.eval_episodes.unwrap_or(5),
            eval_epsilon: run.eval_epsilon.unwrap_or(0.0),
            trace_interval: positive("run.trace_interval", run.trace_interval.unwrap_or(1000))?,
            histogram_interval: run.histogram_interval.unwrap_or(50_000),
            histogram_bins: run.histogram_bins.unwrap_or(32),
            batch_window: run.batch_window.unwrap_or(1000),
            snapshot_interval: run.snapshot_interval.unwrap_or(0),
            out: run.out,
        };
        if config.seeds == 0 {
            return Err(invalid("run.seeds", "must be positive"));
        }
        if config.eval_episodes == 0 {
            return Err(invalid("run.eval_episodes", "must be positive"));
        }
        if !(0.0..=1.0).contains(&config.eval_epsilon) {
            return Err(invalid("run.eval_epsilon", "must lie in [0, 1]"));
        }
        if config.histogram_bins == 0 {
            return Err(invalid("run.histogram_bins", "must be positive"));
        }
        if config.batch_window < 2 {
            return Err(invalid("run.batch_window", "must be at least 2"));
        }
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c.strategies, vec![StrategyKind::Per, StrategyKind::Pper]);
        assert_eq!(c.envs.len(), 1);
        assert_eq!(c.envs[0].agent, desk_agent());
        assert_eq!(c.seeds, 5);
    }

    #[test]
    fn env_overrides_layer_on_agent_section() {
        let c = RunConfig::from_toml(
            r#"
            [run]
            envs = ["chain", "gridworld"]
            [agent]
            gamma = 0.95
            t_max = 1000
            [env.chain]
            n = 6
            [env.chain.agent]
            t_max = 300
            "#,
        )
        .unwrap();
        assert_eq!(c.envs[0].params, EnvParams::Chain { n: 6 });
        assert_eq!(c.envs[0].agent.t_max, 300);
        assert_eq!(c.envs[0].agent.gamma, 0.95);
        assert_eq!(c.envs[1].agent.t_max, 1000);
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let err = RunConfig::from_toml("[agent]\ngama = 0.9\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("gama"), "{err}");
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn unknown_strategy_is_a_config_error() {
        let err = RunConfig::from_toml("[run]\nstrategies = [\"rank\"]\n").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { ref field, .. } if field == "run.strategies"));
    }

    #[test]
    fn invalid_values_name_the_field() {
        let err = RunConfig::from_toml("[agent]\ngamma = 1.5\n").unwrap_err();
        assert!(
            matches!(err, ConfigError::Invalid { ref field, .. } if field == "agent"),
            "{err}"
        );
        let err = RunConfig::from_toml("[agent]\npredictor_width = 48\n").unwrap_err();
        assert!(err.to_string().contains("predictor_width"));
        let err = RunConfig::from_toml("[run]\nenvs = [\"pong\"]\n").unwrap_err();
        assert!(err.to_string().contains("pong"));
    }
}

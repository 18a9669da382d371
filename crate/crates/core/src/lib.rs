//! Prioritized experience replay with TD-error initialization, clipping and
//! prediction, plus a small double dueling DQN and toy environments.

pub mod agent;
pub mod clip;
pub mod config;
pub mod env;
pub mod metrics;
pub mod nn;
pub mod predictor;
pub mod replay;
pub mod runner;
pub mod snapshot;
pub mod strategy;

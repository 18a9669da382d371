//! Toy environments with one-hot observations.
//!
//! * `chain(n)`: a corridor of `n` states, actions left/right, reward 1 on
//!   reaching the right end.
//! * `gridworld`: 5x5 grid, goal in the far corner.
//! * `cliffwalk`: 4x12 grid whose bottom edge between start and goal is a
//!   cliff (reward -1, episode ends).
//! * `rewardshift`: 5x5 grid whose goal moves to the next corner every
//!   `period` global steps, leaving a pit (reward -1, episode ends) where the
//!   old goal was. Resets never rewind the phase, so every shift invalidates
//!   what the agent learned and produces a wave of large TD errors.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvError {
    #[error("action {action} out of range (env has {count} actions)")]
    ActionOutOfRange { action: usize, count: usize },
    #[error("episode is over; call reset first")]
    EpisodeOver,
    #[error("invalid environment configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvKind {
    Chain,
    Gridworld,
    Cliffwalk,
    Rewardshift,
}

impl EnvKind {
    pub const ALL: [EnvKind; 4] = [
        EnvKind::Chain,
        EnvKind::Gridworld,
        EnvKind::Cliffwalk,
        EnvKind::Rewardshift,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Chain => "chain",
            EnvKind::Gridworld => "gridworld",
            EnvKind::Cliffwalk => "cliffwalk",
            EnvKind::Rewardshift => "rewardshift",
        }
    }
}

impl std::str::FromStr for EnvKind {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EnvKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| EnvError::InvalidConfig(format!("unknown environment {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub observation_dim: usize,
    pub action_count: usize,
    pub max_episode_steps: usize,
    pub solved_threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    /// Episode cut by the step limit; not a true terminal for bootstrapping.
    pub truncated: bool,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

/// Mutable episode state, exposed for snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EnvState {
    pub position: usize,
    pub episode_steps: usize,
    pub global_steps: u64,
    pub done: bool,
}

const UP: usize = 0;
const RIGHT: usize = 1;
const DOWN: usize = 2;
const LEFT: usize = 3;

#[derive(Debug, Clone, PartialEq)]
enum Layout {
    Chain {
        n: usize,
    },
    Grid {
        rows: usize,
        cols: usize,
        start: usize,
        random_start: bool,
        cliff: Vec<bool>,
        goals: Vec<usize>,
        period: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Env {
    spec: EnvSpec,
    layout: Layout,
    state: EnvState,
    frozen: bool,
}

impl Env {
    pub fn chain(n: usize) -> Result<Self, EnvError> {
        if n < 2 {
            return Err(EnvError::InvalidConfig(
                "chain needs at least 2 states".into(),
            ));
        }
        let spec = EnvSpec {
            kind: EnvKind::Chain,
            observation_dim: n,
            action_count: 2,
            max_episode_steps: 4 * n,
            solved_threshold: 1.0,
        };
        Ok(Self::with_layout(spec, Layout::Chain { n }))
    }

    pub fn gridworld(random_start: bool) -> Self {
        let spec = EnvSpec {
            kind: EnvKind::Gridworld,
            observation_dim: 25,
            action_count: 4,
            max_episode_steps: 50,
            solved_threshold: 1.0,
        };
        let layout = Layout::Grid {
            rows: 5,
            cols: 5,
            start: 0,
            random_start,
            cliff: vec![false; 25],
            goals: vec![24],
            period: u64::MAX,
        };
        Self::with_layout(spec, layout)
    }

    pub fn cliffwalk() -> Self {
        let (rows, cols) = (4, 12);
        let mut cliff = vec![false; rows * cols];
        for c in 1..cols - 1 {
            cliff[(rows - 1) * cols + c] = true;
        }
        let spec = EnvSpec {
            kind: EnvKind::Cliffwalk,
            observation_dim: rows * cols,
            action_count: 4,
            max_episode_steps: 100,
            solved_threshold: 1.0,
        };
        let layout = Layout::Grid {
            rows,
            cols,
            start: (rows - 1) * cols,
            random_start: false,
            cliff,
            goals: vec![rows * cols - 1],
            period: u64::MAX,
        };
        Self::with_layout(spec, layout)
    }

    /// 5x5 grid whose goal visits `phases` corners in turn, `period` global
    /// steps each. After the first shift the previous goal is a pit.
    pub fn rewardshift(period: u64, phases: usize, random_start: bool) -> Result<Self, EnvError> {
        if period == 0 {
            return Err(EnvError::InvalidConfig(
                "rewardshift period must be positive".into(),
            ));
        }
        if !(1..=4).contains(&phases) {
            return Err(EnvError::InvalidConfig(format!(
                "rewardshift phases must lie in 1..=4, got {phases}"
            )));
        }
        let corners = [24, 4, 20, 0];
        let spec = EnvSpec {
            kind: EnvKind::Rewardshift,
            observation_dim: 25,
            action_count: 4,
            max_episode_steps: 50,
            solved_threshold: 1.0,
        };
        let layout = Layout::Grid {
            rows: 5,
            cols: 5,
            start: 12,
            random_start,
            cliff: vec![false; 25],
            goals: corners[..phases].to_vec(),
            period,
        };
        Ok(Self::with_layout(spec, layout))
    }

    fn with_layout(spec: EnvSpec, layout: Layout) -> Self {
        Self {
            spec,
            layout,
            state: EnvState {
                done: true,
                ..EnvState::default()
            },
            frozen: false,
        }
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn state(&self) -> EnvState {
        self.state
    }

    pub fn set_state(&mut self, state: EnvState) -> Result<(), EnvError> {
        if state.position >= self.spec.observation_dim {
            return Err(EnvError::InvalidConfig(format!(
                "position {} out of range",
                state.position
            )));
        }
        self.state = state;
        Ok(())
    }

    /// A copy whose goal phase no longer advances, for evaluation episodes.
    pub fn frozen_clone(&self) -> Self {
        let mut env = self.clone();
        env.frozen = true;
        env
    }

    pub fn phase(&self) -> usize {
        match &self.layout {
            Layout::Chain { .. } => 0,
            Layout::Grid { goals, period, .. } => {
                ((self.state.global_steps / period) % goals.len() as u64) as usize
            }
        }
    }

    pub fn goal(&self) -> usize {
        match &self.layout {
            Layout::Chain { n } => n - 1,
            Layout::Grid { goals, .. } => goals[self.phase()],
        }
    }

    /// The pit cell, once the goal has moved at least once.
    pub fn pit(&self) -> Option<usize> {
        match &self.layout {
            Layout::Grid { goals, period, .. }
                if goals.len() > 1 && self.state.global_steps >= *period =>
            {
                Some(goals[(self.phase() + goals.len() - 1) % goals.len()])
            }
            _ => None,
        }
    }

    pub fn observation(&self) -> Vec<f64> {
        one_hot(self.state.position, self.spec.observation_dim)
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        self.state.position = match &self.layout {
            Layout::Chain { .. } => 0,
            Layout::Grid {
                rows,
                cols,
                start,
                random_start,
                cliff,
                ..
            } => {
                if *random_start {
                    let goal = self.goal();
                    let pit = self.pit();
                    loop {
                        let cell = rng.random_range(0..rows * cols);
                        if cell != goal && Some(cell) != pit && !cliff[cell] {
                            break cell;
                        }
                    }
                } else {
                    *start
                }
            }
        };
        self.state.episode_steps = 0;
        self.state.done = false;
        self.observation()
    }

    pub fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        if action >= self.spec.action_count {
            return Err(EnvError::ActionOutOfRange {
                action,
                count: self.spec.action_count,
            });
        }
        if self.state.done {
            return Err(EnvError::EpisodeOver);
        }
        let (next, reward, terminal) = transition(
            &self.layout,
            self.state.position,
            action,
            self.goal(),
            self.pit(),
        );
        self.state.position = next;
        self.state.episode_steps += 1;
        if !self.frozen {
            self.state.global_steps += 1;
        }
        let truncated = !terminal && self.state.episode_steps >= self.spec.max_episode_steps;
        self.state.done = terminal || truncated;
        Ok(StepResult {
            observation: self.observation(),
            reward,
            terminal,
            truncated,
        })
    }

    /// Optimal action values for the current phase by value iteration, indexed
    /// `[state][action]`. Terminal cells have all-zero rows.
    pub fn optimal_q(&self, gamma: f64) -> Vec<Vec<f64>> {
        let n = self.spec.observation_dim;
        let a = self.spec.action_count;
        let goal = self.goal();
        let pit = self.pit();
        let absorbing = |s: usize| match &self.layout {
            Layout::Chain { n } => s == n - 1,
            Layout::Grid { cliff, .. } => s == goal || cliff[s] || Some(s) == pit,
        };
        let mut v = vec![0.0; n];
        let mut q = vec![vec![0.0; a]; n];
        for _ in 0..10_000 {
            let mut change: f64 = 0.0;
            for s in 0..n {
                if absorbing(s) {
                    continue;
                }
                for act in 0..a {
                    let (next, r, terminal) = transition(&self.layout, s, act, goal, pit);
                    q[s][act] = r + if terminal { 0.0 } else { gamma * v[next] };
                }
                let best = q[s].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                change = change.max((best - v[s]).abs());
                v[s] = best;
            }
            if change < 1e-14 {
                break;
            }
        }
        q
    }
}

fn one_hot(index: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[index] = 1.0;
    v
}

fn transition(
    layout: &Layout,
    position: usize,
    action: usize,
    goal: usize,
    pit: Option<usize>,
) -> (usize, f64, bool) {
    match layout {
        Layout::Chain { n } => {
            let next = if action == 0 {
                position.saturating_sub(1)
            } else {
                (position + 1).min(n - 1)
            };
            if next == n - 1 {
                (next, 1.0, true)
            } else {
                (next, 0.0, false)
            }
        }
        Layout::Grid {
            rows, cols, cliff, ..
        } => {
            let (r, c) = (position / cols, position % cols);
            let (r, c) = match action {
                UP => (r.saturating_sub(1), c),
                RIGHT => (r, (c + 1).min(cols - 1)),
                DOWN => ((r + 1).min(rows - 1), c),
                LEFT => (r, c.saturating_sub(1)),
                _ => unreachable!("action range checked by caller"),
            };
            let next = r * cols + c;
            if cliff[next] || Some(next) == pit {
                (next, -1.0, true)
            } else if next == goal {
                (next, 1.0, true)
            } else {
                (next, 0.0, false)
            }
        }
    }
}

/// Optimal `Q(s, right)` on `chain(n)`: the goal reward discounted over the
/// remaining moves after the first.
pub fn chain_optimal_right(n: usize, s: usize, gamma: f64) -> f64 {
    gamma.powi((n - 2 - s) as i32)
}

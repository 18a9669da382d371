//! Binary agent snapshots for resuming a run.
//!
//! Little-endian layout: the 8-byte magic `PPERSNAP`, a `u32` version, then
//! the mutable agent state (step, RNG position, environment, networks,
//! optimizer moments, priority bookkeeping and the replay memory). Static
//! configuration is not stored: a snapshot is restored into an agent built
//! by [`Agent::new`] from the same config, strategy and environment.

use std::io::{self, Read, Write};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::agent::{Agent, WriteCounters};
use crate::env::EnvState;
use crate::nn::{Adam, Optimizer};
use crate::replay::{Experience, PriorityTree, ReplayMemory};
use crate::strategy::StrategyState;

pub const MAGIC: &[u8; 8] = b"PPERSNAP";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a snapshot (bad magic)")]
    Magic,
    #[error("unsupported snapshot version {0}")]
    Version(u32),
    #[error("snapshot does not match the agent: {0}")]
    Mismatch(String),
}

fn mismatch(e: impl std::fmt::Display) -> SnapshotError {
    SnapshotError::Mismatch(e.to_string())
}

fn put_vec<W: Write>(w: &mut W, v: &[f64]) -> io::Result<()> {
    w.write_u64::<LE>(v.len() as u64)?;
    v.iter().try_for_each(|&x| w.write_f64::<LE>(x))
}

fn get_vec<R: Read>(r: &mut R) -> io::Result<Vec<f64>> {
    let n = r.read_u64::<LE>()? as usize;
    // Cap the preallocation so a corrupt length fails on read, not on alloc.
    let mut v = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        v.push(r.read_f64::<LE>()?);
    }
    Ok(v)
}

fn put_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    w.write_u32::<LE>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn get_str<R: Read>(r: &mut R) -> Result<String, SnapshotError> {
    let n = r.read_u32::<LE>()? as usize;
    if n > 64 {
        return Err(mismatch(format!("string length {n}")));
    }
    let mut buf = vec![0; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(mismatch)
}

fn put_adam<W: Write>(w: &mut W, a: &Adam) -> io::Result<()> {
    let (m, v) = a.moments();
    put_vec(w, m)?;
    put_vec(w, v)?;
    w.write_u64::<LE>(a.steps())
}

fn get_adam<R: Read>(r: &mut R, a: &mut Adam) -> Result<(), SnapshotError> {
    let m = get_vec(r)?;
    let v = get_vec(r)?;
    let t = r.read_u64::<LE>()?;
    a.restore(m, v, t).map_err(mismatch)
}

pub fn save<W: Write>(agent: &Agent, w: &mut W) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(VERSION)?;
    put_str(w, agent.kind.name())?;
    w.write_u64::<LE>(agent.config.seed)?;
    w.write_u64::<LE>(agent.step)?;

    w.write_all(&agent.rng.get_seed())?;
    w.write_u64::<LE>(agent.rng.get_stream())?;
    w.write_u128::<LE>(agent.rng.get_word_pos())?;

    let env = agent.env.state();
    w.write_u64::<LE>(env.position as u64)?;
    w.write_u64::<LE>(env.episode_steps as u64)?;
    w.write_u64::<LE>(env.global_steps)?;
    w.write_u8(env.done as u8)?;
    put_vec(w, &agent.obs)?;
    w.write_f64::<LE>(agent.episode_return)?;

    put_vec(w, agent.q.net().params())?;
    put_vec(w, agent.target.net().params())?;
    if let Some(p) = &agent.predictor {
        put_vec(w, p.head().params())?;
    }
    if let Optimizer::Adam(a) = &agent.q_opt {
        put_adam(w, a)?;
    }
    if let Some(a) = &agent.p_opt {
        put_adam(w, a)?;
    }

    let s = &agent.strategy;
    w.write_f64::<LE>(s.p_max_seen())?;
    w.write_f64::<LE>(s.clip_state().kappa())?;
    w.write_f64::<LE>(s.clip_state().p_tilde())?;

    let c = &agent.counters;
    w.write_u64::<LE>(c.writes)?;
    w.write_u64::<LE>(c.bound_violations)?;
    w.write_u64::<LE>(c.p_max_seen_decreases)?;
    w.write_u64::<LE>(c.max_raw_decreases)?;
    w.write_f64::<LE>(c.last_max_raw)?;

    let tree = agent.memory.tree();
    w.write_u64::<LE>(tree.cursor() as u64)?;
    put_vec(w, tree.raw_priorities())?;
    for e in agent.memory.items() {
        put_vec(w, &e.state)?;
        w.write_u64::<LE>(e.action as u64)?;
        w.write_f64::<LE>(e.reward)?;
        put_vec(w, &e.next_state)?;
        w.write_u8(e.terminal as u8)?;
    }
    Ok(())
}

/// Overwrites the mutable state of `shell` with a saved snapshot.
pub fn restore<R: Read>(mut shell: Agent, r: &mut R) -> Result<Agent, SnapshotError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(SnapshotError::Magic);
    }
    let version = r.read_u32::<LE>()?;
    if version != VERSION {
        return Err(SnapshotError::Version(version));
    }
    let kind = get_str(r)?;
    if kind != shell.kind.name() {
        return Err(mismatch(format!(
            "strategy {kind}, agent is {}",
            shell.kind
        )));
    }
    let seed = r.read_u64::<LE>()?;
    if seed != shell.config.seed {
        return Err(mismatch(format!(
            "seed {seed}, agent has {}",
            shell.config.seed
        )));
    }
    shell.step = r.read_u64::<LE>()?;

    let mut rng_seed = [0u8; 32];
    r.read_exact(&mut rng_seed)?;
    let mut rng = ChaCha8Rng::from_seed(rng_seed);
    rng.set_stream(r.read_u64::<LE>()?);
    rng.set_word_pos(r.read_u128::<LE>()?);
    shell.rng = rng;

    let env = EnvState {
        position: r.read_u64::<LE>()? as usize,
        episode_steps: r.read_u64::<LE>()? as usize,
        global_steps: r.read_u64::<LE>()?,
        done: r.read_u8()? != 0,
    };
    shell.env.set_state(env).map_err(mismatch)?;
    shell.obs = get_vec(r)?;
    shell.episode_return = r.read_f64::<LE>()?;

    shell
        .q
        .net_mut()
        .set_params(&get_vec(r)?)
        .map_err(mismatch)?;
    shell
        .target
        .net_mut()
        .set_params(&get_vec(r)?)
        .map_err(mismatch)?;
    if let Some(p) = &mut shell.predictor {
        p.head_mut().set_params(&get_vec(r)?).map_err(mismatch)?;
    }
    if let Optimizer::Adam(a) = &mut shell.q_opt {
        get_adam(r, a)?;
    }
    if let Some(a) = &mut shell.p_opt {
        get_adam(r, a)?;
    }

    let p_max_seen = r.read_f64::<LE>()?;
    let kappa = r.read_f64::<LE>()?;
    let p_tilde = r.read_f64::<LE>()?;
    let clip = shell
        .strategy
        .clip_state()
        .clone()
        .with_estimate(kappa, p_tilde)
        .map_err(mismatch)?;
    shell.strategy = StrategyState::restore(shell.kind, p_max_seen, clip);

    shell.counters = WriteCounters {
        writes: r.read_u64::<LE>()?,
        bound_violations: r.read_u64::<LE>()?,
        p_max_seen_decreases: r.read_u64::<LE>()?,
        max_raw_decreases: r.read_u64::<LE>()?,
        last_max_raw: r.read_f64::<LE>()?,
    };

    let old = shell.memory.tree();
    let (capacity, alpha, eps) = (old.capacity(), old.alpha(), old.epsilon());
    let cursor = r.read_u64::<LE>()? as usize;
    let raw = get_vec(r)?;
    let tree = PriorityTree::from_raw(capacity, alpha, eps, &raw, cursor).map_err(mismatch)?;
    let mut items = Vec::with_capacity(raw.len());
    for _ in 0..raw.len() {
        items.push(Experience {
            state: get_vec(r)?,
            action: r.read_u64::<LE>()? as usize,
            reward: r.read_f64::<LE>()?,
            next_state: get_vec(r)?,
            terminal: r.read_u8()? != 0,
        });
    }
    shell.memory = ReplayMemory::from_parts(tree, items, shell.memory.mode()).map_err(mismatch)?;
    Ok(shell)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::AgentConfig;
    use crate::env::Env;
    use crate::strategy::StrategyKind;

    fn config() -> AgentConfig {
        AgentConfig {
            hidden: vec![16],
            predictor_width: 32,
            capacity: 64,
            warmup: 16,
            batch_size: 8,
            t_target: 50,
            t_max: 400,
            epsilon_decay_steps: 200,
            seed: 11,
            ..AgentConfig::default()
        }
    }

    #[test]
    fn resume_is_equivalent_to_uninterrupted() {
        for kind in [
            StrategyKind::Per,
            StrategyKind::Pper,
            StrategyKind::TdInitClip,
        ] {
            let env = Env::rewardshift(100, 4, true).unwrap();
            let mut a = Agent::new(config(), kind, env.clone()).unwrap();
            for _ in 0..150 {
                a.train_step().unwrap();
            }
            let mut bytes = Vec::new();
            save(&a, &mut bytes).unwrap();
            let shell = Agent::new(config(), kind, env).unwrap();
            let mut b = restore(shell, &mut bytes.as_slice()).unwrap();
            for _ in 0..150 {
                let ra = a.train_step().unwrap();
                let rb = b.train_step().unwrap();
                assert_eq!(ra, rb);
            }
            assert_eq!(a.q_network(), b.q_network());
            assert_eq!(a.strategy(), b.strategy());
            assert_eq!(
                a.memory().tree().raw_priorities(),
                b.memory().tree().raw_priorities()
            );
            let mut again = Vec::new();
            save(&b, &mut again).unwrap();
            let mut expect = Vec::new();
            save(&a, &mut expect).unwrap();
            assert_eq!(again, expect);
        }
    }

    #[test]
    fn rejects_foreign_bytes() {
        let env = Env::chain(5).unwrap();
        let shell = Agent::new(config(), StrategyKind::Per, env.clone()).unwrap();
        assert!(matches!(
            restore(shell, &mut &b"NOTASNAP0000"[..]),
            Err(SnapshotError::Magic)
        ));
        let a = Agent::new(config(), StrategyKind::Per, env.clone()).unwrap();
        let mut bytes = Vec::new();
        save(&a, &mut bytes).unwrap();
        let other = Agent::new(config(), StrategyKind::Pper, env).unwrap();
        assert!(matches!(
            restore(other, &mut bytes.as_slice()),
            Err(SnapshotError::Mismatch(_))
        ));
    }

    #[test]
    fn truncated_snapshot_is_an_io_error() {
        let env = Env::chain(5).unwrap();
        let mut a = Agent::new(config(), StrategyKind::Pper, env.clone()).unwrap();
        for _ in 0..40 {
            a.train_step().unwrap();
        }
        let mut bytes = Vec::new();
        save(&a, &mut bytes).unwrap();
        bytes.truncate(bytes.len() - 3);
        let shell = Agent::new(config(), StrategyKind::Pper, env).unwrap();
        assert!(matches!(
            restore(shell, &mut bytes.as_slice()),
            Err(SnapshotError::Io(_))
        ));
    }
}

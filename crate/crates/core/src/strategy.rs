//! Priority strategies: PER and the TDInit / TDClip / TDPred combinations.
//!
//! Each strategy is a triple of flags. `td_init` replaces the running maximum
//! as the initial priority of a new experience by a TD signal (the predicted
//! one when `pred` is on), `clip` bounds every written priority by the
//! adaptive thresholds of [`ClipState`], and `pred` replaces `|delta|` by
//! `|delta_hat|` at batch time.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::clip::{ClipError, ClipState};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StrategyError {
    #[error("unknown strategy {0:?} (expected one of per, tdinit, tdclip, tdpred, tdinitclip, tdinitpred, tdclippred, pper)")]
    Unknown(String),
    #[error("strategy {0} needs the {1} input")]
    MissingInput(StrategyKind, &'static str),
    #[error(transparent)]
    Clip(#[from] ClipError),
    #[error("non-finite TD signal {0}")]
    NonFinite(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Flags {
    pub td_init: bool,
    pub clip: bool,
    pub pred: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StrategyKind {
    Per,
    TdInit,
    TdClip,
    TdPred,
    TdInitClip,
    TdInitPred,
    TdClipPred,
    Pper,
}

/// Where the initial priority of a new experience comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitSource {
    MaxSeen,
    TdError,
    Prediction,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 8] = [
        StrategyKind::Per,
        StrategyKind::TdInit,
        StrategyKind::TdClip,
        StrategyKind::TdPred,
        StrategyKind::TdInitClip,
        StrategyKind::TdInitPred,
        StrategyKind::TdClipPred,
        StrategyKind::Pper,
    ];

    pub fn flags(self) -> Flags {
        let (td_init, clip, pred) = match self {
            StrategyKind::Per => (false, false, false),
            StrategyKind::TdInit => (true, false, false),
            StrategyKind::TdClip => (false, true, false),
            StrategyKind::TdPred => (false, false, true),
            StrategyKind::TdInitClip => (true, true, false),
            StrategyKind::TdInitPred => (true, false, true),
            StrategyKind::TdClipPred => (false, true, true),
            StrategyKind::Pper => (true, true, true),
        };
        Flags {
            td_init,
            clip,
            pred,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Per => "per",
            StrategyKind::TdInit => "tdinit",
            StrategyKind::TdClip => "tdclip",
            StrategyKind::TdPred => "tdpred",
            StrategyKind::TdInitClip => "tdinitclip",
            StrategyKind::TdInitPred => "tdinitpred",
            StrategyKind::TdClipPred => "tdclippred",
            StrategyKind::Pper => "pper",
        }
    }

    pub fn init_source(self) -> InitSource {
        let f = self.flags();
        match (f.td_init, f.pred) {
            (false, _) => InitSource::MaxSeen,
            (true, false) => InitSource::TdError,
            (true, true) => InitSource::Prediction,
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = StrategyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| StrategyError::Unknown(s.to_string()))
    }
}

/// Per-run priority bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategyState {
    kind: StrategyKind,
    p_max_seen: f64,
    clip: ClipState,
}

impl StrategyState {
    pub fn new(kind: StrategyKind, clip: ClipState) -> Self {
        Self {
            kind,
            p_max_seen: 1.0,
            clip,
        }
    }

    /// Restores saved bookkeeping.
    pub fn restore(kind: StrategyKind, p_max_seen: f64, clip: ClipState) -> Self {
        Self {
            kind,
            p_max_seen,
            clip,
        }
    }

    pub fn kind(&self) -> StrategyKind {
        self.kind
    }

    pub fn p_max_seen(&self) -> f64 {
        self.p_max_seen
    }

    pub fn clip_state(&self) -> &ClipState {
        &self.clip
    }

    fn finish(&self, base: f64) -> Result<f64, StrategyError> {
        if !base.is_finite() {
            return Err(StrategyError::NonFinite(base));
        }
        if self.kind.flags().clip {
            Ok(self.clip.clip(base)?)
        } else {
            Ok(base)
        }
    }

    /// Priority of a newly stored experience. `td` is required when the
    /// initial priority comes from the TD error, `pred` when it comes from the
    /// predictor.
    pub fn initial_priority(
        &self,
        td: Option<f64>,
        pred: Option<f64>,
    ) -> Result<f64, StrategyError> {
        let base = match self.kind.init_source() {
            InitSource::MaxSeen => self.p_max_seen,
            InitSource::TdError => td
                .ok_or(StrategyError::MissingInput(self.kind, "TD error"))?
                .abs(),
            InitSource::Prediction => pred
                .ok_or(StrategyError::MissingInput(self.kind, "prediction"))?
                .abs(),
        };
        self.finish(base)
    }

    /// Priority written back after a replay, and the running maximum bump.
    pub fn batch_priority(&mut self, td: f64, pred: Option<f64>) -> Result<f64, StrategyError> {
        let base = if self.kind.flags().pred {
            pred.ok_or(StrategyError::MissingInput(self.kind, "prediction"))?
                .abs()
        } else {
            td.abs()
        };
        let p = self.finish(base)?;
        self.p_max_seen = self.p_max_seen.max(p);
        Ok(p)
    }

    /// Feeds one batch estimate to the clip thresholds (no-op without clipping).
    pub fn update_clip(&mut self, delta_a: f64) -> Result<(), StrategyError> {
        if self.kind.flags().clip {
            self.clip.update(delta_a)?;
        }
        Ok(())
    }
}

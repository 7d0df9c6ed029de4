//! Drifting-environment suite behind one behavioral contract: a 6x6
//! grid-lake, a mountain-car dynamics simulator, a shop navigation graph,
//! and a synthetic categorical responder.

mod gridlake;
mod mountain_car;
mod shop_graph;
mod synthetic;

pub use gridlake::{GridLake, GridLakeSpec, Tile};
pub use mountain_car::{MountainCar, MountainCarSpec};
pub use shop_graph::{ShopGraph, ShopGraphSpec, ShopItem};
pub use synthetic::{SyntheticCategorical, SyntheticSpec};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::{Action, BankConfig, RawState, StateKey};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid action {action} (valid: {valid:?})")]
    InvalidAction { action: Action, valid: Vec<Action> },
    #[error("episode already finished")]
    EpisodeDone,
    #[error("mutation not applicable: {0}")]
    BadMutation(String),
    #[error("bad snapshot: {0}")]
    BadSnapshot(String),
    #[error("bad environment spec: {0}")]
    BadSpec(String),
}

/// Opaque episode-state token. Snapshots capture the episode state but not
/// the RNG, so restoring and re-stepping draws fresh stochastic outcomes
/// from the same distribution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot(pub(crate) String);

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: RawState,
    pub score: f64,
    pub done: bool,
}

/// An environment mutation applied at an episode boundary.
#[derive(Debug, Clone)]
pub enum DriftMutation {
    /// Replace the grid layout (and gold table) wholesale.
    MapSwap { spec: GridLakeSpec },
    /// Rotate gold values among the goal tiles (a swap for two goals).
    GoldSwap,
    /// Change the engine force.
    ForceSet { force: f64 },
    /// Move the correct ad-page exit button.
    ButtonRemap { button: usize },
    /// Rebind a semantic attribute to a different option.
    AttributeRemap { attribute: String, option: String },
}

impl DriftMutation {
    pub fn kind_name(&self) -> &'static str {
        match self {
            DriftMutation::MapSwap { .. } => "map_swap",
            DriftMutation::GoldSwap => "gold_swap",
            DriftMutation::ForceSet { .. } => "force_set",
            DriftMutation::ButtonRemap { .. } => "button_remap",
            DriftMutation::AttributeRemap { .. } => "attribute_remap",
        }
    }
}

/// Declarative list of environment mutations keyed to episode indices.
/// Indices are strictly increasing; mutations apply at episode boundaries
/// only.
#[derive(Debug, Clone, Default)]
pub struct DriftSchedule {
    pub events: Vec<(u64, DriftMutation)>,
}

impl DriftSchedule {
    pub fn new(events: Vec<(u64, DriftMutation)>) -> Result<Self, EnvError> {
        for pair in events.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(EnvError::BadSpec(
                    "drift schedule episode indices must be strictly increasing".into(),
                ));
            }
        }
        Ok(DriftSchedule { events })
    }
}

pub trait Environment {
    /// Start an episode; applies no drift itself (see [`DriftingEnv`]).
    fn reset(&mut self, seed: u64, episode: u64) -> RawState;
    fn step(&mut self, action: Action) -> Result<StepOutcome, EnvError>;
    /// Episode-state token, or None when snapshots are unsupported.
    fn snapshot(&self) -> Option<Snapshot>;
    fn restore(&mut self, snap: &Snapshot) -> Result<(), EnvError>;
    /// Valid actions in the current state.
    fn action_space(&self) -> Vec<Action>;
    fn is_deterministic(&self) -> bool;
    fn apply_drift(&mut self, mutation: &DriftMutation) -> Result<(), EnvError>;
    /// Formed observation of the current state.
    fn form_state(&self) -> RawState;
    /// Terminal score encoded in an outcome key, if the key is terminal.
    /// Used for path-value backups over the belief graph.
    fn terminal_value(&self, key: &StateKey, bank_cfg: &BankConfig) -> Option<f64>;
    fn kind(&self) -> EnvKind;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    #[serde(rename = "gridlake")]
    GridLake,
    MountainCar,
    ShopGraph,
    Synthetic,
}

/// Wraps an environment with a drift schedule: pending mutations with index
/// <= episode are applied before the episode starts.
pub struct DriftingEnv<E: Environment> {
    pub env: E,
    schedule: DriftSchedule,
    applied: usize,
}

impl<E: Environment> DriftingEnv<E> {
    pub fn new(env: E, schedule: DriftSchedule) -> Self {
        DriftingEnv {
            env,
            schedule,
            applied: 0,
        }
    }

    /// Mutations newly applied for this episode (by schedule position).
    pub fn reset_with_drift(
        &mut self,
        seed: u64,
        episode: u64,
    ) -> Result<(RawState, Vec<&'static str>), EnvError> {
        let mut applied_now = Vec::new();
        while self.applied < self.schedule.events.len()
            && self.schedule.events[self.applied].0 <= episode
        {
            let mutation = self.schedule.events[self.applied].1.clone();
            self.env.apply_drift(&mutation)?;
            applied_now.push(mutation.kind_name());
            self.applied += 1;
        }
        Ok((self.env.reset(seed, episode), applied_now))
    }
}

/// Test helper: hides snapshot support to exercise the trajectory-replay
/// fallback.
pub struct NoSnapshot<E: Environment>(pub E);

impl<E: Environment> Environment for NoSnapshot<E> {
    fn reset(&mut self, seed: u64, episode: u64) -> RawState {
        self.0.reset(seed, episode)
    }
    fn step(&mut self, action: Action) -> Result<StepOutcome, EnvError> {
        self.0.step(action)
    }
    fn snapshot(&self) -> Option<Snapshot> {
        None
    }
    fn restore(&mut self, _snap: &Snapshot) -> Result<(), EnvError> {
        Err(EnvError::BadSnapshot("snapshots unsupported".into()))
    }
    fn action_space(&self) -> Vec<Action> {
        self.0.action_space()
    }
    fn is_deterministic(&self) -> bool {
        self.0.is_deterministic()
    }
    fn apply_drift(&mut self, mutation: &DriftMutation) -> Result<(), EnvError> {
        self.0.apply_drift(mutation)
    }
    fn form_state(&self) -> RawState {
        self.0.form_state()
    }
    fn terminal_value(&self, key: &StateKey, bank_cfg: &BankConfig) -> Option<f64> {
        self.0.terminal_value(key, bank_cfg)
    }
    fn kind(&self) -> EnvKind {
        self.0.kind()
    }
}

/// Minimal decimal formatting shared by state formation: integral values
/// print without a fractional part ("1", not "1.0").
pub(crate) fn fmt_num(v: f64) -> String {
    format!("{v}")
}

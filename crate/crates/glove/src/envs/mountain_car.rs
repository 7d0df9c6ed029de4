//! Classic mountain-car dynamics with a binned continuous observation and a
//! drift mutation that weakens the engine force.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DriftMutation, EnvError, EnvKind, Environment, Snapshot, StepOutcome};
use crate::bank::{Action, BankConfig, FieldValue, RawState, StateKey};

#[derive(Debug, Clone, PartialEq)]
pub struct MountainCarSpec {
    pub force: f64,
    pub gravity: f64,
    pub goal_position: f64,
    pub min_position: f64,
    pub max_position: f64,
    pub max_speed: f64,
}

impl Default for MountainCarSpec {
    fn default() -> Self {
        MountainCarSpec {
            force: 0.001,
            gravity: 0.0025,
            goal_position: 0.5,
            min_position: -1.2,
            max_position: 0.6,
            max_speed: 0.07,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EpisodeState {
    position: f64,
    velocity: f64,
    done: bool,
}

pub struct MountainCar {
    spec: MountainCarSpec,
    state: EpisodeState,
}

impl MountainCar {
    pub fn new(spec: MountainCarSpec) -> Self {
        MountainCar {
            spec,
            state: EpisodeState {
                position: -0.5,
                velocity: 0.0,
                done: false,
            },
        }
    }

    pub fn spec(&self) -> &MountainCarSpec {
        &self.spec
    }

    pub fn position(&self) -> f64 {
        self.state.position
    }

    pub fn velocity(&self) -> f64 {
        self.state.velocity
    }

    /// Place the car directly (used by tests and scripted fixtures).
    pub fn set_state(&mut self, position: f64, velocity: f64) {
        self.state = EpisodeState {
            position,
            velocity,
            done: false,
        };
    }
}

impl Environment for MountainCar {
    fn reset(&mut self, seed: u64, episode: u64) -> RawState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(episode);
        self.state = EpisodeState {
            position: rng.random_range(-0.6..-0.4),
            velocity: 0.0,
            done: false,
        };
        self.form_state()
    }

    fn step(&mut self, action: Action) -> Result<StepOutcome, EnvError> {
        if self.state.done {
            return Err(EnvError::EpisodeDone);
        }
        if action > 2 {
            return Err(EnvError::InvalidAction {
                action,
                valid: vec![0, 1, 2],
            });
        }
        let s = &mut self.state;
        s.velocity += (action as f64 - 1.0) * self.spec.force
            - (3.0 * s.position).cos() * self.spec.gravity;
        s.velocity = s.velocity.clamp(-self.spec.max_speed, self.spec.max_speed);
        s.position += s.velocity;
        s.position = s.position.clamp(self.spec.min_position, self.spec.max_position);
        if s.position <= self.spec.min_position && s.velocity < 0.0 {
            s.velocity = 0.0;
        }
        let mut score = 0.0;
        if s.position >= self.spec.goal_position {
            s.done = true;
            score = 1.0;
        }
        let done = s.done;
        Ok(StepOutcome {
            state: self.form_state(),
            score,
            done,
        })
    }

    fn snapshot(&self) -> Option<Snapshot> {
        Some(Snapshot(
            serde_json::to_string(&self.state).expect("episode state json"),
        ))
    }

    fn restore(&mut self, snap: &Snapshot) -> Result<(), EnvError> {
        self.state =
            serde_json::from_str(&snap.0).map_err(|e| EnvError::BadSnapshot(e.to_string()))?;
        Ok(())
    }

    fn action_space(&self) -> Vec<Action> {
        vec![0, 1, 2]
    }

    fn is_deterministic(&self) -> bool {
        // Dynamics are deterministic; only the reset position is random.
        true
    }

    fn apply_drift(&mut self, mutation: &DriftMutation) -> Result<(), EnvError> {
        match mutation {
            DriftMutation::ForceSet { force } => {
                if !force.is_finite() || *force <= 0.0 {
                    return Err(EnvError::BadMutation("force must be positive".into()));
                }
                self.spec.force = *force;
                Ok(())
            }
            other => Err(EnvError::BadMutation(format!(
                "{} does not apply to mountain_car",
                other.kind_name()
            ))),
        }
    }

    fn form_state(&self) -> RawState {
        RawState {
            fields: vec![
                ("pos".into(), FieldValue::Continuous(self.state.position)),
                ("vel".into(), FieldValue::Continuous(self.state.velocity)),
            ],
        }
    }

    fn terminal_value(&self, key: &StateKey, bank_cfg: &BankConfig) -> Option<f64> {
        // Terminal iff the position bin lies at or beyond the goal. Bin b
        // covers [b*w, (b+1)*w), so the bin is terminal when b*w >= goal.
        let bin: i64 = key.field("pos")?.parse().ok()?;
        let width = *bank_cfg.bins.get("pos")?;
        if bin as f64 * width >= self.spec.goal_position {
            Some(1.0)
        } else {
            None
        }
    }

    fn kind(&self) -> EnvKind {
        EnvKind::MountainCar
    }
}

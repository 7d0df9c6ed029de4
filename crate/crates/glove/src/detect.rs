//! Cognitive dissonance detection: the surprise predicate, the persistence
//! counter, and the finite-sample threshold calculator.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::{Action, ExperienceBank, ExperienceRecord, OutcomeDistribution, StateKey};

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("sample count must be >= 1, got {0}")]
    BadSampleCount(u64),
    #[error("delta must lie in (0,1), got {0}")]
    BadDelta(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum EpsilonMode {
    /// Fixed surprise threshold.
    Fixed { epsilon: f64 },
    /// Threshold derived from the sample count at confidence delta, floored
    /// at epsilon_min so large histories keep a minimum sensitivity.
    Hoeffding { delta: f64, epsilon_min: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub epsilon_mode: EpsilonMode,
    /// Consecutive surprises on one key required before verification fires.
    pub p_th: u32,
    /// Exact-match detection: a degenerate history makes any other outcome
    /// surprising regardless of epsilon.
    pub deterministic: bool,
}

impl DetectorConfig {
    pub fn deterministic_default() -> Self {
        DetectorConfig {
            epsilon_mode: EpsilonMode::Hoeffding {
                delta: 0.05,
                epsilon_min: 0.05,
            },
            p_th: 1,
            deterministic: true,
        }
    }

    pub fn stochastic_default() -> Self {
        DetectorConfig {
            epsilon_mode: EpsilonMode::Hoeffding {
                delta: 0.05,
                epsilon_min: 0.05,
            },
            p_th: 2,
            deterministic: false,
        }
    }
}

/// One-sided deviation threshold at confidence 1-delta after n samples:
/// sqrt(ln(1/delta) / (2n)). Strictly decreasing in both n and delta.
pub fn hoeffding_epsilon(n: u64, delta: f64) -> Result<f64, DetectError> {
    if n < 1 {
        return Err(DetectError::BadSampleCount(n));
    }
    if !(0.0..1.0).contains(&delta) || delta <= 0.0 {
        return Err(DetectError::BadDelta(delta));
    }
    Ok(((1.0 / delta).ln() / (2.0 * n as f64)).sqrt())
}

fn effective_epsilon(hist: &OutcomeDistribution, cfg: &DetectorConfig) -> f64 {
    match cfg.epsilon_mode {
        EpsilonMode::Fixed { epsilon } => epsilon,
        EpsilonMode::Hoeffding { delta, epsilon_min } => hoeffding_epsilon(
            hist.sample_size.max(1),
            delta,
        )
        .expect("config-validated delta")
        .max(epsilon_min),
    }
}

/// Surprise predicate: the observed outcome's historical empirical mass
/// falls below the threshold. In deterministic mode this reduces to exact
/// mismatch against the (degenerate) history.
pub fn is_surprising(hist: &OutcomeDistribution, outcome: &StateKey, cfg: &DetectorConfig) -> bool {
    assert!(!hist.is_empty(), "is_surprising requires nonempty history");
    if cfg.deterministic {
        return hist.mass(outcome) < 1.0;
    }
    hist.mass(outcome) < effective_epsilon(hist, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    None,
    TriggerVerification,
}

/// Per-(state, action) consecutive-surprise counters.
#[derive(Debug, Clone, Default)]
pub struct PersistenceState {
    counters: HashMap<(StateKey, Action), u32>,
}

impl PersistenceState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn counter(&self, state: &StateKey, action: Action) -> u32 {
        *self
            .counters
            .get(&(state.clone(), action))
            .unwrap_or(&0)
    }

    pub fn reset(&mut self, state: &StateKey, action: Action) {
        self.counters.remove(&(state.clone(), action));
    }

    /// Feed one observation. The counter increments on surprise and resets
    /// otherwise; verification fires exactly when the counter reaches p_th,
    /// which also resets it.
    pub fn observe(
        &mut self,
        state: &StateKey,
        action: Action,
        surprising: bool,
        cfg: &DetectorConfig,
    ) -> Decision {
        let key = (state.clone(), action);
        if !surprising {
            self.counters.remove(&key);
            return Decision::None;
        }
        let counter = self.counters.entry(key.clone()).or_insert(0);
        *counter += 1;
        if *counter >= cfg.p_th {
            self.counters.remove(&key);
            Decision::TriggerVerification
        } else {
            Decision::None
        }
    }
}

/// Phase I applied to one fresh transition: novel preconditions pass through,
/// otherwise the surprise predicate is evaluated against the current belief
/// and fed into the persistence counter.
pub fn check_transition(
    bank: &ExperienceBank,
    transition: &ExperienceRecord,
    cfg: &DetectorConfig,
    pstate: &mut PersistenceState,
) -> Decision {
    let Some(belief) = bank.belief(&transition.state, transition.action) else {
        // Novel exploration.
        return Decision::None;
    };
    let surprising = is_surprising(&belief, &transition.outcome, cfg);
    pstate.observe(&transition.state, transition.action, surprising, cfg)
}

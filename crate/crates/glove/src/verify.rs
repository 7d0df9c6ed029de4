//! Active verification: probe-budget selection, re-execution probing via
//! snapshot/restore (or trajectory replay), relative-truth construction, and
//! the full detect -> probe -> realign cycle.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::{
    canonical_key, Action, BankConfig, BankError, ExperienceBank, ExperienceRecord,
    OutcomeDistribution, Origin, Stamp, StateKey,
};
use crate::detect::{check_transition, Decision, DetectorConfig, PersistenceState};
use crate::envs::{EnvError, Environment, Snapshot};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("invalid verifier config: {0}")]
    BadConfig(String),
    #[error("cannot reach the probed state: {0}")]
    ProbeUnreachable(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Bank(#[from] BankError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifierConfig {
    /// Outcome-mode cap K; 0 means estimate from history (+1 slack mode).
    pub k: u32,
    /// Target L1 accuracy of the relative truth.
    pub epsilon: f64,
    /// Confidence parameter.
    pub delta: f64,
    /// Hard probe ceiling; larger demands are clamped with a warning flag.
    pub alpha_max: u64,
    /// Fixed budget override (used by budget sweeps); bypasses the bound.
    pub alpha: Option<u64>,
    /// One probe suffices when transitions are deterministic.
    pub deterministic: bool,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig {
            k: 0,
            epsilon: 0.1,
            delta: 0.05,
            alpha_max: 1_000,
            alpha: None,
            deterministic: false,
        }
    }
}

impl VerifierConfig {
    pub fn validate(&self) -> Result<(), VerifyError> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(VerifyError::BadConfig(format!(
                "epsilon must lie in (0,1], got {}",
                self.epsilon
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(VerifyError::BadConfig(format!(
                "delta must lie in (0,1), got {}",
                self.delta
            )));
        }
        if self.alpha_max < 1 {
            return Err(VerifyError::BadConfig("alpha_max must be >= 1".into()));
        }
        if self.alpha == Some(0) {
            return Err(VerifyError::BadConfig("alpha override must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Budget {
    pub alpha: u64,
    /// True when the bound demanded more than alpha_max.
    pub clamped: bool,
}

/// Probe budget: 1 when deterministic, else
/// ceil(2 (K ln2 + ln(1/delta)) / epsilon^2) clamped to alpha_max.
/// `k` must be resolved (>= 1) by the caller when the config leaves it 0.
pub fn required_budget(cfg: &VerifierConfig, k: u32) -> Result<Budget, VerifyError> {
    cfg.validate()?;
    if let Some(alpha) = cfg.alpha {
        return Ok(Budget {
            alpha,
            clamped: false,
        });
    }
    if cfg.deterministic {
        return Ok(Budget {
            alpha: 1,
            clamped: false,
        });
    }
    if k < 1 {
        return Err(VerifyError::BadConfig("K must be >= 1".into()));
    }
    let raw = 2.0 * (k as f64 * std::f64::consts::LN_2 + (1.0 / cfg.delta).ln())
        / (cfg.epsilon * cfg.epsilon);
    let alpha = raw.ceil() as u64;
    if alpha > cfg.alpha_max {
        Ok(Budget {
            alpha: cfg.alpha_max,
            clamped: true,
        })
    } else {
        Ok(Budget {
            alpha: alpha.max(1),
            clamped: false,
        })
    }
}

/// How the prober can return the environment to the probed state.
pub struct ProbeAccess<'a> {
    /// Snapshot taken just before the conflicting action executed.
    pub pre_action_snapshot: Option<Snapshot>,
    /// Snapshot taken just after it (the ongoing episode state); the prober
    /// restores this before returning.
    pub post_snapshot: Option<Snapshot>,
    /// Fallback: replay (state, action) pairs from a fresh reset.
    pub trajectory: &'a [(StateKey, Action)],
    pub seed: u64,
    pub episode: u64,
    pub bank_cfg: &'a BankConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeBatch {
    pub state: StateKey,
    pub action: Action,
    pub outcomes: Vec<StateKey>,
    /// Total simulator steps spent returning to the probed state.
    pub replay_cost: u64,
    pub at: Stamp,
}

fn replay_to_state(
    env: &mut dyn Environment,
    state: &StateKey,
    access: &ProbeAccess,
) -> Result<u64, VerifyError> {
    let raw = env.reset(access.seed, access.episode);
    let mut cur = canonical_key(&raw, access.bank_cfg)?;
    let mut cost = 0u64;
    for (expected, action) in access.trajectory {
        if cur != *expected {
            return Err(VerifyError::ProbeUnreachable(format!(
                "replay diverged: expected {expected}, reached {cur}"
            )));
        }
        let out = env
            .step(*action)
            .map_err(|e| VerifyError::ProbeUnreachable(format!("replay step failed: {e}")))?;
        cost += 1;
        cur = canonical_key(&out.state, access.bank_cfg)?;
        if out.done && cur != *state {
            return Err(VerifyError::ProbeUnreachable(
                "replay terminated before reaching the probed state".into(),
            ));
        }
    }
    if cur != *state {
        return Err(VerifyError::ProbeUnreachable(format!(
            "replay ended at {cur}, expected {state}"
        )));
    }
    Ok(cost)
}

/// Execute `action` from a state matching `state` exactly `alpha` times and
/// collect the outcome keys. The ongoing episode is restored afterwards.
pub fn probe(
    env: &mut dyn Environment,
    state: &StateKey,
    action: Action,
    alpha: u64,
    access: &ProbeAccess,
    at: Stamp,
) -> Result<ProbeBatch, VerifyError> {
    let mut outcomes = Vec::with_capacity(alpha as usize);
    let mut replay_cost = 0u64;
    let use_snapshot = access.pre_action_snapshot.is_some();
    if !use_snapshot && !env.is_deterministic() {
        return Err(VerifyError::ProbeUnreachable(
            "stochastic environment without snapshot support".into(),
        ));
    }
    for _ in 0..alpha {
        if let Some(snap) = &access.pre_action_snapshot {
            env.restore(snap)?;
        } else {
            replay_cost += replay_to_state(env, state, access)?;
        }
        let matched = canonical_key(&env.form_state(), access.bank_cfg)?;
        if matched != *state {
            return Err(VerifyError::ProbeUnreachable(format!(
                "restored state {matched} does not match probed state {state}"
            )));
        }
        let out = env.step(action)?;
        replay_cost += 1;
        outcomes.push(canonical_key(&out.state, access.bank_cfg)?);
    }
    // Leave the ongoing episode where it was.
    if let Some(snap) = &access.post_snapshot {
        env.restore(snap)?;
    } else {
        replay_cost += replay_to_state(env, state, access)?;
        env.step(action)?;
        replay_cost += 1;
    }
    Ok(ProbeBatch {
        state: state.clone(),
        action,
        outcomes,
        replay_cost,
        at,
    })
}

/// Empirical distribution over the probe outcomes, marked verified.
pub fn build_relative_truth(batch: &ProbeBatch) -> OutcomeDistribution {
    assert!(!batch.outcomes.is_empty(), "probe batch must be nonempty");
    let mut counts = std::collections::BTreeMap::new();
    for o in &batch.outcomes {
        *counts.entry(o.clone()).or_insert(0u64) += 1;
    }
    OutcomeDistribution::from_counts(counts, batch.at, Origin::Verified)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CycleReport {
    NoAction,
    Realigned {
        state: StateKey,
        action: Action,
        truth: OutcomeDistribution,
        probes_used: u64,
        replay_cost: u64,
        budget_clamped: bool,
    },
    Aborted {
        state: StateKey,
        action: Action,
        reason: String,
    },
}

/// Resolve the outcome-mode cap: configured value, or the distinct outcomes
/// known for the key (history plus the conflicting observation) with one
/// slack mode for the unseen.
fn resolve_k(
    cfg: &VerifierConfig,
    bank: &ExperienceBank,
    transition: &ExperienceRecord,
) -> u32 {
    if cfg.k >= 1 {
        return cfg.k;
    }
    let mut distinct: std::collections::BTreeSet<StateKey> = bank
        .belief(&transition.state, transition.action)
        .map(|b| b.counts.keys().cloned().collect())
        .unwrap_or_default();
    distinct.insert(transition.outcome.clone());
    distinct.len() as u32 + 1
}

/// The full per-transition cycle: detect, and on a trigger probe the
/// environment, build the relative truth, and realign the bank. The updated
/// bank conditions future planning immediately.
pub fn verify_cycle(
    bank: &mut ExperienceBank,
    env: &mut dyn Environment,
    transition: &ExperienceRecord,
    detect_cfg: &DetectorConfig,
    verify_cfg: &VerifierConfig,
    pstate: &mut PersistenceState,
    access: &ProbeAccess,
) -> Result<CycleReport, VerifyError> {
    verify_cfg.validate()?;
    if check_transition(bank, transition, detect_cfg, pstate) == Decision::None {
        return Ok(CycleReport::NoAction);
    }
    let k = resolve_k(verify_cfg, bank, transition);
    let budget = required_budget(verify_cfg, k)?;
    let batch = match probe(
        env,
        &transition.state,
        transition.action,
        budget.alpha,
        access,
        transition.meta.recorded_at,
    ) {
        Ok(batch) => batch,
        Err(VerifyError::ProbeUnreachable(reason)) => {
            pstate.reset(&transition.state, transition.action);
            return Ok(CycleReport::Aborted {
                state: transition.state.clone(),
                action: transition.action,
                reason,
            });
        }
        Err(other) => return Err(other),
    };
    let truth = build_relative_truth(&batch);
    bank.realign(&transition.state, transition.action, truth.clone())?;
    Ok(CycleReport::Realigned {
        state: transition.state.clone(),
        action: transition.action,
        truth,
        probes_used: budget.alpha,
        replay_cost: batch.replay_cost,
        budget_clamped: budget.clamped,
    })
}

//! Decision backends over the experience bank: a deterministic path-value
//! planner, baseline memory policies (static, decay, no-memory), and a
//! remote request/response backend for external decision services.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::TcpStream;
use std::time::Duration;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::{Action, ExperienceBank, OutcomeDistribution, StateKey};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("remote backend: {0}")]
    Remote(String),
    #[error("remote reply `{0}` is not a valid action")]
    BadReply(String),
}

/// How records and summaries are filtered at retrieval time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MemoryPolicy {
    /// Full bank, new experiences inserted.
    Live,
    /// Bank frozen after collection: no inserts, no realignment.
    Static,
    /// Exponential forgetting: a record of age `a` episodes carries weight
    /// exp(-lambda * a) and is dropped below w_min.
    Decay { lambda: f64, w_min: f64 },
}

impl MemoryPolicy {
    pub fn decay_default() -> Self {
        MemoryPolicy::Decay {
            lambda: 0.1,
            w_min: 0.05,
        }
    }
}

/// Retrieval weight of an entry recorded `age` episodes ago.
pub fn decay_weight(lambda: f64, age: u64) -> f64 {
    (-lambda * age as f64).exp()
}

/// Belief about (state, action) as seen through the memory policy.
pub fn retrieve_belief(
    bank: &ExperienceBank,
    state: &StateKey,
    action: Action,
    policy: &MemoryPolicy,
    now_episode: u64,
) -> Option<OutcomeDistribution> {
    match policy {
        MemoryPolicy::Live | MemoryPolicy::Static => bank.belief(state, action),
        MemoryPolicy::Decay { lambda, w_min } => {
            let keep = |at_episode: u64| {
                decay_weight(*lambda, now_episode.saturating_sub(at_episode)) >= *w_min
            };
            let mut counts = std::collections::BTreeMap::new();
            let mut built_at = (0, 0);
            let mut origin = crate::bank::Origin::Historical;
            if let Some(s) = bank.summary(state, action) {
                if keep(s.built_at.0) {
                    counts = s.counts.clone();
                    built_at = s.built_at;
                    origin = s.origin;
                }
            }
            for rec in bank.counterparts(state, action) {
                if keep(rec.meta.recorded_at.0) {
                    *counts.entry(rec.outcome.clone()).or_insert(0) += rec.meta.exec_count;
                    built_at = built_at.max(rec.meta.recorded_at);
                }
            }
            if counts.is_empty() {
                None
            } else {
                Some(OutcomeDistribution::from_counts(counts, built_at, origin))
            }
        }
    }
}

/// Actions with any retrievable belief for the state under the policy.
pub fn retrieved_actions(
    bank: &ExperienceBank,
    state: &StateKey,
    policy: &MemoryPolicy,
    now_episode: u64,
) -> Vec<Action> {
    bank.known_actions(state)
        .into_iter()
        .filter(|a| retrieve_belief(bank, state, *a, policy, now_episode).is_some())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathValueAnnotation {
    pub state: StateKey,
    pub action: Action,
    /// Modal believed outcome for the action.
    pub result: StateKey,
    /// Maximum terminal score reachable from `result` through currently
    /// believed transitions, by depth-limited expected-value backup.
    pub max_path_score: f64,
    /// Believed steps to realize `max_path_score` (modal-outcome chain);
    /// breaks value ties in favor of shorter paths.
    pub steps_to_score: u32,
    /// The believed outcome is a terminal state worth nothing (e.g. a hole),
    /// so the action is never worth re-exploring.
    pub dead_end: bool,
}

/// Modal believed outcome: highest count, largest key on count ties.
fn modal_outcome(belief: &crate::bank::OutcomeDistribution) -> StateKey {
    belief
        .counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.as_str().cmp(a.0.as_str())))
        .map(|(k, _)| k.clone())
        .expect("nonempty belief")
}

struct Backup<'a> {
    bank: &'a ExperienceBank,
    policy: &'a MemoryPolicy,
    now_episode: u64,
    terminal: &'a dyn Fn(&StateKey) -> Option<f64>,
    memo: HashMap<(StateKey, u32), (f64, u32)>,
}

impl Backup<'_> {
    /// (value, believed steps to realize it along the modal chain).
    fn state_value(&mut self, state: &StateKey, depth: u32) -> (f64, u32) {
        if let Some(v) = (self.terminal)(state) {
            return (v, 0);
        }
        if depth == 0 {
            return (0.0, 0);
        }
        if let Some(v) = self.memo.get(&(state.clone(), depth)) {
            return *v;
        }
        let mut best = 0.0f64;
        let mut dist = 0u32;
        for action in retrieved_actions(self.bank, state, self.policy, self.now_episode) {
            let (v, d) = self.action_value(state, action, depth);
            if v > best + 1e-9 || (v > best - 1e-9 && best > 0.0 && d < dist) {
                best = best.max(v);
                dist = d;
            }
        }
        self.memo.insert((state.clone(), depth), (best, dist));
        (best, dist)
    }

    fn action_value(&mut self, state: &StateKey, action: Action, depth: u32) -> (f64, u32) {
        let Some(belief) = retrieve_belief(self.bank, state, action, self.policy, self.now_episode)
        else {
            return (0.0, 0);
        };
        let outcomes: Vec<(StateKey, f64)> = belief
            .support()
            .map(|(k, p)| (k.clone(), p))
            .collect();
        let modal = modal_outcome(&belief);
        let mut value = 0.0;
        let mut dist = 0;
        for (outcome, p) in outcomes {
            let (v, d) = self.state_value(&outcome, depth - 1);
            value += p * v;
            if outcome == modal {
                dist = d.saturating_add(1);
            }
        }
        (value, dist)
    }
}

/// One annotation per action with any belief for (state, action); values are
/// computed over the belief graph (records plus verified summaries), cycles
/// bounded by the horizon, unseen branches valued 0.
pub fn annotate(
    bank: &ExperienceBank,
    state: &StateKey,
    horizon: u32,
    policy: &MemoryPolicy,
    now_episode: u64,
    terminal: &dyn Fn(&StateKey) -> Option<f64>,
) -> Vec<PathValueAnnotation> {
    assert!(horizon >= 1, "horizon must be >= 1");
    let mut backup = Backup {
        bank,
        policy,
        now_episode,
        terminal,
        memo: HashMap::new(),
    };
    let mut out = Vec::new();
    for action in retrieved_actions(bank, state, policy, now_episode) {
        let belief = retrieve_belief(bank, state, action, policy, now_episode)
            .expect("retrieved action has belief");
        let result = modal_outcome(&belief);
        let (value, steps_to_score) = backup.action_value(state, action, horizon);
        let dead_end = matches!(terminal(&result), Some(v) if v <= 0.0);
        out.push(PathValueAnnotation {
            state: state.clone(),
            action,
            result,
            max_path_score: value,
            steps_to_score,
            dead_end,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ExploreMode {
    /// Lowest-index unexplored action, then lowest-index action; ties on
    /// positive annotations also break to the lowest index.
    Systematic,
    /// Ties and exploration resolve by a seeded draw that is a pure function
    /// of (seed, episode, step).
    Seeded { seed: u64 },
}

fn explore_rng(seed: u64, episode: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode.wrapping_mul(1_000_003).wrapping_add(step));
    rng
}

fn pick(candidates: &[Action], mode: &ExploreMode, episode: u64, step: u64) -> Action {
    debug_assert!(!candidates.is_empty());
    match mode {
        ExploreMode::Systematic => *candidates.iter().min().unwrap(),
        ExploreMode::Seeded { seed } => {
            let mut rng = explore_rng(*seed, episode, step);
            candidates[rng.random_range(0..candidates.len())]
        }
    }
}

/// Argmax over annotated path values. Ties and the no-annotation case fall
/// to the explore mode; an action annotated 0 is never chosen while a
/// positive-valued one exists. Pure in all arguments.
pub fn planner_decide(
    annotations: &[PathValueAnnotation],
    action_space: &[Action],
    explored: &[Action],
    mode: &ExploreMode,
    episode: u64,
    step: u64,
) -> Action {
    assert!(!action_space.is_empty(), "empty action space");
    let in_space: Vec<&PathValueAnnotation> = annotations
        .iter()
        .filter(|a| action_space.contains(&a.action))
        .collect();
    let best = in_space
        .iter()
        .map(|a| a.max_path_score)
        .fold(0.0f64, f64::max);
    if best > 0.0 {
        // Value ties resolve toward the shortest believed path first, so a
        // fully-learned region is traversed directly instead of wandered.
        let tied: Vec<&&PathValueAnnotation> = in_space
            .iter()
            .filter(|a| (a.max_path_score - best).abs() < 1e-9)
            .collect();
        let min_steps = tied.iter().map(|a| a.steps_to_score).min().unwrap();
        let tied: Vec<Action> = tied
            .iter()
            .filter(|a| a.steps_to_score == min_steps)
            .map(|a| a.action)
            .collect();
        return pick(&tied, mode, episode, step);
    }
    let unexplored: Vec<Action> = action_space
        .iter()
        .copied()
        .filter(|a| !explored.contains(a))
        .collect();
    if !unexplored.is_empty() {
        return pick(&unexplored, mode, episode, step);
    }
    // Everything is explored and nothing pays: wander, but skip actions
    // known to end the episode for nothing.
    let dead: Vec<Action> = in_space
        .iter()
        .filter(|a| a.dead_end)
        .map(|a| a.action)
        .collect();
    let alive: Vec<Action> = action_space
        .iter()
        .copied()
        .filter(|a| !dead.contains(a))
        .collect();
    if !alive.is_empty() {
        return pick(&alive, mode, episode, step);
    }
    pick(action_space, mode, episode, step)
}

/// Memory-free baseline: a seeded draw over the action space.
pub fn no_memory_decide(
    action_space: &[Action],
    seed: u64,
    episode: u64,
    step: u64,
) -> Action {
    assert!(!action_space.is_empty(), "empty action space");
    let mut rng = explore_rng(seed, episode, step);
    action_space[rng.random_range(0..action_space.len())]
}

/// Fill the prompt template: {state}, {count}, {experiences}, {actions}.
pub fn render_prompt(
    template: &str,
    state: &StateKey,
    annotations: &[PathValueAnnotation],
    action_space: &[Action],
) -> String {
    let mut experiences = String::new();
    for ann in annotations {
        experiences.push_str(&format!(
            "  Action taken: {}\n  Result: {}\n  Max score achievable from this path: {}\n\n",
            ann.action, ann.result, ann.max_path_score
        ));
    }
    let actions = action_space
        .iter()
        .map(|a| a.to_string())
        .collect::<Vec<_>>()
        .join(", ");
    template
        .replace("{state}", state.as_str())
        .replace("{count}", &annotations.len().to_string())
        .replace("{experiences}", experiences.trim_end())
        .replace("{actions}", &actions)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemoteFallback {
    /// Propagate the failure and abort the run.
    Abort,
    /// Fall back to the explore policy (signalled by Ok(None)).
    Explore,
}

#[derive(Debug, Clone)]
pub struct RemoteBackend {
    pub addr: String,
    pub timeout: Duration,
    pub fallback: RemoteFallback,
}

/// One blocking request/response exchange: the body is the rendered prompt,
/// the reply is a single action token line.
pub fn remote_decide(
    backend: &RemoteBackend,
    prompt: &str,
    action_space: &[Action],
) -> Result<Option<Action>, AgentError> {
    let attempt = || -> Result<Action, AgentError> {
        let mut stream = TcpStream::connect(&backend.addr)
            .map_err(|e| AgentError::Remote(e.to_string()))?;
        stream
            .set_read_timeout(Some(backend.timeout))
            .and_then(|_| stream.set_write_timeout(Some(backend.timeout)))
            .map_err(|e| AgentError::Remote(e.to_string()))?;
        stream
            .write_all(prompt.as_bytes())
            .and_then(|_| stream.shutdown(std::net::Shutdown::Write))
            .map_err(|e| AgentError::Remote(e.to_string()))?;
        let mut reply = String::new();
        stream
            .read_to_string(&mut reply)
            .map_err(|e| AgentError::Remote(e.to_string()))?;
        let token = reply.trim();
        let action: Action = token
            .parse()
            .map_err(|_| AgentError::BadReply(token.to_string()))?;
        if action_space.contains(&action) {
            Ok(action)
        } else {
            Err(AgentError::BadReply(token.to_string()))
        }
    };
    match attempt() {
        Ok(a) => Ok(Some(a)),
        Err(e) => match backend.fallback {
            RemoteFallback::Abort => Err(e),
            RemoteFallback::Explore => Ok(None),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::{BankConfig, ExperienceRecord, KeyKind, Metadata};
    use crate::envs::{Environment, GridLake, GridLakeSpec};

    const MAP: &str = "\
SFFFFF
FHFHFF
FFFHFF
HFFFFG
FHFHHH
FFFFFG
gold 3,5 0.5
gold 5,5 1.0
";

    fn dkey(s: &str) -> StateKey {
        StateKey::new(KeyKind::Discrete, s.to_string())
    }

    fn rec(s: &str, a: Action, o: &str, episode: u64) -> ExperienceRecord {
        ExperienceRecord {
            state: dkey(s),
            action: a,
            outcome: dkey(o),
            reward: None,
            meta: Metadata {
                recorded_at: (episode, 0),
                trajectory: vec![],
                exec_count: 1,
            },
        }
    }

    /// The two clean source-phase paths from the reward-reversal case study:
    /// right along row 3 to the 0.5 goal, and down through column 2 to the
    /// 1.0 goal.
    fn case_study_bank() -> ExperienceBank {
        let mut bank = ExperienceBank::new();
        let steps = [
            // shared prefix
            ("pos=0,0|tile=F|gold=0", 1, "pos=1,0|tile=F|gold=0"),
            ("pos=1,0|tile=F|gold=0", 1, "pos=2,0|tile=F|gold=0"),
            ("pos=2,0|tile=F|gold=0", 2, "pos=2,1|tile=F|gold=0"),
            ("pos=2,1|tile=F|gold=0", 1, "pos=3,1|tile=F|gold=0"),
            ("pos=3,1|tile=F|gold=0", 2, "pos=3,2|tile=F|gold=0"),
            // path A: right to the 0.5 goal
            ("pos=3,2|tile=F|gold=0", 2, "pos=3,3|tile=F|gold=0"),
            ("pos=3,3|tile=F|gold=0", 2, "pos=3,4|tile=F|gold=0"),
            ("pos=3,4|tile=F|gold=0", 2, "pos=3,5|tile=G|gold=0.5"),
            // path B: down to the 1.0 goal
            ("pos=3,2|tile=F|gold=0", 1, "pos=4,2|tile=F|gold=0"),
            ("pos=4,2|tile=F|gold=0", 1, "pos=5,2|tile=F|gold=0"),
            ("pos=5,2|tile=F|gold=0", 2, "pos=5,3|tile=F|gold=0"),
            ("pos=5,3|tile=F|gold=0", 2, "pos=5,4|tile=F|gold=0"),
            ("pos=5,4|tile=F|gold=0", 2, "pos=5,5|tile=G|gold=1"),
        ];
        for (s, a, o) in steps {
            bank.insert(rec(s, a, o, 0));
        }
        bank
    }

    fn gridlake_terminal() -> impl Fn(&StateKey) -> Option<f64> {
        let env = GridLake::new(GridLakeSpec::parse(MAP).unwrap());
        let cfg = BankConfig::default();
        move |key: &StateKey| env.terminal_value(key, &cfg)
    }

    #[test]
    fn case_study_annotations() {
        let bank = case_study_bank();
        let terminal = gridlake_terminal();
        let anns = annotate(
            &bank,
            &dkey("pos=3,2|tile=F|gold=0"),
            12,
            &MemoryPolicy::Live,
            0,
            &terminal,
        );
        assert_eq!(anns.len(), 2);
        let by_action: HashMap<Action, &PathValueAnnotation> =
            anns.iter().map(|a| (a.action, a)).collect();
        let right = by_action[&2];
        assert_eq!(right.result, dkey("pos=3,3|tile=F|gold=0"));
        assert!((right.max_path_score - 0.5).abs() < 1e-12);
        let down = by_action[&1];
        assert_eq!(down.result, dkey("pos=4,2|tile=F|gold=0"));
        assert!((down.max_path_score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_bank_annotates_nothing() {
        let bank = ExperienceBank::new();
        let terminal = gridlake_terminal();
        assert!(annotate(
            &bank,
            &dkey("pos=3,2|tile=F|gold=0"),
            12,
            &MemoryPolicy::Live,
            0,
            &terminal
        )
        .is_empty());
    }

    #[test]
    fn annotations_reflect_realignment_immediately() {
        use crate::bank::Origin;
        let mut bank = case_study_bank();
        let terminal = gridlake_terminal();
        // Verified truth: stepping right from (5,4) now lands on a 0.5 goal.
        let mut counts = std::collections::BTreeMap::new();
        counts.insert(dkey("pos=5,5|tile=G|gold=0.5"), 1);
        bank.realign(
            &dkey("pos=5,4|tile=F|gold=0"),
            2,
            OutcomeDistribution::from_counts(counts, (1, 0), Origin::Verified),
        )
        .unwrap();
        let anns = annotate(
            &bank,
            &dkey("pos=3,2|tile=F|gold=0"),
            12,
            &MemoryPolicy::Live,
            1,
            &terminal,
        );
        let down = anns.iter().find(|a| a.action == 1).unwrap();
        assert!((down.max_path_score - 0.5).abs() < 1e-12);
    }

    #[test]
    fn planner_prefers_higher_value() {
        let bank = case_study_bank();
        let terminal = gridlake_terminal();
        let anns = annotate(
            &bank,
            &dkey("pos=3,2|tile=F|gold=0"),
            12,
            &MemoryPolicy::Live,
            0,
            &terminal,
        );
        let action = planner_decide(&anns, &[0, 1, 2, 3], &[1, 2], &ExploreMode::Systematic, 0, 0);
        assert_eq!(action, 1);
    }

    #[test]
    fn planner_never_picks_zero_while_positive_exists() {
        let anns = vec![
            PathValueAnnotation {
                state: dkey("s"),
                action: 0,
                result: dkey("hole"),
                max_path_score: 0.0,
            steps_to_score: 1,
            dead_end: false,
            },
            PathValueAnnotation {
                state: dkey("s"),
                action: 2,
                result: dkey("good"),
                max_path_score: 0.5,
            steps_to_score: 1,
            dead_end: false,
            },
        ];
        for episode in 0..20 {
            for mode in [ExploreMode::Systematic, ExploreMode::Seeded { seed: 9 }] {
                assert_eq!(
                    planner_decide(&anns, &[0, 1, 2, 3], &[0, 2], &mode, episode, 0),
                    2
                );
            }
        }
    }

    #[test]
    fn planner_tie_and_exploration_rules() {
        let tie = |a: Action, v: f64| PathValueAnnotation {
            state: dkey("s"),
            action: a,
            result: dkey("r"),
            max_path_score: v,
            steps_to_score: 1,
            dead_end: false,
        };
        let anns = vec![tie(1, 0.5), tie(3, 0.5)];
        // Systematic: lowest index among tied.
        assert_eq!(
            planner_decide(&anns, &[0, 1, 2, 3], &[1, 3], &ExploreMode::Systematic, 0, 0),
            1
        );
        // Seeded: always one of the tied pair, never a 0/unknown action.
        let mut seen = std::collections::BTreeSet::new();
        for episode in 0..50 {
            let a = planner_decide(
                &anns,
                &[0, 1, 2, 3],
                &[1, 3],
                &ExploreMode::Seeded { seed: 4 },
                episode,
                0,
            );
            assert!(a == 1 || a == 3);
            seen.insert(a);
        }
        assert_eq!(seen.len(), 2, "seeded ties should visit both actions");
        // No annotations: lowest-index unexplored, then lowest-index.
        assert_eq!(
            planner_decide(&[], &[0, 1, 2, 3], &[0, 1], &ExploreMode::Systematic, 0, 0),
            2
        );
        assert_eq!(
            planner_decide(&[], &[0, 1], &[0, 1], &ExploreMode::Systematic, 0, 0),
            0
        );
    }

    #[test]
    fn planner_is_pure() {
        let anns = vec![PathValueAnnotation {
            state: dkey("s"),
            action: 1,
            result: dkey("r"),
            max_path_score: 0.5,
            steps_to_score: 1,
            dead_end: false,
        }];
        for mode in [ExploreMode::Systematic, ExploreMode::Seeded { seed: 11 }] {
            let a = planner_decide(&anns, &[0, 1, 2], &[1], &mode, 3, 7);
            let b = planner_decide(&anns, &[0, 1, 2], &[1], &mode, 3, 7);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn argmax_scale_invariance() {
        let bank = case_study_bank();
        let terminal = gridlake_terminal();
        let state = dkey("pos=3,2|tile=F|gold=0");
        let anns = annotate(&bank, &state, 12, &MemoryPolicy::Live, 0, &terminal);
        for c in [0.1, 2.0, 1000.0] {
            let scaled_terminal = |k: &StateKey| terminal(k).map(|v| c * v);
            let scaled = annotate(&bank, &state, 12, &MemoryPolicy::Live, 0, &scaled_terminal);
            for (a, s) in anns.iter().zip(&scaled) {
                assert_eq!(a.action, s.action);
                assert!((s.max_path_score - c * a.max_path_score).abs() < 1e-9);
            }
            for mode in [ExploreMode::Systematic, ExploreMode::Seeded { seed: 2 }] {
                assert_eq!(
                    planner_decide(&anns, &[0, 1, 2, 3], &[1, 2], &mode, 5, 2),
                    planner_decide(&scaled, &[0, 1, 2, 3], &[1, 2], &mode, 5, 2)
                );
            }
        }
    }

    #[test]
    fn decay_weights_and_dropping() {
        assert_eq!(decay_weight(0.1, 0), 1.0);
        let w30 = decay_weight(0.1, 30);
        assert!((w30 - 0.049787).abs() < 1e-6);
        assert!(w30 < 0.05);

        let mut bank = ExperienceBank::new();
        bank.insert(rec("s", 0, "old", 0));
        bank.insert(rec("s", 1, "fresh", 25));
        let policy = MemoryPolicy::decay_default();
        // At episode 30, the age-30 record is dropped, the age-5 one kept.
        assert!(retrieve_belief(&bank, &dkey("s"), 0, &policy, 30).is_none());
        assert!(retrieve_belief(&bank, &dkey("s"), 1, &policy, 30).is_some());
        assert_eq!(retrieved_actions(&bank, &dkey("s"), &policy, 30), vec![1]);
        // Live policy sees both.
        assert_eq!(
            retrieved_actions(&bank, &dkey("s"), &MemoryPolicy::Live, 30),
            vec![0, 1]
        );
    }

    #[test]
    fn no_memory_baseline_stays_in_space() {
        for episode in 0..30 {
            let a = no_memory_decide(&[2, 5, 9], 7, episode, 3);
            assert!([2, 5, 9].contains(&a));
        }
    }

    #[test]
    fn prompt_contains_both_experience_blocks() {
        let template = std::fs::read_to_string(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../fixtures/prompt_template.txt"
        ))
        .unwrap();
        let bank = case_study_bank();
        let terminal = gridlake_terminal();
        let state = dkey("pos=3,2|tile=F|gold=0");
        let anns = annotate(&bank, &state, 12, &MemoryPolicy::Live, 0, &terminal);
        let prompt = render_prompt(&template, &state, &anns, &[0, 1, 2, 3]);
        assert!(prompt.contains("Historical Experience from Similar States"));
        assert!(prompt.contains("Current State: pos=3,2|tile=F|gold=0"));
        assert!(prompt.contains("Action taken: 2"));
        assert!(prompt.contains("Max score achievable from this path: 0.5"));
        assert!(prompt.contains("Action taken: 1"));
        assert!(prompt.contains("Max score achievable from this path: 1"));
        assert!(prompt.contains("Respond with only the action number."));
    }

    fn mock_server(reply: &'static str) -> String {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        std::thread::spawn(move || {
            if let Ok((mut stream, _)) = listener.accept() {
                let mut buf = String::new();
                let _ = stream.read_to_string(&mut buf);
                let _ = stream.write_all(reply.as_bytes());
            }
        });
        addr
    }

    #[test]
    fn remote_decide_parses_action() {
        let addr = mock_server("1\n");
        let backend = RemoteBackend {
            addr,
            timeout: Duration::from_secs(2),
            fallback: RemoteFallback::Abort,
        };
        assert_eq!(
            remote_decide(&backend, "which way?", &[0, 1, 2, 3]).unwrap(),
            Some(1)
        );
    }

    #[test]
    fn remote_decide_bad_reply_falls_back() {
        let addr = mock_server("go down\n");
        let backend = RemoteBackend {
            addr: addr.clone(),
            timeout: Duration::from_secs(2),
            fallback: RemoteFallback::Explore,
        };
        assert_eq!(
            remote_decide(&backend, "which way?", &[0, 1]).unwrap(),
            None
        );
        let addr = mock_server("7\n");
        let backend = RemoteBackend {
            addr,
            timeout: Duration::from_secs(2),
            fallback: RemoteFallback::Abort,
        };
        assert!(remote_decide(&backend, "which way?", &[0, 1]).is_err());
    }
}

//! Experiment runner: environment x drift schedule x agent x seeds, with
//! per-episode metrics, event logs, and cross-run aggregation.

use std::panic::AssertUnwindSafe;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::agents::{
    annotate, no_memory_decide, planner_decide, remote_decide, render_prompt, retrieve_belief,
    retrieved_actions, MemoryPolicy, RemoteBackend, RemoteFallback,
};
use crate::bank::{
    canonical_key, Action, BankConfig, BankError, ExperienceBank, ExperienceRecord, Metadata,
    RawState, StateKey,
};
use crate::config::{AgentKind, DriftSpec, RunConfig, SuccessRule};
use crate::detect::{is_surprising, PersistenceState};
use crate::envs::{
    DriftMutation, DriftSchedule, DriftingEnv, EnvError, EnvKind, Environment, GridLake,
    GridLakeSpec, MountainCar, MountainCarSpec, ShopGraph, ShopGraphSpec, Snapshot, StepOutcome,
};
use crate::verify::{verify_cycle, CycleReport, ProbeAccess, VerifyError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("aggregate: {0}")]
    Aggregate(String),
}

/// Concrete environment instance behind the config.
#[allow(clippy::large_enum_variant)] // one instance per seed; size is fine
pub enum HarnessEnv {
    Grid(GridLake),
    Car(MountainCar),
    Shop(ShopGraph),
}

impl HarnessEnv {
    /// Maximum score a single episode can achieve right now.
    pub fn max_score(&self) -> f64 {
        match self {
            HarnessEnv::Grid(e) => e.spec().golds.values().cloned().fold(0.0, f64::max),
            HarnessEnv::Car(_) => 1.0,
            HarnessEnv::Shop(_) => 100.0,
        }
    }

    fn inner(&self) -> &dyn Environment {
        match self {
            HarnessEnv::Grid(e) => e,
            HarnessEnv::Car(e) => e,
            HarnessEnv::Shop(e) => e,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Environment {
        match self {
            HarnessEnv::Grid(e) => e,
            HarnessEnv::Car(e) => e,
            HarnessEnv::Shop(e) => e,
        }
    }
}

impl Environment for HarnessEnv {
    fn reset(&mut self, seed: u64, episode: u64) -> RawState {
        self.inner_mut().reset(seed, episode)
    }
    fn step(&mut self, action: Action) -> Result<StepOutcome, EnvError> {
        self.inner_mut().step(action)
    }
    fn snapshot(&self) -> Option<Snapshot> {
        self.inner().snapshot()
    }
    fn restore(&mut self, snap: &Snapshot) -> Result<(), EnvError> {
        self.inner_mut().restore(snap)
    }
    fn action_space(&self) -> Vec<Action> {
        self.inner().action_space()
    }
    fn is_deterministic(&self) -> bool {
        self.inner().is_deterministic()
    }
    fn apply_drift(&mut self, mutation: &DriftMutation) -> Result<(), EnvError> {
        self.inner_mut().apply_drift(mutation)
    }
    fn form_state(&self) -> RawState {
        self.inner().form_state()
    }
    fn terminal_value(&self, key: &StateKey, bank_cfg: &BankConfig) -> Option<f64> {
        self.inner().terminal_value(key, bank_cfg)
    }
    fn kind(&self) -> EnvKind {
        self.inner().kind()
    }
}

pub fn build_env(cfg: &RunConfig) -> Result<HarnessEnv, HarnessError> {
    match cfg.env.kind {
        EnvKind::GridLake => {
            let map = cfg
                .env
                .map
                .as_ref()
                .ok_or_else(|| HarnessError::Config("gridlake requires env.map".into()))?;
            let text = std::fs::read_to_string(map)?;
            let spec = GridLakeSpec::parse(&text)?.with_slip(cfg.env.slip);
            Ok(HarnessEnv::Grid(GridLake::new(spec)))
        }
        EnvKind::MountainCar => {
            let mut spec = MountainCarSpec::default();
            if let Some(force) = cfg.env.force {
                spec.force = force;
            }
            Ok(HarnessEnv::Car(MountainCar::new(spec)))
        }
        EnvKind::ShopGraph => Ok(HarnessEnv::Shop(ShopGraph::new(ShopGraphSpec::default())?)),
        EnvKind::Synthetic => Err(HarnessError::Config(
            "synthetic environments are driven directly by tests, not the harness".into(),
        )),
    }
}

fn build_mutation(spec: &DriftSpec) -> Result<DriftMutation, HarnessError> {
    Ok(match spec {
        DriftSpec::MapSwap { map } => {
            let text = std::fs::read_to_string(map)?;
            DriftMutation::MapSwap {
                spec: GridLakeSpec::parse(&text)?,
            }
        }
        DriftSpec::GoldSwap => DriftMutation::GoldSwap,
        DriftSpec::ForceSet { force } => DriftMutation::ForceSet { force: *force },
        DriftSpec::ButtonRemap { button } => DriftMutation::ButtonRemap { button: *button },
        DriftSpec::AttributeRemap { attribute, option } => DriftMutation::AttributeRemap {
            attribute: attribute.clone(),
            option: option.clone(),
        },
    })
}

pub fn build_schedule(cfg: &RunConfig) -> Result<DriftSchedule, HarnessError> {
    let mut events = Vec::new();
    let mut start = 0u64;
    for phase in &cfg.phases {
        if let Some(spec) = &phase.drift {
            events.push((start, build_mutation(spec)?));
        }
        start += phase.episodes;
    }
    Ok(DriftSchedule::new(events)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeMetrics {
    pub episode: u64,
    pub phase: String,
    pub success: bool,
    pub score: f64,
    pub steps: u64,
    pub probe_count: u64,
    pub conflict_events: u64,
    pub realignments: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Drift {
        seed: u64,
        episode: u64,
        kinds: Vec<String>,
    },
    Cycle {
        seed: u64,
        episode: u64,
        step: u64,
        #[serde(flatten)]
        report: CycleReport,
    },
    Episode {
        seed: u64,
        #[serde(flatten)]
        metrics: EpisodeMetrics,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedReport {
    pub seed: u64,
    pub episodes: Vec<EpisodeMetrics>,
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseInfo {
    pub name: String,
    pub start: u64,
    pub episodes: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub method: String,
    pub rounds: u64,
    pub phases: Vec<PhaseInfo>,
    /// Per-seed outcome; a panicking seed is recorded as an error string.
    pub seeds: Vec<(u64, Result<SeedReport, String>)>,
}

impl RunReport {
    pub fn seed_reports(&self) -> impl Iterator<Item = &SeedReport> {
        self.seeds.iter().filter_map(|(_, r)| r.as_ref().ok())
    }

    /// Episode indices where drift applies.
    pub fn drift_episodes(&self) -> Vec<u64> {
        self.phases.iter().skip(1).map(|p| p.start).collect()
    }
}

struct SeedRunner<'a> {
    cfg: &'a RunConfig,
    seed: u64,
    env: DriftingEnv<HarnessEnv>,
    bank: ExperienceBank,
    pstate: PersistenceState,
    policy: MemoryPolicy,
    bank_cfg: BankConfig,
    prompt_template: Option<String>,
    events: Vec<Event>,
}

impl SeedRunner<'_> {
    fn decide(
        &self,
        cur: &StateKey,
        action_space: &[Action],
        episode: u64,
        step: u64,
    ) -> Result<Action, HarnessError> {
        let agent = &self.cfg.agent;
        if agent.kind == AgentKind::NoMemory {
            return Ok(no_memory_decide(action_space, self.seed, episode, step));
        }
        let terminal = |k: &StateKey| self.env.env.terminal_value(k, &self.bank_cfg);
        let annotations = annotate(
            &self.bank,
            cur,
            agent.horizon,
            &self.policy,
            episode,
            &terminal,
        );
        let explored = retrieved_actions(&self.bank, cur, &self.policy, episode);
        if agent.kind == AgentKind::Remote {
            let backend = RemoteBackend {
                addr: agent
                    .endpoint
                    .clone()
                    .ok_or_else(|| HarnessError::Config("remote agent needs endpoint".into()))?,
                timeout: std::time::Duration::from_secs(10),
                fallback: RemoteFallback::Explore,
            };
            let template = self
                .prompt_template
                .as_deref()
                .ok_or_else(|| HarnessError::Config("remote agent needs prompt template".into()))?;
            let prompt = render_prompt(template, cur, &annotations, action_space);
            if let Some(action) = remote_decide(&backend, &prompt, action_space)
                .map_err(|e| HarnessError::Config(e.to_string()))?
            {
                return Ok(action);
            }
        }
        Ok(planner_decide(
            &annotations,
            action_space,
            &explored,
            &self.cfg.agent.explore_mode(),
            episode,
            step,
        ))
    }

    fn run_episode(&mut self, episode: u64, phase: &str) -> Result<EpisodeMetrics, HarnessError> {
        let (raw, applied) = self.env.reset_with_drift(self.seed, episode)?;
        if !applied.is_empty() {
            self.events.push(Event::Drift {
                seed: self.seed,
                episode,
                kinds: applied.iter().map(|k| k.to_string()).collect(),
            });
        }
        let cfg = self.cfg;
        let uses_memory = cfg.agent.kind != AgentKind::NoMemory;
        let inserts = uses_memory && self.policy != MemoryPolicy::Static;
        let glove = cfg.glove.enabled && inserts;
        let step_cap = cfg.env.effective_step_cap();
        let detect_cfg = cfg.detect.detector_config();

        let mut state_raw = raw;
        let mut trajectory: Vec<(StateKey, Action)> = Vec::new();
        let mut steps = 0u64;
        let mut score = 0.0f64;
        let mut done = false;
        let mut probe_count = 0u64;
        let mut conflict_events = 0u64;
        let mut realignments = 0u64;

        while !done && steps < step_cap {
            let cur = canonical_key(&state_raw, &self.bank_cfg)?;
            let action_space = self.env.env.action_space();
            if action_space.is_empty() {
                break;
            }
            let action = self.decide(&cur, &action_space, episode, steps)?;
            let pre_snapshot = self.env.env.snapshot();
            let out = self.env.env.step(action)?;
            steps += 1;
            score += out.score;
            let outcome = canonical_key(&out.state, &self.bank_cfg)?;
            let record = ExperienceRecord {
                state: cur.clone(),
                action,
                outcome: outcome.clone(),
                reward: Some(out.score),
                meta: Metadata {
                    recorded_at: (episode, (steps - 1) as u32),
                    trajectory: trajectory.clone(),
                    exec_count: 1,
                },
            };
            if glove {
                if let Some(belief) =
                    retrieve_belief(&self.bank, &cur, action, &self.policy, episode)
                {
                    if is_surprising(&belief, &outcome, &detect_cfg) {
                        conflict_events += 1;
                    }
                }
                let access = ProbeAccess {
                    pre_action_snapshot: pre_snapshot,
                    post_snapshot: self.env.env.snapshot(),
                    trajectory: &record.meta.trajectory,
                    seed: self.seed,
                    episode,
                    bank_cfg: &self.bank_cfg,
                };
                let report = verify_cycle(
                    &mut self.bank,
                    &mut self.env.env,
                    &record,
                    &detect_cfg,
                    &cfg.verify,
                    &mut self.pstate,
                    &access,
                )?;
                match &report {
                    CycleReport::NoAction => {}
                    CycleReport::Realigned { probes_used, .. } => {
                        probe_count += probes_used;
                        realignments += 1;
                        self.events.push(Event::Cycle {
                            seed: self.seed,
                            episode,
                            step: steps - 1,
                            report,
                        });
                    }
                    CycleReport::Aborted { .. } => {
                        self.events.push(Event::Cycle {
                            seed: self.seed,
                            episode,
                            step: steps - 1,
                            report,
                        });
                    }
                }
            }
            if inserts {
                self.bank.insert(record);
            }
            trajectory.push((cur, action));
            done = out.done;
            state_raw = out.state;
        }

        let rule = cfg.env.effective_success(cfg.run.success);
        let success = match rule {
            SuccessRule::Goal => done && score > 0.0,
            SuccessRule::MaxScore => done && score + 1e-9 >= self.env.env.max_score(),
        };
        let metrics = EpisodeMetrics {
            episode,
            phase: phase.to_string(),
            success,
            score,
            steps,
            probe_count,
            conflict_events,
            realignments,
        };
        self.events.push(Event::Episode {
            seed: self.seed,
            metrics: metrics.clone(),
        });
        Ok(metrics)
    }
}

fn run_seed(cfg: &RunConfig, seed: u64) -> Result<SeedReport, HarnessError> {
    let env = DriftingEnv::new(build_env(cfg)?, build_schedule(cfg)?);
    let bank = match &cfg.bank.initial {
        Some(path) => ExperienceBank::load(path)?,
        None => ExperienceBank::new(),
    };
    let prompt_template = match &cfg.agent.prompt_template {
        Some(path) => Some(std::fs::read_to_string(path)?),
        None => None,
    };
    let mut runner = SeedRunner {
        cfg,
        seed,
        env,
        bank,
        pstate: PersistenceState::new(),
        policy: cfg.agent.memory_policy(),
        bank_cfg: BankConfig {
            bins: cfg.env.bins.clone(),
        },
        prompt_template,
        events: Vec::new(),
    };
    let mut episodes = Vec::new();
    let mut episode = 0u64;
    for phase in &cfg.phases {
        for _ in 0..phase.episodes {
            episodes.push(runner.run_episode(episode, &phase.name)?);
            episode += 1;
        }
    }
    Ok(SeedReport {
        seed,
        episodes,
        events: runner.events,
    })
}

/// Run every seed (in parallel); a panicking seed is recorded as failed
/// without aborting the rest.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunReport, HarnessError> {
    cfg.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
    let seeds: Vec<(u64, Result<SeedReport, String>)> = cfg
        .run
        .seeds
        .par_iter()
        .map(|&seed| {
            let outcome = std::panic::catch_unwind(AssertUnwindSafe(|| run_seed(cfg, seed)));
            let result = match outcome {
                Ok(Ok(report)) => Ok(report),
                Ok(Err(e)) => Err(e.to_string()),
                Err(panic) => Err(format!(
                    "seed panicked: {}",
                    panic
                        .downcast_ref::<&str>()
                        .map(|s| s.to_string())
                        .or_else(|| panic.downcast_ref::<String>().cloned())
                        .unwrap_or_else(|| "unknown panic".into())
                )),
            };
            (seed, result)
        })
        .collect();
    let mut start = 0u64;
    let phases = cfg
        .phases
        .iter()
        .map(|p| {
            let info = PhaseInfo {
                name: p.name.clone(),
                start,
                episodes: p.episodes,
            };
            start += p.episodes;
            info
        })
        .collect();
    Ok(RunReport {
        method: cfg.run.method.clone(),
        rounds: cfg.run.rounds,
        phases,
        seeds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: String,
    pub phase: String,
    pub success_rate: f64,
    pub mean_score: f64,
    pub mean_probes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub method: String,
    pub episode: u64,
    pub success_ma: f64,
    pub conflicts: f64,
    pub probes: f64,
    /// Drift applies at this episode boundary.
    pub drift: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Aggregate {
    pub rows: Vec<SummaryRow>,
    pub curves: Vec<CurvePoint>,
}

const MA_WINDOW: usize = 5;

/// Summaries keyed by (method, phase) over the final `rounds` episodes of
/// each phase, plus per-episode adaptation curves averaged over seeds.
pub fn aggregate(reports: &[RunReport]) -> Result<Aggregate, HarnessError> {
    let first = reports
        .first()
        .ok_or_else(|| HarnessError::Aggregate("no reports".into()))?;
    let shape: Vec<(&str, u64)> = first
        .phases
        .iter()
        .map(|p| (p.name.as_str(), p.episodes))
        .collect();
    for report in reports {
        let other: Vec<(&str, u64)> = report
            .phases
            .iter()
            .map(|p| (p.name.as_str(), p.episodes))
            .collect();
        if other != shape || report.rounds != first.rounds {
            return Err(HarnessError::Aggregate(
                "reports with different phase structure cannot be aggregated".into(),
            ));
        }
    }

    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for report in reports {
        let seed_reports: Vec<&SeedReport> = report.seed_reports().collect();
        if seed_reports.is_empty() {
            return Err(HarnessError::Aggregate(format!(
                "method `{}` has no successful seeds",
                report.method
            )));
        }
        for phase in &report.phases {
            let from = phase.start + phase.episodes - report.rounds.min(phase.episodes);
            let to = phase.start + phase.episodes;
            let mut successes = 0u64;
            let mut score_sum = 0.0;
            let mut probe_sum = 0.0;
            let mut count = 0u64;
            for sr in &seed_reports {
                for m in &sr.episodes {
                    if m.episode >= from && m.episode < to {
                        successes += m.success as u64;
                        score_sum += m.score;
                        probe_sum += m.probe_count as f64;
                        count += 1;
                    }
                }
            }
            rows.push(SummaryRow {
                method: report.method.clone(),
                phase: phase.name.clone(),
                success_rate: successes as f64 / count as f64,
                mean_score: score_sum / count as f64,
                mean_probes: probe_sum / count as f64,
            });
        }

        let total_episodes: u64 = report.phases.iter().map(|p| p.episodes).sum();
        let drift_marks = report.drift_episodes();
        let mut success_series = Vec::with_capacity(total_episodes as usize);
        for episode in 0..total_episodes {
            let mut success = 0.0;
            let mut conflicts = 0.0;
            let mut probes = 0.0;
            for sr in &seed_reports {
                let m = &sr.episodes[episode as usize];
                success += m.success as u64 as f64;
                conflicts += m.conflict_events as f64;
                probes += m.probe_count as f64;
            }
            let n = seed_reports.len() as f64;
            success_series.push(success / n);
            let window_from = (episode as usize + 1).saturating_sub(MA_WINDOW);
            let window = &success_series[window_from..];
            curves.push(CurvePoint {
                method: report.method.clone(),
                episode,
                success_ma: window.iter().sum::<f64>() / window.len() as f64,
                conflicts: conflicts / n,
                probes: probes / n,
                drift: drift_marks.contains(&episode),
            });
        }
    }
    Ok(Aggregate { rows, curves })
}

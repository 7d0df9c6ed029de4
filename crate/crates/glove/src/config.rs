//! Run configuration: TOML schema, dotted-key overrides, and validation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{ExploreMode, MemoryPolicy};
use crate::detect::{DetectorConfig, EpsilonMode};
use crate::envs::EnvKind;
use crate::verify::VerifierConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("override `{0}` does not match any existing config key")]
    UnknownOverrideKey(String),
    #[error("override `{0}` is not KEY=VALUE")]
    MalformedOverride(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn default_rounds() -> u64 {
    20
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_method() -> String {
    "glove".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSection {
    pub seeds: Vec<u64>,
    #[serde(default = "default_rounds")]
    pub rounds: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Label used for report rows.
    #[serde(default = "default_method")]
    pub method: String,
    /// Episode success rule; defaults per environment kind.
    #[serde(default)]
    pub success: Option<SuccessRule>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuccessRule {
    /// Any terminal goal reached (score > 0 at episode end).
    Goal,
    /// Episode score reaches the environment's maximum achievable score.
    MaxScore,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvSection {
    pub kind: EnvKind,
    /// ASCII map fixture (gridlake).
    #[serde(default)]
    pub map: Option<PathBuf>,
    #[serde(default)]
    pub slip: f64,
    #[serde(default)]
    pub force: Option<f64>,
    #[serde(default)]
    pub step_cap: Option<u64>,
    /// Bin widths for continuous state fields.
    #[serde(default)]
    pub bins: BTreeMap<String, f64>,
}

impl EnvSection {
    pub fn effective_step_cap(&self) -> u64 {
        self.step_cap.unwrap_or(match self.kind {
            EnvKind::GridLake => 96,
            EnvKind::MountainCar => 200,
            EnvKind::ShopGraph => 30,
            EnvKind::Synthetic => 1,
        })
    }

    pub fn effective_success(&self, rule: Option<SuccessRule>) -> SuccessRule {
        rule.unwrap_or(match self.kind {
            EnvKind::GridLake => SuccessRule::Goal,
            _ => SuccessRule::MaxScore,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriftSpec {
    MapSwap { map: PathBuf },
    GoldSwap,
    ForceSet { force: f64 },
    ButtonRemap { button: usize },
    AttributeRemap { attribute: String, option: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseSection {
    pub name: String,
    pub episodes: u64,
    #[serde(default)]
    pub drift: Option<DriftSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Planner,
    NoMemory,
    Remote,
}

fn default_horizon() -> u32 {
    12
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentSection {
    #[serde(default = "default_agent_kind")]
    pub kind: AgentKind,
    #[serde(default = "default_memory")]
    pub memory: MemoryName,
    #[serde(default = "default_horizon")]
    pub horizon: u32,
    #[serde(default = "default_explore")]
    pub explore: ExploreName,
    #[serde(default)]
    pub explore_seed: u64,
    /// Decay policy parameters.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_w_min")]
    pub w_min: f64,
    /// Remote backend address (agent.kind = "remote").
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub prompt_template: Option<PathBuf>,
}

fn default_agent_kind() -> AgentKind {
    AgentKind::Planner
}

fn default_lambda() -> f64 {
    0.1
}

fn default_w_min() -> f64 {
    0.05
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryName {
    Live,
    Static,
    Decay,
}

fn default_memory() -> MemoryName {
    MemoryName::Live
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExploreName {
    Systematic,
    Seeded,
}

fn default_explore() -> ExploreName {
    ExploreName::Systematic
}

impl AgentSection {
    pub fn memory_policy(&self) -> MemoryPolicy {
        match self.memory {
            MemoryName::Live => MemoryPolicy::Live,
            MemoryName::Static => MemoryPolicy::Static,
            MemoryName::Decay => MemoryPolicy::Decay {
                lambda: self.lambda,
                w_min: self.w_min,
            },
        }
    }

    pub fn explore_mode(&self) -> ExploreMode {
        match self.explore {
            ExploreName::Systematic => ExploreMode::Systematic,
            ExploreName::Seeded => ExploreMode::Seeded {
                seed: self.explore_seed,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct GloveSection {
    #[serde(default)]
    pub enabled: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectSection {
    #[serde(default)]
    pub deterministic: bool,
    #[serde(default)]
    pub p_th: Option<u32>,
    #[serde(default = "default_detect_mode")]
    pub mode: DetectModeName,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_w_min")]
    pub epsilon_min: f64,
    #[serde(default)]
    pub epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectModeName {
    Hoeffding,
    Fixed,
}

fn default_detect_mode() -> DetectModeName {
    DetectModeName::Hoeffding
}

fn default_delta() -> f64 {
    0.05
}

impl Default for DetectSection {
    fn default() -> Self {
        DetectSection {
            deterministic: false,
            p_th: None,
            mode: default_detect_mode(),
            delta: default_delta(),
            epsilon_min: default_w_min(),
            epsilon: 0.1,
        }
    }
}

impl DetectSection {
    pub fn detector_config(&self) -> DetectorConfig {
        DetectorConfig {
            epsilon_mode: match self.mode {
                DetectModeName::Hoeffding => EpsilonMode::Hoeffding {
                    delta: self.delta,
                    epsilon_min: self.epsilon_min,
                },
                DetectModeName::Fixed => EpsilonMode::Fixed {
                    epsilon: self.epsilon,
                },
            },
            p_th: self.p_th.unwrap_or(if self.deterministic { 1 } else { 2 }),
            deterministic: self.deterministic,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BankSection {
    /// Preloaded bank fixture for the initial memory.
    #[serde(default)]
    pub initial: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub run: RunSection,
    pub env: EnvSection,
    #[serde(rename = "phase")]
    pub phases: Vec<PhaseSection>,
    pub agent: AgentSection,
    #[serde(default)]
    pub glove: GloveSection,
    #[serde(default)]
    pub detect: DetectSection,
    #[serde(default)]
    pub verify: VerifierConfig,
    #[serde(default)]
    pub bank: BankSection,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.run.seeds.is_empty() {
            return Err(ConfigError::Invalid("run.seeds must be nonempty".into()));
        }
        if self.phases.is_empty() {
            return Err(ConfigError::Invalid("at least one [[phase]] required".into()));
        }
        for phase in &self.phases {
            if phase.episodes < self.run.rounds {
                return Err(ConfigError::Invalid(format!(
                    "phase `{}` has {} episodes, fewer than rounds = {}",
                    phase.name, phase.episodes, self.run.rounds
                )));
            }
        }
        if self.phases[0].drift.is_some() {
            return Err(ConfigError::Invalid(
                "the first phase is the source phase and cannot declare drift".into(),
            ));
        }
        for phase in &self.phases[1..] {
            if phase.drift.is_none() {
                return Err(ConfigError::Invalid(format!(
                    "phase `{}` after the source phase must declare drift",
                    phase.name
                )));
            }
        }
        if self.env.kind == EnvKind::GridLake && self.env.map.is_none() {
            return Err(ConfigError::Invalid("gridlake requires env.map".into()));
        }
        if !(0.0..1.0).contains(&self.env.slip) {
            return Err(ConfigError::Invalid("env.slip must lie in [0,1)".into()));
        }
        if self.agent.kind == AgentKind::Remote && self.agent.endpoint.is_none() {
            return Err(ConfigError::Invalid(
                "remote agent requires agent.endpoint".into(),
            ));
        }
        if self.glove.enabled {
            self.verify
                .validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }

    /// Resolve fixture paths relative to a base directory (normally the
    /// config file's parent).
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        if let Some(map) = &mut self.env.map {
            fix(map);
        }
        for phase in &mut self.phases {
            if let Some(DriftSpec::MapSwap { map }) = &mut phase.drift {
                fix(map);
            }
        }
        if let Some(initial) = &mut self.bank.initial {
            fix(initial);
        }
        if let Some(template) = &mut self.agent.prompt_template {
            fix(template);
        }
    }
}

/// Apply one `dotted.key=value` override onto a TOML document. The key must
/// already exist (numeric indices address arrays, e.g. `phase.1.episodes`).
pub fn apply_override(doc: &mut toml::Value, spec: &str) -> Result<(), ConfigError> {
    let (key, value) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::MalformedOverride(spec.to_string()))?;
    let mut cursor = &mut *doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        let next = match cursor {
            toml::Value::Table(table) => table.get_mut(*part),
            toml::Value::Array(items) => part
                .parse::<usize>()
                .ok()
                .and_then(|idx| items.get_mut(idx)),
            _ => None,
        };
        let Some(next) = next else {
            return Err(ConfigError::UnknownOverrideKey(key.to_string()));
        };
        if last {
            *next = parse_toml_scalar(value);
            return Ok(());
        }
        cursor = next;
    }
    Err(ConfigError::UnknownOverrideKey(key.to_string()))
}

fn parse_toml_scalar(raw: &str) -> toml::Value {
    if let Ok(b) = raw.parse::<bool>() {
        return toml::Value::Boolean(b);
    }
    if let Ok(i) = raw.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return toml::Value::Float(f);
    }
    toml::Value::String(raw.to_string())
}

/// Load a config file, apply overrides, resolve relative fixture paths
/// against the file's directory, and validate.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    let mut doc = toml::Value::Table(table);
    for spec in overrides {
        apply_override(&mut doc, spec)?;
    }
    let mut config: RunConfig = doc
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    config.resolve_paths(base);
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
[run]
seeds = [1, 2]
rounds = 20
out_dir = "out"
method = "glove"

[env]
kind = "gridlake"
map = "maps/source.map"

[[phase]]
name = "source"
episodes = 25

[[phase]]
name = "drift1"
episodes = 40
drift = { kind = "gold_swap" }

[agent]
kind = "planner"
memory = "live"
explore = "seeded"
explore_seed = 7

[glove]
enabled = true

[detect]
deterministic = true

[verify]
deterministic = true
"#;

    fn parse(text: &str) -> RunConfig {
        let doc: toml::Table = text.parse().unwrap();
        toml::Value::Table(doc).try_into().unwrap()
    }

    #[test]
    fn example_config_parses_and_validates() {
        let cfg = parse(EXAMPLE);
        cfg.validate().unwrap();
        assert_eq!(cfg.run.seeds, vec![1, 2]);
        assert_eq!(cfg.phases.len(), 2);
        assert!(matches!(cfg.phases[1].drift, Some(DriftSpec::GoldSwap)));
        assert_eq!(cfg.env.effective_step_cap(), 96);
        assert_eq!(cfg.detect.detector_config().p_th, 1);
        assert!(matches!(
            cfg.agent.explore_mode(),
            crate::agents::ExploreMode::Seeded { seed: 7 }
        ));
    }

    #[test]
    fn override_existing_key() {
        let mut doc = toml::Value::Table(EXAMPLE.parse::<toml::Table>().unwrap());
        apply_override(&mut doc, "glove.enabled=false").unwrap();
        apply_override(&mut doc, "run.rounds=5").unwrap();
        apply_override(&mut doc, "phase.1.episodes=60").unwrap();
        let cfg: RunConfig = doc.try_into().unwrap();
        assert!(!cfg.glove.enabled);
        assert_eq!(cfg.run.rounds, 5);
        assert_eq!(cfg.phases[1].episodes, 60);
    }

    #[test]
    fn override_unknown_key_rejected() {
        let mut doc = toml::Value::Table(EXAMPLE.parse::<toml::Table>().unwrap());
        assert!(matches!(
            apply_override(&mut doc, "glove.enabeld=false"),
            Err(ConfigError::UnknownOverrideKey(_))
        ));
        assert!(matches!(
            apply_override(&mut doc, "nonsense"),
            Err(ConfigError::MalformedOverride(_))
        ));
    }

    #[test]
    fn validation_rules() {
        let mut cfg = parse(EXAMPLE);
        cfg.run.seeds.clear();
        assert!(cfg.validate().is_err());

        let mut cfg = parse(EXAMPLE);
        cfg.phases[1].episodes = 10; // fewer than rounds
        assert!(cfg.validate().is_err());

        let mut cfg = parse(EXAMPLE);
        cfg.phases[1].drift = None;
        assert!(cfg.validate().is_err());

        let mut cfg = parse(EXAMPLE);
        cfg.env.map = None;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn paths_resolve_against_base() {
        let mut cfg = parse(EXAMPLE);
        cfg.resolve_paths(Path::new("/tmp/cfgs"));
        assert_eq!(cfg.env.map.as_deref(), Some(Path::new("/tmp/cfgs/maps/source.map")));
    }
}

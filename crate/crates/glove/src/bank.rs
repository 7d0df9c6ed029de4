//! Experience bank: keyed transition storage, counterpart retrieval, and
//! realignment bookkeeping.
//!
//! Records are indexed by `(StateKey, Action)`. Identical transitions merge
//! into a single record with an execution count, so empirical frequencies
//! use all evidence without unbounded growth. Removed records are tombstoned,
//! never deleted.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Action = u32;

/// (episode index, step index) timestamp.
pub type Stamp = (u64, u32);

#[derive(Debug, Error)]
pub enum BankError {
    #[error("non-finite value in continuous field `{0}`")]
    NonFiniteField(String),
    #[error("no bin width configured for continuous field `{0}`")]
    MissingBinWidth(String),
    #[error("realign requires a verified distribution, got {0:?}")]
    UnverifiedTruth(Origin),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum KeyKind {
    Discrete,
    BinnedContinuous,
}

/// Canonical, hashable encoding of a task-relevant state.
///
/// Encoding the same state twice yields byte-identical keys; the key bytes
/// define the matching rule between stored and fresh transitions.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateKey {
    kind: KeyKind,
    key_bytes: String,
}

impl StateKey {
    pub fn new(kind: KeyKind, key_bytes: String) -> Self {
        debug_assert!(
            !key_bytes.contains('\t') && !key_bytes.contains('\n'),
            "state keys must not contain tabs or newlines"
        );
        StateKey { kind, key_bytes }
    }

    pub fn kind(&self) -> KeyKind {
        self.kind
    }

    pub fn as_str(&self) -> &str {
        &self.key_bytes
    }

    /// Prefix-tagged form used in the bank file and event logs.
    pub fn encode(&self) -> String {
        match self.kind {
            KeyKind::Discrete => format!("d:{}", self.key_bytes),
            KeyKind::BinnedContinuous => format!("b:{}", self.key_bytes),
        }
    }

    pub fn decode(s: &str) -> Option<Self> {
        let (tag, rest) = s.split_at_checked(2)?;
        let kind = match tag {
            "d:" => KeyKind::Discrete,
            "b:" => KeyKind::BinnedContinuous,
            _ => return None,
        };
        Some(StateKey::new(kind, rest.to_string()))
    }

    /// Value of a named `field=value` component, if present.
    pub fn field(&self, name: &str) -> Option<&str> {
        self.key_bytes
            .split('|')
            .find_map(|part| part.strip_prefix(name)?.strip_prefix('='))
    }
}

impl fmt::Display for StateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key_bytes)
    }
}

impl Serialize for StateKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.encode())
    }
}

impl<'de> Deserialize<'de> for StateKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        StateKey::decode(&s).ok_or_else(|| serde::de::Error::custom("bad state key tag"))
    }
}

/// A raw environment state: named fields, each either discrete text or a
/// continuous number. Field order is part of the canonical encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct RawState {
    pub fields: Vec<(String, FieldValue)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldValue {
    Text(String),
    Continuous(f64),
}

impl RawState {
    pub fn field_names(&self) -> Vec<&str> {
        self.fields.iter().map(|(n, _)| n.as_str()).collect()
    }
}

/// Bin widths for continuous fields; discrete states need no configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BankConfig {
    #[serde(default)]
    pub bins: BTreeMap<String, f64>,
}

/// Deterministic canonicalization of a raw state. Discrete fields map 1:1,
/// continuous fields map to `floor(value / bin_width)` integer bins.
pub fn canonical_key(raw: &RawState, cfg: &BankConfig) -> Result<StateKey, BankError> {
    let mut parts = Vec::with_capacity(raw.fields.len());
    let mut continuous = false;
    for (name, value) in &raw.fields {
        match value {
            FieldValue::Text(t) => {
                // `|` separates fields; tabs and newlines delimit the bank
                // file format. Replace them so keys stay parseable.
                let t: String = t
                    .chars()
                    .map(|c| if c == '|' || c == '\t' || c == '\n' { ' ' } else { c })
                    .collect();
                parts.push(format!("{name}={t}"));
            }
            FieldValue::Continuous(v) => {
                if !v.is_finite() {
                    return Err(BankError::NonFiniteField(name.clone()));
                }
                let width = cfg
                    .bins
                    .get(name)
                    .copied()
                    .ok_or_else(|| BankError::MissingBinWidth(name.clone()))?;
                let bin = (v / width).floor() as i64;
                parts.push(format!("{name}={bin}"));
                continuous = true;
            }
        }
    }
    let kind = if continuous {
        KeyKind::BinnedContinuous
    } else {
        KeyKind::Discrete
    };
    Ok(StateKey::new(kind, parts.join("|")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub recorded_at: Stamp,
    /// (state, action) pairs from episode reset up to (excluding) the
    /// recorded state; replaying them reproduces the state in deterministic
    /// environments.
    pub trajectory: Vec<(StateKey, Action)>,
    pub exec_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceRecord {
    pub state: StateKey,
    pub action: Action,
    pub outcome: StateKey,
    pub reward: Option<f64>,
    pub meta: Metadata,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Historical,
    Verified,
}

/// Empirical categorical distribution over next-state outcomes. Masses are
/// stored as integer counts over `sample_size`, so each mass is an exact
/// rational count/n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDistribution {
    pub counts: BTreeMap<StateKey, u64>,
    pub sample_size: u64,
    pub built_at: Stamp,
    pub origin: Origin,
}

impl OutcomeDistribution {
    pub fn from_counts(
        counts: BTreeMap<StateKey, u64>,
        built_at: Stamp,
        origin: Origin,
    ) -> Self {
        let sample_size = counts.values().sum();
        OutcomeDistribution {
            counts,
            sample_size,
            built_at,
            origin,
        }
    }

    pub fn mass(&self, outcome: &StateKey) -> f64 {
        if self.sample_size == 0 {
            return 0.0;
        }
        *self.counts.get(outcome).unwrap_or(&0) as f64 / self.sample_size as f64
    }

    pub fn support(&self) -> impl Iterator<Item = (&StateKey, f64)> {
        self.counts
            .iter()
            .map(|(k, c)| (k, *c as f64 / self.sample_size as f64))
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Single support point carrying all mass, if the distribution is
    /// degenerate.
    pub fn degenerate_outcome(&self) -> Option<&StateKey> {
        if self.counts.len() == 1 {
            self.counts.keys().next()
        } else {
            None
        }
    }
}

/// Empirical histogram over a nonempty counterpart set. Mass of each outcome
/// is the summed exec_count with that outcome over the total exec_count.
pub fn empirical_histogram(counterparts: &[&ExperienceRecord]) -> OutcomeDistribution {
    assert!(
        !counterparts.is_empty(),
        "empirical_histogram requires a nonempty counterpart set"
    );
    let mut counts: BTreeMap<StateKey, u64> = BTreeMap::new();
    let mut built_at = (0, 0);
    for rec in counterparts {
        *counts.entry(rec.outcome.clone()).or_insert(0) += rec.meta.exec_count;
        built_at = built_at.max(rec.meta.recorded_at);
    }
    OutcomeDistribution::from_counts(counts, built_at, Origin::Historical)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TombstoneEntry {
    Record(ExperienceRecord),
    Summary {
        state: StateKey,
        action: Action,
        dist: OutcomeDistribution,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tombstone {
    pub entry: TombstoneEntry,
    pub removed_at: Stamp,
}

type Key = (StateKey, Action);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperienceBank {
    records: BTreeMap<Key, Vec<ExperienceRecord>>,
    summaries: BTreeMap<Key, OutcomeDistribution>,
    tombstones: Vec<Tombstone>,
}

impl ExperienceBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty() && self.summaries.is_empty()
    }

    pub fn tombstones(&self) -> &[Tombstone] {
        &self.tombstones
    }

    pub fn summaries(&self) -> impl Iterator<Item = (&Key, &OutcomeDistribution)> {
        self.summaries.iter()
    }

    /// Insert a transition. An identical (state, action, outcome) record
    /// increments its exec_count instead of duplicating.
    pub fn insert(&mut self, record: ExperienceRecord) {
        let key = (record.state.clone(), record.action);
        let bucket = self.records.entry(key).or_default();
        if let Some(existing) = bucket.iter_mut().find(|r| r.outcome == record.outcome) {
            existing.meta.exec_count += record.meta.exec_count;
        } else {
            bucket.push(record);
        }
    }

    /// Counterpart experiences for a precondition, in canonical order
    /// (recorded_at, then outcome key bytes). Empty set means novel
    /// exploration.
    pub fn counterparts(&self, state: &StateKey, action: Action) -> Vec<&ExperienceRecord> {
        let mut out: Vec<&ExperienceRecord> = self
            .records
            .get(&(state.clone(), action))
            .map(|v| v.iter().collect())
            .unwrap_or_default();
        out.sort_by(|a, b| {
            a.meta
                .recorded_at
                .cmp(&b.meta.recorded_at)
                .then_with(|| a.outcome.as_str().cmp(b.outcome.as_str()))
        });
        out
    }

    pub fn summary(&self, state: &StateKey, action: Action) -> Option<&OutcomeDistribution> {
        self.summaries.get(&(state.clone(), action))
    }

    /// Records for a key inserted after the verified summary was built.
    pub fn newer_records(&self, state: &StateKey, action: Action) -> Vec<&ExperienceRecord> {
        let Some(summary) = self.summary(state, action) else {
            return Vec::new();
        };
        self.counterparts(state, action)
            .into_iter()
            .filter(|r| r.meta.recorded_at > summary.built_at)
            .collect()
    }

    /// Current belief about outcomes for a key: the verified summary (when
    /// present, acting as historical evidence with n = sample_size) merged
    /// with any newer records. None when nothing is known.
    pub fn belief(&self, state: &StateKey, action: Action) -> Option<OutcomeDistribution> {
        let key = (state.clone(), action);
        let summary = self.summaries.get(&key);
        let records = self.records.get(&key);
        match (summary, records) {
            (None, None) => None,
            (Some(s), None) => Some(s.clone()),
            (None, Some(_)) => {
                let cps = self.counterparts(state, action);
                Some(empirical_histogram(&cps))
            }
            (Some(s), Some(_)) => {
                let mut counts = s.counts.clone();
                let mut built_at = s.built_at;
                for rec in self.counterparts(state, action) {
                    *counts.entry(rec.outcome.clone()).or_insert(0) += rec.meta.exec_count;
                    built_at = built_at.max(rec.meta.recorded_at);
                }
                Some(OutcomeDistribution::from_counts(
                    counts,
                    built_at,
                    Origin::Verified,
                ))
            }
        }
    }

    /// Actions with any belief (record or summary) for the given state.
    pub fn known_actions(&self, state: &StateKey) -> Vec<Action> {
        let mut actions: Vec<Action> = self
            .records
            .keys()
            .chain(self.summaries.keys())
            .filter(|(s, _)| s == state)
            .map(|(_, a)| *a)
            .collect();
        actions.sort_unstable();
        actions.dedup();
        actions
    }

    /// Phase III: tombstone all counterpart records (and any earlier
    /// summary) for the key and install the verified truth.
    pub fn realign(
        &mut self,
        state: &StateKey,
        action: Action,
        truth: OutcomeDistribution,
    ) -> Result<(), BankError> {
        if truth.origin != Origin::Verified {
            return Err(BankError::UnverifiedTruth(truth.origin));
        }
        let key = (state.clone(), action);
        let removed_at = truth.built_at;
        if let Some(old) = self.records.remove(&key) {
            for rec in old {
                self.tombstones.push(Tombstone {
                    entry: TombstoneEntry::Record(rec),
                    removed_at,
                });
            }
        }
        if let Some(old) = self.summaries.remove(&key) {
            self.tombstones.push(Tombstone {
                entry: TombstoneEntry::Summary {
                    state: state.clone(),
                    action,
                    dist: old,
                },
                removed_at,
            });
        }
        self.summaries.insert(key, truth);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), BankError> {
        let mut buf = String::new();
        buf.push_str("glove-bank v1\n");
        let mut n_records = 0usize;
        for bucket in self.records.values() {
            for rec in bucket {
                buf.push_str(&record_line("record", rec));
                buf.push('\n');
                n_records += 1;
            }
        }
        for ((state, action), dist) in &self.summaries {
            buf.push_str(&summary_line(state, *action, dist));
            buf.push('\n');
        }
        for ts in &self.tombstones {
            let original = match &ts.entry {
                TombstoneEntry::Record(rec) => record_line("record", rec),
                TombstoneEntry::Summary {
                    state,
                    action,
                    dist,
                } => summary_line(state, *action, dist),
            };
            buf.push_str(&format!(
                "tombstone\t{}\t{}\t{}\n",
                escape(&original),
                ts.removed_at.0,
                ts.removed_at.1
            ));
        }
        buf.push_str(&format!(
            "end {} {} {}\n",
            n_records,
            self.summaries.len(),
            self.tombstones.len()
        ));
        // Atomic replace: temp file in the same directory, then rename.
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp)?;
        f.write_all(buf.as_bytes())?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, BankError> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, BankError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "glove-bank v1")) => {}
            other => {
                return Err(BankError::Parse {
                    line: 1,
                    msg: format!("expected `glove-bank v1` header, got {other:?}"),
                })
            }
        }
        let mut bank = ExperienceBank::new();
        let mut n_records = 0usize;
        let mut footer: Option<(usize, usize, usize)> = None;
        for (idx, line) in lines {
            let lineno = idx + 1;
            if footer.is_some() {
                return Err(BankError::Parse {
                    line: lineno,
                    msg: "content after end line".into(),
                });
            }
            if let Some(rest) = line.strip_prefix("end ") {
                let nums: Vec<usize> = rest
                    .split(' ')
                    .map(|t| t.parse())
                    .collect::<Result<_, _>>()
                    .map_err(|e| BankError::Parse {
                        line: lineno,
                        msg: format!("bad end line: {e}"),
                    })?;
                if nums.len() != 3 {
                    return Err(BankError::Parse {
                        line: lineno,
                        msg: "end line needs three counts".into(),
                    });
                }
                footer = Some((nums[0], nums[1], nums[2]));
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let err = |msg: String| BankError::Parse { line: lineno, msg };
            match fields[0] {
                "record" => {
                    let rec = parse_record(&fields).map_err(err)?;
                    n_records += 1;
                    // Raw append preserves exec_counts exactly as written.
                    bank.records
                        .entry((rec.state.clone(), rec.action))
                        .or_default()
                        .push(rec);
                }
                "summary" => {
                    let (state, action, dist) = parse_summary(&fields).map_err(err)?;
                    bank.summaries.insert((state, action), dist);
                }
                "tombstone" => {
                    if fields.len() != 4 {
                        return Err(err("tombstone line needs 4 fields".into()));
                    }
                    let original = unescape(fields[1]);
                    let inner: Vec<&str> = original.split('\t').collect();
                    let entry = match inner[0] {
                        "record" => TombstoneEntry::Record(parse_record(&inner).map_err(err)?),
                        "summary" => {
                            let (state, action, dist) =
                                parse_summary(&inner).map_err(err)?;
                            TombstoneEntry::Summary {
                                state,
                                action,
                                dist,
                            }
                        }
                        other => return Err(err(format!("bad tombstone payload kind `{other}`"))),
                    };
                    let removed_at = (
                        fields[2].parse().map_err(|e| err(format!("{e}")))?,
                        fields[3].parse().map_err(|e| err(format!("{e}")))?,
                    );
                    bank.tombstones.push(Tombstone { entry, removed_at });
                }
                other => return Err(err(format!("unknown line kind `{other}`"))),
            }
        }
        match footer {
            Some((r, s, t))
                if r == n_records && s == bank.summaries.len() && t == bank.tombstones.len() =>
            {
                Ok(bank)
            }
            Some(_) => Err(BankError::Parse {
                line: 0,
                msg: "end-line counts do not match file contents".into(),
            }),
            None => Err(BankError::Parse {
                line: 0,
                msg: "missing end line (truncated file?)".into(),
            }),
        }
    }
}

fn record_line(kind: &str, rec: &ExperienceRecord) -> String {
    let reward = match rec.reward {
        Some(r) => format!("{r}"),
        None => "-".to_string(),
    };
    let trajectory = serde_json::to_string(&rec.meta.trajectory).expect("trajectory json");
    format!(
        "{kind}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
        rec.state.encode(),
        rec.action,
        rec.outcome.encode(),
        reward,
        rec.meta.recorded_at.0,
        rec.meta.recorded_at.1,
        rec.meta.exec_count,
        trajectory
    )
}

fn summary_line(state: &StateKey, action: Action, dist: &OutcomeDistribution) -> String {
    let mut line = format!("summary\t{}\t{}\t{}", state.encode(), action, dist.counts.len());
    for (outcome, count) in &dist.counts {
        line.push_str(&format!("\t{}\t{}", outcome.encode(), count));
    }
    line.push_str(&format!(
        "\t{}\t{}\t{}\t{}",
        dist.sample_size,
        dist.built_at.0,
        dist.built_at.1,
        match dist.origin {
            Origin::Historical => "historical",
            Origin::Verified => "verified",
        }
    ));
    line
}

fn parse_key(s: &str) -> Result<StateKey, String> {
    StateKey::decode(s).ok_or_else(|| format!("bad state key `{s}`"))
}

fn parse_record(fields: &[&str]) -> Result<ExperienceRecord, String> {
    if fields.len() != 9 {
        return Err(format!("record line needs 9 fields, got {}", fields.len()));
    }
    let reward = match fields[4] {
        "-" => None,
        v => Some(v.parse::<f64>().map_err(|e| e.to_string())?),
    };
    Ok(ExperienceRecord {
        state: parse_key(fields[1])?,
        action: fields[2].parse().map_err(|e| format!("{e}"))?,
        outcome: parse_key(fields[3])?,
        reward,
        meta: Metadata {
            recorded_at: (
                fields[5].parse().map_err(|e| format!("{e}"))?,
                fields[6].parse().map_err(|e| format!("{e}"))?,
            ),
            trajectory: serde_json::from_str(fields[8]).map_err(|e| e.to_string())?,
            exec_count: fields[7].parse().map_err(|e| format!("{e}"))?,
        },
    })
}

fn parse_summary(fields: &[&str]) -> Result<(StateKey, Action, OutcomeDistribution), String> {
    if fields.len() < 4 {
        return Err("summary line too short".into());
    }
    let state = parse_key(fields[1])?;
    let action: Action = fields[2].parse().map_err(|e| format!("{e}"))?;
    let k: usize = fields[3].parse().map_err(|e| format!("{e}"))?;
    let expected = 4 + 2 * k + 4;
    if fields.len() != expected {
        return Err(format!(
            "summary line needs {expected} fields for {k} outcomes, got {}",
            fields.len()
        ));
    }
    let mut counts = BTreeMap::new();
    for i in 0..k {
        let outcome = parse_key(fields[4 + 2 * i])?;
        let count: u64 = fields[5 + 2 * i].parse().map_err(|e| format!("{e}"))?;
        counts.insert(outcome, count);
    }
    let n: u64 = fields[4 + 2 * k].parse().map_err(|e| format!("{e}"))?;
    let built_at = (
        fields[5 + 2 * k].parse().map_err(|e| format!("{e}"))?,
        fields[6 + 2 * k].parse().map_err(|e| format!("{e}"))?,
    );
    let origin = match fields[7 + 2 * k] {
        "historical" => Origin::Historical,
        "verified" => Origin::Verified,
        other => return Err(format!("bad origin `{other}`")),
    };
    let dist = OutcomeDistribution {
        counts,
        sample_size: n,
        built_at,
        origin,
    };
    if dist.counts.values().sum::<u64>() != dist.sample_size {
        return Err("summary counts do not sum to sample size".into());
    }
    Ok((state, action, dist))
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\t', "\\t")
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('t') => out.push('\t'),
                Some('\\') => out.push('\\'),
                Some(other) => {
                    out.push('\\');
                    out.push(other);
                }
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

//! 6x6 grid-lake: frozen tiles, holes, and scored goal tiles, with an
//! optional perpendicular slip.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fmt_num, DriftMutation, EnvError, EnvKind, Environment, Snapshot, StepOutcome};
use crate::bank::{Action, BankConfig, FieldValue, RawState, StateKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tile {
    Frozen,
    Hole,
    Goal,
}

impl Tile {
    pub fn letter(self) -> &'static str {
        match self {
            Tile::Frozen => "F",
            Tile::Hole => "H",
            Tile::Goal => "G",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridLakeSpec {
    pub rows: usize,
    pub cols: usize,
    pub tiles: Vec<Vec<Tile>>,
    pub start: (usize, usize),
    pub golds: BTreeMap<(usize, usize), f64>,
    /// Probability that an intended move is replaced by a uniformly random
    /// perpendicular move.
    pub slip: f64,
}

impl GridLakeSpec {
    /// Parse an ASCII grid: rows of S/F/H/G characters, then `gold r,c v`
    /// lines assigning a value to each goal tile.
    pub fn parse(text: &str) -> Result<Self, EnvError> {
        let mut tiles: Vec<Vec<Tile>> = Vec::new();
        let mut start = None;
        let mut golds = BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("gold ") {
                let mut it = rest.split_whitespace();
                let pos = it
                    .next()
                    .ok_or_else(|| EnvError::BadSpec("gold line missing position".into()))?;
                let value: f64 = it
                    .next()
                    .ok_or_else(|| EnvError::BadSpec("gold line missing value".into()))?
                    .parse()
                    .map_err(|e| EnvError::BadSpec(format!("bad gold value: {e}")))?;
                let (r, c) = pos
                    .split_once(',')
                    .ok_or_else(|| EnvError::BadSpec("gold position must be r,c".into()))?;
                let r: usize = r.parse().map_err(|e| EnvError::BadSpec(format!("{e}")))?;
                let c: usize = c.parse().map_err(|e| EnvError::BadSpec(format!("{e}")))?;
                if value <= 0.0 {
                    return Err(EnvError::BadSpec("gold values must be positive".into()));
                }
                golds.insert((r, c), value);
                continue;
            }
            let row: Vec<Tile> = line
                .chars()
                .map(|ch| match ch {
                    'F' => Ok(Tile::Frozen),
                    'H' => Ok(Tile::Hole),
                    'G' => Ok(Tile::Goal),
                    'S' => {
                        start = Some((tiles.len(), row_len(line, ch)));
                        Ok(Tile::Frozen)
                    }
                    other => Err(EnvError::BadSpec(format!("bad tile char `{other}`"))),
                })
                .collect::<Result<_, _>>()?;
            tiles.push(row);
        }
        let rows = tiles.len();
        let cols = tiles.first().map(Vec::len).unwrap_or(0);
        if rows == 0 || tiles.iter().any(|r| r.len() != cols) {
            return Err(EnvError::BadSpec("grid must be rectangular".into()));
        }
        let start = start.ok_or_else(|| EnvError::BadSpec("grid needs an S start tile".into()))?;
        for (r, row) in tiles.iter().enumerate() {
            for (c, t) in row.iter().enumerate() {
                if *t == Tile::Goal && !golds.contains_key(&(r, c)) {
                    return Err(EnvError::BadSpec(format!(
                        "goal tile ({r},{c}) has no gold value"
                    )));
                }
            }
        }
        Ok(GridLakeSpec {
            rows,
            cols,
            tiles,
            start,
            golds,
            slip: 0.0,
        })
    }

    pub fn with_slip(mut self, slip: f64) -> Self {
        self.slip = slip;
        self
    }

    fn tile(&self, pos: (usize, usize)) -> Tile {
        self.tiles[pos.0][pos.1]
    }

    /// Goal positions in row-major order.
    pub fn goal_positions(&self) -> Vec<(usize, usize)> {
        self.golds.keys().copied().collect()
    }
}

fn row_len(line: &str, ch: char) -> usize {
    line.chars().position(|c| c == ch).unwrap_or(0)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct EpisodeState {
    pos: (usize, usize),
    gold_collected: f64,
    done: bool,
}

pub struct GridLake {
    spec: GridLakeSpec,
    state: EpisodeState,
    rng: ChaCha8Rng,
}

/// Actions: 0 left, 1 down, 2 right, 3 up.
const DELTAS: [(i64, i64); 4] = [(0, -1), (1, 0), (0, 1), (-1, 0)];

impl GridLake {
    pub fn new(spec: GridLakeSpec) -> Self {
        let state = EpisodeState {
            pos: spec.start,
            gold_collected: 0.0,
            done: false,
        };
        GridLake {
            spec,
            state,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn spec(&self) -> &GridLakeSpec {
        &self.spec
    }

    fn moved(&self, action: Action) -> (usize, usize) {
        let (dr, dc) = DELTAS[action as usize];
        let r = self.state.pos.0 as i64 + dr;
        let c = self.state.pos.1 as i64 + dc;
        if r < 0 || c < 0 || r >= self.spec.rows as i64 || c >= self.spec.cols as i64 {
            self.state.pos
        } else {
            (r as usize, c as usize)
        }
    }
}

impl Environment for GridLake {
    fn reset(&mut self, seed: u64, episode: u64) -> RawState {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.rng.set_stream(episode);
        self.state = EpisodeState {
            pos: self.spec.start,
            gold_collected: 0.0,
            done: false,
        };
        self.form_state()
    }

    fn step(&mut self, action: Action) -> Result<StepOutcome, EnvError> {
        if self.state.done {
            return Err(EnvError::EpisodeDone);
        }
        if action > 3 {
            return Err(EnvError::InvalidAction {
                action,
                valid: vec![0, 1, 2, 3],
            });
        }
        let effective = if self.spec.slip > 0.0 && self.rng.random::<f64>() < self.spec.slip {
            // Perpendicular slip: left/right become up/down and vice versa.
            let perpendicular = match action {
                0 | 2 => [1u32, 3],
                _ => [0u32, 2],
            };
            perpendicular[self.rng.random_range(0..2)]
        } else {
            action
        };
        self.state.pos = self.moved(effective);
        let mut score = 0.0;
        match self.spec.tile(self.state.pos) {
            Tile::Frozen => {}
            Tile::Hole => {
                self.state.done = true;
            }
            Tile::Goal => {
                let gold = self.spec.golds[&self.state.pos];
                self.state.gold_collected = gold;
                score = gold;
                self.state.done = true;
            }
        }
        Ok(StepOutcome {
            state: self.form_state(),
            score,
            done: self.state.done,
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
        vec![0, 1, 2, 3]
    }

    fn is_deterministic(&self) -> bool {
        self.spec.slip == 0.0
    }

    fn apply_drift(&mut self, mutation: &DriftMutation) -> Result<(), EnvError> {
        match mutation {
            DriftMutation::MapSwap { spec } => {
                let slip = self.spec.slip;
                self.spec = spec.clone().with_slip(slip);
                Ok(())
            }
            DriftMutation::GoldSwap => {
                let positions = self.spec.goal_positions();
                if positions.len() < 2 {
                    return Err(EnvError::BadMutation(
                        "gold_swap needs at least two goal tiles".into(),
                    ));
                }
                let values: Vec<f64> = positions.iter().map(|p| self.spec.golds[p]).collect();
                for (i, pos) in positions.iter().enumerate() {
                    self.spec
                        .golds
                        .insert(*pos, values[(i + 1) % values.len()]);
                }
                Ok(())
            }
            other => Err(EnvError::BadMutation(format!(
                "{} does not apply to gridlake",
                other.kind_name()
            ))),
        }
    }

    fn form_state(&self) -> RawState {
        RawState {
            fields: vec![
                (
                    "pos".into(),
                    FieldValue::Text(format!("{},{}", self.state.pos.0, self.state.pos.1)),
                ),
                (
                    "tile".into(),
                    FieldValue::Text(self.spec.tile(self.state.pos).letter().into()),
                ),
                (
                    "gold".into(),
                    FieldValue::Text(fmt_num(self.state.gold_collected)),
                ),
            ],
        }
    }

    fn terminal_value(&self, key: &StateKey, _bank_cfg: &BankConfig) -> Option<f64> {
        match key.field("tile")? {
            "H" => Some(0.0),
            "G" => key.field("gold")?.parse().ok(),
            _ => None,
        }
    }

    fn kind(&self) -> EnvKind {
        EnvKind::GridLake
    }
}

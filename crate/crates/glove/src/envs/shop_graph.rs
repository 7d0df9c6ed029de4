//! Shop navigation graph: Search -> Results -> Product -> (buy) -> AdPage
//! -> Done. Purchases are scored against an instruction whose semantic
//! attribute binding can drift without changing any page text.

use serde::{Deserialize, Serialize};

use super::{fmt_num, DriftMutation, EnvError, EnvKind, Environment, Snapshot, StepOutcome};
use crate::bank::{Action, BankConfig, FieldValue, RawState, StateKey};

#[derive(Debug, Clone, PartialEq)]
pub struct ShopItem {
    pub id: String,
    pub color: String,
    pub category: String,
    pub price: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShopGraphSpec {
    pub catalog: Vec<ShopItem>,
    pub instruction: String,
    /// Attribute word in the instruction, e.g. "warm".
    pub attribute: String,
    /// Category word in the instruction, e.g. "pants".
    pub category: String,
    /// Current binding of the semantic attribute to a color option.
    pub attribute_option: String,
    pub ad_buttons: Vec<String>,
    pub correct_button: usize,
}

impl Default for ShopGraphSpec {
    fn default() -> Self {
        let item = |id: &str, color: &str, category: &str, price| ShopItem {
            id: id.into(),
            color: color.into(),
            category: category.into(),
            price,
        };
        ShopGraphSpec {
            catalog: vec![
                item("A1", "Yellow", "pants", 14),
                item("B2", "Red", "pants", 15),
                item("C3", "Blue", "socks", 6),
            ],
            instruction: "buy warm color pants".into(),
            attribute: "warm".into(),
            category: "pants".into(),
            attribute_option: "Yellow".into(),
            ad_buttons: vec![
                "Continue".into(),
                "Subscribe".into(),
                "Close".into(),
                "Special Offer".into(),
            ],
            correct_button: 2,
        }
    }
}

impl ShopGraphSpec {
    fn validate(&self) -> Result<(), EnvError> {
        if self.correct_button >= self.ad_buttons.len() {
            return Err(EnvError::BadSpec("correct button out of range".into()));
        }
        let full_matches = self
            .catalog
            .iter()
            .filter(|i| i.category == self.category && i.color == self.attribute_option)
            .count();
        if full_matches != 1 {
            return Err(EnvError::BadSpec(format!(
                "exactly one catalog item must fully match, found {full_matches}"
            )));
        }
        Ok(())
    }

    fn score(&self, item: &ShopItem) -> f64 {
        if item.category != self.category {
            0.0
        } else if item.color == self.attribute_option {
            100.0
        } else {
            75.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[allow(clippy::enum_variant_names)] // AdPage *is* a page named "ad page"
enum Page {
    Search,
    Results,
    Product(usize),
    /// Ad interstitial holding the pending purchase.
    AdPage(usize),
    Done,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EpisodeState {
    page: Page,
    score: f64,
    done: bool,
}

pub struct ShopGraph {
    spec: ShopGraphSpec,
    state: EpisodeState,
}

impl ShopGraph {
    pub fn new(spec: ShopGraphSpec) -> Result<Self, EnvError> {
        spec.validate()?;
        Ok(ShopGraph {
            spec,
            state: EpisodeState {
                page: Page::Search,
                score: 0.0,
                done: false,
            },
        })
    }

    pub fn spec(&self) -> &ShopGraphSpec {
        &self.spec
    }

    fn page_text(&self) -> String {
        match &self.state.page {
            Page::Search => format!("Instruction: {}", self.spec.instruction),
            Page::Results => {
                let mut text = format!("Total results: {}", self.spec.catalog.len());
                for item in &self.spec.catalog {
                    text.push_str(&format!("; {} ${}", item.id, item.price));
                }
                text
            }
            Page::Product(i) => {
                let item = &self.spec.catalog[*i];
                format!(
                    "{}; {} {}; ${}",
                    item.id, item.color, item.category, item.price
                )
            }
            Page::AdPage(_) => {
                format!("Sponsored page; buttons: {}", self.spec.ad_buttons.join(", "))
            }
            Page::Done => "Order confirmed".into(),
        }
    }

    fn loc(&self) -> String {
        match &self.state.page {
            Page::Search => "search".into(),
            Page::Results => "results".into(),
            Page::Product(i) => format!("product/{}", self.spec.catalog[*i].id),
            Page::AdPage(i) => format!("ad/{}", self.spec.catalog[*i].id),
            Page::Done => "done".into(),
        }
    }

    fn page_kind(&self) -> &'static str {
        match &self.state.page {
            Page::Search => "search",
            Page::Results => "results",
            Page::Product(_) => "product",
            Page::AdPage(_) => "ad",
            Page::Done => "done",
        }
    }
}

impl Environment for ShopGraph {
    fn reset(&mut self, _seed: u64, _episode: u64) -> RawState {
        self.state = EpisodeState {
            page: Page::Search,
            score: 0.0,
            done: false,
        };
        self.form_state()
    }

    fn step(&mut self, action: Action) -> Result<StepOutcome, EnvError> {
        if self.state.done {
            return Err(EnvError::EpisodeDone);
        }
        let valid = self.action_space();
        if !valid.contains(&action) {
            return Err(EnvError::InvalidAction { action, valid });
        }
        let mut score = 0.0;
        match self.state.page.clone() {
            Page::Search => self.state.page = Page::Results,
            Page::Results => self.state.page = Page::Product(action as usize),
            Page::Product(i) => {
                self.state.page = match action {
                    // Buy now: route through the ad interstitial.
                    0 => Page::AdPage(i),
                    _ => Page::Results,
                };
            }
            Page::AdPage(i) => {
                if action as usize == self.spec.correct_button {
                    score = self.spec.score(&self.spec.catalog[i]);
                    self.state.score = score;
                    self.state.page = Page::Done;
                    self.state.done = true;
                }
                // Wrong buttons loop on the ad page, costing a step.
            }
            Page::Done => unreachable!(),
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
        match &self.state.page {
            Page::Search => vec![0],
            Page::Results => (0..self.spec.catalog.len() as Action).collect(),
            Page::Product(_) => vec![0, 1],
            Page::AdPage(_) => (0..self.spec.ad_buttons.len() as Action).collect(),
            Page::Done => vec![],
        }
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn apply_drift(&mut self, mutation: &DriftMutation) -> Result<(), EnvError> {
        match mutation {
            DriftMutation::ButtonRemap { button } => {
                if *button >= self.spec.ad_buttons.len() {
                    return Err(EnvError::BadMutation("button index out of range".into()));
                }
                self.spec.correct_button = *button;
                Ok(())
            }
            DriftMutation::AttributeRemap { attribute, option } => {
                if *attribute != self.spec.attribute {
                    return Err(EnvError::BadMutation(format!(
                        "unknown attribute `{attribute}`"
                    )));
                }
                if !self.spec.catalog.iter().any(|i| i.color == *option) {
                    return Err(EnvError::BadMutation(format!(
                        "no catalog item has color `{option}`"
                    )));
                }
                self.spec.attribute_option = option.clone();
                self.spec.validate()
            }
            other => Err(EnvError::BadMutation(format!(
                "{} does not apply to shop_graph",
                other.kind_name()
            ))),
        }
    }

    fn form_state(&self) -> RawState {
        RawState {
            fields: vec![
                ("page".into(), FieldValue::Text(self.page_kind().into())),
                ("text".into(), FieldValue::Text(self.page_text())),
                ("loc".into(), FieldValue::Text(self.loc())),
                ("score".into(), FieldValue::Text(fmt_num(self.state.score))),
            ],
        }
    }

    fn terminal_value(&self, key: &StateKey, _bank_cfg: &BankConfig) -> Option<f64> {
        if key.field("page")? == "done" {
            key.field("score")?.parse().ok()
        } else {
            None
        }
    }

    fn kind(&self) -> EnvKind {
        EnvKind::ShopGraph
    }
}

//! Regenerates the committed experience-bank fixtures by driving the real
//! environments with scripted action sequences:
//!
//! ```text
//! cargo run -p glove --example gen_fixtures
//! ```
//!
//! `fixtures/case_study.bank` holds two grid-lake trajectories over the
//! source map (one per gold tile); `fixtures/shop.bank` holds one purchase
//! path per pants product. Both banks are what a planner agent would have
//! recorded, so runs seeded with them start from informed memory.

use std::path::Path;

use glove::bank::{canonical_key, BankConfig, ExperienceBank, ExperienceRecord, Metadata};
use glove::envs::{Environment, GridLake, GridLakeSpec, ShopGraph, ShopGraphSpec};

/// Replay scripted episodes and record every transition, mirroring how the
/// harness builds records during live play.
fn record_episodes<E: Environment>(
    env: &mut E,
    bank: &mut ExperienceBank,
    cfg: &BankConfig,
    seed: u64,
    episodes: &[&[u32]],
) {
    for (episode, actions) in episodes.iter().enumerate() {
        let episode = episode as u64;
        let mut raw = env.reset(seed, episode);
        let mut trajectory = Vec::new();
        for (step, &action) in actions.iter().enumerate() {
            let cur = canonical_key(&raw, cfg).expect("scripted state must form a key");
            let out = env.step(action).expect("scripted action must be valid");
            let outcome = canonical_key(&out.state, cfg).expect("outcome key");
            bank.insert(ExperienceRecord {
                state: cur.clone(),
                action,
                outcome,
                reward: Some(out.score),
                meta: Metadata {
                    recorded_at: (episode, step as u32),
                    trajectory: trajectory.clone(),
                    exec_count: 1,
                },
            });
            trajectory.push((cur, action));
            raw = out.state;
            if out.done {
                assert_eq!(step + 1, actions.len(), "script ended the episode early");
            }
        }
    }
}

fn gen_case_study(fixtures: &Path) {
    let map = std::fs::read_to_string(fixtures.join("gridlake_source.map")).unwrap();
    let spec = GridLakeSpec::parse(&map).unwrap();
    let mut env = GridLake::new(spec);
    let cfg = BankConfig::default();
    let mut bank = ExperienceBank::new();
    // Shared prefix to (3,2), then right to the 0.5 gold at (3,5) and, in a
    // second episode, down to the 1.0 gold at (5,5).
    let path_a: &[u32] = &[1, 1, 2, 1, 2, 2, 2, 2];
    let path_b: &[u32] = &[1, 1, 2, 1, 2, 1, 1, 2, 2, 2];
    record_episodes(&mut env, &mut bank, &cfg, 0, &[path_a, path_b]);
    bank.save(&fixtures.join("case_study.bank")).unwrap();
    println!("wrote case_study.bank ({} records)", bank.len());
}

fn gen_shop(fixtures: &Path) {
    let mut env = ShopGraph::new(ShopGraphSpec::default()).unwrap();
    let cfg = BankConfig::default();
    let mut bank = ExperienceBank::new();
    // Buy product 0 (full attribute match) and product 1 (category match).
    let buy_a: &[u32] = &[0, 0, 0, 2];
    let buy_b: &[u32] = &[0, 1, 0, 2];
    record_episodes(&mut env, &mut bank, &cfg, 0, &[buy_a, buy_b]);
    bank.save(&fixtures.join("shop.bank")).unwrap();
    println!("wrote shop.bank ({} records)", bank.len());
}

fn main() {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .canonicalize()
        .expect("fixtures directory");
    gen_case_study(&fixtures);
    gen_shop(&fixtures);
}

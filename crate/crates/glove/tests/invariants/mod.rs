//! Shared randomized invariant checks, parameterized by case count so the
//! acceptance gate can re-run a light pass of the same properties.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use glove::agents::{planner_decide, ExploreMode, PathValueAnnotation};
use glove::bank::{
    canonical_key, Action, BankConfig, ExperienceBank, ExperienceRecord, KeyKind, Metadata,
    Origin, OutcomeDistribution, StateKey,
};
use glove::config::load_config;
use glove::envs::{Environment, GridLake, GridLakeSpec, MountainCar, MountainCarSpec};
use glove::harness::{aggregate, run_experiment};
use glove::report::{events_jsonl, summary_csv};

fn check<T: core::fmt::Debug>(
    cases: u32,
    strategy: impl Strategy<Value = T>,
    test: impl Fn(T),
) {
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&strategy, |v| {
            test(v);
            Ok(())
        })
        .unwrap();
}

fn key(i: u8) -> StateKey {
    StateKey::new(KeyKind::Discrete, format!("x={i}"))
}

type RecTuple = (u8, u32, u8, Option<i8>, u64, u32, u8);

fn arb_record() -> impl Strategy<Value = RecTuple> {
    (
        0u8..5,
        0u32..4,
        0u8..5,
        proptest::option::of(-10i8..10),
        0u64..50,
        0u32..20,
        1u8..4,
    )
}

fn build_record((s, a, o, r, ep, st, n): RecTuple) -> ExperienceRecord {
    ExperienceRecord {
        state: key(s),
        action: a,
        outcome: key(o),
        reward: r.map(|v| v as f64 / 4.0),
        meta: Metadata {
            recorded_at: (ep, st),
            trajectory: if st > 0 { vec![(key(s ^ 1), a)] } else { vec![] },
            exec_count: n as u64,
        },
    }
}

fn repo_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

/// Save/parse is the identity on banks, including tombstones and summaries.
pub fn bank_round_trip(cases: u32) {
    check(
        cases,
        (
            proptest::collection::vec(arb_record(), 1..20),
            0u8..5,
            0u32..4,
        ),
        |(recs, rs, ra)| {
            let mut bank = ExperienceBank::new();
            for r in recs {
                bank.insert(build_record(r));
            }
            let truth = OutcomeDistribution::from_counts(
                BTreeMap::from([(key(1), 3), (key(2), 1)]),
                (60, 0),
                Origin::Verified,
            );
            bank.realign(&key(rs), ra, truth).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("bank");
            bank.save(&path).unwrap();
            assert_eq!(ExperienceBank::load(&path).unwrap(), bank);
        },
    );
}

/// After realignment the belief is exactly the verified truth: no stale
/// record leaks back in, and the displaced entries are tombstoned.
pub fn realignment_exclusivity(cases: u32) {
    check(
        cases,
        (
            proptest::collection::vec(arb_record(), 1..20),
            0u8..5,
            0u32..4,
        ),
        |(recs, rs, ra)| {
            let mut bank = ExperienceBank::new();
            for r in recs {
                bank.insert(build_record(r));
            }
            let displaced = bank.counterparts(&key(rs), ra).len();
            let truth = OutcomeDistribution::from_counts(
                BTreeMap::from([(key(4), 7)]),
                (99, 0),
                Origin::Verified,
            );
            bank.realign(&key(rs), ra, truth.clone()).unwrap();
            assert!(bank.counterparts(&key(rs), ra).is_empty());
            assert!(bank.tombstones().len() >= displaced);
            let belief = bank.belief(&key(rs), ra).unwrap();
            assert_eq!(belief.counts, truth.counts);
            assert_eq!(belief.origin, Origin::Verified);
        },
    );
}

/// Probability mass is exact rational count/n and sums to one.
pub fn mass_conservation(cases: u32) {
    check(
        cases,
        proptest::collection::btree_map(0u8..8, 1u64..100, 1..6),
        |counts| {
            let counts: BTreeMap<StateKey, u64> =
                counts.into_iter().map(|(k, v)| (key(k), v)).collect();
            let total: u64 = counts.values().sum();
            let dist = OutcomeDistribution::from_counts(counts.clone(), (0, 0), Origin::Historical);
            assert_eq!(dist.sample_size, total);
            let mut sum = 0.0;
            for (k, c) in &counts {
                assert_eq!(dist.mass(k), *c as f64 / total as f64);
                sum += dist.mass(k);
            }
            assert!((sum - 1.0).abs() < 1e-9);
        },
    );
}

/// Positive rescaling of path values never changes the planner's choice.
/// Scores come from a coarse grid so rescaling cannot create new ties.
pub fn argmax_scale_invariance(cases: u32) {
    let arb_ann = (0u32..6, 0u32..20, 1u32..10).prop_map(|(a, v, d)| (a, v as f64 * 0.05, d));
    check(
        cases,
        (
            proptest::collection::vec(arb_ann, 1..6),
            proptest::sample::select(vec![0.1f64, 1.0, 10.0, 1000.0]),
            0u64..10,
            0u64..10,
        ),
        |(anns, c, episode, step)| {
            let mut seen = std::collections::BTreeSet::new();
            let anns: Vec<(u32, f64, u32)> = anns
                .into_iter()
                .filter(|(a, _, _)| seen.insert(*a))
                .collect();
            let build = |scale: f64| -> Vec<PathValueAnnotation> {
                anns.iter()
                    .map(|&(a, v, d)| PathValueAnnotation {
                        state: key(0),
                        action: a,
                        result: key(1),
                        max_path_score: v * scale,
                        steps_to_score: d,
                        dead_end: false,
                    })
                    .collect()
            };
            let space: Vec<Action> = (0..6).collect();
            let explored: Vec<Action> = anns.iter().map(|(a, _, _)| *a).collect();
            for mode in [ExploreMode::Systematic, ExploreMode::Seeded { seed: 3 }] {
                assert_eq!(
                    planner_decide(&build(1.0), &space, &explored, &mode, episode, step),
                    planner_decide(&build(c), &space, &explored, &mode, episode, step),
                );
            }
        },
    );
}

/// Position and velocity never escape their bounds and the left wall zeroes
/// negative velocity.
pub fn mountain_car_clamps(cases: u32) {
    check(
        cases,
        (
            -120i32..=60,
            -70i32..=70,
            proptest::collection::vec(0u32..3, 1..50),
            any::<u64>(),
        ),
        |(p, v, actions, seed)| {
            let mut env = MountainCar::new(MountainCarSpec::default());
            env.reset(seed, 0);
            env.set_state(p as f64 / 100.0, v as f64 / 1000.0);
            for a in actions {
                let out = match env.step(a) {
                    Ok(out) => out,
                    Err(_) => break, // episode finished
                };
                assert!((-1.2..=0.6).contains(&env.position()));
                assert!(env.velocity().abs() <= 0.07 + 1e-12);
                if env.position() <= -1.2 {
                    assert!(env.velocity() >= 0.0);
                }
                if out.done {
                    break;
                }
            }
        },
    );
}

/// Restoring a snapshot puts the episode back in the exact formed state.
pub fn snapshot_soundness(cases: u32) {
    let map = std::fs::read_to_string(repo_path("fixtures/gridlake_source.map")).unwrap();
    check(
        cases,
        (
            0u32..50,
            any::<u64>(),
            proptest::collection::vec(0u32..4, 0..12),
            proptest::collection::vec(0u32..4, 1..12),
        ),
        |(slip_pct, seed, before, after)| {
            let spec = GridLakeSpec::parse(&map)
                .unwrap()
                .with_slip(slip_pct as f64 / 100.0);
            let mut env = GridLake::new(spec);
            let cfg = BankConfig::default();
            env.reset(seed, 0);
            for a in before {
                if env.step(a).is_err() {
                    break;
                }
            }
            let snap = env.snapshot().unwrap();
            let at_snap = canonical_key(&env.form_state(), &cfg).unwrap();
            for a in after {
                if env.step(a).is_err() {
                    break;
                }
            }
            env.restore(&snap).unwrap();
            assert_eq!(canonical_key(&env.form_state(), &cfg).unwrap(), at_snap);
        },
    );
}

fn write_run_dir(dir: &Path, seeds: &[u64]) -> PathBuf {
    std::fs::copy(
        repo_path("fixtures/gridlake_source.map"),
        dir.join("source.map"),
    )
    .unwrap();
    let seeds = seeds
        .iter()
        .map(u64::to_string)
        .collect::<Vec<_>>()
        .join(", ");
    let cfg = format!(
        r#"
[run]
seeds = [{seeds}]
rounds = 3
method = "glove"

[env]
kind = "gridlake"
map = "source.map"

[[phase]]
name = "source"
episodes = 4

[[phase]]
name = "drift"
episodes = 4
drift = {{ kind = "gold_swap" }}

[agent]
explore = "seeded"

[glove]
enabled = true

[detect]
deterministic = true

[verify]
deterministic = true
"#
    );
    let path = dir.join("run.toml");
    std::fs::File::create(&path)
        .unwrap()
        .write_all(cfg.as_bytes())
        .unwrap();
    path
}

/// Identical configs produce byte-identical report payloads.
pub fn report_determinism(cases: u32) {
    check(
        cases,
        proptest::collection::btree_set(0u64..1000, 1..4),
        |seeds| {
            let seeds: Vec<u64> = seeds.into_iter().collect();
            let dir = tempfile::tempdir().unwrap();
            let cfg_path = write_run_dir(dir.path(), &seeds);
            let cfg = load_config(&cfg_path, &[]).unwrap();
            let render = || {
                let run = run_experiment(&cfg).unwrap();
                let agg = aggregate(std::slice::from_ref(&run)).unwrap();
                (summary_csv(&agg), events_jsonl(std::slice::from_ref(&run)).unwrap())
            };
            assert_eq!(render(), render());
        },
    );
}

//! Monte Carlo validators for the two concentration bounds used by
//! detection and verification: per-outcome Hoeffding deviation and L1
//! concentration of the empirical distribution.
//!
//! Sampling uses ChaCha8 with the trial index as the stream, so per-trial
//! draws derive deterministically from (base seed, trial index) and trials
//! can be split across workers without changing results.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::detect::hoeffding_epsilon;

/// A synthetic categorical response distribution used as ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticResponse {
    pub support: Vec<(String, f64)>,
    pub seed: u64,
}

impl SyntheticResponse {
    pub fn new(support: Vec<(String, f64)>, seed: u64) -> Self {
        let total: f64 = support.iter().map(|(_, p)| p).sum();
        assert!(
            (total - 1.0).abs() < 1e-12,
            "probabilities must sum to 1, got {total}"
        );
        assert!(support.iter().all(|(_, p)| *p > 0.0));
        SyntheticResponse { support, seed }
    }

    fn rng(&self, trial: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(trial);
        rng
    }

    fn draw_counts(&self, n: u64, rng: &mut ChaCha8Rng) -> Vec<u64> {
        let mut counts = vec![0u64; self.support.len()];
        for _ in 0..n {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut idx = self.support.len() - 1;
            for (i, (_, p)) in self.support.iter().enumerate() {
                acc += p;
                if u < acc {
                    idx = i;
                    break;
                }
            }
            counts[idx] += 1;
        }
        counts
    }
}

/// n i.i.d. draws, reproducible given the seed.
pub fn sample(resp: &SyntheticResponse, n: u64) -> Vec<String> {
    assert!(n >= 1);
    let mut rng = resp.rng(0);
    let mut out = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut label = &resp.support[resp.support.len() - 1].0;
        for (l, p) in &resp.support {
            acc += p;
            if u < acc {
                label = l;
                break;
            }
        }
        out.push(label.clone());
    }
    out
}

/// L1 distance between two probability vectors.
pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

#[derive(Debug, Clone, Serialize)]
pub struct FalseAlarmReport {
    pub n: u64,
    pub delta: f64,
    pub trials: u64,
    pub threshold: f64,
    /// Per-support-outcome fraction of trials whose empirical mass deviated
    /// from the true mass by more than the threshold.
    pub per_outcome_rate: Vec<(String, f64)>,
}

impl FalseAlarmReport {
    pub fn max_rate(&self) -> f64 {
        self.per_outcome_rate
            .iter()
            .map(|(_, r)| *r)
            .fold(0.0, f64::max)
    }
}

/// Fraction of trials, per outcome, where |Q_hat(s') - Q(s')| exceeds the
/// deviation threshold at confidence delta after n samples.
pub fn mc_false_alarm_rate(
    resp: &SyntheticResponse,
    n: u64,
    delta: f64,
    trials: u64,
) -> FalseAlarmReport {
    assert!(trials >= 1_000, "need at least 1000 trials");
    let threshold = hoeffding_epsilon(n, delta).expect("valid n, delta");
    let mut exceed = vec![0u64; resp.support.len()];
    for trial in 0..trials {
        let mut rng = resp.rng(trial);
        let counts = resp.draw_counts(n, &mut rng);
        for (i, (_, p)) in resp.support.iter().enumerate() {
            let emp = counts[i] as f64 / n as f64;
            if (emp - p).abs() > threshold {
                exceed[i] += 1;
            }
        }
    }
    FalseAlarmReport {
        n,
        delta,
        trials,
        threshold,
        per_outcome_rate: resp
            .support
            .iter()
            .zip(&exceed)
            .map(|((l, _), e)| (l.clone(), *e as f64 / trials as f64))
            .collect(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct L1CoverageReport {
    pub alpha: u64,
    pub epsilon: f64,
    pub trials: u64,
    /// Fraction of trials with ||Q_hat - Q||_1 > epsilon.
    pub failure_rate: f64,
}

/// Fraction of trials where the empirical distribution after alpha samples
/// misses the truth by more than epsilon in L1.
pub fn mc_l1_coverage(
    resp: &SyntheticResponse,
    alpha: u64,
    epsilon: f64,
    trials: u64,
) -> L1CoverageReport {
    assert!(trials >= 1_000, "need at least 1000 trials");
    let truth: Vec<f64> = resp.support.iter().map(|(_, p)| *p).collect();
    let mut failures = 0u64;
    for trial in 0..trials {
        let mut rng = resp.rng(trial);
        let counts = resp.draw_counts(alpha, &mut rng);
        let emp: Vec<f64> = counts.iter().map(|c| *c as f64 / alpha as f64).collect();
        if l1_distance(&emp, &truth) > epsilon {
            failures += 1;
        }
    }
    L1CoverageReport {
        alpha,
        epsilon,
        trials,
        failure_rate: failures as f64 / trials as f64,
    }
}

//! Top-N ranking evaluation under the sampled-negative protocol.
//!
//! Every held-out event ranks its true POI against 100 seeded negatives
//! the user never interacted with; hit ratio and NDCG are averaged per
//! cutoff. Trivial popularity and random baselines are included for
//! behavioural comparisons.

use std::collections::BTreeMap;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{CheckInLog, InteractionSet};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::sampling::{mix64, mix_seed_str, mix_seed_u64};

/// Anything that can score a batch of candidate POIs for a user.
pub trait Scorer {
    fn score_candidates(&self, user: &str, candidates: &[&str]) -> Result<Vec<f64>>;
}

impl Scorer for Model {
    fn score_candidates(&self, user: &str, candidates: &[&str]) -> Result<Vec<f64>> {
        Model::score_candidates(self, user, candidates)
    }
}

/// Scores each POI by its training check-in count.
pub struct PopularityScorer {
    counts: BTreeMap<String, usize>,
}

impl PopularityScorer {
    pub fn from_train_log(train: &CheckInLog) -> Self {
        let mut counts = BTreeMap::new();
        for rec in train.records() {
            *counts.entry(rec.poi.clone()).or_insert(0) += 1;
        }
        Self { counts }
    }
}

impl Scorer for PopularityScorer {
    fn score_candidates(&self, _user: &str, candidates: &[&str]) -> Result<Vec<f64>> {
        Ok(candidates
            .iter()
            .map(|poi| self.counts.get(*poi).copied().unwrap_or(0) as f64)
            .collect())
    }
}

/// Scores each (user, POI) pair by a seeded hash: a calibrated random
/// ranker.
pub struct RandomScorer {
    pub seed: u64,
}

impl Scorer for RandomScorer {
    fn score_candidates(&self, user: &str, candidates: &[&str]) -> Result<Vec<f64>> {
        let user_seed = mix_seed_str(self.seed, user);
        Ok(candidates
            .iter()
            .map(|poi| {
                let h = mix64(mix_seed_str(user_seed, poi));
                h as f64 / u64::MAX as f64
            })
            .collect())
    }
}

/// 1-based rank of the test POI among itself and the negatives, scored
/// together and ordered by descending score. Ties are pessimistic: the
/// test item is placed after every tied negative.
pub fn rank_candidates(
    scorer: &dyn Scorer,
    user: &str,
    test_poi: &str,
    negatives: &[&str],
) -> Result<usize> {
    let mut candidates = Vec::with_capacity(negatives.len() + 1);
    candidates.push(test_poi);
    candidates.extend_from_slice(negatives);
    let scores = scorer.score_candidates(user, &candidates)?;
    let test_score = scores[0];
    let rank = 1 + scores[1..]
        .iter()
        .filter(|&&s| s >= test_score)
        .count();
    Ok(rank)
}

/// 1 when the rank is inside the cutoff, else 0.
pub fn hit_ratio(rank: usize, cutoff: usize) -> f64 {
    debug_assert!(rank >= 1 && cutoff >= 1);
    if rank <= cutoff {
        1.0
    } else {
        0.0
    }
}

/// Single-relevant-item NDCG: `1 / log2(rank + 1)` inside the cutoff,
/// else 0 (the ideal ranking has the item first, so the normaliser is 1).
pub fn ndcg(rank: usize, cutoff: usize) -> f64 {
    debug_assert!(rank >= 1 && cutoff >= 1);
    if rank <= cutoff {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

/// Evaluation protocol knobs.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub cutoffs: Vec<usize>,
    pub negatives_per_test: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            cutoffs: (1..=10).collect(),
            negatives_per_test: 100,
            seed: 42,
        }
    }
}

/// Mean HR and NDCG at one cutoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffMetrics {
    pub hr: f64,
    pub ndcg: f64,
}

/// Aggregated ranking metrics over a test log.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub per_cutoff: BTreeMap<usize, CutoffMetrics>,
    pub num_users_evaluated: usize,
    /// Events that were ranked.
    pub num_test_events: usize,
    /// Events skipped for lack of eligible negatives.
    pub num_events_skipped: usize,
    pub seed: u64,
    pub negatives_per_test: usize,
}

impl MetricsReport {
    pub fn hr(&self, cutoff: usize) -> Option<f64> {
        self.per_cutoff.get(&cutoff).map(|m| m.hr)
    }

    pub fn ndcg(&self, cutoff: usize) -> Option<f64> {
        self.per_cutoff.get(&cutoff).map(|m| m.ndcg)
    }

    /// Text table plus a machine-readable key-value block.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "cutoff\thr\tndcg")?;
        for (cutoff, m) in &self.per_cutoff {
            writeln!(w, "{cutoff}\t{:.6}\t{:.6}", m.hr, m.ndcg)?;
        }
        writeln!(w)?;
        writeln!(w, "[metrics]")?;
        writeln!(w, "num_users_evaluated = {}", self.num_users_evaluated)?;
        writeln!(w, "num_test_events = {}", self.num_test_events)?;
        writeln!(w, "num_events_skipped = {}", self.num_events_skipped)?;
        writeln!(w, "seed = {}", self.seed)?;
        writeln!(w, "negatives_per_test = {}", self.negatives_per_test)?;
        for (cutoff, m) in &self.per_cutoff {
            writeln!(w, "hr@{cutoff} = {:.6}", m.hr)?;
            writeln!(w, "ndcg@{cutoff} = {:.6}", m.ndcg)?;
        }
        Ok(())
    }
}

/// Rank every test event against seeded unvisited negatives and average
/// the metrics per cutoff.
///
/// "Unvisited" is judged against the full interaction set (train,
/// validation and test), so the sampled negatives are guaranteed never to
/// be relevant items. Events whose eligible pool is smaller than the
/// negative count are skipped and counted.
pub fn evaluate(
    scorer: &dyn Scorer,
    test: &CheckInLog,
    interactions: &InteractionSet,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::Protocol("test split is empty".to_string()));
    }
    if opts.cutoffs.is_empty() || opts.cutoffs.iter().any(|&c| c == 0) {
        return Err(Error::Protocol("cutoffs must be positive".to_string()));
    }

    let mut sums: BTreeMap<usize, (f64, f64)> =
        opts.cutoffs.iter().map(|&c| (c, (0.0, 0.0))).collect();
    let mut num_events = 0usize;
    let mut num_skipped = 0usize;
    let mut num_users = 0usize;

    let users: Vec<&str> = test.users().collect();
    for user in users {
        let eligible = interactions.unvisited(user);
        let events = test.user_records(user);
        if eligible.len() < opts.negatives_per_test {
            log::warn!(
                "skipping {} event(s) of user {user}: only {} eligible negatives",
                events.len(),
                eligible.len()
            );
            num_skipped += events.len();
            continue;
        }
        let mut user_counted = false;
        for (event_idx, record) in events.iter().enumerate() {
            let event_seed =
                mix_seed_u64(mix_seed_str(opts.seed, user), event_idx as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(event_seed);
            let chosen =
                rand::seq::index::sample(&mut rng, eligible.len(), opts.negatives_per_test);
            let negatives: Vec<&str> = chosen.iter().map(|i| eligible[i]).collect();
            let rank = rank_candidates(scorer, user, &record.poi, &negatives)?;
            for (&cutoff, (hr_sum, ndcg_sum)) in sums.iter_mut() {
                *hr_sum += hit_ratio(rank, cutoff);
                *ndcg_sum += ndcg(rank, cutoff);
            }
            num_events += 1;
            user_counted = true;
        }
        if user_counted {
            num_users += 1;
        }
    }

    let per_cutoff = sums
        .into_iter()
        .map(|(cutoff, (hr_sum, ndcg_sum))| {
            let denom = num_events.max(1) as f64;
            (
                cutoff,
                CutoffMetrics {
                    hr: hr_sum / denom,
                    ndcg: ndcg_sum / denom,
                },
            )
        })
        .collect();
    Ok(MetricsReport {
        per_cutoff,
        num_users_evaluated: num_users,
        num_test_events: num_events,
        num_events_skipped: num_skipped,
        seed: opts.seed,
        negatives_per_test: opts.negatives_per_test,
    })
}

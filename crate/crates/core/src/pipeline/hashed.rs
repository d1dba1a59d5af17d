//! Sampling over an equi-hash relaxation of an equi-join.
//!
//! Join values are replaced by their bucket under a seeded hash into `u`
//! buckets, so every index holds at most `u` entries per edge. The relaxed
//! join is a superset of the real one; drawing from it and dropping trees
//! whose original values disagree leaves a weighted sample of the real join.

use super::{draw_trees, streams, ResultTree, SampleSet, SampleStats};
use crate::error::{Error, Result};
use crate::ingest::{Scanner, TableWeights};
use crate::joinindex::{join_key, BucketHash, IndexSet, KeyMode};
use crate::model::{HashedOptions, ValidatedPlan};
use crate::multinomial::seeded_rng;

pub const DEFAULT_UNIVERSE: u64 = 1 << 16;
pub const DEFAULT_MAX_ROUNDS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct HashedJoinConfig {
    /// Number of buckets, rounded up to a power of two.
    pub universe: u64,
    /// Draws requested per missing sample; computed from table sizes if unset.
    pub oversample: Option<f64>,
    pub max_rounds: usize,
    /// Cap on draws requested in one round.
    pub memory_limit: Option<usize>,
}

impl Default for HashedJoinConfig {
    fn default() -> Self {
        Self {
            universe: DEFAULT_UNIVERSE,
            oversample: None,
            max_rounds: DEFAULT_MAX_ROUNDS,
            memory_limit: None,
        }
    }
}

impl From<&HashedOptions> for HashedJoinConfig {
    fn from(o: &HashedOptions) -> Self {
        let d = Self::default();
        Self {
            universe: o.universe.unwrap_or(d.universe),
            oversample: o.oversample,
            max_rounds: o.max_rounds.unwrap_or(d.max_rounds),
            memory_limit: o.memory_limit,
        }
    }
}

/// `max(1, 2 (m/u)^(k-1))` for `k` tables of at most `m` rows.
pub fn oversample_factor(m: f64, universe: f64, k: usize) -> f64 {
    (2.0 * (m / universe).powi(k.saturating_sub(1) as i32)).max(1.0)
}

fn check_plan(plan: &ValidatedPlan) -> Result<()> {
    if !plan.is_acyclic() || !plan.all_inner_equi() {
        return Err(Error::UnsupportedOperatorCombination(
            "the hashed sampler needs an acyclic plan of inner equi-joins".into(),
        ));
    }
    Ok(())
}

/// Every tree edge holds on the original values.
fn exact(plan: &ValidatedPlan, tree: &ResultTree) -> bool {
    plan.edges.iter().all(|e| {
        match (&tree.rows[e.parent], &tree.rows[e.child]) {
            (Some(p), Some(c)) => {
                let k = join_key(p, &e.parent_cols);
                k.is_some() && k == join_key(c, &e.child_cols)
            }
            _ => false,
        }
    })
}

fn hash_for(universe: u64, seed: u64, round: usize) -> BucketHash {
    BucketHash::new(universe, &mut seeded_rng(seed, streams::of(streams::HASH, round)))
}

/// Weighted sample via the equi-hash superset, purging superfluous trees.
pub fn hashed_join_sample(
    plan: &ValidatedPlan,
    scanner: &Scanner,
    n: usize,
    seed: u64,
    config: &HashedJoinConfig,
) -> Result<SampleSet> {
    check_plan(plan)?;
    let factor = match config.oversample {
        Some(f) => f.max(1.0),
        None => {
            let mut m = 0u64;
            for t in 0..plan.tables.len() {
                let mut rows = 0u64;
                for r in scanner.scan(t)? {
                    r?;
                    rows += 1;
                }
                m = m.max(rows);
            }
            oversample_factor(m as f64, config.universe.max(2).next_power_of_two() as f64, plan.tables.len())
        }
    };

    let mut stats = SampleStats::new("hashed", plan);
    let mut kept: Vec<ResultTree> = Vec::with_capacity(n);
    let (mut drawn, mut purged) = (0usize, 0usize);
    for round in 0..config.max_rounds {
        let need = n - kept.len();
        let mut want = (factor * need as f64).ceil() as usize;
        if let Some(limit) = config.memory_limit {
            want = want.min(limit.max(need));
        }
        let hash = hash_for(config.universe, seed, round);
        let mut indexes = IndexSet::build(plan, scanner, KeyMode::Hashed(hash))?;
        stats.peak_index_entries = stats.peak_index_entries.max(indexes.entries());
        let batch = draw_trees(plan, scanner, &mut indexes, want, seed, round)?;
        stats.total_weight = batch.total_weight;
        drawn += batch.trees.len();
        for tree in batch.trees {
            if exact(plan, &tree) {
                if kept.len() < n {
                    kept.push(tree);
                }
            } else {
                purged += 1;
            }
        }
        stats.rounds = round + 1;
        stats.purge_rate = Some(purged as f64 / drawn as f64);
        if kept.len() == n {
            stats.record_passes(plan, scanner);
            return Ok(SampleSet::new(plan, kept, seed, stats));
        }
    }
    Err(Error::RetryBudgetExceeded {
        rounds: config.max_rounds,
        collected: kept.len(),
        wanted: n,
    })
}

/// Unweighted sizes of the hashed and the exact join, `(hashed, exact)`.
/// Their difference is the number of superfluous results of `hash`.
pub fn superfluous_results(plan: &ValidatedPlan, scanner: &Scanner, hash: BucketHash) -> Result<(f64, f64)> {
    check_plan(plan)?;
    let mut unit = plan.clone();
    unit.weights = plan.tables.iter().map(|t| TableWeights::unit(t.name.clone())).collect();
    let sizes = |mode| -> Result<f64> {
        let idx = IndexSet::build(&unit, scanner, mode)?;
        let mut total = 0.0;
        for row in scanner.scan(unit.root)? {
            total += idx.subtree_weight(&unit, unit.root, &row?)?;
        }
        Ok(total)
    };
    Ok((sizes(KeyMode::Hashed(hash))?, sizes(KeyMode::Exact)?))
}

//! End-to-end samplers over a validated join plan.

mod cyclic;
mod economic;
mod hashed;
mod select;
mod simplify;
mod stream;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

use crate::error::Result;
use crate::ingest::{Row, Scanner};
use crate::model::{Comparison, TableId, TableRef, ValidatedPlan};

pub use cyclic::{cyclic_sample, CyclicConfig};
pub use economic::{fk_economic_sample, FK_MAX_ROUNDS, FK_OVERSAMPLE};
pub use hashed::{hashed_join_sample, oversample_factor, superfluous_results, HashedJoinConfig};
pub use select::{collect_statistics, select_method, PlanStatistics, Sampler};
pub use simplify::{simplify_join_graph, SimplifyOutcome, DEFAULT_SIMPLIFY_BUDGET};
pub use stream::{draw_trees, resolve_extensions, stream_sample, DrawBatch};

/// One sampled join row: a row (or the null row, `None`) per table.
///
/// Tables behind semi/anti edges are never filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTree {
    pub rows: Vec<Option<Arc<Row>>>,
}

impl ResultTree {
    pub fn new(tables: usize) -> Self {
        Self {
            rows: vec![None; tables],
        }
    }

    /// Row ordinals of the reachable tables; `None` marks a null row.
    pub fn key(&self, plan: &ValidatedPlan) -> Vec<Option<u64>> {
        plan.reachable_tables()
            .map(|t| self.rows[t].as_ref().map(|r| r.ordinal))
            .collect()
    }

    /// Product of the row weights of the reachable tables.
    pub fn weight(&self, plan: &ValidatedPlan) -> Result<f64> {
        let mut w = 1.0;
        for t in plan.reachable_tables() {
            w *= crate::ingest::eval_weight(self.rows[t].as_deref(), &plan.weights[t])?;
        }
        Ok(w)
    }

    /// Whether an equality or comparison between two cells holds. NULL never
    /// satisfies a condition.
    pub fn satisfies(&self, left: (TableId, usize), right: (TableId, usize), cmp: Comparison) -> bool {
        let cell = |(t, c): (TableId, usize)| self.rows[t].as_ref().and_then(|r| r.get(c));
        let (Some(a), Some(b)) = (cell(left), cell(right)) else {
            return false;
        };
        match cmp {
            Comparison::Eq => a == b,
            Comparison::Ne => a != b,
            _ => match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
                (Ok(x), Ok(y)) => cmp.holds(x, y),
                _ => false,
            },
        }
    }

    /// Every residual predicate of the plan holds.
    pub fn satisfies_residuals(&self, plan: &ValidatedPlan) -> bool {
        plan.residuals
            .iter()
            .all(|p| self.satisfies(p.left, p.right, p.cmp))
    }
}

/// Counters and rates reported by a sampler run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct SampleStats {
    pub method: String,
    /// Completed scans per table name.
    pub passes: BTreeMap<String, u64>,
    pub peak_index_entries: usize,
    /// Total weight of the (possibly relaxed) join the draws came from.
    pub total_weight: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acceptance_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub purge_rate: Option<f64>,
    pub rounds: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl SampleStats {
    pub(crate) fn new(method: &str, plan: &ValidatedPlan) -> Self {
        Self {
            method: method.to_string(),
            warnings: plan.warnings.clone(),
            ..Self::default()
        }
    }

    pub(crate) fn record_passes(&mut self, plan: &ValidatedPlan, scanner: &Scanner) {
        self.passes = plan
            .tables
            .iter()
            .zip(scanner.passes().snapshot())
            .map(|(t, p)| (t.name.clone(), p))
            .collect();
    }
}

/// `n` result trees in draw order plus run metadata.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub tables: Vec<TableRef>,
    /// Tables that appear in the output, in declaration order.
    pub reachable: Vec<TableId>,
    pub trees: Vec<ResultTree>,
    pub seed: u64,
    pub stats: SampleStats,
}

impl SampleSet {
    pub(crate) fn new(plan: &ValidatedPlan, trees: Vec<ResultTree>, seed: u64, stats: SampleStats) -> Self {
        Self {
            tables: plan.tables.clone(),
            reachable: plan.reachable_tables().collect(),
            trees,
            seed,
            stats,
        }
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    /// Per-tree ordinal keys over the reachable tables.
    pub fn keys(&self) -> Vec<Vec<Option<u64>>> {
        self.trees
            .iter()
            .map(|tr| {
                self.reachable
                    .iter()
                    .map(|&t| tr.rows[t].as_ref().map(|r| r.ordinal))
                    .collect()
            })
            .collect()
    }
}

/// RNG stream ids; rounds of a sampler are spaced apart.
pub(crate) mod streams {
    pub const RESERVOIR: u64 = 0;
    pub const EXTEND: u64 = 1;
    pub const HASH: u64 = 2;
    pub const ACCEPT: u64 = 3;
    pub const ROUND_STRIDE: u64 = 16;

    pub fn of(purpose: u64, round: usize) -> u64 {
        purpose + ROUND_STRIDE * round as u64
    }
}

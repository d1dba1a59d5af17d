//! Cyclic joins as a selection over an acyclic superset.

use super::{draw_trees, ResultTree, SampleSet, SampleStats};
use crate::error::{Error, Result};
use crate::ingest::Scanner;
use crate::joinindex::{IndexSet, KeyMode};
use crate::model::ValidatedPlan;

/// When to give up on a selection that almost never holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CyclicConfig {
    /// Rounds to run before the acceptance floor applies.
    pub min_rounds: usize,
    pub min_acceptance: f64,
    pub max_rounds: usize,
}

impl Default for CyclicConfig {
    fn default() -> Self {
        Self {
            min_rounds: 10,
            min_acceptance: 1e-4,
            max_rounds: 1000,
        }
    }
}

/// Draws batches of `n` trees from the spanning-tree join and keeps those
/// that satisfy the residual predicates. Indexes are built once.
pub fn cyclic_sample(
    plan: &ValidatedPlan,
    scanner: &Scanner,
    n: usize,
    seed: u64,
    config: &CyclicConfig,
) -> Result<SampleSet> {
    let tree_plan = plan.without_residuals();
    let mut indexes = IndexSet::build(&tree_plan, scanner, KeyMode::Exact)?;
    let mut stats = SampleStats::new("cyclic", plan);
    stats.peak_index_entries = indexes.entries();
    let mut kept: Vec<ResultTree> = Vec::with_capacity(n);
    let (mut drawn, mut hits) = (0usize, 0usize);
    for round in 0..config.max_rounds {
        let batch = draw_trees(&tree_plan, scanner, &mut indexes, n, seed, round)?;
        stats.total_weight = batch.total_weight;
        drawn += batch.trees.len();
        for tree in batch.trees {
            if tree.satisfies_residuals(plan) {
                hits += 1;
                if kept.len() < n {
                    kept.push(tree);
                }
            }
        }
        let rate = hits as f64 / drawn as f64;
        stats.rounds = round + 1;
        stats.acceptance_rate = Some(rate);
        if kept.len() == n {
            stats.record_passes(plan, scanner);
            return Ok(SampleSet::new(plan, kept, seed, stats));
        }
        if round + 1 >= config.min_rounds && rate < config.min_acceptance {
            return Err(Error::AcceptanceStall {
                rounds: round + 1,
                rate,
            });
        }
    }
    Err(Error::AcceptanceStall {
        rounds: config.max_rounds,
        rate: hits as f64 / drawn.max(1) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::MemTable;
    use crate::model::{validate, JoinEdge, JoinQuery, TableRef};

    fn triangle(edges: &[(u32, u32)]) -> JoinQuery {
        let rows: Vec<[String; 2]> = edges.iter().map(|(a, b)| [a.to_string(), b.to_string()]).collect();
        let t = |name: &str, cols: [&str; 2]| TableRef::in_memory(name, MemTable::from_rows(&cols, &rows));
        JoinQuery::new(
            vec![t("E1", ["a", "b"]), t("E2", ["b", "c"]), t("E3", ["c", "a"])],
            vec![
                JoinEdge::inner("E1.b", "E2.b").unwrap(),
                JoinEdge::inner("E2.c", "E3.c").unwrap(),
                JoinEdge::inner("E3.a", "E1.a").unwrap(),
            ],
            "E1",
        )
    }

    #[test]
    fn kept_trees_close_the_cycle() {
        let edges = [(0, 1), (1, 2), (2, 0), (1, 3), (3, 0), (2, 3)];
        let plan = validate(&triangle(&edges)).unwrap();
        assert_eq!(plan.residuals.len(), 1);
        let scanner = Scanner::new(plan.tables.clone());
        let s = cyclic_sample(&plan, &scanner, 100, 3, &CyclicConfig::default()).unwrap();
        assert_eq!(s.len(), 100);
        assert!(s.trees.iter().all(|t| t.satisfies_residuals(&plan)));
        let rate = s.stats.acceptance_rate.unwrap();
        assert!(rate > 0.0 && rate <= 1.0);
    }

    #[test]
    fn no_triangles_stalls() {
        let edges = [(0, 1), (1, 2), (2, 3)];
        let plan = validate(&triangle(&edges)).unwrap();
        let scanner = Scanner::new(plan.tables.clone());
        let r = cyclic_sample(&plan, &scanner, 10, 3, &CyclicConfig::default());
        assert!(matches!(r, Err(Error::AcceptanceStall { rate, .. }) if rate == 0.0), "{r:?}");
    }

    #[test]
    fn redundant_cycle_edge_accepts_everything() {
        // R.k = S.k twice over different column pairs holding equal values.
        let rows: Vec<[String; 2]> = (0..20).map(|i| [i.to_string(), i.to_string()]).collect();
        let t = |name: &str| TableRef::in_memory(name, MemTable::from_rows(&["x", "y"], &rows));
        let q = JoinQuery::new(
            vec![t("R"), t("S"), t("T")],
            vec![
                JoinEdge::inner("R.x", "S.x").unwrap(),
                JoinEdge::inner("S.y", "T.y").unwrap(),
                JoinEdge::inner("T.x", "R.y").unwrap(),
            ],
            "R",
        );
        let plan = validate(&q).unwrap();
        let scanner = Scanner::new(plan.tables.clone());
        let s = cyclic_sample(&plan, &scanner, 50, 1, &CyclicConfig::default()).unwrap();
        assert_eq!(s.stats.acceptance_rate, Some(1.0));
    }
}

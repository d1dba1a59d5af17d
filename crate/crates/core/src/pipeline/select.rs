//! Picking a sampler for `method = auto`.

use std::collections::HashSet;

use serde::Serialize;

use crate::error::Result;
use crate::ingest::Scanner;
use crate::joinindex::join_key;
use crate::model::ValidatedPlan;

/// Largest `Π max w / avg w` the foreign-key sampler is used for.
pub const MAX_FK_SKEW: f64 = 4.0;
/// Hashing pays off once an edge has this many distinct values per draw.
pub const HASHED_DISTINCT_PER_DRAW: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampler {
    Stream,
    Fk,
    Hashed,
    Cyclic,
}

/// One-scan-per-table summary used by [`select_method`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanStatistics {
    pub table_rows: Vec<u64>,
    /// Per edge: no two child rows share a join value.
    pub child_key_unique: Vec<bool>,
    /// Per edge: distinct non-NULL child join values.
    pub distinct_values: Vec<u64>,
    /// `Π max w / avg w` over the reachable tables.
    pub weight_skew: f64,
}

impl PlanStatistics {
    pub fn max_distinct(&self) -> u64 {
        self.distinct_values.iter().copied().max().unwrap_or(0)
    }
}

pub fn collect_statistics(plan: &ValidatedPlan, scanner: &Scanner) -> Result<PlanStatistics> {
    let n = plan.tables.len();
    let mut stats = PlanStatistics {
        table_rows: vec![0; n],
        child_key_unique: vec![true; plan.edges.len()],
        distinct_values: vec![0; plan.edges.len()],
        weight_skew: 1.0,
    };
    for t in 0..n {
        let edge = plan.parent_edge[t];
        let mut keys = HashSet::new();
        let (mut max, mut sum) = (0.0f64, 0.0f64);
        for row in scanner.scan(t)? {
            let row = row?;
            stats.table_rows[t] += 1;
            let w = plan.weights[t].eval(&row)?;
            max = max.max(w);
            sum += w;
            if let Some(e) = edge {
                if let Some(k) = join_key(&row, &plan.edges[e].child_cols) {
                    if !keys.insert(k) {
                        stats.child_key_unique[e] = false;
                    }
                }
            }
        }
        if let Some(e) = edge {
            stats.distinct_values[e] = keys.len() as u64;
        }
        if plan.reachable[t] && stats.table_rows[t] > 0 {
            let avg = sum / stats.table_rows[t] as f64;
            stats.weight_skew *= if avg > 0.0 { max / avg } else { f64::INFINITY };
        }
    }
    Ok(stats)
}

/// Cyclic plans go to the rejection wrapper; foreign-key plans with mild
/// weight skew to the rejection sampler; equi-joins with far more distinct
/// values than draws to the hashed sampler; everything else streams.
pub fn select_method(plan: &ValidatedPlan, stats: &PlanStatistics, n: usize) -> Sampler {
    if !plan.is_acyclic() {
        return Sampler::Cyclic;
    }
    if plan.all_inner_equi() && !plan.edges.is_empty() {
        if stats.child_key_unique.iter().all(|&u| u) && stats.weight_skew <= MAX_FK_SKEW {
            return Sampler::Fk;
        }
        if stats.max_distinct() > HASHED_DISTINCT_PER_DRAW * n as u64 {
            return Sampler::Hashed;
        }
    }
    Sampler::Stream
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::MemTable;
    use crate::model::{validate, JoinEdge, JoinQuery, TableRef, WeightExpr};

    fn two(parent: Vec<[String; 1]>, child: Vec<[String; 1]>) -> JoinQuery {
        JoinQuery::new(
            vec![
                TableRef::in_memory("P", MemTable::from_rows(&["k"], &parent)),
                TableRef::in_memory("C", MemTable::from_rows(&["k"], &child)),
            ],
            vec![JoinEdge::inner("P.k", "C.k").unwrap()],
            "P",
        )
    }

    fn pick(q: &JoinQuery, n: usize) -> Sampler {
        let plan = validate(q).unwrap();
        let scanner = Scanner::new(plan.tables.clone());
        let stats = collect_statistics(&plan, &scanner).unwrap();
        select_method(&plan, &stats, n)
    }

    #[test]
    fn foreign_key_with_constant_weights() {
        let p = (0..50).map(|i| [(i % 5).to_string()]).collect();
        let c = (0..5).map(|i| [i.to_string()]).collect();
        assert_eq!(pick(&two(p, c), 10), Sampler::Fk);
    }

    #[test]
    fn heavy_skew_streams() {
        let p: Vec<[String; 1]> = (0..50).map(|i| [(i % 5).to_string()]).collect();
        let c = (0..5).map(|i| [i.to_string()]).collect();
        let q = two(p, c).with_weight("P.k", WeightExpr::Power { base: 10.0, scale: 1.0 }).unwrap();
        assert_eq!(pick(&q, 10), Sampler::Stream);
    }

    #[test]
    fn many_distinct_values_hash() {
        let p: Vec<[String; 1]> = (0..20_000).map(|i| [(i / 2).to_string()]).collect();
        let c: Vec<[String; 1]> = (0..20_000).map(|i| [(i / 2).to_string()]).collect();
        assert_eq!(pick(&two(p, c), 10), Sampler::Hashed);
    }

    #[test]
    fn cycles_use_the_wrapper() {
        let rows: Vec<[String; 2]> = (0..5).map(|i| [i.to_string(), ((i + 1) % 5).to_string()]).collect();
        let t = |n: &str, c: [&str; 2]| TableRef::in_memory(n, MemTable::from_rows(&c, &rows));
        let q = JoinQuery::new(
            vec![t("X", ["a", "b"]), t("Y", ["b", "c"]), t("Z", ["c", "a"])],
            vec![
                JoinEdge::inner("X.b", "Y.b").unwrap(),
                JoinEdge::inner("Y.c", "Z.c").unwrap(),
                JoinEdge::inner("Z.a", "X.a").unwrap(),
            ],
            "X",
        );
        assert_eq!(pick(&q, 10), Sampler::Cyclic);
    }
}

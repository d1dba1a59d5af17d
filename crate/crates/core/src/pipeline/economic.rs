//! Rejection sampler for foreign-key joins.
//!
//! When every main row continues to exactly one row per table, the join has
//! one row per main row. A uniform sample of main rows is then a uniform
//! sample of join rows, and accepting each with probability
//! `Π w / Π max w` turns it into a weighted one.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use super::{streams, ResultTree, SampleSet, SampleStats};
use crate::error::{Error, Result};
use crate::ingest::{Row, Scanner};
use crate::joinindex::join_key;
use crate::model::ValidatedPlan;
use crate::multinomial::{seeded_rng, ReservoirMode, ReservoirState};

/// Candidates drawn per missing sample.
pub const FK_OVERSAMPLE: usize = 10;
/// Rounds before giving up with [`Error::AcceptanceStall`].
pub const FK_MAX_ROUNDS: usize = 3;

/// Weighted sample of a foreign-key join by uniform proposal and rejection.
pub fn fk_economic_sample(plan: &ValidatedPlan, scanner: &Scanner, n: usize, seed: u64) -> Result<SampleSet> {
    if !plan.is_acyclic() || !plan.all_inner_equi() {
        return Err(Error::UnsupportedOperatorCombination(
            "the foreign-key sampler needs an acyclic plan of inner equi-joins".into(),
        ));
    }
    let mut stats = SampleStats::new("fk", plan);
    let mut accepted: Vec<ResultTree> = Vec::with_capacity(n);
    let mut proposed = 0usize;
    let mut hits = 0usize;
    for round in 0..FK_MAX_ROUNDS {
        let need = n - accepted.len();
        let candidates = need * FK_OVERSAMPLE;
        let (trees, bound) = propose(plan, scanner, candidates, seed, round)?;
        proposed += trees.len();
        let mut rng = seeded_rng(seed, streams::of(streams::ACCEPT, round));
        for tree in trees {
            let w = tree.weight(plan)?;
            let p = if bound > 0.0 { w / bound } else { 0.0 };
            if rng.random::<f64>() < p {
                hits += 1;
                if accepted.len() < n {
                    accepted.push(tree);
                }
            }
        }
        stats.rounds = round + 1;
        stats.acceptance_rate = Some(hits as f64 / proposed as f64);
        if accepted.len() == n {
            stats.record_passes(plan, scanner);
            return Ok(SampleSet::new(plan, accepted, seed, stats));
        }
    }
    Err(Error::AcceptanceStall {
        rounds: FK_MAX_ROUNDS,
        rate: hits as f64 / proposed.max(1) as f64,
    })
}

/// Draws `m` main rows uniformly with replacement and looks up their unique
/// continuations. Returns the candidate trees and `Π max w` over the tables.
fn propose(
    plan: &ValidatedPlan,
    scanner: &Scanner,
    m: usize,
    seed: u64,
    round: usize,
) -> Result<(Vec<ResultTree>, f64)> {
    let root = plan.root;
    let mut rng = seeded_rng(seed, streams::of(streams::RESERVOIR, round));
    let mut reservoir = ReservoirState::new(m, ReservoirMode::ExpJump);
    let mut bound = 0.0f64;
    for row in scanner.scan(root)? {
        let row = row?;
        bound = bound.max(plan.weights[root].eval(&row)?);
        reservoir.offer_with(1.0, || Arc::new(row), &mut rng);
    }
    let draws = reservoir.finish(m, &mut rng).map_err(|e| match e {
        Error::ZeroTotalWeight => Error::EmptyPopulation,
        e => e,
    })?;
    let mut trees: Vec<ResultTree> = draws
        .iter_draws()
        .map(|r| {
            let mut t = ResultTree::new(plan.tables.len());
            t.rows[root] = Some(Arc::clone(r));
            t
        })
        .collect();

    for &t in &plan.top_down[1..] {
        let edge = &plan.edges[plan.parent_edge[t].expect("child table")];
        let mut wanted: HashMap<Vec<u8>, (Vec<usize>, Option<Arc<Row>>)> = HashMap::new();
        for (d, tree) in trees.iter().enumerate() {
            let parent = tree.rows[edge.parent].as_ref().expect("candidates have no null rows");
            let key = join_key(parent, &edge.parent_cols).ok_or_else(|| {
                Error::KeyViolation(format!(
                    "row {} of `{}` has a NULL join value on {}",
                    parent.ordinal, plan.tables[edge.parent].name, edge.name
                ))
            })?;
            wanted.entry(key).or_default().0.push(d);
        }
        let mut max_w = 0.0f64;
        for row in scanner.scan(t)? {
            let row = row?;
            max_w = max_w.max(plan.weights[t].eval(&row)?);
            let Some(key) = join_key(&row, &edge.child_cols) else { continue };
            if let Some((_, hit)) = wanted.get_mut(&key) {
                if hit.is_some() {
                    return Err(Error::KeyViolation(format!(
                        "value `{}` of {} matches more than one row of `{}`",
                        String::from_utf8_lossy(&key),
                        edge.name,
                        plan.tables[t].name
                    )));
                }
                *hit = Some(Arc::new(row));
            }
        }
        for (key, (draws, hit)) in wanted {
            let row = hit.ok_or_else(|| {
                Error::KeyViolation(format!(
                    "value `{}` of {} matches no row of `{}`",
                    String::from_utf8_lossy(&key),
                    edge.name,
                    plan.tables[t].name
                ))
            })?;
            for d in draws {
                trees[d].rows[t] = Some(Arc::clone(&row));
            }
        }
        bound *= max_w;
    }
    Ok((trees, bound))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::MemTable;
    use crate::model::{validate, JoinEdge, JoinQuery, TableRef, WeightExpr};

    fn fk_query(weight: Option<WeightExpr>, dup: bool) -> JoinQuery {
        let mut orders = MemTable::new(&["id", "cust", "amount"]);
        for i in 0..200 {
            orders.push(&[i.to_string(), (i % 10).to_string(), (1 + i % 4).to_string()]);
        }
        let mut cust = MemTable::new(&["cust", "region"]);
        for c in 0..10 {
            cust.push(&[c.to_string(), format!("r{}", c % 3)]);
        }
        if dup {
            cust.push(&["3", "again"]);
        }
        let mut q = JoinQuery::new(
            vec![TableRef::in_memory("O", orders), TableRef::in_memory("C", cust)],
            vec![JoinEdge::inner("O.cust", "C.cust").unwrap()],
            "O",
        );
        if let Some(w) = weight {
            q = q.with_weight("O.amount", w).unwrap();
        }
        q
    }

    #[test]
    fn equal_weights_accept_everything() {
        let plan = validate(&fk_query(None, false)).unwrap();
        let scanner = Scanner::new(plan.tables.clone());
        let s = fk_economic_sample(&plan, &scanner, 100, 1).unwrap();
        assert_eq!(s.len(), 100);
        assert_eq!(s.stats.acceptance_rate, Some(1.0));
        assert_eq!(s.stats.rounds, 1);
        for t in &s.trees {
            assert_eq!(t.rows[0].as_ref().unwrap().get(1), t.rows[1].as_ref().unwrap().get(0));
        }
    }

    #[test]
    fn skewed_weights_reject_some() {
        let plan = validate(&fk_query(Some(WeightExpr::Identity), false)).unwrap();
        let scanner = Scanner::new(plan.tables.clone());
        let s = fk_economic_sample(&plan, &scanner, 500, 2).unwrap();
        assert_eq!(s.len(), 500);
        // Every accepted tree still joins correctly.
        assert!(s.trees.iter().all(|t| t.rows.iter().all(Option::is_some)));
    }

    #[test]
    fn duplicate_key_is_a_violation() {
        let plan = validate(&fk_query(None, true)).unwrap();
        let scanner = Scanner::new(plan.tables.clone());
        assert!(matches!(
            fk_economic_sample(&plan, &scanner, 200, 3),
            Err(Error::KeyViolation(_))
        ));
    }

    #[test]
    fn extreme_skew_stalls() {
        let mut orders = MemTable::new(&["id", "cust"]);
        for i in 0..1000 {
            orders.push(&[i.to_string(), "0".to_string()]);
        }
        let cust = MemTable::from_rows(&["cust"], &[["0"]]);
        let q = JoinQuery::new(
            vec![TableRef::in_memory("O", orders), TableRef::in_memory("C", cust)],
            vec![JoinEdge::inner("O.cust", "C.cust").unwrap()],
            "O",
        )
        .with_weight("O.id", WeightExpr::Power { base: 1.2, scale: -1.0 })
        .unwrap();
        let plan = validate(&q).unwrap();
        let scanner = Scanner::new(plan.tables.clone());
        assert!(matches!(
            fk_economic_sample(&plan, &scanner, 1000, 4),
            Err(Error::AcceptanceStall { rounds: 3, .. })
        ));
    }
}

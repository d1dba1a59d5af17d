//! Brute-force reference: full join enumeration with exact weights.
//!
//! Everything here uses in-memory nested loops and shares no code with the
//! hash indexes, so it can serve as ground truth for the samplers on small
//! inputs.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::gof::{chi_square_gof, ChiSquare};
use crate::ingest::{Row, Scanner};
use crate::model::{Comparison, EdgeMode, PlanEdge, TableId, ValidatedPlan};
use crate::multinomial::seeded_rng;
use crate::pipeline::{ResultTree, SampleSet, SampleStats};

/// Enumeration stops beyond this many result trees.
pub const SIZE_GUARD: usize = 10_000_000;

/// One enumerated join row.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedTree {
    pub tree: ResultTree,
    /// Row ordinals of the reachable tables, `None` for null rows.
    pub key: Vec<Option<u64>>,
    pub weight: f64,
}

/// All join rows of positive weight in canonical order: lexicographic by
/// ordinal over the reachable tables in declaration order, null rows first.
#[derive(Debug, Clone)]
pub struct EnumeratedJoin {
    pub plan: ValidatedPlan,
    pub trees: Vec<WeightedTree>,
    pub total_weight: f64,
}

impl EnumeratedJoin {
    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.trees.iter().map(|t| t.weight).collect()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.trees.iter().map(|t| t.weight / self.total_weight).collect()
    }

    /// Total weight per main-table row ordinal; `None` is the null main row.
    pub fn group_sums(&self) -> HashMap<Option<u64>, f64> {
        let root = self.plan.root;
        let mut sums = HashMap::new();
        for t in &self.trees {
            *sums
                .entry(t.tree.rows[root].as_ref().map(|r| r.ordinal))
                .or_insert(0.0) += t.weight;
        }
        sums
    }

    /// Position of a tree key in the canonical order.
    pub fn index_of(&self) -> HashMap<&[Option<u64>], usize> {
        self.trees
            .iter()
            .enumerate()
            .map(|(i, t)| (t.key.as_slice(), i))
            .collect()
    }

    /// 1-based event index of every sampled tree.
    pub fn event_indices(&self, sample: &SampleSet) -> Result<Vec<usize>> {
        let index = self.index_of();
        sample
            .keys()
            .iter()
            .map(|k| {
                index
                    .get(k.as_slice())
                    .map(|i| i + 1)
                    .ok_or_else(|| Error::ForeignTree(format!("{k:?}")))
            })
            .collect()
    }
}

struct Oracle<'a> {
    plan: &'a ValidatedPlan,
    rows: Vec<Vec<Arc<Row>>>,
    own: Vec<Vec<f64>>,
    subtree: HashMap<(TableId, u64), f64>,
}

fn cell_matches(plan: &ValidatedPlan, edge: &PlanEdge, parent: &Row, child: &Row) -> Result<bool> {
    for (&pc, &cc) in edge.parent_cols.iter().zip(&edge.child_cols) {
        let (Some(a), Some(b)) = (parent.get(pc), child.get(cc)) else {
            return Ok(false);
        };
        let ok = match edge.cmp {
            Comparison::Eq => a == b,
            Comparison::Ne => a != b,
            cmp => {
                let num = |v: &str, t: TableId| {
                    v.trim().parse::<f64>().map_err(|_| Error::OrderedComparisonOnNonNumeric {
                        table: plan.tables[t].name.clone(),
                        value: v.to_string(),
                    })
                };
                let x = num(a, edge.parent)?;
                let y = num(b, edge.child)?;
                cmp.holds(x, y)
            }
        };
        if !ok {
            return Ok(false);
        }
    }
    Ok(true)
}

type Partial = (Vec<(TableId, Option<Arc<Row>>)>, f64);

impl<'a> Oracle<'a> {
    fn load(plan: &'a ValidatedPlan) -> Result<Self> {
        let scanner = Scanner::new(plan.tables.clone());
        let mut rows = Vec::new();
        let mut own = Vec::new();
        for t in 0..plan.tables.len() {
            let mut rs = Vec::new();
            let mut ws = Vec::new();
            for r in scanner.scan(t)? {
                let r = r?;
                ws.push(plan.weights[t].eval(&r)?);
                rs.push(Arc::new(r));
            }
            rows.push(rs);
            own.push(ws);
        }
        Ok(Self {
            plan,
            rows,
            own,
            subtree: HashMap::new(),
        })
    }

    /// Child rows of positive own weight joining `parent` over `edge`.
    fn matches(&self, edge: &PlanEdge, parent: &Row) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for (i, c) in self.rows[edge.child].iter().enumerate() {
            if self.own[edge.child][i] > 0.0 && cell_matches(self.plan, edge, parent, c)? {
                out.push(i);
            }
        }
        Ok(out)
    }

    /// Total weight of all subtrees below row `i` of table `t`, row included.
    fn subtree_weight(&mut self, t: TableId, i: usize) -> Result<f64> {
        let key = (t, i as u64);
        if let Some(&w) = self.subtree.get(&key) {
            return Ok(w);
        }
        let mut w = self.own[t][i];
        let row = Arc::clone(&self.rows[t][i]);
        for &e in &self.plan.children[t] {
            if w == 0.0 {
                break;
            }
            w *= self.label(e, &row)?;
        }
        self.subtree.insert(key, w);
        Ok(w)
    }

    /// Weight a parent row sees through one edge.
    fn label(&mut self, e: usize, parent: &Row) -> Result<f64> {
        let edge = &self.plan.edges[e];
        let ms = self.matches(edge, parent)?;
        let mut sum = 0.0;
        for &c in &ms {
            sum += self.subtree_weight(edge.child, c)?;
        }
        Ok(match edge.mode {
            EdgeMode::Semi => (sum > 0.0) as u8 as f64,
            EdgeMode::Anti => (sum <= 0.0) as u8 as f64,
            EdgeMode::Join { child_null, .. } => {
                if !ms.is_empty() {
                    sum
                } else if child_null {
                    self.plan.weights[edge.child].null_weight()
                } else {
                    0.0
                }
            }
        })
    }

    /// All positive-weight subtrees rooted at row `i` of table `t`.
    fn expand(&mut self, t: TableId, i: usize, budget: &mut usize) -> Result<Vec<Partial>> {
        let w = self.own[t][i];
        if w <= 0.0 {
            return Ok(Vec::new());
        }
        let row = Arc::clone(&self.rows[t][i]);
        let mut acc: Vec<Partial> = vec![(vec![(t, Some(Arc::clone(&row)))], w)];
        for &e in &self.plan.children[t] {
            let edge = self.plan.edges[e].clone();
            let options: Vec<Partial> = if edge.mode.is_filter() {
                if self.label(e, &row)? > 0.0 {
                    vec![(Vec::new(), 1.0)]
                } else {
                    Vec::new()
                }
            } else {
                let ms = self.matches(&edge, &row)?;
                if ms.is_empty() {
                    let nw = self.plan.weights[edge.child].null_weight();
                    if edge.mode.child_null() && nw > 0.0 {
                        vec![(vec![(edge.child, None)], nw)]
                    } else {
                        Vec::new()
                    }
                } else {
                    let mut opts = Vec::new();
                    for c in ms {
                        opts.extend(self.expand(edge.child, c, budget)?);
                    }
                    opts
                }
            };
            acc = combine(acc, &options, budget)?;
            if acc.is_empty() {
                break;
            }
        }
        Ok(acc)
    }
}

fn combine(acc: Vec<Partial>, options: &[Partial], budget: &mut usize) -> Result<Vec<Partial>> {
    let size = acc.len().saturating_mul(options.len());
    if size > *budget {
        return Err(Error::SizeGuardExceeded { limit: SIZE_GUARD });
    }
    let mut out = Vec::with_capacity(size);
    for (a, wa) in &acc {
        for (b, wb) in options {
            let w = wa * wb;
            if w > 0.0 {
                let mut rows = a.clone();
                rows.extend(b.iter().cloned());
                out.push((rows, w));
            }
        }
    }
    Ok(out)
}

/// Enumerates every join row of positive weight by nested loops.
///
/// Outer joins pair unmatched rows with null rows; a null row stands for its
/// whole subtree. Rows of tables that no main row matches hang below the
/// null main row when all edges out of the main table allow it. Residual
/// predicates of cyclic plans are applied to the finished rows.
pub fn enumerate_join(plan: &ValidatedPlan) -> Result<EnumeratedJoin> {
    enumerate_join_with_limit(plan, SIZE_GUARD)
}

pub fn enumerate_join_with_limit(plan: &ValidatedPlan, limit: usize) -> Result<EnumeratedJoin> {
    let mut oracle = Oracle::load(plan)?;
    let guard = |len: usize| {
        if len > limit {
            Err(Error::SizeGuardExceeded { limit })
        } else {
            Ok(())
        }
    };
    let mut budget = limit;
    let root = plan.root;
    let mut partials: Vec<Partial> = Vec::new();
    for i in 0..oracle.rows[root].len() {
        partials.extend(oracle.expand(root, i, &mut budget)?);
        guard(partials.len())?;
    }

    let kids = &plan.children[root];
    let null_main = plan.weights[root].null_weight();
    if !kids.is_empty() && kids.iter().all(|&e| plan.edges[e].mode.parent_null()) && null_main > 0.0 {
        let mut acc: Vec<Partial> = vec![(vec![(root, None)], null_main)];
        for &e in kids {
            let edge = plan.edges[e].clone();
            let mut options = Vec::new();
            for c in 0..oracle.rows[edge.child].len() {
                if oracle.own[edge.child][c] <= 0.0 {
                    continue;
                }
                let child = Arc::clone(&oracle.rows[edge.child][c]);
                let matched = (0..oracle.rows[root].len()).any(|m| {
                    oracle.own[root][m] > 0.0 && cell_matches(plan, &edge, &oracle.rows[root][m], &child).unwrap_or(false)
                });
                if !matched {
                    options.extend(oracle.expand(edge.child, c, &mut budget)?);
                }
            }
            acc = combine(acc, &options, &mut budget)?;
        }
        partials.extend(acc);
        guard(partials.len())?;
    }

    let mut trees = Vec::with_capacity(partials.len());
    for (assign, weight) in partials {
        let mut tree = ResultTree::new(plan.tables.len());
        for (t, r) in assign {
            tree.rows[t] = r;
        }
        if !tree.satisfies_residuals(plan) {
            continue;
        }
        trees.push(WeightedTree {
            key: tree.key(plan),
            tree,
            weight,
        });
    }
    trees.sort_by(|a, b| a.key.cmp(&b.key));
    let total_weight = trees.iter().map(|t| t.weight).sum();
    Ok(EnumeratedJoin {
        plan: plan.clone(),
        trees,
        total_weight,
    })
}

/// `n` independent inversion draws over the enumerated join rows.
pub fn exact_multinomial(join: &EnumeratedJoin, n: usize, seed: u64) -> Result<SampleSet> {
    if join.total_weight <= 0.0 {
        return Err(Error::ZeroTotalWeight);
    }
    let mut cumulative = Vec::with_capacity(join.len());
    let mut acc = 0.0;
    for t in &join.trees {
        acc += t.weight;
        cumulative.push(acc);
    }
    let mut rng = seeded_rng(seed, 0);
    let trees = (0..n)
        .map(|_| {
            let target = rng.random::<f64>() * acc;
            let i = cumulative.partition_point(|&c| c <= target).min(join.len() - 1);
            join.trees[i].tree.clone()
        })
        .collect();
    let stats = SampleStats {
        method: "oracle".into(),
        total_weight: join.total_weight,
        rounds: 1,
        ..SampleStats::default()
    };
    Ok(SampleSet::new(&join.plan, trees, seed, stats))
}

/// Pearson chi-square of a sample against the enumerated probabilities.
pub fn compare_distributions(sample: &SampleSet, join: &EnumeratedJoin) -> Result<ChiSquare> {
    let mut counts = vec![0u64; join.len()];
    for i in join.event_indices(sample)? {
        counts[i - 1] += 1;
    }
    chi_square_gof(&counts, &join.probabilities())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::MemTable;
    use crate::model::{validate, JoinEdge, JoinQuery, Operator, TableRef, WeightExpr};
    use crate::pipeline::stream_sample;

    fn f1(op: Operator) -> ValidatedPlan {
        let ab = MemTable::from_rows(
            &["A", "B", "w"],
            &[["a1", "b1", "2"], ["a2", "b1", "3"], ["a3", "b2", "5"]],
        );
        let bc = MemTable::from_rows(
            &["B", "C", "w"],
            &[["b1", "c1", "7"], ["b1", "c2", "1"], ["b2", "c1", "4"]],
        );
        let q = JoinQuery::new(
            vec![TableRef::in_memory("AB", ab), TableRef::in_memory("BC", bc)],
            vec![JoinEdge::new("AB.B".parse().unwrap(), "BC.B".parse().unwrap(), op, Comparison::Eq)],
            "AB",
        )
        .with_weight("AB.w", WeightExpr::Identity)
        .unwrap()
        .with_weight("BC.w", WeightExpr::Identity)
        .unwrap();
        validate(&q).unwrap()
    }

    #[test]
    fn f1_enumeration() {
        let j = enumerate_join(&f1(Operator::Inner)).unwrap();
        assert_eq!(j.weights(), vec![14.0, 2.0, 21.0, 3.0, 20.0]);
        assert_eq!(j.total_weight, 60.0);
        assert_eq!(j.trees[0].key, vec![Some(0), Some(0)]);
    }

    #[test]
    fn semi_variant() {
        let j = enumerate_join(&f1(Operator::Semi)).unwrap();
        assert_eq!(j.weights(), vec![2.0, 3.0, 5.0]);
        assert_eq!(j.trees[2].key, vec![Some(2)]);
    }

    #[test]
    fn empty_intersection() {
        let mut plan = f1(Operator::Inner);
        plan.tables[1] = TableRef::in_memory("BC", MemTable::from_rows(&["B", "C", "w"], &[["zz", "c", "1"]]));
        let j = enumerate_join(&plan).unwrap();
        assert!(j.is_empty());
        assert_eq!(j.total_weight, 0.0);
        assert!(matches!(exact_multinomial(&j, 3, 0), Err(Error::ZeroTotalWeight)));
    }

    #[test]
    fn size_guard() {
        assert!(matches!(
            enumerate_join_with_limit(&f1(Operator::Inner), 4),
            Err(Error::SizeGuardExceeded { limit: 4 })
        ));
    }

    #[test]
    fn exact_multinomial_moments_and_determinism() {
        let j = enumerate_join(&f1(Operator::Inner)).unwrap();
        let n = 600_000;
        let s = exact_multinomial(&j, n, 9).unwrap();
        let mut counts = vec![0u64; 5];
        for i in j.event_indices(&s).unwrap() {
            counts[i - 1] += 1;
        }
        for (c, w) in counts.iter().zip([14.0, 2.0, 21.0, 3.0, 20.0]) {
            let p: f64 = w / 60.0;
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((*c as f64 - n as f64 * p).abs() < 4.0 * sd);
        }
        assert_eq!(exact_multinomial(&j, 50, 1).unwrap().keys(), exact_multinomial(&j, 50, 1).unwrap().keys());
    }

    #[test]
    fn stream_sample_matches_oracle() {
        let plan = f1(Operator::Inner);
        let j = enumerate_join(&plan).unwrap();
        let scanner = Scanner::new(plan.tables.clone());
        let s = stream_sample(&plan, &scanner, 50_000, 4).unwrap();
        let chi = compare_distributions(&s, &j).unwrap();
        assert!(chi.p_value > 1e-4, "{chi:?}");
    }

    #[test]
    fn foreign_tree_is_reported() {
        let j = enumerate_join(&f1(Operator::Semi)).unwrap();
        let plan = f1(Operator::Inner);
        let scanner = Scanner::new(plan.tables.clone());
        let s = stream_sample(&plan, &scanner, 5, 4).unwrap();
        assert!(matches!(compare_distributions(&s, &j), Err(Error::ForeignTree(_))));
    }

    #[test]
    fn full_outer_includes_unmatched_both_sides() {
        let ab = MemTable::from_rows(&["A", "B"], &[["a1", "b1"], ["a2", "b9"]]);
        let bc = MemTable::from_rows(&["B", "C"], &[["b1", "c1"], ["b2", "c2"], ["", "c3"]]);
        let q = JoinQuery::new(
            vec![TableRef::in_memory("AB", ab), TableRef::in_memory("BC", bc)],
            vec![JoinEdge::new(
                "AB.B".parse().unwrap(),
                "BC.B".parse().unwrap(),
                Operator::FullOuter,
                Comparison::Eq,
            )],
            "AB",
        );
        let plan = validate(&q).unwrap();
        let j = enumerate_join(&plan).unwrap();
        let keys: Vec<_> = j.trees.iter().map(|t| t.key.clone()).collect();
        assert_eq!(
            keys,
            vec![
                vec![None, Some(1)],
                vec![None, Some(2)],
                vec![Some(0), Some(0)],
                vec![Some(1), None],
            ]
        );
        // The stream sampler sees the same four rows.
        let scanner = Scanner::new(plan.tables.clone());
        let s = stream_sample(&plan, &scanner, 4000, 2).unwrap();
        let chi = compare_distributions(&s, &j).unwrap();
        assert!(chi.p_value > 1e-4, "{chi:?}");
    }
}

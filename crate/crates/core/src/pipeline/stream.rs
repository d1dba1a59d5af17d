//! The multistage stream sampler.
//!
//! Stage 0 builds every edge index leaf to root (one pass per non-main
//! table). Stage 1 scans the main table once and draws `n` main rows with
//! replacement in proportion to their group weights. Each later stage
//! extends all draws by one table with a single scan of that table.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use super::{streams, ResultTree, SampleSet, SampleStats};
use crate::error::{Error, Result};
use crate::ingest::{Row, Scanner};
use crate::joinindex::{IndexSet, KeyMode, SlotDistribution, NULL_SLOT};
use crate::model::ValidatedPlan;
use crate::multinomial::{seeded_rng, ReservoirMode, ReservoirState};

/// Relative slack accepted when a draw overshoots its slot by rounding.
const RESOLVE_TOLERANCE: f64 = 1e-9;

/// Draws of one round of stage 1 and 2.
#[derive(Debug, Clone)]
pub struct DrawBatch {
    pub trees: Vec<ResultTree>,
    /// Sum of all group weights, null main row included.
    pub total_weight: f64,
}

/// Weighted sample of `n` join rows with replacement.
pub fn stream_sample(plan: &ValidatedPlan, scanner: &Scanner, n: usize, seed: u64) -> Result<SampleSet> {
    if !plan.is_acyclic() {
        return Err(Error::UnsupportedOperatorCombination(
            "the stream sampler needs an acyclic plan; use the cyclic sampler".into(),
        ));
    }
    let mut indexes = IndexSet::build(plan, scanner, KeyMode::Exact)?;
    let mut stats = SampleStats::new("stream", plan);
    stats.peak_index_entries = indexes.entries();
    let batch = draw_trees(plan, scanner, &mut indexes, n, seed, 0)?;
    stats.total_weight = batch.total_weight;
    stats.rounds = 1;
    stats.record_passes(plan, scanner);
    Ok(SampleSet::new(plan, batch.trees, seed, stats))
}

/// Stage 1 and 2 on prebuilt indexes: one main scan plus at most one scan
/// per other reachable table.
pub fn draw_trees(
    plan: &ValidatedPlan,
    scanner: &Scanner,
    indexes: &mut IndexSet,
    n: usize,
    seed: u64,
    round: usize,
) -> Result<DrawBatch> {
    let root = plan.root;
    let mut rng = seeded_rng(seed, streams::of(streams::RESERVOIR, round));
    indexes.clear_matched();
    let mut reservoir = ReservoirState::<Option<Arc<Row>>>::new(n, ReservoirMode::ExpJump);
    for row in scanner.scan(root)? {
        let row = row?;
        let own = plan.weights[root].eval(&row)?;
        if own == 0.0 {
            continue;
        }
        for &e in &plan.children[root] {
            indexes.indexes[e].mark_matched(&row);
        }
        let w = indexes.extend_weight(plan, root, own, &row)?;
        reservoir.offer_with(w, || Some(Arc::new(row)), &mut rng);
    }
    let null_weight = indexes.null_main_weight(plan);
    reservoir.offer_with(null_weight, || None, &mut rng);
    let total_weight = reservoir.total_weight();
    let draws = reservoir.finish(n, &mut rng)?;

    let mut trees: Vec<ResultTree> = draws
        .iter_draws()
        .map(|item| {
            let mut t = ResultTree::new(plan.tables.len());
            t.rows[root] = item.clone();
            t
        })
        .collect();
    let mut rng = seeded_rng(seed, streams::of(streams::EXTEND, round));
    resolve_extensions(plan, scanner, indexes, &mut trees, &mut rng)?;
    Ok(DrawBatch { trees, total_weight })
}

/// Draws of one slot waiting for a row, sorted by offset.
#[derive(Debug, Default)]
struct Pending {
    targets: Vec<(f64, usize)>,
    next: usize,
    cumulative: f64,
    last: Option<Arc<Row>>,
}

/// Extends partial trees top-down. For each table below the root, every
/// tree picks an offset `u` inside the label its parent row sees; a single
/// scan then assigns each offset to the first row whose running per-value
/// cumulative weight exceeds it.
pub fn resolve_extensions<R: Rng + ?Sized>(
    plan: &ValidatedPlan,
    scanner: &Scanner,
    indexes: &IndexSet,
    trees: &mut [ResultTree],
    rng: &mut R,
) -> Result<()> {
    for &t in &plan.top_down[1..] {
        if !plan.reachable[t] {
            continue;
        }
        let e = plan.parent_edge[t].expect("non-root tables have a parent edge");
        let edge = &plan.edges[e];
        let idx = &indexes.indexes[e];
        let mut unmatched: Option<SlotDistribution> = None;
        let mut pending: BTreeMap<usize, Pending> = BTreeMap::new();
        for (d, tree) in trees.iter().enumerate() {
            match &tree.rows[edge.parent] {
                // The null main row: the child is a row no main row matched.
                None if edge.parent == plan.root => {
                    let dist = unmatched.get_or_insert_with(|| idx.unmatched_distribution());
                    if dist.is_empty() {
                        continue;
                    }
                    let (slot, off) = dist.locate(rng.random::<f64>() * dist.total());
                    pending.entry(slot).or_default().targets.push((off, d));
                }
                // A null row covers its whole subtree.
                None => {}
                Some(parent) => {
                    let label = idx.lookup(parent)?;
                    let u = rng.random::<f64>() * label;
                    if let Some((slot, off)) = idx.locate(parent, u)? {
                        pending.entry(slot).or_default().targets.push((off, d));
                    }
                }
            }
        }
        if pending.is_empty() {
            continue;
        }
        for p in pending.values_mut() {
            p.targets.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        }

        for row in scanner.scan(t)? {
            let row = row?;
            let Some(slot) = idx.child_slot(&row) else { continue };
            let Some(p) = pending.get_mut(&slot) else { continue };
            if p.next == p.targets.len() {
                continue;
            }
            let own = plan.weights[t].eval(&row)?;
            if own == 0.0 {
                continue;
            }
            let w = indexes.extend_weight(plan, t, own, &row)?;
            if w <= 0.0 {
                continue;
            }
            p.cumulative += w;
            let row = Arc::new(row);
            while p.next < p.targets.len() && p.targets[p.next].0 < p.cumulative {
                trees[p.targets[p.next].1].rows[t] = Some(Arc::clone(&row));
                p.next += 1;
            }
            p.last = Some(row);
        }

        for (slot, p) in pending {
            for &(off, d) in &p.targets[p.next..] {
                match &p.last {
                    Some(row) if off <= p.cumulative * (1.0 + RESOLVE_TOLERANCE) => {
                        trees[d].rows[t] = Some(Arc::clone(row));
                    }
                    _ => {
                        return Err(Error::UnresolvedDraw {
                            table: format!(
                                "{} ({})",
                                plan.tables[t].name,
                                if slot == NULL_SLOT { "null value".into() } else { format!("slot {slot}") }
                            ),
                            target: off,
                            reached: p.cumulative,
                        })
                    }
                }
            }
        }
    }
    Ok(())
}

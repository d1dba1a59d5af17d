//! Per-edge join indexes labelled with aggregated subtree weights.
//!
//! Each tree edge gets a hash table from the child's join value to the total
//! weight of all child subtrees carrying that value. Tables are processed
//! leaf to root, so when a table is scanned the indexes of its own children
//! are already complete and the subtree weight of a row is its own weight
//! times one lookup per child edge. Values without an entry fall back to a
//! per-edge default label (0, the child's null weight, or 1 for anti joins).

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::ingest::{Row, Scanner};
use crate::model::{Comparison, EdgeMode, PlanEdge, TableId, ValidatedPlan};

/// Slot id standing for child rows whose join value is NULL.
pub const NULL_SLOT: usize = usize::MAX;

/// Encodes the join value of `row` over `cols`; `None` if any cell is NULL.
pub fn join_key(row: &Row, cols: &[usize]) -> Option<Vec<u8>> {
    if let [c] = cols {
        return row.get(*c).map(|v| v.as_bytes().to_vec());
    }
    let mut key = Vec::new();
    for &c in cols {
        let v = row.get(c)?;
        key.extend_from_slice(&(v.len() as u32).to_le_bytes());
        key.extend_from_slice(v.as_bytes());
    }
    Some(key)
}

/// Seeded multiply-add-shift hash into a power-of-two universe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BucketHash {
    bits: u32,
    mul: u64,
    add: u64,
}

impl BucketHash {
    pub fn new<R: Rng + ?Sized>(universe: u64, rng: &mut R) -> Self {
        let universe = universe.max(2).next_power_of_two();
        Self {
            bits: universe.trailing_zeros(),
            mul: rng.random::<u64>() | 1,
            add: rng.random(),
        }
    }

    pub fn universe(&self) -> u64 {
        1 << self.bits
    }

    /// Integer-looking keys hash their value, everything else its FNV-1a digest.
    pub fn bucket(&self, key: &[u8]) -> u64 {
        let x = std::str::from_utf8(key)
            .ok()
            .and_then(|s| s.parse::<i64>().ok())
            .map(|v| v as u64)
            .unwrap_or_else(|| fnv1a(key));
        self.mul.wrapping_mul(x).wrapping_add(self.add) >> (64 - self.bits)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// How join values are turned into index keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KeyMode {
    #[default]
    Exact,
    /// Equi-hash relaxation: values only need equal buckets.
    Hashed(BucketHash),
}

impl KeyMode {
    pub fn key(&self, row: &Row, cols: &[usize]) -> Option<Vec<u8>> {
        let k = join_key(row, cols)?;
        Some(match self {
            KeyMode::Exact => k,
            KeyMode::Hashed(h) => h.bucket(&k).to_le_bytes().to_vec(),
        })
    }
}

#[derive(Debug, Clone)]
struct Ordered {
    /// Child values ascending, with their slots.
    values: Vec<(f64, usize)>,
    /// `cumulative[i]` = sum of labels of `values[..i]`.
    cumulative: Vec<f64>,
    /// Lookup semantics: sum labels of stored `y` with `y cmp x`.
    cmp: Comparison,
}

impl Ordered {
    fn range(&self, x: f64) -> (usize, usize) {
        let below = |strict: bool| {
            self.values
                .partition_point(|&(v, _)| if strict { v < x } else { v <= x })
        };
        let n = self.values.len();
        match self.cmp {
            Comparison::Lt => (0, below(true)),
            Comparison::Le => (0, below(false)),
            Comparison::Gt => (below(false), n),
            Comparison::Ge => (below(true), n),
            Comparison::Eq | Comparison::Ne => unreachable!("not an ordered comparison"),
        }
    }
}

#[derive(Debug, Clone)]
enum Lookup {
    Equi,
    NotEqual,
    Ordered(Ordered),
}

/// Hash index of one tree edge.
#[derive(Debug, Clone)]
pub struct JoinIndex {
    slots: HashMap<Vec<u8>, usize>,
    keys: Vec<Vec<u8>>,
    labels: Vec<f64>,
    /// Subtree weight of child rows with a NULL join value.
    null_label: f64,
    default_label: f64,
    total_weight: f64,
    /// Prefix sums of `labels` in slot order.
    cumulative: Vec<f64>,
    matched: Vec<bool>,
    lookup: Lookup,
    key_mode: KeyMode,
    parent_cols: Vec<usize>,
    child_cols: Vec<usize>,
    table: String,
}

impl JoinIndex {
    fn new(key_mode: KeyMode, parent_cols: Vec<usize>, child_cols: Vec<usize>, table: String) -> Self {
        Self {
            slots: HashMap::new(),
            keys: Vec::new(),
            labels: Vec::new(),
            null_label: 0.0,
            default_label: 0.0,
            total_weight: 0.0,
            cumulative: vec![0.0],
            matched: Vec::new(),
            lookup: Lookup::Equi,
            key_mode,
            parent_cols,
            child_cols,
            table,
        }
    }

    /// Builds an equi index directly from `(value, label)` pairs.
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = (&'a str, f64)>, default_label: f64) -> Self {
        let mut idx = Self::new(KeyMode::Exact, vec![0], vec![0], "<labels>".into());
        for (k, w) in labels {
            idx.add(Some(k.as_bytes().to_vec()), w);
        }
        idx.default_label = default_label;
        idx.seal();
        idx
    }

    fn add(&mut self, key: Option<Vec<u8>>, weight: f64) {
        match key {
            None => self.null_label += weight,
            Some(k) => {
                let next = self.labels.len();
                let slot = *self.slots.entry(k).or_insert_with_key(|k| {
                    self.keys.push(k.clone());
                    next
                });
                if slot == next {
                    self.labels.push(0.0);
                }
                self.labels[slot] += weight;
            }
        }
    }

    fn seal(&mut self) {
        let mut acc = 0.0;
        self.cumulative = std::iter::once(0.0)
            .chain(self.labels.iter().map(|&l| {
                acc += l;
                acc
            }))
            .collect();
        self.total_weight = acc;
        self.matched = vec![false; self.labels.len()];
    }

    fn apply_filter(&mut self, mode: EdgeMode) {
        let (hit, miss) = match mode {
            EdgeMode::Semi => (1.0, 0.0),
            EdgeMode::Anti => (0.0, 1.0),
            EdgeMode::Join { .. } => return,
        };
        for l in &mut self.labels {
            *l = if *l > 0.0 { hit } else { miss };
        }
        self.default_label = miss;
        self.seal();
    }

    /// Replaces point labels by cumulative sums over `y cmp x`, searched by
    /// binary search over the sorted child values.
    pub fn transform_theta(mut self, cmp: Comparison) -> Result<Self> {
        match cmp {
            Comparison::Eq => {
                self.lookup = Lookup::Equi;
                return Ok(self);
            }
            Comparison::Ne => {
                self.lookup = Lookup::NotEqual;
                return Ok(self);
            }
            _ => {}
        }
        let mut values = Vec::with_capacity(self.keys.len());
        for (slot, k) in self.keys.iter().enumerate() {
            let v = std::str::from_utf8(k)
                .ok()
                .and_then(|s| s.trim().parse::<f64>().ok())
                .filter(|v| !v.is_nan())
                .ok_or_else(|| Error::OrderedComparisonOnNonNumeric {
                    table: self.table.clone(),
                    value: String::from_utf8_lossy(k).into_owned(),
                })?;
            values.push((v, slot));
        }
        values.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut acc = 0.0;
        let cumulative = std::iter::once(0.0)
            .chain(values.iter().map(|&(_, s)| {
                acc += self.labels[s];
                acc
            }))
            .collect();
        self.lookup = Lookup::Ordered(Ordered {
            values,
            cumulative,
            cmp,
        });
        self.default_label = 0.0;
        Ok(self)
    }

    pub fn entries(&self) -> usize {
        self.labels.len()
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    pub fn default_label(&self) -> f64 {
        self.default_label
    }

    pub fn null_label(&self) -> f64 {
        self.null_label
    }

    pub fn label_of(&self, value: &str) -> Option<f64> {
        self.slots.get(value.as_bytes()).map(|&s| self.labels[s])
    }

    pub fn label(&self, slot: usize) -> f64 {
        if slot == NULL_SLOT {
            self.null_label
        } else {
            self.labels[slot]
        }
    }

    /// Slot a child row belongs to: [`NULL_SLOT`] for a NULL join value,
    /// `None` for values without an entry.
    pub fn child_slot(&self, child: &Row) -> Option<usize> {
        match self.key_mode.key(child, &self.child_cols) {
            None => Some(NULL_SLOT),
            Some(k) => self.slot(&k),
        }
    }

    pub fn key_mode(&self) -> KeyMode {
        self.key_mode
    }

    pub fn slot(&self, key: &[u8]) -> Option<usize> {
        self.slots.get(key).copied()
    }

    fn parent_number(&self, row: &Row) -> Result<Option<f64>> {
        let Some(raw) = row.get(self.parent_cols[0]) else {
            return Ok(None);
        };
        raw.trim()
            .parse::<f64>()
            .map(Some)
            .map_err(|_| Error::OrderedComparisonOnNonNumeric {
                table: format!("parent of {}", self.table),
                value: raw.to_string(),
            })
    }

    /// `total_weight − label(value)`; absent values count as 0.
    pub fn lookup_neq(&self, key: &[u8]) -> f64 {
        let own = self.slot(key).map_or(0.0, |s| self.labels[s]);
        self.total_weight - own
    }

    /// Lookup by raw numeric value on an ordered index.
    pub fn lookup_value(&self, x: f64) -> f64 {
        match &self.lookup {
            Lookup::Ordered(o) => {
                let (a, b) = o.range(x);
                o.cumulative[b] - o.cumulative[a]
            }
            _ => self.label_of(&x.to_string()).unwrap_or(self.default_label),
        }
    }

    /// Label seen from a parent row.
    pub fn lookup(&self, parent: &Row) -> Result<f64> {
        Ok(match &self.lookup {
            Lookup::Equi => match self.key_mode.key(parent, &self.parent_cols) {
                Some(k) => self.slot(&k).map_or(self.default_label, |s| self.labels[s]),
                None => self.default_label,
            },
            Lookup::NotEqual => match join_key(parent, &self.parent_cols) {
                Some(k) => self.lookup_neq(&k),
                None => 0.0,
            },
            Lookup::Ordered(o) => match self.parent_number(parent)? {
                Some(x) if !x.is_nan() => {
                    let (a, b) = o.range(x);
                    o.cumulative[b] - o.cumulative[a]
                }
                _ => 0.0,
            },
        })
    }

    /// Flags the entry a parent row links to (for null-parent accounting).
    pub fn mark_matched(&mut self, parent: &Row) {
        if let Some(k) = self.key_mode.key(parent, &self.parent_cols) {
            if let Some(&s) = self.slots.get(&k) {
                self.matched[s] = true;
            }
        }
    }

    pub fn clear_matched(&mut self) {
        self.matched.iter_mut().for_each(|m| *m = false);
    }

    /// Total label of entries no parent row touched, plus NULL-valued rows.
    pub fn unmatched_weight(&self) -> f64 {
        self.labels
            .iter()
            .zip(&self.matched)
            .filter(|(_, &m)| !m)
            .map(|(l, _)| l)
            .sum::<f64>()
            + self.null_label
    }

    /// Maps a draw `u ∈ [0, lookup(parent))` onto the child value slot it
    /// falls in and the remaining offset inside that slot. `None` means the
    /// parent links to no entry (default label).
    pub fn locate(&self, parent: &Row, u: f64) -> Result<Option<(usize, f64)>> {
        Ok(match &self.lookup {
            Lookup::Equi => self
                .key_mode
                .key(parent, &self.parent_cols)
                .and_then(|k| self.slot(&k))
                .map(|s| (s, u.min(self.labels[s]))),
            Lookup::NotEqual => {
                let Some(k) = join_key(parent, &self.parent_cols) else {
                    return Ok(None);
                };
                let mut target = u;
                if let Some(s) = self.slot(&k) {
                    if target >= self.cumulative[s] {
                        target += self.labels[s];
                    }
                }
                Some(pick(&self.cumulative, 0, self.labels.len(), target, |i| i))
                    .map(|(s, off)| (s, off.min(self.labels[s])))
            }
            Lookup::Ordered(o) => {
                let Some(x) = self.parent_number(parent)? else {
                    return Ok(None);
                };
                let (a, b) = o.range(x);
                if a >= b {
                    return Ok(None);
                }
                let (i, off) = pick(&o.cumulative, a, b, o.cumulative[a] + u, |i| i);
                let s = o.values[i].1;
                Some((s, off.min(self.labels[s])))
            }
        })
    }

    /// Distribution over unmatched entries (and the NULL band, last).
    pub fn unmatched_distribution(&self) -> SlotDistribution {
        let mut slots = Vec::new();
        let mut cumulative = vec![0.0];
        let mut acc = 0.0;
        for (s, (&l, &m)) in self.labels.iter().zip(&self.matched).enumerate() {
            if !m && l > 0.0 {
                acc += l;
                slots.push(s);
                cumulative.push(acc);
            }
        }
        if self.null_label > 0.0 {
            acc += self.null_label;
            slots.push(NULL_SLOT);
            cumulative.push(acc);
        }
        SlotDistribution { slots, cumulative }
    }
}

/// Inversion over a prefix-sum array restricted to `[lo, hi)`: the first
/// position whose cumulative end exceeds `target`, plus the offset within it.
/// Rounding overshoot lands on the last position with positive width.
fn pick(cumulative: &[f64], lo: usize, hi: usize, target: f64, map: impl Fn(usize) -> usize) -> (usize, f64) {
    let rel = cumulative[lo + 1..=hi].partition_point(|&c| c <= target);
    let mut i = lo + rel;
    if i >= hi {
        i = hi - 1;
        while i > lo && cumulative[i + 1] <= cumulative[i] {
            i -= 1;
        }
    }
    (map(i), target - cumulative[i])
}

/// Weighted choice among index slots by inversion.
#[derive(Debug, Clone, Default)]
pub struct SlotDistribution {
    slots: Vec<usize>,
    cumulative: Vec<f64>,
}

impl SlotDistribution {
    pub fn total(&self) -> f64 {
        *self.cumulative.last().unwrap_or(&0.0)
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Slot containing `u ∈ [0, total)` and the offset inside it.
    pub fn locate(&self, u: f64) -> (usize, f64) {
        let (i, off) = pick(&self.cumulative, 0, self.slots.len(), u, |i| i);
        (self.slots[i], off)
    }
}

/// Indexes of all tree edges of a plan, by edge id.
#[derive(Debug, Clone)]
pub struct IndexSet {
    pub indexes: Vec<JoinIndex>,
}

impl IndexSet {
    /// Runs the leaf-to-root build: one scan per non-main table.
    pub fn build(plan: &ValidatedPlan, scanner: &Scanner, key_mode: KeyMode) -> Result<Self> {
        let mut built: Vec<Option<JoinIndex>> = vec![None; plan.edges.len()];
        for t in plan.bottom_up() {
            let Some(e) = plan.parent_edge[t] else { continue };
            let idx = {
                let kids: Vec<&JoinIndex> = plan.children[t]
                    .iter()
                    .map(|&c| built[c].as_ref().expect("children are built first"))
                    .collect();
                build_index(plan, scanner, &plan.edges[e], &kids, key_mode)?
            };
            built[e] = Some(idx);
        }
        Ok(Self {
            indexes: built.into_iter().map(|i| i.expect("every edge built")).collect(),
        })
    }

    pub fn entries(&self) -> usize {
        self.indexes.iter().map(JoinIndex::entries).sum()
    }

    /// Subtree weight of a row of table `t`: own weight times child lookups.
    pub fn subtree_weight(&self, plan: &ValidatedPlan, t: TableId, row: &Row) -> Result<f64> {
        let own = plan.weights[t].eval(row)?;
        if own == 0.0 {
            return Ok(0.0);
        }
        self.extend_weight(plan, t, own, row)
    }

    /// Like [`IndexSet::subtree_weight`] with the row's own weight given.
    pub fn extend_weight(&self, plan: &ValidatedPlan, t: TableId, own: f64, row: &Row) -> Result<f64> {
        let kids: Vec<&JoinIndex> = plan.children[t].iter().map(|&e| &self.indexes[e]).collect();
        product_of_lookups(own, row, &kids)
    }

    pub fn clear_matched(&mut self) {
        self.indexes.iter_mut().for_each(JoinIndex::clear_matched);
    }

    /// Weight of the null main-table row's group (see [`null_main_weight`]).
    pub fn null_main_weight(&self, plan: &ValidatedPlan) -> f64 {
        null_main_weight(plan, self)
    }
}

fn product_of_lookups(own: f64, row: &Row, kids: &[&JoinIndex]) -> Result<f64> {
    let mut w = own;
    for idx in kids {
        if w == 0.0 {
            break;
        }
        w *= idx.lookup(row)?;
    }
    Ok(w)
}

/// Scans the child table of `edge` once and aggregates subtree weights per
/// join value.
pub fn build_index(
    plan: &ValidatedPlan,
    scanner: &Scanner,
    edge: &PlanEdge,
    child_indexes: &[&JoinIndex],
    key_mode: KeyMode,
) -> Result<JoinIndex> {
    let t = edge.child;
    let key_mode = if edge.cmp == Comparison::Eq {
        key_mode
    } else {
        KeyMode::Exact
    };
    let mut idx = JoinIndex::new(
        key_mode,
        edge.parent_cols.clone(),
        edge.child_cols.clone(),
        plan.tables[t].name.clone(),
    );
    for row in scanner.scan(t)? {
        let row = row?;
        let own = plan.weights[t].eval(&row)?;
        if own == 0.0 {
            continue;
        }
        let w = product_of_lookups(own, &row, child_indexes)?;
        idx.add(key_mode.key(&row, &edge.child_cols), w);
    }
    idx.seal();
    if edge.mode.child_null() {
        idx.default_label = plan.weights[t].null_weight();
    }
    if edge.mode.is_filter() {
        idx.apply_filter(edge.mode);
    }
    // The edge reads `parent cmp child`, the index `child cmp' parent`.
    idx.transform_theta(edge.cmp.flip())
}

/// `W(ρ) = w(ρ) · Π lookups` over the main table's child edges.
pub fn group_weight(plan: &ValidatedPlan, indexes: &IndexSet, main_row: &Row) -> Result<f64> {
    indexes.subtree_weight(plan, plan.root, main_row)
}

/// Weight of the group rooted at the main table's null row.
///
/// Non-zero only if every child edge of the main table lets child rows pair
/// with a null parent. Only entries that no main row matched contribute,
/// plus child rows with a NULL join value. Requires `mark_matched` calls
/// from the main-table scan.
pub fn null_main_weight(plan: &ValidatedPlan, indexes: &IndexSet) -> f64 {
    let kids = &plan.children[plan.root];
    if kids.is_empty() || kids.iter().any(|&e| !plan.edges[e].mode.parent_null()) {
        return 0.0;
    }
    kids.iter()
        .fold(plan.weights[plan.root].null_weight(), |w, &e| {
            w * indexes.indexes[e].unmatched_weight()
        })
}

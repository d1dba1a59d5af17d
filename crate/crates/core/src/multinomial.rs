//! One-pass weighted sampling with replacement.
//!
//! A weighted reservoir keeps the `n` items with the largest keys
//! `ln(u) / w`. Read in descending key order these are the first `n` distinct
//! items of a weighted draw without replacement. Turning that into `n` draws
//! with replacement only needs the total population weight: each draw
//! repeats an already selected item with probability `W_selected / W_total`
//! (picked in proportion to weight) and otherwise takes the next reservoir item.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Deterministic generator for one purpose of one run.
///
/// Every independent random decision of a run draws from its own stream of
/// the run seed, so adding draws in one phase never shifts another.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(Open01)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReservoirMode {
    /// Draw a key for every item.
    Naive,
    /// Skip ahead by exponentially distributed amounts of weight; only
    /// items that enter the reservoir consume random numbers.
    #[default]
    ExpJump,
}

#[derive(Debug)]
struct Entry<T> {
    key: f64,
    ordinal: u64,
    weight: f64,
    item: T,
}

impl<T> Entry<T> {
    /// Larger key wins; on equal keys the earlier item wins.
    fn rank(&self, other: &Self) -> Ordering {
        self.key
            .total_cmp(&other.key)
            .then_with(|| other.ordinal.cmp(&self.ordinal))
    }
}

impl<T> PartialEq for Entry<T> {
    fn eq(&self, other: &Self) -> bool {
        self.rank(other) == Ordering::Equal
    }
}

impl<T> Eq for Entry<T> {}

impl<T> PartialOrd for Entry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T> Ord for Entry<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank(other)
    }
}

/// Weighted reservoir over a stream, plus the running total weight.
#[derive(Debug)]
pub struct ReservoirState<T> {
    capacity: usize,
    heap: BinaryHeap<Reverse<Entry<T>>>,
    mode: ReservoirMode,
    total: f64,
    seen: u64,
    /// Weight still to skip before the next insertion (jump mode).
    skip: f64,
}

impl<T> ReservoirState<T> {
    pub fn new(capacity: usize, mode: ReservoirMode) -> Self {
        Self {
            capacity,
            heap: BinaryHeap::with_capacity(capacity + 1),
            mode,
            total: 0.0,
            seen: 0,
            skip: 0.0,
        }
    }

    pub fn total_weight(&self) -> f64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    fn threshold(&self) -> f64 {
        self.heap.peek().map_or(f64::NEG_INFINITY, |e| e.0.key)
    }

    fn draw_skip<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let t = self.threshold();
        self.skip = if t.is_finite() { open01(rng).ln() / t } else { 0.0 };
    }

    /// Offers an item; `make` runs only if the item enters the reservoir.
    pub fn offer_with<R: Rng + ?Sized>(&mut self, weight: f64, make: impl FnOnce() -> T, rng: &mut R) {
        if weight <= 0.0 || self.capacity == 0 {
            return;
        }
        self.total += weight;
        let ordinal = self.seen;
        self.seen += 1;
        if self.heap.len() < self.capacity {
            let key = open01(rng).ln() / weight;
            self.heap.push(Reverse(Entry {
                key,
                ordinal,
                weight,
                item: make(),
            }));
            if self.heap.len() == self.capacity && self.mode == ReservoirMode::ExpJump {
                self.draw_skip(rng);
            }
            return;
        }
        match self.mode {
            ReservoirMode::Naive => {
                let e = Entry {
                    key: open01(rng).ln() / weight,
                    ordinal,
                    weight,
                    item: (),
                };
                let min = &self.heap.peek().expect("reservoir is full").0;
                if e.key.total_cmp(&min.key).then_with(|| min.ordinal.cmp(&e.ordinal)) == Ordering::Greater {
                    self.heap.pop();
                    self.heap.push(Reverse(Entry {
                        key: e.key,
                        ordinal,
                        weight,
                        item: make(),
                    }));
                }
            }
            ReservoirMode::ExpJump => {
                self.skip -= weight;
                if self.skip > 0.0 {
                    return;
                }
                let t = self.threshold();
                let floor = (weight * t).exp();
                let r = floor + (1.0 - floor) * open01(rng);
                let key = (r.ln() / weight).max(t);
                self.heap.pop();
                self.heap.push(Reverse(Entry {
                    key,
                    ordinal,
                    weight,
                    item: make(),
                }));
                self.draw_skip(rng);
            }
        }
    }

    pub fn offer<R: Rng + ?Sized>(&mut self, weight: f64, item: T, rng: &mut R) {
        self.offer_with(weight, || item, rng)
    }

    /// Reservoir contents as `(item, weight)`, largest key first.
    pub fn into_ranked(self) -> Vec<(T, f64)> {
        let mut entries: Vec<Entry<T>> = self.heap.into_iter().map(|r| r.0).collect();
        entries.sort_by(|a, b| b.rank(a));
        entries.into_iter().map(|e| (e.item, e.weight)).collect()
    }

    /// Converts the reservoir into `n` weighted draws with replacement.
    pub fn finish<R: Rng + ?Sized>(self, n: usize, rng: &mut R) -> Result<Multinomial<T>> {
        let total = self.total;
        if n == 0 {
            return Ok(Multinomial {
                items: Vec::new(),
                draws: Vec::new(),
            });
        }
        if self.heap.is_empty() {
            return Err(Error::ZeroTotalWeight);
        }
        let ranked = self.into_ranked();
        let mut selected = DistinctSet::default();
        let mut items = Vec::with_capacity(ranked.len());
        let mut queue = ranked.into_iter();
        let mut draws = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.random::<f64>() * total;
            let repeat = u < selected.total();
            let next = if repeat { None } else { queue.next() };
            match next {
                Some((item, w)) => {
                    selected.push(w);
                    items.push(item);
                    draws.push(items.len() - 1);
                }
                // Either a repeat, or rounding left the reservoir short.
                None => draws.push(selected.redraw_previous(rng.random::<f64>())?),
            }
        }
        Ok(Multinomial { items, draws })
    }
}

/// `n` draws with replacement: distinct items and per-draw indexes into them.
#[derive(Debug, Clone, PartialEq)]
pub struct Multinomial<T> {
    pub items: Vec<T>,
    pub draws: Vec<usize>,
}

impl<T> Multinomial<T> {
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.items.len()];
        for &d in &self.draws {
            c[d] += 1;
        }
        c
    }

    /// Items in draw order (with repeats).
    pub fn iter_draws(&self) -> impl Iterator<Item = &T> + '_ {
        self.draws.iter().map(|&d| &self.items[d])
    }
}

/// Weighted draws with replacement from a stream in a single pass.
pub fn online_multinomial<T, R: Rng + ?Sized>(
    stream: impl IntoIterator<Item = (T, f64)>,
    n: usize,
    mode: ReservoirMode,
    rng: &mut R,
) -> Result<Multinomial<T>> {
    let mut res = ReservoirState::new(n, mode);
    for (item, w) in stream {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::InvalidQuery(format!("item weight {w} is not a finite nonnegative number")));
        }
        res.offer(w, item, rng);
    }
    res.finish(n, rng)
}

/// Growing set of already selected items with prefix sums of their weights.
#[derive(Debug, Clone, Default)]
pub struct DistinctSet {
    cumulative: Vec<f64>,
}

impl DistinctSet {
    pub fn push(&mut self, weight: f64) {
        let last = self.total();
        self.cumulative.push(last + weight);
    }

    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.cumulative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cumulative.is_empty()
    }

    /// Index of a previously selected item, chosen in proportion to weight
    /// by `u ∈ [0, 1)`.
    pub fn redraw_previous(&self, u: f64) -> Result<usize> {
        if self.cumulative.is_empty() {
            return Err(Error::EmptyDistinctSet);
        }
        let target = u * self.total();
        let i = self.cumulative.partition_point(|&c| c <= target);
        Ok(i.min(self.cumulative.len() - 1))
    }
}

/// Inversion sampling over explicit weights: 0-based index of the item whose
/// cumulative band contains `u · Σw`, for `u ∈ [0, 1)`.
pub fn inversion_pick(weights: &[f64], u: f64) -> Result<usize> {
    if weights.is_empty() {
        return Err(Error::EmptyPopulation);
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroTotalWeight);
    }
    let target = u * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_positive = i;
            acc += w;
            if target < acc {
                return Ok(i);
            }
        }
    }
    Ok(last_positive)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inversion_examples() {
        assert_eq!(inversion_pick(&[1.0, 2.0, 1.0], 0.6).unwrap(), 1);
        assert_eq!(inversion_pick(&[0.0, 0.0, 5.0], 0.99).unwrap(), 2);
        assert_eq!(inversion_pick(&[0.0, 0.0, 5.0], 0.0).unwrap(), 2);
        assert!(matches!(inversion_pick(&[], 0.5), Err(Error::EmptyPopulation)));
        assert!(matches!(inversion_pick(&[0.0, 0.0], 0.5), Err(Error::ZeroTotalWeight)));
    }

    #[test]
    fn redraw_previous_is_weighted() {
        let mut s = DistinctSet::default();
        assert!(matches!(s.redraw_previous(0.3), Err(Error::EmptyDistinctSet)));
        s.push(1.0);
        s.push(3.0);
        assert_eq!(s.redraw_previous(0.2).unwrap(), 0);
        assert_eq!(s.redraw_previous(0.25).unwrap(), 1);
        assert_eq!(s.redraw_previous(0.999).unwrap(), 1);
    }

    #[test]
    fn zero_weights_are_never_drawn() {
        let mut rng = seeded_rng(1, 0);
        let items = (0..50).map(|i| (i, if i % 2 == 0 { 0.0 } else { 1.0 }));
        let m = online_multinomial(items, 1000, ReservoirMode::ExpJump, &mut rng).unwrap();
        assert!(m.iter_draws().all(|i| i % 2 == 1));
        assert_eq!(m.draws.len(), 1000);
    }

    #[test]
    fn all_zero_is_an_error() {
        let mut rng = seeded_rng(1, 0);
        let r = online_multinomial([(0, 0.0), (1, 0.0)], 3, ReservoirMode::Naive, &mut rng);
        assert!(matches!(r, Err(Error::ZeroTotalWeight)));
    }

    #[test]
    fn fewer_items_than_draws() {
        let mut rng = seeded_rng(3, 0);
        let m = online_multinomial([("a", 1.0), ("b", 3.0)], 10, ReservoirMode::ExpJump, &mut rng).unwrap();
        assert_eq!(m.draws.len(), 10);
        assert!(m.items.len() <= 2);
    }

    #[test]
    fn single_item_gets_every_draw() {
        let mut rng = seeded_rng(5, 0);
        let m = online_multinomial([("x", 0.25)], 7, ReservoirMode::ExpJump, &mut rng).unwrap();
        assert_eq!(m.counts(), vec![7]);
    }

    #[test]
    fn same_seed_same_draws() {
        let run = |seed| {
            let mut rng = seeded_rng(seed, 9);
            let items = (0..500).map(|i| (i, 1.0 + (i % 7) as f64));
            online_multinomial(items, 100, ReservoirMode::ExpJump, &mut rng)
                .unwrap()
                .iter_draws()
                .copied()
                .collect::<Vec<_>>()
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));
    }

    #[test]
    fn reservoir_keeps_capacity() {
        let mut rng = seeded_rng(0, 0);
        for mode in [ReservoirMode::Naive, ReservoirMode::ExpJump] {
            let mut r = ReservoirState::new(5, mode);
            for i in 0..1000 {
                r.offer(1.0 + (i % 3) as f64, i, &mut rng);
            }
            assert_eq!(r.len(), 5);
            assert_eq!(r.total_weight(), (0..1000).map(|i| 1.0 + (i % 3) as f64).sum::<f64>());
        }
    }

    #[test]
    fn lazy_items_are_built_only_on_insertion() {
        let mut rng = seeded_rng(2, 0);
        let mut built = 0;
        let mut r = ReservoirState::new(3, ReservoirMode::ExpJump);
        for i in 0..10_000 {
            r.offer_with(
                1.0,
                || {
                    built += 1;
                    i
                },
                &mut rng,
            );
        }
        // Roughly 3·ln(10000/3) ≈ 24 insertions after the first three.
        assert!(built < 200, "{built} items built");
    }

    /// Frequencies of 16 items with weights 1..16 over 2·10^5 draws stay within 4σ.
    #[test]
    fn draw_frequencies_match_weights() {
        let n = 200_000;
        let mut rng = seeded_rng(11, 0);
        let items = (1..=16).map(|w| (w, w as f64));
        let m = online_multinomial(items, n, ReservoirMode::ExpJump, &mut rng).unwrap();
        let mut counts = [0usize; 17];
        for &w in m.iter_draws() {
            counts[w] += 1;
        }
        for (w, &c) in counts.iter().enumerate().skip(1) {
            let p = w as f64 / 136.0;
            let mean = n as f64 * p;
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((c as f64 - mean).abs() <= 4.0 * sd, "item {w}: {c} vs {mean}");
        }
    }

    mod props {
        use proptest::prelude::*;

        use super::*;

        proptest! {
            #[test]
            fn draws_index_selected_items(
                weights in proptest::collection::vec(0.0f64..10.0, 1..40),
                n in 1usize..30,
                seed in 0u64..1000,
            ) {
                prop_assume!(weights.iter().any(|&w| w > 0.0));
                let mut rng = seeded_rng(seed, 0);
                let items = weights.iter().copied().enumerate();
                let m = online_multinomial(items, n, ReservoirMode::ExpJump, &mut rng).unwrap();
                prop_assert_eq!(m.draws.len(), n);
                prop_assert!(m.items.len() <= n);
                for &i in &m.items {
                    prop_assert!(weights[i] > 0.0);
                }
                // First occurrences come in item order.
                let mut next = 0;
                for &d in &m.draws {
                    prop_assert!(d <= next);
                    if d == next { next += 1; }
                }
            }
        }
    }
}

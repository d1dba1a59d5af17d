//! Cycle breaking for join graphs.
//!
//! A cyclic join is sampled as a selection over an acyclic one: one join
//! edge per independent cycle is taken out of the graph and re-applied later
//! as a residual predicate on the sampled result trees.

use std::collections::{BTreeMap, VecDeque};

use crate::error::{Error, Result};

/// Undirected join graph edge as seen by the cycle rewriter.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphEdge {
    pub id: usize,
    pub a: usize,
    pub b: usize,
    pub name: String,
    /// Only inner joins can become selections.
    pub removable: bool,
}

/// Table and two-way join sizes for one edge; any of them may be unknown.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EdgeStats {
    pub join_size: Option<f64>,
    pub left_rows: Option<f64>,
    pub right_rows: Option<f64>,
}

impl EdgeStats {
    /// `|X ⋈ Y| / (|X| |Y|)`.
    pub fn linkage_probability(&self) -> Option<f64> {
        let (j, l, r) = (self.join_size?, self.left_rows?, self.right_rows?);
        (l > 0.0 && r > 0.0).then(|| j / (l * r))
    }

    fn size_product(&self) -> Option<f64> {
        Some(self.left_rows? * self.right_rows?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleRewrite {
    /// Edge ids forming the spanning tree, in input order.
    pub tree: Vec<usize>,
    /// Edge ids turned into residual predicates, in removal order.
    pub removed: Vec<usize>,
}

/// Picks the cycle edge to turn into a selection.
///
/// The edge with the largest linkage probability is removed, so the residual
/// predicate keeps as many superset rows as possible. Ties go to the
/// lexicographically smallest name. If any candidate lacks statistics the edge
/// whose endpoint tables have the largest size product is removed instead.
pub fn choose_break_edge(cycle: &[&GraphEdge], stats: &BTreeMap<usize, EdgeStats>) -> Option<usize> {
    let candidates: Vec<&GraphEdge> = cycle.iter().copied().filter(|e| e.removable).collect();
    if candidates.is_empty() {
        return None;
    }
    let prob = |e: &GraphEdge| stats.get(&e.id).and_then(EdgeStats::linkage_probability);
    let size = |e: &GraphEdge| stats.get(&e.id).and_then(EdgeStats::size_product);

    let score: Box<dyn Fn(&GraphEdge) -> f64> = if candidates.iter().all(|e| prob(e).is_some()) {
        Box::new(|e| prob(e).unwrap_or(f64::NEG_INFINITY))
    } else if candidates.iter().all(|e| size(e).is_some()) {
        Box::new(|e| size(e).unwrap_or(f64::NEG_INFINITY))
    } else {
        Box::new(|_| 0.0)
    };

    candidates
        .into_iter()
        .fold(None::<(&GraphEdge, f64)>, |best, e| {
            let s = score(e);
            match best {
                Some((b, bs)) if bs > s || (bs == s && b.name <= e.name) => Some((b, bs)),
                _ => Some((e, s)),
            }
        })
        .map(|(e, _)| e.id)
}

/// Shortest path from `from` to `to` avoiding edge `skip`; returns edge ids.
fn shortest_path(
    nodes: usize,
    edges: &[GraphEdge],
    alive: &[bool],
    skip: usize,
    from: usize,
    to: usize,
) -> Option<Vec<usize>> {
    let mut via: Vec<Option<(usize, usize)>> = vec![None; nodes];
    let mut seen = vec![false; nodes];
    seen[from] = true;
    let mut queue = VecDeque::from([from]);
    while let Some(v) = queue.pop_front() {
        if v == to {
            let mut path = Vec::new();
            let mut cur = to;
            while let Some((prev, e)) = via[cur] {
                path.push(e);
                cur = prev;
            }
            return Some(path);
        }
        for (i, e) in edges.iter().enumerate() {
            if !alive[i] || i == skip {
                continue;
            }
            let next = if e.a == v {
                e.b
            } else if e.b == v {
                e.a
            } else {
                continue;
            };
            if !seen[next] {
                seen[next] = true;
                via[next] = Some((v, i));
                queue.push_back(next);
            }
        }
    }
    None
}

/// Removes one edge per independent cycle until the graph is a tree.
///
/// Cycles are found by searching, for every edge, a shortest path between its
/// endpoints that does not use the edge itself.
pub fn rewrite_cyclic(
    nodes: usize,
    edges: &[GraphEdge],
    stats: &BTreeMap<usize, EdgeStats>,
) -> Result<CycleRewrite> {
    let mut alive = vec![true; edges.len()];
    let mut removed = Vec::new();
    'search: loop {
        for (i, e) in edges.iter().enumerate() {
            if !alive[i] {
                continue;
            }
            let Some(path) = shortest_path(nodes, edges, &alive, i, e.a, e.b) else {
                continue;
            };
            let cycle: Vec<&GraphEdge> = path
                .iter()
                .chain(std::iter::once(&i))
                .map(|&k| &edges[k])
                .collect();
            let victim = choose_break_edge(&cycle, stats).ok_or_else(|| {
                Error::UnsupportedOperatorCombination(format!(
                    "cycle {} has no inner join edge that could become a selection",
                    cycle.iter().map(|e| e.name.as_str()).collect::<Vec<_>>().join(", ")
                ))
            })?;
            let pos = edges.iter().position(|e| e.id == victim).expect("victim is a cycle edge");
            alive[pos] = false;
            removed.push(victim);
            continue 'search;
        }
        break;
    }
    let tree = edges
        .iter()
        .zip(&alive)
        .filter(|(_, &a)| a)
        .map(|(e, _)| e.id)
        .collect();
    Ok(CycleRewrite { tree, removed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edge(id: usize, a: usize, b: usize, name: &str) -> GraphEdge {
        GraphEdge {
            id,
            a,
            b,
            name: name.into(),
            removable: true,
        }
    }

    fn probs(ps: &[(usize, f64)]) -> BTreeMap<usize, EdgeStats> {
        ps.iter()
            .map(|&(id, p)| {
                (
                    id,
                    EdgeStats {
                        join_size: Some(p * 100.0),
                        left_rows: Some(10.0),
                        right_rows: Some(10.0),
                    },
                )
            })
            .collect()
    }

    #[test]
    fn removes_most_probable_link() {
        let es = [edge(1, 0, 1, "e1"), edge(2, 1, 2, "e2"), edge(3, 2, 0, "e3")];
        let refs: Vec<&GraphEdge> = es.iter().collect();
        let stats = probs(&[(1, 0.5), (2, 0.01), (3, 0.3)]);
        assert_eq!(choose_break_edge(&refs, &stats), Some(1));
    }

    #[test]
    fn ties_go_to_first_name() {
        let es = [edge(7, 0, 1, "b"), edge(8, 1, 2, "a"), edge(9, 2, 0, "c")];
        let refs: Vec<&GraphEdge> = es.iter().collect();
        let stats = probs(&[(7, 0.2), (8, 0.2), (9, 0.2)]);
        assert_eq!(choose_break_edge(&refs, &stats), Some(8));
    }

    #[test]
    fn missing_statistics_fall_back_to_size_product() {
        let es = [edge(1, 0, 1, "e1"), edge(2, 1, 2, "e2"), edge(3, 2, 0, "e3")];
        let refs: Vec<&GraphEdge> = es.iter().collect();
        let mut stats = BTreeMap::new();
        stats.insert(
            1,
            EdgeStats {
                join_size: Some(5.0),
                left_rows: Some(10.0),
                right_rows: Some(10.0),
            },
        );
        stats.insert(
            2,
            EdgeStats {
                join_size: None,
                left_rows: Some(10.0),
                right_rows: Some(50.0),
            },
        );
        stats.insert(
            3,
            EdgeStats {
                join_size: Some(1.0),
                left_rows: Some(50.0),
                right_rows: Some(2.0),
            },
        );
        assert_eq!(choose_break_edge(&refs, &stats), Some(2));
    }

    #[test]
    fn non_removable_edges_are_skipped() {
        let mut es = [edge(1, 0, 1, "e1"), edge(2, 1, 2, "e2"), edge(3, 2, 0, "e3")];
        es[0].removable = false;
        let refs: Vec<&GraphEdge> = es.iter().collect();
        let stats = probs(&[(1, 0.5), (2, 0.01), (3, 0.3)]);
        assert_eq!(choose_break_edge(&refs, &stats), Some(3));
        for e in &mut es {
            e.removable = false;
        }
        let refs: Vec<&GraphEdge> = es.iter().collect();
        assert_eq!(choose_break_edge(&refs, &stats), None);
        assert!(rewrite_cyclic(3, &es, &stats).is_err());
    }

    #[test]
    fn triangle_loses_one_edge() {
        let es = [edge(0, 0, 1, "AB.B=BC.B"), edge(1, 1, 2, "BC.C=CA.C"), edge(2, 2, 0, "CA.A=AB.A")];
        let rw = rewrite_cyclic(3, &es, &BTreeMap::new()).unwrap();
        assert_eq!(rw.removed.len(), 1);
        assert_eq!(rw.tree.len(), 2);
        // No statistics: lexicographic fallback.
        assert_eq!(rw.removed, vec![0]);
    }

    #[test]
    fn acyclic_graph_is_unchanged() {
        let es = [edge(0, 0, 1, "x"), edge(1, 0, 2, "y"), edge(2, 2, 3, "z")];
        let rw = rewrite_cyclic(4, &es, &BTreeMap::new()).unwrap();
        assert_eq!(rw.tree, vec![0, 1, 2]);
        assert!(rw.removed.is_empty());
    }

    #[test]
    fn two_independent_cycles_two_removals() {
        // 0-1-2-0 and 2-3-4-2 sharing node 2.
        let es = [
            edge(0, 0, 1, "a"),
            edge(1, 1, 2, "b"),
            edge(2, 2, 0, "c"),
            edge(3, 2, 3, "d"),
            edge(4, 3, 4, "e"),
            edge(5, 4, 2, "f"),
        ];
        let rw = rewrite_cyclic(5, &es, &BTreeMap::new()).unwrap();
        assert_eq!(rw.removed.len(), 2);
        assert_eq!(rw.tree.len(), 4);
        // Rewriting the result again is a no-op.
        let kept: Vec<GraphEdge> = es.iter().filter(|e| rw.tree.contains(&e.id)).cloned().collect();
        let again = rewrite_cyclic(5, &kept, &BTreeMap::new()).unwrap();
        assert_eq!(again.tree, rw.tree);
        assert!(again.removed.is_empty());
    }

    mod props {
        use proptest::prelude::*;

        use super::*;

        proptest! {
            #[test]
            fn rewrite_yields_spanning_tree(extra in proptest::collection::vec((0usize..7, 0usize..7), 0..8)) {
                // Connected base: a path over 7 nodes, plus random extra edges.
                let mut es: Vec<GraphEdge> = (0..6).map(|i| edge(i, i, i + 1, &format!("p{i}"))).collect();
                for (k, (a, b)) in extra.into_iter().enumerate() {
                    if a != b {
                        let id = es.len();
                        es.push(edge(id, a, b, &format!("x{k}")));
                    }
                }
                let rw = rewrite_cyclic(7, &es, &BTreeMap::new()).unwrap();
                prop_assert_eq!(rw.tree.len(), 6);
                prop_assert_eq!(rw.removed.len(), es.len() - 6);
                // Tree edges connect all nodes.
                let mut parent: Vec<usize> = (0..7).collect();
                fn find(p: &mut Vec<usize>, x: usize) -> usize {
                    if p[x] != x { let r = find(p, p[x]); p[x] = r; }
                    p[x]
                }
                for id in &rw.tree {
                    let e = &es[*id];
                    let (ra, rb) = (find(&mut parent, e.a), find(&mut parent, e.b));
                    prop_assert_ne!(ra, rb);
                    parent[ra] = rb;
                }
            }
        }
    }
}

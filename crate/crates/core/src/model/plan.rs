use std::collections::{BTreeMap, HashMap, VecDeque};

use log::warn;

use crate::error::{Error, Result};
use crate::ingest::{read_header, Row, Scanner, TableWeights};
use crate::joinindex::join_key;
use crate::model::cyclic::{rewrite_cyclic, EdgeStats, GraphEdge};
use crate::model::{Comparison, JoinQuery, Operator, TableRef, TableSource};

pub type TableId = usize;

/// How an oriented tree edge treats unmatched rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeMode {
    Join {
        /// Parent rows without a match pair with the child's null row.
        child_null: bool,
        /// Child rows without a match pair with the parent's null row
        /// (only allowed below the main table).
        parent_null: bool,
    },
    Semi,
    Anti,
}

impl EdgeMode {
    pub const INNER: EdgeMode = EdgeMode::Join {
        child_null: false,
        parent_null: false,
    };

    pub fn child_null(self) -> bool {
        matches!(self, EdgeMode::Join { child_null: true, .. })
    }

    pub fn parent_null(self) -> bool {
        matches!(self, EdgeMode::Join { parent_null: true, .. })
    }

    pub fn is_filter(self) -> bool {
        matches!(self, EdgeMode::Semi | EdgeMode::Anti)
    }
}

/// Join tree edge oriented away from the main table.
///
/// The condition reads `parent_value cmp child_value`; ordered and `!=`
/// comparisons only appear on single-column edges.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanEdge {
    pub parent: TableId,
    pub child: TableId,
    pub parent_cols: Vec<usize>,
    pub child_cols: Vec<usize>,
    pub mode: EdgeMode,
    pub cmp: Comparison,
    pub name: String,
}

impl PlanEdge {
    pub fn is_inner_equi(&self) -> bool {
        self.mode == EdgeMode::INNER && self.cmp == Comparison::Eq
    }
}

/// Selection left over from breaking a cycle: `left cmp right`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualPredicate {
    pub left: (TableId, usize),
    pub right: (TableId, usize),
    pub cmp: Comparison,
    pub name: String,
}

/// Rooted join tree plus everything needed to run a sampler on it.
#[derive(Debug, Clone)]
pub struct ValidatedPlan {
    pub tables: Vec<TableRef>,
    pub weights: Vec<TableWeights>,
    pub root: TableId,
    pub edges: Vec<PlanEdge>,
    pub parent_edge: Vec<Option<usize>>,
    /// Child edge ids per table.
    pub children: Vec<Vec<usize>>,
    /// Breadth-first order from the root.
    pub top_down: Vec<TableId>,
    pub reachable: Vec<bool>,
    pub residuals: Vec<ResidualPredicate>,
    /// Maximum sequential scans per table for the stream sampler.
    pub pass_budget: Vec<u32>,
    pub warnings: Vec<String>,
}

impl ValidatedPlan {
    pub fn table_id(&self, name: &str) -> Option<TableId> {
        self.tables.iter().position(|t| t.name == name)
    }

    /// Leaf-to-root order: every table appears after all of its children.
    pub fn bottom_up(&self) -> impl Iterator<Item = TableId> + '_ {
        self.top_down.iter().rev().copied()
    }

    pub fn is_acyclic(&self) -> bool {
        self.residuals.is_empty()
    }

    pub fn all_inner_equi(&self) -> bool {
        self.edges.iter().all(PlanEdge::is_inner_equi)
    }

    pub fn reachable_tables(&self) -> impl Iterator<Item = TableId> + '_ {
        (0..self.tables.len()).filter(|&t| self.reachable[t])
    }

    /// Copy of this plan without its residual predicates.
    pub fn without_residuals(&self) -> Self {
        let mut p = self.clone();
        p.residuals.clear();
        p
    }
}

/// Undirected join link between two tables, possibly multi-column.
#[derive(Debug, Clone)]
struct Link {
    left: TableId,
    right: TableId,
    left_cols: Vec<usize>,
    right_cols: Vec<usize>,
    operator: Operator,
    cmp: Comparison,
    name: String,
}

pub(crate) fn resolve_columns(t: &mut TableRef) -> Result<()> {
    if t.columns.is_empty() {
        match &t.source {
            TableSource::File { path, delimiter } => t.columns = read_header(path, *delimiter)?,
            TableSource::Memory(m) => t.columns = m.columns().to_vec(),
        }
    }
    let mut seen = std::collections::HashSet::new();
    for c in &t.columns {
        if !seen.insert(c.as_str()) {
            return Err(Error::InvalidQuery(format!(
                "column `{c}` appears twice in table `{}`",
                t.name
            )));
        }
    }
    Ok(())
}

/// Checks a query and turns it into a rooted join tree.
///
/// Cyclic graphs are rewritten first: per independent cycle one inner edge is
/// turned into a residual predicate (see [`rewrite_cyclic`]). Choosing that
/// edge needs exact two-way join sizes, which costs one scan per table on a
/// private scanner.
pub fn validate(query: &JoinQuery) -> Result<ValidatedPlan> {
    if query.sample_size == 0 {
        return Err(Error::InvalidQuery("sample size must be at least 1".into()));
    }
    let mut tables = query.tables.clone();
    let mut ids = HashMap::new();
    for (i, t) in tables.iter_mut().enumerate() {
        if ids.insert(t.name.clone(), i).is_some() {
            return Err(Error::InvalidQuery(format!("table `{}` declared twice", t.name)));
        }
        resolve_columns(t)?;
    }
    let root = *ids
        .get(&query.main)
        .ok_or_else(|| Error::UnknownTable(query.main.clone()))?;
    let col = |table: TableId, name: &str| -> Result<usize> {
        tables[table]
            .column_index(name)
            .ok_or_else(|| Error::UnknownColumn {
                table: tables[table].name.clone(),
                column: name.to_string(),
            })
    };
    let table_of = |name: &str| ids.get(name).copied().ok_or_else(|| Error::UnknownTable(name.to_string()));

    // Resolve edges.
    let mut links = Vec::new();
    for e in &query.edges {
        let (l, r) = (table_of(&e.left.table)?, table_of(&e.right.table)?);
        let (lc, rc) = (col(l, &e.left.column)?, col(r, &e.right.column)?);
        if l == r {
            return Err(Error::InvalidQuery(format!(
                "edge {} joins `{}` with itself; declare the table twice instead",
                e.name(),
                tables[l].name
            )));
        }
        if e.comparison != Comparison::Eq && e.operator != Operator::Inner {
            return Err(Error::UnsupportedOperatorCombination(format!(
                "{}: comparison `{}` needs an inner join",
                e.name(),
                e.comparison
            )));
        }
        links.push(Link {
            left: l,
            right: r,
            left_cols: vec![lc],
            right_cols: vec![rc],
            operator: e.operator,
            cmp: e.comparison,
            name: e.name(),
        });
    }

    // Weights.
    let mut per_table: Vec<Vec<(&str, &crate::model::WeightExpr)>> = vec![Vec::new(); tables.len()];
    for (c, expr) in &query.weights {
        let t = table_of(&c.table)?;
        col(t, &c.column)?;
        per_table[t].push((c.column.as_str(), expr));
    }
    let weights = tables
        .iter()
        .zip(&per_table)
        .map(|(t, exprs)| TableWeights::compile(t, exprs.iter().copied()))
        .collect::<Result<Vec<_>>>()?;
    let mut warnings = Vec::new();
    for l in &links {
        let weighted = |t: TableId, c: usize| {
            let name = &tables[t].columns[c];
            per_table[t].iter().any(|(n, _)| *n == name.as_str())
        };
        if weighted(l.left, l.left_cols[0]) && weighted(l.right, l.right_cols[0]) {
            let msg = format!("both endpoint columns of {} carry weights; the join value is counted twice", l.name);
            warn!("{msg}");
            warnings.push(msg);
        }
    }

    // Parallel edges between the same two tables.
    let mut residual_links = Vec::new();
    let mut groups: BTreeMap<(TableId, TableId), Vec<Link>> = BTreeMap::new();
    for l in links {
        groups.entry((l.left.min(l.right), l.left.max(l.right))).or_default().push(l);
    }
    let mut graph_links = Vec::new();
    for (_, mut group) in groups {
        if group.len() == 1 {
            graph_links.push(group.pop().expect("one link"));
            continue;
        }
        if let Some(l) = group.iter().find(|l| l.operator != Operator::Inner) {
            return Err(Error::UnsupportedOperatorCombination(format!(
                "{} is parallel to another edge between the same tables; only inner edges may be parallel",
                l.name
            )));
        }
        group.sort_by(|a, b| a.name.cmp(&b.name));
        let (eq, other): (Vec<Link>, Vec<Link>) = group.into_iter().partition(|l| l.cmp == Comparison::Eq);
        let mut rest = other.into_iter();
        let base = if eq.is_empty() {
            rest.next().expect("nonempty group")
        } else {
            let mut it = eq.into_iter();
            let mut base = it.next().expect("nonempty");
            for l in it {
                base.name = format!("{} & {}", base.name, l.name);
                if l.left == base.left {
                    base.left_cols.extend(l.left_cols);
                    base.right_cols.extend(l.right_cols);
                } else {
                    base.left_cols.extend(l.right_cols);
                    base.right_cols.extend(l.left_cols);
                }
            }
            base
        };
        graph_links.push(base);
        residual_links.extend(rest);
    }

    // Connectivity.
    let mut seen = vec![false; tables.len()];
    seen[root] = true;
    let mut queue = VecDeque::from([root]);
    while let Some(v) = queue.pop_front() {
        for l in &graph_links {
            let next = if l.left == v {
                l.right
            } else if l.right == v {
                l.left
            } else {
                continue;
            };
            if !seen[next] {
                seen[next] = true;
                queue.push_back(next);
            }
        }
    }
    if let Some(t) = seen.iter().position(|s| !s) {
        return Err(Error::DisconnectedGraph(tables[t].name.clone()));
    }

    // Cycles.
    if graph_links.len() + 1 > tables.len() {
        let graph: Vec<GraphEdge> = graph_links
            .iter()
            .enumerate()
            .map(|(i, l)| GraphEdge {
                id: i,
                a: l.left,
                b: l.right,
                name: l.name.clone(),
                removable: l.operator == Operator::Inner,
            })
            .collect();
        let stats = link_statistics(&tables, &graph_links)?;
        let rw = rewrite_cyclic(tables.len(), &graph, &stats)?;
        let mut keep = Vec::new();
        for (i, l) in graph_links.into_iter().enumerate() {
            if rw.removed.contains(&i) {
                residual_links.push(l);
            } else {
                keep.push(l);
            }
        }
        graph_links = keep;
    }

    // Orient the tree.
    let n = tables.len();
    let mut edges = Vec::new();
    let mut parent_edge = vec![None; n];
    let mut children = vec![Vec::new(); n];
    let mut top_down = vec![root];
    let mut placed = vec![false; n];
    placed[root] = true;
    let mut head = 0;
    while head < top_down.len() {
        let v = top_down[head];
        head += 1;
        for l in &graph_links {
            let (child, parent_is_left) = if l.left == v && !placed[l.right] {
                (l.right, true)
            } else if l.right == v && !placed[l.left] {
                (l.left, false)
            } else {
                continue;
            };
            let mode = match (l.operator, parent_is_left) {
                (Operator::Inner, _) => EdgeMode::INNER,
                (Operator::LeftOuter, true) | (Operator::RightOuter, false) => EdgeMode::Join {
                    child_null: true,
                    parent_null: false,
                },
                (Operator::LeftOuter, false) | (Operator::RightOuter, true) => EdgeMode::Join {
                    child_null: false,
                    parent_null: true,
                },
                (Operator::FullOuter, _) => EdgeMode::Join {
                    child_null: true,
                    parent_null: true,
                },
                (Operator::Semi, true) => EdgeMode::Semi,
                (Operator::Anti, true) => EdgeMode::Anti,
                (Operator::Semi | Operator::Anti, false) => {
                    return Err(Error::UnsupportedOperatorCombination(format!(
                        "{}: the filtered (right) side of a {} join must point away from the main table",
                        l.name, l.operator
                    )))
                }
            };
            if mode.parent_null() && v != root {
                return Err(Error::UnsupportedOperatorCombination(format!(
                    "{}: null rows on the parent side are only supported below the main table",
                    l.name
                )));
            }
            let (parent_cols, child_cols, cmp) = if parent_is_left {
                (l.left_cols.clone(), l.right_cols.clone(), l.cmp)
            } else {
                (l.right_cols.clone(), l.left_cols.clone(), l.cmp.flip())
            };
            let id = edges.len();
            edges.push(PlanEdge {
                parent: v,
                child,
                parent_cols,
                child_cols,
                mode,
                cmp,
                name: l.name.clone(),
            });
            parent_edge[child] = Some(id);
            children[v].push(id);
            placed[child] = true;
            top_down.push(child);
        }
    }
    debug_assert_eq!(top_down.len(), n);

    let mut reachable = vec![false; n];
    for &t in &top_down {
        reachable[t] = match parent_edge[t] {
            None => true,
            Some(e) => reachable[edges[e].parent] && !edges[e].mode.is_filter(),
        };
    }

    let mut residuals = Vec::new();
    for l in residual_links {
        if !(reachable[l.left] && reachable[l.right]) {
            return Err(Error::UnsupportedOperatorCombination(format!(
                "{}: cycle edge touches a table behind a semi/anti join",
                l.name
            )));
        }
        for (lc, rc) in l.left_cols.iter().zip(&l.right_cols) {
            residuals.push(ResidualPredicate {
                left: (l.left, *lc),
                right: (l.right, *rc),
                cmp: l.cmp,
                name: l.name.clone(),
            });
        }
    }

    let pass_budget = (0..n).map(|t| if t == root { 1 } else { 2 }).collect();
    Ok(ValidatedPlan {
        tables,
        weights,
        root,
        edges,
        parent_edge,
        children,
        top_down,
        reachable,
        residuals,
        pass_budget,
        warnings,
    })
}

fn numeric(row: &Row, col: usize) -> Option<f64> {
    row.get(col).and_then(|v| v.trim().parse().ok())
}

/// Exact `|X ⋈ Y|` for one link, with one scan of each endpoint table.
fn link_join_size(scanner: &Scanner, link: &Link) -> Result<f64> {
    let left: Vec<Row> = scanner.scan(link.left)?.collect::<Result<_>>()?;
    if link.cmp == Comparison::Eq {
        let mut counts: HashMap<Vec<u8>, f64> = HashMap::new();
        for row in scanner.scan(link.right)? {
            if let Some(k) = join_key(&row?, &link.right_cols) {
                *counts.entry(k).or_default() += 1.0;
            }
        }
        return Ok(left
            .iter()
            .filter_map(|r| join_key(r, &link.left_cols))
            .map(|k| counts.get(&k).copied().unwrap_or(0.0))
            .sum());
    }
    let (lc, rc) = (link.left_cols[0], link.right_cols[0]);
    let right: Vec<f64> = scanner
        .scan(link.right)?
        .map(|r| r.map(|r| numeric(&r, rc)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let mut size = 0.0;
    for r in &left {
        if let Some(x) = numeric(r, lc) {
            size += right.iter().filter(|&&y| link.cmp.holds(x, y)).count() as f64;
        }
    }
    Ok(size)
}

fn link_statistics(tables: &[TableRef], links: &[Link]) -> Result<BTreeMap<usize, EdgeStats>> {
    let scanner = Scanner::new(tables.to_vec());
    let mut rows = vec![None; tables.len()];
    let mut count = |t: TableId| -> Result<f64> {
        if let Some(c) = rows[t] {
            return Ok(c);
        }
        let c = scanner.scan(t)?.try_fold(0.0, |acc, r| r.map(|_| acc + 1.0))?;
        rows[t] = Some(c);
        Ok(c)
    };
    let mut stats = BTreeMap::new();
    for (i, l) in links.iter().enumerate() {
        if l.operator != Operator::Inner {
            continue;
        }
        stats.insert(
            i,
            EdgeStats {
                join_size: Some(link_join_size(&scanner, l)?),
                left_rows: Some(count(l.left)?),
                right_rows: Some(count(l.right)?),
            },
        );
    }
    Ok(stats)
}

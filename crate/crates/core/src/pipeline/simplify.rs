//! Pre-joining tables whose join is barely larger than the tables.
//!
//! Foreign-key style edges add nothing to the sampling problem: the join of
//! the two tables has about as many rows as the larger one. Merging them
//! into one materialized table shrinks the join graph and can break cycles
//! (parallel edges between the merged table and a third one become a single
//! composite edge).

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use csv::StringRecord;

use crate::error::{Error, Result};
use crate::ingest::Scanner;
use crate::joinindex::join_key;
use crate::model::{resolve_columns, ColumnRef, Comparison, JoinEdge, JoinQuery, Operator, TableRef, TableSource};

pub const DEFAULT_SIMPLIFY_BUDGET: f64 = 1.1;

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Simplified query. Merged tables live in temporary files that are removed
/// when this value is dropped.
#[derive(Debug)]
pub struct SimplifyOutcome {
    pub query: JoinQuery,
    /// Names of the merged tables, in merge order.
    pub merged: Vec<String>,
    files: Vec<PathBuf>,
}

impl Drop for SimplifyOutcome {
    fn drop(&mut self) {
        for f in &self.files {
            let _ = std::fs::remove_file(f);
        }
    }
}

fn qualify(t: &TableRef, column: &str) -> String {
    if t.qualified_columns {
        column.to_string()
    } else {
        format!("{}.{}", t.name, column)
    }
}

fn only_inner(q: &JoinQuery, table: &str) -> bool {
    q.edges
        .iter()
        .filter(|e| e.left.table == table || e.right.table == table)
        .all(|e| e.operator == Operator::Inner)
}

/// Columns of `a` and `b` joined by the equality edges between them, plus
/// the remaining comparisons as `(a col, b col, a cmp b)`.
struct PairCondition {
    a_cols: Vec<usize>,
    b_cols: Vec<usize>,
    filters: Vec<(usize, usize, Comparison)>,
}

fn pair_condition(q: &JoinQuery, a: usize, b: usize) -> Option<PairCondition> {
    let (ta, tb) = (&q.tables[a], &q.tables[b]);
    let mut cond = PairCondition {
        a_cols: Vec::new(),
        b_cols: Vec::new(),
        filters: Vec::new(),
    };
    for e in &q.edges {
        let (ac, bc, cmp) = if e.left.table == ta.name && e.right.table == tb.name {
            (&e.left.column, &e.right.column, e.comparison)
        } else if e.left.table == tb.name && e.right.table == ta.name {
            (&e.right.column, &e.left.column, e.comparison.flip())
        } else {
            continue;
        };
        let (ac, bc) = (ta.column_index(ac)?, tb.column_index(bc)?);
        if cmp == Comparison::Eq {
            cond.a_cols.push(ac);
            cond.b_cols.push(bc);
        } else {
            cond.filters.push((ac, bc, cmp));
        }
    }
    (!cond.a_cols.is_empty()).then_some(cond)
}

fn filters_hold(a: &StringRecord, b: &StringRecord, filters: &[(usize, usize, Comparison)]) -> bool {
    filters.iter().all(|&(ac, bc, cmp)| {
        let (x, y) = (a.get(ac).unwrap_or(""), b.get(bc).unwrap_or(""));
        if x.is_empty() || y.is_empty() {
            return false;
        }
        match cmp {
            Comparison::Eq => x == y,
            Comparison::Ne => x != y,
            _ => match (x.trim().parse::<f64>(), y.trim().parse::<f64>()) {
                (Ok(x), Ok(y)) => cmp.holds(x, y),
                _ => false,
            },
        }
    })
}

/// Rows of `b` by equality key.
fn build_side(scanner: &Scanner, b: usize, cols: &[usize]) -> Result<(HashMap<Vec<u8>, Vec<StringRecord>>, u64)> {
    let mut map: HashMap<Vec<u8>, Vec<StringRecord>> = HashMap::new();
    let mut rows = 0;
    for row in scanner.scan(b)? {
        let row = row?;
        rows += 1;
        if let Some(k) = join_key(&row, cols) {
            map.entry(k).or_default().push(row.values);
        }
    }
    Ok((map, rows))
}

/// `(|a ⋈ b|, |a|, |b|)`.
fn pair_sizes(scanner: &Scanner, a: usize, b: usize, cond: &PairCondition) -> Result<(u64, u64, u64)> {
    let (map, b_rows) = build_side(scanner, b, &cond.b_cols)?;
    let (mut joined, mut a_rows) = (0u64, 0u64);
    for row in scanner.scan(a)? {
        let row = row?;
        a_rows += 1;
        if let Some(matches) = join_key(&row, &cond.a_cols).and_then(|k| map.get(&k)) {
            joined += matches
                .iter()
                .filter(|m| filters_hold(&row.values, m, &cond.filters))
                .count() as u64;
        }
    }
    Ok((joined, a_rows, b_rows))
}

fn materialize(scanner: &Scanner, a: usize, b: usize, cond: &PairCondition, path: &Path, header: &[String]) -> Result<()> {
    let temp_err = |e: std::io::Error| Error::TempStorage(format!("{}: {e}", path.display()));
    let file = File::create(path).map_err(temp_err)?;
    let mut w = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .from_writer(BufWriter::new(file));
    let csv_err = |e: csv::Error| Error::TempStorage(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(csv_err)?;
    let (map, _) = build_side(scanner, b, &cond.b_cols)?;
    for row in scanner.scan(a)? {
        let row = row?;
        let Some(matches) = join_key(&row, &cond.a_cols).and_then(|k| map.get(&k)) else {
            continue;
        };
        for m in matches {
            if filters_hold(&row.values, m, &cond.filters) {
                w.write_record(row.values.iter().chain(m.iter())).map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(temp_err)
}

/// Greedily merges inner equi-joined table pairs while their join has at
/// most `budget · max(|a|, |b|)` rows. Only tables whose edges are all
/// inner joins take part.
pub fn simplify_join_graph(query: &JoinQuery, budget: f64, temp_dir: Option<&Path>) -> Result<SimplifyOutcome> {
    let mut q = query.clone();
    for t in &mut q.tables {
        resolve_columns(t)?;
    }
    let dir = temp_dir.map(Path::to_path_buf).unwrap_or_else(std::env::temp_dir);
    let mut out = SimplifyOutcome {
        query: q,
        merged: Vec::new(),
        files: Vec::new(),
    };
    loop {
        let q = &out.query;
        let scanner = Scanner::new(q.tables.clone());
        let mut best: Option<(f64, usize, usize, PairCondition)> = None;
        for a in 0..q.tables.len() {
            for b in a + 1..q.tables.len() {
                if !(only_inner(q, &q.tables[a].name) && only_inner(q, &q.tables[b].name)) {
                    continue;
                }
                let Some(cond) = pair_condition(q, a, b) else { continue };
                let (joined, ra, rb) = pair_sizes(&scanner, a, b, &cond)?;
                let ratio = joined as f64 / ra.max(rb).max(1) as f64;
                if ratio <= budget && best.as_ref().is_none_or(|(r, ..)| ratio < *r) {
                    best = Some((ratio, a, b, cond));
                }
            }
        }
        let Some((_, a, b, cond)) = best else { break };

        let (ta, tb) = (q.tables[a].clone(), q.tables[b].clone());
        let name = format!("{}+{}", ta.name, tb.name);
        let header: Vec<String> = ta
            .columns
            .iter()
            .map(|c| qualify(&ta, c))
            .chain(tb.columns.iter().map(|c| qualify(&tb, c)))
            .collect();
        std::fs::create_dir_all(&dir).map_err(|e| Error::TempStorage(format!("{}: {e}", dir.display())))?;
        let path = dir.join(format!(
            "joinsample-{}-{}.tsv",
            std::process::id(),
            TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        out.files.push(path.clone());
        materialize(&scanner, a, b, &cond, &path, &header)?;

        let rename = |c: &ColumnRef| -> ColumnRef {
            if c.table == ta.name {
                ColumnRef::new(name.clone(), qualify(&ta, &c.column))
            } else if c.table == tb.name {
                ColumnRef::new(name.clone(), qualify(&tb, &c.column))
            } else {
                c.clone()
            }
        };
        let q = &mut out.query;
        q.edges = q
            .edges
            .iter()
            .filter(|e| {
                let pair = [e.left.table.as_str(), e.right.table.as_str()];
                !(pair.contains(&ta.name.as_str()) && pair.contains(&tb.name.as_str()))
            })
            .map(|e| JoinEdge {
                left: rename(&e.left),
                right: rename(&e.right),
                ..e.clone()
            })
            .collect();
        q.weights = q
            .weights
            .iter()
            .map(|(c, w)| (rename(c), w.clone()))
            .collect::<BTreeMap<_, _>>();
        if q.main == ta.name || q.main == tb.name {
            q.main = name.clone();
        }
        q.tables[a] = TableRef {
            name: name.clone(),
            source: TableSource::File {
                path,
                delimiter: b'\t',
            },
            columns: header,
            null_weight: 1.0,
            qualified_columns: true,
        };
        q.tables.remove(b);
        out.merged.push(name);
    }
    Ok(out)
}

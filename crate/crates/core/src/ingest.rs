//! Streaming access to delimited table files, pass accounting and row weights.
//!
//! Every table is read strictly sequentially. A [`Scanner`] owns the table
//! descriptors of one run and counts how often each table has been scanned to
//! the end, so the pass budget of the samplers can be checked after the fact.

use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use csv::StringRecord;

use crate::error::{Error, Result};
use crate::model::{Comparison, PredicateValue, TableRef, TableSource, WeightExpr};

pub const BUFFER_ENV: &str = "JOINSAMPLE_BUFFER_BYTES";
const DEFAULT_BUFFER_BYTES: usize = 1 << 20;

/// One base-table row. The synthetic null row of a table is not a `Row`;
/// it is represented as `None` wherever rows are optional.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Row {
    pub ordinal: u64,
    pub values: StringRecord,
}

impl Row {
    pub fn new(ordinal: u64, values: StringRecord) -> Self {
        Self { ordinal, values }
    }

    /// Cell value; empty cells are NULL and yield `None`.
    pub fn get(&self, column: usize) -> Option<&str> {
        self.values.get(column).filter(|v| !v.is_empty())
    }
}

/// In-memory table, mostly for tests and generated fixtures.
#[derive(Debug, Clone, Default)]
pub struct MemTable {
    columns: Vec<String>,
    rows: Vec<StringRecord>,
}

impl MemTable {
    pub fn new<S: AsRef<str>>(columns: &[S]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn from_rows<C: AsRef<str>, S: AsRef<str>, R: AsRef<[S]>>(columns: &[C], rows: &[R]) -> Self {
        let mut t = Self::new(columns);
        for r in rows {
            t.push(r.as_ref());
        }
        t
    }

    pub fn push<S: AsRef<str>>(&mut self, values: &[S]) {
        assert_eq!(values.len(), self.columns.len(), "row width must match columns");
        self.rows.push(values.iter().map(|v| v.as_ref()).collect());
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Completed sequential scans per table.
#[derive(Debug, Default)]
pub struct PassCounter {
    counts: Vec<AtomicU64>,
}

impl PassCounter {
    pub fn new(tables: usize) -> Self {
        Self {
            counts: (0..tables).map(|_| AtomicU64::new(0)).collect(),
        }
    }

    pub fn get(&self, table: usize) -> u64 {
        self.counts[table].load(Ordering::Relaxed)
    }

    pub fn snapshot(&self) -> Vec<u64> {
        self.counts.iter().map(|c| c.load(Ordering::Relaxed)).collect()
    }

    fn complete(&self, table: usize) {
        self.counts[table].fetch_add(1, Ordering::Relaxed);
    }
}

fn buffer_bytes() -> usize {
    std::env::var(BUFFER_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&b: &usize| b > 0)
        .unwrap_or(DEFAULT_BUFFER_BYTES)
}

fn csv_reader(path: &Path, delimiter: u8, buffer: usize) -> Result<csv::Reader<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(true)
        .buffer_capacity(buffer)
        .from_reader(BufReader::with_capacity(buffer, file)))
}

/// Reads only the header row of a delimited file.
pub fn read_header(path: &Path, delimiter: u8) -> Result<Vec<String>> {
    let mut rdr = csv_reader(path, delimiter, 64 * 1024)?;
    let headers = rdr.headers().map_err(|e| Error::Csv {
        table: path.display().to_string(),
        source: e,
    })?;
    Ok(headers.iter().map(str::to_string).collect())
}

/// Hands out sequential row streams over a fixed set of tables.
#[derive(Debug)]
pub struct Scanner {
    tables: Vec<TableRef>,
    passes: Arc<PassCounter>,
    buffer: usize,
}

impl Scanner {
    pub fn new(tables: Vec<TableRef>) -> Self {
        let passes = Arc::new(PassCounter::new(tables.len()));
        Self {
            tables,
            passes,
            buffer: buffer_bytes(),
        }
    }

    pub fn passes(&self) -> &PassCounter {
        &self.passes
    }

    pub fn table(&self, id: usize) -> &TableRef {
        &self.tables[id]
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    /// Opens a new pass over table `id`. The pass is counted once the stream
    /// has been read to exhaustion.
    pub fn scan(&self, id: usize) -> Result<RowStream> {
        let table = &self.tables[id];
        let inner = match &table.source {
            TableSource::File { path, delimiter } => {
                let mut rdr = csv_reader(path, *delimiter, self.buffer)?;
                let headers = rdr
                    .headers()
                    .map_err(|e| Error::Csv {
                        table: table.name.clone(),
                        source: e,
                    })?
                    .clone();
                if !table.columns.is_empty()
                    && (headers.len() != table.columns.len()
                        || headers.iter().zip(&table.columns).any(|(h, c)| h != c))
                {
                    return Err(Error::SchemaMismatch {
                        table: table.name.clone(),
                        line: 1,
                        detail: format!(
                            "header {:?} does not match declared columns {:?}",
                            headers.iter().collect::<Vec<_>>(),
                            table.columns
                        ),
                    });
                }
                Source::File(Box::new(rdr))
            }
            TableSource::Memory(mem) => Source::Memory(Arc::clone(mem), 0),
        };
        Ok(RowStream {
            inner,
            table: id,
            name: table.name.clone(),
            width: table.columns.len(),
            next_ordinal: 0,
            record: StringRecord::new(),
            passes: Arc::clone(&self.passes),
            done: false,
        })
    }
}

enum Source {
    File(Box<csv::Reader<BufReader<File>>>),
    Memory(Arc<MemTable>, usize),
}

/// Single-consumer sequential iterator over one table.
pub struct RowStream {
    inner: Source,
    table: usize,
    name: String,
    width: usize,
    next_ordinal: u64,
    record: StringRecord,
    passes: Arc<PassCounter>,
    done: bool,
}

impl RowStream {
    fn finish(&mut self) -> Option<Result<Row>> {
        if !self.done {
            self.done = true;
            self.passes.complete(self.table);
        }
        None
    }
}

impl Iterator for RowStream {
    type Item = Result<Row>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let values = match &mut self.inner {
            Source::Memory(mem, pos) => match mem.rows.get(*pos) {
                Some(r) => {
                    *pos += 1;
                    r.clone()
                }
                None => return self.finish(),
            },
            Source::File(rdr) => match rdr.read_record(&mut self.record) {
                Ok(true) => {
                    if self.record.len() != self.width {
                        self.done = true;
                        let line = self.record.position().map_or(0, |p| p.line());
                        return Some(Err(Error::SchemaMismatch {
                            table: self.name.clone(),
                            line,
                            detail: format!(
                                "expected {} fields, found {}",
                                self.width,
                                self.record.len()
                            ),
                        }));
                    }
                    self.record.clone()
                }
                Ok(false) => return self.finish(),
                Err(e) => {
                    self.done = true;
                    return Some(Err(Error::Csv {
                        table: self.name.clone(),
                        source: e,
                    }));
                }
            },
        };
        let row = Row::new(self.next_ordinal, values);
        self.next_ordinal += 1;
        Some(Ok(row))
    }
}

#[derive(Debug, Clone)]
enum Term {
    Constant(f64),
    Identity,
    Linear(f64, f64),
    Power { base: f64, scale: f64 },
    Lookup(Arc<HashMap<String, f64>>),
    NumericPredicate(Comparison, f64),
    TextPredicate { equal: bool, value: String },
}

/// Compiled per-column weight expressions of one table.
#[derive(Debug, Clone)]
pub struct TableWeights {
    table: String,
    terms: Vec<(usize, String, Term)>,
    null_weight: f64,
}

impl TableWeights {
    /// All rows weigh 1 (null row included).
    pub fn unit(table: impl Into<String>) -> Self {
        Self {
            table: table.into(),
            terms: Vec::new(),
            null_weight: 1.0,
        }
    }

    pub fn compile<'a>(
        table: &TableRef,
        exprs: impl IntoIterator<Item = (&'a str, &'a WeightExpr)>,
    ) -> Result<Self> {
        if !(table.null_weight.is_finite() && table.null_weight >= 0.0) {
            return Err(Error::InvalidQuery(format!(
                "null weight of `{}` must be finite and nonnegative",
                table.name
            )));
        }
        let mut terms = Vec::new();
        for (column, expr) in exprs {
            let idx = table
                .column_index(column)
                .ok_or_else(|| Error::UnknownColumn {
                    table: table.name.clone(),
                    column: column.to_string(),
                })?;
            let term = match expr {
                WeightExpr::Constant(c) => Term::Constant(*c),
                WeightExpr::Identity => Term::Identity,
                WeightExpr::Linear { a, b } => Term::Linear(*a, *b),
                WeightExpr::Power { base, scale } => Term::Power {
                    base: *base,
                    scale: *scale,
                },
                WeightExpr::Lookup(path) => Term::Lookup(Arc::new(load_lookup(path)?)),
                WeightExpr::Predicate {
                    cmp,
                    value: PredicateValue::Number(v),
                } => Term::NumericPredicate(*cmp, *v),
                WeightExpr::Predicate {
                    cmp,
                    value: PredicateValue::Text(s),
                } => match cmp {
                    Comparison::Eq | Comparison::Ne => Term::TextPredicate {
                        equal: *cmp == Comparison::Eq,
                        value: s.clone(),
                    },
                    _ => {
                        return Err(Error::InvalidQuery(format!(
                            "ordered predicate on `{}.{column}` needs a numeric constant",
                            table.name
                        )))
                    }
                },
            };
            terms.push((idx, column.to_string(), term));
        }
        Ok(Self {
            table: table.name.clone(),
            terms,
            null_weight: table.null_weight,
        })
    }

    pub fn null_weight(&self) -> f64 {
        self.null_weight
    }

    pub fn is_trivial(&self) -> bool {
        self.terms.is_empty()
    }

    fn numeric(&self, row: &Row, idx: usize, column: &str) -> Result<f64> {
        let raw = row.values.get(idx).unwrap_or("");
        raw.trim().parse::<f64>().map_err(|_| Error::NonNumeric {
            table: self.table.clone(),
            column: column.to_string(),
            value: raw.to_string(),
        })
    }

    /// Product of the column weights of `row`.
    pub fn eval(&self, row: &Row) -> Result<f64> {
        let mut w = 1.0;
        for (idx, column, term) in &self.terms {
            let f = match term {
                Term::Constant(c) => *c,
                Term::Identity => self.numeric(row, *idx, column)?,
                Term::Linear(a, b) => a * self.numeric(row, *idx, column)? + b,
                Term::Power { base, scale } => base.powf(scale * self.numeric(row, *idx, column)?),
                Term::Lookup(map) => {
                    let raw = row.values.get(*idx).unwrap_or("");
                    *map.get(raw).ok_or_else(|| Error::LookupMiss {
                        table: self.table.clone(),
                        column: column.clone(),
                        value: raw.to_string(),
                    })?
                }
                Term::NumericPredicate(cmp, v) => {
                    if cmp.holds(self.numeric(row, *idx, column)?, *v) {
                        1.0
                    } else {
                        0.0
                    }
                }
                Term::TextPredicate { equal, value } => {
                    let raw = row.values.get(*idx).unwrap_or("");
                    if (raw == value) == *equal {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            if f < 0.0 {
                return Err(Error::NegativeWeight {
                    table: self.table.clone(),
                    row: row.ordinal,
                    value: f,
                });
            }
            w *= f;
        }
        if !w.is_finite() {
            return Err(Error::NonFiniteWeight {
                table: self.table.clone(),
                row: row.ordinal,
                value: w,
            });
        }
        Ok(w)
    }
}

/// Row weight; `None` is the table's null row.
pub fn eval_weight(row: Option<&Row>, weights: &TableWeights) -> Result<f64> {
    match row {
        Some(r) => weights.eval(r),
        None => Ok(weights.null_weight()),
    }
}

fn load_lookup(path: &Path) -> Result<HashMap<String, f64>> {
    let mut rdr = csv_reader(path, b',', 64 * 1024)?;
    let mut map = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Csv {
            table: path.display().to_string(),
            source: e,
        })?;
        let (Some(k), Some(v)) = (rec.get(0), rec.get(1)) else {
            return Err(Error::SchemaMismatch {
                table: path.display().to_string(),
                line: rec.position().map_or(0, |p| p.line()),
                detail: "lookup rows need `value,weight`".into(),
            });
        };
        let w: f64 = v.trim().parse().map_err(|_| Error::NonNumeric {
            table: path.display().to_string(),
            column: "weight".into(),
            value: v.to_string(),
        })?;
        map.insert(k.to_string(), w);
    }
    Ok(map)
}

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::MemTable;

/// Join operator of an edge, read as `left <op> right`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Operator {
    Inner,
    LeftOuter,
    RightOuter,
    FullOuter,
    Semi,
    Anti,
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Operator::Inner => "inner",
            Operator::LeftOuter => "left-outer",
            Operator::RightOuter => "right-outer",
            Operator::FullOuter => "full-outer",
            Operator::Semi => "semi",
            Operator::Anti => "anti",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Comparison {
    #[serde(rename = "=", alias = "==")]
    Eq,
    #[serde(rename = "!=", alias = "<>", alias = "≠")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=", alias = "≤")]
    Le,
    #[serde(rename = ">=", alias = "≥")]
    Ge,
    #[serde(rename = ">")]
    Gt,
}

impl Comparison {
    /// The comparison with its operands swapped: `a op b` iff `b op.flip() a`.
    pub fn flip(self) -> Self {
        match self {
            Comparison::Lt => Comparison::Gt,
            Comparison::Le => Comparison::Ge,
            Comparison::Ge => Comparison::Le,
            Comparison::Gt => Comparison::Lt,
            other => other,
        }
    }

    pub fn is_ordered(self) -> bool {
        !matches!(self, Comparison::Eq | Comparison::Ne)
    }

    pub fn holds(self, a: f64, b: f64) -> bool {
        match self {
            Comparison::Eq => a == b,
            Comparison::Ne => a != b,
            Comparison::Lt => a < b,
            Comparison::Le => a <= b,
            Comparison::Ge => a >= b,
            Comparison::Gt => a > b,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Comparison::Eq => "=",
            Comparison::Ne => "!=",
            Comparison::Lt => "<",
            Comparison::Le => "<=",
            Comparison::Ge => ">=",
            Comparison::Gt => ">",
        }
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// `table.column`; the first dot separates the two parts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ColumnRef {
    pub table: String,
    pub column: String,
}

impl ColumnRef {
    pub fn new(table: impl Into<String>, column: impl Into<String>) -> Self {
        Self {
            table: table.into(),
            column: column.into(),
        }
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.table, self.column)
    }
}

impl FromStr for ColumnRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once('.') {
            Some((t, c)) if !t.is_empty() && !c.is_empty() => Ok(ColumnRef::new(t, c)),
            _ => Err(Error::InvalidQuery(format!(
                "`{s}` is not a `table.column` reference"
            ))),
        }
    }
}

impl Serialize for ColumnRef {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ColumnRef {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinEdge {
    pub left: ColumnRef,
    pub right: ColumnRef,
    #[serde(default = "default_operator", rename = "op")]
    pub operator: Operator,
    #[serde(default = "default_comparison", rename = "cmp")]
    pub comparison: Comparison,
}

fn default_operator() -> Operator {
    Operator::Inner
}

fn default_comparison() -> Comparison {
    Comparison::Eq
}

impl JoinEdge {
    pub fn new(left: ColumnRef, right: ColumnRef, operator: Operator, comparison: Comparison) -> Self {
        Self {
            left,
            right,
            operator,
            comparison,
        }
    }

    pub fn inner(left: &str, right: &str) -> Result<Self> {
        Ok(Self::new(left.parse()?, right.parse()?, Operator::Inner, Comparison::Eq))
    }

    /// Display name, also used for lexicographic tie breaking.
    pub fn name(&self) -> String {
        let op = match self.operator {
            Operator::Inner => String::new(),
            other => format!(" {other} "),
        };
        format!("{}{}{}{}", self.left, op, self.comparison, self.right)
    }
}

/// Right-hand side of a predicate weight: numbers compare numerically,
/// strings byte-wise (equality only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PredicateValue {
    Number(f64),
    Text(String),
}

/// Unary per-column weight expression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightExpr {
    Constant(f64),
    Identity,
    Linear {
        a: f64,
        b: f64,
    },
    /// `base^(scale * x)`.
    Power {
        base: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// Two-column delimited file `value,weight` with a header row.
    Lookup(PathBuf),
    Predicate {
        cmp: Comparison,
        value: PredicateValue,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone)]
pub enum TableSource {
    File { path: PathBuf, delimiter: u8 },
    Memory(Arc<MemTable>),
}

#[derive(Debug, Clone)]
pub struct TableRef {
    pub name: String,
    pub source: TableSource,
    /// Empty means "take the header of the file".
    pub columns: Vec<String>,
    pub null_weight: f64,
    /// Columns already carry qualified `table.column` names (merged tables).
    pub qualified_columns: bool,
}

impl TableRef {
    pub fn file(name: impl Into<String>, path: impl Into<PathBuf>, columns: Vec<String>) -> Self {
        Self {
            name: name.into(),
            source: TableSource::File {
                path: path.into(),
                delimiter: b',',
            },
            columns,
            null_weight: 1.0,
            qualified_columns: false,
        }
    }

    pub fn in_memory(name: impl Into<String>, table: MemTable) -> Self {
        let columns = table.columns().to_vec();
        Self {
            name: name.into(),
            source: TableSource::Memory(Arc::new(table)),
            columns,
            null_weight: 1.0,
            qualified_columns: false,
        }
    }

    pub fn with_null_weight(mut self, w: f64) -> Self {
        self.null_weight = w;
        self
    }

    pub fn column_index(&self, column: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == column)
    }

    /// Name written in output headers for one of this table's columns.
    pub fn output_name(&self, column: &str) -> String {
        if self.qualified_columns {
            column.to_string()
        } else {
            format!("{}.{}", self.name, column)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Stream,
    Economic,
    Auto,
    /// Foreign-key rejection sampler only (falls back to `stream` on stall).
    Fk,
    /// Equi-hash relaxation only.
    Hashed,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::Stream => "stream",
            Method::Economic => "economic",
            Method::Auto => "auto",
            Method::Fk => "fk",
            Method::Hashed => "hashed",
        };
        f.write_str(s)
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::InvalidQuery(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HashedOptions {
    /// Hash universe size (rounded up to a power of two).
    pub universe: Option<u64>,
    pub oversample: Option<f64>,
    pub max_rounds: Option<usize>,
    /// Upper bound on draws requested per round.
    pub memory_limit: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct QueryOptions {
    pub hashed: HashedOptions,
    pub temp_dir: Option<PathBuf>,
    /// Pre-join budget for graph simplification.
    pub simplify_budget: Option<f64>,
}

/// Declarative description of a weighted join sampling request.
#[derive(Debug, Clone)]
pub struct JoinQuery {
    pub tables: Vec<TableRef>,
    pub edges: Vec<JoinEdge>,
    pub main: String,
    pub weights: BTreeMap<ColumnRef, WeightExpr>,
    pub sample_size: usize,
    pub seed: u64,
    pub method: Method,
    pub options: QueryOptions,
}

impl JoinQuery {
    pub fn new(tables: Vec<TableRef>, edges: Vec<JoinEdge>, main: impl Into<String>) -> Self {
        Self {
            tables,
            edges,
            main: main.into(),
            weights: BTreeMap::new(),
            sample_size: 1,
            seed: 0,
            method: Method::Stream,
            options: QueryOptions::default(),
        }
    }

    pub fn with_weight(mut self, column: &str, expr: WeightExpr) -> Result<Self> {
        self.weights.insert(column.parse()?, expr);
        Ok(self)
    }

    pub fn with_sample(mut self, n: usize, seed: u64) -> Self {
        self.sample_size = n;
        self.seed = seed;
        self
    }

    pub fn table(&self, name: &str) -> Option<&TableRef> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_json_str(&text, base)
    }

    /// Parses the JSON spec document; relative paths resolve against `base_dir`.
    pub fn from_json_str(text: &str, base_dir: &Path) -> Result<Self> {
        let doc: SpecDocument = serde_json::from_str(text)?;
        doc.into_query(base_dir)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecTable {
    name: String,
    path: PathBuf,
    #[serde(default)]
    columns: Vec<String>,
    #[serde(default = "one")]
    null_weight: f64,
    #[serde(default)]
    delimiter: Option<char>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecSample {
    n: usize,
    #[serde(default)]
    seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecDocument {
    tables: Vec<SpecTable>,
    #[serde(default)]
    joins: Vec<JoinEdge>,
    main: String,
    #[serde(default)]
    weights: BTreeMap<ColumnRef, WeightExpr>,
    sample: SpecSample,
    #[serde(default)]
    method: Method,
    #[serde(default)]
    hashed: HashedOptions,
    #[serde(default)]
    temp_dir: Option<PathBuf>,
    #[serde(default)]
    simplify_budget: Option<f64>,
}

impl SpecDocument {
    fn into_query(self, base: &Path) -> Result<JoinQuery> {
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        let mut tables = Vec::with_capacity(self.tables.len());
        for t in self.tables {
            let delimiter = match t.delimiter {
                None => b',',
                Some(c) if c.is_ascii() => c as u8,
                Some(c) => {
                    return Err(Error::InvalidQuery(format!(
                        "delimiter `{c}` of table `{}` is not a single byte",
                        t.name
                    )))
                }
            };
            tables.push(TableRef {
                name: t.name,
                source: TableSource::File {
                    path: resolve(t.path),
                    delimiter,
                },
                columns: t.columns,
                null_weight: t.null_weight,
                qualified_columns: false,
            });
        }
        let weights = self
            .weights
            .into_iter()
            .map(|(k, v)| {
                let v = match v {
                    WeightExpr::Lookup(p) => WeightExpr::Lookup(resolve(p)),
                    other => other,
                };
                (k, v)
            })
            .collect();
        Ok(JoinQuery {
            tables,
            edges: self.joins,
            main: self.main,
            weights,
            sample_size: self.sample.n,
            seed: self.sample.seed,
            method: self.method,
            options: QueryOptions {
                hashed: self.hashed,
                temp_dir: self.temp_dir.map(resolve),
                simplify_budget: self.simplify_budget,
            },
        })
    }
}

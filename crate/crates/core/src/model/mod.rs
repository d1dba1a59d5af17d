//! Query, plan and weight types; validation and cycle rewriting.

pub mod cyclic;
mod plan;
mod query;

pub use cyclic::{choose_break_edge, rewrite_cyclic, CycleRewrite, EdgeStats, GraphEdge};
pub(crate) use plan::resolve_columns;
pub use plan::{validate, EdgeMode, PlanEdge, ResidualPredicate, TableId, ValidatedPlan};
pub use query::{
    ColumnRef, Comparison, HashedOptions, JoinEdge, JoinQuery, Method, Operator, PredicateValue,
    QueryOptions, TableRef, TableSource, WeightExpr,
};

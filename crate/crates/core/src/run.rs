//! Query-level entry point: simplification, method choice and fallbacks.

use log::{info, warn};

use crate::error::{Error, Result};
use crate::ingest::Scanner;
use crate::model::{validate, JoinQuery, Method, ValidatedPlan};
use crate::pipeline::{
    collect_statistics, cyclic_sample, fk_economic_sample, hashed_join_sample, select_method, simplify_join_graph,
    stream_sample, CyclicConfig, HashedJoinConfig, SampleSet, Sampler, SimplifyOutcome, DEFAULT_SIMPLIFY_BUDGET,
};

/// A validated query ready to be sampled any number of times.
///
/// Holds the simplified query (if any), so merged temporary tables stay on
/// disk for as long as the runner lives.
#[derive(Debug)]
pub struct Runner {
    plan: ValidatedPlan,
    /// Fixed sampler; `None` picks one per sample size.
    choice: Option<Sampler>,
    explicit: bool,
    hashed: HashedJoinConfig,
    merged: Vec<String>,
    _simplified: Option<SimplifyOutcome>,
}

impl Runner {
    /// `economic` uses the rejection sampler when every edge is a
    /// foreign-key lookup; otherwise it pre-joins foreign-key style edges
    /// and picks a sampler the way `auto` does. An explicit simplification
    /// budget in the query turns pre-joining on for every method.
    pub fn new(query: &JoinQuery) -> Result<Self> {
        let mut budget = query.options.simplify_budget;
        let mut choice = match query.method {
            Method::Stream => Some(Sampler::Stream),
            Method::Fk => Some(Sampler::Fk),
            Method::Hashed => Some(Sampler::Hashed),
            Method::Auto | Method::Economic => None,
        };
        if query.method == Method::Economic && budget.is_none() {
            let plan = validate(query)?;
            if is_foreign_key_plan(&plan)? {
                choice = Some(Sampler::Fk);
            } else {
                budget = Some(DEFAULT_SIMPLIFY_BUDGET);
            }
        }
        let (plan, merged, simplified) = match budget {
            Some(b) => {
                let outcome = simplify_join_graph(query, b, query.options.temp_dir.as_deref())?;
                if !outcome.merged.is_empty() {
                    info!("pre-joined tables: {}", outcome.merged.join(", "));
                }
                (validate(&outcome.query)?, outcome.merged.clone(), Some(outcome))
            }
            None => (validate(query)?, Vec::new(), None),
        };
        for w in &plan.warnings {
            warn!("{w}");
        }
        Ok(Self {
            plan,
            choice,
            explicit: matches!(query.method, Method::Fk | Method::Hashed),
            hashed: HashedJoinConfig::from(&query.options.hashed),
            merged,
            _simplified: simplified,
        })
    }

    pub fn plan(&self) -> &ValidatedPlan {
        &self.plan
    }

    /// Names of tables created by pre-joining.
    pub fn merged(&self) -> &[String] {
        &self.merged
    }

    /// The sampler `sample` will start with.
    pub fn sampler(&self, n: usize) -> Result<Sampler> {
        if !self.plan.is_acyclic() {
            return Ok(Sampler::Cyclic);
        }
        if let Some(s) = self.choice {
            return Ok(s);
        }
        let scanner = Scanner::new(self.plan.tables.clone());
        Ok(select_method(&self.plan, &collect_statistics(&self.plan, &scanner)?, n))
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<SampleSet> {
        let sampler = self.sampler(n)?;
        let scanner = Scanner::new(self.plan.tables.clone());
        let first = match sampler {
            Sampler::Stream => return stream_sample(&self.plan, &scanner, n, seed),
            Sampler::Cyclic => return cyclic_sample(&self.plan, &scanner, n, seed, &CyclicConfig::default()),
            Sampler::Fk => fk_economic_sample(&self.plan, &scanner, n, seed),
            Sampler::Hashed => hashed_join_sample(&self.plan, &scanner, n, seed, &self.hashed),
        };
        match first {
            Ok(s) => Ok(s),
            Err(e) if falls_back(&e, self.explicit) => {
                warn!("{e}; falling back to the stream sampler");
                let scanner = Scanner::new(self.plan.tables.clone());
                let mut s = stream_sample(&self.plan, &scanner, n, seed)?;
                s.stats.fallback = Some(e.to_string());
                Ok(s)
            }
            Err(e) => Err(e),
        }
    }
}

/// Acyclic inner equi-joins where no two child rows share a join value.
fn is_foreign_key_plan(plan: &ValidatedPlan) -> Result<bool> {
    if !plan.is_acyclic() || !plan.all_inner_equi() || plan.edges.is_empty() {
        return Ok(false);
    }
    let scanner = Scanner::new(plan.tables.clone());
    Ok(collect_statistics(plan, &scanner)?.child_key_unique.iter().all(|&u| u))
}

/// Stalls always fall back; key violations and unsupported shapes only
/// when the sampler was picked automatically.
fn falls_back(e: &Error, explicit: bool) -> bool {
    match e {
        Error::AcceptanceStall { .. } | Error::RetryBudgetExceeded { .. } => true,
        Error::KeyViolation(_) | Error::UnsupportedOperatorCombination(_) => !explicit,
        _ => false,
    }
}

/// Samples `query.sample_size` trees with `query.seed`.
pub fn run(query: &JoinQuery) -> Result<SampleSet> {
    Runner::new(query)?.sample(query.sample_size, query.seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::MemTable;
    use crate::model::{JoinEdge, TableRef, WeightExpr};

    fn fk_query(method: Method, weight: WeightExpr) -> JoinQuery {
        let orders: Vec<[String; 2]> = (0..40).map(|i| [i.to_string(), (i % 4).to_string()]).collect();
        let custs: Vec<[String; 1]> = (0..4).map(|i| [i.to_string()]).collect();
        let mut q = JoinQuery::new(
            vec![
                TableRef::in_memory("O", MemTable::from_rows(&["id", "cust"], &orders)),
                TableRef::in_memory("C", MemTable::from_rows(&["cust"], &custs)),
            ],
            vec![JoinEdge::inner("O.cust", "C.cust").unwrap()],
            "O",
        )
        .with_weight("O.id", weight)
        .unwrap()
        .with_sample(50, 3);
        q.method = method;
        q
    }

    #[test]
    fn fk_stall_falls_back_to_stream() {
        let q = fk_query(Method::Fk, WeightExpr::Power { base: 10.0, scale: -1.0 });
        let s = run(&q).unwrap();
        assert_eq!(s.len(), 50);
        assert_eq!(s.stats.method, "stream");
        assert!(s.stats.fallback.is_some());
    }

    #[test]
    fn auto_picks_fk_for_flat_weights() {
        let q = fk_query(Method::Auto, WeightExpr::Constant(1.0));
        let s = run(&q).unwrap();
        assert_eq!(s.stats.method, "fk");
        assert_eq!(s.stats.acceptance_rate, Some(1.0));
    }

    #[test]
    fn economic_uses_rejection_on_foreign_keys() {
        let q = fk_query(Method::Economic, WeightExpr::Identity);
        let r = Runner::new(&q).unwrap();
        assert!(r.merged().is_empty());
        let s = r.sample(20, 1).unwrap();
        assert_eq!(s.stats.method, "fk");
        assert!(s.stats.acceptance_rate.is_some());
    }

    #[test]
    fn economic_pre_joins_otherwise() {
        // From the customer side every key has ten orders.
        let mut q = fk_query(Method::Economic, WeightExpr::Identity);
        q.main = "C".into();
        let r = Runner::new(&q).unwrap();
        assert_eq!(r.merged(), ["O+C"]);
        assert_eq!(r.plan().tables.len(), 1);
        assert_eq!(r.sample(20, 1).unwrap().len(), 20);
    }

    #[test]
    fn explicit_fk_reports_key_violations() {
        let mut q = fk_query(Method::Fk, WeightExpr::Constant(1.0));
        q.tables[1] = TableRef::in_memory("C", MemTable::from_rows(&["cust"], &[["0"], ["0"]]));
        assert!(matches!(run(&q), Err(Error::KeyViolation(_))));
        q.method = Method::Auto;
        // Duplicate keys rule out the rejection sampler.
        assert_eq!(run(&q).unwrap().stats.method, "stream");
    }
}

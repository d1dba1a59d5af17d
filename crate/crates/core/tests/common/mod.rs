//! Fixtures and statistical helpers shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use joinsample::gof::chi_square_gof;
use joinsample::ingest::MemTable;
use joinsample::model::{Comparison, JoinEdge, JoinQuery, Operator, TableRef, ValidatedPlan, WeightExpr};
use joinsample::oracle::EnumeratedJoin;
use joinsample::pipeline::SampleSet;

pub fn col(s: &str) -> joinsample::model::ColumnRef {
    s.parse().unwrap()
}

pub fn table(name: &str, columns: &[&str], rows: &[&[&str]]) -> TableRef {
    TableRef::in_memory(name, MemTable::from_rows(columns, rows))
}

/// AB(A,B,w) ⋈ BC(B,C,w) with identity weights: join weights 14, 2, 21, 3, 20.
pub fn f1(op: Operator) -> JoinQuery {
    JoinQuery::new(
        vec![
            table("AB", &["A", "B", "w"], &[&["a1", "b1", "2"], &["a2", "b1", "3"], &["a3", "b2", "5"]]),
            table("BC", &["B", "C", "w"], &[&["b1", "c1", "7"], &["b1", "c2", "1"], &["b2", "c1", "4"]]),
        ],
        vec![JoinEdge::new(col("AB.B"), col("BC.B"), op, Comparison::Eq)],
        "AB",
    )
    .with_weight("AB.w", WeightExpr::Identity)
    .unwrap()
    .with_weight("BC.w", WeightExpr::Identity)
    .unwrap()
}

/// The six-table running example: FA full-outer AB, AB left-outer BC,
/// BC semi CD, AB ⋈ BG ⋈ GH along foreign keys. Main table AB.
pub fn six_table() -> JoinQuery {
    let tables = vec![
        table(
            "AB",
            &["A", "B", "w"],
            &[&["a1", "b1", "2"], &["a1", "b2", "1.5"], &["a3", "b3", "4"], &["a2", "b4", "1"], &["a2", "b5", "3"]],
        ),
        table(
            "FA",
            &["F", "A", "w"],
            &[&["f1", "a1", "1"], &["f2", "a2", "2"], &["f3", "a2", "0.5"], &["f4", "a4", "3"], &["f5", "a1", "2.5"]],
        )
        .with_null_weight(0.5),
        table(
            "BC",
            &["B", "C", "w"],
            &[&["b1", "c1", "3"], &["b2", "c1", "1"], &["b3", "c2", "2"], &["b4", "c3", "5"], &["b1", "c2", "1"]],
        )
        .with_null_weight(2.0),
        table(
            "CD",
            &["C", "D", "w"],
            &[&["c1", "d1", "1"], &["c2", "d2", "1"], &["c2", "d3", "0"], &["c4", "d4", "1"]],
        ),
        table(
            "BG",
            &["B", "G", "w"],
            &[&["b1", "g1", "1"], &["b2", "g1", "2"], &["b3", "g2", "1"], &["b4", "g2", "3"], &["b5", "g3", "1"]],
        ),
        table("GH", &["G", "H", "w"], &[&["g1", "h1", "2"], &["g2", "h2", "1"], &["g3", "h3", "4"]]),
    ];
    let edges = vec![
        JoinEdge::new(col("FA.A"), col("AB.A"), Operator::FullOuter, Comparison::Eq),
        JoinEdge::new(col("AB.B"), col("BC.B"), Operator::LeftOuter, Comparison::Eq),
        JoinEdge::new(col("BC.C"), col("CD.C"), Operator::Semi, Comparison::Eq),
        JoinEdge::new(col("AB.B"), col("BG.B"), Operator::Inner, Comparison::Eq),
        JoinEdge::new(col("BG.G"), col("GH.G"), Operator::Inner, Comparison::Eq),
    ];
    let mut q = JoinQuery::new(tables, edges, "AB");
    for t in ["AB", "FA", "BC", "CD", "BG", "GH"] {
        q = q.with_weight(&format!("{t}.w"), WeightExpr::Identity).unwrap();
    }
    q
}

/// Random acyclic query over 2 to 6 in-memory tables. Table `T0` is the
/// main table; every other table hangs below a random earlier one.
pub fn random_query(seed: u64) -> JoinQuery {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(2..=6usize);
    let big = rng.random_bool(0.3);
    let rows: Vec<usize> = (0..k)
        .map(|_| if big { rng.random_range(50..=500) } else { rng.random_range(1..=40) })
        .collect();
    let parent: Vec<usize> = (0..k).map(|t| if t == 0 { 0 } else { rng.random_range(0..t) }).collect();
    let mut theta_used = false;

    // Per edge (indexed by child): operator, comparison and value domain.
    let mut edge_spec = vec![(Operator::Inner, Comparison::Eq, 1usize); k];
    for t in 1..k {
        let at_root = parent[t] == 0;
        let r = rng.random_range(0..100);
        let (op, cmp) = match r {
            0..40 => (Operator::Inner, Comparison::Eq),
            40..52 => (Operator::LeftOuter, Comparison::Eq),
            52..60 if at_root => (Operator::RightOuter, Comparison::Eq),
            60..68 if at_root => (Operator::FullOuter, Comparison::Eq),
            52..68 => (Operator::LeftOuter, Comparison::Eq),
            68..78 => (Operator::Semi, Comparison::Eq),
            78..88 => (Operator::Anti, Comparison::Eq),
            _ if !theta_used && rows[t] <= 40 => {
                theta_used = true;
                let cmps = [Comparison::Lt, Comparison::Le, Comparison::Gt, Comparison::Ge, Comparison::Ne];
                (Operator::Inner, cmps[rng.random_range(0..cmps.len())])
            }
            _ => (Operator::Inner, Comparison::Eq),
        };
        let fanout = rng.random_range(1..=3);
        let domain = (rows[t] / fanout).max(1) + rng.random_range(0..3);
        edge_spec[t] = (op, cmp, domain);
    }

    let mut tables = Vec::with_capacity(k);
    for t in 0..k {
        let children: Vec<usize> = (t + 1..k).filter(|&c| parent[c] == t).collect();
        let mut columns = vec!["p".to_string()];
        columns.extend(children.iter().map(|c| format!("c{c}")));
        columns.push("w".into());
        let mut mem = MemTable::new(&columns);
        for _ in 0..rows[t] {
            let mut cells = Vec::with_capacity(columns.len());
            let value = |rng: &mut ChaCha8Rng, domain: usize| {
                if rng.random_bool(0.05) {
                    String::new()
                } else {
                    rng.random_range(0..domain).to_string()
                }
            };
            cells.push(value(&mut rng, if t == 0 { 5 } else { edge_spec[t].2 }));
            for &c in &children {
                cells.push(value(&mut rng, edge_spec[c].2));
            }
            let w = if rng.random_bool(0.1) {
                0.0
            } else {
                (rng.random_range(1..=400) as f64) / 100.0
            };
            cells.push(w.to_string());
            mem.push(&cells);
        }
        let nulls = [0.0, 0.5, 1.0, 2.0];
        tables.push(TableRef::in_memory(format!("T{t}"), mem).with_null_weight(nulls[rng.random_range(0..4)]));
    }
    let edges = (1..k)
        .map(|t| {
            let (op, cmp, _) = edge_spec[t];
            JoinEdge::new(col(&format!("T{}.c{t}", parent[t])), col(&format!("T{t}.p")), op, cmp)
        })
        .collect();
    let mut q = JoinQuery::new(tables, edges, "T0");
    for t in 0..k {
        q = q.with_weight(&format!("T{t}.w"), WeightExpr::Identity).unwrap();
    }
    q
}

/// Two tables of `m` rows each joined on a shared key column with unique
/// values `0..m`; random positive weights.
pub fn key_joined(m: usize, seed: u64) -> JoinQuery {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mk = |name: &str| {
        let mut mem = MemTable::new(&["k", "w"]);
        for i in 0..m {
            mem.push(&[i.to_string(), rng.random_range(1..=10).to_string()]);
        }
        TableRef::in_memory(name, mem)
    };
    let (r, s) = (mk("R"), mk("S"));
    JoinQuery::new(vec![r, s], vec![JoinEdge::inner("R.k", "S.k").unwrap()], "R")
        .with_weight("R.w", WeightExpr::Identity)
        .unwrap()
        .with_weight("S.w", WeightExpr::Identity)
        .unwrap()
}

/// Directed graph on `nodes` vertices, each ordered pair an edge with
/// probability `p`, and the triangle query X(a,b) ⋈ Y(b,c) ⋈ Z(c,a).
pub fn triangle_query(nodes: usize, p: f64, seed: u64) -> JoinQuery {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for s in 0..nodes {
        for t in 0..nodes {
            if s != t && rng.random_bool(p) {
                edges.push([s.to_string(), t.to_string()]);
            }
        }
    }
    let t = |name: &str, cols: [&str; 2]| TableRef::in_memory(name, MemTable::from_rows(&cols, &edges));
    JoinQuery::new(
        vec![t("X", ["a", "b"]), t("Y", ["b", "c"]), t("Z", ["c", "a"])],
        vec![
            JoinEdge::inner("X.b", "Y.b").unwrap(),
            JoinEdge::inner("Y.c", "Z.c").unwrap(),
            JoinEdge::inner("Z.a", "X.a").unwrap(),
        ],
        "X",
    )
}

/// Chi-square p-value of a sample against the enumerated probabilities.
pub fn chi_square_p(sample: &SampleSet, join: &EnumeratedJoin) -> f64 {
    let mut counts = vec![0u64; join.len()];
    for i in join.event_indices(sample).expect("every sampled tree is a join row") {
        counts[i - 1] += 1;
    }
    chi_square_gof(&counts, &join.probabilities()).unwrap().p_value
}

/// Checks the stream contract: main table read once, others at most twice.
pub fn pass_violation(plan: &ValidatedPlan, sample: &SampleSet) -> Option<String> {
    let main = &plan.tables[plan.root].name;
    for (t, &p) in &sample.stats.passes {
        let limit = if t == main { 1 } else { 2 };
        if p > limit {
            return Some(format!("table {t} read {p} times"));
        }
    }
    if sample.stats.passes.get(main) != Some(&1) {
        return Some(format!("main table {main} read {:?} times", sample.stats.passes.get(main)));
    }
    None
}

//! Tab-separated output of samples and enumerated joins.
//!
//! The header is `draw_id` followed by `table.column` for every column of
//! every reachable table in declaration order. NULL rows and NULL cells are
//! empty fields.

use std::io::Write;

use csv::{QuoteStyle, WriterBuilder};

use crate::error::{Error, Result};
use crate::model::{TableId, TableRef};
use crate::oracle::EnumeratedJoin;
use crate::pipeline::ResultTree;
use crate::pipeline::SampleSet;

fn csv_err(e: csv::Error) -> Error {
    Error::Csv {
        table: "<output>".into(),
        source: e,
    }
}

fn header(tables: &[TableRef], reachable: &[TableId]) -> Vec<String> {
    reachable
        .iter()
        .flat_map(|&t| tables[t].columns.iter().map(move |c| tables[t].output_name(c)))
        .collect()
}

fn cells<'a>(tables: &'a [TableRef], reachable: &'a [TableId], tree: &'a ResultTree) -> impl Iterator<Item = &'a str> {
    reachable.iter().flat_map(move |&t| {
        let width = tables[t].columns.len();
        (0..width).map(move |c| tree.rows[t].as_ref().and_then(|r| r.get(c)).unwrap_or(""))
    })
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    WriterBuilder::new()
        .delimiter(b'\t')
        .quote_style(QuoteStyle::Necessary)
        .flexible(false)
        .from_writer(out)
}

/// One line per draw, repetitions included; `draw_id` counts from 0.
pub fn write_samples<W: Write>(sample: &SampleSet, out: W) -> Result<()> {
    let mut w = writer(out);
    let mut head = vec!["draw_id".to_string()];
    head.extend(header(&sample.tables, &sample.reachable));
    w.write_record(&head).map_err(csv_err)?;
    for (i, tree) in sample.trees.iter().enumerate() {
        let id = i.to_string();
        let record = std::iter::once(id.as_str()).chain(cells(&sample.tables, &sample.reachable, tree));
        w.write_record(record).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))
}

/// Every join row with its weight and probability, in canonical order.
pub fn write_enumeration<W: Write>(join: &EnumeratedJoin, out: W) -> Result<()> {
    let mut w = writer(out);
    let tables = &join.plan.tables;
    let reachable: Vec<TableId> = join.plan.reachable_tables().collect();
    let mut head = header(tables, &reachable);
    head.push("weight".into());
    head.push("probability".into());
    w.write_record(&head).map_err(csv_err)?;
    for t in &join.trees {
        let weight = t.weight.to_string();
        let p = (t.weight / join.total_weight).to_string();
        let record = cells(tables, &reachable, &t.tree).chain([weight.as_str(), p.as_str()]);
        w.write_record(record).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::MemTable;
    use crate::model::{JoinEdge, JoinQuery, Operator};
    use crate::oracle::enumerate_join;
    use crate::run::run;

    fn query(op: Operator) -> JoinQuery {
        let ab = MemTable::from_rows(&["A", "B"], &[["a1", "b1"], ["a2", "b9"]]);
        let bc = MemTable::from_rows(&["B", "C"], &[["b1", "c1"]]);
        let mut edge = JoinEdge::inner("AB.B", "BC.B").unwrap();
        edge.operator = op;
        JoinQuery::new(
            vec![TableRef::in_memory("AB", ab), TableRef::in_memory("BC", bc)],
            vec![edge],
            "AB",
        )
        .with_sample(4, 1)
    }

    fn render(sample: &SampleSet) -> String {
        let mut buf = Vec::new();
        write_samples(sample, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn null_rows_are_empty_fields() {
        let text = render(&run(&query(Operator::LeftOuter)).unwrap());
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("draw_id\tAB.A\tAB.B\tBC.B\tBC.C"));
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 4);
        for (i, r) in rows.iter().enumerate() {
            let rest = r.strip_prefix(&format!("{i}\t")).unwrap();
            assert!(rest == "a1\tb1\tb1\tc1" || rest == "a2\tb9\t\t", "{r}");
        }
    }

    #[test]
    fn semi_join_hides_the_filter_table() {
        let text = render(&run(&query(Operator::Semi)).unwrap());
        assert!(text.starts_with("draw_id\tAB.A\tAB.B\n"));
        assert_eq!(text.lines().filter(|l| l.ends_with("\ta1\tb1")).count(), 4);
    }

    #[test]
    fn enumeration_dump() {
        let q = query(Operator::LeftOuter);
        let plan = crate::model::validate(&q).unwrap();
        let mut buf = Vec::new();
        write_enumeration(&enumerate_join(&plan).unwrap(), &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "AB.A\tAB.B\tBC.B\tBC.C\tweight\tprobability\na1\tb1\tb1\tc1\t1\t0.5\na2\tb9\t\t\t1\t0.5\n"
        );
    }
}

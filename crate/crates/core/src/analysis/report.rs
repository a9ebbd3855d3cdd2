//! Tabular reports as CSV.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::RunRecord;

use super::metrics::{aggregate, slice_aggregates, Slice};
use super::transfer::TransferMatrix;

/// One row of a sliced report; `slice` is `overall` for the whole run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run: String,
    pub slice: String,
    pub value: String,
    pub error: f64,
    pub cflop: u64,
    pub tasks: usize,
}

/// Label of a run: its strategy label if recorded, otherwise `fallback`.
pub fn run_label(records: &[RunRecord], fallback: &str) -> String {
    records
        .first()
        .and_then(|r| r.strategy.get("label"))
        .and_then(|l| l.as_str())
        .map_or_else(|| fallback.to_string(), str::to_string)
}

/// Overall row over scored records (with cFLOP over all records) followed
/// by one row per value of each requested slice.
pub fn report_rows(run: &str, records: &[RunRecord], slices: &[Slice]) -> Result<Vec<ReportRow>> {
    let scored = aggregate(records, |r| r.scored)?;
    let cflop: u64 = records.iter().map(|r| r.flops).sum();
    let mut rows = vec![ReportRow {
        run: run.into(),
        slice: "overall".into(),
        value: String::new(),
        error: scored.error,
        cflop,
        tasks: scored.count,
    }];
    for &s in slices {
        for (value, a) in slice_aggregates(records, s) {
            rows.push(ReportRow {
                run: run.into(),
                slice: s.name().into(),
                value,
                error: a.error,
                cflop: a.cflop,
                tasks: a.count,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub source: String,
    pub target: String,
    pub delta: f64,
}

pub fn transfer_rows(m: &TransferMatrix) -> Vec<TransferRow> {
    m.entries
        .iter()
        .map(|(&(i, j), &delta)| TransferRow { source: m.task_ids[i].clone(), target: m.task_ids[j].clone(), delta })
        .collect()
}

/// Writes serializable rows as CSV with a header line.
pub fn write_csv<T: Serialize>(rows: &[T], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Invalid(format!("csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, error: f64, flops: u64, domain: &str, train_size: usize) -> RunRecord {
        serde_json::from_value(serde_json::json!({
            "schema_version": 1, "phase": "meta_test", "index": 0, "task_id": id,
            "strategy": {"label": "ft_d"}, "hparams": {}, "init_provenance": "scratch", "error": error,
            "val_error": error, "flops": flops, "learning_curve": [], "seed": 0, "wall_time": 0.0,
            "domain": domain, "train_size": train_size, "avg_resolution": [32, 32], "scored": true, "trials": 1
        }))
        .unwrap()
    }

    #[test]
    fn single_domain_slice_equals_overall() {
        let rs = vec![rec("a", 0.1, 3, "ocr", 1000), rec("b", 0.3, 5, "ocr", 999)];
        let rows = report_rows(&run_label(&rs, "x"), &rs, &[Slice::Domain, Slice::Size]).unwrap();
        assert_eq!(rows[0].run, "ft_d");
        assert_eq!((rows[1].error, rows[1].cflop, rows[1].tasks), (rows[0].error, rows[0].cflop, rows[0].tasks));
        let sizes: Vec<&str> = rows[2..].iter().map(|r| r.value.as_str()).collect();
        assert_eq!(sizes, vec!["1k-10k", "<1k"]);
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("run,slice,value,error,cflop,tasks\n"));
        assert_eq!(text.lines().count(), 5);
    }
}

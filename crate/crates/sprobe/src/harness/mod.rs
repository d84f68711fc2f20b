//! Batch experiment harness: manifests in, seeded sweeps over
//! (dataset x regime point x method), persisted evaluation records, quiver
//! selections, and summary reports.

mod manifest;
mod report;
mod runner;

pub use manifest::{ExperimentManifest, Method, MethodRoster, SaeEntry, SaeProbeSpec};
pub use report::{recompute_quivers, report, ReportSummary};
pub use runner::{run_experiment, RunOutcome};

use crate::metrics::EvalRecord;

/// CSV header shared by writers and readers of `records.csv`.
pub const RECORDS_HEADER: &str =
    "dataset_id,regime,param,method_id,k,width,l0,pooling,auc_val,auc_test,seed";

pub fn record_to_csv_row(r: &EvalRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        r.dataset_id,
        r.regime,
        r.param,
        r.method_id,
        r.k.map_or(String::new(), |v| v.to_string()),
        r.width.map_or(String::new(), |v| v.to_string()),
        r.l0.map_or(String::new(), |v| v.to_string()),
        r.pooling,
        r.auc_val,
        r.auc_test,
        r.seed
    )
}

pub fn record_from_csv_row(line: &str) -> crate::error::Result<EvalRecord> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 11 {
        return Err(crate::error::Error::Manifest(format!(
            "records.csv row has {} fields, expected 11: {line:?}",
            fields.len()
        )));
    }
    let parse_opt_usize = |s: &str| -> crate::error::Result<Option<usize>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse()
                .map(Some)
                .map_err(|e| crate::error::Error::Manifest(format!("bad integer {s:?}: {e}")))
        }
    };
    let parse_f64 = |s: &str| -> crate::error::Result<f64> {
        s.parse()
            .map_err(|e| crate::error::Error::Manifest(format!("bad float {s:?}: {e}")))
    };
    Ok(EvalRecord {
        dataset_id: fields[0].to_string(),
        regime: fields[1].to_string(),
        param: parse_f64(fields[2])?,
        method_id: fields[3].to_string(),
        k: parse_opt_usize(fields[4])?,
        width: parse_opt_usize(fields[5])?,
        l0: if fields[6].is_empty() {
            None
        } else {
            Some(parse_f64(fields[6])?)
        },
        pooling: fields[7].to_string(),
        auc_val: parse_f64(fields[8])?,
        auc_test: parse_f64(fields[9])?,
        seed: fields[10]
            .parse()
            .map_err(|e| crate::error::Error::Manifest(format!("bad seed: {e}")))?,
        hyperparams: String::new(),
    })
}

/// Load every record from a results directory's `records.csv`.
pub fn load_records(results_dir: &std::path::Path) -> crate::error::Result<Vec<EvalRecord>> {
    let path = results_dir.join("records.csv");
    let text = std::fs::read_to_string(&path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != RECORDS_HEADER {
                return Err(crate::error::Error::Manifest(format!(
                    "unexpected records.csv header: {line:?}"
                )));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        out.push(record_from_csv_row(line)?);
    }
    Ok(out)
}

//! Summary tables over a results directory: per-method means, quiver deltas,
//! SAE-chosen counts, and per-dataset matrices, each with 95% confidence
//! intervals by normal approximation over datasets.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::EvalRecord;

#[derive(Debug)]
pub struct ReportSummary {
    pub files: Vec<PathBuf>,
    pub n_records: usize,
}

/// Sample mean with a 95% normal-approximation interval; a single value gets
/// a zero-width interval.
fn mean_ci(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, mean, mean);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let half = 1.96 * (var / n).sqrt();
    (mean, mean - half, mean + half)
}

#[derive(Debug, Clone)]
struct QuiverRow {
    dataset_id: String,
    regime: String,
    param: f64,
    quiver: String,
    auc_test: f64,
    chosen_is_sae: bool,
}

fn load_quivers(dir: &Path) -> Result<Vec<QuiverRow>> {
    let path = dir.join("quivers.csv");
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(&path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(Error::Manifest(format!(
                "quivers.csv row has {} fields: {line:?}",
                fields.len()
            )));
        }
        rows.push(QuiverRow {
            dataset_id: fields[0].to_string(),
            regime: fields[1].to_string(),
            param: fields[2]
                .parse()
                .map_err(|e| Error::Manifest(format!("bad param: {e}")))?,
            quiver: fields[3].to_string(),
            auc_test: fields[6]
                .parse()
                .map_err(|e| Error::Manifest(format!("bad auc_test: {e}")))?,
            chosen_is_sae: fields[7] == "true",
        });
    }
    Ok(rows)
}

/// Emit the summary CSVs for a results directory into `<dir>/report/`.
/// A pure function of the directory contents.
pub fn report(results_dir: &Path) -> Result<ReportSummary> {
    let records = super::load_records(results_dir)?;
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let report_dir = results_dir.join("report");
    std::fs::create_dir_all(&report_dir)?;
    let mut files = Vec::new();

    // Mean test AUC per (regime, param, method) over datasets.
    {
        let mut groups: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
        for r in &records {
            groups
                .entry((r.regime.clone(), format!("{}", r.param), r.method_id.clone()))
                .or_default()
                .push(r.auc_test);
        }
        let mut out =
            String::from("regime,param,method_id,n_datasets,mean_auc_test,ci95_lo,ci95_hi\n");
        for ((regime, param, method), values) in &groups {
            let (mean, lo, hi) = mean_ci(values);
            out.push_str(&format!(
                "{regime},{param},{method},{},{mean},{lo},{hi}\n",
                values.len()
            ));
        }
        let path = report_dir.join("method_means.csv");
        std::fs::write(&path, out)?;
        files.push(path);
    }

    let quivers = load_quivers(results_dir)?;
    if !quivers.is_empty() {
        // Quiver-with-SAE minus quiver-without-SAE per (regime, param).
        let mut per_point: BTreeMap<(String, String), Vec<(String, f64)>> = BTreeMap::new();
        let mut by_key: BTreeMap<(String, String, String, String), f64> = BTreeMap::new();
        for q in &quivers {
            by_key.insert(
                (
                    q.dataset_id.clone(),
                    q.regime.clone(),
                    format!("{}", q.param),
                    q.quiver.clone(),
                ),
                q.auc_test,
            );
        }
        for q in &quivers {
            if q.quiver != "with_sae" {
                continue;
            }
            let base_key = (
                q.dataset_id.clone(),
                q.regime.clone(),
                format!("{}", q.param),
                "baseline".to_string(),
            );
            if let Some(base) = by_key.get(&base_key) {
                per_point
                    .entry((q.regime.clone(), format!("{}", q.param)))
                    .or_default()
                    .push((q.dataset_id.clone(), q.auc_test - base));
            }
        }

        let mut out =
            String::from("regime,param,n_datasets,mean_delta,ci95_lo,ci95_hi\n");
        for ((regime, param), deltas) in &per_point {
            let values: Vec<f64> = deltas.iter().map(|&(_, d)| d).collect();
            let (mean, lo, hi) = mean_ci(&values);
            out.push_str(&format!(
                "{regime},{param},{},{mean},{lo},{hi}\n",
                values.len()
            ));
        }
        let path = report_dir.join("quiver_delta.csv");
        std::fs::write(&path, out)?;
        files.push(path);

        // How often the with-SAE quiver actually chose an SAE probe.
        let mut chosen: BTreeMap<(String, String), (usize, usize)> = BTreeMap::new();
        for q in &quivers {
            if q.quiver != "with_sae" {
                continue;
            }
            let entry = chosen
                .entry((q.regime.clone(), format!("{}", q.param)))
                .or_insert((0, 0));
            entry.1 += 1;
            if q.chosen_is_sae {
                entry.0 += 1;
            }
        }
        let mut out = String::from("regime,param,sae_chosen,n_datasets\n");
        for ((regime, param), (count, total)) in &chosen {
            out.push_str(&format!("{regime},{param},{count},{total}\n"));
        }
        let path = report_dir.join("sae_chosen.csv");
        std::fs::write(&path, out)?;
        files.push(path);

        // Per-dataset delta matrix per regime: rows datasets, columns params.
        let mut regimes_seen: Vec<String> = per_point
            .keys()
            .map(|(r, _)| r.clone())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        regimes_seen.sort();
        for regime in regimes_seen {
            let mut params: Vec<String> = per_point
                .keys()
                .filter(|(r, _)| *r == regime)
                .map(|(_, p)| p.clone())
                .collect();
            params.sort_by(|a, b| {
                a.parse::<f64>()
                    .unwrap_or(0.0)
                    .partial_cmp(&b.parse::<f64>().unwrap_or(0.0))
                    .unwrap()
            });
            let mut datasets: std::collections::BTreeSet<String> = Default::default();
            for ((r, _), deltas) in &per_point {
                if *r == regime {
                    for (ds, _) in deltas {
                        datasets.insert(ds.clone());
                    }
                }
            }
            let mut out = String::from("dataset_id");
            for p in &params {
                out.push_str(&format!(",{p}"));
            }
            out.push('\n');
            for ds in &datasets {
                out.push_str(ds);
                for p in &params {
                    let delta = per_point
                        .get(&(regime.clone(), p.clone()))
                        .and_then(|deltas| {
                            deltas.iter().find(|(d, _)| d == ds).map(|&(_, v)| v)
                        });
                    match delta {
                        Some(v) => out.push_str(&format!(",{v}")),
                        None => out.push(','),
                    }
                }
                out.push('\n');
            }
            let path = report_dir.join(format!("per_dataset_delta_{regime}.csv"));
            std::fs::write(&path, out)?;
            files.push(path);
        }
    }

    Ok(ReportSummary {
        files,
        n_records: records.len(),
    })
}

/// Recompute quiver selections from the persisted records (same computation
/// the runner performs after a sweep, exposed for the `quiver` subcommand).
pub fn recompute_quivers(results_dir: &Path) -> Result<usize> {
    let records: Vec<EvalRecord> = super::load_records(results_dir)?;
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    super::runner::write_quivers(&records, results_dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ci_is_zero_width_for_single_value() {
        let (mean, lo, hi) = mean_ci(&[0.8]);
        assert_eq!(mean, 0.8);
        assert_eq!(lo, 0.8);
        assert_eq!(hi, 0.8);
        let (mean, lo, hi) = mean_ci(&[0.6, 0.8]);
        assert!((mean - 0.7).abs() < 1e-12);
        assert!(lo < 0.7 && hi > 0.7);
    }
}

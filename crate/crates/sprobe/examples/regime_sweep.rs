//! A miniature regime sweep through the batch harness: logistic regression
//! versus an oracle-SAE probe across data-scarcity points, with quiver
//! selections and summary tables at the end.

use sprobe::fixtures::{write_fixture_bundle, FixtureConfig};
use sprobe::harness::{
    load_records, report, run_experiment, ExperimentManifest, MethodRoster, SaeEntry, SaeProbeSpec,
};
use sprobe::sae::PoolMode;

fn main() -> sprobe::Result<()> {
    let dir = std::env::temp_dir().join("sprobe-regime-sweep");
    let _ = std::fs::remove_dir_all(&dir);
    let bundle = write_fixture_bundle(
        &FixtureConfig {
            d_model: 32,
            w_true: 64,
            n: 640,
            seed: 21,
            ..FixtureConfig::default()
        },
        &dir.join("fixture"),
    )?;

    let manifest = ExperimentManifest {
        datasets: vec![bundle.manifest_path.clone()],
        saes: vec![SaeEntry {
            path: bundle.sae_path.clone(),
            width: 64,
            l0: None,
        }],
        methods: MethodRoster {
            baseline_families: vec!["logreg".into()],
            baseline_pooling: vec![PoolMode::Last],
            attn_probe: false,
            sae_probes: Some(SaeProbeSpec {
                k: vec![16],
                pooling: vec![PoolMode::Last],
                binarize: false,
            }),
        },
        regimes: vec!["scarcity".into()],
        seed: 33,
        out_dir: dir.join("results"),
    };

    let outcome = run_experiment(&manifest, 4)?;
    println!(
        "{} records ({} failures)",
        outcome.new_records,
        outcome.failures.len()
    );

    println!("\n n      logreg   sae-k16");
    let records = load_records(&outcome.out_dir)?;
    let mut points: Vec<f64> = records.iter().map(|r| r.param).collect();
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    points.dedup();
    for n in points {
        let at = |is_sae: bool| {
            records
                .iter()
                .find(|r| r.param == n && r.is_sae() == is_sae)
                .map(|r| r.auc_test)
                .unwrap_or(f64::NAN)
        };
        println!("{n:>4}   {:.4}   {:.4}", at(false), at(true));
    }

    let summary = report(&outcome.out_dir)?;
    println!("\nsummary tables:");
    for file in summary.files {
        println!("  {}", file.display());
    }
    Ok(())
}

//! The quiver-of-arrows selector: pick the method with the best validation
//! AUC, report its test AUC, and break exact ties by preferring SAE probes,
//! then smaller widths, then larger k.

use sprobe::metrics::EvalRecord;
use sprobe::regimes::{head_to_head, quiver_select};

fn record(method: &str, auc_val: f64, auc_test: f64) -> EvalRecord {
    EvalRecord {
        dataset_id: "demo".into(),
        regime: "standard".into(),
        param: 0.0,
        method_id: method.into(),
        k: None,
        width: None,
        l0: None,
        pooling: "last".into(),
        auc_val,
        auc_test,
        seed: 0,
        hyperparams: String::new(),
    }
}

fn sae(method: &str, auc_val: f64, auc_test: f64, width: usize, k: usize) -> EvalRecord {
    let mut r = record(method, auc_val, auc_test);
    r.width = Some(width);
    r.k = Some(k);
    r
}

fn main() -> sprobe::Result<()> {
    // Ordinary case: validation argmax decides, test AUC is reported.
    let records = vec![
        record("logreg", 0.91, 0.90),
        record("gbt", 0.89, 0.93),
        sae("sae-16k-k16", 0.95, 0.88, 16_000, 16),
    ];
    let result = quiver_select(&records)?;
    println!(
        "chosen {} -> test auc {} (tie break: {})",
        result.chosen_method_id, result.auc_test, result.tie_break_applied
    );

    // Exact tie at validation AUC 1.0: the SAE wins over the baseline, the
    // smaller width wins among SAEs, and the larger k wins within a width.
    let tied = vec![
        record("logreg", 1.0, 0.97),
        sae("sae-131k-k128", 1.0, 0.95, 131_000, 128),
        sae("sae-16k-k16", 1.0, 0.94, 16_000, 16),
        sae("sae-16k-k128", 1.0, 0.96, 16_000, 128),
    ];
    let result = quiver_select(&tied)?;
    println!(
        "tied at 1.0 -> chosen {} (tie break: {})",
        result.chosen_method_id, result.tie_break_applied
    );

    // Where validation AUC is unfaithful (label noise, covariate shift) the
    // comparison is head-to-head on test AUC instead.
    let a = record("logreg", 0.52, 0.81);
    let b = sae("sae-16k-k128", 0.55, 0.74, 16_000, 128);
    println!("head-to-head logreg vs sae: {:+.3}", head_to_head(&a, &b)?);
    Ok(())
}

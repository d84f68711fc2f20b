//! The size-adaptive cross-validation protocol: which plan each training
//! size selects, and hyperparameter selection by mean validation AUC.

use sprobe::fixtures::{generate_world, sample_dataset};
use sprobe::metrics::{make_cv_plan, make_cv_plan_stratified, select_hyperparams};
use sprobe::probes::{HyperparamGrid, Reg};

fn main() -> sprobe::Result<()> {
    for n in [3usize, 10, 100, 1000] {
        let plan = make_cv_plan(n, 5)?;
        println!(
            "n = {n:>4} -> {:?} with {} fold(s)",
            plan.kind,
            plan.folds.len()
        );
    }

    // Select a logistic-regression C on a noisy fixture's training pool;
    // heavy noise keeps the grid from tying at a perfect validation AUC.
    let world = generate_world(24, 48, 3)?.with_noise_sigma(1.2);
    let (dataset, _) = sample_dataset(&world, 600, 1)?;
    let features = dataset.features.as_mat();
    let pool = dataset.split.train_pool();
    let x = features.select_rows(&pool);
    let y = dataset.targets_at(&pool);

    let plan = make_cv_plan_stratified(&y, 5)?;
    let grid = HyperparamGrid::logreg(Reg::L2);
    let selection = select_hyperparams(&grid, &x, &y, &plan, 9)?;
    println!(
        "\nselected {} with mean validation AUC {:.4}",
        selection.hyperparams.label(),
        selection.auc_val
    );
    println!("per-candidate validation AUC:");
    for cand in &selection.candidates {
        match cand.auc_val {
            Some(a) => println!("  {:<24} {a:.4}", cand.hyperparams.label()),
            None => println!("  {:<24} failed", cand.hyperparams.label()),
        }
    }
    if !selection.warnings.is_empty() {
        println!("warnings: {}", selection.warnings.len());
    }
    Ok(())
}

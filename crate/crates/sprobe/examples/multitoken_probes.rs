//! Multi-token probing baselines: pooled activations, concatenated PCA
//! features, and the attention-pooled probe, compared on a 6-token fixture.

use sprobe::fixtures::{generate_world, sample_dataset};
use sprobe::metrics::auc;
use sprobe::multitoken::{concat_pca_probe, pool_activations, train_attn_probe, AttnHyperparams};
use sprobe::probes::{train_logreg, Reg};
use sprobe::sae::PoolMode;

fn main() -> sprobe::Result<()> {
    let world = generate_world(32, 64, 17)?;
    let (dataset, _) = sample_dataset(&world, 480, 6)?;
    let tensor = dataset.features.as_activations().unwrap();
    let pool = dataset.split.train_pool();
    let test = &dataset.split.test;
    let y_train = dataset.targets_at(&pool);
    let y_test = dataset.targets_at(test);

    println!(
        "{} examples x {} tokens x {} dims (target rule fires on the last token)",
        tensor.n_examples(),
        tensor.n_tokens(),
        tensor.d_model()
    );

    // Pooled-activation logistic regression baselines.
    for mode in [PoolMode::Last, PoolMode::Mean, PoolMode::Max] {
        let pooled = pool_activations(tensor, mode)?.last_token_mat();
        let model = train_logreg(
            &pooled.select_rows(&pool),
            &y_train,
            Reg::L2,
            1.0,
        )?;
        let test_auc = auc(&model.score(&pooled.select_rows(test))?, &y_test)?;
        println!("logreg on {:<4} pooled activations: test auc {test_auc:.4}", mode.name());
    }

    // Concatenated PCA: a shared 8-dim projection per token position.
    let train_tensor = tensor.select_examples(&pool);
    let (projector, train_features) = concat_pca_probe(&train_tensor, 8)?;
    let test_features = projector.transform(&tensor.select_examples(test))?;
    let model = train_logreg(&train_features, &y_train, Reg::L2, 1.0)?;
    let test_auc = auc(&model.score(&test_features)?, &y_test)?;
    println!(
        "logreg on concat-PCA ({} features):  test auc {test_auc:.4}",
        train_features.cols()
    );

    // Attention-pooled probe: learned query and value directions.
    let attn = train_attn_probe(&train_tensor, &y_train, &AttnHyperparams::default(), 3)?;
    let test_auc = auc(&attn.score(&tensor.select_examples(test))?, &y_test)?;
    println!("attention-pooled probe:             test auc {test_auc:.4}");
    Ok(())
}

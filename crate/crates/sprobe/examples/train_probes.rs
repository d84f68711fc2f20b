//! Train each probe family on the same fixture and compare test AUC.

use sprobe::fixtures::{generate_world, sample_dataset};
use sprobe::metrics::auc;
use sprobe::probes::{train, GbtParams, Hyperparams, MlpParams, Reg};

fn main() -> sprobe::Result<()> {
    let world = generate_world(32, 64, 7)?;
    let (dataset, _) = sample_dataset(&world, 800, 1)?;
    let features = dataset.features.as_mat();
    let pool = dataset.split.train_pool();
    let x_train = features.select_rows(&pool);
    let y_train = dataset.targets_at(&pool);
    let x_test = features.select_rows(&dataset.split.test);
    let y_test = dataset.targets_at(&dataset.split.test);

    let candidates = vec![
        Hyperparams::LogReg { reg: Reg::L2, c: 1.0 },
        Hyperparams::PcaReg { n_components: 16 },
        Hyperparams::Knn { n_neighbors: 15 },
        Hyperparams::Gbt(GbtParams {
            n_estimators: 100,
            max_depth: 3,
            learning_rate: 0.1,
            ..GbtParams::default()
        }),
        Hyperparams::Mlp(MlpParams {
            depth: 1,
            width: 32,
            learning_rate: 1e-2,
            weight_decay: 1e-4,
        }),
    ];

    println!(
        "{} train / {} test examples, {} features",
        x_train.rows(),
        x_test.rows(),
        x_train.cols()
    );
    for hp in candidates {
        let model = train(&x_train, &y_train, &hp, 13)?;
        let test_auc = auc(&model.score(&x_test)?, &y_test)?;
        println!("{:<7} {:<40} test auc {:.4}", model.family.name(), hp.label(), test_auc);
    }
    Ok(())
}

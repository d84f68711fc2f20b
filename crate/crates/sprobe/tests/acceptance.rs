//! Acceptance suite: one test per criterion, each printing a pass line with
//! its runtime. Oracles here are written independently of the library
//! implementations they check.

use std::time::Instant;

use rand::Rng;

use sprobe::fixtures::{self, generate_world, write_fixture_bundle, FixtureConfig};
use sprobe::harness::{load_records, run_experiment, ExperimentManifest, MethodRoster, SaeEntry, SaeProbeSpec};
use sprobe::mat::Mat;
use sprobe::metrics::{auc, CvKind, EvalRecord};
use sprobe::multitoken::{self, attn_loss_and_grads, AttentionProbe, AttnHyperparams};
use sprobe::probes::{self, mlp, HyperparamGrid, MlpParams, Reg};
use sprobe::regimes::{self, quiver_select};
use sprobe::rng;
use sprobe::sae::{self, ActivationKind, LatentMatrix, PoolMode, SAEWeights};
use sprobe::tensor::{self, ActivationTensor};

fn pass(name: &str, start: Instant) {
    println!("acceptance {name}: PASS ({:.2}s)", start.elapsed().as_secs_f64());
}

/// O(P*N) pair-counting AUC, ties one half.
fn auc_pair_oracle(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0f64;
    let mut pairs = 0.0f64;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

#[test]
fn criterion_01_auc_matches_pair_counting_oracle() {
    let start = Instant::now();
    let mut r = rng::rng(1001);
    for trial in 0..1000 {
        let n = r.random_range(2..=200);
        // Quantized scores force ties.
        let levels = r.random_range(2..20) as f64;
        let scores: Vec<f64> = (0..n)
            .map(|_| (r.random::<f64>() * levels).round() / levels)
            .collect();
        let mut labels: Vec<u8> = (0..n).map(|_| u8::from(r.random::<f64>() < 0.5)).collect();
        labels[0] = 1;
        labels[n - 1] = 0;
        let fast = auc(&scores, &labels).unwrap();
        let slow = auc_pair_oracle(&scores, &labels);
        assert!(
            (fast - slow).abs() <= 1e-12,
            "trial {trial}: rank {fast} vs pairs {slow}"
        );
    }
    assert!(start.elapsed().as_secs_f64() < 10.0, "runtime budget exceeded");
    pass("01 auc-pair-counting-equivalence", start);
}

#[test]
fn criterion_02_top_k_selection_matches_full_sort_oracle() {
    let start = Instant::now();
    let mut r = rng::rng(1002);
    for trial in 0..100 {
        let w = r.random_range(2..=512);
        let n = r.random_range(4..40);
        let k = r.random_range(1..=w.min(16));
        let values: Vec<f32> = (0..n * w).map(|_| r.random::<f32>() * 4.0).collect();
        let z = LatentMatrix::new(values, n, w, "acc".into()).unwrap();
        let mut targets: Vec<u8> = (0..n).map(|_| u8::from(r.random::<f64>() < 0.5)).collect();
        targets[0] = 1;
        targets[1] = 0;

        let selection = sae::select_top_k(&z, &targets, k).unwrap();

        // Full-sort oracle over the same statistic, computed from scratch.
        let n_pos = targets.iter().filter(|&&t| t == 1).count();
        let n_neg = n - n_pos;
        let mut stats = vec![0.0f64; w];
        for latent in 0..w {
            let mut mean_pos = 0.0;
            let mut mean_neg = 0.0;
            for i in 0..n {
                let v = f64::from(z.row(i)[latent]);
                if targets[i] == 1 {
                    mean_pos += v / n_pos as f64;
                } else {
                    mean_neg += v / n_neg as f64;
                }
            }
            stats[latent] = (mean_pos - mean_neg).abs();
        }
        let mut order: Vec<u32> = (0..w as u32).collect();
        order.sort_by(|&a, &b| {
            stats[b as usize]
                .partial_cmp(&stats[a as usize])
                .unwrap()
                .then(a.cmp(&b))
        });
        assert_eq!(selection.indices, order[..k].to_vec(), "trial {trial}");
    }
    pass("02 mean-difference-selection-oracle", start);
}

#[test]
fn criterion_03_protocol_constants() {
    let start = Instant::now();
    let scarcity = regimes::scarcity_grid();
    assert_eq!(scarcity.len(), 20);
    assert_eq!(scarcity[0], 2);
    assert_eq!(scarcity[19], 1024);

    let imbalance = regimes::imbalance_grid();
    assert_eq!(imbalance.len(), 19);
    assert!((imbalance[0] - 0.05).abs() < 1e-15);
    assert!((imbalance[18] - 0.95).abs() < 1e-15);

    let noise = regimes::noise_grid();
    assert_eq!(noise.len(), 11);
    assert_eq!(noise[0], 0.0);
    assert!((noise[10] - 0.5).abs() < 1e-15);

    assert_eq!(CvKind::for_n(3), CvKind::TrainOnAll);
    assert_eq!(CvKind::for_n(4), CvKind::LeaveTwoOut);
    assert_eq!(CvKind::for_n(12), CvKind::LeaveTwoOut);
    assert_eq!(CvKind::for_n(13), CvKind::SixFold);
    assert_eq!(CvKind::for_n(128), CvKind::SixFold);
    assert_eq!(CvKind::for_n(129), CvKind::HoldOut20);
    pass("03 protocol-constants", start);
}

#[test]
fn criterion_04_fixture_end_to_end_sae_probe() {
    let start = Instant::now();
    // Stated defaults: d_model 64, W_true 256, n 1024, noise 0.05, single
    // target feature.
    let world = generate_world(64, 256, 404).unwrap().with_noise_sigma(0.05);
    let (data, _) = fixtures::sample_dataset(&world, 1024, 1).unwrap();
    let weights = fixtures::oracle_sae(&world).unwrap();
    let tensor = data.features.as_activations().unwrap();
    let z = sae::encode_matrix(tensor, &weights).unwrap();

    let pool = data.split.train_pool();
    let z_pool = z.select_rows(&pool);
    let y_pool = data.targets_at(&pool);

    // k = 1 selects the target latent, and a probe on it alone is already
    // near-perfect.
    let top1 = sae::select_top_k(&z_pool, &y_pool, 1).unwrap();
    assert_eq!(top1.indices, vec![0], "k=1 must select the target latent");
    {
        let f1 = z.feature_mat(&top1.indices);
        let model = probes::train_logreg(
            &f1.select_rows(&pool),
            &y_pool,
            Reg::L1,
            1.0,
        )
        .unwrap();
        let y_test = data.targets_at(&data.split.test);
        let k1_auc = auc(
            &model.score(&f1.select_rows(&data.split.test)).unwrap(),
            &y_test,
        )
        .unwrap();
        assert!(k1_auc >= 0.99, "k=1 probe test AUC {k1_auc}");
    }

    // k = 16 SAE probe: L1 logistic regression with CV-chosen C.
    let selection = sae::select_top_k(&z_pool, &y_pool, 16).unwrap();
    let features = z.feature_mat(&selection.indices);
    let x_pool = features.select_rows(&pool);
    let x_test = features.select_rows(&data.split.test);
    let y_test = data.targets_at(&data.split.test);

    let plan = sprobe::metrics::make_cv_plan_stratified(&y_pool, 77).unwrap();
    let grid = HyperparamGrid::logreg(Reg::L1);
    let sel = sprobe::metrics::select_hyperparams(&grid, &x_pool, &y_pool, &plan, 78).unwrap();
    let model = probes::train(&x_pool, &y_pool, &sel.hyperparams, 79).unwrap();
    let test_auc = auc(&model.score(&x_test).unwrap(), &y_test).unwrap();
    assert!(test_auc >= 0.99, "k=16 SAE probe test AUC {test_auc} < 0.99");

    assert!(start.elapsed().as_secs_f64() < 60.0, "runtime budget exceeded");
    pass("04 fixture-end-to-end (k=16 oracle-SAE probe)", start);
}

#[test]
fn criterion_05_label_noise_regime_sanity() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config = FixtureConfig {
        d_model: 64,
        w_true: 256,
        n: 1024,
        seed: 505,
        ..FixtureConfig::default()
    };
    let bundle = write_fixture_bundle(&config, &dir.path().join("fixture")).unwrap();

    // Two methods, head-to-head style: logistic regression and the k=128
    // SAE probe, swept over standard + all 11 noise points.
    let manifest = ExperimentManifest {
        datasets: vec![bundle.manifest_path.clone()],
        saes: vec![SaeEntry {
            path: bundle.sae_path.clone(),
            width: 256,
            l0: None,
        }],
        methods: MethodRoster {
            baseline_families: vec!["logreg".into()],
            baseline_pooling: vec![PoolMode::Last],
            attn_probe: false,
            sae_probes: Some(SaeProbeSpec {
                k: vec![128],
                pooling: vec![PoolMode::Last],
                binarize: false,
            }),
        },
        regimes: vec!["standard".into(), "noise".into()],
        seed: 518,
        out_dir: dir.path().join("out"),
    };
    let outcome = run_experiment(&manifest, 2).unwrap();
    assert_eq!(outcome.failures, Vec::<String>::new());
    // 2 methods x (1 standard + 11 noise points).
    assert_eq!(outcome.new_records, 24);
    let records = load_records(&outcome.out_dir).unwrap();

    // Full corruption leaves every method near chance on the clean test set.
    for r in records.iter().filter(|r| r.regime == "noise" && r.param == 0.5) {
        assert!(
            (0.40..=0.60).contains(&r.auc_test),
            "{} at fraction 0.5: test AUC {}",
            r.method_id,
            r.auc_test
        );
    }

    // Zero corruption reproduces the standard result exactly.
    for std_rec in records.iter().filter(|r| r.regime == "standard") {
        let noise0 = records
            .iter()
            .find(|r| r.regime == "noise" && r.param == 0.0 && r.method_id == std_rec.method_id)
            .expect("noise sweep includes fraction 0");
        assert_eq!(std_rec.auc_val.to_bits(), noise0.auc_val.to_bits());
        assert_eq!(std_rec.auc_test.to_bits(), noise0.auc_test.to_bits());
    }

    assert!(start.elapsed().as_secs_f64() < 300.0, "runtime budget exceeded");
    pass("05 label-noise-regime-sanity", start);
}

fn synthetic_record(method: &str, auc_val: f64, width: Option<usize>, k: Option<usize>) -> EvalRecord {
    EvalRecord {
        dataset_id: "acc".into(),
        regime: "standard".into(),
        param: 0.0,
        method_id: method.into(),
        k,
        width,
        l0: None,
        pooling: "last".into(),
        auc_val,
        auc_test: 0.5,
        seed: 0,
        hyperparams: String::new(),
    }
}

#[test]
fn criterion_06_quiver_protocol() {
    let start = Instant::now();
    let mut r = rng::rng(1006);

    // Property: over 200 random lists the winner always has maximal
    // validation AUC.
    for trial in 0..200 {
        let n = r.random_range(1..12);
        let records: Vec<EvalRecord> = (0..n)
            .map(|i| {
                let is_sae = r.random::<f64>() < 0.5;
                synthetic_record(
                    &format!("m{i}"),
                    (r.random::<f64>() * 8.0).round() / 8.0,
                    is_sae.then(|| r.random_range(1..5) * 16_000),
                    is_sae.then(|| r.random_range(1..=128)),
                )
            })
            .collect();
        let result = quiver_select(&records).unwrap();
        let max_val = records
            .iter()
            .map(|x| x.auc_val)
            .fold(f64::NEG_INFINITY, f64::max);
        let chosen = records
            .iter()
            .find(|x| x.method_id == result.chosen_method_id)
            .unwrap();
        assert_eq!(chosen.auc_val, max_val, "trial {trial}");
    }

    // Constructed ties honor SAE > smaller width > larger k > earlier.
    let ties = vec![
        synthetic_record("baseline-a", 1.0, None, None),
        synthetic_record("sae-131k-k128", 1.0, Some(131_000), Some(128)),
        synthetic_record("sae-16k-k16", 1.0, Some(16_000), Some(16)),
        synthetic_record("sae-16k-k128", 1.0, Some(16_000), Some(128)),
        synthetic_record("sae-16k-k128-later", 1.0, Some(16_000), Some(128)),
    ];
    let result = quiver_select(&ties).unwrap();
    assert_eq!(result.chosen_method_id, "sae-16k-k128");
    assert!(result.tie_break_applied);

    let sae_over_baseline = quiver_select(&[
        synthetic_record("baseline", 1.0, None, None),
        synthetic_record("sae", 1.0, Some(256), Some(1)),
    ])
    .unwrap();
    assert_eq!(sae_over_baseline.chosen_method_id, "sae");

    let width_pref = quiver_select(&[
        synthetic_record("sae-131k", 1.0, Some(131_000), Some(16)),
        synthetic_record("sae-16k", 1.0, Some(16_000), Some(16)),
    ])
    .unwrap();
    assert_eq!(width_pref.chosen_method_id, "sae-16k");
    pass("06 quiver-selection-protocol", start);
}

#[test]
fn criterion_07_gradient_checks() {
    let start = Instant::now();
    let step = 1e-3;
    let tol = 1e-4;
    let rel = |a: f64, f: f64| (a - f).abs() / a.abs().max(f.abs()).max(1e-3);

    // MLP: all nine depth x width combinations at seeded random init.
    let mut r = rng::rng(1007);
    let n = 8;
    let d = 4;
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| r.random::<f64>() - 0.5).collect())
        .collect();
    let y: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let x = Mat::from_rows(&rows);

    for depth in [1usize, 2, 3] {
        for width in [16usize, 32, 64] {
            let params = MlpParams {
                depth,
                width,
                learning_rate: 1e-3,
                weight_decay: 0.01,
            };
            // Evaluation point clear of ReLU kinks: differencing across the
            // non-differentiable point is not a gradient check.
            let net =
                mlp::nudge_biases_off_kinks(&mlp::MlpNet::init(d, &params, 91), &x, 5e-3);
            assert!(mlp::min_abs_preactivation(&net, &x) >= 5e-3);
            let (_, grads) = mlp::loss_and_grads(&net, &x, &y, params.weight_decay);
            let mut worst = 0.0f64;
            for (li, layer) in net.layers.iter().enumerate() {
                for row in 0..layer.w.rows() {
                    for col in 0..layer.w.cols() {
                        let a = grads[li].w.get(row, col);
                        let f = mlp::numeric_grad(
                            &net,
                            &x,
                            &y,
                            params.weight_decay,
                            li,
                            row,
                            Some(col),
                            step,
                        );
                        worst = worst.max(rel(a, f));
                    }
                    let a = grads[li].b[row];
                    let f =
                        mlp::numeric_grad(&net, &x, &y, params.weight_decay, li, row, None, step);
                    worst = worst.max(rel(a, f));
                }
            }
            assert!(worst < tol, "mlp {depth}x{width}: max rel error {worst}");
        }
    }

    // Attention probe over a 3-token tensor.
    let (n, t, d) = (6, 3, 4);
    let data: Vec<f32> = (0..n * t * d).map(|_| r.random::<f32>() - 0.5).collect();
    let x = ActivationTensor::new(data, n, t, d, vec![t as u32; n]).unwrap();
    let y: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let probe = AttentionProbe {
        q: (0..d).map(|_| r.random::<f64>() - 0.5).collect(),
        v: (0..d).map(|_| r.random::<f64>() - 0.5).collect(),
        b: 0.2,
    };
    let wd = 0.01;
    let (_, grads) = attn_loss_and_grads(&probe, &x, &y, wd).unwrap();
    let mut worst = 0.0f64;
    let mut check = |analytic: f64, perturb: &dyn Fn(&mut AttentionProbe, f64)| {
        let mut plus = probe.clone();
        perturb(&mut plus, step);
        let mut minus = probe.clone();
        perturb(&mut minus, -step);
        let (lp, _) = attn_loss_and_grads(&plus, &x, &y, wd).unwrap();
        let (lm, _) = attn_loss_and_grads(&minus, &x, &y, wd).unwrap();
        worst = worst.max(rel(analytic, (lp - lm) / (2.0 * step)));
    };
    for j in 0..d {
        check(grads.q[j], &move |p: &mut AttentionProbe, s: f64| p.q[j] += s);
        check(grads.v[j], &move |p: &mut AttentionProbe, s: f64| p.v[j] += s);
    }
    check(grads.b, &|p: &mut AttentionProbe, s: f64| p.b += s);
    assert!(worst < tol, "attention probe: max rel error {worst}");

    pass("07 gradient-checks (9 MLP combos + attention)", start);
}

#[test]
fn criterion_08_single_token_degeneracy() {
    let start = Instant::now();
    let world = generate_world(32, 64, 808).unwrap();
    let (data, _) = fixtures::sample_dataset(&world, 512, 1).unwrap();
    let tensor = data.features.as_activations().unwrap();
    let pool = data.split.train_pool();
    let y_pool = data.targets_at(&pool);
    let y_test = data.targets_at(&data.split.test);

    // Pool modes identical bit-exactly on one token.
    let last = multitoken::pool_activations(tensor, PoolMode::Last).unwrap();
    let mean = multitoken::pool_activations(tensor, PoolMode::Mean).unwrap();
    let max = multitoken::pool_activations(tensor, PoolMode::Max).unwrap();
    let bits = |t: &ActivationTensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&last), bits(&mean));
    assert_eq!(bits(&last), bits(&max));

    // Attention probe vs last-token logistic regression.
    let x_pool_tensor = tensor.select_examples(&pool);
    let x_test_tensor = tensor.select_examples(&data.split.test);
    let attn = multitoken::train_attn_probe(
        &x_pool_tensor,
        &y_pool,
        &AttnHyperparams::default(),
        88,
    )
    .unwrap();
    let attn_auc = auc(&attn.score(&x_test_tensor).unwrap(), &y_test).unwrap();

    let features = tensor.last_token_mat();
    let x_pool = features.select_rows(&pool);
    let x_test = features.select_rows(&data.split.test);
    let logreg = probes::train_logreg(&x_pool, &y_pool, Reg::L2, 1.0).unwrap();
    let logreg_auc = auc(&logreg.score(&x_test).unwrap(), &y_test).unwrap();

    assert!(
        (attn_auc - logreg_auc).abs() <= 0.02,
        "attention {attn_auc} vs logreg {logreg_auc}"
    );
    pass("08 single-token-degeneracy", start);
}

#[test]
fn criterion_09_binarization_contract() {
    let start = Instant::now();
    // Multi-token latents via an identity SAE; one pooled value lands
    // exactly on the threshold.
    let d = 4;
    let mut w_enc = vec![0.0f32; d * d];
    for i in 0..d {
        w_enc[i * d + i] = 1.0;
    }
    let weights = SAEWeights::new(
        w_enc,
        vec![0.0; d],
        d,
        d,
        ActivationKind::ReLU,
        "acc-identity".into(),
    )
    .unwrap();
    let mut r = rng::rng(1009);
    let n = 40;
    let t = 3;
    let mut data: Vec<f32> = (0..n * t * d).map(|_| r.random::<f32>() * 2.0 - 0.5).collect();
    // Example 0 pools to exactly 1.0 in dimension 0.
    for tok in 0..t {
        data[tok * d] = if tok == 1 { 1.0 } else { 0.25 };
    }
    let x = ActivationTensor::new(data, n, t, d, vec![t as u32; n]).unwrap();
    let z = sae::encode(&x, &weights).unwrap();
    let pooled = sae::pool_latents(&z, PoolMode::Max).unwrap();
    assert_eq!(pooled.row(0)[0], 1.0);

    let binary = sae::binarize(&pooled, 1.0);
    assert!(binary.values().iter().all(|&v| v == 0.0 || v == 1.0));
    // Strict inequality at the boundary: exactly 1.0 maps to 0.
    assert_eq!(binary.row(0)[0], 0.0);
    pass("09 binarization-contract", start);
}

#[test]
fn criterion_10_format_round_trip_and_corruption() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng::rng(1010);
    for trial in 0..100 {
        let n = r.random_range(1..6);
        let t = r.random_range(1..5);
        let d = r.random_range(1..8);
        let data: Vec<f32> = (0..n * t * d)
            .map(|_| (r.random::<f64>() as f32 - 0.5) * 1000.0)
            .collect();
        let mask: Vec<u32> = (0..n).map(|_| r.random_range(1..=t) as u32).collect();
        let original = ActivationTensor::new(data, n, t, d, mask).unwrap();
        let path = dir.path().join(format!("t{trial}.spba"));
        tensor::write_tensor(&original, &path).unwrap();
        let back = tensor::read_tensor(&path).unwrap();
        assert_eq!(
            original.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            back.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            "trial {trial}"
        );
        assert_eq!(original.token_mask(), back.token_mask());
    }

    // Corrupted headers raise the designated errors.
    let path = dir.path().join("corrupt.spba");
    let tiny = ActivationTensor::new(vec![1.0, 2.0], 1, 1, 2, vec![1]).unwrap();
    tensor::write_tensor(&tiny, &path).unwrap();
    let good = std::fs::read(&path).unwrap();

    let mut bad_magic = good.clone();
    bad_magic[0] = b'Z';
    std::fs::write(&path, &bad_magic).unwrap();
    assert!(matches!(
        tensor::read_tensor(&path).unwrap_err(),
        sprobe::Error::BadMagic { .. }
    ));

    let mut bad_version = good.clone();
    bad_version[4] = 7;
    std::fs::write(&path, &bad_version).unwrap();
    assert!(matches!(
        tensor::read_tensor(&path).unwrap_err(),
        sprobe::Error::VersionMismatch { found: 7, .. }
    ));

    std::fs::write(&path, &good[..good.len() - 3]).unwrap();
    assert!(matches!(
        tensor::read_tensor(&path).unwrap_err(),
        sprobe::Error::TruncatedPayload { .. }
    ));
    pass("10 format-round-trip", start);
}

#[test]
fn criterion_11_diagnostics() {
    let start = Instant::now();
    // Separable fixture with exactly one flipped label.
    let mut r = rng::rng(1011);
    let n = 80;
    let mut data = Vec::with_capacity(n * 2);
    let mut targets = Vec::with_capacity(n);
    for i in 0..n {
        let y = u8::from(i % 2 == 0);
        let center = if y == 1 { 3.0 } else { -3.0 };
        data.push(center + (r.random::<f32>() - 0.5) * 0.3);
        data.push((r.random::<f32>() - 0.5) * 0.3);
        targets.push(y);
    }
    let flipped_index = 23;
    let clean = targets.clone();
    targets[flipped_index] = 1 - targets[flipped_index];

    let tensor = ActivationTensor::from_matrix(data, n, 2).unwrap();
    let split = sprobe::tensor::Split {
        train: (0..n - 1).collect(),
        val: vec![],
        test: vec![n - 1],
    };
    let noisy = sprobe::tensor::LabeledDataset::new(
        sprobe::tensor::Features::Activations(tensor.clone()),
        targets,
        split.clone(),
    )
    .unwrap();

    // Model trained on the clean labels knows the true boundary.
    let features = tensor.last_token_mat();
    let model = probes::train_logreg(&features, &clean, Reg::L2, 100.0).unwrap();
    let rows = sprobe::diagnostics::mine_disagreements(&model, &noisy, 10).unwrap();
    assert_eq!(rows[0].index, flipped_index);
    assert!(rows[0].confidence > 0.9);

    // Token-mean table vs an in-test group-by oracle, to 1e-10.
    let n_stream = 600;
    let ids: Vec<u32> = (0..n_stream).map(|_| r.random_range(0..9)).collect();
    let values: Vec<f32> = (0..n_stream * 2)
        .map(|_| r.random::<f32>() * 6.0 - 3.0)
        .collect();
    let stream_tensor = ActivationTensor::from_matrix(values.clone(), n_stream, 2).unwrap();
    let stream = sprobe::diagnostics::TokenStream::new(stream_tensor, ids.clone()).unwrap();
    let table = sprobe::diagnostics::top_activating_tokens(&model, &stream, 10).unwrap();

    let (w, b) = model.linear_map().unwrap();
    for token in 0..9u32 {
        let scores: Vec<f64> = (0..n_stream)
            .filter(|&i| ids[i] == token)
            .map(|i| {
                f64::from(values[i * 2]) * w[0] + f64::from(values[i * 2 + 1]) * w[1] + b
            })
            .collect();
        let row = table.iter().find(|row| row.token_id == token);
        if scores.len() < 10 {
            assert!(row.is_none());
            continue;
        }
        let row = row.expect("token above min occurrences");
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        assert!(
            (row.mean_activation - mean).abs() <= 1e-10,
            "token {token}: {} vs {mean}",
            row.mean_activation
        );
        assert_eq!(row.occurrences, scores.len());
    }
    pass("11 diagnostics", start);
}

#[test]
fn criterion_12_manifest_determinism() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config = FixtureConfig {
        d_model: 32,
        w_true: 64,
        n: 640,
        seed: 1212,
        ..FixtureConfig::default()
    };
    let bundle = write_fixture_bundle(&config, &dir.path().join("fixture")).unwrap();
    let base = ExperimentManifest {
        datasets: vec![bundle.manifest_path.clone()],
        saes: vec![SaeEntry {
            path: bundle.sae_path.clone(),
            width: 64,
            l0: None,
        }],
        methods: MethodRoster {
            baseline_families: vec!["logreg".into(), "knn".into()],
            baseline_pooling: vec![PoolMode::Last],
            attn_probe: false,
            sae_probes: Some(SaeProbeSpec {
                k: vec![16],
                pooling: vec![PoolMode::Last],
                binarize: false,
            }),
        },
        regimes: vec!["standard".into(), "scarcity".into()],
        seed: 1222,
        out_dir: dir.path().join("out1"),
    };
    let mut second = base.clone();
    second.out_dir = dir.path().join("out2");

    let o1 = run_experiment(&base, 3).unwrap();
    let o2 = run_experiment(&second, 1).unwrap();
    assert_eq!(o1.failures, Vec::<String>::new());
    let r1 = load_records(&o1.out_dir).unwrap();
    let r2 = load_records(&o2.out_dir).unwrap();
    assert!(!r1.is_empty());
    assert_eq!(r1.len(), r2.len());
    for (a, b) in r1.iter().zip(&r2) {
        assert_eq!(a.method_id, b.method_id);
        assert_eq!(a.regime, b.regime);
        assert_eq!(a.param, b.param);
        assert!(
            (a.auc_val - b.auc_val).abs() <= 1e-10,
            "{} auc_val {} vs {}",
            a.method_id,
            a.auc_val,
            b.auc_val
        );
        assert!(
            (a.auc_test - b.auc_test).abs() <= 1e-10,
            "{} auc_test {} vs {}",
            a.method_id,
            a.auc_test,
            b.auc_test
        );
    }
    pass("12 manifest-determinism", start);
}

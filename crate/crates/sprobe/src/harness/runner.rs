//! Task enumeration and execution: apply regime, build features, select
//! hyperparameters, fit, score, persist.
//!
//! Determinism: every task's seeds derive from the global seed, the dataset
//! id, and the method id via FNV-1a (see [`crate::rng::derive_seed`]), never
//! from the regime point, so a regime at its identity parameter (e.g. noise
//! fraction 0) reproduces the standard run bit-for-bit. Workers only
//! parallelize across tasks; results are merged in task order and persisted
//! by a single writer.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{self, EvalRecord};
use crate::multitoken;
use crate::probes::{self, HyperparamGrid, Reg};
use crate::regimes::{self, RegimeKind, RegimeSpec};
use crate::rng;
use crate::sae::{self, LatentMatrix, PoolMode, SAEWeights};
use crate::tensor::{DatasetManifest, Features, LabeledDataset};

use super::manifest::{ExperimentManifest, Method};
use super::{record_to_csv_row, RECORDS_HEADER};

#[derive(Debug)]
pub struct RunOutcome {
    pub new_records: usize,
    pub skipped_cached: usize,
    pub failures: Vec<String>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexEntry {
    record: EvalRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    model: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct TaskIndex {
    manifest_hash: String,
    /// Fixed training constants that are not part of any hyperparameter
    /// grid, recorded so runs stay comparable.
    #[serde(default)]
    protocol: serde_json::Value,
    /// Task hash -> finished entry, insertion-ordered by task enumeration.
    tasks: BTreeMap<String, IndexEntry>,
    /// Row order of records.csv (task hashes), so quiver grouping preserves
    /// roster order.
    order: Vec<String>,
}

fn protocol_metadata() -> serde_json::Value {
    serde_json::json!({
        "grid_candidates_per_family": probes::GRID_SIZE,
        "logreg_convergence_tol": 1e-6,
        "logreg_max_iterations": 1000,
        "mlp_epochs": 200,
        "mlp_early_stop_patience": 20,
        "mlp_batch": "min(64, n)",
        "attn_optimizer": "same schedule as mlp",
        "scarcity_subsample": "class-balanced; positives take the parity extra",
        "noise_flip_count": "floor(fraction * pool_size), train+validation indices",
        "imbalance_train_size": "floor(min(pool_pos, pool_neg) / 0.95), constant across ratios",
        "binarize_threshold": 1.0,
    })
}

struct LoadedDataset {
    id: String,
    data: LabeledDataset,
    manifest: DatasetManifest,
}

struct Task {
    dataset_idx: usize,
    kind: RegimeKind,
    method_idx: usize,
    hash: String,
}

struct TaskContext<'a> {
    datasets: &'a [LoadedDataset],
    saes: &'a [SAEWeights],
    methods: &'a [Method],
    manifest: &'a ExperimentManifest,
    latent_cache: Mutex<HashMap<String, Arc<LatentMatrix>>>,
}

fn task_hash(manifest_hash: u64, ds_id: &str, kind: &RegimeKind, method_id: &str, seed: u64) -> String {
    let key = format!(
        "{manifest_hash:x}/{ds_id}/{}/{}/{method_id}/{seed}",
        kind.name(),
        kind.param()
    );
    format!("{:016x}", rng::fnv1a(key.as_bytes()))
}

/// Points for one regime kind. Scarcity points that exceed the dataset's
/// training pool are dropped here (structurally infeasible, not failures).
fn regime_points(kind: &str, ds: &LoadedDataset) -> Result<Vec<RegimeKind>> {
    Ok(match kind {
        "standard" => vec![RegimeKind::Standard],
        "scarcity" => {
            let pool = ds.data.split.train_pool().len();
            regimes::scarcity_grid()
                .into_iter()
                .filter(|&n| n <= pool)
                .map(|n| RegimeKind::Scarcity { n })
                .collect()
        }
        "imbalance" => regimes::imbalance_grid()
            .into_iter()
            .map(|ratio| RegimeKind::Imbalance { ratio })
            .collect(),
        "noise" => regimes::noise_grid()
            .into_iter()
            .map(|fraction| RegimeKind::LabelNoise { fraction })
            .collect(),
        "shift" => match (&ds.manifest.ood_activations, &ds.manifest.ood_targets) {
            (Some(acts), Some(targets)) => vec![RegimeKind::CovariateShift {
                activations: acts.clone(),
                targets: targets.clone(),
            }],
            _ => Vec::new(),
        },
        other => {
            return Err(Error::Manifest(format!("unknown regime {other:?}")));
        }
    })
}

fn latents_for(
    ctx: &TaskContext<'_>,
    ds_idx: usize,
    sae_index: usize,
    pooling: PoolMode,
    binarize: bool,
    shifted: Option<&LabeledDataset>,
) -> Result<Arc<LatentMatrix>> {
    let key = format!(
        "{ds_idx}/{sae_index}/{}/{binarize}/{}",
        pooling.name(),
        if shifted.is_some() { "shift" } else { "base" }
    );
    if let Some(z) = ctx.latent_cache.lock().unwrap().get(&key) {
        return Ok(z.clone());
    }
    let data = shifted.unwrap_or(&ctx.datasets[ds_idx].data);
    let tensor = data.features.as_activations().ok_or_else(|| {
        Error::InvalidParam("sae probes need activation features, found latents".into())
    })?;
    let sae = &ctx.saes[sae_index];
    let per_token = sae::encode(tensor, sae)?;
    let mut z = sae::pool_latents(&per_token, pooling)?;
    if binarize {
        z = sae::binarize(&z, 1.0);
    }
    let z = Arc::new(z);
    ctx.latent_cache
        .lock()
        .unwrap()
        .insert(key, z.clone());
    Ok(z)
}

struct TaskSuccess {
    record: EvalRecord,
    model_json: Option<String>,
}

fn run_task(ctx: &TaskContext<'_>, task: &Task) -> Result<TaskSuccess> {
    let ds = &ctx.datasets[task.dataset_idx];
    let method = &ctx.methods[task.method_idx];
    let method_id = method.id(&ctx.manifest.saes);
    let global = ctx.manifest.seed;

    let regime_seed = rng::derive_seed(
        global,
        &format!("regime/{}/{}/{}", ds.id, task.kind.name(), task.kind.param()),
    );
    let spec = RegimeSpec::new(task.kind.clone(), regime_seed);
    let data = regimes::apply_regime(&ds.data, &spec)?;
    let is_shift = matches!(task.kind, RegimeKind::CovariateShift { .. });

    let pool_idx = data.split.train_pool();
    let test_idx = &data.split.test;
    let y_pool = data.targets_at(&pool_idx);
    let y_test = data.targets_at(test_idx);

    let plan_seed = rng::derive_seed(global, &format!("cv/{}", ds.id));
    let plan = metrics::make_cv_plan_stratified(&y_pool, plan_seed)?;
    let grid_seed = rng::derive_seed(global, &format!("grid/{}/{method_id}", ds.id));
    let hpsel_seed = rng::derive_seed(global, &format!("hpsel/{}/{method_id}", ds.id));
    let fit_seed = rng::derive_seed(global, &format!("fit/{}/{method_id}", ds.id));

    let mut k_out = None;
    let mut width_out = None;
    let mut l0_out = None;

    let (auc_val, auc_test, hyperparams, model_json) = match method {
        Method::Baseline { family, pooling } => {
            let features = match &data.features {
                Features::Activations(t) => {
                    if t.n_tokens() == 1 {
                        t.last_token_mat()
                    } else {
                        multitoken::pool_activations(t, *pooling)?.last_token_mat()
                    }
                }
                Features::Latents(z) => {
                    if *pooling != PoolMode::Last {
                        return Err(Error::InvalidParam(
                            "latent datasets support last-token pooling only".into(),
                        ));
                    }
                    z.to_mat()
                }
            };
            let x_pool = features.select_rows(&pool_idx);
            let x_test = features.select_rows(test_idx);
            let grid = HyperparamGrid::for_family(
                *family,
                Reg::L2,
                x_pool.rows(),
                x_pool.cols(),
                grid_seed,
            );
            let sel = metrics::select_hyperparams(&grid, &x_pool, &y_pool, &plan, hpsel_seed)?;
            let model = probes::train(&x_pool, &y_pool, &sel.hyperparams, fit_seed)?;
            let auc_test = metrics::auc(&model.score(&x_test)?, &y_test)?;
            let json = if family.is_linear() {
                Some(model.to_json()?)
            } else {
                None
            };
            (sel.auc_val, auc_test, sel.hyperparams.label(), json)
        }

        Method::Attn => {
            let tensor = data.features.as_activations().ok_or_else(|| {
                Error::InvalidParam("attention probe needs activation features".into())
            })?;
            let x_pool = tensor.select_examples(&pool_idx);
            let x_test = tensor.select_examples(test_idx);
            let grid = multitoken::attn_grid(grid_seed);

            // Attention probes run the same fold protocol by hand; the
            // tabular selector is typed to the five probe families.
            let mut best: Option<(usize, f64)> = None;
            let mut failures = Vec::new();
            for (ci, hp) in grid.iter().enumerate() {
                let mut fold_aucs = Vec::new();
                for (fi, fold) in plan.folds.iter().enumerate() {
                    let train_seed =
                        rng::derive_seed(hpsel_seed, &format!("cand{ci}/fold{fi}"));
                    let (tr, va): (&[usize], &[usize]) = match plan.kind {
                        metrics::CvKind::TrainOnAll => (&fold.train, &fold.train),
                        _ => (&fold.train, &fold.val),
                    };
                    let yv: Vec<u8> = va.iter().map(|&i| y_pool[i]).collect();
                    let pos = yv.iter().filter(|&&t| t == 1).count();
                    if pos == 0 || pos == yv.len() {
                        continue;
                    }
                    let xt = x_pool.select_examples(tr);
                    let yt: Vec<u8> = tr.iter().map(|&i| y_pool[i]).collect();
                    match multitoken::train_attn_probe(&xt, &yt, hp, train_seed) {
                        Ok(m) => {
                            let xv = x_pool.select_examples(va);
                            match m.score(&xv).and_then(|s| metrics::auc(&s, &yv)) {
                                Ok(a) => fold_aucs.push(a),
                                Err(e) => failures.push(format!("cand {ci} fold {fi}: {e}")),
                            }
                        }
                        Err(e) => failures.push(format!("cand {ci} fold {fi}: {e}")),
                    }
                }
                if !fold_aucs.is_empty() {
                    let mean = fold_aucs.iter().sum::<f64>() / fold_aucs.len() as f64;
                    if best.is_none_or(|(_, b)| mean > b) {
                        best = Some((ci, mean));
                    }
                }
            }
            let Some((best_ci, auc_val)) = best else {
                return Err(Error::AllCandidatesFailed {
                    causes: failures.join("\n"),
                });
            };
            let hp = &grid[best_ci];
            let model = multitoken::train_attn_probe(&x_pool, &y_pool, hp, fit_seed)?;
            let auc_test = metrics::auc(&model.score(&x_test)?, &y_test)?;
            (
                auc_val,
                auc_test,
                format!("lr={:.3e},wd={:.3e}", hp.learning_rate, hp.weight_decay),
                Some(model.to_json()?),
            )
        }

        Method::Sae {
            sae_index,
            k,
            pooling,
            binarize,
        } => {
            let entry = &ctx.manifest.saes[*sae_index];
            width_out = Some(entry.width);
            l0_out = entry.l0;
            k_out = Some(*k);
            let z = latents_for(
                ctx,
                task.dataset_idx,
                *sae_index,
                *pooling,
                *binarize,
                is_shift.then_some(&data),
            )?;
            if *k > z.width() {
                return Err(Error::InvalidParam(format!(
                    "k {k} exceeds sae width {}",
                    z.width()
                )));
            }
            let z_pool = z.select_rows(&pool_idx);
            let selection = sae::select_top_k(&z_pool, &y_pool, *k)?;
            let features = z.feature_mat(&selection.indices);
            let x_pool = features.select_rows(&pool_idx);
            let x_test = features.select_rows(test_idx);
            let grid = HyperparamGrid::logreg(Reg::L1);
            let sel = metrics::select_hyperparams(&grid, &x_pool, &y_pool, &plan, hpsel_seed)?;
            let model = probes::train(&x_pool, &y_pool, &sel.hyperparams, fit_seed)?;
            let auc_test = metrics::auc(&model.score(&x_test)?, &y_test)?;
            (
                sel.auc_val,
                auc_test,
                sel.hyperparams.label(),
                Some(model.to_json()?),
            )
        }
    };

    let record = EvalRecord {
        dataset_id: ds.id.clone(),
        regime: task.kind.name().to_string(),
        param: task.kind.param(),
        method_id,
        k: k_out,
        width: width_out,
        l0: l0_out,
        pooling: method.pooling_name().to_string(),
        auc_val,
        auc_test,
        seed: global,
        hyperparams,
    };
    record.validate()?;
    Ok(TaskSuccess { record, model_json })
}

fn load_index(path: &Path) -> TaskIndex {
    std::fs::read_to_string(path)
        .ok()
        .and_then(|text| serde_json::from_str(&text).ok())
        .unwrap_or_default()
}

/// Compute quiver selections from the ordered record list and write
/// `quivers.csv`. The baseline quiver holds non-SAE records; the with-SAE
/// quiver holds everything.
pub(super) fn write_quivers(records: &[EvalRecord], out_dir: &Path) -> Result<usize> {
    let mut groups: BTreeMap<(String, String, String), Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.dataset_id.clone(), r.regime.clone(), format!("{}", r.param)))
            .or_default()
            .push(r);
    }
    let mut out = String::from(
        "dataset_id,regime,param,quiver,chosen_method_id,auc_val,auc_test,chosen_is_sae,tie_break\n",
    );
    let mut rows = 0;
    for ((ds, regime, param), group) in &groups {
        let owned: Vec<EvalRecord> = group.iter().map(|&r| r.clone()).collect();
        let baselines: Vec<EvalRecord> = owned.iter().filter(|r| !r.is_sae()).cloned().collect();
        for (name, roster) in [("baseline", &baselines), ("with_sae", &owned)] {
            if roster.is_empty() {
                continue;
            }
            let result = regimes::quiver_select(roster)?;
            let chosen = roster
                .iter()
                .find(|r| r.method_id == result.chosen_method_id)
                .unwrap();
            out.push_str(&format!(
                "{ds},{regime},{param},{name},{},{},{},{},{}\n",
                result.chosen_method_id,
                chosen.auc_val,
                result.auc_test,
                chosen.is_sae(),
                result.tie_break_applied
            ));
            rows += 1;
        }
    }
    std::fs::write(out_dir.join("quivers.csv"), out)?;
    Ok(rows)
}

/// Execute every (dataset, regime point, method) task the manifest names.
/// Finished tasks found in the results index are skipped by content hash,
/// so interrupted sweeps resume and finished manifests re-run as no-ops.
pub fn run_experiment(manifest: &ExperimentManifest, workers: usize) -> Result<RunOutcome> {
    manifest.validate()?;
    let out_dir = manifest.out_dir.clone();
    std::fs::create_dir_all(&out_dir)?;
    std::fs::create_dir_all(out_dir.join("models"))?;

    let index_path = out_dir.join("index.json");
    let mut index = load_index(&index_path);
    let manifest_hash = manifest.content_hash();
    let manifest_hash_hex = format!("{manifest_hash:016x}");
    if index.manifest_hash != manifest_hash_hex {
        // Different manifest semantics: hashes will not collide, keep the
        // entries (they simply will not match) but stamp the new hash.
        index.manifest_hash = manifest_hash_hex.clone();
    }
    index.protocol = protocol_metadata();

    let mut datasets = Vec::new();
    for path in &manifest.datasets {
        let ds_manifest = DatasetManifest::load(path)?;
        if datasets
            .iter()
            .any(|d: &LoadedDataset| d.id == ds_manifest.dataset_id)
        {
            return Err(Error::Manifest(format!(
                "duplicate dataset_id {:?}; records and quivers group by id",
                ds_manifest.dataset_id
            )));
        }
        let data = crate::tensor::load_dataset(&ds_manifest)?;
        datasets.push(LoadedDataset {
            id: ds_manifest.dataset_id.clone(),
            data,
            manifest: ds_manifest,
        });
    }
    let mut saes = Vec::new();
    for entry in &manifest.saes {
        let mut weights = SAEWeights::read(&entry.path)?;
        weights.nominal_l0 = entry.l0;
        if weights.width() != entry.width {
            return Err(Error::Manifest(format!(
                "sae {} declares width {} but file has {}",
                entry.path.display(),
                entry.width,
                weights.width()
            )));
        }
        saes.push(weights);
    }
    let methods = manifest.expand_methods()?;
    let regime_kinds: Vec<String> = if manifest.regimes.is_empty() {
        vec!["standard".to_string()]
    } else {
        manifest.regimes.clone()
    };

    let mut tasks = Vec::new();
    let mut failures = Vec::new();
    for (dataset_idx, ds) in datasets.iter().enumerate() {
        for kind_name in &regime_kinds {
            let points = regime_points(kind_name, ds)?;
            if points.is_empty() && kind_name == "shift" {
                failures.push(format!(
                    "dataset {}: shift regime requested but manifest has no OOD files",
                    ds.id
                ));
            }
            for kind in points {
                for (method_idx, method) in methods.iter().enumerate() {
                    let hash = task_hash(
                        manifest_hash,
                        &ds.id,
                        &kind,
                        &method.id(&manifest.saes),
                        manifest.seed,
                    );
                    tasks.push(Task {
                        dataset_idx,
                        kind: kind.clone(),
                        method_idx,
                        hash,
                    });
                }
            }
        }
    }

    let pending: Vec<usize> = tasks
        .iter()
        .enumerate()
        .filter(|(_, t)| !index.tasks.contains_key(&t.hash))
        .map(|(i, _)| i)
        .collect();
    let skipped_cached = tasks.len() - pending.len();

    let ctx = TaskContext {
        datasets: &datasets,
        saes: &saes,
        methods: &methods,
        manifest,
        latent_cache: Mutex::new(HashMap::new()),
    };

    let results: Vec<Option<Result<TaskSuccess>>> = {
        let slots: Mutex<Vec<Option<Result<TaskSuccess>>>> =
            Mutex::new((0..pending.len()).map(|_| None).collect());
        let cursor = AtomicUsize::new(0);
        let workers = workers.max(1).min(pending.len().max(1));
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let slot = cursor.fetch_add(1, Ordering::SeqCst);
                    if slot >= pending.len() {
                        break;
                    }
                    let task = &tasks[pending[slot]];
                    let outcome = run_task(&ctx, task);
                    slots.lock().unwrap()[slot] = Some(outcome);
                });
            }
        });
        slots.into_inner().unwrap()
    };

    // Single-writer persistence, in task order.
    let mut new_records = 0;
    for (slot, &task_i) in pending.iter().enumerate() {
        let task = &tasks[task_i];
        let ds = &datasets[task.dataset_idx];
        let method_id = methods[task.method_idx].id(&manifest.saes);
        match results[slot]
            .as_ref()
            .expect("worker left a task unfinished")
        {
            Ok(success) => {
                let model_rel = match &success.model_json {
                    Some(json) => {
                        let rel = format!("models/{}.json", task.hash);
                        std::fs::write(out_dir.join(&rel), json)?;
                        Some(rel)
                    }
                    None => None,
                };
                index.order.push(task.hash.clone());
                index.tasks.insert(
                    task.hash.clone(),
                    IndexEntry {
                        record: success.record.clone(),
                        model: model_rel,
                    },
                );
                new_records += 1;
            }
            Err(e) => {
                failures.push(format!(
                    "dataset {} regime {}({}) method {}: {e}",
                    ds.id,
                    task.kind.name(),
                    task.kind.param(),
                    method_id
                ));
            }
        }
    }

    // records.csv is derived from the index in row order, so new runs only
    // ever append content and a missing file regenerates consistently.
    let ordered: Vec<EvalRecord> = index
        .order
        .iter()
        .filter_map(|h| index.tasks.get(h).map(|e| e.record.clone()))
        .collect();
    let mut csv = format!("{RECORDS_HEADER}\n");
    for record in &ordered {
        csv.push_str(&record_to_csv_row(record));
        csv.push('\n');
    }
    std::fs::write(out_dir.join("records.csv"), csv)?;
    std::fs::write(&index_path, serde_json::to_string_pretty(&index)?)?;

    // Quiver selections over everything persisted so far, in row order.
    if !ordered.is_empty() {
        write_quivers(&ordered, &out_dir)?;
    }

    Ok(RunOutcome {
        new_records,
        skipped_cached,
        failures,
        out_dir,
    })
}

//! ROC-AUC, the size-adaptive cross-validation protocol, and validation-AUC
//! hyperparameter selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::probes::{self, Hyperparams, HyperparamGrid};
use crate::rng;

/// Area under the ROC curve in Mann-Whitney form: the fraction of
/// (positive, negative) pairs where the positive scores higher, ties
/// counting one half. Computed from average ranks in O(n log n); tie groups
/// use exact float equality so the result matches pair counting exactly.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite {
            context: "auc scores".into(),
        });
    }
    let n = scores.len();
    let n_pos = labels.iter().filter(|&&t| t == 1).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j (1-based) share the average (i + 1 + j) / 2.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = order[i..j]
            .iter()
            .filter(|&&idx| labels[idx] == 1)
            .count();
        rank_sum_pos += avg_rank * pos_in_group as f64;
        i = j;
    }

    let np = n_pos as f64;
    let u = rank_sum_pos - np * (np + 1.0) / 2.0;
    Ok(u / (np * n_neg as f64))
}

/// Which validation protocol a training-pool size selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CvKind {
    /// n <= 3: fit on everything, select by training AUC.
    TrainOnAll,
    /// 3 < n <= 12: every held-out pair.
    LeaveTwoOut,
    /// 12 < n <= 128: six near-equal folds.
    SixFold,
    /// n > 128: one 80%/20% split.
    HoldOut20,
}

impl CvKind {
    pub fn for_n(n: usize) -> CvKind {
        match n {
            0..=3 => CvKind::TrainOnAll,
            4..=12 => CvKind::LeaveTwoOut,
            13..=128 => CvKind::SixFold,
            _ => CvKind::HoldOut20,
        }
    }
}

/// One train/validation division of the pool, in pool-local positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CVPlan {
    pub kind: CvKind,
    pub folds: Vec<Fold>,
}

fn leave_two_out(n: usize) -> Vec<Fold> {
    let mut folds = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let train: Vec<usize> = (0..n).filter(|&x| x != i && x != j).collect();
            folds.push(Fold {
                train,
                val: vec![i, j],
            });
        }
    }
    folds
}

fn folds_from_assignment(assignment: &[Vec<usize>], n: usize) -> Vec<Fold> {
    assignment
        .iter()
        .map(|val| {
            let mut val = val.clone();
            val.sort_unstable();
            let in_val: Vec<bool> = {
                let mut mask = vec![false; n];
                for &i in &val {
                    mask[i] = true;
                }
                mask
            };
            let train: Vec<usize> = (0..n).filter(|&i| !in_val[i]).collect();
            Fold { train, val }
        })
        .collect()
}

/// Build the plan the pool size dictates. Six-fold and holdout divisions are
/// seeded shuffles without class stratification; [`make_cv_plan_stratified`]
/// is the variant the harness uses when targets are at hand.
pub fn make_cv_plan(n: usize, seed: u64) -> Result<CVPlan> {
    if n < 2 {
        return Err(Error::InvalidParam(format!("cannot cross-validate n={n}")));
    }
    let kind = CvKind::for_n(n);
    let folds = match kind {
        CvKind::TrainOnAll => vec![Fold {
            train: (0..n).collect(),
            val: Vec::new(),
        }],
        CvKind::LeaveTwoOut => leave_two_out(n),
        CvKind::SixFold => {
            let mut order: Vec<usize> = (0..n).collect();
            rng::shuffle(&mut order, &mut rng::rng(rng::derive_seed(seed, "sixfold")));
            let mut assignment: Vec<Vec<usize>> = vec![Vec::new(); 6];
            for (pos, &idx) in order.iter().enumerate() {
                assignment[pos % 6].push(idx);
            }
            folds_from_assignment(&assignment, n)
        }
        CvKind::HoldOut20 => {
            let mut order: Vec<usize> = (0..n).collect();
            rng::shuffle(&mut order, &mut rng::rng(rng::derive_seed(seed, "holdout")));
            let take = ((n as f64) * 0.2).round() as usize;
            let val = order[..take].to_vec();
            folds_from_assignment(&[val], n)
        }
    };
    Ok(CVPlan { kind, folds })
}

/// Class-stratified plan: within each class, positions are shuffled and
/// dealt round-robin with a fold cursor that carries across classes, which
/// keeps the fold-size multiset identical to the unstratified plan.
pub fn make_cv_plan_stratified(targets: &[u8], seed: u64) -> Result<CVPlan> {
    let n = targets.len();
    if n < 2 {
        return Err(Error::InvalidParam(format!("cannot cross-validate n={n}")));
    }
    let kind = CvKind::for_n(n);
    if matches!(kind, CvKind::TrainOnAll | CvKind::LeaveTwoOut) {
        return make_cv_plan(n, seed);
    }

    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &t) in targets.iter().enumerate() {
        by_class[t as usize].push(i);
    }
    for (c, class) in by_class.iter_mut().enumerate() {
        let mut r = rng::rng(rng::derive_seed(seed, &format!("strat-c{c}")));
        rng::shuffle(class, &mut r);
    }

    let folds = match kind {
        CvKind::SixFold => {
            let mut assignment: Vec<Vec<usize>> = vec![Vec::new(); 6];
            let mut cursor = 0usize;
            for class in &by_class {
                for &idx in class {
                    assignment[cursor % 6].push(idx);
                    cursor += 1;
                }
            }
            folds_from_assignment(&assignment, n)
        }
        CvKind::HoldOut20 => {
            let all: Vec<usize> = (0..n).collect();
            let (_, val) = crate::tensor::stratified_holdout(
                &all,
                targets,
                0.2,
                rng::derive_seed(seed, "holdout-strat"),
            );
            folds_from_assignment(&[val], n)
        }
        _ => unreachable!(),
    };
    Ok(CVPlan { kind, folds })
}

/// Per-candidate outcome inside a selection run.
#[derive(Debug, Clone)]
pub struct CandidateEval {
    pub hyperparams: Hyperparams,
    /// Mean validation AUC over scoreable folds; `None` if every fold failed.
    pub auc_val: Option<f64>,
    pub fold_aucs: Vec<f64>,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct HyperparamSelection {
    pub hyperparams: Hyperparams,
    pub auc_val: f64,
    pub candidates: Vec<CandidateEval>,
    /// Skipped folds and other non-fatal conditions.
    pub warnings: Vec<String>,
}

/// Evaluate every grid candidate under the plan and return the one with
/// maximal mean validation AUC. `TrainOnAll` plans score the training set
/// itself. Single-class folds are skipped with a warning; ties break toward
/// the earlier grid position. Per-fold training seeds derive from `seed`,
/// the candidate index, and the fold index.
pub fn select_hyperparams(
    grid: &HyperparamGrid,
    features: &Mat,
    targets: &[u8],
    plan: &CVPlan,
    seed: u64,
) -> Result<HyperparamSelection> {
    if grid.candidates.is_empty() {
        return Err(Error::InvalidParam("empty hyperparameter grid".into()));
    }
    if features.rows() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} rows for {} targets",
            features.rows(),
            targets.len()
        )));
    }

    let mut warnings = Vec::new();
    let mut candidates = Vec::with_capacity(grid.candidates.len());

    for (ci, hp) in grid.candidates.iter().enumerate() {
        let mut fold_aucs = Vec::new();
        let mut failures = Vec::new();
        for (fi, fold) in plan.folds.iter().enumerate() {
            let train_seed = rng::derive_seed(seed, &format!("cand{ci}/fold{fi}"));
            let (train_idx, val_idx): (&[usize], &[usize]) = match plan.kind {
                CvKind::TrainOnAll => (&fold.train, &fold.train),
                _ => (&fold.train, &fold.val),
            };
            let y_train: Vec<u8> = train_idx.iter().map(|&i| targets[i]).collect();
            let y_val: Vec<u8> = val_idx.iter().map(|&i| targets[i]).collect();
            let val_pos = y_val.iter().filter(|&&t| t == 1).count();
            if val_pos == 0 || val_pos == y_val.len() {
                let msg = format!("candidate {ci} fold {fi}: single-class validation, skipped");
                warnings.push(msg.clone());
                failures.push(msg);
                continue;
            }
            let x_train = features.select_rows(train_idx);
            let model = match probes::train(&x_train, &y_train, hp, train_seed) {
                Ok(m) => m,
                Err(e) => {
                    let msg = format!("candidate {ci} fold {fi}: train failed: {e}");
                    warnings.push(msg.clone());
                    failures.push(msg);
                    continue;
                }
            };
            let x_val = features.select_rows(val_idx);
            match model.score(&x_val).and_then(|s| auc(&s, &y_val)) {
                Ok(a) => fold_aucs.push(a),
                Err(e) => {
                    let msg = format!("candidate {ci} fold {fi}: scoring failed: {e}");
                    warnings.push(msg.clone());
                    failures.push(msg);
                }
            }
        }
        let auc_val = if fold_aucs.is_empty() {
            None
        } else {
            Some(fold_aucs.iter().sum::<f64>() / fold_aucs.len() as f64)
        };
        candidates.push(CandidateEval {
            hyperparams: hp.clone(),
            auc_val,
            fold_aucs,
            failures,
        });
    }

    let mut best: Option<(usize, f64)> = None;
    for (ci, cand) in candidates.iter().enumerate() {
        if let Some(a) = cand.auc_val {
            if best.is_none_or(|(_, b)| a > b) {
                best = Some((ci, a));
            }
        }
    }
    let Some((best_idx, best_auc)) = best else {
        let causes = candidates
            .iter()
            .enumerate()
            .map(|(ci, c)| format!("candidate {ci} [{}]: {}", c.hyperparams.label(), c.failures.join("; ")))
            .collect::<Vec<_>>()
            .join("\n");
        return Err(Error::AllCandidatesFailed { causes });
    };

    Ok(HyperparamSelection {
        hyperparams: candidates[best_idx].hyperparams.clone(),
        auc_val: best_auc,
        candidates,
        warnings,
    })
}

/// One evaluated (method, dataset, regime point) outcome; the quiver
/// selector consumes lists of these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub dataset_id: String,
    /// Regime kind name: standard, scarcity, imbalance, noise, shift.
    pub regime: String,
    /// Regime parameter value (n, ratio, fraction; 0 where not applicable).
    pub param: f64,
    pub method_id: String,
    /// SAE-probe latent count; `None` for baselines.
    pub k: Option<usize>,
    /// SAE width; `None` for baselines.
    pub width: Option<usize>,
    /// Nominal SAE L0; `None` for baselines or when unknown.
    pub l0: Option<f64>,
    pub pooling: String,
    pub auc_val: f64,
    pub auc_test: f64,
    pub seed: u64,
    /// Chosen hyperparameter label (JSON index only, not a CSV column).
    #[serde(default)]
    pub hyperparams: String,
}

impl EvalRecord {
    pub fn is_sae(&self) -> bool {
        self.width.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("auc_val", self.auc_val), ("auc_test", self.auc_test)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParam(format!("{name} {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

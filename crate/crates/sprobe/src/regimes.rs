//! The four difficult probing regimes (data scarcity, class imbalance,
//! label noise, covariate shift) and the quiver-of-arrows selection
//! protocol.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::EvalRecord;
use crate::rng;
use crate::tensor::{Features, LabeledDataset, Split};

/// Twenty training-set sizes, geometrically spaced over [2, 1024], rounded
/// to integers with duplicates bumped up so the grid is strictly increasing.
pub fn scarcity_grid() -> Vec<usize> {
    let count = 20;
    let (lo, hi) = (2f64.ln(), 1024f64.ln());
    let mut values: Vec<usize> = (0..count)
        .map(|i| {
            let t = i as f64 / (count - 1) as f64;
            (lo + t * (hi - lo)).exp().round() as usize
        })
        .collect();
    for i in 1..values.len() {
        if values[i] <= values[i - 1] {
            values[i] = values[i - 1] + 1;
        }
    }
    values
}

/// Nineteen positive-class ratios linearly spaced over [0.05, 0.95].
/// Computed as k/20 so the endpoints land exactly on the bounds.
pub fn imbalance_grid() -> Vec<f64> {
    (1..=19).map(|k| k as f64 / 20.0).collect()
}

/// Eleven corruption fractions linearly spaced over [0, 0.5].
pub fn noise_grid() -> Vec<f64> {
    (0..=10).map(|k| k as f64 / 20.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RegimeKind {
    Standard,
    /// Subsample the training pool to `n` examples, class-balanced as
    /// closely as parity allows. The test set is untouched.
    Scarcity { n: usize },
    /// Fix the train positive rate to `ratio` at a constant total size and
    /// resample the test set to the same ratio.
    Imbalance { ratio: f64 },
    /// Flip a random `fraction` of train and validation targets; the test
    /// set stays uncorrupted.
    #[serde(rename = "noise")]
    LabelNoise { fraction: f64 },
    /// Keep training untouched; replace the test set with out-of-
    /// distribution examples loaded from these files.
    #[serde(rename = "shift")]
    CovariateShift {
        activations: PathBuf,
        targets: PathBuf,
    },
}

impl RegimeKind {
    pub fn name(&self) -> &'static str {
        match self {
            RegimeKind::Standard => "standard",
            RegimeKind::Scarcity { .. } => "scarcity",
            RegimeKind::Imbalance { .. } => "imbalance",
            RegimeKind::LabelNoise { .. } => "noise",
            RegimeKind::CovariateShift { .. } => "shift",
        }
    }

    /// The regime's sweep parameter as a float (0 for standard and shift).
    pub fn param(&self) -> f64 {
        match self {
            RegimeKind::Standard | RegimeKind::CovariateShift { .. } => 0.0,
            RegimeKind::Scarcity { n } => *n as f64,
            RegimeKind::Imbalance { ratio } => *ratio,
            RegimeKind::LabelNoise { fraction } => *fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpec {
    #[serde(flatten)]
    pub kind: RegimeKind,
    pub seed: u64,
}

impl RegimeSpec {
    pub fn new(kind: RegimeKind, seed: u64) -> Self {
        RegimeSpec { kind, seed }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            RegimeKind::Scarcity { n } => {
                if !(2..=1024).contains(n) {
                    return Err(Error::InvalidParam(format!(
                        "scarcity n {n} outside [2, 1024]"
                    )));
                }
            }
            RegimeKind::Imbalance { ratio } => {
                if !(0.05..=0.95).contains(ratio) {
                    return Err(Error::InvalidParam(format!(
                        "imbalance ratio {ratio} outside [0.05, 0.95]"
                    )));
                }
            }
            RegimeKind::LabelNoise { fraction } => {
                if !(0.0..=0.5).contains(fraction) {
                    return Err(Error::InvalidParam(format!(
                        "noise fraction {fraction} outside [0, 0.5]"
                    )));
                }
            }
            RegimeKind::Standard | RegimeKind::CovariateShift { .. } => {}
        }
        Ok(())
    }
}

fn split_by_class(indices: &[usize], targets: &[u8]) -> (Vec<usize>, Vec<usize>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for &i in indices {
        if targets[i] == 1 {
            pos.push(i);
        } else {
            neg.push(i);
        }
    }
    (pos, neg)
}

fn pick(from: &[usize], count: usize, seed: u64) -> Vec<usize> {
    let mut r = rng::rng(seed);
    let positions = rng::sample_without_replacement(from.len(), count, &mut r);
    positions.into_iter().map(|p| from[p]).collect()
}

/// The seeded flip set label noise uses: `floor(fraction * n)` positions
/// drawn without replacement from `0..n`. Exposed so the flip set can be
/// recomputed independently of [`apply_regime`].
pub fn noise_flip_positions(n: usize, fraction: f64, seed: u64) -> Vec<usize> {
    let count = (fraction * n as f64).floor() as usize;
    let mut r = rng::rng(rng::derive_seed(seed, "noise-flips"));
    let mut picked = rng::sample_without_replacement(n, count, &mut r);
    picked.sort_unstable();
    picked
}

/// Produce the regime-transformed dataset. All transforms are deterministic
/// in `(data, spec.seed)`; see each [`RegimeKind`] variant for semantics.
pub fn apply_regime(data: &LabeledDataset, spec: &RegimeSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    match &spec.kind {
        RegimeKind::Standard => Ok(data.clone()),

        RegimeKind::Scarcity { n } => {
            let n = *n;
            let pool = data.split.train_pool();
            if n > pool.len() {
                return Err(Error::InfeasibleRegime(format!(
                    "scarcity n {n} exceeds pool size {}",
                    pool.len()
                )));
            }
            let (pos, neg) = split_by_class(&pool, &data.targets);
            // Balanced as parity allows: positives take the odd extra, and
            // shortfall in one class is made up from the other.
            let mut want_pos = n.div_ceil(2).min(pos.len());
            let mut want_neg = n - want_pos;
            if want_neg > neg.len() {
                want_neg = neg.len();
                want_pos = n - want_neg;
            }
            if want_pos > pos.len() {
                return Err(Error::InfeasibleRegime(format!(
                    "scarcity n {n} needs {want_pos} positives, pool has {}",
                    pos.len()
                )));
            }
            let mut chosen = pick(&pos, want_pos, rng::derive_seed(spec.seed, "scarcity-pos"));
            chosen.extend(pick(
                &neg,
                want_neg,
                rng::derive_seed(spec.seed, "scarcity-neg"),
            ));
            rng::shuffle(
                &mut chosen,
                &mut rng::rng(rng::derive_seed(spec.seed, "scarcity-order")),
            );
            LabeledDataset::new(
                data.features.clone(),
                data.targets.clone(),
                Split {
                    train: chosen,
                    val: Vec::new(),
                    test: data.split.test.clone(),
                },
            )
        }

        RegimeKind::Imbalance { ratio } => {
            let ratio = *ratio;
            let pool = data.split.train_pool();
            let (pos, neg) = split_by_class(&pool, &data.targets);
            // Constant total across the whole ratio grid: the largest n
            // feasible at the extreme ratios 0.05/0.95.
            let n_train = ((pos.len().min(neg.len()) as f64) / 0.95).floor() as usize;
            let want_pos = (ratio * n_train as f64).round() as usize;
            let want_neg = n_train - want_pos;
            if want_pos == 0 || want_neg == 0 || want_pos > pos.len() || want_neg > neg.len() {
                return Err(Error::InfeasibleRegime(format!(
                    "imbalance ratio {ratio} infeasible: need {want_pos}/{want_neg}, pool has {}/{}",
                    pos.len(),
                    neg.len()
                )));
            }
            let mut chosen = pick(&pos, want_pos, rng::derive_seed(spec.seed, "imb-pos"));
            chosen.extend(pick(&neg, want_neg, rng::derive_seed(spec.seed, "imb-neg")));
            rng::shuffle(
                &mut chosen,
                &mut rng::rng(rng::derive_seed(spec.seed, "imb-order")),
            );

            // The test set carries the same ratio at its own constant size.
            let (tpos, tneg) = split_by_class(&data.split.test, &data.targets);
            let n_test = ((tpos.len().min(tneg.len()) as f64) / 0.95).floor() as usize;
            let test_pos = ((ratio * n_test as f64).round() as usize).clamp(1, n_test.saturating_sub(1));
            let test_neg = n_test - test_pos;
            if n_test < 2 || test_pos > tpos.len() || test_neg > tneg.len() {
                return Err(Error::InfeasibleRegime(format!(
                    "imbalance ratio {ratio} infeasible on test: need {test_pos}/{test_neg}, have {}/{}",
                    tpos.len(),
                    tneg.len()
                )));
            }
            let mut test = pick(&tpos, test_pos, rng::derive_seed(spec.seed, "imb-test-pos"));
            test.extend(pick(
                &tneg,
                test_neg,
                rng::derive_seed(spec.seed, "imb-test-neg"),
            ));
            test.sort_unstable();

            LabeledDataset::new(
                data.features.clone(),
                data.targets.clone(),
                Split {
                    train: chosen,
                    val: Vec::new(),
                    test,
                },
            )
        }

        RegimeKind::LabelNoise { fraction } => {
            let pool = data.split.train_pool();
            let flips = noise_flip_positions(pool.len(), *fraction, spec.seed);
            let mut targets = data.targets.clone();
            for &p in &flips {
                let idx = pool[p];
                targets[idx] = 1 - targets[idx];
            }
            LabeledDataset::new(data.features.clone(), targets, data.split.clone())
        }

        RegimeKind::CovariateShift {
            activations,
            targets,
        } => {
            let base = match &data.features {
                Features::Activations(t) => t,
                Features::Latents(_) => {
                    return Err(Error::InvalidParam(
                        "covariate shift needs activation features; latents arrive pre-encoded"
                            .into(),
                    ))
                }
            };
            let ood_tensor = crate::tensor::read_tensor(activations)?;
            let ood_targets = crate::tensor::read_targets(targets)?;
            if ood_targets.len() != ood_tensor.n_examples() {
                return Err(Error::ShapeMismatch(format!(
                    "{} OOD targets for {} OOD examples",
                    ood_targets.len(),
                    ood_tensor.n_examples()
                )));
            }
            let combined = base.concat_examples(&ood_tensor)?;
            let mut all_targets = data.targets.clone();
            all_targets.extend_from_slice(&ood_targets);
            let test: Vec<usize> =
                (base.n_examples()..base.n_examples() + ood_tensor.n_examples()).collect();
            LabeledDataset::new(
                Features::Activations(combined),
                all_targets,
                Split {
                    train: data.split.train.clone(),
                    val: data.split.val.clone(),
                    test,
                },
            )
        }
    }
}

/// Outcome of quiver selection over a record list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuiverResult {
    pub chosen_method_id: String,
    pub auc_test: f64,
    pub records: Vec<EvalRecord>,
    /// True when more than one record attained the maximal validation AUC.
    pub tie_break_applied: bool,
}

/// Pick the record with maximal validation AUC and report its test AUC.
/// Exact validation-AUC ties resolve by preferring SAE probes, then the
/// smallest SAE width, then the largest k, then the earliest record.
pub fn quiver_select(records: &[EvalRecord]) -> Result<QuiverResult> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let max_val = records
        .iter()
        .map(|r| r.auc_val)
        .fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.auc_val == max_val)
        .map(|(i, _)| i)
        .collect();
    let key = |i: usize| {
        let r = &records[i];
        (
            usize::from(!r.is_sae()),
            r.width.unwrap_or(usize::MAX),
            usize::MAX - r.k.unwrap_or(0),
            i,
        )
    };
    let chosen = *tied.iter().min_by_key(|&&i| key(i)).unwrap();
    Ok(QuiverResult {
        chosen_method_id: records[chosen].method_id.clone(),
        auc_test: records[chosen].auc_test,
        records: records.to_vec(),
        tie_break_applied: tied.len() > 1,
    })
}

/// Signed test-AUC difference between two records of the same dataset and
/// regime point; the head-to-head comparison used where validation AUC is
/// unfaithful (label noise, covariate shift).
pub fn head_to_head(a: &EvalRecord, b: &EvalRecord) -> Result<f64> {
    if a.dataset_id != b.dataset_id || a.regime != b.regime || a.param != b.param {
        return Err(Error::MismatchedRecords(format!(
            "({}, {}, {}) vs ({}, {}, {})",
            a.dataset_id, a.regime, a.param, b.dataset_id, b.regime, b.param
        )));
    }
    Ok(a.auc_test - b.auc_test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::generate_world;

    #[test]
    fn scarcity_grid_endpoints_and_monotonicity() {
        let grid = scarcity_grid();
        assert_eq!(grid.len(), 20);
        assert_eq!(grid[0], 2);
        assert_eq!(grid[19], 1024);
        assert!(grid.windows(2).all(|w| w[0] < w[1]), "{grid:?}");
    }

    #[test]
    fn linear_grids_match_the_protocol() {
        let imb = imbalance_grid();
        assert_eq!(imb.len(), 19);
        assert_eq!(imb[0], 0.05);
        assert_eq!(imb[18], 0.95);
        // Every grid point satisfies the regime's own bounds check exactly.
        for &ratio in &imb {
            RegimeSpec::new(RegimeKind::Imbalance { ratio }, 0)
                .validate()
                .unwrap();
        }
        let noise = noise_grid();
        assert_eq!(noise.len(), 11);
        assert_eq!(noise[0], 0.0);
        assert_eq!(noise[10], 0.5);
        for &fraction in &noise {
            RegimeSpec::new(RegimeKind::LabelNoise { fraction }, 0)
                .validate()
                .unwrap();
        }
    }

    fn fixture(n: usize, seed: u64) -> LabeledDataset {
        let world = generate_world(16, 8, seed).unwrap();
        crate::fixtures::sample_dataset(&world, n, 1).unwrap().0
    }

    #[test]
    fn zero_fraction_noise_is_identity() {
        let data = fixture(200, 3);
        let spec = RegimeSpec::new(RegimeKind::LabelNoise { fraction: 0.0 }, 9);
        let out = apply_regime(&data, &spec).unwrap();
        assert_eq!(out.targets, data.targets);
        assert_eq!(out.split, data.split);
    }

    #[test]
    fn full_size_scarcity_covers_the_pool() {
        let data = fixture(200, 4);
        let pool = data.split.train_pool();
        let spec = RegimeSpec::new(
            RegimeKind::Scarcity { n: pool.len() },
            11,
        );
        let out = apply_regime(&data, &spec).unwrap();
        let mut got = out.split.train.clone();
        got.sort_unstable();
        let mut expect = pool;
        expect.sort_unstable();
        assert_eq!(got, expect);
        assert_eq!(out.split.test, data.split.test);
    }

    #[test]
    fn scarcity_is_class_balanced() {
        let data = fixture(400, 5);
        for n in [2usize, 3, 16, 33] {
            let spec = RegimeSpec::new(RegimeKind::Scarcity { n }, 7);
            let out = apply_regime(&data, &spec).unwrap();
            assert_eq!(out.split.train.len(), n);
            let pos = out
                .split
                .train
                .iter()
                .filter(|&&i| out.targets[i] == 1)
                .count();
            let neg = n - pos;
            assert!(pos.abs_diff(neg) <= 1, "n={n}: {pos}/{neg}");
        }
    }

    #[test]
    fn noise_flips_exactly_floor_fraction_and_spares_test() {
        let data = fixture(240, 6);
        let pool = data.split.train_pool();
        assert!(pool.len() >= 100);
        // Trim a fixture with exactly 100 pool entries via scarcity first.
        let spec100 = RegimeSpec::new(RegimeKind::Scarcity { n: 100 }, 1);
        let trimmed = apply_regime(&data, &spec100).unwrap();

        let spec = RegimeSpec::new(RegimeKind::LabelNoise { fraction: 0.5 }, 21);
        let out = apply_regime(&trimmed, &spec).unwrap();

        let pool = trimmed.split.train_pool();
        let flipped: Vec<usize> = pool
            .iter()
            .enumerate()
            .filter(|(_, &idx)| out.targets[idx] != trimmed.targets[idx])
            .map(|(p, _)| p)
            .collect();
        assert_eq!(flipped.len(), 50);

        // Flip set recomputed independently from the seed.
        let expected = noise_flip_positions(pool.len(), 0.5, 21);
        assert_eq!(flipped, expected);

        // Test targets bit-identical.
        for &i in &out.split.test {
            assert_eq!(out.targets[i], trimmed.targets[i]);
        }
        // Non-pool, non-test indices also untouched.
        assert_eq!(out.split.test, trimmed.split.test);
    }

    #[test]
    fn imbalance_hits_requested_ratio() {
        let data = fixture(600, 8);
        for ratio in [0.05, 0.25, 0.5, 0.75, 0.95] {
            let spec = RegimeSpec::new(RegimeKind::Imbalance { ratio }, 13);
            let out = apply_regime(&data, &spec).unwrap();
            let n = out.split.train.len();
            let pos = out
                .split
                .train
                .iter()
                .filter(|&&i| out.targets[i] == 1)
                .count();
            let rate = pos as f64 / n as f64;
            assert!(
                (rate - ratio).abs() <= 1.0 / n as f64 + 1e-12,
                "ratio {ratio}: rate {rate} over n {n}"
            );
            // Test set rebalanced to the same ratio.
            let tn = out.split.test.len();
            let tpos = out
                .split
                .test
                .iter()
                .filter(|&&i| out.targets[i] == 1)
                .count();
            let trate = tpos as f64 / tn as f64;
            assert!((trate - ratio).abs() <= 1.0 / tn as f64 + 1e-12);
        }
        // Constant train size across the grid.
        let sizes: Vec<usize> = [0.05, 0.5, 0.95]
            .iter()
            .map(|&ratio| {
                let spec = RegimeSpec::new(RegimeKind::Imbalance { ratio }, 13);
                apply_regime(&data, &spec).unwrap().split.train.len()
            })
            .collect();
        assert!(sizes.windows(2).all(|w| w[0] == w[1]), "{sizes:?}");
    }

    #[test]
    fn regime_transforms_are_deterministic() {
        let data = fixture(300, 10);
        for kind in [
            RegimeKind::Scarcity { n: 40 },
            RegimeKind::Imbalance { ratio: 0.3 },
            RegimeKind::LabelNoise { fraction: 0.2 },
        ] {
            let spec = RegimeSpec::new(kind, 5);
            let a = apply_regime(&data, &spec).unwrap();
            let b = apply_regime(&data, &spec).unwrap();
            assert_eq!(a.split, b.split);
            assert_eq!(a.targets, b.targets);
        }
    }

    #[test]
    fn out_of_bounds_parameters_are_rejected() {
        assert!(RegimeSpec::new(RegimeKind::Scarcity { n: 1 }, 0)
            .validate()
            .is_err());
        assert!(RegimeSpec::new(RegimeKind::Scarcity { n: 2000 }, 0)
            .validate()
            .is_err());
        assert!(RegimeSpec::new(RegimeKind::Imbalance { ratio: 0.96 }, 0)
            .validate()
            .is_err());
        assert!(
            RegimeSpec::new(RegimeKind::LabelNoise { fraction: 0.6 }, 0)
                .validate()
                .is_err()
        );
    }

    fn record(method: &str, auc_val: f64, auc_test: f64) -> EvalRecord {
        EvalRecord {
            dataset_id: "d".into(),
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

    fn sae_record(method: &str, auc_val: f64, width: usize, k: usize) -> EvalRecord {
        let mut r = record(method, auc_val, 0.5);
        r.width = Some(width);
        r.k = Some(k);
        r
    }

    #[test]
    fn quiver_picks_argmax_validation() {
        let records = vec![
            record("a", 0.90, 0.7),
            record("b", 0.95, 0.8),
            record("c", 0.93, 0.9),
        ];
        let result = quiver_select(&records).unwrap();
        assert_eq!(result.chosen_method_id, "b");
        assert_eq!(result.auc_test, 0.8);
        assert!(!result.tie_break_applied);
    }

    #[test]
    fn ties_prefer_sae_then_small_width_then_large_k() {
        let records = vec![
            record("baseline", 1.0, 0.8),
            sae_record("sae-131k", 1.0, 131_000, 16),
            sae_record("sae-16k-k16", 1.0, 16_000, 16),
            sae_record("sae-16k-k128", 1.0, 16_000, 128),
        ];
        let result = quiver_select(&records).unwrap();
        assert_eq!(result.chosen_method_id, "sae-16k-k128");
        assert!(result.tie_break_applied);

        // SAE beats baseline at equal validation AUC.
        let two = vec![record("baseline", 1.0, 0.9), sae_record("sae", 1.0, 256, 1)];
        let r = quiver_select(&two).unwrap();
        assert_eq!(r.chosen_method_id, "sae");
        assert!(r.tie_break_applied);
    }

    #[test]
    fn adding_dominated_record_never_changes_selection() {
        let mut r = crate::rng::rng(217);
        use rand::Rng;
        for _ in 0..200 {
            let n = r.random_range(1..8);
            let mut records: Vec<EvalRecord> = (0..n)
                .map(|i| {
                    let mut rec = record(&format!("m{i}"), r.random::<f64>(), r.random::<f64>());
                    if r.random::<f64>() < 0.5 {
                        rec.width = Some(r.random_range(1..4) * 1000);
                        rec.k = Some(r.random_range(1..129));
                    }
                    rec
                })
                .collect();
            let base = quiver_select(&records).unwrap();
            let max_val = records
                .iter()
                .map(|x| x.auc_val)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(
                records
                    .iter()
                    .find(|x| x.method_id == base.chosen_method_id)
                    .unwrap()
                    .auc_val
                    == max_val
            );
            let mut dominated = record("dominated", max_val - 0.01, 1.0);
            dominated.width = Some(1);
            dominated.k = Some(100_000);
            records.push(dominated);
            let again = quiver_select(&records).unwrap();
            assert_eq!(again.chosen_method_id, base.chosen_method_id);
        }
    }

    #[test]
    fn head_to_head_signs_and_mismatches() {
        let a = record("a", 0.9, 0.9);
        let b = record("b", 0.9, 0.8);
        assert!((head_to_head(&a, &b).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(head_to_head(&a, &a).unwrap(), 0.0);
        let mut c = record("c", 0.9, 0.8);
        c.regime = "noise".into();
        assert!(head_to_head(&a, &c).is_err());
    }
}

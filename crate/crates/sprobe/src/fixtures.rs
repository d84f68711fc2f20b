//! Synthetic activation worlds with a known sparse feature dictionary and an
//! oracle SAE, so every pipeline claim can be verified against ground truth
//! at desk scale.
//!
//! An activation is a sparse sum of dictionary directions plus isotropic
//! noise: `x = sum_i fire_i * magnitude_i * dict_i + sigma * eps`. The binary
//! target is a boolean rule over the firings of the last token. The oracle
//! SAE uses the dictionary itself as its encoder with per-latent JumpReLU
//! thresholds calibrated so each latent tracks its feature's firing.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::mat::{dot, Mat};
use crate::rng;
use crate::sae::{ActivationKind, SAEWeights};
use crate::tensor::{ActivationTensor, Features, LabeledDataset, Split};

/// Which firings make the target positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetRule {
    /// Target is 1 iff this feature fires at the last token.
    Feature(usize),
    /// Target is 1 iff either feature fires at the last token.
    Or(usize, usize),
}

impl TargetRule {
    fn evaluate(&self, fired: &[bool]) -> bool {
        match *self {
            TargetRule::Feature(i) => fired[i],
            TargetRule::Or(i, j) => fired[i] || fired[j],
        }
    }

    fn features(&self) -> Vec<usize> {
        match *self {
            TargetRule::Feature(i) => vec![i],
            TargetRule::Or(i, j) => vec![i, j],
        }
    }
}

/// Ground-truth generative world.
#[derive(Debug, Clone)]
pub struct FeatureWorld {
    /// Unit-norm feature directions, one per row (`w_true x d_model`).
    pub dictionary: Mat,
    /// Per-feature Bernoulli firing rate.
    pub firing_prob: Vec<f64>,
    /// Per-feature magnitude law: Uniform(lo, hi), mean 1 by default.
    pub magnitude_lo: Vec<f64>,
    pub magnitude_hi: Vec<f64>,
    pub target_rule: TargetRule,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Default firing rate for non-target features.
pub const DEFAULT_FIRING_PROB: f64 = 0.005;
/// Default firing rate for features named by the target rule.
pub const TARGET_FIRING_PROB: f64 = 0.5;
pub const DEFAULT_NOISE_SIGMA: f64 = 0.05;
/// Default magnitude law: Uniform(0.75, 1.25), positive with mean 1.
pub const MAGNITUDE_LO: f64 = 0.75;
pub const MAGNITUDE_HI: f64 = 1.25;

/// Seeded world with random unit feature directions. The target rule
/// defaults to feature 0, which fires half the time; all other features
/// fire rarely.
pub fn generate_world(d_model: usize, w_true: usize, seed: u64) -> Result<FeatureWorld> {
    if d_model < 2 || w_true < 2 {
        return Err(Error::InvalidParam(format!(
            "world needs d_model >= 2 and w_true >= 2, got {d_model}, {w_true}"
        )));
    }
    let mut r = rng::rng(rng::derive_seed(seed, "dictionary"));
    let mut dictionary = Mat::zeros(w_true, d_model);
    for i in 0..w_true {
        let row = dictionary.row_mut(i);
        loop {
            for v in row.iter_mut() {
                *v = StandardNormal.sample(&mut r);
            }
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-9 {
                for v in row.iter_mut() {
                    *v /= norm;
                }
                break;
            }
        }
    }
    let mut firing_prob = vec![DEFAULT_FIRING_PROB; w_true];
    firing_prob[0] = TARGET_FIRING_PROB;
    Ok(FeatureWorld {
        dictionary,
        firing_prob,
        magnitude_lo: vec![MAGNITUDE_LO; w_true],
        magnitude_hi: vec![MAGNITUDE_HI; w_true],
        target_rule: TargetRule::Feature(0),
        noise_sigma: DEFAULT_NOISE_SIGMA,
        seed,
    })
}

impl FeatureWorld {
    pub fn w_true(&self) -> usize {
        self.dictionary.rows()
    }

    pub fn d_model(&self) -> usize {
        self.dictionary.cols()
    }

    pub fn with_noise_sigma(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    /// Point the target rule somewhere else, moving the elevated firing rate
    /// with it.
    pub fn with_target_rule(mut self, rule: TargetRule) -> Result<Self> {
        for f in self.target_rule.features() {
            self.firing_prob[f] = DEFAULT_FIRING_PROB;
        }
        for f in rule.features() {
            if f >= self.w_true() {
                return Err(Error::InvalidParam(format!(
                    "target feature {f} out of range for width {}",
                    self.w_true()
                )));
            }
            self.firing_prob[f] = TARGET_FIRING_PROB;
        }
        self.target_rule = rule;
        Ok(self)
    }

    /// Replace the dictionary with an orthonormal one (Gram-Schmidt over the
    /// random directions). Requires `w_true <= d_model`. With no cross-talk
    /// between features, a near-zero JumpReLU threshold recovers firings
    /// exactly at zero noise.
    pub fn with_orthogonal_dictionary(mut self) -> Result<Self> {
        let w = self.w_true();
        let d = self.d_model();
        if w > d {
            return Err(Error::InvalidParam(format!(
                "cannot orthonormalize {w} directions in {d} dimensions"
            )));
        }
        for i in 0..w {
            for j in 0..i {
                let proj = dot(self.dictionary.row(i), self.dictionary.row(j));
                let prev: Vec<f64> = self.dictionary.row(j).to_vec();
                let row = self.dictionary.row_mut(i);
                for (v, p) in row.iter_mut().zip(&prev) {
                    *v -= proj * p;
                }
            }
            let norm = self
                .dictionary
                .row(i)
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if norm < 1e-9 {
                return Err(Error::InvalidParam(
                    "degenerate dictionary during orthonormalization".into(),
                ));
            }
            for v in self.dictionary.row_mut(i).iter_mut() {
                *v /= norm;
            }
        }
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let w = self.w_true();
        if self.firing_prob.len() != w || self.magnitude_lo.len() != w || self.magnitude_hi.len() != w
        {
            return Err(Error::ShapeMismatch("world parameter lengths disagree".into()));
        }
        if self.firing_prob.iter().any(|&p| !(0.0 < p && p < 1.0)) {
            return Err(Error::InvalidParam("firing_prob must lie in (0, 1)".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidParam("noise_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Ground-truth firing indicators, shape `(n_examples, n_tokens, w_true)`.
#[derive(Debug, Clone)]
pub struct Firings {
    data: Vec<bool>,
    n_examples: usize,
    n_tokens: usize,
    w_true: usize,
}

impl Firings {
    pub fn fired(&self, example: usize, token: usize, feature: usize) -> bool {
        self.data[(example * self.n_tokens + token) * self.w_true + feature]
    }

    pub fn last_token(&self, example: usize, feature: usize) -> bool {
        self.fired(example, self.n_tokens - 1, feature)
    }

    pub fn n_examples(&self) -> usize {
        self.n_examples
    }
}

fn sample_tokens(
    world: &FeatureWorld,
    n: usize,
    n_tokens: usize,
    rng_key: &str,
) -> (Vec<f32>, Vec<bool>) {
    let w = world.w_true();
    let d = world.d_model();
    let mut fire_rng = rng::rng(rng::derive_seed(world.seed, &format!("{rng_key}-fire")));
    let mut mag_rng = rng::rng(rng::derive_seed(world.seed, &format!("{rng_key}-mag")));
    let mut noise_rng = rng::rng(rng::derive_seed(world.seed, &format!("{rng_key}-noise")));
    use rand::Rng;

    let mut data = vec![0.0f32; n * n_tokens * d];
    let mut fired = vec![false; n * n_tokens * w];
    for i in 0..n {
        for t in 0..n_tokens {
            let mut x = vec![0.0f64; d];
            for f in 0..w {
                if fire_rng.random::<f64>() < world.firing_prob[f] {
                    fired[(i * n_tokens + t) * w + f] = true;
                    let lo = world.magnitude_lo[f];
                    let hi = world.magnitude_hi[f];
                    let m = if hi > lo {
                        lo + (hi - lo) * mag_rng.random::<f64>()
                    } else {
                        lo
                    };
                    let dict = world.dictionary.row(f);
                    for (xv, &dv) in x.iter_mut().zip(dict) {
                        *xv += m * dv;
                    }
                }
            }
            if world.noise_sigma > 0.0 {
                for xv in &mut x {
                    let z: f64 = StandardNormal.sample(&mut noise_rng);
                    *xv += world.noise_sigma * z;
                }
            }
            let start = (i * n_tokens + t) * d;
            for (j, &xv) in x.iter().enumerate() {
                data[start + j] = xv as f32;
            }
        }
    }
    (data, fired)
}

/// Sample a labeled dataset from the world. Targets come from the target
/// rule at the last token. The split reserves a stratified 20% test set and
/// divides the rest 80/20 into train/validation, all derived from the world
/// seed. Ground-truth firings come back alongside for oracle checks.
pub fn sample_dataset(
    world: &FeatureWorld,
    n: usize,
    n_tokens: usize,
) -> Result<(LabeledDataset, Firings)> {
    world.validate()?;
    if n < 4 {
        return Err(Error::InvalidParam(format!("need n >= 4, got {n}")));
    }
    if n_tokens == 0 {
        return Err(Error::InvalidParam("n_tokens must be >= 1".into()));
    }
    let w = world.w_true();
    let (data, fired) = sample_tokens(world, n, n_tokens, "dataset");
    let firings = Firings {
        data: fired,
        n_examples: n,
        n_tokens,
        w_true: w,
    };
    let targets: Vec<u8> = (0..n)
        .map(|i| {
            let row: Vec<bool> = (0..w).map(|f| firings.last_token(i, f)).collect();
            u8::from(world.target_rule.evaluate(&row))
        })
        .collect();

    let tensor = ActivationTensor::new(data, n, n_tokens, world.d_model(), vec![n_tokens as u32; n])?;

    // Same stratified construction as the manifest loader, without its
    // 100-example test floor, so tiny desk fixtures stay usable.
    let all: Vec<usize> = (0..n).collect();
    let split_seed = rng::derive_seed(world.seed, "split");
    let (pool, test) = crate::tensor::stratified_holdout(
        &all,
        &targets,
        0.2,
        rng::derive_seed(split_seed, "test"),
    );
    let (train, val) = crate::tensor::stratified_holdout(
        &pool,
        &targets,
        0.2,
        rng::derive_seed(split_seed, "val"),
    );
    let split = Split { train, val, test };
    let dataset = LabeledDataset::new(Features::Activations(tensor), targets, split)?;
    Ok((dataset, firings))
}

/// Per-latent calibration outcome of the oracle SAE.
#[derive(Debug, Clone)]
pub struct CalibrationReport {
    /// Empirical disagreement rate between latent firing and feature firing
    /// on the calibration sample, per latent.
    pub error_rates: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub sample_size: usize,
}

const CALIBRATION_SAMPLE: usize = 4096;
const CALIBRATION_ERROR_BUDGET: f64 = 0.01;

/// Build the oracle SAE: encoder = dictionary, zero bias, JumpReLU
/// thresholds tuned per latent on a seeded calibration sample so latent `i`
/// fires iff feature `i` fired. Errors if any latent's achievable
/// disagreement rate exceeds 1%.
pub fn oracle_sae(world: &FeatureWorld) -> Result<SAEWeights> {
    oracle_sae_with_report(world).map(|(weights, _)| weights)
}

pub fn oracle_sae_with_report(world: &FeatureWorld) -> Result<(SAEWeights, CalibrationReport)> {
    world.validate()?;
    let w = world.w_true();
    let d = world.d_model();

    let m = CALIBRATION_SAMPLE;
    let (data, fired) = sample_tokens(world, m, 1, "oracle-calibration");

    // Pre-activations of the matched-filter encoder on the calibration set.
    let mut thresholds = vec![0.0f64; w];
    let mut error_rates = vec![0.0f64; w];
    let mut failures = Vec::new();

    for latent in 0..w {
        let dict = world.dictionary.row(latent);
        let mut scored: Vec<(f64, bool)> = (0..m)
            .map(|i| {
                let x = &data[i * d..(i + 1) * d];
                let pre: f64 = x.iter().zip(dict).map(|(&xv, &dv)| f64::from(xv) * dv).sum();
                (pre, fired[i * w + latent])
            })
            .collect();
        scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

        let total_fired = scored.iter().filter(|&&(_, f)| f).count();
        // Sweep candidate thresholds: firing iff pre > theta. Start with
        // theta below everything (all fire): errors = not-fired count.
        let mut errors = m - total_fired;
        let mut best_errors = errors;
        let mut best_theta = scored[0].0 - 1.0;
        for i in 0..m {
            // Raise theta past scored[i]: that sample stops firing.
            if scored[i].1 {
                errors += 1;
            } else {
                errors -= 1;
            }
            if i + 1 < m && scored[i + 1].0 == scored[i].0 {
                continue;
            }
            if errors < best_errors {
                best_errors = errors;
                best_theta = if i + 1 < m {
                    0.5 * (scored[i].0 + scored[i + 1].0)
                } else {
                    scored[i].0 + 1.0
                };
            }
        }
        let rate = best_errors as f64 / m as f64;
        thresholds[latent] = best_theta.max(0.0);
        error_rates[latent] = rate;
        if rate > CALIBRATION_ERROR_BUDGET {
            failures.push((latent, rate));
        }
    }

    if !failures.is_empty() {
        return Err(Error::CalibrationFailed { failures });
    }

    // Encoder: w_enc[d][i] = dictionary[i][d].
    let mut w_enc = vec![0.0f32; d * w];
    for i in 0..w {
        let dict = world.dictionary.row(i);
        for (dd, &dv) in dict.iter().enumerate() {
            w_enc[dd * w + i] = dv as f32;
        }
    }
    let theta: Vec<f32> = thresholds.iter().map(|&t| t as f32).collect();
    let weights = SAEWeights::new(
        w_enc,
        vec![0.0; w],
        d,
        w,
        ActivationKind::JumpReLU { theta },
        format!("oracle-jumprelu-w{w}"),
    )?;
    let report = CalibrationReport {
        error_rates,
        thresholds,
        sample_size: m,
    };
    Ok((weights, report))
}

/// Knobs for writing a fixture bundle to disk.
#[derive(Debug, Clone)]
pub struct FixtureConfig {
    pub d_model: usize,
    pub w_true: usize,
    pub n: usize,
    pub n_tokens: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Also write a covariate-shifted test set of `ood_n` examples.
    pub with_ood: bool,
    pub ood_n: usize,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            d_model: 64,
            w_true: 256,
            n: 1024,
            n_tokens: 1,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            seed: 0,
            with_ood: false,
            ood_n: 300,
        }
    }
}

/// Everything a fixture bundle wrote.
#[derive(Debug, Clone)]
pub struct FixtureBundle {
    pub manifest_path: std::path::PathBuf,
    pub sae_path: std::path::PathBuf,
    pub manifest: crate::tensor::DatasetManifest,
}

/// Sample a world, write its activations/targets/oracle-SAE files under
/// `dir`, and emit a dataset manifest pointing at them. The harness and the
/// CLI consume fixtures through exactly the same formats as real dumps.
pub fn write_fixture_bundle(config: &FixtureConfig, dir: &std::path::Path) -> Result<FixtureBundle> {
    std::fs::create_dir_all(dir)?;
    let world = generate_world(config.d_model, config.w_true, config.seed)?
        .with_noise_sigma(config.noise_sigma);
    let (dataset, _) = sample_dataset(&world, config.n, config.n_tokens)?;
    let tensor = dataset
        .features
        .as_activations()
        .expect("fixtures sample activations");

    let activations = dir.join("activations.spba");
    let targets = dir.join("targets.txt");
    crate::tensor::write_tensor(tensor, &activations)?;
    crate::tensor::write_targets(&dataset.targets, &targets)?;

    let sae_path = dir.join("oracle_sae.spsw");
    let weights = oracle_sae(&world)?;
    weights.write(&sae_path)?;

    let (ood_activations, ood_targets) = if config.with_ood {
        let shifted = shifted_world(&world);
        let (ood, _) = sample_dataset(&shifted, config.ood_n.max(4), config.n_tokens)?;
        let ood_tensor = ood.features.as_activations().unwrap();
        let a = dir.join("ood_activations.spba");
        let t = dir.join("ood_targets.txt");
        crate::tensor::write_tensor(ood_tensor, &a)?;
        crate::tensor::write_targets(&ood.targets, &t)?;
        (Some(a), Some(t))
    } else {
        (None, None)
    };

    let manifest = crate::tensor::DatasetManifest {
        dataset_id: format!(
            "fixture-d{}-w{}-n{}-s{}",
            config.d_model, config.w_true, config.n, config.seed
        ),
        activations,
        targets,
        ood_activations,
        ood_targets,
        seed: rng::derive_seed(config.seed, "dataset-split"),
    };
    let manifest_path = dir.join("manifest.json");
    manifest.save(&manifest_path)?;
    Ok(FixtureBundle {
        manifest_path,
        sae_path,
        manifest,
    })
}

/// A covariate-shifted sibling of the world: same dictionary and target
/// rule, doubled noise, and doubled background firing rates. Labels stay
/// faithful while the input distribution moves.
pub fn shifted_world(world: &FeatureWorld) -> FeatureWorld {
    let mut shifted = world.clone();
    shifted.seed = rng::derive_seed(world.seed, "ood-shift");
    shifted.noise_sigma = world.noise_sigma * 2.0;
    let target_features = world.target_rule.features();
    for (f, p) in shifted.firing_prob.iter_mut().enumerate() {
        if !target_features.contains(&f) {
            *p = (*p * 2.0).min(0.5);
        }
    }
    shifted
}

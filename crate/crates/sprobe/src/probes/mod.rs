//! The five baseline probe families plus the L1-regularized SAE probe head,
//! behind a uniform train/score contract.
//!
//! Features are z-scored per feature with training-split statistics before
//! LogReg/PCAReg/KNN/MLP training; GBT consumes raw features since tree
//! splits are invariant to monotone per-feature rescaling. The fitted
//! standardizer is frozen inside the model.

pub mod gbt;
pub mod knn;
pub mod logreg;
pub mod mlp;
pub mod pca;
pub mod standardize;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::rng;

pub use gbt::{GbtModel, GbtParams};
pub use logreg::LinearParams;
pub use mlp::{MlpNet, MlpParams, MlpTrainConfig};
pub use pca::PcaProjection;
pub use standardize::Standardizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reg {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeFamily {
    LogReg,
    PcaReg,
    Knn,
    Gbt,
    Mlp,
}

impl ProbeFamily {
    pub fn name(self) -> &'static str {
        match self {
            ProbeFamily::LogReg => "logreg",
            ProbeFamily::PcaReg => "pca",
            ProbeFamily::Knn => "knn",
            ProbeFamily::Gbt => "gbt",
            ProbeFamily::Mlp => "mlp",
        }
    }

    /// Families whose score is an affine function of the input, which is
    /// what the per-token diagnostics require.
    pub fn is_linear(self) -> bool {
        matches!(self, ProbeFamily::LogReg | ProbeFamily::PcaReg)
    }
}

impl std::str::FromStr for ProbeFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logreg" => Ok(ProbeFamily::LogReg),
            "pca" => Ok(ProbeFamily::PcaReg),
            "knn" => Ok(ProbeFamily::Knn),
            "gbt" => Ok(ProbeFamily::Gbt),
            "mlp" => Ok(ProbeFamily::Mlp),
            other => Err(Error::InvalidParam(format!("unknown family {other:?}"))),
        }
    }
}

/// One hyperparameter setting for one family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Hyperparams {
    LogReg { reg: Reg, c: f64 },
    PcaReg { n_components: usize },
    Knn { n_neighbors: usize },
    Gbt(GbtParams),
    Mlp(MlpParams),
}

impl Hyperparams {
    pub fn family(&self) -> ProbeFamily {
        match self {
            Hyperparams::LogReg { .. } => ProbeFamily::LogReg,
            Hyperparams::PcaReg { .. } => ProbeFamily::PcaReg,
            Hyperparams::Knn { .. } => ProbeFamily::Knn,
            Hyperparams::Gbt(_) => ProbeFamily::Gbt,
            Hyperparams::Mlp(_) => ProbeFamily::Mlp,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Hyperparams::LogReg { reg, c } => format!(
                "C={c:.3e},{}",
                if *reg == Reg::L1 { "l1" } else { "l2" }
            ),
            Hyperparams::PcaReg { n_components } => format!("components={n_components}"),
            Hyperparams::Knn { n_neighbors } => format!("neighbors={n_neighbors}"),
            Hyperparams::Gbt(p) => format!(
                "trees={},depth={},lr={:.3e},sub={:.2},col={:.2},a={:.3e},l={:.3e},mcw={}",
                p.n_estimators,
                p.max_depth,
                p.learning_rate,
                p.subsample,
                p.colsample_bytree,
                p.reg_alpha,
                p.reg_lambda,
                p.min_child_weight
            ),
            Hyperparams::Mlp(p) => format!(
                "depth={},width={},lr={:.3e},wd={:.3e}",
                p.depth, p.width, p.learning_rate, p.weight_decay
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Exhaustive,
    RandomSample,
}

/// Exactly ten candidate settings per family.
#[derive(Debug, Clone)]
pub struct HyperparamGrid {
    pub family: ProbeFamily,
    pub candidates: Vec<Hyperparams>,
    pub search_mode: SearchMode,
}

pub const GRID_SIZE: usize = 10;

fn logspace(lo_exp: f64, hi_exp: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|i| {
            let t = i as f64 / (count - 1) as f64;
            10f64.powf(lo_exp + t * (hi_exp - lo_exp))
        })
        .collect()
}

/// Integer log-spaced grid clamped to `[1, cap]`. Values that collide after
/// rounding are bumped up by one, so the grid stays strictly increasing but
/// may repeat its cap; duplicates are then removed.
fn int_logspace_capped(cap: usize, count: usize) -> Vec<usize> {
    let cap = cap.max(1);
    let hi = (cap as f64).log10();
    let mut vals: Vec<usize> = logspace(0.0, hi, count)
        .into_iter()
        .map(|v| (v.round() as usize).clamp(1, cap))
        .collect();
    for i in 1..vals.len() {
        if vals[i] <= vals[i - 1] {
            vals[i] = (vals[i - 1] + 1).min(cap);
        }
    }
    vals.dedup();
    vals
}

impl HyperparamGrid {
    /// Logistic regression: C log-spaced from 1e5 down to 1e-5.
    pub fn logreg(reg: Reg) -> HyperparamGrid {
        let candidates = logspace(5.0, -5.0, GRID_SIZE)
            .into_iter()
            .map(|c| Hyperparams::LogReg { reg, c })
            .collect();
        HyperparamGrid {
            family: ProbeFamily::LogReg,
            candidates,
            search_mode: SearchMode::Exhaustive,
        }
    }

    /// PCA components: log-spaced from 1 to min(n_samples, n_features, 100).
    pub fn pca(n_samples: usize, n_features: usize) -> HyperparamGrid {
        let cap = n_samples.min(n_features).min(100);
        let candidates = int_logspace_capped(cap, GRID_SIZE)
            .into_iter()
            .map(|n_components| Hyperparams::PcaReg { n_components })
            .collect();
        HyperparamGrid {
            family: ProbeFamily::PcaReg,
            candidates,
            search_mode: SearchMode::Exhaustive,
        }
    }

    /// Neighbors: log-spaced up to min(100, n_samples - 1).
    pub fn knn(n_samples: usize) -> HyperparamGrid {
        let cap = n_samples.saturating_sub(1).min(100).max(1);
        let candidates = int_logspace_capped(cap, GRID_SIZE)
            .into_iter()
            .map(|n_neighbors| Hyperparams::Knn { n_neighbors })
            .collect();
        HyperparamGrid {
            family: ProbeFamily::Knn,
            candidates,
            search_mode: SearchMode::Exhaustive,
        }
    }

    /// Ten seeded random draws from the boosted-tree ranges.
    pub fn gbt(seed: u64) -> HyperparamGrid {
        use rand::Rng;
        let mut r = rng::rng(rng::derive_seed(seed, "grid-gbt"));
        let candidates = (0..GRID_SIZE)
            .map(|_| {
                Hyperparams::Gbt(GbtParams {
                    n_estimators: 50 * r.random_range(1..=5),
                    max_depth: r.random_range(2..=5),
                    learning_rate: 10f64.powf(r.random_range(-3.0..=-1.0)),
                    subsample: r.random_range(0.7..=1.0),
                    colsample_bytree: r.random_range(0.7..=1.0),
                    reg_alpha: 10f64.powf(r.random_range(-3.0..=1.0)),
                    reg_lambda: 10f64.powf(r.random_range(-3.0..=1.0)),
                    min_child_weight: r.random_range(1..=9) as f64,
                })
            })
            .collect();
        HyperparamGrid {
            family: ProbeFamily::Gbt,
            candidates,
            search_mode: SearchMode::RandomSample,
        }
    }

    /// Ten seeded random draws from the MLP grid: depth 1-3, width
    /// {16,32,64}, five log-spaced learning rates and weight decays.
    pub fn mlp(seed: u64) -> HyperparamGrid {
        use rand::Rng;
        let mut r = rng::rng(rng::derive_seed(seed, "grid-mlp"));
        let lrs = logspace(-4.0, -2.0, 5);
        let wds = logspace(-5.0, -2.0, 5);
        let widths = [16usize, 32, 64];
        let mut candidates = Vec::with_capacity(GRID_SIZE);
        let mut seen = std::collections::HashSet::new();
        while candidates.len() < GRID_SIZE {
            let depth = r.random_range(1..=3);
            let width = widths[r.random_range(0..widths.len())];
            let lr_i = r.random_range(0..lrs.len());
            let wd_i = r.random_range(0..wds.len());
            if seen.insert((depth, width, lr_i, wd_i)) {
                candidates.push(Hyperparams::Mlp(MlpParams {
                    depth,
                    width,
                    learning_rate: lrs[lr_i],
                    weight_decay: wds[wd_i],
                }));
            }
        }
        HyperparamGrid {
            family: ProbeFamily::Mlp,
            candidates,
            search_mode: SearchMode::RandomSample,
        }
    }

    /// Grid for a family given the training-pool shape. `reg` selects the
    /// logistic penalty (L1 for SAE probes, L2 otherwise).
    pub fn for_family(
        family: ProbeFamily,
        reg: Reg,
        n_samples: usize,
        n_features: usize,
        seed: u64,
    ) -> HyperparamGrid {
        match family {
            ProbeFamily::LogReg => HyperparamGrid::logreg(reg),
            ProbeFamily::PcaReg => HyperparamGrid::pca(n_samples, n_features),
            ProbeFamily::Knn => HyperparamGrid::knn(n_samples),
            ProbeFamily::Gbt => HyperparamGrid::gbt(seed),
            ProbeFamily::Mlp => HyperparamGrid::mlp(seed),
        }
    }
}

/// Family-specific learned state.
#[derive(Debug, Clone, PartialEq)]
pub enum ProbeParamsInner {
    Linear(LinearParams),
    Pca {
        projection: PcaProjection,
        linear: LinearParams,
    },
    Knn {
        train: Mat,
        labels: Vec<u8>,
        n_neighbors: usize,
    },
    Gbt(GbtModel),
    Mlp(MlpNet),
}

/// A trained classifier exposing real-valued scores where higher means a
/// higher predicted probability of target 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    pub family: ProbeFamily,
    pub hyperparams: Hyperparams,
    /// Frozen train-time feature statistics; `None` for GBT (raw features).
    pub standardizer: Option<Standardizer>,
    pub params: ProbeParamsInner,
    d_in: usize,
}

fn check_classes(targets: &[u8]) -> Result<()> {
    let pos = targets.iter().filter(|&&t| t == 1).count();
    if pos == 0 || pos == targets.len() {
        return Err(Error::SingleClass);
    }
    Ok(())
}

pub fn train_logreg(features: &Mat, targets: &[u8], reg: Reg, c: f64) -> Result<ProbeModel> {
    if c.is_nan() || c <= 0.0 {
        return Err(Error::InvalidParam(format!("c must be positive, got {c}")));
    }
    check_classes(targets)?;
    let standardizer = Standardizer::fit(features);
    let x = standardizer.apply(features);
    let inv_c = 1.0 / c;
    let linear = match reg {
        Reg::L1 => logreg::fit_l1(&x, targets, inv_c),
        Reg::L2 => logreg::fit_l2(&x, targets, inv_c),
    };
    Ok(ProbeModel {
        family: ProbeFamily::LogReg,
        hyperparams: Hyperparams::LogReg { reg, c },
        standardizer: Some(standardizer),
        params: ProbeParamsInner::Linear(linear),
        d_in: features.cols(),
    })
}

pub fn train_pca_reg(features: &Mat, targets: &[u8], n_components: usize) -> Result<ProbeModel> {
    check_classes(targets)?;
    let standardizer = Standardizer::fit(features);
    let x = standardizer.apply(features);
    let projection = PcaProjection::fit(&x, n_components)?;
    let projected = projection.project(&x);
    let linear = logreg::fit_l2(&projected, targets, 0.0);
    Ok(ProbeModel {
        family: ProbeFamily::PcaReg,
        hyperparams: Hyperparams::PcaReg { n_components },
        standardizer: Some(standardizer),
        params: ProbeParamsInner::Pca { projection, linear },
        d_in: features.cols(),
    })
}

pub fn train_knn(features: &Mat, targets: &[u8], n_neighbors: usize) -> Result<ProbeModel> {
    check_classes(targets)?;
    if n_neighbors == 0 || n_neighbors > features.rows().saturating_sub(1) {
        return Err(Error::InvalidParam(format!(
            "n_neighbors {n_neighbors} out of range [1, {}]",
            features.rows().saturating_sub(1)
        )));
    }
    let standardizer = Standardizer::fit(features);
    let x = standardizer.apply(features);
    Ok(ProbeModel {
        family: ProbeFamily::Knn,
        hyperparams: Hyperparams::Knn { n_neighbors },
        standardizer: Some(standardizer),
        params: ProbeParamsInner::Knn {
            train: x,
            labels: targets.to_vec(),
            n_neighbors,
        },
        d_in: features.cols(),
    })
}

pub fn train_gbt(
    features: &Mat,
    targets: &[u8],
    params: &GbtParams,
    seed: u64,
) -> Result<ProbeModel> {
    let model = gbt::fit(features, targets, params, seed)?;
    Ok(ProbeModel {
        family: ProbeFamily::Gbt,
        hyperparams: Hyperparams::Gbt(params.clone()),
        standardizer: None,
        params: ProbeParamsInner::Gbt(model),
        d_in: features.cols(),
    })
}

pub fn train_mlp(
    features: &Mat,
    targets: &[u8],
    params: &MlpParams,
    seed: u64,
) -> Result<ProbeModel> {
    check_classes(targets)?;
    let standardizer = Standardizer::fit(features);
    let x = standardizer.apply(features);
    let net = mlp::fit(&x, targets, params, seed)?;
    Ok(ProbeModel {
        family: ProbeFamily::Mlp,
        hyperparams: Hyperparams::Mlp(params.clone()),
        standardizer: Some(standardizer),
        params: ProbeParamsInner::Mlp(net),
        d_in: features.cols(),
    })
}

/// Train whichever family the hyperparameters name. The seed only matters
/// for GBT and MLP.
pub fn train(features: &Mat, targets: &[u8], hp: &Hyperparams, seed: u64) -> Result<ProbeModel> {
    match hp {
        Hyperparams::LogReg { reg, c } => train_logreg(features, targets, *reg, *c),
        Hyperparams::PcaReg { n_components } => train_pca_reg(features, targets, *n_components),
        Hyperparams::Knn { n_neighbors } => train_knn(features, targets, *n_neighbors),
        Hyperparams::Gbt(p) => train_gbt(features, targets, p, seed),
        Hyperparams::Mlp(p) => train_mlp(features, targets, p, seed),
    }
}

impl ProbeModel {
    pub fn d_in(&self) -> usize {
        self.d_in
    }

    /// Real-valued scores, one per row; a monotone transform of the model's
    /// class-1 probability.
    pub fn score(&self, features: &Mat) -> Result<Vec<f64>> {
        if features.cols() != self.d_in {
            return Err(Error::ShapeMismatch(format!(
                "model trained on {} features, got {}",
                self.d_in,
                features.cols()
            )));
        }
        let x = match &self.standardizer {
            Some(s) => s.apply(features),
            None => features.clone(),
        };
        let scores = match &self.params {
            ProbeParamsInner::Linear(linear) => {
                (0..x.rows()).map(|i| linear.decision(x.row(i))).collect()
            }
            ProbeParamsInner::Pca { projection, linear } => {
                let projected = projection.project(&x);
                (0..projected.rows())
                    .map(|i| linear.decision(projected.row(i)))
                    .collect()
            }
            ProbeParamsInner::Knn {
                train,
                labels,
                n_neighbors,
            } => (0..x.rows())
                .map(|i| knn::knn_score(train, labels, x.row(i), *n_neighbors))
                .collect(),
            ProbeParamsInner::Gbt(model) => {
                (0..x.rows()).map(|i| model.margin(x.row(i))).collect()
            }
            ProbeParamsInner::Mlp(net) => (0..x.rows()).map(|i| net.forward(x.row(i))).collect(),
        };
        Ok(scores)
    }

    /// Probability-like transform of a score for this family: sigmoid for
    /// margin-producing families, identity for KNN's neighbor fraction.
    pub fn score_to_prob(&self, score: f64) -> f64 {
        match self.family {
            ProbeFamily::Knn => score,
            _ => {
                if score >= 0.0 {
                    1.0 / (1.0 + (-score).exp())
                } else {
                    let e = score.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    /// Affine per-token score map for linear families:
    /// `score(x) = weights . x + bias` in raw feature space.
    pub fn linear_map(&self) -> Result<(Vec<f64>, f64)> {
        let (w_std, b_std) = match &self.params {
            ProbeParamsInner::Linear(l) => (l.weights.clone(), l.bias),
            ProbeParamsInner::Pca { projection, linear } => {
                // Compose logit weights with the projection.
                let k = projection.components.rows();
                let d = projection.components.cols();
                let mut w = vec![0.0; d];
                for c in 0..k {
                    let row = projection.components.row(c);
                    for (wj, &pj) in w.iter_mut().zip(row) {
                        *wj += linear.weights[c] * pj;
                    }
                }
                (w, linear.bias)
            }
            _ => return Err(Error::NonLinearModel(self.family.name().into())),
        };
        // Fold the standardizer into raw-space coefficients.
        match &self.standardizer {
            Some(s) => {
                let mut w = vec![0.0; w_std.len()];
                let mut b = b_std;
                for j in 0..w.len() {
                    w[j] = w_std[j] / s.scale[j];
                    b -= w_std[j] * s.mean[j] / s.scale[j];
                }
                Ok((w, b))
            }
            None => Ok((w_std, b_std)),
        }
    }
}

// --- JSON serialization ----------------------------------------------------
//
// Models persist as a JSON document: family tag, hyperparameters, and
// flattened parameter arrays base64-encoded (f64 little-endian).

pub(crate) fn b64_encode_f64s(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    B64.encode(bytes)
}

pub(crate) fn b64_decode_f64s(text: &str) -> Result<Vec<f64>> {
    let bytes = B64
        .decode(text)
        .map_err(|e| Error::InvalidParam(format!("bad base64: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::InvalidParam(
            "f64 array length not a multiple of 8".into(),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

#[derive(Serialize, Deserialize)]
struct StandardizerDoc {
    mean: String,
    scale: String,
}

#[derive(Serialize, Deserialize)]
struct MatDoc {
    rows: usize,
    cols: usize,
    data: String,
}

fn mat_doc(m: &Mat) -> MatDoc {
    MatDoc {
        rows: m.rows(),
        cols: m.cols(),
        data: b64_encode_f64s(m.data()),
    }
}

fn mat_from_doc(doc: &MatDoc) -> Result<Mat> {
    let data = b64_decode_f64s(&doc.data)?;
    if data.len() != doc.rows * doc.cols {
        return Err(Error::ShapeMismatch("matrix doc shape".into()));
    }
    Ok(Mat::from_vec(doc.rows, doc.cols, data))
}

#[derive(Serialize, Deserialize)]
struct TreeDoc {
    feature: Vec<i32>,
    threshold: String,
    left: Vec<u32>,
    right: Vec<u32>,
    value: String,
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    w: MatDoc,
    b: String,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ParamsDoc {
    Linear {
        weights: String,
        bias: f64,
    },
    Pca {
        components: MatDoc,
        eigenvalues: String,
        weights: String,
        bias: f64,
    },
    Knn {
        train: MatDoc,
        labels: String,
        n_neighbors: usize,
    },
    Gbt {
        base_score: f64,
        learning_rate: f64,
        trees: Vec<TreeDoc>,
    },
    Mlp {
        layers: Vec<LayerDoc>,
    },
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    family: String,
    hyperparams: Hyperparams,
    d_in: usize,
    standardizer: Option<StandardizerDoc>,
    params: ParamsDoc,
}

impl ProbeModel {
    pub fn to_json(&self) -> Result<String> {
        let params = match &self.params {
            ProbeParamsInner::Linear(l) => ParamsDoc::Linear {
                weights: b64_encode_f64s(&l.weights),
                bias: l.bias,
            },
            ProbeParamsInner::Pca { projection, linear } => ParamsDoc::Pca {
                components: mat_doc(&projection.components),
                eigenvalues: b64_encode_f64s(&projection.eigenvalues),
                weights: b64_encode_f64s(&linear.weights),
                bias: linear.bias,
            },
            ProbeParamsInner::Knn {
                train,
                labels,
                n_neighbors,
            } => ParamsDoc::Knn {
                train: mat_doc(train),
                labels: B64.encode(labels),
                n_neighbors: *n_neighbors,
            },
            ProbeParamsInner::Gbt(model) => ParamsDoc::Gbt {
                base_score: model.base_score,
                learning_rate: model.learning_rate,
                trees: model
                    .trees
                    .iter()
                    .map(|t| TreeDoc {
                        feature: t.iter().map(|n| n.feature).collect(),
                        threshold: b64_encode_f64s(
                            &t.iter().map(|n| n.threshold).collect::<Vec<_>>(),
                        ),
                        left: t.iter().map(|n| n.left).collect(),
                        right: t.iter().map(|n| n.right).collect(),
                        value: b64_encode_f64s(&t.iter().map(|n| n.value).collect::<Vec<_>>()),
                    })
                    .collect(),
            },
            ProbeParamsInner::Mlp(net) => ParamsDoc::Mlp {
                layers: net
                    .layers
                    .iter()
                    .map(|l| LayerDoc {
                        w: mat_doc(&l.w),
                        b: b64_encode_f64s(&l.b),
                    })
                    .collect(),
            },
        };
        let doc = ModelDoc {
            family: self.family.name().to_string(),
            hyperparams: self.hyperparams.clone(),
            d_in: self.d_in,
            standardizer: self.standardizer.as_ref().map(|s| StandardizerDoc {
                mean: b64_encode_f64s(&s.mean),
                scale: b64_encode_f64s(&s.scale),
            }),
            params,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<ProbeModel> {
        let doc: ModelDoc = serde_json::from_str(text)?;
        let family: ProbeFamily = doc.family.parse()?;
        let standardizer = match doc.standardizer {
            Some(s) => Some(Standardizer {
                mean: b64_decode_f64s(&s.mean)?,
                scale: b64_decode_f64s(&s.scale)?,
            }),
            None => None,
        };
        let params = match doc.params {
            ParamsDoc::Linear { weights, bias } => ProbeParamsInner::Linear(LinearParams {
                weights: b64_decode_f64s(&weights)?,
                bias,
            }),
            ParamsDoc::Pca {
                components,
                eigenvalues,
                weights,
                bias,
            } => ProbeParamsInner::Pca {
                projection: PcaProjection {
                    components: mat_from_doc(&components)?,
                    eigenvalues: b64_decode_f64s(&eigenvalues)?,
                },
                linear: LinearParams {
                    weights: b64_decode_f64s(&weights)?,
                    bias,
                },
            },
            ParamsDoc::Knn {
                train,
                labels,
                n_neighbors,
            } => ProbeParamsInner::Knn {
                train: mat_from_doc(&train)?,
                labels: B64
                    .decode(&labels)
                    .map_err(|e| Error::InvalidParam(format!("bad base64: {e}")))?,
                n_neighbors,
            },
            ParamsDoc::Gbt {
                base_score,
                learning_rate,
                trees,
            } => {
                let mut decoded = Vec::with_capacity(trees.len());
                for t in trees {
                    let thresholds = b64_decode_f64s(&t.threshold)?;
                    let values = b64_decode_f64s(&t.value)?;
                    if t.feature.len() != thresholds.len()
                        || t.feature.len() != values.len()
                        || t.feature.len() != t.left.len()
                        || t.feature.len() != t.right.len()
                    {
                        return Err(Error::ShapeMismatch("tree doc arrays disagree".into()));
                    }
                    decoded.push(
                        (0..t.feature.len())
                            .map(|i| gbt::TreeNode {
                                feature: t.feature[i],
                                threshold: thresholds[i],
                                left: t.left[i],
                                right: t.right[i],
                                value: values[i],
                            })
                            .collect(),
                    );
                }
                ProbeParamsInner::Gbt(GbtModel {
                    base_score,
                    learning_rate,
                    trees: decoded,
                })
            }
            ParamsDoc::Mlp { layers } => {
                let mut decoded = Vec::with_capacity(layers.len());
                for l in layers {
                    decoded.push(mlp::Layer {
                        w: mat_from_doc(&l.w)?,
                        b: b64_decode_f64s(&l.b)?,
                    });
                }
                ProbeParamsInner::Mlp(MlpNet { layers: decoded })
            }
        };
        Ok(ProbeModel {
            family,
            hyperparams: doc.hyperparams,
            standardizer,
            params,
            d_in: doc.d_in,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::auc;
    use rand::Rng;

    fn random_data(n: usize, d: usize, seed: u64) -> (Mat, Vec<u8>) {
        let mut r = rng::rng(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| r.random::<f64>() * 2.0 - 1.0).collect())
            .collect();
        let y: Vec<u8> = rows
            .iter()
            .map(|row| u8::from(row[0] + 0.5 * row[1] > 0.0))
            .collect();
        (Mat::from_rows(&rows), y)
    }

    #[test]
    fn grids_have_exactly_ten_candidates() {
        assert_eq!(HyperparamGrid::logreg(Reg::L2).candidates.len(), GRID_SIZE);
        assert_eq!(HyperparamGrid::gbt(1).candidates.len(), GRID_SIZE);
        assert_eq!(HyperparamGrid::mlp(1).candidates.len(), GRID_SIZE);
        assert_eq!(HyperparamGrid::knn(1000).candidates.len(), GRID_SIZE);
        assert_eq!(HyperparamGrid::pca(500, 400).candidates.len(), GRID_SIZE);
    }

    #[test]
    fn logreg_grid_spans_c_endpoints() {
        let grid = HyperparamGrid::logreg(Reg::L2);
        let cs: Vec<f64> = grid
            .candidates
            .iter()
            .map(|h| match h {
                Hyperparams::LogReg { c, .. } => *c,
                _ => unreachable!(),
            })
            .collect();
        assert!((cs[0] - 1e5).abs() / 1e5 < 1e-12);
        assert!((cs[9] - 1e-5).abs() / 1e-5 < 1e-12);
    }

    #[test]
    fn capped_grids_clamp_and_dedup() {
        // n=5: neighbors capped at 4, so fewer than ten distinct values.
        let grid = HyperparamGrid::knn(5);
        let ks: Vec<usize> = grid
            .candidates
            .iter()
            .map(|h| match h {
                Hyperparams::Knn { n_neighbors } => *n_neighbors,
                _ => unreachable!(),
            })
            .collect();
        assert!(ks.windows(2).all(|w| w[0] < w[1]));
        assert!(*ks.last().unwrap() <= 4);
    }

    #[test]
    fn pca_full_components_matches_plain_unregularized_logreg() {
        let (x, y) = random_data(60, 5, 3);
        let pca_model = train_pca_reg(&x, &y, 5).unwrap();
        let pca_scores = pca_model.score(&x).unwrap();

        // Plain unregularized logistic regression on standardized features.
        let standardizer = Standardizer::fit(&x);
        let xs = standardizer.apply(&x);
        let plain = logreg::fit_l2(&xs, &y, 0.0);
        let plain_scores: Vec<f64> = (0..xs.rows()).map(|i| plain.decision(xs.row(i))).collect();

        let a = auc(&pca_scores, &y).unwrap();
        let b = auc(&plain_scores, &y).unwrap();
        assert!((a - b).abs() < 1e-6, "pca {a} vs plain {b}");
    }

    #[test]
    fn score_errors_on_dimension_mismatch() {
        let (x, y) = random_data(30, 4, 5);
        let model = train_logreg(&x, &y, Reg::L2, 1.0).unwrap();
        let bad = Mat::zeros(3, 5);
        assert!(model.score(&bad).is_err());
    }

    #[test]
    fn logreg_score_is_affine_in_raw_features() {
        let (x, y) = random_data(40, 3, 9);
        let model = train_logreg(&x, &y, Reg::L2, 10.0).unwrap();
        let scores = model.score(&x).unwrap();
        let (w, b) = model.linear_map().unwrap();
        for i in 0..x.rows() {
            let manual: f64 = x.row(i).iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b;
            assert!((manual - scores[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn rankings_invariant_to_affine_feature_rescaling() {
        let (x, y) = random_data(50, 4, 21);
        let mut rescaled = x.clone();
        let scales = [3.0, 0.5, 10.0, 7.0];
        let shifts = [1.0, -2.0, 0.25, 5.0];
        for i in 0..x.rows() {
            for j in 0..4 {
                rescaled.set(i, j, x.get(i, j) * scales[j] + shifts[j]);
            }
        }
        let (test, _) = random_data(20, 4, 22);
        let mut test_rescaled = test.clone();
        for i in 0..test.rows() {
            for j in 0..4 {
                test_rescaled.set(i, j, test.get(i, j) * scales[j] + shifts[j]);
            }
        }
        for hp in [
            Hyperparams::LogReg { reg: Reg::L2, c: 1.0 },
            Hyperparams::PcaReg { n_components: 3 },
            Hyperparams::Knn { n_neighbors: 5 },
        ] {
            let m1 = train(&x, &y, &hp, 0).unwrap();
            let m2 = train(&rescaled, &y, &hp, 0).unwrap();
            let s1 = m1.score(&test).unwrap();
            let s2 = m2.score(&test_rescaled).unwrap();
            let rank = |s: &[f64]| {
                let mut idx: Vec<usize> = (0..s.len()).collect();
                idx.sort_by(|&a, &b| s[a].partial_cmp(&s[b]).unwrap().then(a.cmp(&b)));
                idx
            };
            assert_eq!(rank(&s1), rank(&s2), "{hp:?}");
        }
    }

    #[test]
    fn knn_all_positive_neighbors_scores_one() {
        let x = Mat::from_rows(&[vec![0.0], vec![0.1], vec![10.0], vec![10.1]]);
        let y = vec![1, 1, 0, 0];
        let model = train_knn(&x, &y, 2).unwrap();
        let q = Mat::from_rows(&[vec![0.05]]);
        assert_eq!(model.score(&q).unwrap()[0], 1.0);
    }

    #[test]
    fn json_round_trip_preserves_scores() {
        let (x, y) = random_data(40, 4, 33);
        let (q, _) = random_data(10, 4, 34);
        let models = vec![
            train_logreg(&x, &y, Reg::L1, 0.5).unwrap(),
            train_pca_reg(&x, &y, 3).unwrap(),
            train_knn(&x, &y, 3).unwrap(),
            train_gbt(
                &x,
                &y,
                &GbtParams {
                    n_estimators: 10,
                    ..GbtParams::default()
                },
                5,
            )
            .unwrap(),
            train_mlp(
                &x,
                &y,
                &MlpParams {
                    depth: 1,
                    width: 16,
                    learning_rate: 1e-2,
                    weight_decay: 1e-4,
                },
                5,
            )
            .unwrap(),
        ];
        for model in models {
            let text = model.to_json().unwrap();
            let back = ProbeModel::from_json(&text).unwrap();
            let a = model.score(&q).unwrap();
            let b = back.score(&q).unwrap();
            for (x1, x2) in a.iter().zip(&b) {
                assert_eq!(x1.to_bits(), x2.to_bits(), "{:?}", model.family);
            }
        }
    }

    #[test]
    fn deterministic_training_bit_for_bit() {
        let (x, y) = random_data(45, 4, 55);
        for hp in [
            Hyperparams::LogReg { reg: Reg::L2, c: 0.1 },
            Hyperparams::PcaReg { n_components: 2 },
            Hyperparams::Knn { n_neighbors: 7 },
        ] {
            let a = train(&x, &y, &hp, 9).unwrap();
            let b = train(&x, &y, &hp, 9).unwrap();
            assert_eq!(a, b, "{hp:?}");
        }
    }
}

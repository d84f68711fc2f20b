//! Gradient-boosted trees: second-order boosting on the logistic loss with
//! exact split enumeration, L1/L2 leaf regularization, and row/column
//! subsampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub subsample: f64,
    pub colsample_bytree: f64,
    pub reg_alpha: f64,
    pub reg_lambda: f64,
    pub min_child_weight: f64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            n_estimators: 100,
            max_depth: 3,
            learning_rate: 0.1,
            subsample: 1.0,
            colsample_bytree: 1.0,
            reg_alpha: 0.0,
            reg_lambda: 1.0,
            min_child_weight: 1.0,
        }
    }
}

/// Flat node: `feature < 0` marks a leaf carrying `value`; internal nodes
/// route `x[feature] < threshold` left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub feature: i32,
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<Vec<TreeNode>>,
}

impl GbtModel {
    fn tree_output(tree: &[TreeNode], row: &[f64]) -> f64 {
        let mut node = 0usize;
        loop {
            let n = &tree[node];
            if n.feature < 0 {
                return n.value;
            }
            node = if row[n.feature as usize] < n.threshold {
                n.left as usize
            } else {
                n.right as usize
            };
        }
    }

    /// Margin using only the first `n_trees` rounds (all trees when greater
    /// than the ensemble size). Exposed so tests can check the per-round
    /// training-loss trajectory.
    pub fn margin_partial(&self, row: &[f64], n_trees: usize) -> f64 {
        let mut m = self.base_score;
        for tree in self.trees.iter().take(n_trees) {
            m += self.learning_rate * Self::tree_output(tree, row);
        }
        m
    }

    pub fn margin(&self, row: &[f64]) -> f64 {
        self.margin_partial(row, self.trees.len())
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn soft_threshold(a: f64, lambda: f64) -> f64 {
    if a > lambda {
        a - lambda
    } else if a < -lambda {
        a + lambda
    } else {
        0.0
    }
}

/// Optimal leaf weight and its contribution to the split gain.
fn leaf_value(g: f64, h: f64, alpha: f64, lambda: f64) -> f64 {
    -soft_threshold(g, alpha) / (h + lambda)
}

fn leaf_objective(g: f64, h: f64, alpha: f64, lambda: f64) -> f64 {
    let t = soft_threshold(g, alpha);
    t * t / (h + lambda)
}

struct TreeBuilder<'a> {
    x: &'a Mat,
    grad: &'a [f64],
    hess: &'a [f64],
    params: &'a GbtParams,
    features: Vec<usize>,
    nodes: Vec<TreeNode>,
}

impl TreeBuilder<'_> {
    fn build(&mut self, rows: Vec<usize>, depth: usize) -> u32 {
        let g: f64 = rows.iter().map(|&i| self.grad[i]).sum();
        let h: f64 = rows.iter().map(|&i| self.hess[i]).sum();
        let alpha = self.params.reg_alpha;
        let lambda = self.params.reg_lambda;

        let make_leaf = |nodes: &mut Vec<TreeNode>| -> u32 {
            let idx = nodes.len() as u32;
            nodes.push(TreeNode {
                feature: -1,
                threshold: 0.0,
                left: 0,
                right: 0,
                value: leaf_value(g, h, alpha, lambda),
            });
            idx
        };

        if depth >= self.params.max_depth || rows.len() < 2 {
            return make_leaf(&mut self.nodes);
        }

        // Exact split enumeration over the sampled features: sort the node's
        // rows per feature and test midpoints between distinct values.
        let parent_obj = leaf_objective(g, h, alpha, lambda);
        let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)
        for &f in &self.features {
            let mut ordered: Vec<usize> = rows.clone();
            ordered.sort_by(|&a, &b| {
                self.x
                    .get(a, f)
                    .partial_cmp(&self.x.get(b, f))
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let mut gl = 0.0;
            let mut hl = 0.0;
            for w in 0..ordered.len() - 1 {
                let i = ordered[w];
                gl += self.grad[i];
                hl += self.hess[i];
                let v = self.x.get(i, f);
                let v_next = self.x.get(ordered[w + 1], f);
                if v_next == v {
                    continue;
                }
                let gr = g - gl;
                let hr = h - hl;
                if hl < self.params.min_child_weight || hr < self.params.min_child_weight {
                    continue;
                }
                let gain = 0.5
                    * (leaf_objective(gl, hl, alpha, lambda)
                        + leaf_objective(gr, hr, alpha, lambda)
                        - parent_obj);
                if gain > best.map_or(0.0, |(b, _, _)| b) {
                    best = Some((gain, f, 0.5 * (v + v_next)));
                }
            }
        }

        let Some((_, feature, threshold)) = best else {
            return make_leaf(&mut self.nodes);
        };

        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .into_iter()
            .partition(|&i| self.x.get(i, feature) < threshold);

        let idx = self.nodes.len();
        self.nodes.push(TreeNode {
            feature: feature as i32,
            threshold,
            left: 0,
            right: 0,
            value: 0.0,
        });
        let left = self.build(left_rows, depth + 1);
        let right = self.build(right_rows, depth + 1);
        self.nodes[idx].left = left;
        self.nodes[idx].right = right;
        idx as u32
    }
}

/// Train a boosted ensemble on raw (unstandardized) features; tree splits
/// are invariant to per-feature monotone rescaling.
pub fn fit(x: &Mat, y: &[u8], params: &GbtParams, seed: u64) -> Result<GbtModel> {
    let n = x.rows();
    let d = x.cols();
    let n_pos = y.iter().filter(|&&t| t == 1).count();
    if n_pos == 0 || n_pos == n {
        return Err(Error::SingleClass);
    }
    if d == 0 {
        return Err(Error::InvalidParam("no features".into()));
    }

    let rate = (n_pos as f64 / n as f64).clamp(1e-6, 1.0 - 1e-6);
    let base_score = (rate / (1.0 - rate)).ln();

    let mut margins = vec![base_score; n];
    let mut trees = Vec::with_capacity(params.n_estimators);
    let mut r = rng::rng(rng::derive_seed(seed, "gbt"));

    for _round in 0..params.n_estimators {
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n];
        for i in 0..n {
            let p = sigmoid(margins[i]);
            grad[i] = p - f64::from(y[i]);
            hess[i] = (p * (1.0 - p)).max(1e-16);
        }

        let rows: Vec<usize> = if params.subsample < 1.0 {
            let m = ((params.subsample * n as f64).floor() as usize).max(1);
            let mut sampled = rng::sample_without_replacement(n, m, &mut r);
            sampled.sort_unstable();
            sampled
        } else {
            (0..n).collect()
        };

        // Column subsample; floored at one feature, re-drawn if a rounding
        // bug ever yields an empty set.
        let features: Vec<usize> = if params.colsample_bytree < 1.0 {
            let m = ((params.colsample_bytree * d as f64).round() as usize).clamp(1, d);
            loop {
                let mut cols = rng::sample_without_replacement(d, m, &mut r);
                if !cols.is_empty() {
                    cols.sort_unstable();
                    break cols;
                }
            }
        } else {
            (0..d).collect()
        };

        let mut builder = TreeBuilder {
            x,
            grad: &grad,
            hess: &hess,
            params,
            features,
            nodes: Vec::new(),
        };
        builder.build(rows, 0);
        let tree = builder.nodes;

        for i in 0..n {
            margins[i] += params.learning_rate * GbtModel::tree_output(&tree, x.row(i));
        }
        trees.push(tree);
    }

    Ok(GbtModel {
        base_score,
        learning_rate: params.learning_rate,
        trees,
    })
}

/// Mean logistic loss of margins against targets.
pub fn logloss(margins: &[f64], y: &[u8]) -> f64 {
    let mut total = 0.0;
    for (&m, &t) in margins.iter().zip(y) {
        let s = if t == 1 { m } else { -m };
        total += if s > 0.0 {
            (-s).exp().ln_1p()
        } else {
            -s + s.exp().ln_1p()
        };
    }
    total / margins.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::auc;
    use rand::Rng;

    fn threshold_data() -> (Mat, Vec<u8>) {
        // Perfectly split by x0 < 0.5.
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![i as f64 / 10.0, (i % 3) as f64])
            .collect();
        let y: Vec<u8> = (0..20).map(|i| u8::from(i as f64 / 10.0 >= 0.5)).collect();
        (Mat::from_rows(&rows), y)
    }

    #[test]
    fn single_stump_separates_threshold_data() {
        let (x, y) = threshold_data();
        let params = GbtParams {
            n_estimators: 1,
            max_depth: 1,
            learning_rate: 1.0,
            min_child_weight: 0.0,
            ..GbtParams::default()
        };
        let model = fit(&x, &y, &params, 0).unwrap();
        let scores: Vec<f64> = (0..x.rows()).map(|i| model.margin(x.row(i))).collect();
        assert_eq!(auc(&scores, &y).unwrap(), 1.0);
    }

    #[test]
    fn zero_learning_rate_scores_are_base_only() {
        let (x, y) = threshold_data();
        let params = GbtParams {
            n_estimators: 5,
            learning_rate: 0.0,
            ..GbtParams::default()
        };
        let model = fit(&x, &y, &params, 0).unwrap();
        let scores: Vec<f64> = (0..x.rows()).map(|i| model.margin(x.row(i))).collect();
        assert!(scores.iter().all(|&s| s == model.base_score));
        assert_eq!(auc(&scores, &y).unwrap(), 0.5);
    }

    #[test]
    fn ensemble_beats_exhaustive_stump_oracle() {
        // Depth-2, 5 trees on 40 examples: training logloss must not exceed
        // the best single stump found by exhaustive enumeration.
        let mut r = crate::rng::rng(83);
        let n = 40;
        let d = 5;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| r.random::<f64>() * 2.0 - 1.0).collect())
            .collect();
        let y: Vec<u8> = rows
            .iter()
            .map(|row| u8::from(row[1] + 0.3 * row[3] > 0.1) ^ u8::from(r.random::<f64>() < 0.15))
            .collect();
        let x = Mat::from_rows(&rows);
        let params = GbtParams {
            n_estimators: 5,
            max_depth: 2,
            learning_rate: 0.5,
            reg_lambda: 1.0,
            ..GbtParams::default()
        };
        let model = fit(&x, &y, &params, 7).unwrap();
        let model_margins: Vec<f64> = (0..n).map(|i| model.margin(x.row(i))).collect();
        let model_loss = logloss(&model_margins, &y);

        // Oracle: every (feature, threshold) stump with per-leaf optimal
        // log-odds values.
        let mut best_stump_loss = f64::INFINITY;
        for f in 0..d {
            let mut values: Vec<f64> = (0..n).map(|i| x.get(i, f)).collect();
            values.sort_by(|a, b| a.partial_cmp(b).unwrap());
            values.dedup();
            for w in values.windows(2) {
                let thr = 0.5 * (w[0] + w[1]);
                let mut counts = [[0usize; 2]; 2]; // [side][label]
                for i in 0..n {
                    let side = usize::from(x.get(i, f) >= thr);
                    counts[side][y[i] as usize] += 1;
                }
                let leaf_logit = |c: [usize; 2]| {
                    let total = (c[0] + c[1]).max(1) as f64;
                    let rate = (c[1] as f64 / total).clamp(1e-6, 1.0 - 1e-6);
                    (rate / (1.0 - rate)).ln()
                };
                let logits = [leaf_logit(counts[0]), leaf_logit(counts[1])];
                let margins: Vec<f64> = (0..n)
                    .map(|i| logits[usize::from(x.get(i, f) >= thr)])
                    .collect();
                best_stump_loss = best_stump_loss.min(logloss(&margins, &y));
            }
        }
        assert!(
            model_loss <= best_stump_loss + 1e-9,
            "ensemble {model_loss} vs best stump {best_stump_loss}"
        );
    }

    #[test]
    fn training_loss_non_increasing_per_round() {
        let mut r = crate::rng::rng(19);
        let n = 60;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..4).map(|_| r.random::<f64>()).collect())
            .collect();
        let y: Vec<u8> = rows.iter().map(|row| u8::from(row[0] > row[2])).collect();
        let x = Mat::from_rows(&rows);
        let params = GbtParams {
            n_estimators: 20,
            max_depth: 3,
            learning_rate: 0.3,
            subsample: 1.0,
            colsample_bytree: 1.0,
            ..GbtParams::default()
        };
        let model = fit(&x, &y, &params, 3).unwrap();
        let mut prev = f64::INFINITY;
        for t in 0..=params.n_estimators {
            let margins: Vec<f64> = (0..n).map(|i| model.margin_partial(x.row(i), t)).collect();
            let loss = logloss(&margins, &y);
            assert!(loss <= prev + 1e-12, "round {t}: {loss} > {prev}");
            prev = loss;
        }
    }

    #[test]
    fn subsampled_training_is_deterministic() {
        let mut r = crate::rng::rng(4);
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..3).map(|_| r.random::<f64>()).collect())
            .collect();
        let y: Vec<u8> = (0..30).map(|i| (i % 2) as u8).collect();
        let x = Mat::from_rows(&rows);
        let params = GbtParams {
            n_estimators: 8,
            subsample: 0.8,
            colsample_bytree: 0.7,
            ..GbtParams::default()
        };
        let a = fit(&x, &y, &params, 11).unwrap();
        let b = fit(&x, &y, &params, 11).unwrap();
        assert_eq!(a, b);
        assert!(matches!(fit(&x, &[1u8; 30], &params, 11), Err(Error::SingleClass)));
    }
}

//! Multi-token baselines: pooled activation probes, the concatenated-PCA
//! probe, and attention-pooled probes that learn a query direction for
//! softmax token weighting and a value direction for scoring.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::{dot, Mat};
use crate::probes::{b64_decode_f64s, b64_encode_f64s, PcaProjection, Standardizer};
use crate::rng;
use crate::sae::PoolMode;
use crate::tensor::ActivationTensor;

/// Attention-pooled probe: token weights from `softmax(x_t . q)` over valid
/// tokens, logit from the weighted sum of `x_t . v` plus a bias.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionProbe {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub b: f64,
}

impl AttentionProbe {
    pub fn d_model(&self) -> usize {
        self.q.len()
    }
}

/// A trained attention probe plus its frozen feature statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionProbeModel {
    pub probe: AttentionProbe,
    pub standardizer: Standardizer,
}

fn standardized_token(s: &Standardizer, token: &[f32]) -> Vec<f64> {
    token
        .iter()
        .enumerate()
        .map(|(j, &v)| (f64::from(v) - s.mean[j]) / s.scale[j])
        .collect()
}

/// Logit for one example. Pad tokens receive -inf pre-softmax weight, i.e.
/// only valid tokens participate.
pub fn attn_score(probe: &AttentionProbe, x: &ActivationTensor, example: usize) -> Result<f64> {
    if x.d_model() != probe.d_model() {
        return Err(Error::ShapeMismatch(format!(
            "probe dimension {} vs activation dimension {}",
            probe.d_model(),
            x.d_model()
        )));
    }
    let first = x.first_valid_token(example);
    let n_tokens = x.n_tokens();
    if first >= n_tokens {
        return Err(Error::InvalidParam(format!(
            "example {example} has zero valid tokens"
        )));
    }
    let mut logits = Vec::with_capacity(n_tokens - first);
    let mut values = Vec::with_capacity(n_tokens - first);
    for t in first..n_tokens {
        let tok = x.token(example, t);
        let mut ql = 0.0;
        let mut vl = 0.0;
        for (j, &xv) in tok.iter().enumerate() {
            let xv = f64::from(xv);
            ql += xv * probe.q[j];
            vl += xv * probe.v[j];
        }
        logits.push(ql);
        values.push(vl);
    }
    // Shift-invariant softmax.
    let max_logit = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|&l| (l - max_logit).exp()).collect();
    let total: f64 = weights.iter().sum();
    let pooled: f64 = weights
        .iter()
        .zip(&values)
        .map(|(&w, &v)| (w / total) * v)
        .sum();
    Ok(pooled + probe.b)
}

impl AttentionProbeModel {
    /// Scores for every example, applying the frozen standardization per
    /// token before attention pooling.
    pub fn score(&self, x: &ActivationTensor) -> Result<Vec<f64>> {
        let std_x = standardize_tensor(&self.standardizer, x)?;
        (0..x.n_examples())
            .map(|i| attn_score(&self.probe, &std_x, i))
            .collect()
    }
}

fn standardize_tensor(s: &Standardizer, x: &ActivationTensor) -> Result<ActivationTensor> {
    if s.dim() != x.d_model() {
        return Err(Error::ShapeMismatch(format!(
            "standardizer dimension {} vs activation dimension {}",
            s.dim(),
            x.d_model()
        )));
    }
    let mut data = Vec::with_capacity(x.data().len());
    for i in 0..x.n_examples() {
        for t in 0..x.n_tokens() {
            for v in standardized_token(s, x.token(i, t)) {
                data.push(v as f32);
            }
        }
    }
    ActivationTensor::new(
        data,
        x.n_examples(),
        x.n_tokens(),
        x.d_model(),
        x.token_mask().to_vec(),
    )
}

/// Gradient of the mean logistic loss (plus L2 on q and v) with respect to
/// (q, v, b), computed on already-standardized tensors.
pub fn attn_loss_and_grads(
    probe: &AttentionProbe,
    x: &ActivationTensor,
    targets: &[u8],
    weight_decay: f64,
) -> Result<(f64, AttentionProbe)> {
    let n = x.n_examples();
    let nf = n as f64;
    let d = probe.d_model();
    let mut grad = AttentionProbe {
        q: vec![0.0; d],
        v: vec![0.0; d],
        b: 0.0,
    };
    let mut loss = 0.0;

    for i in 0..n {
        let first = x.first_valid_token(i);
        let count = x.n_tokens() - first;
        let mut s_q = Vec::with_capacity(count);
        let mut s_v = Vec::with_capacity(count);
        for t in first..x.n_tokens() {
            let tok = x.token(i, t);
            let mut ql = 0.0;
            let mut vl = 0.0;
            for (j, &xv) in tok.iter().enumerate() {
                let xv = f64::from(xv);
                ql += xv * probe.q[j];
                vl += xv * probe.v[j];
            }
            s_q.push(ql);
            s_v.push(vl);
        }
        let max_logit = s_q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = s_q.iter().map(|&l| (l - max_logit).exp()).collect();
        let total: f64 = exps.iter().sum();
        let attn: Vec<f64> = exps.iter().map(|&e| e / total).collect();
        let pooled: f64 = attn.iter().zip(&s_v).map(|(&a, &v)| a * v).sum();
        let logit = pooled + probe.b;

        let y = f64::from(targets[i]);
        let m = if targets[i] == 1 { logit } else { -logit };
        loss += (if m > 0.0 {
            (-m).exp().ln_1p()
        } else {
            -m + m.exp().ln_1p()
        }) / nf;

        let p = if logit >= 0.0 {
            1.0 / (1.0 + (-logit).exp())
        } else {
            let e = logit.exp();
            e / (1.0 + e)
        };
        let dlogit = (p - y) / nf;

        grad.b += dlogit;
        for (t_rel, t) in (first..x.n_tokens()).enumerate() {
            let tok = x.token(i, t);
            // d logit / d s_v[t] = attn[t]; d logit / d s_q[t] = attn[t] *
            // (s_v[t] - pooled) from the softmax Jacobian.
            let dv = dlogit * attn[t_rel];
            let dq = dlogit * attn[t_rel] * (s_v[t_rel] - pooled);
            for (j, &xv) in tok.iter().enumerate() {
                let xv = f64::from(xv);
                grad.v[j] += dv * xv;
                grad.q[j] += dq * xv;
            }
        }
    }

    if weight_decay > 0.0 {
        for j in 0..d {
            grad.q[j] += weight_decay * probe.q[j] / nf;
            grad.v[j] += weight_decay * probe.v[j] / nf;
            loss +=
                weight_decay * (probe.q[j] * probe.q[j] + probe.v[j] * probe.v[j]) / (2.0 * nf);
        }
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttnHyperparams {
    pub learning_rate: f64,
    pub weight_decay: f64,
}

impl Default for AttnHyperparams {
    fn default() -> Self {
        AttnHyperparams {
            learning_rate: 1e-2,
            weight_decay: 1e-4,
        }
    }
}

/// Ten seeded draws from the MLP module's learning-rate and weight-decay
/// ranges, reused here so attention probes slot into the same selection
/// machinery.
pub fn attn_grid(seed: u64) -> Vec<AttnHyperparams> {
    use rand::Rng;
    let mut r = rng::rng(rng::derive_seed(seed, "grid-attn"));
    let lrs: Vec<f64> = (0..5).map(|i| 10f64.powf(-4.0 + 0.5 * i as f64)).collect();
    let wds: Vec<f64> = (0..5).map(|i| 10f64.powf(-5.0 + 0.75 * i as f64)).collect();
    let mut out = Vec::with_capacity(10);
    let mut seen = std::collections::HashSet::new();
    while out.len() < 10 {
        let lr_i = r.random_range(0..lrs.len());
        let wd_i = r.random_range(0..wds.len());
        if seen.insert((lr_i, wd_i)) {
            out.push(AttnHyperparams {
                learning_rate: lrs[lr_i],
                weight_decay: wds[wd_i],
            });
        }
    }
    out
}

struct AdamVec {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamVec {
    fn new(d: usize) -> Self {
        AdamVec {
            m: vec![0.0; d],
            v: vec![0.0; d],
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, t: u64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        let c1 = 1.0 - B1.powi(t as i32);
        let c2 = 1.0 - B2.powi(t as i32);
        for j in 0..params.len() {
            self.m[j] = B1 * self.m[j] + (1.0 - B1) * grads[j];
            self.v[j] = B2 * self.v[j] + (1.0 - B2) * grads[j] * grads[j];
            params[j] -= lr * (self.m[j] / c1) / ((self.v[j] / c2).sqrt() + EPS);
        }
    }
}

/// Train an attention probe with Adam: seeded Gaussian init at scale
/// `1/sqrt(d)`, mini-batches of `min(64, n)`, 200 epochs with a 20-epoch
/// early-stop plateau on an internal holdout. Optimizer settings mirror the
/// MLP module for comparability.
pub fn train_attn_probe(
    x: &ActivationTensor,
    targets: &[u8],
    hp: &AttnHyperparams,
    seed: u64,
) -> Result<AttentionProbeModel> {
    train_attn_probe_with_epochs(x, targets, hp, seed, 200)
}

pub fn train_attn_probe_with_epochs(
    x: &ActivationTensor,
    targets: &[u8],
    hp: &AttnHyperparams,
    seed: u64,
    epochs: usize,
) -> Result<AttentionProbeModel> {
    let n = x.n_examples();
    if targets.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} targets for {n} examples",
            targets.len()
        )));
    }
    let n_pos = targets.iter().filter(|&&t| t == 1).count();
    if n_pos == 0 || n_pos == n {
        return Err(Error::SingleClass);
    }
    let d = x.d_model();

    // Standardize per model dimension over valid tokens of the training set.
    let mut token_rows = Vec::new();
    for i in 0..n {
        for t in x.first_valid_token(i)..x.n_tokens() {
            token_rows.push(x.token(i, t).iter().map(|&v| f64::from(v)).collect());
        }
    }
    let standardizer = Standardizer::fit(&Mat::from_rows(&token_rows));
    drop(token_rows);
    let std_x = standardize_tensor(&standardizer, x)?;

    use rand_distr::{Distribution, StandardNormal};
    let mut init_rng = rng::rng(rng::derive_seed(seed, "attn-init"));
    let scale = 1.0 / (d as f64).sqrt();
    let mut probe = AttentionProbe {
        q: (0..d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut init_rng);
                z * scale
            })
            .collect(),
        v: (0..d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut init_rng);
                z * scale
            })
            .collect(),
        b: 0.0,
    };

    let all: Vec<usize> = (0..n).collect();
    let (train_idx, holdout_idx) = if n >= 20 {
        let (rest, held) = crate::tensor::stratified_holdout(
            &all,
            targets,
            0.2,
            rng::derive_seed(seed, "attn-holdout"),
        );
        let ok = !held.is_empty()
            && rest.iter().any(|&i| targets[i] == 1)
            && rest.iter().any(|&i| targets[i] == 0);
        if ok {
            (rest, held)
        } else {
            (all.clone(), Vec::new())
        }
    } else {
        (all.clone(), Vec::new())
    };

    let batch = 64.min(train_idx.len()).max(1);
    let mut adam_q = AdamVec::new(d);
    let mut adam_v = AdamVec::new(d);
    let mut adam_b = AdamVec::new(1);
    let mut t_step = 0u64;
    let mut shuffler = rng::rng(rng::derive_seed(seed, "attn-batches"));
    let mut order = train_idx.clone();

    let mut best = probe.clone();
    let mut best_loss = f64::INFINITY;
    let mut stale = 0usize;

    let select_examples = |idx: &[usize]| -> Result<ActivationTensor> {
        let mut data = Vec::with_capacity(idx.len() * std_x.n_tokens() * d);
        let mut mask = Vec::with_capacity(idx.len());
        for &i in idx {
            for t in 0..std_x.n_tokens() {
                data.extend_from_slice(std_x.token(i, t));
            }
            mask.push(std_x.token_mask()[i]);
        }
        ActivationTensor::new(data, idx.len(), std_x.n_tokens(), d, mask)
    };

    for _epoch in 0..epochs {
        rng::shuffle(&mut order, &mut shuffler);
        for chunk in order.chunks(batch) {
            let xb = select_examples(chunk)?;
            let yb: Vec<u8> = chunk.iter().map(|&i| targets[i]).collect();
            let (_, grads) = attn_loss_and_grads(&probe, &xb, &yb, hp.weight_decay)?;
            t_step += 1;
            adam_q.step(&mut probe.q, &grads.q, hp.learning_rate, t_step);
            adam_v.step(&mut probe.v, &grads.v, hp.learning_rate, t_step);
            let mut b = [probe.b];
            adam_b.step(&mut b, &[grads.b], hp.learning_rate, t_step);
            probe.b = b[0];
        }
        if !holdout_idx.is_empty() {
            let xh = select_examples(&holdout_idx)?;
            let yh: Vec<u8> = holdout_idx.iter().map(|&i| targets[i]).collect();
            let (loss, _) = attn_loss_and_grads(&probe, &xh, &yh, 0.0)?;
            if loss + 1e-12 < best_loss {
                best_loss = loss;
                best = probe.clone();
                stale = 0;
            } else {
                stale += 1;
                if stale >= 20 {
                    probe = best;
                    return Ok(AttentionProbeModel {
                        probe,
                        standardizer,
                    });
                }
            }
        }
    }
    if !holdout_idx.is_empty() {
        probe = best;
    }
    Ok(AttentionProbeModel {
        probe,
        standardizer,
    })
}

/// Pool raw activations over valid tokens, producing a last-token-style
/// tensor (`n_tokens = 1`).
pub fn pool_activations(x: &ActivationTensor, mode: PoolMode) -> Result<ActivationTensor> {
    let n = x.n_examples();
    let d = x.d_model();
    let mut data = vec![0.0f32; n * d];
    for i in 0..n {
        let first = x.first_valid_token(i);
        let count = x.n_tokens() - first;
        if count == 0 {
            return Err(Error::InvalidParam(format!(
                "example {i} has zero valid tokens"
            )));
        }
        let out = &mut data[i * d..(i + 1) * d];
        match mode {
            PoolMode::Last => out.copy_from_slice(x.token(i, x.n_tokens() - 1)),
            PoolMode::Mean => {
                let mut acc = vec![0.0f64; d];
                for t in first..x.n_tokens() {
                    for (a, &v) in acc.iter_mut().zip(x.token(i, t)) {
                        *a += f64::from(v);
                    }
                }
                for (o, a) in out.iter_mut().zip(acc) {
                    *o = (a / count as f64) as f32;
                }
            }
            PoolMode::Max => {
                out.copy_from_slice(x.token(i, first));
                for t in first + 1..x.n_tokens() {
                    for (o, &v) in out.iter_mut().zip(x.token(i, t)) {
                        if v > *o {
                            *o = v;
                        }
                    }
                }
            }
        }
    }
    ActivationTensor::from_matrix(data, n, d)
}

/// Shared projection for concatenated-PCA features: one standardizer and one
/// component basis fit on all valid training tokens pooled together.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcatPca {
    pub standardizer: Standardizer,
    pub projection: PcaProjection,
    pub n_tokens: usize,
}

impl ConcatPca {
    /// Fit on the training tensor's valid tokens.
    pub fn fit(x: &ActivationTensor, n_components: usize) -> Result<ConcatPca> {
        let mut token_rows = Vec::new();
        for i in 0..x.n_examples() {
            for t in x.first_valid_token(i)..x.n_tokens() {
                token_rows.push(x.token(i, t).iter().map(|&v| f64::from(v)).collect());
            }
        }
        let tokens = Mat::from_rows(&token_rows);
        let standardizer = Standardizer::fit(&tokens);
        let standardized = standardizer.apply(&tokens);
        let projection = PcaProjection::fit(&standardized, n_components)?;
        Ok(ConcatPca {
            standardizer,
            projection,
            n_tokens: x.n_tokens(),
        })
    }

    /// Project every token and concatenate across positions; pad positions
    /// contribute zero features. Output width = n_components * n_tokens.
    pub fn transform(&self, x: &ActivationTensor) -> Result<Mat> {
        if x.n_tokens() != self.n_tokens {
            return Err(Error::ShapeMismatch(format!(
                "fitted for context length {}, got {}",
                self.n_tokens,
                x.n_tokens()
            )));
        }
        let k = self.projection.n_components();
        let mut out = Mat::zeros(x.n_examples(), k * self.n_tokens);
        for i in 0..x.n_examples() {
            let first = x.first_valid_token(i);
            for t in first..self.n_tokens {
                let std_tok = standardized_token(&self.standardizer, x.token(i, t));
                let row = out.row_mut(i);
                for c in 0..k {
                    row[t * k + c] = dot(&std_tok, self.projection.components.row(c));
                }
            }
        }
        Ok(out)
    }
}

/// Default per-token projection width for concatenated-PCA features.
pub const CONCAT_PCA_COMPONENTS: usize = 20;

/// Concatenated-PCA feature matrix: fit on the given tensor's tokens, then
/// transform it. Downstream training uses logistic regression on the result.
/// The conventional width is [`CONCAT_PCA_COMPONENTS`] per token.
pub fn concat_pca_probe(x: &ActivationTensor, n_components: usize) -> Result<(ConcatPca, Mat)> {
    let fitted = ConcatPca::fit(x, n_components)?;
    let features = fitted.transform(x)?;
    Ok((fitted, features))
}

// --- serialization ----------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct AttnDoc {
    family: String,
    q: String,
    v: String,
    b: f64,
    mean: String,
    scale: String,
}

impl AttentionProbeModel {
    pub fn to_json(&self) -> Result<String> {
        let doc = AttnDoc {
            family: "attn".into(),
            q: b64_encode_f64s(&self.probe.q),
            v: b64_encode_f64s(&self.probe.v),
            b: self.probe.b,
            mean: b64_encode_f64s(&self.standardizer.mean),
            scale: b64_encode_f64s(&self.standardizer.scale),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<AttentionProbeModel> {
        let doc: AttnDoc = serde_json::from_str(text)?;
        if doc.family != "attn" {
            return Err(Error::InvalidParam(format!(
                "expected attn model, found {:?}",
                doc.family
            )));
        }
        Ok(AttentionProbeModel {
            probe: AttentionProbe {
                q: b64_decode_f64s(&doc.q)?,
                v: b64_decode_f64s(&doc.v)?,
                b: doc.b,
            },
            standardizer: Standardizer {
                mean: b64_decode_f64s(&doc.mean)?,
                scale: b64_decode_f64s(&doc.scale)?,
            },
        })
    }
}

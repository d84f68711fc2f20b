//! Dataset-quality tooling: disagreement mining between a trained probe and
//! the recorded labels, and per-token mean-activation tables for linear
//! probes run over a token stream.

use crate::error::{Error, Result};
use crate::probes::ProbeModel;
use crate::tensor::{ActivationTensor, LabeledDataset};

/// One example the model disputes, strongest disagreement first.
#[derive(Debug, Clone)]
pub struct Disagreement {
    pub index: usize,
    pub score: f64,
    /// Model probability of class 1.
    pub prob: f64,
    pub label: u8,
    /// Model confidence in the class opposite the recorded label.
    pub confidence: f64,
}

/// Rank every example by the model's confidence in the class opposite its
/// recorded label. `top_n` larger than the dataset clamps with a warning
/// flag in the returned count.
pub fn mine_disagreements(
    model: &ProbeModel,
    data: &LabeledDataset,
    top_n: usize,
) -> Result<Vec<Disagreement>> {
    if top_n == 0 {
        return Err(Error::InvalidParam("top_n must be >= 1".into()));
    }
    let features = data.features.as_mat();
    let scores = model.score(&features)?;
    let mut rows: Vec<Disagreement> = scores
        .iter()
        .enumerate()
        .map(|(i, &score)| {
            let prob = model.score_to_prob(score);
            let label = data.targets[i];
            let confidence = if label == 1 { 1.0 - prob } else { prob };
            Disagreement {
                index: i,
                score,
                prob,
                label,
                confidence,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .unwrap()
            .then(a.index.cmp(&b.index))
    });
    rows.truncate(top_n.min(data.n_examples()));
    Ok(rows)
}

/// Token-id annotations for an activation tensor, row-major over
/// `(example, token)`; ids at pad positions are ignored.
#[derive(Debug, Clone)]
pub struct TokenStream {
    pub activations: ActivationTensor,
    pub token_ids: Vec<u32>,
}

impl TokenStream {
    pub fn new(activations: ActivationTensor, token_ids: Vec<u32>) -> Result<Self> {
        let expect = activations.n_examples() * activations.n_tokens();
        if token_ids.len() != expect {
            return Err(Error::ShapeMismatch(format!(
                "{} token ids for {} positions",
                token_ids.len(),
                expect
            )));
        }
        Ok(TokenStream {
            activations,
            token_ids,
        })
    }
}

/// One row of the top-activating-token table.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenActivation {
    pub token_id: u32,
    pub mean_activation: f64,
    pub occurrences: usize,
}

/// Group the linear model's per-token scores by token id: mean score and
/// occurrence count per id, sorted by descending mean, filtered to ids seen
/// at least `min_occurrences` times. Errors for non-linear families.
pub fn top_activating_tokens(
    model: &ProbeModel,
    stream: &TokenStream,
    min_occurrences: usize,
) -> Result<Vec<TokenActivation>> {
    let (weights, bias) = model.linear_map()?;
    let x = &stream.activations;
    if weights.len() != x.d_model() {
        return Err(Error::ShapeMismatch(format!(
            "model expects {} dims, stream has {}",
            weights.len(),
            x.d_model()
        )));
    }

    use std::collections::HashMap;
    let mut sums: HashMap<u32, (f64, usize)> = HashMap::new();
    for i in 0..x.n_examples() {
        for t in x.first_valid_token(i)..x.n_tokens() {
            let id = stream.token_ids[i * x.n_tokens() + t];
            let tok = x.token(i, t);
            let score: f64 = tok
                .iter()
                .zip(&weights)
                .map(|(&xv, &w)| f64::from(xv) * w)
                .sum::<f64>()
                + bias;
            let entry = sums.entry(id).or_insert((0.0, 0));
            entry.0 += score;
            entry.1 += 1;
        }
    }

    let mut rows: Vec<TokenActivation> = sums
        .into_iter()
        .filter(|(_, (_, count))| *count >= min_occurrences)
        .map(|(token_id, (sum, occurrences))| TokenActivation {
            token_id,
            mean_activation: sum / occurrences as f64,
            occurrences,
        })
        .collect();
    rows.sort_by(|a, b| {
        b.mean_activation
            .partial_cmp(&a.mean_activation)
            .unwrap()
            .then(a.token_id.cmp(&b.token_id))
    });
    Ok(rows)
}

/// Render the table as CSV with columns (token_id, mean_activation,
/// occurrences).
pub fn token_table_csv(rows: &[TokenActivation]) -> String {
    let mut out = String::from("token_id,mean_activation,occurrences\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{}\n",
            row.token_id, row.mean_activation, row.occurrences
        ));
    }
    out
}

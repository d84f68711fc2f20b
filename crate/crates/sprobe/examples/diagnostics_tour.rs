//! Dataset-quality diagnostics: find mislabeled examples by model
//! disagreement, and summarize a linear probe's behavior per token id.

use rand::Rng;
use sprobe::diagnostics::{mine_disagreements, top_activating_tokens, TokenStream};
use sprobe::probes::{train_logreg, Reg};
use sprobe::tensor::{ActivationTensor, Features, LabeledDataset, Split};

fn main() -> sprobe::Result<()> {
    // A separable 2-D dataset with one deliberately flipped label.
    let mut r = sprobe::rng::rng(3);
    let n = 120;
    let mut data = Vec::with_capacity(n * 2);
    let mut targets = Vec::with_capacity(n);
    for i in 0..n {
        let y = u8::from(i % 2 == 0);
        let center = if y == 1 { 2.5 } else { -2.5 };
        data.push(center + (r.random::<f32>() - 0.5) * 0.4);
        data.push((r.random::<f32>() - 0.5) * 0.4);
        targets.push(y);
    }
    let clean = targets.clone();
    let flipped = 31;
    targets[flipped] = 1 - targets[flipped];

    let tensor = ActivationTensor::from_matrix(data, n, 2)?;
    let dataset = LabeledDataset::new(
        Features::Activations(tensor.clone()),
        targets,
        Split {
            train: (0..n - 1).collect(),
            val: vec![],
            test: vec![n - 1],
        },
    )?;

    let model = train_logreg(&tensor.last_token_mat(), &clean, Reg::L2, 100.0)?;
    let rows = mine_disagreements(&model, &dataset, 3)?;
    println!("flipped example index: {flipped}");
    println!("top disagreements (index, label, model confidence in the other class):");
    for d in &rows {
        println!("  {:>3}  label {}  confidence {:.3}", d.index, d.label, d.confidence);
    }

    // Per-token mean activation of the linear probe over a token stream.
    let stream_len = 5000;
    let ids: Vec<u32> = (0..stream_len).map(|_| r.random_range(0..6)).collect();
    let values: Vec<f32> = ids
        .iter()
        .flat_map(|&id| {
            // Token id correlates with the probe direction.
            let shift = id as f32 - 2.5;
            [shift + (r.random::<f32>() - 0.5), r.random::<f32>() - 0.5]
        })
        .collect();
    let stream = TokenStream::new(
        ActivationTensor::from_matrix(values, stream_len, 2)?,
        ids,
    )?;
    let table = top_activating_tokens(&model, &stream, 10)?;
    println!("\ntoken_id  mean_activation  occurrences");
    for row in &table {
        println!(
            "{:>8}  {:>15.4}  {:>11}",
            row.token_id, row.mean_activation, row.occurrences
        );
    }
    Ok(())
}

//! ROC-AUC in Mann-Whitney form: ties count one half, and any strictly
//! increasing transform of the scores leaves the value unchanged.

use sprobe::metrics::auc;

fn main() -> sprobe::Result<()> {
    let labels = [0u8, 0, 1, 1];
    let scores = [0.1, 0.4, 0.35, 0.8];
    println!("scores {scores:?}");
    println!("labels {labels:?}");
    println!("auc = {}", auc(&scores, &labels)?); // 3 of 4 pairs won

    let tied = [0.5, 0.5, 0.5, 0.5];
    println!("all-tied scores -> auc = {}", auc(&tied, &labels)?);

    // Rank statistic: exp() is strictly increasing, so AUC is unchanged.
    let transformed: Vec<f64> = scores.iter().map(|s| (s * 10.0).exp()).collect();
    println!(
        "after exp(10x) transform -> auc = {}",
        auc(&transformed, &labels)?
    );

    // Complementing the labels flips the value around one half.
    let flipped: Vec<u8> = labels.iter().map(|&l| 1 - l).collect();
    println!("flipped labels -> auc = {}", auc(&scores, &flipped)?);
    Ok(())
}

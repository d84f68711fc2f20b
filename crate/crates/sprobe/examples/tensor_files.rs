//! Activation tensors on disk: write an SPBA file, read it back bit-exactly,
//! and load a labeled dataset through a manifest.

use sprobe::tensor::{
    load_dataset, read_tensor, write_targets, write_tensor, ActivationTensor, DatasetManifest,
};

fn main() -> sprobe::Result<()> {
    let dir = std::env::temp_dir().join("sprobe-tensor-example");
    std::fs::create_dir_all(&dir)?;

    // A 4-example, 3-token, 2-dim tensor; the first example has one pad
    // token at the front of the token axis.
    let data: Vec<f32> = (0..4 * 3 * 2).map(|i| i as f32 * 0.25).collect();
    let tensor = ActivationTensor::new(data, 4, 3, 2, vec![2, 3, 3, 1])?;
    let path = dir.join("demo.spba");
    write_tensor(&tensor, &path)?;
    let size = std::fs::metadata(&path)?.len();
    println!("wrote {} ({} bytes: 32 header + 16 mask + 96 payload)", path.display(), size);

    let back = read_tensor(&path)?;
    assert_eq!(tensor, back);
    println!("round trip is bit-exact");
    println!(
        "example 0 valid tokens start at index {}",
        back.first_valid_token(0)
    );

    // Datasets pair activations with targets through a JSON manifest; the
    // split derives deterministically from the manifest seed.
    let n = 600;
    let rows: Vec<f32> = (0..n * 2).map(|i| (i as f32).sin()).collect();
    let activations = ActivationTensor::from_matrix(rows, n, 2)?;
    let act_path = dir.join("dataset.spba");
    let tgt_path = dir.join("targets.txt");
    write_tensor(&activations, &act_path)?;
    let targets: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    write_targets(&targets, &tgt_path)?;

    let manifest = DatasetManifest {
        dataset_id: "demo".into(),
        activations: act_path,
        targets: tgt_path,
        ood_activations: None,
        ood_targets: None,
        seed: 7,
    };
    let dataset = load_dataset(&manifest)?;
    println!(
        "loaded {} examples: {} train / {} val / {} test",
        dataset.n_examples(),
        dataset.split.train.len(),
        dataset.split.val.len(),
        dataset.split.test.len()
    );
    Ok(())
}

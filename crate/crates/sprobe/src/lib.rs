//! Sparse-probing toolkit.
//!
//! Trains classifiers ("probes") from model activations or SAE latents to
//! binary targets, selects latents by mean class difference, evaluates with
//! ROC-AUC under a size-adaptive cross-validation protocol, and sweeps the
//! difficult probing regimes (data scarcity, class imbalance, label noise,
//! covariate shift) with a quiver-of-arrows method selector.
//!
//! See the `examples/` directory for one runnable walkthrough per capability
//! and the `sprobe` binary for the batch harness.
//!
//! ```
//! use sprobe::fixtures::{generate_world, oracle_sae, sample_dataset};
//! use sprobe::metrics::auc;
//! use sprobe::probes::{train_logreg, Reg};
//! use sprobe::sae::{encode_matrix, select_top_k};
//!
//! // A synthetic world whose target concept is ground-truth feature 0.
//! let world = generate_world(32, 64, 7)?;
//! let (data, _) = sample_dataset(&world, 512, 1)?;
//!
//! // Encode activations with the oracle SAE and pick the top latent by
//! // mean class difference on the training pool.
//! let latents = encode_matrix(data.features.as_activations().unwrap(), &oracle_sae(&world)?)?;
//! let pool = data.split.train_pool();
//! let selection = select_top_k(&latents.select_rows(&pool), &data.targets_at(&pool), 1)?;
//! assert_eq!(selection.indices, vec![0]);
//!
//! // A one-latent probe already separates the test set.
//! let features = latents.feature_mat(&selection.indices);
//! let model = train_logreg(&features.select_rows(&pool), &data.targets_at(&pool), Reg::L1, 1.0)?;
//! let scores = model.score(&features.select_rows(&data.split.test))?;
//! let test_auc = auc(&scores, &data.targets_at(&data.split.test))?;
//! assert!(test_auc > 0.95);
//! # Ok::<(), sprobe::Error>(())
//! ```

pub mod diagnostics;
pub mod error;
pub mod fixtures;
pub mod harness;
pub mod mat;
pub mod metrics;
pub mod multitoken;
pub mod probes;
pub mod regimes;
pub mod rng;
pub mod sae;
pub mod tensor;

pub use error::{Error, Result};

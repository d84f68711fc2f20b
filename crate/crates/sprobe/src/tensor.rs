//! Activation tensors, the `SPBA` on-disk format, dataset manifests, and
//! labeled datasets with frozen train/validation/test splits.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! "SPBA"            4 bytes magic
//! version           u32 = 1
//! n_examples        u64
//! n_tokens          u64
//! d_model           u64
//! token_mask        u32 per example (count of valid trailing tokens)
//! payload           f32, row-major (example, token, dim)
//! ```
//!
//! Pad tokens sit at the *front* of the token axis (prompts are
//! left-truncated), so `token_mask[i]` counts valid trailing tokens and the
//! valid range for example `i` is `n_tokens - mask .. n_tokens`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::rng;
use crate::sae::LatentMatrix;

pub const SPBA_MAGIC: [u8; 4] = *b"SPBA";
pub const SPBA_VERSION: u32 = 1;

/// Float activations of shape `(n_examples, n_tokens, d_model)`.
///
/// `n_tokens = 1` covers last-token matrices. Values are stored f32;
/// downstream math accumulates in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTensor {
    data: Vec<f32>,
    n_examples: usize,
    n_tokens: usize,
    d_model: usize,
    token_mask: Vec<u32>,
}

impl ActivationTensor {
    pub fn new(
        data: Vec<f32>,
        n_examples: usize,
        n_tokens: usize,
        d_model: usize,
        token_mask: Vec<u32>,
    ) -> Result<Self> {
        if data.len() != n_examples * n_tokens * d_model {
            return Err(Error::ShapeMismatch(format!(
                "data length {} != {}x{}x{}",
                data.len(),
                n_examples,
                n_tokens,
                d_model
            )));
        }
        if token_mask.len() != n_examples {
            return Err(Error::ShapeMismatch(format!(
                "token_mask length {} != n_examples {}",
                token_mask.len(),
                n_examples
            )));
        }
        if token_mask
            .iter()
            .any(|&m| m == 0 || m as usize > n_tokens)
        {
            return Err(Error::ShapeMismatch(format!(
                "token_mask entries must lie in [1, {n_tokens}]"
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "activation tensor".into(),
            });
        }
        Ok(ActivationTensor {
            data,
            n_examples,
            n_tokens,
            d_model,
            token_mask,
        })
    }

    /// Last-token matrix with all tokens valid.
    pub fn from_matrix(rows: Vec<f32>, n_examples: usize, d_model: usize) -> Result<Self> {
        let mask = vec![1u32; n_examples];
        ActivationTensor::new(rows, n_examples, 1, d_model, mask)
    }

    pub fn n_examples(&self) -> usize {
        self.n_examples
    }

    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn token_mask(&self) -> &[u32] {
        &self.token_mask
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Activation vector for `(example, token)`.
    pub fn token(&self, example: usize, token: usize) -> &[f32] {
        let start = (example * self.n_tokens + token) * self.d_model;
        &self.data[start..start + self.d_model]
    }

    /// Index of the first valid (non-pad) token for an example.
    pub fn first_valid_token(&self, example: usize) -> usize {
        self.n_tokens - self.token_mask[example] as usize
    }

    /// Last valid token's activations as an f64 matrix (n_examples x d_model).
    pub fn last_token_mat(&self) -> Mat {
        let mut out = Mat::zeros(self.n_examples, self.d_model);
        for i in 0..self.n_examples {
            let v = self.token(i, self.n_tokens - 1);
            let row = out.row_mut(i);
            for (dst, &src) in row.iter_mut().zip(v) {
                *dst = f64::from(src);
            }
        }
        out
    }

    /// New tensor holding the given examples, in the given order.
    pub fn select_examples(&self, idx: &[usize]) -> ActivationTensor {
        let stride = self.n_tokens * self.d_model;
        let mut data = Vec::with_capacity(idx.len() * stride);
        let mut mask = Vec::with_capacity(idx.len());
        for &i in idx {
            data.extend_from_slice(&self.data[i * stride..(i + 1) * stride]);
            mask.push(self.token_mask[i]);
        }
        ActivationTensor {
            data,
            n_examples: idx.len(),
            n_tokens: self.n_tokens,
            d_model: self.d_model,
            token_mask: mask,
        }
    }

    /// Concatenate examples of `other` after `self` (shapes must agree).
    pub fn concat_examples(&self, other: &ActivationTensor) -> Result<ActivationTensor> {
        if self.n_tokens != other.n_tokens || self.d_model != other.d_model {
            return Err(Error::ShapeMismatch(format!(
                "cannot concat ({}, {}) with ({}, {})",
                self.n_tokens, self.d_model, other.n_tokens, other.d_model
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        let mut mask = self.token_mask.clone();
        mask.extend_from_slice(&other.token_mask);
        ActivationTensor::new(
            data,
            self.n_examples + other.n_examples,
            self.n_tokens,
            self.d_model,
            mask,
        )
    }
}

/// Write a tensor in the `SPBA` format. Rejects non-finite values.
pub fn write_tensor(tensor: &ActivationTensor, path: &Path) -> Result<()> {
    // Constructor already guarantees finiteness; re-check in case the caller
    // built the value through clone-and-mutate paths.
    if !tensor.data.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("write_tensor({})", path.display()),
        });
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&SPBA_MAGIC)?;
    w.write_all(&SPBA_VERSION.to_le_bytes())?;
    w.write_all(&(tensor.n_examples as u64).to_le_bytes())?;
    w.write_all(&(tensor.n_tokens as u64).to_le_bytes())?;
    w.write_all(&(tensor.d_model as u64).to_le_bytes())?;
    for &m in &tensor.token_mask {
        w.write_all(&m.to_le_bytes())?;
    }
    for &v in &tensor.data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_exact_or_truncated(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            return Err(Error::TruncatedPayload {
                needed: buf.len() - filled,
            });
        }
        filled += n;
    }
    Ok(())
}

/// Read a tensor written by [`write_tensor`], validating magic, version,
/// shape consistency, and exact payload length.
pub fn read_tensor(path: &Path) -> Result<ActivationTensor> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    read_exact_or_truncated(&mut r, &mut magic)?;
    if magic != SPBA_MAGIC {
        return Err(Error::BadMagic {
            expected: SPBA_MAGIC,
            found: magic,
        });
    }
    let mut u32buf = [0u8; 4];
    read_exact_or_truncated(&mut r, &mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != SPBA_VERSION {
        return Err(Error::VersionMismatch {
            expected: SPBA_VERSION,
            found: version,
        });
    }
    let mut u64buf = [0u8; 8];
    read_exact_or_truncated(&mut r, &mut u64buf)?;
    let n_examples = u64::from_le_bytes(u64buf) as usize;
    read_exact_or_truncated(&mut r, &mut u64buf)?;
    let n_tokens = u64::from_le_bytes(u64buf) as usize;
    read_exact_or_truncated(&mut r, &mut u64buf)?;
    let d_model = u64::from_le_bytes(u64buf) as usize;

    let mut token_mask = Vec::with_capacity(n_examples);
    for _ in 0..n_examples {
        read_exact_or_truncated(&mut r, &mut u32buf)?;
        token_mask.push(u32::from_le_bytes(u32buf));
    }

    let n_values = n_examples * n_tokens * d_model;
    let mut data = Vec::with_capacity(n_values);
    for _ in 0..n_values {
        read_exact_or_truncated(&mut r, &mut u32buf)?;
        data.push(f32::from_le_bytes(u32buf));
    }
    // Exactly one tensor per file.
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::ShapeMismatch(
            "trailing bytes after declared payload".into(),
        ));
    }
    ActivationTensor::new(data, n_examples, n_tokens, d_model, token_mask)
}

/// Write binary targets as text, one `0`/`1` per line.
pub fn write_targets(targets: &[u8], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for &t in targets {
        writeln!(w, "{t}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_targets(path: &Path) -> Result<Vec<u8>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match line {
            "0" => out.push(0),
            "1" => out.push(1),
            other => {
                return Err(Error::InvalidTargets(format!(
                    "line {}: expected 0 or 1, found {:?}",
                    lineno + 1,
                    other
                )))
            }
        }
    }
    Ok(out)
}

/// Pointers to a dataset's files plus the seed its split derives from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub activations: PathBuf,
    pub targets: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ood_activations: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ood_targets: Option<PathBuf>,
    pub seed: u64,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut manifest: DatasetManifest = serde_json::from_str(&text)?;
        // Relative paths resolve against the manifest's directory.
        if let Some(dir) = path.parent() {
            manifest.activations = resolve(dir, &manifest.activations);
            manifest.targets = resolve(dir, &manifest.targets);
            manifest.ood_activations = manifest.ood_activations.map(|p| resolve(dir, &p));
            manifest.ood_targets = manifest.ood_targets.map(|p| resolve(dir, &p));
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

fn resolve(dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

/// Probe input features: raw activations or pre-encoded SAE latents.
#[derive(Debug, Clone)]
pub enum Features {
    Activations(ActivationTensor),
    Latents(LatentMatrix),
}

impl Features {
    pub fn n_examples(&self) -> usize {
        match self {
            Features::Activations(t) => t.n_examples(),
            Features::Latents(z) => z.rows(),
        }
    }

    /// Per-example feature matrix: last-token activations, or latent values.
    pub fn as_mat(&self) -> Mat {
        match self {
            Features::Activations(t) => t.last_token_mat(),
            Features::Latents(z) => z.to_mat(),
        }
    }

    pub fn as_activations(&self) -> Option<&ActivationTensor> {
        match self {
            Features::Activations(t) => Some(t),
            Features::Latents(_) => None,
        }
    }
}

/// Disjoint train/validation/test index lists.
///
/// `train` and `val` together form the training pool; the size-adaptive
/// cross-validation machinery re-folds the pool, so regime transforms that
/// shrink the pool leave `val` empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.test.is_empty() {
            return Err(Error::InvalidParam("test split must be non-empty".into()));
        }
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n {
                return Err(Error::ShapeMismatch(format!(
                    "split index {i} out of bounds for {n} examples"
                )));
            }
            if seen[i] {
                return Err(Error::ShapeMismatch(format!(
                    "split index {i} appears in more than one list"
                )));
            }
            seen[i] = true;
        }
        Ok(())
    }

    /// Training pool: train followed by validation indices.
    pub fn train_pool(&self) -> Vec<usize> {
        let mut pool = self.train.clone();
        pool.extend_from_slice(&self.val);
        pool
    }
}

/// Features paired with binary targets and a frozen split.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub features: Features,
    pub targets: Vec<u8>,
    pub split: Split,
}

impl LabeledDataset {
    pub fn new(features: Features, targets: Vec<u8>, split: Split) -> Result<Self> {
        if targets.len() != features.n_examples() {
            return Err(Error::ShapeMismatch(format!(
                "{} targets for {} examples",
                targets.len(),
                features.n_examples()
            )));
        }
        if let Some(bad) = targets.iter().find(|&&t| t > 1) {
            return Err(Error::InvalidTargets(format!(
                "targets must be 0 or 1, found {bad}"
            )));
        }
        split.validate(targets.len())?;
        Ok(LabeledDataset {
            features,
            targets,
            split,
        })
    }

    pub fn n_examples(&self) -> usize {
        self.targets.len()
    }

    pub fn targets_at(&self, idx: &[usize]) -> Vec<u8> {
        idx.iter().map(|&i| self.targets[i]).collect()
    }
}

/// Stratified seeded holdout: per class, reserve `round(frac * count)` for
/// the second list. Returns (rest, held).
pub fn stratified_holdout(
    indices: &[usize],
    targets: &[u8],
    frac: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for &i in indices {
        by_class[targets[i] as usize].push(i);
    }
    let mut rest = Vec::new();
    let mut held = Vec::new();
    for (c, class) in by_class.iter_mut().enumerate() {
        let mut r = rng::rng(rng::derive_seed(seed, &format!("holdout-c{c}")));
        rng::shuffle(class, &mut r);
        let take = ((class.len() as f64) * frac).round() as usize;
        let take = take.min(class.len());
        held.extend_from_slice(&class[..take]);
        rest.extend_from_slice(&class[take..]);
    }
    rest.sort_unstable();
    held.sort_unstable();
    (rest, held)
}

/// Default deterministic split: a stratified test set of
/// `max(100, n / 5)` examples, then 80%/20% train/validation on the rest.
pub fn default_split(targets: &[u8], seed: u64) -> Result<Split> {
    let n = targets.len();
    let test_size = (n / 5).max(100);
    if n.saturating_sub(test_size) < 4 {
        return Err(Error::DatasetTooSmall(format!(
            "{n} examples cannot reserve {test_size} test examples and keep a training pool"
        )));
    }
    let all: Vec<usize> = (0..n).collect();
    let test_frac = test_size as f64 / n as f64;
    let (pool, test) = stratified_holdout(&all, targets, test_frac, rng::derive_seed(seed, "test"));
    let (train, val) = stratified_holdout(&pool, targets, 0.2, rng::derive_seed(seed, "val"));
    Ok(Split { train, val, test })
}

/// Load activations and targets named by a manifest and attach the default
/// deterministic split derived from the manifest seed.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<LabeledDataset> {
    let tensor = read_tensor(&manifest.activations)?;
    let targets = read_targets(&manifest.targets)?;
    if targets.len() != tensor.n_examples() {
        return Err(Error::ShapeMismatch(format!(
            "{} targets for {} activation rows",
            targets.len(),
            tensor.n_examples()
        )));
    }
    let split = default_split(&targets, manifest.seed)?;
    LabeledDataset::new(Features::Activations(tensor), targets, split)
}

//! SAE encoder inference, mean-difference top-k latent selection, token
//! pooling, binarization, and rank-based pruning.
//!
//! Weights file layout (`SPSW`, little-endian):
//!
//! ```text
//! "SPSW"            4 bytes magic
//! version           u32 = 1
//! d_model           u64
//! width             u64
//! activation_kind   u8 (0 ReLU, 1 JumpReLU, 2 TopK, 3 BatchTopK)
//! params            JumpReLU: f32 theta per latent; TopK/BatchTopK: u32 k
//! w_enc             f32 row-major, d_model rows of width columns
//! b_enc             f32 per latent
//! ```
//!
//! The nominal L0 is experiment metadata, not part of the weights file; it
//! rides in experiment manifests.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::tensor::ActivationTensor;

pub const SPSW_MAGIC: [u8; 4] = *b"SPSW";
pub const SPSW_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum ActivationKind {
    ReLU,
    /// Pass pre-activations that exceed a per-latent threshold, zero the rest.
    JumpReLU { theta: Vec<f32> },
    /// Keep the `k_active` largest positive pre-activations per example.
    TopK { k_active: usize },
    /// Keep the `k_active * batch_size` largest positive pre-activations
    /// across the batch.
    BatchTopK { k_active: usize },
}

impl ActivationKind {
    fn tag(&self) -> u8 {
        match self {
            ActivationKind::ReLU => 0,
            ActivationKind::JumpReLU { .. } => 1,
            ActivationKind::TopK { .. } => 2,
            ActivationKind::BatchTopK { .. } => 3,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ActivationKind::ReLU => "relu",
            ActivationKind::JumpReLU { .. } => "jumprelu",
            ActivationKind::TopK { .. } => "topk",
            ActivationKind::BatchTopK { .. } => "batchtopk",
        }
    }
}

/// Encoder parameters plus activation-kind metadata.
#[derive(Debug, Clone)]
pub struct SAEWeights {
    /// Row-major `d_model x width`.
    w_enc: Vec<f32>,
    b_enc: Vec<f32>,
    d_model: usize,
    width: usize,
    kind: ActivationKind,
    /// Identifier stamped onto encoded latents.
    pub id: String,
    /// Nominal average active-latent count; experiment metadata only.
    pub nominal_l0: Option<f64>,
}

impl SAEWeights {
    pub fn new(
        w_enc: Vec<f32>,
        b_enc: Vec<f32>,
        d_model: usize,
        width: usize,
        kind: ActivationKind,
        id: String,
    ) -> Result<Self> {
        if w_enc.len() != d_model * width {
            return Err(Error::ShapeMismatch(format!(
                "w_enc length {} != {d_model}x{width}",
                w_enc.len()
            )));
        }
        if b_enc.len() != width {
            return Err(Error::ShapeMismatch(format!(
                "b_enc length {} != width {width}",
                b_enc.len()
            )));
        }
        match &kind {
            ActivationKind::JumpReLU { theta } => {
                if theta.len() != width {
                    return Err(Error::ShapeMismatch(format!(
                        "theta length {} != width {width}",
                        theta.len()
                    )));
                }
                if theta.iter().any(|&t| t.is_nan() || t < 0.0 || !t.is_finite()) {
                    return Err(Error::InvalidParam(
                        "JumpReLU thresholds must be finite and >= 0".into(),
                    ));
                }
            }
            ActivationKind::TopK { k_active } | ActivationKind::BatchTopK { k_active } => {
                if *k_active == 0 || *k_active > width {
                    return Err(Error::InvalidParam(format!(
                        "k_active {k_active} out of range [1, {width}]"
                    )));
                }
            }
            ActivationKind::ReLU => {}
        }
        Ok(SAEWeights {
            w_enc,
            b_enc,
            d_model,
            width,
            kind,
            id,
            nominal_l0: None,
        })
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn kind(&self) -> &ActivationKind {
        &self.kind
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&SPSW_MAGIC)?;
        w.write_all(&SPSW_VERSION.to_le_bytes())?;
        w.write_all(&(self.d_model as u64).to_le_bytes())?;
        w.write_all(&(self.width as u64).to_le_bytes())?;
        w.write_all(&[self.kind.tag()])?;
        match &self.kind {
            ActivationKind::ReLU => {}
            ActivationKind::JumpReLU { theta } => {
                for &t in theta {
                    w.write_all(&t.to_le_bytes())?;
                }
            }
            ActivationKind::TopK { k_active } | ActivationKind::BatchTopK { k_active } => {
                w.write_all(&(*k_active as u32).to_le_bytes())?;
            }
        }
        for &v in &self.w_enc {
            w.write_all(&v.to_le_bytes())?;
        }
        for &v in &self.b_enc {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if magic != SPSW_MAGIC {
            return Err(Error::BadMagic {
                expected: SPSW_MAGIC,
                found: magic,
            });
        }
        let version = read_u32(&mut r)?;
        if version != SPSW_VERSION {
            return Err(Error::VersionMismatch {
                expected: SPSW_VERSION,
                found: version,
            });
        }
        let d_model = read_u64(&mut r)? as usize;
        let width = read_u64(&mut r)? as usize;
        let mut tag = [0u8; 1];
        read_exact(&mut r, &mut tag)?;
        let kind = match tag[0] {
            0 => ActivationKind::ReLU,
            1 => {
                let mut theta = Vec::with_capacity(width);
                for _ in 0..width {
                    theta.push(read_f32(&mut r)?);
                }
                ActivationKind::JumpReLU { theta }
            }
            2 => ActivationKind::TopK {
                k_active: read_u32(&mut r)? as usize,
            },
            3 => ActivationKind::BatchTopK {
                k_active: read_u32(&mut r)? as usize,
            },
            other => {
                return Err(Error::InvalidParam(format!(
                    "unknown activation kind tag {other}"
                )))
            }
        };
        let mut w_enc = Vec::with_capacity(d_model * width);
        for _ in 0..d_model * width {
            w_enc.push(read_f32(&mut r)?);
        }
        let mut b_enc = Vec::with_capacity(width);
        for _ in 0..width {
            b_enc.push(read_f32(&mut r)?);
        }
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "sae".to_string());
        SAEWeights::new(w_enc, b_enc, d_model, width, kind, id)
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
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

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f32(r: &mut impl Read) -> Result<f32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(f32::from_le_bytes(b))
}

/// Nonnegative latent values, one row per example.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentMatrix {
    values: Vec<f32>,
    rows: usize,
    width: usize,
    pub source: String,
}

impl LatentMatrix {
    pub fn new(values: Vec<f32>, rows: usize, width: usize, source: String) -> Result<Self> {
        if values.len() != rows * width {
            return Err(Error::ShapeMismatch(format!(
                "latent values length {} != {rows}x{width}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NonFinite {
                context: "latent matrix (values must be finite and >= 0)".into(),
            });
        }
        Ok(LatentMatrix {
            values,
            rows,
            width,
            source,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.width..(i + 1) * self.width]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn to_mat(&self) -> Mat {
        let mut out = Mat::zeros(self.rows, self.width);
        for i in 0..self.rows {
            let dst = out.row_mut(i);
            for (d, &s) in dst.iter_mut().zip(self.row(i)) {
                *d = f64::from(s);
            }
        }
        out
    }

    pub fn select_rows(&self, idx: &[usize]) -> LatentMatrix {
        let mut values = Vec::with_capacity(idx.len() * self.width);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        LatentMatrix {
            values,
            rows: idx.len(),
            width: self.width,
            source: self.source.clone(),
        }
    }

    /// Feature matrix restricted to the given latent indices, f64.
    pub fn feature_mat(&self, latents: &[u32]) -> Mat {
        let mut out = Mat::zeros(self.rows, latents.len());
        for i in 0..self.rows {
            let src = self.row(i);
            let dst = out.row_mut(i);
            for (k, &j) in latents.iter().enumerate() {
                dst[k] = f64::from(src[j as usize]);
            }
        }
        out
    }
}

/// Per-token latents mirroring an [`ActivationTensor`]'s token layout.
/// Pad positions hold zero rows.
#[derive(Debug, Clone)]
pub struct LatentTensor {
    values: Vec<f32>,
    n_examples: usize,
    n_tokens: usize,
    width: usize,
    token_mask: Vec<u32>,
    pub source: String,
}

impl LatentTensor {
    pub fn n_examples(&self) -> usize {
        self.n_examples
    }

    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn token_mask(&self) -> &[u32] {
        &self.token_mask
    }

    pub fn token(&self, example: usize, token: usize) -> &[f32] {
        let start = (example * self.n_tokens + token) * self.width;
        &self.values[start..start + self.width]
    }

    pub fn first_valid_token(&self, example: usize) -> usize {
        self.n_tokens - self.token_mask[example] as usize
    }
}

fn positive_top_k_zeroed(row: &mut [f32], keep: &[(usize, f32)]) {
    row.iter_mut().for_each(|v| *v = 0.0);
    for &(idx, v) in keep {
        row[idx] = v;
    }
}

/// Run the SAE encoder over every valid token.
///
/// Pre-activations accumulate in f64 and are stored f32 after the activation
/// is applied. For `TopK`, ties at the k-th value break toward the lower
/// latent index. For `BatchTopK`, the batch is the set of valid
/// `(example, token)` rows in this call and the budget is
/// `k_active * batch_size`; ties break toward earlier rows, then lower
/// latent indices.
pub fn encode(x: &ActivationTensor, sae: &SAEWeights) -> Result<LatentTensor> {
    if x.d_model() != sae.d_model() {
        return Err(Error::ShapeMismatch(format!(
            "activation d_model {} != sae d_model {}",
            x.d_model(),
            sae.d_model()
        )));
    }
    let n = x.n_examples();
    let t = x.n_tokens();
    let w = sae.width();
    let mut values = vec![0.0f32; n * t * w];

    // (example, token) rows that participate in encoding.
    let mut valid_rows: Vec<(usize, usize)> = Vec::new();
    for i in 0..n {
        for tok in x.first_valid_token(i)..t {
            valid_rows.push((i, tok));
        }
    }

    let mut pre_rows: Vec<Vec<f64>> = Vec::with_capacity(valid_rows.len());
    for &(i, tok) in &valid_rows {
        let xv = x.token(i, tok);
        let mut pre = vec![0.0f64; w];
        for (d, &xd) in xv.iter().enumerate() {
            if xd == 0.0 {
                continue;
            }
            let xd = f64::from(xd);
            let wrow = &sae.w_enc[d * w..(d + 1) * w];
            for (p, &we) in pre.iter_mut().zip(wrow) {
                *p += xd * f64::from(we);
            }
        }
        for (p, &b) in pre.iter_mut().zip(&sae.b_enc) {
            *p += f64::from(b);
        }
        pre_rows.push(pre);
    }

    match sae.kind() {
        ActivationKind::ReLU => {
            for (r, &(i, tok)) in valid_rows.iter().enumerate() {
                let start = (i * t + tok) * w;
                for (j, &p) in pre_rows[r].iter().enumerate() {
                    values[start + j] = p.max(0.0) as f32;
                }
            }
        }
        ActivationKind::JumpReLU { theta } => {
            for (r, &(i, tok)) in valid_rows.iter().enumerate() {
                let start = (i * t + tok) * w;
                for (j, &p) in pre_rows[r].iter().enumerate() {
                    if p > f64::from(theta[j]) {
                        values[start + j] = p as f32;
                    }
                }
            }
        }
        ActivationKind::TopK { k_active } => {
            for (r, &(i, tok)) in valid_rows.iter().enumerate() {
                let keep = top_k_positive(&pre_rows[r], *k_active);
                let start = (i * t + tok) * w;
                let row = &mut values[start..start + w];
                positive_top_k_zeroed(row, &keep);
            }
        }
        ActivationKind::BatchTopK { k_active } => {
            // Budget over all valid rows at once.
            let budget = k_active * valid_rows.len();
            let mut entries: Vec<(usize, usize, f64)> = Vec::new();
            for (r, pre) in pre_rows.iter().enumerate() {
                for (j, &p) in pre.iter().enumerate() {
                    if p > 0.0 {
                        entries.push((r, j, p));
                    }
                }
            }
            entries.sort_by(|a, b| {
                b.2.partial_cmp(&a.2)
                    .unwrap()
                    .then(a.0.cmp(&b.0))
                    .then(a.1.cmp(&b.1))
            });
            entries.truncate(budget);
            for (r, j, p) in entries {
                let (i, tok) = valid_rows[r];
                values[(i * t + tok) * w + j] = p as f32;
            }
        }
    }

    Ok(LatentTensor {
        values,
        n_examples: n,
        n_tokens: t,
        width: w,
        token_mask: x.token_mask().to_vec(),
        source: sae.id.clone(),
    })
}

/// Encode a last-token matrix directly to a [`LatentMatrix`].
pub fn encode_matrix(x: &ActivationTensor, sae: &SAEWeights) -> Result<LatentMatrix> {
    let z = encode(x, sae)?;
    pool_latents(&z, PoolMode::Last)
}

/// Largest `k` strictly positive entries, ties broken toward lower index.
/// Returns fewer than `k` pairs when fewer entries are positive.
fn top_k_positive(pre: &[f64], k: usize) -> Vec<(usize, f32)> {
    let mut positive: Vec<(usize, f64)> = pre
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(j, &p)| (j, p))
        .collect();
    positive.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    positive.truncate(k);
    positive.into_iter().map(|(j, p)| (j, p as f32)).collect()
}

/// Indices selected by mean absolute class difference, scores descending.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSelection {
    /// Distinct latent indices; descending score order when produced by
    /// [`select_top_k`], external rank order after [`prune_by_rank`].
    pub indices: Vec<u32>,
    /// Mean absolute difference statistic per selected index.
    pub scores: Vec<f64>,
}

impl LatentSelection {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Per-latent statistic: `|mean(z | target=1) - mean(z | target=0)|`,
/// accumulated in f64.
pub fn mean_difference_stats(z: &LatentMatrix, targets: &[u8]) -> Result<Vec<f64>> {
    if targets.len() != z.rows() {
        return Err(Error::ShapeMismatch(format!(
            "{} targets for {} latent rows",
            targets.len(),
            z.rows()
        )));
    }
    let n_pos = targets.iter().filter(|&&t| t == 1).count();
    let n_neg = targets.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let w = z.width();
    let mut sum_pos = vec![0.0f64; w];
    let mut sum_neg = vec![0.0f64; w];
    for (i, &t) in targets.iter().enumerate() {
        let row = z.row(i);
        let acc = if t == 1 { &mut sum_pos } else { &mut sum_neg };
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += f64::from(v);
        }
    }
    let np = n_pos as f64;
    let nn = n_neg as f64;
    Ok(sum_pos
        .iter()
        .zip(&sum_neg)
        .map(|(&p, &q)| (p / np - q / nn).abs())
        .collect())
}

/// Top-`k` latents by mean absolute class difference. Ties break toward the
/// lower latent index so the selection is deterministic.
pub fn select_top_k(z_train: &LatentMatrix, targets: &[u8], k: usize) -> Result<LatentSelection> {
    let w = z_train.width();
    if k == 0 || k > w {
        return Err(Error::InvalidParam(format!(
            "k {k} out of range [1, {w}]"
        )));
    }
    let stats = mean_difference_stats(z_train, targets)?;

    // Bounded binary heap of the k best (score, index) pairs; the final sort
    // fixes the descending order. An independent full-sort oracle checks this
    // in tests.
    use std::cmp::Ordering;
    use std::collections::BinaryHeap;

    #[derive(PartialEq)]
    struct Entry(f64, u32);
    impl Eq for Entry {}
    impl PartialOrd for Entry {
        fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for Entry {
        fn cmp(&self, other: &Self) -> Ordering {
            // Max-heap pops the worst entry first: lower score is "greater",
            // and at equal scores the higher index is "greater".
            other
                .0
                .partial_cmp(&self.0)
                .unwrap()
                .then(self.1.cmp(&other.1).reverse())
        }
    }

    let mut heap: BinaryHeap<Entry> = BinaryHeap::with_capacity(k + 1);
    for (j, &s) in stats.iter().enumerate() {
        heap.push(Entry(s, j as u32));
        if heap.len() > k {
            heap.pop();
        }
    }
    let mut picked: Vec<(f64, u32)> = heap.into_iter().map(|Entry(s, j)| (s, j)).collect();
    picked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));

    Ok(LatentSelection {
        indices: picked.iter().map(|&(_, j)| j).collect(),
        scores: picked.iter().map(|&(s, _)| s).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Last,
    Mean,
    Max,
}

impl PoolMode {
    pub fn name(self) -> &'static str {
        match self {
            PoolMode::Last => "last",
            PoolMode::Mean => "mean",
            PoolMode::Max => "max",
        }
    }
}

impl std::str::FromStr for PoolMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last" => Ok(PoolMode::Last),
            "mean" => Ok(PoolMode::Mean),
            "max" => Ok(PoolMode::Max),
            other => Err(Error::InvalidParam(format!("unknown pool mode {other:?}"))),
        }
    }
}

/// Pool per-token latents over valid tokens only.
pub fn pool_latents(z: &LatentTensor, mode: PoolMode) -> Result<LatentMatrix> {
    let n = z.n_examples();
    let w = z.width();
    let mut values = vec![0.0f32; n * w];
    for i in 0..n {
        let first = z.first_valid_token(i);
        let count = z.n_tokens() - first;
        if count == 0 {
            return Err(Error::InvalidParam(format!(
                "example {i} has zero valid tokens"
            )));
        }
        let out = &mut values[i * w..(i + 1) * w];
        match mode {
            PoolMode::Last => {
                out.copy_from_slice(z.token(i, z.n_tokens() - 1));
            }
            PoolMode::Mean => {
                let mut acc = vec![0.0f64; w];
                for tok in first..z.n_tokens() {
                    for (a, &v) in acc.iter_mut().zip(z.token(i, tok)) {
                        *a += f64::from(v);
                    }
                }
                let c = count as f64;
                for (o, a) in out.iter_mut().zip(acc) {
                    *o = (a / c) as f32;
                }
            }
            PoolMode::Max => {
                out.copy_from_slice(z.token(i, first));
                for tok in first + 1..z.n_tokens() {
                    for (o, &v) in out.iter_mut().zip(z.token(i, tok)) {
                        if v > *o {
                            *o = v;
                        }
                    }
                }
            }
        }
    }
    LatentMatrix::new(values, n, w, z.source.clone())
}

/// Threshold latents to {0, 1}. The comparison is strict: a value exactly at
/// the threshold maps to 0.
pub fn binarize(z: &LatentMatrix, threshold: f32) -> LatentMatrix {
    let values = z
        .values()
        .iter()
        .map(|&v| if v > threshold { 1.0 } else { 0.0 })
        .collect();
    LatentMatrix {
        values,
        rows: z.rows(),
        width: z.width(),
        source: z.source.clone(),
    }
}

/// Keep the first `keep` latents of `selection` under an external rank
/// order. `rank_order` must list exactly the selection's latent indices; the
/// rank source (e.g. a relevance ranking) is an input, not computed here.
pub fn prune_by_rank(
    selection: &LatentSelection,
    rank_order: &[u32],
    keep: usize,
) -> Result<LatentSelection> {
    if keep == 0 || keep > selection.len() {
        return Err(Error::InvalidParam(format!(
            "keep {keep} out of range [1, {}]",
            selection.len()
        )));
    }
    if rank_order.len() != selection.len() {
        return Err(Error::InvalidParam(format!(
            "rank order has {} entries for {} selected latents",
            rank_order.len(),
            selection.len()
        )));
    }
    let mut expected: Vec<u32> = selection.indices.clone();
    expected.sort_unstable();
    let mut got: Vec<u32> = rank_order.to_vec();
    got.sort_unstable();
    if expected != got {
        return Err(Error::InvalidParam(
            "rank order is not a permutation of the selected latents".into(),
        ));
    }
    let score_of = |idx: u32| {
        let pos = selection.indices.iter().position(|&i| i == idx).unwrap();
        selection.scores[pos]
    };
    let kept = &rank_order[..keep];
    Ok(LatentSelection {
        indices: kept.to_vec(),
        scores: kept.iter().map(|&i| score_of(i)).collect(),
    })
}

//! State encoders and the cosine metric used for retrieval.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use faer::{Mat, Side};

use crate::error::{Error, Result};
use crate::field::{dot, norm, VorticityField};

/// Norm below which a vector is treated as degenerate for cosine distance.
pub const MIN_NORM: f64 = 1e-12;

/// `(trajectory_id, frame_id)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FrameKey {
    pub trajectory_id: u32,
    pub frame_id: u32,
}

impl FrameKey {
    pub const fn new(trajectory_id: u32, frame_id: u32) -> Self {
        Self {
            trajectory_id,
            frame_id,
        }
    }
}

/// An encoded state `z = φ(ω)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector(pub Vec<f64>);

impl LatentVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

/// `1 - <a,b> / (|a| |b|)`, in `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if !(na > MIN_NORM) {
        return Err(Error::ZeroNorm { argument: "a" });
    }
    if !(nb > MIN_NORM) {
        return Err(Error::ZeroNorm { argument: "b" });
    }
    Ok((1.0 - dot(a, b) / (na * nb)).clamp(0.0, 2.0))
}

/// Principal axes of a set of flattened fields.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `n_components` rows of length `dim`, orthonormal.
    pub components: Vec<Vec<f64>>,
    /// Eigenvalues of the sample covariance, nonincreasing.
    pub explained_variance: Vec<f64>,
    /// Trace of the sample covariance.
    pub total_variance: f64,
    /// Number of components carrying nonzero variance. Components past this
    /// index are an arbitrary orthonormal completion.
    pub rank: usize,
    pub n_samples: usize,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn is_rank_deficient(&self) -> bool {
        self.rank < self.n_components()
    }

    pub fn explained_variance_ratio(&self) -> f64 {
        if self.total_variance <= 0.0 {
            return 1.0;
        }
        self.explained_variance.iter().sum::<f64>() / self.total_variance
    }

    pub fn encode(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: values.len(),
            });
        }
        let centred: Vec<f64> = values.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        Ok(self.components.iter().map(|c| dot(c, &centred)).collect())
    }

    pub fn reconstruct(&self, coefficients: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, &a) in self.components.iter().zip(coefficients) {
            for (o, &v) in out.iter_mut().zip(c) {
                *o += a * v;
            }
        }
        out
    }

    /// Keeps the leading `n` components.
    pub fn truncated(&self, n: usize) -> PcaModel {
        let n = n.min(self.n_components());
        PcaModel {
            mean: self.mean.clone(),
            components: self.components[..n].to_vec(),
            explained_variance: self.explained_variance[..n].to_vec(),
            total_variance: self.total_variance,
            rank: self.rank.min(n),
            n_samples: self.n_samples,
        }
    }
}

/// Fits PCA by exact symmetric eigendecomposition of the sample covariance.
pub fn fit_pca(samples: &[VorticityField], n_components: usize) -> Result<PcaModel> {
    let rows: Vec<&[f64]> = samples.iter().map(|s| s.values()).collect();
    if let Some(first) = samples.first() {
        for s in samples {
            first.check_same_grid(s)?;
        }
    }
    fit_pca_rows(&rows, n_components)
}

/// [`fit_pca`] on raw row vectors of equal length.
pub fn fit_pca_rows(rows: &[&[f64]], n_components: usize) -> Result<PcaModel> {
    let n = rows.len();
    if n_components == 0 || n <= n_components {
        return Err(Error::InsufficientSamples {
            samples: n,
            components: n_components,
        });
    }
    let dim = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: bad.len(),
        });
    }
    if n_components > dim {
        return Err(Error::InvalidArgument(format!(
            "{n_components} components requested for dimension {dim}"
        )));
    }

    let mut mean = vec![0.0; dim];
    for r in rows {
        crate::field::check_finite(r, "pca sample")?;
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let centred = Mat::<f64>::from_fn(n, dim, |i, j| rows[i][j] - mean[j]);
    let scale = 1.0 / (n as f64 - 1.0);
    let cov = (centred.transpose() * &centred) * faer::Scale(scale);
    let total_variance: f64 = (0..dim).map(|j| cov[(j, j)]).sum();

    let eig = cov
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::InvalidArgument(format!("eigendecomposition failed: {e:?}")))?;
    let values = eig.S().column_vector();
    let vectors = eig.U();

    // Eigenvalues come back ascending.
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));

    let tol = values[order[0]].abs().max(f64::MIN_POSITIVE) * dim as f64 * f64::EPSILON;
    let mut components = Vec::with_capacity(n_components);
    let mut explained_variance = Vec::with_capacity(n_components);
    let mut rank = 0;
    for &col in order.iter().take(n_components) {
        let lambda = values[col];
        let mut v: Vec<f64> = (0..dim).map(|i| vectors[(i, col)]).collect();
        // Sign convention: largest-magnitude entry positive.
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        if lambda > tol {
            rank += 1;
            explained_variance.push(lambda);
        } else {
            explained_variance.push(0.0);
        }
        components.push(v);
    }

    Ok(PcaModel {
        mean,
        components,
        explained_variance,
        total_variance,
        rank,
        n_samples: n,
    })
}

/// Latent vectors keyed by frame, as read from an LTN1 file.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTable {
    dim: usize,
    entries: HashMap<FrameKey, Vec<f64>>,
}

impl LatentTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Inserts a vector; returns `false` and leaves the table unchanged if
    /// the key is already present.
    pub fn insert(&mut self, key: FrameKey, vector: Vec<f64>) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: vector.len(),
            });
        }
        if self.entries.contains_key(&key) {
            return Ok(false);
        }
        self.entries.insert(key, vector);
        Ok(true)
    }

    pub fn get(&self, key: FrameKey) -> Option<&[f64]> {
        self.entries.get(&key).map(Vec::as_slice)
    }

    /// Entries sorted by key.
    pub fn sorted(&self) -> Vec<(FrameKey, &[f64])> {
        let mut out: Vec<_> = self.entries.iter().map(|(k, v)| (*k, v.as_slice())).collect();
        out.sort_by_key(|(k, _)| *k);
        out
    }
}

/// Reads an LTN1 latent file.
pub fn load_latents(path: &Path) -> Result<LatentTable> {
    crate::io::read_latents(path)
}

/// Which state representation drives retrieval.
#[derive(Debug, Clone)]
pub enum EncoderSpec {
    /// Row-major flattening of the raw field, uncentred.
    Raw,
    Pca(Arc<PcaModel>),
    /// Precomputed latents looked up by frame key.
    External {
        source: PathBuf,
        table: Arc<LatentTable>,
    },
}

impl EncoderSpec {
    pub fn external(path: &Path) -> Result<Self> {
        Ok(EncoderSpec::External {
            source: path.to_path_buf(),
            table: Arc::new(load_latents(path)?),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            EncoderSpec::Raw => "raw",
            EncoderSpec::Pca(_) => "pca",
            EncoderSpec::External { .. } => "external",
        }
    }

    /// Output dimension for fields of `field_len` entries.
    pub fn dim(&self, field_len: usize) -> usize {
        match self {
            EncoderSpec::Raw => field_len,
            EncoderSpec::Pca(m) => m.n_components(),
            EncoderSpec::External { table, .. } => table.dim(),
        }
    }

    /// Whether this encoder can encode a field that has no frame key.
    pub fn computes_from_field(&self) -> bool {
        !matches!(self, EncoderSpec::External { .. })
    }
}

/// `φ(ω)`. External encoders ignore the field and look up `frame_key`.
pub fn encode(spec: &EncoderSpec, omega: &VorticityField, frame_key: Option<FrameKey>) -> Result<LatentVector> {
    match spec {
        EncoderSpec::Raw => Ok(LatentVector(omega.values().to_vec())),
        EncoderSpec::Pca(model) => model.encode(omega.values()).map(LatentVector),
        EncoderSpec::External { table, .. } => {
            let key = frame_key.ok_or_else(|| {
                Error::InvalidArgument(
                    "external latents are lookup-only: the state has no frame key (predicted states cannot be encoded)"
                        .into(),
                )
            })?;
            table
                .get(key)
                .map(|v| LatentVector(v.to_vec()))
                .ok_or(Error::MissingLatent {
                    trajectory_id: key.trajectory_id,
                    frame_id: key.frame_id,
                })
        }
    }
}

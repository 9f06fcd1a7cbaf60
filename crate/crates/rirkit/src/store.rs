//! Embedding datastore with cosine retrieval and late-reverberation
//! splicing, plus the paired contrastive loss.
//!
//! The store holds (id, embedding, RIR) triples and scans them exactly —
//! no approximate index. At assembly time the nearest entry's late region
//! replaces samples [boundary, end) of the estimate; the early estimate
//! passes through untouched.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::acoustics::Rir;
use crate::error::{Error, Result};

/// A fixed-dimension feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("embedding"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "non-finite embedding value at index {i}"
            )));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            0.0
        } else {
            self.dot(other) / denom
        }
    }
}

#[derive(Debug, Clone)]
struct StoreEntry {
    id: String,
    embedding: Embedding,
    rir: Rir,
}

/// In-memory datastore of (id, embedding, RIR) triples.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingStore {
    entries: Vec<StoreEntry>,
}

/// One retrieval result, borrowed from the store.
#[derive(Debug, Clone, Copy)]
pub struct RetrievalHit<'a> {
    pub id: &'a str,
    pub similarity: f64,
    pub rir: &'a Rir,
}

impl EmbeddingStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.entries.first().map(|e| e.embedding.len())
    }

    pub fn sample_rate(&self) -> Option<u32> {
        self.entries.first().map(|e| e.rir.sample_rate())
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    pub fn get(&self, id: &str) -> Option<(&Embedding, &Rir)> {
        self.entries
            .iter()
            .find(|e| e.id == id)
            .map(|e| (&e.embedding, &e.rir))
    }

    /// Appends an entry. Ids must be unique and the embedding dimension and
    /// RIR sample rate must match the entries already present.
    pub fn add_entry(&mut self, id: impl Into<String>, embedding: Embedding, rir: Rir) -> Result<()> {
        let id = id.into();
        if self.entries.iter().any(|e| e.id == id) {
            return Err(Error::DuplicateId(id));
        }
        if let Some(dim) = self.dim() {
            if embedding.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    actual: embedding.len(),
                });
            }
        }
        if let Some(rate) = self.sample_rate() {
            if rir.sample_rate() != rate {
                return Err(Error::SampleRateMismatch {
                    left: rate,
                    right: rir.sample_rate(),
                });
            }
        }
        self.entries.push(StoreEntry { id, embedding, rir });
        Ok(())
    }

    /// Top-k entries by cosine similarity, descending; ties break by id so
    /// the ranking is deterministic.
    pub fn retrieve(&self, query: &Embedding, k: usize) -> Result<Vec<RetrievalHit<'_>>> {
        if self.entries.is_empty() {
            return Err(Error::EmptyStore);
        }
        if let Some(dim) = self.dim() {
            if query.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    actual: query.len(),
                });
            }
        }
        if query.norm() == 0.0 {
            return Err(Error::ZeroNormQuery);
        }
        let mut hits: Vec<RetrievalHit<'_>> = self
            .entries
            .iter()
            .map(|e| RetrievalHit {
                id: &e.id,
                similarity: query.cosine(&e.embedding),
                rir: &e.rir,
            })
            .collect();
        hits.sort_by(|a, b| {
            b.similarity
                .total_cmp(&a.similarity)
                .then_with(|| a.id.cmp(b.id))
        });
        hits.truncate(k);
        Ok(hits)
    }
}

/// Paired contrastive loss over an image batch and an RIR batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveLoss {
    pub loss: f64,
    /// tau * (rir_i . image_j), row-major N x N.
    pub c_r2i: Vec<f64>,
    /// tau * (image_i . rir_j), row-major N x N.
    pub c_i2r: Vec<f64>,
    pub n: usize,
}

fn log_softmax_diag_mean(c: &[f64], n: usize) -> f64 {
    let mut total = 0.0;
    for i in 0..n {
        let row = &c[i * n..(i + 1) * n];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        total += row[i] - lse;
    }
    total / n as f64
}

/// Symmetric cross-entropy between the two similarity matrices: each row's
/// softmax should put its mass on the matched diagonal pair. Returns the
/// mean of the RIR-to-image and image-to-RIR directions.
pub fn contrastive_loss(
    image_batch: &[Embedding],
    rir_batch: &[Embedding],
    temperature: f64,
) -> Result<ContrastiveLoss> {
    if image_batch.len() != rir_batch.len() {
        return Err(Error::BatchSizeMismatch {
            left: image_batch.len(),
            right: rir_batch.len(),
        });
    }
    if image_batch.is_empty() {
        return Err(Error::EmptyInput("contrastive batch"));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::NonPositiveTemperature(temperature));
    }
    let n = image_batch.len();
    let dim = image_batch[0].len();
    for e in image_batch.iter().chain(rir_batch) {
        if e.len() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                actual: e.len(),
            });
        }
    }
    let mut c_r2i = vec![0.0; n * n];
    let mut c_i2r = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            c_r2i[i * n + j] = temperature * rir_batch[i].dot(&image_batch[j]);
            c_i2r[i * n + j] = temperature * image_batch[i].dot(&rir_batch[j]);
        }
    }
    let l_r2i = -log_softmax_diag_mean(&c_r2i, n);
    let l_i2r = -log_softmax_diag_mean(&c_i2r, n);
    Ok(ContrastiveLoss {
        loss: 0.5 * (l_r2i + l_i2r),
        c_r2i,
        c_i2r,
        n,
    })
}

/// Which samples of [boundary, end) replace the estimate's.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpliceConfig {
    pub boundary: usize,
    pub end: usize,
}

impl Default for SpliceConfig {
    fn default() -> Self {
        Self {
            boundary: 2000,
            end: 4000,
        }
    }
}

impl SpliceConfig {
    pub fn new(boundary: usize, end: usize) -> Result<Self> {
        if boundary >= end {
            return Err(Error::InvalidConfig(format!(
                "splice boundary {boundary} must be below end {end}"
            )));
        }
        Ok(Self { boundary, end })
    }
}

/// How the retrieved late region combines with the estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpliceMode {
    /// Samples [boundary, end) are replaced by the retrieved RIR.
    Replace,
    /// The retrieved samples are added onto the estimate instead.
    Additive,
}

fn check_splice_inputs(est: &Rir, retrieved: &Rir, cfg: &SpliceConfig) -> Result<()> {
    if est.len() < cfg.end {
        return Err(Error::RirTooShort {
            len: est.len(),
            required: cfg.end,
        });
    }
    if retrieved.len() < cfg.end {
        return Err(Error::RirTooShort {
            len: retrieved.len(),
            required: cfg.end,
        });
    }
    if est.sample_rate() != retrieved.sample_rate() {
        return Err(Error::SampleRateMismatch {
            left: est.sample_rate(),
            right: retrieved.sample_rate(),
        });
    }
    Ok(())
}

/// Replaces samples [boundary, end) of the estimate with the retrieved
/// RIR's. Everything outside that window is bitwise the estimate; the
/// output's early/late marker is set to the splice boundary.
pub fn splice_late(est: &Rir, retrieved: &Rir, cfg: &SpliceConfig) -> Result<Rir> {
    combine_late(est, retrieved, cfg, SpliceMode::Replace)
}

pub fn combine_late(est: &Rir, retrieved: &Rir, cfg: &SpliceConfig, mode: SpliceMode) -> Result<Rir> {
    check_splice_inputs(est, retrieved, cfg)?;
    let mut samples = est.samples().to_vec();
    match mode {
        SpliceMode::Replace => samples[cfg.boundary..cfg.end]
            .copy_from_slice(&retrieved.samples()[cfg.boundary..cfg.end]),
        SpliceMode::Additive => {
            for (slot, &add) in samples[cfg.boundary..cfg.end]
                .iter_mut()
                .zip(&retrieved.samples()[cfg.boundary..cfg.end])
            {
                *slot += add;
            }
        }
    }
    Rir::with_boundary(samples, est.sample_rate(), cfg.boundary)
}

/// Retrieves the best-matching entry for `query` and splices its late
/// region into the estimate. Returns the assembled RIR and the retrieved
/// id for auditability.
pub fn assemble_estimate(
    early_est: &Rir,
    store: &EmbeddingStore,
    query: &Embedding,
    cfg: &SpliceConfig,
) -> Result<(Rir, String)> {
    assemble_estimate_with_mode(early_est, store, query, cfg, SpliceMode::Replace)
}

pub fn assemble_estimate_with_mode(
    early_est: &Rir,
    store: &EmbeddingStore,
    query: &Embedding,
    cfg: &SpliceConfig,
    mode: SpliceMode,
) -> Result<(Rir, String)> {
    let hits = store.retrieve(query, 1)?;
    let top = &hits[0];
    let assembled = combine_late(early_est, top.rir, cfg, mode)?;
    Ok((assembled, top.id.to_string()))
}

// -- on-disk format -------------------------------------------------------
//
// A store directory holds manifest.json plus two raw little-endian f32
// blobs: embeddings.f32 (dim values per entry) and rirs.f32 (variable
// lengths). The manifest records per-entry offsets in elements.

const EMBEDDINGS_FILE: &str = "embeddings.f32";
const RIRS_FILE: &str = "rirs.f32";
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    embedding_offset: usize,
    rir_offset: usize,
    rir_len: usize,
    boundary: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    dim: usize,
    sample_rate: u32,
    entries: Vec<ManifestEntry>,
}

fn write_f32_blob(path: &Path, values: impl Iterator<Item = f32>) -> Result<()> {
    let mut bytes = Vec::new();
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn read_f32_blob(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format(format!(
            "{}: length {} is not a multiple of 4",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Serializes the store into a directory. Values are stored as f32.
pub fn save_store(store: &EmbeddingStore, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let dim = store.dim().unwrap_or(0);
    let sample_rate = store.sample_rate().unwrap_or(0);
    let mut manifest = Manifest {
        version: 1,
        dim,
        sample_rate,
        entries: Vec::with_capacity(store.len()),
    };
    let mut embedding_offset = 0usize;
    let mut rir_offset = 0usize;
    for entry in &store.entries {
        manifest.entries.push(ManifestEntry {
            id: entry.id.clone(),
            embedding_offset,
            rir_offset,
            rir_len: entry.rir.len(),
            boundary: entry.rir.early_late_boundary(),
        });
        embedding_offset += entry.embedding.len();
        rir_offset += entry.rir.len();
    }
    write_f32_blob(
        &dir.join(EMBEDDINGS_FILE),
        store
            .entries
            .iter()
            .flat_map(|e| e.embedding.values().iter().map(|&v| v as f32)),
    )?;
    write_f32_blob(
        &dir.join(RIRS_FILE),
        store
            .entries
            .iter()
            .flat_map(|e| e.rir.samples().iter().map(|&v| v as f32)),
    )?;
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

pub fn load_store(dir: impl AsRef<Path>) -> Result<EmbeddingStore> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    if manifest.version != 1 {
        return Err(Error::Format(format!(
            "{}: unsupported store version {}",
            manifest_path.display(),
            manifest.version
        )));
    }
    let embeddings = read_f32_blob(&dir.join(EMBEDDINGS_FILE))?;
    let rirs = read_f32_blob(&dir.join(RIRS_FILE))?;
    let mut store = EmbeddingStore::new();
    for entry in &manifest.entries {
        let e_end = entry.embedding_offset + manifest.dim;
        let r_end = entry.rir_offset + entry.rir_len;
        if e_end > embeddings.len() || r_end > rirs.len() {
            return Err(Error::Format(format!(
                "store entry {} points outside the blobs",
                entry.id
            )));
        }
        let embedding = Embedding::new(
            embeddings[entry.embedding_offset..e_end]
                .iter()
                .map(|&v| v as f64)
                .collect(),
        )?;
        let rir = Rir::with_boundary(
            rirs[entry.rir_offset..r_end].iter().map(|&v| v as f64).collect(),
            manifest.sample_rate,
            entry.boundary.min(entry.rir_len),
        )?;
        store.add_entry(entry.id.clone(), embedding, rir)?;
    }
    Ok(store)
}

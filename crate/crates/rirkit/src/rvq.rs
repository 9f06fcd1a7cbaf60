//! Residual vector quantizer with EMA-trained codebooks.
//!
//! A cascade of vector-quantization layers: each layer picks the codebook
//! entry nearest to the running residual and the next layer quantizes what
//! is left. Codebooks train by exponential-moving-average cluster updates
//! rather than gradients, so the whole module is deterministic given the
//! seed and batch order.
//!
//! Vectors are `f32` end to end, matching the checkpoint and blob file
//! formats, so save/load round-trips are bit-exact.

use std::fs;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Laplace smoothing applied to EMA cluster counts.
const EMA_EPSILON: f32 = 1e-5;
/// Entries whose EMA count decays below this are reseeded.
const DEAD_ENTRY_THRESHOLD: f32 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RvqConfig {
    pub num_layers: usize,
    pub codebook_size: usize,
    pub dim: usize,
    pub ema_decay: f32,
    pub commitment_beta: f32,
    pub seed: u64,
}

impl RvqConfig {
    /// Defaults: 64 layers, 8192 entries, decay 0.99, beta 0.25.
    pub fn new(dim: usize) -> Self {
        Self {
            num_layers: 64,
            codebook_size: 8192,
            dim,
            ema_decay: 0.99,
            commitment_beta: 0.25,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::InvalidConfig("num_layers must be >= 1".into()));
        }
        if self.codebook_size == 0 {
            return Err(Error::InvalidConfig("codebook_size must be >= 1".into()));
        }
        if self.dim == 0 {
            return Err(Error::InvalidConfig("dim must be >= 1".into()));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "ema_decay {} outside (0, 1)",
                self.ema_decay
            )));
        }
        if !(self.commitment_beta >= 0.0 && self.commitment_beta.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "commitment_beta {} must be finite and >= 0",
                self.commitment_beta
            )));
        }
        Ok(())
    }
}

/// Quantized code grid, row-major frames x layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeSequence {
    codes: Vec<u32>,
    frames: usize,
    num_layers: usize,
}

impl CodeSequence {
    pub fn new(codes: Vec<u32>, frames: usize, num_layers: usize) -> Result<Self> {
        if codes.len() != frames * num_layers {
            return Err(Error::LengthMismatch {
                left: codes.len(),
                right: frames * num_layers,
            });
        }
        Ok(Self {
            codes,
            frames,
            num_layers,
        })
    }

    pub fn codes(&self) -> &[u32] {
        &self.codes
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn frame(&self, i: usize) -> &[u32] {
        &self.codes[i * self.num_layers..(i + 1) * self.num_layers]
    }
}

/// Per-vector encode result.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodeOutput {
    /// One code per layer.
    pub codes: Vec<u32>,
    /// Sum of the selected entries, accumulated layer by layer.
    pub recon: Vec<f32>,
    /// L2 norm of the residual after each layer.
    pub residual_norms: Vec<f32>,
}

/// Losses reported by one EMA training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStats {
    /// Mean squared quantization error over the batch (per element).
    pub vq_loss: f32,
    /// Commitment term: beta * vq_loss (reported, not backpropagated).
    pub commitment_loss: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RvqCodec {
    config: RvqConfig,
    /// num_layers x codebook_size x dim, flat.
    codebooks: Vec<f32>,
    /// num_layers x codebook_size.
    ema_counts: Vec<f32>,
    /// num_layers x codebook_size x dim, flat.
    ema_sums: Vec<f32>,
}

fn squared_distance(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

fn l2_norm(v: &[f32]) -> f32 {
    v.iter().map(|x| x * x).sum::<f32>().sqrt()
}

impl RvqCodec {
    /// Initializes every layer's codebook by sampling `init_batch` with
    /// replacement, seeded from the config; identical seeds and batches give
    /// identical codebooks.
    pub fn new(config: RvqConfig, init_batch: &[Vec<f32>]) -> Result<Self> {
        config.validate()?;
        if init_batch.is_empty() {
            return Err(Error::EmptyInput("RVQ init batch"));
        }
        for v in init_batch {
            if v.len() != config.dim {
                return Err(Error::DimMismatch {
                    expected: config.dim,
                    actual: v.len(),
                });
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let entries = config.num_layers * config.codebook_size;
        let mut codebooks = Vec::with_capacity(entries * config.dim);
        for _ in 0..entries {
            let pick = &init_batch[rng.random_range(0..init_batch.len())];
            codebooks.extend_from_slice(pick);
        }
        let ema_counts = vec![1.0f32; entries];
        let ema_sums = codebooks.clone();
        Ok(Self {
            config,
            codebooks,
            ema_counts,
            ema_sums,
        })
    }

    pub fn config(&self) -> &RvqConfig {
        &self.config
    }

    fn entry(&self, layer: usize, code: usize) -> &[f32] {
        let dim = self.config.dim;
        let base = (layer * self.config.codebook_size + code) * dim;
        &self.codebooks[base..base + dim]
    }

    /// Nearest entry by squared L2, ties broken by lowest index.
    fn nearest(&self, layer: usize, v: &[f32]) -> usize {
        let mut best = 0usize;
        let mut best_dist = f32::INFINITY;
        for code in 0..self.config.codebook_size {
            let dist = squared_distance(self.entry(layer, code), v);
            if dist < best_dist {
                best = code;
                best_dist = dist;
            }
        }
        best
    }

    /// Greedy residual quantization of a single vector.
    pub fn encode(&self, v: &[f32]) -> Result<EncodeOutput> {
        if v.len() != self.config.dim {
            return Err(Error::DimMismatch {
                expected: self.config.dim,
                actual: v.len(),
            });
        }
        let mut residual = v.to_vec();
        let mut recon = vec![0.0f32; self.config.dim];
        let mut codes = Vec::with_capacity(self.config.num_layers);
        let mut residual_norms = Vec::with_capacity(self.config.num_layers);
        for layer in 0..self.config.num_layers {
            let code = self.nearest(layer, &residual);
            let entry = self.entry(layer, code);
            for i in 0..self.config.dim {
                residual[i] -= entry[i];
                recon[i] += entry[i];
            }
            codes.push(code as u32);
            residual_norms.push(l2_norm(&residual));
        }
        Ok(EncodeOutput {
            codes,
            recon,
            residual_norms,
        })
    }

    /// Encodes a batch of frames into a code grid.
    pub fn encode_frames(&self, frames: &[Vec<f32>]) -> Result<CodeSequence> {
        let mut codes = Vec::with_capacity(frames.len() * self.config.num_layers);
        for frame in frames {
            codes.extend(self.encode(frame)?.codes);
        }
        CodeSequence::new(codes, frames.len(), self.config.num_layers)
    }

    /// Sums the indexed entries across all layers, per frame. Decoding the
    /// codes from [`Self::encode`] reproduces its `recon` bitwise because
    /// both accumulate in layer order.
    pub fn decode(&self, codes: &CodeSequence) -> Result<Vec<Vec<f32>>> {
        self.decode_prefix(codes, codes.num_layers())
    }

    /// Decodes using only the first `layers` layers of each frame.
    pub fn decode_prefix(&self, codes: &CodeSequence, layers: usize) -> Result<Vec<Vec<f32>>> {
        if codes.num_layers() != self.config.num_layers {
            return Err(Error::DimMismatch {
                expected: self.config.num_layers,
                actual: codes.num_layers(),
            });
        }
        if layers > self.config.num_layers {
            return Err(Error::InvalidConfig(format!(
                "cannot decode {layers} layers from a {}-layer codec",
                self.config.num_layers
            )));
        }
        let mut out = Vec::with_capacity(codes.frames());
        for f in 0..codes.frames() {
            let mut recon = vec![0.0f32; self.config.dim];
            for (layer, &code) in codes.frame(f)[..layers].iter().enumerate() {
                if code as usize >= self.config.codebook_size {
                    return Err(Error::CodeOutOfRange {
                        code,
                        codebook_size: self.config.codebook_size,
                    });
                }
                let entry = self.entry(layer, code as usize);
                for i in 0..self.config.dim {
                    recon[i] += entry[i];
                }
            }
            out.push(recon);
        }
        Ok(out)
    }

    /// One EMA training step over a batch.
    ///
    /// Per layer: residuals are clustered to their nearest entries, the EMA
    /// counts and sums absorb the assignments, entries move to the
    /// Laplace-smoothed cluster means, and entries whose count decayed below
    /// the dead threshold are reseeded from the largest-norm residuals in
    /// the batch. Quantization always uses the pre-update entries.
    pub fn train_step(&mut self, batch: &[Vec<f32>]) -> Result<TrainStats> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("RVQ training batch"));
        }
        for v in batch {
            if v.len() != self.config.dim {
                return Err(Error::DimMismatch {
                    expected: self.config.dim,
                    actual: v.len(),
                });
            }
        }
        let dim = self.config.dim;
        let k = self.config.codebook_size;
        let decay = self.config.ema_decay;

        let mut residuals: Vec<Vec<f32>> = batch.to_vec();
        for layer in 0..self.config.num_layers {
            let assignments: Vec<usize> = residuals
                .iter()
                .map(|r| self.nearest(layer, r))
                .collect();
            // Entries actually used for quantization, captured pre-update.
            let old_entries: Vec<f32> =
                self.codebooks[layer * k * dim..(layer + 1) * k * dim].to_vec();

            let mut counts = vec![0.0f32; k];
            let mut sums = vec![0.0f32; k * dim];
            for (r, &code) in residuals.iter().zip(&assignments) {
                counts[code] += 1.0;
                for i in 0..dim {
                    sums[code * dim + i] += r[i];
                }
            }

            let count_base = layer * k;
            let sum_base = layer * k * dim;
            for code in 0..k {
                self.ema_counts[count_base + code] =
                    decay * self.ema_counts[count_base + code] + (1.0 - decay) * counts[code];
                for i in 0..dim {
                    self.ema_sums[sum_base + code * dim + i] = decay
                        * self.ema_sums[sum_base + code * dim + i]
                        + (1.0 - decay) * sums[code * dim + i];
                }
            }

            let total: f32 = self.ema_counts[count_base..count_base + k].iter().sum();
            for code in 0..k {
                let smoothed = (self.ema_counts[count_base + code] + EMA_EPSILON)
                    / (total + k as f32 * EMA_EPSILON)
                    * total;
                for i in 0..dim {
                    self.codebooks[sum_base + code * dim + i] =
                        self.ema_sums[sum_base + code * dim + i] / smoothed;
                }
            }

            // Reseed dead entries at the worst-served batch vectors (largest
            // post-quantization residual), cycling in descending-error order
            // so the procedure stays deterministic.
            let mut by_error: Vec<usize> = (0..residuals.len()).collect();
            by_error.sort_by(|&a, &b| {
                let err = |i: usize| {
                    squared_distance(&residuals[i], &old_entries[assignments[i] * dim..][..dim])
                };
                err(b).partial_cmp(&err(a)).unwrap().then(a.cmp(&b))
            });
            let mut next_seed = 0usize;
            for code in 0..k {
                if self.ema_counts[count_base + code] < DEAD_ENTRY_THRESHOLD {
                    let seed = &residuals[by_error[next_seed % by_error.len()]];
                    next_seed += 1;
                    self.ema_counts[count_base + code] = 1.0;
                    for (i, &s) in seed.iter().enumerate() {
                        self.codebooks[sum_base + code * dim + i] = s;
                        self.ema_sums[sum_base + code * dim + i] = s;
                    }
                }
            }

            // Advance residuals using the entries that did the quantizing.
            for (r, &code) in residuals.iter_mut().zip(&assignments) {
                for i in 0..dim {
                    r[i] -= old_entries[code * dim + i];
                }
            }
        }

        let mut sq_err = 0.0f64;
        for r in &residuals {
            for &x in r {
                sq_err += (x as f64) * (x as f64);
            }
        }
        let vq_loss = (sq_err / (batch.len() * dim) as f64) as f32;
        Ok(TrainStats {
            vq_loss,
            commitment_loss: self.config.commitment_beta * vq_loss,
        })
    }

    // -- checkpoint format ---------------------------------------------
    //
    // magic "RVQ1" | u32 version | u32 num_layers | u32 codebook_size |
    // u32 dim | f32 ema_decay | f32 commitment_beta | u64 seed |
    // then codebooks, ema_counts, ema_sums as little-endian f32.

    const CHECKPOINT_MAGIC: &'static [u8; 4] = b"RVQ1";
    const CHECKPOINT_VERSION: u32 = 1;

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(Self::CHECKPOINT_MAGIC);
        bytes.extend_from_slice(&Self::CHECKPOINT_VERSION.to_le_bytes());
        bytes.extend_from_slice(&(self.config.num_layers as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.config.codebook_size as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.config.dim as u32).to_le_bytes());
        bytes.extend_from_slice(&self.config.ema_decay.to_le_bytes());
        bytes.extend_from_slice(&self.config.commitment_beta.to_le_bytes());
        bytes.extend_from_slice(&self.config.seed.to_le_bytes());
        for v in self
            .codebooks
            .iter()
            .chain(&self.ema_counts)
            .chain(&self.ema_sums)
        {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path)?;
        let header_len = 4 + 4 + 4 + 4 + 4 + 4 + 4 + 8;
        if bytes.len() < header_len {
            return Err(Error::Format(format!(
                "{}: checkpoint shorter than header",
                path.display()
            )));
        }
        if &bytes[..4] != Self::CHECKPOINT_MAGIC {
            return Err(Error::Format(format!(
                "{}: not an RVQ checkpoint",
                path.display()
            )));
        }
        let read_u32 = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let version = read_u32(4);
        if version != Self::CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported checkpoint version {version}",
                path.display()
            )));
        }
        let num_layers = read_u32(8) as usize;
        let codebook_size = read_u32(12) as usize;
        let dim = read_u32(16) as usize;
        let ema_decay = f32::from_le_bytes(bytes[20..24].try_into().unwrap());
        let commitment_beta = f32::from_le_bytes(bytes[24..28].try_into().unwrap());
        let seed = u64::from_le_bytes(bytes[28..36].try_into().unwrap());
        let config = RvqConfig {
            num_layers,
            codebook_size,
            dim,
            ema_decay,
            commitment_beta,
            seed,
        };
        config.validate()?;

        let entries = num_layers * codebook_size;
        let expected_floats = entries * dim + entries + entries * dim;
        let expected = header_len + expected_floats * 4;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "{}: checkpoint is {} bytes, expected {expected}",
                path.display(),
                bytes.len()
            )));
        }
        let mut floats = bytes[header_len..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let codebooks: Vec<f32> = floats.by_ref().take(entries * dim).collect();
        let ema_counts: Vec<f32> = floats.by_ref().take(entries).collect();
        let ema_sums: Vec<f32> = floats.collect();
        Ok(Self {
            config,
            codebooks,
            ema_counts,
            ema_sums,
        })
    }
}

/// Transmission rate of the code stream in bits per second:
/// `num_layers * ceil(log2(codebook_size)) * frames_per_second`.
pub fn bitrate(cfg: &RvqConfig, frames_per_second: f64) -> Result<f64> {
    cfg.validate()?;
    if !(frames_per_second > 0.0 && frames_per_second.is_finite()) {
        return Err(Error::InvalidValue(format!(
            "frames_per_second must be positive, got {frames_per_second}"
        )));
    }
    let bits_per_code = (cfg.codebook_size as f64).log2().ceil().max(1.0);
    Ok(cfg.num_layers as f64 * bits_per_code * frames_per_second)
}

//! Room-acoustic metrics: energy decay curve, T60, EDT, DRR, and the
//! early/late mean-squared errors.
//!
//! T60 follows the ISO-3382 T30 convention: a least-squares line is fitted
//! to the Schroeder decay over the [-5, -35] dB region and extrapolated to
//! 60 dB. EDT fits the [0, -10] dB region and multiplies by six.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::AudioBuffer;

/// Default early/late boundary: 125 ms at 16 kHz.
pub const DEFAULT_EARLY_LATE_BOUNDARY: usize = 2000;

/// EDC values are clamped to this floor to avoid log of zero.
pub const EDC_FLOOR_DB: f64 = -120.0;

/// Half-width of the DRR direct-sound window in seconds.
pub const DRR_DIRECT_WINDOW_SECONDS: f64 = 0.0025;

/// A room impulse response with an early/late boundary marker.
#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    samples: Vec<f64>,
    sample_rate: u32,
    early_late_boundary: usize,
}

impl Rir {
    /// Builds an RIR with the default early/late boundary (clamped to the
    /// signal length for very short responses).
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        let boundary = DEFAULT_EARLY_LATE_BOUNDARY.min(samples.len());
        Self::with_boundary(samples, sample_rate, boundary)
    }

    pub fn with_boundary(samples: Vec<f64>, sample_rate: u32, boundary: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("RIR"));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidValue("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "non-finite RIR sample at index {i}"
            )));
        }
        if boundary > samples.len() {
            return Err(Error::BoundaryOutOfRange {
                boundary,
                len: samples.len(),
            });
        }
        Ok(Self {
            samples,
            sample_rate,
            early_late_boundary: boundary,
        })
    }

    pub fn from_audio(audio: &AudioBuffer) -> Result<Self> {
        Self::new(audio.samples().to_vec(), audio.sample_rate())
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction rejects empty RIRs
    }

    pub fn early_late_boundary(&self) -> usize {
        self.early_late_boundary
    }

    pub fn set_early_late_boundary(&mut self, boundary: usize) -> Result<()> {
        if boundary > self.samples.len() {
            return Err(Error::BoundaryOutOfRange {
                boundary,
                len: self.samples.len(),
            });
        }
        self.early_late_boundary = boundary;
        Ok(())
    }

    pub fn to_audio(&self) -> AudioBuffer {
        AudioBuffer::new(self.samples.clone(), self.sample_rate)
            .expect("RIR samples are validated on construction")
    }
}

/// Schroeder energy decay curve in dB, normalized so the first value is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct EdcCurve {
    values_db: Vec<f64>,
    sample_rate: u32,
}

impl EdcCurve {
    pub fn values_db(&self) -> &[f64] {
        &self.values_db
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }
}

/// Backward-integrates the squared RIR and converts to normalized dB.
pub fn energy_decay_curve(h: &Rir) -> Result<EdcCurve> {
    let mut energy = vec![0.0f64; h.len()];
    let mut acc = 0.0;
    for (i, &s) in h.samples().iter().enumerate().rev() {
        acc += s * s;
        energy[i] = acc;
    }
    let total = energy[0];
    if total <= 0.0 {
        return Err(Error::ZeroEnergyRir);
    }
    let values_db = energy
        .iter()
        .map(|&e| {
            if e > 0.0 {
                (10.0 * (e / total).log10()).max(EDC_FLOOR_DB)
            } else {
                EDC_FLOOR_DB
            }
        })
        .collect();
    Ok(EdcCurve {
        values_db,
        sample_rate: h.sample_rate(),
    })
}

/// Least-squares slope (dB per second) of the EDC between two thresholds.
///
/// The fit region runs from the first sample at or below `upper_db` through
/// the first sample at or below `lower_db`, inclusive. When the decay jumps
/// past both thresholds in a single step the sample just before the region is
/// included so a slope always exists.
fn fitted_decay_slope(edc: &EdcCurve, upper_db: f64, lower_db: f64) -> Result<f64> {
    let v = edc.values_db();
    let start = v
        .iter()
        .position(|&x| x <= upper_db)
        .ok_or(Error::InsufficientDecay {
            required_db: upper_db,
        })?;
    let end = v
        .iter()
        .position(|&x| x <= lower_db)
        .ok_or(Error::InsufficientDecay {
            required_db: lower_db,
        })?;
    let start = if start == end { start.saturating_sub(1) } else { start };
    debug_assert!(end > start);

    let dt = 1.0 / edc.sample_rate() as f64;
    let n = (end - start + 1) as f64;
    let mut sum_t = 0.0;
    let mut sum_v = 0.0;
    for (i, &val) in v[start..=end].iter().enumerate() {
        sum_t += i as f64 * dt;
        sum_v += val;
    }
    let mean_t = sum_t / n;
    let mean_v = sum_v / n;
    let mut cov = 0.0;
    let mut var = 0.0;
    for (i, &val) in v[start..=end].iter().enumerate() {
        let t = i as f64 * dt - mean_t;
        cov += t * (val - mean_v);
        var += t * t;
    }
    if var == 0.0 {
        return Err(Error::InsufficientDecay {
            required_db: lower_db,
        });
    }
    Ok(cov / var)
}

/// Reverberation time in seconds via T30 extrapolation.
pub fn t60(h: &Rir) -> Result<f64> {
    t60_from_edc(&energy_decay_curve(h)?)
}

pub fn t60_from_edc(edc: &EdcCurve) -> Result<f64> {
    let slope = fitted_decay_slope(edc, -5.0, -35.0)?;
    Ok(-60.0 / slope)
}

/// Early decay time in seconds: six times the fitted time to -10 dB.
pub fn edt(h: &Rir) -> Result<f64> {
    edt_from_edc(&energy_decay_curve(h)?)
}

pub fn edt_from_edc(edc: &EdcCurve) -> Result<f64> {
    let slope = fitted_decay_slope(edc, 0.0, -10.0)?;
    Ok(-60.0 / slope)
}

/// Direct-to-reverberant ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Drr {
    /// Ratio in dB; `f64::INFINITY` when there is no reflected energy.
    pub db: f64,
    /// Set when the reflected energy is zero and `db` is the +inf sentinel.
    pub unbounded: bool,
}

/// Direct-to-reverberant ratio: direct window is the absolute-peak sample
/// +/- 2.5 ms, reflected is all remaining energy.
pub fn drr(h: &Rir) -> Result<Drr> {
    let samples = h.samples();
    let (peak_idx, peak_val) = samples
        .iter()
        .enumerate()
        .fold((0usize, 0.0f64), |(bi, bv), (i, &s)| {
            if s.abs() > bv {
                (i, s.abs())
            } else {
                (bi, bv)
            }
        });
    if peak_val == 0.0 {
        return Err(Error::ZeroEnergyRir);
    }
    let half_window = (DRR_DIRECT_WINDOW_SECONDS * h.sample_rate() as f64).round() as usize;
    let lo = peak_idx.saturating_sub(half_window);
    let hi = (peak_idx + half_window).min(samples.len() - 1);
    let direct: f64 = samples[lo..=hi].iter().map(|s| s * s).sum();
    let total: f64 = samples.iter().map(|s| s * s).sum();
    let reflected = (total - direct).max(0.0);
    if reflected == 0.0 {
        return Ok(Drr {
            db: f64::INFINITY,
            unbounded: true,
        });
    }
    Ok(Drr {
        db: 10.0 * (direct / reflected).log10(),
        unbounded: false,
    })
}

/// Splits an RIR at `boundary` into zero-padded early and late parts so that
/// `early + late == h` elementwise. Both halves keep the full length and
/// carry `boundary` as their early/late marker.
pub fn split_early_late(h: &Rir, boundary: usize) -> Result<(Rir, Rir)> {
    if boundary > h.len() {
        return Err(Error::BoundaryOutOfRange {
            boundary,
            len: h.len(),
        });
    }
    let mut early = vec![0.0; h.len()];
    let mut late = vec![0.0; h.len()];
    early[..boundary].copy_from_slice(&h.samples()[..boundary]);
    late[boundary..].copy_from_slice(&h.samples()[boundary..]);
    Ok((
        Rir::with_boundary(early, h.sample_rate(), boundary)?,
        Rir::with_boundary(late, h.sample_rate(), boundary)?,
    ))
}

/// Region selector for [`component_mse`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Early,
    Late,
    Full,
}

/// Mean squared sample difference over a region.
///
/// The sum runs over the selected region but is divided by the full length,
/// i.e. the MSE of the zero-padded early (or late) split. `Full` is the
/// plain time-domain MSE.
pub fn component_mse(a: &Rir, b: &Rir, region: Region) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.early_late_boundary() != b.early_late_boundary() {
        return Err(Error::BoundaryMismatch {
            left: a.early_late_boundary(),
            right: b.early_late_boundary(),
        });
    }
    let boundary = a.early_late_boundary();
    let (lo, hi) = match region {
        Region::Early => (0, boundary),
        Region::Late => (boundary, a.len()),
        Region::Full => (0, a.len()),
    };
    let sum: f64 = a.samples()[lo..hi]
        .iter()
        .zip(&b.samples()[lo..hi])
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.len() as f64)
}

/// Per-metric absolute errors between an estimated and a ground-truth RIR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcousticReport {
    /// |T60(est) - T60(gt)| in milliseconds.
    pub t60_error: f64,
    /// |DRR(est) - DRR(gt)| in dB.
    pub drr_error: f64,
    /// |EDT(est) - EDT(gt)| in milliseconds.
    pub edt_error: f64,
    /// Early-region MSE.
    pub emse: f64,
    /// Late-region MSE.
    pub lmse: f64,
}

pub fn acoustic_error_report(est: &Rir, gt: &Rir) -> Result<AcousticReport> {
    let t60_error = (t60(est)? - t60(gt)?).abs() * 1000.0;
    let edt_error = (edt(est)? - edt(gt)?).abs() * 1000.0;
    let drr_est = drr(est)?;
    let drr_gt = drr(gt)?;
    // Two unbounded DRRs agree; |inf - inf| would be NaN.
    let drr_error = if drr_est.unbounded && drr_gt.unbounded {
        0.0
    } else {
        (drr_est.db - drr_gt.db).abs()
    };
    Ok(AcousticReport {
        t60_error,
        drr_error,
        edt_error,
        emse: component_mse(est, gt, Region::Early)?,
        lmse: component_mse(est, gt, Region::Late)?,
    })
}

/// Decaying exponential h[n] = exp(-alpha * n / fs), the standard analytic
/// test signal: its EDC decays at 20*log10(e)*alpha ~= 8.6859*alpha dB/s.
pub fn exponential_rir(alpha: f64, sample_rate: u32, len: usize) -> Result<Rir> {
    let fs = sample_rate as f64;
    let samples = (0..len).map(|n| (-alpha * n as f64 / fs).exp()).collect();
    Rir::new(samples, sample_rate)
}

//! STFT and mel-spectrogram transforms used by the spectral losses.
//!
//! Conventions: periodic Hann window, hop = window/4 by default, reflect
//! padding of half a window on each side, one-sided spectrum with
//! `window/2 + 1` bins. The mel filterbank uses the HTK scale with each
//! triangle normalized by its discrete area so no row sums above one.

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::AudioBuffer;

/// Analysis settings shared by the multi-resolution losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralConfig {
    /// Window lengths, each a positive power of two.
    pub window_lengths: Vec<usize>,
    /// Hop as a fraction of the window length.
    pub hop_ratio: f64,
    pub mel_bands: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            window_lengths: vec![64, 128, 256, 512, 1024, 2048, 4096],
            hop_ratio: 0.25,
            mel_bands: 80,
            fmin: 0.0,
            fmax: 8000.0,
        }
    }
}

impl SpectralConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_lengths.is_empty() {
            return Err(Error::InvalidConfig("no window lengths".into()));
        }
        for &w in &self.window_lengths {
            if w == 0 || !w.is_power_of_two() {
                return Err(Error::InvalidConfig(format!(
                    "window length {w} is not a positive power of two"
                )));
            }
        }
        if !(self.hop_ratio > 0.0 && self.hop_ratio <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "hop ratio {} outside (0, 1]",
                self.hop_ratio
            )));
        }
        if self.mel_bands == 0 {
            return Err(Error::InvalidConfig("mel_bands must be >= 1".into()));
        }
        if !(self.fmin >= 0.0 && self.fmax > self.fmin) {
            return Err(Error::InvalidConfig(format!(
                "bad mel frequency range [{}, {}]",
                self.fmin, self.fmax
            )));
        }
        Ok(())
    }

    pub fn hop_for(&self, window_len: usize) -> usize {
        ((window_len as f64 * self.hop_ratio) as usize).max(1)
    }
}

/// Magnitude/phase decomposition of an STFT, row-major frames x bins.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub magnitude: Vec<f64>,
    /// Phase in (-pi, pi]; zero where the bin magnitude is zero.
    pub phase: Vec<f64>,
    pub frames: usize,
    pub bins: usize,
    pub window_len: usize,
}

impl ComplexSpectrogram {
    pub fn magnitude_at(&self, frame: usize, bin: usize) -> f64 {
        self.magnitude[frame * self.bins + bin]
    }

    pub fn phase_at(&self, frame: usize, bin: usize) -> f64 {
        self.phase[frame * self.bins + bin]
    }
}

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos()))
        .collect()
}

/// Mirror-extends an index into [0, len) without repeating edge samples.
fn reflect_index(i: isize, len: usize) -> usize {
    debug_assert!(len > 0);
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= len as isize {
        j = period - j;
    }
    j as usize
}

/// Short-time Fourier transform with center reflect-padding.
pub fn stft(x: &AudioBuffer, window_len: usize, hop: usize) -> Result<ComplexSpectrogram> {
    if x.is_empty() {
        return Err(Error::EmptyInput("stft"));
    }
    if window_len == 0 || hop == 0 {
        return Err(Error::InvalidConfig(
            "window and hop must be positive".into(),
        ));
    }
    let len = x.len();
    let pad = window_len / 2;
    let padded_len = len + 2 * pad;
    if padded_len < window_len {
        return Err(Error::InvalidConfig(format!(
            "window {window_len} longer than padded signal {padded_len}"
        )));
    }
    let frames = (padded_len - window_len) / hop + 1;
    let bins = window_len / 2 + 1;
    let window = hann_window(window_len);

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(window_len);

    let samples = x.samples();
    let mut magnitude = vec![0.0; frames * bins];
    let mut phase = vec![0.0; frames * bins];
    let mut buf = vec![Complex::new(0.0, 0.0); window_len];
    for frame in 0..frames {
        let start = frame as isize * hop as isize - pad as isize;
        for (n, slot) in buf.iter_mut().enumerate() {
            let idx = reflect_index(start + n as isize, len);
            *slot = Complex::new(samples[idx] * window[n], 0.0);
        }
        fft.process(&mut buf);
        for (bin, value) in buf[..bins].iter().enumerate() {
            let mag = value.norm();
            let mut ph = if mag > 0.0 { value.im.atan2(value.re) } else { 0.0 };
            if ph <= -std::f64::consts::PI {
                ph += 2.0 * std::f64::consts::PI;
            }
            magnitude[frame * bins + bin] = mag;
            phase[frame * bins + bin] = ph;
        }
    }
    Ok(ComplexSpectrogram {
        magnitude,
        phase,
        frames,
        bins,
        window_len,
    })
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10.0f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank, `mel_bands x n_bins` row-major. Each row is
/// divided by its weight sum, so rows sum to one (or zero for triangles
/// narrower than a bin).
pub fn mel_filterbank(
    n_bins: usize,
    sample_rate: u32,
    mel_bands: usize,
    fmin: f64,
    fmax: f64,
) -> Result<Vec<f64>> {
    let nyquist = sample_rate as f64 / 2.0;
    if fmax > nyquist {
        return Err(Error::InvalidConfig(format!(
            "fmax {fmax} Hz above Nyquist {nyquist} Hz"
        )));
    }
    if n_bins < 2 {
        return Err(Error::InvalidConfig("need at least 2 FFT bins".into()));
    }
    let window_len = 2 * (n_bins - 1);
    let bin_hz = sample_rate as f64 / window_len as f64;

    let mel_lo = hz_to_mel(fmin);
    let mel_hi = hz_to_mel(fmax);
    let edges: Vec<f64> = (0..mel_bands + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (mel_bands + 1) as f64))
        .collect();

    let mut bank = vec![0.0; mel_bands * n_bins];
    for band in 0..mel_bands {
        let (lo, center, hi) = (edges[band], edges[band + 1], edges[band + 2]);
        let mut row_sum = 0.0;
        for bin in 0..n_bins {
            let f = bin as f64 * bin_hz;
            let rising = if center > lo { (f - lo) / (center - lo) } else { 0.0 };
            let falling = if hi > center { (hi - f) / (hi - center) } else { 0.0 };
            let w = rising.min(falling).max(0.0);
            bank[band * n_bins + bin] = w;
            row_sum += w;
        }
        if row_sum > 0.0 {
            for bin in 0..n_bins {
                bank[band * n_bins + bin] /= row_sum;
            }
        }
    }
    Ok(bank)
}

/// Mel power spectrogram, row-major frames x bands.
#[derive(Debug, Clone, PartialEq)]
pub struct MelGrid {
    pub values: Vec<f64>,
    pub frames: usize,
    pub bands: usize,
}

pub fn mel_spectrogram(
    x: &AudioBuffer,
    cfg: &SpectralConfig,
    window_len: usize,
) -> Result<MelGrid> {
    cfg.validate()?;
    let spec = stft(x, window_len, cfg.hop_for(window_len))?;
    let bank = mel_filterbank(spec.bins, x.sample_rate(), cfg.mel_bands, cfg.fmin, cfg.fmax)?;
    let mut values = vec![0.0; spec.frames * cfg.mel_bands];
    for frame in 0..spec.frames {
        let mags = &spec.magnitude[frame * spec.bins..(frame + 1) * spec.bins];
        for band in 0..cfg.mel_bands {
            let row = &bank[band * spec.bins..(band + 1) * spec.bins];
            let mut acc = 0.0;
            for (w, m) in row.iter().zip(mags) {
                acc += w * m * m;
            }
            values[frame * cfg.mel_bands + band] = acc;
        }
    }
    Ok(MelGrid {
        values,
        frames: spec.frames,
        bands: cfg.mel_bands,
    })
}

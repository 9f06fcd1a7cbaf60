//! Training-loss formulas as pure, deterministic functions.
//!
//! All multi-window losses take the estimate/reference pairs for both the
//! reverberant and the clean branch. Per resolution every term is an
//! element mean (L1) or an RMS (L2) so totals stay scale-stable across
//! window lengths; resolutions are then summed in config order for bitwise
//! reproducibility.

use serde::{Deserialize, Serialize};

use crate::acoustics::Rir;
use crate::error::{Error, Result};
use crate::signal::AudioBuffer;
use crate::spectral::{mel_spectrogram, stft, ComplexSpectrogram, SpectralConfig};

/// Bins quieter than this in both signals carry no usable phase.
pub const PHASE_SILENCE_FLOOR: f64 = 1e-8;

/// Weight pair used by both the metric and generator totals. The two totals
/// keep independent pairs; nothing forces them to share values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        if !(lambda1.is_finite() && lambda1 >= 0.0 && lambda2.is_finite() && lambda2 >= 0.0) {
            return Err(Error::InvalidValue(format!(
                "loss weights must be finite and non-negative, got ({lambda1}, {lambda2})"
            )));
        }
        Ok(Self { lambda1, lambda2 })
    }
}

/// Externally produced discriminator scores for the hinge loss. The
/// discriminator networks themselves live outside this crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorScores {
    pub scores_reverberant: Vec<f64>,
    pub scores_clean: Vec<f64>,
}

fn check_pair(est: &AudioBuffer, reference: &AudioBuffer) -> Result<()> {
    if est.len() != reference.len() {
        return Err(Error::LengthMismatch {
            left: est.len(),
            right: reference.len(),
        });
    }
    if est.sample_rate() != reference.sample_rate() {
        return Err(Error::SampleRateMismatch {
            left: est.sample_rate(),
            right: reference.sample_rate(),
        });
    }
    Ok(())
}

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
    sum / a.len() as f64
}

fn rms_diff(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (sum / a.len() as f64).sqrt()
}

/// Multi-resolution mel loss: sum over window lengths of the mean L1
/// distance between mel spectrograms, for the reverberant and clean pairs.
pub fn mel_loss(
    reverberant_est: &AudioBuffer,
    reverberant: &AudioBuffer,
    clean_est: &AudioBuffer,
    clean: &AudioBuffer,
    cfg: &SpectralConfig,
) -> Result<f64> {
    cfg.validate()?;
    check_pair(reverberant_est, reverberant)?;
    check_pair(clean_est, clean)?;
    let mut total = 0.0;
    for &w in &cfg.window_lengths {
        let mr = mel_spectrogram(reverberant, cfg, w)?;
        let mr_hat = mel_spectrogram(reverberant_est, cfg, w)?;
        let mc = mel_spectrogram(clean, cfg, w)?;
        let mc_hat = mel_spectrogram(clean_est, cfg, w)?;
        total += mean_abs_diff(&mr.values, &mr_hat.values);
        total += mean_abs_diff(&mc.values, &mc_hat.values);
    }
    Ok(total)
}

/// Magnitude/phase components of the multi-resolution STFT loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftLoss {
    pub magnitude: f64,
    pub phase: f64,
    pub total: f64,
}

/// Per-bin phase distance on the unit circle, averaged over bins that carry
/// signal in at least one input. Mapping phases to (sin, cos) points removes
/// wraparound: angles differing by 2*pi*k contribute nothing.
fn phase_distance(a: &ComplexSpectrogram, b: &ComplexSpectrogram) -> f64 {
    debug_assert_eq!(a.magnitude.len(), b.magnitude.len());
    let mut sum = 0.0;
    let mut used = 0usize;
    for i in 0..a.magnitude.len() {
        if a.magnitude[i] < PHASE_SILENCE_FLOOR && b.magnitude[i] < PHASE_SILENCE_FLOOR {
            continue;
        }
        let ds = a.phase[i].sin() - b.phase[i].sin();
        let dc = a.phase[i].cos() - b.phase[i].cos();
        sum += (ds * ds + dc * dc).sqrt();
        used += 1;
    }
    if used == 0 {
        0.0
    } else {
        sum / used as f64
    }
}

/// Multi-resolution STFT loss: RMS magnitude distance plus unit-circle phase
/// distance, both pairs, summed over window lengths.
pub fn stft_loss(
    reverberant_est: &AudioBuffer,
    reverberant: &AudioBuffer,
    clean_est: &AudioBuffer,
    clean: &AudioBuffer,
    cfg: &SpectralConfig,
) -> Result<StftLoss> {
    cfg.validate()?;
    check_pair(reverberant_est, reverberant)?;
    check_pair(clean_est, clean)?;
    let mut magnitude = 0.0;
    let mut phase = 0.0;
    for &w in &cfg.window_lengths {
        let hop = cfg.hop_for(w);
        let sr = stft(reverberant, w, hop)?;
        let sr_hat = stft(reverberant_est, w, hop)?;
        let sc = stft(clean, w, hop)?;
        let sc_hat = stft(clean_est, w, hop)?;
        magnitude += rms_diff(&sr.magnitude, &sr_hat.magnitude);
        magnitude += rms_diff(&sc.magnitude, &sc_hat.magnitude);
        phase += phase_distance(&sr, &sr_hat);
        phase += phase_distance(&sc, &sc_hat);
    }
    Ok(StftLoss {
        magnitude,
        phase,
        total: magnitude + phase,
    })
}

/// Time-domain mean squared error between two RIRs.
pub fn rir_mse(est: &Rir, reference: &Rir) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::LengthMismatch {
            left: est.len(),
            right: reference.len(),
        });
    }
    let sum: f64 = est
        .samples()
        .iter()
        .zip(reference.samples())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / est.len() as f64)
}

fn require_non_negative(name: &'static str, value: f64) -> Result<()> {
    if value < 0.0 || !value.is_finite() {
        return Err(Error::NegativeLossComponent { name, value });
    }
    Ok(())
}

/// Total metric loss: mel + lambda1 * stft + lambda2 * rir_mse.
pub fn metric_loss(mel: f64, stft_total: f64, rir_mse: f64, w: &LossWeights) -> Result<f64> {
    require_non_negative("mel", mel)?;
    require_non_negative("stft", stft_total)?;
    require_non_negative("rir_mse", rir_mse)?;
    Ok(mel + w.lambda1 * stft_total + w.lambda2 * rir_mse)
}

/// Hinge loss over externally supplied discriminator scores: the mean of
/// max(0, 1 - score) for each branch, summed.
pub fn adversarial_hinge_loss(scores: &DiscriminatorScores) -> Result<f64> {
    if scores.scores_reverberant.is_empty() || scores.scores_clean.is_empty() {
        return Err(Error::EmptyInput("discriminator scores"));
    }
    for &s in scores
        .scores_reverberant
        .iter()
        .chain(&scores.scores_clean)
    {
        if !s.is_finite() {
            return Err(Error::InvalidValue(format!(
                "non-finite discriminator score {s}"
            )));
        }
    }
    let hinge_mean = |xs: &[f64]| -> f64 {
        xs.iter().map(|&s| (1.0 - s).max(0.0)).sum::<f64>() / xs.len() as f64
    };
    Ok(hinge_mean(&scores.scores_reverberant) + hinge_mean(&scores.scores_clean))
}

/// Total generator loss: metric + lambda1 * adversarial + lambda2 * (vq1 + vq2).
pub fn generator_total_loss(
    metric: f64,
    adversarial: f64,
    vq1: f64,
    vq2: f64,
    w: &LossWeights,
) -> Result<f64> {
    require_non_negative("metric", metric)?;
    require_non_negative("adversarial", adversarial)?;
    require_non_negative("vq1", vq1)?;
    require_non_negative("vq2", vq2)?;
    Ok(metric + w.lambda1 * adversarial + w.lambda2 * (vq1 + vq2))
}

/// The flat JSON report emitted by the CLI `losses` command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub mel: f64,
    pub stft_mag: f64,
    pub stft_phase: f64,
    pub rir_mse: f64,
    pub metric: f64,
    pub adversarial: f64,
    pub generator: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::WORKING_SAMPLE_RATE;
    use crate::spectral::mel_filterbank;

    fn buf(samples: Vec<f64>) -> AudioBuffer {
        AudioBuffer::new(samples, WORKING_SAMPLE_RATE).unwrap()
    }

    fn small_cfg() -> SpectralConfig {
        SpectralConfig {
            window_lengths: vec![128, 256],
            ..SpectralConfig::default()
        }
    }

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        // Tiny deterministic LCG so the fixtures don't depend on rand.
        let mut state = seed.wrapping_mul(2862933555777941757).wrapping_add(1);
        (0..len)
            .map(|_| {
                state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect()
    }

    #[test]
    fn mel_loss_zero_on_identical_inputs() {
        let x = buf(noise(700, 3));
        let y = buf(noise(700, 4));
        let cfg = small_cfg();
        assert_eq!(mel_loss(&x, &x, &y, &y, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn mel_loss_symmetric_in_each_pair() {
        let cfg = small_cfg();
        let a = buf(noise(600, 1));
        let b = buf(noise(600, 2));
        let c = buf(noise(600, 5));
        let d = buf(noise(600, 6));
        let left = mel_loss(&a, &b, &c, &d, &cfg).unwrap();
        let right = mel_loss(&b, &a, &c, &d, &cfg).unwrap();
        assert!((left - right).abs() < 1e-15);
    }

    #[test]
    #[allow(clippy::needless_range_loop)] // the naive DFT oracle reads clearest indexed
    fn mel_loss_against_zero_matches_naive_dft_reference() {
        // Independent route: naive DFT power spectrum + its own filterbank
        // application, no shared STFT code path beyond the bank itself.
        let cfg = SpectralConfig {
            window_lengths: vec![128],
            ..SpectralConfig::default()
        };
        let samples = noise(500, 9);
        let x = buf(samples.clone());
        let zeros = buf(vec![0.0; 500]);
        let got = mel_loss(&x, &zeros, &zeros, &zeros, &cfg).unwrap();

        let w = 128;
        let hop = 32;
        let bins = w / 2 + 1;
        let bank = mel_filterbank(bins, WORKING_SAMPLE_RATE, cfg.mel_bands, cfg.fmin, cfg.fmax)
            .unwrap();
        let window = crate::spectral::hann_window(w);
        let pad = w / 2;
        let frames = 500 / hop + 1;
        let reflect = |i: isize| -> f64 {
            let len = samples.len() as isize;
            let period = 2 * (len - 1);
            let mut j = i.rem_euclid(period);
            if j >= len {
                j = period - j;
            }
            samples[j as usize]
        };
        let mut acc = 0.0;
        for frame in 0..frames {
            let start = frame as isize * hop as isize - pad as isize;
            let mut mel_row = vec![0.0f64; cfg.mel_bands];
            for bin in 0..bins {
                let mut re = 0.0;
                let mut im = 0.0;
                for n in 0..w {
                    let v = reflect(start + n as isize) * window[n];
                    let angle = -2.0 * std::f64::consts::PI * bin as f64 * n as f64 / w as f64;
                    re += v * angle.cos();
                    im += v * angle.sin();
                }
                let power = re * re + im * im;
                for (band, row) in mel_row.iter_mut().enumerate() {
                    *row += bank[band * bins + bin] * power;
                }
            }
            acc += mel_row.iter().map(|v| v.abs()).sum::<f64>();
        }
        let expected = acc / (frames * cfg.mel_bands) as f64;
        assert!(
            (got - expected).abs() <= 1e-9,
            "got {got}, expected {expected}"
        );
    }

    #[test]
    fn stft_loss_zero_on_identical_inputs_and_symmetric() {
        let cfg = small_cfg();
        let a = buf(noise(600, 11));
        let b = buf(noise(600, 12));
        let zero = stft_loss(&a, &a, &b, &b, &cfg).unwrap();
        assert_eq!(zero.magnitude, 0.0);
        assert_eq!(zero.phase, 0.0);
        assert_eq!(zero.total, 0.0);

        let c = buf(noise(600, 13));
        let l = stft_loss(&a, &b, &c, &c, &cfg).unwrap();
        let r = stft_loss(&b, &a, &c, &c, &cfg).unwrap();
        assert!((l.total - r.total).abs() < 1e-12);
    }

    #[test]
    fn phase_loss_of_negated_signal_is_two_per_resolution() {
        // x and -x have antipodal unit-circle phase points in every bin that
        // carries energy, so each counted bin contributes exactly 2.
        let cfg = SpectralConfig {
            window_lengths: vec![256],
            ..SpectralConfig::default()
        };
        let samples = noise(900, 21);
        let x = buf(samples.clone());
        let neg = buf(samples.iter().map(|s| -s).collect());
        let silent = buf(vec![0.0; 900]);
        let loss = stft_loss(&x, &neg, &silent, &silent, &cfg).unwrap();
        assert!((loss.phase - 2.0).abs() < 1e-9, "phase was {}", loss.phase);
    }

    #[test]
    fn phase_loss_ignores_full_turns() {
        // Feed spectrograms directly: phases differing by 2*pi map to the
        // same unit-circle point.
        let a = ComplexSpectrogram {
            magnitude: vec![1.0, 1.0],
            phase: vec![0.4, -2.0],
            frames: 1,
            bins: 2,
            window_len: 2,
        };
        let mut b = a.clone();
        b.phase = vec![0.4 + 2.0 * std::f64::consts::PI, -2.0 - 2.0 * std::f64::consts::PI];
        assert!(phase_distance(&a, &b) < 1e-12);
    }

    #[test]
    fn rir_mse_matches_constant_offset() {
        let h = Rir::new(vec![0.1; 50], WORKING_SAMPLE_RATE).unwrap();
        let shifted = Rir::new(vec![0.2; 50], WORKING_SAMPLE_RATE).unwrap();
        assert!((rir_mse(&shifted, &h).unwrap() - 0.01).abs() < 1e-15);
        assert_eq!(rir_mse(&h, &h).unwrap(), 0.0);
        let short = Rir::new(vec![0.1; 49], WORKING_SAMPLE_RATE).unwrap();
        assert!(rir_mse(&h, &short).is_err());
    }

    #[test]
    fn rir_mse_agrees_with_full_region_component_mse() {
        use crate::acoustics::{component_mse, Region};
        let a = Rir::with_boundary(noise(300, 31), WORKING_SAMPLE_RATE, 100).unwrap();
        let b = Rir::with_boundary(noise(300, 32), WORKING_SAMPLE_RATE, 100).unwrap();
        let lhs = rir_mse(&a, &b).unwrap();
        let rhs = component_mse(&a, &b, Region::Full).unwrap();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn metric_loss_weighted_sums() {
        let w = LossWeights::default();
        assert_eq!(metric_loss(0.0, 0.0, 0.0, &w).unwrap(), 0.0);
        assert_eq!(metric_loss(1.0, 2.0, 3.0, &w).unwrap(), 6.0);
        let w2 = LossWeights::new(0.5, 2.0).unwrap();
        assert_eq!(metric_loss(1.0, 2.0, 3.0, &w2).unwrap(), 8.0);
        assert!(metric_loss(-1.0, 0.0, 0.0, &w).is_err());
    }

    #[test]
    fn hinge_loss_cases() {
        let saturated = DiscriminatorScores {
            scores_reverberant: vec![1.0, 2.0, 5.0],
            scores_clean: vec![1.5],
        };
        assert_eq!(adversarial_hinge_loss(&saturated).unwrap(), 0.0);

        let mixed = DiscriminatorScores {
            scores_reverberant: vec![2.0],
            scores_clean: vec![0.5],
        };
        assert_eq!(adversarial_hinge_loss(&mixed).unwrap(), 0.5);

        let zeros = DiscriminatorScores {
            scores_reverberant: vec![0.0],
            scores_clean: vec![0.0],
        };
        assert_eq!(adversarial_hinge_loss(&zeros).unwrap(), 2.0);

        let empty = DiscriminatorScores {
            scores_reverberant: vec![],
            scores_clean: vec![0.0],
        };
        assert!(adversarial_hinge_loss(&empty).is_err());
    }

    #[test]
    fn generator_loss_weighted_sums() {
        let w = LossWeights::default();
        assert_eq!(generator_total_loss(0.0, 0.0, 0.0, 0.0, &w).unwrap(), 0.0);
        assert_eq!(generator_total_loss(1.0, 1.0, 1.0, 1.0, &w).unwrap(), 4.0);
        let w2 = LossWeights::new(2.0, 0.5).unwrap();
        let got = generator_total_loss(2.0, 0.5, 0.1, 0.3, &w2).unwrap();
        assert!((got - 3.2).abs() < 1e-15);
    }

    #[test]
    fn totals_are_linear_in_each_component() {
        let w = LossWeights::new(0.7, 1.3).unwrap();
        let base = metric_loss(1.0, 2.0, 3.0, &w).unwrap();
        let bumped = metric_loss(1.0, 2.0 + 1.0, 3.0, &w).unwrap();
        assert!((bumped - base - w.lambda1).abs() < 1e-12);
        let gen_base = generator_total_loss(1.0, 2.0, 3.0, 4.0, &w).unwrap();
        let gen_bumped = generator_total_loss(1.0, 2.0, 3.0, 5.0, &w).unwrap();
        assert!((gen_bumped - gen_base - w.lambda2).abs() < 1e-12);
    }

    #[test]
    fn loss_report_schema_is_stable() {
        let report = LossReport {
            mel: 0.0,
            stft_mag: 0.0,
            stft_phase: 0.0,
            rir_mse: 0.0,
            metric: 0.0,
            adversarial: 0.0,
            generator: 0.0,
        };
        let json = serde_json::to_string(&report).unwrap();
        assert_eq!(
            json,
            concat!(
                r#"{"mel":0.0,"stft_mag":0.0,"stft_phase":0.0,"rir_mse":0.0,"#,
                r#""metric":0.0,"adversarial":0.0,"generator":0.0}"#
            )
        );
    }
}

//! Audio containers, FFT convolution, and encoder shape arithmetic.
//!
//! Reverberant speech is modelled as clean speech convolved with a room
//! impulse response; [`convolve`] is the workhorse for that synthesis. All
//! samples are stored as `f64` regardless of file precision so metric and
//! loss values reproduce bit-for-bit across runs.

use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};

/// The toolkit's fixed working sample rate. Callers must supply 16 kHz audio;
/// resampling is rejected rather than performed.
pub const WORKING_SAMPLE_RATE: u32 = 16_000;

/// Reverberant-speech segment length used by the encoder shape presets.
pub const SEGMENT_SAMPLES: usize = 14_400;

/// Overlap-add FFT length is the next power of two >= this multiple of the
/// kernel length.
const OLA_KERNEL_FACTOR: usize = 4;
/// Upper bound on the overlap-add FFT length (2^18 points).
const OLA_MAX_FFT_LEN: usize = 1 << 18;

/// A mono audio signal with linear-amplitude samples.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    /// Builds a buffer, rejecting non-finite samples and a zero sample rate.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidValue("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "non-finite sample at index {i}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
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
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// One strided 1-D convolution layer of an encoder plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayer {
    pub kernel_len: usize,
    pub stride: usize,
    pub out_channels: usize,
}

/// A stack of strided convolution layers, used only for shape arithmetic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerPlan {
    layers: Vec<ConvLayer>,
}

impl LayerPlan {
    pub fn new(layers: Vec<ConvLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::EmptyInput("layer plan"));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.stride < 1 || layer.kernel_len < 1 {
                return Err(Error::InvalidValue(format!(
                    "layer {i}: kernel_len and stride must be >= 1"
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Speech-encoder preset: five blocks with strides 2, 2, 3, 4, 5 and
    /// 2, 4, 8, 16, 32 output channels. Overall downsampling factor 240.
    pub fn speech_encoder() -> Self {
        let strides = [2usize, 2, 3, 4, 5];
        let channels = [2usize, 4, 8, 16, 32];
        let layers = strides
            .iter()
            .zip(channels)
            .map(|(&stride, out_channels)| ConvLayer {
                kernel_len: 2 * stride,
                stride,
                out_channels,
            })
            .collect();
        Self { layers }
    }

    /// RIR-encoder preset: kernel lengths 14401, 41, 41 with strides
    /// 225, 2, 2 and 256, 512, 1024 output channels. Overall factor 900.
    pub fn rir_encoder() -> Self {
        let layers = vec![
            ConvLayer {
                kernel_len: 14_401,
                stride: 225,
                out_channels: 256,
            },
            ConvLayer {
                kernel_len: 41,
                stride: 2,
                out_channels: 512,
            },
            ConvLayer {
                kernel_len: 41,
                stride: 2,
                out_channels: 1024,
            },
        ];
        Self { layers }
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn stride_product(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }
}

/// Runs the plan's shape arithmetic on an input of `input_len` samples.
///
/// Each layer is zero-padded so its output length is `ceil(len / stride)`,
/// which makes the overall downsampling factor exactly the product of the
/// strides. Returns `(output_len, downsample_factor)`.
pub fn conv_plan_output_len(plan: &LayerPlan, input_len: usize) -> Result<(usize, usize)> {
    let factor = plan.stride_product();
    if input_len < factor {
        return Err(Error::InputTooShort {
            input_len,
            required: factor,
        });
    }
    let mut len = input_len;
    for layer in plan.layers() {
        len = len.div_ceil(layer.stride);
    }
    Ok((len, factor))
}

/// Multiplies every sample by `gain`.
pub fn scale(x: &AudioBuffer, gain: f64) -> Result<AudioBuffer> {
    if !gain.is_finite() {
        return Err(Error::InvalidValue(format!("non-finite gain {gain}")));
    }
    let samples = x.samples().iter().map(|s| s * gain).collect();
    AudioBuffer::new(samples, x.sample_rate())
}

/// Full linear convolution of `x` with `h` via FFT overlap-add.
///
/// Output length is `len(x) + len(h) - 1`. Matches the direct convolution
/// sum within 1e-6 relative error.
pub fn convolve(x: &AudioBuffer, h: &AudioBuffer) -> Result<AudioBuffer> {
    if x.is_empty() || h.is_empty() {
        return Err(Error::EmptyInput("convolve"));
    }
    if x.sample_rate() != h.sample_rate() {
        return Err(Error::SampleRateMismatch {
            left: x.sample_rate(),
            right: h.sample_rate(),
        });
    }
    let out = overlap_add(x.samples(), h.samples());
    AudioBuffer::new(out, x.sample_rate())
}

fn ola_fft_len(kernel_len: usize) -> usize {
    let wanted = (OLA_KERNEL_FACTOR * kernel_len)
        .next_power_of_two()
        .min(OLA_MAX_FFT_LEN);
    // The block size fft_len - kernel_len + 1 must stay positive.
    wanted.max((kernel_len + 1).next_power_of_two())
}

fn overlap_add(x: &[f64], h: &[f64]) -> Vec<f64> {
    let out_len = x.len() + h.len() - 1;
    let fft_len = ola_fft_len(h.len());
    let block = fft_len - h.len() + 1;

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(fft_len);
    let ifft = planner.plan_fft_inverse(fft_len);

    let mut kernel = vec![Complex::new(0.0, 0.0); fft_len];
    for (slot, &v) in kernel.iter_mut().zip(h) {
        slot.re = v;
    }
    fft.process(&mut kernel);

    let mut out = vec![0.0; out_len];
    let mut buf = vec![Complex::new(0.0, 0.0); fft_len];
    let inv_n = 1.0 / fft_len as f64;
    for start in (0..x.len()).step_by(block) {
        let chunk = &x[start..(start + block).min(x.len())];
        buf.fill(Complex::new(0.0, 0.0));
        for (slot, &v) in buf.iter_mut().zip(chunk) {
            slot.re = v;
        }
        fft.process(&mut buf);
        for (slot, k) in buf.iter_mut().zip(&kernel) {
            *slot *= k;
        }
        ifft.process(&mut buf);
        let seg_len = chunk.len() + h.len() - 1;
        for (i, slot) in buf[..seg_len].iter().enumerate() {
            out[start + i] += slot.re * inv_n;
        }
    }
    out
}

#[cfg(test)]
pub(crate) fn convolve_direct(x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len() + h.len() - 1];
    for (i, &xv) in x.iter().enumerate() {
        for (j, &hv) in h.iter().enumerate() {
            out[i + j] += xv * hv;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn buf(samples: Vec<f64>) -> AudioBuffer {
        AudioBuffer::new(samples, WORKING_SAMPLE_RATE).unwrap()
    }

    fn random_signal(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn rejects_non_finite_samples() {
        assert!(AudioBuffer::new(vec![0.0, f64::NAN], 16_000).is_err());
        assert!(AudioBuffer::new(vec![f64::INFINITY], 16_000).is_err());
        assert!(AudioBuffer::new(vec![0.0], 0).is_err());
    }

    #[test]
    fn convolve_identity_with_delta() {
        let x = buf(vec![1.0, 2.0, 3.0]);
        let delta = buf(vec![1.0]);
        let y = convolve(&x, &delta).unwrap();
        assert_eq!(y.len(), 3);
        for (a, b) in y.samples().iter().zip(x.samples()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn convolve_matches_hand_worked_sum() {
        let y = convolve(&buf(vec![1.0, 1.0]), &buf(vec![1.0, 1.0])).unwrap();
        let expected = [1.0, 2.0, 1.0];
        assert_eq!(y.len(), expected.len());
        for (a, b) in y.samples().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn convolve_matches_direct_oracle_on_random_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_signal(&mut rng, 4096);
        let h = random_signal(&mut rng, 1024);
        let fast = overlap_add(&x, &h);
        let slow = convolve_direct(&x, &h);
        let scale = slow.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() / scale <= 1e-6);
        }
    }

    #[test]
    fn convolve_commutes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = buf(random_signal(&mut rng, 300));
        let h = buf(random_signal(&mut rng, 37));
        let a = convolve(&x, &h).unwrap();
        let b = convolve(&h, &x).unwrap();
        let scale = a.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (p, q) in a.samples().iter().zip(b.samples()) {
            assert!((p - q).abs() / scale <= 1e-6);
        }
    }

    #[test]
    fn convolve_rejects_bad_inputs() {
        let x = buf(vec![1.0]);
        let other_rate = AudioBuffer::new(vec![1.0], 8_000).unwrap();
        assert!(matches!(
            convolve(&x, &other_rate),
            Err(Error::SampleRateMismatch { .. })
        ));
        let empty = buf(vec![]);
        assert!(matches!(convolve(&x, &empty), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn scale_is_linear() {
        let x = buf(vec![1.0, -2.0]);
        let y = scale(&x, 0.5).unwrap();
        assert_eq!(y.samples(), &[0.5, -1.0]);
        let identity = scale(&x, 1.0).unwrap();
        assert_eq!(identity.samples(), x.samples());
        let zero = scale(&x, 0.0).unwrap();
        assert!(zero.samples().iter().all(|&s| s == 0.0));
        assert_eq!(zero.len(), x.len());
        assert!(scale(&x, f64::NAN).is_err());
    }

    #[test]
    fn speech_encoder_plan_downsamples_by_240() {
        let plan = LayerPlan::speech_encoder();
        let (_, factor) = conv_plan_output_len(&plan, SEGMENT_SAMPLES).unwrap();
        assert_eq!(factor, 240);
        let (out, _) = conv_plan_output_len(&plan, SEGMENT_SAMPLES).unwrap();
        assert_eq!(out, SEGMENT_SAMPLES / 240);
    }

    #[test]
    fn rir_encoder_plan_downsamples_by_900() {
        let plan = LayerPlan::rir_encoder();
        let (out, factor) = conv_plan_output_len(&plan, SEGMENT_SAMPLES).unwrap();
        assert_eq!(factor, 900);
        assert_eq!(out, 16);
    }

    #[test]
    fn plan_rejects_input_shorter_than_receptive_field() {
        let plan = LayerPlan::rir_encoder();
        assert!(matches!(
            conv_plan_output_len(&plan, 899),
            Err(Error::InputTooShort { .. })
        ));
    }

    #[test]
    fn plan_rejects_zero_stride() {
        let layers = vec![ConvLayer {
            kernel_len: 3,
            stride: 0,
            out_channels: 1,
        }];
        assert!(LayerPlan::new(layers).is_err());
    }
}

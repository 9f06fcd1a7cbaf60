//! Room acoustics toolkit.
//!
//! The crate covers the deterministic core of audio-visual room-impulse-
//! response estimation pipelines:
//!
//! - reverberant-speech synthesis by FFT convolution ([`signal`])
//! - room-acoustic metrics: T60, EDT, DRR, EDC, early/late MSE ([`acoustics`])
//! - multi-resolution mel/STFT training losses ([`losses`], [`spectral`])
//! - a residual vector quantizer with EMA-trained codebooks ([`rvq`])
//! - geometry/material feature maps from segmentation + depth ([`geomat`])
//! - an embedding datastore with cosine retrieval and late-reverberation
//!   splicing ([`store`])
//! - an image-source shoebox simulator for ground-truth RIRs ([`sim`])
//!
//! All audio is mono 16 kHz; see [`signal::WORKING_SAMPLE_RATE`].

pub mod acoustics;
pub mod blob;
pub mod error;
pub mod geomat;
pub mod losses;
pub mod rvq;
pub mod signal;
pub mod sim;
pub mod spectral;
pub mod store;
pub mod wav;

pub use error::{Error, Result};

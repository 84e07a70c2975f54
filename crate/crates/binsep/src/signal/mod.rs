//! Deterministic audio primitives: waveform containers, WAV file I/O,
//! direct convolution, FFT, and STFT framing.
//!
//! Everything here is a pure function on immutable inputs and safe to call
//! from multiple threads. There is deliberately no resampler: inputs must
//! already be at the working rate and mismatches are hard errors.

mod fft;
mod stft;
mod wav;

pub use fft::{irfft, rfft, ComplexSpectrum};
pub use stft::{hann_window, stft, stft_frame_count, SpectrogramFrame};
pub use wav::{
    read_binaural, read_mono, read_wav, write_wav, AudioData, WavEncoding, WavWriteInfo,
};

use crate::error::{Error, Result};

/// Sampled audio, mono. Samples are dimensionless amplitudes, nominally in
/// `[-1, 1]`; the working precision is `f64` throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        assert!(sample_rate > 0, "sample_rate must be positive");
        Waveform {
            samples,
            sample_rate,
        }
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Waveform::new(vec![0.0; len], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Sum of squared samples.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum()
    }

    pub fn scale(&self, gain: f64) -> Waveform {
        Waveform::new(
            self.samples.iter().map(|x| x * gain).collect(),
            self.sample_rate,
        )
    }

    pub fn truncated(&self, len: usize) -> Waveform {
        Waveform::new(self.samples[..len.min(self.len())].to_vec(), self.sample_rate)
    }

    /// True if every sample is finite.
    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|x| x.is_finite())
    }
}

/// Left/right pair of equal-length waveforms at one sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct BinauralSignal {
    pub left: Waveform,
    pub right: Waveform,
}

impl BinauralSignal {
    pub fn new(left: Waveform, right: Waveform) -> Result<Self> {
        if left.len() != right.len() {
            return Err(Error::shape(format!(
                "binaural channels differ in length: {} vs {}",
                left.len(),
                right.len()
            )));
        }
        if left.sample_rate != right.sample_rate {
            return Err(Error::shape(format!(
                "binaural channels differ in rate: {} vs {}",
                left.sample_rate, right.sample_rate
            )));
        }
        Ok(BinauralSignal { left, right })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        BinauralSignal {
            left: Waveform::zeros(len, sample_rate),
            right: Waveform::zeros(len, sample_rate),
        }
    }

    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        self.left.sample_rate
    }

    pub fn truncated(&self, len: usize) -> BinauralSignal {
        BinauralSignal {
            left: self.left.truncated(len),
            right: self.right.truncated(len),
        }
    }

    /// Copy of the sample range `[start, end)` from both channels.
    pub fn slice(&self, start: usize, end: usize) -> BinauralSignal {
        let fs = self.sample_rate();
        BinauralSignal {
            left: Waveform::new(self.left.samples[start..end].to_vec(), fs),
            right: Waveform::new(self.right.samples[start..end].to_vec(), fs),
        }
    }

    pub fn scale(&self, gain: f64) -> BinauralSignal {
        BinauralSignal {
            left: self.left.scale(gain),
            right: self.right.scale(gain),
        }
    }

    /// Element-wise sum. Lengths and rates must match.
    pub fn add(&self, other: &BinauralSignal) -> Result<BinauralSignal> {
        if self.len() != other.len() || self.sample_rate() != other.sample_rate() {
            return Err(Error::shape("binaural add: length or rate mismatch"));
        }
        let sum = |a: &Waveform, b: &Waveform| {
            Waveform::new(
                a.samples
                    .iter()
                    .zip(&b.samples)
                    .map(|(x, y)| x + y)
                    .collect(),
                a.sample_rate,
            )
        };
        Ok(BinauralSignal {
            left: sum(&self.left, &other.left),
            right: sum(&self.right, &other.right),
        })
    }

    /// Total energy over both channels.
    pub fn energy(&self) -> f64 {
        self.left.energy() + self.right.energy()
    }
}

/// Full-support linear convolution: `y[n] = sum_k x[k] * h[n-k]`,
/// output length `x.len() + h.len() - 1`.
pub fn convolve_full(x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() || h.is_empty() {
        return Err(Error::invalid("convolve_full: empty input"));
    }
    let mut y = vec![0.0; x.len() + h.len() - 1];
    // Accumulate shifted copies of x; the inner loop runs over contiguous
    // slices so it vectorizes.
    for (k, &hk) in h.iter().enumerate() {
        if hk == 0.0 {
            continue;
        }
        for (yi, &xi) in y[k..k + x.len()].iter_mut().zip(x) {
            *yi += hk * xi;
        }
    }
    Ok(y)
}

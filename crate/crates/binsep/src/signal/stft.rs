//! Short-time Fourier analysis with centered frames and reflect padding.

use num_complex::Complex;

use super::fft::{next_pow2, rfft, ComplexSpectrum};
use crate::error::{Error, Result};

/// One analysis frame: the one-sided spectrum of the window centered on
/// sample `center` of the unpadded signal.
#[derive(Debug, Clone)]
pub struct SpectrogramFrame {
    pub center: usize,
    pub spectrum: ComplexSpectrum,
}

/// Periodic Hann window, `w[i] = 0.5 - 0.5 cos(2 pi i / n)`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Number of centered frames for a length-`len` signal: `ceil(len / hop)`.
pub fn stft_frame_count(len: usize, hop: usize) -> usize {
    assert!(hop > 0);
    len.div_ceil(hop)
}

/// Index into `[0, len)` by reflecting at the boundaries without repeating
/// the edge sample (so `[a b c]` extends to `... c b | a b c | b a ...`).
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

/// Centered STFT: frame `f` covers `[f*hop - n_fft/2, f*hop + n_fft/2)` of
/// the reflect-padded signal, Hann-windowed. `n_fft` must be a power of two.
pub fn stft(samples: &[f64], n_fft: usize, hop: usize) -> Result<Vec<SpectrogramFrame>> {
    if samples.is_empty() {
        return Err(Error::invalid("stft: empty input"));
    }
    if hop == 0 {
        return Err(Error::invalid("stft: hop must be positive"));
    }
    if n_fft < 2 || next_pow2(n_fft) != n_fft {
        return Err(Error::invalid(format!(
            "stft: n_fft {n_fft} must be a power of two >= 2"
        )));
    }
    let window = hann_window(n_fft);
    let half = (n_fft / 2) as isize;
    let n_frames = stft_frame_count(samples.len(), hop);
    let mut frames = Vec::with_capacity(n_frames);
    let mut block = vec![0.0; n_fft];
    for f in 0..n_frames {
        let center = (f * hop) as isize;
        for (i, slot) in block.iter_mut().enumerate() {
            let src = reflect_index(center - half + i as isize, samples.len());
            *slot = samples[src] * window[i];
        }
        frames.push(SpectrogramFrame {
            center: center as usize,
            spectrum: rfft(&block, n_fft)?,
        });
    }
    Ok(frames)
}

/// Phase factor `exp(-i 2 pi k d / n_fft)` of a `d`-sample delay at bin `k`.
pub fn delay_phase(k: usize, delay_samples: f64, n_fft: usize) -> Complex<f64> {
    let ang = -2.0 * std::f64::consts::PI * k as f64 * delay_samples / n_fft as f64;
    Complex::new(ang.cos(), ang.sin())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_index_small_example() {
        // x = [a b c d], extension: ... c b | a b c d | c b ...
        let got: Vec<usize> = (-2..6).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![2, 1, 0, 1, 2, 3, 2, 1]);
    }

    #[test]
    fn frame_count_is_ceil() {
        assert_eq!(stft_frame_count(64, 8), 8);
        assert_eq!(stft_frame_count(65, 8), 9);
        assert_eq!(stft_frame_count(1, 8), 1);
    }

    #[test]
    fn hann_window_endpoints_and_peak() {
        let w = hann_window(8);
        assert!(w[0].abs() <= 1e-15);
        assert!((w[4] - 1.0).abs() <= 1e-15);
        // Periodic window: w[n] would close the circle back at zero.
        assert!((w[1] - w[7]).abs() <= 1e-15);
    }

    #[test]
    fn sinusoid_at_bin_frequency_concentrates_energy() {
        let n_fft = 64;
        let bin = 5;
        let len = 256;
        let x: Vec<f64> = (0..len)
            .map(|t| (2.0 * std::f64::consts::PI * bin as f64 * t as f64 / n_fft as f64).cos())
            .collect();
        let frames = stft(&x, n_fft, 8).unwrap();
        // Pick an interior frame clear of the reflected edges.
        let frame = &frames[16];
        let mags: Vec<f64> = frame.spectrum.bins.iter().map(|c| c.norm()).collect();
        let peak = mags
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(peak, bin);
        // Hann leakage is confined to adjacent bins.
        for (k, m) in mags.iter().enumerate() {
            if k.abs_diff(bin) > 1 {
                assert!(*m < 1e-9 * mags[bin], "bin {k} leak {m}");
            }
        }
    }

    #[test]
    fn interchannel_phase_matches_integer_delay() {
        // Right channel is the left delayed by 3 samples; interior frames
        // must show the analytic delay phase at every energetic bin.
        let n_fft = 64;
        let d = 3usize;
        let len = 300;
        let src: Vec<f64> = (0..len + d)
            .map(|t| {
                (2.0 * std::f64::consts::PI * 7.0 * t as f64 / n_fft as f64).sin()
                    + 0.5 * (2.0 * std::f64::consts::PI * 12.0 * t as f64 / n_fft as f64).cos()
            })
            .collect();
        let left: Vec<f64> = src[d..d + len].to_vec();
        let right: Vec<f64> = src[..len].to_vec();
        let fl = stft(&left, n_fft, 8).unwrap();
        let fr = stft(&right, n_fft, 8).unwrap();
        for f in 10..20 {
            for k in [7usize, 12usize] {
                let l = fl[f].spectrum.bins[k];
                let r = fr[f].spectrum.bins[k];
                let got = (r * l.conj()) / (r.norm() * l.norm());
                let want = delay_phase(k, d as f64, n_fft);
                assert!((got - want).norm() <= 1e-6, "frame {f} bin {k}");
            }
        }
    }
}

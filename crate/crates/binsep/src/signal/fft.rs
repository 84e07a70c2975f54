//! Iterative radix-2 FFT over `num_complex::Complex<f64>` plus real-input
//! wrappers. Sizes must be powers of two; callers zero-pad.

use num_complex::Complex;

use crate::error::{Error, Result};

/// One-sided spectrum of a real block of length `n_fft`: bins `0..=n_fft/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum {
    pub bins: Vec<Complex<f64>>,
    pub n_fft: usize,
}

impl ComplexSpectrum {
    pub fn num_bins(&self) -> usize {
        self.bins.len()
    }
}

fn is_pow2(n: usize) -> bool {
    n != 0 && n & (n - 1) == 0
}

/// In-place decimation-in-time FFT. `inverse` applies the conjugate kernel
/// without the 1/n factor; `ifft` adds it.
fn fft_in_place(buf: &mut [Complex<f64>], inverse: bool) {
    let n = buf.len();
    debug_assert!(is_pow2(n));
    if n <= 1 {
        return;
    }
    // Bit-reversal permutation.
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * std::f64::consts::PI / len as f64;
        let wlen = Complex::new(ang.cos(), ang.sin());
        for start in (0..n).step_by(len) {
            let mut w = Complex::new(1.0, 0.0);
            for k in 0..len / 2 {
                let a = buf[start + k];
                let b = buf[start + k + len / 2] * w;
                buf[start + k] = a + b;
                buf[start + k + len / 2] = a - b;
                w *= wlen;
            }
        }
        len <<= 1;
    }
}

/// Forward complex FFT. Length must be a power of two.
pub fn fft(input: &[Complex<f64>]) -> Result<Vec<Complex<f64>>> {
    if !is_pow2(input.len()) {
        return Err(Error::invalid(format!(
            "fft length {} is not a power of two",
            input.len()
        )));
    }
    let mut buf = input.to_vec();
    fft_in_place(&mut buf, false);
    Ok(buf)
}

/// Inverse complex FFT with 1/n normalization.
pub fn ifft(input: &[Complex<f64>]) -> Result<Vec<Complex<f64>>> {
    if !is_pow2(input.len()) {
        return Err(Error::invalid(format!(
            "ifft length {} is not a power of two",
            input.len()
        )));
    }
    let mut buf = input.to_vec();
    fft_in_place(&mut buf, true);
    let scale = 1.0 / buf.len() as f64;
    for v in &mut buf {
        *v *= scale;
    }
    Ok(buf)
}

/// Real-input FFT. `input.len()` must equal `n_fft`, a power of two.
/// Returns the `n_fft/2 + 1` non-redundant bins.
pub fn rfft(input: &[f64], n_fft: usize) -> Result<ComplexSpectrum> {
    if input.len() != n_fft {
        return Err(Error::shape(format!(
            "rfft: input length {} != n_fft {}",
            input.len(),
            n_fft
        )));
    }
    let full: Vec<Complex<f64>> = input.iter().map(|&x| Complex::new(x, 0.0)).collect();
    let out = fft(&full)?;
    Ok(ComplexSpectrum {
        bins: out[..n_fft / 2 + 1].to_vec(),
        n_fft,
    })
}

/// Inverse of [`rfft`]: reconstructs the length-`n_fft` real block. The
/// redundant upper half is synthesized by conjugate symmetry, so any
/// imaginary parts implied by asymmetric edits are discarded.
pub fn irfft(spectrum: &ComplexSpectrum) -> Result<Vec<f64>> {
    let n = spectrum.n_fft;
    if !is_pow2(n) || spectrum.bins.len() != n / 2 + 1 {
        return Err(Error::shape(format!(
            "irfft: expected {} bins for n_fft {}, got {}",
            n / 2 + 1,
            n,
            spectrum.bins.len()
        )));
    }
    let mut full = vec![Complex::new(0.0, 0.0); n];
    full[..n / 2 + 1].copy_from_slice(&spectrum.bins);
    for k in 1..n / 2 {
        full[n - k] = spectrum.bins[k].conj();
    }
    let out = ifft(&full)?;
    Ok(out.into_iter().map(|c| c.re).collect())
}

/// Smallest power of two >= `n` (and >= 1).
pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// O(n^2) DFT straight from the definition.
    fn naive_dft(input: &[Complex<f64>]) -> Vec<Complex<f64>> {
        let n = input.len();
        (0..n)
            .map(|k| {
                let mut acc = Complex::new(0.0, 0.0);
                for (t, &x) in input.iter().enumerate() {
                    let ang = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                    acc += x * Complex::new(ang.cos(), ang.sin());
                }
                acc
            })
            .collect()
    }

    #[test]
    fn fft_matches_naive_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &n in &[1usize, 2, 4, 8, 64, 256] {
            let input: Vec<Complex<f64>> = (0..n)
                .map(|_| Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let got = fft(&input).unwrap();
            let want = naive_dft(&input);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).norm() <= 1e-10, "n={n}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn fft_rejects_non_pow2() {
        let input = vec![Complex::new(0.0, 0.0); 12];
        assert!(fft(&input).is_err());
    }

    #[test]
    fn ifft_inverts_fft() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let input: Vec<Complex<f64>> = (0..128)
            .map(|_| Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let back = ifft(&fft(&input).unwrap()).unwrap();
        for (a, b) in input.iter().zip(&back) {
            assert!((a - b).norm() <= 1e-12);
        }
    }

    #[test]
    fn rfft_matches_naive_dft_on_real_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let spec = rfft(&x, 64).unwrap();
        let full: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        let want = naive_dft(&full);
        assert_eq!(spec.num_bins(), 33);
        for (k, bin) in spec.bins.iter().enumerate() {
            assert!((bin - want[k]).norm() <= 1e-10);
        }
    }

    #[test]
    fn irfft_round_trips_real_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let x: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let back = irfft(&rfft(&x, 256).unwrap()).unwrap();
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn parseval_holds_for_one_sided_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 128usize;
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let spec = rfft(&x, n).unwrap();
        let time_energy: f64 = x.iter().map(|v| v * v).sum();
        // One-sided sum: DC and Nyquist count once, interior bins twice.
        let mut freq_energy = spec.bins[0].norm_sqr() + spec.bins[n / 2].norm_sqr();
        for bin in &spec.bins[1..n / 2] {
            freq_energy += 2.0 * bin.norm_sqr();
        }
        freq_energy /= n as f64;
        assert!(
            (time_energy - freq_energy).abs() <= 1e-10 * time_energy.max(1.0),
            "{time_energy} vs {freq_energy}"
        );
    }

    #[test]
    fn next_pow2_covers_edges() {
        assert_eq!(next_pow2(0), 1);
        assert_eq!(next_pow2(1), 1);
        assert_eq!(next_pow2(2), 2);
        assert_eq!(next_pow2(3), 4);
        assert_eq!(next_pow2(1000), 1024);
    }
}

//! Interaural time estimation via GCC-PHAT.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::signal::{irfft, rfft, BinauralSignal, ComplexSpectrum, Waveform};

/// GCC-PHAT parameters. These are fixed choices, reported alongside
/// results: FFT size is the next power of two at or above twice the signal
/// length, the PHAT magnitude floor is 1e-12, and the peak search is
/// confined to `max_lag_s` with `upsample`x spectral interpolation plus a
/// final parabolic refinement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GccConfig {
    pub max_lag_s: f64,
    pub upsample: usize,
}

impl Default for GccConfig {
    fn default() -> Self {
        GccConfig {
            max_lag_s: 1e-3,
            upsample: 16,
        }
    }
}

const PHAT_FLOOR: f64 = 1e-12;
const MIN_LEN: usize = 256;

/// Time difference of arrival between the two channels, in seconds.
/// Positive means the right channel lags the left (source on the left).
pub fn gcc_phat_tdoa(left: &Waveform, right: &Waveform, config: &GccConfig) -> Result<f64> {
    if left.len() != right.len() || left.sample_rate != right.sample_rate {
        return Err(Error::shape("gcc_phat_tdoa: channel length or rate mismatch"));
    }
    if left.len() < MIN_LEN {
        return Err(Error::invalid(format!(
            "gcc_phat_tdoa: need at least {MIN_LEN} samples, got {}",
            left.len()
        )));
    }
    if config.upsample < 1 {
        return Err(Error::invalid("gcc_phat_tdoa: upsample must be >= 1"));
    }
    if config.max_lag_s <= 0.0 {
        return Err(Error::invalid("gcc_phat_tdoa: max_lag_s must be positive"));
    }
    if left.energy() == 0.0 || right.energy() == 0.0 {
        return Err(Error::UndefinedMetric("itd: silent channel"));
    }
    let fs = left.sample_rate as f64;
    let t = left.len();
    let n_fft = (2 * t).next_power_of_two();
    let mut xl = left.samples.clone();
    xl.resize(n_fft, 0.0);
    let mut xr = right.samples.clone();
    xr.resize(n_fft, 0.0);
    let sl = rfft(&xl, n_fft)?;
    let sr = rfft(&xr, n_fft)?;

    // PHAT weighting: keep only the cross-spectrum phase.
    let cross: Vec<Complex<f64>> = sr
        .bins
        .iter()
        .zip(&sl.bins)
        .map(|(r, l)| {
            let p = r * l.conj();
            p / p.norm().max(PHAT_FLOOR)
        })
        .collect();

    // Zero-pad the spectrum for upsample-times finer correlation samples.
    // The Nyquist bin splits in half when it moves to the interior.
    let n_up = n_fft * config.upsample;
    let mut up = vec![Complex::new(0.0, 0.0); n_up / 2 + 1];
    up[..n_fft / 2].copy_from_slice(&cross[..n_fft / 2]);
    up[n_fft / 2] = if config.upsample == 1 {
        cross[n_fft / 2]
    } else {
        cross[n_fft / 2] * 0.5
    };
    let corr = irfft(&ComplexSpectrum {
        bins: up,
        n_fft: n_up,
    })?;

    // Peak search over lags within the window; index wraps for negatives.
    let max_steps_f = config.max_lag_s * fs * config.upsample as f64;
    let max_steps = (max_steps_f.floor() as isize).clamp(1, (n_up / 2 - 1) as isize);
    let at = |lag: isize| corr[lag.rem_euclid(n_up as isize) as usize];
    let mut best_lag = 0isize;
    let mut best_val = f64::NEG_INFINITY;
    for lag in -max_steps..=max_steps {
        let v = at(lag);
        if v > best_val {
            best_val = v;
            best_lag = lag;
        }
    }
    // Parabolic refinement on the upsampled grid.
    let (y1, y2, y3) = (at(best_lag - 1), best_val, at(best_lag + 1));
    let denom = y1 - 2.0 * y2 + y3;
    let delta = if denom.abs() < 1e-30 {
        0.0
    } else {
        (0.5 * (y1 - y3) / denom).clamp(-0.5, 0.5)
    };
    Ok((best_lag as f64 + delta) / (config.upsample as f64 * fs))
}

/// `|ITD(target) - ITD(estimate)|` in microseconds, both measured with the
/// same GCC-PHAT configuration. A common delay on both estimate channels
/// cancels out.
pub fn itd_error(
    target: &BinauralSignal,
    estimate: &BinauralSignal,
    config: &GccConfig,
) -> Result<f64> {
    let t = gcc_phat_tdoa(&target.left, &target.right, config)?;
    let e = gcc_phat_tdoa(&estimate.left, &estimate.right, config)?;
    Ok((t - e).abs() * 1e6)
}

/// Start/end of the most energetic `win_len` span (summed channels,
/// quarter-window hop). Returns the whole range when the signal is shorter.
pub fn dominant_energy_window(signal: &BinauralSignal, win_len: usize) -> (usize, usize) {
    let t = signal.len();
    if t <= win_len {
        return (0, t);
    }
    let power: Vec<f64> = (0..t)
        .map(|i| {
            let (l, r) = (signal.left.samples[i], signal.right.samples[i]);
            l * l + r * r
        })
        .collect();
    let mut prefix = vec![0.0; t + 1];
    for i in 0..t {
        prefix[i + 1] = prefix[i] + power[i];
    }
    let hop = (win_len / 4).max(1);
    let mut best = (0usize, f64::NEG_INFINITY);
    let mut start = 0;
    while start + win_len <= t {
        let e = prefix[start + win_len] - prefix[start];
        if e > best.1 {
            best = (start, e);
        }
        start += hop;
    }
    (best.0, best.0 + win_len)
}

/// [`itd_error`] computed on the target's dominant-energy window, applied
/// identically to both pairs. Bounds the transform size on long signals and
/// sidesteps silent gaps in bursty material.
pub fn itd_error_windowed(
    target: &BinauralSignal,
    estimate: &BinauralSignal,
    config: &GccConfig,
    win_len: usize,
) -> Result<f64> {
    if estimate.len() != target.len() {
        return Err(Error::shape("itd_error_windowed: length mismatch"));
    }
    let (a, b) = dominant_energy_window(target, win_len);
    itd_error(&target.slice(a, b), &estimate.slice(a, b), config)
}

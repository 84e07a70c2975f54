//! Synthetic speech-like test sources.
//!
//! Amplitude-modulated harmonic complexes gated by random on/off bursts:
//! pitched like voices, bursty like speech, and license-free. Real speech
//! pools plug in at the dataset layer instead when available.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::signal::Waveform;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceModel {
    pub f0_range_hz: (f64, f64),
    pub burst_on_range_s: (f64, f64),
    pub burst_off_range_s: (f64, f64),
    pub am_rate_range_hz: (f64, f64),
    pub am_depth: f64,
    pub ramp_s: f64,
    pub rms: f64,
}

impl Default for SourceModel {
    fn default() -> Self {
        SourceModel {
            f0_range_hz: (100.0, 300.0),
            burst_on_range_s: (0.15, 0.4),
            burst_off_range_s: (0.05, 0.2),
            am_rate_range_hz: (2.0, 8.0),
            am_depth: 0.4,
            ramp_s: 0.01,
            rms: 0.08,
        }
    }
}

/// Random on/off gate with raised-cosine edges, starting in the on state so
/// every source has energy.
fn burst_gate<R: Rng + ?Sized>(
    len: usize,
    fs: f64,
    model: &SourceModel,
    rng: &mut R,
) -> Vec<f64> {
    let mut gate = vec![0.0; len];
    let ramp = ((model.ramp_s * fs) as usize).max(1);
    let mut t = 0usize;
    let mut on = true;
    while t < len {
        let range = if on {
            model.burst_on_range_s
        } else {
            model.burst_off_range_s
        };
        let dur = ((rng.gen_range(range.0..range.1) * fs) as usize).max(2 * ramp);
        if on {
            let end = (t + dur).min(len);
            for (k, slot) in gate[t..end].iter_mut().enumerate() {
                let up = 0.5 - 0.5 * (std::f64::consts::PI * k.min(ramp) as f64 / ramp as f64).cos();
                let remaining = dur.saturating_sub(k + 1);
                let down = 0.5
                    - 0.5
                        * (std::f64::consts::PI * remaining.min(ramp) as f64 / ramp as f64).cos();
                *slot = up.min(down).min(1.0).max(0.0) * 2.0;
            }
        }
        t += dur;
        on = !on;
    }
    // The ramp expression peaks at 0.5 * 2.0 = 1.0 once past the edges.
    for g in &mut gate {
        *g = g.min(1.0);
    }
    gate
}

/// Synthesize a gated, amplitude-modulated harmonic complex of `len`
/// samples, normalized to the model RMS. Deterministic in the RNG state.
pub fn synth_burst_source<R: Rng + ?Sized>(
    len: usize,
    sample_rate: u32,
    model: &SourceModel,
    rng: &mut R,
) -> Waveform {
    assert!(len > 0, "synth_burst_source: zero length");
    let fs = sample_rate as f64;
    let f0 = rng.gen_range(model.f0_range_hz.0..model.f0_range_hz.1);
    let am_rate = rng.gen_range(model.am_rate_range_hz.0..model.am_rate_range_hz.1);
    let am_phase = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
    let n_harm = ((0.45 * fs / f0).floor() as usize).max(1);
    let mut buf = vec![0.0; len];
    for h in 1..=n_harm {
        // Rotating phasor per harmonic: one complex multiply per sample.
        let w = 2.0 * std::f64::consts::PI * h as f64 * f0 / fs;
        let (rot_im, rot_re) = w.sin_cos();
        let phase = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
        let (mut im, mut re) = phase.sin_cos();
        let amp = 1.0 / h as f64;
        for slot in buf.iter_mut() {
            *slot += amp * im;
            let nre = re * rot_re - im * rot_im;
            im = re * rot_im + im * rot_re;
            re = nre;
        }
    }
    let gate = burst_gate(len, fs, model, rng);
    for (i, slot) in buf.iter_mut().enumerate() {
        let t = i as f64 / fs;
        let am = 1.0 + model.am_depth * (2.0 * std::f64::consts::PI * am_rate * t + am_phase).sin();
        *slot *= am * gate[i];
    }
    let rms = (buf.iter().map(|x| x * x).sum::<f64>() / len as f64).sqrt();
    if rms > 0.0 {
        let g = model.rms / rms;
        for slot in &mut buf {
            *slot *= g;
        }
    }
    Waveform::new(buf, sample_rate)
}

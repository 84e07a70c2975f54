//! Interaural features for the feature-concatenation variant.

use crate::autodiff::ValueGrid;
use crate::error::{Error, Result};
use crate::signal::stft;

/// STFT window (and FFT size) for the feature spectrograms.
pub const FEATURE_FFT: usize = 256;
/// One-sided bin count.
pub const FEATURE_BINS: usize = FEATURE_FFT / 2 + 1;
/// sin(IPD), cos(IPD), ILD per bin.
pub const FEATURE_CHANNELS: usize = 3 * FEATURE_BINS;

const ILD_MAG_FLOOR: f64 = 1e-8;

/// Per-frame interaural features of `primary` against `secondary`, one
/// column per encoder frame.
///
/// Encoder frame `f` covers samples `[f*hop, f*hop + window)`, so its
/// center is `(f+1)*hop` when `window == 2*hop`; the STFT (also hopped by
/// `hop`, centered, reflect-padded) therefore supplies frame `f+1` as the
/// context window around encoder frame `f`. Feature rows are laid out as
/// `[sin(IPD); cos(IPD); ILD]`, each `FEATURE_BINS` tall. The spectrogram
/// context extends past the encoder window on both sides, which is why
/// this variant cannot run in the causal streaming path.
pub fn ipd_ild_features(
    primary: &[f64],
    secondary: &[f64],
    hop: usize,
    frames: usize,
) -> Result<ValueGrid> {
    if primary.len() != secondary.len() {
        return Err(Error::shape("features: channel lengths differ"));
    }
    if hop == 0 || frames == 0 {
        return Err(Error::invalid("features: zero hop or frame count"));
    }
    let spec_p = stft(primary, FEATURE_FFT, hop)?;
    let spec_s = stft(secondary, FEATURE_FFT, hop)?;
    if spec_p.len() < frames + 1 {
        return Err(Error::shape(format!(
            "features: {} STFT frames cannot cover {frames} encoder frames",
            spec_p.len()
        )));
    }
    let mut out = ValueGrid::zeros(FEATURE_CHANNELS, frames);
    for f in 0..frames {
        let xp = &spec_p[f + 1].spectrum;
        let xs = &spec_s[f + 1].spectrum;
        for k in 0..FEATURE_BINS {
            let (p, s) = (xp.bins[k], xs.bins[k]);
            let ipd = p.im.atan2(p.re) - s.im.atan2(s.re);
            *out.at_mut(k, f) = ipd.sin();
            *out.at_mut(FEATURE_BINS + k, f) = ipd.cos();
            let ratio = p.norm().max(ILD_MAG_FLOOR) / s.norm().max(ILD_MAG_FLOOR);
            *out.at_mut(2 * FEATURE_BINS + k, f) = 10.0 * ratio.log10();
        }
    }
    Ok(out)
}

//! Synthetic head-related impulse responses and on-disk HRIR libraries.
//!
//! The synthetic model is deliberately simple: a spherical-head interaural
//! time difference (Woodworth), realized as windowed-sinc fractional
//! delays, plus a broadband sin-law level difference. It stands in for
//! recorded HRIR sets when none are available; recorded sets load through
//! [`load_hrir_library`].

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{db_to_gain, HrirPair};
use crate::error::{Error, Result};
use crate::signal::{read_wav, write_wav, Waveform, WavEncoding};

/// Parameters of the synthetic spherical-head model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HrirModel {
    pub head_radius_m: f64,
    pub speed_of_sound_mps: f64,
    pub fir_length: usize,
    /// Broadband level difference at 90 degrees, in dB.
    pub ild_slope_db: f64,
}

impl Default for HrirModel {
    fn default() -> Self {
        HrirModel {
            head_radius_m: 0.0875,
            speed_of_sound_mps: 343.0,
            fir_length: 64,
            ild_slope_db: 10.0,
        }
    }
}

impl HrirModel {
    /// Woodworth ITD: `(a/c) * (theta + sin theta)`, positive when the
    /// source is on the left (right ear lags).
    pub fn nominal_itd_s(&self, azimuth_deg: f64) -> f64 {
        let theta = azimuth_deg.to_radians();
        (self.head_radius_m / self.speed_of_sound_mps) * (theta + theta.sin())
    }

    /// Broadband ILD in dB (left power over right): `k * sin theta`.
    pub fn nominal_ild_db(&self, azimuth_deg: f64) -> f64 {
        self.ild_slope_db * azimuth_deg.to_radians().sin()
    }
}

fn sinc(t: f64) -> f64 {
    if t.abs() < 1e-12 {
        1.0
    } else {
        (std::f64::consts::PI * t).sin() / (std::f64::consts::PI * t)
    }
}

/// Windowed-sinc FIR whose peak sits `delay` samples after `center`,
/// scaled by `gain`. The symmetric Hann window keeps the kernel finite
/// while the delays in use (a few samples at most) stay near the flat top.
fn frac_delay_kernel(len: usize, center: f64, delay: f64, gain: f64) -> Vec<f64> {
    let pos = center + delay;
    (0..len)
        .map(|i| {
            let w = 0.5
                - 0.5
                    * (2.0 * std::f64::consts::PI * i as f64 / (len - 1) as f64)
                        .cos();
            gain * w * sinc(i as f64 - pos)
        })
        .collect()
}

/// Synthesize an HRIR pair for a front-hemisphere azimuth. Positive
/// azimuth is toward the left ear: the left channel is advanced and boosted
/// by half the interaural difference, the right delayed and attenuated by
/// the other half. Mirroring the azimuth swaps the channels exactly.
pub fn synth_hrir(azimuth_deg: f64, model: &HrirModel, sample_rate: u32) -> Result<HrirPair> {
    if !(-90.0..=90.0).contains(&azimuth_deg) {
        return Err(Error::invalid(format!(
            "synth_hrir: azimuth {azimuth_deg} outside [-90, 90]"
        )));
    }
    if model.fir_length < 32 {
        return Err(Error::invalid(format!(
            "synth_hrir: fir_length {} < 32",
            model.fir_length
        )));
    }
    let half_delay = 0.5 * model.nominal_itd_s(azimuth_deg) * sample_rate as f64;
    let half_ild = 0.5 * model.nominal_ild_db(azimuth_deg);
    let center = (model.fir_length - 1) as f64 / 2.0;
    let left = frac_delay_kernel(model.fir_length, center, -half_delay, db_to_gain(half_ild));
    let right = frac_delay_kernel(model.fir_length, center, half_delay, db_to_gain(-half_ild));
    HrirPair::new(
        Waveform::new(left, sample_rate),
        Waveform::new(right, sample_rate),
        Some(azimuth_deg),
        format!("synth_az{azimuth_deg:+.1}"),
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct HrirIndexEntry {
    azimuth_deg: f64,
    file: String,
    source_id: String,
}

const INDEX_FILE: &str = "hrir_index.json";

/// Write a set of HRIR pairs as per-position stereo float WAVs plus an
/// index JSON mapping azimuths to files.
pub fn save_hrir_library(dir: &Path, pairs: &[HrirPair]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut index = Vec::with_capacity(pairs.len());
    for (i, pair) in pairs.iter().enumerate() {
        let az = pair.azimuth_deg.ok_or_else(|| {
            Error::invalid(format!("hrir library: pair {i} has no azimuth"))
        })?;
        let file = format!("az{az:+07.2}.wav");
        write_wav(
            &dir.join(&file),
            &[&pair.left.samples, &pair.right.samples],
            pair.left.sample_rate,
            WavEncoding::Float32,
        )?;
        index.push(HrirIndexEntry {
            azimuth_deg: az,
            file,
            source_id: pair.source_id.clone(),
        });
    }
    fs::write(dir.join(INDEX_FILE), serde_json::to_string_pretty(&index)?)?;
    Ok(())
}

/// Load a library written by [`save_hrir_library`] (or assembled by hand
/// with the same index layout), sorted by azimuth.
pub fn load_hrir_library(dir: &Path, expected_rate: Option<u32>) -> Result<Vec<HrirPair>> {
    let text = fs::read_to_string(dir.join(INDEX_FILE))?;
    let index: Vec<HrirIndexEntry> = serde_json::from_str(&text)?;
    let mut pairs = Vec::with_capacity(index.len());
    for entry in &index {
        let audio = read_wav(&dir.join(&entry.file))?;
        if let Some(rate) = expected_rate {
            if audio.sample_rate != rate {
                return Err(Error::RateMismatch {
                    found: audio.sample_rate,
                    expected: rate,
                });
            }
        }
        let sig = audio.into_binaural()?;
        pairs.push(HrirPair::new(
            sig.left,
            sig.right,
            Some(entry.azimuth_deg),
            entry.source_id.clone(),
        )?);
    }
    pairs.sort_by(|a, b| a.azimuth_deg.unwrap().total_cmp(&b.azimuth_deg.unwrap()));
    Ok(pairs)
}

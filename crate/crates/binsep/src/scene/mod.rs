//! Binaural scene construction: HRIR spatialization, level and noise
//! control, and reproducible dataset synthesis.

mod dataset;
mod hrir;
mod sources;

pub use dataset::{
    load_manifest, load_scene_audio, render_scene, synth_dataset, DatasetConfig, ManifestRecord,
    SourceKind, MANIFEST_FILE,
};
pub use hrir::{load_hrir_library, save_hrir_library, synth_hrir, HrirModel};
pub use sources::{synth_burst_source, SourceModel};

use rand::Rng;

use crate::error::{Error, Result};
use crate::metrics::{dominant_energy_window, gcc_phat_tdoa, ild_db, GccConfig};
use crate::signal::{convolve_full, BinauralSignal, Waveform};

/// Window length for measuring a target's spatial cues. Bounds the GCC
/// transform size on long signals; the most energetic span is used.
pub(crate) const CUE_WINDOW: usize = 4096;

/// A left/right impulse response pair for one source position.
#[derive(Debug, Clone, PartialEq)]
pub struct HrirPair {
    pub left: Waveform,
    pub right: Waveform,
    pub azimuth_deg: Option<f64>,
    pub source_id: String,
}

impl HrirPair {
    pub fn new(
        left: Waveform,
        right: Waveform,
        azimuth_deg: Option<f64>,
        source_id: String,
    ) -> Result<Self> {
        if left.len() != right.len() || left.sample_rate != right.sample_rate {
            return Err(Error::shape("hrir: channel length or rate mismatch"));
        }
        if left.is_empty() {
            return Err(Error::invalid("hrir: empty impulse response"));
        }
        if !left.is_finite() || !right.is_finite() {
            return Err(Error::NonFinite("hrir: non-finite taps".into()));
        }
        Ok(HrirPair {
            left,
            right,
            azimuth_deg,
            source_id,
        })
    }

    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }
}

/// How mono noise material is turned into two channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Independent realizations per channel at equal level.
    DecorrelatedDiotic,
    /// One realization rendered through a random-azimuth HRIR.
    Spatialized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub target_snr_db: f64,
    pub mode: NoiseMode,
}

/// One source slot: its position and pre-render level offset.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSourceSpec {
    pub hrir: HrirPair,
    pub level_offset_db: f64,
}

/// Recipe for one scene. Rendering is fully determined by the spec, the
/// resolved source waveforms, and the RNG state handed to [`mix_scene`].
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub sources: Vec<SceneSourceSpec>,
    pub noise: Option<NoiseSpec>,
    pub seed: u64,
}

/// A rendered scene: the mixture, per-source binaural targets, and the
/// spatial cues measured from those targets.
#[derive(Debug, Clone)]
pub struct SceneInstance {
    pub mixture: BinauralSignal,
    pub targets: Vec<BinauralSignal>,
    pub noise: Option<BinauralSignal>,
    pub spec: SceneSpec,
    pub true_itd_us: Vec<f64>,
    pub true_ild_db: Vec<f64>,
}

pub(crate) fn db_to_gain(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// Render a mono source through an HRIR pair. Output length is
/// `source.len() + hrir.len() - 1` per channel.
pub fn spatialize(source: &Waveform, hrir: &HrirPair) -> Result<BinauralSignal> {
    if source.sample_rate != hrir.left.sample_rate {
        return Err(Error::RateMismatch {
            found: source.sample_rate,
            expected: hrir.left.sample_rate,
        });
    }
    if source.is_empty() {
        return Err(Error::invalid("spatialize: empty source"));
    }
    let fs = source.sample_rate;
    BinauralSignal::new(
        Waveform::new(convolve_full(&source.samples, &hrir.left.samples)?, fs),
        Waveform::new(convolve_full(&source.samples, &hrir.right.samples)?, fs),
    )
}

/// Mix noise into a speech mixture at a target SNR. SNR is defined on the
/// summed two-channel powers. Returns the noisy mixture and the scaled
/// noise actually added. `target_snr_db = +inf` disables the noise path.
pub fn add_noise_at_snr(
    speech: &BinauralSignal,
    noise: &BinauralSignal,
    target_snr_db: f64,
) -> Result<(BinauralSignal, BinauralSignal)> {
    if target_snr_db == f64::INFINITY {
        return Ok((
            speech.clone(),
            BinauralSignal::zeros(speech.len(), speech.sample_rate()),
        ));
    }
    if noise.len() != speech.len() || noise.sample_rate() != speech.sample_rate() {
        return Err(Error::shape("add_noise_at_snr: noise/speech shape mismatch"));
    }
    let p_speech = speech.energy();
    let p_noise = noise.energy();
    if p_noise == 0.0 {
        return Err(Error::DegenerateSource("noise has zero power".into()));
    }
    if p_speech == 0.0 {
        return Err(Error::DegenerateSource("speech mixture has zero power".into()));
    }
    let scale = (p_speech / (p_noise * 10f64.powf(target_snr_db / 10.0))).sqrt();
    let rendered = noise.scale(scale);
    Ok((speech.add(&rendered)?, rendered))
}

/// Crop (or cyclically loop) `material` to exactly `len` samples starting
/// at an RNG-chosen offset.
fn crop_or_loop<R: Rng + ?Sized>(material: &Waveform, len: usize, rng: &mut R) -> Waveform {
    let m = material.len();
    let start = rng.gen_range(0..m);
    let mut out = Vec::with_capacity(len);
    if m >= len {
        let start = if start + len <= m { start } else { m - len };
        out.extend_from_slice(&material.samples[start..start + len]);
    } else {
        for i in 0..len {
            out.push(material.samples[(start + i) % m]);
        }
    }
    Waveform::new(out, material.sample_rate)
}

fn white_noise<R: Rng + ?Sized>(len: usize, sample_rate: u32, rng: &mut R) -> Waveform {
    Waveform::new(
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        sample_rate,
    )
}

/// Render a full scene. `sources` must align one-to-one with
/// `spec.sources`; `noise_material` supplies mono noise for the noise path
/// (white noise is generated when absent). Cue measurement uses GCC-PHAT
/// and the energy-ratio ILD from the metrics module.
pub fn mix_scene<R: Rng + ?Sized>(
    spec: &SceneSpec,
    sources: &[Waveform],
    noise_material: Option<&Waveform>,
    rng: &mut R,
) -> Result<SceneInstance> {
    if spec.sources.is_empty() {
        return Err(Error::invalid("mix_scene: no sources"));
    }
    if spec.sources.len() != sources.len() {
        return Err(Error::shape(format!(
            "mix_scene: {} source specs but {} waveforms",
            spec.sources.len(),
            sources.len()
        )));
    }
    for i in 0..spec.sources.len() {
        for j in i + 1..spec.sources.len() {
            if spec.sources[i].hrir.left == spec.sources[j].hrir.left
                && spec.sources[i].hrir.right == spec.sources[j].hrir.right
            {
                return Err(Error::invalid(format!(
                    "mix_scene: sources {i} and {j} share an HRIR position"
                )));
            }
        }
    }
    let fs = sources[0].sample_rate;
    let mut rendered = Vec::with_capacity(sources.len());
    for (slot, source) in spec.sources.iter().zip(sources) {
        let scaled = source.scale(db_to_gain(slot.level_offset_db));
        if scaled.energy() == 0.0 {
            return Err(Error::DegenerateSource(format!(
                "source '{}' has zero power after level offset",
                slot.hrir.source_id
            )));
        }
        rendered.push(spatialize(&scaled, &slot.hrir)?);
    }
    // Min-length truncation keeps every emitted signal the same length.
    let t = rendered.iter().map(|b| b.len()).min().unwrap();
    let targets: Vec<BinauralSignal> = rendered.iter().map(|b| b.truncated(t)).collect();
    let mut mixture = targets[0].clone();
    for target in &targets[1..] {
        mixture = mixture.add(target)?;
    }

    let mut noise_snr_rendered = None;
    if let Some(noise_spec) = &spec.noise {
        let noise_bin = match noise_spec.mode {
            NoiseMode::DecorrelatedDiotic => {
                let l = match noise_material {
                    Some(m) => crop_or_loop(m, t, rng),
                    None => white_noise(t, fs, rng),
                };
                let r = match noise_material {
                    Some(m) => crop_or_loop(m, t, rng),
                    None => white_noise(t, fs, rng),
                };
                BinauralSignal::new(l, r)?
            }
            NoiseMode::Spatialized => {
                let mono = match noise_material {
                    Some(m) => crop_or_loop(m, t, rng),
                    None => white_noise(t, fs, rng),
                };
                let az = rng.gen_range(-90.0..=90.0);
                let hrir = synth_hrir(az, &HrirModel::default(), fs)?;
                spatialize(&mono, &hrir)?.truncated(t)
            }
        };
        let (noisy, rendered_noise) = add_noise_at_snr(&mixture, &noise_bin, noise_spec.target_snr_db)?;
        mixture = noisy;
        noise_snr_rendered = Some(rendered_noise);
    }

    let gcc = GccConfig::default();
    let mut true_itd_us = Vec::with_capacity(targets.len());
    let mut true_ild_db = Vec::with_capacity(targets.len());
    for target in &targets {
        let (a, b) = dominant_energy_window(target, CUE_WINDOW);
        let win = target.slice(a, b);
        true_itd_us.push(gcc_phat_tdoa(&win.left, &win.right, &gcc)? * 1e6);
        true_ild_db.push(ild_db(target)?);
    }
    Ok(SceneInstance {
        mixture,
        targets,
        noise: noise_snr_rendered,
        spec: spec.clone(),
        true_itd_us,
        true_ild_db,
    })
}

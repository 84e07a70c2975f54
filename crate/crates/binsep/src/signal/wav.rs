//! Minimal RIFF/WAVE reader and writer.
//!
//! Supported payloads: 16-bit PCM and 32-bit IEEE float, one or two
//! channels, little-endian. Unknown chunks are skipped; anything outside
//! that envelope is a hard error rather than a guess.

use std::fs;
use std::path::Path;

use super::{BinauralSignal, Waveform};
use crate::error::{Error, Result};

/// Sample encoding on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    /// 16-bit signed PCM. Read as `v / 32768`; written as
    /// `round(x * 32768)` clamped to the i16 range.
    Pcm16,
    /// 32-bit IEEE float. Round-trips bit-exactly at f32 precision.
    Float32,
}

/// Decoded file: one `Vec<f64>` per channel, equal lengths.
#[derive(Debug, Clone)]
pub struct AudioData {
    pub channels: Vec<Vec<f64>>,
    pub sample_rate: u32,
    pub encoding: WavEncoding,
}

impl AudioData {
    pub fn num_frames(&self) -> usize {
        self.channels.first().map_or(0, |c| c.len())
    }

    pub fn into_waveform(self) -> Result<Waveform> {
        match <[Vec<f64>; 1]>::try_from(self.channels) {
            Ok([mono]) => Ok(Waveform::new(mono, self.sample_rate)),
            Err(chs) => Err(Error::WavFormat(format!(
                "expected mono file, found {} channels",
                chs.len()
            ))),
        }
    }

    pub fn into_binaural(self) -> Result<BinauralSignal> {
        match <[Vec<f64>; 2]>::try_from(self.channels) {
            Ok([l, r]) => BinauralSignal::new(
                Waveform::new(l, self.sample_rate),
                Waveform::new(r, self.sample_rate),
            ),
            Err(chs) => Err(Error::WavFormat(format!(
                "expected stereo file, found {} channels",
                chs.len()
            ))),
        }
    }
}

/// Write outcome. `clipped_samples` counts inputs with `|x| > 1.0`, which
/// only lose information under [`WavEncoding::Pcm16`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WavWriteInfo {
    pub clipped_samples: usize,
}

fn take<'a>(buf: &'a [u8], at: usize, n: usize, what: &str) -> Result<&'a [u8]> {
    buf.get(at..at + n)
        .ok_or_else(|| Error::WavFormat(format!("truncated file while reading {what}")))
}

fn u16_at(buf: &[u8], at: usize, what: &str) -> Result<u16> {
    Ok(u16::from_le_bytes(take(buf, at, 2, what)?.try_into().unwrap()))
}

fn u32_at(buf: &[u8], at: usize, what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(take(buf, at, 4, what)?.try_into().unwrap()))
}

struct FmtChunk {
    encoding: WavEncoding,
    num_channels: usize,
    sample_rate: u32,
    block_align: usize,
}

fn parse_fmt(body: &[u8]) -> Result<FmtChunk> {
    if body.len() < 16 {
        return Err(Error::WavFormat("fmt chunk shorter than 16 bytes".into()));
    }
    let audio_format = u16_at(body, 0, "fmt")?;
    let num_channels = u16_at(body, 2, "fmt")? as usize;
    let sample_rate = u32_at(body, 4, "fmt")?;
    let block_align = u16_at(body, 12, "fmt")? as usize;
    let bits = u16_at(body, 14, "fmt")?;
    let encoding = match (audio_format, bits) {
        (1, 16) => WavEncoding::Pcm16,
        (3, 32) => WavEncoding::Float32,
        (f, b) => {
            return Err(Error::WavFormat(format!(
                "unsupported format tag {f} with {b} bits (need PCM16 or float32)"
            )))
        }
    };
    if !(1..=2).contains(&num_channels) {
        return Err(Error::WavFormat(format!(
            "unsupported channel count {num_channels}"
        )));
    }
    let bytes_per_sample = bits as usize / 8;
    if block_align != num_channels * bytes_per_sample {
        return Err(Error::WavFormat(format!(
            "block align {block_align} inconsistent with {num_channels} ch x {bytes_per_sample} B"
        )));
    }
    if sample_rate == 0 {
        return Err(Error::WavFormat("zero sample rate".into()));
    }
    Ok(FmtChunk {
        encoding,
        num_channels,
        sample_rate,
        block_align,
    })
}

/// Read a WAV file. All declared chunks are walked; `fmt ` and `data` are
/// consumed, everything else is skipped (with RIFF word alignment).
pub fn read_wav(path: &Path) -> Result<AudioData> {
    let buf = fs::read(path)?;
    if buf.len() < 12 || &buf[0..4] != b"RIFF" || &buf[8..12] != b"WAVE" {
        return Err(Error::WavFormat(format!(
            "{}: not a RIFF/WAVE file",
            path.display()
        )));
    }
    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12usize;
    while pos + 8 <= buf.len() {
        let id = &buf[pos..pos + 4];
        let size = u32_at(&buf, pos + 4, "chunk header")? as usize;
        let body = take(&buf, pos + 8, size, "chunk body")?;
        match id {
            b"fmt " => fmt = Some(parse_fmt(body)?),
            b"data" => data = Some(body),
            _ => {}
        }
        pos += 8 + size + (size & 1);
    }
    let fmt = fmt.ok_or_else(|| Error::WavFormat("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::WavFormat("missing data chunk".into()))?;
    if data.len() % fmt.block_align != 0 {
        return Err(Error::WavFormat(format!(
            "data length {} is not a whole number of {}-byte frames",
            data.len(),
            fmt.block_align
        )));
    }
    let n_frames = data.len() / fmt.block_align;
    let mut channels = vec![Vec::with_capacity(n_frames); fmt.num_channels];
    match fmt.encoding {
        WavEncoding::Pcm16 => {
            for frame in data.chunks_exact(fmt.block_align) {
                for (c, bytes) in frame.chunks_exact(2).enumerate() {
                    let v = i16::from_le_bytes(bytes.try_into().unwrap());
                    channels[c].push(v as f64 / 32768.0);
                }
            }
        }
        WavEncoding::Float32 => {
            for frame in data.chunks_exact(fmt.block_align) {
                for (c, bytes) in frame.chunks_exact(4).enumerate() {
                    let v = f32::from_le_bytes(bytes.try_into().unwrap());
                    channels[c].push(v as f64);
                }
            }
        }
    }
    Ok(AudioData {
        channels,
        sample_rate: fmt.sample_rate,
        encoding: fmt.encoding,
    })
}

/// Write interleaved channels to a WAV file. Channels must be non-empty and
/// equal-length; one or two channels are accepted.
pub fn write_wav(
    path: &Path,
    channels: &[&[f64]],
    sample_rate: u32,
    encoding: WavEncoding,
) -> Result<WavWriteInfo> {
    if !(1..=2).contains(&channels.len()) {
        return Err(Error::invalid(format!(
            "write_wav: need 1 or 2 channels, got {}",
            channels.len()
        )));
    }
    let n_frames = channels[0].len();
    if channels.iter().any(|c| c.len() != n_frames) {
        return Err(Error::shape("write_wav: channel length mismatch"));
    }
    if sample_rate == 0 {
        return Err(Error::invalid("write_wav: zero sample rate"));
    }
    let (format_tag, bits): (u16, u16) = match encoding {
        WavEncoding::Pcm16 => (1, 16),
        WavEncoding::Float32 => (3, 32),
    };
    let num_channels = channels.len() as u16;
    let bytes_per_sample = bits as usize / 8;
    let block_align = channels.len() * bytes_per_sample;
    let data_size = n_frames * block_align;

    let mut clipped = 0usize;
    let mut data = Vec::with_capacity(data_size);
    for f in 0..n_frames {
        for ch in channels {
            let x = ch[f];
            if !x.is_finite() {
                return Err(Error::NonFinite(format!(
                    "write_wav: sample {f} of channel stream is not finite"
                )));
            }
            if x.abs() > 1.0 {
                clipped += 1;
            }
            match encoding {
                WavEncoding::Pcm16 => {
                    let q = (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    data.extend_from_slice(&q.to_le_bytes());
                }
                WavEncoding::Float32 => {
                    data.extend_from_slice(&(x as f32).to_le_bytes());
                }
            }
        }
    }

    // fact chunk is required for non-PCM payloads.
    let fact_size = if format_tag == 3 { 8 + 4 } else { 0 };
    let riff_size = 4 + (8 + 16) + fact_size + (8 + data_size);
    let mut out = Vec::with_capacity(8 + riff_size);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(riff_size as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&format_tag.to_le_bytes());
    out.extend_from_slice(&num_channels.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    let byte_rate = sample_rate * block_align as u32;
    out.extend_from_slice(&byte_rate.to_le_bytes());
    out.extend_from_slice(&(block_align as u16).to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    if format_tag == 3 {
        out.extend_from_slice(b"fact");
        out.extend_from_slice(&4u32.to_le_bytes());
        out.extend_from_slice(&(n_frames as u32).to_le_bytes());
    }
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_size as u32).to_le_bytes());
    out.extend_from_slice(&data);
    fs::write(path, &out)?;
    Ok(WavWriteInfo {
        clipped_samples: clipped,
    })
}

/// Read a mono file, checking the rate when one is expected.
pub fn read_mono(path: &Path, expected_rate: Option<u32>) -> Result<Waveform> {
    let audio = read_wav(path)?;
    check_rate(audio.sample_rate, expected_rate)?;
    audio.into_waveform()
}

/// Read a stereo file as a binaural pair, checking the rate when expected.
pub fn read_binaural(path: &Path, expected_rate: Option<u32>) -> Result<BinauralSignal> {
    let audio = read_wav(path)?;
    check_rate(audio.sample_rate, expected_rate)?;
    audio.into_binaural()
}

fn check_rate(found: u32, expected: Option<u32>) -> Result<()> {
    match expected {
        Some(want) if want != found => Err(Error::RateMismatch {
            found,
            expected: want,
        }),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pcm16_round_trips_representable_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pcm.wav");
        let samples: Vec<f64> = [-32768i32, -12345, -1, 0, 1, 9999, 32767]
            .iter()
            .map(|&v| v as f64 / 32768.0)
            .collect();
        let info = write_wav(&path, &[&samples], 8000, WavEncoding::Pcm16).unwrap();
        assert_eq!(info.clipped_samples, 0);
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 8000);
        assert_eq!(back.encoding, WavEncoding::Pcm16);
        assert_eq!(back.channels[0], samples);
    }

    #[test]
    fn pcm16_counts_clipped_samples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.wav");
        // 1.0 saturates to 32767 but is not out of range; 1.5 and -2.0 are.
        let samples = [0.5, 1.0, 1.5, -2.0, -1.0];
        let info = write_wav(&path, &[&samples], 8000, WavEncoding::Pcm16).unwrap();
        assert_eq!(info.clipped_samples, 2);
        let back = read_wav(&path).unwrap();
        assert_eq!(back.channels[0][1], 32767.0 / 32768.0);
        assert_eq!(back.channels[0][2], 32767.0 / 32768.0);
        assert_eq!(back.channels[0][3], -1.0);
    }

    #[test]
    fn float32_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f32.wav");
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        // Values already representable at f32 precision round-trip exactly.
        let samples: Vec<f64> = (0..500)
            .map(|_| rng.gen_range(-1.0f32..1.0) as f64)
            .collect();
        write_wav(&path, &[&samples], 16000, WavEncoding::Float32).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.encoding, WavEncoding::Float32);
        assert_eq!(back.channels[0], samples);
    }

    #[test]
    fn stereo_interleaving_preserves_channels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("st.wav");
        let left: Vec<f64> = (0..100).map(|i| (i as f64 / 200.0).sin()).collect();
        let right: Vec<f64> = (0..100).map(|i| -(i as f64 / 100.0).cos() * 0.5).collect();
        write_wav(&path, &[&left, &right], 8000, WavEncoding::Float32).unwrap();
        let sig = read_binaural(&path, Some(8000)).unwrap();
        for i in 0..100 {
            assert_eq!(sig.left.samples[i], left[i] as f32 as f64);
            assert_eq!(sig.right.samples[i], right[i] as f32 as f64);
        }
    }

    #[test]
    fn unknown_chunks_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("list.wav");
        let samples = [0.25, -0.25];
        write_wav(&path, &[&samples], 8000, WavEncoding::Pcm16).unwrap();
        // Splice a LIST chunk (odd-size, exercising pad alignment) ahead of fmt.
        let orig = fs::read(&path).unwrap();
        let mut patched = orig[..12].to_vec();
        patched.extend_from_slice(b"LIST");
        patched.extend_from_slice(&5u32.to_le_bytes());
        patched.extend_from_slice(b"INFOx\0"); // 5 bytes + 1 pad
        patched.extend_from_slice(&orig[12..]);
        let size = (patched.len() - 8) as u32;
        patched[4..8].copy_from_slice(&size.to_le_bytes());
        fs::write(&path, &patched).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.num_frames(), 2);
        assert!((back.channels[0][0] - 0.25).abs() < 1e-4);
    }

    #[test]
    fn rejects_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wav");
        fs::write(&path, b"RIFfnope").unwrap();
        assert!(matches!(read_wav(&path), Err(Error::WavFormat(_))));
        // Valid header, truncated data chunk.
        let good = dir.path().join("trunc.wav");
        let samples = [0.1; 10];
        write_wav(&good, &[&samples], 8000, WavEncoding::Pcm16).unwrap();
        let mut bytes = fs::read(&good).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&good, &bytes).unwrap();
        assert!(read_wav(&good).is_err());
    }

    #[test]
    fn rate_check_is_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rate.wav");
        let samples = [0.0; 4];
        write_wav(&path, &[&samples], 16000, WavEncoding::Pcm16).unwrap();
        match read_mono(&path, Some(8000)) {
            Err(Error::RateMismatch { found, expected }) => {
                assert_eq!((found, expected), (16000, 8000));
            }
            other => panic!("expected rate mismatch, got {other:?}"),
        }
        assert!(read_mono(&path, Some(16000)).is_ok());
        assert!(read_mono(&path, None).is_ok());
    }

    #[test]
    fn non_finite_samples_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.wav");
        let samples = [0.0, f64::NAN];
        assert!(write_wav(&path, &[&samples], 8000, WavEncoding::Float32).is_err());
    }
}

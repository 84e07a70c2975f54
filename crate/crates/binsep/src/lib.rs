//! Binaural speech separation toolkit.
//!
//! The crate is organized bottom-up:
//!
//! - [`signal`]: waveforms, WAV I/O, convolution, FFT, STFT.
//! - [`scene`]: synthetic spatialization (fractional-delay HRIRs) and
//!   dataset generation with reproducible manifests.
//! - [`autodiff`]: reverse-mode tape over `[channels, time]` grids with the
//!   convolutional and normalization ops the separator needs.
//! - [`model`]: the two-channel encoder / separator / decoder in four
//!   variants, built on the tape.
//! - [`metrics`]: SNR / SI-SDR, GCC-PHAT interaural timing, level errors,
//!   permutation-invariant assignment, aggregation.
//! - [`train`]: Adam, gradient clipping, checkpoints, the training loop.
//! - [`stream`]: frame-by-frame causal inference with constant state.
//!
//! All internal computation is in `f64`.

pub mod autodiff;
pub mod error;
pub mod metrics;
pub mod model;
pub mod scene;
pub mod signal;
pub mod stream;
pub mod train;

pub use error::{Error, Result};
pub use signal::{BinauralSignal, Waveform};

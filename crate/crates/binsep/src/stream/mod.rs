//! Frame-synchronous streaming inference.
//!
//! [`open_stream`] wraps a causal model in a [`Stream`] that consumes
//! hop-sized input frames and emits separated output frames with an
//! algorithmic latency of one encoder window. All state lives in
//! fixed-size rings, so memory stays constant however long the stream
//! runs. The per-frame kernels repeat the offline arithmetic operation
//! for operation (the cumulative norms fold the same running sums, the
//! decoder adds overlapping windows in the same order), so streamed and
//! offline outputs agree bit for bit; tests pin that, and a looser 1e-5
//! bound is the documented contract.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ValueGrid};
use crate::error::{Error, Result};
use crate::model::{SeparationModel, Variant, CLN_EPS};

/// One emitted block of separated audio: `speakers[i]` holds speaker
/// `i`'s left and right samples, channel-consistent with the offline
/// [`SeparationModel::forward_binaural`] ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamChunk {
    pub speakers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl StreamChunk {
    /// Samples per channel in this chunk.
    pub fn samples(&self) -> usize {
        self.speakers.first().map_or(0, |(l, _)| l.len())
    }

    pub fn is_empty(&self) -> bool {
        self.samples() == 0
    }
}

/// Running first and second moments of one cumulative layer norm. The
/// fold (frame by frame, channels ascending) matches
/// [`crate::autodiff::ops::cln_stats`] exactly; that equality is the
/// contract that lets a stream resume the offline statistics.
struct ClnState {
    frames: usize,
    s1: f64,
    s2: f64,
}

impl ClnState {
    fn new() -> Self {
        ClnState {
            frames: 0,
            s1: 0.0,
            s2: 0.0,
        }
    }

    fn step(&mut self, frame: &mut [f64], gain: &ValueGrid, bias: &ValueGrid) {
        for v in frame.iter() {
            self.s1 += *v;
            self.s2 += *v * *v;
        }
        self.frames += 1;
        let n = (frame.len() * self.frames) as f64;
        let m = self.s1 / n;
        let inv = 1.0 / (self.s2 / n - m * m + CLN_EPS).sqrt();
        for (c, v) in frame.iter_mut().enumerate() {
            *v = gain.at(c, 0) * (*v - m) * inv + bias.at(c, 0);
        }
    }
}

struct BlockIds {
    conv1_w: ParamId,
    conv1_b: ParamId,
    prelu1: ParamId,
    norm1_gain: ParamId,
    norm1_bias: ParamId,
    dconv_w: ParamId,
    dconv_b: ParamId,
    prelu2: ParamId,
    norm2_gain: ParamId,
    norm2_bias: ParamId,
    res_w: ParamId,
    res_b: ParamId,
    skip_w: ParamId,
    skip_b: ParamId,
    dilation: usize,
}

/// Parameter handles resolved once at open; both passes share them.
struct Ids {
    enc_primary_w: ParamId,
    enc_primary_b: ParamId,
    enc_secondary: Option<(ParamId, ParamId)>,
    norm_gain: ParamId,
    norm_bias: ParamId,
    bottleneck_w: ParamId,
    bottleneck_b: ParamId,
    blocks: Vec<BlockIds>,
    out_prelu: ParamId,
    head_w: ParamId,
    head_b: ParamId,
    dec_w: ParamId,
}

impl Ids {
    fn resolve(model: &SeparationModel) -> Ids {
        let store = &model.params;
        let id = |name: &str| store.id(name).expect("model layout is validated");
        let cfg = &model.config;
        let mut blocks = Vec::new();
        for r in 0..cfg.tcn_repeats {
            for x in 0..cfg.blocks_per_repeat {
                let pre = format!("sep.block{r}_{x}.");
                blocks.push(BlockIds {
                    conv1_w: id(&format!("{pre}conv1.w")),
                    conv1_b: id(&format!("{pre}conv1.b")),
                    prelu1: id(&format!("{pre}prelu1")),
                    norm1_gain: id(&format!("{pre}norm1.gain")),
                    norm1_bias: id(&format!("{pre}norm1.bias")),
                    dconv_w: id(&format!("{pre}dconv.w")),
                    dconv_b: id(&format!("{pre}dconv.b")),
                    prelu2: id(&format!("{pre}prelu2")),
                    norm2_gain: id(&format!("{pre}norm2.gain")),
                    norm2_bias: id(&format!("{pre}norm2.bias")),
                    res_w: id(&format!("{pre}res.w")),
                    res_b: id(&format!("{pre}res.b")),
                    skip_w: id(&format!("{pre}skip.w")),
                    skip_b: id(&format!("{pre}skip.b")),
                    dilation: 1 << x,
                });
            }
        }
        Ids {
            enc_primary_w: id("enc.primary.w"),
            enc_primary_b: id("enc.primary.b"),
            enc_secondary: cfg
                .variant
                .has_secondary_encoder()
                .then(|| (id("enc.secondary.w"), id("enc.secondary.b"))),
            norm_gain: id("sep.norm.gain"),
            norm_bias: id("sep.norm.bias"),
            bottleneck_w: id("sep.bottleneck.w"),
            bottleneck_b: id("sep.bottleneck.b"),
            blocks,
            out_prelu: id("sep.out_prelu"),
            head_w: id("sep.head.w"),
            head_b: id("sep.head.b"),
            dec_w: id("dec.w"),
        }
    }
}

struct BlockState {
    /// Last `(kernel - 1) * dilation` dilated-conv input frames, column
    /// `t % capacity` holding frame `t`.
    hist: ValueGrid,
    norm1: ClnState,
    norm2: ClnState,
}

/// Per-pass state; pass 0 takes the left channel as primary, pass 1 the
/// right, mirroring the offline two-pass forward.
struct PassState {
    norm_in: ClnState,
    blocks: Vec<BlockState>,
    /// Masked representation rings, `[speaker] -> [N, window/hop]` with
    /// frame `f` in column `f % (window/hop)`.
    reps: Vec<ValueGrid>,
}

impl PassState {
    fn new(model: &SeparationModel) -> PassState {
        let cfg = &model.config;
        let w_frames = cfg.filter_length / cfg.encoder_stride;
        let blocks = (0..cfg.tcn_repeats)
            .flat_map(|_| 0..cfg.blocks_per_repeat)
            .map(|x| BlockState {
                hist: ValueGrid::zeros(cfg.hidden_channels, (cfg.kernel - 1) * (1 << x)),
                norm1: ClnState::new(),
                norm2: ClnState::new(),
            })
            .collect();
        PassState {
            norm_in: ClnState::new(),
            blocks,
            reps: (0..cfg.num_speakers)
                .map(|_| ValueGrid::zeros(cfg.encoder_filters, w_frames))
                .collect(),
        }
    }
}

/// Streaming inference state over a borrowed model. One stream is
/// single-threaded; several streams may share one model since the model
/// is only read.
pub struct Stream<'m> {
    model: &'m SeparationModel,
    ids: Ids,
    hop: usize,
    window: usize,
    /// Sliding input windows (left, right), oldest sample first.
    win: [Vec<f64>; 2],
    passes: [PassState; 2],
    pushes: usize,
    frames_done: usize,
    hops_out: usize,
    flushed: bool,
}

/// Opens a stream on a causal model. The feature-concatenation variant
/// is rejected: its interaural features need STFT context past the
/// encoder window, which contradicts the one-window latency this path
/// guarantees.
pub fn open_stream(model: &SeparationModel) -> Result<Stream<'_>> {
    model.config.validate()?;
    if model.config.variant == Variant::FeatConcat {
        return Err(Error::Config(
            "streaming: the feature-concatenation variant needs STFT context \
             beyond the encoder window and cannot run at one-window latency"
                .into(),
        ));
    }
    let hop = model.config.encoder_stride;
    let window = model.config.filter_length;
    Ok(Stream {
        ids: Ids::resolve(model),
        model,
        hop,
        window,
        win: [vec![0.0; window], vec![0.0; window]],
        passes: [PassState::new(model), PassState::new(model)],
        pushes: 0,
        frames_done: 0,
        hops_out: 0,
        flushed: false,
    })
}

impl Stream<'_> {
    /// Input and output frame size in samples.
    pub fn hop(&self) -> usize {
        self.hop
    }

    /// Algorithmic latency: one encoder window must arrive before the
    /// first output frame leaves.
    pub fn latency_samples(&self) -> usize {
        self.window
    }

    pub fn latency_ms(&self) -> f64 {
        self.window as f64 * 1000.0 / self.model.config.sample_rate as f64
    }

    /// Input frames consumed so far.
    pub fn frames_in(&self) -> usize {
        self.pushes
    }

    /// Output frames emitted so far, flush tail included.
    pub fn frames_out(&self) -> usize {
        self.hops_out
    }

    /// Total `f64` slots held by the stream state. Fixed at open time;
    /// the constant-memory test pins that it never grows with input.
    pub fn state_floats(&self) -> usize {
        let mut total = self.win[0].len() + self.win[1].len();
        for pass in &self.passes {
            total += 2;
            for b in &pass.blocks {
                total += b.hist.data.len() + 4;
            }
            total += pass.reps.iter().map(|g| g.data.len()).sum::<usize>();
        }
        total
    }

    /// Feeds one hop of input per channel. Returns `None` while the
    /// first window is still filling; afterwards every push emits
    /// exactly one hop of output per speaker and channel.
    pub fn push_frame(&mut self, left: &[f64], right: &[f64]) -> Result<Option<StreamChunk>> {
        if self.flushed {
            return Err(Error::invalid("stream: push after flush"));
        }
        if left.len() != self.hop || right.len() != self.hop {
            return Err(Error::shape(format!(
                "stream: expected {}-sample frames, got {} and {}",
                self.hop,
                left.len(),
                right.len()
            )));
        }
        for (buf, fresh) in self.win.iter_mut().zip([left, right]) {
            buf.copy_within(self.hop.., 0);
            buf[self.window - self.hop..].copy_from_slice(fresh);
        }
        self.pushes += 1;
        let warm = self.window / self.hop;
        if self.pushes < warm {
            return Ok(None);
        }
        let t = self.pushes - warm;
        let model = self.model;
        advance_pass(model, &self.ids, &mut self.passes[0], &self.win[0], &self.win[1], t);
        advance_pass(model, &self.ids, &mut self.passes[1], &self.win[1], &self.win[0], t);
        self.frames_done = t + 1;
        let chunk = self.emit_range(t * self.hop, (t + 1) * self.hop);
        self.hops_out += 1;
        Ok(Some(chunk))
    }

    /// Emits the overlap-add tail so that total output length equals
    /// total input length. A stream shorter than one window is
    /// zero-padded to a single window first, exactly like the offline
    /// path pads and trims. Flushing twice returns an empty chunk.
    pub fn flush(&mut self) -> Result<StreamChunk> {
        if self.flushed {
            return Ok(self.empty_chunk());
        }
        self.flushed = true;
        let total = self.pushes * self.hop;
        if total == 0 {
            return Ok(self.empty_chunk());
        }
        let warm = self.window / self.hop;
        if self.pushes < warm {
            let mut padded: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
            for (dst, buf) in padded.iter_mut().zip(&self.win) {
                // The window buffer still has startup zeros in front;
                // the real samples sit at the back. Offline padding puts
                // the zeros after the signal instead.
                dst.extend_from_slice(&buf[self.window - total..]);
                dst.resize(self.window, 0.0);
            }
            let model = self.model;
            advance_pass(model, &self.ids, &mut self.passes[0], &padded[0], &padded[1], 0);
            advance_pass(model, &self.ids, &mut self.passes[1], &padded[1], &padded[0], 0);
            self.frames_done = 1;
            let chunk = self.emit_range(0, total);
            self.hops_out += self.pushes;
            return Ok(chunk);
        }
        let start = self.frames_done * self.hop;
        let chunk = self.emit_range(start, total);
        self.hops_out += (total - start) / self.hop;
        Ok(chunk)
    }

    fn empty_chunk(&self) -> StreamChunk {
        StreamChunk {
            speakers: vec![(Vec::new(), Vec::new()); self.model.config.num_speakers],
        }
    }

    fn emit_range(&self, from: usize, to: usize) -> StreamChunk {
        let speakers = (0..self.model.config.num_speakers)
            .map(|i| {
                (
                    self.decode_range(&self.passes[0].reps[i], from, to),
                    self.decode_range(&self.passes[1].reps[i], from, to),
                )
            })
            .collect();
        StreamChunk { speakers }
    }

    /// Overlap-add decode of output samples `[from, to)` from a
    /// representation ring. Contributions are summed over encoder
    /// channels ascending, then window taps ascending, the exact order
    /// the offline transposed convolution writes them.
    fn decode_range(&self, reps: &ValueGrid, from: usize, to: usize) -> Vec<f64> {
        let dec = self.model.params.get(self.ids.dec_w);
        let n = self.model.config.encoder_filters;
        let w_frames = self.window / self.hop;
        (from..to)
            .map(|s| {
                let mut acc = 0.0;
                for ic in 0..n {
                    let mut k = s % self.hop;
                    while k < self.window {
                        if k <= s {
                            let f = (s - k) / self.hop;
                            if f < self.frames_done {
                                acc += dec.at(ic, k) * reps.at(ic, f % w_frames);
                            }
                        }
                        k += self.hop;
                    }
                }
                acc
            })
            .collect()
    }
}

/// Runs one encoder frame through separator and mask combination for a
/// single pass, leaving the masked representation frame in the rings.
/// Loop orders replicate the offline kernels so the arithmetic is
/// identical; see the op docs in `autodiff::ops`.
fn advance_pass(
    model: &SeparationModel,
    ids: &Ids,
    pass: &mut PassState,
    prim_win: &[f64],
    sec_win: &[f64],
    t: usize,
) {
    let cfg = &model.config;
    let store = &model.params;
    let n = cfg.encoder_filters;
    let prim = affine_frame(store.get(ids.enc_primary_w), store.get(ids.enc_primary_b), prim_win);
    let sec = ids
        .enc_secondary
        .map(|(w, b)| affine_frame(store.get(w), store.get(b), sec_win));
    let mut x: Vec<f64> = match &sec {
        None => prim.clone(),
        Some(s) => prim.iter().chain(s.iter()).copied().collect(),
    };
    pass.norm_in
        .step(&mut x, store.get(ids.norm_gain), store.get(ids.norm_bias));
    let mut body = affine_frame(store.get(ids.bottleneck_w), store.get(ids.bottleneck_b), &x);
    let mut skip_acc: Option<Vec<f64>> = None;
    for (ids_b, state) in ids.blocks.iter().zip(&mut pass.blocks) {
        let mut h = affine_frame(store.get(ids_b.conv1_w), store.get(ids_b.conv1_b), &body);
        prelu_frame(&mut h, store.get(ids_b.prelu1));
        state
            .norm1
            .step(&mut h, store.get(ids_b.norm1_gain), store.get(ids_b.norm1_bias));
        let mut y = depthwise_step(
            &mut state.hist,
            t,
            ids_b.dilation,
            cfg.kernel,
            store.get(ids_b.dconv_w),
            store.get(ids_b.dconv_b),
            &h,
        );
        prelu_frame(&mut y, store.get(ids_b.prelu2));
        state
            .norm2
            .step(&mut y, store.get(ids_b.norm2_gain), store.get(ids_b.norm2_bias));
        let res = affine_frame(store.get(ids_b.res_w), store.get(ids_b.res_b), &y);
        let skip = affine_frame(store.get(ids_b.skip_w), store.get(ids_b.skip_b), &y);
        for (b, r) in body.iter_mut().zip(&res) {
            *b += *r;
        }
        match &mut skip_acc {
            None => skip_acc = Some(skip),
            Some(acc) => {
                for (a, s) in acc.iter_mut().zip(&skip) {
                    *a += *s;
                }
            }
        }
    }
    let mut out = skip_acc.expect("config validation requires at least one block");
    prelu_frame(&mut out, store.get(ids.out_prelu));
    let mut masks = affine_frame(store.get(ids.head_w), store.get(ids.head_b), &out);
    for v in &mut masks {
        *v = 1.0 / (1.0 + (-*v).exp());
    }
    let summed: Option<Vec<f64>> = matches!(cfg.variant, Variant::ParallelSum).then(|| {
        prim.iter()
            .zip(sec.as_ref().expect("parallel_sum has a secondary encoder"))
            .map(|(p, s)| p + s)
            .collect()
    });
    let w_frames = cfg.filter_length / cfg.encoder_stride;
    let col = t % w_frames;
    for i in 0..cfg.num_speakers {
        for ch in 0..n {
            let v = match cfg.variant {
                Variant::Single | Variant::FeatConcat => masks[i * n + ch] * prim[ch],
                Variant::ParallelSum => {
                    masks[i * n + ch] * summed.as_ref().expect("set above")[ch]
                }
                Variant::MaskAndSum => {
                    masks[i * n + ch] * prim[ch]
                        + masks[(cfg.num_speakers + i) * n + ch]
                            * sec.as_ref().expect("mask_and_sum has a secondary encoder")[ch]
                }
            };
            *pass.reps[i].at_mut(ch, col) = v;
        }
    }
}

/// `y[o] = b[o] + sum_j w[o, j] * x[j]`, the per-frame slice of a
/// pointwise convolution (or of the encoder, whose window plays the
/// role of `x`). Accumulation order matches `conv1d_forward`.
fn affine_frame(w: &ValueGrid, b: &ValueGrid, x: &[f64]) -> Vec<f64> {
    let mut y = Vec::with_capacity(w.channels);
    for oc in 0..w.channels {
        let mut acc = b.at(oc, 0);
        let row = w.row(oc);
        for (wv, xv) in row.iter().zip(x) {
            acc += *wv * *xv;
        }
        y.push(acc);
    }
    y
}

fn prelu_frame(x: &mut [f64], slope: &ValueGrid) {
    for (c, v) in x.iter_mut().enumerate() {
        if *v < 0.0 {
            *v *= slope.at(c, 0);
        }
    }
}

/// One frame of the depthwise dilated convolution. Taps ascend so tap
/// `k` reads the frame `(kernel-1-k)*dilation` steps back, frames
/// before the stream start reading as the offline left padding zeros.
fn depthwise_step(
    hist: &mut ValueGrid,
    t: usize,
    dilation: usize,
    kernel: usize,
    w: &ValueGrid,
    b: &ValueGrid,
    cur: &[f64],
) -> Vec<f64> {
    let cap = hist.time;
    let mut y = Vec::with_capacity(cur.len());
    for (h, &cv) in cur.iter().enumerate() {
        let mut acc = b.at(h, 0);
        for k in 0..kernel {
            let lag = (kernel - 1 - k) * dilation;
            let xv = if lag == 0 {
                cv
            } else if t >= lag {
                hist.at(h, (t - lag) % cap)
            } else {
                0.0
            };
            acc += w.at(h, k) * xv;
        }
        y.push(acc);
    }
    for (h, &cv) in cur.iter().enumerate() {
        *hist.at_mut(h, t % cap) = cv;
    }
    y
}

/// Wall-clock profile of a stream run on synthetic input. Latency here
/// is the algorithmic figure; `real_time_factor` and the per-frame
/// percentiles describe compute, measured against the frame budget
/// (one hop of audio time). Timing numbers are reported, not asserted:
/// they depend on the machine.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StreamBenchmark {
    pub frames: usize,
    pub hop: usize,
    pub sample_rate: u32,
    pub latency_samples: usize,
    pub latency_ms: f64,
    pub frame_budget_ms: f64,
    pub real_time_factor: f64,
    pub p50_frame_ms: f64,
    pub p99_frame_ms: f64,
}

/// Streams `duration_s` seconds of deterministic noise through the
/// model and reports throughput. The run includes the flush, so the
/// real-time factor covers a whole utterance.
pub fn benchmark_stream(model: &SeparationModel, duration_s: f64) -> Result<StreamBenchmark> {
    if !duration_s.is_finite() || duration_s <= 0.0 {
        return Err(Error::invalid("benchmark: duration must be positive"));
    }
    let mut stream = open_stream(model)?;
    let hop = stream.hop();
    let rate = model.config.sample_rate;
    let frames = (((duration_s * rate as f64) / hop as f64).floor() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let left: Vec<f64> = (0..frames * hop).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let right: Vec<f64> = (0..frames * hop).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let mut per_frame_ms = Vec::with_capacity(frames);
    let started = Instant::now();
    for f in 0..frames {
        let at = f * hop;
        let t0 = Instant::now();
        stream.push_frame(&left[at..at + hop], &right[at..at + hop])?;
        per_frame_ms.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    stream.flush()?;
    let wall_s = started.elapsed().as_secs_f64();
    let audio_s = (frames * hop) as f64 / rate as f64;
    per_frame_ms.sort_by(f64::total_cmp);
    Ok(StreamBenchmark {
        frames,
        hop,
        sample_rate: rate,
        latency_samples: stream.latency_samples(),
        latency_ms: stream.latency_ms(),
        frame_budget_ms: hop as f64 * 1000.0 / rate as f64,
        real_time_factor: wall_s / audio_s,
        p50_frame_ms: percentile(&per_frame_ms, 0.50),
        p99_frame_ms: percentile(&per_frame_ms, 0.99),
    })
}

/// Nearest-rank percentile of an ascending slice.
fn percentile(sorted_ms: &[f64], q: f64) -> f64 {
    let idx = ((sorted_ms.len() - 1) as f64 * q).round() as usize;
    sorted_ms[idx]
}

//! The four separation architectures behind one interface: a single
//! channel baseline, interaural-feature concatenation, a parallel encoder
//! pair with summed representations, and the parallel pair with the
//! mask-and-sum combination.

mod align;
mod exec;
mod features;

pub use align::{align_param_budget, param_count};
pub use features::{ipd_ild_features, FEATURE_BINS, FEATURE_CHANNELS, FEATURE_FFT};

use crate::autodiff::ops::ConvSpec;
use crate::autodiff::{
    constant_grid, init_uniform, load_checkpoint, save_checkpoint, Graph, NodeId, ParamId,
    ParamStore, ValueGrid,
};
use crate::error::{Error, Result};
use crate::signal::{BinauralSignal, Waveform};
use exec::{Exec, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Shared parameter budget the variants are aligned to.
pub const PAPER_PARAM_TARGET: usize = 1_670_000;

/// Normalization epsilon used by every cumulative layer norm.
pub const CLN_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Single,
    FeatConcat,
    ParallelSum,
    MaskAndSum,
}

impl Variant {
    pub fn has_secondary_encoder(self) -> bool {
        matches!(self, Variant::ParallelSum | Variant::MaskAndSum)
    }

    pub fn all() -> [Variant; 4] {
        [
            Variant::Single,
            Variant::FeatConcat,
            Variant::ParallelSum,
            Variant::MaskAndSum,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub num_speakers: usize,
    pub encoder_filters: usize,
    pub filter_length: usize,
    pub encoder_stride: usize,
    pub tcn_repeats: usize,
    pub blocks_per_repeat: usize,
    pub bottleneck_channels: usize,
    pub hidden_channels: usize,
    pub kernel: usize,
    pub causal: bool,
    pub sample_rate: u32,
}

impl ModelConfig {
    /// Reference configuration: 64 filters of 2 ms (16 samples) hopped by
    /// 8, a 4x8 causal TCN. `hidden_channels` is a placeholder until
    /// [`align_param_budget`] picks the width for the budget.
    pub fn paper_baseline(variant: Variant, num_speakers: usize) -> Self {
        ModelConfig {
            variant,
            num_speakers,
            encoder_filters: 64,
            filter_length: 16,
            encoder_stride: 8,
            tcn_repeats: 4,
            blocks_per_repeat: 8,
            bottleneck_channels: 64,
            hidden_channels: 128,
            kernel: 3,
            causal: true,
            sample_rate: 8000,
        }
    }

    /// Paper-scale config with the hidden width aligned to the shared
    /// parameter budget.
    pub fn aligned_paper(variant: Variant, num_speakers: usize) -> Result<Self> {
        align_param_budget(
            &ModelConfig::paper_baseline(variant, num_speakers),
            PAPER_PARAM_TARGET,
        )
    }

    /// Desk-scale training configuration: the paper-shaped front end
    /// with a TCN deep enough to span a pitch period or two (receptive
    /// field about 0.5 s) but narrow enough to train on a CPU in
    /// minutes. Used by the toy experiments and the acceptance run.
    pub fn toy(variant: Variant, num_speakers: usize) -> Self {
        ModelConfig {
            variant,
            num_speakers,
            encoder_filters: 32,
            filter_length: 16,
            encoder_stride: 8,
            tcn_repeats: 2,
            blocks_per_repeat: 4,
            bottleneck_channels: 24,
            hidden_channels: 32,
            kernel: 3,
            causal: true,
            sample_rate: 8000,
        }
    }

    /// Tiny configuration for tests and gradient checks.
    pub fn micro(variant: Variant, num_speakers: usize) -> Self {
        ModelConfig {
            variant,
            num_speakers,
            encoder_filters: 8,
            filter_length: 4,
            encoder_stride: 2,
            tcn_repeats: 1,
            blocks_per_repeat: 2,
            bottleneck_channels: 8,
            hidden_channels: 8,
            kernel: 3,
            causal: true,
            sample_rate: 8000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_speakers == 0 {
            return Err(Error::Config("num_speakers must be >= 1".into()));
        }
        if self.encoder_filters == 0
            || self.filter_length == 0
            || self.encoder_stride == 0
            || self.tcn_repeats == 0
            || self.blocks_per_repeat == 0
            || self.bottleneck_channels == 0
            || self.hidden_channels == 0
            || self.kernel < 2
            || self.sample_rate == 0
        {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.filter_length % self.encoder_stride != 0 {
            return Err(Error::Config(format!(
                "encoder stride {} must divide filter length {}",
                self.encoder_stride, self.filter_length
            )));
        }
        if !self.causal {
            return Err(Error::Config(
                "only the causal configuration is supported".into(),
            ));
        }
        Ok(())
    }

    /// Channel count entering the separator.
    pub fn separator_in_channels(&self) -> usize {
        match self.variant {
            Variant::Single => self.encoder_filters,
            Variant::FeatConcat => self.encoder_filters + FEATURE_CHANNELS,
            Variant::ParallelSum | Variant::MaskAndSum => 2 * self.encoder_filters,
        }
    }

    /// Mask head output channels: C*N masks, doubled for mask-and-sum
    /// (one group for each encoder's representation).
    pub fn mask_channels(&self) -> usize {
        let base = self.num_speakers * self.encoder_filters;
        match self.variant {
            Variant::MaskAndSum => 2 * base,
            _ => base,
        }
    }

    /// Encoder frames for an input of `len` samples (no padding).
    pub fn frames_for(&self, len: usize) -> Result<usize> {
        if len < self.filter_length {
            return Err(Error::shape(format!(
                "input of {len} samples is shorter than one {}-sample window",
                self.filter_length
            )));
        }
        Ok((len - self.filter_length) / self.encoder_stride + 1)
    }

    /// Offline processing pads the tail to fill the last encoder window.
    pub fn padded_len(&self, len: usize) -> usize {
        if len <= self.filter_length {
            return self.filter_length;
        }
        let body = len - self.filter_length;
        self.filter_length + body.div_ceil(self.encoder_stride) * self.encoder_stride
    }

    fn encoder_spec(&self) -> ConvSpec {
        ConvSpec {
            kernel: self.filter_length,
            stride: self.encoder_stride,
            dilation: 1,
            groups: 1,
            pad_left: 0,
        }
    }
}

enum Init {
    Uniform { fan_in: usize },
    Zeros,
    Const(f64),
}

struct ParamSpec {
    name: String,
    channels: usize,
    time: usize,
    init: Init,
}

/// Canonical parameter layout. Checkpoints and the closed-form counter
/// both follow this order.
fn layout(config: &ModelConfig) -> Vec<ParamSpec> {
    let n = config.encoder_filters;
    let l = config.filter_length;
    let b = config.bottleneck_channels;
    let h = config.hidden_channels;
    let p = config.kernel;
    let in_ch = config.separator_in_channels();
    let m = config.mask_channels();
    let mut specs = Vec::new();
    let mut push = |name: String, channels: usize, time: usize, init: Init| {
        specs.push(ParamSpec {
            name,
            channels,
            time,
            init,
        });
    };
    push("enc.primary.w".into(), n, l, Init::Uniform { fan_in: l });
    push("enc.primary.b".into(), n, 1, Init::Zeros);
    if config.variant.has_secondary_encoder() {
        push("enc.secondary.w".into(), n, l, Init::Uniform { fan_in: l });
        push("enc.secondary.b".into(), n, 1, Init::Zeros);
    }
    push("sep.norm.gain".into(), in_ch, 1, Init::Const(1.0));
    push("sep.norm.bias".into(), in_ch, 1, Init::Zeros);
    push(
        "sep.bottleneck.w".into(),
        b,
        in_ch,
        Init::Uniform { fan_in: in_ch },
    );
    push("sep.bottleneck.b".into(), b, 1, Init::Zeros);
    for r in 0..config.tcn_repeats {
        for x in 0..config.blocks_per_repeat {
            let pre = format!("sep.block{r}_{x}.");
            push(format!("{pre}conv1.w"), h, b, Init::Uniform { fan_in: b });
            push(format!("{pre}conv1.b"), h, 1, Init::Zeros);
            push(format!("{pre}prelu1"), h, 1, Init::Const(0.25));
            push(format!("{pre}norm1.gain"), h, 1, Init::Const(1.0));
            push(format!("{pre}norm1.bias"), h, 1, Init::Zeros);
            push(format!("{pre}dconv.w"), h, p, Init::Uniform { fan_in: p });
            push(format!("{pre}dconv.b"), h, 1, Init::Zeros);
            push(format!("{pre}prelu2"), h, 1, Init::Const(0.25));
            push(format!("{pre}norm2.gain"), h, 1, Init::Const(1.0));
            push(format!("{pre}norm2.bias"), h, 1, Init::Zeros);
            push(format!("{pre}res.w"), b, h, Init::Uniform { fan_in: h });
            push(format!("{pre}res.b"), b, 1, Init::Zeros);
            push(format!("{pre}skip.w"), b, h, Init::Uniform { fan_in: h });
            push(format!("{pre}skip.b"), b, 1, Init::Zeros);
        }
    }
    push("sep.out_prelu".into(), b, 1, Init::Const(0.25));
    push("sep.head.w".into(), m, b, Init::Uniform { fan_in: b });
    push("sep.head.b".into(), m, 1, Init::Zeros);
    push("dec.w".into(), n, l, Init::Uniform { fan_in: n * l });
    specs
}

/// Tape handles for one recorded two-pass forward; estimate `[i]` is
/// speaker slot `i`, consistent between channels.
pub struct RecordedBinaural {
    pub left: Vec<NodeId>,
    pub right: Vec<NodeId>,
    pub frames: usize,
}

pub struct SeparationModel {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl SeparationModel {
    /// Fresh model with the documented initialization: uniform
    /// +-1/sqrt(fan-in) weights, PReLU slopes 0.25, norm gains 1, all
    /// biases 0.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for spec in layout(&config) {
            let grid = match spec.init {
                Init::Uniform { fan_in } => {
                    init_uniform(&mut rng, spec.channels, spec.time, fan_in)
                }
                Init::Zeros => ValueGrid::zeros(spec.channels, spec.time),
                Init::Const(v) => constant_grid(spec.channels, v),
            };
            params.add(spec.name, grid)?;
        }
        Ok(SeparationModel { config, params })
    }

    /// Wraps an existing parameter set, verifying it matches the config's
    /// canonical layout exactly.
    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let specs = layout(&config);
        if params.len() != specs.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                specs.len(),
                params.len()
            )));
        }
        for (id, spec) in specs.iter().enumerate() {
            let name = params.name(id);
            if name != spec.name {
                return Err(Error::Checkpoint(format!(
                    "parameter {id}: expected {:?}, found {name:?}",
                    spec.name
                )));
            }
            if params.get(id).shape() != (spec.channels, spec.time) {
                return Err(Error::Checkpoint(format!(
                    "parameter {:?} has shape {:?}, expected ({}, {})",
                    spec.name,
                    params.get(id).shape(),
                    spec.channels,
                    spec.time
                )));
            }
        }
        Ok(SeparationModel { config, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &serde_json::to_string(&self.config)?, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (config_json, params) = load_checkpoint(path)?;
        let config: ModelConfig = serde_json::from_str(&config_json)?;
        SeparationModel::from_parts(config, params)
    }

    pub fn count_params(&self) -> usize {
        self.params.total_values()
    }

    fn pid(&self, name: &str) -> ParamId {
        self.params
            .id(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    /// Linear encoder representations of the two channels: the primary
    /// encoder on `channel_a`, and on `channel_b` the secondary encoder
    /// when the variant has one.
    pub fn encode(
        &self,
        channel_a: &Waveform,
        channel_b: &Waveform,
    ) -> Result<(ValueGrid, Option<ValueGrid>)> {
        if channel_a.len() != channel_b.len() {
            return Err(Error::shape("encode: channel lengths differ"));
        }
        self.config.frames_for(channel_a.len())?;
        let mut ex = Exec::direct(&self.params);
        let a = ex.input(ValueGrid::from_samples(&channel_a.samples));
        let primary = self.encode_with(&mut ex, &a, "enc.primary")?;
        let secondary = if self.config.variant.has_secondary_encoder() {
            let bgrid = ex.input(ValueGrid::from_samples(&channel_b.samples));
            let rep = self.encode_with(&mut ex, &bgrid, "enc.secondary")?;
            Some(ex.grid(&rep).clone())
        } else {
            None
        };
        Ok((ex.grid(&primary).clone(), secondary))
    }

    fn encode_with(&self, ex: &mut Exec, x: &Tensor, prefix: &str) -> Result<Tensor> {
        let w = ex.param(self.pid(&format!("{prefix}.w")));
        let b = ex.param(self.pid(&format!("{prefix}.b")));
        ex.conv1d(x, &w, Some(&b), self.config.encoder_spec())
    }

    /// Separator in isolation: representations (and features for the
    /// feature-concatenation variant) to sigmoid masks `[M, F]`.
    pub fn estimate_masks(
        &self,
        primary_rep: &ValueGrid,
        secondary_rep: Option<&ValueGrid>,
        features: Option<&ValueGrid>,
    ) -> Result<ValueGrid> {
        let needs_secondary = self.config.variant.has_secondary_encoder();
        if needs_secondary != secondary_rep.is_some() {
            return Err(Error::invalid(format!(
                "variant {:?} {} a secondary representation",
                self.config.variant,
                if needs_secondary {
                    "requires"
                } else {
                    "does not take"
                }
            )));
        }
        if (self.config.variant == Variant::FeatConcat) != features.is_some() {
            return Err(Error::invalid(format!(
                "variant {:?} and feature input do not match",
                self.config.variant
            )));
        }
        let mut ex = Exec::direct(&self.params);
        let prim = ex.input(primary_rep.clone());
        let sep_in = match self.config.variant {
            Variant::Single => prim,
            Variant::FeatConcat => {
                let feats = ex.input(features.unwrap().clone());
                ex.concat_channels(&[&prim, &feats])?
            }
            Variant::ParallelSum | Variant::MaskAndSum => {
                let sec = ex.input(secondary_rep.unwrap().clone());
                ex.concat_channels(&[&prim, &sec])?
            }
        };
        let masks = self.separator(&mut ex, &sep_in)?;
        Ok(ex.grid(&masks).clone())
    }

    fn separator(&self, ex: &mut Exec, sep_in: &Tensor) -> Result<Tensor> {
        let pw = ConvSpec::pointwise();
        let gain = ex.param(self.pid("sep.norm.gain"));
        let bias = ex.param(self.pid("sep.norm.bias"));
        let normed = ex.cum_layer_norm(sep_in, &gain, &bias, CLN_EPS)?;
        let bw = ex.param(self.pid("sep.bottleneck.w"));
        let bb = ex.param(self.pid("sep.bottleneck.b"));
        let mut x = ex.conv1d(&normed, &bw, Some(&bb), pw)?;
        drop(normed);
        let mut skip_sum: Option<Tensor> = None;
        let h_ch = self.config.hidden_channels;
        for r in 0..self.config.tcn_repeats {
            for blk in 0..self.config.blocks_per_repeat {
                let pre = format!("sep.block{r}_{blk}.");
                let get = |ex: &mut Exec, suffix: &str| -> Tensor {
                    ex.param(self.pid(&format!("{pre}{suffix}")))
                };
                let w1 = get(ex, "conv1.w");
                let b1 = get(ex, "conv1.b");
                let mut h = ex.conv1d(&x, &w1, Some(&b1), pw)?;
                let s1 = get(ex, "prelu1");
                h = ex.prelu(&h, &s1)?;
                let g1 = get(ex, "norm1.gain");
                let nb1 = get(ex, "norm1.bias");
                h = ex.cum_layer_norm(&h, &g1, &nb1, CLN_EPS)?;
                let dw = get(ex, "dconv.w");
                let db = get(ex, "dconv.b");
                let dilation = 1usize << blk;
                h = ex.conv1d(
                    &h,
                    &dw,
                    Some(&db),
                    ConvSpec::causal(self.config.kernel, dilation, h_ch),
                )?;
                let s2 = get(ex, "prelu2");
                h = ex.prelu(&h, &s2)?;
                let g2 = get(ex, "norm2.gain");
                let nb2 = get(ex, "norm2.bias");
                h = ex.cum_layer_norm(&h, &g2, &nb2, CLN_EPS)?;
                let rw = get(ex, "res.w");
                let rb = get(ex, "res.b");
                let res = ex.conv1d(&h, &rw, Some(&rb), pw)?;
                let sw = get(ex, "skip.w");
                let sb = get(ex, "skip.b");
                let skip = ex.conv1d(&h, &sw, Some(&sb), pw)?;
                x = ex.add(&x, &res)?;
                skip_sum = Some(match skip_sum {
                    None => skip,
                    Some(acc) => ex.add(&acc, &skip)?,
                });
            }
        }
        let out_slope = ex.param(self.pid("sep.out_prelu"));
        let out = ex.prelu(&skip_sum.expect("at least one block"), &out_slope)?;
        let hw = ex.param(self.pid("sep.head.w"));
        let hb = ex.param(self.pid("sep.head.b"));
        let logits = ex.conv1d(&out, &hw, Some(&hb), pw)?;
        Ok(ex.sigmoid(&logits))
    }

    /// One pass: masks applied per variant, then the shared decoder;
    /// returns C estimates shaped `[1, T]`.
    fn separate_pass(
        &self,
        ex: &mut Exec,
        primary: &Tensor,
        secondary: &Tensor,
        features: Option<&Tensor>,
    ) -> Result<Vec<Tensor>> {
        let cfg = &self.config;
        let prim_rep = self.encode_with(ex, primary, "enc.primary")?;
        let sec_rep = if cfg.variant.has_secondary_encoder() {
            Some(self.encode_with(ex, secondary, "enc.secondary")?)
        } else {
            None
        };
        let sep_in = match cfg.variant {
            Variant::Single => prim_rep.clone(),
            Variant::FeatConcat => {
                let feats = features.expect("features required for feat_concat");
                ex.concat_channels(&[&prim_rep, feats])?
            }
            Variant::ParallelSum | Variant::MaskAndSum => {
                ex.concat_channels(&[&prim_rep, sec_rep.as_ref().unwrap()])?
            }
        };
        let masks = self.separator(ex, &sep_in)?;
        drop(sep_in);
        let summed = match cfg.variant {
            Variant::ParallelSum => Some(ex.add(&prim_rep, sec_rep.as_ref().unwrap())?),
            _ => None,
        };
        let n = cfg.encoder_filters;
        let c = cfg.num_speakers;
        let dec_w = ex.param(self.pid("dec.w"));
        let mut outs = Vec::with_capacity(c);
        for i in 0..c {
            let rep = match cfg.variant {
                Variant::Single | Variant::FeatConcat => {
                    let m = ex.slice_channels(&masks, i * n, n)?;
                    ex.mul(&m, &prim_rep)?
                }
                Variant::ParallelSum => {
                    let m = ex.slice_channels(&masks, i * n, n)?;
                    ex.mul(&m, summed.as_ref().unwrap())?
                }
                Variant::MaskAndSum => {
                    // First C*N rows mask the primary representation, the
                    // next C*N rows the secondary one.
                    let mp = ex.slice_channels(&masks, i * n, n)?;
                    let ms = ex.slice_channels(&masks, (c + i) * n, n)?;
                    let a = ex.mul(&mp, &prim_rep)?;
                    let b = ex.mul(&ms, sec_rep.as_ref().unwrap())?;
                    ex.add(&a, &b)?
                }
            };
            outs.push(ex.transposed_conv1d(&rep, &dec_w, cfg.encoder_stride, cfg.filter_length)?);
        }
        Ok(outs)
    }

    /// Transposed-convolution reconstruction of masked representations;
    /// output length is `(F-1)*stride + L`.
    pub fn decode(&self, source_reps: &[ValueGrid]) -> Result<Vec<Waveform>> {
        let mut ex = Exec::direct(&self.params);
        let dec_w = ex.param(self.pid("dec.w"));
        let mut out = Vec::with_capacity(source_reps.len());
        for rep in source_reps {
            let t = ex.input(rep.clone());
            let wave =
                ex.transposed_conv1d(&t, &dec_w, self.config.encoder_stride, self.config.filter_length)?;
            out.push(Waveform::new(
                ex.grid(&wave).row(0).to_vec(),
                self.config.sample_rate,
            ));
        }
        Ok(out)
    }

    /// Full binaural inference without a tape: the left outputs come from
    /// the pass with the left channel as primary, the right outputs from
    /// the swapped pass, sharing every parameter. Inputs of any length
    /// are zero-padded to fill the last window and outputs trimmed back.
    pub fn forward_binaural(
        &self,
        left: &Waveform,
        right: &Waveform,
    ) -> Result<Vec<BinauralSignal>> {
        if left.len() != right.len() {
            return Err(Error::shape("forward: channel lengths differ"));
        }
        if left.sample_rate != self.config.sample_rate
            || right.sample_rate != self.config.sample_rate
        {
            return Err(Error::RateMismatch {
                found: left.sample_rate,
                expected: self.config.sample_rate,
            });
        }
        if left.is_empty() {
            return Err(Error::shape("forward: empty input"));
        }
        let t = left.len();
        let padded = self.config.padded_len(t);
        let mut l = left.samples.clone();
        let mut r = right.samples.clone();
        l.resize(padded, 0.0);
        r.resize(padded, 0.0);
        let left_est = self.direct_pass(&l, &r)?;
        let right_est = self.direct_pass(&r, &l)?;
        let mut out = Vec::with_capacity(self.config.num_speakers);
        for (le, re) in left_est.into_iter().zip(right_est) {
            out.push(BinauralSignal::new(
                Waveform::new(le[..t].to_vec(), self.config.sample_rate),
                Waveform::new(re[..t].to_vec(), self.config.sample_rate),
            )?);
        }
        Ok(out)
    }

    fn direct_pass(&self, primary: &[f64], secondary: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut ex = Exec::direct(&self.params);
        let p = ex.input(ValueGrid::from_samples(primary));
        let s = ex.input(ValueGrid::from_samples(secondary));
        let feats = self.pass_features(&mut ex, primary, secondary)?;
        let ests = self.separate_pass(&mut ex, &p, &s, feats.as_ref())?;
        Ok(ests
            .into_iter()
            .map(|t| ex.grid(&t).row(0).to_vec())
            .collect())
    }

    fn pass_features(
        &self,
        ex: &mut Exec,
        primary: &[f64],
        secondary: &[f64],
    ) -> Result<Option<Tensor>> {
        if self.config.variant != Variant::FeatConcat {
            return Ok(None);
        }
        let frames = self.config.frames_for(primary.len())?;
        let grid = ipd_ild_features(primary, secondary, self.config.encoder_stride, frames)?;
        Ok(Some(ex.input(grid)))
    }

    /// Records both channel passes on a tape for training. Inputs must
    /// already be window-aligned (`(T - L) %% stride == 0`), so the
    /// estimates match the input length exactly. The interaural features
    /// of the feature-concatenation variant enter as constants; gradients
    /// do not flow through the STFT.
    pub fn record_binaural(
        &self,
        graph: &mut Graph,
        store: &ParamStore,
        left: &[f64],
        right: &[f64],
    ) -> Result<RecordedBinaural> {
        if left.len() != right.len() {
            return Err(Error::shape("record: channel lengths differ"));
        }
        let frames = self.config.frames_for(left.len())?;
        if (left.len() - self.config.filter_length) % self.config.encoder_stride != 0 {
            return Err(Error::shape(
                "record: input length must fill the last encoder window",
            ));
        }
        let mut ex = Exec::tape(store, graph);
        let l = ex.input(ValueGrid::from_samples(left));
        let r = ex.input(ValueGrid::from_samples(right));
        let feats_l = self.pass_features(&mut ex, left, right)?;
        let left_nodes = self
            .separate_pass(&mut ex, &l, &r, feats_l.as_ref())?
            .into_iter()
            .map(|t| t.node_id())
            .collect();
        let feats_r = self.pass_features(&mut ex, right, left)?;
        let right_nodes = self
            .separate_pass(&mut ex, &r, &l, feats_r.as_ref())?
            .into_iter()
            .map(|t| t.node_id())
            .collect();
        Ok(RecordedBinaural {
            left: left_nodes,
            right: right_nodes,
            frames,
        })
    }
}

/// The mask-and-sum combination in isolation:
/// `rep_i = masks[i*N..][..N] * primary + masks[(C+i)*N..][..N] * secondary`.
pub fn mask_and_sum_combine(
    primary: &ValueGrid,
    secondary: &ValueGrid,
    masks: &ValueGrid,
    num_speakers: usize,
) -> Result<Vec<ValueGrid>> {
    let (n, f) = primary.shape();
    if secondary.shape() != (n, f) {
        return Err(Error::shape("combine: representation shapes differ"));
    }
    if masks.shape() != (2 * num_speakers * n, f) {
        return Err(Error::shape(format!(
            "combine: expected {} mask rows, found {}",
            2 * num_speakers * n,
            masks.channels
        )));
    }
    let mut out = Vec::with_capacity(num_speakers);
    for i in 0..num_speakers {
        let mut rep = ValueGrid::zeros(n, f);
        for ch in 0..n {
            let mp = masks.row(i * n + ch);
            let ms = masks.row((num_speakers + i) * n + ch);
            let (p, s) = (primary.row(ch), secondary.row(ch));
            let dst = rep.row_mut(ch);
            for t in 0..f {
                dst[t] = mp[t] * p[t] + ms[t] * s[t];
            }
        }
        out.push(rep);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, GradCheckConfig, GradCheckTarget};
    use rand::Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn noise(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn wave(rng: &mut ChaCha8Rng, len: usize) -> Waveform {
        Waveform::new(noise(rng, len), 8000)
    }

    fn rand_grid(rng: &mut ChaCha8Rng, channels: usize, time: usize) -> ValueGrid {
        let mut g = ValueGrid::zeros(channels, time);
        for v in g.data.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        g
    }

    fn set_param(model: &mut SeparationModel, name: &str, grid: ValueGrid) {
        let id = model.params.id(name).unwrap();
        *model.params.get_mut(id) = grid;
    }

    fn masks_for(model: &SeparationModel, l: &Waveform, r: &Waveform) -> ValueGrid {
        let (p, s) = model.encode(l, r).unwrap();
        let feats = if model.config.variant == Variant::FeatConcat {
            let frames = model.config.frames_for(l.len()).unwrap();
            Some(
                ipd_ild_features(&l.samples, &r.samples, model.config.encoder_stride, frames)
                    .unwrap(),
            )
        } else {
            None
        };
        model.estimate_masks(&p, s.as_ref(), feats.as_ref()).unwrap()
    }

    #[test]
    fn config_validation_rejects_bad_dimensions() {
        let good = ModelConfig::micro(Variant::Single, 2);
        assert!(good.validate().is_ok());
        let mut c = good.clone();
        c.num_speakers = 0;
        assert!(c.validate().is_err());
        let mut c = good.clone();
        c.encoder_stride = 3;
        assert!(c.validate().is_err());
        let mut c = good.clone();
        c.causal = false;
        assert!(c.validate().is_err());
        let mut c = good;
        c.hidden_channels = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_round_trips_and_rejects_unknown_fields() {
        let cfg = ModelConfig::paper_baseline(Variant::MaskAndSum, 2);
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains("\"mask_and_sum\""));
        let back: ModelConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        let with_extra = json.replacen('{', "{\"surprise\":1,", 1);
        assert!(serde_json::from_str::<ModelConfig>(&with_extra).is_err());
    }

    #[test]
    fn channel_arithmetic_matches_documented_examples() {
        let c = |v| ModelConfig::paper_baseline(v, 2);
        assert_eq!(c(Variant::Single).mask_channels(), 128);
        assert_eq!(c(Variant::MaskAndSum).mask_channels(), 256);
        assert_eq!(c(Variant::Single).separator_in_channels(), 64);
        assert_eq!(c(Variant::FeatConcat).separator_in_channels(), 64 + 387);
        assert_eq!(c(Variant::ParallelSum).separator_in_channels(), 128);
        let model = SeparationModel::new(c(Variant::Single), 0).unwrap();
        let w = model.params.get(model.params.id("enc.primary.w").unwrap());
        let b = model.params.get(model.params.id("enc.primary.b").unwrap());
        assert_eq!(w.data.len() + b.data.len(), 1088);
    }

    #[test]
    fn closed_form_count_matches_built_models() {
        for variant in Variant::all() {
            let cfg = ModelConfig::micro(variant, 2);
            let model = SeparationModel::new(cfg.clone(), 7).unwrap();
            assert_eq!(model.count_params(), param_count(&cfg));
        }
        let cfg = ModelConfig::paper_baseline(Variant::ParallelSum, 2);
        let model = SeparationModel::new(cfg.clone(), 7).unwrap();
        assert_eq!(model.count_params(), param_count(&cfg));
    }

    #[test]
    fn aligned_paper_configs_pick_expected_widths() {
        let widths: Vec<usize> = Variant::all()
            .iter()
            .map(|&v| ModelConfig::aligned_paper(v, 2).unwrap().hidden_channels)
            .collect();
        assert_eq!(widths, vec![259, 255, 258, 257]);
    }

    #[test]
    fn encode_framing_and_zero_input_examples() {
        let cfg = ModelConfig::paper_baseline(Variant::Single, 2);
        assert_eq!(cfg.frames_for(16).unwrap(), 1);
        assert_eq!(cfg.frames_for(8000).unwrap(), 999);
        assert!(cfg.frames_for(15).is_err());

        let model =
            SeparationModel::new(ModelConfig::micro(Variant::ParallelSum, 2), 1).unwrap();
        let z = Waveform::new(vec![0.0; 20], 8000);
        let (p, s) = model.encode(&z, &z).unwrap();
        assert_eq!(p.shape(), (8, 9));
        let s = s.unwrap();
        assert!(p.data.iter().chain(s.data.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn tied_encoders_produce_identical_representations() {
        let mut model =
            SeparationModel::new(ModelConfig::micro(Variant::ParallelSum, 2), 3).unwrap();
        let w = model.params.get(model.params.id("enc.primary.w").unwrap()).clone();
        let b = model.params.get(model.params.id("enc.primary.b").unwrap()).clone();
        set_param(&mut model, "enc.secondary.w", w);
        set_param(&mut model, "enc.secondary.b", b);
        let mut r = rng(4);
        let a = wave(&mut r, 40);
        let bw = wave(&mut r, 40);
        let (pa, _) = model.encode(&a, &bw).unwrap();
        let (_, sa) = model.encode(&bw, &a).unwrap();
        assert_eq!(pa.data, sa.unwrap().data);
    }

    #[test]
    fn masks_stay_strictly_inside_the_unit_interval() {
        for variant in Variant::all() {
            let model = SeparationModel::new(ModelConfig::micro(variant, 2), 5).unwrap();
            let mut r = rng(6);
            let l = wave(&mut r, 64);
            let rt = wave(&mut r, 64);
            let masks = masks_for(&model, &l, &rt);
            assert_eq!(masks.channels, model.config.mask_channels());
            assert!(masks.data.iter().all(|&m| m > 0.0 && m < 1.0));
        }
    }

    #[test]
    fn zeroed_separator_yields_half_masks() {
        let mut model =
            SeparationModel::new(ModelConfig::micro(Variant::MaskAndSum, 2), 8).unwrap();
        for id in 0..model.params.len() {
            if model.params.name(id).starts_with("sep.") {
                let (c, t) = model.params.get(id).shape();
                *model.params.get_mut(id) = ValueGrid::zeros(c, t);
            }
        }
        let mut r = rng(9);
        let l = wave(&mut r, 32);
        let rt = wave(&mut r, 32);
        let masks = masks_for(&model, &l, &rt);
        assert!(masks.data.iter().all(|&m| m == 0.5));
    }

    #[test]
    fn estimate_masks_rejects_variant_mismatches() {
        let micro = |v| SeparationModel::new(ModelConfig::micro(v, 2), 10).unwrap();
        let rep = ValueGrid::zeros(8, 5);
        let feats = ValueGrid::zeros(FEATURE_CHANNELS, 5);
        let single = micro(Variant::Single);
        assert!(single.estimate_masks(&rep, Some(&rep), None).is_err());
        assert!(single.estimate_masks(&rep, None, Some(&feats)).is_err());
        let parallel = micro(Variant::ParallelSum);
        assert!(parallel.estimate_masks(&rep, None, None).is_err());
        let fc = micro(Variant::FeatConcat);
        assert!(fc.estimate_masks(&rep, None, None).is_err());
        assert!(fc.estimate_masks(&rep, None, Some(&feats)).is_ok());
    }

    #[test]
    fn mask_frames_are_causal_in_the_representation() {
        let model =
            SeparationModel::new(ModelConfig::micro(Variant::ParallelSum, 2), 11).unwrap();
        let mut r = rng(12);
        let p = rand_grid(&mut r, 8, 16);
        let s = rand_grid(&mut r, 8, 16);
        let base = model.estimate_masks(&p, Some(&s), None).unwrap();
        let mut bumped = p.clone();
        *bumped.at_mut(3, 9) += 0.75;
        let moved = model.estimate_masks(&bumped, Some(&s), None).unwrap();
        for t in 0..9 {
            for c in 0..base.channels {
                assert_eq!(base.at(c, t), moved.at(c, t), "mask frame {t} moved");
            }
        }
        assert!((0..base.channels).any(|c| base.at(c, 9) != moved.at(c, 9)));
    }

    #[test]
    fn combine_examples_and_elementwise_oracle() {
        let mut r = rng(13);
        let (n, f, c) = (4usize, 5usize, 2usize);
        let p = rand_grid(&mut r, n, f);
        let s = rand_grid(&mut r, n, f);

        // secondary masks all zero: reduces to plain masking
        let mut masks = ValueGrid::zeros(2 * c * n, f);
        for ch in 0..c * n {
            for t in 0..f {
                *masks.at_mut(ch, t) = 0.25 + (ch + t) as f64 / 40.0;
            }
        }
        let reps = mask_and_sum_combine(&p, &s, &masks, c).unwrap();
        for i in 0..c {
            for ch in 0..n {
                for t in 0..f {
                    let want = masks.at(i * n + ch, t) * p.at(ch, t);
                    assert!((reps[i].at(ch, t) - want).abs() <= 1e-15);
                }
            }
        }

        // equal mask groups: the parallel-sum special case
        let mut tied = ValueGrid::zeros(2 * c * n, f);
        for ch in 0..c * n {
            for t in 0..f {
                let m = 0.3 + 0.05 * ch as f64 + 0.01 * t as f64;
                *tied.at_mut(ch, t) = m;
                *tied.at_mut(c * n + ch, t) = m;
            }
        }
        let reps = mask_and_sum_combine(&p, &s, &tied, c).unwrap();
        for i in 0..c {
            for ch in 0..n {
                for t in 0..f {
                    let want = tied.at(i * n + ch, t) * (p.at(ch, t) + s.at(ch, t));
                    assert!((reps[i].at(ch, t) - want).abs() <= 1e-12);
                }
            }
        }

        // random instance against direct recomputation
        let masks = rand_grid(&mut r, 2 * c * n, f);
        let reps = mask_and_sum_combine(&p, &s, &masks, c).unwrap();
        for i in 0..c {
            for ch in 0..n {
                for t in 0..f {
                    let want = masks.at(i * n + ch, t) * p.at(ch, t)
                        + masks.at((c + i) * n + ch, t) * s.at(ch, t);
                    assert_eq!(reps[i].at(ch, t), want);
                }
            }
        }
        assert!(mask_and_sum_combine(&p, &s, &rand_grid(&mut r, c * n, f), c).is_err());
    }

    #[test]
    fn decode_zero_reps_and_length_rule() {
        let model = SeparationModel::new(ModelConfig::micro(Variant::Single, 2), 14).unwrap();
        let reps = vec![ValueGrid::zeros(8, 9), ValueGrid::zeros(8, 9)];
        let waves = model.decode(&reps).unwrap();
        assert_eq!(waves.len(), 2);
        for w in &waves {
            assert_eq!(w.len(), 20); // (9 - 1) * 2 + 4
            assert!(w.samples.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn forward_binaural_shapes_lengths_and_validation() {
        let model =
            SeparationModel::new(ModelConfig::micro(Variant::MaskAndSum, 2), 15).unwrap();
        let mut r = rng(16);
        let l = wave(&mut r, 8000);
        let rt = wave(&mut r, 8000);
        let out = model.forward_binaural(&l, &rt).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].len(), 8000);

        // odd length exercises the pad-and-trim path
        let l2 = wave(&mut r, 101);
        let r2 = wave(&mut r, 101);
        let out = model.forward_binaural(&l2, &r2).unwrap();
        assert_eq!(out[1].len(), 101);
        assert!(out
            .iter()
            .all(|s| s.left.samples.iter().all(|v| v.is_finite())));

        assert!(model.forward_binaural(&l, &r2).is_err());
        let wrong_rate = Waveform::new(vec![0.1; 101], 16000);
        assert!(model.forward_binaural(&wrong_rate, &wrong_rate).is_err());
    }

    #[test]
    fn silence_in_silence_out_at_initialization() {
        for variant in Variant::all() {
            let model = SeparationModel::new(ModelConfig::micro(variant, 2), 17).unwrap();
            let z = Waveform::new(vec![0.0; 101], 8000);
            let out = model.forward_binaural(&z, &z).unwrap();
            for s in &out {
                assert!(s.left.samples.iter().all(|&v| v == 0.0));
                assert!(s.right.samples.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn channel_swap_symmetry_is_bitwise() {
        for variant in Variant::all() {
            let model = SeparationModel::new(ModelConfig::micro(variant, 2), 18).unwrap();
            let mut r = rng(19);
            let l = wave(&mut r, 73);
            let rt = wave(&mut r, 73);
            let fwd = model.forward_binaural(&l, &rt).unwrap();
            let swp = model.forward_binaural(&rt, &l).unwrap();
            for i in 0..2 {
                assert_eq!(fwd[i].left.samples, swp[i].right.samples);
                assert_eq!(fwd[i].right.samples, swp[i].left.samples);
            }
        }
    }

    #[test]
    fn single_variant_ignores_the_secondary_channel() {
        let model = SeparationModel::new(ModelConfig::micro(Variant::Single, 2), 20).unwrap();
        let mut r = rng(21);
        let l = wave(&mut r, 64);
        let r1 = wave(&mut r, 64);
        let r2 = wave(&mut r, 64);
        let a = model.forward_binaural(&l, &r1).unwrap();
        let b = model.forward_binaural(&l, &r2).unwrap();
        for i in 0..2 {
            assert_eq!(a[i].left.samples, b[i].left.samples);
            assert_ne!(a[i].right.samples, b[i].right.samples);
        }
    }

    #[test]
    fn pipeline_is_causal_through_both_channels() {
        let model =
            SeparationModel::new(ModelConfig::micro(Variant::MaskAndSum, 2), 22).unwrap();
        let mut r = rng(23);
        let l = wave(&mut r, 64);
        let rt = wave(&mut r, 64);
        let base = model.forward_binaural(&l, &rt).unwrap();
        let mut bumped = rt.clone();
        bumped.samples[40] += 0.5;
        let moved = model.forward_binaural(&l, &bumped).unwrap();
        // Sample 40 first enters encoder frame 19 (covering samples
        // 38..=41), so nothing before output sample 38 may move.
        let first = 38;
        for i in 0..2 {
            assert_eq!(base[i].left.samples[..first], moved[i].left.samples[..first]);
            assert_eq!(base[i].right.samples[..first], moved[i].right.samples[..first]);
            assert_ne!(base[i].left.samples[first..], moved[i].left.samples[first..]);
        }
    }

    #[test]
    fn tied_mask_groups_reproduce_parallel_sum() {
        let ps = SeparationModel::new(ModelConfig::micro(Variant::ParallelSum, 2), 24).unwrap();
        let mut ms =
            SeparationModel::new(ModelConfig::micro(Variant::MaskAndSum, 2), 25).unwrap();
        for id in 0..ps.params.len() {
            let name = ps.params.name(id).to_string();
            let src = ps.params.get(id).clone();
            if name == "sep.head.w" || name == "sep.head.b" {
                let (rows, cols) = src.shape();
                let mut tiled = ValueGrid::zeros(2 * rows, cols);
                for dup in 0..2 {
                    for rr in 0..rows {
                        tiled.row_mut(dup * rows + rr).copy_from_slice(src.row(rr));
                    }
                }
                set_param(&mut ms, &name, tiled);
            } else {
                set_param(&mut ms, &name, src);
            }
        }
        let mut r = rng(26);
        let l = wave(&mut r, 80);
        let rt = wave(&mut r, 80);
        let a = ps.forward_binaural(&l, &rt).unwrap();
        let b = ms.forward_binaural(&l, &rt).unwrap();
        for i in 0..2 {
            for (x, y) in a[i].left.samples.iter().zip(&b[i].left.samples) {
                assert!((x - y).abs() <= 1e-10);
            }
            for (x, y) in a[i].right.samples.iter().zip(&b[i].right.samples) {
                assert!((x - y).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn recorded_tape_matches_direct_inference_bitwise() {
        for variant in Variant::all() {
            let model = SeparationModel::new(ModelConfig::micro(variant, 2), 27).unwrap();
            let mut r = rng(28);
            let l = noise(&mut r, 64);
            let rt = noise(&mut r, 64);
            let mut g = Graph::new();
            let rec = model.record_binaural(&mut g, &model.params, &l, &rt).unwrap();
            assert_eq!(rec.frames, 31);
            let lw = Waveform::new(l, 8000);
            let rw = Waveform::new(rt, 8000);
            let direct = model.forward_binaural(&lw, &rw).unwrap();
            for i in 0..2 {
                assert_eq!(g.value(rec.left[i]).row(0), &direct[i].left.samples[..]);
                assert_eq!(g.value(rec.right[i]).row(0), &direct[i].right.samples[..]);
            }
        }
    }

    #[test]
    fn record_requires_window_aligned_input() {
        let model = SeparationModel::new(ModelConfig::micro(Variant::Single, 2), 29).unwrap();
        let mut g = Graph::new();
        let x = vec![0.1; 63];
        assert!(model.record_binaural(&mut g, &model.params, &x, &x).is_err());
    }

    #[test]
    fn checkpoint_round_trip_preserves_everything() {
        let dir = std::env::temp_dir().join("binsep-model-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.bsp");
        let model =
            SeparationModel::new(ModelConfig::micro(Variant::FeatConcat, 2), 30).unwrap();
        model.save(&path).unwrap();
        let back = SeparationModel::load(&path).unwrap();
        assert_eq!(back.config, model.config);
        for id in 0..model.params.len() {
            assert_eq!(model.params.get(id).data, back.params.get(id).data);
        }
        let mut rr = rng(31);
        let l = wave(&mut rr, 50);
        let rt = wave(&mut rr, 50);
        let a = model.forward_binaural(&l, &rt).unwrap();
        let b = back.forward_binaural(&l, &rt).unwrap();
        assert_eq!(a[0].left.samples, b[0].left.samples);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn from_parts_rejects_layout_mismatches() {
        let m1 = SeparationModel::new(ModelConfig::micro(Variant::Single, 2), 32).unwrap();
        assert!(SeparationModel::from_parts(
            ModelConfig::micro(Variant::ParallelSum, 2),
            m1.params.clone()
        )
        .is_err());
        let mut narrower = ModelConfig::micro(Variant::Single, 2);
        narrower.hidden_channels = 4;
        assert!(SeparationModel::from_parts(narrower, m1.params.clone()).is_err());
        assert!(
            SeparationModel::from_parts(ModelConfig::micro(Variant::Single, 2), ParamStore::new())
                .is_err()
        );
    }

    /// Gaussian elimination with partial pivoting; test-sized systems only.
    fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        let n = a.len();
        let m = b[0].len();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
                .unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            let d = a[col][col];
            for r in col + 1..n {
                let f = a[r][col] / d;
                for c2 in col..n {
                    a[r][c2] -= f * a[col][c2];
                }
                for c2 in 0..m {
                    b[r][c2] -= f * b[col][c2];
                }
            }
        }
        let mut x = vec![vec![0.0; m]; n];
        for row in (0..n).rev() {
            for c2 in 0..m {
                let mut acc = b[row][c2];
                for k in row + 1..n {
                    acc -= a[row][k] * x[k][c2];
                }
                x[row][c2] = acc / a[row][row];
            }
        }
        x
    }

    #[test]
    fn pseudo_inverse_decoder_reconstructs_the_input() {
        let mut model = SeparationModel::new(ModelConfig::micro(Variant::Single, 2), 33).unwrap();
        let (n, l) = (8usize, 4usize);
        let w = model.params.get(model.params.id("enc.primary.w").unwrap()).clone();
        // D = W (W^T W)^{-1} makes sum_n rep[n][f] * D[n][k] = x_f[k];
        // each interior sample is covered by L/stride = 2 windows, so
        // halve the decoder rows.
        let mut gram = vec![vec![0.0; l]; l];
        let mut rhs = vec![vec![0.0; n]; l];
        for i in 0..l {
            for j in 0..l {
                gram[i][j] = (0..n).map(|f| w.at(f, i) * w.at(f, j)).sum();
            }
            for f in 0..n {
                rhs[i][f] = w.at(f, i);
            }
        }
        let x = solve(gram, rhs);
        let mut dec = ValueGrid::zeros(n, l);
        for f in 0..n {
            for k in 0..l {
                *dec.at_mut(f, k) = 0.5 * x[k][f];
            }
        }
        set_param(&mut model, "dec.w", dec);
        let mut r = rng(34);
        let input = wave(&mut r, 40);
        let (rep, _) = model.encode(&input, &input).unwrap();
        let out = &model.decode(&[rep]).unwrap()[0];
        assert_eq!(out.len(), 40);
        for t in 2..out.len() - 2 {
            assert!(
                (out.samples[t] - input.samples[t]).abs() <= 1e-9,
                "t={t}: {} vs {}",
                out.samples[t],
                input.samples[t]
            );
        }
    }

    #[test]
    fn micro_end_to_end_gradients_match_finite_differences() {
        for variant in Variant::all() {
            let model = SeparationModel::new(ModelConfig::micro(variant, 2), 35).unwrap();
            let mut r = rng(36);
            let l = noise(&mut r, 64);
            let rt = noise(&mut r, 64);
            let tl: Vec<Vec<f64>> = (0..2).map(|_| noise(&mut r, 64)).collect();
            let tr: Vec<Vec<f64>> = (0..2).map(|_| noise(&mut r, 64)).collect();
            let build = |store: &ParamStore| {
                let mut g = Graph::new();
                let rec = model.record_binaural(&mut g, store, &l, &rt)?;
                let mut total = None;
                for i in 0..2 {
                    let t_l = g.input(ValueGrid::from_samples(&tl[i]));
                    let t_r = g.input(ValueGrid::from_samples(&tr[i]));
                    for loss in [
                        g.neg_snr_loss(rec.left[i], t_l)?,
                        g.neg_snr_loss(rec.right[i], t_r)?,
                    ] {
                        total = Some(match total {
                            None => loss,
                            Some(acc) => g.add(acc, loss)?,
                        });
                    }
                }
                let loss = g.scale(total.unwrap(), 0.25);
                Ok((g, loss))
            };
            let report = grad_check(
                &model.params,
                &GradCheckTarget::AllParams,
                // zero_scale 1e-3: with a loss of magnitude ~10, central
                // differences resolve gradients to roughly 5e-9 absolute,
                // so sub-1e-3 gradients cannot support a 1e-4 relative
                // comparison; they are held to 1e-4 absolute instead.
                &GradCheckConfig {
                    max_entries: 700,
                    zero_scale: 1e-3,
                    ..GradCheckConfig::default()
                },
                build,
            )
            .unwrap();
            assert!(
                report.max_rel_err <= 1e-4,
                "{variant:?}: {:?}",
                report
            );
        }
    }
}

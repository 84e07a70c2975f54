//! Mini-batch training with permutation-invariant losses, checkpoint
//! trails, plateau scheduling, and manifest-driven evaluation.
//!
//! One run is fully determined by (initial model, dataset bytes, config):
//! a single ChaCha stream drives epoch shuffling and segment crops, the
//! optimizer is plain arithmetic, and scene audio comes off disk. Repeat
//! runs produce byte-identical checkpoints.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    load_checkpoint, save_checkpoint, Gradients, Graph, NodeId, ParamStore, ValueGrid,
};
use crate::error::{Error, Result};
use crate::metrics::{
    ild_error, itd_error_windowed, permutations, pit_assign, si_sdr, snr_improvement, GccConfig,
    MetricsReport, Objective, UtteranceMetrics,
};
use crate::model::SeparationModel;
use crate::scene::{load_manifest, load_scene_audio, ManifestRecord};
use crate::signal::BinauralSignal;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Crops whose target has a silent channel are redrawn this many times
/// before the scene is declared unusable.
const RESAMPLE_ATTEMPTS: usize = 50;

/// ITD evaluation runs on the most energetic window of this many samples,
/// which bounds the correlation FFT on long utterances.
pub const ITD_EVAL_WINDOW: usize = 8192;

pub const LOG_FILE: &str = "train_log.jsonl";
pub const ABORT_DUMP_FILE: &str = "abort_dump.json";
pub const BEST_STEM: &str = "best";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub objective: Objective,
    pub learning_rate: f64,
    /// Multiplied into the learning rate after `plateau_patience` epochs
    /// without validation improvement.
    pub plateau_decay: f64,
    pub plateau_patience: usize,
    /// Gradient clip: batch-mean gradients are rescaled to this global L2
    /// norm when they exceed it.
    pub clip_norm: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Training crops this long are drawn from each scene; clamped to the
    /// scene length and aligned to the encoder stride.
    pub segment_seconds: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: Objective::Snr,
            learning_rate: 1e-3,
            plateau_decay: 0.5,
            plateau_patience: 3,
            clip_norm: 5.0,
            batch_size: 4,
            epochs: 10,
            segment_seconds: 2.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate {} must be > 0",
                self.learning_rate
            )));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.plateau_decay > 0.0 && self.plateau_decay <= 1.0) {
            return Err(Error::Config(format!(
                "plateau_decay {} outside (0, 1]",
                self.plateau_decay
            )));
        }
        if self.plateau_patience < 1 {
            return Err(Error::Config("plateau_patience must be >= 1".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config(format!(
                "clip_norm {} must be > 0",
                self.clip_norm
            )));
        }
        if !(self.segment_seconds > 0.0) {
            return Err(Error::Config(format!(
                "segment_seconds {} must be > 0",
                self.segment_seconds
            )));
        }
        Ok(())
    }
}

/// Adaptive-moment optimizer with bias correction. Moment grids live in
/// vectors parallel to the parameter store, so ids index directly.
pub struct Adam {
    pub lr: f64,
    pub step: u64,
    m: Vec<ValueGrid>,
    v: Vec<ValueGrid>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<ValueGrid> = store
            .iter()
            .map(|(_, e)| ValueGrid::zeros(e.value.channels, e.value.time))
            .collect();
        Adam {
            lr,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update from already-clipped batch gradients. Parameters without
    /// a gradient in this pass are left untouched, moments included.
    pub fn apply(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        for (id, g) in grads.param_iter() {
            if id >= self.m.len() || g.shape() != self.m[id].shape() {
                return Err(Error::shape(format!(
                    "optimizer state does not match gradient for parameter {id}"
                )));
            }
            let (m, v) = (&mut self.m[id], &mut self.v[id]);
            let p = store.get_mut(id);
            for i in 0..g.data.len() {
                let gi = g.data[i];
                m.data[i] = ADAM_BETA1 * m.data[i] + (1.0 - ADAM_BETA1) * gi;
                v.data[i] = ADAM_BETA2 * v.data[i] + (1.0 - ADAM_BETA2) * gi * gi;
                let m_hat = m.data[i] / c1;
                let v_hat = v.data[i] / c2;
                p.data[i] -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

/// Rescale gradients so the global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_gradients(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale_params(max_norm / norm);
    }
    norm
}

/// A dataset directory plus its parsed manifest.
#[derive(Debug, Clone)]
pub struct SceneSet {
    pub dir: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl SceneSet {
    pub fn open(dir: &Path) -> Result<Self> {
        Ok(SceneSet {
            dir: dir.to_path_buf(),
            records: load_manifest(dir)?,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn scene(
        &self,
        index: usize,
        expected_rate: Option<u32>,
    ) -> Result<(BinauralSignal, Vec<BinauralSignal>)> {
        load_scene_audio(&self.dir, &self.records[index], expected_rate)
    }
}

/// Everything needed to resume or audit a training run at one epoch
/// boundary: the model, the optimizer moments, and the scheduler's view of
/// validation history.
pub struct Checkpoint {
    pub model: SeparationModel,
    pub optimizer: Adam,
    /// Completed epochs; 0 is the untouched initial state.
    pub epoch: usize,
    /// Validation loss after each completed epoch.
    pub valid_history: Vec<f64>,
    pub plateau_best: Option<f64>,
    pub plateau_wait: usize,
    pub resampled_crops: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrainerMeta {
    epoch: usize,
    step: u64,
    lr: f64,
    valid_history: Vec<f64>,
    plateau_best: Option<f64>,
    plateau_wait: usize,
    resampled_crops: u64,
}

fn model_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.bspc"))
}

fn optimizer_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.opt.bspc"))
}

impl Checkpoint {
    /// Writes `<stem>.bspc` (the model, loadable on its own) and
    /// `<stem>.opt.bspc` (moments plus trainer metadata).
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        self.model.save(&model_path(dir, stem))?;
        let meta = TrainerMeta {
            epoch: self.epoch,
            step: self.optimizer.step,
            lr: self.optimizer.lr,
            valid_history: self.valid_history.clone(),
            plateau_best: self.plateau_best,
            plateau_wait: self.plateau_wait,
            resampled_crops: self.resampled_crops,
        };
        let mut opt_store = ParamStore::new();
        for (id, entry) in self.model.params.iter() {
            opt_store.add(format!("m.{}", entry.name), self.optimizer.m[id].clone())?;
            opt_store.add(format!("v.{}", entry.name), self.optimizer.v[id].clone())?;
        }
        save_checkpoint(
            &optimizer_path(dir, stem),
            &serde_json::to_string(&meta)?,
            &opt_store,
        )
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let model = SeparationModel::load(&model_path(dir, stem))?;
        let (meta_json, opt_store) = load_checkpoint(&optimizer_path(dir, stem))?;
        let meta: TrainerMeta = serde_json::from_str(&meta_json)?;
        if opt_store.len() != 2 * model.params.len() {
            return Err(Error::Checkpoint(format!(
                "optimizer file has {} entries for {} parameters",
                opt_store.len(),
                model.params.len()
            )));
        }
        let mut optimizer = Adam::new(&model.params, meta.lr);
        optimizer.step = meta.step;
        for (id, entry) in model.params.iter() {
            for (slot, prefix) in [(&mut optimizer.m, "m"), (&mut optimizer.v, "v")] {
                let name = format!("{prefix}.{}", entry.name);
                let oid = opt_store
                    .id(&name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing moment {name}")))?;
                let grid = opt_store.get(oid);
                if grid.shape() != entry.value.shape() {
                    return Err(Error::Checkpoint(format!("moment {name} has wrong shape")));
                }
                slot[id] = grid.clone();
            }
        }
        Ok(Checkpoint {
            model,
            optimizer,
            epoch: meta.epoch,
            valid_history: meta.valid_history,
            plateau_best: meta.plateau_best,
            plateau_wait: meta.plateau_wait,
            resampled_crops: meta.resampled_crops,
        })
    }
}

/// One line of the JSONL training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub lr: f64,
    pub wall_time: f64,
    pub resampled_crops: u64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose checkpoint `best` points at; 0 means the initial state
    /// (zero-epoch runs).
    pub best_epoch: usize,
    pub best_valid_loss: Option<f64>,
    pub resampled_crops: u64,
}

fn epoch_stem(epoch: usize) -> String {
    format!("epoch_{epoch:03}")
}

/// Largest window-aligned crop length at most `want`, at least one window.
fn aligned_segment(want: usize, scene_len: usize, filter_length: usize, stride: usize) -> Result<usize> {
    if scene_len < filter_length {
        return Err(Error::invalid(format!(
            "scene length {scene_len} is shorter than one analysis window ({filter_length})"
        )));
    }
    let want = want.min(scene_len).max(filter_length);
    Ok(filter_length + (want - filter_length) / stride * stride)
}

struct Crop {
    start: usize,
    len: usize,
    resamples: u64,
}

/// Draw a crop whose every target channel has signal. SNR against a silent
/// reference is undefined, so such draws are retried and counted.
fn draw_crop<R: Rng + ?Sized>(
    targets: &[BinauralSignal],
    seg_len: usize,
    rng: &mut R,
) -> Result<Crop> {
    let scene_len = targets[0].len();
    let top = scene_len - seg_len;
    let mut resamples = 0;
    for _ in 0..RESAMPLE_ATTEMPTS {
        let start = if top == 0 { 0 } else { rng.gen_range(0..=top) };
        let silent = targets.iter().any(|t| {
            [&t.left, &t.right].iter().any(|ch| {
                ch.samples[start..start + seg_len]
                    .iter()
                    .all(|&s| s == 0.0)
            })
        });
        if !silent {
            return Ok(Crop {
                start,
                len: seg_len,
                resamples,
            });
        }
        resamples += 1;
    }
    Err(Error::DegenerateSource(format!(
        "no crop of {seg_len} samples with all speakers active after {RESAMPLE_ATTEMPTS} draws"
    )))
}

/// Tape-side PIT: builds per-pair losses for all assignments, picks the
/// best permutation from the forward values, and returns a single loss
/// node averaging the chosen pairs over both channels. Only the chosen
/// pairs receive gradient.
fn pit_loss_node(
    graph: &mut Graph,
    estimates: (&[NodeId], &[NodeId]),
    targets: (&[NodeId], &[NodeId]),
    objective: Objective,
) -> Result<(NodeId, f64, Vec<usize>)> {
    let c = targets.0.len();
    let mut pair_nodes = vec![vec![(0usize, 0usize); c]; c];
    let mut pair_loss = vec![vec![0.0f64; c]; c];
    for t in 0..c {
        for e in 0..c {
            let mut node = |est, tgt| match objective {
                Objective::Snr => graph.neg_snr_loss(est, tgt),
                Objective::SiSdr => graph.neg_si_sdr_loss(est, tgt),
            };
            let l = node(estimates.0[e], targets.0[t])?;
            let r = node(estimates.1[e], targets.1[t])?;
            pair_nodes[t][e] = (l, r);
            pair_loss[t][e] = 0.5 * (graph.value(l).at(0, 0) + graph.value(r).at(0, 0));
        }
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in permutations(c) {
        let mean = (0..c).map(|t| pair_loss[t][perm[t]]).sum::<f64>() / c as f64;
        // NaN losses must not be silently skipped by the comparison; keep
        // the first permutation in that case and let the caller abort.
        if best.as_ref().is_none_or(|(b, _)| mean < *b || b.is_nan()) {
            best = Some((mean, perm));
        }
    }
    let (loss_val, perm) = best.expect("c >= 1");
    let mut sum = None;
    for t in 0..c {
        let (l, r) = pair_nodes[t][perm[t]];
        for node in [l, r] {
            sum = Some(match sum {
                None => node,
                Some(s) => graph.add(s, node)?,
            });
        }
    }
    let total = graph.scale(sum.expect("c >= 1"), 1.0 / (2 * c) as f64);
    Ok((total, loss_val, perm))
}

/// Mean PIT loss over a manifest, model run in inference mode on full
/// utterances. This is the quantity the plateau scheduler watches; it uses
/// the same objective as training.
pub fn validation_loss(
    model: &SeparationModel,
    set: &SceneSet,
    objective: Objective,
) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::invalid("validation manifest is empty"));
    }
    let mut sum = 0.0;
    for i in 0..set.len() {
        let (mix, targets) = set.scene(i, Some(model.config.sample_rate))?;
        check_speakers(model, &targets, &set.records[i].scene_id)?;
        let est = model.forward_binaural(&mix.left, &mix.right)?;
        sum += pit_assign(&targets, &est, objective)?.loss;
    }
    Ok(sum / set.len() as f64)
}

fn check_speakers(
    model: &SeparationModel,
    targets: &[BinauralSignal],
    scene_id: &str,
) -> Result<()> {
    if targets.len() != model.config.num_speakers {
        return Err(Error::invalid(format!(
            "{scene_id}: {} targets but the model separates {}",
            targets.len(),
            model.config.num_speakers
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct AbortDump<'a> {
    epoch: usize,
    global_step: u64,
    batch_in_epoch: usize,
    scene_ids: Vec<&'a str>,
    crop_starts: Vec<usize>,
    crop_len: usize,
    loss: String,
    grad_norm: String,
}

/// Runs the optimization loop, mutating `model` in place (final-epoch
/// state; the best validation epoch is retained as the `best` checkpoint
/// in `out_dir`). Writes one checkpoint per epoch, `epoch_000` being the
/// untouched initial state, and appends one JSONL record per epoch to
/// the training log.
pub fn train(
    model: &mut SeparationModel,
    train_set: &SceneSet,
    valid_set: &SceneSet,
    config: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainReport> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("training manifest is empty"));
    }
    if valid_set.is_empty() {
        return Err(Error::invalid("validation manifest is empty"));
    }
    let c = model.config.num_speakers;
    if c > 4 {
        return Err(Error::invalid(format!(
            "permutation search over {c} speakers is not supported (max 4)"
        )));
    }
    std::fs::create_dir_all(out_dir)?;
    let mc = model.config.clone();
    let mut optimizer = Adam::new(&model.params, config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut global_step: u64 = 0;
    let mut resampled_total: u64 = 0;
    let mut valid_history: Vec<f64> = Vec::new();
    let mut plateau_best: Option<f64> = None;
    let mut plateau_wait: usize = 0;
    let mut best_epoch = 0usize;
    let mut epochs_out: Vec<EpochRecord> = Vec::new();

    let snapshot = |model: &SeparationModel,
                    optimizer: &Adam,
                    epoch: usize,
                    valid_history: &[f64],
                    plateau_best: Option<f64>,
                    plateau_wait: usize,
                    resampled: u64,
                    stem: &str|
     -> Result<()> {
        Checkpoint {
            model: SeparationModel::from_parts(model.config.clone(), model.params.clone())?,
            optimizer: Adam {
                lr: optimizer.lr,
                step: optimizer.step,
                m: optimizer.m.clone(),
                v: optimizer.v.clone(),
            },
            epoch,
            valid_history: valid_history.to_vec(),
            plateau_best,
            plateau_wait,
            resampled_crops: resampled,
        }
        .save(out_dir, stem)
    };

    snapshot(model, &optimizer, 0, &[], None, 0, 0, &epoch_stem(0))?;
    if config.epochs == 0 {
        snapshot(model, &optimizer, 0, &[], None, 0, 0, BEST_STEM)?;
        return Ok(TrainReport {
            epochs: epochs_out,
            best_epoch: 0,
            best_valid_loss: None,
            resampled_crops: 0,
        });
    }

    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(out_dir.join(LOG_FILE))?;

    let want_seg = (config.segment_seconds * mc.sample_rate as f64).round() as usize;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.epochs {
        let t0 = Instant::now();
        let epoch_resampled_before = resampled_total;
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;

        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            global_step += 1;
            let mut acc: Option<Gradients> = None;
            let mut batch_loss = 0.0;
            let mut dump_starts = Vec::with_capacity(batch.len());
            for (k, &scene_idx) in batch.iter().enumerate() {
                let record = &train_set.records[scene_idx];
                let (mix, targets) = train_set.scene(scene_idx, Some(mc.sample_rate))?;
                check_speakers(model, &targets, &record.scene_id)?;
                let seg = aligned_segment(want_seg, mix.len(), mc.filter_length, mc.encoder_stride)?;
                let crop = draw_crop(&targets, seg, &mut rng)?;
                resampled_total += crop.resamples;
                dump_starts.push(crop.start);
                let (a, b) = (crop.start, crop.start + crop.len);

                let mut graph = Graph::new();
                let rec = model.record_binaural(
                    &mut graph,
                    &model.params,
                    &mix.left.samples[a..b],
                    &mix.right.samples[a..b],
                )?;
                let tl: Vec<NodeId> = targets
                    .iter()
                    .map(|t| graph.input(ValueGrid::from_samples(&t.left.samples[a..b])))
                    .collect();
                let tr: Vec<NodeId> = targets
                    .iter()
                    .map(|t| graph.input(ValueGrid::from_samples(&t.right.samples[a..b])))
                    .collect();
                let (loss_node, loss_val, _) = pit_loss_node(
                    &mut graph,
                    (&rec.left, &rec.right),
                    (&tl, &tr),
                    config.objective,
                )?;
                let grads = graph.backward(loss_node, &model.params)?;
                if !loss_val.is_finite() || !grads.is_finite() {
                    let dump = AbortDump {
                        epoch,
                        global_step,
                        batch_in_epoch: batch_idx,
                        scene_ids: batch[..=k]
                            .iter()
                            .map(|&i| train_set.records[i].scene_id.as_str())
                            .collect(),
                        crop_starts: dump_starts,
                        crop_len: seg,
                        loss: format!("{loss_val}"),
                        grad_norm: format!("{}", grads.global_norm()),
                    };
                    let dump_path = out_dir.join(ABORT_DUMP_FILE);
                    std::fs::write(&dump_path, serde_json::to_string_pretty(&dump)?)?;
                    return Err(Error::TrainAbort(format!(
                        "non-finite loss at epoch {epoch}, batch {batch_idx} (scene {}); \
                         diagnostics in {}",
                        record.scene_id,
                        dump_path.display()
                    )));
                }
                batch_loss += loss_val;
                match &mut acc {
                    None => acc = Some(grads),
                    Some(a) => a.accumulate(&grads)?,
                }
            }
            let mut grads = acc.expect("non-empty batch");
            grads.scale_params(1.0 / batch.len() as f64);
            clip_gradients(&mut grads, config.clip_norm);
            optimizer.apply(&mut model.params, &grads)?;
            loss_sum += batch_loss / batch.len() as f64;
            loss_count += 1;
        }

        let train_loss = loss_sum / loss_count as f64;
        let valid_loss = validation_loss(model, valid_set, config.objective)?;
        valid_history.push(valid_loss);

        // Plateau schedule: decay after `patience` consecutive epochs
        // without strict improvement.
        let improved = plateau_best.is_none_or(|b| valid_loss < b);
        if improved {
            plateau_best = Some(valid_loss);
            plateau_wait = 0;
            best_epoch = epoch;
        } else {
            plateau_wait += 1;
            if plateau_wait >= config.plateau_patience {
                optimizer.lr *= config.plateau_decay;
                plateau_wait = 0;
            }
        }

        let epoch_resampled = resampled_total - epoch_resampled_before;
        snapshot(
            model,
            &optimizer,
            epoch,
            &valid_history,
            plateau_best,
            plateau_wait,
            resampled_total,
            &epoch_stem(epoch),
        )?;
        if improved {
            snapshot(
                model,
                &optimizer,
                epoch,
                &valid_history,
                plateau_best,
                plateau_wait,
                resampled_total,
                BEST_STEM,
            )?;
        }

        let record = EpochRecord {
            epoch,
            train_loss,
            valid_loss,
            lr: optimizer.lr,
            wall_time: t0.elapsed().as_secs_f64(),
            resampled_crops: epoch_resampled,
        };
        writeln!(log, "{}", serde_json::to_string(&record)?)?;
        epochs_out.push(record);
    }

    Ok(TrainReport {
        epochs: epochs_out,
        best_epoch,
        best_valid_loss: plateau_best,
        resampled_crops: resampled_total,
    })
}

/// What stands in for the model during evaluation. The bypass modes anchor
/// the metric pipeline: oracle marks the ceiling, identity the floor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Model,
    /// Estimates are the targets themselves.
    OracleTargets,
    /// Every estimate is the unprocessed mixture.
    IdentityMixture,
}

/// Full-utterance evaluation over a manifest: separate, align speakers by
/// PIT, score each (scene, speaker) pair, aggregate with trimming.
pub fn evaluate(
    model: &SeparationModel,
    set: &SceneSet,
    trim_fraction: f64,
    mode: EvalMode,
    objective: Objective,
) -> Result<MetricsReport> {
    if set.is_empty() {
        return Err(Error::invalid("evaluation manifest is empty"));
    }
    let gcc = GccConfig::default();
    let mut rows = Vec::with_capacity(set.len() * model.config.num_speakers);
    for i in 0..set.len() {
        let record = &set.records[i];
        let (mix, targets) = set.scene(i, Some(model.config.sample_rate))?;
        check_speakers(model, &targets, &record.scene_id)?;
        let estimates: Vec<BinauralSignal> = match mode {
            EvalMode::Model => model.forward_binaural(&mix.left, &mix.right)?,
            EvalMode::OracleTargets => targets.clone(),
            EvalMode::IdentityMixture => vec![mix.clone(); targets.len()],
        };
        let assignment = pit_assign(&targets, &estimates, objective)?;
        for (t, target) in targets.iter().enumerate() {
            let est = &estimates[assignment.permutation[t]];
            let snri = snr_improvement(&mix, target, est)?;
            let si = 0.5
                * (si_sdr(&target.left, &est.left)?.db + si_sdr(&target.right, &est.right)?.db);
            let defined = [&target.left, &target.right, &est.left, &est.right]
                .iter()
                .all(|w| w.energy() > 0.0);
            let (itd, ild) = if defined {
                (
                    Some(itd_error_windowed(target, est, &gcc, ITD_EVAL_WINDOW)?),
                    Some(ild_error(target, est)?),
                )
            } else {
                (None, None)
            };
            rows.push(UtteranceMetrics {
                scene_id: record.scene_id.clone(),
                speaker_id: t,
                snri_db: snri.db,
                snri_capped: snri.capped,
                si_sdr_db: si,
                itd_error_us: itd,
                ild_error_db: ild,
                permutation: assignment.permutation.clone(),
            });
        }
    }
    MetricsReport::new(rows, trim_fraction)
}

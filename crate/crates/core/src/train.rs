//! Two-stage training.
//!
//! Stage 0 trains the text and image encoders jointly (the pre-aligned anchor
//! pair) and returns them frozen. Stage 1 trains a fresh audio encoder
//! against the frozen text encoder on English text only; the image encoder is
//! never consulted.
//!
//! All randomness is drawn from `(seed, stream)` generators whose stream id
//! encodes the stage, the purpose and the global position (epoch, or step and
//! slot in the batch). A run is therefore a pure function of its inputs, and
//! a checkpoint only needs the step counter to resume bit-identically.

use crate::clock::Stopwatch;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{training_view, AugmentConfig};
use crate::contrastive::{loss_and_grad, ContrastiveConfig};
use crate::encoder::{
    self, encode, encode_backward, init_encoder, EncoderGrads, EncoderParams, EncoderSpec, Fingerprint, Layer,
};
use crate::error::{Error, FormatError, Result};
use crate::eval::{anchor_retrieval, recall_at_k};
use crate::numeric::{Matrix, Rng, RngState};
use crate::synthdata::{Split, SyntheticDataset};
use crate::wire::{self, Reader, Writer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// `p ← p − lr·wd·p` separately from the Adam step; otherwise `wd·p` is
    /// added to the gradient.
    pub decoupled_weight_decay: bool,
    pub max_lr: f64,
    pub min_lr: f64,
    /// Fraction of total steps spent in linear warmup.
    pub warmup_fraction: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl OptimConfig {
    /// Appendix-style values for fine-tuning large pretrained encoders.
    pub fn paper_basic() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 1e-6,
            decoupled_weight_decay: true,
            max_lr: 5e-5,
            min_lr: 1e-5,
            warmup_fraction: 0.1,
            batch_size: 64,
            epochs: 3,
            seed: 42,
        }
    }

    /// Same optimizer, learning rates and epochs rescaled for small MLPs.
    pub fn desk() -> Self {
        Self {
            max_lr: 3e-3,
            min_lr: 1e-5,
            epochs: 200,
            ..Self::paper_basic()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.beta1 && self.beta1 < self.beta2 && self.beta2 < 1.0) {
            return Err(Error::param("optim: need 0 < beta1 < beta2 < 1"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::param("optim.eps must be positive"));
        }
        if !(self.min_lr > 0.0 && self.max_lr >= self.min_lr) {
            return Err(Error::param("optim: need max_lr >= min_lr > 0"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::param("optim.weight_decay must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::param("optim.warmup_fraction must be in [0, 1)"));
        }
        if self.batch_size < 2 {
            return Err(Error::param("optim.batch_size must be >= 2"));
        }
        if self.epochs == 0 {
            return Err(Error::param("optim.epochs must be >= 1"));
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `max_lr`, then cosine decay to `min_lr`.
pub fn lr_at(step: u64, total_steps: u64, warmup_steps: u64, max_lr: f64, min_lr: f64) -> Result<f64> {
    if step >= total_steps || warmup_steps >= total_steps {
        return Err(Error::param(format!(
            "lr_at: need step < total and warmup < total (step {step}, warmup {warmup_steps}, total {total_steps})"
        )));
    }
    if !(min_lr > 0.0 && max_lr >= min_lr) {
        return Err(Error::param("lr_at: need max_lr >= min_lr > 0"));
    }
    if step < warmup_steps {
        return Ok(max_lr * step as f64 / warmup_steps as f64);
    }
    let progress = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
    Ok(min_lr + 0.5 * (max_lr - min_lr) * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: EncoderGrads,
    pub v: EncoderGrads,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &EncoderParams) -> Self {
        Self {
            m: EncoderGrads::zeros_like(params),
            v: EncoderGrads::zeros_like(params),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(
    params: &mut EncoderParams,
    grads: &EncoderGrads,
    state: &mut AdamState,
    lr: f64,
    cfg: &OptimConfig,
) -> Result<()> {
    if params.is_frozen() {
        return Err(Error::protocol("adam_step on a frozen encoder"));
    }
    if grads.layers.len() != params.layers().len() || state.m.layers.len() != params.layers().len() {
        return Err(Error::param(
            "adam_step: gradient/state layout does not match parameters",
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let wd = cfg.weight_decay;
    for (li, layer) in params.layers_mut().iter_mut().enumerate() {
        let g = &grads.layers[li];
        let m = &mut state.m.layers[li];
        let v = &mut state.v.layers[li];
        for (p, (g, (m, v))) in [
            (&mut layer.weight, (&g.weight, (&mut m.weight, &mut v.weight))),
            (&mut layer.bias, (&g.bias, (&mut m.bias, &mut v.bias))),
        ] {
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    left: p.shape(),
                    right: g.shape(),
                });
            }
            let (pd, gd, md, vd) = (p.data_mut(), g.as_slice(), m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                let mut gi = gd[i];
                if !cfg.decoupled_weight_decay {
                    gi += wd * pd[i];
                }
                md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gi;
                vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gi * gi;
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                if cfg.decoupled_weight_decay {
                    pd[i] -= lr * wd * pd[i];
                }
                pd[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
                if !pd[i].is_finite() {
                    return Err(Error::NonFinite("adam_step"));
                }
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: u64,
    /// Mean of R@1/5/10 on the validation split.
    pub val_r_avg: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub wall_time_s: f64,
}

/// Wall time is informational and excluded from equality.
impl PartialEq for TrainLog {
    fn eq(&self, other: &Self) -> bool {
        self.steps == other.steps && self.epochs == other.epochs
    }
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,epoch,lr,loss,val_r_avg\n");
        let mut epochs = self.epochs.iter().peekable();
        for (i, s) in self.steps.iter().enumerate() {
            let last_of_epoch = self.steps.get(i + 1).is_none_or(|n| n.epoch != s.epoch);
            let val = match epochs.peek() {
                Some(e) if last_of_epoch && e.epoch == s.epoch => format!("{:.4}", epochs.next().unwrap().val_r_avg),
                _ => String::new(),
            };
            out.push_str(&format!("{},{},{:.6e},{:.6},{}\n", s.step, s.epoch, s.lr, s.loss, val));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn first_loss(&self) -> Option<f64> {
        self.steps.first().map(|s| s.loss)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.steps.last().map(|s| s.loss)
    }
}

/// Optimizer, loss and augmentation settings for one training stage.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub optim: OptimConfig,
    pub contrastive: ContrastiveConfig,
    pub augment: AugmentConfig,
}

// Stream layout: stage in bits 56.., purpose in bits 48..56, position below.
const STAGE_ANCHOR: u64 = 0;
const STAGE_NEW_MODALITY: u64 = 1;
const PURPOSE_INIT: u64 = 1;
const PURPOSE_SHUFFLE: u64 = 2;
const PURPOSE_SAMPLE: u64 = 3;

fn stream(stage: u64, purpose: u64, position: u64) -> u64 {
    debug_assert!(position < 1 << 48);
    (stage << 56) | (purpose << 48) | position
}

/// Position-addressed batch schedule over the training split.
#[derive(Clone, Debug)]
struct Schedule {
    train: Vec<usize>,
    batch_size: usize,
    steps_per_epoch: u64,
    total_steps: u64,
    warmup_steps: u64,
}

impl Schedule {
    fn new(ds: &SyntheticDataset, cfg: &OptimConfig) -> Result<Self> {
        cfg.validate()?;
        let train = ds.indices(Split::Train);
        if train.len() < cfg.batch_size {
            return Err(Error::Config(format!(
                "training split has {} samples, fewer than batch_size {}",
                train.len(),
                cfg.batch_size
            )));
        }
        let full = train.len() / cfg.batch_size;
        let rest = train.len() % cfg.batch_size;
        // A trailing batch of one cannot form a contrastive pair.
        let steps_per_epoch = (full + usize::from(rest >= 2)) as u64;
        let total_steps = steps_per_epoch * cfg.epochs as u64;
        let warmup_steps = ((cfg.warmup_fraction * total_steps as f64).round() as u64).min(total_steps - 1);
        Ok(Self {
            train,
            batch_size: cfg.batch_size,
            steps_per_epoch,
            total_steps,
            warmup_steps,
        })
    }

    fn epoch_of(&self, step: u64) -> u64 {
        step / self.steps_per_epoch
    }

    fn is_epoch_end(&self, step: u64) -> bool {
        (step + 1).is_multiple_of(self.steps_per_epoch)
    }

    /// Dataset indices of the batch at `step`.
    fn batch(&self, base: &Rng, stage: u64, step: u64) -> Vec<usize> {
        let epoch = self.epoch_of(step);
        let mut order = self.train.clone();
        base.split(stream(stage, PURPOSE_SHUFFLE, epoch)).shuffle(&mut order);
        let b = (step % self.steps_per_epoch) as usize;
        let end = ((b + 1) * self.batch_size).min(order.len());
        order[b * self.batch_size..end].to_vec()
    }

    fn sample_stream(&self, stage: u64, step: u64, slot: usize) -> u64 {
        stream(stage, PURPOSE_SAMPLE, step * self.batch_size as u64 + slot as u64)
    }
}

/// Numeric breakdown inside an optimization step (overflowed activations,
/// collapsed embeddings) is reported as divergence at that step.
fn diverged(step: u64, e: Error) -> Error {
    match e {
        Error::NonFinite(_) | Error::Degenerate { .. } => Error::Divergence { step, loss: f64::NAN },
        other => other,
    }
}

/// Stage-1 trainer: a trainable encoder for the new modality aligned to a
/// frozen text anchor on English text.
pub struct NewModalityTrainer<'a> {
    frozen_text: &'a EncoderParams,
    text_fingerprint: Fingerprint,
    ds: &'a SyntheticDataset,
    cfg: TrainConfig,
    schedule: Schedule,
    base: Rng,
    audio: EncoderParams,
    adam: AdamState,
    step: u64,
    log: TrainLog,
    /// English validation text embeddings (frozen, so computed once).
    val_text: Option<Matrix>,
}

impl<'a> NewModalityTrainer<'a> {
    pub fn new(
        frozen_text: &'a EncoderParams,
        audio_spec: &EncoderSpec,
        ds: &'a SyntheticDataset,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        if !frozen_text.is_frozen() {
            return Err(Error::protocol("stage-1 training requires a frozen text anchor"));
        }
        cfg.augment.validate(ds.world.audio_channels)?;
        let expected_input = cfg.augment.target_len * ds.world.audio_channels;
        if audio_spec.input_dim != expected_input {
            return Err(Error::Config(format!(
                "audio encoder input_dim {} must equal target_len x channels = {expected_input}",
                audio_spec.input_dim
            )));
        }
        if audio_spec.embed_dim != frozen_text.spec().embed_dim {
            return Err(Error::Config("audio and text encoders must share embed_dim".into()));
        }
        let schedule = Schedule::new(ds, &cfg.optim)?;
        let base = Rng::new(cfg.optim.seed);
        let audio = init_encoder(audio_spec, &mut base.split(stream(STAGE_NEW_MODALITY, PURPOSE_INIT, 0)))?;
        let adam = AdamState::new(&audio);
        let val = ds.indices(Split::Val);
        let val_text = if val.is_empty() {
            None
        } else {
            Some(encode(frozen_text, &ds.text_matrix(&val, 0)?)?)
        };
        Ok(Self {
            frozen_text,
            text_fingerprint: frozen_text.fingerprint(),
            ds,
            cfg: cfg.clone(),
            schedule,
            base,
            audio,
            adam,
            step: 0,
            log: TrainLog::default(),
            val_text,
        })
    }

    pub fn total_steps(&self) -> u64 {
        self.schedule.total_steps
    }

    pub fn current_step(&self) -> u64 {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.schedule.total_steps
    }

    pub fn audio(&self) -> &EncoderParams {
        &self.audio
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    /// Runs one optimizer step and returns its loss.
    pub fn step(&mut self) -> Result<f64> {
        if self.is_done() {
            return Err(Error::param("training already finished"));
        }
        let step = self.step;
        let idx = self.schedule.batch(&self.base, STAGE_NEW_MODALITY, step);
        let target_len = self.cfg.augment.target_len;
        let views = idx
            .par_iter()
            .enumerate()
            .map(|(slot, &i)| {
                let mut rng = self
                    .base
                    .split(self.schedule.sample_stream(STAGE_NEW_MODALITY, step, slot));
                training_view(&self.ds.samples[i].audio, &self.cfg.augment, &mut rng).map(|v| v.flatten().to_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        debug_assert!(views
            .iter()
            .all(|v| v.len() == target_len * self.ds.world.audio_channels));
        let audio_in = Matrix::from_rows(&views)?;
        let text_in = self.ds.text_matrix(&idx, 0)?;

        let lr = lr_at(
            step,
            self.schedule.total_steps,
            self.schedule.warmup_steps,
            self.cfg.optim.max_lr,
            self.cfg.optim.min_lr,
        )?;
        let loss = (|| {
            let text_emb = encode(self.frozen_text, &text_in)?;
            let audio_emb = encode(&self.audio, &audio_in)?;
            let (loss, _, g_audio) = loss_and_grad(&text_emb, &audio_emb, &self.cfg.contrastive)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { step, loss });
            }
            let grads = encode_backward(&self.audio, &audio_in, &g_audio)?;
            adam_step(&mut self.audio, &grads, &mut self.adam, lr, &self.cfg.optim)?;
            Ok(loss)
        })()
        .map_err(|e| diverged(step, e))?;

        self.log.steps.push(StepRecord {
            step,
            epoch: self.schedule.epoch_of(step),
            lr,
            loss,
        });
        if self.schedule.is_epoch_end(step) {
            if let Some(val_text) = &self.val_text {
                let val = self.ds.indices(Split::Val);
                let audio_emb = crate::eval::embed_audio(&self.audio, self.ds, &val, target_len)?;
                let truth: Vec<usize> = (0..val.len()).collect();
                let r = recall_at_k(&audio_emb, val_text, &truth)?;
                self.log.epochs.push(EpochRecord {
                    epoch: self.schedule.epoch_of(step),
                    val_r_avg: r.r_avg,
                });
            }
        }
        self.step += 1;
        Ok(loss)
    }

    pub fn run_until(&mut self, step: u64) -> Result<()> {
        let started = Stopwatch::start();
        while self.step < step.min(self.schedule.total_steps) {
            self.step()?;
        }
        self.log.wall_time_s += started.secs();
        Ok(())
    }

    pub fn run_to_end(&mut self) -> Result<()> {
        self.run_until(self.schedule.total_steps)
    }

    /// Returns the trained encoder after checking the anchor was untouched.
    pub fn finish(self) -> Result<(EncoderParams, TrainLog)> {
        if self.frozen_text.fingerprint() != self.text_fingerprint {
            return Err(Error::protocol("frozen text encoder changed during stage-1 training"));
        }
        Ok((self.audio, self.log))
    }

    pub fn state(&self) -> TrainState {
        TrainState {
            step: self.step,
            rng: self.base.state(),
            adam: vec![self.adam.clone()],
            extra_encoders: Vec::new(),
            log: self.log.clone(),
        }
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        checkpoint(&self.audio, &self.state(), path)
    }

    /// Rebuilds a trainer from a stage-1 checkpoint. `cfg` and `ds` must be
    /// the ones the checkpoint was written with.
    pub fn resume(
        path: &Path,
        frozen_text: &'a EncoderParams,
        ds: &'a SyntheticDataset,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        let (audio, state) = resume(path)?;
        let state = state.ok_or_else(|| Error::Config(format!("{} holds no training state", path.display())))?;
        let mut t = Self::new(frozen_text, audio.spec(), ds, cfg)?;
        if state.rng.seed != cfg.optim.seed {
            return Err(Error::Config("checkpoint seed differs from config seed".into()));
        }
        if state.step > t.schedule.total_steps || state.adam.len() != 1 {
            return Err(Error::Config(
                "checkpoint does not match this training configuration".into(),
            ));
        }
        t.audio = audio;
        t.adam = state.adam.into_iter().next().unwrap();
        t.step = state.step;
        t.log = state.log;
        Ok(t)
    }
}

/// Stage 1 end to end.
pub fn train_new_modality(
    frozen_text: &EncoderParams,
    audio_spec: &EncoderSpec,
    ds: &SyntheticDataset,
    cfg: &TrainConfig,
) -> Result<(EncoderParams, TrainLog)> {
    let mut t = NewModalityTrainer::new(frozen_text, audio_spec, ds, cfg)?;
    t.run_to_end()?;
    log::info!(
        "stage 1 done: {} steps, loss {:.4} -> {:.4}",
        t.total_steps(),
        t.log().first_loss().unwrap_or(f64::NAN),
        t.log().last_loss().unwrap_or(f64::NAN)
    );
    t.finish()
}

/// Stage 0: joint contrastive training of the text and image encoders on
/// (text in a sampled language, image) pairs. Languages are drawn per example
/// in proportion to their pretraining weight. Both encoders come back frozen.
pub fn pretrain_anchor_pair(
    text_spec: &EncoderSpec,
    image_spec: &EncoderSpec,
    ds: &SyntheticDataset,
    optim: &OptimConfig,
    contrastive: &ContrastiveConfig,
) -> Result<(EncoderParams, EncoderParams, TrainLog)> {
    if text_spec.embed_dim != image_spec.embed_dim {
        return Err(Error::Config("text and image encoders must share embed_dim".into()));
    }
    if text_spec.input_dim != ds.world.text_dim || image_spec.input_dim != ds.world.image_dim {
        return Err(Error::Config(
            "anchor encoder input dims must match the world's feature dims".into(),
        ));
    }
    let schedule = Schedule::new(ds, optim)?;
    let base = Rng::new(optim.seed);
    let mut text = init_encoder(text_spec, &mut base.split(stream(STAGE_ANCHOR, PURPOSE_INIT, 0)))?;
    let mut image = init_encoder(image_spec, &mut base.split(stream(STAGE_ANCHOR, PURPOSE_INIT, 1)))?;
    let mut text_adam = AdamState::new(&text);
    let mut image_adam = AdamState::new(&image);
    let weights: Vec<f64> = ds.languages.iter().map(|l| l.pretrain_weight).collect();
    let mut log = TrainLog::default();
    let started = Stopwatch::start();

    for step in 0..schedule.total_steps {
        let idx = schedule.batch(&base, STAGE_ANCHOR, step);
        let mut text_rows = Vec::with_capacity(idx.len());
        for (slot, &i) in idx.iter().enumerate() {
            let mut rng = base.split(schedule.sample_stream(STAGE_ANCHOR, step, slot));
            let lang = rng.weighted_index(&weights)?;
            text_rows.push(ds.samples[i].texts[lang].clone());
        }
        let text_in = Matrix::from_rows(&text_rows)?;
        let image_in = ds.image_matrix(&idx)?;
        let lr = lr_at(
            step,
            schedule.total_steps,
            schedule.warmup_steps,
            optim.max_lr,
            optim.min_lr,
        )?;

        let loss = (|| {
            let t_emb = encode(&text, &text_in)?;
            let i_emb = encode(&image, &image_in)?;
            let (loss, g_t, g_i) = loss_and_grad(&t_emb, &i_emb, contrastive)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { step, loss });
            }
            let gt = encode_backward(&text, &text_in, &g_t)?;
            let gi = encode_backward(&image, &image_in, &g_i)?;
            adam_step(&mut text, &gt, &mut text_adam, lr, optim)?;
            adam_step(&mut image, &gi, &mut image_adam, lr, optim)?;
            Ok(loss)
        })()
        .map_err(|e| diverged(step, e))?;

        log.steps.push(StepRecord {
            step,
            epoch: schedule.epoch_of(step),
            lr,
            loss,
        });
        if schedule.is_epoch_end(step) && !ds.indices(Split::Val).is_empty() {
            let (t2i, _) = anchor_retrieval(&text, &image, ds, Split::Val)?;
            log.epochs.push(EpochRecord {
                epoch: schedule.epoch_of(step),
                val_r_avg: t2i.r_avg,
            });
        }
    }
    log.wall_time_s = started.secs();
    log::info!(
        "stage 0 done: {} steps, loss {:.4} -> {:.4}",
        schedule.total_steps,
        log.first_loss().unwrap_or(f64::NAN),
        log.last_loss().unwrap_or(f64::NAN)
    );
    Ok((text.freeze(), image.freeze(), log))
}

/// Resumable optimizer state stored after the encoder block of a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub rng: RngState,
    /// One Adam state per trainable encoder, the checkpointed encoder first.
    pub adam: Vec<AdamState>,
    /// Further trainable encoders beyond the first.
    pub extra_encoders: Vec<EncoderParams>,
    pub log: TrainLog,
}

fn write_grads(w: &mut Writer, g: &EncoderGrads) {
    w.u32(g.layers.len() as u32);
    for l in &g.layers {
        w.matrix(&l.weight);
        w.matrix(&l.bias);
    }
}

fn read_grads(r: &mut Reader<'_>) -> Result<EncoderGrads, FormatError> {
    let n = r.u32("adam layer count")? as usize;
    let layers = (0..n)
        .map(|_| {
            Ok(Layer {
                weight: r.matrix("adam moment")?,
                bias: r.matrix("adam moment")?,
            })
        })
        .collect::<Result<Vec<_>, FormatError>>()?;
    Ok(EncoderGrads { layers })
}

/// Writes an `EALN` checkpoint: the encoder block, then the training state.
pub fn checkpoint(params: &EncoderParams, state: &TrainState, path: &Path) -> Result<()> {
    let mut w = Writer::new();
    encoder::write_encoder(&mut w, params);
    w.u8(1);
    w.u64(state.step);
    w.u64(state.rng.seed);
    w.u64(state.rng.stream);
    w.u128(state.rng.word_pos);
    w.u32(state.adam.len() as u32);
    for a in &state.adam {
        w.u64(a.step);
        write_grads(&mut w, &a.m);
        write_grads(&mut w, &a.v);
    }
    w.u32(state.extra_encoders.len() as u32);
    for e in &state.extra_encoders {
        encoder::write_encoder(&mut w, e);
    }
    w.u64(state.log.steps.len() as u64);
    for s in &state.log.steps {
        w.u64(s.step);
        w.u64(s.epoch);
        w.f64(s.lr);
        w.f64(s.loss);
    }
    w.u64(state.log.epochs.len() as u64);
    for e in &state.log.epochs {
        w.u64(e.epoch);
        w.f64(e.val_r_avg);
    }
    let bytes = w.seal(encoder::CHECKPOINT_MAGIC, encoder::CHECKPOINT_VERSION);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads an `EALN` checkpoint; the training state is `None` for plain
/// encoder files.
pub fn resume(path: &Path) -> Result<(EncoderParams, Option<TrainState>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let parse = || -> Result<_, FormatError> {
        let mut r = wire::open(&bytes, encoder::CHECKPOINT_MAGIC, encoder::CHECKPOINT_VERSION)?;
        let params = encoder::read_encoder(&mut r)?;
        let state = match r.u8("state flag")? {
            0 => None,
            1 => {
                let step = r.u64("step")?;
                let rng = RngState {
                    seed: r.u64("rng seed")?,
                    stream: r.u64("rng stream")?,
                    word_pos: r.u128("rng position")?,
                };
                let n_adam = r.u32("adam count")? as usize;
                let mut adam = Vec::with_capacity(n_adam.min(16));
                for _ in 0..n_adam {
                    let step = r.u64("adam step")?;
                    let m = read_grads(&mut r)?;
                    let v = read_grads(&mut r)?;
                    adam.push(AdamState { m, v, step });
                }
                let n_extra = r.u32("extra encoder count")? as usize;
                let extra_encoders = (0..n_extra)
                    .map(|_| encoder::read_encoder(&mut r))
                    .collect::<Result<Vec<_>, _>>()?;
                let n_steps = r.u64("log length")? as usize;
                let mut log = TrainLog::default();
                for _ in 0..n_steps {
                    log.steps.push(StepRecord {
                        step: r.u64("log step")?,
                        epoch: r.u64("log epoch")?,
                        lr: r.f64("log lr")?,
                        loss: r.f64("log loss")?,
                    });
                }
                let n_epochs = r.u64("epoch log length")? as usize;
                for _ in 0..n_epochs {
                    log.epochs.push(EpochRecord {
                        epoch: r.u64("epoch")?,
                        val_r_avg: r.f64("val r_avg")?,
                    });
                }
                Some(TrainState {
                    step,
                    rng,
                    adam,
                    extra_encoders,
                    log,
                })
            }
            t => return Err(FormatError::Malformed(format!("state flag {t}"))),
        };
        r.finish()?;
        Ok((params, state))
    };
    parse().map_err(|source| Error::Format {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Activation;

    #[test]
    fn warmup_endpoint_is_max() {
        assert_eq!(lr_at(10, 100, 10, 1e-3, 1e-5).unwrap(), 1e-3);
        assert_eq!(lr_at(0, 100, 10, 1e-3, 1e-5).unwrap(), 0.0);
    }

    #[test]
    fn final_step_near_min() {
        let (max, min) = (3e-3, 1e-5);
        let lr = lr_at(999, 1000, 100, max, min).unwrap();
        assert!((lr - min).abs() <= (max - min) * 1e-3);
    }

    #[test]
    fn decay_midpoint() {
        let (max, min) = (3e-3, 1e-5);
        // decay spans steps 100..1000, midpoint at 100 + 450.
        let lr = lr_at(550, 1000, 100, max, min).unwrap();
        assert!((lr - (max + min) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn schedule_is_continuous_at_warmup() {
        let (max, min, w) = (1e-3, 1e-5, 37);
        let before = lr_at(w - 1, 500, w, max, min).unwrap();
        let at = lr_at(w, 500, w, max, min).unwrap();
        assert!((at - before).abs() <= max / w as f64 + 1e-15);
    }

    #[test]
    fn schedule_parameter_errors() {
        assert!(lr_at(100, 100, 10, 1e-3, 1e-5).is_err());
        assert!(lr_at(0, 100, 100, 1e-3, 1e-5).is_err());
        assert!(lr_at(0, 100, 10, 1e-5, 1e-3).is_err());
    }

    fn toy() -> EncoderParams {
        init_encoder(&EncoderSpec::new(3, &[4], 2, Activation::Tanh), &mut Rng::new(0)).unwrap()
    }

    fn const_grads(p: &EncoderParams, g: f64) -> EncoderGrads {
        let mut out = EncoderGrads::zeros_like(p);
        for l in &mut out.layers {
            l.weight.data_mut().fill(g);
            l.bias.data_mut().fill(g);
        }
        out
    }

    #[test]
    fn zero_grad_no_decay_is_noop() {
        let mut p = toy();
        let before = p.clone();
        let cfg = OptimConfig {
            weight_decay: 0.0,
            ..OptimConfig::desk()
        };
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &EncoderGrads::zeros_like(&before), &mut st, 1e-2, &cfg).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        for g in [0.5, -2.0] {
            let mut p = toy();
            let before = p.clone();
            let cfg = OptimConfig {
                weight_decay: 0.0,
                ..OptimConfig::desk()
            };
            let mut st = AdamState::new(&p);
            let lr = 1e-2;
            let grads = const_grads(&p, g);
            adam_step(&mut p, &grads, &mut st, lr, &cfg).unwrap();
            for (a, b) in p.layers().iter().zip(before.layers()) {
                for (x, y) in a.weight.as_slice().iter().zip(b.weight.as_slice()) {
                    // m̂ = g, v̂ = g², delta = −lr·g/(|g| + eps).
                    let want = -lr * g / (g.abs() + cfg.eps);
                    assert!((x - y - want).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn decoupled_decay_shrinks_weights() {
        let mut p = toy();
        let before = p.clone();
        let cfg = OptimConfig {
            weight_decay: 0.1,
            ..OptimConfig::desk()
        };
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &EncoderGrads::zeros_like(&before), &mut st, 0.5, &cfg).unwrap();
        let w0 = before.layers()[0].weight.get(0, 0);
        assert!((p.layers()[0].weight.get(0, 0) - w0 * 0.95).abs() < 1e-15);
    }

    #[test]
    fn frozen_params_rejected() {
        let mut p = toy().freeze();
        let g = EncoderGrads::zeros_like(&p);
        let mut st = AdamState::new(&p);
        assert!(matches!(
            adam_step(&mut p, &g, &mut st, 1e-3, &OptimConfig::desk()),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn invalid_optim_configs() {
        let bad = [
            OptimConfig {
                beta1: 0.99,
                beta2: 0.98,
                ..OptimConfig::desk()
            },
            OptimConfig {
                eps: 0.0,
                ..OptimConfig::desk()
            },
            OptimConfig {
                min_lr: 1.0,
                ..OptimConfig::desk()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
        OptimConfig::paper_basic().validate().unwrap();
    }
}

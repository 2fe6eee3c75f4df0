//! Browser bindings for three interactive views: SpecAugment masks, the
//! warmup-cosine learning-rate curve, and a small end-to-end run showing
//! emergent audio-image retrieval.
//!
//! The `*_impl` functions are plain Rust so they can be tested natively; the
//! `#[wasm_bindgen]` wrappers only translate errors.

use wasm_bindgen::prelude::*;

use ealign::augment::{spec_augment_recorded, AudioFrames, AugmentConfig};
use ealign::config::ExperimentConfig;
use ealign::encoder::encode;
use ealign::numeric::{matmul_transpose_b, Matrix, Rng};
use ealign::pipeline;
use ealign::synthdata::Split;
use ealign::train::lr_at;

/// Row-major `frames × channels` grid: 1 where a cell is masked.
pub fn mask_grid_impl(
    frames: usize,
    channels: usize,
    freq_mask_param: usize,
    time_mask_param: usize,
    num_masks: usize,
    time_mask_ratio: f64,
    seed: u64,
) -> Result<Vec<u8>, String> {
    let ones = Matrix::from_fn(frames, channels, |_, _| 1.0).map_err(|e| e.to_string())?;
    let cfg = AugmentConfig {
        target_len: frames,
        random_truncation: false,
        spec_augment: true,
        freq_mask_param,
        time_mask_param,
        num_freq_masks: num_masks,
        num_time_masks: num_masks,
        time_mask_ratio,
    };
    let (out, _) =
        spec_augment_recorded(&AudioFrames::new(ones), &cfg, &mut Rng::new(seed)).map_err(|e| e.to_string())?;
    Ok(out.flatten().iter().map(|&v| u8::from(v == 0.0)).collect())
}

pub fn lr_curve_impl(total_steps: u32, warmup_fraction: f64, max_lr: f64, min_lr: f64) -> Result<Vec<f64>, String> {
    let total = u64::from(total_steps);
    if total < 2 {
        return Err("need at least two steps".into());
    }
    let warmup = ((warmup_fraction * total as f64).round() as u64).min(total - 1);
    (0..total)
        .map(|s| lr_at(s, total, warmup, max_lr, min_lr).map_err(|e| e.to_string()))
        .collect()
}

/// Outcome of a miniature two-stage run.
#[wasm_bindgen]
pub struct EmergentRun {
    k: usize,
    similarity: Vec<f64>,
    untrained_similarity: Vec<f64>,
    audio_image_r1: f64,
    untrained_r1: f64,
    chance: f64,
    languages: Vec<String>,
    language_r_avg: Vec<f64>,
}

#[wasm_bindgen]
impl EmergentRun {
    /// Side of the similarity matrices (first `k` test items).
    #[wasm_bindgen(getter)]
    pub fn k(&self) -> usize {
        self.k
    }
    /// Row-major audio × image cosine similarities after training.
    pub fn similarity(&self) -> Vec<f64> {
        self.similarity.clone()
    }
    /// The same for an untrained audio encoder.
    pub fn untrained_similarity(&self) -> Vec<f64> {
        self.untrained_similarity.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn audio_image_r1(&self) -> f64 {
        self.audio_image_r1
    }
    #[wasm_bindgen(getter)]
    pub fn untrained_r1(&self) -> f64 {
        self.untrained_r1
    }
    #[wasm_bindgen(getter)]
    pub fn chance(&self) -> f64 {
        self.chance
    }
    /// Language names joined by commas, in sweep order.
    pub fn languages(&self) -> String {
        self.languages.join(",")
    }
    /// Audio→text R@Avg per language.
    pub fn language_r_avg(&self) -> Vec<f64> {
        self.language_r_avg.clone()
    }
}

/// A desk-preset run shrunk to browser size: no audio-image pair is ever
/// trained on, yet audio retrieves images.
pub fn emergent_run_impl(seed: u64, epochs: usize, k: usize) -> Result<EmergentRun, String> {
    let err = |e: ealign::Error| e.to_string();
    let mut cfg = ExperimentConfig::preset("desk").map_err(err)?.with_seed(seed);
    cfg.world.num_train = 400;
    cfg.world.num_val = 50;
    cfg.world.num_test = 100;
    for optim in [&mut cfg.pretrain, &mut cfg.optim] {
        optim.epochs = epochs.max(1);
        optim.batch_size = 32;
    }
    cfg.validate().map_err(err)?;

    let ds = pipeline::run_generate(&cfg).map_err(err)?;
    let (text, image, _) = pipeline::run_pretrain(&cfg, &ds).map_err(err)?;
    let (audio, _) = pipeline::run_train(&cfg, &ds, &text).map_err(err)?;
    let summary = pipeline::run_eval(&cfg, &ds, &text, &image, &audio).map_err(err)?;

    let test = ds.indices(Split::Test);
    let k = k.clamp(2, test.len());
    let shown = &test[..k];
    let images = encode(&image, &ds.image_matrix(shown).map_err(err)?).map_err(err)?;
    let clips = ds.audio_matrix(shown, cfg.augment.target_len).map_err(err)?;
    let sim = |enc: &ealign::encoder::EncoderParams| -> Result<Vec<f64>, String> {
        let a = encode(enc, &clips).map_err(err)?;
        Ok(matmul_transpose_b(&a, &images).map_err(err)?.into_vec())
    };
    let untrained = ealign::encoder::init_encoder(&cfg.audio_spec(), &mut Rng::new(seed ^ 0x5eed)).map_err(err)?;

    Ok(EmergentRun {
        k,
        similarity: sim(&audio)?,
        untrained_similarity: sim(&untrained)?,
        audio_image_r1: summary.emergent.0.r1,
        untrained_r1: summary.control.0.r1,
        chance: 1.0 / test.len() as f64,
        languages: summary.languages.iter().map(|l| l.language.clone()).collect(),
        language_r_avg: summary.languages.iter().map(|l| l.audio_to_text.r_avg).collect(),
    })
}

#[wasm_bindgen]
pub fn mask_grid(
    frames: usize,
    channels: usize,
    freq_mask_param: usize,
    time_mask_param: usize,
    num_masks: usize,
    time_mask_ratio: f64,
    seed: u32,
) -> Result<Vec<u8>, JsError> {
    mask_grid_impl(
        frames,
        channels,
        freq_mask_param,
        time_mask_param,
        num_masks,
        time_mask_ratio,
        u64::from(seed),
    )
    .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn lr_curve(total_steps: u32, warmup_fraction: f64, max_lr: f64, min_lr: f64) -> Result<Vec<f64>, JsError> {
    lr_curve_impl(total_steps, warmup_fraction, max_lr, min_lr).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn emergent_run(seed: u32, epochs: usize, k: usize) -> Result<EmergentRun, JsError> {
    emergent_run_impl(u64::from(seed), epochs, k).map_err(|e| JsError::new(&e))
}

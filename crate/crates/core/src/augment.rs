//! Audio-frame augmentations: random truncation/padding and SpecAugment
//! frequency and time masking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Matrix, Rng};

/// Frequency mask width used on 128-channel log-mel spectrograms.
pub const REFERENCE_FREQ_MASK: usize = 48;
/// Time mask width used on 10 s clips.
pub const REFERENCE_TIME_MASK: usize = 96;

/// `T × F` frame block: time steps by frequency-like channels.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioFrames(pub Matrix);

impl AudioFrames {
    pub fn new(frames: Matrix) -> Self {
        Self(frames)
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn channels(&self) -> usize {
        self.0.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    /// Row-major flattening, the audio encoder's input layout.
    pub fn flatten(&self) -> &[f64] {
        self.0.as_slice()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    /// Fixed number of frames every clip is cut or padded to.
    pub target_len: usize,
    pub random_truncation: bool,
    pub spec_augment: bool,
    /// Maximum frequency mask width (inclusive).
    pub freq_mask_param: usize,
    /// Maximum time mask width (inclusive).
    pub time_mask_param: usize,
    pub num_freq_masks: usize,
    pub num_time_masks: usize,
    /// Upper bound on the fraction of time steps all time masks may cover.
    pub time_mask_ratio: f64,
}

impl AugmentConfig {
    /// Both augmentations off: clips are only cut or padded deterministically.
    pub fn disabled(target_len: usize) -> Self {
        Self {
            target_len,
            random_truncation: false,
            spec_augment: false,
            freq_mask_param: 0,
            time_mask_param: 0,
            num_freq_masks: 0,
            num_time_masks: 0,
            time_mask_ratio: 1.0,
        }
    }

    /// Mask widths scaled from the reference spectrogram geometry
    /// (128 channels, 1000 frames) to `channels × target_len`.
    pub fn scaled(channels: usize, target_len: usize) -> Self {
        let scale = |reference: usize, full: usize, size: usize| {
            ((reference as f64 / full as f64) * size as f64).round().max(1.0) as usize
        };
        Self {
            target_len,
            random_truncation: true,
            spec_augment: true,
            freq_mask_param: scale(REFERENCE_FREQ_MASK, 128, channels).min(channels),
            time_mask_param: scale(REFERENCE_TIME_MASK, 1000, target_len).min(target_len),
            num_freq_masks: 1,
            num_time_masks: 1,
            time_mask_ratio: 1.0,
        }
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.target_len == 0 {
            return Err(Error::param("augment.target_len must be >= 1"));
        }
        if !(self.time_mask_ratio > 0.0 && self.time_mask_ratio <= 1.0) {
            return Err(Error::param(format!(
                "augment.time_mask_ratio must be in (0, 1], got {}",
                self.time_mask_ratio
            )));
        }
        if self.spec_augment {
            if self.freq_mask_param > channels {
                return Err(Error::param(format!(
                    "augment.freq_mask_param {} exceeds {channels} channels",
                    self.freq_mask_param
                )));
            }
            if self.time_mask_param > self.target_len {
                return Err(Error::param(format!(
                    "augment.time_mask_param {} exceeds target_len {}",
                    self.time_mask_param, self.target_len
                )));
            }
            if self.num_time_masks > 0
                && self.time_mask_param > 0
                && self.time_mask_ratio * (self.target_len as f64) < 1.0
            {
                return Err(Error::param("augment.time_mask_ratio * target_len must be >= 1"));
            }
        }
        Ok(())
    }
}

/// Cuts a random contiguous window from long clips; short clips get a random
/// run of leading silence, then trailing silence up to `target_len`.
pub fn random_truncate(a: &AudioFrames, target_len: usize, rng: &mut Rng) -> Result<AudioFrames> {
    if target_len == 0 {
        return Err(Error::param("target_len must be >= 1"));
    }
    let t = a.len();
    if t == target_len {
        return Ok(a.clone());
    }
    if t > target_len {
        let start = rng.int_inclusive(0, t - target_len);
        return window(a, start, target_len);
    }
    let lead = rng.int_inclusive(0, target_len - t);
    Ok(pad(a, lead, target_len))
}

/// Deterministic length fix for evaluation: leading frames, or trailing zeros.
pub fn fit_length(a: &AudioFrames, target_len: usize) -> Result<AudioFrames> {
    if target_len == 0 {
        return Err(Error::param("target_len must be >= 1"));
    }
    match a.len().cmp(&target_len) {
        std::cmp::Ordering::Equal => Ok(a.clone()),
        std::cmp::Ordering::Greater => window(a, 0, target_len),
        std::cmp::Ordering::Less => Ok(pad(a, 0, target_len)),
    }
}

fn window(a: &AudioFrames, start: usize, len: usize) -> Result<AudioFrames> {
    let idx: Vec<usize> = (start..start + len).collect();
    Ok(AudioFrames(a.0.select_rows(&idx)?))
}

fn pad(a: &AudioFrames, lead: usize, target_len: usize) -> AudioFrames {
    let mut out = Matrix::zeros(target_len, a.channels());
    for r in 0..a.len() {
        out.row_mut(lead + r).copy_from_slice(a.0.row(r));
    }
    AudioFrames(out)
}

/// Where the masks of one [`spec_augment`] call landed.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MaskRecord {
    /// `(start, width)` per frequency mask, in channels.
    pub freq: Vec<(usize, usize)>,
    /// `(start, width)` per time mask, in frames.
    pub time: Vec<(usize, usize)>,
}

/// Frequency then time masking; masked cells are set to zero.
pub fn spec_augment(a: &AudioFrames, cfg: &AugmentConfig, rng: &mut Rng) -> Result<AudioFrames> {
    spec_augment_recorded(a, cfg, rng).map(|(out, _)| out)
}

pub fn spec_augment_recorded(a: &AudioFrames, cfg: &AugmentConfig, rng: &mut Rng) -> Result<(AudioFrames, MaskRecord)> {
    let (t_len, channels) = (a.len(), a.channels());
    if cfg.freq_mask_param > channels {
        return Err(Error::param(format!(
            "freq_mask_param {} exceeds {channels} channels",
            cfg.freq_mask_param
        )));
    }
    if cfg.time_mask_param > t_len {
        return Err(Error::param(format!(
            "time_mask_param {} exceeds {t_len} frames",
            cfg.time_mask_param
        )));
    }
    if !(cfg.time_mask_ratio > 0.0 && cfg.time_mask_ratio <= 1.0) {
        return Err(Error::param("time_mask_ratio must be in (0, 1]"));
    }
    let mut out = a.0.clone();
    let mut record = MaskRecord::default();

    for _ in 0..cfg.num_freq_masks {
        let f = rng.int_inclusive(0, cfg.freq_mask_param);
        let f0 = rng.int_inclusive(0, channels - f);
        for r in 0..t_len {
            out.row_mut(r)[f0..f0 + f].fill(0.0);
        }
        record.freq.push((f0, f));
    }

    let budget = (cfg.time_mask_ratio * t_len as f64).floor() as usize;
    let mut used = 0;
    for _ in 0..cfg.num_time_masks {
        let t = rng.int_inclusive(0, cfg.time_mask_param).min(budget - used);
        used += t;
        let t0 = rng.int_inclusive(0, t_len - t);
        for r in t0..t0 + t {
            out.row_mut(r).fill(0.0);
        }
        record.time.push((t0, t));
    }
    Ok((AudioFrames(out), record))
}

/// The stage-1 training view of one clip: truncation (or the deterministic
/// length fix when disabled), then SpecAugment when enabled.
pub fn training_view(a: &AudioFrames, cfg: &AugmentConfig, rng: &mut Rng) -> Result<AudioFrames> {
    let fixed = if cfg.random_truncation {
        random_truncate(a, cfg.target_len, rng)?
    } else {
        fit_length(a, cfg.target_len)?
    };
    if cfg.spec_augment {
        spec_augment(&fixed, cfg, rng)
    } else {
        Ok(fixed)
    }
}

//! Synthetic tri-modal, multi-language data.
//!
//! Every sample is generated from a latent vector `z` (its class center plus
//! within-class noise). Each modality is a fixed random linear view of `z`
//! plus observation noise. Non-English text is an orthogonal transform of the
//! English text plus language-specific noise. Only text-audio and text-image
//! pairs are ever used for training; audio-image correspondence exists only
//! through the shared latent.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{fit_length, AudioFrames};
use crate::encoder::{encode, EncoderParams};
use crate::error::{Error, FormatError, Result};
use crate::numeric::{dot, Matrix, Rng};
use crate::wire::{self, Writer};

pub const DATASET_MAGIC: [u8; 4] = *b"EADS";
pub const DATASET_VERSION: u32 = 1;

// Rng streams used by `generate`.
const STREAM_MAPS: u64 = 1;
const STREAM_CENTERS: u64 = 2;
const STREAM_LANGUAGES: u64 = 3;
const STREAM_SAMPLES: u64 = 1 << 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanguageConfig {
    pub name: String,
    /// Std of the language-specific text noise.
    pub epsilon: f64,
    /// Relative sampling weight during anchor pretraining.
    pub pretrain_weight: f64,
    /// How far the language's orthogonal transform is from the identity:
    /// 0 gives the identity, large values a uniformly random rotation.
    pub rotation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub latent_dim: usize,
    pub num_train: usize,
    pub num_val: usize,
    pub num_test: usize,
    pub num_classes: usize,
    /// Std of the class centers.
    pub class_spread: f64,
    /// Std of a sample's latent around its class center.
    pub within_class_sigma: f64,
    pub image_dim: usize,
    pub text_dim: usize,
    pub audio_frames: usize,
    pub audio_channels: usize,
    /// Clip lengths vary uniformly in `audio_frames ± audio_jitter`.
    pub audio_jitter: usize,
    pub image_noise: f64,
    pub text_noise: f64,
    pub audio_noise: f64,
    pub languages: Vec<LanguageConfig>,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        let lang = |name: &str, epsilon: f64, pretrain_weight: f64, rotation: f64| LanguageConfig {
            name: name.into(),
            epsilon,
            pretrain_weight,
            rotation,
        };
        Self {
            latent_dim: 16,
            num_train: 2000,
            num_val: 200,
            num_test: 200,
            num_classes: 10,
            class_spread: 1.0,
            within_class_sigma: 0.15,
            image_dim: 32,
            text_dim: 32,
            audio_frames: 20,
            audio_channels: 16,
            audio_jitter: 2,
            image_noise: 0.05,
            text_noise: 0.05,
            audio_noise: 0.05,
            languages: vec![
                lang("english", 0.0, 100.0, 0.0),
                lang("spanish", 0.02, 50.0, 0.3),
                lang("german", 0.02, 50.0, 0.3),
                lang("french", 0.05, 20.0, 0.3),
                lang("portuguese", 0.05, 20.0, 0.3),
                lang("swahili", 0.30, 3.3, 0.3),
            ],
            seed: 42,
        }
    }
}

impl WorldConfig {
    pub fn num_samples(&self) -> usize {
        self.num_train + self.num_val + self.num_test
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("latent_dim", self.latent_dim),
            ("image_dim", self.image_dim),
            ("text_dim", self.text_dim),
            ("audio_frames", self.audio_frames),
            ("audio_channels", self.audio_channels),
            ("num_classes", self.num_classes),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, d)| *d < 2) {
            return Err(Error::param(format!("world.{name} must be >= 2")));
        }
        if self.num_classes > self.num_samples() {
            return Err(Error::param("world.num_classes exceeds sample count"));
        }
        if self.audio_jitter >= self.audio_frames {
            return Err(Error::param("world.audio_jitter must be < audio_frames"));
        }
        let sigmas = [
            self.class_spread,
            self.within_class_sigma,
            self.image_noise,
            self.text_noise,
            self.audio_noise,
        ];
        if sigmas.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::param("world noise levels must be finite and >= 0"));
        }
        let Some(first) = self.languages.first() else {
            return Err(Error::param("world.languages must not be empty"));
        };
        if first.name != "english" || first.epsilon != 0.0 || first.rotation != 0.0 {
            return Err(Error::param(
                "world.languages[0] must be english with epsilon = 0 and rotation = 0",
            ));
        }
        for (i, l) in self.languages.iter().enumerate() {
            if self.languages[..i].iter().any(|o| o.name == l.name) {
                return Err(Error::param(format!("duplicate language {:?}", l.name)));
            }
            if !(l.epsilon >= 0.0) || !(l.pretrain_weight >= 0.0) || !(l.rotation >= 0.0) {
                return Err(Error::param(format!("language {:?} has a negative parameter", l.name)));
            }
        }
        if self.languages.iter().all(|l| l.pretrain_weight == 0.0) {
            return Err(Error::param("at least one language needs a positive pretrain_weight"));
        }
        Ok(())
    }
}

/// A language with its materialized orthogonal transform.
#[derive(Clone, Debug, PartialEq)]
pub struct LanguageSpec {
    pub name: String,
    pub transform: Matrix,
    pub epsilon: f64,
    pub pretrain_weight: f64,
}

/// The fixed linear views from latent space into each modality.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentMaps {
    /// `image_dim × latent_dim`.
    pub image: Matrix,
    /// `text_dim × latent_dim`.
    pub text: Matrix,
    /// `((audio_frames + jitter) · audio_channels) × latent_dim`.
    pub audio: Matrix,
}

impl LatentMaps {
    pub fn draw(world: &WorldConfig, rng: &Rng) -> Result<Self> {
        let mut rng = rng.split(STREAM_MAPS);
        let s = 1.0 / (world.latent_dim as f64).sqrt();
        let mut gaussian = |rows: usize| Matrix::from_fn(rows, world.latent_dim, |_, _| s * rng.standard_normal());
        Ok(Self {
            image: gaussian(world.image_dim)?,
            text: gaussian(world.text_dim)?,
            audio: gaussian((world.audio_frames + world.audio_jitter) * world.audio_channels)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn tag(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    fn from_tag(t: u8) -> Option<Self> {
        match t {
            0 => Some(Split::Train),
            1 => Some(Split::Val),
            2 => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub class_label: u32,
    pub split: Split,
    pub latent: Vec<f64>,
    pub image: Vec<f64>,
    pub audio: AudioFrames,
    /// One text feature vector per language, in `languages` order.
    pub texts: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub world: WorldConfig,
    pub languages: Vec<LanguageSpec>,
    pub samples: Vec<Sample>,
    /// Set if any audio-image pair was ever given to an optimizer.
    pub audio_image_contaminated: bool,
}

/// Orthogonalizes the columns of `m` (modified Gram-Schmidt, two passes).
pub fn orthogonalize(m: &Matrix) -> Result<Matrix> {
    let n = m.rows();
    if n != m.cols() {
        return Err(Error::Shape {
            op: "orthogonalize",
            left: m.shape(),
            right: (n, n),
        });
    }
    let mut cols: Vec<Vec<f64>> = (0..n).map(|c| (0..n).map(|r| m.get(r, c)).collect()).collect();
    for _pass in 0..2 {
        for j in 0..n {
            for k in 0..j {
                let proj = dot(&cols[j], &cols[k]);
                let (head, tail) = cols.split_at_mut(j);
                for (x, q) in tail[0].iter_mut().zip(&head[k]) {
                    *x -= proj * q;
                }
            }
            let norm = dot(&cols[j], &cols[j]).sqrt();
            if norm < 1e-10 {
                return Err(Error::Degenerate { row: j });
            }
            cols[j].iter_mut().for_each(|x| *x /= norm);
        }
    }
    Matrix::from_fn(n, n, |r, c| cols[c][r])
}

fn language_transform(dim: usize, rotation: f64, rng: &mut Rng) -> Result<Matrix> {
    if rotation == 0.0 {
        return Ok(Matrix::identity(dim));
    }
    let perturbed = Matrix::from_fn(dim, dim, |r, c| {
        let g = rng.standard_normal() / (dim as f64).sqrt();
        if r == c {
            1.0 + rotation * g
        } else {
            rotation * g
        }
    })?;
    orthogonalize(&perturbed)
}

fn apply(map: &Matrix, z: &[f64]) -> Vec<f64> {
    (0..map.rows()).map(|r| dot(map.row(r), z)).collect()
}

/// Draws the whole dataset. Samples are laid out train, then val, then test.
pub fn generate(world: &WorldConfig, rng: &Rng) -> Result<SyntheticDataset> {
    world.validate()?;
    let maps = LatentMaps::draw(world, rng)?;

    let mut lang_rng = rng.split(STREAM_LANGUAGES);
    let languages = world
        .languages
        .iter()
        .map(|l| {
            Ok(LanguageSpec {
                name: l.name.clone(),
                transform: language_transform(world.text_dim, l.rotation, &mut lang_rng)?,
                epsilon: l.epsilon,
                pretrain_weight: l.pretrain_weight,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut center_rng = rng.split(STREAM_CENTERS);
    let centers: Vec<Vec<f64>> = (0..world.num_classes)
        .map(|_| {
            (0..world.latent_dim)
                .map(|_| world.class_spread * center_rng.standard_normal())
                .collect()
        })
        .collect();

    let max_frames = world.audio_frames + world.audio_jitter;
    let mut samples = Vec::with_capacity(world.num_samples());
    for i in 0..world.num_samples() {
        let mut r = rng.split(STREAM_SAMPLES + i as u64);
        let split = if i < world.num_train {
            Split::Train
        } else if i < world.num_train + world.num_val {
            Split::Val
        } else {
            Split::Test
        };
        let class = r.below(world.num_classes);
        let latent: Vec<f64> = centers[class]
            .iter()
            .map(|c| c + world.within_class_sigma * r.standard_normal())
            .collect();
        let noisy = |clean: Vec<f64>, sigma: f64, r: &mut Rng| -> Vec<f64> {
            clean.into_iter().map(|v| v + sigma * r.standard_normal()).collect()
        };
        let image = noisy(apply(&maps.image, &latent), world.image_noise, &mut r);
        let english = noisy(apply(&maps.text, &latent), world.text_noise, &mut r);

        let frames = world.audio_frames - world.audio_jitter + r.below(2 * world.audio_jitter + 1);
        let full = apply(&maps.audio, &latent);
        let clip = noisy(
            full[..frames * world.audio_channels].to_vec(),
            world.audio_noise,
            &mut r,
        );
        debug_assert!(frames <= max_frames);
        let audio = AudioFrames::new(Matrix::from_vec(frames, world.audio_channels, clip)?);

        let mut texts = Vec::with_capacity(languages.len());
        for lang in &languages {
            let rotated = apply(&lang.transform, &english);
            texts.push(if lang.epsilon == 0.0 {
                rotated
            } else {
                noisy(rotated, lang.epsilon, &mut r)
            });
        }
        samples.push(Sample {
            id: i as u64,
            class_label: class as u32,
            split,
            latent,
            image,
            audio,
            texts,
        });
    }
    Ok(SyntheticDataset {
        world: world.clone(),
        languages,
        samples,
        audio_image_contaminated: false,
    })
}

impl SyntheticDataset {
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len())
            .filter(|&i| self.samples[i].split == split)
            .collect()
    }

    pub fn language_index(&self, name: &str) -> Result<usize> {
        self.languages
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| Error::UnknownLanguage(name.to_string()))
    }

    pub fn image_matrix(&self, idx: &[usize]) -> Result<Matrix> {
        self.stack(idx, |s| s.image.clone())
    }

    pub fn text_matrix(&self, idx: &[usize], language: usize) -> Result<Matrix> {
        if language >= self.languages.len() {
            return Err(Error::UnknownLanguage(format!("#{language}")));
        }
        self.stack(idx, |s| s.texts[language].clone())
    }

    /// Audio clips fixed to `target_len` frames (no augmentation), flattened.
    pub fn audio_matrix(&self, idx: &[usize], target_len: usize) -> Result<Matrix> {
        let rows = idx
            .iter()
            .map(|&i| Ok(fit_length(&self.samples[i].audio, target_len)?.flatten().to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Matrix::from_rows(&rows)
    }

    pub fn labels(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.samples[i].class_label as usize).collect()
    }

    fn stack(&self, idx: &[usize], f: impl Fn(&Sample) -> Vec<f64>) -> Result<Matrix> {
        if idx.is_empty() {
            return Err(Error::param("empty sample selection"));
        }
        Matrix::from_rows(&idx.iter().map(|&i| f(&self.samples[i])).collect::<Vec<_>>())
    }

    /// Records that audio-image pairs reached an optimizer.
    pub fn mark_audio_image_contamination(&mut self) {
        self.audio_image_contaminated = true;
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|source| Error::Format {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let w_cfg = &self.world;
        let mut w = Writer::new();
        // config block
        for v in [
            w_cfg.latent_dim,
            w_cfg.num_train,
            w_cfg.num_val,
            w_cfg.num_test,
            w_cfg.num_classes,
            w_cfg.image_dim,
            w_cfg.text_dim,
            w_cfg.audio_frames,
            w_cfg.audio_channels,
            w_cfg.audio_jitter,
        ] {
            w.u32(v as u32);
        }
        for v in [
            w_cfg.class_spread,
            w_cfg.within_class_sigma,
            w_cfg.image_noise,
            w_cfg.text_noise,
            w_cfg.audio_noise,
        ] {
            w.f64(v);
        }
        w.u64(w_cfg.seed);
        w.u32(self.languages.len() as u32);
        for (spec, cfg) in self.languages.iter().zip(&w_cfg.languages) {
            w.str(&spec.name);
            w.f64(spec.epsilon);
            w.f64(spec.pretrain_weight);
            w.f64(cfg.rotation);
            w.matrix(&spec.transform);
        }
        w.u8(self.audio_image_contaminated as u8);
        // records
        w.u64(self.samples.len() as u64);
        for s in &self.samples {
            w.u64(s.id);
            w.u32(s.class_label);
            w.u8(s.split.tag());
            w.f64s(&s.latent);
            w.f64s(&s.image);
            w.u32(s.audio.len() as u32);
            w.u32(s.audio.channels() as u32);
            w.f64s(s.audio.flatten());
            for t in &s.texts {
                w.f64s(t);
            }
        }
        w.seal(DATASET_MAGIC, DATASET_VERSION)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = wire::open(bytes, DATASET_MAGIC, DATASET_VERSION)?;
        let mut dims = [0usize; 10];
        for d in &mut dims {
            *d = r.u32("world dims")? as usize;
        }
        let mut sig = [0f64; 5];
        for s in &mut sig {
            *s = r.f64("world sigmas")?;
        }
        let seed = r.u64("seed")?;
        let n_lang = r.u32("language count")? as usize;
        let mut languages = Vec::with_capacity(n_lang);
        let mut lang_cfgs = Vec::with_capacity(n_lang);
        for _ in 0..n_lang {
            let name = r.str("language name")?;
            let epsilon = r.f64("epsilon")?;
            let pretrain_weight = r.f64("pretrain weight")?;
            let rotation = r.f64("rotation")?;
            let transform = r.matrix("language transform")?;
            lang_cfgs.push(LanguageConfig {
                name: name.clone(),
                epsilon,
                pretrain_weight,
                rotation,
            });
            languages.push(LanguageSpec {
                name,
                transform,
                epsilon,
                pretrain_weight,
            });
        }
        let audio_image_contaminated = r.u8("provenance flag")? != 0;
        let world = WorldConfig {
            latent_dim: dims[0],
            num_train: dims[1],
            num_val: dims[2],
            num_test: dims[3],
            num_classes: dims[4],
            image_dim: dims[5],
            text_dim: dims[6],
            audio_frames: dims[7],
            audio_channels: dims[8],
            audio_jitter: dims[9],
            class_spread: sig[0],
            within_class_sigma: sig[1],
            image_noise: sig[2],
            text_noise: sig[3],
            audio_noise: sig[4],
            languages: lang_cfgs,
            seed,
        };
        let n = r.u64("sample count")? as usize;
        let mut samples = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let id = r.u64("id")?;
            let class_label = r.u32("class")?;
            let split = Split::from_tag(r.u8("split")?).ok_or_else(|| FormatError::Malformed("split tag".into()))?;
            let latent = r.f64s("latent")?;
            let image = r.f64s("image")?;
            let t = r.u32("audio frames")? as usize;
            let f = r.u32("audio channels")? as usize;
            let values = r.f64s("audio")?;
            let frames = Matrix::from_vec(t, f, values).map_err(|e| FormatError::Malformed(format!("audio: {e}")))?;
            let texts = (0..n_lang).map(|_| r.f64s("text")).collect::<Result<Vec<_>, _>>()?;
            samples.push(Sample {
                id,
                class_label,
                split,
                latent,
                image,
                audio: AudioFrames::new(frames),
                texts,
            });
        }
        r.finish()?;
        Ok(Self {
            world,
            languages,
            samples,
            audio_image_contaminated,
        })
    }
}

/// How the anchor-similarity filter picks what to drop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FilterMode {
    /// Drop the `⌊f·N⌋` training pairs with the lowest similarity.
    DropFraction(f64),
    /// Drop every training pair with similarity below the cutoff.
    MinSimilarity(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterStats {
    pub kept: usize,
    pub dropped: usize,
    /// Ids of the dropped samples, lowest similarity first.
    pub dropped_ids: Vec<u64>,
    /// Similarity at quantiles 0, .25, .5, .75, 1 over the training split.
    pub quantiles: [f64; 5],
}

/// Cosine similarity between the frozen text (English) and image embeddings
/// of each training sample, keyed by sample index.
pub fn anchor_similarities(
    ds: &SyntheticDataset,
    frozen_text: &EncoderParams,
    frozen_image: &EncoderParams,
) -> Result<Vec<(usize, f64)>> {
    if !frozen_text.is_frozen() || !frozen_image.is_frozen() {
        return Err(Error::protocol("anchor-similarity filtering requires frozen anchors"));
    }
    let idx = ds.indices(Split::Train);
    if idx.is_empty() {
        return Ok(Vec::new());
    }
    let text = encode(frozen_text, &ds.text_matrix(&idx, 0)?)?;
    let image = encode(frozen_image, &ds.image_matrix(&idx)?)?;
    let sims = (0..idx.len())
        .map(|k| dot(text.row(k), image.row(k)))
        .collect::<Vec<_>>();
    Ok(idx.into_iter().zip(sims).collect())
}

/// Removes the least-aligned training pairs; val and test are untouched.
pub fn filter_by_anchor_similarity(
    ds: &SyntheticDataset,
    frozen_text: &EncoderParams,
    frozen_image: &EncoderParams,
    mode: FilterMode,
) -> Result<(SyntheticDataset, FilterStats)> {
    if let FilterMode::DropFraction(f) = mode {
        if !(0.0..1.0).contains(&f) {
            return Err(Error::param(format!("filter fraction must be in [0, 1), got {f}")));
        }
    }
    let mut sims = anchor_similarities(ds, frozen_text, frozen_image)?;
    // Lowest similarity first; ties by sample order.
    sims.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let n_drop = match mode {
        FilterMode::DropFraction(f) => (f * sims.len() as f64).floor() as usize,
        FilterMode::MinSimilarity(cut) => sims.iter().take_while(|(_, s)| *s < cut).count(),
    };
    let dropped: Vec<usize> = sims[..n_drop].iter().map(|(i, _)| *i).collect();
    let quantiles = if sims.is_empty() {
        [0.0; 5]
    } else {
        let q = |p: f64| sims[((sims.len() - 1) as f64 * p).round() as usize].1;
        [q(0.0), q(0.25), q(0.5), q(0.75), q(1.0)]
    };
    let mut drop_mask = vec![false; ds.samples.len()];
    for &i in &dropped {
        drop_mask[i] = true;
    }
    let mut out = ds.clone();
    out.samples = ds
        .samples
        .iter()
        .zip(&drop_mask)
        .filter(|(_, d)| !**d)
        .map(|(s, _)| s.clone())
        .collect();
    out.world.num_train -= dropped.len();
    let stats = FilterStats {
        kept: sims.len() - dropped.len(),
        dropped: dropped.len(),
        dropped_ids: dropped.iter().map(|&i| ds.samples[i].id).collect(),
        quantiles,
    };
    Ok((out, stats))
}

//! The end-to-end experiment: generate → pretrain anchors → filter → train
//! the new modality → evaluate → account cost.
//!
//! Each stage is a plain function so the CLI can run them one at a time
//! against files on disk; [`run_pipeline`] chains them and writes every
//! artifact under one directory. All outputs are functions of the config.

use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::cost::{compare_regimes, Reduction, RegimeConfig};
use crate::encoder::{init_encoder, save_encoder, EncoderParams};
use crate::error::{Error, Result};
use crate::eval::{
    anchor_retrieval, emergent_crossmodal_eval, multilingual_sweep, LanguageReport, ReportFormat, RetrievalReport,
    Table,
};
use crate::numeric::Rng;
use crate::synthdata::{filter_by_anchor_similarity, generate, FilterStats, Split, SyntheticDataset};
use crate::train::{pretrain_anchor_pair, train_new_modality, TrainLog};

/// Stream id of the untrained control encoder; disjoint from training streams.
const CONTROL_STREAM: u64 = 0xC0_0000_0000_0000;

pub fn run_generate(cfg: &ExperimentConfig) -> Result<SyntheticDataset> {
    generate(&cfg.world, &Rng::new(cfg.world.seed))
}

pub fn run_pretrain(cfg: &ExperimentConfig, ds: &SyntheticDataset) -> Result<(EncoderParams, EncoderParams, TrainLog)> {
    pretrain_anchor_pair(&cfg.text_spec(), &cfg.image_spec(), ds, &cfg.pretrain, &cfg.contrastive)
}

pub fn run_filter(
    cfg: &ExperimentConfig,
    ds: &SyntheticDataset,
    text: &EncoderParams,
    image: &EncoderParams,
) -> Result<(SyntheticDataset, FilterStats)> {
    filter_by_anchor_similarity(ds, text, image, cfg.filter.mode())
}

pub fn run_train(
    cfg: &ExperimentConfig,
    ds: &SyntheticDataset,
    text: &EncoderParams,
) -> Result<(EncoderParams, TrainLog)> {
    train_new_modality(text, &cfg.audio_spec(), ds, &cfg.stage1())
}

/// Everything the evaluation stage measures.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub languages: Vec<LanguageReport>,
    /// Audio→image and image→audio for the trained encoder.
    pub emergent: (RetrievalReport, RetrievalReport),
    /// The same for an untrained encoder of identical shape.
    pub control: (RetrievalReport, RetrievalReport),
    /// Text→image and image→text of the frozen anchors on the test split.
    pub anchor: (RetrievalReport, RetrievalReport),
}

impl EvalSummary {
    pub fn retrieval_reports(&self) -> Vec<RetrievalReport> {
        let mut out = Vec::new();
        for l in &self.languages {
            out.push(l.audio_to_text.clone());
            out.push(l.text_to_audio.clone());
        }
        out.push(self.emergent.0.clone());
        out.push(self.emergent.1.clone());
        out.push(self.control.0.clone().with_tags("audio->image", "untrained"));
        out.push(self.control.1.clone().with_tags("image->audio", "untrained"));
        out.push(self.anchor.0.clone());
        out.push(self.anchor.1.clone());
        out
    }

    pub fn write(&self, dir: &Path, format: ReportFormat) -> Result<()> {
        let ext = extension(format);
        Table::retrieval(&self.retrieval_reports()).write(&dir.join(format!("retrieval.{ext}")), format)?;
        let cls: Vec<_> = self.languages.iter().map(|l| l.classification.clone()).collect();
        Table::classification(&cls).write(&dir.join(format!("classification.{ext}")), format)
    }
}

pub fn run_eval(
    cfg: &ExperimentConfig,
    ds: &SyntheticDataset,
    text: &EncoderParams,
    image: &EncoderParams,
    audio: &EncoderParams,
) -> Result<EvalSummary> {
    let target_len = cfg.augment.target_len;
    let control_enc = init_encoder(audio.spec(), &mut Rng::new(cfg.optim.seed).split(CONTROL_STREAM))?;
    Ok(EvalSummary {
        languages: multilingual_sweep(audio, text, ds, &cfg.language_names(), target_len)?,
        emergent: emergent_crossmodal_eval(audio, image, ds, target_len)?,
        control: emergent_crossmodal_eval(&control_enc, image, ds, target_len)?,
        anchor: anchor_retrieval(text, image, ds, Split::Test)?,
    })
}

/// Analytic cost of stage 1 against training all three encoders jointly for
/// the same number of steps.
pub fn cost_reductions(cfg: &ExperimentConfig, num_train: usize) -> Result<Vec<Reduction>> {
    let b = cfg.optim.batch_size;
    let steps = (num_train / b) as u64 * cfg.optim.epochs as u64;
    let ours = RegimeConfig::frozen_anchor(&cfg.text_spec(), &cfg.audio_spec(), b, steps.max(1));
    let base = RegimeConfig::tri_modal(&cfg.text_spec(), &cfg.image_spec(), &cfg.audio_spec(), b, steps.max(1));
    compare_regimes(&ours, &base)
}

pub fn extension(format: ReportFormat) -> &'static str {
    match format {
        ReportFormat::Csv => "csv",
        ReportFormat::JsonLines => "jsonl",
    }
}

/// Fixed artifact names inside a run directory.
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
    pub fn dataset(&self) -> PathBuf {
        self.dir.join("dataset.bin")
    }
    pub fn filtered_dataset(&self) -> PathBuf {
        self.dir.join("dataset.filtered.bin")
    }
    pub fn text(&self) -> PathBuf {
        self.dir.join("text.enc")
    }
    pub fn image(&self) -> PathBuf {
        self.dir.join("image.enc")
    }
    pub fn audio(&self) -> PathBuf {
        self.dir.join("audio.enc")
    }
    pub fn pretrain_log(&self) -> PathBuf {
        self.dir.join("pretrain_log.csv")
    }
    pub fn train_log(&self) -> PathBuf {
        self.dir.join("train_log.csv")
    }
    pub fn filter_report(&self) -> PathBuf {
        self.dir.join("filter.csv")
    }
    pub fn cost(&self, format: ReportFormat) -> PathBuf {
        self.dir.join(format!("cost.{}", extension(format)))
    }
}

pub fn filter_table(stats: &FilterStats) -> Table {
    use crate::eval::Cell;
    let q = stats.quantiles;
    Table {
        header: vec![
            "kept",
            "dropped",
            "sim_min",
            "sim_q25",
            "sim_median",
            "sim_q75",
            "sim_max",
        ],
        rows: vec![vec![
            Cell::Int(stats.kept as u64),
            Cell::Int(stats.dropped as u64),
            Cell::Float(q[0]),
            Cell::Float(q[1]),
            Cell::Float(q[2]),
            Cell::Float(q[3]),
            Cell::Float(q[4]),
        ]],
    }
}

#[derive(Clone, Debug)]
pub struct PipelineSummary {
    pub pretrain_log: TrainLog,
    pub train_log: TrainLog,
    pub filter: FilterStats,
    pub eval: EvalSummary,
    pub cost: Vec<Reduction>,
}

/// Runs every stage and writes all artifacts into `dir`.
pub fn run_pipeline(cfg: &ExperimentConfig, dir: &Path, format: ReportFormat) -> Result<PipelineSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = RunPaths::new(dir);

    let ds = run_generate(cfg)?;
    ds.save(&paths.dataset())?;
    log::info!("generated {} samples", ds.samples.len());

    let (text, image, pretrain_log) = run_pretrain(cfg, &ds)?;
    save_encoder(&text, &paths.text())?;
    save_encoder(&image, &paths.image())?;
    pretrain_log.write_csv(&paths.pretrain_log())?;

    let (filtered, filter) = run_filter(cfg, &ds, &text, &image)?;
    filtered.save(&paths.filtered_dataset())?;
    filter_table(&filter).write(&paths.filter_report(), ReportFormat::Csv)?;
    log::info!("filter kept {} dropped {}", filter.kept, filter.dropped);

    let (audio, train_log) = run_train(cfg, &filtered, &text)?;
    save_encoder(&audio, &paths.audio())?;
    train_log.write_csv(&paths.train_log())?;

    let eval = run_eval(cfg, &filtered, &text, &image, &audio)?;
    eval.write(dir, format)?;

    let cost = cost_reductions(cfg, filtered.world.num_train)?;
    crate::cost::reduction_table(&cost).write(&paths.cost(format), format)?;

    Ok(PipelineSummary {
        pretrain_log,
        train_log,
        filter,
        eval,
        cost,
    })
}

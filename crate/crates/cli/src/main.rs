//! `ealign`: run frozen-anchor alignment experiments from a config file.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ealign::config::{ExperimentConfig, FilterKind};
use ealign::cost::{reduction_table, reductions, CostReport};
use ealign::encoder::{load_encoder, save_encoder, EncoderParams};
use ealign::eval::{ReportFormat, Table};
use ealign::pipeline::{self, RunPaths};
use ealign::synthdata::SyntheticDataset;
use ealign::Error;

#[derive(Parser, Debug)]
#[command(
    name = "ealign",
    version,
    about = "Frozen-anchor contrastive alignment on a synthetic tri-modal world"
)]
struct Cli {
    /// Experiment config (TOML). Without it the `desk` preset is used.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for data augmentation and evaluation. Results do not
    /// depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Report format for tables.
    #[arg(long, global = true, value_name = "csv|jsonl", default_value = "csv")]
    report: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic dataset.
    Generate {
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Stage 0: train the text/image anchor pair and freeze it.
    Pretrain {
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Directory for `text.enc`, `image.enc` and the training log.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Drop the training pairs the frozen anchors agree on least.
    Filter {
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Directory holding `text.enc` and `image.enc`.
        #[arg(long, value_name = "DIR")]
        anchors: PathBuf,
        /// Fraction of training pairs to drop (overrides the config).
        #[arg(short = 'f', long = "fraction")]
        fraction: Option<f64>,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Stage 1: train the audio encoder against the frozen text encoder.
    Train {
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        #[arg(long, value_name = "DIR")]
        anchors: PathBuf,
        /// Directory for `audio.enc` and the training log.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Retrieval, zero-shot classification, multilingual sweep and emergent
    /// audio-image retrieval.
    Eval {
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Directory holding `text.enc`, `image.enc` and `audio.enc`.
        #[arg(long, value_name = "DIR")]
        checkpoints: PathBuf,
        /// Write report files here instead of printing to stdout.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Compare the cost of frozen-anchor training with tri-modal training.
    Cost {
        /// Compare the published totals instead: GFLOPs, GMACs and
        /// parameters as `ours,baseline` pairs.
        #[arg(long, num_args = 3, value_names = ["FLOPS", "MACS", "PARAMS"], value_parser = parse_pair)]
        published: Option<Vec<(f64, f64)>>,
    },
    /// Run every stage end to end.
    Pipeline {
        /// Output directory (defaults to the config's `output_dir`).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Print the effective config, preset plus overrides.
    ShowConfig,
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected OURS,BASELINE, got {s:?}"))?;
    let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}"));
    Ok((num(a)?, num(b)?))
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        "config" => 2,
        "io" => 3,
        "protocol" => 4,
        _ => 5,
    }
}

fn init_logging() -> Result<(), Error> {
    let level = match std::env::var("EALIGN_LOG").as_deref() {
        Err(_) | Ok("info") => log::LevelFilter::Info,
        Ok("quiet") => log::LevelFilter::Off,
        Ok("debug") => log::LevelFilter::Debug,
        Ok(other) => {
            return Err(Error::Config(format!(
                "EALIGN_LOG={other:?} (expected quiet|info|debug)"
            )))
        }
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match init_logging().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::preset("desk")?,
    };
    Ok(match cli.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn load_anchors(dir: &Path) -> Result<(EncoderParams, EncoderParams), Error> {
    let paths = RunPaths::new(dir);
    Ok((load_encoder(&paths.text())?, load_encoder(&paths.image())?))
}

fn print(text: &str) -> Result<(), Error> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::Io {
            path: PathBuf::from("<stdout>"),
            source: e,
        })
}

fn run(cli: Cli) -> Result<(), Error> {
    let format: ReportFormat = cli.report.parse()?;
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    }
    let mut cfg = load_config(&cli)?;

    match cli.command {
        Command::Generate { out } => {
            let ds = pipeline::run_generate(&cfg)?;
            ds.save(&out)?;
            log::info!("wrote {} samples to {}", ds.samples.len(), out.display());
        }
        Command::Pretrain { data, out } => {
            let ds = SyntheticDataset::load(&data)?;
            let (text, image, log) = pipeline::run_pretrain(&cfg, &ds)?;
            create_dir(&out)?;
            let paths = RunPaths::new(&out);
            save_encoder(&text, &paths.text())?;
            save_encoder(&image, &paths.image())?;
            log.write_csv(&paths.pretrain_log())?;
            log::info!("text fingerprint {}", text.fingerprint());
            log::info!("image fingerprint {}", image.fingerprint());
        }
        Command::Filter {
            data,
            anchors,
            fraction,
            out,
        } => {
            if let Some(f) = fraction {
                cfg.filter.mode = FilterKind::Fraction;
                cfg.filter.fraction = f;
            }
            let ds = SyntheticDataset::load(&data)?;
            let (text, image) = load_anchors(&anchors)?;
            let (filtered, stats) = pipeline::run_filter(&cfg, &ds, &text, &image)?;
            filtered.save(&out)?;
            print(&pipeline::filter_table(&stats).render(format))?;
        }
        Command::Train { data, anchors, out } => {
            let ds = SyntheticDataset::load(&data)?;
            let (text, _) = load_anchors(&anchors)?;
            let (audio, log) = pipeline::run_train(&cfg, &ds, &text)?;
            create_dir(&out)?;
            let paths = RunPaths::new(&out);
            save_encoder(&audio, &paths.audio())?;
            log.write_csv(&paths.train_log())?;
        }
        Command::Eval { data, checkpoints, out } => {
            let ds = SyntheticDataset::load(&data)?;
            let (text, image) = load_anchors(&checkpoints)?;
            let audio = load_encoder(&RunPaths::new(&checkpoints).audio())?;
            let summary = pipeline::run_eval(&cfg, &ds, &text, &image, &audio)?;
            match out {
                Some(dir) => {
                    create_dir(&dir)?;
                    summary.write(&dir, format)?;
                }
                None => {
                    print(&Table::retrieval(&summary.retrieval_reports()).render(format))?;
                    let cls: Vec<_> = summary.languages.iter().map(|l| l.classification.clone()).collect();
                    print(&Table::classification(&cls).render(format))?;
                }
            }
        }
        Command::Cost { published } => {
            let rows = match published {
                Some(p) => {
                    let ours = CostReport::published(p[0].0, p[1].0, p[2].0);
                    let base = CostReport::published(p[0].1, p[1].1, p[2].1);
                    reductions(&ours, &base)?
                }
                None => pipeline::cost_reductions(&cfg, cfg.world.num_train)?,
            };
            print(&reduction_table(&rows).render(format))?;
        }
        Command::Pipeline { out } => {
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            let s = pipeline::run_pipeline(&cfg, &dir, format)?;
            log::info!(
                "audio->image R@1 {:.4} (untrained {:.4}); english audio->text R@Avg {:.4}",
                s.eval.emergent.0.r1,
                s.eval.control.0.r1,
                s.eval.languages[0].audio_to_text.r_avg
            );
        }
        Command::ShowConfig => print(&cfg.to_toml_string())?,
    }
    Ok(())
}

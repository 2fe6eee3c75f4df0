//! Runs the full pipeline on a preset and prints the headline numbers.
//!
//! ```text
//! cargo run --release -p ealign --example desk_run -- [config.toml] [out_dir]
//! ```

use std::path::PathBuf;

use ealign::config::ExperimentConfig;
use ealign::eval::ReportFormat;
use ealign::pipeline::run_pipeline;

fn main() -> ealign::Result<()> {
    let mut args = std::env::args().skip(1);
    let cfg = match args.next() {
        Some(p) if !p.is_empty() => ExperimentConfig::load(&PathBuf::from(p))?,
        _ => ExperimentConfig::preset("desk")?,
    };
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| cfg.output_dir.clone());
    let start = std::time::Instant::now();
    let s = run_pipeline(&cfg, &out, ReportFormat::Csv)?;
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    println!(
        "stage 0 loss {:.3} -> {:.3}, val t->i r_avg by epoch end {:?}",
        s.pretrain_log.first_loss().unwrap(),
        s.pretrain_log.last_loss().unwrap(),
        s.pretrain_log.epochs.last().map(|e| e.val_r_avg)
    );
    println!(
        "stage 1 loss {:.3} -> {:.3}",
        s.train_log.first_loss().unwrap(),
        s.train_log.last_loss().unwrap()
    );
    let (t2i, _) = &s.eval.anchor;
    println!("anchor text->image R@1 {:.3} R@avg {:.3}", t2i.r1, t2i.r_avg);
    for l in &s.eval.languages {
        println!(
            "{:<11} a->t R@1 {:.3} R@avg {:.3}  zero-shot {:.3}",
            l.language, l.audio_to_text.r1, l.audio_to_text.r_avg, l.classification.accuracy
        );
    }
    println!(
        "audio->image R@1 {:.3} R@avg {:.3} (untrained R@1 {:.3})",
        s.eval.emergent.0.r1, s.eval.emergent.0.r_avg, s.eval.control.0.r1
    );
    Ok(())
}

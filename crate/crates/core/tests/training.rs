use ealign::augment::AugmentConfig;
use ealign::config::ExperimentConfig;
use ealign::contrastive::{contrastive_loss, ContrastiveConfig};
use ealign::encoder::{encode, init_encoder};
use ealign::eval::anchor_retrieval;
use ealign::numeric::{dot, Rng};
use ealign::synthdata::{generate, Split, SyntheticDataset, WorldConfig};
use ealign::train::{pretrain_anchor_pair, train_new_modality, NewModalityTrainer, OptimConfig, TrainConfig};
use ealign::Error;

fn small_world(num_train: usize) -> WorldConfig {
    WorldConfig {
        num_train,
        num_val: 40,
        num_test: 40,
        ..WorldConfig::default()
    }
}

fn anchors(ds: &SyntheticDataset, epochs: usize) -> (ealign::encoder::EncoderParams, ealign::encoder::EncoderParams) {
    let cfg = ExperimentConfig::preset("desk").unwrap();
    let optim = OptimConfig {
        epochs,
        batch_size: 32,
        ..cfg.pretrain
    };
    let (t, i, _) = pretrain_anchor_pair(&cfg.text_spec(), &cfg.image_spec(), ds, &optim, &cfg.contrastive).unwrap();
    (t, i)
}

fn stage1(epochs: usize, seed: u64) -> (TrainConfig, ealign::encoder::EncoderSpec) {
    let cfg = ExperimentConfig::preset("desk").unwrap();
    let mut t = cfg.stage1();
    t.optim.epochs = epochs;
    t.optim.batch_size = 32;
    t.optim.seed = seed;
    (t, cfg.audio_spec())
}

#[test]
fn pretraining_clears_ten_times_chance_on_default_world() {
    let cfg = ExperimentConfig::preset("desk").unwrap();
    let ds = generate(&cfg.world, &Rng::new(cfg.world.seed)).unwrap();
    let (text, image, log) = pretrain_anchor_pair(
        &cfg.text_spec(),
        &cfg.image_spec(),
        &ds,
        &cfg.pretrain,
        &cfg.contrastive,
    )
    .unwrap();
    assert!(text.is_frozen() && image.is_frozen());
    let (t2i, i2t) = anchor_retrieval(&text, &image, &ds, Split::Val).unwrap();
    let chance = 1.0 / cfg.world.num_val as f64;
    assert!(
        t2i.r1 >= 10.0 * chance && i2t.r1 >= 10.0 * chance,
        "{} {}",
        t2i.r1,
        i2t.r1
    );
    assert!(log.last_loss().unwrap() < log.first_loss().unwrap());

    // Same-sample text agreement: low-noise languages sit closer to English
    // than the high-noise one, on average over the validation split.
    let val = ds.indices(Split::Val);
    let en = encode(&text, &ds.text_matrix(&val, 0).unwrap()).unwrap();
    let mean_cos = |name: &str| {
        let l = ds.language_index(name).unwrap();
        let other = encode(&text, &ds.text_matrix(&val, l).unwrap()).unwrap();
        (0..val.len()).map(|r| dot(en.row(r), other.row(r))).sum::<f64>() / val.len() as f64
    };
    let sw = mean_cos("swahili");
    for lang in ["spanish", "german"] {
        assert!(mean_cos(lang) >= sw, "{lang} {} < swahili {sw}", mean_cos(lang));
    }
}

#[test]
fn stage1_loss_decreases_and_leaves_anchor_untouched() {
    let ds = generate(&small_world(256), &Rng::new(3)).unwrap();
    let (text, _) = anchors(&ds, 20);
    let before = text.fingerprint();
    let (cfg, spec) = stage1(10, 3);
    let (audio, log) = train_new_modality(&text, &spec, &ds, &cfg).unwrap();
    assert!(!audio.is_frozen());
    assert_eq!(text.fingerprint(), before);
    let last_epoch: Vec<f64> = log.steps.iter().filter(|s| s.epoch == 9).map(|s| s.loss).collect();
    let mean_last = last_epoch.iter().sum::<f64>() / last_epoch.len() as f64;
    assert!(mean_last < log.first_loss().unwrap());
    assert_eq!(log.epochs.len(), 10);
    assert!(log.steps.windows(2).all(|w| w[1].step == w[0].step + 1));
}

#[test]
fn unfrozen_anchor_is_a_protocol_error() {
    let ds = generate(&small_world(64), &Rng::new(1)).unwrap();
    let cfg = ExperimentConfig::preset("desk").unwrap();
    let text = init_encoder(&cfg.text_spec(), &mut Rng::new(0)).unwrap();
    let (tcfg, spec) = stage1(1, 0);
    assert!(matches!(
        train_new_modality(&text, &spec, &ds, &tcfg),
        Err(Error::Protocol(_))
    ));
}

#[test]
fn training_is_deterministic() {
    let ds = generate(&small_world(128), &Rng::new(4)).unwrap();
    let (text, _) = anchors(&ds, 5);
    let (cfg, spec) = stage1(4, 11);
    let (a, la) = train_new_modality(&text, &spec, &ds, &cfg).unwrap();
    let (b, lb) = train_new_modality(&text, &spec, &ds, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(la, lb);
    assert_eq!(la.to_csv(), lb.to_csv());
}

#[test]
fn resume_matches_uninterrupted_run() {
    let ds = generate(&small_world(160), &Rng::new(5)).unwrap();
    let (text, _) = anchors(&ds, 5);
    let (cfg, spec) = stage1(6, 9);
    let (full, full_log) = train_new_modality(&text, &spec, &ds, &cfg).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stage1.ckpt");
    let mut t = NewModalityTrainer::new(&text, &spec, &ds, &cfg).unwrap();
    let k = t.total_steps() / 2 + 1;
    t.run_until(k).unwrap();
    t.save_checkpoint(&path).unwrap();
    // Checkpointing twice without stepping writes identical bytes.
    let again = dir.path().join("again.ckpt");
    t.save_checkpoint(&again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    drop(t);

    let mut resumed = NewModalityTrainer::resume(&path, &text, &ds, &cfg).unwrap();
    assert_eq!(resumed.current_step(), k);
    resumed.run_to_end().unwrap();
    let (params, log) = resumed.finish().unwrap();
    assert_eq!(params, full);
    assert_eq!(log, full_log);
}

#[test]
fn resume_of_missing_file_fails() {
    let ds = generate(&small_world(64), &Rng::new(1)).unwrap();
    let (text, _) = anchors(&ds, 1);
    let (cfg, _) = stage1(1, 0);
    let r = NewModalityTrainer::resume(std::path::Path::new("/nonexistent/ckpt"), &text, &ds, &cfg);
    assert!(matches!(r, Err(Error::Io { .. })));
}

#[test]
fn resume_rejects_a_different_seed() {
    let ds = generate(&small_world(64), &Rng::new(1)).unwrap();
    let (text, _) = anchors(&ds, 2);
    let (cfg, spec) = stage1(2, 0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c");
    let mut t = NewModalityTrainer::new(&text, &spec, &ds, &cfg).unwrap();
    t.run_until(1).unwrap();
    t.save_checkpoint(&path).unwrap();
    let (other, _) = stage1(2, 1);
    assert!(matches!(
        NewModalityTrainer::resume(&path, &text, &ds, &other),
        Err(Error::Config(_))
    ));
}

/// Clean loss of the fixed batch (unaugmented audio) after each of 50 steps.
fn one_batch_trajectory(seed: u64, max_lr: f64, augment: bool) -> Vec<f64> {
    let batch = 16;
    let world = WorldConfig {
        num_train: batch,
        num_val: 0,
        num_test: 0,
        seed,
        ..WorldConfig::default()
    };
    let ds = generate(&world, &Rng::new(seed)).unwrap();
    let (text, _) = anchors_with_batch(&ds, batch);
    let cfg = ExperimentConfig::preset("desk").unwrap();
    let tcfg = TrainConfig {
        optim: OptimConfig {
            batch_size: batch,
            epochs: 50,
            seed,
            warmup_fraction: 0.0,
            max_lr,
            min_lr: max_lr / 5.0,
            ..cfg.optim.clone()
        },
        contrastive: ContrastiveConfig {
            tau: 0.07,
            symmetric: true,
        },
        augment: if augment {
            AugmentConfig::scaled(world.audio_channels, world.audio_frames)
        } else {
            AugmentConfig::disabled(world.audio_frames)
        },
    };
    let idx: Vec<usize> = (0..batch).collect();
    let text_emb = encode(&text, &ds.text_matrix(&idx, 0).unwrap()).unwrap();
    let audio_in = ds.audio_matrix(&idx, world.audio_frames).unwrap();
    let mut trainer = NewModalityTrainer::new(&text, &cfg.audio_spec(), &ds, &tcfg).unwrap();
    let clean = |t: &NewModalityTrainer| {
        contrastive_loss(&text_emb, &encode(t.audio(), &audio_in).unwrap(), &tcfg.contrastive).unwrap()
    };
    let mut losses = vec![clean(&trainer)];
    for _ in 0..50 {
        trainer.step().unwrap();
        losses.push(clean(&trainer));
    }
    losses
}

fn count_monotone(max_lr: f64, augment: bool) -> (usize, String) {
    let mut n = 0;
    let mut report = Vec::new();
    for seed in 0..20u64 {
        let l = one_batch_trajectory(seed, max_lr, augment);
        let ups = l.windows(2).filter(|w| w[1] > w[0]).count();
        n += usize::from(ups == 0);
        report.push(format!("{seed}:{ups}"));
    }
    (n, report.join(" "))
}

/// One fixed batch at τ = 0.07, trained with augmentation on: the clean
/// batch loss falls at every one of 50 steps for at least 18 of 20 seeds.
/// Monotone descent needs a step size below the curvature bound, so this runs
/// at 3e-4; at the desk rate of 3e-3 augmented steps overshoot occasionally.
#[test]
fn one_batch_loss_decreases_monotonically() {
    let (n, report) = count_monotone(3e-4, true);
    assert!(n >= 18, "only {n}/20 monotone (seed:increases) {report}");
}

/// Without augmentation every step sees the same batch, so descent is
/// monotone even at the desk learning rate.
#[test]
fn one_batch_loss_without_augmentation_is_monotone_at_desk_rate() {
    let (n, report) = count_monotone(OptimConfig::desk().max_lr, false);
    assert_eq!(n, 20, "(seed:increases) {report}");
}

fn anchors_with_batch(
    ds: &SyntheticDataset,
    batch: usize,
) -> (ealign::encoder::EncoderParams, ealign::encoder::EncoderParams) {
    let cfg = ExperimentConfig::preset("desk").unwrap();
    let optim = OptimConfig {
        epochs: 30,
        batch_size: batch,
        ..cfg.pretrain
    };
    let (t, i, _) = pretrain_anchor_pair(&cfg.text_spec(), &cfg.image_spec(), ds, &optim, &cfg.contrastive).unwrap();
    (t, i)
}

#[test]
fn batch_larger_than_split_is_a_config_error() {
    let ds = generate(&small_world(20), &Rng::new(1)).unwrap();
    let cfg = ExperimentConfig::preset("desk").unwrap();
    let r = pretrain_anchor_pair(
        &cfg.text_spec(),
        &cfg.image_spec(),
        &ds,
        &cfg.pretrain,
        &cfg.contrastive,
    );
    assert!(matches!(r, Err(Error::Config(_))));
}

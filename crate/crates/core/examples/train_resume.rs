//! Trains a narrow decoder on a tiny synthetic dataset, stops half way, resumes from the
//! checkpoint and compares the losses with an uninterrupted run.
//!
//! cargo run --release --example train_resume

use volseg::decoder::DecoderConfig;
use volseg::encoder::EncoderConfig;
use volseg::toy::generate_toy_dataset;
use volseg::trainer::{run_training, TrainConfig, TrainOptions};
use volseg::volume::AugmentConfig;

fn main() -> volseg::Result<()> {
    let root = std::env::temp_dir().join(format!("volseg_resume_{}", std::process::id()));
    let manifest = generate_toy_dataset(&root.join("data"), 2, [4, 32, 32], 3, 9)?;
    let enc = EncoderConfig::toy(0);
    let dec = DecoderConfig {
        in_channels: 256,
        block_channels: [16, 8, 4, 2],
        num_classes: 3,
    };
    let cfg = TrainConfig {
        max_epoch: 4,
        iters_per_epoch: 3,
        checkpoint_every: 1,
        augment: AugmentConfig {
            p_rotation: 0.5,
            ..AugmentConfig::default()
        },
        ..TrainConfig::default()
    };

    let full = run_training(&manifest, &enc, &dec, &cfg, &root.join("full"), &TrainOptions::default())?;
    let half = TrainOptions {
        stop_after_epoch: Some(2),
        ..TrainOptions::default()
    };
    let first = run_training(&manifest, &enc, &dec, &cfg, &root.join("split"), &half)?;
    let resume = TrainOptions {
        resume_from: Some(first.last_checkpoint.clone()),
        ..TrainOptions::default()
    };
    let second = run_training(&manifest, &enc, &dec, &cfg, &root.join("split"), &resume)?;

    let split: Vec<f64> = first.log.iter().chain(&second.log).map(|r| r.loss).collect();
    for (r, s) in full.log.iter().zip(&split) {
        println!("iter {:>2} epoch {} lr {:.5}: {:.6} {:.6}", r.iter, r.epoch, r.lr, r.loss, s);
    }
    let same = full.log.iter().map(|r| r.loss).eq(split.iter().copied());
    println!("resumed trajectory identical: {same}");
    std::fs::remove_dir_all(root).ok();
    Ok(())
}

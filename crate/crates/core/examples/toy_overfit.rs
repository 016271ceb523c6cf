//! Generates a small synthetic dataset, trains the decoder on it and reports the
//! per-class dice of sliding-window predictions on the training cases.
//!
//! cargo run --release --example toy_overfit [dataset_seed] [train_seed]

use std::time::Instant;

use volseg::config::RunConfig;
use volseg::encoder::{Encoder, EncoderConfig};
use volseg::inference::{argmax_segmentation, sliding_window_predict};
use volseg::metrics::evaluate_volume;
use volseg::toy::generate_toy_dataset;
use volseg::trainer::{run_training, TrainOptions};
use volseg::volume::{load_case, AugmentConfig, Split};

fn main() -> volseg::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<u64>().expect("integer seed"));
    let data_seed = args.next().unwrap_or(2024);
    let train_seed = args.next().unwrap_or(0);
    let dir = tempfile_dir();
    let manifest = generate_toy_dataset(&dir.join("data"), 4, [8, 64, 64], 3, data_seed)?;

    let mut cfg = RunConfig::new(dir.join("data/manifest.json"), dir.join("run"));
    cfg.encoder = EncoderConfig::toy(0);
    cfg.train.max_epoch = 8;
    cfg.train.iters_per_epoch = 25;
    cfg.train.batch_size = 2;
    cfg.train.seed = train_seed;
    cfg.train.augment = AugmentConfig::disabled();
    let dec_cfg = cfg.decoder_config(&manifest);

    let t = Instant::now();
    let out = run_training(&manifest, &cfg.encoder, &dec_cfg, &cfg.train, &cfg.output_dir, &TrainOptions::default())?;
    let first = out.log.first().map(|r| r.loss).unwrap_or(f64::NAN);
    let last = out.log.last().map(|r| r.loss).unwrap_or(f64::NAN);
    println!("trained {} iterations in {:.1?}: loss {first:.4} -> {last:.4}", out.log.len(), t.elapsed());

    let encoder = Encoder::new(&cfg.encoder)?;
    let mut dscs = Vec::new();
    for entry in manifest.cases_in(Split::Train) {
        let case = load_case(&manifest, entry, cfg.train.normalization)?;
        let probs = sliding_window_predict(&case.image, &encoder, &out.state.decoder, cfg.window(&manifest), 0.5)?;
        let pred = argmax_segmentation(&probs)?;
        let m = evaluate_volume(&pred, &case.labels, case.image.spacing, manifest.num_classes)?;
        let per: Vec<String> = m.per_class.iter().map(|c| format!("{:.4}", c.dsc)).collect();
        println!("{}: dsc [{}] hd95 {:?}", case.case_id, per.join(", "), m.mean_hd95);
        dscs.push(m.mean_dsc);
    }
    println!("mean foreground dsc {:.4}", dscs.iter().sum::<f64>() / dscs.len() as f64);
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("volseg_toy_{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

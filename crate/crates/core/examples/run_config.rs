//! Parses run configurations: defaults, overrides and path-named validation errors.
//!
//! cargo run --example run_config

use volseg::config::RunConfig;

fn main() {
    let minimal = r#"{"schema_version": 1, "manifest": "data/manifest.json", "output_dir": "runs/a"}"#;
    let cfg = RunConfig::from_json(minimal).unwrap();
    println!(
        "defaults: lr {} momentum {} weight decay {} epochs {}x{}",
        cfg.train.init_lr, cfg.train.momentum, cfg.train.weight_decay, cfg.train.max_epoch, cfg.train.iters_per_epoch
    );

    let custom = r#"{"schema_version": 1, "manifest": "m.json", "output_dir": "o", "seed": 3,
        "train": {"max_epoch": 8, "iters_per_epoch": 25, "augment": {"p_rotation": 0.0}},
        "inference": {"overlap": 0.25}}"#;
    let cfg = RunConfig::from_json(custom).unwrap();
    println!("overrides: seed {} overlap {}", cfg.train.seed, cfg.inference.overlap);
    println!("{}", cfg.to_json().unwrap());

    for bad in [
        r#"{"schema_version": 1, "manifest": "m", "output_dir": "o", "train": {"max_epoch": -1}}"#,
        r#"{"schema_version": 1, "manifest": "m", "output_dir": "o", "encoder": {"embed_dims": 64}}"#,
    ] {
        println!("rejected: {}", RunConfig::from_json(bad).unwrap_err());
    }
}

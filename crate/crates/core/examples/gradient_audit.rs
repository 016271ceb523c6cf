//! Finite-difference audit of the decoder and deep-supervision loss gradients in float64,
//! then the same audit with one gradient entry doubled.
//!
//! cargo run --release --example gradient_audit

use volseg::decoder::{count_parameters, DecoderConfig};
use volseg::objective::LossConfig;
use volseg::trainer::{finite_difference_gradient_check, finite_difference_gradient_check_with, GradCheckOptions};

fn main() -> volseg::Result<()> {
    let cfg = DecoderConfig {
        in_channels: 4,
        block_channels: [8, 6, 4, 2],
        num_classes: 2,
    };
    println!("decoder parameters: {}", count_parameters(&cfg).total);
    let loss = LossConfig::default();
    let report = finite_difference_gradient_check(&cfg, &loss, 3)?;
    println!(
        "checked {} entries, max relative error {:.3e} at {:?}, refined {}, passed {}",
        report.checked,
        report.max_rel_error,
        report.worst,
        report.refined,
        report.passed()
    );

    let opts = GradCheckOptions {
        fault: Some(("heads.main.out.weight".into(), 0, 2.0)),
        tensors: Some(vec!["heads.main.out.weight".into()]),
        ..GradCheckOptions::default()
    };
    let faulty = finite_difference_gradient_check_with(&cfg, &loss, 3, &opts)?;
    println!("with a doubled gradient: max relative error {:.3e}, passed {}", faulty.max_rel_error, faulty.passed());
    Ok(())
}

//! The poly learning-rate curve and a few SGD-with-momentum steps on a quadratic.
//!
//! cargo run --example lr_schedule

use volseg::trainer::{poly_lr, sgd_step, SgdParams};

fn main() {
    for epoch in [0, 250, 500, 750, 999, 1000] {
        println!("epoch {epoch:>4}: lr {:.7e}", poly_lr(1e-2, epoch, 1000, 0.9).unwrap());
    }
    // minimise 0.5 * x^2 from x = 1
    let hp = SgdParams {
        lr: 0.1,
        momentum: 0.9,
        weight_decay: 0.0,
        nesterov: false,
    };
    let (mut x, mut v) = (1.0f32, 0.0f32);
    for step in 0..5 {
        let g = x;
        sgd_step(std::slice::from_mut(&mut x), &[g], std::slice::from_mut(&mut v), &hp, true);
        println!("step {step}: x {x:.5}");
    }
}

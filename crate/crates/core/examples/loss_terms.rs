//! Soft dice and cross entropy on hand-checkable inputs, and the deep-supervision weights.
//!
//! cargo run --example loss_terms

use ndarray::{Array3, Array4};
use volseg::objective::{
    combined_loss, cross_entropy_loss, deep_supervision_weights, one_hot_logits, soft_dice_loss, LossConfig,
};
use volseg::volume::LabelVolume;

fn main() -> volseg::Result<()> {
    let cfg = LossConfig::default();
    // one voxel, two classes, equal logits: p = (0.5, 0.5), target class 1
    let logits = Array4::<f64>::zeros((2, 1, 1, 1));
    let target = LabelVolume::new(Array3::from_elem((1, 1, 1), 1), 2)?;
    println!("dice loss {:.6}", soft_dice_loss(&logits, &target, &cfg)?);
    println!("cross entropy {:.12} (ln 2 = {:.12})", cross_entropy_loss(&logits, &target)?, std::f64::consts::LN_2);

    let labels = Array3::from_shape_fn((2, 4, 4), |(z, y, x)| ((z + y + x) % 3) as u8);
    let target = LabelVolume::new(labels, 3)?;
    let perfect = one_hot_logits::<f64>(&target, 3, 30.0);
    println!("total loss at near-perfect logits {:.3e}", combined_loss(&perfect, &target, &cfg)?.total);
    println!("stage weights {:?}", deep_supervision_weights(3));
    Ok(())
}

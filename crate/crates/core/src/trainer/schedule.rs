use super::TrainConfig;
use crate::error::{Error, Result};

/// `init_lr * (1 - epoch / max_epoch)^power` for `0 <= epoch <= max_epoch`.
pub fn poly_lr(init_lr: f64, epoch: usize, max_epoch: usize, power: f64) -> Result<f64> {
    if max_epoch == 0 || epoch > max_epoch {
        return Err(Error::validation(
            "epoch",
            format!("epoch {epoch} outside [0, {max_epoch}]"),
        ));
    }
    Ok(init_lr * (1.0 - epoch as f64 / max_epoch as f64).powf(power))
}

pub fn poly_learning_rate(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    poly_lr(cfg.init_lr, epoch, cfg.max_epoch, cfg.power)
}

//! Gaussian-weighted sliding-window prediction on a volume larger than the window.
//!
//! cargo run --release --example sliding_window

use ndarray::{Array4, Axis};
use volseg::decoder::{initialize_weights, DecoderConfig};
use volseg::encoder::{Encoder, EncoderConfig};
use volseg::inference::{argmax_segmentation, compute_window_grid, sliding_window_predict};
use volseg::volume::Volume;

fn main() -> volseg::Result<()> {
    let data = Array4::from_shape_fn((1, 6, 40, 56), |(_, z, y, x)| ((z * 7 + y * 3 + x) as f32 * 0.05).cos());
    let vol = Volume::new(data, [1.0; 3])?;
    let window = [4, 32, 32];
    let grid = compute_window_grid(vol.spatial_shape(), window, 0.5)?;
    println!("{} windows over padded shape {:?}", grid.origins.len(), grid.padded_shape);

    let encoder = Encoder::new(&EncoderConfig::toy(0))?;
    let cfg = DecoderConfig {
        in_channels: 256,
        block_channels: [32, 16, 8, 4],
        num_classes: 3,
    };
    let decoder = initialize_weights::<f32>(&cfg, 0);
    let probs = sliding_window_predict(&vol, &encoder, &decoder, window, 0.5)?;
    let sums = probs.sum_axis(Axis(0));
    let worst = sums.iter().map(|s| (s - 1.0).abs()).fold(0.0f32, f32::max);
    println!("probabilities {:?}, max |sum - 1| = {worst:.2e}", probs.shape());
    let seg = argmax_segmentation(&probs)?;
    let counts: Vec<usize> = (0..3).map(|c| seg.labels.iter().filter(|&&l| l == c).count()).collect();
    println!("voxels per class from an untrained decoder {counts:?}");
    Ok(())
}

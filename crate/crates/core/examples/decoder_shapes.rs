//! Runs the decoder on random embeddings and prints the per-stage logit shapes.
//!
//! cargo run --release --example decoder_shapes

use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use volseg::decoder::{initialize_weights, DecoderConfig};

fn main() -> volseg::Result<()> {
    let cfg = DecoderConfig {
        in_channels: 64,
        block_channels: [32, 16, 8, 4],
        num_classes: 3,
    };
    let dec = initialize_weights::<f32>(&cfg, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (d, h16, w16) = (5, 2, 3);
    let emb = Array4::from_shape_simple_fn((64, d, h16, w16), || rng.gen_range(-1.0f32..1.0));
    let out = dec.forward(&emb)?;
    println!("embedding {:?}", emb.shape());
    for (name, l) in ["main", "aux 1/2", "aux 1/4"].iter().zip(&out.logits) {
        println!("{name:<8} {:?}", l.shape());
    }
    Ok(())
}

//! Encodes a two-modality volume slice by slice with the frozen toy encoder and caches
//! the result on disk.
//!
//! cargo run --release --example encode_slices

use ndarray::Array4;
use volseg::encoder::{encode_volume, EmbeddingCache, Encoder, EncoderConfig};
use volseg::volume::Volume;

fn main() -> volseg::Result<()> {
    let data = Array4::from_shape_fn((2, 3, 32, 48), |(m, z, y, x)| ((m + 1) as f32 * (z + y + x) as f32).sin());
    let vol = Volume::new(data, [3.0, 0.8, 0.8])?;
    let encoder = Encoder::new(&EncoderConfig::toy(7))?;
    println!("encoder digest {}", &encoder.digest()[..16]);

    let emb = encode_volume(&vol, &encoder)?;
    println!("embedding shape {:?} (256 channels per modality, stride {})", emb.data.shape(), emb.stride);

    let dir = std::env::temp_dir().join(format!("volseg_cache_{}", std::process::id()));
    let cache = EmbeddingCache::new(&dir)?;
    let a = cache.get_or_compute("demo", &vol, &encoder)?;
    let b = cache.get_or_compute("demo", &vol, &encoder)?;
    println!("encoder calls after two lookups: {}, identical: {}", cache.encoder_calls(), a == b);
    std::fs::remove_dir_all(dir).ok();
    Ok(())
}

//! Closed-form and allocated decoder parameter counts for the two published settings.
//!
//! cargo run --example count_params

use volseg::decoder::{count_parameters, initialize_weights, DecoderConfig};

fn main() {
    for (name, modalities, classes) in [("synapse", 1, 9), ("brats", 4, 4)] {
        let cfg = DecoderConfig::new(modalities, classes);
        let count = count_parameters(&cfg);
        let allocated = initialize_weights::<f32>(&cfg, 0).param_count();
        println!(
            "{name}: closed form {} ({:.2}M), allocated {allocated}, {}",
            count.total,
            count.total as f64 / 1e6,
            if count.total == allocated { "match" } else { "MISMATCH" }
        );
        for (layer, n) in count.per_layer.iter().filter(|(_, n)| *n > 100_000) {
            println!("  {layer:<24} {n}");
        }
    }
}

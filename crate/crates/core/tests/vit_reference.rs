//! The pretrained backend against embeddings produced by the reference ViT image
//! encoder (see fixtures/make_vit_fixture.py).

use std::path::PathBuf;

use ndarray::{Array2, Array3, Array4, Axis};
use safetensors::SafeTensors;
use volseg::encoder::{split_into_slices, Encoder, EncoderBackend, EncoderConfig};
use volseg::volume::Volume;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn tensor(st: &SafeTensors, name: &str) -> (Vec<usize>, Vec<f32>) {
    let t = st.tensor(name).unwrap();
    let v = t
        .data()
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    (t.shape().to_vec(), v)
}

fn tiny_config() -> EncoderConfig {
    EncoderConfig {
        backend: EncoderBackend::PretrainedVit,
        checkpoint_path: Some(fixture("vit_tiny.safetensors")),
        embed_dim: 32,
        vit_heads: 2,
        vit_window: 2,
        vit_global_blocks: vec![1],
        ..EncoderConfig::default()
    }
}

#[test]
fn matches_reference_embedding() {
    let bytes = std::fs::read(fixture("vit_tiny_io.safetensors")).unwrap();
    let io = SafeTensors::deserialize(&bytes).unwrap();
    let (shape, slice) = tensor(&io, "slice");
    let (eshape, expected) = tensor(&io, "embedding");
    assert_eq!(eshape, vec![32, 3, 5]);

    let img = Array2::from_shape_vec((shape[0], shape[1]), slice).unwrap();
    let vol = Volume::from_data(img.insert_axis(Axis(0)).insert_axis(Axis(0))).unwrap();
    let enc = Encoder::new(&tiny_config()).unwrap();
    let out: Array4<f32> = enc.encode_slices(&split_into_slices(&vol, 0).unwrap()).unwrap();
    assert_eq!(out.dim(), (1, 32, 3, 5));

    let expected = Array3::from_shape_vec((32, 3, 5), expected).unwrap();
    let got = out.index_axis(Axis(0), 0);
    let worst = got
        .iter()
        .zip(expected.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    assert!(worst < 1e-4, "max abs difference {worst}");
}

#[test]
fn digest_covers_checkpoint_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let copy = dir.path().join("copy.safetensors");
    std::fs::copy(fixture("vit_tiny.safetensors"), &copy).unwrap();
    let a = Encoder::new(&tiny_config()).unwrap();
    let b = Encoder::new(&EncoderConfig {
        checkpoint_path: Some(copy),
        ..tiny_config()
    })
    .unwrap();
    assert_eq!(a.digest(), b.digest());
}

#[test]
fn wrong_head_count_is_a_checkpoint_error() {
    let cfg = EncoderConfig {
        vit_heads: 4,
        ..tiny_config()
    };
    let err = Encoder::new(&cfg).unwrap_err();
    assert!(err.to_string().contains("relative position"), "{err}");
}

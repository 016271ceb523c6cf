use ndarray::{s, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random_volume(seed: u64, shape: (usize, usize, usize, usize)) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Volume::from_data(Array4::from_shape_simple_fn(shape, || rng.gen_range(-2.0..2.0))).unwrap()
}

#[test]
fn slices_copy_the_modality_into_three_channels() {
    let vol = random_volume(1, (2, 4, 32, 16));
    let batch = split_into_slices(&vol, 1).unwrap();
    assert_eq!(batch.slices.dim(), (4, 3, 32, 16));
    for d in 0..4 {
        for c in 0..3 {
            assert_eq!(batch.slices.slice(s![d, c, .., ..]), vol.data.slice(s![1, d, .., ..]));
        }
    }
    let single = split_into_slices(&random_volume(2, (1, 1, 16, 16)), 0).unwrap();
    assert_eq!(single.slices.dim().0, 1);
    assert!(matches!(split_into_slices(&vol, 2), Err(Error::Shape(_))));
}

#[test]
fn embedding_shapes() {
    let enc = Encoder::new(&EncoderConfig::toy(0)).unwrap();
    let e1 = encode_volume(&random_volume(3, (1, 4, 64, 64)), &enc).unwrap();
    assert_eq!(e1.data.dim(), (256, 4, 4, 4));
    let e4 = encode_volume(&random_volume(4, (4, 4, 64, 64)), &enc).unwrap();
    assert_eq!(e4.data.dim(), (1024, 4, 4, 4));
    assert_eq!(e4.stride, 16);
}

#[test]
fn modalities_occupy_their_own_channel_blocks() {
    let enc = Encoder::new(&EncoderConfig::toy(0)).unwrap();
    let vol = random_volume(5, (2, 2, 32, 32));
    let both = encode_volume(&vol, &enc).unwrap();
    let second = Volume::from_data(vol.data.slice(s![1..2, .., .., ..]).to_owned()).unwrap();
    let alone = encode_volume(&second, &enc).unwrap();
    assert_eq!(both.data.slice(s![256.., .., .., ..]), alone.data);
}

#[test]
fn non_multiple_of_stride_is_shape_error() {
    let enc = Encoder::new(&EncoderConfig::toy(0)).unwrap();
    let err = encode_volume(&random_volume(6, (1, 2, 40, 32)), &enc).unwrap_err();
    assert!(matches!(err, Error::Shape(_)), "{err}");
}

#[test]
fn repeated_runs_are_bitwise_identical() {
    let enc = Encoder::new(&EncoderConfig::toy(9)).unwrap();
    let vol = random_volume(7, (1, 3, 32, 48));
    let a = encode_volume(&vol, &enc).unwrap();
    let b = encode_volume(&vol, &Encoder::new(&EncoderConfig::toy(9)).unwrap()).unwrap();
    assert!(a.data.iter().zip(b.data.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn toy_forward_shape_and_seed_dependence() {
    let batch = split_into_slices(&random_volume(8, (1, 1, 32, 32)), 0).unwrap();
    let a = toy_encoder_forward(&batch, 0).unwrap();
    assert_eq!(a.dim(), (1, 256, 2, 2));
    let b = toy_encoder_forward(&batch, 1).unwrap();
    let diff = (&a - &b).iter().fold(0.0f32, |m, v| m.max(v.abs()));
    assert!(diff > 0.0);
}

#[test]
fn zero_slice_sees_only_the_position_encoding() {
    let cfg = EncoderConfig::toy(3);
    let enc = Encoder::new(&cfg).unwrap();
    let batch = SliceBatch {
        slices: Array4::zeros((2, 3, 32, 48)),
    };
    let out = enc.encode_slices(&batch).unwrap();
    assert!(out.iter().all(|v| v.is_finite()));
    assert_eq!(out.slice(s![0, .., .., ..]), out.slice(s![1, .., .., ..]));

    let toy = ToyEncoder::new(3, 256, 16, 2, 4, 2);
    let expected = toy.transform(toy.position_tokens(2, 3));
    let got = out.slice(s![0, .., .., ..]).to_owned().into_shape_with_order((256, 6)).unwrap();
    assert_eq!(got.t(), expected);
}

#[test]
fn permuting_slices_permutes_embeddings() {
    let enc = Encoder::new(&EncoderConfig::toy(4)).unwrap();
    let batch = split_into_slices(&random_volume(10, (1, 4, 32, 32)), 0).unwrap();
    let perm = [2, 0, 3, 1];
    let mut shuffled = batch.slices.clone();
    for (i, &p) in perm.iter().enumerate() {
        shuffled.slice_mut(s![i, .., .., ..]).assign(&batch.slices.slice(s![p, .., .., ..]));
    }
    let base = enc.encode_slices(&batch).unwrap();
    let moved = enc.encode_slices(&SliceBatch { slices: shuffled }).unwrap();
    for (i, &p) in perm.iter().enumerate() {
        assert_eq!(moved.slice(s![i, .., .., ..]), base.slice(s![p, .., .., ..]));
    }
}

#[test]
fn digest_tracks_the_configuration() {
    let a = Encoder::new(&EncoderConfig::toy(0)).unwrap();
    let b = Encoder::new(&EncoderConfig::toy(1)).unwrap();
    assert_ne!(a.digest(), b.digest());
    assert_eq!(a.digest(), Encoder::new(&EncoderConfig::toy(0)).unwrap().digest());
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = EncoderConfig::toy(0);
    cfg.patch_stride = 8;
    assert!(matches!(Encoder::new(&cfg), Err(Error::Unsupported { .. })));
    let cfg = EncoderConfig {
        backend: EncoderBackend::PretrainedVit,
        ..EncoderConfig::default()
    };
    assert!(matches!(Encoder::new(&cfg), Err(Error::Validation { .. })));
}

#[test]
fn cache_hits_skip_the_encoder() {
    let dir = tempfile::tempdir().unwrap();
    let cache = EmbeddingCache::new(dir.path()).unwrap();
    let enc = Encoder::new(&EncoderConfig::toy(0)).unwrap();
    let vol = random_volume(11, (1, 2, 32, 32));
    let first = cache.get_or_compute("case/01", &vol, &enc).unwrap();
    let second = cache.get_or_compute("case/01", &vol, &enc).unwrap();
    assert_eq!(cache.encoder_calls(), 1);
    assert!(first.data.iter().zip(second.data.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_eq!(first, encode_volume(&vol, &enc).unwrap());

    let other = Encoder::new(&EncoderConfig::toy(1)).unwrap();
    cache.get_or_compute("case/01", &vol, &other).unwrap();
    assert_eq!(cache.encoder_calls(), 2);
}

#[test]
fn truncated_entry_is_recomputed() {
    let dir = tempfile::tempdir().unwrap();
    let cache = EmbeddingCache::new(dir.path()).unwrap();
    let enc = Encoder::new(&EncoderConfig::toy(0)).unwrap();
    let vol = random_volume(12, (1, 2, 32, 32));
    let fresh = cache.get_or_compute("c", &vol, &enc).unwrap();
    let path = cache.entry_path("c", &EmbeddingCache::key(&vol, &enc));
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    let again = cache.get_or_compute("c", &vol, &enc).unwrap();
    assert_eq!(cache.encoder_calls(), 2);
    assert_eq!(again, fresh);
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
}

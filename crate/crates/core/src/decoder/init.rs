use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Decoder, DecoderConfig, ParamKind};
use crate::nn::Scalar;

/// Kernel variance is `INIT_GAIN^2 / fan_in`.
pub const INIT_GAIN: f64 = 0.577_350_269_189_625_8; // 1/sqrt(3)

pub fn init_std(fan_in: usize) -> f64 {
    INIT_GAIN / (fan_in as f64).sqrt()
}

/// Fan-in scaled normal kernels, zero biases, identity norm affine. Deterministic per seed.
pub fn initialize_weights<T: Scalar>(cfg: &DecoderConfig, seed: u64) -> Decoder<T> {
    let mut dec = Decoder::<T>::zeros(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in dec.params_mut() {
        match p.kind {
            ParamKind::ConvWeight => {
                let fan_in: usize = p.shape[1..].iter().product();
                let dist = Normal::new(0.0, init_std(fan_in)).expect("positive std");
                for v in p.data.iter_mut() {
                    *v = T::from_f64(dist.sample(&mut rng)).unwrap();
                }
            }
            ParamKind::NormScale => p.data.fill(T::one()),
            ParamKind::ConvBias | ParamKind::NormShift => p.data.fill(T::zero()),
        }
    }
    dec
}

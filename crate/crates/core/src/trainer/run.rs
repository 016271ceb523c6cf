//! The training loop.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::{config_digest, load_checkpoint, save_checkpoint, ConfigDigests, TrainingState};
use super::{poly_learning_rate, sgd_update, TrainConfig};
use crate::decoder::{initialize_weights, Decoder, DecoderConfig};
use crate::encoder::{encode_volume, EmbeddingCache, EmbeddingVolume, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::objective::{deep_supervision_loss_grad, LossTerms};
use crate::volume::{
    apply_augmentations, forced_foreground_slots, load_case, sample_training_patch, DatasetManifest, LoadedCase, Split,
};

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub epoch: usize,
    /// Global iteration index.
    pub iter: u64,
    pub lr: f64,
    pub loss: f64,
    pub dice_term: f64,
    pub ce_term: f64,
}

#[derive(Serialize)]
struct EpochRecord {
    epoch: usize,
    lr: f64,
    epoch_mean_loss: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Continue from this checkpoint directory.
    pub resume_from: Option<PathBuf>,
    /// On-disk embedding cache; an in-memory one is always used.
    pub cache_dir: Option<PathBuf>,
    /// Stop (with a checkpoint) once this many epochs are complete.
    pub stop_after_epoch: Option<usize>,
}

#[derive(Debug)]
pub struct TrainingOutcome {
    pub state: TrainingState,
    /// Records produced by this call (not those of a resumed-from run).
    pub log: Vec<IterRecord>,
    pub last_checkpoint: PathBuf,
    pub digests: ConfigDigests,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stateless seed derivation, so any iteration can be replayed without history.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix(base), |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// Iteration records of a JSON-lines training log; per-epoch summary lines are skipped.
pub fn read_training_log(path: &Path) -> Result<Vec<IterRecord>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let v: serde_json::Value = serde_json::from_str(&line)?;
        if v.get("iter").is_some() {
            out.push(serde_json::from_value(v)?);
        }
    }
    Ok(out)
}

struct Context<'a> {
    cases: Vec<LoadedCase>,
    encoder: Encoder,
    disk_cache: Option<EmbeddingCache>,
    memo: Mutex<HashMap<usize, EmbeddingVolume>>,
    cfg: &'a TrainConfig,
    patch: [usize; 3],
}

impl Context<'_> {
    fn embedding(&self, case: usize, vol: &crate::volume::Volume, cacheable: bool) -> Result<EmbeddingVolume> {
        if !cacheable {
            return encode_volume(vol, &self.encoder);
        }
        if let Some(e) = self.memo.lock().unwrap().get(&case) {
            return Ok(e.clone());
        }
        let e = match &self.disk_cache {
            Some(c) => c.get_or_compute(&self.cases[case].case_id, vol, &self.encoder)?,
            None => encode_volume(vol, &self.encoder)?,
        };
        self.memo.lock().unwrap().insert(case, e.clone());
        Ok(e)
    }

    /// Loss and parameter gradient of one batch slot.
    fn slot(&self, dec: &Decoder<f32>, iteration: u64, slot: usize, force_fg: bool) -> Result<(LossTerms, Decoder<f32>)> {
        let seed = derive_seed(self.cfg.seed, &[iteration, slot as u64]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let case_idx = rng.gen_range(0..self.cases.len());
        let case = &self.cases[case_idx];
        let (pv, pl) = sample_training_patch(&case.image, &case.labels, self.patch, force_fg, rng.gen())?;
        let (av, al) = apply_augmentations(&pv, &pl, &self.cfg.augment, rng.gen())?;
        // whole, unaugmented cases always give the same encoder input
        let cacheable = self.cfg.augment.is_identity() && case.image.spatial_shape() == self.patch;
        let emb = self.embedding(case_idx, &av, cacheable)?;
        let (out, cache) = dec.forward_train(&emb.data)?;
        let (terms, dlogits) = deep_supervision_loss_grad(&out, &al, &self.cfg.loss)?;
        let mut grad = dec.zeros_like();
        if terms.total.is_finite() {
            dec.backward(cache, &dlogits, &mut grad)?;
        }
        Ok((terms, grad))
    }
}

fn open_log(path: &Path, append: bool) -> Result<File> {
    OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(|e| Error::io(path, e))
}

fn write_line<T: Serialize>(f: &mut File, path: &Path, v: &T) -> Result<()> {
    let mut line = serde_json::to_string(v)?;
    line.push('\n');
    f.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Trains the decoder on the manifest's training split. Logs go to
/// `out_dir/train_log.jsonl`, checkpoints to `out_dir/checkpoints/{epoch_NNNN,final,crash}`.
pub fn run_training(
    manifest: &DatasetManifest,
    enc_cfg: &EncoderConfig,
    dec_cfg: &DecoderConfig,
    cfg: &TrainConfig,
    out_dir: &Path,
    opts: &TrainOptions,
) -> Result<TrainingOutcome> {
    manifest.validate()?;
    dec_cfg.validate()?;
    cfg.validate()?;
    let encoder = Encoder::new(enc_cfg)?;
    let modalities = manifest.modality_count();
    if dec_cfg.in_channels != encoder.embed_dim() * modalities {
        return Err(Error::validation(
            "decoder.in_channels",
            format!(
                "{} does not match {} modalities x {} embedding channels",
                dec_cfg.in_channels,
                modalities,
                encoder.embed_dim()
            ),
        ));
    }
    if dec_cfg.num_classes != manifest.num_classes {
        return Err(Error::validation(
            "decoder.num_classes",
            format!("{} differs from the manifest's {}", dec_cfg.num_classes, manifest.num_classes),
        ));
    }
    let digests = ConfigDigests {
        encoder: encoder.digest().to_string(),
        decoder: config_digest(dec_cfg),
        train: config_digest(cfg),
    };

    let cases = manifest
        .cases_in(Split::Train)
        .map(|e| load_case(manifest, e, cfg.normalization))
        .collect::<Result<Vec<_>>>()?;
    if cases.is_empty() {
        return Err(Error::validation("$.cases", "no training cases"));
    }
    let ctx = Context {
        cases,
        encoder,
        disk_cache: opts.cache_dir.as_ref().map(EmbeddingCache::new).transpose()?,
        memo: Mutex::new(HashMap::new()),
        cfg,
        patch: cfg.patch_size.unwrap_or(manifest.patch_size),
    };

    let mut state = match &opts.resume_from {
        Some(dir) => {
            let (state, ck) = load_checkpoint(dir)?;
            let bad = ck.digests.mismatches(&digests);
            if !bad.is_empty() || &ck.decoder_config != dec_cfg {
                return Err(Error::Checkpoint(format!(
                    "refusing to resume from {}: {} configuration differs",
                    dir.display(),
                    if bad.is_empty() { "decoder".to_string() } else { bad.join(", ") }
                )));
            }
            state
        }
        None => TrainingState {
            decoder: initialize_weights::<f32>(dec_cfg, cfg.seed),
            velocity: Decoder::zeros(dec_cfg),
            epoch: 0,
            iteration: 0,
        },
    };

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ck_root = out_dir.join("checkpoints");
    let log_path = out_dir.join("train_log.jsonl");
    let mut log_file = open_log(&log_path, opts.resume_from.is_some())?;
    let mut log = Vec::new();
    let slots = forced_foreground_slots(cfg.batch_size);
    let scale = 1.0 / cfg.batch_size as f32;
    let mut last_checkpoint = None;

    for epoch in state.epoch..cfg.max_epoch {
        let lr = poly_learning_rate(epoch, cfg)?;
        let hp = cfg.sgd(lr);
        let mut epoch_loss = 0.0;
        for _ in 0..cfg.iters_per_epoch {
            let it = state.iteration;
            let dec = &state.decoder;
            let results: Vec<(LossTerms, Decoder<f32>)> = (0..cfg.batch_size)
                .into_par_iter()
                .map(|b| ctx.slot(dec, it, b, slots[b]))
                .collect::<Result<_>>()?;
            let mut grad = dec.zeros_like();
            let mut terms = LossTerms::default();
            for (t, g) in &results {
                terms += t.scaled(1.0 / cfg.batch_size as f64);
                for (dst, src) in grad.params_mut().into_iter().zip(g.params()) {
                    dst.data.iter_mut().zip(src.data).for_each(|(d, s)| *d += s * scale);
                }
            }
            let failure = if !terms.total.is_finite() {
                Some(Error::NonFinite(format!("loss {} at iteration {it}", terms.total)))
            } else {
                sgd_update(&mut state.decoder, &grad, &mut state.velocity, &hp).err()
            };
            if let Some(err) = failure {
                let dir = ck_root.join("crash");
                save_checkpoint(&state, &digests, &dir)?;
                return Err(Error::NonFinite(format!("{err}; crash checkpoint at {}", dir.display())));
            }
            let rec = IterRecord {
                epoch,
                iter: it,
                lr,
                loss: terms.total,
                dice_term: terms.dice,
                ce_term: terms.ce,
            };
            write_line(&mut log_file, &log_path, &rec)?;
            log.push(rec);
            epoch_loss += terms.total;
            state.iteration += 1;
        }
        state.epoch = epoch + 1;
        let mean = epoch_loss / cfg.iters_per_epoch as f64;
        write_line(
            &mut log_file,
            &log_path,
            &EpochRecord {
                epoch,
                lr,
                epoch_mean_loss: mean,
            },
        )?;
        log::info!("epoch {epoch} lr {lr:.3e} mean loss {mean:.4}");
        let stop = opts.stop_after_epoch == Some(state.epoch);
        if state.epoch % cfg.checkpoint_every == 0 || stop {
            let dir = ck_root.join(format!("epoch_{:04}", state.epoch));
            save_checkpoint(&state, &digests, &dir)?;
            last_checkpoint = Some(dir);
        }
        if stop {
            return Ok(TrainingOutcome {
                state,
                log,
                last_checkpoint: last_checkpoint.unwrap(),
                digests,
            });
        }
    }
    let dir = ck_root.join("final");
    save_checkpoint(&state, &digests, &dir)?;
    Ok(TrainingOutcome {
        state,
        log,
        last_checkpoint: dir,
        digests,
    })
}

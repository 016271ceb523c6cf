//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the libtest harness so
//! the lines always reach stdout; exits non-zero if any criterion fails.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ndarray::{Array3, Array4, ArrayD, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use volseg::cli;
use volseg::config::RunConfig;
use volseg::decoder::{count_parameters, initialize_weights, DecoderConfig, DecoderOutputs};
use volseg::encoder::{encode_volume, Encoder, EncoderConfig};
use volseg::inference::{compute_window_grid, sliding_window_predict};
use volseg::metrics::{dice_coefficient, hd95, hd95_bruteforce};
use volseg::objective::{
    cross_entropy_loss, deep_supervision_loss, deep_supervision_weights, one_hot_logits, soft_dice_loss, LossConfig,
};
use volseg::toy::generate_toy_dataset;
use volseg::trainer::{
    finite_difference_gradient_check, finite_difference_gradient_check_with, load_checkpoint, poly_lr, run_training,
    GradCheckOptions, TrainOptions, TrainingOutcome,
};
use volseg::volume::nifti::{read_nifti, read_nifti_labels, write_nifti, write_nifti_labels};
use volseg::volume::rvf::{rvf_read, rvf_write, RvfData, RvfTensor};
use volseg::volume::{downsample_label_volume, load_case, AugmentConfig, DatasetManifest, LabelVolume, Volume};

/// Dataset seed of the toy experiment.
const TOY_SEED: u64 = 1;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn single_threaded<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

fn c1_parameter_counts() -> Check {
    let t = Instant::now();
    let mut notes = Vec::new();
    for (name, m, n, lo, hi) in [("synapse", 1, 9, 1.82e6, 1.94e6), ("brats", 4, 4, 4.49e6, 4.77e6)] {
        let cfg = DecoderConfig::new(m, n);
        let closed = count_parameters(&cfg).total;
        let allocated = initialize_weights::<f32>(&cfg, 0).param_count();
        ensure((lo..=hi).contains(&(closed as f64)), format!("{name} count {closed} outside [{lo}, {hi}]"))?;
        ensure(closed == allocated, format!("{name}: closed form {closed} != allocated {allocated}"))?;
        notes.push(format!("{name} {closed}"));
    }
    let (s, b) = (
        count_parameters(&DecoderConfig::new(1, 9)).total,
        count_parameters(&DecoderConfig::new(4, 4)).total,
    );
    ensure(s == 1_881_035 && b == 4_633_252, "pinned totals changed")?;
    let dt = t.elapsed();
    ensure(dt < Duration::from_secs(1), format!("took {dt:?}"))?;
    Ok(format!("{}, closed form == allocated, {dt:.0?}", notes.join(", ")))
}

fn c2_shape_law() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let encoder = Encoder::new(&EncoderConfig::toy(0)).map_err(err)?;
    let trials = 20;
    for trial in 0..trials {
        let (m, d) = (rng.gen_range(1..=3), rng.gen_range(1..=4));
        let (h, w) = (16 * rng.gen_range(1..=4), 16 * rng.gen_range(1..=4));
        let n = rng.gen_range(2..=5);
        let data = Array4::from_shape_simple_fn((m, d, h, w), || rng.gen_range(-1.0f32..1.0));
        let vol = Volume::new(data, [1.0; 3]).map_err(err)?;
        let emb = encode_volume(&vol, &encoder).map_err(err)?;
        let dec = initialize_weights::<f32>(&DecoderConfig::new(m, n), trial);
        let out = dec.forward(&emb.data).map_err(err)?;
        let expected = [[n, d, h, w], [n, d, h / 2, w / 2], [n, d, h / 4, w / 4]];
        ensure(out.logits.len() == 3, "expected three stages")?;
        for (l, e) in out.logits.iter().zip(expected) {
            ensure(l.shape() == e, format!("trial {trial} (M={m}, D={d}, H={h}, W={w}): {:?} != {e:?}", l.shape()))?;
        }
    }
    let dt = t.elapsed();
    ensure(dt < Duration::from_secs(60), format!("took {dt:?}"))?;
    Ok(format!("{trials} random (M, D, H, W) trials, {dt:.1?}"))
}

struct ToyRun {
    root: PathBuf,
    cfg: RunConfig,
    manifest: DatasetManifest,
    outcome: TrainingOutcome,
    train_time: Duration,
    pinned_before: Vec<u32>,
}

fn pinned_input() -> Volume {
    let data = Array4::from_shape_fn((1, 2, 32, 48), |(_, z, y, x)| ((z * 31 + y * 7 + x) as f32 * 0.11).sin());
    Volume::new(data, [1.0; 3]).unwrap()
}

fn bits(a: &Array4<f32>) -> Vec<u32> {
    a.iter().map(|v| v.to_bits()).collect()
}

fn toy_config(root: &Path) -> RunConfig {
    let mut cfg = RunConfig::new(root.join("data/manifest.json"), root.join("run"));
    cfg.encoder = EncoderConfig::toy(0);
    cfg.train.max_epoch = 8;
    cfg.train.iters_per_epoch = 25;
    cfg.train.batch_size = 2;
    cfg.train.checkpoint_every = 1;
    cfg.train.augment = AugmentConfig::disabled();
    cfg
}

fn toy_run(root: &Path) -> Result<ToyRun, String> {
    let manifest = generate_toy_dataset(&root.join("data"), 4, [8, 64, 64], 3, TOY_SEED).map_err(err)?;
    let cfg = toy_config(root);
    let encoder = Encoder::new(&cfg.encoder).map_err(err)?;
    let pinned_before = bits(&encode_volume(&pinned_input(), &encoder).map_err(err)?.data);
    let t = Instant::now();
    let outcome = single_threaded(|| cli::train(&cfg, None, None)).map_err(err)?;
    Ok(ToyRun {
        root: root.to_path_buf(),
        cfg,
        manifest,
        outcome,
        train_time: t.elapsed(),
        pinned_before,
    })
}

fn c3_toy_overfit(run: &ToyRun) -> Check {
    ensure(run.outcome.log.len() <= 200, format!("{} iterations", run.outcome.log.len()))?;
    let t = Instant::now();
    let preds = run.root.join("pred");
    cli::predict(&run.cfg, &run.outcome.last_checkpoint, None, &preds).map_err(err)?;
    let report = cli::evaluate(&run.cfg, &preds, &run.root.join("eval")).map_err(err)?;
    let total = run.train_time + t.elapsed();
    let per_case: Vec<String> = report.cases.iter().map(|c| format!("{:.3}", c.metrics.mean_dsc)).collect();
    ensure(
        report.mean_dsc >= 0.95,
        format!("mean foreground DSC {:.4} < 0.95 (cases {})", report.mean_dsc, per_case.join(", ")),
    )?;
    ensure(total < Duration::from_secs(600), format!("took {total:?}"))?;
    Ok(format!(
        "mean foreground DSC {:.4} (cases {}), {} iterations, {total:.0?}",
        report.mean_dsc,
        per_case.join(", "),
        run.outcome.log.len()
    ))
}

fn audit_config() -> DecoderConfig {
    DecoderConfig {
        in_channels: 4,
        block_channels: [8, 6, 4, 2],
        num_classes: 2,
    }
}

fn c4_gradient_audit() -> Check {
    let t = Instant::now();
    let cfg = audit_config();
    let params = count_parameters(&cfg).total;
    ensure(params <= 10_000, format!("{params} parameters"))?;
    let loss = LossConfig::default();
    let clean = finite_difference_gradient_check(&cfg, &loss, 3).map_err(err)?;
    ensure(clean.checked == params, format!("checked {} of {params}", clean.checked))?;
    ensure(
        clean.passed() && clean.max_rel_error < 1e-3,
        format!("max relative error {:.3e} at {:?}", clean.max_rel_error, clean.worst),
    )?;
    let opts = GradCheckOptions {
        fault: Some(("heads.main.out.weight".into(), 0, 2.0)),
        ..GradCheckOptions::default()
    };
    let faulty = finite_difference_gradient_check_with(&cfg, &loss, 3, &opts).map_err(err)?;
    ensure(!faulty.passed(), "doubled gradient went unnoticed")?;
    let dt = t.elapsed();
    ensure(dt < Duration::from_secs(120), format!("took {dt:?}"))?;
    Ok(format!(
        "{params} params, max relative error {:.2e} ({} probes refined), fault flagged at {:.2e}, {dt:.0?}",
        clean.max_rel_error, clean.refined, faulty.max_rel_error
    ))
}

fn c5_loss_exactness() -> Check {
    let cfg = LossConfig::default();
    let logits = Array4::<f64>::zeros((2, 1, 1, 1));
    let target = LabelVolume::new(Array3::from_elem((1, 1, 1), 1), 2).map_err(err)?;
    let dice = soft_dice_loss(&logits, &target, &cfg).map_err(err)?;
    let ce = cross_entropy_loss(&logits, &target).map_err(err)?;
    ensure((dice - 0.6).abs() <= 1e-3, format!("dice loss {dice}"))?;
    ensure((ce - std::f64::consts::LN_2).abs() <= 1e-9, format!("cross entropy {ce}"))?;
    let w = deep_supervision_weights(3);
    ensure(w == vec![4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0], format!("weights {w:?}"))?;

    let labels = Array3::from_shape_fn((2, 8, 8), |(z, y, x)| ((z + y / 2 + x / 3) % 3) as u8);
    let target = LabelVolume::new(labels, 3).map_err(err)?;
    let logits = [1, 2, 4]
        .iter()
        .map(|&f| {
            let t = downsample_label_volume(&target, [1, f, f])?;
            Ok(one_hot_logits::<f64>(&t, 3, 40.0))
        })
        .collect::<volseg::Result<Vec<_>>>()
        .map_err(err)?;
    let total = deep_supervision_loss(&DecoderOutputs { logits }, &target, &cfg).map_err(err)?.total;
    ensure(total < 1e-4, format!("perfect-prediction loss {total}"))?;
    Ok(format!("dice {dice:.6}, CE - ln 2 = {:.1e}, weights (4/7, 2/7, 1/7), perfect loss {total:.1e}", ce - std::f64::consts::LN_2))
}

fn c6_metric_oracle() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let trials = 120;
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let shape = (rng.gen_range(1..=16), rng.gen_range(1..=16), rng.gen_range(1..=16));
        let pa = rng.gen_range(0.02..0.6);
        let pb = rng.gen_range(0.02..0.6);
        let a = Array3::from_shape_simple_fn(shape, || rng.gen_bool(pa));
        let b = Array3::from_shape_simple_fn(shape, || rng.gen_bool(pb));
        let sp = [rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0)];
        let fast = hd95(&a, &b, sp).map_err(err)?;
        let slow = hd95_bruteforce(&a, &b, sp).map_err(err)?;
        match (fast, slow) {
            (Some(f), Some(s)) => {
                worst = worst.max((f - s).abs());
                ensure((f - s).abs() <= 1e-6, format!("trial {trial}: {f} vs {s}"))?;
            }
            (None, None) => {}
            other => return Err(format!("trial {trial}: {other:?}")),
        }
        let (ab, ba) = (dice_coefficient(&a, &b).map_err(err)?, dice_coefficient(&b, &a).map_err(err)?);
        ensure(ab == ba, format!("trial {trial}: dice not symmetric"))?;
        if a.iter().any(|&v| v) {
            ensure(dice_coefficient(&a, &a).map_err(err)? == 1.0, "dice(A, A) != 1")?;
            let not_a = a.mapv(|v| !v);
            ensure(dice_coefficient(&a, &not_a).map_err(err)? == 0.0, "disjoint dice != 0")?;
        }
    }
    let p = Array3::from_shape_fn((1, 4, 5), |i| i == (0, 0, 0));
    let q = Array3::from_shape_fn((1, 4, 5), |i| i == (0, 3, 4));
    let single = hd95(&p, &q, [1.0; 3]).map_err(err)?;
    ensure(single == Some(5.0), format!("single-voxel HD95 {single:?}"))?;
    let dt = t.elapsed();
    ensure(dt < Duration::from_secs(120), format!("took {dt:?}"))?;
    Ok(format!("{trials} pairs, max |fast - exhaustive| {worst:.1e}, single-voxel HD95 5.0, {dt:.1?}"))
}

fn c7_schedule() -> Check {
    let lr = |e| poly_lr(1e-2, e, 1000, 0.9).map_err(err);
    let (a, b, c) = (lr(0)?, lr(500)?, lr(1000)?);
    ensure(a == 1e-2, format!("epoch 0: {a}"))?;
    ensure(c == 0.0, format!("epoch 1000: {c}"))?;
    ensure((b - 5.3589e-3).abs() <= 1e-7, format!("epoch 500: {b}"))?;
    Ok(format!("lr(0) = {a}, lr(500) = {b:.7e}, lr(1000) = {c}"))
}

fn c8_frozen_encoder(run: &ToyRun) -> Check {
    let encoder = Encoder::new(&run.cfg.encoder).map_err(err)?;
    let after = bits(&encode_volume(&pinned_input(), &encoder).map_err(err)?.data);
    ensure(after == run.pinned_before, "pinned encoder output changed across training")?;
    let (state, manifest) = load_checkpoint(&run.outcome.last_checkpoint).map_err(err)?;
    let trainable: Vec<String> = state.decoder.params().into_iter().map(|p| p.name).collect();
    let stored: Vec<&str> = manifest.tensors.iter().map(|t| t.name.as_str()).collect();
    for name in trainable.iter().map(String::as_str).chain(stored.iter().copied()) {
        ensure(
            name.starts_with("blocks.") || name.starts_with("heads."),
            format!("non-decoder tensor {name} in optimizer state"),
        )?;
    }
    ensure(
        manifest.tensors.iter().filter(|t| t.role == "velocity").count() == trainable.len(),
        "velocity tensors do not match the decoder parameters",
    )?;
    Ok(format!(
        "{} output values bitwise equal; {} optimizer tensors, all decoder-owned",
        after.len(),
        manifest.tensors.len()
    ))
}

fn c9_reproducibility(run: &ToyRun) -> Check {
    let manifest = &run.manifest;
    let dec = run.cfg.decoder_config(manifest);
    let once = |dir: &str, opts: TrainOptions| {
        single_threaded(|| run_training(manifest, &run.cfg.encoder, &dec, &run.cfg.train, &run.root.join(dir), &opts))
            .map_err(err)
    };
    let a = &run.outcome.log;
    let b = once(
        "rerun",
        TrainOptions {
            stop_after_epoch: Some(1),
            ..TrainOptions::default()
        },
    )?;
    ensure(b.log.len() >= 10, "rerun too short")?;
    for (x, y) in a.iter().zip(&b.log).take(10) {
        ensure(x.loss.to_bits() == y.loss.to_bits(), format!("iteration {}: {} vs {}", x.iter, x.loss, y.loss))?;
    }
    let resumed = once(
        "rerun",
        TrainOptions {
            resume_from: Some(b.last_checkpoint.clone()),
            stop_after_epoch: Some(2),
            ..TrainOptions::default()
        },
    )?;
    let offset = b.log.len();
    ensure(!resumed.log.is_empty(), "resumed run did nothing")?;
    for (k, y) in resumed.log.iter().enumerate() {
        let x = &a[offset + k];
        ensure(
            x.iter == y.iter && x.loss.to_bits() == y.loss.to_bits(),
            format!("resumed iteration {}: {} vs {}", y.iter, y.loss, x.loss),
        )?;
    }
    let (reference, _) = load_checkpoint(&run.root.join("run/checkpoints/epoch_0002")).map_err(err)?;
    ensure(reference.decoder == resumed.state.decoder, "decoder after resume differs from uninterrupted run")?;
    ensure(reference.velocity == resumed.state.velocity, "momentum after resume differs")?;
    Ok(format!(
        "first 10 losses bitwise equal across runs; resume at iteration {offset} matches {} further losses and all tensors",
        resumed.log.len()
    ))
}

fn c10_io_integrity(run: &ToyRun) -> Check {
    let dir = run.root.join("io");
    std::fs::create_dir_all(&dir).map_err(err)?;
    let mut files = 0;
    for c in &run.manifest.cases {
        let img = read_nifti(run.manifest.resolve(&c.image)).map_err(err)?;
        let (lab, _) = read_nifti_labels(run.manifest.resolve(&c.label), 3).map_err(err)?;
        for name in ["a.nii", "a.nii.gz"] {
            let p = dir.join(name);
            write_nifti(&p, &img.volume).map_err(err)?;
            let back = read_nifti(&p).map_err(err)?;
            ensure(bits(&back.volume.data) == bits(&img.volume.data), format!("{name} image roundtrip of {}", c.case_id))?;
            ensure(back.volume.spacing == img.volume.spacing, "spacing roundtrip")?;
            files += 1;
        }
        let p = dir.join("l.nii.gz");
        write_nifti_labels(&p, &lab, img.volume.spacing, img.volume.origin, Some(&img.header)).map_err(err)?;
        ensure(read_nifti_labels(&p, 3).map_err(err)?.0 == lab, "label roundtrip")?;
        files += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let f32s: Vec<f32> = (0..60).map(|_| f32::from_bits(rng.gen::<u32>() & 0x7f7f_ffff)).collect();
    let f64s: Vec<f64> = (0..60).map(|_| rng.gen::<f64>() * 1e300 - 5e299).collect();
    let tensors = [
        RvfData::F32(ArrayD::from_shape_vec(vec![3, 4, 5], f32s).unwrap()),
        RvfData::F64(ArrayD::from_shape_vec(vec![60], f64s).unwrap()),
        RvfData::U8(ArrayD::from_shape_fn(vec![2, 3], |i| (i[0] * 3 + i[1]) as u8)),
        RvfData::I64(ArrayD::from_shape_fn(vec![4], |i| i64::MIN + i[0] as i64)),
    ];
    for t in tensors {
        let t = RvfTensor::new(t).with_metadata("k", "v");
        let p = dir.join("t.rvf");
        rvf_write(&p, &t).map_err(err)?;
        let back = rvf_read(&p).map_err(err)?;
        let same = match (&back.data, &t.data) {
            (RvfData::F32(x), RvfData::F32(y)) => x.iter().zip(y).all(|(a, b)| a.to_bits() == b.to_bits()),
            (RvfData::F64(x), RvfData::F64(y)) => x.iter().zip(y).all(|(a, b)| a.to_bits() == b.to_bits()),
            _ => back == t,
        };
        ensure(same && back.data.shape() == t.data.shape(), format!("rvf {} roundtrip", t.data.dtype()))?;
        files += 1;
    }

    let encoder = Encoder::new(&run.cfg.encoder).map_err(err)?;
    let case = load_case(&run.manifest, &run.manifest.cases[0], run.cfg.train.normalization).map_err(err)?;
    let window = [5, 48, 48];
    let grid = compute_window_grid(case.image.spatial_shape(), window, 0.5).map_err(err)?;
    let probs = sliding_window_predict(&case.image, &encoder, &run.outcome.state.decoder, window, 0.5).map_err(err)?;
    let worst = probs
        .sum_axis(Axis(0))
        .iter()
        .map(|s| (s - 1.0).abs())
        .fold(0.0f32, f32::max);
    ensure(worst <= 1e-5, format!("probabilities deviate from 1 by {worst}"))?;
    Ok(format!(
        "{files} NIfTI/RVF roundtrips bitwise equal; {} windows, max |sum - 1| {worst:.1e}",
        grid.origins.len()
    ))
}

fn report(id: usize, name: &str, result: Check, failed: &mut usize) {
    match result {
        Ok(detail) => println!("PASS criterion {id} ({name}): {detail}"),
        Err(detail) => {
            *failed += 1;
            println!("FAIL criterion {id} ({name}): {detail}");
        }
    }
}

fn main() {
    // `cargo test` passes harness flags; a name filter that excludes this target skips it.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut failed = 0;
    report(1, "parameter counts", c1_parameter_counts(), &mut failed);
    report(2, "shape law", c2_shape_law(), &mut failed);
    let run = toy_run(tmp.path());
    match &run {
        Ok(run) => report(3, "toy overfit", c3_toy_overfit(run), &mut failed),
        Err(e) => report(3, "toy overfit", Err(format!("training failed: {e}")), &mut failed),
    }
    report(4, "gradient audit", c4_gradient_audit(), &mut failed);
    report(5, "loss exactness", c5_loss_exactness(), &mut failed);
    report(6, "metric oracle", c6_metric_oracle(), &mut failed);
    report(7, "schedule", c7_schedule(), &mut failed);
    for (id, name, f) in [
        (8, "frozen encoder", c8_frozen_encoder as fn(&ToyRun) -> Check),
        (9, "reproducibility", c9_reproducibility),
        (10, "io integrity", c10_io_integrity),
    ] {
        let r = run.as_ref().map_err(|e| format!("toy run unavailable: {e}")).and_then(f);
        report(id, name, r, &mut failed);
    }
    println!("{} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

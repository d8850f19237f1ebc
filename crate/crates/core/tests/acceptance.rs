//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criterion 6 needs the MNIST IDX files under `$REBORN_DATA_DIR/mnist` or
//! `<workspace>/data/mnist`; without them it fails and says so.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use reborn::activations::{negative_part, relu, ActivationSpec, RebornBlock, RebornConfig};
use reborn::checkpoint::Checkpoint;
use reborn::data::{DatasetKind, SyntheticSpec};
use reborn::gradcheck::{run_all, MIN_TRIALS, TOLERANCE};
use reborn::layers::{Conv2d, ConvTranspose2d, Layer, Mode};
use reborn::models::{Arch, Model, ModelConfig, ParamFilter, CONVNET8_CHANNELS};
use reborn::pgm::{render_feature_map, Image};
use reborn::train::{
    cmd_eval, cmd_features, cmd_train, load_data, parse_metrics_csv, procedural_image, FeatureSource, Precision,
    TrainConfig,
};
use reborn::{Rng, Tensor};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> Result<(), String> {
    ensure(elapsed <= Duration::from_secs(limit_secs), || {
        format!("took {:.1}s, limit {limit_secs}s", elapsed.as_secs_f64())
    })
}

fn synthetic_config(out: PathBuf, samples: usize) -> TrainConfig {
    let mut cfg = TrainConfig {
        dataset: DatasetKind::Synthetic,
        batch_size: 64,
        out,
        seed: 11,
        synthetic: SyntheticSpec { samples, channels: 1, size: 28, classes: 4 },
        ..Default::default()
    };
    cfg.model.width_mult = 0.125;
    cfg
}

fn gradient_suite() -> Outcome {
    let t = Instant::now();
    let reports = run_all(MIN_TRIALS, 2024).map_err(|e| e.to_string())?;
    let worst = reports
        .iter()
        .max_by(|a, b| a.worst_rel_err.total_cmp(&b.worst_rel_err))
        .ok_or("no components")?;
    if let Some(bad) = reports.iter().find(|r| !r.passed()) {
        return Err(format!("{} rel err {:.3e} at {}", bad.component, bad.worst_rel_err, bad.worst_at));
    }
    for needle in ["reborn (bn train)", "reborn (bn eval)"] {
        ensure(reports.iter().any(|r| r.component == needle), || format!("{needle} not checked"))?;
    }
    within(t.elapsed(), 120)?;
    Ok(format!(
        "{} components x {MIN_TRIALS} trials, worst {:.2e} ({}) < {TOLERANCE:e}, {:.1}s",
        reports.len(),
        worst.worst_rel_err,
        worst.component,
        t.elapsed().as_secs_f64()
    ))
}

fn adjoint_suite() -> Outcome {
    let t = Instant::now();
    let mut rng = Rng::new(99);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for k in [1, 3] {
        for s in [1, 2] {
            for p in [0, 1] {
                let (c_in, c_out, h, w) = (3, 4, 7, 9);
                let mut conv = Conv2d::<f64>::new(c_in, c_out, k, s, p, false).map_err(|e| e.to_string())?;
                conv.weight.value = Tensor::from_fn(vec![c_out, c_in, k, k], |_| rng.normal()).unwrap();
                let mut deconv = ConvTranspose2d::<f64>::new(c_out, c_in, k, s, p, false).map_err(|e| e.to_string())?;
                deconv.weight.value = conv.weight.value.clone();
                let x = Tensor::from_fn(vec![2, c_in, h, w], |_| rng.normal()).unwrap();
                let (ho, wo) = conv.out_hw(h, w).map_err(|e| e.to_string())?;
                let y = Tensor::from_fn(vec![2, c_out, ho, wo], |_| rng.normal()).unwrap();
                let lhs = conv.apply(&x).unwrap().dot(&y).unwrap();
                let back = deconv.apply(&y).unwrap();
                ensure(back.shape() == x.shape(), || format!("k{k} s{s} p{p}: adjoint shape {:?}", back.shape()))?;
                let rhs = x.dot(&back).unwrap();
                worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()));
                cases += 1;
            }
        }
    }
    ensure(worst < 1e-10, || format!("relative error {worst:.3e}"))?;
    within(t.elapsed(), 10)?;
    Ok(format!("{cases} (kernel, stride, pad) cases, worst relative error {worst:.2e}"))
}

/// Delta deconvolution, exact eval-mode BN, and a 1×1 compression taking
/// `pos·slab1 + neg·slab2` per channel.
fn reduced_block(c: usize, pos: f64, neg: f64) -> RebornBlock<f64> {
    let mut block = RebornBlock::<f64>::new(c, RebornConfig::default()).unwrap();
    let w = block.deconv.weight.value.data_mut();
    for i in 0..c {
        w[(i * c + i) * 9 + 4] = 1.0;
    }
    let eps = block.bn.eps;
    block.bn.running_var.fill(1.0 - eps);
    let compress = block.compress.as_mut().unwrap();
    let w = compress.weight.value.data_mut();
    for o in 0..c {
        w[o * 2 * c + o] = pos;
        w[o * 2 * c + c + o] = neg;
    }
    block
}

fn reborn_reductions() -> Outcome {
    let t = Instant::now();
    let mut rng = Rng::new(5);
    let (mut ident_err, mut relu_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..20 {
        let x = Tensor::from_fn(vec![2, 4, 6, 6], |_| 3.0 * rng.normal()).unwrap();
        let y = reduced_block(4, 1.0, 1.0).forward(&x, Mode::Eval).unwrap();
        ident_err = ident_err.max(y.sub(&x).unwrap().max_abs());
        let y = reduced_block(4, 1.0, 0.0).forward(&x, Mode::Eval).unwrap();
        relu_err = relu_err.max(y.sub(&relu(&x)).unwrap().max_abs());
    }
    ensure(ident_err < 1e-5, || format!("identity error {ident_err:.3e}"))?;
    ensure(relu_err < 1e-5, || format!("relu error {relu_err:.3e}"))?;
    within(t.elapsed(), 5)?;
    Ok(format!("identity max err {ident_err:.1e}, relu max err {relu_err:.1e}"))
}

fn phase_decomposition() -> Outcome {
    let mut rng = Rng::new(4);
    let mut elements = 0usize;
    for i in 0..10_000 {
        let shape = vec![1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(5), 1 + rng.below(5)];
        let x = Tensor::<f64>::from_fn(shape, |_| match rng.below(10) {
            0 => 0.0,
            1 => -0.0,
            _ => rng.normal() * 10f64.powi(rng.below(9) as i32 - 4),
        })
        .unwrap();
        let pos = relu(&x);
        let neg = negative_part(&x);
        let neg_via_relu = relu(&x.neg()).neg();
        for (((&xi, &p), &n), &m) in x.data().iter().zip(pos.data()).zip(neg.data()).zip(neg_via_relu.data()) {
            ensure(p + n == xi, || format!("tensor {i}: {p} + {n} != {xi}"))?;
            ensure(n == m, || format!("tensor {i}: min(x,0) {n} != -relu(-x) {m}"))?;
            ensure(p == 0.0 || n == 0.0, || format!("tensor {i}: overlapping support at {xi}"))?;
            ensure(p >= 0.0 && n <= 0.0, || format!("tensor {i}: wrong signs at {xi}"))?;
        }
        elements += x.len();
    }
    Ok(format!("10000 tensors, {elements} elements, exact and disjoint"))
}

fn channel_compensation() -> Outcome {
    let oracle = |width: f64| -> usize {
        let mut c_in = 3;
        CONVNET8_CHANNELS
            .iter()
            .map(|&c| {
                let c_out = (c as f64 * width).floor() as usize;
                let n = c_out * c_in * 9;
                c_in = c_out;
                n
            })
            .sum()
    };
    let count = |width: f64| -> Result<usize, String> {
        let mut cfg = ModelConfig::new(Arch::ConvNet8, ActivationSpec::Relu);
        cfg.width_mult = width;
        let mut m: Model<f32> = Model::build(&cfg, &Rng::new(0)).map_err(|e| e.to_string())?;
        Ok(m.count_params(ParamFilter::ConvWeights))
    };
    let (full, half) = (count(1.0)?, count(0.5)?);
    ensure(full == 1_171_296 && full == oracle(1.0), || format!("width 1.0 count {full}"))?;
    ensure(half == 293_040 && half == oracle(0.5), || format!("width 0.5 count {half}"))?;
    let ratio = full as f64 / half as f64;
    ensure((3.9..=4.0).contains(&ratio), || format!("ratio {ratio}"))?;
    Ok(format!("{full} vs {half}, ratio {ratio:.4}"))
}

fn data_root() -> PathBuf {
    std::env::var_os("REBORN_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

fn mnist_sanity() -> Outcome {
    let root = data_root();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let t = Instant::now();
    let mut summary = Vec::new();
    for act in ["relu", "reborn"] {
        let mut cfg = TrainConfig {
            dataset: DatasetKind::Mnist,
            data_dir: root.clone(),
            epochs: 5,
            train_limit: 10_000,
            out: dir.path().join(act),
            seed: 1,
            ..Default::default()
        };
        cfg.model.activation = act.parse().unwrap();
        cfg.model.width_mult = 0.25;
        let run = cmd_train(&cfg, &mut |r| {
            eprintln!("  mnist {act} epoch {} loss {:.4} test {:.4}", r.epoch, r.train_loss, r.test_acc)
        })
        .map_err(|e| format!("{act}: {e} (data root {})", root.display()))?;
        let acc = run.final_test_acc();
        ensure(run.records.iter().all(|r| r.train_loss.is_finite()), || format!("{act}: non-finite loss"))?;
        ensure(acc >= 0.95, || format!("{act}: test accuracy {acc:.4} < 0.95"))?;
        summary.push(format!("{act} {:.2}%", 100.0 * acc));
    }
    within(t.elapsed(), 20 * 60)?;
    Ok(format!("{} on 10000 test images, {:.0}s", summary.join(", "), t.elapsed().as_secs_f64()))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut texts = Vec::new();
    let mut last = None;
    for run in ["a", "b"] {
        let mut cfg = synthetic_config(dir.path().join(run), 128);
        cfg.epochs = 2;
        cfg.augment = Some(true);
        cfg.model.activation = "rrelu".parse().unwrap();
        let summary = cmd_train(&cfg, &mut |_| {}).map_err(|e| e.to_string())?;
        texts.push(std::fs::read(&summary.metrics_path).map_err(|e| e.to_string())?);
        last = Some((cfg, summary));
    }
    ensure(texts[0] == texts[1], || "metrics.csv differs between identical runs".into())?;
    let (cfg, summary) = last.unwrap();
    let (_, test) = load_data(&cfg).map_err(|e| e.to_string())?;
    let acc = cmd_eval(&summary.checkpoint_path, &test, Precision::F32).map_err(|e| e.to_string())?;
    ensure(acc == summary.final_test_acc(), || {
        format!("checkpoint accuracy {acc} != trained {}", summary.final_test_acc())
    })?;
    let ck = Checkpoint::load(&summary.checkpoint_path).map_err(|e| e.to_string())?;
    ensure(Checkpoint::parse(&ck.to_text()).map_err(|e| e.to_string())? == ck, || "re-parse differs".into())?;
    Ok(format!("{} identical bytes, eval accuracy {acc:.4} preserved", texts[0].len()))
}

fn lr_schedule() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut notes = Vec::new();
    for epochs in [160usize, 80] {
        let mut cfg = synthetic_config(dir.path().join(epochs.to_string()), 8);
        cfg.epochs = epochs;
        cfg.synthetic.size = 28;
        let run = cmd_train(&cfg, &mut |_| {}).map_err(|e| e.to_string())?;
        let text = std::fs::read_to_string(&run.metrics_path).map_err(|e| e.to_string())?;
        let rows = parse_metrics_csv(&text).map_err(|e| e.to_string())?;
        ensure(rows.len() == epochs, || format!("{} rows for {epochs} epochs", rows.len()))?;
        for r in &rows {
            let want = if r.epoch < epochs / 2 { 0.001 } else { 0.0001 };
            ensure(r.lr == want, || format!("epochs={epochs} row {}: lr {} != {want}", r.epoch, r.lr))?;
        }
        notes.push(format!("{epochs}: 0.001 x{} then 0.0001 x{}", epochs / 2, epochs / 2));
    }
    Ok(notes.join("; "))
}

fn feature_dump() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let input = procedural_image(3, 32).map_err(|e| e.to_string())?;
    let config = ModelConfig::new(Arch::VizNet5, ActivationSpec::Relu);
    let source = FeatureSource::Fresh { config: config.clone(), seed: 3 };
    let paths = cmd_features(&source, &input, 1, dir.path(), "layer1").map_err(|e| e.to_string())?;
    ensure(paths.len() == 32, || format!("{} files", paths.len()))?;
    let count = std::fs::read_dir(dir.path()).map_err(|e| e.to_string())?.count();
    ensure(count == 32, || format!("{count} files in output directory"))?;

    // recompute the maps independently to check the intensity convention
    let mut model: Model<f32> = Model::build(&config, &Rng::new(3).derive("init")).map_err(|e| e.to_string())?;
    model.set_mode(Mode::Eval);
    let maps = model.features(&input, 1).map_err(|e| e.to_string())?;
    let mut zeros = 0;
    for (ch, path) in paths.iter().enumerate() {
        let img = Image::load(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let raw = std::fs::read(path).map_err(|e| e.to_string())?;
        ensure(raw.starts_with(b"P5\n32 32\n255\n"), || format!("{}: bad header", path.display()))?;
        ensure((img.width, img.height, img.channels) == (32, 32, 1), || "wrong dimensions".into())?;
        let values = &maps.data()[ch * 1024..(ch + 1) * 1024];
        for (&v, &px) in values.iter().zip(&img.pixels) {
            if v == 0.0 {
                zeros += 1;
                ensure(px == 255, || format!("channel {ch}: zero rendered as {px}"))?;
            }
        }
        let peak = values.iter().fold(0f32, |m, v| m.max(v.abs()));
        if peak > 0.0 {
            ensure(img.pixels.contains(&0), || format!("channel {ch}: peak not black"))?;
        }
    }
    ensure(render_feature_map(&[0f32; 16]).iter().all(|&p| p == 255), || "zero map not white".into())?;
    Ok(format!("32 PGM files of 32x32, {zeros} zero pixels all white"))
}

fn extended_control() -> Outcome {
    let mut cfg = ModelConfig::new(Arch::ConvNet8Extended, ActivationSpec::Relu);
    cfg.width_mult = 0.125;
    let model: Model<f32> = Model::build(&cfg, &Rng::new(0)).map_err(|e| e.to_string())?;
    let convs = model.conv_layer_count();
    ensure(convs == 16, || format!("{convs} conv layers"))?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut train = synthetic_config(dir.path().to_path_buf(), 64);
    train.model = cfg;
    train.epochs = 1;
    let run = cmd_train(&train, &mut |_| {}).map_err(|e| e.to_string())?;
    let acc = run.final_test_acc();
    ensure((0.0..=1.0).contains(&acc), || format!("accuracy {acc}"))?;
    Ok(format!("16 conv layers, 1 epoch trained, test accuracy {acc:.3}"))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient suite", gradient_suite),
        ("adjoint suite", adjoint_suite),
        ("reborn reductions", reborn_reductions),
        ("phase decomposition", phase_decomposition),
        ("channel compensation arithmetic", channel_compensation),
        ("desk-scale MNIST training", mnist_sanity),
        ("determinism", determinism),
        ("lr schedule", lr_schedule),
        ("feature dump", feature_dump),
        ("extended-conv control", extended_control),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2}. {name}: {detail}", i + 1),
            Err(why) => {
                println!("FAIL {:>2}. {name}: {why}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

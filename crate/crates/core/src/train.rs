//! Training, evaluation, activation comparison and feature dumps.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::checkpoint::Checkpoint;
use crate::data::{self, AugmentPolicy, Dataset, DatasetKind, Normalization, SyntheticSpec};
use crate::error::{Error, Result};
use crate::layers::{softmax_cross_entropy, Mode};
use crate::models::{Arch, Model, ModelConfig, ParamFilter};
use crate::optim::{LrSchedule, Sgd, SgdConfig, DEFAULT_BASE_LR, DEFAULT_DROP_LR};
use crate::pgm::{write_feature_maps, Image};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const METRICS_HEADER: &str = "epoch,lr,train_loss,train_acc,test_acc,wall_seconds";
pub const COMPARE_HEADER: &str = "activation,width,final_test_acc,best_test_acc,params";
pub const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Architecture; input channels/size are overwritten from the dataset.
    pub model: ModelConfig,
    pub dataset: DatasetKind,
    pub data_dir: PathBuf,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub decay_norm_params: bool,
    pub seed: u64,
    pub out: PathBuf,
    /// `None` uses the dataset's default policy.
    pub augment: Option<bool>,
    pub normalization: Normalization,
    pub precision: Precision,
    /// Keep only the first N training / test samples (0 = all).
    pub train_limit: usize,
    pub test_limit: usize,
    pub synthetic: SyntheticSpec,
    /// Record real elapsed time in metrics.csv instead of 0.
    pub wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::new(Arch::ConvNet8, crate::activations::ActivationSpec::Relu),
            dataset: DatasetKind::Mnist,
            data_dir: PathBuf::from("data"),
            epochs: 160,
            batch_size: 64,
            lr: DEFAULT_BASE_LR,
            momentum: crate::optim::DEFAULT_MOMENTUM,
            weight_decay: crate::optim::DEFAULT_WEIGHT_DECAY,
            decay_norm_params: true,
            seed: 0,
            out: PathBuf::from("runs/default"),
            augment: None,
            normalization: Normalization::UnitRange,
            precision: Precision::F32,
            train_limit: 0,
            test_limit: 0,
            synthetic: SyntheticSpec { samples: 512, channels: 3, size: 32, classes: 10 },
            wall_clock: false,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> LrSchedule {
        let drop_lr = if self.lr == DEFAULT_BASE_LR { DEFAULT_DROP_LR } else { self.lr / 10.0 };
        LrSchedule { base_lr: self.lr, drop_lr, total_epochs: self.epochs }
    }

    pub fn augment_policy(&self) -> AugmentPolicy {
        match self.augment {
            Some(true) => AugmentPolicy::standard(),
            Some(false) => AugmentPolicy::disabled(),
            None => AugmentPolicy::for_dataset(self.dataset),
        }
    }

    pub fn sgd_config(&self) -> SgdConfig {
        SgdConfig {
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            decay_norm_params: self.decay_norm_params,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch size must be at least 1".into()));
        }
        if !(self.lr > 0.0) || self.momentum < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig("lr must be positive; momentum and decay non-negative".into()));
        }
        Ok(())
    }
}

/// Loads (or generates) the train/test split named by `cfg`, applies the
/// sample limits and normalization.
pub fn load_data(cfg: &TrainConfig) -> Result<(Dataset, Dataset)> {
    let (train, test) = match cfg.dataset {
        DatasetKind::Synthetic => {
            let spec = cfg.synthetic;
            let test_spec = SyntheticSpec { samples: (spec.samples / 2).max(spec.classes), ..spec };
            (data::synthetic(spec, cfg.seed, "train")?, data::synthetic(test_spec, cfg.seed, "test")?)
        }
        kind => data::load_split(kind, &cfg.data_dir)?,
    };
    let mut train = train.truncate(cfg.train_limit)?;
    let mut test = test.truncate(cfg.test_limit)?;
    if cfg.normalization == Normalization::Standardize {
        let (mean, std) = train.channel_stats()?;
        train.standardize(&mean, &std)?;
        test.standardize(&mean, &std)?;
    }
    Ok((train, test))
}

/// Model config adjusted to a dataset's image shape and class count.
pub fn fit_model_config(model: &ModelConfig, ds: &Dataset) -> ModelConfig {
    ModelConfig {
        input_channels: ds.channels(),
        input_size: ds.image_size(),
        num_classes: ds.num_classes,
        ..model.clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub wall_seconds: f64,
}

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.3}",
            self.epoch, self.lr, self.train_loss, self.train_acc, self.test_acc, self.wall_seconds
        )
    }
}

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Parse("metrics header mismatch".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(Error::Parse(format!("metrics row `{line}` has {} fields", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("`{s}`: {e}")));
            Ok(MetricsRecord {
                epoch: f[0].parse().map_err(|e| Error::Parse(format!("epoch: {e}")))?,
                lr: num(f[1])?,
                train_loss: num(f[2])?,
                train_acc: num(f[3])?,
                test_acc: num(f[4])?,
                wall_seconds: num(f[5])?,
            })
        })
        .collect()
}

/// Fraction of samples whose argmax logit equals the label, in eval mode.
pub fn accuracy<T: Scalar>(model: &mut Model<T>, ds: &Dataset) -> Result<f64> {
    let previous = model.mode();
    model.set_mode(Mode::Eval);
    let mut correct = 0;
    for idx in data::sequential_batches(ds.len(), EVAL_BATCH) {
        let (x, labels) = ds.batch::<T>(&idx)?;
        let pred = model.forward(&x)?.argmax_rows()?;
        correct += pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
    }
    model.set_mode(previous);
    Ok(correct as f64 / ds.len().max(1) as f64)
}

pub struct TrainOutcome<T: Scalar> {
    pub model: Model<T>,
    pub optimizer: Sgd<T>,
    pub records: Vec<MetricsRecord>,
}

/// The full loop: augment → forward → loss → backward → SGD step per batch,
/// then a test-set evaluation per epoch. `on_epoch` sees each record as it
/// is produced.
pub fn train<T: Scalar>(
    cfg: &TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    on_epoch: &mut dyn FnMut(&MetricsRecord),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let master = Rng::new(cfg.seed);
    let model_cfg = fit_model_config(&cfg.model, train_set);
    let mut model: Model<T> = Model::build(&model_cfg, &master.derive("init"))?;
    let mut optimizer = Sgd::new(cfg.sgd_config());
    let schedule = cfg.schedule();
    let policy = cfg.augment_policy();
    let shuffle_seed = master.derive("shuffle").seed();
    let augment_root = master.derive("augment");
    let started = Instant::now();
    let mut records = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = schedule.lr_at(epoch)?;
        let mut augment_rng = augment_root.derive(&epoch.to_string());
        model.set_mode(Mode::Train);
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for (b, idx) in data::batches(train_set.len(), cfg.batch_size, shuffle_seed, epoch)?.into_iter().enumerate() {
            let (x, labels) = train_set.batch::<T>(&idx)?;
            let x = data::augment(&x, &policy, &mut augment_rng)?;
            let logits = model.forward(&x)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            model.backward(&grad)?;
            optimizer.step(&mut model, lr)?;
            loss_sum += loss.as_f64() * idx.len() as f64;
            correct += logits.argmax_rows()?.iter().zip(&labels).filter(|(p, l)| p == l).count();
            seen += idx.len();
        }
        let test_acc = accuracy(&mut model, test_set)?;
        let record = MetricsRecord {
            epoch,
            lr,
            train_loss: loss_sum / seen as f64,
            train_acc: correct as f64 / seen as f64,
            test_acc,
            wall_seconds: if cfg.wall_clock { started.elapsed().as_secs_f64() } else { 0.0 },
        };
        on_epoch(&record);
        records.push(record);
    }
    Ok(TrainOutcome { model, optimizer, records })
}

/// Result summary of one `cmd_train` run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub records: Vec<MetricsRecord>,
    pub params: usize,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

impl RunSummary {
    pub fn final_test_acc(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.test_acc)
    }

    pub fn best_test_acc(&self) -> f64 {
        self.records.iter().map(|r| r.test_acc).fold(0.0, f64::max)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn train_and_save<T: Scalar>(
    cfg: &TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    on_epoch: &mut dyn FnMut(&MetricsRecord),
) -> Result<RunSummary> {
    create_dir(&cfg.out)?;
    let metrics_path = cfg.out.join("metrics.csv");
    let mut records_so_far = Vec::new();
    let mut outcome = train::<T>(cfg, train_set, test_set, &mut |r| {
        records_so_far.push(r.clone());
        // keep the file current so long runs can be inspected
        let _ = fs::write(&metrics_path, metrics_csv(&records_so_far));
        on_epoch(r);
    })?;
    write_text(&metrics_path, &metrics_csv(&outcome.records))?;
    let checkpoint_path = cfg.out.join("final.ckpt");
    Checkpoint::capture(&mut outcome.model, Some(&outcome.optimizer), cfg.epochs)?.save(&checkpoint_path)?;
    Ok(RunSummary {
        params: outcome.model.count_params(ParamFilter::All),
        records: outcome.records,
        metrics_path,
        checkpoint_path,
    })
}

/// Trains one model and writes `metrics.csv` and `final.ckpt` into `cfg.out`.
pub fn cmd_train(cfg: &TrainConfig, on_epoch: &mut dyn FnMut(&MetricsRecord)) -> Result<RunSummary> {
    let (train_set, test_set) = load_data(cfg)?;
    run_loaded(cfg, &train_set, &test_set, on_epoch)
}

fn run_loaded(
    cfg: &TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    on_epoch: &mut dyn FnMut(&MetricsRecord),
) -> Result<RunSummary> {
    match cfg.precision {
        Precision::F32 => train_and_save::<f32>(cfg, train_set, test_set, on_epoch),
        Precision::F64 => train_and_save::<f64>(cfg, train_set, test_set, on_epoch),
    }
}

/// Accuracy of a saved checkpoint on a dataset.
pub fn cmd_eval(checkpoint: &Path, ds: &Dataset, precision: Precision) -> Result<f64> {
    let ck = Checkpoint::load(checkpoint)?;
    let want = fit_model_config(&ck.config, ds);
    if want != ck.config {
        return Err(Error::InvalidConfig(format!(
            "checkpoint expects {}x{}x{} inputs with {} classes; dataset has {}x{}x{} with {}",
            ck.config.input_channels,
            ck.config.input_size,
            ck.config.input_size,
            ck.config.num_classes,
            want.input_channels,
            want.input_size,
            want.input_size,
            want.num_classes
        )));
    }
    match precision {
        Precision::F32 => accuracy(&mut ck.to_model::<f32>()?, ds),
        Precision::F64 => accuracy(&mut ck.to_model::<f64>()?, ds),
    }
}

/// One entry of a comparison: an activation spec and optional width override,
/// written `spec` or `spec@width`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareEntry {
    pub label: String,
    pub activation: crate::activations::ActivationSpec,
    pub width: Option<f64>,
}

impl std::str::FromStr for CompareEntry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (spec, width) = match s.rsplit_once('@') {
            Some((spec, w)) => {
                let w: f64 = w.parse().map_err(|e| Error::Parse(format!("width in `{s}`: {e}")))?;
                (spec, Some(w))
            }
            None => (s, None),
        };
        Ok(CompareEntry { label: s.to_string(), activation: spec.parse()?, width })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub activation: String,
    pub width: f64,
    pub final_test_acc: f64,
    pub best_test_acc: f64,
    pub params: usize,
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut out = String::from(COMPARE_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{}",
            r.activation, r.width, r.final_test_acc, r.best_test_acc, r.params
        );
    }
    out
}

/// Directory-safe form of a comparison label.
pub fn run_dir_name(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

/// Trains one model per entry under identical settings, each in its own
/// subdirectory of `base.out`, and writes `compare.csv` there.
pub fn cmd_compare(
    base: &TrainConfig,
    entries: &[CompareEntry],
    on_epoch: &mut dyn FnMut(&str, &MetricsRecord),
) -> Result<Vec<CompareRow>> {
    let mut labels: Vec<&str> = entries.iter().map(|e| e.label.as_str()).collect();
    labels.sort_unstable();
    if labels.windows(2).any(|w| w[0] == w[1]) || entries.is_empty() {
        return Err(Error::InvalidConfig("comparison needs distinct, non-empty entries".into()));
    }
    let (train_set, test_set) = load_data(base)?;
    let mut rows = Vec::with_capacity(entries.len());
    for e in entries {
        let mut cfg = base.clone();
        cfg.model.activation = e.activation.clone();
        if let Some(w) = e.width {
            cfg.model.width_mult = w;
        }
        cfg.out = base.out.join(run_dir_name(&e.label));
        let label = e.label.clone();
        let run = run_loaded(&cfg, &train_set, &test_set, &mut |r| on_epoch(&label, r))?;
        rows.push(CompareRow {
            activation: e.label.clone(),
            width: cfg.model.width_mult,
            final_test_acc: run.final_test_acc(),
            best_test_acc: run.best_test_acc(),
            params: run.params,
        });
    }
    create_dir(&base.out)?;
    write_text(&base.out.join("compare.csv"), &compare_csv(&rows))?;
    Ok(rows)
}

/// Deterministic test pattern: concentric rings plus a diagonal ramp.
pub fn procedural_image(channels: usize, size: usize) -> Result<Tensor<f32>> {
    let c = (size as f32 - 1.0) / 2.0;
    Tensor::from_fn(vec![1, channels, size, size], |i| {
        let ch = i / (size * size);
        let (y, x) = ((i / size) % size, i % size);
        let (dy, dx) = (y as f32 - c, x as f32 - c);
        let r = (dy * dy + dx * dx).sqrt();
        let rings = 0.5 + 0.5 * (r * 0.8 + ch as f32).sin();
        let ramp = (x + y) as f32 / (2.0 * size as f32);
        0.6 * rings + 0.4 * ramp
    })
}

/// Reads a PGM/PPM image or a tensor fixture file as a `(1, C, H, W)` input.
pub fn load_input(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        return Image::decode(&bytes)?.to_tensor();
    }
    let t = Tensor::<f32>::parse_fixture(&String::from_utf8_lossy(&bytes))?;
    match t.rank() {
        3 => {
            let s = t.shape().to_vec();
            t.reshape(vec![1, s[0], s[1], s[2]])
        }
        4 if t.shape()[0] == 1 => Ok(t),
        _ => Err(Error::InvalidShape {
            shape: t.shape().to_vec(),
            reason: "feature input must be (C, H, W) or (1, C, H, W)".into(),
        }),
    }
}

/// Where the features command takes its model from.
pub enum FeatureSource {
    Checkpoint(PathBuf),
    /// A freshly initialized model; input shape comes from the image.
    Fresh { config: ModelConfig, seed: u64 },
}

/// Writes one PGM per channel of the activation output at `stage` into
/// `out`, named `<prefix>_chNN.pgm`.
pub fn cmd_features(
    source: &FeatureSource,
    input: &Tensor<f32>,
    stage: usize,
    out: &Path,
    prefix: &str,
) -> Result<Vec<PathBuf>> {
    let [_, c, h, w] = input.dims4("features")?;
    let mut model: Model<f32> = match source {
        FeatureSource::Checkpoint(path) => {
            let ck = Checkpoint::load(path)?;
            let cfg = &ck.config;
            if cfg.input_channels != c || cfg.input_size != h || cfg.input_size != w {
                return Err(Error::ShapeMismatch {
                    op: "features",
                    left: vec![cfg.input_channels, cfg.input_size, cfg.input_size],
                    right: vec![c, h, w],
                });
            }
            ck.to_model()?
        }
        FeatureSource::Fresh { config, seed } => {
            if h != w {
                return Err(Error::InvalidShape { shape: vec![c, h, w], reason: "input must be square".into() });
            }
            let cfg = ModelConfig { input_channels: c, input_size: h, ..config.clone() };
            Model::build(&cfg, &Rng::new(*seed).derive("init"))?
        }
    };
    model.set_mode(Mode::Eval);
    let maps = model.features(input, stage)?;
    write_feature_maps(&maps, 0, out, prefix)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(out: &Path) -> TrainConfig {
        let mut cfg = TrainConfig {
            dataset: DatasetKind::Synthetic,
            epochs: 2,
            batch_size: 16,
            out: out.to_path_buf(),
            synthetic: SyntheticSpec { samples: 64, channels: 1, size: 28, classes: 4 },
            ..Default::default()
        };
        cfg.model.width_mult = 0.125;
        cfg
    }

    #[test]
    fn metrics_round_trip() {
        let recs = vec![
            MetricsRecord { epoch: 0, lr: 0.001, train_loss: 2.3, train_acc: 0.1, test_acc: 0.125, wall_seconds: 0.0 },
            MetricsRecord { epoch: 1, lr: 0.0001, train_loss: 1.5, train_acc: 0.5, test_acc: 0.25, wall_seconds: 1.5 },
        ];
        let text = metrics_csv(&recs);
        assert!(text.starts_with("epoch,lr,train_loss,train_acc,test_acc,wall_seconds\n0,0.001,"));
        assert_eq!(parse_metrics_csv(&text).unwrap(), recs);
        assert!(parse_metrics_csv("a,b\n").is_err());
    }

    #[test]
    fn lr_override_scales_drop() {
        let cfg = TrainConfig { lr: 0.01, epochs: 4, ..Default::default() };
        assert_eq!(cfg.schedule().lr_at(3).unwrap(), 0.001);
        let cfg = TrainConfig { epochs: 4, ..Default::default() };
        assert_eq!(cfg.schedule().lr_at(3).unwrap(), 0.0001);
    }

    #[test]
    fn smoke_run_writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        let run = cmd_train(&cfg, &mut |_| {}).unwrap();
        assert_eq!(run.records.len(), 2);
        assert!(run.records.iter().all(|r| (0.0..=1.0).contains(&r.test_acc)));
        let parsed = parse_metrics_csv(&fs::read_to_string(&run.metrics_path).unwrap()).unwrap();
        assert_eq!(parsed.len(), 2);
        let (_, test) = load_data(&cfg).unwrap();
        let acc = cmd_eval(&run.checkpoint_path, &test, Precision::F32).unwrap();
        assert!((acc - run.final_test_acc()).abs() < 1e-6);
    }

    #[test]
    fn compare_entries_parse() {
        let e: CompareEntry = "reborn@0.5".parse().unwrap();
        assert_eq!(e.width, Some(0.5));
        assert_eq!(e.activation.to_string(), "reborn");
        let e: CompareEntry = "leaky:0.2".parse().unwrap();
        assert_eq!(e.width, None);
        assert!("relu@x".parse::<CompareEntry>().is_err());
        assert_eq!(run_dir_name("rrelu:0.1:0.3@0.5"), "rrelu_0.1_0.3_0.5");
    }

    #[test]
    fn nan_aborts_with_location() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(dir.path());
        cfg.lr = 1e30;
        cfg.epochs = 3;
        match cmd_train(&cfg, &mut |_| {}) {
            Err(Error::NonFiniteLoss { .. }) => {}
            other => panic!("expected a non-finite loss abort, got {:?}", other.map(|r| r.records)),
        }
    }
}

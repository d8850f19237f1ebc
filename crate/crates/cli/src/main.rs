use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use reborn::activations::ActivationSpec;
use reborn::data::{DatasetKind, Normalization, SyntheticSpec};
use reborn::gradcheck::{run_all, MIN_TRIALS};
use reborn::models::{Arch, ModelConfig};
use reborn::train::{
    cmd_compare, cmd_eval, cmd_features, cmd_train, load_data, load_input, procedural_image, CompareEntry,
    FeatureSource, MetricsRecord, Precision, TrainConfig,
};

#[derive(Parser)]
#[command(name = "reborn", version, about = "Train and inspect CNNs with reborn and other activations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model; writes metrics.csv and final.ckpt into --out.
    Train(TrainArgs),
    /// Print the test accuracy of a checkpoint.
    Eval(EvalArgs),
    /// Train one model per activation and write compare.csv.
    Compare(CompareArgs),
    /// Dump one PGM per channel of an activation's feature maps.
    Features(FeatureArgs),
    /// Finite-difference check of every layer's backward pass.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetArg {
    Mnist,
    Kmnist,
    Fmnist,
    Cifar10,
    Synthetic,
}

impl From<DatasetArg> for DatasetKind {
    fn from(d: DatasetArg) -> Self {
        match d {
            DatasetArg::Mnist => DatasetKind::Mnist,
            DatasetArg::Kmnist => DatasetKind::Kmnist,
            DatasetArg::Fmnist => DatasetKind::Fmnist,
            DatasetArg::Cifar10 => DatasetKind::Cifar10,
            DatasetArg::Synthetic => DatasetKind::Synthetic,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchArg {
    Convnet8,
    Viznet5,
    #[value(name = "convnet8-extended")]
    Convnet8Extended,
}

impl From<ArchArg> for Arch {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::Convnet8 => Arch::ConvNet8,
            ArchArg::Viznet5 => Arch::VizNet5,
            ArchArg::Convnet8Extended => Arch::ConvNet8Extended,
        }
    }
}

#[derive(Args, Clone)]
struct DataArgs {
    #[arg(long, value_enum, default_value = "mnist")]
    dataset: DatasetArg,
    /// Root holding <dataset>/ subdirectories with the raw files.
    #[arg(long, env = "REBORN_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,
    /// Use only the first N training samples (0 = all).
    #[arg(long, default_value_t = 0)]
    train_limit: usize,
    /// Use only the first N test samples (0 = all).
    #[arg(long, default_value_t = 0)]
    test_limit: usize,
    /// Standardize channels with training-set mean/std instead of plain [0,1] scaling.
    #[arg(long)]
    standardize: bool,
    /// Synthetic dataset: training samples (test gets half).
    #[arg(long, default_value_t = 512)]
    synthetic_samples: usize,
    #[arg(long, default_value_t = 3)]
    synthetic_channels: usize,
    #[arg(long, default_value_t = 32)]
    synthetic_size: usize,
    #[arg(long, default_value_t = 10)]
    synthetic_classes: usize,
}

#[derive(Args, Clone)]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "convnet8")]
    arch: ArchArg,
    /// relu, leaky[:s], prelu, rrelu[:l:u], elu[:a], selu, celu[:a], crelu, reborn, reborn-nc
    #[arg(long, default_value = "reborn")]
    activation: String,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 160)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    /// Base learning rate; drops tenfold after the first half of training.
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 0.0005)]
    weight_decay: f64,
    /// Exempt batch-norm scale/shift from weight decay.
    #[arg(long)]
    no_decay_norm: bool,
    #[arg(long, default_value_t = 1.0)]
    width_mult: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "runs/default")]
    out: PathBuf,
    /// Drop the batch norm after each conv (convs then carry a bias).
    #[arg(long)]
    no_bn: bool,
    /// Disable augmentation even for datasets that use it by default.
    #[arg(long, conflicts_with = "augment")]
    no_augment: bool,
    /// Force augmentation on.
    #[arg(long)]
    augment: bool,
    /// Train in 64-bit floats.
    #[arg(long)]
    f64: bool,
    /// Record real elapsed seconds in metrics.csv (breaks byte-identical reruns).
    #[arg(long)]
    wall_clock: bool,
}

impl TrainArgs {
    fn config(&self) -> Result<TrainConfig> {
        let activation: ActivationSpec = self.activation.parse().context("--activation")?;
        let mut model = ModelConfig::new(self.arch.into(), activation);
        model.width_mult = self.width_mult;
        model.bn = !self.no_bn;
        let d = &self.data;
        Ok(TrainConfig {
            model,
            dataset: d.dataset.into(),
            data_dir: d.data_dir.clone(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            decay_norm_params: !self.no_decay_norm,
            seed: self.seed,
            out: self.out.clone(),
            augment: if self.no_augment {
                Some(false)
            } else if self.augment {
                Some(true)
            } else {
                None
            },
            normalization: if d.standardize { Normalization::Standardize } else { Normalization::UnitRange },
            precision: if self.f64 { Precision::F64 } else { Precision::F32 },
            train_limit: d.train_limit,
            test_limit: d.test_limit,
            synthetic: SyntheticSpec {
                samples: d.synthetic_samples,
                channels: d.synthetic_channels,
                size: d.synthetic_size,
                classes: d.synthetic_classes,
            },
            wall_clock: self.wall_clock,
        })
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Evaluate on the training split instead of the test split.
    #[arg(long)]
    train_split: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    f64: bool,
}

#[derive(Args)]
struct CompareArgs {
    /// Comma-separated entries `spec` or `spec@width`, e.g. relu@0.5,reborn@0.5,relu@1.0
    #[arg(long, value_delimiter = ',', required = true)]
    activations: Vec<String>,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args)]
struct FeatureArgs {
    /// Trained checkpoint; without it a freshly initialized model is used.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "viznet5")]
    arch: ArchArg,
    #[arg(long, default_value = "relu")]
    activation: String,
    #[arg(long, default_value_t = 1.0)]
    width_mult: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// PGM/PPM image or tensor fixture; a procedural pattern if omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Channels and side of the procedural pattern.
    #[arg(long, default_value_t = 3)]
    channels: usize,
    #[arg(long, default_value_t = 32)]
    size: usize,
    /// Which conv stage's activation output to dump (1 = first).
    #[arg(long, default_value_t = 1)]
    layer: usize,
    #[arg(long, default_value = "runs/features")]
    out: PathBuf,
    #[arg(long, default_value = "feature")]
    prefix: String,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = MIN_TRIALS)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn log_epoch(label: &str, r: &MetricsRecord) {
    eprintln!(
        "{label}epoch {:>3}  lr {:<7}  loss {:.4}  train {:.4}  test {:.4}",
        r.epoch, r.lr, r.train_loss, r.train_acc, r.test_acc
    );
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.config()?;
            let start = std::time::Instant::now();
            let run = cmd_train(&cfg, &mut |r| log_epoch("", r))?;
            eprintln!("finished in {:.1}s", start.elapsed().as_secs_f64());
            println!("final_test_acc {:.6}", run.final_test_acc());
            println!("best_test_acc {:.6}", run.best_test_acc());
            println!("params {}", run.params);
            println!("metrics {}", run.metrics_path.display());
            println!("checkpoint {}", run.checkpoint_path.display());
        }
        Command::Eval(args) => {
            let cfg = TrainConfig {
                dataset: args.data.dataset.into(),
                data_dir: args.data.data_dir.clone(),
                train_limit: args.data.train_limit,
                test_limit: args.data.test_limit,
                normalization: if args.data.standardize { Normalization::Standardize } else { Normalization::UnitRange },
                seed: args.seed,
                synthetic: SyntheticSpec {
                    samples: args.data.synthetic_samples,
                    channels: args.data.synthetic_channels,
                    size: args.data.synthetic_size,
                    classes: args.data.synthetic_classes,
                },
                ..Default::default()
            };
            let (train, test) = load_data(&cfg)?;
            let ds = if args.train_split { &train } else { &test };
            let precision = if args.f64 { Precision::F64 } else { Precision::F32 };
            println!("{:.6}", cmd_eval(&args.checkpoint, ds, precision)?);
        }
        Command::Compare(args) => {
            let base = args.train.config()?;
            let entries = args
                .activations
                .iter()
                .map(|s| s.parse::<CompareEntry>().with_context(|| format!("entry `{s}`")))
                .collect::<Result<Vec<_>>>()?;
            let rows = cmd_compare(&base, &entries, &mut |label, r| log_epoch(&format!("[{label}] "), r))?;
            print!("{}", reborn::train::compare_csv(&rows));
        }
        Command::Features(args) => {
            let input = match &args.input {
                Some(p) => load_input(p).with_context(|| format!("reading {}", p.display()))?,
                None => procedural_image(args.channels, args.size)?,
            };
            let source = match &args.checkpoint {
                Some(p) => FeatureSource::Checkpoint(p.clone()),
                None => {
                    let mut config = ModelConfig::new(args.arch.into(), args.activation.parse()?);
                    config.width_mult = args.width_mult;
                    FeatureSource::Fresh { config, seed: args.seed }
                }
            };
            let paths = cmd_features(&source, &input, args.layer, &args.out, &args.prefix)?;
            println!("wrote {} feature maps to {}", paths.len(), args.out.display());
        }
        Command::Gradcheck(args) => {
            if args.trials == 0 {
                bail!("--trials must be at least 1");
            }
            let reports = run_all(args.trials, args.seed)?;
            let mut ok = true;
            for r in &reports {
                let verdict = if r.passed() { "pass" } else { "FAIL" };
                ok &= r.passed();
                println!("{verdict}  {:<30} worst rel err {:.3e} ({})", r.component, r.worst_rel_err, r.worst_at);
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

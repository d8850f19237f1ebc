use std::path::PathBuf;

use proptest::prelude::*;
use reborn::activations::ActivationSpec;
use reborn::data::{load_split, synthetic, DatasetKind, SyntheticSpec};
use reborn::layers::{Conv2d, ConvTranspose2d};
use reborn::models::{Arch, Model, ModelConfig};
use reborn::train::{accuracy, cmd_compare, cmd_eval, cmd_train, load_data, CompareEntry, Precision, TrainConfig};
use reborn::Tensor;

fn tiny_config(out: PathBuf, samples: usize, classes: usize) -> TrainConfig {
    let mut cfg = TrainConfig {
        dataset: DatasetKind::Synthetic,
        batch_size: 16,
        out,
        seed: 5,
        synthetic: SyntheticSpec { samples, channels: 1, size: 28, classes },
        ..Default::default()
    };
    cfg.model.width_mult = 0.125;
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn transposed_conv_is_the_adjoint(
        k in prop::sample::select(vec![1usize, 3]),
        s in 1usize..3,
        p in 0usize..2,
        c_in in 1usize..4,
        c_out in 1usize..4,
        h in 3usize..9,
        w in 3usize..9,
        seed in any::<u64>(),
    ) {
        // only sizes the transposed conv maps back exactly
        prop_assume!((h + 2 * p - k) % s == 0 && (w + 2 * p - k) % s == 0);
        let mut rng = reborn::Rng::new(seed);
        let mut conv = Conv2d::<f64>::new(c_in, c_out, k, s, p, false).unwrap();
        conv.weight.value = Tensor::from_fn(vec![c_out, c_in, k, k], |_| rng.normal()).unwrap();
        let mut deconv = ConvTranspose2d::<f64>::new(c_out, c_in, k, s, p, false).unwrap();
        deconv.weight.value = conv.weight.value.clone();
        let x = Tensor::from_fn(vec![2, c_in, h, w], |_| rng.normal()).unwrap();
        let y0 = conv.apply(&x).unwrap();
        let y = Tensor::from_fn(y0.shape().to_vec(), |_| rng.normal()).unwrap();
        let lhs = y0.dot(&y).unwrap();
        let rhs = x.dot(&deconv.apply(&y).unwrap()).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1.0));
    }
}

#[test]
fn every_builder_combination_passes_the_shape_audit() {
    for arch in [Arch::ConvNet8, Arch::VizNet5, Arch::ConvNet8Extended] {
        let acts: Vec<ActivationSpec> = if arch == Arch::ConvNet8Extended {
            vec![ActivationSpec::Relu]
        } else {
            ActivationSpec::all_defaults()
        };
        for act in acts {
            for width in [1.0, 0.5, 0.25] {
                for (channels, size) in [(1, 28), (3, 32)] {
                    let mut cfg = ModelConfig::new(arch, act.clone());
                    cfg.width_mult = width;
                    cfg.input_channels = channels;
                    cfg.input_size = size;
                    let model: Model<f32> = Model::build(&cfg, &reborn::Rng::new(0))
                        .unwrap_or_else(|e| panic!("{arch} {act} {width} {size}: {e}"));
                    let trace = model.shape_trace(&[3, channels, size, size]).unwrap();
                    assert_eq!(trace.last().unwrap().1, vec![3, 10]);
                }
            }
        }
    }
}

#[test]
fn memorizes_ten_samples() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path().to_path_buf(), 10, 10);
    cfg.batch_size = 10;
    cfg.epochs = 60;
    cfg.lr = 0.05;
    cfg.train_limit = 10;
    let run = cmd_train(&cfg, &mut |_| {}).unwrap();
    let (train, _) = load_data(&cfg).unwrap();
    let acc = cmd_eval(&run.checkpoint_path, &train, Precision::F32).unwrap();
    assert_eq!(acc, 1.0);
    assert_eq!(cmd_eval(&run.checkpoint_path, &train, Precision::F32).unwrap(), acc);
}

#[test]
fn random_init_is_near_chance() {
    let ds = synthetic(SyntheticSpec { samples: 400, channels: 1, size: 28, classes: 10 }, 9, "test").unwrap();
    let mut accs = Vec::new();
    for seed in 0..3 {
        let mut cfg = ModelConfig::new(Arch::ConvNet8, ActivationSpec::Relu);
        cfg.width_mult = 0.125;
        cfg.input_channels = 1;
        cfg.input_size = 28;
        let mut m: Model<f32> = Model::build(&cfg, &reborn::Rng::new(seed)).unwrap();
        accs.push(accuracy(&mut m, &ds).unwrap());
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((mean - 0.1).abs() <= 0.05, "{accs:?}");
}

#[test]
fn half_width_comparison_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path().to_path_buf(), 32, 4);
    cfg.epochs = 1;
    let labels = ["relu@0.5", "crelu@0.5", "reborn@0.5", "relu@1.0"];
    let entries: Vec<CompareEntry> = labels.iter().map(|s| s.parse().unwrap()).collect();
    let rows = cmd_compare(&cfg, &entries, &mut |_, _| {}).unwrap();
    assert_eq!(rows.iter().map(|r| r.activation.as_str()).collect::<Vec<_>>(), labels);
    assert_eq!(rows.iter().map(|r| r.width).collect::<Vec<_>>(), vec![0.5, 0.5, 0.5, 1.0]);
    assert!(rows[2].params > rows[0].params);
    assert!(rows[3].params > rows[0].params);
    let table = std::fs::read_to_string(dir.path().join("compare.csv")).unwrap();
    assert_eq!(table.lines().count(), 5);
    for l in labels {
        assert!(dir.path().join(reborn::train::run_dir_name(l)).join("metrics.csv").is_file());
    }
}

#[test]
fn f64_training_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path().to_path_buf(), 32, 4);
    cfg.epochs = 1;
    cfg.precision = Precision::F64;
    cfg.model.activation = "reborn".parse().unwrap();
    let run = cmd_train(&cfg, &mut |_| {}).unwrap();
    let text = std::fs::read_to_string(&run.checkpoint_path).unwrap();
    assert!(text.starts_with("reborn-checkpoint v1 dtype=f64"));
}

#[test]
fn mnist_files_have_expected_counts() {
    let root = std::env::var_os("REBORN_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"));
    match load_split(DatasetKind::Mnist, &root) {
        Ok((train, test)) => {
            assert_eq!(train.len(), 60_000);
            assert_eq!(test.len(), 10_000);
            assert_eq!(train.images.shape(), &[60_000, 1, 28, 28]);
            assert!(train.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        Err(e) => eprintln!("MNIST not found under {} ({e}); count check not run", root.display()),
    }
}

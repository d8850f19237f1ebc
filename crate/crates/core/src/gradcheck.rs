//! Central finite-difference verification of analytic gradients, in `f64`.
//!
//! Each trial builds a fresh randomly-parameterized layer, draws an input and
//! a random projection `r`, and compares the analytic gradients of
//! `L = ⟨layer(x), r⟩` against `(L(θ + h) − L(θ − h)) / 2h` for the input and
//! every learned tensor.

use crate::activations::{make_activation, ActivationSpec};
use crate::error::Result;
use crate::layers::{
    softmax_cross_entropy, BatchNorm2d, Conv2d, ConvTranspose2d, GlobalAvgPool, Layer, Linear, Mode,
};
use crate::optim::{conv_fans, xavier_uniform};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const MIN_TRIALS: usize = 5;
/// Inputs closer than this to zero are pushed away from the rectifier kink.
pub const KINK_MARGIN: f64 = 1e-3;
/// Denominator floor for the relative error of near-zero gradients.
const REL_FLOOR: f64 = 1e-7;
/// Coordinates sampled per tensor per trial.
const MAX_COORDS: usize = 48;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub component: String,
    pub trials: usize,
    pub worst_rel_err: f64,
    /// Which tensor produced the worst error (`input` or a parameter name).
    pub worst_at: String,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.worst_rel_err < TOLERANCE && self.worst_rel_err.is_finite()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

type Builder = Box<dyn Fn(&mut Rng) -> Result<Box<dyn Layer<f64>>>>;

/// A named layer recipe with the input shape and mode it is checked in.
pub struct Component {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub mode: Mode,
    pub build: Builder,
}

impl Component {
    pub fn new(
        name: impl Into<String>,
        input_shape: &[usize],
        mode: Mode,
        build: impl Fn(&mut Rng) -> Result<Box<dyn Layer<f64>>> + 'static,
    ) -> Self {
        Component {
            name: name.into(),
            input_shape: input_shape.to_vec(),
            mode,
            build: Box::new(build),
        }
    }
}

fn random_input(shape: &[usize], rng: &mut Rng) -> Result<Tensor<f64>> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let v = rng.normal();
        if v.abs() < KINK_MARGIN * 10.0 {
            (KINK_MARGIN * 10.0).copysign(v)
        } else {
            v
        }
    })
}

fn coords(len: usize, rng: &mut Rng) -> Vec<usize> {
    if len <= MAX_COORDS {
        (0..len).collect()
    } else {
        rng.permutation(len)[..MAX_COORDS].to_vec()
    }
}

fn projected(layer: &mut dyn Layer<f64>, x: &Tensor<f64>, r: &Tensor<f64>, mode: Mode) -> Result<f64> {
    layer.forward(x, mode)?.dot(r)
}

fn set_param(layer: &mut dyn Layer<f64>, name: &str, idx: usize, value: f64) {
    layer.visit_params("", &mut |n, p| {
        if n == name {
            p.value.data_mut()[idx] = value;
        }
    });
}

/// Runs `trials` independent checks of `component`.
pub fn check_component(component: &Component, trials: usize, rng: &mut Rng) -> Result<CheckReport> {
    let mut report = CheckReport {
        component: component.name.clone(),
        trials,
        worst_rel_err: 0.0,
        worst_at: String::new(),
    };
    let note = |err: f64, at: &str, report: &mut CheckReport| {
        if err > report.worst_rel_err || err.is_nan() {
            report.worst_rel_err = err;
            report.worst_at = at.to_string();
        }
    };
    for _ in 0..trials {
        let mut layer = (component.build)(rng)?;
        let x = random_input(&component.input_shape, rng)?;
        let out_shape = layer.output_shape(x.shape())?;
        let r = Tensor::from_fn(out_shape, |_| rng.normal())?;
        let mode = component.mode;

        layer.forward(&x, mode)?;
        let dx = layer.backward(&r)?;
        let mut analytic: Vec<(String, Tensor<f64>, Tensor<f64>)> = Vec::new();
        layer.visit_params("", &mut |n, p| {
            analytic.push((n.to_string(), p.value.clone(), p.grad.clone()));
        });

        for i in coords(x.len(), rng) {
            let mut xp = x.clone();
            xp.data_mut()[i] += STEP;
            let mut xm = x.clone();
            xm.data_mut()[i] -= STEP;
            let fd = (projected(layer.as_mut(), &xp, &r, mode)?
                - projected(layer.as_mut(), &xm, &r, mode)?)
                / (2.0 * STEP);
            note(relative_error(dx.data()[i], fd), "input", &mut report);
        }

        for (name, value, grad) in &analytic {
            for i in coords(value.len(), rng) {
                let base = value.data()[i];
                set_param(layer.as_mut(), name, i, base + STEP);
                let lp = projected(layer.as_mut(), &x, &r, mode)?;
                set_param(layer.as_mut(), name, i, base - STEP);
                let lm = projected(layer.as_mut(), &x, &r, mode)?;
                set_param(layer.as_mut(), name, i, base);
                let fd = (lp - lm) / (2.0 * STEP);
                note(relative_error(grad.data()[i], fd), name, &mut report);
            }
        }
    }
    Ok(report)
}

/// Finite-difference check of the softmax cross-entropy gradient.
pub fn check_softmax_cross_entropy(trials: usize, rng: &mut Rng) -> Result<CheckReport> {
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let (n, k) = (3, 7);
        let logits = Tensor::from_fn(vec![n, k], |_| 2.0 * rng.normal())?;
        let labels: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        let (_, grad) = softmax_cross_entropy(&logits, &labels)?;
        for i in 0..logits.len() {
            let mut p = logits.clone();
            p.data_mut()[i] += STEP;
            let mut m = logits.clone();
            m.data_mut()[i] -= STEP;
            let fd = (softmax_cross_entropy(&p, &labels)?.0 - softmax_cross_entropy(&m, &labels)?.0)
                / (2.0 * STEP);
            worst = worst.max(relative_error(grad.data()[i], fd));
        }
    }
    Ok(CheckReport {
        component: "softmax_cross_entropy".into(),
        trials,
        worst_rel_err: worst,
        worst_at: "logits".into(),
    })
}

fn random_conv(c_in: usize, c_out: usize, k: usize, s: usize, p: usize, rng: &mut Rng) -> Result<Conv2d<f64>> {
    let mut conv = Conv2d::new(c_in, c_out, k, s, p, true)?;
    let (fi, fo) = conv_fans(c_in, c_out, k);
    conv.weight.value = xavier_uniform(&[c_out, c_in, k, k], fi, fo, rng)?;
    if let Some(b) = &mut conv.bias {
        b.value = Tensor::from_fn(vec![c_out], |_| rng.normal() * 0.1)?;
    }
    Ok(conv)
}

fn random_deconv(c_in: usize, c_out: usize, k: usize, s: usize, p: usize, rng: &mut Rng) -> Result<ConvTranspose2d<f64>> {
    let mut deconv = ConvTranspose2d::new(c_in, c_out, k, s, p, true)?;
    let (fi, fo) = conv_fans(c_in, c_out, k);
    deconv.weight.value = xavier_uniform(&[c_in, c_out, k, k], fi, fo, rng)?;
    if let Some(b) = &mut deconv.bias {
        b.value = Tensor::from_fn(vec![c_out], |_| rng.normal() * 0.1)?;
    }
    Ok(deconv)
}

fn random_bn(c: usize, rng: &mut Rng) -> Result<BatchNorm2d<f64>> {
    let mut bn = BatchNorm2d::new(c)?;
    bn.gamma.value = Tensor::from_fn(vec![c], |_| rng.uniform_range(0.5, 1.5))?;
    bn.beta.value = Tensor::from_fn(vec![c], |_| rng.normal() * 0.2)?;
    bn.running_mean = Tensor::from_fn(vec![c], |_| rng.normal() * 0.3)?;
    bn.running_var = Tensor::from_fn(vec![c], |_| rng.uniform_range(0.5, 2.0))?;
    Ok(bn)
}

fn redraw(t: &Tensor<f64>, mut draw: impl FnMut() -> f64) -> Tensor<f64> {
    let mut out = t.clone();
    out.data_mut().iter_mut().for_each(|v| *v = draw());
    out
}

/// Every layer and activation kind the library ships, including the reborn
/// block with both batch-norm modes.
pub fn standard_components() -> Vec<Component> {
    let mut out = vec![
        Component::new("conv2d k3 s1 p1", &[2, 2, 5, 5], Mode::Train, |rng| {
            Ok(Box::new(random_conv(2, 3, 3, 1, 1, rng)?))
        }),
        Component::new("conv2d k3 s2 p1", &[2, 2, 5, 5], Mode::Train, |rng| {
            Ok(Box::new(random_conv(2, 3, 3, 2, 1, rng)?))
        }),
        Component::new("conv2d k1 s1 p0", &[2, 4, 3, 3], Mode::Train, |rng| {
            Ok(Box::new(random_conv(4, 2, 1, 1, 0, rng)?))
        }),
        Component::new("conv_transpose2d k3 s1 p1", &[2, 2, 4, 4], Mode::Train, |rng| {
            Ok(Box::new(random_deconv(2, 3, 3, 1, 1, rng)?))
        }),
        Component::new("conv_transpose2d k3 s2 p1", &[2, 2, 3, 3], Mode::Train, |rng| {
            Ok(Box::new(random_deconv(2, 3, 3, 2, 1, rng)?))
        }),
        Component::new("batch_norm2d train", &[3, 2, 3, 3], Mode::Train, |rng| {
            Ok(Box::new(random_bn(2, rng)?))
        }),
        Component::new("batch_norm2d eval", &[3, 2, 3, 3], Mode::Eval, |rng| {
            Ok(Box::new(random_bn(2, rng)?))
        }),
        Component::new("linear", &[3, 6], Mode::Train, |rng| {
            let mut fc = Linear::new(6, 4)?;
            fc.weight.value = xavier_uniform(&[4, 6], 6, 4, rng)?;
            fc.bias.value = Tensor::from_fn(vec![4], |_| rng.normal() * 0.1)?;
            Ok(Box::new(fc))
        }),
        Component::new("global_avg_pool", &[2, 3, 3, 2], Mode::Train, |_| {
            Ok(Box::new(GlobalAvgPool::new()))
        }),
    ];

    for spec in ActivationSpec::all_defaults() {
        // RReLU's training slopes are resampled per forward, so its
        // derivative is checked with the deterministic eval slope.
        let modes: &[Mode] = match spec {
            ActivationSpec::RRelu { .. } => &[Mode::Eval],
            ActivationSpec::Reborn(_) => &[Mode::Train, Mode::Eval],
            _ => &[Mode::Train],
        };
        for &mode in modes {
            let name = match spec {
                ActivationSpec::Reborn(_) => format!(
                    "{spec} (bn {})",
                    if mode == Mode::Train { "train" } else { "eval" }
                ),
                _ => spec.to_string(),
            };
            let s = spec.clone();
            out.push(Component::new(name, &[2, 3, 4, 4], mode, move |rng| {
                let (mut layer, _) = make_activation::<f64>(&s, 3, rng)?;
                // move learned slopes and batch-norm state off their defaults
                layer.visit_params("", &mut |n, p| {
                    if n.ends_with("slope") {
                        p.value = redraw(&p.value, || rng.uniform_range(0.05, 0.6));
                    } else if n.ends_with("gamma") {
                        p.value = redraw(&p.value, || rng.uniform_range(0.5, 1.5));
                    } else if n.ends_with("bias") || n.ends_with("beta") {
                        p.value = redraw(&p.value, || rng.normal() * 0.1);
                    }
                });
                layer.visit_buffers("", &mut |n, b| {
                    if n.ends_with("running_var") {
                        *b = redraw(b, || rng.uniform_range(0.5, 2.0));
                    } else {
                        *b = redraw(b, || rng.normal() * 0.2);
                    }
                });
                Ok(layer)
            }));
        }
    }
    out
}

/// Runs every standard component plus the loss check.
pub fn run_all(trials: usize, seed: u64) -> Result<Vec<CheckReport>> {
    let root = Rng::new(seed);
    let mut reports = Vec::new();
    for c in standard_components() {
        let mut rng = root.derive(&c.name);
        reports.push(check_component(&c, trials, &mut rng)?);
    }
    reports.push(check_softmax_cross_entropy(trials, &mut root.derive("softmax"))?);
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!(relative_error(1e-12, 0.0) < TOLERANCE);
    }

    #[test]
    fn component_list_covers_everything() {
        let names: Vec<String> = standard_components().into_iter().map(|c| c.name).collect();
        for needle in [
            "conv2d", "conv_transpose2d", "batch_norm2d train", "batch_norm2d eval", "linear", "relu",
            "leaky", "prelu", "rrelu", "elu", "selu", "celu", "crelu", "reborn (bn train)",
            "reborn (bn eval)", "reborn-nc",
        ] {
            assert!(names.iter().any(|n| n.starts_with(needle)), "missing {needle}");
        }
    }
}

//! Xavier initialization, SGD with momentum and weight decay, and the
//! two-phase learning-rate schedule.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::layers::{Param, ParamKind};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_WEIGHT_DECAY: f64 = 0.0005;
pub const DEFAULT_BASE_LR: f64 = 0.001;
pub const DEFAULT_DROP_LR: f64 = 0.0001;

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> Result<f64> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::InvalidConfig(format!(
            "xavier fans must be positive (got {fan_in}, {fan_out})"
        )));
    }
    Ok((6.0 / (fan_in + fan_out) as f64).sqrt())
}

/// Uniform Xavier draw in `[-a, a]`, `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<T: Scalar>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut Rng,
) -> Result<Tensor<T>> {
    let a = xavier_bound(fan_in, fan_out)?;
    Tensor::from_fn(shape.to_vec(), |_| T::lit(rng.uniform_range(-a, a)))
}

/// Fans of a `(C_out, C_in, k, k)` conv weight or a `(C_in, C_out, k, k)`
/// transposed-conv weight: `(C_in·k², C_out·k²)` with channels taken in the
/// layer's own orientation.
pub fn conv_fans(in_channels: usize, out_channels: usize, kernel: usize) -> (usize, usize) {
    let area = kernel * kernel;
    (in_channels * area, out_channels * area)
}

/// Anything exposing named learned parameters.
pub trait ParamSet<T: Scalar> {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>));
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
    /// Whether batch-norm gamma/beta receive weight decay.
    pub decay_norm_params: bool,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            momentum: DEFAULT_MOMENTUM,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            decay_norm_params: true,
        }
    }
}

/// Classic momentum SGD: `g' = g + λw; v ← μv + g'; w ← w − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub config: SgdConfig,
    velocity: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(config: SgdConfig) -> Self {
        Sgd {
            config,
            velocity: BTreeMap::new(),
        }
    }

    /// Applies one update to every parameter and zeroes the gradients.
    pub fn step(&mut self, params: &mut dyn ParamSet<T>, lr: f64) -> Result<()> {
        let lr = T::lit(lr);
        let mu = T::lit(self.config.momentum);
        let mut failure = None;
        params.for_each_param(&mut |name, p| {
            if failure.is_some() {
                return;
            }
            if p.value.shape() != p.grad.shape() {
                failure = Some(Error::ShapeMismatch {
                    op: "sgd_step",
                    left: p.value.shape().to_vec(),
                    right: p.grad.shape().to_vec(),
                });
                return;
            }
            let decays = self.config.decay_norm_params
                || !matches!(p.kind, ParamKind::NormScale | ParamKind::NormShift);
            let lambda = if decays {
                T::lit(self.config.weight_decay)
            } else {
                T::zero()
            };
            let v = self
                .velocity
                .entry(name.to_string())
                .or_insert_with(|| p.value.zeros_like());
            if v.shape() != p.value.shape() {
                failure = Some(Error::ShapeMismatch {
                    op: "sgd_step",
                    left: v.shape().to_vec(),
                    right: p.value.shape().to_vec(),
                });
                return;
            }
            let w = p.value.data_mut();
            let g = p.grad.data_mut();
            for ((wi, gi), vi) in w.iter_mut().zip(g.iter_mut()).zip(v.data_mut()) {
                let gd = *gi + lambda * *wi;
                *vi = mu * *vi + gd;
                *wi = *wi - lr * *vi;
                *gi = T::zero();
            }
        });
        failure.map_or(Ok(()), Err)
    }

    pub fn velocities(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.velocity.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn set_velocity(&mut self, name: &str, v: Tensor<T>) {
        self.velocity.insert(name.to_string(), v);
    }
}

/// `base_lr` for the first `ceil(total_epochs / 2)` epochs, then `drop_lr`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub drop_lr: f64,
    pub total_epochs: usize,
}

impl LrSchedule {
    pub fn new(total_epochs: usize) -> Self {
        LrSchedule {
            base_lr: DEFAULT_BASE_LR,
            drop_lr: DEFAULT_DROP_LR,
            total_epochs,
        }
    }

    pub fn lr_at(&self, epoch: usize) -> Result<f64> {
        if epoch >= self.total_epochs {
            return Err(Error::InvalidConfig(format!(
                "epoch {epoch} outside schedule of {} epochs",
                self.total_epochs
            )));
        }
        Ok(if epoch < self.total_epochs.div_ceil(2) {
            self.base_lr
        } else {
            self.drop_lr
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct One(Param<f64>);

    impl ParamSet<f64> for One {
        fn for_each_param(&mut self, f: &mut dyn FnMut(&str, &mut Param<f64>)) {
            f("w", &mut self.0);
        }
    }

    fn one(w: f64, g: f64) -> One {
        let mut p = Param::new(Tensor::full(vec![1], w).unwrap(), ParamKind::ConvWeight);
        p.grad.fill(g);
        One(p)
    }

    fn sgd(momentum: f64, weight_decay: f64) -> Sgd<f64> {
        Sgd::new(SgdConfig {
            momentum,
            weight_decay,
            decay_norm_params: true,
        })
    }

    #[test]
    fn xavier_bound_closed_form() {
        let a = xavier_bound(288, 576).unwrap();
        assert!((a - (6.0f64 / 864.0).sqrt()).abs() < 1e-15);
        assert!((a - 0.08333).abs() < 1e-5);
        assert!(xavier_bound(0, 3).is_err());
    }

    #[test]
    fn xavier_samples_bounded_and_deterministic() {
        let (fi, fo) = conv_fans(32, 64, 3);
        assert_eq!((fi, fo), (288, 576));
        let a = xavier_bound(fi, fo).unwrap();
        let w: Tensor<f64> = xavier_uniform(&[64, 32, 3, 3], fi, fo, &mut Rng::new(1)).unwrap();
        assert!(w.data().iter().all(|v| v.abs() <= a));
        let n = w.len() as f64;
        assert!(w.mean().abs() < 3.0 * a / (3.0 * n).sqrt());
        let again: Tensor<f64> = xavier_uniform(&[64, 32, 3, 3], fi, fo, &mut Rng::new(1)).unwrap();
        assert_eq!(w, again);
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = one(1.0, 0.5);
        let mut opt = sgd(0.9, 0.0);
        opt.step(&mut p, 0.1).unwrap();
        assert!((p.0.value.data()[0] - 0.95).abs() < 1e-15);
        assert_eq!(opt.velocities().next().unwrap().1.data(), &[0.5]);
        assert_eq!(p.0.grad.data(), &[0.0]);
    }

    #[test]
    fn decay_only_update_shrinks_weight() {
        let mut p = one(2.0, 0.0);
        let mut opt = sgd(0.9, 0.0005);
        opt.step(&mut p, 0.1).unwrap();
        assert!((p.0.value.data()[0] - (2.0 - 0.1 * 0.0005 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn two_steps_accumulate_geometrically() {
        let (w0, g, lr) = (1.0, 0.3, 0.1);
        let mut p = one(w0, g);
        let mut opt = sgd(0.9, 0.0);
        opt.step(&mut p, lr).unwrap();
        p.0.grad.fill(g);
        opt.step(&mut p, lr).unwrap();
        let expect = w0 - lr * (g + 1.9 * g);
        assert!((p.0.value.data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn plain_gradient_descent_without_momentum_or_decay() {
        let mut p = one(0.7, -0.25);
        let mut opt = sgd(0.0, 0.0);
        opt.step(&mut p, 0.2).unwrap();
        assert_eq!(p.0.value.data()[0], 0.7 - 0.2 * -0.25);
    }

    #[test]
    fn update_follows_l2_regularized_gradient() {
        // loss = 0.5 (w - 3)^2 + 0.5 λ w^2; first momentum step moves by -lr·dloss/dw
        let (w0, lambda, lr) = (1.2, 0.0005, 0.01);
        let loss = |w: f64| 0.5 * (w - 3.0f64).powi(2) + 0.5 * lambda * w * w;
        let h = 1e-6;
        let fd = (loss(w0 + h) - loss(w0 - h)) / (2.0 * h);
        let mut p = one(w0, w0 - 3.0);
        let mut opt = sgd(0.9, lambda);
        opt.step(&mut p, lr).unwrap();
        assert!((p.0.value.data()[0] - (w0 - lr * fd)).abs() < 1e-10);
    }

    #[test]
    fn norm_params_can_skip_decay() {
        let mut p = One(Param::new(Tensor::full(vec![1], 1.0).unwrap(), ParamKind::NormScale));
        let mut opt = Sgd::new(SgdConfig {
            momentum: 0.9,
            weight_decay: 0.5,
            decay_norm_params: false,
        });
        opt.step(&mut p, 0.1).unwrap();
        assert_eq!(p.0.value.data()[0], 1.0);
    }

    #[test]
    fn velocity_shape_change_is_rejected() {
        let mut opt = sgd(0.9, 0.0);
        opt.set_velocity("w", Tensor::zeros(vec![2]).unwrap());
        assert!(opt.step(&mut one(1.0, 1.0), 0.1).is_err());
    }

    #[test]
    fn schedule_splits_at_half() {
        let s = LrSchedule::new(160);
        assert_eq!(s.lr_at(79).unwrap(), 0.001);
        assert_eq!(s.lr_at(80).unwrap(), 0.0001);
        assert_eq!(LrSchedule::new(80).lr_at(40).unwrap(), 0.0001);
        assert_eq!(LrSchedule::new(80).lr_at(39).unwrap(), 0.001);
        let s = LrSchedule::new(2);
        assert_eq!(s.lr_at(0).unwrap(), 0.001);
        assert_eq!(s.lr_at(1).unwrap(), 0.0001);
        assert!(s.lr_at(2).is_err());
        // odd totals keep the longer half at the base rate
        assert_eq!(LrSchedule::new(5).lr_at(2).unwrap(), 0.001);
        assert_eq!(LrSchedule::new(5).lr_at(3).unwrap(), 0.0001);
    }
}

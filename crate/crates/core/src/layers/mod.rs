//! Differentiable building blocks with explicit forward and backward passes.
//!
//! Every layer caches whatever its backward pass needs during `forward`, so a
//! `forward` / `backward` pair must be sequenced on the same instance.
//! Gradients accumulate into each [`Param`]'s `grad` buffer until the
//! optimizer zeroes them.

mod batchnorm;
mod conv;
mod linear;
mod loss;
mod pool;

pub(crate) use conv::probe4 as conv_probe;
pub use batchnorm::BatchNorm2d;
pub use conv::{Conv2d, ConvTranspose2d};
pub use linear::Linear;
pub use loss::softmax_cross_entropy;
pub use pool::{Flatten, GlobalAvgPool};

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Eval,
}

/// What a learned tensor is, for optimizer policy (e.g. weight decay).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    ConvWeight,
    LinearWeight,
    Bias,
    NormScale,
    NormShift,
    Slope,
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub kind: ParamKind,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>, kind: ParamKind) -> Self {
        let grad = value.zeros_like();
        Param { value, grad, kind }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// A link in a static sequential chain.
pub trait Layer<T: Scalar> {
    /// Short kind label used in reports.
    fn kind(&self) -> &'static str;

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>>;

    /// Consumes the cache from the preceding `forward`, accumulates parameter
    /// gradients and returns the gradient with respect to the input.
    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>>;

    /// Output shape for an input of shape `input`, without running the layer.
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>>;

    fn visit_params(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut Param<T>)) {}

    /// Non-learned state that still belongs in a checkpoint.
    fn visit_buffers(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut Tensor<T>)) {}
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

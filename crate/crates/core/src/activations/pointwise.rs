use crate::error::{Error, Result};
use crate::layers::{Layer, Mode};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PointwiseKind {
    Relu,
    Leaky { slope: f64 },
    RRelu { lower: f64, upper: f64 },
    Elu { alpha: f64 },
    Selu,
    Celu { alpha: f64 },
}

impl PointwiseKind {
    /// `(f(x), f'(x))` for kinds with a fixed negative branch. RReLU uses its
    /// eval-mode slope here.
    pub fn eval(self, x: f64) -> (f64, f64) {
        match self {
            PointwiseKind::Relu => {
                if x > 0.0 {
                    (x, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
            PointwiseKind::Leaky { slope } => leaky(x, slope),
            PointwiseKind::RRelu { lower, upper } => leaky(x, 0.5 * (lower + upper)),
            PointwiseKind::Elu { alpha } => {
                if x > 0.0 {
                    (x, 1.0)
                } else {
                    let e = x.exp();
                    (alpha * (e - 1.0), alpha * e)
                }
            }
            PointwiseKind::Selu => {
                if x > 0.0 {
                    (SELU_LAMBDA * x, SELU_LAMBDA)
                } else {
                    let e = x.exp();
                    (SELU_LAMBDA * SELU_ALPHA * (e - 1.0), SELU_LAMBDA * SELU_ALPHA * e)
                }
            }
            PointwiseKind::Celu { alpha } => {
                if x > 0.0 {
                    (x, 1.0)
                } else {
                    let e = (x / alpha).exp();
                    (alpha * (e - 1.0), e)
                }
            }
        }
    }
}

fn leaky(x: f64, slope: f64) -> (f64, f64) {
    if x > 0.0 {
        (x, 1.0)
    } else {
        (slope * x, slope)
    }
}

/// Elementwise activation with a closed-form derivative.
#[derive(Debug, Clone)]
pub struct Pointwise<T> {
    pub kind: PointwiseKind,
    rng: Option<Rng>,
    /// Per-element derivative from the last forward.
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Pointwise<T> {
    pub fn new(kind: PointwiseKind) -> Self {
        Pointwise {
            kind,
            rng: None,
            cache: None,
        }
    }

    /// RReLU: slopes drawn uniformly from `[lower, upper)` per element in
    /// train mode, fixed at the midpoint in eval mode.
    pub fn rrelu(lower: f64, upper: f64, rng: Rng) -> Self {
        Pointwise {
            kind: PointwiseKind::RRelu { lower, upper },
            rng: Some(rng),
            cache: None,
        }
    }

    /// Forward pass returning `(y, dy/dx)` elementwise.
    pub fn apply(&mut self, x: &Tensor<T>, mode: Mode) -> (Tensor<T>, Tensor<T>) {
        let mut y = x.zeros_like();
        let mut d = x.zeros_like();
        match (self.kind, mode, self.rng.as_mut()) {
            (PointwiseKind::RRelu { lower, upper }, Mode::Train, Some(rng)) => {
                for ((yi, di), &xi) in y.data_mut().iter_mut().zip(d.data_mut()).zip(x.data()) {
                    let slope = T::lit(rng.uniform_range(lower, upper));
                    if xi >= T::zero() {
                        *yi = xi;
                        *di = T::one();
                    } else {
                        *yi = slope * xi;
                        *di = slope;
                    }
                }
            }
            (PointwiseKind::Relu, _, _) => {
                for ((yi, di), &xi) in y.data_mut().iter_mut().zip(d.data_mut()).zip(x.data()) {
                    if xi > T::zero() {
                        *yi = xi;
                        *di = T::one();
                    }
                }
            }
            (kind, _, _) => {
                for ((yi, di), &xi) in y.data_mut().iter_mut().zip(d.data_mut()).zip(x.data()) {
                    let (v, g) = kind.eval(xi.as_f64());
                    *yi = T::lit(v);
                    *di = T::lit(g);
                }
            }
        }
        (y, d)
    }
}

impl<T: Scalar> Layer<T> for Pointwise<T> {
    fn kind(&self) -> &'static str {
        match self.kind {
            PointwiseKind::Relu => "relu",
            PointwiseKind::Leaky { .. } => "leaky",
            PointwiseKind::RRelu { .. } => "rrelu",
            PointwiseKind::Elu { .. } => "elu",
            PointwiseKind::Selu => "selu",
            PointwiseKind::Celu { .. } => "celu",
        }
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (y, d) = self.apply(x, mode);
        self.cache = Some(d);
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let d = self.cache.take().ok_or(Error::NoCache("activation"))?;
        d.mul(grad_out)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(input.to_vec())
    }
}

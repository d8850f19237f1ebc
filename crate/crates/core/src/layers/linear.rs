use super::{join, Layer, Mode, Param, ParamKind};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Fully connected layer on `(N, in_features)` inputs.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    /// `(out_features, in_features)`
    pub weight: Param<T>,
    pub bias: Param<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_features: usize, out_features: usize) -> Result<Self> {
        Ok(Linear {
            weight: Param::new(
                Tensor::zeros(vec![out_features, in_features])?,
                ParamKind::LinearWeight,
            ),
            bias: Param::new(Tensor::zeros(vec![out_features])?, ParamKind::Bias),
            cache: None,
        })
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.shape()[0]
    }

    fn rows(&self, x: &Tensor<T>) -> Result<usize> {
        match *x.shape() {
            [n, f] if f == self.in_features() => Ok(n),
            [_, f] => Err(Error::ChannelMismatch {
                op: "linear",
                expected: self.in_features(),
                got: f,
            }),
            _ => Err(Error::RankMismatch {
                op: "linear",
                expected: 2,
                got: x.rank(),
            }),
        }
    }

    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.rows(x)?;
        let (fin, fout) = (self.in_features(), self.out_features());
        let mut out = vec![T::zero(); n * fout];
        for row in out.chunks_mut(fout) {
            row.copy_from_slice(self.bias.value.data());
        }
        // y = x · Wᵀ + b
        T::gemm(
            n,
            fin,
            fout,
            T::one(),
            x.data(),
            fin as isize,
            1,
            self.weight.value.data(),
            1,
            fin as isize,
            T::one(),
            &mut out,
        );
        Tensor::new(vec![n, fout], out)
    }

    pub fn backward_from(&mut self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.rows(x)?;
        let (fin, fout) = (self.in_features(), self.out_features());
        if grad_out.shape() != [n, fout] {
            return Err(Error::ShapeMismatch {
                op: "linear_backward",
                left: vec![n, fout],
                right: grad_out.shape().to_vec(),
            });
        }
        let g = grad_out.data();
        // dW += Gᵀ · x
        T::gemm(
            fout,
            n,
            fin,
            T::one(),
            g,
            1,
            fout as isize,
            x.data(),
            fin as isize,
            1,
            T::one(),
            self.weight.grad.data_mut(),
        );
        let db = self.bias.grad.data_mut();
        for row in g.chunks(fout) {
            for (d, &v) in db.iter_mut().zip(row) {
                *d = *d + v;
            }
        }
        // dx = G · W
        let mut dx = vec![T::zero(); n * fin];
        T::gemm(
            n,
            fout,
            fin,
            T::one(),
            g,
            fout as isize,
            1,
            self.weight.value.data(),
            fin as isize,
            1,
            T::zero(),
            &mut dx,
        );
        Tensor::new(vec![n, fin], dx)
    }
}

impl<T: Scalar> Layer<T> for Linear<T> {
    fn kind(&self) -> &'static str {
        "linear"
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let y = self.apply(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.take().ok_or(Error::NoCache("linear"))?;
        self.backward_from(&x, grad_out)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *input {
            [n, f] if f == self.in_features() => Ok(vec![n, self.out_features()]),
            [_, f] => Err(Error::ChannelMismatch {
                op: "linear",
                expected: self.in_features(),
                got: f,
            }),
            _ => Err(Error::RankMismatch {
                op: "linear",
                expected: 2,
                got: input.len(),
            }),
        }
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

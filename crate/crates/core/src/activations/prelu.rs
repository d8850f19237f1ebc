use crate::error::{Error, Result};
use crate::layers::{join, Layer, Mode, Param, ParamKind};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Leaky rectifier with one learned negative slope per channel.
#[derive(Debug, Clone)]
pub struct PRelu<T> {
    pub slope: Param<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> PRelu<T> {
    pub fn new(channels: usize, init: f64) -> Result<Self> {
        Ok(PRelu {
            slope: Param::new(Tensor::full(vec![channels], T::lit(init))?, ParamKind::Slope),
            cache: None,
        })
    }

    fn check(&self, x: &Tensor<T>) -> Result<[usize; 4]> {
        let dims = x.dims4("prelu")?;
        if dims[1] != self.slope.value.len() {
            return Err(Error::ChannelMismatch {
                op: "prelu",
                expected: self.slope.value.len(),
                got: dims[1],
            });
        }
        Ok(dims)
    }
}

impl<T: Scalar> Layer<T> for PRelu<T> {
    fn kind(&self) -> &'static str {
        "prelu"
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let [_, c, h, w] = self.check(x)?;
        let slopes = self.slope.value.data();
        let mut y = x.clone();
        for (i, chunk) in y.data_mut().chunks_mut(h * w).enumerate() {
            let a = slopes[i % c];
            for v in chunk.iter_mut().filter(|v| **v <= T::zero()) {
                *v = a * *v;
            }
        }
        self.cache = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.take().ok_or(Error::NoCache("prelu"))?;
        x.expect_same_shape(grad_out, "prelu_backward")?;
        let [_, c, h, w] = self.check(&x)?;
        let plane = h * w;
        let mut dx = grad_out.clone();
        for (i, (dchunk, xchunk)) in dx
            .data_mut()
            .chunks_mut(plane)
            .zip(x.data().chunks(plane))
            .enumerate()
        {
            let ch = i % c;
            let a = self.slope.value.data()[ch];
            let mut da = T::zero();
            for (d, &xv) in dchunk.iter_mut().zip(xchunk) {
                if xv <= T::zero() {
                    da = da + *d * xv;
                    *d = *d * a;
                }
            }
            let slot = &mut self.slope.grad.data_mut()[ch];
            *slot = *slot + da;
        }
        Ok(dx)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(input.to_vec())
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "slope"), &mut self.slope);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_channel_slopes() {
        let mut p = PRelu::<f64>::new(2, 0.25).unwrap();
        p.slope.value = Tensor::new(vec![2], vec![0.5, 0.1]).unwrap();
        let x = Tensor::new(vec![1, 2, 1, 2], vec![-2.0, 3.0, -10.0, 1.0]).unwrap();
        let y = p.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.data(), &[-1.0, 3.0, -1.0, 1.0]);
        let dx = p.backward(&Tensor::full(vec![1, 2, 1, 2], 1.0).unwrap()).unwrap();
        assert_eq!(dx.data(), &[0.5, 1.0, 0.1, 1.0]);
        assert_eq!(p.slope.grad.data(), &[-2.0, -10.0]);
    }

    #[test]
    fn requires_rank_four() {
        let mut p = PRelu::<f64>::new(2, 0.25).unwrap();
        assert!(p.forward(&Tensor::zeros(vec![2, 2]).unwrap(), Mode::Eval).is_err());
    }
}

use crate::error::{Error, Result};
use crate::layers::{Layer, Mode};
use crate::scalar::Scalar;
use crate::tensor::{concat_channels, Tensor};

/// Concatenated ReLU: `[relu(x), relu(-x)]` along channels, doubling them.
#[derive(Debug, Clone, Default)]
pub struct CRelu<T> {
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> CRelu<T> {
    pub fn new() -> Self {
        CRelu { cache: None }
    }
}

impl<T: Scalar> Layer<T> for CRelu<T> {
    fn kind(&self) -> &'static str {
        "crelu"
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        x.dims4("crelu")?;
        let y = concat_channels(&[&x.max_zero(), &x.neg().max_zero()])?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.take().ok_or(Error::NoCache("crelu"))?;
        let c = x.shape()[1];
        let pos = grad_out.slice_channels(0, c)?;
        let neg = grad_out.slice_channels(c, 2 * c)?;
        pos.expect_same_shape(&x, "crelu_backward")?;
        let mut dx = x.zeros_like();
        for (((d, &xv), &gp), &gn) in dx
            .data_mut()
            .iter_mut()
            .zip(x.data())
            .zip(pos.data())
            .zip(neg.data())
        {
            if xv > T::zero() {
                *d = gp;
            } else if xv < T::zero() {
                *d = -gn;
            }
        }
        Ok(dx)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mut out = crate::layers::conv_probe(input, "crelu")?.to_vec();
        out[1] *= 2;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rng;

    #[test]
    fn doubles_channels_and_reconstructs_input() {
        let mut rng = Rng::new(2);
        let x = Tensor::<f64>::from_fn(vec![1, 4, 8, 8], |_| rng.normal()).unwrap();
        let mut a = CRelu::new();
        let y = a.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.shape(), &[1, 8, 8, 8]);
        let diff = y.slice_channels(0, 4).unwrap().sub(&y.slice_channels(4, 8).unwrap()).unwrap();
        assert_eq!(diff, x);
    }

    #[test]
    fn nonnegative_input_leaves_second_slab_zero() {
        let x = Tensor::<f64>::from_fn(vec![2, 3, 2, 2], |i| i as f64).unwrap();
        let y = CRelu::new().forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.slice_channels(3, 6).unwrap().max_abs(), 0.0);
    }
}

use super::conv::probe4;
use super::{Layer, Mode};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `(N, C, H, W)` → `(N, C·H·W)`.
#[derive(Debug, Clone, Default)]
pub struct Flatten {
    cache: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Scalar> Layer<T> for Flatten {
    fn kind(&self) -> &'static str {
        "flatten"
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let shape = <Self as Layer<T>>::output_shape(self, x.shape())?;
        self.cache = Some(x.shape().to_vec());
        x.clone().reshape(shape)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.cache.take().ok_or(Error::NoCache("flatten"))?;
        grad_out.clone().reshape(shape)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let [n, c, h, w] = probe4(input, "flatten")?;
        Ok(vec![n, c * h * w])
    }
}

/// Spatial mean per channel: `(N, C, H, W)` → `(N, C)`.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    cache: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Scalar> Layer<T> for GlobalAvgPool {
    fn kind(&self) -> &'static str {
        "global_avg_pool"
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let [n, c, h, w] = x.dims4("global_avg_pool")?;
        let plane = h * w;
        let inv = T::one() / T::lit(plane as f64);
        let data = x
            .data()
            .chunks(plane)
            .map(|chunk| chunk.iter().fold(T::zero(), |a, &v| a + v) * inv)
            .collect();
        self.cache = Some(x.shape().to_vec());
        Tensor::new(vec![n, c], data)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.cache.take().ok_or(Error::NoCache("global_avg_pool"))?;
        let plane = shape[2] * shape[3];
        if grad_out.shape() != [shape[0], shape[1]] {
            return Err(Error::ShapeMismatch {
                op: "global_avg_pool_backward",
                left: vec![shape[0], shape[1]],
                right: grad_out.shape().to_vec(),
            });
        }
        let inv = T::one() / T::lit(plane as f64);
        let mut data = Vec::with_capacity(grad_out.len() * plane);
        for &g in grad_out.data() {
            data.extend(std::iter::repeat_n(g * inv, plane));
        }
        Tensor::new(shape, data)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let [n, c, _, _] = probe4(input, "global_avg_pool")?;
        Ok(vec![n, c])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooling_averages_and_spreads_gradient() {
        let mut pool = GlobalAvgPool::new();
        let x = Tensor::<f64>::new(vec![1, 2, 2, 1], vec![1., 3., -2., 2.]).unwrap();
        let y = pool.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.data(), &[2., 0.]);
        let dx = pool
            .backward(&Tensor::new(vec![1, 2], vec![4., -2.]).unwrap())
            .unwrap();
        assert_eq!(dx.data(), &[2., 2., -1., -1.]);
    }

    #[test]
    fn flatten_round_trips_shape() {
        let mut flat = Flatten::new();
        let x = Tensor::<f32>::zeros(vec![2, 3, 2, 2]).unwrap();
        let y = flat.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.shape(), &[2, 12]);
        assert_eq!(flat.backward(&y).unwrap().shape(), x.shape());
    }
}

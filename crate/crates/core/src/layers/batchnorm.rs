use super::{join, Layer, Mode, Param, ParamKind};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_STAT_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
struct Cache<T> {
    x_hat: Tensor<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

/// Per-channel batch normalization over (N, H, W).
///
/// Train mode normalizes with the current batch's biased statistics and
/// folds them into the running estimates; eval mode uses only the running
/// estimates.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: T,
    pub stat_momentum: T,
    cache: Option<Cache<T>>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(BatchNorm2d {
            gamma: Param::new(Tensor::full(vec![channels], T::one())?, ParamKind::NormScale),
            beta: Param::new(Tensor::zeros(vec![channels])?, ParamKind::NormShift),
            running_mean: Tensor::zeros(vec![channels])?,
            running_var: Tensor::full(vec![channels], T::one())?,
            eps: T::lit(DEFAULT_EPS),
            stat_momentum: T::lit(DEFAULT_STAT_MOMENTUM),
            cache: None,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    fn check(&self, x: &Tensor<T>) -> Result<[usize; 4]> {
        let dims = x.dims4("batch_norm2d")?;
        if dims[1] != self.channels() {
            return Err(Error::ChannelMismatch {
                op: "batch_norm2d",
                expected: self.channels(),
                got: dims[1],
            });
        }
        Ok(dims)
    }

    /// Normalized, pre-affine values and the per-channel inverse std.
    fn normalize(&mut self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Vec<T>)> {
        let [n, c, h, w] = self.check(x)?;
        let (mean, var) = match mode {
            Mode::Train => {
                if n * h * w < 2 {
                    return Err(Error::InvalidConfig(
                        "batch norm in train mode needs at least 2 values per channel".into(),
                    ));
                }
                let mean = x.channel_mean()?;
                let var = x.channel_var()?;
                let m = self.stat_momentum;
                let keep = T::one() - m;
                for ch in 0..c {
                    let rm = &mut self.running_mean.data_mut()[ch];
                    *rm = keep * *rm + m * mean[ch];
                    let rv = &mut self.running_var.data_mut()[ch];
                    *rv = keep * *rv + m * var[ch];
                }
                (mean, var)
            }
            Mode::Eval => (
                self.running_mean.data().to_vec(),
                self.running_var.data().to_vec(),
            ),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + self.eps).sqrt()).collect();
        let plane = h * w;
        let mut x_hat = x.clone();
        for (i, chunk) in x_hat.data_mut().chunks_mut(plane).enumerate() {
            let ch = i % c;
            for v in chunk {
                *v = (*v - mean[ch]) * inv_std[ch];
            }
        }
        Ok((x_hat, inv_std))
    }

    fn affine(&self, x_hat: &Tensor<T>) -> Result<Tensor<T>> {
        let [_, c, h, w] = x_hat.dims4("batch_norm2d")?;
        let gamma = self.gamma.value.data();
        let beta = self.beta.value.data();
        let mut y = x_hat.clone();
        for (i, chunk) in y.data_mut().chunks_mut(h * w).enumerate() {
            let ch = i % c;
            for v in chunk {
                *v = gamma[ch] * *v + beta[ch];
            }
        }
        Ok(y)
    }

    /// Pre-affine normalized output; updates running statistics in train mode.
    pub fn normalize_only(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        Ok(self.normalize(x, mode)?.0)
    }
}

impl<T: Scalar> Layer<T> for BatchNorm2d<T> {
    fn kind(&self) -> &'static str {
        "batch_norm2d"
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (x_hat, inv_std) = self.normalize(x, mode)?;
        let y = self.affine(&x_hat)?;
        self.cache = Some(Cache {
            x_hat,
            inv_std,
            mode,
        });
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let Cache {
            x_hat,
            inv_std,
            mode,
        } = self.cache.take().ok_or(Error::NoCache("batch_norm2d"))?;
        x_hat.expect_same_shape(grad_out, "batch_norm2d_backward")?;
        let [n, c, h, w] = x_hat.dims4("batch_norm2d_backward")?;
        let plane = h * w;
        let count = T::lit((n * plane) as f64);
        let g = grad_out.data();
        let xh = x_hat.data();

        // per-channel Σg and Σg·x̂
        let mut sum_g = vec![T::zero(); c];
        let mut sum_gx = vec![T::zero(); c];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * plane;
                for i in base..base + plane {
                    sum_g[ch] = sum_g[ch] + g[i];
                    sum_gx[ch] = sum_gx[ch] + g[i] * xh[i];
                }
            }
        }
        for ch in 0..c {
            let gb = &mut self.beta.grad.data_mut()[ch];
            *gb = *gb + sum_g[ch];
            let gg = &mut self.gamma.grad.data_mut()[ch];
            *gg = *gg + sum_gx[ch];
        }

        let gamma = self.gamma.value.data();
        let mut dx = vec![T::zero(); g.len()];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * plane;
                let scale = gamma[ch] * inv_std[ch];
                match mode {
                    Mode::Eval => {
                        for i in base..base + plane {
                            dx[i] = g[i] * scale;
                        }
                    }
                    Mode::Train => {
                        let mean_g = sum_g[ch] / count;
                        let mean_gx = sum_gx[ch] / count;
                        for i in base..base + plane {
                            dx[i] = scale * (g[i] - mean_g - xh[i] * mean_gx);
                        }
                    }
                }
            }
        }
        Tensor::new(grad_out.shape().to_vec(), dx)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let dims = super::conv::probe4(input, "batch_norm2d")?;
        if dims[1] != self.channels() {
            return Err(Error::ChannelMismatch {
                op: "batch_norm2d",
                expected: self.channels(),
                got: dims[1],
            });
        }
        Ok(input.to_vec())
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = Rng::new(seed);
        Tensor::from_fn(shape.to_vec(), |_| rng.normal() * 3.0 + 1.5).unwrap()
    }

    #[test]
    fn eval_identity_configuration() {
        let mut bn = BatchNorm2d::<f64>::new(3).unwrap();
        let x = random(&[2, 3, 4, 4], 1);
        let y = bn.forward(&x, Mode::Eval).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1e-12));
        }
    }

    #[test]
    fn train_two_values_normalize_to_unit() {
        let mut bn = BatchNorm2d::<f64>::new(1).unwrap();
        bn.eps = 0.0;
        let x = Tensor::new(vec![2, 1, 1, 1], vec![1.0, 3.0]).unwrap();
        let y = bn.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.data(), &[-1.0, 1.0]);
        // running stats: 0.9 * 0 + 0.1 * 2, 0.9 * 1 + 0.1 * 1
        assert!((bn.running_mean.data()[0] - 0.2).abs() < 1e-15);
        assert!((bn.running_var.data()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn train_output_is_standardized() {
        let mut bn = BatchNorm2d::<f64>::new(4).unwrap();
        let x = random(&[3, 4, 5, 5], 2);
        let y = bn.normalize_only(&x, Mode::Train).unwrap();
        for (m, v) in y.channel_mean().unwrap().iter().zip(y.channel_var().unwrap()) {
            assert!(m.abs() < 1e-6);
            assert!((v - 1.0).abs() < 1e-5);
        }
        assert!(bn.running_var.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn single_value_channels_rejected_in_train() {
        let mut bn = BatchNorm2d::<f64>::new(2).unwrap();
        let x = Tensor::zeros(vec![1, 2, 1, 1]).unwrap();
        assert!(bn.forward(&x, Mode::Train).is_err());
        assert!(bn.forward(&x, Mode::Eval).is_ok());
    }

    #[test]
    fn constant_grad_has_zero_mean_input_grad() {
        let mut bn = BatchNorm2d::<f64>::new(2).unwrap();
        let x = random(&[2, 2, 3, 3], 3);
        let y = bn.forward(&x, Mode::Train).unwrap();
        let dx = bn.backward(&Tensor::full(y.shape().to_vec(), 0.7).unwrap()).unwrap();
        for m in dx.channel_mean().unwrap() {
            assert!(m.abs() < 1e-12);
        }
    }

    #[test]
    fn eval_backward_is_affine_scale() {
        let mut bn = BatchNorm2d::<f64>::new(2).unwrap();
        bn.gamma.value = Tensor::new(vec![2], vec![2.0, -0.5]).unwrap();
        bn.running_var = Tensor::new(vec![2], vec![4.0, 0.25]).unwrap();
        let x = random(&[1, 2, 2, 2], 4);
        bn.forward(&x, Mode::Eval).unwrap();
        let g = random(&[1, 2, 2, 2], 5);
        let dx = bn.backward(&g).unwrap();
        for (i, (&d, &gv)) in dx.data().iter().zip(g.data()).enumerate() {
            let ch = i / 4;
            let scale = [2.0, -0.5][ch] / ([4.0, 0.25][ch] + 1e-5f64).sqrt();
            assert!((d - gv * scale).abs() < 1e-14);
        }
    }
}

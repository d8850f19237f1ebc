//! The reborn block.
//!
//! ```text
//!            ┌── relu ──────────────────────────────┐
//!   X ───────┤                                      ├─ concat ─ 1×1 conv ─▶
//!            └── min(·,0) ─ deconv ─ batch norm ────┘
//! ```
//!
//! The positive phase passes through a plain rectifier. The negative phase
//! keeps its sign, goes through a same-size transposed convolution and batch
//! normalization, and is concatenated after the positive slab. A 1×1
//! convolution compresses the `2C` channels back to `C`. No nonlinearity
//! follows the compression. The no-compress variant drops the 1×1 conv and
//! hands `2C` channels to the next layer.

use crate::error::{Error, Result};
use crate::layers::{join, BatchNorm2d, Conv2d, ConvTranspose2d, Layer, Mode, Param};
use crate::optim::{conv_fans, xavier_uniform};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{concat_channels, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Compression {
    Conv1x1,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RebornConfig {
    pub deconv_kernel: usize,
    pub deconv_stride: usize,
    pub deconv_padding: usize,
    /// Channel multiple fed to the compression (two concatenated slabs).
    pub decay_ratio: usize,
    pub compress: Compression,
}

impl Default for RebornConfig {
    fn default() -> Self {
        RebornConfig {
            deconv_kernel: 3,
            deconv_stride: 1,
            deconv_padding: 1,
            decay_ratio: 2,
            compress: Compression::Conv1x1,
        }
    }
}

impl RebornConfig {
    pub fn no_compress() -> Self {
        RebornConfig {
            compress: Compression::None,
            ..Self::default()
        }
    }

    /// The deconvolution must keep the spatial extent for every input size:
    /// `(H − 1)·s − 2p + k == H` for all `H` means `s = 1` and `k = 2p + 1`.
    pub fn validate(&self) -> Result<()> {
        if self.deconv_stride != 1 || self.deconv_kernel != 2 * self.deconv_padding + 1 {
            return Err(Error::InvalidConfig(format!(
                "reborn deconv (kernel {}, stride {}, padding {}) does not preserve spatial size",
                self.deconv_kernel, self.deconv_stride, self.deconv_padding
            )));
        }
        if self.decay_ratio != 2 {
            return Err(Error::InvalidConfig(format!(
                "reborn concatenates two slabs, so the decay ratio must be 2 (got {})",
                self.decay_ratio
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Cache<T> {
    x: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct RebornBlock<T> {
    pub deconv: ConvTranspose2d<T>,
    pub bn: BatchNorm2d<T>,
    pub compress: Option<Conv2d<T>>,
    pub config: RebornConfig,
    cache: Option<Cache<T>>,
}

impl<T: Scalar> RebornBlock<T> {
    /// Zero weights; see [`RebornBlock::xavier`] for a trainable start.
    pub fn new(channels: usize, config: RebornConfig) -> Result<Self> {
        config.validate()?;
        let deconv = ConvTranspose2d::new(
            channels,
            channels,
            config.deconv_kernel,
            config.deconv_stride,
            config.deconv_padding,
            false,
        )?;
        let compress = match config.compress {
            Compression::Conv1x1 => Some(Conv2d::new(
                config.decay_ratio * channels,
                channels,
                1,
                1,
                0,
                true,
            )?),
            Compression::None => None,
        };
        Ok(RebornBlock {
            deconv,
            bn: BatchNorm2d::new(channels)?,
            compress,
            config,
            cache: None,
        })
    }

    /// Xavier-uniform deconv and compression weights, zero bias.
    pub fn xavier(channels: usize, config: RebornConfig, rng: &mut Rng) -> Result<Self> {
        let mut block = Self::new(channels, config)?;
        let k = config.deconv_kernel;
        let (fi, fo) = conv_fans(channels, channels, k);
        block.deconv.weight.value = xavier_uniform(&[channels, channels, k, k], fi, fo, rng)?;
        if let Some(c) = &mut block.compress {
            let (cin, cout) = (c.in_channels(), c.out_channels());
            let (fi, fo) = conv_fans(cin, cout, 1);
            c.weight.value = xavier_uniform(&[cout, cin, 1, 1], fi, fo, rng)?;
        }
        Ok(block)
    }

    pub fn channels(&self) -> usize {
        self.bn.channels()
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        let [_, c, _, _] = x.dims4("reborn")?;
        if c != self.channels() {
            return Err(Error::ChannelMismatch {
                op: "reborn",
                expected: self.channels(),
                got: c,
            });
        }
        Ok(())
    }
}

impl<T: Scalar> Layer<T> for RebornBlock<T> {
    fn kind(&self) -> &'static str {
        "reborn"
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.check(x)?;
        let positive = super::relu(x);
        let negative = super::negative_part(x);
        let deconvolved = self.deconv.forward(&negative, mode)?;
        let reborn = self.bn.forward(&deconvolved, mode)?;
        let joined = concat_channels(&[&positive, &reborn])?;
        let out = match &mut self.compress {
            Some(conv) => conv.forward(&joined, mode)?,
            None => joined,
        };
        self.cache = Some(Cache { x: x.clone() });
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let Cache { x } = self.cache.take().ok_or(Error::NoCache("reborn"))?;
        let grad_joined = match &mut self.compress {
            Some(conv) => conv.backward(grad_out)?,
            None => grad_out.clone(),
        };
        let c = self.channels();
        let grad_pos = grad_joined.slice_channels(0, c)?;
        let grad_reborn = grad_joined.slice_channels(c, 2 * c)?;
        let grad_neg = self.deconv.backward(&self.bn.backward(&grad_reborn)?)?;

        // relu passes gradient where x > 0, min(x, 0) where x < 0
        let mut dx = x.zeros_like();
        for (((d, &xv), &gp), &gn) in dx
            .data_mut()
            .iter_mut()
            .zip(x.data())
            .zip(grad_pos.data())
            .zip(grad_neg.data())
        {
            if xv > T::zero() {
                *d = gp;
            } else if xv < T::zero() {
                *d = gn;
            }
        }
        Ok(dx)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let dims = crate::layers::conv_probe(input, "reborn")?;
        if dims[1] != self.channels() {
            return Err(Error::ChannelMismatch {
                op: "reborn",
                expected: self.channels(),
                got: dims[1],
            });
        }
        let mut out = dims.to_vec();
        if self.compress.is_none() {
            out[1] *= self.config.decay_ratio;
        }
        Ok(out)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.deconv.visit_params(&join(prefix, "deconv"), f);
        self.bn.visit_params(&join(prefix, "bn"), f);
        if let Some(c) = &mut self.compress {
            c.visit_params(&join(prefix, "compress"), f);
        }
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.bn.visit_buffers(&join(prefix, "bn"), f);
    }
}

use super::{join, Layer, Mode, Param, ParamKind};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds one `(C, H, W)` image into a `(C·k·k, out_h·out_w)` column matrix.
fn im2col<T: Scalar>(img: &[T], g: &Geometry, cols: &mut [T]) {
    let plane = g.out_plane();
    let pad = g.padding as isize;
    for c in 0..g.channels {
        let src = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src_row = &src[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, slot) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        *slot = if ix < 0 || ix >= g.width as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, adding into `img`.
fn col2im_add<T: Scalar>(cols: &[T], g: &Geometry, img: &mut [T]) {
    let plane = g.out_plane();
    let pad = g.padding as isize;
    for c in 0..g.channels {
        let dst = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        if ix >= 0 && ix < g.width as isize {
                            dst_row[ix as usize] = dst_row[ix as usize] + src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

fn conv_out_extent(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    (padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

fn transposed_out_extent(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    ((size - 1) * stride + kernel)
        .checked_sub(2 * padding)
        .filter(|&v| v >= 1)
}

fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], plane: usize) {
    for (c, chunk) in out.chunks_mut(plane).enumerate() {
        let b = bias[c % bias.len()];
        chunk.iter_mut().for_each(|v| *v = *v + b);
    }
}

fn accumulate_bias_grad<T: Scalar>(grad: &mut [T], grad_out: &[T], channels: usize, plane: usize) {
    for (i, chunk) in grad_out.chunks(plane).enumerate() {
        let c = i % channels;
        grad[c] = grad[c] + chunk.iter().fold(T::zero(), |a, &v| a + v);
    }
}

fn validate_hparams(kernel: usize, stride: usize) -> Result<()> {
    if kernel == 0 || stride == 0 {
        return Err(Error::InvalidConfig(format!(
            "kernel ({kernel}) and stride ({stride}) must be positive"
        )));
    }
    Ok(())
}

/// 2-D cross-correlation with square kernels and zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    /// `(C_out, C_in, k, k)`
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub stride: usize,
    pub padding: usize,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    /// Zero-initialized layer.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        validate_hparams(kernel, stride)?;
        let weight = Tensor::zeros(vec![out_channels, in_channels, kernel, kernel])?;
        Ok(Conv2d {
            weight: Param::new(weight, ParamKind::ConvWeight),
            bias: bias
                .then(|| Tensor::zeros(vec![out_channels]).map(|b| Param::new(b, ParamKind::Bias)))
                .transpose()?,
            stride,
            padding,
            cache: None,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let k = self.kernel();
        match (
            conv_out_extent(h, k, self.stride, self.padding),
            conv_out_extent(w, k, self.stride, self.padding),
        ) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::InvalidShape {
                shape: vec![h, w],
                reason: format!(
                    "conv output would be empty (kernel {k}, stride {}, padding {})",
                    self.stride, self.padding
                ),
            }),
        }
    }

    fn geometry(&self, x: &Tensor<T>) -> Result<(usize, Geometry)> {
        let [n, c, h, w] = x.dims4("conv2d")?;
        if c != self.in_channels() {
            return Err(Error::ChannelMismatch {
                op: "conv2d",
                expected: self.in_channels(),
                got: c,
            });
        }
        let (out_h, out_w) = self.out_hw(h, w)?;
        Ok((
            n,
            Geometry {
                channels: c,
                height: h,
                width: w,
                kernel: self.kernel(),
                stride: self.stride,
                padding: self.padding,
                out_h,
                out_w,
            },
        ))
    }

    /// Forward pass without touching the cache.
    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, g) = self.geometry(x)?;
        let c_out = self.out_channels();
        let plane = g.out_plane();
        let patch = g.patch();
        let in_item = g.channels * g.height * g.width;
        let mut cols = vec![T::zero(); patch * plane];
        let mut out = vec![T::zero(); n * c_out * plane];
        let weight = self.weight.value.data();
        for b in 0..n {
            im2col(&x.data()[b * in_item..(b + 1) * in_item], &g, &mut cols);
            T::gemm(
                c_out,
                patch,
                plane,
                T::one(),
                weight,
                patch as isize,
                1,
                &cols,
                plane as isize,
                1,
                T::zero(),
                &mut out[b * c_out * plane..(b + 1) * c_out * plane],
            );
        }
        if let Some(bias) = &self.bias {
            add_bias(&mut out, bias.value.data(), plane);
        }
        Tensor::new(vec![n, c_out, g.out_h, g.out_w], out)
    }

    /// Gradient pass for input `x`: accumulates weight/bias gradients and
    /// returns `∂loss/∂x`.
    pub fn backward_from(&mut self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, g) = self.geometry(x)?;
        let c_out = self.out_channels();
        let expected = [n, c_out, g.out_h, g.out_w];
        if grad_out.shape() != expected {
            return Err(Error::ShapeMismatch {
                op: "conv2d_backward",
                left: expected.to_vec(),
                right: grad_out.shape().to_vec(),
            });
        }
        let plane = g.out_plane();
        let patch = g.patch();
        let in_item = g.channels * g.height * g.width;
        let mut cols = vec![T::zero(); patch * plane];
        let mut dcols = vec![T::zero(); patch * plane];
        let mut dx = vec![T::zero(); x.len()];
        for b in 0..n {
            let go = &grad_out.data()[b * c_out * plane..(b + 1) * c_out * plane];
            im2col(&x.data()[b * in_item..(b + 1) * in_item], &g, &mut cols);
            // dW += G · colsᵀ
            T::gemm(
                c_out,
                plane,
                patch,
                T::one(),
                go,
                plane as isize,
                1,
                &cols,
                1,
                plane as isize,
                T::one(),
                self.weight.grad.data_mut(),
            );
            // dcols = Wᵀ · G
            T::gemm(
                patch,
                c_out,
                plane,
                T::one(),
                self.weight.value.data(),
                1,
                patch as isize,
                go,
                plane as isize,
                1,
                T::zero(),
                &mut dcols,
            );
            col2im_add(&dcols, &g, &mut dx[b * in_item..(b + 1) * in_item]);
        }
        if let Some(bias) = &mut self.bias {
            accumulate_bias_grad(bias.grad.data_mut(), grad_out.data(), c_out, plane);
        }
        Tensor::new(x.shape().to_vec(), dx)
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn kind(&self) -> &'static str {
        "conv2d"
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let y = self.apply(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.take().ok_or(Error::NoCache("conv2d"))?;
        self.backward_from(&x, grad_out)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let probe = probe4(input, "conv2d")?;
        if probe[1] != self.in_channels() {
            return Err(Error::ChannelMismatch {
                op: "conv2d",
                expected: self.in_channels(),
                got: probe[1],
            });
        }
        let (oh, ow) = self.out_hw(probe[2], probe[3])?;
        Ok(vec![probe[0], self.out_channels(), oh, ow])
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

/// Transposed convolution: the linear adjoint of [`Conv2d`] with the same
/// weight tensor, stride and padding.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<T> {
    /// `(C_in, C_out, k, k)`
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub stride: usize,
    pub padding: usize,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> ConvTranspose2d<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        validate_hparams(kernel, stride)?;
        let weight = Tensor::zeros(vec![in_channels, out_channels, kernel, kernel])?;
        Ok(ConvTranspose2d {
            weight: Param::new(weight, ParamKind::ConvWeight),
            bias: bias
                .then(|| Tensor::zeros(vec![out_channels]).map(|b| Param::new(b, ParamKind::Bias)))
                .transpose()?,
            stride,
            padding,
            cache: None,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let k = self.kernel();
        match (
            transposed_out_extent(h, k, self.stride, self.padding),
            transposed_out_extent(w, k, self.stride, self.padding),
        ) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::InvalidShape {
                shape: vec![h, w],
                reason: format!(
                    "transposed conv output would be empty (kernel {k}, stride {}, padding {})",
                    self.stride, self.padding
                ),
            }),
        }
    }

    /// Geometry of the adjoint convolution, which maps the output back onto
    /// the input grid.
    fn geometry(&self, x: &Tensor<T>) -> Result<(usize, Geometry)> {
        let [n, c, h, w] = x.dims4("conv_transpose2d")?;
        if c != self.in_channels() {
            return Err(Error::ChannelMismatch {
                op: "conv_transpose2d",
                expected: self.in_channels(),
                got: c,
            });
        }
        let (oh, ow) = self.out_hw(h, w)?;
        Ok((
            n,
            Geometry {
                channels: self.out_channels(),
                height: oh,
                width: ow,
                kernel: self.kernel(),
                stride: self.stride,
                padding: self.padding,
                out_h: h,
                out_w: w,
            },
        ))
    }

    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, g) = self.geometry(x)?;
        let c_in = self.in_channels();
        let c_out = self.out_channels();
        let in_plane = g.out_plane();
        let patch = g.patch();
        let out_item = c_out * g.height * g.width;
        let mut cols = vec![T::zero(); patch * in_plane];
        let mut out = vec![T::zero(); n * out_item];
        for b in 0..n {
            // cols = Wᵀ · x, W viewed as (C_in, C_out·k·k)
            T::gemm(
                patch,
                c_in,
                in_plane,
                T::one(),
                self.weight.value.data(),
                1,
                patch as isize,
                &x.data()[b * c_in * in_plane..(b + 1) * c_in * in_plane],
                in_plane as isize,
                1,
                T::zero(),
                &mut cols,
            );
            col2im_add(&cols, &g, &mut out[b * out_item..(b + 1) * out_item]);
        }
        if let Some(bias) = &self.bias {
            add_bias(&mut out, bias.value.data(), g.height * g.width);
        }
        Tensor::new(vec![n, c_out, g.height, g.width], out)
    }

    pub fn backward_from(&mut self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, g) = self.geometry(x)?;
        let c_in = self.in_channels();
        let c_out = self.out_channels();
        let expected = [n, c_out, g.height, g.width];
        if grad_out.shape() != expected {
            return Err(Error::ShapeMismatch {
                op: "conv_transpose2d_backward",
                left: expected.to_vec(),
                right: grad_out.shape().to_vec(),
            });
        }
        let in_plane = g.out_plane();
        let patch = g.patch();
        let out_item = c_out * g.height * g.width;
        let mut cols = vec![T::zero(); patch * in_plane];
        let mut dx = vec![T::zero(); x.len()];
        for b in 0..n {
            im2col(&grad_out.data()[b * out_item..(b + 1) * out_item], &g, &mut cols);
            let xb = &x.data()[b * c_in * in_plane..(b + 1) * c_in * in_plane];
            // dx = W · cols
            T::gemm(
                c_in,
                patch,
                in_plane,
                T::one(),
                self.weight.value.data(),
                patch as isize,
                1,
                &cols,
                in_plane as isize,
                1,
                T::zero(),
                &mut dx[b * c_in * in_plane..(b + 1) * c_in * in_plane],
            );
            // dW += x · colsᵀ
            T::gemm(
                c_in,
                in_plane,
                patch,
                T::one(),
                xb,
                in_plane as isize,
                1,
                &cols,
                1,
                in_plane as isize,
                T::one(),
                self.weight.grad.data_mut(),
            );
        }
        if let Some(bias) = &mut self.bias {
            accumulate_bias_grad(
                bias.grad.data_mut(),
                grad_out.data(),
                c_out,
                g.height * g.width,
            );
        }
        Tensor::new(x.shape().to_vec(), dx)
    }
}

impl<T: Scalar> Layer<T> for ConvTranspose2d<T> {
    fn kind(&self) -> &'static str {
        "conv_transpose2d"
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let y = self.apply(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.take().ok_or(Error::NoCache("conv_transpose2d"))?;
        self.backward_from(&x, grad_out)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let probe = probe4(input, "conv_transpose2d")?;
        if probe[1] != self.in_channels() {
            return Err(Error::ChannelMismatch {
                op: "conv_transpose2d",
                expected: self.in_channels(),
                got: probe[1],
            });
        }
        let (oh, ow) = self.out_hw(probe[2], probe[3])?;
        Ok(vec![probe[0], self.out_channels(), oh, ow])
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

pub(crate) fn probe4(input: &[usize], op: &'static str) -> Result<[usize; 4]> {
    match *input {
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(Error::RankMismatch {
            op,
            expected: 4,
            got: input.len(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rng;

    fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| rng.uniform_range(-1.0, 1.0)).unwrap()
    }

    /// Direct nested-loop cross-correlation.
    fn direct_conv(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let [n, ci, h, wd] = x.dims4("t").unwrap();
        let [co, _, k, _] = w.dims4("t").unwrap();
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let mut out = Tensor::zeros(vec![n, co, oh, ow]).unwrap();
        for b in 0..n {
            for o in 0..co {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = 0.0;
                        for c in 0..ci {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (y * stride + ky) as isize - pad as isize;
                                    let ix = (xx * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += x.at4(b, c, iy as usize, ix as usize)
                                            * w.at4(o, c, ky, kx);
                                    }
                                }
                            }
                        }
                        let off = ((b * co + o) * oh + y) * ow + xx;
                        out.data_mut()[off] = acc;
                    }
                }
            }
        }
        out
    }

    fn delta_kernel(c: usize) -> Tensor<f64> {
        let mut w = Tensor::zeros(vec![c, c, 3, 3]).unwrap();
        for i in 0..c {
            w.data_mut()[((i * c + i) * 3 + 1) * 3 + 1] = 1.0;
        }
        w
    }

    #[test]
    fn ones_kernel_sums_patch() {
        let mut conv = Conv2d::<f64>::new(1, 1, 3, 1, 0, false).unwrap();
        conv.weight.value.fill(1.0);
        let x = Tensor::full(vec![1, 1, 3, 3], 1.0).unwrap();
        let y = conv.apply(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut rng = Rng::new(5);
        let x = random(&[2, 3, 5, 4], &mut rng);
        let mut conv = Conv2d::<f64>::new(3, 3, 3, 1, 1, false).unwrap();
        conv.weight.value = delta_kernel(3);
        assert_eq!(conv.apply(&x).unwrap(), x);

        let mut deconv = ConvTranspose2d::<f64>::new(3, 3, 3, 1, 1, false).unwrap();
        deconv.weight.value = delta_kernel(3);
        assert_eq!(deconv.apply(&x).unwrap(), x);
        assert_eq!(deconv.apply(&conv.apply(&x).unwrap()).unwrap(), x);
    }

    #[test]
    fn matches_direct_oracle_strided() {
        let mut rng = Rng::new(9);
        let x = random(&[1, 2, 4, 4], &mut rng);
        let mut conv = Conv2d::<f64>::new(2, 3, 3, 2, 1, true).unwrap();
        conv.weight.value = random(&[3, 2, 3, 3], &mut rng);
        conv.bias.as_mut().unwrap().value = random(&[3], &mut rng);
        let y = conv.apply(&x).unwrap();
        assert_eq!(y.shape(), &[1, 3, 2, 2]);
        let mut expect = direct_conv(&x, &conv.weight.value, 2, 1);
        let bias = conv.bias.as_ref().unwrap().value.data().to_vec();
        for (i, v) in expect.data_mut().iter_mut().enumerate() {
            *v += bias[(i / 4) % 3];
        }
        for (a, b) in y.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let mut rng = Rng::new(1);
        let x = random(&[2, 2, 5, 5], &mut rng);
        let mut conv = Conv2d::<f64>::new(2, 4, 3, 2, 1, true).unwrap();
        conv.weight.value = random(&[4, 2, 3, 3], &mut rng);
        let y = conv.forward(&x, Mode::Train).unwrap();
        let dx = conv.backward(&y.zeros_like()).unwrap();
        assert_eq!(dx.max_abs(), 0.0);
        assert_eq!(conv.weight.grad.max_abs(), 0.0);
        assert_eq!(conv.bias.unwrap().grad.max_abs(), 0.0);

        let mut deconv = ConvTranspose2d::<f64>::new(2, 3, 3, 1, 1, false).unwrap();
        deconv.weight.value = random(&[2, 3, 3, 3], &mut rng);
        let y = deconv.forward(&x, Mode::Train).unwrap();
        assert_eq!(deconv.backward(&y.zeros_like()).unwrap().max_abs(), 0.0);
        assert_eq!(deconv.weight.grad.max_abs(), 0.0);
    }

    #[test]
    fn pointwise_backward_is_weight_transpose_mixing() {
        let mut rng = Rng::new(2);
        let x = random(&[1, 3, 2, 2], &mut rng);
        let g = random(&[1, 2, 2, 2], &mut rng);
        let mut conv = Conv2d::<f64>::new(3, 2, 1, 1, 0, false).unwrap();
        conv.weight.value = random(&[2, 3, 1, 1], &mut rng);
        let dx = conv.backward_from(&x, &g).unwrap();
        let w = conv.weight.value.data();
        for c in 0..3 {
            for p in 0..4 {
                let expect: f64 = (0..2).map(|o| w[o * 3 + c] * g.data()[o * 4 + p]).sum();
                assert!((dx.data()[c * 4 + p] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn transposed_shapes() {
        let deconv = ConvTranspose2d::<f64>::new(2, 5, 3, 1, 1, false).unwrap();
        assert_eq!(deconv.output_shape(&[1, 2, 4, 4]).unwrap(), vec![1, 5, 4, 4]);
        let up = ConvTranspose2d::<f64>::new(2, 5, 3, 2, 1, false).unwrap();
        assert_eq!(up.output_shape(&[1, 2, 4, 4]).unwrap(), vec![1, 5, 7, 7]);
        assert!(deconv.output_shape(&[1, 3, 4, 4]).is_err());
    }

    #[test]
    fn transposed_backward_is_conv_forward_at_stride_one() {
        let mut rng = Rng::new(4);
        let w = random(&[3, 2, 3, 3], &mut rng);
        let x = random(&[2, 3, 4, 5], &mut rng);
        let g = random(&[2, 2, 4, 5], &mut rng);
        let mut deconv = ConvTranspose2d::<f64>::new(3, 2, 3, 1, 1, false).unwrap();
        deconv.weight.value = w.clone();
        let dx = deconv.backward_from(&x, &g).unwrap();
        let expect = direct_conv(&g, &w, 1, 1);
        for (a, b) in dx.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_channel_mismatch_and_empty_output() {
        let conv = Conv2d::<f32>::new(2, 2, 3, 1, 0, false).unwrap();
        let x = Tensor::zeros(vec![1, 3, 4, 4]).unwrap();
        assert!(matches!(conv.apply(&x), Err(Error::ChannelMismatch { .. })));
        let tiny = Tensor::zeros(vec![1, 2, 2, 2]).unwrap();
        assert!(matches!(conv.apply(&tiny), Err(Error::InvalidShape { .. })));
        let mut c = conv.clone();
        assert!(matches!(c.backward(&tiny), Err(Error::NoCache(_))));
    }
}

//! Dense rank 1..=4 tensors in row-major (N, C, H, W) layout.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAX_RANK: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: format!("rank must be between 1 and {MAX_RANK}"),
        });
    }
    if shape.contains(&0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "extents must be at least 1".into(),
        });
    }
    Ok(shape.iter().product())
}

/// Flat offset of `(n, c, h, w)` in a `(N, C, H, W)` buffer.
#[inline]
pub fn offset4(dims: [usize; 4], n: usize, c: usize, h: usize, w: usize) -> usize {
    ((n * dims[1] + c) * dims[2] + h) * dims[3] + w
}

/// Inverse of [`offset4`].
#[inline]
pub fn decode4(dims: [usize; 4], offset: usize) -> (usize, usize, usize, usize) {
    let w = offset % dims[3];
    let rest = offset / dims[3];
    let h = rest % dims[2];
    let rest = rest / dims[2];
    let c = rest % dims[1];
    (rest / dims[1], c, h, w)
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let len = check_shape(&shape)?;
        if len != data.len() {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("buffer holds {} elements, expected {len}", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Result<Self> {
        let shape = shape.into();
        let len = check_shape(&shape)?;
        Ok(Tensor {
            shape,
            data: vec![value; len],
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Result<Self> {
        let shape = shape.into();
        let len = check_shape(&shape)?;
        Ok(Tensor {
            shape,
            data: (0..len).map(&mut f).collect(),
        })
    }

    /// A zero tensor with the same shape as `self`.
    pub fn zeros_like(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: vec![T::zero(); self.data.len()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Extents as `[N, C, H, W]`; fails unless the tensor is rank 4.
    pub fn dims4(&self, op: &'static str) -> Result<[usize; 4]> {
        match self.shape[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(Error::RankMismatch {
                op,
                expected: 4,
                got: self.rank(),
            }),
        }
    }

    pub fn at4(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        let dims = self.dims4("at4").expect("at4 on a non rank-4 tensor");
        self.data[offset4(dims, n, c, h, w)]
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_shape(other, op)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn expect_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn neg(&self) -> Self {
        self.map(|v| -v)
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    pub fn add_scalar(&self, k: T) -> Self {
        self.map(|v| v + k)
    }

    pub fn max_zero(&self) -> Self {
        self.map(|v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn min_zero(&self) -> Self {
        self.map(|v| if v < T::zero() { v } else { T::zero() })
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// Sequential left-to-right sum.
    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn mean(&self) -> T {
        self.sum() / T::lit(self.data.len() as f64)
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.expect_same_shape(other, "dot")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b))
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    /// Per-channel mean over N, H and W of a rank-4 tensor.
    pub fn channel_mean(&self) -> Result<Vec<T>> {
        let [n, c, h, w] = self.dims4("channel_mean")?;
        let plane = h * w;
        let count = T::lit((n * plane) as f64);
        let mut out = vec![T::zero(); c];
        for (ch, slot) in out.iter_mut().enumerate() {
            let mut acc = T::zero();
            for b in 0..n {
                let base = (b * c + ch) * plane;
                for &v in &self.data[base..base + plane] {
                    acc = acc + v;
                }
            }
            *slot = acc / count;
        }
        Ok(out)
    }

    /// Per-channel biased (divide-by-count) variance over N, H and W.
    pub fn channel_var(&self) -> Result<Vec<T>> {
        let mean = self.channel_mean()?;
        let [n, c, h, w] = self.dims4("channel_var")?;
        let plane = h * w;
        let count = T::lit((n * plane) as f64);
        let mut out = vec![T::zero(); c];
        for (ch, slot) in out.iter_mut().enumerate() {
            let mut acc = T::zero();
            for b in 0..n {
                let base = (b * c + ch) * plane;
                for &v in &self.data[base..base + plane] {
                    let d = v - mean[ch];
                    acc = acc + d * d;
                }
            }
            *slot = acc / count;
        }
        Ok(out)
    }

    /// Row-wise argmax of a rank-2 `(N, K)` tensor. Ties go to the lowest index.
    pub fn argmax_rows(&self) -> Result<Vec<usize>> {
        let [rows, cols] = self.shape[..] else {
            return Err(Error::RankMismatch {
                op: "argmax_rows",
                expected: 2,
                got: self.rank(),
            });
        };
        Ok((0..rows)
            .map(|r| {
                let row = &self.data[r * cols..(r + 1) * cols];
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect())
    }

    /// Channel slab `[start, end)` of a rank-4 tensor.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Self> {
        let [n, c, h, w] = self.dims4("slice_channels")?;
        if start >= end || end > c {
            return Err(Error::InvalidConfig(format!(
                "channel range {start}..{end} invalid for {c} channels"
            )));
        }
        let plane = h * w;
        let take = end - start;
        let mut data = Vec::with_capacity(n * take * plane);
        for b in 0..n {
            let base = (b * c + start) * plane;
            data.extend_from_slice(&self.data[base..base + take * plane]);
        }
        Tensor::new(vec![n, take, h, w], data)
    }

    /// Batch items `[start, end)` along the leading axis.
    pub fn slice_batch(&self, start: usize, end: usize) -> Result<Self> {
        let n = self.shape[0];
        if start >= end || end > n {
            return Err(Error::InvalidConfig(format!(
                "batch range {start}..{end} invalid for {n} items"
            )));
        }
        let item = self.data.len() / n;
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Tensor::new(shape, self.data[start * item..end * item].to_vec())
    }

    /// Gathers the listed batch items (in order) into a new tensor.
    pub fn gather_batch(&self, indices: &[usize]) -> Result<Self> {
        let n = self.shape[0];
        let item = self.data.len() / n;
        let mut data = Vec::with_capacity(indices.len() * item);
        for &i in indices {
            if i >= n {
                return Err(Error::InvalidConfig(format!("batch index {i} out of range {n}")));
            }
            data.extend_from_slice(&self.data[i * item..(i + 1) * item]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor::new(shape, data)
    }

    /// Serializes in the flat text fixture format: rank line, extents line,
    /// then one value per line in row-major order.
    pub fn to_fixture_string(&self) -> String {
        let mut out = String::with_capacity(self.data.len() * 12);
        let _ = writeln!(out, "{}", self.rank());
        let extents: Vec<String> = self.shape.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(out, "{}", extents.join(" "));
        for v in &self.data {
            let _ = writeln!(out, "{v}");
        }
        out
    }

    pub fn parse_fixture(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let tensor = Self::parse_fixture_lines(&mut lines)?;
        if lines.next().is_some() {
            return Err(Error::Parse("trailing data after tensor values".into()));
        }
        Ok(tensor)
    }

    /// Reads one fixture from a line iterator, leaving it positioned after the
    /// last value.
    pub(crate) fn parse_fixture_lines<'a, I>(lines: &mut I) -> Result<Self>
    where
        I: Iterator<Item = &'a str>,
    {
        let rank: usize = lines
            .next()
            .ok_or_else(|| Error::Parse("missing rank line".into()))?
            .parse()
            .map_err(|e| Error::Parse(format!("rank: {e}")))?;
        let shape = lines
            .next()
            .ok_or_else(|| Error::Parse("missing extents line".into()))?
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| Error::Parse(format!("extent `{t}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if shape.len() != rank {
            return Err(Error::Parse(format!(
                "rank {rank} but {} extents listed",
                shape.len()
            )));
        }
        let len = check_shape(&shape)?;
        let mut data = Vec::with_capacity(len);
        for i in 0..len {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse(format!("expected {len} values, found {i}")))?;
            data.push(
                line.parse::<T>()
                    .map_err(|_| Error::Parse(format!("bad value `{line}`")))?,
            );
        }
        Ok(Tensor { shape, data })
    }
}

/// Stacks rank-4 tensors along the channel axis, in order.
pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidConfig("concat_channels needs at least one part".into()))?;
    let [n, _, h, w] = first.dims4("concat_channels")?;
    let mut total_c = 0;
    for p in parts {
        let [pn, pc, ph, pw] = p.dims4("concat_channels")?;
        if (pn, ph, pw) != (n, h, w) {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                left: first.shape.clone(),
                right: p.shape.clone(),
            });
        }
        total_c += pc;
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(n * total_c * plane);
    for b in 0..n {
        for p in parts {
            let pc = p.shape[1];
            let base = b * pc * plane;
            data.extend_from_slice(&p.data[base..base + pc * plane]);
        }
    }
    Tensor::new(vec![n, total_c, h, w], data)
}

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::Real;

/// Dense `(channels, height, width)` array in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

/// A stack of `k` coefficient maps of size `height × width`.
pub type FeatureMaps<T> = Tensor<T>;

impl<T: Real> Tensor<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: T) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(shape_err!(
                "data length {} does not match shape ({channels}, {height}, {width})",
                data.len()
            ));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Single-channel image from rows of equal length.
    pub fn from_rows(rows: &[&[T]]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return Err(shape_err!("ragged rows"));
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::from_vec(1, height, width, data)
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for i in 0..height {
                for j in 0..width {
                    data.push(f(c, i, j));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }
    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    #[inline]
    pub fn spatial(&self) -> (usize, usize) {
        (self.height, self.width)
    }
    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }
    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }
    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize, j: usize) -> T {
        self.data[(c * self.height + i) * self.width + j]
    }
    #[inline]
    pub fn set(&mut self, c: usize, i: usize, j: usize, v: T) {
        self.data[(c * self.height + i) * self.width + j] = v;
    }

    /// Borrow one channel as a flat `height * width` slice.
    #[inline]
    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
    #[inline]
    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Copy one channel out as a single-channel tensor.
    pub fn channel_tensor(&self, c: usize) -> Self {
        Self {
            channels: 1,
            height: self.height,
            width: self.width,
            data: self.channel(c).to_vec(),
        }
    }

    pub fn ensure_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(shape_err!(
                "{what}: shape {:?} vs {:?}",
                self.shape(),
                other.shape()
            ));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        self.ensure_same_shape(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + alpha * b;
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.ensure_same_shape(other, "add")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.ensure_same_shape(other, "sub")?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect();
        Ok(Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data,
        })
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.ensure_same_shape(other, "dot")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b))
    }

    pub fn norm_l1(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v.abs())
    }

    pub fn norm_l2(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc.max(v.abs()))
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Crop a `(height, width)` window whose top-left corner is `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return Err(shape_err!(
                "crop {height}x{width} at ({top}, {left}) exceeds {}x{}",
                self.height,
                self.width
            ));
        }
        Ok(Self::from_fn(self.channels, height, width, |c, i, j| {
            self.get(c, top + i, left + j)
        }))
    }

    /// Swap the two spatial axes.
    pub fn transpose_spatial(&self) -> Self {
        Self::from_fn(self.channels, self.width, self.height, |c, i, j| {
            self.get(c, j, i)
        })
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::of_f64(v.as_f64())).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.ensure_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs())))
    }
}

/// Convolution weights with shape `(out_channels, in_channels, kh, kw)`.
///
/// Kernel sides are odd so that same-padding is symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank<T> {
    out_channels: usize,
    in_channels: usize,
    kh: usize,
    kw: usize,
    weights: Vec<T>,
}

impl<T: Real> KernelBank<T> {
    pub fn zeros(out_channels: usize, in_channels: usize, kh: usize, kw: usize) -> Result<Self> {
        Self::from_vec(
            out_channels,
            in_channels,
            kh,
            kw,
            vec![T::zero(); out_channels * in_channels * kh * kw],
        )
    }

    pub fn from_vec(
        out_channels: usize,
        in_channels: usize,
        kh: usize,
        kw: usize,
        weights: Vec<T>,
    ) -> Result<Self> {
        if kh.is_multiple_of(2) || kw.is_multiple_of(2) {
            return Err(shape_err!("kernel size {kh}x{kw} must be odd"));
        }
        if weights.len() != out_channels * in_channels * kh * kw {
            return Err(shape_err!(
                "weight length {} does not match bank ({out_channels}, {in_channels}, {kh}, {kw})",
                weights.len()
            ));
        }
        Ok(Self {
            out_channels,
            in_channels,
            kh,
            kw,
            weights,
        })
    }

    pub fn from_fn(
        out_channels: usize,
        in_channels: usize,
        kh: usize,
        kw: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> T,
    ) -> Result<Self> {
        let mut w = Vec::with_capacity(out_channels * in_channels * kh * kw);
        for o in 0..out_channels {
            for c in 0..in_channels {
                for a in 0..kh {
                    for b in 0..kw {
                        w.push(f(o, c, a, b));
                    }
                }
            }
        }
        Self::from_vec(out_channels, in_channels, kh, kw, w)
    }

    /// Bank with a centred unit impulse on each `o == c` kernel and zeros elsewhere.
    pub fn delta(out_channels: usize, in_channels: usize, size: usize) -> Result<Self> {
        let centre = size / 2;
        Self::from_fn(out_channels, in_channels, size, size, |o, c, a, b| {
            if o == c && a == centre && b == centre {
                T::one()
            } else {
                T::zero()
            }
        })
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.out_channels, self.in_channels, self.kh, self.kw)
    }
    #[inline]
    pub fn out_channels(&self) -> usize {
        self.out_channels
    }
    #[inline]
    pub fn in_channels(&self) -> usize {
        self.in_channels
    }
    #[inline]
    pub fn kernel_size(&self) -> (usize, usize) {
        (self.kh, self.kw)
    }
    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.weights
    }
    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.weights
    }

    #[inline]
    pub fn get(&self, o: usize, c: usize, a: usize, b: usize) -> T {
        self.weights[((o * self.in_channels + c) * self.kh + a) * self.kw + b]
    }
    #[inline]
    pub fn set(&mut self, o: usize, c: usize, a: usize, b: usize, v: T) {
        self.weights[((o * self.in_channels + c) * self.kh + a) * self.kw + b] = v;
    }

    /// The `kh * kw` kernel connecting input channel `c` to output channel `o`.
    #[inline]
    pub fn kernel(&self, o: usize, c: usize) -> &[T] {
        let n = self.kh * self.kw;
        let start = (o * self.in_channels + c) * n;
        &self.weights[start..start + n]
    }

    /// Bank realising the adjoint map: kernels rotated by 180° with the
    /// input and output channel axes swapped.
    pub fn adjoint(&self) -> Self {
        let (kh, kw) = (self.kh, self.kw);
        Self::from_fn(self.in_channels, self.out_channels, kh, kw, |o, c, a, b| {
            self.get(c, o, kh - 1 - a, kw - 1 - b)
        })
        .expect("adjoint of a valid bank is valid")
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            weights: self.weights.iter().map(|&w| w * s).collect(),
            ..self.clone()
        }
    }

    pub fn is_zero(&self) -> bool {
        self.weights.iter().all(|w| w.is_zero())
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    pub fn cast<U: Real>(&self) -> KernelBank<U> {
        KernelBank {
            out_channels: self.out_channels,
            in_channels: self.in_channels,
            kh: self.kh,
            kw: self.kw,
            weights: self.weights.iter().map(|v| U::of_f64(v.as_f64())).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weights: vec![T::zero(); self.weights.len()],
            ..self.clone()
        }
    }
}

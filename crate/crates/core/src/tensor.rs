//! Dense activations stored channel-major (`C x N x H x W`).
//!
//! With channels outermost, a convolution written as `W · im2col(x)` lands
//! directly in the same layout, per-channel batch-norm statistics are
//! contiguous rows, and concatenation along channels is a buffer append.

use std::fmt::Debug;
use std::iter::Sum;

use crate::error::{Error, Result};

/// Scalar type usable by the network engine.
pub trait Float:
    num_traits::Float + num_traits::FromPrimitive + Default + Debug + Sum + Send + Sync + 'static
{
    /// `C = alpha * A * B + beta * C` with arbitrary row/column strides.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-overlapping matrices of
    /// the given shapes (`A`: m×k, `B`: k×n, `C`: m×n).
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64_lossy(v: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(v).unwrap_or_else(Self::nan)
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Float for f32 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Float for f64 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major matrix view used by [`matmul`].
#[derive(Clone, Copy)]
pub struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a, T> MatRef<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { data, rows, cols, transposed: false }
    }

    /// Logical transpose without copying.
    pub fn t(self) -> Self {
        Self { transposed: !self.transposed, ..self }
    }

    fn shape(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `out = a · b + (accumulate ? out : 0)`, `out` row-major.
pub fn matmul<T: Float>(a: MatRef<'_, T>, b: MatRef<'_, T>, out: &mut [T], accumulate: bool) {
    let (m, k) = a.shape();
    let (k2, n) = b.shape();
    assert_eq!(k, k2, "inner dimensions differ");
    assert_eq!(out.len(), m * n, "output buffer has wrong size");
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { T::one() } else { T::zero() };
    if k == 0 {
        if !accumulate {
            out.iter_mut().for_each(|v| *v = T::zero());
        }
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: shapes and strides were derived from slices of checked length.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// A `C x N x H x W` activation tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub channels: usize,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Float> Tensor<T> {
    pub fn zeros(channels: usize, batch: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            batch,
            height,
            width,
            data: vec![T::zero(); channels * batch * height * width],
        }
    }

    pub fn from_vec(
        channels: usize,
        batch: usize,
        height: usize,
        width: usize,
        data: Vec<T>,
    ) -> Result<Self> {
        if data.len() != channels * batch * height * width {
            return Err(Error::Shape(format!(
                "buffer of {} values does not fit {channels}x{batch}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self { channels, batch, height, width, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.channels, self.batch, self.height, self.width]
    }

    /// Number of values in one channel row (`N*H*W`).
    pub fn plane(&self) -> usize {
        self.batch * self.height * self.width
    }

    pub fn same_geometry(&self, other: &Self) -> bool {
        self.batch == other.batch && self.height == other.height && self.width == other.width
    }

    #[inline]
    pub fn index(&self, c: usize, n: usize, y: usize, x: usize) -> usize {
        ((c * self.batch + n) * self.height + y) * self.width + x
    }

    pub fn get(&self, c: usize, n: usize, y: usize, x: usize) -> T {
        self.data[self.index(c, n, y, x)]
    }

    /// Stack along the channel axis.
    pub fn concat_channels(a: &Self, b: &Self) -> Result<Self> {
        if !a.same_geometry(b) {
            return Err(Error::Shape(format!(
                "cannot concatenate {:?} with {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Ok(Self { channels: a.channels + b.channels, data, ..*a })
    }

    /// Split off the first `channels` channels; inverse of [`Tensor::concat_channels`].
    pub fn split_channels(mut self, channels: usize) -> (Self, Self) {
        assert!(channels <= self.channels);
        let tail = self.data.split_off(channels * self.plane());
        let rest = Self {
            channels: self.channels - channels,
            batch: self.batch,
            height: self.height,
            width: self.width,
            data: tail,
        };
        self.channels = channels;
        (self, rest)
    }

    pub fn map(mut self, f: impl Fn(T) -> T) -> Self {
        self.data.iter_mut().for_each(|v| *v = f(*v));
        self
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape(), other.shape());
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a = *a + *b);
    }

    pub fn min_max(&self) -> (T, T) {
        self.data.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn cast<U: Float>(&self) -> Tensor<U> {
        Tensor {
            channels: self.channels,
            batch: self.batch,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
        }
    }

    /// Values of one sample as an `H x W x C` interleaved buffer.
    pub fn sample_hwc(&self, n: usize) -> Vec<T> {
        let mut out = Vec::with_capacity(self.channels * self.height * self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    out.push(self.get(c, n, y, x));
                }
            }
        }
        out
    }

    /// Stack `H x W x C` interleaved samples into one tensor.
    pub fn from_hwc_samples(samples: &[&[T]], height: usize, width: usize, channels: usize) -> Result<Self> {
        let batch = samples.len();
        let mut t = Self::zeros(channels, batch, height, width);
        for (n, s) in samples.iter().enumerate() {
            if s.len() != height * width * channels {
                return Err(Error::Shape(format!(
                    "sample {n} has {} values, expected {}",
                    s.len(),
                    height * width * channels
                )));
            }
            for y in 0..height {
                for x in 0..width {
                    for c in 0..channels {
                        let i = t.index(c, n, y, x);
                        t.data[i] = s[(y * width + x) * channels + c];
                    }
                }
            }
        }
        Ok(t)
    }
}

/// Geometry of a square-kernel convolution window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Window {
    pub fn out_size(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.pad;
        if padded < self.kernel {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }

    /// Spatial size produced by the transposed convolution.
    pub fn transposed_out_size(&self, input: usize) -> Option<usize> {
        ((input - 1) * self.stride + self.kernel).checked_sub(2 * self.pad)
    }
}

/// Unfold `x` into a `(C*k*k) x (N*Ho*Wo)` row-major matrix.
pub fn im2col<T: Float>(x: &Tensor<T>, win: Window, out_h: usize, out_w: usize) -> Vec<T> {
    let k = win.kernel;
    let cols = x.batch * out_h * out_w;
    let mut out = vec![T::zero(); x.channels * k * k * cols];
    for c in 0..x.channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut out[row * cols..(row + 1) * cols];
                for n in 0..x.batch {
                    let src_base = (c * x.batch + n) * x.height * x.width;
                    for oy in 0..out_h {
                        let iy = (oy * win.stride + ky) as isize - win.pad as isize;
                        let drow = &mut dst[(n * out_h + oy) * out_w..(n * out_h + oy + 1) * out_w];
                        if iy < 0 || iy as usize >= x.height {
                            continue;
                        }
                        let srow = &x.data[src_base + iy as usize * x.width..][..x.width];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * win.stride + kx) as isize - win.pad as isize;
                            if ix >= 0 && (ix as usize) < x.width {
                                *d = srow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Fold a column matrix back into `out`, accumulating overlapping windows.
pub fn col2im<T: Float>(cols_mat: &[T], win: Window, out_h: usize, out_w: usize, out: &mut Tensor<T>) {
    let k = win.kernel;
    let cols = out.batch * out_h * out_w;
    assert_eq!(cols_mat.len(), out.channels * k * k * cols);
    for c in 0..out.channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols_mat[row * cols..(row + 1) * cols];
                for n in 0..out.batch {
                    let dst_base = (c * out.batch + n) * out.height * out.width;
                    for oy in 0..out_h {
                        let iy = (oy * win.stride + ky) as isize - win.pad as isize;
                        if iy < 0 || iy as usize >= out.height {
                            continue;
                        }
                        let srow = &src[(n * out_h + oy) * out_w..(n * out_h + oy + 1) * out_w];
                        let drow = &mut out.data[dst_base + iy as usize * out.width..][..out.width];
                        for (ox, &s) in srow.iter().enumerate() {
                            let ix = (ox * win.stride + kx) as isize - win.pad as isize;
                            if ix >= 0 && (ix as usize) < out.width {
                                drow[ix as usize] = drow[ix as usize] + s;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_handles_transposes() {
        // a: 2x3, b: 3x2
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0f64, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut out = [0.0; 4];
        matmul(MatRef::new(&a, 2, 3), MatRef::new(&b, 3, 2), &mut out, false);
        assert_eq!(out, [58.0, 64.0, 139.0, 154.0]);
        // aᵀ·a is 3x3
        let mut out = [0.0; 9];
        matmul(MatRef::new(&a, 2, 3).t(), MatRef::new(&a, 2, 3), &mut out, false);
        assert_eq!(out, [17.0, 22.0, 27.0, 22.0, 29.0, 36.0, 27.0, 36.0, 45.0]);
    }

    #[test]
    fn window_sizes() {
        let w = Window { kernel: 4, stride: 2, pad: 1 };
        assert_eq!(w.out_size(64), Some(32));
        assert_eq!(w.out_size(2), Some(1));
        assert_eq!(w.transposed_out_size(1), Some(2));
        assert_eq!(w.transposed_out_size(32), Some(64));
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let win = Window { kernel: 4, stride: 2, pad: 1 };
        let x = Tensor::from_vec(2, 2, 6, 6, (0..144).map(|v| (v as f64 * 0.37).sin()).collect()).unwrap();
        let (oh, ow) = (3, 3);
        let cols = im2col(&x, win, oh, ow);
        let y: Vec<f64> = (0..cols.len()).map(|v| (v as f64 * 0.11).cos()).collect();
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = Tensor::zeros(2, 2, 6, 6);
        col2im(&y, win, oh, ow, &mut back);
        let rhs: f64 = x.data.iter().zip(&back.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn split_inverts_concat() {
        let a = Tensor::from_vec(1, 2, 2, 2, vec![1.0f32; 8]).unwrap();
        let b = Tensor::from_vec(2, 2, 2, 2, vec![2.0f32; 16]).unwrap();
        let ab = Tensor::concat_channels(&a, &b).unwrap();
        assert_eq!(ab.channels, 3);
        let (a2, b2) = ab.split_channels(1);
        assert_eq!(a2, a);
        assert_eq!(b2, b);
    }

    #[test]
    fn hwc_round_trip() {
        let s: Vec<f32> = (0..12).map(|v| v as f32).collect();
        let t = Tensor::from_hwc_samples(&[&s], 2, 2, 3).unwrap();
        assert_eq!(t.get(1, 0, 0, 0), 1.0);
        assert_eq!(t.get(0, 0, 0, 1), 3.0);
        assert_eq!(t.sample_hwc(0), s);
    }
}

//! Strided 2-D convolution and its transpose, via im2col + gemm.
//!
//! Layouts are NCHW for activations and `(out, in, k, k)` for kernels.
//! The transposed convolution reuses the kernel of the convolution it
//! inverts, so a decoder layer shares its [`ConvSpec`] with the matching
//! encoder layer and maps `out_channels` back to `in_channels`.

use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::error::{Error, Result};
use crate::linalg::gemm;

/// Geometry of one convolutional layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel_size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    /// Same-style spec: symmetric zero padding of `kernel_size / 2`.
    pub fn new(kernel_size: usize, in_channels: usize, out_channels: usize, stride: usize) -> Result<Self> {
        let spec = ConvSpec { kernel_size, in_channels, out_channels, stride, padding: kernel_size / 2 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(Error::config(format!("kernel size must be a positive odd integer, got {}", self.kernel_size)));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::config("channel counts must be positive"));
        }
        if self.stride == 0 {
            return Err(Error::config("stride must be positive"));
        }
        Ok(())
    }

    pub fn kernel_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel_size, self.kernel_size]
    }

    /// Output extent of the forward convolution along one axis.
    pub fn output_len(&self, len: usize) -> usize {
        (len + 2 * self.padding - self.kernel_size) / self.stride + 1
    }

    /// Checks that a convolution of this spec maps `len` to `out`; used to
    /// validate transposed-convolution targets.
    pub fn maps_to(&self, len: usize, out: usize) -> bool {
        len + 2 * self.padding >= self.kernel_size && self.output_len(len) == out
    }

    pub(crate) fn check_weights(&self, weight: &Array, bias_len: usize, bias: &Array) -> Result<()> {
        if weight.shape() != self.kernel_shape() {
            return Err(Error::config(format!(
                "kernel tensor shape {:?} does not match spec {:?}",
                weight.shape(),
                self.kernel_shape()
            )));
        }
        if bias.shape() != [bias_len] {
            return Err(Error::config(format!("bias shape {:?}, expected [{bias_len}]", bias.shape())));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    channels: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new(spec: &ConvSpec, channels: usize, h: usize, w: usize) -> Self {
        Geometry {
            channels,
            h,
            w,
            k: spec.kernel_size,
            stride: spec.stride,
            pad: spec.padding,
            oh: spec.output_len(h),
            ow: spec.output_len(w),
        }
    }

    fn col_rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Visits every (column-buffer index, image index) pair that lies inside
    /// the unpadded image.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let npos = self.col_cols();
        for c in 0..self.channels {
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let img_row = (c * self.h + iy as usize) * self.w;
                        let col_row = row * npos + oy * self.ow;
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            f(col_row + ox, img_row + ix as usize);
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, img: &[f64], cols: &mut [f64]) {
        cols.iter_mut().for_each(|v| *v = 0.0);
        self.for_each_tap(|ci, ii| cols[ci] = img[ii]);
    }

    /// Scatter-adds a column buffer back onto an image.
    fn col2im(&self, cols: &[f64], img: &mut [f64]) {
        self.for_each_tap(|ci, ii| img[ii] += cols[ci]);
    }
}

fn dims4(x: &Array, what: &str) -> Result<[usize; 4]> {
    match *x.shape() {
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(Error::config(format!("{what} expects an NCHW array, got shape {:?}", x.shape()))),
    }
}

/// Forward convolution; output spatial size is `ceil(H / stride)` for the
/// same-style padding of [`ConvSpec::new`].
pub fn conv2d_forward(x: &Array, spec: &ConvSpec, weight: &Array, bias: &Array) -> Result<Array> {
    spec.validate()?;
    spec.check_weights(weight, spec.out_channels, bias)?;
    let [n, c, h, w] = dims4(x, "conv2d")?;
    if c != spec.in_channels {
        return Err(Error::config(format!("conv2d input has {c} channels, spec wants {}", spec.in_channels)));
    }
    if h + 2 * spec.padding < spec.kernel_size || w + 2 * spec.padding < spec.kernel_size {
        return Err(Error::config(format!("input {h}x{w} smaller than kernel {}", spec.kernel_size)));
    }
    let g = Geometry::new(spec, c, h, w);
    let (rows, npos, co) = (g.col_rows(), g.col_cols(), spec.out_channels);
    let mut out = vec![0.0; n * co * npos];
    let mut cols = vec![0.0; rows * npos];
    for s in 0..n {
        g.im2col(&x.data()[s * c * h * w..(s + 1) * c * h * w], &mut cols);
        let dst = &mut out[s * co * npos..(s + 1) * co * npos];
        gemm(co, rows, npos, 1.0, weight.data(), false, &cols, false, 0.0, dst);
        for (o, chunk) in dst.chunks_mut(npos).enumerate() {
            let b = bias.data()[o];
            chunk.iter_mut().for_each(|v| *v += b);
        }
    }
    Array::new(vec![n, co, g.oh, g.ow], out)
}

/// Gradients of [`conv2d_forward`] w.r.t. input, weight and bias.
pub fn conv2d_backward(
    x: &Array,
    spec: &ConvSpec,
    weight: &Array,
    grad_out: &Array,
) -> (Array, Array, Array) {
    let [n, c, h, w] = dims4(x, "conv2d").expect("validated in forward");
    let g = Geometry::new(spec, c, h, w);
    let (rows, npos, co) = (g.col_rows(), g.col_cols(), spec.out_channels);
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; weight.len()];
    let mut db = vec![0.0; co];
    let mut cols = vec![0.0; rows * npos];
    let mut dcols = vec![0.0; rows * npos];
    for s in 0..n {
        let dy = &grad_out.data()[s * co * npos..(s + 1) * co * npos];
        g.im2col(&x.data()[s * c * h * w..(s + 1) * c * h * w], &mut cols);
        gemm(co, npos, rows, 1.0, dy, false, &cols, true, 1.0, &mut dw);
        gemm(rows, co, npos, 1.0, weight.data(), true, dy, false, 0.0, &mut dcols);
        g.col2im(&dcols, &mut dx[s * c * h * w..(s + 1) * c * h * w]);
        for (o, chunk) in dy.chunks(npos).enumerate() {
            db[o] += chunk.iter().sum::<f64>();
        }
    }
    (
        Array::new(x.shape().to_vec(), dx).expect("shape"),
        Array::new(weight.shape().to_vec(), dw).expect("shape"),
        Array::new(vec![co], db).expect("shape"),
    )
}

/// Transposed convolution: the adjoint of [`conv2d_forward`] for the same
/// spec and kernel, plus a bias over `spec.in_channels`.
///
/// `target_hw` fixes the output extent; it must be a shape the forward
/// convolution maps onto the input's spatial size.
pub fn deconv2d_forward(
    y: &Array,
    spec: &ConvSpec,
    weight: &Array,
    bias: &Array,
    target_hw: (usize, usize),
) -> Result<Array> {
    spec.validate()?;
    spec.check_weights(weight, spec.in_channels, bias)?;
    let [n, co, oh, ow] = dims4(y, "deconv2d")?;
    if co != spec.out_channels {
        return Err(Error::config(format!("deconv2d input has {co} channels, spec wants {}", spec.out_channels)));
    }
    let (h, w) = target_hw;
    if !spec.maps_to(h, oh) || !spec.maps_to(w, ow) {
        return Err(Error::config(format!(
            "target {h}x{w} is inconsistent with input {oh}x{ow} at stride {}",
            spec.stride
        )));
    }
    let c = spec.in_channels;
    let g = Geometry::new(spec, c, h, w);
    let (rows, npos) = (g.col_rows(), g.col_cols());
    let mut out = vec![0.0; n * c * h * w];
    let mut cols = vec![0.0; rows * npos];
    for s in 0..n {
        let src = &y.data()[s * co * npos..(s + 1) * co * npos];
        gemm(rows, co, npos, 1.0, weight.data(), true, src, false, 0.0, &mut cols);
        let dst = &mut out[s * c * h * w..(s + 1) * c * h * w];
        g.col2im(&cols, dst);
        for (ch, chunk) in dst.chunks_mut(h * w).enumerate() {
            let b = bias.data()[ch];
            chunk.iter_mut().for_each(|v| *v += b);
        }
    }
    Array::new(vec![n, c, h, w], out)
}

/// Gradients of [`deconv2d_forward`] w.r.t. input, weight and bias.
pub fn deconv2d_backward(
    y: &Array,
    spec: &ConvSpec,
    weight: &Array,
    grad_out: &Array,
) -> (Array, Array, Array) {
    let [n, co, _, _] = dims4(y, "deconv2d").expect("validated in forward");
    let [_, c, h, w] = dims4(grad_out, "deconv2d").expect("validated in forward");
    let g = Geometry::new(spec, c, h, w);
    let (rows, npos) = (g.col_rows(), g.col_cols());
    let mut dy = vec![0.0; y.len()];
    let mut dw = vec![0.0; weight.len()];
    let mut db = vec![0.0; c];
    let mut cols = vec![0.0; rows * npos];
    for s in 0..n {
        let dout = &grad_out.data()[s * c * h * w..(s + 1) * c * h * w];
        g.im2col(dout, &mut cols);
        let ys = &y.data()[s * co * npos..(s + 1) * co * npos];
        gemm(co, rows, npos, 1.0, weight.data(), false, &cols, false, 0.0, &mut dy[s * co * npos..(s + 1) * co * npos]);
        gemm(co, npos, rows, 1.0, ys, false, &cols, true, 1.0, &mut dw);
        for (ch, chunk) in dout.chunks(h * w).enumerate() {
            db[ch] += chunk.iter().sum::<f64>();
        }
    }
    (
        Array::new(y.shape().to_vec(), dy).expect("shape"),
        Array::new(weight.shape().to_vec(), dw).expect("shape"),
        Array::new(vec![c], db).expect("shape"),
    )
}

//! Strided 2-D convolution and its transpose, via im2col + GEMM.
//!
//! Weight layouts follow the usual convention: `conv2d` weights are
//! `(out_c, in_c, kh, kw)`, `conv2d_transpose` weights are `(in_c, out_c, kh, kw)`.
//! With the same tensor and hyperparameters the two maps are adjoint.

use crate::error::{Error, Result};
use crate::tensor::{matmul, Real, Tensor};

/// `floor((input + 2p - k) / s) + 1`, or `None` when the kernel does not fit.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if kernel == 0 || stride == 0 || input + 2 * padding < kernel {
        return None;
    }
    Some((input + 2 * padding - kernel) / stride + 1)
}

/// `(input - 1) * s - 2p + k`, or `None` when that is not positive.
pub fn conv_transpose_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if input == 0 || kernel == 0 || stride == 0 {
        return None;
    }
    let full = (input - 1) * stride + kernel;
    if full <= 2 * padding {
        return None;
    }
    Some(full - 2 * padding)
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds one `(C, H, W)` image into a `(C*kh*kw, out_h*out_w)` matrix.
fn im2col<T: Real>(image: &[T], g: &Geometry, cols: &mut [T]) {
    let ncols = g.cols();
    for c in 0..g.channels {
        let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(T::ZERO);
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        *v = if ix < 0 || ix >= g.width as isize {
                            T::ZERO
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back into an image, accumulating.
fn col2im<T: Real>(cols: &[T], g: &Geometry, image: &mut [T]) {
    let ncols = g.cols();
    for c in 0..g.channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

fn check_hyper(op: &'static str, stride: usize, kh: usize, kw: usize) -> Result<()> {
    if stride == 0 {
        return Err(Error::invalid(op, "stride must be >= 1"));
    }
    if kh == 0 || kw == 0 {
        return Err(Error::invalid(op, "kernel extents must be >= 1"));
    }
    Ok(())
}

fn check_bias<T>(op: &'static str, bias: &[T], channels: usize) -> Result<()> {
    if bias.len() != channels {
        return Err(Error::shape(op, "bias length", channels, bias.len()));
    }
    Ok(())
}

fn conv_geometry(
    op: &'static str,
    input: [usize; 4],
    weight: [usize; 4],
    stride: usize,
    padding: usize,
    in_channel_axis: usize,
) -> Result<Geometry> {
    let [_, c, h, w] = input;
    let kh = weight[2];
    let kw = weight[3];
    check_hyper(op, stride, kh, kw)?;
    if weight[in_channel_axis] != c {
        return Err(Error::shape(op, "input channels", weight[in_channel_axis], c));
    }
    let out_h = conv_out_extent(h, kh, stride, padding)
        .ok_or_else(|| Error::shape(op, "height (kernel larger than padded input)", kh, h + 2 * padding))?;
    let out_w = conv_out_extent(w, kw, stride, padding)
        .ok_or_else(|| Error::shape(op, "width (kernel larger than padded input)", kw, w + 2 * padding))?;
    Ok(Geometry {
        channels: c,
        height: h,
        width: w,
        kh,
        kw,
        stride,
        padding,
        out_h,
        out_w,
    })
}

fn add_channel_bias<T: Real>(out: &mut Tensor<T>, bias: &[T]) {
    let [n, c, h, w] = out.shape();
    let plane = h * w;
    let data = out.data_mut();
    for i in 0..n {
        for (j, &b) in bias.iter().enumerate().take(c) {
            let start = (i * c + j) * plane;
            for v in &mut data[start..start + plane] {
                *v += b;
            }
        }
    }
}

fn channel_sums<T: Real>(t: &Tensor<T>) -> Vec<T> {
    let [n, c, h, w] = t.shape();
    let plane = h * w;
    let mut sums = vec![0.0f64; c];
    for i in 0..n {
        for (j, s) in sums.iter_mut().enumerate() {
            let start = (i * c + j) * plane;
            *s += t.data()[start..start + plane].iter().map(|v| v.to_f64()).sum::<f64>();
        }
    }
    sums.into_iter().map(T::from_f64).collect()
}

pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &[T],
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    const OP: &str = "conv2d";
    let g = conv_geometry(OP, input.shape(), weight.shape(), stride, padding, 1)?;
    let out_c = weight.shape()[0];
    check_bias(OP, bias, out_c)?;
    let n = input.batch();
    let mut out = Tensor::zeros([n, out_c, g.out_h, g.out_w]);
    let mut cols = vec![T::ZERO; g.rows() * g.cols()];
    for i in 0..n {
        im2col(input.sample(i), &g, &mut cols);
        matmul(weight.data(), false, &cols, false, out.sample_mut(i), out_c, g.rows(), g.cols(), false);
    }
    add_channel_bias(&mut out, bias);
    Ok(out)
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Tensor<T>, Vec<T>)> {
    const OP: &str = "conv2d backward";
    let g = conv_geometry(OP, input.shape(), weight.shape(), stride, padding, 1)?;
    let out_c = weight.shape()[0];
    let expect = [input.batch(), out_c, g.out_h, g.out_w];
    if grad_out.shape() != expect {
        return Err(Error::shape(OP, "output gradient size", expect.iter().product(), grad_out.len()));
    }
    let mut grad_in = Tensor::zeros(input.shape());
    let mut grad_w = Tensor::zeros(weight.shape());
    let mut cols = vec![T::ZERO; g.rows() * g.cols()];
    let mut dcols = vec![T::ZERO; g.rows() * g.cols()];
    for i in 0..input.batch() {
        im2col(input.sample(i), &g, &mut cols);
        let dy = grad_out.sample(i);
        matmul(dy, false, &cols, true, grad_w.data_mut(), out_c, g.cols(), g.rows(), true);
        matmul(weight.data(), true, dy, false, &mut dcols, g.rows(), out_c, g.cols(), false);
        col2im(&dcols, &g, grad_in.sample_mut(i));
    }
    Ok((grad_in, grad_w, channel_sums(grad_out)))
}

/// Output geometry of a transposed convolution seen from the conv it inverts:
/// the transpose output plays the role of the conv input.
fn transpose_geometry(
    op: &'static str,
    input: [usize; 4],
    weight: [usize; 4],
    stride: usize,
    padding: usize,
) -> Result<Geometry> {
    let [_, c, h, w] = input;
    let kh = weight[2];
    let kw = weight[3];
    check_hyper(op, stride, kh, kw)?;
    if weight[0] != c {
        return Err(Error::shape(op, "input channels", weight[0], c));
    }
    let oh = conv_transpose_out_extent(h, kh, stride, padding)
        .ok_or_else(|| Error::invalid(op, format!("padding {padding} too large for height {h}")))?;
    let ow = conv_transpose_out_extent(w, kw, stride, padding)
        .ok_or_else(|| Error::invalid(op, format!("padding {padding} too large for width {w}")))?;
    Ok(Geometry {
        channels: weight[1],
        height: oh,
        width: ow,
        kh,
        kw,
        stride,
        padding,
        out_h: h,
        out_w: w,
    })
}

pub fn conv2d_transpose_forward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &[T],
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    const OP: &str = "conv2d_transpose";
    let g = transpose_geometry(OP, input.shape(), weight.shape(), stride, padding)?;
    check_bias(OP, bias, g.channels)?;
    let in_c = input.shape()[1];
    let n = input.batch();
    let mut out = Tensor::zeros([n, g.channels, g.height, g.width]);
    let mut cols = vec![T::ZERO; g.rows() * g.cols()];
    for i in 0..n {
        matmul(weight.data(), true, input.sample(i), false, &mut cols, g.rows(), in_c, g.cols(), false);
        col2im(&cols, &g, out.sample_mut(i));
    }
    add_channel_bias(&mut out, bias);
    Ok(out)
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn conv2d_transpose_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Tensor<T>, Vec<T>)> {
    const OP: &str = "conv2d_transpose backward";
    let g = transpose_geometry(OP, input.shape(), weight.shape(), stride, padding)?;
    let expect = [input.batch(), g.channels, g.height, g.width];
    if grad_out.shape() != expect {
        return Err(Error::shape(OP, "output gradient size", expect.iter().product(), grad_out.len()));
    }
    let in_c = input.shape()[1];
    let mut grad_in = Tensor::zeros(input.shape());
    let mut grad_w = Tensor::zeros(weight.shape());
    let mut cols = vec![T::ZERO; g.rows() * g.cols()];
    for i in 0..input.batch() {
        im2col(grad_out.sample(i), &g, &mut cols);
        matmul(weight.data(), false, &cols, false, grad_in.sample_mut(i), in_c, g.rows(), g.cols(), false);
        matmul(input.sample(i), false, &cols, true, grad_w.data_mut(), in_c, g.cols(), g.rows(), true);
    }
    Ok((grad_in, grad_w, channel_sums(grad_out)))
}

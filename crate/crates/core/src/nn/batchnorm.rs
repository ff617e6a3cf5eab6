//! Per-channel batch normalization over `(N, H, W)`.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Variance floor inside the square root.
pub const BN_EPSILON: f64 = 1e-5;
/// Weight of the newest batch in the running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

/// Statistics a normalization used, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance.
    pub var: Vec<f64>,
    /// Number of elements each channel was reduced over.
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn channel_stats<T: Real>(input: &Tensor<T>) -> ChannelStats {
    let [n, c, h, w] = input.shape();
    let plane = h * w;
    let count = n * plane;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for i in 0..n {
            let start = (i * c + ch) * plane;
            s += input.data()[start..start + plane].iter().map(|v| v.to_f64()).sum::<f64>();
        }
        let m = s / count as f64;
        let mut ss = 0.0;
        for i in 0..n {
            let start = (i * c + ch) * plane;
            ss += input.data()[start..start + plane]
                .iter()
                .map(|v| {
                    let d = v.to_f64() - m;
                    d * d
                })
                .sum::<f64>();
        }
        mean[ch] = m;
        var[ch] = ss / count as f64;
    }
    ChannelStats { mean, var, count }
}

/// Normalizes `input` with batch statistics (train) or the running ones (eval).
///
/// Returns the output and the statistics that were applied.
pub fn batchnorm_forward<T: Real>(
    input: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    mode: Mode,
    running_mean: &[T],
    running_var: &[T],
) -> Result<(Tensor<T>, ChannelStats)> {
    let [n, c, h, w] = input.shape();
    for (name, len) in [("gamma length", gamma.len()), ("beta length", beta.len())] {
        if len != c {
            return Err(Error::shape("batchnorm", name, c, len));
        }
    }
    let stats = match mode {
        Mode::Train => {
            if n < 2 {
                return Err(Error::invalid("batchnorm", "train mode needs a batch of at least 2 samples"));
            }
            channel_stats(input)
        }
        Mode::Eval => ChannelStats {
            mean: running_mean.iter().map(|v| v.to_f64()).collect(),
            var: running_var.iter().map(|v| v.to_f64()).collect(),
            count: n * h * w,
        },
    };
    let plane = h * w;
    let mut out = Tensor::zeros(input.shape());
    for ch in 0..c {
        let inv = 1.0 / (stats.var[ch] + BN_EPSILON).sqrt();
        let g = gamma[ch].to_f64();
        let b = beta[ch].to_f64();
        let m = stats.mean[ch];
        for i in 0..n {
            let start = (i * c + ch) * plane;
            let src = &input.data()[start..start + plane];
            let dst = &mut out.data_mut()[start..start + plane];
            for (o, &x) in dst.iter_mut().zip(src) {
                *o = T::from_f64(g * (x.to_f64() - m) * inv + b);
            }
        }
    }
    Ok((out, stats))
}

/// Returns `(grad_input, grad_gamma, grad_beta)`.
pub fn batchnorm_backward<T: Real>(
    input: &Tensor<T>,
    gamma: &[T],
    stats: &ChannelStats,
    mode: Mode,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let [n, c, h, w] = input.shape();
    if grad_out.shape() != input.shape() {
        return Err(Error::shape("batchnorm backward", "output gradient size", input.len(), grad_out.len()));
    }
    let plane = h * w;
    let m = (n * plane) as f64;
    let mut grad_in = Tensor::zeros(input.shape());
    let mut d_gamma = Vec::with_capacity(c);
    let mut d_beta = Vec::with_capacity(c);
    for ch in 0..c {
        let inv = 1.0 / (stats.var[ch] + BN_EPSILON).sqrt();
        let mean = stats.mean[ch];
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for i in 0..n {
            let start = (i * c + ch) * plane;
            for k in start..start + plane {
                let dy = grad_out.data()[k].to_f64();
                let xhat = (input.data()[k].to_f64() - mean) * inv;
                sum_dy += dy;
                sum_dy_xhat += dy * xhat;
            }
        }
        d_gamma.push(T::from_f64(sum_dy_xhat));
        d_beta.push(T::from_f64(sum_dy));
        let g = gamma[ch].to_f64();
        for i in 0..n {
            let start = (i * c + ch) * plane;
            for k in start..start + plane {
                let dy = grad_out.data()[k].to_f64();
                let dx = match mode {
                    Mode::Eval => g * inv * dy,
                    Mode::Train => {
                        let xhat = (input.data()[k].to_f64() - mean) * inv;
                        g * inv / m * (m * dy - sum_dy - xhat * sum_dy_xhat)
                    }
                };
                grad_in.data_mut()[k] = T::from_f64(dx);
            }
        }
    }
    Ok((grad_in, d_gamma, d_beta))
}

/// Exponential moving update of running statistics (unbiased variance).
pub fn update_running<T: Real>(stats: &ChannelStats, running_mean: &mut [T], running_var: &mut [T]) {
    let unbias = if stats.count > 1 {
        stats.count as f64 / (stats.count - 1) as f64
    } else {
        1.0
    };
    for ch in 0..running_mean.len() {
        let rm = running_mean[ch].to_f64();
        let rv = running_var[ch].to_f64();
        running_mean[ch] = T::from_f64((1.0 - BN_MOMENTUM) * rm + BN_MOMENTUM * stats.mean[ch]);
        running_var[ch] = T::from_f64((1.0 - BN_MOMENTUM) * rv + BN_MOMENTUM * stats.var[ch] * unbias);
    }
}

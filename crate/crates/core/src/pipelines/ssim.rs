//! Windowed structural similarity on grayscale images.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 8;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const SSIM_RANGE: f64 = 1.0;

#[derive(Debug, Clone)]
pub struct SsimResult {
    /// Mean over all windows.
    pub score: f64,
    /// One value per window position, `(H - 7) x (W - 7)`.
    pub map: Tensor<f32>,
}

impl SsimResult {
    /// `(1 - map) / 2`, so identical regions are black and opposite ones white.
    pub fn diff_image(&self) -> Tensor<f32> {
        self.map.map(|v| ((1.0 - v) / 2.0).clamp(0.0, 1.0))
    }
}

/// SSIM over every 8x8 window (stride 1, uniform weights, population
/// statistics). Inputs are single `(1, 1, H, W)` images.
pub fn ssim(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<SsimResult> {
    const OP: &str = "ssim";
    if a.shape() != b.shape() {
        return Err(Error::invalid(OP, format!("shapes differ: {:?} vs {:?}", a.shape(), b.shape())));
    }
    let [n, c, h, w] = a.shape();
    if n != 1 || c != 1 {
        return Err(Error::invalid(OP, "expects a single grayscale image"));
    }
    let k = SSIM_WINDOW;
    if h < k || w < k {
        return Err(Error::invalid(OP, format!("{h}x{w} image is smaller than the {k}x{k} window")));
    }
    let c1 = (SSIM_K1 * SSIM_RANGE).powi(2);
    let c2 = (SSIM_K2 * SSIM_RANGE).powi(2);
    let (oh, ow) = (h - k + 1, w - k + 1);
    let (pa, pb) = (a.data(), b.data());
    let inv = 1.0 / (k * k) as f64;
    let mut map = Vec::with_capacity(oh * ow);
    let mut total = 0.0;
    for y in 0..oh {
        for x in 0..ow {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..k {
                let row = (y + dy) * w + x;
                for i in row..row + k {
                    let (va, vb) = (f64::from(pa[i]), f64::from(pb[i]));
                    sa += va;
                    sb += vb;
                    saa += va * va;
                    sbb += vb * vb;
                    sab += va * vb;
                }
            }
            let (ma, mb) = (sa * inv, sb * inv);
            let va = saa * inv - ma * ma;
            let vb = sbb * inv - mb * mb;
            let cov = sab * inv - ma * mb;
            let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            total += s;
            map.push(s as f32);
        }
    }
    Ok(SsimResult {
        score: total / (oh * ow) as f64,
        map: Tensor::from_vec([1, 1, oh, ow], map)?,
    })
}

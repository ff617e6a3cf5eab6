//! Isotropic Gaussian kernel density estimate over latent codes.

use crate::error::{Error, Result};

pub const BANDWIDTH_FLOOR: f64 = 1e-3;
pub const LOG_DENSITY_FLOOR: f64 = -1e12;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Bandwidth {
    /// Scott's rule on the mean per-dimension standard deviation.
    #[default]
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KdeModel {
    /// Row-major `(n, d)`.
    latents: Vec<f64>,
    n: usize,
    d: usize,
    h: f64,
}

/// `h = sigma_bar * n^(-1/(d+4))`, floored. `sigma_bar` averages the sample
/// standard deviations (n - 1 denominator) of each dimension.
pub fn scott_bandwidth(latents: &[f64], n: usize, d: usize) -> f64 {
    if n < 2 {
        return BANDWIDTH_FLOOR;
    }
    let mut sigma_sum = 0.0;
    for j in 0..d {
        let mean = (0..n).map(|i| latents[i * d + j]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (latents[i * d + j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        sigma_sum += var.sqrt();
    }
    let sigma_bar = sigma_sum / d as f64;
    (sigma_bar * (n as f64).powf(-1.0 / (d as f64 + 4.0))).max(BANDWIDTH_FLOOR)
}

pub fn fit_kde(latents: &[Vec<f64>], bandwidth: Bandwidth) -> Result<KdeModel> {
    let n = latents.len();
    let d = latents.first().map_or(0, Vec::len);
    if n == 0 || d == 0 {
        return Err(Error::invalid("fit_kde", "need at least one latent of dimension >= 1"));
    }
    if let Some(bad) = latents.iter().position(|z| z.len() != d) {
        return Err(Error::shape("fit_kde", "latent dimension", d, latents[bad].len()));
    }
    let flat: Vec<f64> = latents.iter().flatten().copied().collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("fit_kde: non-finite latent".into()));
    }
    let h = match bandwidth {
        Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => h,
        Bandwidth::Fixed(h) => return Err(Error::invalid("fit_kde", format!("bandwidth {h} must be positive"))),
        Bandwidth::Auto => {
            let h = scott_bandwidth(&flat, n, d);
            if h == BANDWIDTH_FLOOR {
                log::warn!("latents have (near) zero spread; KDE bandwidth floored at {BANDWIDTH_FLOOR}");
            }
            h
        }
    };
    Ok(KdeModel { latents: flat, n, d, h })
}

impl KdeModel {
    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn latent(&self, i: usize) -> &[f64] {
        &self.latents[i * self.d..(i + 1) * self.d]
    }
}

/// `log[(1/n) sum_i N(z; z_i, h^2 I)]` via log-sum-exp, clamped below at -1e12.
pub fn kde_log_density(kde: &KdeModel, z: &[f64]) -> Result<f64> {
    if z.len() != kde.d {
        return Err(Error::shape("kde_log_density", "latent dimension", kde.d, z.len()));
    }
    let two_h2 = 2.0 * kde.h * kde.h;
    let exps: Vec<f64> = (0..kde.n)
        .map(|i| {
            let sq: f64 = kde.latent(i).iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
            -sq / two_h2
        })
        .collect();
    let m = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Ok(LOG_DENSITY_FLOOR);
    }
    let lse = m + exps.iter().map(|e| (e - m).exp()).sum::<f64>().ln();
    let d = kde.d as f64;
    let norm = 0.5 * d * (2.0 * std::f64::consts::PI * kde.h * kde.h).ln();
    let v = lse - (kde.n as f64).ln() - norm;
    Ok(if v.is_nan() { LOG_DENSITY_FLOOR } else { v.max(LOG_DENSITY_FLOOR) })
}

/// Averages contiguous groups of a latent vector down to `dim` values.
pub fn pool_latent(z: &[f64], dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || z.len() % dim != 0 {
        return Err(Error::invalid("pool_latent", format!("cannot pool {} values into {dim} groups", z.len())));
    }
    let g = z.len() / dim;
    Ok(z.chunks(g).map(|c| c.iter().sum::<f64>() / g as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn single_point_at_center() {
        for d in [1usize, 3, 8192] {
            let kde = fit_kde(&[vec![0.25; d]], Bandwidth::Fixed(1.0)).unwrap();
            let v = kde_log_density(&kde, &vec![0.25; d]).unwrap();
            let expect = -(d as f64 / 2.0) * (2.0 * PI).ln();
            assert!((v - expect).abs() < 1e-9 * expect.abs().max(1.0), "d={d}: {v} vs {expect}");
        }
    }

    #[test]
    fn symmetric_pair_midpoint() {
        let h = 0.7;
        let kde = fit_kde(&[vec![-1.0, 0.0], vec![1.0, 0.0]], Bandwidth::Fixed(h)).unwrap();
        let direct = {
            let k = |sq: f64| (-sq / (2.0 * h * h)).exp() / (2.0 * PI * h * h);
            0.5 * (k(1.0) + k(1.0))
        };
        assert!((kde_log_density(&kde, &[0.0, 0.0]).unwrap() - direct.ln()).abs() < 1e-12);
    }

    #[test]
    fn far_query_is_finite() {
        let kde = fit_kde(&[vec![0.0; 4]], Bandwidth::Fixed(1e-3)).unwrap();
        let v = kde_log_density(&kde, &[1e6; 4]).unwrap();
        assert!(v.is_finite());
        assert_eq!(v, LOG_DENSITY_FLOOR);
        let v = kde_log_density(&kde, &[0.5; 4]).unwrap();
        assert!(v.is_finite() && v < -1e4);
    }

    #[test]
    fn scott_rule_and_floor() {
        let pts = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let kde = fit_kde(&pts, Bandwidth::Auto).unwrap();
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((kde.bandwidth() - sd * 4f64.powf(-0.2)).abs() < 1e-12);
        let flat = fit_kde(&[vec![1.0, 1.0], vec![1.0, 1.0]], Bandwidth::Auto).unwrap();
        assert_eq!(flat.bandwidth(), BANDWIDTH_FLOOR);
    }

    #[test]
    fn errors() {
        assert!(fit_kde(&[], Bandwidth::Auto).is_err());
        assert!(fit_kde(&[vec![1.0], vec![1.0, 2.0]], Bandwidth::Auto).is_err());
        let kde = fit_kde(&[vec![1.0, 2.0]], Bandwidth::Auto).unwrap();
        assert!(kde_log_density(&kde, &[1.0]).is_err());
        assert_eq!(pool_latent(&[1.0, 3.0, 5.0, 7.0], 2).unwrap(), vec![2.0, 6.0]);
        assert!(pool_latent(&[1.0, 2.0, 3.0], 2).is_err());
    }
}

//! Closed-form 1-D densities for checking discriminators against the
//! optimal discriminator `p_data / (p_data + p_model)`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Weighted sum of normal densities; weights are normalized on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    /// `(weight, mean, std)`.
    components: Vec<(f64, f64, f64)>,
}

impl GaussianMixture {
    pub fn new(components: &[(f64, f64, f64)]) -> Result<Self> {
        let total: f64 = components.iter().map(|c| c.0).sum();
        if components.is_empty() || components.iter().any(|&(w, _, s)| !(w >= 0.0 && s > 0.0)) || !(total > 0.0) {
            return Err(Error::invalid("gaussian_mixture", "need positive weights and standard deviations"));
        }
        Ok(Self {
            components: components.iter().map(|&(w, m, s)| (w / total, m, s)).collect(),
        })
    }

    pub fn normal(mean: f64, std: f64) -> Result<Self> {
        Self::new(&[(1.0, mean, std)])
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let norm = (2.0 * std::f64::consts::PI).sqrt();
        self.components
            .iter()
            .map(|&(w, m, s)| w * (-0.5 * ((x - m) / s).powi(2)).exp() / (s * norm))
            .sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = self.components[self.components.len() - 1];
        for &c in &self.components {
            acc += c.0;
            if u < acc {
                pick = c;
                break;
            }
        }
        let z: f64 = StandardNormal.sample(rng);
        pick.1 + pick.2 * z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDensityPair {
    pub data: GaussianMixture,
    pub model: GaussianMixture,
    /// Evaluation grid `[lo, hi]` with `points` evenly spaced nodes.
    pub grid: (f64, f64, usize),
}

impl ToyDensityPair {
    pub fn grid_points(&self) -> Vec<f64> {
        let (lo, hi, n) = self.grid;
        if n < 2 {
            return vec![lo];
        }
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }
}

/// `p_data(x) / (p_data(x) + p_model(x))`, and 0.5 where both vanish.
pub fn optimal_discriminator_oracle(toy: &ToyDensityPair, x: f64) -> f64 {
    let (pd, pm) = (toy.data.pdf(x), toy.model.pdf(x));
    if pd + pm == 0.0 {
        0.5
    } else {
        pd / (pd + pm)
    }
}

/// Trapezoid rule over `n` evenly spaced nodes on `[lo, hi]`.
pub fn trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / (n - 1) as f64;
    let inner: f64 = (1..n - 1).map(|i| f(lo + i as f64 * h)).sum();
    h * (0.5 * (f(lo) + f(hi)) + inner)
}

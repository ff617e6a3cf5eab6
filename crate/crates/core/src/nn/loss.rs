use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Probability clamp for binary cross-entropy.
pub const BCE_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    Bce,
}

fn clamp_prob(p: f64) -> (f64, bool) {
    if p < BCE_EPSILON {
        (BCE_EPSILON, true)
    } else if p > 1.0 - BCE_EPSILON {
        (1.0 - BCE_EPSILON, true)
    } else {
        (p, false)
    }
}

/// Mean loss over every element, and its gradient with respect to `prediction`.
///
/// `mse = mean (p - t)^2`; `bce = -mean [t ln p + (1 - t) ln(1 - p)]` with `p`
/// clamped to `[eps, 1 - eps]` (the gradient is zero where the clamp is active).
pub fn loss_eval<T: Real>(prediction: &Tensor<T>, target: &Tensor<T>, kind: LossKind) -> Result<(f64, Tensor<T>)> {
    if prediction.shape() != target.shape() {
        let (p, t) = (prediction.shape(), target.shape());
        let dim = p.iter().zip(&t).position(|(a, b)| a != b).unwrap_or(0);
        const DIMS: [&str; 4] = ["batch", "channels", "height", "width"];
        return Err(Error::shape("loss", DIMS[dim], p[dim], t[dim]));
    }
    let m = prediction.len().max(1) as f64;
    let mut total = 0.0;
    let grad: Vec<T> = match kind {
        LossKind::Mse => prediction
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| {
                let d = p.to_f64() - t.to_f64();
                total += d * d;
                T::from_f64(2.0 * d / m)
            })
            .collect(),
        LossKind::Bce => prediction
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| {
                let (p, clamped) = clamp_prob(p.to_f64());
                let t = t.to_f64();
                total -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
                if clamped {
                    T::ZERO
                } else {
                    T::from_f64((p - t) / (p * (1.0 - p)) / m)
                }
            })
            .collect(),
    };
    Ok((total / m, Tensor::from_vec(prediction.shape(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;

    #[test]
    fn perfect_prediction_has_zero_mse() {
        let t = Tensor::<f32>::full([2, 1, 3, 3], 0.4);
        assert_eq!(loss_eval(&t, &t, LossKind::Mse).unwrap().0, 0.0);
    }

    #[test]
    fn bce_at_half_is_ln2() {
        let p = Tensor::<f64>::full([1, 1, 1, 1], 0.5);
        let t = Tensor::<f64>::full([1, 1, 1, 1], 1.0);
        let (l, _) = loss_eval(&p, &t, LossKind::Bce).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn bce_clamps_saturated_outputs() {
        let p = Tensor::<f32>::from_vec([1, 2, 1, 1], vec![0.0, 1.0]).unwrap();
        let t = Tensor::<f32>::from_vec([1, 2, 1, 1], vec![1.0, 0.0]).unwrap();
        let (l, g) = loss_eval(&p, &t, LossKind::Bce).unwrap();
        assert!(l.is_finite());
        assert!((l + BCE_EPSILON.ln()).abs() < 1e-9);
        assert!(g.all_finite());
    }

    #[test]
    fn matches_scalar_loop_oracle() {
        let mut rng = SeedStream::new(21).rng("loss");
        let p = Tensor::<f64>::uniform([3, 2, 2, 2], 0.01, 0.99, &mut rng);
        let t = Tensor::<f64>::uniform([3, 2, 2, 2], 0.0, 1.0, &mut rng);
        let n = p.len() as f64;
        let mut mse = 0.0;
        let mut bce = 0.0;
        for i in 0..p.len() {
            let (a, b) = (p.data()[i], t.data()[i]);
            mse += (a - b) * (a - b);
            bce += -(b * a.ln() + (1.0 - b) * (1.0 - a).ln());
        }
        assert!((loss_eval(&p, &t, LossKind::Mse).unwrap().0 - mse / n).abs() < 1e-12);
        assert!((loss_eval(&p, &t, LossKind::Bce).unwrap().0 - bce / n).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_names_dimension() {
        let a = Tensor::<f32>::zeros([2, 1, 3, 3]);
        let b = Tensor::<f32>::zeros([2, 1, 3, 4]);
        let e = loss_eval(&a, &b, LossKind::Mse).unwrap_err().to_string();
        assert!(e.contains("width"), "{e}");
    }
}

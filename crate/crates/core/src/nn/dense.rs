use crate::error::{Error, Result};
use crate::tensor::{matmul, Real, Tensor};

/// `out = b + W a` for every sample; `weight` is `(units, features, 1, 1)`.
///
/// The input is read as `(N, D)` whatever its trailing shape; the result is `(N, units, 1, 1)`.
pub fn dense_forward<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>> {
    let [units, features, ..] = weight.shape();
    let d = input.sample_len();
    if d != features {
        return Err(Error::shape("dense", "input features", features, d));
    }
    if bias.len() != units {
        return Err(Error::shape("dense", "bias length", units, bias.len()));
    }
    let n = input.batch();
    let mut out = Tensor::zeros([n, units, 1, 1]);
    matmul(input.data(), false, weight.data(), true, out.data_mut(), n, d, units, false);
    for row in out.data_mut().chunks_mut(units.max(1)) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
    Ok(out)
}

/// Returns `(grad_input, grad_weight, grad_bias)`; `grad_input` has the input's shape.
pub fn dense_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Vec<T>)> {
    let [units, features, ..] = weight.shape();
    let n = input.batch();
    if grad_out.len() != n * units {
        return Err(Error::shape("dense backward", "output gradient size", n * units, grad_out.len()));
    }
    let mut grad_in = Tensor::zeros(input.shape());
    matmul(grad_out.data(), false, weight.data(), false, grad_in.data_mut(), n, units, features, false);
    let mut grad_w = Tensor::zeros(weight.shape());
    matmul(grad_out.data(), true, input.data(), false, grad_w.data_mut(), units, n, features, false);
    let mut grad_b = vec![0.0f64; units];
    for row in grad_out.data().chunks(units.max(1)) {
        for (s, v) in grad_b.iter_mut().zip(row) {
            *s += v.to_f64();
        }
    }
    Ok((grad_in, grad_w, grad_b.into_iter().map(T::from_f64).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;

    #[test]
    fn identity_weights_pass_through() {
        let x = Tensor::<f32>::from_vec([2, 3, 1, 1], vec![1.0, -2.0, 3.0, 0.5, 0.0, 4.0]).unwrap();
        let w = Tensor::<f32>::from_fn([3, 3, 1, 1], |[i, j, ..]| if i == j { 1.0 } else { 0.0 });
        let y = dense_forward(&x, &w, &[0.0; 3]).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn zero_weights_emit_bias() {
        let x = Tensor::<f32>::full([3, 4, 1, 1], 7.0);
        let y = dense_forward(&x, &Tensor::zeros([2, 4, 1, 1]), &[5.0, -1.0]).unwrap();
        assert_eq!(y.data(), &[5.0, -1.0, 5.0, -1.0, 5.0, -1.0]);
    }

    #[test]
    fn matches_hand_multiply() {
        let mut rng = SeedStream::new(9).rng("dense");
        let w = Tensor::<f64>::randn([3, 4, 1, 1], &mut rng);
        let x = Tensor::<f64>::randn([1, 4, 1, 1], &mut rng);
        let b = [0.1, -0.2, 0.3];
        let y = dense_forward(&x, &w, &b).unwrap();
        for u in 0..3 {
            let mut acc = b[u];
            for d in 0..4 {
                acc += w.at([u, d, 0, 0]) * x.data()[d];
            }
            assert!((y.data()[u] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn flattens_spatial_input_and_checks_width() {
        let x = Tensor::<f32>::full([1, 2, 2, 2], 1.0);
        let w = Tensor::<f32>::full([1, 8, 1, 1], 0.5);
        assert_eq!(dense_forward(&x, &w, &[0.0]).unwrap().data(), &[4.0]);
        let bad = Tensor::<f32>::full([1, 7, 1, 1], 0.5);
        assert!(dense_forward(&x, &bad, &[0.0]).is_err());
    }
}

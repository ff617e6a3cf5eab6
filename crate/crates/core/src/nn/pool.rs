use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// What a pooling layer does when an extent is not a multiple of the window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OddExtent {
    /// Refuse the input.
    #[default]
    Error,
    /// Implicit -inf padding on the bottom/right edge (ceil division).
    Pad,
    /// Drop the trailing row/column (floor division).
    Truncate,
}

pub fn pool_out_extent(input: usize, window: usize, odd: OddExtent) -> Option<usize> {
    if window == 0 || input < window {
        return None;
    }
    match odd {
        OddExtent::Error if input % window != 0 => None,
        OddExtent::Error | OddExtent::Truncate => Some(input / window),
        OddExtent::Pad => Some(input.div_ceil(window)),
    }
}

/// Non-overlapping max pooling (stride = window).
///
/// Returns the pooled tensor and, for every output element, the flat index of
/// the winning input element (first maximum in row-major window order).
pub fn maxpool2d_forward<T: Real>(input: &Tensor<T>, window: usize, odd: OddExtent) -> Result<(Tensor<T>, Vec<u32>)> {
    const OP: &str = "maxpool2d";
    let [n, c, h, w] = input.shape();
    let oh = pool_out_extent(h, window, odd).ok_or_else(|| {
        Error::invalid(OP, format!("height {h} is not a multiple of window {window} (odd-extent handling disabled)"))
    })?;
    let ow = pool_out_extent(w, window, odd).ok_or_else(|| {
        Error::invalid(OP, format!("width {w} is not a multiple of window {window} (odd-extent handling disabled)"))
    })?;
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let src = input.data();
    let dst = out.data_mut();
    let mut o = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = usize::MAX;
                let mut best = T::ZERO;
                for dy in 0..window {
                    let y = oy * window + dy;
                    if y >= h {
                        break;
                    }
                    for dx in 0..window {
                        let x = ox * window + dx;
                        if x >= w {
                            break;
                        }
                        let idx = base + y * w + x;
                        if best_idx == usize::MAX || src[idx] > best {
                            best = src[idx];
                            best_idx = idx;
                        }
                    }
                }
                dst[o] = best;
                argmax.push(best_idx as u32);
                o += 1;
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2d_backward<T: Real>(input_shape: [usize; 4], argmax: &[u32], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if argmax.len() != grad_out.len() {
        return Err(Error::shape("maxpool2d backward", "output gradient size", argmax.len(), grad_out.len()));
    }
    let mut grad_in = Tensor::zeros(input_shape);
    let g = grad_in.data_mut();
    for (&i, &d) in argmax.iter().zip(grad_out.data()) {
        g[i as usize] += d;
    }
    Ok(grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;

    #[test]
    fn constant_image_halves() {
        let x = Tensor::<f32>::full([1, 2, 4, 6], 0.3);
        let (y, _) = maxpool2d_forward(&x, 2, OddExtent::Error).unwrap();
        assert_eq!(y.shape(), [1, 2, 2, 3]);
        assert!(y.data().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn single_window() {
        let x = Tensor::<f32>::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, idx) = maxpool2d_forward(&x, 2, OddExtent::Error).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(idx, vec![3]);
    }

    #[test]
    fn random_matches_brute_force() {
        let mut rng = SeedStream::new(5).rng("pool");
        let x = Tensor::<f64>::randn([2, 3, 4, 4], &mut rng);
        let (y, _) = maxpool2d_forward(&x, 2, OddExtent::Error).unwrap();
        for n in 0..2 {
            for c in 0..3 {
                for oy in 0..2 {
                    for ox in 0..2 {
                        let mut m = f64::NEG_INFINITY;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                m = m.max(x.at([n, c, 2 * oy + dy, 2 * ox + dx]));
                            }
                        }
                        assert_eq!(y.at([n, c, oy, ox]), m);
                    }
                }
            }
        }
    }

    #[test]
    fn odd_extent_policies() {
        let x = Tensor::<f32>::from_fn([1, 1, 3, 3], |[_, _, y, x]| (y * 3 + x) as f32);
        assert!(maxpool2d_forward(&x, 2, OddExtent::Error).is_err());
        let (p, _) = maxpool2d_forward(&x, 2, OddExtent::Pad).unwrap();
        assert_eq!(p.shape(), [1, 1, 2, 2]);
        assert_eq!(p.data(), &[4.0, 5.0, 7.0, 8.0]);
        let (t, _) = maxpool2d_forward(&x, 2, OddExtent::Truncate).unwrap();
        assert_eq!(t.data(), &[4.0]);
    }

    #[test]
    fn backward_routes_to_argmax() {
        let x = Tensor::<f32>::from_vec([1, 1, 2, 2], vec![1.0, 5.0, 3.0, 4.0]).unwrap();
        let (_, idx) = maxpool2d_forward(&x, 2, OddExtent::Error).unwrap();
        let g = maxpool2d_backward([1, 1, 2, 2], &idx, &Tensor::full([1, 1, 1, 1], 2.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 2.0, 0.0, 0.0]);
    }
}

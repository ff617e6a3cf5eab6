use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const LEAKY_RELU_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    /// Negative slope fixed at [`LEAKY_RELU_SLOPE`].
    LeakyRelu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu => "leaky_relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        }
    }

    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::ZERO),
            Activation::LeakyRelu => {
                if x > T::ZERO {
                    x
                } else {
                    x * T::from_f64(LEAKY_RELU_SLOPE)
                }
            }
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    fn derivative<T: Real>(self, x: T, y: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::ZERO {
                    T::ONE
                } else {
                    T::ZERO
                }
            }
            Activation::LeakyRelu => {
                if x > T::ZERO {
                    T::ONE
                } else {
                    T::from_f64(LEAKY_RELU_SLOPE)
                }
            }
            Activation::Sigmoid => y * (T::ONE - y),
            Activation::Tanh => T::ONE - y * y,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "leaky_relu" => Ok(Activation::LeakyRelu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::invalid("activation", format!("unknown activation `{other}`"))),
        }
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

pub fn activate<T: Real>(input: &Tensor<T>, act: Activation) -> Tensor<T> {
    input.map(|v| act.apply(v))
}

/// Name-based entry point; rejects names outside the closed set.
pub fn activate_named<T: Real>(input: &Tensor<T>, name: &str) -> Result<Tensor<T>> {
    Ok(activate(input, name.parse()?))
}

pub fn activation_backward<T: Real>(input: &Tensor<T>, output: &Tensor<T>, grad_out: &Tensor<T>, act: Activation) -> Tensor<T> {
    let data = input
        .data()
        .iter()
        .zip(output.data())
        .zip(grad_out.data())
        .map(|((&x, &y), &g)| g * act.derivative(x, y))
        .collect();
    Tensor::from_vec(input.shape(), data).expect("activation shapes agree")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64, act: Activation) -> f64 {
        act.apply(v)
    }

    #[test]
    fn scalar_values() {
        assert_eq!(one(-3.0, Activation::Relu), 0.0);
        assert_eq!(one(2.5, Activation::Relu), 2.5);
        assert_eq!(one(0.0, Activation::Sigmoid), 0.5);
        assert!((one(-1.0, Activation::LeakyRelu) + 0.2).abs() < 1e-15);
        assert_eq!(one(0.0, Activation::Tanh), 0.0);
    }

    #[test]
    fn names_round_trip_and_unknown_rejected() {
        for a in [Activation::Relu, Activation::LeakyRelu, Activation::Sigmoid, Activation::Tanh] {
            assert_eq!(a.name().parse::<Activation>().unwrap(), a);
        }
        let t = Tensor::<f32>::zeros([1, 1, 1, 1]);
        assert!(activate_named(&t, "softplus").is_err());
        assert_eq!(activate_named(&t, "sigmoid").unwrap().data(), &[0.5]);
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        let s = one(-800.0, Activation::Sigmoid);
        assert!(s.is_finite() && s >= 0.0);
        assert_eq!(one(800.0, Activation::Sigmoid), 1.0);
    }
}

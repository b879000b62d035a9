//! Elementwise activations. `hard_sigmoid(x) = clamp((x + 3) / 6, 0, 1)`.

use crate::error::{Error, Result};
use crate::tensor::{fmt_shape, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Tanh,
    Sigmoid,
    HardSigmoid,
}

fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl Activation {
    pub const ALL: [Activation; 4] = [
        Activation::Silu,
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::HardSigmoid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Activation::Silu => "silu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::HardSigmoid => "hard_sigmoid",
        }
    }

    pub fn eval<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Silu => x * sigmoid_scalar(x),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid_scalar(x),
            Activation::HardSigmoid => ((x + T::of(3.0)) / T::of(6.0)).max(T::zero()).min(T::one()),
        }
    }

    /// Derivative at `x`. Hard sigmoid uses slope `1/6` on the open interval
    /// `(-3, 3)` and zero elsewhere.
    pub fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Silu => {
                let s = sigmoid_scalar(x);
                s * (T::one() + x * (T::one() - s))
            }
            Activation::Tanh => {
                let t = x.tanh();
                T::one() - t * t
            }
            Activation::Sigmoid => {
                let s = sigmoid_scalar(x);
                s * (T::one() - s)
            }
            Activation::HardSigmoid => {
                if x > T::of(-3.0) && x < T::of(3.0) {
                    T::of(1.0 / 6.0)
                } else {
                    T::zero()
                }
            }
        }
    }

    pub fn forward<T: Scalar>(self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.ensure_finite(self.name())?;
        Ok(x.map(|v| self.eval(v)))
    }

    /// `dy ⊙ f'(x)`.
    pub fn backward<T: Scalar>(self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        if x.shape() != dy.shape() {
            return Err(Error::shape(self.name(), fmt_shape(x.shape()), fmt_shape(dy.shape())));
        }
        Ok(Tensor::raw(
            x.shape().to_vec(),
            x.data()
                .iter()
                .zip(dy.data())
                .map(|(&v, &g)| g * self.derivative(v))
                .collect(),
        ))
    }
}

pub fn silu<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    Activation::Silu.forward(x)
}

pub fn tanh<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    Activation::Tanh.forward(x)
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    Activation::Sigmoid.forward(x)
}

pub fn hard_sigmoid<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    Activation::HardSigmoid.forward(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn values_at_zero_and_clamp_edges() {
        assert_eq!(Activation::Silu.eval(0.0f64), 0.0);
        assert_eq!(Activation::Tanh.eval(0.0f64), 0.0);
        assert_eq!(Activation::Sigmoid.eval(0.0f64), 0.5);
        assert_eq!(Activation::HardSigmoid.eval(0.0f64), 0.5);
        assert_eq!(Activation::HardSigmoid.eval(0.0f32), 0.5);
        assert_eq!(Activation::HardSigmoid.eval(3.0f64), 1.0);
        assert_eq!(Activation::HardSigmoid.eval(-3.0f64), 0.0);
    }

    #[test]
    fn hard_sigmoid_is_exactly_the_clamp() {
        let mut r = Rng::new(3);
        let x = Tensor::<f32>::rand_uniform(&[2000], &mut r, -6.0, 6.0).unwrap();
        let y = hard_sigmoid(&x).unwrap();
        for (&a, &b) in x.data().iter().zip(y.data()) {
            assert_eq!(b, ((a + 3.0) / 6.0).clamp(0.0, 1.0));
        }
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(Activation::Sigmoid.eval(-1000.0f64), 0.0);
        assert_eq!(Activation::Sigmoid.eval(1000.0f64), 1.0);
        assert_eq!(Activation::Silu.eval(-1000.0f32), -0.0);
    }

    #[test]
    fn derivatives_match_closed_forms() {
        for a in Activation::ALL {
            let d = a.derivative(0.0f64);
            let expect = match a {
                Activation::Silu => 0.5,
                Activation::Tanh => 1.0,
                Activation::Sigmoid => 0.25,
                Activation::HardSigmoid => 1.0 / 6.0,
            };
            assert!((d - expect).abs() < 1e-15, "{}", a.name());
        }
    }
}

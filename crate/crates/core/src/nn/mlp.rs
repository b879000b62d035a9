use crate::error::{Error, Result};
use crate::nn::activation::Activation;
use crate::nn::linear::Linear;
use crate::nn::params::{join, Params};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_HIDDEN_RATIO: f64 = 2.0;

/// `project(silu(expand(x)))` over the last axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub expand: Linear<T>,
    pub project: Linear<T>,
}

impl<T: Scalar> Params<T> for Mlp<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>)) {
        self.expand.visit(&join(prefix, "expand"), f);
        self.project.visit(&join(prefix, "project"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.expand.visit_mut(&join(prefix, "expand"), f);
        self.project.visit_mut(&join(prefix, "project"), f);
    }
}

/// Hidden width for a feature count and ratio, at least 1.
pub fn hidden_width(features: usize, ratio: f64) -> Result<usize> {
    if !ratio.is_finite() || ratio <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "hidden ratio must be positive, got {ratio}"
        )));
    }
    Ok(((features as f64 * ratio).round() as usize).max(1))
}

impl<T: Scalar> Mlp<T> {
    pub fn new(expand: Linear<T>, project: Linear<T>) -> Result<Self> {
        if expand.out_features() != project.in_features() {
            return Err(Error::shape(
                "mlp",
                format!("hidden width {}", expand.out_features()),
                format!("{}", project.in_features()),
            ));
        }
        Ok(Self { expand, project })
    }

    pub fn init(features: usize, hidden_ratio: f64, rng: &mut Rng) -> Result<Self> {
        let hidden = hidden_width(features, hidden_ratio)?;
        Self::new(
            Linear::init(features, hidden, rng)?,
            Linear::init(hidden, features, rng)?,
        )
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if self.project.out_features() != self.expand.in_features() {
            return Err(Error::InvalidArgument(
                "mlp must map features back to the input width".into(),
            ));
        }
        let h = self.expand.forward(x)?;
        self.project.forward(&Activation::Silu.forward(&h)?)
    }

    pub fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<(Tensor<T>, Self)> {
        let h = self.expand.forward(x)?;
        let a = Activation::Silu.forward(&h)?;
        let (da, g_project) = self.project.backward(&a, dy)?;
        let dh = Activation::Silu.backward(&h, &da)?;
        let (dx, g_expand) = self.expand.backward(x, &dh)?;
        Ok((
            dx,
            Self {
                expand: g_expand,
                project: g_project,
            },
        ))
    }
}

pub fn mlp_forward<T: Scalar>(x: &Tensor<T>, p: &Mlp<T>) -> Result<Tensor<T>> {
    p.forward(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::zero_all;

    #[test]
    fn zero_weights_give_bias_constant() {
        let mut r = Rng::new(1);
        let mut m = Mlp::<f64>::init(3, 2.0, &mut r).unwrap();
        zero_all(&mut m);
        m.project.bias = Some(Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        let x = Tensor::rand_uniform(&[4, 3], &mut r, -1.0, 1.0).unwrap();
        let y = m.forward(&x).unwrap();
        assert_eq!(y.shape(), x.shape());
        for row in y.data().chunks(3) {
            assert_eq!(row, &[1.0, 2.0, 3.0]);
        }
    }

    #[test]
    fn hidden_ratio_validation() {
        assert_eq!(hidden_width(4, 2.0).unwrap(), 8);
        assert_eq!(hidden_width(3, 0.1).unwrap(), 1);
        assert!(hidden_width(4, 0.0).is_err());
        let mut r = Rng::new(1);
        let a = Linear::<f64>::init(3, 5, &mut r).unwrap();
        let b = Linear::<f64>::init(4, 3, &mut r).unwrap();
        assert!(Mlp::new(a, b).is_err());
    }
}

use crate::error::{Error, Result};
use crate::nn::params::{join, uniform_init, Params};
use crate::parallel;
use crate::rng::Rng;
use crate::tensor::{fmt_shape, Scalar, Tensor};

/// Affine map over the last axis: `y = x W^T + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    /// `[out_f, in_f]`
    pub weight: Tensor<T>,
    /// `[out_f]`
    pub bias: Option<Tensor<T>>,
}

impl<T: Scalar> Params<T> for Linear<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

impl<T: Scalar> Linear<T> {
    pub fn new(weight: Tensor<T>, bias: Option<Tensor<T>>) -> Result<Self> {
        if weight.rank() != 2 {
            return Err(Error::shape("linear", "rank-2 weight", fmt_shape(weight.shape())));
        }
        if let Some(b) = &bias {
            if b.shape() != [weight.shape()[0]] {
                return Err(Error::shape(
                    "linear bias",
                    format!("[{}]", weight.shape()[0]),
                    fmt_shape(b.shape()),
                ));
            }
        }
        Ok(Self { weight, bias })
    }

    pub fn init(in_f: usize, out_f: usize, rng: &mut Rng) -> Result<Self> {
        let weight = uniform_init(&[out_f, in_f], in_f, rng)?;
        let bias = uniform_init(&[out_f], in_f, rng)?;
        Self::new(weight, Some(bias))
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    fn rows(&self, x: &Tensor<T>) -> Result<usize> {
        let last = *x.shape().last().expect("rank >= 1");
        if last != self.in_features() {
            return Err(Error::shape(
                "linear",
                format!("last extent {}", self.in_features()),
                fmt_shape(x.shape()),
            ));
        }
        Ok(x.len() / last)
    }

    /// Each output sums the input features in ascending order, then adds
    /// the bias.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.rows(x)?;
        let (fi, fo) = (self.in_features(), self.out_features());
        let (xd, wd) = (x.data(), self.weight.data());
        let bias = self.bias.as_ref().map(|b| b.data());
        let mut out = vec![T::zero(); x.len() / fi * fo];
        parallel::for_each_chunk(&mut out, fo, |m, dst| {
            let xr = &xd[m * fi..(m + 1) * fi];
            for (o, d) in dst.iter_mut().enumerate() {
                let wr = &wd[o * fi..(o + 1) * fi];
                let mut acc = xr.iter().zip(wr).fold(T::zero(), |a, (&xv, &wv)| a + xv * wv);
                if let Some(bd) = bias {
                    acc = acc + bd[o];
                }
                *d = acc;
            }
        });
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = fo;
        let y = Tensor::raw(shape, out);
        y.ensure_finite("linear")?;
        Ok(y)
    }

    pub fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<(Tensor<T>, Self)> {
        let rows = self.rows(x)?;
        let (fi, fo) = (self.in_features(), self.out_features());
        let mut expect = x.shape().to_vec();
        *expect.last_mut().unwrap() = fo;
        if dy.shape() != expect.as_slice() {
            return Err(Error::shape(
                "linear backward",
                fmt_shape(&expect),
                fmt_shape(dy.shape()),
            ));
        }
        let (xd, wd, gd) = (x.data(), self.weight.data(), dy.data());

        let mut dx = vec![T::zero(); x.len()];
        parallel::for_each_chunk(&mut dx, fi, |m, dst| {
            let gr = &gd[m * fo..(m + 1) * fo];
            for (o, &g) in gr.iter().enumerate() {
                let wr = &wd[o * fi..(o + 1) * fi];
                for (d, &wv) in dst.iter_mut().zip(wr) {
                    *d = *d + g * wv;
                }
            }
        });

        let mut dw = vec![T::zero(); fo * fi];
        parallel::for_each_chunk(&mut dw, fi, |o, dst| {
            for m in 0..rows {
                let g = gd[m * fo + o];
                let xr = &xd[m * fi..(m + 1) * fi];
                for (d, &xv) in dst.iter_mut().zip(xr) {
                    *d = *d + g * xv;
                }
            }
        });

        let db = self.bias.as_ref().map(|_| {
            let mut acc = vec![T::zero(); fo];
            for m in 0..rows {
                for (a, &g) in acc.iter_mut().zip(&gd[m * fo..(m + 1) * fo]) {
                    *a = *a + g;
                }
            }
            Tensor::raw(vec![fo], acc)
        });

        Ok((
            Tensor::raw(x.shape().to_vec(), dx),
            Self {
                weight: Tensor::raw(vec![fo, fi], dw),
                bias: db,
            },
        ))
    }
}

pub fn linear<T: Scalar>(x: &Tensor<T>, p: &Linear<T>) -> Result<Tensor<T>> {
    p.forward(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_bias_only() {
        let mut r = Rng::new(1);
        let x = Tensor::<f64>::rand_uniform(&[2, 3, 4], &mut r, -1.0, 1.0).unwrap();
        let mut eye = vec![0.0; 16];
        for i in 0..4 {
            eye[i * 5] = 1.0;
        }
        let id = Linear::new(Tensor::from_vec(&[4, 4], eye).unwrap(), None).unwrap();
        assert_eq!(id.forward(&x).unwrap(), x);
        let b = Tensor::from_vec(&[2], vec![0.5, -2.0]).unwrap();
        let zero = Linear::new(Tensor::zeros(&[2, 4]).unwrap(), Some(b)).unwrap();
        let y = zero.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3, 2]);
        for pair in y.data().chunks(2) {
            assert_eq!(pair, &[0.5, -2.0]);
        }
    }

    #[test]
    fn matches_matmul_formulation() {
        let mut r = Rng::new(2);
        let x = Tensor::<f64>::rand_uniform(&[5, 3], &mut r, -1.0, 1.0).unwrap();
        let l = Linear::<f64>::init(3, 4, &mut r).unwrap();
        let y = l.forward(&x).unwrap();
        let wt = l.weight.transpose_last2().unwrap();
        let xw = x.matmul(&wt).unwrap();
        let bias = l.bias.as_ref().unwrap().data();
        for m in 0..5 {
            for (o, b) in bias.iter().enumerate() {
                assert_eq!(y.data()[m * 4 + o], xw.data()[m * 4 + o] + b);
            }
        }
    }

    #[test]
    fn rejects_extent_mismatch() {
        let mut r = Rng::new(3);
        let l = Linear::<f64>::init(3, 4, &mut r).unwrap();
        assert!(l.forward(&Tensor::zeros(&[2, 4]).unwrap()).is_err());
        assert!(Linear::new(
            Tensor::<f64>::zeros(&[2, 3]).unwrap(),
            Some(Tensor::zeros(&[3]).unwrap())
        )
        .is_err());
    }
}

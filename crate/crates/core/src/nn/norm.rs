use crate::error::{Error, Result};
use crate::nn::params::{join, Params};
use crate::parallel;
use crate::tensor::{fmt_shape, Scalar, Tensor};

pub const DEFAULT_LN_EPS: f64 = 1e-5;

/// Layer normalization of the channel vector at every spatial site of an
/// `[N, C, H, W]` map.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub eps: f64,
}

impl<T: Scalar> Params<T> for LayerNorm<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}

/// Per-site statistics, reused by the backward pass.
struct Moments<T> {
    mean: T,
    rstd: T,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(gamma: Tensor<T>, beta: Tensor<T>, eps: f64) -> Result<Self> {
        if gamma.rank() != 1 || gamma.shape() != beta.shape() {
            return Err(Error::shape(
                "layer_norm",
                fmt_shape(gamma.shape()),
                fmt_shape(beta.shape()),
            ));
        }
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "layer_norm eps must be positive, got {eps}"
            )));
        }
        Ok(Self { gamma, beta, eps })
    }

    /// `gamma = 1`, `beta = 0`.
    pub fn identity(channels: usize) -> Result<Self> {
        Self::new(Tensor::ones(&[channels])?, Tensor::zeros(&[channels])?, DEFAULT_LN_EPS)
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Tensor<T>) -> Result<(usize, usize, usize)> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.channels() {
            return Err(Error::shape(
                "layer_norm",
                format!("{} channels", self.channels()),
                fmt_shape(x.shape()),
            ));
        }
        Ok((n, c, h * w))
    }

    fn moments(&self, xd: &[T], c: usize, hw: usize, site: usize) -> Moments<T> {
        let inv_c = T::of(1.0 / c as f64);
        let mut sum = T::zero();
        for ch in 0..c {
            sum = sum + xd[ch * hw + site];
        }
        let mean = sum * inv_c;
        let mut var = T::zero();
        for ch in 0..c {
            let d = xd[ch * hw + site] - mean;
            var = var + d * d;
        }
        var = var * inv_c;
        Moments {
            mean,
            rstd: T::one() / (var + T::of(self.eps)).sqrt(),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, c, hw) = self.check(x)?;
        let (g, b) = (self.gamma.data(), self.beta.data());
        let mut out = vec![T::zero(); x.len()];
        let xd = x.data();
        parallel::for_each_chunk(&mut out, c * hw, |n, dst| {
            let xs = &xd[n * c * hw..][..c * hw];
            for site in 0..hw {
                let m = self.moments(xs, c, hw, site);
                for ch in 0..c {
                    let xhat = (xs[ch * hw + site] - m.mean) * m.rstd;
                    dst[ch * hw + site] = g[ch] * xhat + b[ch];
                }
            }
        });
        let y = Tensor::raw(x.shape().to_vec(), out);
        y.ensure_finite("layer_norm")?;
        Ok(y)
    }

    pub fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<(Tensor<T>, Self)> {
        let (n, c, hw) = self.check(x)?;
        if dy.shape() != x.shape() {
            return Err(Error::shape(
                "layer_norm backward",
                fmt_shape(x.shape()),
                fmt_shape(dy.shape()),
            ));
        }
        let g = self.gamma.data();
        let (xd, gd) = (x.data(), dy.data());
        let inv_c = T::of(1.0 / c as f64);
        let mut dx = vec![T::zero(); x.len()];
        parallel::for_each_chunk(&mut dx, c * hw, |b, dst| {
            let xs = &xd[b * c * hw..][..c * hw];
            let gs = &gd[b * c * hw..][..c * hw];
            for site in 0..hw {
                let m = self.moments(xs, c, hw, site);
                let mut mean_dxhat = T::zero();
                let mut mean_dxhat_xhat = T::zero();
                for ch in 0..c {
                    let xhat = (xs[ch * hw + site] - m.mean) * m.rstd;
                    let dxhat = gs[ch * hw + site] * g[ch];
                    mean_dxhat = mean_dxhat + dxhat;
                    mean_dxhat_xhat = mean_dxhat_xhat + dxhat * xhat;
                }
                mean_dxhat = mean_dxhat * inv_c;
                mean_dxhat_xhat = mean_dxhat_xhat * inv_c;
                for ch in 0..c {
                    let xhat = (xs[ch * hw + site] - m.mean) * m.rstd;
                    let dxhat = gs[ch * hw + site] * g[ch];
                    dst[ch * hw + site] = m.rstd * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                }
            }
        });
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for b in 0..n {
            let xs = &xd[b * c * hw..][..c * hw];
            let gs = &gd[b * c * hw..][..c * hw];
            for site in 0..hw {
                let m = self.moments(xs, c, hw, site);
                for ch in 0..c {
                    let xhat = (xs[ch * hw + site] - m.mean) * m.rstd;
                    dgamma[ch] = dgamma[ch] + gs[ch * hw + site] * xhat;
                    dbeta[ch] = dbeta[ch] + gs[ch * hw + site];
                }
            }
        }
        Ok((
            Tensor::raw(x.shape().to_vec(), dx),
            Self {
                gamma: Tensor::raw(vec![c], dgamma),
                beta: Tensor::raw(vec![c], dbeta),
                eps: self.eps,
            },
        ))
    }
}

pub fn layer_norm_channels<T: Scalar>(x: &Tensor<T>, p: &LayerNorm<T>) -> Result<Tensor<T>> {
    p.forward(x)
}

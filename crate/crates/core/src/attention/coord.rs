//! Coordinate attention.
//!
//! The map is pooled along each spatial axis, the two directional profiles
//! are concatenated into a `[N, C, 1, H + W]` strip, reduced to `C / r`
//! channels by a shared 1x1 convolution and SiLU, split back, expanded to `C`
//! channels per branch, and gated with hard sigmoid. The output is
//! `x * a_h * a_w` with `a_h` broadcast along width and `a_w` along height,
//! the only broadcast in the library. Both gates lie in `[0, 1]`, so
//! `|out| <= |x|` elementwise.

use crate::error::{Error, Result};
use crate::nn::activation::Activation;
use crate::nn::conv::Conv2d;
use crate::nn::params::{join, Params};
use crate::nn::pool::{global_avg_pool_h, global_avg_pool_h_backward, global_avg_pool_w, global_avg_pool_w_backward};
use crate::rng::Rng;
use crate::tensor::{fmt_shape, Scalar, Tensor};

pub const DEFAULT_REDUCTION: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct CoordAttention<T> {
    /// 1x1, `C -> C / r`, shared by both directions.
    pub reduce: Conv2d<T>,
    /// 1x1, `C / r -> C`, height branch.
    pub expand_h: Conv2d<T>,
    /// 1x1, `C / r -> C`, width branch.
    pub expand_w: Conv2d<T>,
    pub reduction: usize,
}

impl<T: Scalar> Params<T> for CoordAttention<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>)) {
        self.reduce.visit(&join(prefix, "reduce"), f);
        self.expand_h.visit(&join(prefix, "expand_h"), f);
        self.expand_w.visit(&join(prefix, "expand_w"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.reduce.visit_mut(&join(prefix, "reduce"), f);
        self.expand_h.visit_mut(&join(prefix, "expand_h"), f);
        self.expand_w.visit_mut(&join(prefix, "expand_w"), f);
    }
}

#[derive(Debug, Clone)]
pub struct CoordCache<T> {
    x: Tensor<T>,
    strip: Tensor<T>,
    reduced: Tensor<T>,
    act_h: Tensor<T>,
    act_w: Tensor<T>,
    pre_h: Tensor<T>,
    pre_w: Tensor<T>,
    /// `[N, C, H, 1]`
    gate_h: Tensor<T>,
    /// `[N, C, 1, W]`
    gate_w: Tensor<T>,
}

impl<T: Scalar> CoordAttention<T> {
    pub fn init(channels: usize, reduction: usize, rng: &mut Rng) -> Result<Self> {
        if reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::InvalidArgument(format!(
                "coordinate attention channels {channels} not divisible by reduction {reduction}"
            )));
        }
        let mid = channels / reduction;
        Ok(Self {
            reduce: Conv2d::init(channels, mid, 1, 1, 0, 1, true, rng)?,
            expand_h: Conv2d::init(mid, channels, 1, 1, 0, 1, true, rng)?,
            expand_w: Conv2d::init(mid, channels, 1, 1, 0, 1, true, rng)?,
            reduction,
        })
    }

    pub fn channels(&self) -> usize {
        self.reduce.in_channels()
    }

    fn validate(&self, c: usize) -> Result<()> {
        let r = self.reduction;
        if r == 0 || !c.is_multiple_of(r) {
            return Err(Error::InvalidArgument(format!(
                "coordinate attention channels {c} not divisible by reduction {r}"
            )));
        }
        let mid = c / r;
        let one_by_one = |k: &Conv2d<T>| k.kernel() == (1, 1) && k.stride == 1 && k.padding == 0 && k.groups == 1;
        let ok = self.reduce.in_channels() == c
            && self.reduce.out_channels() == mid
            && [&self.expand_h, &self.expand_w]
                .iter()
                .all(|k| k.in_channels() == mid && k.out_channels() == c && one_by_one(k))
            && one_by_one(&self.reduce);
        if !ok {
            return Err(Error::shape(
                "ca",
                format!("1x1 convs for {c} channels at reduction {r}"),
                "mismatched convs",
            ));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &Tensor<T>) -> Result<(Tensor<T>, CoordCache<T>)> {
        let (n, c, h, w) = x.dims4()?;
        self.validate(c)?;
        let along_h = global_avg_pool_w(x)?.reshape(&[n, c, 1, h])?;
        let along_w = global_avg_pool_h(x)?;
        let strip = Tensor::concat(&[&along_h, &along_w], 3)?;
        let reduced = self.reduce.forward(&strip)?;
        let act = Activation::Silu.forward(&reduced)?;
        let mut halves = act.split(3, &[h, w])?.into_iter();
        let (act_h, act_w) = (halves.next().unwrap(), halves.next().unwrap());
        let pre_h = self.expand_h.forward(&act_h)?;
        let pre_w = self.expand_w.forward(&act_w)?;
        let gate_h = Activation::HardSigmoid.forward(&pre_h)?.reshape(&[n, c, h, 1])?;
        let gate_w = Activation::HardSigmoid.forward(&pre_w)?;

        let (xd, ghd, gwd) = (x.data(), gate_h.data(), gate_w.data());
        let mut out = vec![T::zero(); x.len()];
        for (plane, dst) in out.chunks_mut(h * w).enumerate() {
            for i in 0..h {
                let a = ghd[plane * h + i];
                for j in 0..w {
                    dst[i * w + j] = xd[plane * h * w + i * w + j] * a * gwd[plane * w + j];
                }
            }
        }
        let y = Tensor::raw(x.shape().to_vec(), out);
        let cache = CoordCache {
            x: x.clone(),
            strip,
            reduced,
            act_h,
            act_w,
            pre_h,
            pre_w,
            gate_h,
            gate_w,
        };
        Ok((y, cache))
    }

    pub fn backward(&self, cache: &CoordCache<T>, dy: &Tensor<T>) -> Result<(Tensor<T>, Self)> {
        let x = &cache.x;
        let (n, c, h, w) = x.dims4()?;
        if dy.shape() != x.shape() {
            return Err(Error::shape("ca backward", fmt_shape(x.shape()), fmt_shape(dy.shape())));
        }
        let (xd, gd) = (x.data(), dy.data());
        let (ghd, gwd) = (cache.gate_h.data(), cache.gate_w.data());
        let mut dx = vec![T::zero(); x.len()];
        let mut dgh = vec![T::zero(); n * c * h];
        let mut dgw = vec![T::zero(); n * c * w];
        for plane in 0..n * c {
            for i in 0..h {
                let a = ghd[plane * h + i];
                for j in 0..w {
                    let idx = plane * h * w + i * w + j;
                    let b = gwd[plane * w + j];
                    let g = gd[idx];
                    dx[idx] = g * a * b;
                    dgh[plane * h + i] = dgh[plane * h + i] + g * xd[idx] * b;
                    dgw[plane * w + j] = dgw[plane * w + j] + g * xd[idx] * a;
                }
            }
        }
        let dgh = Tensor::raw(vec![n, c, 1, h], dgh);
        let dgw = Tensor::raw(vec![n, c, 1, w], dgw);
        let dpre_h = Activation::HardSigmoid.backward(&cache.pre_h, &dgh)?;
        let dpre_w = Activation::HardSigmoid.backward(&cache.pre_w, &dgw)?;
        let (dact_h, g_h) = self.expand_h.backward(&cache.act_h, &dpre_h)?;
        let (dact_w, g_w) = self.expand_w.backward(&cache.act_w, &dpre_w)?;
        let dact = Tensor::concat(&[&dact_h, &dact_w], 3)?;
        let dreduced = Activation::Silu.backward(&cache.reduced, &dact)?;
        let (dstrip, g_reduce) = self.reduce.backward(&cache.strip, &dreduced)?;
        let mut parts = dstrip.split(3, &[h, w])?.into_iter();
        let d_along_h = parts.next().unwrap().reshape(&[n, c, h, 1])?;
        let d_along_w = parts.next().unwrap();
        let mut dx = Tensor::raw(x.shape().to_vec(), dx);
        dx.add_assign(&global_avg_pool_w_backward(x.shape(), &d_along_h)?)?;
        dx.add_assign(&global_avg_pool_h_backward(x.shape(), &d_along_w)?)?;
        Ok((
            dx,
            Self {
                reduce: g_reduce,
                expand_h: g_h,
                expand_w: g_w,
                reduction: self.reduction,
            },
        ))
    }
}

pub fn ca_forward<T: Scalar>(x: &Tensor<T>, p: &CoordAttention<T>) -> Result<Tensor<T>> {
    p.forward(x)
}

//! Hybrid attention block:
//!
//! ```text
//! X1 = X + DWConv(X)
//! X2 = LN(X1)
//! X3 = CA(X2) + EMSA(X2) + X1
//! Y  = MLP(LN(X3)) + X3
//! ```
//!
//! The MLP acts on the channel vector of each spatial site. Either attention
//! branch can be switched off for ablation, in which case its term is dropped
//! from `X3`.

use crate::attention::coord::{CoordAttention, CoordCache, DEFAULT_REDUCTION};
use crate::attention::emsa::{Emsa, EmsaCache, DEFAULT_HEADS};
use crate::error::{Error, Result};
use crate::nn::conv::Conv2d;
use crate::nn::mlp::{Mlp, DEFAULT_HIDDEN_RATIO};
use crate::nn::norm::LayerNorm;
use crate::nn::params::{join, Params};
use crate::nn::{from_tokens, to_tokens};
use crate::rng::Rng;
use crate::tensor::{fmt_shape, Scalar, Tensor};

/// Shape hyperparameters of one hybrid attention block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamConfig {
    pub channels: usize,
    pub heads: usize,
    pub reduction: usize,
    pub hidden_ratio: f64,
    pub use_emsa: bool,
    pub use_ca: bool,
}

impl HamConfig {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            heads: DEFAULT_HEADS,
            reduction: DEFAULT_REDUCTION,
            hidden_ratio: DEFAULT_HIDDEN_RATIO,
            use_emsa: true,
            use_ca: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels;
        if c == 0 {
            return Err(Error::Config("channels must be positive".into()));
        }
        if self.use_emsa && (self.heads == 0 || !c.is_multiple_of(self.heads)) {
            return Err(Error::Config(format!(
                "channels {c} not divisible by heads {}",
                self.heads
            )));
        }
        if self.use_ca && (self.reduction == 0 || !c.is_multiple_of(self.reduction)) {
            return Err(Error::Config(format!(
                "channels {c} not divisible by reduction {}",
                self.reduction
            )));
        }
        if !self.hidden_ratio.is_finite() || self.hidden_ratio <= 0.0 {
            return Err(Error::Config(format!(
                "hidden ratio must be positive, got {}",
                self.hidden_ratio
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ham<T> {
    pub dwconv: Conv2d<T>,
    pub ln1: LayerNorm<T>,
    pub emsa: Option<Emsa<T>>,
    pub ca: Option<CoordAttention<T>>,
    pub ln2: LayerNorm<T>,
    pub mlp: Mlp<T>,
}

impl<T: Scalar> Params<T> for Ham<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>)) {
        self.dwconv.visit(&join(prefix, "dwconv"), f);
        self.ln1.visit(&join(prefix, "ln1"), f);
        self.emsa.visit(&join(prefix, "emsa"), f);
        self.ca.visit(&join(prefix, "ca"), f);
        self.ln2.visit(&join(prefix, "ln2"), f);
        self.mlp.visit(&join(prefix, "mlp"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.dwconv.visit_mut(&join(prefix, "dwconv"), f);
        self.ln1.visit_mut(&join(prefix, "ln1"), f);
        self.emsa.visit_mut(&join(prefix, "emsa"), f);
        self.ca.visit_mut(&join(prefix, "ca"), f);
        self.ln2.visit_mut(&join(prefix, "ln2"), f);
        self.mlp.visit_mut(&join(prefix, "mlp"), f);
    }
}

#[derive(Debug, Clone)]
pub struct HamCache<T> {
    x: Tensor<T>,
    x1: Tensor<T>,
    x2: Tensor<T>,
    emsa: Option<EmsaCache<T>>,
    ca: Option<CoordCache<T>>,
    x3: Tensor<T>,
    norm_tokens: Tensor<T>,
}

impl<T: Scalar> Ham<T> {
    pub fn init(cfg: &HamConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        Ok(Self {
            dwconv: Conv2d::depthwise3x3(c, rng)?,
            ln1: LayerNorm::identity(c)?,
            emsa: if cfg.use_emsa {
                Some(Emsa::init(c, cfg.heads, rng)?)
            } else {
                None
            },
            ca: if cfg.use_ca {
                Some(CoordAttention::init(c, cfg.reduction, rng)?)
            } else {
                None
            },
            ln2: LayerNorm::identity(c)?,
            mlp: Mlp::init(c, cfg.hidden_ratio, rng)?,
        })
    }

    pub fn channels(&self) -> usize {
        self.ln1.channels()
    }

    fn validate(&self) -> Result<()> {
        let c = self.channels();
        let dw = &self.dwconv;
        let dw_ok = dw.groups == c
            && dw.in_channels() == c
            && dw.out_channels() == c
            && dw.kernel() == (3, 3)
            && dw.stride == 1
            && dw.padding == 1;
        let ok = dw_ok
            && self.ln2.channels() == c
            && self.emsa.as_ref().is_none_or(|e| e.dim() == c)
            && self.ca.as_ref().is_none_or(|a| a.channels() == c)
            && self.mlp.expand.in_features() == c
            && self.mlp.project.out_features() == c;
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "hybrid attention sub-blocks disagree on {c} channels"
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &Tensor<T>) -> Result<(Tensor<T>, HamCache<T>)> {
        self.validate()?;
        let (_, c, h, w) = x.dims4()?;
        if c != self.channels() {
            return Err(Error::shape(
                "ham",
                format!("{} channels", self.channels()),
                fmt_shape(x.shape()),
            ));
        }
        let x1 = x.add(&self.dwconv.forward(x)?)?;
        let x2 = self.ln1.forward(&x1)?;
        let (ca_out, ca_cache) = match &self.ca {
            Some(ca) => {
                let (y, cache) = ca.forward_cached(&x2)?;
                (Some(y), Some(cache))
            }
            None => (None, None),
        };
        let (emsa_out, emsa_cache) = match &self.emsa {
            Some(e) => {
                let (y, cache) = e.forward_cached(&x2)?;
                (Some(y), Some(cache))
            }
            None => (None, None),
        };
        let branches = match (ca_out, emsa_out) {
            (Some(a), Some(b)) => Some(a.add(&b)?),
            (a, b) => a.or(b),
        };
        let x3 = match branches {
            Some(b) => b.add(&x1)?,
            None => x1.clone(),
        };
        let norm_tokens = to_tokens(&self.ln2.forward(&x3)?)?;
        let mlp_out = from_tokens(&self.mlp.forward(&norm_tokens)?, h, w)?;
        let y = mlp_out.add(&x3)?;
        let cache = HamCache {
            x: x.clone(),
            x1,
            x2,
            emsa: emsa_cache,
            ca: ca_cache,
            x3,
            norm_tokens,
        };
        Ok((y, cache))
    }

    pub fn backward(&self, cache: &HamCache<T>, dy: &Tensor<T>) -> Result<(Tensor<T>, Self)> {
        let (_, _, h, w) = cache.x.dims4()?;
        if dy.shape() != cache.x.shape() {
            return Err(Error::shape(
                "ham backward",
                fmt_shape(cache.x.shape()),
                fmt_shape(dy.shape()),
            ));
        }
        let (dtokens, g_mlp) = self.mlp.backward(&cache.norm_tokens, &to_tokens(dy)?)?;
        let (mut dx3, g_ln2) = self.ln2.backward(&cache.x3, &from_tokens(&dtokens, h, w)?)?;
        dx3.add_assign(dy)?;

        let mut dx2 = cache.x2.zeros_like();
        let g_ca = match (&self.ca, &cache.ca) {
            (Some(ca), Some(cc)) => {
                let (d, g) = ca.backward(cc, &dx3)?;
                dx2.add_assign(&d)?;
                Some(g)
            }
            _ => None,
        };
        let g_emsa = match (&self.emsa, &cache.emsa) {
            (Some(e), Some(ec)) => {
                let (d, g) = e.backward(ec, &dx3)?;
                dx2.add_assign(&d)?;
                Some(g)
            }
            _ => None,
        };
        let (dx1_norm, g_ln1) = self.ln1.backward(&cache.x1, &dx2)?;
        let mut dx1 = dx3;
        dx1.add_assign(&dx1_norm)?;
        let (mut dx, g_dw) = self.dwconv.backward(&cache.x, &dx1)?;
        dx.add_assign(&dx1)?;
        Ok((
            dx,
            Self {
                dwconv: g_dw,
                ln1: g_ln1,
                emsa: g_emsa,
                ca: g_ca,
                ln2: g_ln2,
                mlp: g_mlp,
            },
        ))
    }
}

pub fn ham_forward<T: Scalar>(x: &Tensor<T>, p: &Ham<T>) -> Result<Tensor<T>> {
    p.forward(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::zero_all;

    #[test]
    fn config_validation() {
        let mut cfg = HamConfig::new(8);
        assert!(cfg.validate().is_ok());
        cfg.heads = 3;
        assert!(cfg.validate().is_err());
        cfg.use_emsa = false;
        assert!(cfg.validate().is_ok());
        cfg.reduction = 3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn ablated_branches_drop_out_of_the_sum() {
        let mut r = Rng::new(5);
        let mut cfg = HamConfig::new(4);
        cfg.reduction = 2;
        cfg.use_ca = false;
        let mut ham = Ham::<f32>::init(&cfg, &mut r).unwrap();
        zero_all(&mut ham);
        ham.ln1 = LayerNorm::identity(4).unwrap();
        ham.ln2 = LayerNorm::identity(4).unwrap();
        let x = Tensor::rand_uniform(&[1, 4, 3, 3], &mut r, -1.0, 1.0).unwrap();
        let ln = ham.ln1.forward(&x).unwrap();
        assert_eq!(ham.forward(&x).unwrap(), ln.add(&x).unwrap());
        assert!(ham.ca.is_none());
    }
}

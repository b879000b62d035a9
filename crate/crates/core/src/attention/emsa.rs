//! Enhanced multi-head self-attention.
//!
//! Tokens are the `H*W` spatial sites of a `[N, C, H, W]` map, each carrying
//! a `C`-dimensional embedding. Per batch item:
//!
//! ```text
//! Q, K, V = FC(X)                      one D -> 3D projection, split
//! Q', K', V' = Linear(Q), Linear(K), Linear(V)
//! S[i, j, g]  = <Q'_g[i], K'_g[j]>      per head g over its D/h channels
//! X_m = SiLU(FC_score(S))              FC over the head axis
//! X_n = Tanh(FC_mix(X_m) / sqrt(d))    FC over the head axis
//! O_g[i] = sum_j X_n[i, j, g] V'_g[j]
//! out = FC_out(O) + X
//! ```
//!
//! The two inner FC layers act on the head axis at each (query, key) pair,
//! so the block has no dependence on the token count and no positional
//! structure: permuting the tokens of the input permutes the output rows.
//! The sum over keys in `O` is taken in sorted order of its terms, which
//! makes that equivariance hold exactly in floating point. With one head the
//! inner FCs reduce to scalar affine maps.

use crate::error::{Error, Result};
use crate::nn::activation::Activation;
use crate::nn::linear::Linear;
use crate::nn::params::{join, Params};
use crate::nn::{from_tokens, to_tokens};
use crate::parallel;
use crate::rng::Rng;
use crate::tensor::{fmt_shape, Scalar, Tensor};

pub const DEFAULT_HEADS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Emsa<T> {
    /// `D -> 3D`
    pub qkv: Linear<T>,
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    /// `h -> h`, applied to the raw query-key products.
    pub score_fc: Linear<T>,
    /// `h -> h`, applied after SiLU.
    pub mix_fc: Linear<T>,
    pub out: Linear<T>,
    pub heads: usize,
    /// The `d` in `1/sqrt(d)`; defaults to the per-head key width.
    pub scale_dim: f64,
}

impl<T: Scalar> Params<T> for Emsa<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>)) {
        self.qkv.visit(&join(prefix, "qkv"), f);
        self.q.visit(&join(prefix, "q"), f);
        self.k.visit(&join(prefix, "k"), f);
        self.v.visit(&join(prefix, "v"), f);
        self.score_fc.visit(&join(prefix, "score_fc"), f);
        self.mix_fc.visit(&join(prefix, "mix_fc"), f);
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.qkv.visit_mut(&join(prefix, "qkv"), f);
        self.q.visit_mut(&join(prefix, "q"), f);
        self.k.visit_mut(&join(prefix, "k"), f);
        self.v.visit_mut(&join(prefix, "v"), f);
        self.score_fc.visit_mut(&join(prefix, "score_fc"), f);
        self.mix_fc.visit_mut(&join(prefix, "mix_fc"), f);
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}

/// Intermediates of one forward pass, consumed by [`Emsa::backward`].
#[derive(Debug, Clone)]
pub struct EmsaCache<T> {
    hw: (usize, usize),
    tokens: Tensor<T>,
    q: Tensor<T>,
    k: Tensor<T>,
    v: Tensor<T>,
    qp: Tensor<T>,
    kp: Tensor<T>,
    vp: Tensor<T>,
    /// `[N, T, T, h]`
    scores: Tensor<T>,
    scores_fc: Tensor<T>,
    xm: Tensor<T>,
    xn: Tensor<T>,
    /// `[N, T, D]`
    attended: Tensor<T>,
}

impl<T: Scalar> Emsa<T> {
    pub fn init(dim: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::InvalidArgument(format!(
                "EMSA embedding {dim} not divisible by {heads} heads"
            )));
        }
        let e = Self {
            qkv: Linear::init(dim, 3 * dim, rng)?,
            q: Linear::init(dim, dim, rng)?,
            k: Linear::init(dim, dim, rng)?,
            v: Linear::init(dim, dim, rng)?,
            score_fc: Linear::init(heads, heads, rng)?,
            mix_fc: Linear::init(heads, heads, rng)?,
            out: Linear::init(dim, dim, rng)?,
            heads,
            scale_dim: (dim / heads) as f64,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn dim(&self) -> usize {
        self.qkv.in_features()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let h = self.heads;
        if h == 0 || !d.is_multiple_of(h) {
            return Err(Error::InvalidArgument(format!(
                "EMSA embedding {d} not divisible by {h} heads"
            )));
        }
        if self.scale_dim.is_nan() || self.scale_dim <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "EMSA scale factor must be positive, got {}",
                self.scale_dim
            )));
        }
        let ok = self.qkv.out_features() == 3 * d
            && [&self.q, &self.k, &self.v, &self.out]
                .iter()
                .all(|l| l.in_features() == d && l.out_features() == d)
            && [&self.score_fc, &self.mix_fc]
                .iter()
                .all(|l| l.in_features() == h && l.out_features() == h);
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "EMSA projections disagree with embedding {d} and {h} heads"
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &Tensor<T>) -> Result<(Tensor<T>, EmsaCache<T>)> {
        self.validate()?;
        let (n, c, h, w) = x.dims4()?;
        if c != self.dim() {
            return Err(Error::shape(
                "emsa",
                format!("{} channels", self.dim()),
                fmt_shape(x.shape()),
            ));
        }
        let t = h * w;
        let d = c;
        let heads = self.heads;
        let dh = d / heads;

        let tokens = to_tokens(x)?;
        let qkv = self.qkv.forward(&tokens)?;
        let mut parts = qkv.split(2, &[d, d, d])?.into_iter();
        let (q, k, v) = (parts.next().unwrap(), parts.next().unwrap(), parts.next().unwrap());
        let qp = self.q.forward(&q)?;
        let kp = self.k.forward(&k)?;
        let vp = self.v.forward(&v)?;

        let mut s = vec![T::zero(); n * t * t * heads];
        let (qd, kd) = (qp.data(), kp.data());
        parallel::for_each_chunk(&mut s, t * t * heads, |b, dst| {
            let qb = &qd[b * t * d..][..t * d];
            let kb = &kd[b * t * d..][..t * d];
            for i in 0..t {
                for j in 0..t {
                    for g in 0..heads {
                        let qi = &qb[i * d + g * dh..][..dh];
                        let kj = &kb[j * d + g * dh..][..dh];
                        dst[(i * t + j) * heads + g] = qi.iter().zip(kj).fold(T::zero(), |a, (&x, &y)| a + x * y);
                    }
                }
            }
        });
        let scores = Tensor::raw(vec![n, t, t, heads], s);
        let scores_fc = self.score_fc.forward(&scores)?;
        let xm = Activation::Silu.forward(&scores_fc)?;
        let mixed = self.mix_fc.forward(&xm)?;
        let inv_sqrt_d = T::of(1.0 / self.scale_dim.sqrt());
        let xn = mixed.map(|v| (v * inv_sqrt_d).tanh());

        let mut o = vec![T::zero(); n * t * d];
        let (xnd, vd) = (xn.data(), vp.data());
        parallel::for_each_chunk(&mut o, t * d, |b, dst| {
            let xb = &xnd[b * t * t * heads..][..t * t * heads];
            let vb = &vd[b * t * d..][..t * d];
            let mut terms = Vec::with_capacity(t);
            for i in 0..t {
                for ch in 0..d {
                    let g = ch / dh;
                    terms.clear();
                    terms.extend((0..t).map(|j| xb[(i * t + j) * heads + g] * vb[j * d + ch]));
                    terms.sort_unstable_by(|a, b| a.cmp_total(b));
                    dst[i * d + ch] = terms.iter().fold(T::zero(), |a, &v| a + v);
                }
            }
        });
        let attended = Tensor::raw(vec![n, t, d], o);
        let projected = self.out.forward(&attended)?;
        let out_tokens = projected.add(&tokens)?;
        let y = from_tokens(&out_tokens, h, w)?;
        let cache = EmsaCache {
            hw: (h, w),
            tokens,
            q,
            k,
            v,
            qp,
            kp,
            vp,
            scores,
            scores_fc,
            xm,
            xn,
            attended,
        };
        Ok((y, cache))
    }

    /// Returns `(d input, d params)` for upstream gradient `dy`.
    pub fn backward(&self, cache: &EmsaCache<T>, dy: &Tensor<T>) -> Result<(Tensor<T>, Self)> {
        let (h, w) = cache.hw;
        let (n, t, d) = {
            let s = cache.tokens.shape();
            (s[0], s[1], s[2])
        };
        if dy.shape() != [n, d, h, w] {
            return Err(Error::shape(
                "emsa backward",
                format!("{:?}", [n, d, h, w]),
                fmt_shape(dy.shape()),
            ));
        }
        let heads = self.heads;
        let dh = d / heads;
        let dout = to_tokens(dy)?;
        let (d_attended, g_out) = self.out.backward(&cache.attended, &dout)?;

        let (xnd, vd, gd) = (cache.xn.data(), cache.vp.data(), d_attended.data());
        let mut dxn = vec![T::zero(); n * t * t * heads];
        parallel::for_each_chunk(&mut dxn, t * t * heads, |b, dst| {
            let vb = &vd[b * t * d..][..t * d];
            let gb = &gd[b * t * d..][..t * d];
            for i in 0..t {
                for j in 0..t {
                    for g in 0..heads {
                        let gi = &gb[i * d + g * dh..][..dh];
                        let vj = &vb[j * d + g * dh..][..dh];
                        dst[(i * t + j) * heads + g] = gi.iter().zip(vj).fold(T::zero(), |a, (&x, &y)| a + x * y);
                    }
                }
            }
        });
        let mut dvp = vec![T::zero(); n * t * d];
        parallel::for_each_chunk(&mut dvp, t * d, |b, dst| {
            let xb = &xnd[b * t * t * heads..][..t * t * heads];
            let gb = &gd[b * t * d..][..t * d];
            for j in 0..t {
                for ch in 0..d {
                    let g = ch / dh;
                    let mut acc = T::zero();
                    for i in 0..t {
                        acc = acc + xb[(i * t + j) * heads + g] * gb[i * d + ch];
                    }
                    dst[j * d + ch] = acc;
                }
            }
        });

        let inv_sqrt_d = T::of(1.0 / self.scale_dim.sqrt());
        let dmixed: Vec<T> = dxn
            .iter()
            .zip(xnd)
            .map(|(&g, &xv)| g * (T::one() - xv * xv) * inv_sqrt_d)
            .collect();
        let dmixed = Tensor::raw(vec![n, t, t, heads], dmixed);
        let (dxm, g_mix) = self.mix_fc.backward(&cache.xm, &dmixed)?;
        let dscores_fc = Activation::Silu.backward(&cache.scores_fc, &dxm)?;
        let (dscores, g_score) = self.score_fc.backward(&cache.scores, &dscores_fc)?;

        let (qd, kd, sd) = (cache.qp.data(), cache.kp.data(), dscores.data());
        let mut dqp = vec![T::zero(); n * t * d];
        parallel::for_each_chunk(&mut dqp, t * d, |b, dst| {
            let kb = &kd[b * t * d..][..t * d];
            let sb = &sd[b * t * t * heads..][..t * t * heads];
            for i in 0..t {
                for ch in 0..d {
                    let g = ch / dh;
                    let mut acc = T::zero();
                    for j in 0..t {
                        acc = acc + sb[(i * t + j) * heads + g] * kb[j * d + ch];
                    }
                    dst[i * d + ch] = acc;
                }
            }
        });
        let mut dkp = vec![T::zero(); n * t * d];
        parallel::for_each_chunk(&mut dkp, t * d, |b, dst| {
            let qb = &qd[b * t * d..][..t * d];
            let sb = &sd[b * t * t * heads..][..t * t * heads];
            for j in 0..t {
                for ch in 0..d {
                    let g = ch / dh;
                    let mut acc = T::zero();
                    for i in 0..t {
                        acc = acc + sb[(i * t + j) * heads + g] * qb[i * d + ch];
                    }
                    dst[j * d + ch] = acc;
                }
            }
        });
        let shape = vec![n, t, d];
        let (dq, g_q) = self.q.backward(&cache.q, &Tensor::raw(shape.clone(), dqp))?;
        let (dk, g_k) = self.k.backward(&cache.k, &Tensor::raw(shape.clone(), dkp))?;
        let (dv, g_v) = self.v.backward(&cache.v, &Tensor::raw(shape, dvp))?;
        let dqkv = Tensor::concat(&[&dq, &dk, &dv], 2)?;
        let (dtokens, g_qkv) = self.qkv.backward(&cache.tokens, &dqkv)?;
        let dx = from_tokens(&dtokens.add(&dout)?, h, w)?;
        Ok((
            dx,
            Self {
                qkv: g_qkv,
                q: g_q,
                k: g_k,
                v: g_v,
                score_fc: g_score,
                mix_fc: g_mix,
                out: g_out,
                heads,
                scale_dim: self.scale_dim,
            },
        ))
    }
}

pub fn emsa_forward<T: Scalar>(x: &Tensor<T>, p: &Emsa<T>) -> Result<Tensor<T>> {
    p.forward(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::zero_all;

    #[test]
    fn zero_weights_pass_input_through() {
        let mut r = Rng::new(1);
        let mut e = Emsa::<f32>::init(4, 2, &mut r).unwrap();
        zero_all(&mut e);
        let x = Tensor::rand_uniform(&[2, 4, 3, 2], &mut r, -1.0, 1.0).unwrap();
        assert_eq!(e.forward(&x).unwrap(), x);
    }

    #[test]
    fn rejects_indivisible_heads_and_wrong_channels() {
        let mut r = Rng::new(2);
        assert!(Emsa::<f64>::init(6, 4, &mut r).is_err());
        let e = Emsa::<f64>::init(4, 2, &mut r).unwrap();
        assert!(e.forward(&Tensor::zeros(&[1, 6, 2, 2]).unwrap()).is_err());
        let mut bad = e.clone();
        bad.scale_dim = 0.0;
        assert!(bad.forward(&Tensor::zeros(&[1, 4, 2, 2]).unwrap()).is_err());
    }

    #[test]
    fn shape_is_preserved() {
        let mut r = Rng::new(3);
        let e = Emsa::<f64>::init(6, 3, &mut r).unwrap();
        let x = Tensor::rand_uniform(&[2, 6, 3, 5], &mut r, -1.0, 1.0).unwrap();
        assert_eq!(e.forward(&x).unwrap().shape(), x.shape());
    }
}

//! Three stride-2 conv + SiLU stages with 1x1 lateral projections to a
//! common channel count. Stands in for a full detector backbone; the necks
//! only see its three output scales.

use crate::error::{Error, Result};
use crate::nn::activation::Activation;
use crate::nn::conv::Conv2d;
use crate::nn::params::{join, Params};
use crate::pyramid::levels::FeatureLevels;
use crate::rng::Rng;
use crate::tensor::{fmt_shape, Scalar, Tensor};

pub const IMAGE_CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Backbone<T> {
    pub stages: [Conv2d<T>; 3],
    pub laterals: [Conv2d<T>; 3],
}

impl<T: Scalar> Params<T> for Backbone<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>)) {
        for (i, s) in self.stages.iter().enumerate() {
            s.visit(&join(prefix, &format!("stage{}", i + 1)), f);
        }
        for (i, l) in self.laterals.iter().enumerate() {
            l.visit(&join(prefix, &format!("lateral{}", i + 3)), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.visit_mut(&join(prefix, &format!("stage{}", i + 1)), f);
        }
        for (i, l) in self.laterals.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("lateral{}", i + 3)), f);
        }
    }
}

impl<T: Scalar> Backbone<T> {
    /// Stage widths `C, 2C, 4C`, laterals back to `C`.
    pub fn init(channels: usize, rng: &mut Rng) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Config("backbone channels must be positive".into()));
        }
        let widths = [channels, 2 * channels, 4 * channels];
        let stages = [
            Conv2d::init(IMAGE_CHANNELS, widths[0], 3, 2, 1, 1, true, rng)?,
            Conv2d::init(widths[0], widths[1], 3, 2, 1, 1, true, rng)?,
            Conv2d::init(widths[1], widths[2], 3, 2, 1, 1, true, rng)?,
        ];
        let laterals = [
            Conv2d::init(widths[0], channels, 1, 1, 0, 1, true, rng)?,
            Conv2d::init(widths[1], channels, 1, 1, 0, 1, true, rng)?,
            Conv2d::init(widths[2], channels, 1, 1, 0, 1, true, rng)?,
        ];
        Ok(Self { stages, laterals })
    }

    pub fn channels(&self) -> usize {
        self.laterals[0].out_channels()
    }

    fn check(&self, image: &Tensor<T>) -> Result<()> {
        let (_, c, h, w) = image.dims4()?;
        if c != IMAGE_CHANNELS {
            return Err(Error::shape(
                "toy_backbone",
                "3 image channels",
                fmt_shape(image.shape()),
            ));
        }
        if h % 8 != 0 || w % 8 != 0 {
            return Err(Error::InvalidShape(format!(
                "toy_backbone: image extents {h}x{w} must be divisible by 8"
            )));
        }
        Ok(())
    }

    /// Pre-activation and post-activation maps of each stage.
    fn stage_maps(&self, image: &Tensor<T>) -> Result<Vec<(Tensor<T>, Tensor<T>)>> {
        self.check(image)?;
        let mut maps = Vec::with_capacity(3);
        let mut x = image.clone();
        for stage in &self.stages {
            let pre = stage.forward(&x)?;
            let act = Activation::Silu.forward(&pre)?;
            x = act.clone();
            maps.push((pre, act));
        }
        Ok(maps)
    }

    pub fn forward(&self, image: &Tensor<T>) -> Result<FeatureLevels<T>> {
        let maps = self.stage_maps(image)?;
        FeatureLevels::new(
            self.laterals[0].forward(&maps[0].1)?,
            self.laterals[1].forward(&maps[1].1)?,
            self.laterals[2].forward(&maps[2].1)?,
        )
    }

    pub fn backward(&self, image: &Tensor<T>, d: &FeatureLevels<T>) -> Result<(Tensor<T>, Self)> {
        let maps = self.stage_maps(image)?;
        let dl = d.as_array();
        let mut g_laterals = Vec::with_capacity(3);
        let mut d_acts = Vec::with_capacity(3);
        for i in 0..3 {
            let (da, g) = self.laterals[i].backward(&maps[i].1, dl[i])?;
            d_acts.push(da);
            g_laterals.push(g);
        }
        let mut g_stages: Vec<Option<Conv2d<T>>> = vec![None, None, None];
        let mut carry: Option<Tensor<T>> = None;
        let mut dx = image.zeros_like();
        for i in (0..3).rev() {
            let mut dact = d_acts[i].clone();
            if let Some(c) = carry.take() {
                dact.add_assign(&c)?;
            }
            let dpre = Activation::Silu.backward(&maps[i].0, &dact)?;
            let input = if i == 0 { image } else { &maps[i - 1].1 };
            let (din, g) = self.stages[i].backward(input, &dpre)?;
            g_stages[i] = Some(g);
            if i == 0 {
                dx = din;
            } else {
                carry = Some(din);
            }
        }
        let [s1, s2, s3] = [0, 1, 2].map(|i| g_stages[i].take().expect("stage gradient"));
        let mut gl = g_laterals.into_iter();
        let laterals = [gl.next().unwrap(), gl.next().unwrap(), gl.next().unwrap()];
        Ok((
            dx,
            Self {
                stages: [s1, s2, s3],
                laterals,
            },
        ))
    }
}

pub fn toy_backbone<T: Scalar>(image: &Tensor<T>, params: &Backbone<T>) -> Result<FeatureLevels<T>> {
    params.forward(image)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stride_contract() {
        let mut r = Rng::new(1);
        let bb = Backbone::<f32>::init(8, &mut r).unwrap();
        let img = Tensor::rand_uniform(&[1, 3, 32, 32], &mut r, 0.0, 1.0).unwrap();
        let lv = bb.forward(&img).unwrap();
        assert_eq!(lv.p3.shape(), &[1, 8, 16, 16]);
        assert_eq!(lv.p4.shape(), &[1, 8, 8, 8]);
        assert_eq!(lv.p5.shape(), &[1, 8, 4, 4]);
    }

    #[test]
    fn indivisible_extents_rejected() {
        let mut r = Rng::new(2);
        let bb = Backbone::<f32>::init(4, &mut r).unwrap();
        assert!(bb.forward(&Tensor::zeros(&[1, 3, 12, 16]).unwrap()).is_err());
        assert!(bb.forward(&Tensor::zeros(&[1, 1, 16, 16]).unwrap()).is_err());
    }

    #[test]
    fn deterministic_under_seed() {
        let a = Backbone::<f32>::init(4, &mut Rng::new(9)).unwrap();
        let b = Backbone::<f32>::init(4, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
    }
}

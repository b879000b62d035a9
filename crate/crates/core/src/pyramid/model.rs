use crate::error::Result;
use crate::nn::params::{join, Params};
use crate::pyramid::backbone::Backbone;
use crate::pyramid::levels::FeatureLevels;
use crate::pyramid::neck::{backbone_stream, Neck, NeckConfig};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Toy backbone followed by a neck; maps an image to fused levels.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidModel<T> {
    pub backbone: Backbone<T>,
    pub neck: Neck<T>,
}

impl<T: Scalar> Params<T> for PyramidModel<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>)) {
        self.backbone.visit(&join(prefix, "backbone"), f);
        self.neck.visit(&join(prefix, "neck"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.backbone.visit_mut(&join(prefix, "backbone"), f);
        self.neck.visit_mut(&join(prefix, "neck"), f);
    }
}

impl<T: Scalar> PyramidModel<T> {
    pub fn init(cfg: &NeckConfig, rng: &Rng) -> Result<Self> {
        let neck = Neck::init(cfg, rng)?;
        let backbone = Backbone::init(cfg.channels, &mut backbone_stream(rng))?;
        Ok(Self { backbone, neck })
    }

    /// Initialise from `cfg.seed`.
    pub fn from_config(cfg: &NeckConfig) -> Result<Self> {
        Self::init(cfg, &Rng::new(cfg.seed))
    }

    pub fn features(&self, image: &Tensor<T>) -> Result<FeatureLevels<T>> {
        self.backbone.forward(image)
    }

    pub fn forward(&self, image: &Tensor<T>) -> Result<FeatureLevels<T>> {
        self.neck.forward(&self.backbone.forward(image)?)
    }

    pub fn backward(&self, image: &Tensor<T>, d: &FeatureLevels<T>) -> Result<(Tensor<T>, Self)> {
        let levels = self.backbone.forward(image)?;
        let (_, cache) = self.neck.forward_cached(&levels)?;
        let (dlevels, g_neck) = self.neck.backward(&cache, d)?;
        let (dx, g_bb) = self.backbone.backward(image, &dlevels)?;
        Ok((
            dx,
            Self {
                backbone: g_bb,
                neck: g_neck,
            },
        ))
    }
}

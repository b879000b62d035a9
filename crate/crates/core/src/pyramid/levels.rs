use crate::error::{Error, Result};
use crate::tensor::{fmt_shape, Scalar, Tensor};

/// Three-scale feature maps, finest first. Spatial extents halve exactly
/// from one level to the next and all levels share batch and channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLevels<T> {
    pub p3: Tensor<T>,
    pub p4: Tensor<T>,
    pub p5: Tensor<T>,
}

pub const LEVEL_NAMES: [&str; 3] = ["p3", "p4", "p5"];

impl<T: Scalar> FeatureLevels<T> {
    pub fn new(p3: Tensor<T>, p4: Tensor<T>, p5: Tensor<T>) -> Result<Self> {
        let levels = Self { p3, p4, p5 };
        levels.validate()?;
        Ok(levels)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, c, h, w) = self.p3.dims4()?;
        let expect = |t: &Tensor<T>, f: usize| -> Result<()> {
            if h % f != 0 || w % f != 0 || t.shape() != [n, c, h / f, w / f] {
                return Err(Error::shape(
                    "feature levels",
                    format!("{:?}", [n, c, h / f, w / f]),
                    fmt_shape(t.shape()),
                ));
            }
            Ok(())
        };
        expect(&self.p4, 2)?;
        expect(&self.p5, 4)
    }

    pub fn channels(&self) -> usize {
        self.p3.shape()[1]
    }

    pub fn as_array(&self) -> [&Tensor<T>; 3] {
        [&self.p3, &self.p4, &self.p5]
    }

    pub fn into_vec(self) -> Vec<Tensor<T>> {
        vec![self.p3, self.p4, self.p5]
    }

    pub fn from_slice(levels: &[Tensor<T>]) -> Result<Self> {
        match levels {
            [a, b, c] => Self::new(a.clone(), b.clone(), c.clone()),
            _ => Err(Error::InvalidArgument(format!(
                "expected 3 feature levels, got {}",
                levels.len()
            ))),
        }
    }

    pub fn shapes(&self) -> [Vec<usize>; 3] {
        [
            self.p3.shape().to_vec(),
            self.p4.shape().to_vec(),
            self.p5.shape().to_vec(),
        ]
    }
}

//! 2-D cross-correlation with groups, stride, and zero padding.

use crate::error::{Error, Result};
use crate::nn::params::{join, uniform_init, Params};
use crate::parallel;
use crate::rng::Rng;
use crate::tensor::{fmt_shape, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    /// `[out_c, in_c / groups, kh, kw]`
    pub weight: Tensor<T>,
    /// `[out_c]`
    pub bias: Option<Tensor<T>>,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl<T: Scalar> Params<T> for Conv2d<T> {
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

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        weight: Tensor<T>,
        bias: Option<Tensor<T>>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Self> {
        let conv = Self {
            weight,
            bias,
            stride,
            padding,
            groups,
        };
        conv.validate()?;
        Ok(conv)
    }

    fn validate(&self) -> Result<()> {
        if self.weight.rank() != 4 {
            return Err(Error::shape("conv2d", "rank-4 weight", fmt_shape(self.weight.shape())));
        }
        if self.stride == 0 || self.groups == 0 {
            return Err(Error::InvalidArgument(
                "conv2d stride and groups must be positive".into(),
            ));
        }
        if !self.out_channels().is_multiple_of(self.groups) {
            return Err(Error::InvalidArgument(format!(
                "conv2d out channels {} not divisible by groups {}",
                self.out_channels(),
                self.groups
            )));
        }
        if let Some(b) = &self.bias {
            if b.shape() != [self.out_channels()] {
                return Err(Error::shape(
                    "conv2d bias",
                    format!("[{}]", self.out_channels()),
                    fmt_shape(b.shape()),
                ));
            }
        }
        Ok(())
    }

    /// Seeded uniform initialization with bound `1/sqrt(fan_in)`.
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        if groups == 0 || !in_c.is_multiple_of(groups) {
            return Err(Error::InvalidArgument(format!(
                "in channels {in_c} not divisible by groups {groups}"
            )));
        }
        let fan_in = in_c / groups * kernel * kernel;
        let weight = uniform_init(&[out_c, in_c / groups, kernel, kernel], fan_in, rng)?;
        let bias = if bias {
            Some(uniform_init(&[out_c], fan_in, rng)?)
        } else {
            None
        };
        Self::new(weight, bias, stride, padding, groups)
    }

    /// Depthwise 3x3, stride 1, padding 1, with bias.
    pub fn depthwise3x3(channels: usize, rng: &mut Rng) -> Result<Self> {
        Self::init(channels, channels, 3, 1, 1, channels, true, rng)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1] * self.groups
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.shape()[2], self.weight.shape()[3])
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel();
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if ph < kh || pw < kw {
            return Err(Error::InvalidShape(format!(
                "conv2d: {h}x{w} input with padding {} is smaller than the {kh}x{kw} kernel",
                self.padding
            )));
        }
        Ok(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(usize, usize, usize, usize, usize, usize)> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.in_channels() {
            return Err(Error::shape(
                "conv2d",
                format!("{} input channels", self.in_channels()),
                fmt_shape(x.shape()),
            ));
        }
        let (oh, ow) = self.output_hw(h, w)?;
        Ok((n, c, h, w, oh, ow))
    }

    /// Each output sums `ci`, `kh`, `kw` in ascending order, skipping padded
    /// taps, then adds the bias.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, c, h, w, oh, ow) = self.check_input(x)?;
        let out_c = self.out_channels();
        let (kh, kw) = self.kernel();
        let cin_g = c / self.groups;
        let cout_g = out_c / self.groups;
        let (s, p) = (self.stride as isize, self.padding as isize);
        let xd = x.data();
        let wd = self.weight.data();
        let bias = self.bias.as_ref().map(|b| b.data());
        let mut out = vec![T::zero(); n * out_c * oh * ow];
        parallel::for_each_chunk(&mut out, oh * ow, |plane, dst| {
            let (b, o) = (plane / out_c, plane % out_c);
            let g = o / cout_g;
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = T::zero();
                    for ci in 0..cin_g {
                        let xc = &xd[(b * c + g * cin_g + ci) * h * w..][..h * w];
                        let wk = &wd[(o * cin_g + ci) * kh * kw..][..kh * kw];
                        for ky in 0..kh {
                            let iy = y as isize * s - p + ky as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = xo as isize * s - p + kx as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc = acc + wk[ky * kw + kx] * xc[iy as usize * w + ix as usize];
                            }
                        }
                    }
                    if let Some(bd) = bias {
                        acc = acc + bd[o];
                    }
                    dst[y * ow + xo] = acc;
                }
            }
        });
        let y = Tensor::raw(vec![n, out_c, oh, ow], out);
        y.ensure_finite("conv2d")?;
        Ok(y)
    }

    /// Returns `(d input, d params)` for upstream gradient `dy`.
    pub fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<(Tensor<T>, Self)> {
        let (n, c, h, w, oh, ow) = self.check_input(x)?;
        let out_c = self.out_channels();
        if dy.shape() != [n, out_c, oh, ow] {
            return Err(Error::shape(
                "conv2d backward",
                format!("{:?}", [n, out_c, oh, ow]),
                fmt_shape(dy.shape()),
            ));
        }
        let (kh, kw) = self.kernel();
        let cin_g = c / self.groups;
        let cout_g = out_c / self.groups;
        let (s, p) = (self.stride as isize, self.padding as isize);
        let xd = x.data();
        let wd = self.weight.data();
        let gd = dy.data();

        let mut dw = vec![T::zero(); self.weight.len()];
        parallel::for_each_chunk(&mut dw, cin_g * kh * kw, |o, dst| {
            let g = o / cout_g;
            for ci in 0..cin_g {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let mut acc = T::zero();
                        for b in 0..n {
                            let xc = &xd[(b * c + g * cin_g + ci) * h * w..][..h * w];
                            let gp = &gd[(b * out_c + o) * oh * ow..][..oh * ow];
                            for y in 0..oh {
                                let iy = y as isize * s - p + ky as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for xo in 0..ow {
                                    let ix = xo as isize * s - p + kx as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    acc = acc + gp[y * ow + xo] * xc[iy as usize * w + ix as usize];
                                }
                            }
                        }
                        dst[(ci * kh + ky) * kw + kx] = acc;
                    }
                }
            }
        });

        let db = self.bias.as_ref().map(|_| {
            let sums = parallel::map_indexed(out_c, |o| {
                let mut acc = T::zero();
                for b in 0..n {
                    for &v in &gd[(b * out_c + o) * oh * ow..][..oh * ow] {
                        acc = acc + v;
                    }
                }
                acc
            });
            Tensor::raw(vec![out_c], sums)
        });

        let mut dx = vec![T::zero(); x.len()];
        parallel::for_each_chunk(&mut dx, h * w, |plane, dst| {
            let (b, ci_full) = (plane / c, plane % c);
            let g = ci_full / cin_g;
            let ci = ci_full % cin_g;
            for iy in 0..h {
                for ix in 0..w {
                    let mut acc = T::zero();
                    for o in g * cout_g..(g + 1) * cout_g {
                        let wk = &wd[(o * cin_g + ci) * kh * kw..][..kh * kw];
                        let gp = &gd[(b * out_c + o) * oh * ow..][..oh * ow];
                        for ky in 0..kh {
                            let ny = iy as isize + p - ky as isize;
                            if ny < 0 || ny % s != 0 || ny / s >= oh as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let nx = ix as isize + p - kx as isize;
                                if nx < 0 || nx % s != 0 || nx / s >= ow as isize {
                                    continue;
                                }
                                acc = acc + wk[ky * kw + kx] * gp[(ny / s) as usize * ow + (nx / s) as usize];
                            }
                        }
                    }
                    dst[iy * w + ix] = acc;
                }
            }
        });

        let grads = Self {
            weight: Tensor::raw(self.weight.shape().to_vec(), dw),
            bias: db,
            stride: self.stride,
            padding: self.padding,
            groups: self.groups,
        };
        Ok((Tensor::raw(x.shape().to_vec(), dx), grads))
    }
}

pub fn conv2d<T: Scalar>(x: &Tensor<T>, p: &Conv2d<T>) -> Result<Tensor<T>> {
    p.forward(x)
}

/// Depthwise 3x3 convolution: groups equal to channels, stride 1, padding 1.
pub fn dwconv3x3<T: Scalar>(x: &Tensor<T>, p: &Conv2d<T>) -> Result<Tensor<T>> {
    let c = p.out_channels();
    if p.groups != c || p.in_channels() != c || p.kernel() != (3, 3) || p.stride != 1 || p.padding != 1 {
        return Err(Error::InvalidArgument(
            "dwconv3x3 needs a depthwise 3x3 kernel with stride 1 and padding 1".into(),
        ));
    }
    p.forward(x)
}

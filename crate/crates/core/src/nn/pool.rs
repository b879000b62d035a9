//! Directional average pooling and nearest-neighbour resampling.

use crate::error::{Error, Result};
use crate::tensor::{fmt_shape, Scalar, Tensor};

/// Mean over the height axis: `[N, C, H, W] -> [N, C, 1, W]`.
pub fn global_avg_pool_h<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let inv = T::of(1.0 / h as f64);
    let xd = x.data();
    let mut out = vec![T::zero(); n * c * w];
    for (plane, dst) in out.chunks_mut(w).enumerate() {
        let src = &xd[plane * h * w..][..h * w];
        for (j, d) in dst.iter_mut().enumerate() {
            let mut acc = T::zero();
            for i in 0..h {
                acc = acc + src[i * w + j];
            }
            *d = acc * inv;
        }
    }
    Ok(Tensor::raw(vec![n, c, 1, w], out))
}

/// Mean over the width axis: `[N, C, H, W] -> [N, C, H, 1]`.
pub fn global_avg_pool_w<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let inv = T::of(1.0 / w as f64);
    let out = x
        .data()
        .chunks(w)
        .map(|row| row.iter().fold(T::zero(), |a, &v| a + v) * inv)
        .collect();
    Ok(Tensor::raw(vec![n, c, h, 1], out))
}

pub fn global_avg_pool_h_backward<T: Scalar>(x_shape: &[usize], dy: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = dims(x_shape)?;
    if dy.shape() != [n, c, 1, w] {
        return Err(Error::shape(
            "pool_h backward",
            format!("{:?}", [n, c, 1, w]),
            fmt_shape(dy.shape()),
        ));
    }
    let inv = T::of(1.0 / h as f64);
    let gd = dy.data();
    let mut out = vec![T::zero(); n * c * h * w];
    for (plane, dst) in out.chunks_mut(h * w).enumerate() {
        for i in 0..h {
            for j in 0..w {
                dst[i * w + j] = gd[plane * w + j] * inv;
            }
        }
    }
    Ok(Tensor::raw(x_shape.to_vec(), out))
}

pub fn global_avg_pool_w_backward<T: Scalar>(x_shape: &[usize], dy: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = dims(x_shape)?;
    if dy.shape() != [n, c, h, 1] {
        return Err(Error::shape(
            "pool_w backward",
            format!("{:?}", [n, c, h, 1]),
            fmt_shape(dy.shape()),
        ));
    }
    let inv = T::of(1.0 / w as f64);
    let out = dy
        .data()
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g * inv, w))
        .collect();
    Ok(Tensor::raw(x_shape.to_vec(), out))
}

fn dims(shape: &[usize]) -> Result<[usize; 4]> {
    shape
        .try_into()
        .map_err(|_| Error::shape("pool", "rank 4", fmt_shape(shape)))
}

/// Replicates each pixel into a 2x2 block.
pub fn upsample_nearest_2x<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let (oh, ow) = (2 * h, 2 * w);
    let xd = x.data();
    let mut out = vec![T::zero(); n * c * oh * ow];
    for (plane, dst) in out.chunks_mut(oh * ow).enumerate() {
        let src = &xd[plane * h * w..][..h * w];
        for i in 0..oh {
            for j in 0..ow {
                dst[i * ow + j] = src[(i / 2) * w + j / 2];
            }
        }
    }
    Ok(Tensor::raw(vec![n, c, oh, ow], out))
}

/// Gradient of [`upsample_nearest_2x`]: sums each 2x2 block.
pub fn upsample_nearest_2x_backward<T: Scalar>(dy: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, oh, ow) = dy.dims4()?;
    if oh % 2 != 0 || ow % 2 != 0 {
        return Err(Error::shape(
            "upsample backward",
            "even spatial extents",
            fmt_shape(dy.shape()),
        ));
    }
    let (h, w) = (oh / 2, ow / 2);
    let gd = dy.data();
    let mut out = vec![T::zero(); n * c * h * w];
    for (plane, dst) in out.chunks_mut(h * w).enumerate() {
        let src = &gd[plane * oh * ow..][..oh * ow];
        for i in 0..h {
            for j in 0..w {
                let r0 = 2 * i * ow + 2 * j;
                let r1 = r0 + ow;
                dst[i * w + j] = src[r0] + src[r0 + 1] + src[r1] + src[r1 + 1];
            }
        }
    }
    Ok(Tensor::raw(vec![n, c, h, w], out))
}

/// 2x2 average pooling with stride 2; exact inverse of nearest upsampling.
pub fn avg_pool_2x<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let summed = upsample_nearest_2x_backward(x)?;
    Ok(summed.scale(T::of(0.25)))
}

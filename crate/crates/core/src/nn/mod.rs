//! Convolutional, linear, normalization, and activation primitives, each
//! with a forward pass and a hand-written backward pass.

pub mod activation;
pub mod conv;
pub mod linear;
pub mod mlp;
pub mod norm;
pub mod params;
pub mod pool;

pub use activation::{hard_sigmoid, sigmoid, silu, tanh, Activation};
pub use conv::{conv2d, dwconv3x3, Conv2d};
pub use linear::{linear, Linear};
pub use mlp::{mlp_forward, Mlp};
pub use norm::{layer_norm_channels, LayerNorm};
pub use params::Params;
pub use pool::{global_avg_pool_h, global_avg_pool_w, upsample_nearest_2x};

use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// `[N, C, H, W] -> [N, H*W, C]`: one row per spatial site.
pub fn to_tokens<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    x.permute(&[0, 2, 3, 1])?.reshape(&[n, h * w, c])
}

/// Inverse of [`to_tokens`].
pub fn from_tokens<T: Scalar>(t: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let [n, hw, c] = t.shape() else {
        return Err(crate::Error::shape(
            "from_tokens",
            "rank 3",
            crate::tensor::fmt_shape(t.shape()),
        ));
    };
    if *hw != h * w {
        return Err(crate::Error::shape(
            "from_tokens",
            format!("{} tokens", h * w),
            format!("{hw}"),
        ));
    }
    t.reshape(&[*n, h, w, *c])?.permute(&[0, 3, 1, 2])
}

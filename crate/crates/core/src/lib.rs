//! Hybrid-attention feature pyramid necks for single-stage detectors.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`], [`rng`], [`grad`]: a small dense tensor engine, a seeded
//!   random source, and the central-difference gradient oracle.
//! * [`nn`]: convolution, linear, layer norm, activations, pooling, MLP.
//! * [`attention`]: EMSA, coordinate attention, and their hybrid block.
//! * [`pyramid`]: a toy three-stage backbone and the FPN / PAFPN / HAFPN necks.
//! * [`metrics`]: IoU matching, precision, recall, AP and mAP.
//! * [`dataio`]: tensor files, parameter manifests, annotations, splits.
//! * [`config`], [`heatmap`], [`ablation`]: config files, activation maps,
//!   and the synthetic end-to-end ablation harness used by the CLI.
//!
//! Every layer with learnable weights exposes `forward` and `backward`;
//! backward passes are written by hand and checked against [`grad::fd_grad`]
//! by the [`gradcheck`] suite.

pub mod ablation;
pub mod attention;
pub mod config;
pub mod dataio;
pub mod error;
pub mod grad;
pub mod gradcheck;
pub mod heatmap;
pub mod metrics;
pub mod nn;
pub mod parallel;
pub mod pyramid;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{DType, Scalar, Tensor};

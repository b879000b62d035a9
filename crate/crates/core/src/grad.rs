//! Central-difference gradient oracle and the comparison harness used to
//! verify every hand-written backward pass.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::nn::params::{self, Params};
use crate::parallel;
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Central differences `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)` for every
/// coordinate of `x`.
pub fn fd_grad<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<Tensor<f64>>
where
    F: Fn(&Tensor<f64>) -> Result<f64> + Sync,
{
    let g = fd_grad_flat(|v| f(&Tensor::raw(x.shape().to_vec(), v.to_vec())), x.data(), eps)?;
    Ok(Tensor::raw(x.shape().to_vec(), g))
}

/// [`fd_grad`] over a plain coordinate vector.
pub fn fd_grad_flat<F>(f: F, x: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    fd_grad_delta(
        |up, down| {
            let (u, d) = (f(up)?, f(down)?);
            if !u.is_finite() || !d.is_finite() {
                return Err(Error::NonFinite { op: "fd_grad" });
            }
            Ok(u - d)
        },
        x,
        eps,
    )
}

/// Central differences from a function returning `f(up) - f(down)` directly,
/// which lets callers cancel shared terms before they cost precision.
pub fn fd_grad_delta<F>(delta: F, x: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64], &[f64]) -> Result<f64> + Sync,
{
    if !eps.is_finite() || eps <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "fd_grad eps must be positive, got {eps}"
        )));
    }
    let entries = parallel::map_indexed(x.len(), |i| {
        let mut up = x.to_vec();
        let mut down = x.to_vec();
        up[i] = x[i] + eps;
        down[i] = x[i] - eps;
        let d = delta(&up, &down)?;
        if !d.is_finite() {
            return Err(Error::NonFinite { op: "fd_grad" });
        }
        Ok(d / (2.0 * eps))
    });
    entries.into_iter().collect()
}

/// `max_i |a_i - n_i| / max(max_i |a_i|, max_i |n_i|)`; zero when both
/// vectors vanish.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    let scale = analytic.iter().chain(numeric).fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// A scalar function of a flat point with a claimed analytic gradient.
pub trait GradCase: Sync {
    fn name(&self) -> &str;
    fn point(&self) -> Vec<f64>;
    /// Named coordinate ranges, each compared separately.
    fn segments(&self) -> Vec<(String, Range<usize>)>;
    fn loss(&self, point: &[f64]) -> Result<f64>;
    fn gradient(&self, point: &[f64]) -> Result<Vec<f64>>;

    /// `loss(up) - loss(down)`.
    fn loss_delta(&self, up: &[f64], down: &[f64]) -> Result<f64> {
        Ok(self.loss(up)? - self.loss(down)?)
    }
}

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub name: String,
    pub segments: Vec<(String, f64)>,
    pub max_rel_err: f64,
}

pub fn check_case(case: &dyn GradCase, eps: f64) -> Result<CaseResult> {
    let point = case.point();
    let analytic = case.gradient(&point)?;
    if analytic.len() != point.len() {
        return Err(Error::shape(
            "check_case",
            format!("{} gradient entries", point.len()),
            format!("{}", analytic.len()),
        ));
    }
    let numeric = fd_grad_delta(|u, d| case.loss_delta(u, d), &point, eps)?;
    let segments: Vec<(String, f64)> = case
        .segments()
        .into_iter()
        .map(|(name, r)| {
            let e = rel_error(&analytic[r.clone()], &numeric[r]);
            (name, e)
        })
        .collect();
    let max_rel_err = segments.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(CaseResult {
        name: case.name().to_string(),
        segments,
        max_rel_err,
    })
}

type Forward<P> = dyn Fn(&P, &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>> + Sync;
type Backward<P> = dyn Fn(&P, &[Tensor<f64>], &[Tensor<f64>]) -> Result<(Vec<Tensor<f64>>, P)> + Sync;

/// Gradient case for a block with tensor inputs, a parameter bundle, and
/// tensor outputs. The scalar loss is `sum_k <probe_k, output_k>` with fixed
/// random probes, so every output coordinate carries a distinct weight.
pub struct BlockCase<P> {
    pub name: String,
    pub inputs: Vec<Tensor<f64>>,
    pub params: P,
    pub probes: Vec<Tensor<f64>>,
    pub forward: Box<Forward<P>>,
    pub backward: Box<Backward<P>>,
}

impl<P: Params<f64> + Clone + Sync> BlockCase<P> {
    fn split_point(&self, point: &[f64]) -> Result<(Vec<Tensor<f64>>, P)> {
        let mut off = 0;
        let mut inputs = Vec::with_capacity(self.inputs.len());
        for t in &self.inputs {
            inputs.push(Tensor::raw(t.shape().to_vec(), point[off..off + t.len()].to_vec()));
            off += t.len();
        }
        let mut p = self.params.clone();
        params::unflatten(&mut p, &point[off..])?;
        Ok((inputs, p))
    }

    fn outputs(&self, point: &[f64]) -> Result<Vec<Tensor<f64>>> {
        let (inputs, p) = self.split_point(point)?;
        let outs = (self.forward)(&p, &inputs)?;
        if outs.len() != self.probes.len() {
            return Err(Error::shape(
                "BlockCase",
                format!("{} outputs", self.probes.len()),
                format!("{}", outs.len()),
            ));
        }
        for o in &outs {
            o.ensure_finite("BlockCase")?;
        }
        Ok(outs)
    }
}

impl<P: Params<f64> + Clone + Sync> GradCase for BlockCase<P> {
    fn name(&self) -> &str {
        &self.name
    }

    fn point(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.inputs.iter().flat_map(|t| t.data().iter().copied()).collect();
        v.extend(params::flatten(&self.params));
        v
    }

    fn segments(&self) -> Vec<(String, Range<usize>)> {
        let mut out = Vec::new();
        let mut off = 0;
        for (i, t) in self.inputs.iter().enumerate() {
            out.push((format!("input{i}"), off..off + t.len()));
            off += t.len();
        }
        for (name, t) in params::named(&self.params) {
            out.push((name, off..off + t.len()));
            off += t.len();
        }
        out
    }

    fn loss(&self, point: &[f64]) -> Result<f64> {
        let outs = self.outputs(point)?;
        let mut total = 0.0;
        for (o, pr) in outs.iter().zip(&self.probes) {
            total += o.dot(pr)?;
        }
        Ok(total)
    }

    /// Differences the outputs elementwise before weighting by the probes,
    /// so terms that do not depend on the perturbed coordinate (such as a
    /// residual path) cancel exactly.
    fn loss_delta(&self, up: &[f64], down: &[f64]) -> Result<f64> {
        let (ou, od) = (self.outputs(up)?, self.outputs(down)?);
        let mut total = 0.0;
        for ((u, d), pr) in ou.iter().zip(&od).zip(&self.probes) {
            total += u.sub(d)?.dot(pr)?;
        }
        Ok(total)
    }

    fn gradient(&self, point: &[f64]) -> Result<Vec<f64>> {
        let (inputs, p) = self.split_point(point)?;
        let (dx, dp) = (self.backward)(&p, &inputs, &self.probes)?;
        let mut v: Vec<f64> = dx.iter().flat_map(|t| t.data().iter().copied()).collect();
        v.extend(params::flatten(&dp));
        Ok(v)
    }
}

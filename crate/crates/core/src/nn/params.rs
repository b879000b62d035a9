//! Named traversal over the learnable tensors of a parameter bundle.
//!
//! Gradients of a bundle are returned as a value of the same type, so one
//! traversal order serves parameters, gradients, flattening for the
//! finite-difference oracle, and the on-disk manifest.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub trait Params<T: Scalar> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>));
}

impl<T: Scalar> Params<T> for () {
    fn visit<'a>(&'a self, _: &str, _: &mut dyn FnMut(&str, &'a Tensor<T>)) {}
    fn visit_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Tensor<T>)) {}
}

impl<T: Scalar, P: Params<T>> Params<T> for Option<P> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>)) {
        if let Some(p) = self {
            p.visit(prefix, f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        if let Some(p) = self {
            p.visit_mut(prefix, f);
        }
    }
}

/// `prefix.name`, or `name` alone at the root.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub fn named<T: Scalar, P: Params<T> + ?Sized>(p: &P) -> Vec<(String, &Tensor<T>)> {
    let mut out = Vec::new();
    p.visit("", &mut |name, t| out.push((name.to_string(), t)));
    out
}

pub fn param_count<T: Scalar, P: Params<T> + ?Sized>(p: &P) -> usize {
    named(p).iter().map(|(_, t)| t.len()).sum()
}

pub fn flatten<T: Scalar, P: Params<T> + ?Sized>(p: &P) -> Vec<T> {
    let mut out = Vec::new();
    p.visit("", &mut |_, t| out.extend_from_slice(t.data()));
    out
}

/// Overwrites every tensor of `p` from `flat`, in traversal order.
pub fn unflatten<T: Scalar, P: Params<T> + ?Sized>(p: &mut P, flat: &[T]) -> Result<()> {
    let need = param_count(p);
    if need != flat.len() {
        return Err(Error::shape(
            "unflatten",
            format!("{need} scalars"),
            format!("{} scalars", flat.len()),
        ));
    }
    let mut off = 0;
    p.visit_mut("", &mut |_, t| {
        let n = t.len();
        t.data_mut().copy_from_slice(&flat[off..off + n]);
        off += n;
    });
    Ok(())
}

pub fn map_all<T: Scalar, P: Params<T> + ?Sized>(p: &mut P, mut f: impl FnMut(&str, &mut Tensor<T>)) {
    p.visit_mut("", &mut |name, t| f(name, t));
}

/// Sets every learnable scalar to zero.
pub fn zero_all<T: Scalar, P: Params<T> + ?Sized>(p: &mut P) {
    map_all(p, |_, t| t.data_mut().iter_mut().for_each(|v| *v = T::zero()));
}

/// Uniform `[-bound, bound)` tensor, `bound = 1/sqrt(fan_in)`.
pub fn uniform_init<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut crate::rng::Rng) -> Result<Tensor<T>> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::rand_uniform(shape, rng, -bound, bound)
}

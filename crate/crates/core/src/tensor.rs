//! Dense row-major tensors.
//!
//! Four-dimensional feature maps use the `[N, C, H, W]` layout, so element
//! `(n, c, h, w)` lives at `((n * C + c) * H + h) * W + w`. No op broadcasts
//! implicitly: every shape mismatch is an error.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};
use crate::parallel;
use crate::rng::Rng;

/// On-disk element type codes of the tensor file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 0x01,
    F64 = 0x02,
}

impl DType {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0x01 => Some(DType::F32),
            0x02 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Element type of a [`Tensor`]: `f32` at runtime, `f64` for verification.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    const DTYPE: DType;

    /// Converts from `f64`, rounding to nearest.
    fn of(v: f64) -> Self;

    /// Largest representable value strictly below `self`.
    fn below(self) -> Self;

    fn write_le(self, out: &mut Vec<u8>);

    /// Reads one element from exactly `DTYPE.width()` bytes.
    fn read_le(bytes: &[u8]) -> Self;

    fn to_f64_lossless(self) -> f64;

    /// IEEE total ordering.
    fn cmp_total(&self, other: &Self) -> std::cmp::Ordering;
}

impl Scalar for f32 {
    fn cmp_total(&self, other: &Self) -> std::cmp::Ordering {
        self.total_cmp(other)
    }

    const DTYPE: DType = DType::F32;

    fn of(v: f64) -> Self {
        v as f32
    }

    fn below(self) -> Self {
        self.next_down()
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte element"))
    }

    fn to_f64_lossless(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    fn cmp_total(&self, other: &Self) -> std::cmp::Ordering {
        self.total_cmp(other)
    }

    const DTYPE: DType = DType::F64;

    fn of(v: f64) -> Self {
        v
    }

    fn below(self) -> Self {
        self.next_down()
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte element"))
    }

    fn to_f64_lossless(self) -> f64 {
        self
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

fn check_extents(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidShape("rank must be at least 1".into()));
    }
    let mut n: usize = 1;
    for &e in shape {
        if e == 0 {
            return Err(Error::InvalidShape(format!("zero extent in {shape:?}")));
        }
        n = n
            .checked_mul(e)
            .ok_or_else(|| Error::InvalidShape(format!("element count overflows for {shape:?}")))?;
    }
    Ok(n)
}

pub(crate) fn fmt_shape(shape: &[usize]) -> String {
    format!("{shape:?}")
}

impl<T: Scalar> Tensor<T> {
    /// Builds a tensor from row-major data. Rejects non-finite scalars.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n = check_extents(shape)?;
        if n != data.len() {
            return Err(Error::shape(
                "from_vec",
                format!("{n} elements for {shape:?}"),
                format!("{} elements", data.len()),
            ));
        }
        let t = Self {
            shape: shape.to_vec(),
            data,
        };
        t.ensure_finite("from_vec")?;
        Ok(t)
    }

    /// Internal constructor for data already known to fit `shape`.
    pub(crate) fn raw(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn fill(shape: &[usize], v: T) -> Result<Self> {
        let n = check_extents(shape)?;
        Self::from_vec(shape, vec![v; n])
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::fill(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::fill(shape, T::one())
    }

    pub fn zeros_like(&self) -> Self {
        Self::raw(self.shape.clone(), vec![T::zero(); self.data.len()])
    }

    pub fn scalar(v: T) -> Result<Self> {
        Self::from_vec(&[1], vec![v])
    }

    /// Seeded uniform draws in `[lo, hi)`.
    pub fn rand_uniform(shape: &[usize], rng: &mut Rng, lo: f64, hi: f64) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() || lo >= hi {
            return Err(Error::InvalidArgument(format!(
                "rand_uniform requires finite lo < hi, got [{lo}, {hi})"
            )));
        }
        let n = check_extents(shape)?;
        let data = (0..n).map(|_| rng.uniform::<T>(lo, hi)).collect();
        Ok(Self::raw(shape.to_vec(), data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// `(N, C, H, W)` of a rank-4 tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape("dims4", "rank 4", fmt_shape(&self.shape))),
        }
    }

    pub fn at4(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        let (_, cc, hh, ww) = self.dims4().expect("rank-4 tensor");
        self.data[((n * cc + c) * hh + h) * ww + w]
    }

    pub fn ensure_finite(&self, op: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { op })
        }
    }

    fn same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(op, fmt_shape(&self.shape), fmt_shape(&other.shape)));
        }
        Ok(())
    }

    pub(crate) fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.same_shape(other, op)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        let out = Self::raw(self.shape.clone(), data);
        out.ensure_finite(op)?;
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::raw(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    /// In-place `self += other`; used for gradient accumulation.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn mean(&self) -> T {
        self.sum() / T::of(self.data.len() as f64)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    /// Sum of `self ⊙ other`.
    pub fn dot(&self, other: &Self) -> Result<T> {
        self.same_shape(other, "dot")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b))
    }

    /// Explicit precision conversion.
    pub fn cast<U: Scalar>(&self) -> Result<Tensor<U>> {
        let data: Vec<U> = self.data.iter().map(|v| U::of(v.to_f64_lossless())).collect();
        let out = Tensor::raw(self.shape.clone(), data);
        out.ensure_finite("cast")?;
        Ok(out)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let n = check_extents(shape)?;
        if n != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("{} elements", self.data.len()),
                fmt_shape(shape),
            ));
        }
        Ok(Self::raw(shape.to_vec(), self.data.clone()))
    }

    /// Reorders axes: output axis `i` is input axis `order[i]`.
    pub fn permute(&self, order: &[usize]) -> Result<Self> {
        let r = self.rank();
        let mut seen = vec![false; r];
        if order.len() != r || order.iter().any(|&a| a >= r || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::InvalidArgument(format!(
                "permute order {order:?} is not a permutation of rank {r}"
            )));
        }
        let in_strides = strides(&self.shape);
        let out_shape: Vec<usize> = order.iter().map(|&a| self.shape[a]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        let mut idx = vec![0usize; r];
        for _ in 0..self.data.len() {
            let off: usize = idx.iter().zip(order).map(|(&i, &a)| i * in_strides[a]).sum();
            data.push(self.data[off]);
            for ax in (0..r).rev() {
                idx[ax] += 1;
                if idx[ax] < out_shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Ok(Self::raw(out_shape, data))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Self], axis: usize) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        if axis >= first.rank() {
            return Err(Error::InvalidArgument(format!(
                "concat axis {axis} out of range for rank {}",
                first.rank()
            )));
        }
        for p in parts {
            let ok = p.rank() == first.rank()
                && p.shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", fmt_shape(&first.shape), fmt_shape(&p.shape)));
            }
        }
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let mut shape = first.shape.clone();
        shape[axis] = parts.iter().map(|p| p.shape[axis]).sum();
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for p in parts {
                let block = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * block..(o + 1) * block]);
            }
        }
        Ok(Self::raw(shape, data))
    }

    /// Splits along `axis` into pieces with the given extents.
    pub fn split(&self, axis: usize, sizes: &[usize]) -> Result<Vec<Self>> {
        if axis >= self.rank() || sizes.iter().sum::<usize>() != self.shape[axis] || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "cannot split axis {axis} of {:?} into {sizes:?}",
                self.shape
            )));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let full = self.shape[axis] * inner;
        let mut out = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &s in sizes {
            let mut shape = self.shape.clone();
            shape[axis] = s;
            let mut data = Vec::with_capacity(outer * s * inner);
            for o in 0..outer {
                let base = o * full + start * inner;
                data.extend_from_slice(&self.data[base..base + s * inner]);
            }
            out.push(Self::raw(shape, data));
            start += s;
        }
        Ok(out)
    }

    /// Mean over `axes`, keeping each reduced axis with extent 1.
    /// Terms are summed in ascending row-major order.
    pub fn reduce_mean(&self, axes: &[usize]) -> Result<Self> {
        let r = self.rank();
        if axes.iter().any(|&a| a >= r) {
            return Err(Error::InvalidArgument(format!(
                "reduce axes {axes:?} out of range for rank {r}"
            )));
        }
        let mut reduced = vec![false; r];
        for &a in axes {
            reduced[a] = true;
        }
        let count: usize = (0..r).filter(|&a| reduced[a]).map(|a| self.shape[a]).product();
        let out_shape: Vec<usize> = (0..r).map(|a| if reduced[a] { 1 } else { self.shape[a] }).collect();
        let out_strides = strides(&out_shape);
        let mut acc = vec![T::zero(); out_shape.iter().product()];
        let mut idx = vec![0usize; r];
        for &v in &self.data {
            let off: usize = idx
                .iter()
                .zip(&out_shape)
                .zip(&out_strides)
                .map(|((&i, &e), &s)| if e == 1 { 0 } else { i * s })
                .sum();
            acc[off] = acc[off] + v;
            for ax in (0..r).rev() {
                idx[ax] += 1;
                if idx[ax] < self.shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        let denom = T::of(count as f64);
        Ok(Self::raw(out_shape, acc.into_iter().map(|v| v / denom).collect()))
    }

    /// Matrix product over the last two axes; leading axes must match
    /// exactly. Each output element sums over `k` in ascending order.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (ra, rb) = (self.rank(), other.rank());
        if ra < 2 || ra != rb || self.shape[..ra - 2] != other.shape[..rb - 2] {
            return Err(Error::shape("matmul", fmt_shape(&self.shape), fmt_shape(&other.shape)));
        }
        let (m, k) = (self.shape[ra - 2], self.shape[ra - 1]);
        let (k2, n) = (other.shape[rb - 2], other.shape[rb - 1]);
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner extent {k}"),
                format!("inner extent {k2}"),
            ));
        }
        let batch: usize = self.shape[..ra - 2].iter().product();
        let mut out = vec![T::zero(); batch * m * n];
        let (a, b) = (&self.data, &other.data);
        parallel::for_each_chunk(&mut out, n, |row, dst| {
            let (bi, i) = (row / m, row % m);
            let arow = &a[(bi * m + i) * k..(bi * m + i + 1) * k];
            let bmat = &b[bi * k * n..(bi + 1) * k * n];
            for (kk, &av) in arow.iter().enumerate() {
                let brow = &bmat[kk * n..(kk + 1) * n];
                for (d, &bv) in dst.iter_mut().zip(brow) {
                    *d = *d + av * bv;
                }
            }
        });
        let mut shape = self.shape[..ra - 2].to_vec();
        shape.extend([m, n]);
        let t = Self::raw(shape, out);
        t.ensure_finite("matmul")?;
        Ok(t)
    }

    /// Swaps the last two axes.
    pub fn transpose_last2(&self) -> Result<Self> {
        let r = self.rank();
        if r < 2 {
            return Err(Error::shape("transpose_last2", "rank >= 2", fmt_shape(&self.shape)));
        }
        let mut order: Vec<usize> = (0..r).collect();
        order.swap(r - 2, r - 1);
        self.permute(&order)
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn constructors() {
        let z = Tensor::<f64>::zeros(&[2, 3]).unwrap();
        assert_eq!(z.len(), 6);
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert_eq!(Tensor::<f64>::ones(&[1]).unwrap().data(), &[1.0]);
        assert_eq!(Tensor::<f32>::fill(&[2, 2], 0.5).unwrap().data(), &[0.5; 4]);
    }

    #[test]
    fn zero_extent_rejected() {
        assert!(Tensor::<f64>::zeros(&[2, 0]).is_err());
        assert!(Tensor::<f64>::zeros(&[]).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        assert!(Tensor::<f64>::from_vec(&[2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::<f32>::from_vec(&[1], vec![f32::INFINITY]).is_err());
        let big = Tensor::<f32>::fill(&[1], f32::MAX).unwrap();
        assert!(matches!(big.add(&big), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn rand_uniform_rejects_empty_interval() {
        let mut r = Rng::new(1);
        assert!(Tensor::<f64>::rand_uniform(&[3], &mut r, 1.0, 1.0).is_err());
        assert!(Tensor::<f64>::rand_uniform(&[3], &mut r, 2.0, 1.0).is_err());
    }

    #[test]
    fn rand_uniform_is_deterministic() {
        let a = Tensor::<f64>::rand_uniform(&[4], &mut Rng::new(7), 0.0, 1.0).unwrap();
        let b = Tensor::<f64>::rand_uniform(&[4], &mut Rng::new(7), 0.0, 1.0).unwrap();
        let bits = |x: &Tensor<f64>| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn rand_uniform_range_and_mean() {
        let x = Tensor::<f64>::rand_uniform(&[100_000], &mut Rng::new(99), 0.0, 1.0).unwrap();
        assert!(x.data().iter().all(|&v| (0.0..1.0).contains(&v)));
        let mean = x.mean();
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn matmul_identity_and_hand_values() {
        let i2 = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let m = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(i2.matmul(&m).unwrap(), m);
        let a = t(&[1, 2], &[1.0, 2.0]);
        let b = t(&[2, 1], &[3.0, 4.0]);
        assert_eq!(a.matmul(&b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut r = Rng::new(21);
        let a = Tensor::<f64>::rand_uniform(&[5, 4], &mut r, -1.0, 1.0).unwrap();
        let b = Tensor::<f64>::rand_uniform(&[4, 3], &mut r, -1.0, 1.0).unwrap();
        let c = a.matmul(&b).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += a.data()[i * 4 + k] * b.data()[k * 3 + j];
                }
                assert_eq!(c.data()[i * 3 + j], acc);
            }
        }
    }

    #[test]
    fn batched_matmul_and_mismatches() {
        let mut r = Rng::new(2);
        let a = Tensor::<f64>::rand_uniform(&[2, 3, 4], &mut r, -1.0, 1.0).unwrap();
        let b = Tensor::<f64>::rand_uniform(&[2, 4, 5], &mut r, -1.0, 1.0).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 3, 5]);
        let second = a.split(0, &[1, 1]).unwrap()[1].reshape(&[3, 4]).unwrap();
        let second_b = b.split(0, &[1, 1]).unwrap()[1].reshape(&[4, 5]).unwrap();
        assert_eq!(&c.data()[15..], second.matmul(&second_b).unwrap().data());
        assert!(a.matmul(&a).is_err());
        let b3 = Tensor::<f64>::zeros(&[3, 4, 5]).unwrap();
        assert!(a.matmul(&b3).is_err());
    }

    #[test]
    fn elementwise_and_shape_algebra() {
        let mut r = Rng::new(4);
        let x = Tensor::<f64>::rand_uniform(&[2, 3], &mut r, -1.0, 1.0).unwrap();
        assert_eq!(x.add(&x.zeros_like()).unwrap(), x);
        assert!(x.add(&Tensor::zeros(&[3, 2]).unwrap()).is_err());
        let a = Tensor::<f64>::zeros(&[1, 2, 4, 4]).unwrap();
        let b = Tensor::<f64>::ones(&[1, 3, 4, 4]).unwrap();
        let c = Tensor::concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[1, 5, 4, 4]);
        assert_eq!(c.data()[..32].iter().sum::<f64>(), 0.0);
        assert_eq!(c.data()[32..].iter().sum::<f64>(), 48.0);
        let parts = c.split(1, &[2, 3]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
        let bad = Tensor::<f64>::zeros(&[1, 2, 4, 3]).unwrap();
        assert!(Tensor::concat(&[&a, &bad], 1).is_err());
        let m = Tensor::<f64>::ones(&[3, 3]).unwrap().reduce_mean(&[0, 1]).unwrap();
        assert_eq!(m.shape(), &[1, 1]);
        assert_eq!(m.data(), &[1.0]);
    }

    #[test]
    fn permute_and_reduce() {
        let x = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let p = x.permute(&[1, 0]).unwrap();
        assert_eq!(p.shape(), &[3, 2]);
        assert_eq!(p.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert!(x.permute(&[0, 0]).is_err());
        assert_eq!(x.reduce_mean(&[1]).unwrap().data(), &[2.0, 5.0]);
        assert_eq!(x.reduce_mean(&[0]).unwrap().data(), &[2.5, 3.5, 4.5]);
        assert!(x.reshape(&[4]).is_err());
        assert_eq!(x.reshape(&[3, 2]).unwrap().shape(), &[3, 2]);
    }

    #[test]
    fn row_major_addressing() {
        let data: Vec<f64> = (0..2 * 3 * 4 * 5).map(f64::from).collect();
        let x = Tensor::from_vec(&[2, 3, 4, 5], data).unwrap();
        assert_eq!(x.at4(1, 2, 3, 4), (((3 + 2) * 4 + 3) * 5 + 4) as f64);
    }
}

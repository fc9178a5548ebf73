//! Dense row-major `f64` tensors and a define-by-run reverse-mode tape.
//!
//! [`Tensor`] is an immutable value type with plain (untracked) operations.
//! [`Tape`] records the same operations over [`Var`] handles and replays
//! them backwards to produce gradients for registered leaves.
//!
//! Elementwise binary ops only accept equal shapes or a single-element
//! operand (scalar broadcast). Anything else is a dimension error.

mod gradcheck;
mod kernels;
mod params;
mod tape;

pub use gradcheck::grad_check;
pub use params::{load_checkpoint, save_checkpoint, Checkpoint, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::dim("tensor", format!("invalid shape {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Result<Self> {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor::new(shape, vec![value; n])
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Tensor::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Tensor::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn eye(n: usize) -> Result<Self> {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Tensor::new([n, n], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::dim(
                "item",
                format!("expected one element, shape {:?}", self.shape),
            ))
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    /// Pointwise combination with equal-shape or scalar broadcasting.
    pub fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let shape = broadcast_shape(op, self, other)?;
        let n = shape.iter().product::<usize>();
        let a = &self.data;
        let b = &other.data;
        let data = if a.len() == b.len() {
            a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
        } else if a.len() == 1 {
            b.iter().map(|&y| f(a[0], y)).collect()
        } else {
            a.iter().map(|&x| f(x, b[0])).collect()
        };
        debug_assert_eq!(n, shape.iter().product::<usize>());
        Ok(Tensor::from_parts(shape, data))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    pub fn tanh(&self) -> Tensor {
        self.map(f64::tanh)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|v| v.max(0.0))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Tensor> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.numel() || shape.iter().any(|&d| d == 0) {
            return Err(Error::dim(
                "reshape",
                format!("{:?} -> {:?}", self.shape, shape),
            ));
        }
        Ok(Tensor::from_parts(shape, self.data.clone()))
    }

    /// Matrix product. Accepts `[m,k] x [k,n]` or batched `[b,m,k] x [b,k,n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let dims = MatmulDims::resolve(self.shape(), other.shape())?;
        let mut out = vec![0.0; dims.batch * dims.m * dims.n];
        for b in 0..dims.batch {
            kernels::gemm(
                &self.data[b * dims.m * dims.k..(b + 1) * dims.m * dims.k],
                &other.data[b * dims.k * dims.n..(b + 1) * dims.k * dims.n],
                &mut out[b * dims.m * dims.n..(b + 1) * dims.m * dims.n],
                dims.m,
                dims.k,
                dims.n,
            );
        }
        Ok(Tensor::from_parts(dims.out_shape(), out))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Tensor> {
        let nd = self.shape.len();
        if nd < 2 {
            return Err(Error::dim("transpose", format!("rank {nd} < 2")));
        }
        let (r, c) = (self.shape[nd - 2], self.shape[nd - 1]);
        let batch = self.numel() / (r * c);
        let mut out = vec![0.0; self.numel()];
        for b in 0..batch {
            kernels::transpose_into(&self.data[b * r * c..(b + 1) * r * c], &mut out[b * r * c..(b + 1) * r * c], r, c);
        }
        let mut shape = self.shape.clone();
        shape.swap(nd - 2, nd - 1);
        Ok(Tensor::from_parts(shape, out))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let (outer, len, inner) = axis_split("softmax", &self.shape, axis)?;
        let mut out = self.data.clone();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).map(|k| out[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..len {
                    let e = (out[idx(k)] - max).exp();
                    out[idx(k)] = e;
                    total += e;
                }
                for k in 0..len {
                    out[idx(k)] /= total;
                }
            }
        }
        Ok(Tensor::from_parts(self.shape.clone(), out))
    }

    /// Concatenates tensors of equal rank along `axis`.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat", "no inputs"))?;
        let rank = first.shape.len();
        if axis >= rank {
            return Err(Error::dim("concat", format!("axis {axis} out of range for rank {rank}")));
        }
        for p in parts {
            let ok = p.shape.len() == rank
                && p.shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !ok {
                return Err(Error::dim(
                    "concat",
                    format!("{:?} incompatible with {:?} on axis {axis}", p.shape, first.shape),
                ));
            }
        }
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let total_axis: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut data = Vec::with_capacity(outer * total_axis * inner);
        for o in 0..outer {
            for p in parts {
                let chunk = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total_axis;
        Ok(Tensor::from_parts(shape, data))
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let (outer, extent, inner) = axis_split("slice", &self.shape, axis)?;
        if len == 0 || start + len > extent {
            return Err(Error::dim(
                "slice",
                format!("[{start}, {}) outside extent {extent}", start + len),
            ));
        }
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Ok(Tensor::from_parts(shape, data))
    }
}

pub(crate) fn broadcast_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    if a.shape == b.shape || b.is_scalar() {
        Ok(a.shape.clone())
    } else if a.is_scalar() {
        Ok(b.shape.clone())
    } else {
        Err(Error::dim(op, format!("shapes {:?} and {:?}", a.shape, b.shape)))
    }
}

/// `(outer, extent, inner)` decomposition of a shape around `axis`.
pub(crate) fn axis_split(op: &'static str, shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::dim(op, format!("axis {axis} out of range for {shape:?}")));
    }
    Ok((
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    ))
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct MatmulDims {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub batched: bool,
}

impl MatmulDims {
    pub fn resolve(a: &[usize], b: &[usize]) -> Result<Self> {
        match (a, b) {
            (&[m, k], &[k2, n]) if k == k2 => Ok(MatmulDims { batch: 1, m, k, n, batched: false }),
            (&[ba, m, k], &[bb, k2, n]) if k == k2 && ba == bb => Ok(MatmulDims {
                batch: ba,
                m,
                k,
                n,
                batched: true,
            }),
            _ => Err(Error::dim("matmul", format!("{a:?} x {b:?}"))),
        }
    }

    pub fn out_shape(&self) -> Vec<usize> {
        if self.batched {
            vec![self.batch, self.m, self.n]
        } else {
            vec![self.m, self.n]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        assert_eq!(Tensor::eye(2).unwrap().matmul(&a).unwrap(), a);
    }

    #[test]
    fn matmul_by_column() {
        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        let b = t(&[2, 1], &[0., 1.]);
        assert_eq!(a.matmul(&b).unwrap().data(), &[2., 4.]);
    }

    #[test]
    fn matmul_zero() {
        let a = t(&[2, 3], &[1., -2., 3., 4., 5., 6.]);
        let z = Tensor::zeros([3, 4]).unwrap();
        assert!(a.matmul(&z).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = t(&[2, 3], &[0.; 6]);
        assert!(matches!(a.matmul(&a), Err(Error::Dimension { .. })));
    }

    #[test]
    fn batched_matmul_matches_per_batch() {
        let a = t(&[2, 1, 2], &[1., 2., 3., 4.]);
        let b = t(&[2, 2, 1], &[1., 1., 0., 1.]);
        assert_eq!(a.matmul(&b).unwrap().data(), &[3., 4.]);
    }

    #[test]
    fn elementwise() {
        assert_eq!(t(&[3], &[-1., 0., 2.]).relu().data(), &[0., 0., 2.]);
        assert_eq!(Tensor::scalar(0.0).tanh().data(), &[0.0]);
        let s = t(&[2], &[1., 2.]).add(&t(&[2], &[3., 4.])).unwrap();
        assert_eq!(s.data(), &[4., 6.]);
        let b = t(&[2], &[1., 2.]).mul(&Tensor::scalar(3.0)).unwrap();
        assert_eq!(b.data(), &[3., 6.]);
        assert!(t(&[2], &[1., 2.]).add(&t(&[3], &[1., 2., 3.])).is_err());
    }

    #[test]
    fn softmax_cases() {
        let u = t(&[3], &[0., 0., 0.]).softmax(0).unwrap();
        for v in u.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = t(&[2], &[0.0, 3f64.ln()]).softmax(0).unwrap();
        assert!((p.data()[0] - 0.25).abs() < 1e-15);
        assert!((p.data()[1] - 0.75).abs() < 1e-15);

        let x = t(&[2, 3], &[1., 2., 3., -1., 0., 5.]);
        let shifted = x.add(&Tensor::scalar(7.5)).unwrap();
        let (a, b) = (x.softmax(1).unwrap(), shifted.softmax(1).unwrap());
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-15);
        }
        let cols = x.softmax(0).unwrap();
        for c in 0..3 {
            let s = cols.data()[c] + cols.data()[3 + c];
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(x.softmax(2).is_err());
    }

    #[test]
    fn concat_and_slice_roundtrip() {
        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        let b = t(&[2, 1], &[5., 6.]);
        let c = Tensor::concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.data(), &[1., 2., 5., 3., 4., 6.]);
        assert_eq!(c.slice(1, 0, 2).unwrap(), a);
        assert_eq!(c.slice(1, 2, 1).unwrap(), b);
        assert!(c.slice(1, 2, 2).is_err());
    }

    #[test]
    fn transpose_3d() {
        let a = t(&[1, 2, 3], &[1., 2., 3., 4., 5., 6.]);
        let at = a.transpose().unwrap();
        assert_eq!(at.shape(), &[1, 3, 2]);
        assert_eq!(at.data(), &[1., 4., 2., 5., 3., 6.]);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new([2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new([0], vec![]).is_err());
    }
}

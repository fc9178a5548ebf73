use super::kernels;
use super::{axis_split, MatmulDims, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(usize, usize, MatmulDims),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Tanh(usize),
    Relu(usize),
    Sqrt(usize),
    Softmax(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Concat(Vec<usize>, usize),
    Slice { src: usize, axis: usize, start: usize },
    Sum(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Define-by-run gradient tape. One tape per forward pass; single-threaded.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Leaf gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`; all zeros when `v` did not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::from_parts(
                self.shapes[v.0].clone(),
                vec![0.0; self.shapes[v.0].iter().product()],
            ),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a differentiable input (a parameter or other gradient target).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Registers a value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push_raw(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, parents: &[usize]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let tracked = parents.iter().any(|&p| self.nodes[p].tracked);
        Ok(self.push_raw(value, op, tracked))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let dims = MatmulDims::resolve(self.shape(a), self.shape(b))?;
        let out = self.value(a).matmul(self.value(b))?;
        self.push("matmul", out, Op::MatMul(a.0, b.0, dims), &[a.0, b.0])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        self.push("add", out, Op::Add(a.0, b.0), &[a.0, b.0])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        self.push("sub", out, Op::Sub(a.0, b.0), &[a.0, b.0])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).mul(self.value(b))?;
        self.push("mul", out, Op::Mul(a.0, b.0), &[a.0, b.0])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).scale(c);
        self.push("scale", out, Op::Scale(a.0, c), &[a.0])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).tanh();
        self.push("tanh", out, Op::Tanh(a.0), &[a.0])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).relu();
        self.push("relu", out, Op::Relu(a.0), &[a.0])
    }

    /// Square root; the gradient at exactly zero is taken as zero.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&v| v < 0.0) {
            return Err(Error::NonFinite { op: "sqrt" });
        }
        let out = self.value(a).map(f64::sqrt);
        self.push("sqrt", out, Op::Sqrt(a.0), &[a.0])
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = self.value(a).softmax(axis)?;
        self.push("softmax", out, Op::Softmax(a.0, axis), &[a.0])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        self.push("transpose", out, Op::Transpose(a.0), &[a.0])
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        self.push("reshape", out, Op::Reshape(a.0), &[a.0])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|v| self.value(*v)).collect();
        let out = Tensor::concat(&values, axis)?;
        let idx: Vec<usize> = parts.iter().map(|v| v.0).collect();
        self.push("concat", out, Op::Concat(idx.clone(), axis), &idx)
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let out = self.value(a).slice(axis, start, len)?;
        self.push("slice", out, Op::Slice { src: a.0, axis, start }, &[a.0])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push("sum", out, Op::Sum(a.0), &[a.0])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// `x·w + b` for `x: [n,k]`, `w: [k,m]`, `b: [1,m]`. The bias row is
    /// expanded through a ones column so only equal-shape addition is needed.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        let n = self.shape(x)[0];
        let ones = self.constant(Tensor::from_parts(vec![n, 1], vec![1.0; n]));
        let bias = self.matmul(ones, b)?;
        self.add(xw, bias)
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if !root.value.is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::from_parts(root.value.shape().to_vec(), vec![1.0]));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |i: usize| &self.nodes[i].value;
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b, dims) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                let gd = g.data();
                let MatmulDims { batch, m, k, n, .. } = *dims;
                if self.nodes[*a].tracked {
                    let mut ga = vec![0.0; batch * m * k];
                    for bi in 0..batch {
                        kernels::gemm_nt(
                            &gd[bi * m * n..(bi + 1) * m * n],
                            &bv[bi * k * n..(bi + 1) * k * n],
                            &mut ga[bi * m * k..(bi + 1) * m * k],
                            m,
                            k,
                            n,
                        );
                    }
                    accumulate(grads, *a, val(*a).shape(), ga);
                }
                if self.nodes[*b].tracked {
                    let mut gb = vec![0.0; batch * k * n];
                    for bi in 0..batch {
                        kernels::gemm_tn(
                            &av[bi * m * k..(bi + 1) * m * k],
                            &gd[bi * m * n..(bi + 1) * m * n],
                            &mut gb[bi * k * n..(bi + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                    accumulate(grads, *b, val(*b).shape(), gb);
                }
            }
            Op::Add(a, b) => {
                self.binary_grad(*a, g.data().to_vec(), grads);
                self.binary_grad(*b, g.data().to_vec(), grads);
            }
            Op::Sub(a, b) => {
                self.binary_grad(*a, g.data().to_vec(), grads);
                self.binary_grad(*b, g.data().iter().map(|v| -v).collect(), grads);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let ga = g.zip_with(bv, "mul", |x, y| x * y)?.into_data();
                let gb = g.zip_with(av, "mul", |x, y| x * y)?.into_data();
                self.binary_grad(*a, ga, grads);
                self.binary_grad(*b, gb, grads);
            }
            Op::Scale(a, c) => {
                accumulate(grads, *a, val(*a).shape(), g.data().iter().map(|v| v * c).collect());
            }
            Op::Tanh(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(gv, y)| gv * (1.0 - y * y))
                    .collect();
                accumulate(grads, *a, val(*a).shape(), d);
            }
            Op::Relu(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(val(*a).data())
                    .map(|(gv, x)| if *x > 0.0 { *gv } else { 0.0 })
                    .collect();
                accumulate(grads, *a, val(*a).shape(), d);
            }
            Op::Sqrt(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(gv, y)| if *y > 0.0 { gv * 0.5 / y } else { 0.0 })
                    .collect();
                accumulate(grads, *a, val(*a).shape(), d);
            }
            Op::Softmax(a, axis) => {
                let y = node.value.data();
                let gd = g.data();
                let (outer, len, inner) = axis_split("softmax", node.value.shape(), *axis)?;
                let mut d = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let dot: f64 = (0..len).map(|k| gd[idx(k)] * y[idx(k)]).sum();
                        for k in 0..len {
                            d[idx(k)] = y[idx(k)] * (gd[idx(k)] - dot);
                        }
                    }
                }
                accumulate(grads, *a, val(*a).shape(), d);
            }
            Op::Transpose(a) => {
                let d = g.transpose()?.into_data();
                accumulate(grads, *a, val(*a).shape(), d);
            }
            Op::Reshape(a) => {
                accumulate(grads, *a, val(*a).shape(), g.data().to_vec());
            }
            Op::Concat(parts, axis) => {
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).shape()[*axis];
                    if self.nodes[p].tracked {
                        let d = g.slice(*axis, offset, len)?.into_data();
                        accumulate(grads, p, val(p).shape(), d);
                    }
                    offset += len;
                }
            }
            Op::Slice { src, axis, start } => {
                let shape = val(*src).shape();
                let (outer, extent, inner) = axis_split("slice", shape, *axis)?;
                let len = node.value.shape()[*axis];
                let mut d = vec![0.0; val(*src).numel()];
                let gd = g.data();
                for o in 0..outer {
                    let dst = (o * extent + start) * inner;
                    let srcoff = o * len * inner;
                    d[dst..dst + len * inner].copy_from_slice(&gd[srcoff..srcoff + len * inner]);
                }
                accumulate(grads, *src, shape, d);
            }
            Op::Sum(a) => {
                let n = val(*a).numel();
                accumulate(grads, *a, val(*a).shape(), vec![g.data()[0]; n]);
            }
        }
        Ok(())
    }

    /// Routes an output-shaped gradient to operand `i`, summing when the
    /// operand was scalar-broadcast.
    fn binary_grad(&self, i: usize, d: Vec<f64>, grads: &mut [Option<Tensor>]) {
        if !self.nodes[i].tracked {
            return;
        }
        let shape = self.nodes[i].value.shape();
        let d = if self.nodes[i].value.numel() == d.len() {
            d
        } else {
            vec![d.iter().sum()]
        };
        accumulate(grads, i, shape, d);
    }
}

fn accumulate(grads: &mut [Option<Tensor>], i: usize, shape: &[usize], d: Vec<f64>) {
    match &mut grads[i] {
        Some(existing) => {
            for (e, v) in existing.data.iter_mut().zip(d) {
                *e += v;
            }
        }
        slot @ None => *slot = Some(Tensor::from_parts(shape.to_vec(), d)),
    }
}

//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Operations are appended to a [`Tape`] as they are evaluated; the forward
//! values come from the untaped kernels in [`crate::tensor`]. [`Tape::backward`]
//! walks the records in exact reverse order and accumulates adjoints
//! additively, so a value used twice receives the sum of both contributions.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{self, BinaryOp, Tensor, UnaryOp};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a particular tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Binary(BinaryOp, usize, usize),
    Unary(UnaryOp, usize),
    AddBias(usize, usize),
    LogSoftmaxRows(usize),
    GatherRows(usize, Vec<usize>),
    RowSum(usize),
    Sum(usize),
    Reshape(usize),
    Im2Col(usize, usize),
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    params: Vec<usize>,
}

/// Gradients of a root scalar with respect to each registered parameter, in
/// registration order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, param: usize) -> Option<&Tensor> {
        self.grads.get(param)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.grads.iter()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn into_vec(self) -> Vec<Tensor> {
        self.grads
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    /// Number of recorded operations, leaves included.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(v.index)
    }

    /// Registers a trainable leaf. Gradients are reported in registration order.
    pub fn param(&mut self, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf);
        self.params.push(v.index);
        v
    }

    /// Records a leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        Ok(&self.nodes[self.idx(v)?].value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let out = tensor::matmul(&self.nodes[ia].value, &self.nodes[ib].value)?;
        Ok(self.push(out, Op::MatMul(ia, ib)))
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let out = tensor::binary(op, &self.nodes[ia].value, &self.nodes[ib].value)?;
        Ok(self.push(out, Op::Binary(op, ia, ib)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn unary(&mut self, op: UnaryOp, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let out = tensor::unary(op, &self.nodes[ix].value)?;
        Ok(self.push(out, Op::Unary(op, ix)))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Relu, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, x)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(UnaryOp::Scale(c), x)
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (ix, ib) = (self.idx(x)?, self.idx(bias)?);
        let out = tensor::add_bias(&self.nodes[ix].value, &self.nodes[ib].value)?;
        Ok(self.push(out, Op::AddBias(ix, ib)))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let out = tensor::log_softmax_rows(&self.nodes[ix].value)?;
        Ok(self.push(out, Op::LogSoftmaxRows(ix)))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let ix = self.idx(x)?;
        let out = tensor::gather_rows(&self.nodes[ix].value, idx)?;
        Ok(self.push(out, Op::GatherRows(ix, idx.to_vec())))
    }

    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let out = tensor::row_sum(&self.nodes[ix].value)?;
        Ok(self.push(out, Op::RowSum(ix)))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let out = tensor::sum(&self.nodes[ix].value)?;
        Ok(self.push(out, Op::Sum(ix)))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x)?.len();
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let ix = self.idx(x)?;
        let out = self.nodes[ix].value.reshape(shape)?;
        Ok(self.push(out, Op::Reshape(ix)))
    }

    pub fn im2col(&mut self, x: Var, k: usize) -> Result<Var> {
        let ix = self.idx(x)?;
        let out = tensor::im2col(&self.nodes[ix].value, k)?;
        Ok(self.push(out, Op::Im2Col(ix, k)))
    }

    /// Computes `d root / d param` for every registered parameter.
    /// Parameters the root does not depend on get zero gradients.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let ir = self.idx(root)?;
        let root_val = &self.nodes[ir].value;
        if root_val.len() != 1 {
            return Err(Error::RootNotScalar {
                shape: root_val.shape().to_vec(),
            });
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; ir + 1];
        adj[ir] = Some(Tensor::full(root_val.shape(), 1.0));

        for i in (0..=ir).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    adj[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    let ga = tensor::matmul(&g, &tensor::transpose(bv)?)?;
                    let gb = tensor::matmul(&tensor::transpose(av)?, &g)?;
                    accumulate(&mut adj, *a, ga)?;
                    accumulate(&mut adj, *b, gb)?;
                }
                Op::Binary(op, a, b) => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    let (ga, gb) = match op {
                        BinaryOp::Add => (g.clone(), g),
                        BinaryOp::Sub => (g.clone(), tensor::scale(&g, -1.0)?),
                        BinaryOp::Mul => (tensor::mul(&g, bv)?, tensor::mul(&g, av)?),
                    };
                    accumulate(&mut adj, *a, reduce_to(ga, av))?;
                    accumulate(&mut adj, *b, reduce_to(gb, bv))?;
                }
                Op::Unary(op, x) => {
                    let xv = &self.nodes[*x].value;
                    let y = &node.value;
                    let data: Vec<f64> = match *op {
                        UnaryOp::Relu => zip_map(&g, xv, |g, x| if x > 0.0 { g } else { 0.0 }),
                        UnaryOp::Exp => zip_map(&g, y, |g, y| g * y),
                        UnaryOp::Log => zip_map(&g, xv, |g, x| g / x),
                        UnaryOp::Scale(c) => g.data().iter().map(|g| g * c).collect(),
                        UnaryOp::AddScalar(_) => g.data().to_vec(),
                        UnaryOp::Pow(p) => zip_map(&g, xv, |g, x| g * p * x.powf(p - 1.0)),
                        UnaryOp::ClampMin(f) => zip_map(&g, xv, |g, x| if x > f { g } else { 0.0 }),
                    };
                    accumulate(&mut adj, *x, Tensor::new(xv.shape().to_vec(), data)?)?;
                }
                Op::AddBias(x, b) => {
                    let n = self.nodes[*b].value.len();
                    let mut gb = vec![0.0; n];
                    for row in g.data().chunks(n.max(1)) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    let gb = Tensor::new(self.nodes[*b].value.shape().to_vec(), gb)?;
                    accumulate(&mut adj, *b, gb)?;
                    accumulate(&mut adj, *x, g)?;
                }
                Op::LogSoftmaxRows(x) => {
                    // dx = g - softmax(x) * rowsum(g); softmax(x) = exp(y).
                    let y = &node.value;
                    let n = y.shape()[1];
                    let mut out = Vec::with_capacity(y.len());
                    for (grow, yrow) in g.data().chunks(n.max(1)).zip(y.data().chunks(n.max(1))) {
                        let gs: f64 = grow.iter().sum();
                        out.extend(grow.iter().zip(yrow).map(|(g, y)| g - y.exp() * gs));
                    }
                    accumulate(&mut adj, *x, Tensor::new(y.shape().to_vec(), out)?)?;
                }
                Op::GatherRows(x, idx) => {
                    let shape = self.nodes[*x].value.shape();
                    let n = shape[1];
                    let mut gx = Tensor::zeros(shape);
                    for (b, &k) in idx.iter().enumerate() {
                        gx.data_mut()[b * n + k] += g.data()[b];
                    }
                    accumulate(&mut adj, *x, gx)?;
                }
                Op::RowSum(x) => {
                    let shape = self.nodes[*x].value.shape();
                    let n = shape[1];
                    let data = g.data().iter().flat_map(|&v| std::iter::repeat_n(v, n)).collect();
                    accumulate(&mut adj, *x, Tensor::new(shape.to_vec(), data)?)?;
                }
                Op::Sum(x) => {
                    let shape = self.nodes[*x].value.shape();
                    accumulate(&mut adj, *x, Tensor::full(shape, g.data()[0]))?;
                }
                Op::Reshape(x) => {
                    let shape = self.nodes[*x].value.shape().to_vec();
                    accumulate(&mut adj, *x, g.reshape(&shape)?)?;
                }
                Op::Im2Col(x, k) => {
                    let shape = self.nodes[*x].value.shape().to_vec();
                    accumulate(&mut adj, *x, tensor::col2im(&g, &shape, *k))?;
                }
            }
        }

        let grads = self
            .params
            .iter()
            .map(|&p| match adj.get_mut(p).and_then(Option::take) {
                Some(g) => g,
                None => Tensor::zeros(self.nodes[p].value.shape()),
            })
            .collect();
        Ok(Gradients { grads })
    }
}

fn zip_map(g: &Tensor, x: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    g.data().iter().zip(x.data()).map(|(&g, &x)| f(g, x)).collect()
}

/// Sums a broadcast gradient back down to a scalar operand's shape.
fn reduce_to(g: Tensor, operand: &Tensor) -> Tensor {
    if g.shape() == operand.shape() {
        g
    } else {
        let s: f64 = g.data().iter().sum();
        Tensor::full(operand.shape(), s)
    }
}

fn accumulate(adj: &mut [Option<Tensor>], i: usize, g: Tensor) -> Result<()> {
    adj[i] = Some(match adj[i].take() {
        Some(prev) => tensor::add(&prev, &g)?,
        None => g,
    });
    Ok(())
}

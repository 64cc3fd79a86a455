//! Dense row-major `f64` tensors and the untaped kernels shared by training
//! and detached inference.
//!
//! Every public kernel checks its result for NaN/Inf and reports
//! [`Error::NonFinite`] instead of returning a poisoned tensor. The taped
//! versions in [`crate::tape`] call these same kernels, so a taped and an
//! untaped forward pass produce bitwise-identical values.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {shape:?} holds {n} elements, data has {}", data.len()),
            ));
        }
        let t = Tensor { shape, data };
        t.check_finite("Tensor::new")?;
        Ok(t)
    }

    /// 1-D tensor.
    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    /// Rank-0 tensor holding one value.
    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty() || (self.data.len() == 1 && self.shape.iter().all(|&d| d == 1))
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::shape(
                "item",
                format!("expected one element, shape {:?}", self.shape),
            ));
        }
        Ok(self.data[0])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn get(&self, index: &[usize]) -> Option<f64> {
        if index.len() != self.shape.len() {
            return None;
        }
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            if i >= d {
                return None;
            }
            flat = flat * d + i;
        }
        Some(self.data[flat])
    }

    pub(crate) fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { op })
        }
    }

    fn rows_cols(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::shape(op, format!("expected a matrix, got {s:?}"))),
        }
    }
}

fn finish(shape: Vec<usize>, data: Vec<f64>, op: &'static str) -> Result<Tensor> {
    let t = Tensor { shape, data };
    t.check_finite(op)?;
    Ok(t)
}

/// Single-operand elementwise operations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryOp {
    Relu,
    Exp,
    Log,
    Scale(f64),
    AddScalar(f64),
    /// `x^p`; the base must be positive unless `p` is a non-negative integer.
    Pow(f64),
    /// `max(x, floor)`.
    ClampMin(f64),
}

/// Two-operand elementwise operations. A rank-0 or single-element operand
/// broadcasts against the other; no other broadcasting is supported.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

pub fn unary(op: UnaryOp, x: &Tensor) -> Result<Tensor> {
    let data: Vec<f64> = match op {
        UnaryOp::Relu => x.data.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
        UnaryOp::Exp => x.data.iter().map(|v| v.exp()).collect(),
        UnaryOp::Log => {
            if let Some(&bad) = x.data.iter().find(|&&v| v <= 0.0) {
                return Err(Error::LogDomain { value: bad });
            }
            x.data.iter().map(|v| v.ln()).collect()
        }
        UnaryOp::Scale(c) => x.data.iter().map(|v| v * c).collect(),
        UnaryOp::AddScalar(c) => x.data.iter().map(|v| v + c).collect(),
        UnaryOp::Pow(p) => x.data.iter().map(|v| v.powf(p)).collect(),
        UnaryOp::ClampMin(f) => x.data.iter().map(|&v| if v > f { v } else { f }).collect(),
    };
    finish(x.shape.clone(), data, "unary")
}

pub(crate) fn broadcast_shape(a: &Tensor, b: &Tensor, op: &'static str) -> Result<Vec<usize>> {
    if a.shape == b.shape {
        Ok(a.shape.clone())
    } else if b.is_scalar() {
        Ok(a.shape.clone())
    } else if a.is_scalar() {
        Ok(b.shape.clone())
    } else {
        Err(Error::shape(op, format!("{:?} vs {:?}", a.shape, b.shape)))
    }
}

pub fn binary(op: BinaryOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let shape = broadcast_shape(a, b, "binary")?;
    let n: usize = shape.iter().product();
    let ai = |i: usize| if a.data.len() == 1 { a.data[0] } else { a.data[i] };
    let bi = |i: usize| if b.data.len() == 1 { b.data[0] } else { b.data[i] };
    let f: fn(f64, f64) -> f64 = match op {
        BinaryOp::Add => |x, y| x + y,
        BinaryOp::Sub => |x, y| x - y,
        BinaryOp::Mul => |x, y| x * y,
    };
    let data = (0..n).map(|i| f(ai(i), bi(i))).collect();
    finish(shape, data, "binary")
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary(BinaryOp::Add, a, b)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary(BinaryOp::Sub, a, b)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary(BinaryOp::Mul, a, b)
}

pub fn relu(x: &Tensor) -> Result<Tensor> {
    unary(UnaryOp::Relu, x)
}

pub fn exp(x: &Tensor) -> Result<Tensor> {
    unary(UnaryOp::Exp, x)
}

pub fn log(x: &Tensor) -> Result<Tensor> {
    unary(UnaryOp::Log, x)
}

pub fn scale(x: &Tensor, c: f64) -> Result<Tensor> {
    unary(UnaryOp::Scale(c), x)
}

/// `[M×K] × [K×N] -> [M×N]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.rows_cols("matmul")?;
    let (k2, n) = b.rows_cols("matmul")?;
    if k != k2 {
        return Err(Error::shape(
            "matmul",
            format!("inner dimensions {k} and {k2} differ"),
        ));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    finish(vec![m, n], out, "matmul")
}

pub(crate) fn transpose(a: &Tensor) -> Result<Tensor> {
    let (m, n) = a.rows_cols("transpose")?;
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data[i * n + j];
        }
    }
    Ok(Tensor {
        shape: vec![n, m],
        data: out,
    })
}

/// Adds a length-`N` bias to every row of an `[M×N]` matrix.
pub fn add_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (m, n) = x.rows_cols("add_bias")?;
    if bias.len() != n {
        return Err(Error::shape(
            "add_bias",
            format!("bias of {} for {n} columns", bias.len()),
        ));
    }
    let mut out = x.data.clone();
    for i in 0..m {
        for (o, b) in out[i * n..(i + 1) * n].iter_mut().zip(&bias.data) {
            *o += b;
        }
    }
    finish(vec![m, n], out, "add_bias")
}

/// Row-wise log-softmax with max subtraction.
pub fn log_softmax_rows(x: &Tensor) -> Result<Tensor> {
    let (m, n) = x.rows_cols("log_softmax_rows")?;
    let mut out = Vec::with_capacity(m * n);
    for row in x.data.chunks(n.max(1)).take(m) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|v| v - lse));
    }
    finish(vec![m, n], out, "log_softmax_rows")
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let (m, n) = x.rows_cols("softmax_rows")?;
    let mut out = Vec::with_capacity(m * n);
    for row in x.data.chunks(n.max(1)).take(m) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / z));
    }
    finish(vec![m, n], out, "softmax_rows")
}

/// Picks `x[b, idx[b]]` from an `[B×K]` matrix.
pub fn gather_rows(x: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let (m, n) = x.rows_cols("gather_rows")?;
    if idx.len() != m {
        return Err(Error::shape(
            "gather_rows",
            format!("{} indices for {m} rows", idx.len()),
        ));
    }
    let mut out = Vec::with_capacity(m);
    for (b, &k) in idx.iter().enumerate() {
        if k >= n {
            return Err(Error::LabelOutOfRange {
                label: k,
                classes: n,
            });
        }
        out.push(x.data[b * n + k]);
    }
    Ok(Tensor {
        shape: vec![m],
        data: out,
    })
}

pub fn row_sum(x: &Tensor) -> Result<Tensor> {
    let (m, n) = x.rows_cols("row_sum")?;
    let data = (0..m)
        .map(|i| x.data[i * n..(i + 1) * n].iter().sum())
        .collect();
    finish(vec![m], data, "row_sum")
}

pub fn sum(x: &Tensor) -> Result<Tensor> {
    let s: f64 = x.data.iter().sum();
    finish(Vec::new(), vec![s], "sum")
}

/// Extracts `k×k` patches from `[B, H, W, C]` input into a
/// `[B·(H-k+1)·(W-k+1), k·k·C]` matrix (valid padding, stride 1). Patch
/// columns are ordered `(di, dj, c)`.
pub fn im2col(x: &Tensor, k: usize) -> Result<Tensor> {
    let (b, h, w, c) = dims4(x, "im2col")?;
    if k == 0 || k > h || k > w {
        return Err(Error::shape("im2col", format!("kernel {k} for {h}x{w}")));
    }
    let (oh, ow) = (h - k + 1, w - k + 1);
    let cols = k * k * c;
    let mut out = Vec::with_capacity(b * oh * ow * cols);
    for n in 0..b {
        for i in 0..oh {
            for j in 0..ow {
                for di in 0..k {
                    let start = ((n * h + i + di) * w + j) * c;
                    out.extend_from_slice(&x.data[start..start + k * c]);
                }
            }
        }
    }
    Ok(Tensor {
        shape: vec![b * oh * ow, cols],
        data: out,
    })
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
pub(crate) fn col2im(cols: &Tensor, input_shape: &[usize], k: usize) -> Tensor {
    let (b, h, w, c) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut out = vec![0.0; b * h * w * c];
    let mut src = cols.data.iter();
    for n in 0..b {
        for i in 0..oh {
            for j in 0..ow {
                for di in 0..k {
                    let start = ((n * h + i + di) * w + j) * c;
                    for o in &mut out[start..start + k * c] {
                        *o += src.next().copied().unwrap_or(0.0);
                    }
                }
            }
        }
    }
    Tensor {
        shape: input_shape.to_vec(),
        data: out,
    }
}

fn dims4(x: &Tensor, op: &'static str) -> Result<(usize, usize, usize, usize)> {
    match x.shape.as_slice() {
        [b, h, w, c] => Ok((*b, *h, *w, *c)),
        s => Err(Error::shape(op, format!("expected [B,H,W,C], got {s:?}"))),
    }
}

/// Index of the largest value; ties resolve to the smallest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

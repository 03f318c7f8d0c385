//! Binary elementwise arithmetic with trailing-dimension broadcasting, and
//! the unary maps (activations, exp, abs, scalar affine).
//!
//! Broadcast rule: shapes are aligned at their trailing dimensions; the
//! shorter shape is padded with leading 1s, and every aligned pair must be
//! equal or contain a 1. The result takes the larger size per dimension.

use crate::error::{Result, TensorError};
use crate::tensor::{numel_of, Backward, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryKind {
    fn name(self) -> &'static str {
        match self {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        }
    }
}

pub fn broadcast_shape(lhs: &[usize], rhs: &[usize]) -> Option<Vec<usize>> {
    let n = lhs.len().max(rhs.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let a = if i + lhs.len() >= n { lhs[i + lhs.len() - n] } else { 1 };
        let b = if i + rhs.len() >= n { rhs[i + rhs.len() - n] } else { 1 };
        out[i] = match (a, b) {
            _ if a == b => a,
            (1, _) => b,
            (_, 1) => a,
            _ => return None,
        };
    }
    Some(out)
}

/// Flat source index into a tensor of `shape` for every element of `out`.
fn broadcast_index(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let n = out.len();
    let pad = n - shape.len();
    let mut strides = vec![0usize; n];
    let mut s = 1;
    for i in (0..shape.len()).rev() {
        strides[pad + i] = if shape[i] == 1 { 0 } else { s };
        s *= shape[i];
    }
    let total = numel_of(out);
    let mut idx = Vec::with_capacity(total);
    let mut counter = vec![0usize; n];
    let mut flat = 0usize;
    for _ in 0..total {
        idx.push(flat);
        for d in (0..n).rev() {
            counter[d] += 1;
            flat += strides[d];
            if counter[d] < out[d] {
                break;
            }
            flat -= strides[d] * counter[d];
            counter[d] = 0;
        }
    }
    idx
}

struct BinaryOp {
    kind: BinaryKind,
    lhs: Tensor,
    rhs: Tensor,
    // None when the operand already has the output shape
    lhs_idx: Option<Vec<usize>>,
    rhs_idx: Option<Vec<usize>>,
}

fn at(idx: &Option<Vec<usize>>, i: usize) -> usize {
    idx.as_ref().map_or(i, |v| v[i])
}

impl Backward for BinaryOp {
    fn name(&self) -> &'static str {
        self.kind.name()
    }

    fn inputs(&self) -> Vec<Tensor> {
        vec![self.lhs.clone(), self.rhs.clone()]
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let a = self.lhs.data();
        let b = self.rhs.data();
        let mut ga = self.lhs.requires_grad().then(|| vec![0.0; a.len()]);
        let mut gb = self.rhs.requires_grad().then(|| vec![0.0; b.len()]);
        for (i, &gi) in g.iter().enumerate() {
            let ia = at(&self.lhs_idx, i);
            let ib = at(&self.rhs_idx, i);
            let (da, db) = match self.kind {
                BinaryKind::Add => (gi, gi),
                BinaryKind::Sub => (gi, -gi),
                BinaryKind::Mul => (gi * b[ib], gi * a[ia]),
                BinaryKind::Div => (gi / b[ib], -gi * a[ia] / (b[ib] * b[ib])),
            };
            if let Some(ga) = ga.as_mut() {
                ga[ia] += da;
            }
            if let Some(gb) = gb.as_mut() {
                gb[ib] += db;
            }
        }
        vec![ga, gb]
    }
}

pub fn binary(lhs: &Tensor, rhs: &Tensor, kind: BinaryKind) -> Result<Tensor> {
    let out_shape = broadcast_shape(lhs.shape(), rhs.shape()).ok_or_else(|| {
        TensorError::ShapeMismatch {
            op: kind.name(),
            lhs: lhs.shape().to_vec(),
            rhs: rhs.shape().to_vec(),
        }
    })?;
    let lhs_idx = (lhs.shape() != out_shape.as_slice()).then(|| broadcast_index(lhs.shape(), &out_shape));
    let rhs_idx = (rhs.shape() != out_shape.as_slice()).then(|| broadcast_index(rhs.shape(), &out_shape));
    let data = {
        let a = lhs.data();
        let b = rhs.data();
        let f: fn(f64, f64) -> f64 = match kind {
            BinaryKind::Add => |x, y| x + y,
            BinaryKind::Sub => |x, y| x - y,
            BinaryKind::Mul => |x, y| x * y,
            BinaryKind::Div => |x, y| x / y,
        };
        (0..numel_of(&out_shape))
            .map(|i| f(a[at(&lhs_idx, i)], b[at(&rhs_idx, i)]))
            .collect()
    };
    Tensor::from_op(
        data,
        &out_shape,
        Box::new(BinaryOp {
            kind,
            lhs: lhs.clone(),
            rhs: rhs.clone(),
            lhs_idx,
            rhs_idx,
        }),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    Silu,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum UnaryKind {
    Neg,
    Exp,
    Ln,
    Abs,
    Softplus,
    Scale(f64),
    Shift(f64),
    Act(Activation),
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    // log(1 + e^x) without overflow
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl UnaryKind {
    fn name(self) -> &'static str {
        match self {
            UnaryKind::Neg => "neg",
            UnaryKind::Exp => "exp",
            UnaryKind::Ln => "ln",
            UnaryKind::Abs => "abs",
            UnaryKind::Softplus => "softplus",
            UnaryKind::Scale(_) => "scale",
            UnaryKind::Shift(_) => "shift",
            UnaryKind::Act(Activation::Relu) => "relu",
            UnaryKind::Act(Activation::Silu) => "silu",
            UnaryKind::Act(Activation::Sigmoid) => "sigmoid",
        }
    }

    fn forward(self, x: f64) -> f64 {
        match self {
            UnaryKind::Neg => -x,
            UnaryKind::Exp => x.exp(),
            UnaryKind::Ln => x.ln(),
            UnaryKind::Abs => x.abs(),
            UnaryKind::Softplus => softplus(x),
            UnaryKind::Scale(s) => x * s,
            UnaryKind::Shift(s) => x + s,
            UnaryKind::Act(Activation::Relu) => x.max(0.0),
            UnaryKind::Act(Activation::Silu) => x * sigmoid(x),
            UnaryKind::Act(Activation::Sigmoid) => sigmoid(x),
        }
    }

    /// d forward / dx, given input x and output y.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            UnaryKind::Neg => -1.0,
            UnaryKind::Exp => y,
            UnaryKind::Ln => 1.0 / x,
            UnaryKind::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            UnaryKind::Softplus => sigmoid(x),
            UnaryKind::Scale(s) => s,
            UnaryKind::Shift(_) => 1.0,
            UnaryKind::Act(Activation::Relu) => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            UnaryKind::Act(Activation::Silu) => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            UnaryKind::Act(Activation::Sigmoid) => y * (1.0 - y),
        }
    }
}

struct UnaryOp {
    kind: UnaryKind,
    input: Tensor,
    output: Vec<f64>,
}

impl Backward for UnaryOp {
    fn name(&self) -> &'static str {
        self.kind.name()
    }

    fn inputs(&self) -> Vec<Tensor> {
        vec![self.input.clone()]
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let x = self.input.data();
        let gx = g
            .iter()
            .zip(x.iter().zip(&self.output))
            .map(|(gi, (&xi, &yi))| gi * self.kind.derivative(xi, yi))
            .collect();
        vec![Some(gx)]
    }
}

fn unary(x: &Tensor, kind: UnaryKind) -> Result<Tensor> {
    let out: Vec<f64> = x.data().iter().map(|&v| kind.forward(v)).collect();
    Tensor::from_op(
        out.clone(),
        x.shape(),
        Box::new(UnaryOp {
            kind,
            input: x.clone(),
            output: out,
        }),
    )
}

pub fn activation(x: &Tensor, kind: Activation) -> Result<Tensor> {
    unary(x, UnaryKind::Act(kind))
}

impl Tensor {
    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        binary(self, rhs, BinaryKind::Add)
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        binary(self, rhs, BinaryKind::Sub)
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        binary(self, rhs, BinaryKind::Mul)
    }

    pub fn div(&self, rhs: &Tensor) -> Result<Tensor> {
        binary(self, rhs, BinaryKind::Div)
    }

    pub fn neg(&self) -> Result<Tensor> {
        unary(self, UnaryKind::Neg)
    }

    pub fn exp(&self) -> Result<Tensor> {
        unary(self, UnaryKind::Exp)
    }

    /// Natural log; non-positive inputs yield a non-finite error.
    pub fn ln(&self) -> Result<Tensor> {
        unary(self, UnaryKind::Ln)
    }

    pub fn abs(&self) -> Result<Tensor> {
        unary(self, UnaryKind::Abs)
    }

    pub fn softplus(&self) -> Result<Tensor> {
        unary(self, UnaryKind::Softplus)
    }

    pub fn scale(&self, s: f64) -> Result<Tensor> {
        unary(self, UnaryKind::Scale(s))
    }

    pub fn shift(&self, s: f64) -> Result<Tensor> {
        unary(self, UnaryKind::Shift(s))
    }

    pub fn relu(&self) -> Result<Tensor> {
        activation(self, Activation::Relu)
    }

    pub fn silu(&self) -> Result<Tensor> {
        activation(self, Activation::Silu)
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        activation(self, Activation::Sigmoid)
    }
}

//! Primitive kernels: forward evaluation and local gradient rules.
//!
//! The tape and the tape-free inference path both call [`forward`], so a
//! network evaluated either way produces bit-identical outputs.

use super::tensor::{argmax, Tensor};
use crate::error::{Error, Result};

/// Lower clamp applied to the argument of `Log`.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Primitive {
    /// `[m,k] x [k,n] -> [m,n]`
    MatMul,
    Add,
    Sub,
    Mul,
    /// `[m,n] + [n]`, the row vector broadcast over every row.
    AddRow,
    Relu,
    Tanh,
    Exp,
    /// Natural log of `max(x, LOG_FLOOR)`.
    Log,
    Abs,
    /// Sum over one axis of a rank-1 or rank-2 tensor; the axis is removed.
    SumAxis(usize),
    /// Max over one axis, gradient routed to the smallest maximising index.
    MaxAxis(usize),
    /// Softmax over the last axis.
    Softmax,
    /// `scale * x + shift`
    Affine {
        scale: f64,
        shift: f64,
    },
    SumAll,
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::AddRow => "add_row",
            Primitive::Relu => "relu",
            Primitive::Tanh => "tanh",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::Abs => "abs",
            Primitive::SumAxis(_) => "sum_axis",
            Primitive::MaxAxis(_) => "max_axis",
            Primitive::Softmax => "softmax",
            Primitive::Affine { .. } => "affine",
            Primitive::SumAll => "sum_all",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            Primitive::MatMul | Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::AddRow => 2,
            _ => 1,
        }
    }
}

/// Auxiliary forward state needed by the backward rule.
#[derive(Clone, Debug, Default)]
pub(crate) enum Aux {
    #[default]
    None,
    Indices(Vec<usize>),
}

fn mismatch(op: Primitive, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op: op.name(),
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn unary_shape_error(op: Primitive, a: &Tensor) -> Error {
    Error::Shape {
        op: op.name(),
        lhs: a.shape().to_vec(),
        rhs: vec![],
    }
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect())
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

/// `out[m,n] = a[m,k] * b[k,n]`, all row-major.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

fn axis_dims(op: Primitive, a: &Tensor, axis: usize) -> Result<(usize, usize, Vec<usize>)> {
    // Returns (outer, inner) loop sizes and the reduced shape.
    match (a.rank(), axis) {
        (1, 0) => Ok((1, a.shape()[0], vec![])),
        (2, 0) => Ok((a.shape()[1], a.shape()[0], vec![a.shape()[1]])),
        (2, 1) => Ok((a.shape()[0], a.shape()[1], vec![a.shape()[0]])),
        _ => Err(unary_shape_error(op, a)),
    }
}

/// Index of element `j` of reduction group `g` for an axis reduction.
fn axis_index(a: &Tensor, axis: usize, g: usize, j: usize) -> usize {
    if a.rank() == 2 && axis == 0 {
        j * a.shape()[1] + g
    } else {
        g * a.cols() + j
    }
}

pub(crate) fn forward(op: Primitive, xs: &[&Tensor]) -> Result<(Tensor, Aux)> {
    if xs.len() != op.arity() {
        return Err(Error::InvalidTensor(format!(
            "{} expects {} operands, got {}",
            op.name(),
            op.arity(),
            xs.len()
        )));
    }
    let a = xs[0];
    let out = match op {
        Primitive::MatMul => {
            let b = xs[1];
            if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(mismatch(op, a, b));
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            Tensor::from_parts(vec![m, n], matmul_raw(a.data(), b.data(), m, k, n))
        }
        Primitive::Add | Primitive::Sub | Primitive::Mul => {
            let b = xs[1];
            if a.shape() != b.shape() {
                return Err(mismatch(op, a, b));
            }
            match op {
                Primitive::Add => zip(a, b, |x, y| x + y),
                Primitive::Sub => zip(a, b, |x, y| x - y),
                _ => zip(a, b, |x, y| x * y),
            }
        }
        Primitive::AddRow => {
            let b = xs[1];
            let n = a.cols();
            let row_ok =
                a.rank() == 2 && ((b.rank() == 1 && b.shape()[0] == n) || (b.rank() == 2 && b.shape() == [1, n]));
            if !row_ok {
                return Err(mismatch(op, a, b));
            }
            let mut data = a.data().to_vec();
            for row in data.chunks_mut(n) {
                for (x, &bv) in row.iter_mut().zip(b.data()) {
                    *x += bv;
                }
            }
            Tensor::from_parts(a.shape().to_vec(), data)
        }
        Primitive::Relu => map(a, |x| if x > 0.0 { x } else { 0.0 }),
        Primitive::Tanh => map(a, f64::tanh),
        Primitive::Exp => map(a, f64::exp),
        Primitive::Log => map(a, |x| x.max(LOG_FLOOR).ln()),
        Primitive::Abs => map(a, f64::abs),
        Primitive::Affine { scale, shift } => map(a, |x| scale * x + shift),
        Primitive::SumAll => Tensor::scalar(a.data().iter().sum()),
        Primitive::SumAxis(axis) => {
            let (groups, len, shape) = axis_dims(op, a, axis)?;
            let data = (0..groups)
                .map(|g| (0..len).map(|j| a.data()[axis_index(a, axis, g, j)]).sum())
                .collect();
            Tensor::from_parts(shape, data)
        }
        Primitive::MaxAxis(axis) => {
            let (groups, len, shape) = axis_dims(op, a, axis)?;
            let mut idx = Vec::with_capacity(groups);
            let mut data = Vec::with_capacity(groups);
            for g in 0..groups {
                let vals: Vec<f64> = (0..len).map(|j| a.data()[axis_index(a, axis, g, j)]).collect();
                let k = argmax(&vals);
                idx.push(k);
                data.push(vals[k]);
            }
            return finish(op, Tensor::from_parts(shape, data), Aux::Indices(idx));
        }
        Primitive::Softmax => {
            if a.rank() == 0 {
                return Err(unary_shape_error(op, a));
            }
            let n = a.cols();
            let mut data = Vec::with_capacity(a.numel());
            for row in a.data().chunks(n) {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                data.extend(exps.iter().map(|e| e / sum));
            }
            Tensor::from_parts(a.shape().to_vec(), data)
        }
    };
    finish(op, out, Aux::None)
}

fn finish(op: Primitive, out: Tensor, aux: Aux) -> Result<(Tensor, Aux)> {
    if out.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            op: op.name().to_string(),
        });
    }
    Ok((out, aux))
}

/// Vector-Jacobian products for each operand. `want[i]` says whether the
/// gradient of operand `i` is needed.
pub(crate) fn backward(
    op: Primitive,
    xs: &[&Tensor],
    out: &Tensor,
    aux: &Aux,
    up: &[f64],
    want: &[bool],
) -> Vec<Option<Vec<f64>>> {
    let a = xs[0];
    let mut grads: Vec<Option<Vec<f64>>> = vec![None; xs.len()];
    let elementwise = |f: &dyn Fn(usize) -> f64| -> Vec<f64> { (0..up.len()).map(f).collect() };
    match op {
        Primitive::MatMul => {
            let b = xs[1];
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            if want[0] {
                let bt = transpose(b.data(), k, n);
                grads[0] = Some(matmul_raw(up, &bt, m, n, k));
            }
            if want[1] {
                let at = transpose(a.data(), m, k);
                grads[1] = Some(matmul_raw(&at, up, k, m, n));
            }
        }
        Primitive::Add => {
            grads[0] = want[0].then(|| up.to_vec());
            grads[1] = want[1].then(|| up.to_vec());
        }
        Primitive::Sub => {
            grads[0] = want[0].then(|| up.to_vec());
            grads[1] = want[1].then(|| up.iter().map(|g| -g).collect());
        }
        Primitive::Mul => {
            let b = xs[1];
            grads[0] = want[0].then(|| elementwise(&|i| up[i] * b.data()[i]));
            grads[1] = want[1].then(|| elementwise(&|i| up[i] * a.data()[i]));
        }
        Primitive::AddRow => {
            grads[0] = want[0].then(|| up.to_vec());
            if want[1] {
                let n = a.cols();
                let mut g = vec![0.0; n];
                for row in up.chunks(n) {
                    for (acc, &v) in g.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                grads[1] = Some(g);
            }
        }
        Primitive::Relu => {
            grads[0] = Some(elementwise(&|i| if a.data()[i] > 0.0 { up[i] } else { 0.0 }));
        }
        Primitive::Tanh => {
            grads[0] = Some(elementwise(&|i| {
                let y = out.data()[i];
                up[i] * (1.0 - y * y)
            }));
        }
        Primitive::Exp => {
            grads[0] = Some(elementwise(&|i| up[i] * out.data()[i]));
        }
        Primitive::Log => {
            grads[0] = Some(elementwise(&|i| {
                let x = a.data()[i];
                if x < LOG_FLOOR {
                    0.0
                } else {
                    up[i] / x
                }
            }));
        }
        Primitive::Abs => {
            grads[0] = Some(elementwise(&|i| {
                let x = a.data()[i];
                if x > 0.0 {
                    up[i]
                } else if x < 0.0 {
                    -up[i]
                } else {
                    0.0
                }
            }));
        }
        Primitive::Affine { scale, .. } => {
            grads[0] = Some(up.iter().map(|g| g * scale).collect());
        }
        Primitive::SumAll => {
            grads[0] = Some(vec![up[0]; a.numel()]);
        }
        Primitive::SumAxis(axis) => {
            let mut g = vec![0.0; a.numel()];
            let (groups, len) = reduce_sizes(a, axis);
            for gi in 0..groups {
                for j in 0..len {
                    g[axis_index(a, axis, gi, j)] = up[gi];
                }
            }
            grads[0] = Some(g);
        }
        Primitive::MaxAxis(axis) => {
            let mut g = vec![0.0; a.numel()];
            if let Aux::Indices(idx) = aux {
                for (gi, &k) in idx.iter().enumerate() {
                    g[axis_index(a, axis, gi, k)] = up[gi];
                }
            }
            grads[0] = Some(g);
        }
        Primitive::Softmax => {
            let n = a.cols();
            let mut g = Vec::with_capacity(a.numel());
            for (y, dy) in out.data().chunks(n).zip(up.chunks(n)) {
                let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
                g.extend(y.iter().zip(dy).map(|(yi, di)| yi * (di - dot)));
            }
            grads[0] = Some(g);
        }
    }
    grads
}

fn reduce_sizes(a: &Tensor, axis: usize) -> (usize, usize) {
    match (a.rank(), axis) {
        (2, 0) => (a.shape()[1], a.shape()[0]),
        (2, _) => (a.shape()[0], a.shape()[1]),
        _ => (1, a.numel()),
    }
}

/// Discrete "branch" taken by a piecewise primitive, used by gradcheck to
/// detect probes that straddle a kink.
pub(crate) fn branch_signature(op: Primitive, xs: &[&Tensor], aux: &Aux) -> Option<Vec<i64>> {
    let a = xs[0];
    match op {
        Primitive::Relu | Primitive::Abs => {
            Some(a.data().iter().map(|&x| (x > 0.0) as i64 - (x < 0.0) as i64).collect())
        }
        Primitive::Log => Some(a.data().iter().map(|&x| (x < LOG_FLOOR) as i64).collect()),
        Primitive::MaxAxis(_) => match aux {
            Aux::Indices(idx) => Some(idx.iter().map(|&i| i as i64).collect()),
            Aux::None => None,
        },
        _ => None,
    }
}

use super::ops::{self, Aux, Primitive};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Option<Primitive>,
    operands: Vec<Var>,
    requires_grad: bool,
    aux: Aux,
}

/// Wengert list for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so operands always precede the
/// node that consumes them. A tape supports a single backward pass until
/// [`Tape::reset_grads`] is called.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
    branches: Vec<i64>,
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

    /// Records a leaf. Its `requires_grad` flag decides whether it receives
    /// a gradient.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let requires_grad = tensor.requires_grad();
        let mut value = tensor;
        value.clear_grad();
        self.push(Node {
            value,
            op: None,
            operands: vec![],
            requires_grad,
            aux: Aux::None,
        })
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        let mut t = tensor;
        t.set_requires_grad(false);
        self.leaf(t)
    }

    /// Records a leaf that receives a gradient.
    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad())
    }

    fn push(&mut self, node: Node) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Applies a primitive to recorded operands.
    pub fn apply(&mut self, op: Primitive, operands: &[Var]) -> Result<Var> {
        if let Some(bad) = operands.iter().find(|v| v.0 >= self.nodes.len()) {
            return Err(Error::InvalidTensor(format!(
                "{}: operand {} is not on this tape",
                op.name(),
                bad.0
            )));
        }
        let xs: Vec<&Tensor> = operands.iter().map(|v| &self.nodes[v.0].value).collect();
        let (value, aux) = ops::forward(op, &xs)?;
        if let Some(sig) = ops::branch_signature(op, &xs, &aux) {
            self.branches.extend(sig);
        }
        let requires_grad = operands.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(Node {
            value,
            op: Some(op),
            operands: operands.to_vec(),
            requires_grad,
            aux,
        }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::MatMul, &[a, b])
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.apply(Primitive::AddRow, &[a, row])
    }
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Relu, &[a])
    }
    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Tanh, &[a])
    }
    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Exp, &[a])
    }
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Log, &[a])
    }
    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Abs, &[a])
    }
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.apply(Primitive::SumAxis(axis), &[a])
    }
    pub fn max_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.apply(Primitive::MaxAxis(axis), &[a])
    }
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Softmax, &[a])
    }
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        self.apply(Primitive::Affine { scale, shift }, &[a])
    }
    pub fn scale(&mut self, a: Var, scale: f64) -> Result<Var> {
        self.affine(a, scale, 0.0)
    }
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::SumAll, &[a])
    }
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Reverse sweep from a scalar loss. Populates gradients of every node
    /// that requires one; nodes off the loss path get zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(Error::NotScalar(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(op) = node.op else { continue };
            if !node.requires_grad {
                continue;
            }
            let Some(up) = grads[i].take() else { continue };
            let xs: Vec<&Tensor> = node.operands.iter().map(|v| &self.nodes[v.0].value).collect();
            let want: Vec<bool> = node.operands.iter().map(|v| self.nodes[v.0].requires_grad).collect();
            let local = ops::backward(op, &xs, &node.value, &node.aux, &up, &want);
            for (operand, g) in node.operands.iter().zip(local) {
                let (Some(g), true) = (g, self.nodes[operand.0].requires_grad) else {
                    continue;
                };
                match &mut grads[operand.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
            // Keep the upstream gradient for inspection of interior nodes.
            grads[i] = Some(up);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && grads[i].is_none() {
                grads[i] = Some(vec![0.0; node.value.numel()]);
            }
        }
        self.grads = grads;
        self.backward_done = true;
        Ok(())
    }

    /// Gradient of the last backward pass with respect to `v`, or `None` if
    /// `v` does not require a gradient or no backward pass has run.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Clears gradients so that another backward pass may run.
    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    /// Concatenated branch choices of every piecewise primitive evaluated so
    /// far (relu/abs signs, log clamps, max indices).
    pub fn branch_signature(&self) -> &[i64] {
        &self.branches
    }
}

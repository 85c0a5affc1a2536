//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every backward rule is written in terms of other `Var` operations, so a
//! backward pass run with `create_graph = true` yields gradients that are
//! themselves differentiable. The Wasserstein gradient penalty relies on
//! this: it differentiates a norm of an input gradient with respect to the
//! critic parameters.
//!
//! Node ids grow monotonically with creation, and a node is always created
//! after its inputs, so sorting by descending id is a valid reverse
//! topological order.

pub mod conv;

use std::cell::Cell;
use std::collections::HashMap;
use std::rc::Rc;

pub use conv::ConvGeom;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

#[derive(Clone)]
pub struct Var(Rc<Node>);

struct Node {
    id: u64,
    value: Rc<Tensor>,
    requires_grad: bool,
    op: Option<Op>,
}

enum Op {
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    RecipNonzero(Var),
    Tanh(Var),
    Sigmoid(Var),
    MulConst(Var, Rc<Tensor>),
    Sum(Var),
    BroadcastTo(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    MatMul(Var, Var),
    Conv2d(Var, Var, ConvGeom),
    ConvInputGrad(Var, Var, ConvGeom),
    ConvWeightGrad(Var, Var, ConvGeom),
    Concat(Vec<Var>, usize),
    Narrow(Var, usize, usize),
    Pad(Var, usize, usize),
}

impl Op {
    fn parents(&self) -> Vec<&Var> {
        use Op::*;
        match self {
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MatMul(a, b) => vec![a, b],
            Conv2d(a, b, _) | ConvInputGrad(a, b, _) | ConvWeightGrad(a, b, _) => vec![a, b],
            Neg(a) | Scale(a, _) | AddScalar(a) | Exp(a) | Log(a) | Sqrt(a) | RecipNonzero(a)
            | Tanh(a) | Sigmoid(a) | MulConst(a, _) | Sum(a) | BroadcastTo(a) | Reshape(a)
            | Permute(a, _) | Narrow(a, _, _) | Pad(a, _, _) => vec![a],
            Concat(parts, _) => parts.iter().collect(),
        }
    }
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Var#{}({:?}, grad={})",
            self.0.id, self.0.value, self.0.requires_grad
        )
    }
}

impl Var {
    fn from_op(value: Tensor, op: Op) -> Var {
        let requires_grad = op.parents().iter().any(|p| p.requires_grad());
        Var(Rc::new(Node {
            id: next_id(),
            value: Rc::new(value),
            requires_grad,
            op: if requires_grad { Some(op) } else { None },
        }))
    }

    /// A value that never receives gradients.
    pub fn constant(value: Tensor) -> Var {
        Var(Rc::new(Node {
            id: next_id(),
            value: Rc::new(value),
            requires_grad: false,
            op: None,
        }))
    }

    /// A leaf that gradients can be taken with respect to.
    pub fn leaf(value: Tensor) -> Var {
        Var(Rc::new(Node {
            id: next_id(),
            value: Rc::new(value),
            requires_grad: true,
            op: None,
        }))
    }

    pub fn scalar(v: f64) -> Var {
        Var::constant(Tensor::scalar(v))
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var {
        Var(Rc::new(Node {
            id: next_id(),
            value: Rc::clone(&self.0.value),
            requires_grad: false,
            op: None,
        }))
    }

    pub fn add(&self, o: &Var) -> Result<Var> {
        let v = self.value().add(o.value())?;
        Ok(Var::from_op(v, Op::Add(self.clone(), o.clone())))
    }

    pub fn sub(&self, o: &Var) -> Result<Var> {
        let v = self.value().sub(o.value())?;
        Ok(Var::from_op(v, Op::Sub(self.clone(), o.clone())))
    }

    pub fn mul(&self, o: &Var) -> Result<Var> {
        let v = self.value().mul(o.value())?;
        Ok(Var::from_op(v, Op::Mul(self.clone(), o.clone())))
    }

    pub fn div(&self, o: &Var) -> Result<Var> {
        let v = self.value().zip_with(o.value(), |a, b| a / b)?;
        Ok(Var::from_op(v, Op::Div(self.clone(), o.clone())))
    }

    pub fn neg(&self) -> Var {
        Var::from_op(self.value().scale(-1.0), Op::Neg(self.clone()))
    }

    pub fn scale(&self, k: f64) -> Var {
        Var::from_op(self.value().scale(k), Op::Scale(self.clone(), k))
    }

    pub fn add_scalar(&self, k: f64) -> Var {
        Var::from_op(self.value().map(|x| x + k), Op::AddScalar(self.clone()))
    }

    pub fn exp(&self) -> Var {
        Var::from_op(self.value().map(f64::exp), Op::Exp(self.clone()))
    }

    pub fn ln(&self) -> Var {
        Var::from_op(self.value().map(f64::ln), Op::Log(self.clone()))
    }

    /// Square root whose derivative at 0 is taken to be 0.
    pub fn sqrt(&self) -> Var {
        Var::from_op(self.value().map(f64::sqrt), Op::Sqrt(self.clone()))
    }

    /// `1/x`, with 0 mapped to 0.
    pub fn recip_nonzero(&self) -> Var {
        let v = self.value().map(|x| if x == 0.0 { 0.0 } else { 1.0 / x });
        Var::from_op(v, Op::RecipNonzero(self.clone()))
    }

    pub fn tanh(&self) -> Var {
        Var::from_op(self.value().map(f64::tanh), Op::Tanh(self.clone()))
    }

    pub fn sigmoid(&self) -> Var {
        let v = self.value().map(sigmoid);
        Var::from_op(v, Op::Sigmoid(self.clone()))
    }

    pub fn square(&self) -> Result<Var> {
        self.mul(self)
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&self, c: Rc<Tensor>) -> Result<Var> {
        if c.shape() != self.shape() {
            return Err(Error::shape(format!(
                "mul_const {:?} by {:?}",
                self.shape(),
                c.shape()
            )));
        }
        let v = self.value().mul(&c)?;
        Ok(Var::from_op(v, Op::MulConst(self.clone(), c)))
    }

    pub fn leaky_relu(&self, slope: f64) -> Var {
        let mask = self.value().map(|x| if x > 0.0 { 1.0 } else { slope });
        self.mul_const(Rc::new(mask)).expect("mask has input shape")
    }

    /// Clamp into `[lo, hi]`; zero gradient outside.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var {
        let inside = self
            .value()
            .map(|x| if (lo..=hi).contains(&x) { 1.0 } else { 0.0 });
        let outside = self.value().map(|x| {
            if x < lo {
                lo
            } else if x > hi {
                hi
            } else {
                0.0
            }
        });
        self.mul_const(Rc::new(inside))
            .and_then(|v| v.add(&Var::constant(outside)))
            .expect("clamp masks share input shape")
    }

    /// Sum over `axes`, keeping them with length 1.
    pub fn sum_keepdim(&self, axes: &[usize]) -> Result<Var> {
        let v = self.value().sum_axes_keepdim(axes)?;
        Ok(Var::from_op(v, Op::Sum(self.clone())))
    }

    /// Sum over `axes`, dropping them.
    pub fn sum_axes(&self, axes: &[usize]) -> Result<Var> {
        let kept = self.sum_keepdim(axes)?;
        let shape: Vec<usize> = self
            .shape()
            .iter()
            .enumerate()
            .filter(|(i, _)| !axes.contains(i))
            .map(|(_, &d)| d)
            .collect();
        kept.reshape(&shape)
    }

    pub fn sum_all(&self) -> Var {
        let axes: Vec<usize> = (0..self.shape().len()).collect();
        self.sum_axes(&axes).expect("all axes are in range")
    }

    pub fn mean_all(&self) -> Var {
        let n = self.value().len().max(1) as f64;
        self.sum_all().scale(1.0 / n)
    }

    pub fn mean_keepdim(&self, axes: &[usize]) -> Result<Var> {
        let n: usize = axes.iter().map(|&a| self.shape().get(a).copied().unwrap_or(1)).product();
        Ok(self.sum_keepdim(axes)?.scale(1.0 / n.max(1) as f64))
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Var> {
        if self.shape() == shape {
            return Ok(self.clone());
        }
        let v = self.value().broadcast_to(shape)?;
        Ok(Var::from_op(v, Op::BroadcastTo(self.clone())))
    }

    /// Reduce a broadcast gradient back to `shape`.
    pub fn sum_to(&self, shape: &[usize]) -> Result<Var> {
        if self.shape() == shape {
            return Ok(self.clone());
        }
        let nd = self.shape().len();
        let off = nd - shape.len();
        let axes: Vec<usize> = (0..nd)
            .filter(|&i| i < off || (shape[i - off] == 1 && self.shape()[i] != 1))
            .collect();
        self.sum_keepdim(&axes)?.reshape(shape)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var> {
        if self.shape() == shape {
            return Ok(self.clone());
        }
        let v = self.value().reshape(shape)?;
        Ok(Var::from_op(v, Op::Reshape(self.clone())))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Var> {
        let v = self.value().permute(perm)?;
        Ok(Var::from_op(v, Op::Permute(self.clone(), perm.to_vec())))
    }

    /// Transpose of a 2-D value.
    pub fn t(&self) -> Result<Var> {
        self.permute(&[1, 0])
    }

    pub fn matmul(&self, o: &Var) -> Result<Var> {
        let v = self.value().matmul(o.value())?;
        Ok(Var::from_op(v, Op::MatMul(self.clone(), o.clone())))
    }

    pub fn conv2d(&self, w: &Var, geom: ConvGeom) -> Result<Var> {
        let v = conv::conv2d(self.value(), w.value(), &geom)?;
        Ok(Var::from_op(v, Op::Conv2d(self.clone(), w.clone(), geom)))
    }

    /// Transposed convolution: the input-adjoint of `conv2d(·, w)` producing
    /// an `out_hw` map. `w` has shape `[C_in, C_out, kh, kw]`.
    pub fn conv_transpose2d(&self, w: &Var, geom: ConvGeom, out_hw: (usize, usize)) -> Result<Var> {
        let v = conv::conv2d_input_grad(self.value(), w.value(), &geom, out_hw)?;
        Ok(Var::from_op(v, Op::ConvInputGrad(self.clone(), w.clone(), geom)))
    }

    fn conv_weight_grad(x: &Var, g: &Var, geom: ConvGeom) -> Result<Var> {
        let v = conv::conv2d_weight_grad(x.value(), g.value(), &geom)?;
        Ok(Var::from_op(v, Op::ConvWeightGrad(x.clone(), g.clone(), geom)))
    }

    pub fn concat(parts: &[Var], axis: usize) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|p| p.value()).collect();
        let v = Tensor::concat(&values, axis)?;
        Ok(Var::from_op(v, Op::Concat(parts.to_vec(), axis)))
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var> {
        if axis < self.shape().len() && start == 0 && len == self.shape()[axis] {
            return Ok(self.clone());
        }
        let v = self.value().narrow(axis, start, len)?;
        Ok(Var::from_op(v, Op::Narrow(self.clone(), axis, start)))
    }

    pub fn pad_axis(&self, axis: usize, before: usize, after: usize) -> Result<Var> {
        let v = self.value().pad_axis(axis, before, after)?;
        Ok(Var::from_op(v, Op::Pad(self.clone(), axis, before)))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Nodes reachable from `root` that require gradients, newest first.
fn reverse_topological(root: &Var) -> Vec<Var> {
    let mut seen = std::collections::HashSet::new();
    let mut stack = vec![root.clone()];
    let mut out = Vec::new();
    while let Some(v) = stack.pop() {
        if !v.requires_grad() || !seen.insert(v.0.id) {
            continue;
        }
        if let Some(op) = &v.0.op {
            stack.extend(op.parents().into_iter().cloned());
        }
        out.push(v);
    }
    out.sort_unstable_by(|a, b| b.0.id.cmp(&a.0.id));
    out
}

/// Gradients of the scalar `output` with respect to each of `wrt`.
///
/// With `create_graph` the returned gradients carry their own graph and can
/// be differentiated again. Inputs unreachable from `output` get zeros.
pub fn grad(output: &Var, wrt: &[&Var], create_graph: bool) -> Result<Vec<Var>> {
    if output.value().len() != 1 {
        return Err(Error::shape(format!(
            "grad needs a scalar output, got {:?}",
            output.shape()
        )));
    }
    let order = reverse_topological(output);
    let wanted: std::collections::HashSet<u64> = wrt.iter().map(|v| v.0.id).collect();
    let mut grads: HashMap<u64, Var> = HashMap::new();
    grads.insert(
        output.0.id,
        Var::constant(Tensor::ones(output.shape())),
    );
    let mut results: HashMap<u64, Var> = HashMap::new();
    for node in &order {
        let g = if wanted.contains(&node.0.id) {
            match grads.get(&node.0.id) {
                Some(g) => g.clone(),
                None => continue,
            }
        } else {
            match grads.remove(&node.0.id) {
                Some(g) => g,
                None => continue,
            }
        };
        if wanted.contains(&node.0.id) {
            results.insert(node.0.id, g.clone());
        }
        let Some(op) = &node.0.op else { continue };
        for (parent, pg) in backward(node, op, &g, create_graph)? {
            if !parent.requires_grad() {
                continue;
            }
            let pg = if create_graph { pg } else { pg.detach() };
            match grads.remove(&parent.0.id) {
                Some(acc) => {
                    let sum = acc.add(&pg)?;
                    grads.insert(parent.0.id, if create_graph { sum } else { sum.detach() });
                }
                None => {
                    grads.insert(parent.0.id, pg);
                }
            }
        }
    }
    Ok(wrt
        .iter()
        .map(|v| {
            results
                .remove(&v.0.id)
                .unwrap_or_else(|| Var::constant(Tensor::zeros(v.shape())))
        })
        .collect())
}

/// Convenience: first-order gradients as plain tensors.
pub fn grad_values(output: &Var, wrt: &[&Var]) -> Result<Vec<Tensor>> {
    Ok(grad(output, wrt, false)?
        .into_iter()
        .map(|v| v.value().clone())
        .collect())
}

fn backward(out: &Var, op: &Op, g: &Var, create_graph: bool) -> Result<Vec<(Var, Var)>> {
    // Without create_graph the rules see detached copies of their inputs, so
    // no second-order graph is recorded.
    let p = |v: &Var| if create_graph { v.clone() } else { v.detach() };
    let y = p(out);
    use Op::*;
    Ok(match op {
        Add(a, b) => vec![
            (a.clone(), g.sum_to(a.shape())?),
            (b.clone(), g.sum_to(b.shape())?),
        ],
        Sub(a, b) => vec![
            (a.clone(), g.sum_to(a.shape())?),
            (b.clone(), g.neg().sum_to(b.shape())?),
        ],
        Mul(a, b) => vec![
            (a.clone(), g.mul(&p(b))?.sum_to(a.shape())?),
            (b.clone(), g.mul(&p(a))?.sum_to(b.shape())?),
        ],
        Div(a, b) => {
            let bb = p(b);
            vec![
                (a.clone(), g.div(&bb)?.sum_to(a.shape())?),
                (b.clone(), g.mul(&y)?.div(&bb)?.neg().sum_to(b.shape())?),
            ]
        }
        Neg(a) => vec![(a.clone(), g.neg())],
        Scale(a, k) => vec![(a.clone(), g.scale(*k))],
        AddScalar(a) => vec![(a.clone(), g.clone())],
        Exp(a) => vec![(a.clone(), g.mul(&y)?)],
        Log(a) => vec![(a.clone(), g.div(&p(a))?)],
        Sqrt(a) => vec![(a.clone(), g.mul(&y.recip_nonzero())?.scale(0.5))],
        RecipNonzero(a) => vec![(a.clone(), g.mul(&y)?.mul(&y)?.neg())],
        Tanh(a) => {
            let d = y.square()?.neg().add_scalar(1.0);
            vec![(a.clone(), g.mul(&d)?)]
        }
        Sigmoid(a) => {
            let d = y.mul(&y.neg().add_scalar(1.0))?;
            vec![(a.clone(), g.mul(&d)?)]
        }
        MulConst(a, c) => vec![(a.clone(), g.mul_const(Rc::clone(c))?)],
        Sum(a) => vec![(a.clone(), g.broadcast_to(a.shape())?)],
        BroadcastTo(a) => vec![(a.clone(), g.sum_to(a.shape())?)],
        Reshape(a) => vec![(a.clone(), g.reshape(a.shape())?)],
        Permute(a, perm) => {
            let mut inv = vec![0; perm.len()];
            for (i, &q) in perm.iter().enumerate() {
                inv[q] = i;
            }
            vec![(a.clone(), g.permute(&inv)?)]
        }
        MatMul(a, b) => vec![
            (a.clone(), g.matmul(&p(b).t()?)?),
            (b.clone(), p(a).t()?.matmul(g)?),
        ],
        Conv2d(x, w, geom) => {
            let hw = (x.shape()[2], x.shape()[3]);
            vec![
                (x.clone(), g.conv_transpose2d(&p(w), *geom, hw)?),
                (w.clone(), Var::conv_weight_grad(&p(x), g, *geom)?),
            ]
        }
        ConvInputGrad(gin, w, geom) => vec![
            (gin.clone(), g.conv2d(&p(w), *geom)?),
            (w.clone(), Var::conv_weight_grad(g, &p(gin), *geom)?),
        ],
        ConvWeightGrad(x, gin, geom) => {
            let hw = (x.shape()[2], x.shape()[3]);
            vec![
                (x.clone(), p(gin).conv_transpose2d(g, *geom, hw)?),
                (gin.clone(), p(x).conv2d(g, *geom)?),
            ]
        }
        Concat(parts, axis) => {
            let mut off = 0;
            let mut out = Vec::with_capacity(parts.len());
            for part in parts {
                let len = part.shape()[*axis];
                out.push((part.clone(), g.narrow(*axis, off, len)?));
                off += len;
            }
            out
        }
        Narrow(a, axis, start) => {
            let len = out.shape()[*axis];
            let after = a.shape()[*axis] - start - len;
            vec![(a.clone(), g.pad_axis(*axis, *start, after)?)]
        }
        Pad(a, axis, before) => {
            let len = a.shape()[*axis];
            vec![(a.clone(), g.narrow(*axis, *before, len)?)]
        }
    })
}

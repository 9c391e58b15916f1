//! Define-by-run reverse-mode automatic differentiation on a tape.
//!
//! Every forward operation appends a node to a [`Tape`]; [`Tensor`] is a
//! cheap handle (tape + node index). Calling [`Tensor::backward`] on a
//! scalar walks the tape in reverse and accumulates d(loss)/d(node) into
//! each node that requires gradients. The tape is rebuilt on every forward
//! pass; there is no graph caching.
//!
//! Conventions:
//! - all values are f64, row-major;
//! - a "scalar" is a tensor of shape `[1]`;
//! - binary elementwise ops accept equal shapes or a right operand whose
//!   shape is a suffix of the left's (broadcast over the leading batch
//!   dims), nothing richer;
//! - repeated `backward` calls without [`Tape::zero_grad`] accumulate;
//! - every op verifies its output is finite and fails otherwise.
//!
//! A `Tape` (and every tensor on it) is confined to one thread; concurrent
//! training runs each build their own tape.

mod check;
mod kernels;

pub use check::{finite_diff_check, finite_diff_check_skip};

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};

pub type Shape = Vec<usize>;

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

#[derive(Clone, Debug, PartialEq)]
enum Op {
    Leaf,
    Matmul,
    Conv2d { pad: usize, stride: usize },
    LogSoftmax,
    Exp,
    Add,
    Sub,
    Mul,
    Relu,
    Mean,
    Sum,
    Mse,
    Scale(f64),
    Reshape,
    Detach,
}

struct Node {
    op: Op,
    inputs: Vec<usize>,
    shape: Shape,
    values: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
}

/// Recording tape. Clones share the same underlying storage.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

/// Handle to one node on a tape.
#[derive(Clone)]
pub struct Tensor {
    tape: Tape,
    id: usize,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, inputs: Vec<usize>, shape: Shape, values: Vec<f64>) -> Result<Tensor> {
        debug_assert_eq!(numel(&shape), values.len());
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("{op:?}")));
        }
        let mut inner = self.inner.borrow_mut();
        let requires_grad = match op {
            Op::Leaf | Op::Detach => false,
            _ => inputs.iter().any(|&i| inner.nodes[i].requires_grad),
        };
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            op,
            inputs,
            shape,
            values,
            requires_grad,
            grad: None,
        });
        Ok(Tensor {
            tape: self.clone(),
            id,
        })
    }

    /// New leaf tensor. `requires_grad` marks it as a differentiation target.
    pub fn leaf(&self, values: Vec<f64>, shape: Shape, requires_grad: bool) -> Result<Tensor> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("leaf", "zero-sized dimension"));
        }
        if numel(&shape) != values.len() {
            return Err(Error::shape(
                "leaf",
                format!("{} values for shape {:?}", values.len(), shape),
            ));
        }
        let t = self.push(Op::Leaf, vec![], shape, values)?;
        self.inner.borrow_mut().nodes[t.id].requires_grad = requires_grad;
        Ok(t)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&self, values: Vec<f64>, shape: Shape) -> Result<Tensor> {
        self.leaf(values, shape, false)
    }

    pub fn scalar(&self, v: f64) -> Result<Tensor> {
        self.constant(vec![v], vec![1])
    }

    /// Clear all accumulated gradients.
    pub fn zero_grad(&self) {
        for n in self.inner.borrow_mut().nodes.iter_mut() {
            n.grad = None;
        }
    }

    /// Recompute every non-leaf node from current leaf values using the same
    /// kernels as the recording pass. Returns the recomputed value buffers
    /// (index-aligned with node ids). Replay of an unmodified tape is
    /// bit-identical to the recorded values.
    pub fn replay(&self) -> Result<Vec<Vec<f64>>> {
        let inner = self.inner.borrow();
        let mut vals: Vec<Vec<f64>> = Vec::with_capacity(inner.nodes.len());
        for node in inner.nodes.iter() {
            let get = |i: usize| -> &[f64] { &vals[i] };
            let v = match node.op {
                Op::Leaf => node.values.clone(),
                _ => {
                    let ins: Vec<&[f64]> = node.inputs.iter().map(|&i| get(i)).collect();
                    let in_shapes: Vec<&[usize]> =
                        node.inputs.iter().map(|&i| &inner.nodes[i].shape[..]).collect();
                    eval_op(&node.op, &ins, &in_shapes, &node.shape)
                }
            };
            vals.push(v);
        }
        Ok(vals)
    }
}

/// Forward evaluation shared by recording and replay.
fn eval_op(op: &Op, ins: &[&[f64]], in_shapes: &[&[usize]], out_shape: &[usize]) -> Vec<f64> {
    match *op {
        Op::Leaf => unreachable!("leaf has no inputs"),
        Op::Matmul => {
            let (m, k) = (in_shapes[0][0], in_shapes[0][1]);
            let n = in_shapes[1][1];
            kernels::matmul(ins[0], ins[1], m, k, n)
        }
        Op::Conv2d { pad, stride } => {
            let x = in_shapes[0];
            let kr = in_shapes[1];
            let (ho, wo) = (out_shape[2], out_shape[3]);
            kernels::conv2d(
                ins[0], ins[1], ins[2], x[0], x[1], x[2], x[3], kr[0], kr[2], kr[3], pad, stride,
                ho, wo,
            )
        }
        Op::LogSoftmax => {
            let l = *in_shapes[0].last().unwrap();
            kernels::log_softmax(ins[0], l)
        }
        Op::Exp => ins[0].iter().map(|v| v.exp()).collect(),
        Op::Add => broadcast_zip(ins[0], ins[1], |a, b| a + b),
        Op::Sub => broadcast_zip(ins[0], ins[1], |a, b| a - b),
        Op::Mul => broadcast_zip(ins[0], ins[1], |a, b| a * b),
        Op::Relu => ins[0].iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
        Op::Mean => {
            let n = ins[0].len() as f64;
            vec![ins[0].iter().sum::<f64>() / n]
        }
        Op::Sum => vec![ins[0].iter().sum::<f64>()],
        Op::Mse => {
            let n = ins[0].len() as f64;
            let s: f64 = ins[0]
                .iter()
                .zip(ins[1].iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            vec![s / n]
        }
        Op::Scale(c) => ins[0].iter().map(|v| v * c).collect(),
        Op::Reshape | Op::Detach => ins[0].to_vec(),
    }
}

/// Elementwise combine where b's length divides a's (suffix broadcast).
fn broadcast_zip(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    if a.len() == b.len() {
        a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect()
    } else {
        let mut out = Vec::with_capacity(a.len());
        for chunk in a.chunks_exact(b.len()) {
            out.extend(chunk.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)));
        }
        out
    }
}

/// Check binary operand shapes: equal, or rhs a strict suffix of lhs.
fn binary_shapes(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a == b {
        return Ok(());
    }
    if a.len() > b.len() && a[a.len() - b.len()..] == *b {
        return Ok(());
    }
    Err(Error::shape(op, format!("lhs {a:?} vs rhs {b:?}")))
}

impl Tensor {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Shape {
        self.tape.inner.borrow().nodes[self.id].shape.clone()
    }

    pub fn values(&self) -> Vec<f64> {
        self.tape.inner.borrow().nodes[self.id].values.clone()
    }

    /// Run `f` over the value buffer without copying it out.
    pub fn with_values<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.tape.inner.borrow().nodes[self.id].values)
    }

    /// Value of a scalar ([1]-shaped) tensor.
    pub fn item(&self) -> Result<f64> {
        let inner = self.tape.inner.borrow();
        let node = &inner.nodes[self.id];
        if node.values.len() != 1 {
            return Err(Error::contract(format!(
                "item() on tensor of shape {:?}",
                node.shape
            )));
        }
        Ok(node.values[0])
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].requires_grad
    }

    /// The tape this tensor lives on.
    pub fn tape_handle(&self) -> &Tape {
        &self.tape
    }

    /// Accumulated gradient, if backward reached this node.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.tape.inner.borrow().nodes[self.id].grad.clone()
    }

    /// Move the accumulated gradient out of the node (leaving none), saving
    /// a copy when the caller consumes it anyway.
    pub fn take_grad(&self) -> Option<Vec<f64>> {
        self.tape.inner.borrow_mut().nodes[self.id].grad.take()
    }

    fn tape_op(&self, op: Op, inputs: Vec<usize>, shape: Shape) -> Result<Tensor> {
        let values = {
            let inner = self.tape.inner.borrow();
            let ins: Vec<&[f64]> = inputs.iter().map(|&i| &inner.nodes[i].values[..]).collect();
            let in_shapes: Vec<&[usize]> =
                inputs.iter().map(|&i| &inner.nodes[i].shape[..]).collect();
            eval_op(&op, &ins, &in_shapes, &shape)
        };
        self.tape.push(op, inputs, shape, values)
    }

    fn same_tape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if !Rc::ptr_eq(&self.tape.inner, &other.tape.inner) {
            return Err(Error::contract(format!("{op}: operands on different tapes")));
        }
        Ok(())
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.same_tape(rhs, "matmul")?;
        let (sa, sb) = (self.shape(), rhs.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        self.tape_op(Op::Matmul, vec![self.id, rhs.id], vec![sa[0], sb[1]])
    }

    /// Cross-correlation with zero padding.
    /// self: (N,C,H,W), kernel: (O,C,kh,kw), bias: (O) -> (N,O,H',W')
    pub fn conv2d(&self, kernel: &Tensor, bias: &Tensor, pad: usize, stride: usize) -> Result<Tensor> {
        self.same_tape(kernel, "conv2d")?;
        self.same_tape(bias, "conv2d")?;
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride must be >= 1"));
        }
        let (sx, sk, sb) = (self.shape(), kernel.shape(), bias.shape());
        if sx.len() != 4 || sk.len() != 4 {
            return Err(Error::shape("conv2d", format!("input {sx:?}, kernel {sk:?}")));
        }
        if sx[1] != sk[1] {
            return Err(Error::shape(
                "conv2d",
                format!("channels: input {} vs kernel {}", sx[1], sk[1]),
            ));
        }
        if sb != vec![sk[0]] {
            return Err(Error::shape("conv2d", format!("bias {sb:?} for {} filters", sk[0])));
        }
        let ho = kernels::conv2d_out_dim(sx[2], sk[2], pad, stride)
            .ok_or_else(|| Error::shape("conv2d", format!("H={} kh={} pad={pad} stride={stride}", sx[2], sk[2])))?;
        let wo = kernels::conv2d_out_dim(sx[3], sk[3], pad, stride)
            .ok_or_else(|| Error::shape("conv2d", format!("W={} kw={} pad={pad} stride={stride}", sx[3], sk[3])))?;
        self.tape_op(
            Op::Conv2d { pad, stride },
            vec![self.id, kernel.id, bias.id],
            vec![sx[0], sk[0], ho, wo],
        )
    }

    /// Numerically stable log-softmax over the last axis.
    pub fn log_softmax(&self) -> Result<Tensor> {
        let s = self.shape();
        if s.is_empty() {
            return Err(Error::shape("log_softmax", "rank-0 input"));
        }
        self.tape_op(Op::LogSoftmax, vec![self.id], s)
    }

    pub fn exp(&self) -> Result<Tensor> {
        self.tape_op(Op::Exp, vec![self.id], self.shape())
    }

    /// Softmax over the last axis (exp of log-softmax).
    pub fn softmax(&self) -> Result<Tensor> {
        self.log_softmax()?.exp()
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.same_tape(rhs, "add")?;
        binary_shapes("add", &self.shape(), &rhs.shape())?;
        self.tape_op(Op::Add, vec![self.id, rhs.id], self.shape())
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.same_tape(rhs, "sub")?;
        binary_shapes("sub", &self.shape(), &rhs.shape())?;
        self.tape_op(Op::Sub, vec![self.id, rhs.id], self.shape())
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.same_tape(rhs, "mul")?;
        binary_shapes("mul", &self.shape(), &rhs.shape())?;
        self.tape_op(Op::Mul, vec![self.id, rhs.id], self.shape())
    }

    /// relu, with gradient defined as 0 at exactly 0.
    pub fn relu(&self) -> Result<Tensor> {
        self.tape_op(Op::Relu, vec![self.id], self.shape())
    }

    /// Mean over all elements -> scalar.
    pub fn mean(&self) -> Result<Tensor> {
        self.tape_op(Op::Mean, vec![self.id], vec![1])
    }

    /// Sum over all elements -> scalar.
    pub fn sum(&self) -> Result<Tensor> {
        self.tape_op(Op::Sum, vec![self.id], vec![1])
    }

    /// Mean squared error against `rhs` over all elements -> scalar.
    pub fn mse(&self, rhs: &Tensor) -> Result<Tensor> {
        self.same_tape(rhs, "mse")?;
        if self.shape() != rhs.shape() {
            return Err(Error::shape(
                "mse",
                format!("{:?} vs {:?}", self.shape(), rhs.shape()),
            ));
        }
        self.tape_op(Op::Mse, vec![self.id, rhs.id], vec![1])
    }

    /// Multiply by a compile-time constant (not a tape value).
    pub fn scale(&self, c: f64) -> Result<Tensor> {
        self.tape_op(Op::Scale(c), vec![self.id], self.shape())
    }

    /// View with a new shape of identical element count.
    pub fn reshape(&self, shape: Shape) -> Result<Tensor> {
        if shape.iter().any(|&d| d == 0) || numel(&shape) != numel(&self.shape()) {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {:?}", self.shape(), shape),
            ));
        }
        self.tape_op(Op::Reshape, vec![self.id], shape)
    }

    /// Same values, severed from the graph: no gradient flows into `self`
    /// through the result.
    pub fn detach(&self) -> Result<Tensor> {
        self.tape_op(Op::Detach, vec![self.id], self.shape())
    }

    /// Reverse pass from a scalar loss. Accumulates gradients into every
    /// reachable node with `requires_grad`; repeated calls accumulate until
    /// [`Tape::zero_grad`].
    pub fn backward(&self) -> Result<()> {
        let mut inner = self.tape.inner.borrow_mut();
        let loss = &inner.nodes[self.id];
        if loss.values.len() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.shape
            )));
        }
        if !loss.requires_grad {
            // Nothing to differentiate; all leaves unreachable.
            return Ok(());
        }
        let n = self.id + 1;
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);
        grads.resize_with(n, || None);
        grads[self.id] = Some(vec![1.0]);

        for id in (0..n).rev() {
            if !inner.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop_node(&inner.nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }

        for (id, g) in grads.into_iter().enumerate() {
            let node = &mut inner.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Some(g) = g {
                match &mut node.grad {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(g.iter()) {
                            *a += b;
                        }
                    }
                    None => node.grad = Some(g),
                }
            }
        }
        Ok(())
    }
}

/// Ensure a gradient buffer exists for `id` and return it.
fn grad_buf<'a>(grads: &'a mut [Option<Vec<f64>>], id: usize, len: usize) -> &'a mut Vec<f64> {
    grads[id].get_or_insert_with(|| vec![0.0; len])
}

/// Accumulate `src`, reduced over leading dims, into a buffer of length `blen`.
fn accumulate_reduced(src: &[f64], dst: &mut [f64]) {
    for chunk in src.chunks_exact(dst.len()) {
        for (d, s) in dst.iter_mut().zip(chunk.iter()) {
            *d += s;
        }
    }
}

fn backprop_node(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    let needs = |i: usize| nodes[node.inputs[i]].requires_grad;
    let in_len = |i: usize| nodes[node.inputs[i]].values.len();
    match node.op {
        Op::Leaf | Op::Detach => {}
        Op::Matmul => {
            let (a_id, b_id) = (node.inputs[0], node.inputs[1]);
            let (a, b) = (&nodes[a_id].values, &nodes[b_id].values);
            let (m, k) = (nodes[a_id].shape[0], nodes[a_id].shape[1]);
            let n = nodes[b_id].shape[1];
            if needs(0) {
                // dA += dC * B^T
                let da = grad_buf(grads, a_id, m * k);
                kernels::matmul_nt_acc(g, b, m, n, k, da);
            }
            if needs(1) {
                // dB += A^T * dC
                let db = grad_buf(grads, b_id, k * n);
                kernels::matmul_tn_acc(a, g, m, k, n, db);
            }
        }
        Op::Conv2d { pad, stride } => {
            let (x_id, k_id, b_id) = (node.inputs[0], node.inputs[1], node.inputs[2]);
            let xs = &nodes[x_id].shape;
            let ks = &nodes[k_id].shape;
            let (ho, wo) = (node.shape[2], node.shape[3]);
            let (nx, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
            let (o, kh, kw) = (ks[0], ks[2], ks[3]);
            // Split mutable access: compute into fresh buffers, then merge.
            let mut dx = needs(0).then(|| vec![0.0; nx * c * h * w]);
            let mut dk = needs(1).then(|| vec![0.0; o * c * kh * kw]);
            let mut db = needs(2).then(|| vec![0.0; o]);
            kernels::conv2d_backward(
                g,
                &nodes[x_id].values,
                &nodes[k_id].values,
                nx,
                c,
                h,
                w,
                o,
                kh,
                kw,
                pad,
                stride,
                ho,
                wo,
                dx.as_deref_mut(),
                dk.as_deref_mut(),
                db.as_deref_mut(),
            );
            for (buf, tid) in [(dx, x_id), (dk, k_id), (db, b_id)] {
                if let Some(buf) = buf {
                    let dst = grad_buf(grads, tid, buf.len());
                    for (d, s) in dst.iter_mut().zip(buf.iter()) {
                        *d += s;
                    }
                }
            }
        }
        Op::LogSoftmax => {
            if needs(0) {
                let l = *node.shape.last().unwrap();
                let dst = grad_buf(grads, node.inputs[0], in_len(0));
                kernels::log_softmax_backward(g, &node.values, l, dst);
            }
        }
        Op::Exp => {
            if needs(0) {
                let dst = grad_buf(grads, node.inputs[0], in_len(0));
                for ((d, &gv), &yv) in dst.iter_mut().zip(g.iter()).zip(node.values.iter()) {
                    *d += gv * yv;
                }
            }
        }
        Op::Add => {
            if needs(0) {
                let dst = grad_buf(grads, node.inputs[0], in_len(0));
                for (d, &s) in dst.iter_mut().zip(g.iter()) {
                    *d += s;
                }
            }
            if needs(1) {
                accumulate_reduced(g, grad_buf(grads, node.inputs[1], in_len(1)));
            }
        }
        Op::Sub => {
            if needs(0) {
                let dst = grad_buf(grads, node.inputs[0], in_len(0));
                for (d, &s) in dst.iter_mut().zip(g.iter()) {
                    *d += s;
                }
            }
            if needs(1) {
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                accumulate_reduced(&neg, grad_buf(grads, node.inputs[1], in_len(1)));
            }
        }
        Op::Mul => {
            let (a_id, b_id) = (node.inputs[0], node.inputs[1]);
            let blen = nodes[b_id].values.len();
            if needs(0) {
                let b = &nodes[b_id].values;
                let dst = grad_buf(grads, a_id, in_len(0));
                for (i, (d, &gv)) in dst.iter_mut().zip(g.iter()).enumerate() {
                    *d += gv * b[i % blen];
                }
            }
            if needs(1) {
                let a = &nodes[a_id].values;
                let prod: Vec<f64> = g.iter().zip(a.iter()).map(|(&gv, &av)| gv * av).collect();
                accumulate_reduced(&prod, grad_buf(grads, b_id, blen));
            }
        }
        Op::Relu => {
            if needs(0) {
                let x = &nodes[node.inputs[0]].values;
                let dst = grad_buf(grads, node.inputs[0], in_len(0));
                for ((d, &gv), &xv) in dst.iter_mut().zip(g.iter()).zip(x.iter()) {
                    if xv > 0.0 {
                        *d += gv;
                    }
                }
            }
        }
        Op::Mean => {
            if needs(0) {
                let len = in_len(0);
                let gv = g[0] / len as f64;
                let dst = grad_buf(grads, node.inputs[0], len);
                for d in dst.iter_mut() {
                    *d += gv;
                }
            }
        }
        Op::Sum => {
            if needs(0) {
                let dst = grad_buf(grads, node.inputs[0], in_len(0));
                for d in dst.iter_mut() {
                    *d += g[0];
                }
            }
        }
        Op::Mse => {
            let (a_id, b_id) = (node.inputs[0], node.inputs[1]);
            let len = nodes[a_id].values.len() as f64;
            let coeff = 2.0 * g[0] / len;
            if needs(0) {
                let (a, b) = (&nodes[a_id].values, &nodes[b_id].values);
                let diffs: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| coeff * (x - y)).collect();
                let dst = grad_buf(grads, a_id, diffs.len());
                for (d, s) in dst.iter_mut().zip(diffs.iter()) {
                    *d += s;
                }
            }
            if needs(1) {
                let (a, b) = (&nodes[a_id].values, &nodes[b_id].values);
                let diffs: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| coeff * (x - y)).collect();
                let dst = grad_buf(grads, b_id, diffs.len());
                for (d, s) in dst.iter_mut().zip(diffs.iter()) {
                    *d -= s;
                }
            }
        }
        Op::Scale(c) => {
            if needs(0) {
                let dst = grad_buf(grads, node.inputs[0], in_len(0));
                for (d, &s) in dst.iter_mut().zip(g.iter()) {
                    *d += c * s;
                }
            }
        }
        Op::Reshape => {
            if needs(0) {
                let dst = grad_buf(grads, node.inputs[0], in_len(0));
                for (d, &s) in dst.iter_mut().zip(g.iter()) {
                    *d += s;
                }
            }
        }
    }
}

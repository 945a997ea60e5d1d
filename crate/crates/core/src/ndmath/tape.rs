use crate::error::{AglaError, Result};
use crate::scalar::Scalar;

use super::kernels;
use super::tensor::{check_shape, numel, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }

    #[cfg(test)]
    pub(crate) fn from_test(i: usize) -> Var {
        Var(i)
    }
}

/// Operation selector for [`Tape::forward_op`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    MatMul,
    Relu,
    Tanh,
    Sigmoid,
    Log,
    Exp,
    /// Sum over everything (`None`) or along one axis of a matrix, keeping the axis.
    Sum(Option<usize>),
    Mean(Option<usize>),
    Concat(usize),
    Slice { axis: usize, start: usize, len: usize },
    Softmax,
}

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    Exp(Var),
    Sum(Var, Option<usize>),
    Mean(Var, Option<usize>),
    Concat(Vec<Var>, usize),
    Slice { src: Var, axis: usize, start: usize, len: usize },
    Softmax(Var),
    LogSoftmax(Var),
    Scale(Var, S),
}

#[derive(Clone, Debug)]
struct Node<S> {
    shape: Vec<usize>,
    value: Vec<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Define-by-run tape. Nodes are appended in evaluation order, so the node
/// index is already a topological order and backward is one reverse sweep.
#[derive(Clone, Debug, Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

/// Gradients of one backward sweep, indexed by [`Var`].
#[derive(Clone, Debug)]
pub struct Gradients<S> {
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&[S]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `v` into `target.grad`. A tensor that was not
    /// reachable from the root receives nothing.
    pub fn accumulate_into(&self, v: Var, target: &mut Tensor<S>) -> Result<()> {
        if !target.requires_grad() {
            return Ok(());
        }
        let Some(g) = self.get(v) else { return Ok(()) };
        if g.len() != target.numel() {
            return Err(AglaError::dim(
                "accumulate_into",
                format!("gradient length {} vs tensor length {}", g.len(), target.numel()),
            ));
        }
        for (t, &d) in target.grad_mut().iter_mut().zip(g) {
            *t += d;
        }
        Ok(())
    }
}

/// `(rows, cols)` view of a rank-1 or rank-2 shape.
fn matrix_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [n] => Ok((1, *n)),
        [r, c] => Ok((*r, *c)),
        _ => Err(AglaError::dim(op, format!("expected rank 1 or 2, got {shape:?}"))),
    }
}

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    if a == b || b == 1 {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else {
        None
    }
}

/// Output dims for an elementwise binary op with row/column broadcasting.
fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a == b {
        return Ok(a.to_vec());
    }
    let (ar, ac) = matrix_dims(op, a)?;
    let (br, bc) = matrix_dims(op, b)?;
    match (broadcast_dim(ar, br), broadcast_dim(ac, bc)) {
        (Some(r), Some(c)) => Ok(vec![r, c]),
        _ => Err(AglaError::dim(op, format!("cannot broadcast {a:?} with {b:?}"))),
    }
}

/// Index into a broadcast operand of dims `(r, c)` for output cell `(i, j)`.
#[inline]
fn bidx(r: usize, c: usize, i: usize, j: usize) -> usize {
    let ii = if r == 1 { 0 } else { i };
    let jj = if c == 1 { 0 } else { j };
    ii * c + jj
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<S>, op: Op<S>, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<S> {
        &self.nodes[v.0]
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.node(*v).requires_grad)
    }

    /// Records a copy of `t`; gradients flow to it iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor<S>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<S>) -> Result<Var> {
        check_shape("constant", &shape, data.len())?;
        Ok(self.push(shape, data, Op::Leaf, false))
    }

    pub fn scalar(&mut self, v: S) -> Var {
        self.push(vec![1], vec![v], Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &[S] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<S> {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape nodes hold valid shapes")
    }

    /// Dispatches on `kind`; arity is checked against `inputs`.
    pub fn forward_op(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let want = match kind {
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::MatMul => Some(2),
            OpKind::Concat(_) => None,
            _ => Some(1),
        };
        if let Some(n) = want {
            if inputs.len() != n {
                return Err(AglaError::Contract(format!(
                    "{kind:?} takes {n} inputs, got {}",
                    inputs.len()
                )));
            }
        }
        match kind {
            OpKind::Add => self.add(inputs[0], inputs[1]),
            OpKind::Sub => self.sub(inputs[0], inputs[1]),
            OpKind::Mul => self.mul(inputs[0], inputs[1]),
            OpKind::MatMul => self.matmul(inputs[0], inputs[1]),
            OpKind::Relu => Ok(self.relu(inputs[0])),
            OpKind::Tanh => Ok(self.tanh(inputs[0])),
            OpKind::Sigmoid => Ok(self.sigmoid(inputs[0])),
            OpKind::Log => Ok(self.log(inputs[0])),
            OpKind::Exp => Ok(self.exp(inputs[0])),
            OpKind::Sum(axis) => self.sum(inputs[0], axis),
            OpKind::Mean(axis) => self.mean(inputs[0], axis),
            OpKind::Concat(axis) => self.concat(inputs, axis),
            OpKind::Slice { axis, start, len } => self.slice(inputs[0], axis, start, len),
            OpKind::Softmax => self.softmax(inputs[0]),
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(S, S) -> S,
        op: Op<S>,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(name, &sa, &sb)?;
        let (va, vb) = (self.value(a), self.value(b));
        let value = if sa == sb {
            va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let (ar, ac) = matrix_dims(name, &sa)?;
            let (br, bc) = matrix_dims(name, &sb)?;
            let (r, c) = (out_shape[0], out_shape[1]);
            let mut out = Vec::with_capacity(r * c);
            for i in 0..r {
                for j in 0..c {
                    out.push(f(va[bidx(ar, ac, i, j)], vb[bidx(br, bc, i, j)]));
                }
            }
            out
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(out_shape, value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims("matmul", self.shape(a))?;
        let (k2, n) = matrix_dims("matmul", self.shape(b))?;
        if k != k2 || self.shape(b).len() != 2 {
            return Err(AglaError::dim(
                "matmul",
                format!("{:?} x {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let value = kernels::matmul(self.value(a), self.value(b), m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![m, n], value, Op::MatMul(a, b), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(S) -> S, op: Op<S>) -> Var {
        let value = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        self.push(shape, value, op, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, kernels::relu, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, kernels::sigmoid, Op::Sigmoid(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.ln(), Op::Log(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.exp(), Op::Exp(a))
    }

    /// Multiplies by a constant that is not itself on the tape.
    pub fn scale(&mut self, a: Var, c: S) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    fn reduce(&mut self, name: &'static str, a: Var, axis: Option<usize>, mean: bool) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let v = self.value(a);
        let (out_shape, value) = match axis {
            None => {
                let mut s: S = v.iter().copied().sum();
                if mean {
                    s /= S::of_usize(v.len());
                }
                (vec![1], vec![s])
            }
            Some(ax) => {
                let (r, c) = matrix_dims(name, &shape)?;
                match ax {
                    0 => {
                        let mut out = vec![S::zero(); c];
                        for i in 0..r {
                            for j in 0..c {
                                out[j] += v[i * c + j];
                            }
                        }
                        if mean {
                            out.iter_mut().for_each(|x| *x /= S::of_usize(r));
                        }
                        (vec![1, c], out)
                    }
                    1 => {
                        let out = (0..r)
                            .map(|i| {
                                let s: S = v[i * c..(i + 1) * c].iter().copied().sum();
                                if mean {
                                    s / S::of_usize(c)
                                } else {
                                    s
                                }
                            })
                            .collect();
                        (vec![r, 1], out)
                    }
                    _ => return Err(AglaError::dim(name, format!("axis {ax} on {shape:?}"))),
                }
            }
        };
        let rg = self.rg(&[a]);
        let op = if mean { Op::Mean(a, axis) } else { Op::Sum(a, axis) };
        Ok(self.push(out_shape, value, op, rg))
    }

    pub fn sum(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce("sum", a, axis, false)
    }

    pub fn mean(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce("mean", a, axis, true)
    }

    /// Concatenates matrices along `axis` (0 stacks rows, 1 joins columns).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        if inputs.is_empty() {
            return Err(AglaError::dim("concat", "no inputs"));
        }
        let dims: Vec<(usize, usize)> = inputs
            .iter()
            .map(|v| matrix_dims("concat", self.shape(*v)))
            .collect::<Result<_>>()?;
        let value = match axis {
            0 => {
                let c = dims[0].1;
                if dims.iter().any(|d| d.1 != c) {
                    return Err(AglaError::dim("concat", format!("column counts differ: {dims:?}")));
                }
                inputs.iter().flat_map(|v| self.value(*v).iter().copied()).collect::<Vec<_>>()
            }
            1 => {
                let r = dims[0].0;
                if dims.iter().any(|d| d.0 != r) {
                    return Err(AglaError::dim("concat", format!("row counts differ: {dims:?}")));
                }
                let mut out = Vec::with_capacity(dims.iter().map(|d| d.0 * d.1).sum());
                for i in 0..r {
                    for (v, &(_, c)) in inputs.iter().zip(&dims) {
                        out.extend_from_slice(&self.value(*v)[i * c..(i + 1) * c]);
                    }
                }
                out
            }
            _ => return Err(AglaError::dim("concat", format!("axis {axis}"))),
        };
        let shape = if axis == 0 {
            vec![dims.iter().map(|d| d.0).sum(), dims[0].1]
        } else {
            vec![dims[0].0, dims.iter().map(|d| d.1).sum()]
        };
        let rg = self.rg(inputs);
        Ok(self.push(shape, value, Op::Concat(inputs.to_vec(), axis), rg))
    }

    /// Takes `len` rows (axis 0) or columns (axis 1) starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let (r, c) = matrix_dims("slice", self.shape(a))?;
        let extent = match axis {
            0 => r,
            1 => c,
            _ => return Err(AglaError::dim("slice", format!("axis {axis}"))),
        };
        if len == 0 || start + len > extent {
            return Err(AglaError::dim(
                "slice",
                format!("range {start}..{} on axis {axis} of {:?}", start + len, self.shape(a)),
            ));
        }
        let v = self.value(a);
        let (shape, value) = if axis == 0 {
            (vec![len, c], v[start * c..(start + len) * c].to_vec())
        } else {
            let mut out = Vec::with_capacity(r * len);
            for i in 0..r {
                out.extend_from_slice(&v[i * c + start..i * c + start + len]);
            }
            (vec![r, len], out)
        };
        let rg = self.rg(&[a]);
        Ok(self.push(shape, value, Op::Slice { src: a, axis, start, len }, rg))
    }

    /// Row-wise softmax, max-shifted.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (_, c) = matrix_dims("softmax", self.shape(a))?;
        let value = kernels::softmax_rows(self.value(a), c);
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(shape, value, Op::Softmax(a), rg))
    }

    /// Row-wise log-softmax via log-sum-exp.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let (_, c) = matrix_dims("log_softmax", self.shape(a))?;
        let value = kernels::log_softmax_rows(self.value(a), c);
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(shape, value, Op::LogSoftmax(a), rg))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients<S>> {
        if self.nodes.is_empty() {
            return Err(AglaError::Contract("backward on an empty tape".into()));
        }
        let rn = self.node(root);
        if rn.value.len() != 1 {
            return Err(AglaError::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                rn.shape
            )));
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![S::one()]);
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn acc(&self, grads: &mut [Option<Vec<S>>], v: Var, f: impl FnOnce(&mut [S])) {
        if !self.node(v).requires_grad {
            return;
        }
        let n = self.node(v).value.len();
        let slot = grads[v.0].get_or_insert_with(|| vec![S::zero(); n]);
        f(slot);
    }

    /// Accumulates `g` (shaped like the output) into a broadcast operand.
    fn acc_broadcast(
        &self,
        grads: &mut [Option<Vec<S>>],
        v: Var,
        out_shape: &[usize],
        g: &[S],
        factor: impl Fn(usize) -> S,
    ) {
        let vs = self.shape(v).to_vec();
        self.acc(grads, v, |slot| {
            if vs == out_shape {
                for (k, s) in slot.iter_mut().enumerate() {
                    *s += g[k] * factor(k);
                }
            } else {
                let (r, c) = (out_shape[0], out_shape[1]);
                let (vr, vc) = matrix_dims("broadcast", &vs).expect("checked at forward");
                for i in 0..r {
                    for j in 0..c {
                        let k = i * c + j;
                        slot[bidx(vr, vc, i, j)] += g[k] * factor(k);
                    }
                }
            }
        });
    }

    /// Value of operand `v` as seen at output cell `k` of a broadcast op.
    fn bval(&self, v: Var, out_shape: &[usize], k: usize) -> S {
        let vs = self.shape(v);
        if vs == out_shape {
            return self.value(v)[k];
        }
        let c = out_shape[1];
        let (vr, vc) = matrix_dims("broadcast", vs).expect("checked at forward");
        self.value(v)[bidx(vr, vc, k / c, k % c)]
    }

    fn propagate(&self, node: &Node<S>, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let out = &node.value;
        let shape = &node.shape;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc_broadcast(grads, *a, shape, g, |_| S::one());
                self.acc_broadcast(grads, *b, shape, g, |_| S::one());
            }
            Op::Sub(a, b) => {
                self.acc_broadcast(grads, *a, shape, g, |_| S::one());
                self.acc_broadcast(grads, *b, shape, g, |_| -S::one());
            }
            Op::Mul(a, b) => {
                self.acc_broadcast(grads, *a, shape, g, |k| self.bval(*b, shape, k));
                self.acc_broadcast(grads, *b, shape, g, |k| self.bval(*a, shape, k));
            }
            Op::MatMul(a, b) => {
                let (m, k) = matrix_dims("matmul", self.shape(*a)).expect("checked");
                let n = self.shape(*b)[1];
                let (va, vb) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, |slot| kernels::matmul_nt_acc(g, vb, slot, m, n, k));
                self.acc(grads, *b, |slot| kernels::matmul_tn_acc(va, g, slot, m, k, n));
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                self.acc(grads, *a, |s| {
                    for i in 0..s.len() {
                        if x[i] > S::zero() {
                            s[i] += g[i];
                        }
                    }
                });
            }
            Op::Tanh(a) => self.acc(grads, *a, |s| {
                for i in 0..s.len() {
                    s[i] += g[i] * (S::one() - out[i] * out[i]);
                }
            }),
            Op::Sigmoid(a) => self.acc(grads, *a, |s| {
                for i in 0..s.len() {
                    s[i] += g[i] * out[i] * (S::one() - out[i]);
                }
            }),
            Op::Log(a) => {
                let x = self.value(*a);
                self.acc(grads, *a, |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] / x[i];
                    }
                });
            }
            Op::Exp(a) => self.acc(grads, *a, |s| {
                for i in 0..s.len() {
                    s[i] += g[i] * out[i];
                }
            }),
            Op::Scale(a, c) => self.acc(grads, *a, |s| {
                for i in 0..s.len() {
                    s[i] += g[i] * *c;
                }
            }),
            Op::Sum(a, axis) | Op::Mean(a, axis) => {
                let is_mean = matches!(node.op, Op::Mean(..));
                let n_in = self.value(*a).len();
                let ash = self.shape(*a).to_vec();
                self.acc(grads, *a, |s| match axis {
                    None => {
                        let d = if is_mean { g[0] / S::of_usize(n_in) } else { g[0] };
                        s.iter_mut().for_each(|x| *x += d);
                    }
                    Some(ax) => {
                        let (r, c) = matrix_dims("reduce", &ash).expect("checked");
                        let denom = if !is_mean {
                            S::one()
                        } else if *ax == 0 {
                            S::of_usize(r)
                        } else {
                            S::of_usize(c)
                        };
                        for i in 0..r {
                            for j in 0..c {
                                let gi = if *ax == 0 { j } else { i };
                                s[i * c + j] += g[gi] / denom;
                            }
                        }
                    }
                });
            }
            Op::Concat(inputs, axis) => {
                let total_c = shape[1];
                let mut offset = 0;
                for v in inputs {
                    let (r, c) = matrix_dims("concat", self.shape(*v)).expect("checked");
                    let off = offset;
                    self.acc(grads, *v, |s| {
                        if *axis == 0 {
                            for (k, x) in s.iter_mut().enumerate() {
                                *x += g[off * total_c + k];
                            }
                        } else {
                            for i in 0..r {
                                for j in 0..c {
                                    s[i * c + j] += g[i * total_c + off + j];
                                }
                            }
                        }
                    });
                    offset += if *axis == 0 { r } else { c };
                }
            }
            Op::Slice { src, axis, start, len } => {
                let (r, c) = matrix_dims("slice", self.shape(*src)).expect("checked");
                self.acc(grads, *src, |s| {
                    if *axis == 0 {
                        for k in 0..len * c {
                            s[start * c + k] += g[k];
                        }
                    } else {
                        for i in 0..r {
                            for j in 0..*len {
                                s[i * c + start + j] += g[i * len + j];
                            }
                        }
                    }
                });
            }
            Op::Softmax(a) => {
                let c = *shape.last().expect("non-empty");
                self.acc(grads, *a, |s| {
                    for (row, (gy, y)) in g.chunks(c).zip(out.chunks(c)).enumerate() {
                        let dot: S = gy.iter().zip(y).map(|(&a, &b)| a * b).sum();
                        for j in 0..c {
                            s[row * c + j] += y[j] * (gy[j] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let c = *shape.last().expect("non-empty");
                self.acc(grads, *a, |s| {
                    for (row, (gy, ly)) in g.chunks(c).zip(out.chunks(c)).enumerate() {
                        let gsum: S = gy.iter().copied().sum();
                        for j in 0..c {
                            s[row * c + j] += gy[j] - ly[j].exp() * gsum;
                        }
                    }
                });
            }
        }
    }
}

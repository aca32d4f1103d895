use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use super::{ParamId, ParamStore, Tensor};
use crate::math;
use crate::{rng_from_seed, Rng};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TapeError {
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite value produced by `{0}` in the forward pass")]
    NonFiniteForward(&'static str),
    #[error("non-finite gradient flowing into `{0}`")]
    NonFiniteGradient(&'static str),
}

#[derive(Debug)]
enum Op {
    Param(ParamId),
    Constant,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// matrix + broadcast row vector
    AddRow(NodeId, NodeId),
    /// matrix ⊙ broadcast row vector
    MulRow(NodeId, NodeId),
    Affine { x: NodeId, w: NodeId, b: Option<NodeId> },
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Dropout { x: NodeId, mask: Vec<f64> },
    /// Row-major concatenation: vectors end to end, or matrix blocks stacked vertically.
    Concat(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    /// Contiguous window of the flat data (vector slice or a block of rows).
    Window { x: NodeId, offset: usize },
    GatherRows { x: NodeId, rows: Vec<usize> },
    Reshape(NodeId),
    Sum(NodeId),
    Softmax(NodeId),
    LogSumExp(NodeId),
    WeightedRowSum { w: NodeId, x: NodeId },
    /// Scalar whose gradient w.r.t. its input was computed alongside the value.
    Fused { x: NodeId, grad: Vec<f64>, name: &'static str },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Param(_) => "param",
            Op::Constant => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::Affine { .. } => "affine",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Relu(_) => "relu",
            Op::Dropout { .. } => "dropout",
            Op::Concat(_) => "concat",
            Op::ConcatCols(_) => "concat_cols",
            Op::Window { .. } => "slice",
            Op::GatherRows { .. } => "gather_rows",
            Op::Reshape(_) => "reshape",
            Op::Sum(_) => "sum",
            Op::Softmax(_) => "softmax",
            Op::LogSumExp(_) => "log_sum_exp",
            Op::WeightedRowSum { .. } => "weighted_row_sum",
            Op::Fused { name, .. } => name,
        }
    }
}

struct Node {
    op: Op,
    /// `None` for parameters, which are read from the store.
    value: Option<Tensor>,
    needs_grad: bool,
}

/// Records a forward computation so it can be differentiated in reverse.
///
/// Parameters are borrowed from a [`ParamStore`] and never copied. The tape
/// owns the dropout generator; in [`Mode::Eval`] dropout is the identity.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
    mode: Mode,
    rng: Rng,
    non_finite: Option<&'static str>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore, mode: Mode, seed: u64) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
            mode,
            rng: rng_from_seed(seed),
            non_finite: None,
        }
    }

    pub fn eval(params: &'p ParamStore) -> Self {
        Self::new(params, Mode::Eval, 0)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        let node = &self.nodes[id.0];
        match (&node.value, &node.op) {
            (Some(v), _) => v,
            (None, Op::Param(p)) => self.params.value(*p),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.value(id).shape()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        if self.non_finite.is_none() && !value.is_finite() {
            self.non_finite = Some(op.name());
        }
        let needs_grad = self.op_needs_grad(&op);
        self.nodes.push(Node { op, value: Some(value), needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn op_needs_grad(&self, op: &Op) -> bool {
        let ng = |id: &NodeId| self.nodes[id.0].needs_grad;
        match op {
            Op::Param(p) => self.params.get(*p).requires_grad,
            Op::Constant => false,
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) | Op::MulRow(a, b) => {
                ng(a) || ng(b)
            }
            Op::Affine { x, w, b } => ng(x) || ng(w) || b.as_ref().is_some_and(ng),
            Op::WeightedRowSum { w, x } => ng(w) || ng(x),
            Op::Concat(xs) | Op::ConcatCols(xs) => xs.iter().any(ng),
            Op::Scale(x, _)
            | Op::Tanh(x)
            | Op::Sigmoid(x)
            | Op::Relu(x)
            | Op::Dropout { x, .. }
            | Op::Window { x, .. }
            | Op::GatherRows { x, .. }
            | Op::Reshape(x)
            | Op::Sum(x)
            | Op::Softmax(x)
            | Op::LogSumExp(x)
            | Op::Fused { x, .. } => ng(x),
        }
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(node) = self.param_nodes[id.0] {
            return node;
        }
        let needs_grad = self.params.get(id).requires_grad;
        self.nodes.push(Node { op: Op::Param(id), value: None, needs_grad });
        let node = NodeId(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(node);
        node
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, value)
    }

    fn zip_map(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.len(), vb.len(), "elementwise op on {:?} and {:?}", va.shape(), vb.shape());
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor { shape: va.shape().to_vec(), data }
    }

    fn map(&self, x: NodeId, f: impl Fn(f64) -> f64) -> Tensor {
        let v = self.value(x);
        Tensor { shape: v.shape().to_vec(), data: v.data().iter().map(|&a| f(a)).collect() }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip_map(a, b, |x, y| x + y);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip_map(a, b, |x, y| x - y);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip_map(a, b, |x, y| x * y);
        self.push(Op::Mul(a, b), v)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let v = self.map(x, |a| a * c);
        self.push(Op::Scale(x, c), v)
    }

    fn row_broadcast(&self, m: NodeId, r: NodeId, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (vm, vr) = (self.value(m), self.value(r));
        let c = vm.cols();
        assert_eq!(vr.len(), c, "row broadcast of {:?} over {:?}", vr.shape(), vm.shape());
        let data = vm
            .data()
            .iter()
            .enumerate()
            .map(|(k, &x)| f(x, vr.data()[k % c]))
            .collect();
        Tensor { shape: vm.shape().to_vec(), data }
    }

    pub fn add_row(&mut self, m: NodeId, row: NodeId) -> NodeId {
        let v = self.row_broadcast(m, row, |x, y| x + y);
        self.push(Op::AddRow(m, row), v)
    }

    pub fn mul_row(&mut self, m: NodeId, row: NodeId) -> NodeId {
        let v = self.row_broadcast(m, row, |x, y| x * y);
        self.push(Op::MulRow(m, row), v)
    }

    /// `x Wᵀ + b` for `x` of shape `[in]` or `[m × in]` and `W` of shape `[out × in]`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> NodeId {
        let (vx, vw) = (self.value(x), self.value(w));
        assert_eq!(vw.shape().len(), 2, "affine weight must be a matrix");
        let (out, inp) = (vw.shape()[0], vw.shape()[1]);
        assert_eq!(vx.cols(), inp, "affine input {:?} vs weight {:?}", vx.shape(), vw.shape());
        let rows = vx.rows();
        let mut data = vec![0.0; rows * out];
        let bias = b.map(|b| self.value(b).data());
        for r in 0..rows {
            let xr = vx.row(r);
            for o in 0..out {
                let wo = vw.row(o);
                let mut acc = bias.map_or(0.0, |b| b[o]);
                for i in 0..inp {
                    acc += xr[i] * wo[i];
                }
                data[r * out + o] = acc;
            }
        }
        let shape = if vx.shape().len() == 1 { vec![out] } else { vec![rows, out] };
        self.push(Op::Affine { x, w, b }, Tensor { shape, data })
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.map(x, math::tanh);
        self.push(Op::Tanh(x), v)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = self.map(x, math::sigmoid);
        self.push(Op::Sigmoid(x), v)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.map(x, |a| if a > 0.0 { a } else { 0.0 });
        self.push(Op::Relu(x), v)
    }

    /// Inverted dropout: zeroes each unit with probability `p` and scales
    /// survivors by `1/(1-p)`. Identity in eval mode or when `p == 0`.
    pub fn dropout(&mut self, x: NodeId, p: f64) -> NodeId {
        assert!((0.0..1.0).contains(&p), "dropout rate {p} outside [0, 1)");
        if self.mode == Mode::Eval || p == 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - p);
        let len = self.value(x).len();
        let mask: Vec<f64> =
            (0..len).map(|_| if self.rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
        let v = self.value(x);
        let data = v.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let t = Tensor { shape: v.shape().to_vec(), data };
        self.push(Op::Dropout { x, mask }, t)
    }

    /// Concatenates vectors end to end, or stacks row blocks (1-D inputs
    /// count as single rows) when `as_rows` is true.
    fn concat_impl(&mut self, xs: &[NodeId], as_rows: bool) -> NodeId {
        assert!(!xs.is_empty(), "concat of nothing");
        let mut data = Vec::new();
        let mut rows = 0;
        let cols = self.value(xs[0]).cols();
        for &x in xs {
            let v = self.value(x);
            if as_rows {
                assert_eq!(v.cols(), cols, "concat_rows width mismatch");
                rows += v.rows();
            }
            data.extend_from_slice(v.data());
        }
        let shape = if as_rows { vec![rows, cols] } else { vec![data.len()] };
        self.push(Op::Concat(xs.to_vec()), Tensor { shape, data })
    }

    pub fn concat(&mut self, xs: &[NodeId]) -> NodeId {
        self.concat_impl(xs, false)
    }

    pub fn concat_rows(&mut self, xs: &[NodeId]) -> NodeId {
        self.concat_impl(xs, true)
    }

    /// Side-by-side concatenation of matrices with the same row count.
    pub fn concat_cols(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty(), "concat_cols of nothing");
        let rows = self.value(xs[0]).rows();
        let total: usize = xs.iter().map(|&x| self.value(x).cols()).sum();
        let mut data = vec![0.0; rows * total];
        let mut off = 0;
        for &x in xs {
            let v = self.value(x);
            assert_eq!(v.rows(), rows, "concat_cols row mismatch");
            let c = v.cols();
            for r in 0..rows {
                data[r * total + off..r * total + off + c].copy_from_slice(v.row(r));
            }
            off += c;
        }
        self.push(Op::ConcatCols(xs.to_vec()), Tensor::matrix(rows, total, data))
    }

    fn window(&mut self, x: NodeId, offset: usize, shape: Vec<usize>) -> NodeId {
        let len = shape.iter().product::<usize>();
        let data = self.value(x).data()[offset..offset + len].to_vec();
        self.push(Op::Window { x, offset }, Tensor { shape, data })
    }

    /// Elements `start..start+len` of a vector.
    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        assert_eq!(self.value(x).shape().len(), 1, "slice expects a vector");
        self.window(x, start, vec![len])
    }

    /// Rows `start..start+len` of a matrix.
    pub fn rows(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let c = self.value(x).cols();
        assert!(start + len <= self.value(x).rows(), "row window out of range");
        self.window(x, start * c, vec![len, c])
    }

    /// Row `r` of a matrix as a vector.
    pub fn row(&mut self, x: NodeId, r: usize) -> NodeId {
        let c = self.value(x).cols();
        assert!(r < self.value(x).rows(), "row {r} out of range");
        self.window(x, r * c, vec![c])
    }

    /// Selects rows of a matrix (with repetition) into a new matrix.
    pub fn gather_rows(&mut self, x: NodeId, rows: &[usize]) -> NodeId {
        let v = self.value(x);
        let c = v.cols();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            data.extend_from_slice(v.row(r));
        }
        let t = Tensor::matrix(rows.len(), c, data);
        self.push(Op::GatherRows { x, rows: rows.to_vec() }, t)
    }

    /// Selects elements of a vector.
    pub fn gather(&mut self, x: NodeId, idx: &[usize]) -> NodeId {
        let v = self.value(x);
        assert_eq!(v.shape().len(), 1, "gather expects a vector");
        let data = idx.iter().map(|&i| v.data()[i]).collect();
        self.push(Op::GatherRows { x, rows: idx.to_vec() }, Tensor::vector(data))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> NodeId {
        let data = self.value(x).data().to_vec();
        let t = Tensor::new(shape.to_vec(), data).expect("reshape changes element count");
        self.push(Op::Reshape(x), t)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().sum();
        self.push(Op::Sum(x), Tensor::scalar(s))
    }

    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let mut out = vec![0.0; v.len()];
        math::softmax_into(v.data(), &mut out);
        let t = Tensor { shape: v.shape().to_vec(), data: out };
        self.push(Op::Softmax(x), t)
    }

    pub fn log_sum_exp(&mut self, x: NodeId) -> NodeId {
        let s = math::log_sum_exp(self.value(x).data());
        self.push(Op::LogSumExp(x), Tensor::scalar(s))
    }

    /// `Σ_m w[m] · x[m, :]`.
    pub fn weighted_row_sum(&mut self, w: NodeId, x: NodeId) -> NodeId {
        let (vw, vx) = (self.value(w), self.value(x));
        assert_eq!(vw.len(), vx.rows(), "weighted_row_sum weight/rows mismatch");
        let c = vx.cols();
        let mut out = vec![0.0; c];
        for (m, &wm) in vw.data().iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(vx.row(m)) {
                *o += wm * a;
            }
        }
        self.push(Op::WeightedRowSum { w, x }, Tensor::vector(out))
    }

    /// Records a scalar `value` computed outside the tape from `x`, together
    /// with its gradient `∂value/∂x`.
    pub fn fused_scalar(&mut self, x: NodeId, value: f64, grad: Vec<f64>, name: &'static str) -> NodeId {
        assert_eq!(grad.len(), self.value(x).len(), "fused gradient length");
        self.push(Op::Fused { x, grad, name }, Tensor::scalar(value))
    }

    /// Summed cross-entropy of each row of `logits` against its gold column.
    pub fn cross_entropy_rows(&mut self, logits: NodeId, gold: &[usize]) -> NodeId {
        let v = self.value(logits);
        let c = v.cols();
        assert_eq!(v.rows(), gold.len(), "one gold class per row");
        let mut loss = 0.0;
        let mut grad = vec![0.0; v.len()];
        for (r, &g) in gold.iter().enumerate() {
            assert!(g < c, "gold class {g} out of {c}");
            let row = v.row(r);
            let lse = math::log_sum_exp(row);
            loss += lse - row[g];
            for k in 0..c {
                grad[r * c + k] = math::exp(row[k] - lse);
            }
            grad[r * c + g] -= 1.0;
        }
        self.fused_scalar(logits, loss, grad, "cross_entropy")
    }

    /// Reverse pass from a scalar `loss`. Returns gradients for every
    /// parameter that requires one; other parameters map to `None`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, TapeError> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TapeError::NonScalarLoss(lv.shape().to_vec()));
        }
        if let Some(op) = self.non_finite {
            return Err(TapeError::NonFiniteForward(op));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if g.iter().any(|x| !x.is_finite()) {
                return Err(TapeError::NonFiniteGradient(node.op.name()));
            }
            if let Op::Param(_) = node.op {
                grads[idx] = Some(g);
                continue;
            }
            self.backward_node(idx, &g, &mut grads);
        }

        let mut out = Gradients::zeroed(self.params.len());
        for (p, node) in self.param_nodes.iter().enumerate() {
            if let Some(n) = node {
                if self.nodes[n.0].needs_grad {
                    if let Some(g) = grads[n.0].take() {
                        let shape = self.params.value(ParamId(p)).shape().to_vec();
                        out.grads[p] = Some(Tensor { shape, data: g });
                    }
                }
            }
        }
        Ok(out)
    }

    fn backward_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.as_ref().expect("non-param node has a value");
        let needs = |id: NodeId| self.nodes[id.0].needs_grad;
        macro_rules! buf {
            ($id:expr) => {
                grad_buf(grads, $id, self.value($id).len())
            };
        }
        match &node.op {
            Op::Param(_) | Op::Constant => {}
            Op::Add(a, b) => {
                for id in [*a, *b] {
                    if needs(id) {
                        let ga = buf!(id);
                        for (x, y) in ga.iter_mut().zip(g) {
                            *x += y;
                        }
                    }
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    let ga = buf!(*a);
                    for (x, y) in ga.iter_mut().zip(g) {
                        *x += y;
                    }
                }
                if needs(*b) {
                    let gb = buf!(*b);
                    for (x, y) in gb.iter_mut().zip(g) {
                        *x -= y;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if needs(*a) {
                    let ga = buf!(*a);
                    for k in 0..g.len() {
                        ga[k] += g[k] * vb[k];
                    }
                }
                if needs(*b) {
                    let gb = buf!(*b);
                    for k in 0..g.len() {
                        gb[k] += g[k] * va[k];
                    }
                }
            }
            Op::Scale(x, c) => {
                let gx = buf!(*x);
                for (a, b) in gx.iter_mut().zip(g) {
                    *a += c * b;
                }
            }
            Op::AddRow(m, r) => {
                let c = self.value(*r).len();
                if needs(*m) {
                    let gm = buf!(*m);
                    for (a, b) in gm.iter_mut().zip(g) {
                        *a += b;
                    }
                }
                if needs(*r) {
                    let gr = buf!(*r);
                    for (k, b) in g.iter().enumerate() {
                        gr[k % c] += b;
                    }
                }
            }
            Op::MulRow(m, r) => {
                let (vm, vr) = (self.value(*m).data(), self.value(*r).data());
                let c = vr.len();
                if needs(*m) {
                    let gm = buf!(*m);
                    for k in 0..g.len() {
                        gm[k] += g[k] * vr[k % c];
                    }
                }
                if needs(*r) {
                    let gr = buf!(*r);
                    for k in 0..g.len() {
                        gr[k % c] += g[k] * vm[k];
                    }
                }
            }
            Op::Affine { x, w, b } => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let (outd, inp) = (vw.shape()[0], vw.shape()[1]);
                let rows = vx.rows();
                if needs(*x) {
                    let gx = buf!(*x);
                    for r in 0..rows {
                        for o in 0..outd {
                            let go = g[r * outd + o];
                            if go == 0.0 {
                                continue;
                            }
                            let wo = vw.row(o);
                            let gxr = &mut gx[r * inp..(r + 1) * inp];
                            for i in 0..inp {
                                gxr[i] += go * wo[i];
                            }
                        }
                    }
                }
                if needs(*w) {
                    let gw = buf!(*w);
                    for r in 0..rows {
                        let xr = vx.row(r);
                        for o in 0..outd {
                            let go = g[r * outd + o];
                            if go == 0.0 {
                                continue;
                            }
                            let gwo = &mut gw[o * inp..(o + 1) * inp];
                            for i in 0..inp {
                                gwo[i] += go * xr[i];
                            }
                        }
                    }
                }
                if let Some(b) = b {
                    if needs(*b) {
                        let gb = buf!(*b);
                        for r in 0..rows {
                            for o in 0..outd {
                                gb[o] += g[r * outd + o];
                            }
                        }
                    }
                }
            }
            Op::Tanh(x) => {
                let gx = buf!(*x);
                for (k, y) in out.data().iter().enumerate() {
                    gx[k] += g[k] * (1.0 - y * y);
                }
            }
            Op::Sigmoid(x) => {
                let gx = buf!(*x);
                for (k, y) in out.data().iter().enumerate() {
                    gx[k] += g[k] * y * (1.0 - y);
                }
            }
            Op::Relu(x) => {
                let vx = self.value(*x).data();
                let gx = buf!(*x);
                for k in 0..g.len() {
                    if vx[k] > 0.0 {
                        gx[k] += g[k];
                    }
                }
            }
            Op::Dropout { x, mask } => {
                let gx = buf!(*x);
                for k in 0..g.len() {
                    gx[k] += g[k] * mask[k];
                }
            }
            Op::Concat(xs) => {
                let mut off = 0;
                for &x in xs {
                    let len = self.value(x).len();
                    if needs(x) {
                        let gx = buf!(x);
                        for (a, b) in gx.iter_mut().zip(&g[off..off + len]) {
                            *a += b;
                        }
                    }
                    off += len;
                }
            }
            Op::ConcatCols(xs) => {
                let total = out.cols();
                let mut off = 0;
                for &x in xs {
                    let v = self.value(x);
                    let c = v.cols();
                    if needs(x) {
                        let gx = buf!(x);
                        for r in 0..v.rows() {
                            for k in 0..c {
                                gx[r * c + k] += g[r * total + off + k];
                            }
                        }
                    }
                    off += c;
                }
            }
            Op::Window { x, offset } => {
                let gx = buf!(*x);
                for (a, b) in gx[*offset..*offset + g.len()].iter_mut().zip(g) {
                    *a += b;
                }
            }
            Op::GatherRows { x, rows } => {
                let c = if self.value(*x).shape().len() == 1 { 1 } else { self.value(*x).cols() };
                let gx = buf!(*x);
                for (k, &r) in rows.iter().enumerate() {
                    for j in 0..c {
                        gx[r * c + j] += g[k * c + j];
                    }
                }
            }
            Op::Reshape(x) => {
                let gx = buf!(*x);
                for (a, b) in gx.iter_mut().zip(g) {
                    *a += b;
                }
            }
            Op::Sum(x) => {
                let gx = buf!(*x);
                for a in gx.iter_mut() {
                    *a += g[0];
                }
            }
            Op::Softmax(x) => {
                let y = out.data();
                let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                let gx = buf!(*x);
                for k in 0..y.len() {
                    gx[k] += y[k] * (g[k] - dot);
                }
            }
            Op::LogSumExp(x) => {
                let vx = self.value(*x).data();
                let lse = out.data()[0];
                let gx = buf!(*x);
                for k in 0..vx.len() {
                    gx[k] += g[0] * math::exp(vx[k] - lse);
                }
            }
            Op::WeightedRowSum { w, x } => {
                let (vw, vx) = (self.value(*w), self.value(*x));
                let c = vx.cols();
                if needs(*w) {
                    let gw = buf!(*w);
                    for m in 0..vw.len() {
                        gw[m] += vx.row(m).iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                if needs(*x) {
                    let gx = buf!(*x);
                    for (m, &wm) in vw.data().iter().enumerate() {
                        for k in 0..c {
                            gx[m * c + k] += wm * g[k];
                        }
                    }
                }
            }
            Op::Fused { x, grad, .. } => {
                let gx = buf!(*x);
                for (a, b) in gx.iter_mut().zip(grad) {
                    *a += g[0] * b;
                }
            }
        }
    }
}

/// Gradient buffer of `id`, allocated on first use.
fn grad_buf(grads: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut Vec<f64> {
    grads[id.0].get_or_insert_with(|| vec![0.0; len])
}

/// Per-parameter gradients, indexed like the [`ParamStore`] they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn zeroed(len: usize) -> Self {
        Gradients { grads: (0..len).map(|_| None).collect() }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn set(&mut self, id: ParamId, grad: Tensor) {
        self.grads[id.0] = Some(grad);
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.iter().all(Option::is_none)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().enumerate().filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Tensor)> {
        self.grads.iter_mut().enumerate().filter_map(|(i, g)| g.as_mut().map(|g| (ParamId(i), g)))
    }

    /// Adds `other` into `self`, scaled by `weight`.
    pub fn accumulate(&mut self, other: &Gradients, weight: f64) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            let Some(t) = theirs else { continue };
            match mine {
                Some(m) => {
                    for (a, b) in m.data_mut().iter_mut().zip(t.data()) {
                        *a += weight * b;
                    }
                }
                None => {
                    let mut t = t.clone();
                    if weight != 1.0 {
                        t.data_mut().iter_mut().for_each(|a| *a *= weight);
                    }
                    *mine = Some(t);
                }
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        math::sqrt(self.iter().map(|(_, g)| g.squared_norm()).sum())
    }
}

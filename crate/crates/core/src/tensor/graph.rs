use super::kernels;
use super::{Scalar, Tensor};
use crate::error::TensorError;

/// Index of a node in a [`Graph`]. Inputs of node `i` always have ids `< i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    LeakyRelu(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Log(NodeId),
    LogSoftmax(NodeId),
    Softmax(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SumRows(NodeId),
    ConcatCols(Vec<NodeId>),
    SliceCols { x: NodeId, start: usize },
    Reshape(NodeId),
    ClampMin(NodeId, f64),
    StraightThrough(NodeId),
    SelectCols(NodeId, Vec<usize>),
    BceWithLogits(NodeId, Vec<T>),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::LogSoftmax(..) => "log_softmax",
            Op::Softmax(..) => "softmax",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumRows(..) => "sum_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols { .. } => "slice_cols",
            Op::Reshape(..) => "reshape",
            Op::ClampMin(..) => "clamp_min",
            Op::StraightThrough(..) => "straight_through",
            Op::SelectCols(..) => "select_cols",
            Op::BceWithLogits(..) => "bce_with_logits",
        }
    }
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Append-only operation tape.
///
/// Shape mismatches inside primitive ops are programming errors and panic;
/// the layer-level helpers in `nn` validate shapes first and return
/// [`TensorError::Dimension`]. In checked mode (the default) the first
/// non-finite value is recorded and reported by [`Graph::backward`].
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    checked: bool,
    non_finite: Option<TensorError>,
    record: Option<ReplayTape<T>>,
    replay: Option<ReplayTape<T>>,
    st_count: usize,
    detach_count: usize,
}

/// Values recorded while building a graph that, replayed into a rebuild of
/// the same graph, make its output a smooth function of the parameters with
/// every stop-gradient held constant. This is what finite-difference checks
/// of losses with sampled latents or detached terms need.
#[derive(Clone, Debug, Default)]
pub struct ReplayTape<T: Scalar = f32> {
    /// `sample − probs` of every straight-through node, in creation order.
    pub st_offsets: Vec<Tensor<T>>,
    /// Value of every detached node, in creation order.
    pub detached: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward pass, indexed by node.
pub struct Gradients<T: Scalar = f32> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `id`, or zeros of the node's shape if nothing flowed into it.
    pub fn get_or_zeros(&self, id: NodeId) -> Tensor<T> {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[id.0]))
    }

    pub fn collect(&self, ids: &[NodeId]) -> Vec<Tensor<T>> {
        ids.iter().map(|&id| self.get_or_zeros(id)).collect()
    }
}

fn zip_map<T: Scalar>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            checked: true,
            non_finite: None,
            record: None,
            replay: None,
            st_count: 0,
            detach_count: 0,
        }
    }

    /// A graph that keeps a [`ReplayTape`] of its straight-through offsets
    /// and detached values.
    pub fn recording() -> Self {
        Self {
            record: Some(ReplayTape::default()),
            ..Self::new()
        }
    }

    /// A graph whose straight-through nodes output `probs + offset` and
    /// whose detached nodes output the taped values, in creation order.
    pub fn replaying(tape: ReplayTape<T>) -> Self {
        Self {
            replay: Some(tape),
            ..Self::new()
        }
    }

    pub fn tape(&self) -> Option<&ReplayTape<T>> {
        self.record.as_ref()
    }

    /// A graph that skips the per-node finiteness scan.
    pub fn unchecked() -> Self {
        Self {
            checked: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// First non-finite value seen so far, if any.
    pub fn health(&self) -> Result<(), TensorError> {
        match &self.non_finite {
            Some(e) => Err(e.clone()),
            None => Ok(()),
        }
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> NodeId {
        let id = self.nodes.len();
        if self.checked && self.non_finite.is_none() && !value.is_finite() {
            self.non_finite = Some(TensorError::NonFinite {
                op: op.name(),
                node: id,
            });
        }
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(id)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i.0].requires_grad)
    }

    /// Leaf that never receives gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> NodeId {
        self.push(Op::Leaf, t, false)
    }

    /// Leaf that accumulates gradient.
    pub fn param(&mut self, t: Tensor<T>) -> NodeId {
        self.push(Op::Leaf, t, true)
    }

    /// Copies a node's value into a gradient-blocking constant.
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let k = self.detach_count;
        self.detach_count += 1;
        let v = match self.replay.as_ref().and_then(|r| r.detached.get(k)) {
            Some(v) => {
                assert_eq!(v.shape(), self.shape(x), "replayed detach shape");
                v.clone()
            }
            None => self.value(x).clone(),
        };
        if let Some(r) = self.record.as_mut() {
            r.detached.push(v.clone());
        }
        self.constant(v)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(
            sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0],
            "matmul shape mismatch {sa:?} x {sb:?}"
        );
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(&[a, b]);
        self.push(Op::MatMul(a, b), Tensor::from_parts(vec![m, n], out), rg)
    }

    /// Adds a `[n]` bias to every row of an `[m, n]` matrix.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> NodeId {
        let (sx, sb) = (self.shape(x), self.shape(b));
        assert!(
            sx.len() == 2 && sb.len() == 1 && sx[1] == sb[0],
            "add_bias shape mismatch {sx:?} + {sb:?}"
        );
        let mut v = self.value(x).clone();
        kernels::add_bias(v.data_mut(), self.value(b).data());
        let rg = self.rg(&[x, b]);
        self.push(Op::AddBias(x, b), v, rg)
    }

    fn binary(&mut self, a: NodeId, b: NodeId, op: Op<T>, f: impl Fn(T, T) -> T) -> NodeId {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{} shape mismatch",
            op.name()
        );
        let data = zip_map(self.value(a).data(), self.value(b).data(), f);
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        self.push(op, Tensor::from_parts(shape, data), rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    fn unary(&mut self, x: NodeId, op: Op<T>, f: impl Fn(T) -> T) -> NodeId {
        let v = self.value(x);
        let data = v.data().iter().map(|&e| f(e)).collect();
        let t = Tensor::from_parts(v.shape().to_vec(), data);
        let rg = self.rg(&[x]);
        self.push(op, t, rg)
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> NodeId {
        let kk = T::of(k);
        self.unary(x, Op::Scale(x, k), |e| e * kk)
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let cc = T::of(c);
        self.unary(x, Op::AddScalar(x), |e| e + cc)
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: NodeId) -> NodeId {
        let n = self.neg(x);
        self.add_scalar(n, 1.0)
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        self.unary(x, Op::LeakyRelu(x, slope), |e| kernels::leaky_relu(e, slope))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Tanh(x), |e| e.tanh())
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Sigmoid(x), kernels::sigmoid)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Exp(x), |e| e.exp())
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Log(x), |e| e.ln())
    }

    /// Row-wise log-softmax over the last dimension.
    pub fn log_softmax(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let data = kernels::log_softmax_rows(v.data(), v.cols());
        let t = Tensor::from_parts(v.shape().to_vec(), data);
        let rg = self.rg(&[x]);
        self.push(Op::LogSoftmax(x), t, rg)
    }

    /// Row-wise softmax over the last dimension.
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let data = kernels::softmax_rows(v.data(), v.cols());
        let t = Tensor::from_parts(v.shape().to_vec(), data);
        let rg = self.rg(&[x]);
        self.push(Op::Softmax(x), t, rg)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).sum_f64();
        let rg = self.rg(&[x]);
        self.push(Op::Sum(x), Tensor::scalar(T::of(s)), rg)
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let s = v.sum_f64() / v.len() as f64;
        let rg = self.rg(&[x]);
        self.push(Op::Mean(x), Tensor::scalar(T::of(s)), rg)
    }

    /// `[.., n] -> [rows]`, summing the last dimension.
    pub fn sum_rows(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let data: Vec<T> = v
            .data()
            .chunks(v.cols())
            .map(|r| T::of(r.iter().map(|e| e.as_f64()).sum()))
            .collect();
        let rg = self.rg(&[x]);
        self.push(Op::SumRows(x), Tensor::vector(data), rg)
    }

    pub fn concat_cols(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty(), "concat_cols of nothing");
        let m = self.shape(xs[0])[0];
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            assert!(
                s.len() == 2 && s[0] == m,
                "concat_cols row mismatch: {s:?} vs {m} rows"
            );
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&x, &w) in xs.iter().zip(&widths) {
                data.extend_from_slice(&self.value(x).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = self.rg(xs);
        self.push(
            Op::ConcatCols(xs.to_vec()),
            Tensor::from_parts(vec![m, total], data),
            rg,
        )
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let s = self.shape(x);
        assert!(
            s.len() == 2 && start + len <= s[1] && len > 0,
            "slice_cols {start}+{len} out of range for {s:?}"
        );
        let (m, n) = (s[0], s[1]);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&src[i * n + start..i * n + start + len]);
        }
        let rg = self.rg(&[x]);
        self.push(
            Op::SliceCols { x, start },
            Tensor::from_parts(vec![m, len], data),
            rg,
        )
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> NodeId {
        let t = self
            .value(x)
            .reshape(shape)
            .unwrap_or_else(|e| panic!("reshape: {e}"));
        let rg = self.rg(&[x]);
        self.push(Op::Reshape(x), t, rg)
    }

    /// Elementwise `max(x, floor)`; no gradient where the floor is active.
    pub fn clamp_min(&mut self, x: NodeId, floor: f64) -> NodeId {
        let f = T::of(floor);
        self.unary(x, Op::ClampMin(x, floor), |e| if e > f { e } else { f })
    }

    /// Forward value is `sample`; backward routes the gradient to `probs`.
    /// A replaying graph uses `probs + offset` instead.
    pub fn straight_through(&mut self, probs: NodeId, sample: Tensor<T>) -> NodeId {
        assert_eq!(self.shape(probs), sample.shape(), "straight_through shape");
        let k = self.st_count;
        self.st_count += 1;
        let p = self.value(probs);
        let value = match self.replay.as_ref().and_then(|r| r.st_offsets.get(k)) {
            Some(o) => {
                assert_eq!(o.shape(), sample.shape(), "replayed offset shape");
                Tensor::new(sample.shape().to_vec(), zip_map(p.data(), o.data(), |a, b| a + b)).expect("same shape")
            }
            None => sample,
        };
        if self.record.is_some() {
            let o = zip_map(value.data(), self.value(probs).data(), |a, b| a - b);
            let o = Tensor::new(value.shape().to_vec(), o).expect("same shape");
            self.record.as_mut().expect("recording").st_offsets.push(o);
        }
        let rg = self.rg(&[probs]);
        self.push(Op::StraightThrough(probs), value, rg)
    }

    /// `out[i] = x[i, idx[i]]`.
    pub fn select_cols(&mut self, x: NodeId, idx: &[usize]) -> NodeId {
        let v = self.value(x);
        let (m, n) = (v.rows(), v.cols());
        assert_eq!(idx.len(), m, "select_cols needs one index per row");
        let data = idx
            .iter()
            .enumerate()
            .map(|(i, &j)| {
                assert!(j < n, "select_cols index {j} out of range {n}");
                v.data()[i * n + j]
            })
            .collect();
        let rg = self.rg(&[x]);
        self.push(Op::SelectCols(x, idx.to_vec()), Tensor::vector(data), rg)
    }

    /// Elementwise Bernoulli negative log-likelihood of `targets` under
    /// `sigmoid(logits)`.
    pub fn bce_with_logits(&mut self, logits: NodeId, targets: &[T]) -> NodeId {
        let v = self.value(logits);
        assert_eq!(v.len(), targets.len(), "bce_with_logits target length");
        let data = v
            .data()
            .iter()
            .zip(targets)
            .map(|(&x, &y)| {
                let x = x.as_f64();
                T::of(kernels::softplus(x) - y.as_f64() * x)
            })
            .collect();
        let t = Tensor::from_parts(v.shape().to_vec(), data);
        let rg = self.rg(&[logits]);
        self.push(Op::BceWithLogits(logits, targets.to_vec()), t, rg)
    }

    /// Reverse pass from a scalar node. Visits nodes `loss, loss-1, .., 0`
    /// once each, in a fixed order, so repeated calls are bit-identical.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>, TensorError> {
        self.health()?;
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NotScalar(lv.shape().to_vec()));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(lv.shape(), T::one()));

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(acc) => {
                for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a = *a + b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = g.data();
        let y = &node.value;
        let like = |id: NodeId, data: Vec<T>| {
            Tensor::from_parts(self.nodes[id.0].value.shape().to_vec(), data)
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, nn) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if self.requires_grad(*a) {
                    let da = kernels::matmul_a_bt(gd, vb.data(), m, k, nn);
                    self.accumulate(grads, *a, like(*a, da));
                }
                if self.requires_grad(*b) {
                    let db = kernels::matmul_at_b(va.data(), gd, m, k, nn);
                    self.accumulate(grads, *b, like(*b, db));
                }
            }
            Op::AddBias(x, b) => {
                self.accumulate(grads, *x, g.clone());
                if self.requires_grad(*b) {
                    let nb = self.value(*b).len();
                    let mut acc = vec![0.0f64; nb];
                    for row in gd.chunks(nb) {
                        for (a, &v) in acc.iter_mut().zip(row) {
                            *a += v.as_f64();
                        }
                    }
                    self.accumulate(grads, *b, like(*b, acc.into_iter().map(T::of).collect()));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, like(*b, gd.iter().map(|&v| -v).collect()));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, like(*a, zip_map(gd, vb, |g, y| g * y)));
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, like(*b, zip_map(gd, va, |g, x| g * x)));
                }
            }
            Op::Scale(x, k) => {
                let kk = T::of(*k);
                self.accumulate(grads, *x, like(*x, gd.iter().map(|&v| v * kk).collect()));
            }
            Op::AddScalar(x) => self.accumulate(grads, *x, g.clone()),
            Op::LeakyRelu(x, s) => {
                let xs = self.value(*x).data();
                let s = T::of(*s);
                let d = zip_map(gd, xs, |g, x| if x > T::zero() { g } else { g * s });
                self.accumulate(grads, *x, like(*x, d));
            }
            Op::Tanh(x) => {
                let d = zip_map(gd, y.data(), |g, y| g * (T::one() - y * y));
                self.accumulate(grads, *x, like(*x, d));
            }
            Op::Sigmoid(x) => {
                let d = zip_map(gd, y.data(), |g, y| g * y * (T::one() - y));
                self.accumulate(grads, *x, like(*x, d));
            }
            Op::Exp(x) => {
                let d = zip_map(gd, y.data(), |g, y| g * y);
                self.accumulate(grads, *x, like(*x, d));
            }
            Op::Log(x) => {
                let d = zip_map(gd, self.value(*x).data(), |g, x| g / x);
                self.accumulate(grads, *x, like(*x, d));
            }
            Op::LogSoftmax(x) => {
                let cols = y.cols();
                let mut d = Vec::with_capacity(gd.len());
                for (grow, yrow) in gd.chunks(cols).zip(y.data().chunks(cols)) {
                    let gs: f64 = grow.iter().map(|v| v.as_f64()).sum();
                    d.extend(
                        grow.iter()
                            .zip(yrow)
                            .map(|(&g, &ly)| T::of(g.as_f64() - ly.as_f64().exp() * gs)),
                    );
                }
                self.accumulate(grads, *x, like(*x, d));
            }
            Op::Softmax(x) => {
                let cols = y.cols();
                let mut d = Vec::with_capacity(gd.len());
                for (grow, yrow) in gd.chunks(cols).zip(y.data().chunks(cols)) {
                    let dot: f64 = grow
                        .iter()
                        .zip(yrow)
                        .map(|(&g, &p)| g.as_f64() * p.as_f64())
                        .sum();
                    d.extend(
                        grow.iter()
                            .zip(yrow)
                            .map(|(&g, &p)| T::of(p.as_f64() * (g.as_f64() - dot))),
                    );
                }
                self.accumulate(grads, *x, like(*x, d));
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, like(*x, vec![gd[0]; n]));
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                let v = T::of(gd[0].as_f64() / n as f64);
                self.accumulate(grads, *x, like(*x, vec![v; n]));
            }
            Op::SumRows(x) => {
                let cols = self.value(*x).cols();
                let d = gd.iter().flat_map(|&v| std::iter::repeat_n(v, cols)).collect();
                self.accumulate(grads, *x, like(*x, d));
            }
            Op::ConcatCols(xs) => {
                let m = y.shape()[0];
                let total = y.shape()[1];
                let mut off = 0;
                for &x in xs {
                    let w = self.shape(x)[1];
                    if self.requires_grad(x) {
                        let mut d = Vec::with_capacity(m * w);
                        for i in 0..m {
                            d.extend_from_slice(&gd[i * total + off..i * total + off + w]);
                        }
                        self.accumulate(grads, x, like(x, d));
                    }
                    off += w;
                }
            }
            Op::SliceCols { x, start } => {
                let s = self.shape(*x);
                let (m, n) = (s[0], s[1]);
                let len = y.shape()[1];
                let mut d = vec![T::zero(); m * n];
                for i in 0..m {
                    d[i * n + start..i * n + start + len]
                        .copy_from_slice(&gd[i * len..(i + 1) * len]);
                }
                self.accumulate(grads, *x, like(*x, d));
            }
            Op::Reshape(x) => self.accumulate(grads, *x, like(*x, gd.to_vec())),
            Op::ClampMin(x, f) => {
                let f = T::of(*f);
                let d = zip_map(gd, self.value(*x).data(), |g, x| {
                    if x > f {
                        g
                    } else {
                        T::zero()
                    }
                });
                self.accumulate(grads, *x, like(*x, d));
            }
            Op::StraightThrough(p) => self.accumulate(grads, *p, like(*p, gd.to_vec())),
            Op::SelectCols(x, idx) => {
                let v = self.value(*x);
                let n = v.cols();
                let mut d = vec![T::zero(); v.len()];
                for (i, (&j, &gv)) in idx.iter().zip(gd).enumerate() {
                    d[i * n + j] = gv;
                }
                self.accumulate(grads, *x, like(*x, d));
            }
            Op::BceWithLogits(x, targets) => {
                let xs = self.value(*x).data();
                let d = gd
                    .iter()
                    .zip(xs)
                    .zip(targets)
                    .map(|((&g, &x), &t)| g * (kernels::sigmoid(x) - t))
                    .collect();
                self.accumulate(grads, *x, like(*x, d));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    /// Central differences of `f` around every entry of `x0`.
    fn numeric_grad(x0: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> f64) -> Vec<f64> {
        let h = 1e-6;
        (0..x0.len())
            .map(|i| {
                let mut xp = x0.clone();
                xp.data_mut()[i] += h;
                let mut xm = x0.clone();
                xm.data_mut()[i] -= h;
                (f(&xp) - f(&xm)) / (2.0 * h)
            })
            .collect()
    }

    fn check_unary(build: impl Fn(&mut Graph<f64>, NodeId) -> NodeId, x0: Tensor<f64>) {
        let eval = |x: &Tensor<f64>| {
            let mut g = Graph::new();
            let xi = g.param(x.clone());
            let y = build(&mut g, xi);
            // weight outputs so the loss is not permutation symmetric
            let w = Tensor::new(
                g.shape(y).to_vec(),
                (0..g.value(y).len()).map(|i| 0.3 + 0.1 * i as f64).collect(),
            )
            .unwrap();
            let wi = g.constant(w);
            let p = g.mul(y, wi);
            let s = g.sum(p);
            (g, xi, s)
        };
        let (g, xi, s) = eval(&x0);
        let grads = g.backward(s).unwrap();
        let analytic = grads.get_or_zeros(xi);
        let numeric = numeric_grad(&x0, |x| eval(x).0.value(eval(x).2).item());
        for (a, n) in analytic.data().iter().zip(&numeric) {
            assert!((a - n).abs() < 1e-6 * (1.0 + n.abs()), "{a} vs {n}");
        }
    }

    #[test]
    fn elementwise_backward_rules() {
        let x = t(&[2, 3], &[0.3, -0.7, 1.2, -0.1, 0.5, 2.0]);
        check_unary(|g, x| g.tanh(x), x.clone());
        check_unary(|g, x| g.sigmoid(x), x.clone());
        check_unary(|g, x| g.exp(x), x.clone());
        check_unary(|g, x| g.leaky_relu(x, 0.01), x.clone());
        check_unary(|g, x| g.log_softmax(x), x.clone());
        check_unary(|g, x| g.softmax(x), x.clone());
        check_unary(|g, x| g.sum_rows(x), x.clone());
        check_unary(|g, x| g.slice_cols(x, 1, 2), x.clone());
        check_unary(|g, x| g.one_minus(x), x.clone());
        check_unary(|g, x| g.mean(x), x.clone());
        check_unary(|g, x| g.select_cols(x, &[2, 0]), x.clone());
        check_unary(|g, x| g.bce_with_logits(x, &[1.0, 0.0, 0.3, 1.0, 0.0, 0.5]), x.clone());
        check_unary(
            |g, x| {
                let y = g.mul(x, x);
                g.reshape(y, &[3, 2])
            },
            x.clone(),
        );
        check_unary(
            |g, x| {
                let e = g.exp(x);
                g.log(e)
            },
            x,
        );
    }

    #[test]
    fn matmul_and_bias_backward() {
        let b = t(&[3, 2], &[0.1, -0.2, 0.4, 0.3, -0.5, 0.9]);
        let bias = t(&[2], &[0.05, -0.07]);
        check_unary(
            |g, x| {
                let bi = g.constant(b.clone());
                let y = g.matmul(x, bi);
                let c = g.constant(bias.clone());
                g.add_bias(y, c)
            },
            t(&[2, 3], &[0.3, -0.7, 1.2, -0.1, 0.5, 2.0]),
        );
        let a = t(&[2, 3], &[0.3, -0.7, 1.2, -0.1, 0.5, 2.0]);
        check_unary(
            |g, w| {
                let ai = g.constant(a.clone());
                g.matmul(ai, w)
            },
            b.clone(),
        );
        check_unary(
            |g, bb| {
                let ai = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
                g.add_bias(ai, bb)
            },
            bias,
        );
    }

    #[test]
    fn concat_routes_gradients() {
        check_unary(
            |g, x| {
                let c = g.constant(t(&[2, 1], &[7.0, 8.0]));
                let s = g.tanh(x);
                g.concat_cols(&[c, x, s])
            },
            t(&[2, 2], &[0.1, 0.2, 0.3, 0.4]),
        );
    }

    #[test]
    fn clamp_min_blocks_gradient_below_floor() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[3], &[0.5, 2.0, -1.0]));
        let c = g.clamp_min(x, 1.0);
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 1.0]);
        let s = g.sum(c);
        let gr = g.backward(s).unwrap();
        assert_eq!(gr.get(x).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn detach_stops_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[2], &[0.5, 2.0]));
        let d = g.detach(x);
        let y = g.mul(x, d);
        let s = g.sum(y);
        let gr = g.backward(s).unwrap();
        // d/dx (x * const) = const
        assert_eq!(gr.get(x).unwrap().data(), &[0.5, 2.0]);
    }

    #[test]
    fn replay_holds_detached_values_and_sample_offsets() {
        let build = |g: &mut Graph<f64>, x0: f64| {
            let x = g.param(t(&[2], &[x0, 0.25]));
            let d = g.detach(x);
            let st = g.straight_through(x, t(&[2], &[1.0, 0.0]));
            let y = g.mul(d, st);
            g.sum(y)
        };
        let mut g = Graph::recording();
        build(&mut g, 0.5);
        let tape = g.tape().unwrap().clone();
        assert_eq!(tape.detached[0].data(), &[0.5, 0.25]);
        assert_eq!(tape.st_offsets[0].data(), &[0.5, -0.25]);
        let mut r = Graph::replaying(tape);
        let s = build(&mut r, 0.75);
        // detached side stays at 0.5, sample becomes 0.75 + 0.5
        assert_eq!(r.value(s).item(), 0.5 * 1.25 + 0.25 * 0.0);
    }

    #[test]
    fn checked_mode_rejects_non_finite() {
        let mut g = Graph::<f32>::new();
        let x = g.param(Tensor::vector(vec![-1.0f32]));
        let l = g.log(x);
        let s = g.sum(l);
        assert!(matches!(g.backward(s), Err(TensorError::NonFinite { op: "log", .. })));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::<f32>::new();
        let x = g.param(Tensor::vector(vec![1.0f32, 2.0]));
        assert!(matches!(g.backward(x), Err(TensorError::NotScalar(_))));
    }

    #[test]
    fn backward_is_deterministic() {
        let mut g = Graph::<f32>::new();
        let x = g.param(Tensor::from_rows(&[vec![0.1f32, 0.2, 0.3], vec![0.4, 0.5, 0.6]]).unwrap());
        let w = g.param(Tensor::from_rows(&[vec![0.3f32], vec![-0.1], vec![0.7]]).unwrap());
        let y = g.matmul(x, w);
        let z = g.tanh(y);
        let s = g.sum(z);
        let a = g.backward(s).unwrap();
        let b = g.backward(s).unwrap();
        for id in [x, w] {
            let (ga, gb) = (a.get(id).unwrap(), b.get(id).unwrap());
            assert!(ga.data().iter().zip(gb.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }
}

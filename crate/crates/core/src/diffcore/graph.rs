//! Tape of primitive ops with a reverse-mode sweep.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order. [`Graph::backward_with`] walks it once in reverse,
//! touching only nodes that received an upstream gradient.

use super::params::{ParamId, ParamSet};
use super::tensor::{log_sum_exp, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<S> {
    Input,
    Param,
    Affine { x: NodeId, w: NodeId, b: NodeId },
    Relu(NodeId),
    Elu { x: NodeId, alpha: S },
    HardTanh { x: NodeId, lo: S, hi: S },
    Sigmoid(NodeId),
    Tanh(NodeId),
    Concat(Vec<NodeId>),
    LogSoftmax(NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Pick { x: NodeId, index: usize },
    Sum(NodeId),
    Scale { x: NodeId, factor: S },
}

#[derive(Clone, Debug)]
struct Node<S> {
    op: Op<S>,
    value: Tensor<S>,
}

/// Gradients produced by one backward sweep.
#[derive(Clone, Debug)]
pub struct Gradients<S> {
    params: Vec<Tensor<S>>,
    nodes: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Zero gradients shaped like `params`.
    pub fn zeros_like(params: &ParamSet<S>) -> Self {
        Self {
            params: params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect(),
            nodes: Vec::new(),
        }
    }

    pub fn param(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.index()]
    }

    pub fn params(&self) -> &[Tensor<S>] {
        &self.params
    }

    /// Gradient that reached `node`, if any did.
    pub fn node(&self, node: NodeId) -> Option<&Tensor<S>> {
        self.nodes.get(node.0).and_then(Option::as_ref)
    }

    /// `self.params += alpha * other.params`; node gradients are dropped.
    pub fn accumulate(&mut self, other: &Gradients<S>, alpha: S) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            a.axpy(alpha, b);
        }
    }

    pub fn norm(&self) -> S {
        self.params
            .iter()
            .map(|t| t.data().iter().map(|&x| x * x).sum::<S>())
            .sum::<S>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(Tensor::all_finite)
    }
}

/// Recorded forward computation.
#[derive(Clone, Debug)]
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
    param_nodes: Vec<Option<NodeId>>,
    param_shapes: Vec<Vec<usize>>,
    consumed: bool,
}

fn dim_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

impl<S: Scalar> Graph<S> {
    /// Empty graph able to reference the tensors of `params`.
    pub fn new(params: &ParamSet<S>) -> Self {
        Self {
            nodes: Vec::with_capacity(64),
            param_nodes: vec![None; params.len()],
            param_shapes: params.shapes(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, node: NodeId) -> &Tensor<S> {
        &self.nodes[node.0].value
    }

    fn push(&mut self, op: Op<S>, value: Tensor<S>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant leaf. Gradients reaching it are reported but not applied.
    pub fn input(&mut self, value: Tensor<S>) -> NodeId {
        self.push(Op::Input, value)
    }

    /// Leaf bound to a parameter; repeated calls reuse one node.
    pub fn param(&mut self, params: &ParamSet<S>, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes[id.index()] {
            return n;
        }
        let n = self.push(Op::Param, params.get(id).clone());
        self.param_nodes[id.index()] = Some(n);
        n
    }

    /// `W x + b`
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if wv.shape().len() != 2 || !xv.is_vector() || wv.cols() != xv.len() {
            return Err(dim_err("affine", wv.shape(), xv.shape()));
        }
        if !bv.is_vector() || bv.len() != wv.rows() {
            return Err(dim_err("affine", wv.shape(), bv.shape()));
        }
        let (m, n) = (wv.rows(), wv.cols());
        let (wd, xd) = (wv.data(), xv.data());
        let mut out = bv.data().to_vec();
        for (i, o) in out.iter_mut().enumerate() {
            let row = &wd[i * n..(i + 1) * n];
            let mut acc = S::zero();
            for (a, b) in row.iter().zip(xd) {
                acc += *a * *b;
            }
            *o += acc;
        }
        debug_assert_eq!(out.len(), m);
        Ok(self.push(Op::Affine { x, w, b }, Tensor::vector(out)))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|a| a.max(S::zero()));
        self.push(Op::Relu(x), v)
    }

    /// `x` for `x >= 0`, else `alpha (e^x - 1)`.
    pub fn elu(&mut self, x: NodeId, alpha: S) -> NodeId {
        let v = self.value(x).map(|a| elu(a, alpha));
        self.push(Op::Elu { x, alpha }, v)
    }

    /// Clamp into `[lo, hi]`; zero gradient at and beyond the limits.
    pub fn hardtanh(&mut self, x: NodeId, lo: S, hi: S) -> NodeId {
        let v = self.value(x).map(|a| a.max(lo).min(hi));
        self.push(Op::HardTanh { x, lo, hi }, v)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(sigmoid);
        self.push(Op::Sigmoid(x), v)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(S::tanh);
        self.push(Op::Tanh(x), v)
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let mut out = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if !v.is_vector() {
                return Err(dim_err("concat", v.shape(), &[]));
            }
            out.extend_from_slice(v.data());
        }
        Ok(self.push(Op::Concat(parts.to_vec()), Tensor::vector(out)))
    }

    /// `x - logsumexp(x)`
    pub fn log_softmax(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let lse = log_sum_exp(xv.data());
        let v = xv.map(|a| a - lse);
        self.push(Op::LogSoftmax(x), v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(dim_err("add", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(Op::Add(a, b), t))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(dim_err("mul", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(Op::Mul(a, b), t))
    }

    /// Scalar node holding `x[index]`.
    pub fn pick(&mut self, x: NodeId, index: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if index >= xv.len() {
            return Err(dim_err("pick", xv.shape(), &[index]));
        }
        let v = Tensor::scalar(xv.data()[index]);
        Ok(self.push(Op::Pick { x, index }, v))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(Op::Sum(x), v)
    }

    pub fn scale(&mut self, x: NodeId, factor: S) -> NodeId {
        let v = self.value(x).map(|a| a * factor);
        self.push(Op::Scale { x, factor }, v)
    }

    /// Backward from a scalar loss node.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients<S>> {
        let shape = self.value(loss).shape().to_vec();
        if self.value(loss).len() != 1 {
            return Err(Error::NotScalar(shape));
        }
        self.backward_with(&[(loss, Tensor::filled(&shape, S::one()))])
    }

    /// Backward with explicit upstream gradients injected at arbitrary nodes.
    ///
    /// Seeds at the same node add up. May be called once per recorded graph.
    pub fn backward_with(&mut self, seeds: &[(NodeId, Tensor<S>)]) -> Result<Gradients<S>> {
        if self.consumed {
            return Err(Error::StaleGraph);
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor<S>>> = vec![None; self.nodes.len()];
        for (node, g) in seeds {
            let shape = self.nodes[node.0].value.shape();
            if g.shape() != shape {
                return Err(dim_err("backward seed", shape, g.shape()));
            }
            add_into(&mut grads[node.0], g);
        }

        for i in (0..self.nodes.len()).rev() {
            let Some(dy) = grads[i].take() else { continue };
            self.propagate(i, &dy, &mut grads);
            grads[i] = Some(dy);
        }

        let mut params: Vec<Tensor<S>> =
            self.param_shapes.iter().map(|s| Tensor::zeros(s)).collect();
        for (pid, node) in self.param_nodes.iter().enumerate() {
            if let Some(n) = node {
                if let Some(g) = &grads[n.0] {
                    params[pid] = g.clone();
                }
            }
        }
        Ok(Gradients {
            params,
            nodes: grads,
        })
    }

    fn propagate(&self, i: usize, dy: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Input | Op::Param => {}
            Op::Affine { x, w, b } => {
                let wv = self.value(*w);
                let xv = self.value(*x);
                let (m, n) = (wv.rows(), wv.cols());
                let dyd = dy.data();
                let mut dx = vec![S::zero(); n];
                let mut dw = vec![S::zero(); m * n];
                let (wd, xd) = (wv.data(), xv.data());
                for r in 0..m {
                    let g = dyd[r];
                    if g == S::zero() {
                        continue;
                    }
                    let wrow = &wd[r * n..(r + 1) * n];
                    let dwrow = &mut dw[r * n..(r + 1) * n];
                    for c in 0..n {
                        dx[c] += wrow[c] * g;
                        dwrow[c] = g * xd[c];
                    }
                }
                add_into(&mut grads[x.0], &Tensor::vector(dx));
                add_into(&mut grads[w.0], &Tensor::matrix(m, n, dw).expect("shape"));
                add_into(&mut grads[b.0], dy);
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let g = zip_map(dy, xv, |g, a| if a > S::zero() { g } else { S::zero() });
                add_into(&mut grads[x.0], &g);
            }
            Op::Elu { x, alpha } => {
                let xv = self.value(*x);
                let alpha = *alpha;
                let g = zip_map(dy, xv, |g, a| {
                    if a >= S::zero() {
                        g
                    } else {
                        g * alpha * a.exp()
                    }
                });
                add_into(&mut grads[x.0], &g);
            }
            Op::HardTanh { x, lo, hi } => {
                let xv = self.value(*x);
                let (lo, hi) = (*lo, *hi);
                let g = zip_map(dy, xv, |g, a| if a > lo && a < hi { g } else { S::zero() });
                add_into(&mut grads[x.0], &g);
            }
            Op::Sigmoid(x) => {
                let g = zip_map(dy, y, |g, s| g * s * (S::one() - s));
                add_into(&mut grads[x.0], &g);
            }
            Op::Tanh(x) => {
                let g = zip_map(dy, y, |g, t| g * (S::one() - t * t));
                add_into(&mut grads[x.0], &g);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    let g = Tensor::vector(dy.data()[offset..offset + n].to_vec());
                    add_into(&mut grads[p.0], &g);
                    offset += n;
                }
            }
            Op::LogSoftmax(x) => {
                let total = dy.sum();
                let g = zip_map(dy, y, |g, lp| g - lp.exp() * total);
                add_into(&mut grads[x.0], &g);
            }
            Op::Add(a, b) => {
                add_into(&mut grads[a.0], dy);
                add_into(&mut grads[b.0], dy);
            }
            Op::Mul(a, b) => {
                let ga = zip_map(dy, self.value(*b), |g, v| g * v);
                let gb = zip_map(dy, self.value(*a), |g, v| g * v);
                add_into(&mut grads[a.0], &ga);
                add_into(&mut grads[b.0], &gb);
            }
            Op::Pick { x, index } => {
                let mut g = Tensor::zeros(self.value(*x).shape());
                g.data_mut()[*index] = dy.data()[0];
                add_into(&mut grads[x.0], &g);
            }
            Op::Sum(x) => {
                let g = Tensor::filled(self.value(*x).shape(), dy.data()[0]);
                add_into(&mut grads[x.0], &g);
            }
            Op::Scale { x, factor } => {
                let f = *factor;
                add_into(&mut grads[x.0], &dy.map(|g| g * f));
            }
        }
    }
}

fn add_into<S: Scalar>(slot: &mut Option<Tensor<S>>, g: &Tensor<S>) {
    match slot {
        Some(acc) => acc.axpy(S::one(), g),
        None => *slot = Some(g.clone()),
    }
}

fn zip_map<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, f: impl Fn(S, S) -> S) -> Tensor<S> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

pub fn elu<S: Scalar>(x: S, alpha: S) -> S {
    if x >= S::zero() {
        x
    } else {
        alpha * (x.exp() - S::one())
    }
}

pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

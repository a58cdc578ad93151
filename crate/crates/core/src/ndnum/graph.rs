//! Define-then-run computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in creation order, so the node list is already a
//! topological order: every node's inputs have smaller ids. Leaves are named
//! and receive their values through [`Feeds`] at evaluation time. The same
//! graph can be evaluated in `f32` (training) or `f64` (shadow evaluation for
//! finite-difference checks).

use std::collections::BTreeMap;

use thiserror::Error;

use super::tensor::{kernels, Real, Tensor, TensorError};

/// Named leaf values for one evaluation.
pub type Feeds<T = f32> = BTreeMap<String, Tensor<T>>;
pub type Feeds64 = Feeds<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub enum Op {
    Leaf { name: String, shape: Vec<usize> },
    Const(Tensor<f64>),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Sum(NodeId),
    SumAxis(NodeId, usize),
    Mean(NodeId),
    MeanAxis(NodeId, usize),
    Square(NodeId),
    Sqrt(NodeId),
    Exp(NodeId),
    Softplus(NodeId),
    Relu(NodeId),
    LeakyRelu(NodeId, f64),
    Tanh(NodeId),
    Slice {
        input: NodeId,
        axis: usize,
        start: usize,
        end: usize,
    },
    Concat {
        inputs: Vec<NodeId>,
        axis: usize,
    },
    /// Identity on the forward pass, blocks gradient flow.
    Detach(NodeId),
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Const(_) => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::MatMul(..) => "matmul",
            Op::Sum(_) => "sum",
            Op::SumAxis(..) => "sum_axis",
            Op::Mean(_) => "mean",
            Op::MeanAxis(..) => "mean_axis",
            Op::Square(_) => "square",
            Op::Sqrt(_) => "sqrt",
            Op::Exp(_) => "exp",
            Op::Softplus(_) => "softplus",
            Op::Relu(_) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Tanh(_) => "tanh",
            Op::Slice { .. } => "slice",
            Op::Concat { .. } => "concat",
            Op::Detach(_) => "detach",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf { .. } | Op::Const(_) => Vec::new(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MatMul(a, b) => {
                vec![*a, *b]
            }
            Op::Sum(a)
            | Op::SumAxis(a, _)
            | Op::Mean(a)
            | Op::MeanAxis(a, _)
            | Op::Square(a)
            | Op::Sqrt(a)
            | Op::Exp(a)
            | Op::Softplus(a)
            | Op::Relu(a)
            | Op::LeakyRelu(a, _)
            | Op::Tanh(a)
            | Op::Detach(a) => vec![*a],
            Op::Slice { input, .. } => vec![*input],
            Op::Concat { inputs, .. } => inputs.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("no feed for leaf `{0}`")]
    MissingFeed(String),
    #[error("node {node} ({op}): shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        node: usize,
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("node {node} ({op}): {source}")]
    Invalid {
        node: usize,
        op: &'static str,
        source: TensorError,
    },
    #[error("node {node} ({op}) produced a non-finite value")]
    NonFinite { node: usize, op: &'static str },
    #[error("backward requested before forward evaluated node {0}")]
    NotEvaluated(usize),
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Op>,
    leaves: BTreeMap<String, NodeId>,
    values: Vec<Option<Tensor>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0]
    }

    fn push(&mut self, op: Op) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(op);
        id
    }

    /// Declares a named leaf. Re-declaring an existing name returns the
    /// original node.
    pub fn leaf(&mut self, name: &str, shape: &[usize]) -> NodeId {
        if let Some(&id) = self.leaves.get(name) {
            return id;
        }
        let id = self.push(Op::Leaf {
            name: name.to_string(),
            shape: shape.to_vec(),
        });
        self.leaves.insert(name.to_string(), id);
        id
    }

    pub fn leaf_id(&self, name: &str) -> Option<NodeId> {
        self.leaves.get(name).copied()
    }

    pub fn leaf_names(&self) -> impl Iterator<Item = &str> {
        self.leaves.keys().map(String::as_str)
    }

    pub fn constant(&mut self, value: Tensor<f64>) -> NodeId {
        self.push(Op::Const(value))
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.constant(Tensor::scalar(value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    /// Adds a `[n]` bias row to every row of a `[B × n]` input.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        self.push(Op::Add(x, bias))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Div(a, b))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let c = self.scalar(factor);
        self.mul(a, c)
    }

    pub fn add_scalar(&mut self, a: NodeId, offset: f64) -> NodeId {
        let c = self.scalar(offset);
        self.add(a, c)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.scale(a, -1.0)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a))
    }

    /// Sum over `axis`; the axis is kept with extent 1.
    pub fn sum_axis(&mut self, a: NodeId, axis: usize) -> NodeId {
        self.push(Op::SumAxis(a, axis))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mean(a))
    }

    /// Mean over `axis`; the axis is kept with extent 1.
    pub fn mean_axis(&mut self, a: NodeId, axis: usize) -> NodeId {
        self.push(Op::MeanAxis(a, axis))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Square(a))
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sqrt(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Exp(a))
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Softplus(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        self.push(Op::LeakyRelu(a, slope))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh(a))
    }

    pub fn slice(&mut self, input: NodeId, axis: usize, start: usize, end: usize) -> NodeId {
        self.push(Op::Slice {
            input,
            axis,
            start,
            end,
        })
    }

    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> NodeId {
        self.push(Op::Concat {
            inputs: inputs.to_vec(),
            axis,
        })
    }

    pub fn detach(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Detach(a))
    }

    /// Marks every node that `roots` depends on.
    fn ancestors(&self, roots: &[NodeId]) -> Vec<bool> {
        let mut needed = vec![false; self.nodes.len()];
        for r in roots {
            needed[r.0] = true;
        }
        for i in (0..self.nodes.len()).rev() {
            if needed[i] {
                for input in self.nodes[i].inputs() {
                    needed[input.0] = true;
                }
            }
        }
        needed
    }

    /// Evaluates everything `root` depends on and returns the root value.
    /// Previously computed values are discarded.
    pub fn forward(&mut self, root: NodeId, feeds: &Feeds) -> Result<&Tensor, GraphError> {
        self.forward_many(&[root], feeds)?;
        Ok(self.values[root.0].as_ref().expect("root evaluated"))
    }

    pub fn forward_many(&mut self, roots: &[NodeId], feeds: &Feeds) -> Result<(), GraphError> {
        self.values.clear();
        let needed = self.ancestors(roots);
        self.values = self.evaluate(&needed, feeds)?;
        Ok(())
    }

    /// Value of a node from the most recent forward pass.
    pub fn value(&self, id: NodeId) -> Option<&Tensor> {
        self.values.get(id.0).and_then(Option::as_ref)
    }

    /// Evaluates `root` in double precision without touching stored values.
    pub fn shadow_eval(&self, root: NodeId, feeds: &Feeds64) -> Result<Tensor<f64>, GraphError> {
        let needed = self.ancestors(&[root]);
        let mut values = self.evaluate(&needed, feeds)?;
        Ok(values[root.0].take().expect("root evaluated"))
    }

    /// Double-precision value and gradients of `root`, for oracles.
    pub fn shadow_gradients(
        &self,
        root: NodeId,
        feeds: &Feeds64,
    ) -> Result<(f64, Gradients<f64>), GraphError> {
        let needed = self.ancestors(&[root]);
        let values = self.evaluate(&needed, feeds)?;
        let grads = self.backprop(&values, root)?;
        let v = values[root.0].as_ref().and_then(Tensor::item).expect("scalar root");
        Ok((v, grads))
    }

    /// Gradients of the scalar `root` from the last [`Graph::forward`].
    pub fn backward(&self, root: NodeId) -> Result<Gradients, GraphError> {
        self.backprop(&self.values, root)
    }

    fn evaluate<T: Real>(
        &self,
        needed: &[bool],
        feeds: &Feeds<T>,
    ) -> Result<Vec<Option<Tensor<T>>>, GraphError> {
        let mut values: Vec<Option<Tensor<T>>> = Vec::with_capacity(self.nodes.len());
        for (i, op) in self.nodes.iter().enumerate() {
            if !needed[i] {
                values.push(None);
                continue;
            }
            let v = self.eval_node(i, op, &values, feeds)?;
            if !v.all_finite() {
                return Err(GraphError::NonFinite {
                    node: i,
                    op: op.kind(),
                });
            }
            values.push(Some(v));
        }
        Ok(values)
    }

    fn eval_node<T: Real>(
        &self,
        i: usize,
        op: &Op,
        values: &[Option<Tensor<T>>],
        feeds: &Feeds<T>,
    ) -> Result<Tensor<T>, GraphError> {
        let get = |id: &NodeId| values[id.0].as_ref().expect("inputs precede their consumers");
        let wrap = |e: TensorError| match e {
            TensorError::Incompatible { lhs, rhs } => GraphError::ShapeMismatch {
                node: i,
                op: op.kind(),
                lhs,
                rhs,
            },
            other => GraphError::Invalid {
                node: i,
                op: op.kind(),
                source: other,
            },
        };
        let v = match op {
            Op::Leaf { name, shape } => {
                let fed = feeds
                    .get(name)
                    .ok_or_else(|| GraphError::MissingFeed(name.clone()))?;
                if fed.shape() != shape.as_slice() {
                    return Err(GraphError::ShapeMismatch {
                        node: i,
                        op: "leaf",
                        lhs: shape.clone(),
                        rhs: fed.shape().to_vec(),
                    });
                }
                fed.clone()
            }
            Op::Const(t) => t.cast(),
            Op::Add(a, b) => get(a).zip_broadcast(get(b), |x, y| x + y).map_err(wrap)?,
            Op::Sub(a, b) => get(a).zip_broadcast(get(b), |x, y| x - y).map_err(wrap)?,
            Op::Mul(a, b) => get(a).zip_broadcast(get(b), |x, y| x * y).map_err(wrap)?,
            Op::Div(a, b) => get(a).zip_broadcast(get(b), |x, y| x / y).map_err(wrap)?,
            Op::MatMul(a, b) => get(a).matmul(get(b)).map_err(wrap)?,
            Op::Sum(a) => Tensor::scalar(get(a).sum()),
            Op::SumAxis(a, axis) => get(a).sum_axis(*axis).map_err(wrap)?,
            Op::Mean(a) => {
                let t = get(a);
                Tensor::scalar(t.sum() / T::from_usize(t.len()).expect("count fits"))
            }
            Op::MeanAxis(a, axis) => {
                let t = get(a);
                let s = t.sum_axis(*axis).map_err(wrap)?;
                let n = T::from_usize(t.shape()[*axis]).expect("count fits");
                s.map(|v| v / n)
            }
            Op::Square(a) => get(a).map(|x| x * x),
            Op::Sqrt(a) => get(a).map(|x| x.sqrt()),
            Op::Exp(a) => get(a).map(|x| x.exp()),
            Op::Softplus(a) => get(a).map(kernels::softplus),
            Op::Relu(a) => get(a).map(kernels::relu),
            Op::LeakyRelu(a, slope) => {
                let s = T::from_f64_lossy(*slope);
                get(a).map(|x| kernels::leaky_relu(x, s))
            }
            Op::Tanh(a) => get(a).map(|x| x.tanh()),
            Op::Slice {
                input,
                axis,
                start,
                end,
            } => get(input).slice_axis(*axis, *start, *end).map_err(wrap)?,
            Op::Concat { inputs, axis } => {
                let parts: Vec<&Tensor<T>> = inputs.iter().map(get).collect();
                Tensor::concat(&parts, *axis).map_err(wrap)?
            }
            Op::Detach(a) => get(a).clone(),
        };
        Ok(v)
    }

    fn backprop<T: Real>(
        &self,
        values: &[Option<Tensor<T>>],
        root: NodeId,
    ) -> Result<Gradients<T>, GraphError> {
        let root_val = values
            .get(root.0)
            .and_then(Option::as_ref)
            .ok_or(GraphError::NotEvaluated(root.0))?;
        if !root_val.is_scalar() {
            return Err(GraphError::NonScalarRoot(root_val.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(root_val.shape(), T::one()));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let op = &self.nodes[i];
            let val = |id: &NodeId| values[id.0].as_ref().expect("evaluated ancestor");
            let out = values[i].as_ref().expect("evaluated ancestor");
            let wrap = |e: TensorError| GraphError::Invalid {
                node: i,
                op: op.kind(),
                source: e,
            };
            let mut contributions: Vec<(NodeId, Tensor<T>)> = Vec::new();
            match op {
                Op::Leaf { .. } | Op::Const(_) | Op::Detach(_) => {}
                Op::Add(a, b) => {
                    contributions.push((*a, g.sum_to_shape(val(a).shape()).map_err(wrap)?));
                    contributions.push((*b, g.sum_to_shape(val(b).shape()).map_err(wrap)?));
                }
                Op::Sub(a, b) => {
                    contributions.push((*a, g.sum_to_shape(val(a).shape()).map_err(wrap)?));
                    let neg = g.map(|v| -v);
                    contributions.push((*b, neg.sum_to_shape(val(b).shape()).map_err(wrap)?));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (val(a), val(b));
                    let ga = g.zip_broadcast(vb, |x, y| x * y).map_err(wrap)?;
                    let gb = g.zip_broadcast(va, |x, y| x * y).map_err(wrap)?;
                    contributions.push((*a, ga.sum_to_shape(va.shape()).map_err(wrap)?));
                    contributions.push((*b, gb.sum_to_shape(vb.shape()).map_err(wrap)?));
                }
                Op::Div(a, b) => {
                    let (va, vb) = (val(a), val(b));
                    let ga = g.zip_broadcast(vb, |x, y| x / y).map_err(wrap)?;
                    // d(a/b)/db = -(a/b)/b
                    let q = out.zip_broadcast(vb, |o, y| -o / y).map_err(wrap)?;
                    let gb = g.zip_broadcast(&q, |x, y| x * y).map_err(wrap)?;
                    contributions.push((*a, ga.sum_to_shape(va.shape()).map_err(wrap)?));
                    contributions.push((*b, gb.sum_to_shape(vb.shape()).map_err(wrap)?));
                }
                Op::MatMul(a, b) => {
                    contributions.push((*a, g.matmul_nt(val(b)).map_err(wrap)?));
                    contributions.push((*b, val(a).matmul_tn(&g).map_err(wrap)?));
                }
                Op::Sum(a) => {
                    let s = g.item().expect("scalar");
                    contributions.push((*a, Tensor::full(val(a).shape(), s)));
                }
                Op::SumAxis(a, _) => {
                    let z = Tensor::zeros(val(a).shape());
                    contributions.push((*a, z.zip_broadcast(&g, |_, y| y).map_err(wrap)?));
                }
                Op::Mean(a) => {
                    let va = val(a);
                    let n = T::from_usize(va.len()).expect("count fits");
                    contributions.push((*a, Tensor::full(va.shape(), g.item().expect("scalar") / n)));
                }
                Op::MeanAxis(a, axis) => {
                    let va = val(a);
                    let n = T::from_usize(va.shape()[*axis]).expect("count fits");
                    let z = Tensor::zeros(va.shape());
                    contributions.push((*a, z.zip_broadcast(&g, |_, y| y / n).map_err(wrap)?));
                }
                Op::Square(a) => {
                    let two = T::from_f64_lossy(2.0);
                    contributions.push((*a, zip_same(&g, val(a), |gv, x| gv * two * x)));
                }
                Op::Sqrt(a) => {
                    // the derivative at 0 is taken as 0
                    let two = T::from_f64_lossy(2.0);
                    let ga = zip_same(&g, out, |gv, o| if o > T::zero() { gv / (two * o) } else { T::zero() });
                    contributions.push((*a, ga));
                }
                Op::Exp(a) => contributions.push((*a, zip_same(&g, out, |gv, o| gv * o))),
                Op::Softplus(a) => {
                    contributions.push((*a, zip_same(&g, val(a), |gv, x| gv * kernels::sigmoid(x))))
                }
                Op::Relu(a) => contributions.push((
                    *a,
                    zip_same(&g, val(a), |gv, x| if x > T::zero() { gv } else { T::zero() }),
                )),
                Op::LeakyRelu(a, slope) => {
                    let s = T::from_f64_lossy(*slope);
                    contributions.push((*a, zip_same(&g, val(a), |gv, x| if x > T::zero() { gv } else { gv * s })))
                }
                Op::Tanh(a) => contributions.push((*a, zip_same(&g, out, |gv, o| gv * (T::one() - o * o)))),
                Op::Slice {
                    input,
                    axis,
                    start,
                    end,
                } => {
                    let shape = val(input).shape();
                    let mut parts = Vec::new();
                    if *start > 0 {
                        let mut s = shape.to_vec();
                        s[*axis] = *start;
                        parts.push(Tensor::zeros(&s));
                    }
                    parts.push(g.clone());
                    if *end < shape[*axis] {
                        let mut s = shape.to_vec();
                        s[*axis] = shape[*axis] - *end;
                        parts.push(Tensor::zeros(&s));
                    }
                    let refs: Vec<&Tensor<T>> = parts.iter().collect();
                    contributions.push((*input, Tensor::concat(&refs, *axis).map_err(wrap)?));
                }
                Op::Concat { inputs, axis } => {
                    let mut offset = 0;
                    for input in inputs {
                        let extent = val(input).shape()[*axis];
                        contributions.push((*input, g.slice_axis(*axis, offset, offset + extent).map_err(wrap)?));
                        offset += extent;
                    }
                }
            }
            for (id, c) in contributions {
                grads[id.0] = Some(match grads[id.0].take() {
                    Some(prev) => zip_same(&prev, &c, |x, y| x + y),
                    None => c,
                });
            }
            grads[i] = Some(g);
        }

        let mut by_leaf = BTreeMap::new();
        for (name, &id) in &self.leaves {
            let shape = match &self.nodes[id.0] {
                Op::Leaf { shape, .. } => shape.clone(),
                _ => unreachable!("leaf index points at a leaf"),
            };
            let grad = grads[id.0].clone().unwrap_or_else(|| Tensor::zeros(&shape));
            by_leaf.insert(name.clone(), grad);
        }
        Ok(Gradients { by_leaf, by_node: grads })
    }
}

fn zip_same<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    debug_assert_eq!(a.shape(), b.shape());
    a.zip_broadcast(b, f).expect("identical shapes")
}

/// Result of a backward pass.
#[derive(Debug, Clone)]
pub struct Gradients<T = f32> {
    by_leaf: BTreeMap<String, Tensor<T>>,
    by_node: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for a named leaf; zeros when the root does not depend on it.
    pub fn leaf(&self, name: &str) -> Option<&Tensor<T>> {
        self.by_leaf.get(name)
    }

    pub fn node(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.by_node.get(id.0).and_then(Option::as_ref)
    }

    pub fn leaves(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.by_leaf.iter().map(|(k, v)| (k.as_str(), v))
    }
}

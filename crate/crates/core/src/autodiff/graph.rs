use std::collections::{BTreeMap, HashMap};

use super::ops::OpKind;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Values bound to named leaves when re-evaluating a graph.
pub type Bindings = BTreeMap<String, Tensor>;

/// Gradients keyed by leaf name.
pub type Grads = BTreeMap<String, Tensor>;

#[derive(Clone, Debug)]
pub(crate) struct Node {
    pub(crate) op: OpKind,
    pub(crate) inputs: Vec<NodeId>,
    pub(crate) shape: Vec<usize>,
    pub(crate) value: Option<Tensor>,
    pub(crate) requires_grad: bool,
    pub(crate) name: Option<String>,
}

/// Define-by-run tape.
///
/// Nodes are appended in topological order, so the graph is acyclic by construction.
/// An op is evaluated eagerly when all of its inputs carry values; otherwise only its
/// shape is recorded and `evaluate` must be called once the placeholders are bound.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaves: HashMap<String, NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf holding `value`. Named leaves can be rebound in `evaluate`;
    /// `value.requires_grad` decides whether gradients are reported for it.
    pub fn leaf(&mut self, name: Option<&str>, value: Tensor) -> Result<NodeId> {
        let requires_grad = value.requires_grad;
        self.push_leaf(name, value.shape().to_vec(), Some(value), requires_grad)
    }

    /// Differentiable named leaf.
    pub fn param(&mut self, name: &str, value: Tensor) -> Result<NodeId> {
        self.leaf(Some(name), value.with_grad())
    }

    /// Unnamed constant.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(None, value.shape().to_vec(), Some(value), false)
            .expect("unnamed leaves never collide")
    }

    /// Named leaf without a value; must be bound before evaluation.
    pub fn placeholder(&mut self, name: &str, shape: &[usize], requires_grad: bool) -> Result<NodeId> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::shape("placeholder", format!("{shape:?}")));
        }
        self.push_leaf(Some(name), shape.to_vec(), None, requires_grad)
    }

    fn push_leaf(&mut self, name: Option<&str>, shape: Vec<usize>, value: Option<Tensor>, requires_grad: bool) -> Result<NodeId> {
        let id = NodeId(self.nodes.len());
        if let Some(name) = name {
            if self.leaves.contains_key(name) {
                return Err(Error::DuplicateLeaf(name.to_string()));
            }
            self.leaves.insert(name.to_string(), id);
        }
        self.nodes.push(Node {
            op: OpKind::Leaf,
            inputs: Vec::new(),
            shape,
            value,
            requires_grad,
            name: name.map(str::to_string),
        });
        Ok(id)
    }

    pub fn leaf_id(&self, name: &str) -> Option<NodeId> {
        self.leaves.get(name).copied()
    }

    /// Names of differentiable leaves, sorted.
    pub fn grad_leaf_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .leaves
            .iter()
            .filter(|(_, id)| self.nodes[id.0].requires_grad)
            .map(|(n, _)| n.clone())
            .collect();
        names.sort();
        names
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn value(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].value.as_ref()
    }

    /// Value of an evaluated node; panics on placeholders that were never bound.
    pub fn get(&self, id: NodeId) -> &Tensor {
        self.value(id).expect("node has not been evaluated")
    }

    pub fn op(&self, id: NodeId) -> &OpKind {
        &self.nodes[id.0].op
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn push(&mut self, op: OpKind, inputs: &[NodeId]) -> Result<NodeId> {
        let shapes: Vec<&[usize]> = inputs.iter().map(|i| self.nodes[i.0].shape.as_slice()).collect();
        let shape = op.infer_shape(&shapes)?;
        let id = NodeId(self.nodes.len());
        let value = if inputs.iter().all(|i| self.nodes[i.0].value.is_some()) {
            let vals: Vec<&Tensor> = inputs.iter().map(|i| self.nodes[i.0].value.as_ref().unwrap()).collect();
            let v = op.forward(&vals, &shape, id.0)?;
            if !v.is_finite() {
                return Err(Error::NonFinite { node: id.0, op: op.name() });
            }
            Some(v)
        } else {
            None
        };
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            op,
            inputs: inputs.to_vec(),
            shape,
            value,
            requires_grad,
            name: None,
        });
        Ok(id)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(OpKind::MatMul, &[a, b])
    }

    pub fn conv1d(&mut self, x: NodeId, w: NodeId, b: NodeId, filter_width: usize, stride: usize) -> Result<NodeId> {
        self.push(
            OpKind::Conv1d {
                filter_width,
                stride,
                zero_pad: true,
            },
            &[x, w, b],
        )
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(OpKind::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(OpKind::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.push(OpKind::Scale(c), &[a])
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.push(OpKind::Concat, parts)
    }

    pub fn slice(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        self.push(OpKind::Slice { start, end }, &[a])
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.push(OpKind::Reshape(shape.to_vec()), &[a])
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(OpKind::Tanh, &[a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(OpKind::Sigmoid, &[a])
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(OpKind::Exp, &[a])
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(OpKind::Log, &[a])
    }

    pub fn atanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(OpKind::Atanh, &[a])
    }

    pub fn softmax(&mut self, a: NodeId, axis: usize, temperature: f64) -> Result<NodeId> {
        self.push(OpKind::Softmax { axis, temperature }, &[a])
    }

    pub fn log_softmax(&mut self, a: NodeId, axis: usize, temperature: f64) -> Result<NodeId> {
        self.push(OpKind::LogSoftmax { axis, temperature }, &[a])
    }

    pub fn reduce_sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(OpKind::ReduceSum, &[a])
    }

    pub fn reduce_mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(OpKind::ReduceMean, &[a])
    }

    pub fn max_over_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        self.push(OpKind::MaxOverAxis { axis }, &[a])
    }

    pub fn cosine_similarity(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(OpKind::CosineSimilarity, &[a, b])
    }

    pub fn embedding_lookup(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        self.push(OpKind::EmbeddingLookup { ids: ids.to_vec() }, &[table])
    }

    /// One LSTM step; returns `(h', c')`.
    pub fn lstm_cell(&mut self, x: NodeId, h: NodeId, c: NodeId, w: NodeId, b: NodeId) -> Result<(NodeId, NodeId)> {
        let out = self.push(OpKind::LstmCell, &[x, h, c, w, b])?;
        let n = self.shape(h)[0];
        let h_next = self.slice(out, 0, n)?;
        let c_next = self.slice(out, n, 2 * n)?;
        Ok((h_next, c_next))
    }

    /// Mean of scalar nodes.
    pub fn mean_of(&mut self, scalars: &[NodeId]) -> Result<NodeId> {
        let stacked = self.concat(scalars)?;
        self.reduce_mean(stacked)
    }

    /// Rebinds named leaves and recomputes every node up to `output`.
    pub fn evaluate(&mut self, output: NodeId, bindings: &Bindings) -> Result<Tensor> {
        for (name, value) in bindings {
            let id = self.leaf_id(name).ok_or_else(|| Error::invalid(format!("no leaf named `{name}`")))?;
            let node = &mut self.nodes[id.0];
            if node.shape != value.shape() {
                return Err(Error::shape(
                    "bind",
                    format!("`{name}` expects {:?}, got {:?}", node.shape, value.shape()),
                ));
            }
            let mut v = value.clone();
            v.requires_grad = node.requires_grad;
            node.value = Some(v);
        }
        self.recompute(output)?;
        Ok(self.get(output).clone())
    }

    pub(crate) fn set_leaf_value(&mut self, id: NodeId, value: Tensor) {
        debug_assert!(matches!(self.nodes[id.0].op, OpKind::Leaf));
        self.nodes[id.0].value = Some(value);
    }

    pub(crate) fn recompute(&mut self, output: NodeId) -> Result<()> {
        for i in 0..=output.0 {
            if matches!(self.nodes[i].op, OpKind::Leaf) {
                if self.nodes[i].value.is_none() {
                    let name = self.nodes[i].name.clone().unwrap_or_else(|| format!("#{i}"));
                    return Err(Error::UnboundInput(name));
                }
                continue;
            }
            let node = &self.nodes[i];
            let vals: Vec<&Tensor> = node.inputs.iter().map(|j| self.nodes[j.0].value.as_ref().unwrap()).collect();
            let v = node.op.forward(&vals, &node.shape, i)?;
            if !v.is_finite() {
                return Err(Error::NonFinite { node: i, op: node.op.name() });
            }
            self.nodes[i].value = Some(v);
        }
        Ok(())
    }

    /// Reverse sweep from `output`; returns gradients for every node that requires them.
    pub fn gradients(&self, output: NodeId, seed: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let out_node = &self.nodes[output.0];
        if out_node.value.is_none() {
            return Err(Error::BackwardBeforeForward(output.0));
        }
        if seed.shape() != out_node.shape.as_slice() {
            return Err(Error::SeedShape {
                seed: seed.shape().to_vec(),
                output: out_node.shape.clone(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed.clone());
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, OpKind::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let vals: Vec<&Tensor> = node
                .inputs
                .iter()
                .map(|j| self.nodes[j.0].value.as_ref().ok_or(Error::BackwardBeforeForward(j.0)))
                .collect::<Result<_>>()?;
            let output_value = node.value.as_ref().ok_or(Error::BackwardBeforeForward(i))?;
            let input_grads = node.op.vjp(&vals, output_value, &g);
            for (inp, ig) in node.inputs.iter().zip(input_grads) {
                if !self.nodes[inp.0].requires_grad {
                    continue;
                }
                match &mut grads[inp.0] {
                    Some(acc) => acc.add_assign(&ig),
                    slot => *slot = Some(ig),
                }
            }
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    /// Gradients of `output` for every differentiable named leaf; unreached leaves get zeros.
    pub fn backward(&self, output: NodeId, seed: &Tensor) -> Result<Grads> {
        let mut grads = self.gradients(output, seed)?;
        let mut out = Grads::new();
        for (name, &id) in &self.leaves {
            let node = &self.nodes[id.0];
            if !node.requires_grad {
                continue;
            }
            let g = if id.0 < grads.len() { grads[id.0].take() } else { None };
            out.insert(name.clone(), g.unwrap_or_else(|| Tensor::zeros(&node.shape)));
        }
        Ok(out)
    }

    /// Backward with seed 1 on a scalar output.
    pub fn backward_scalar(&self, output: NodeId) -> Result<Grads> {
        let shape = self.shape(output);
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NotScalar(shape.to_vec()));
        }
        self.backward(output, &Tensor::filled(shape, 1.0))
    }
}

use super::ops::{self, Axis, Op};
use super::{AutodiffError, Tensor};

/// Index of a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
}

/// Append-only computation graph. Nodes can only reference earlier nodes,
/// so the graph is acyclic and a reverse sweep visits every node after all
/// of its consumers.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            nodes: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            value,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    /// Records `op` applied to `inputs` and returns the new node.
    pub fn apply(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId, AutodiffError> {
        if let Some(bad) = inputs.iter().find(|id| id.0 >= self.nodes.len()) {
            return Err(AutodiffError::UnknownNode { node: bad.0 });
        }
        let value = {
            let values: Vec<&Tensor> = inputs.iter().map(|id| &self.nodes[id.0].value).collect();
            ops::forward(&op, &values)?
        };
        if !value.all_finite() {
            return Err(AutodiffError::NonFinite {
                node: self.nodes.len(),
                op: op.name(),
            });
        }
        self.nodes.push(Node {
            op,
            inputs: inputs.to_vec(),
            value,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Scale(s), &[a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Sigmoid, &[a])
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Tanh, &[a])
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Exp, &[a])
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Log, &[a])
    }

    pub fn clamped_log(&mut self, a: NodeId, floor: f64) -> Result<NodeId, AutodiffError> {
        self.apply(Op::ClampedLog(floor), &[a])
    }

    pub fn softmax(&mut self, a: NodeId, axis: Axis) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Softmax(axis), &[a])
    }

    pub fn log_softmax(&mut self, a: NodeId, axis: Axis) -> Result<NodeId, AutodiffError> {
        self.apply(Op::LogSoftmax(axis), &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Sum, &[a])
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: Axis) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Concat(axis), parts)
    }

    pub fn row_select(&mut self, table: NodeId, row: usize) -> Result<NodeId, AutodiffError> {
        self.apply(Op::RowSelect(row), &[table])
    }

    pub fn pick(&mut self, a: NodeId, index: usize) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Pick(index), &[a])
    }

    pub fn mask_mul(&mut self, a: NodeId, mask: Tensor) -> Result<NodeId, AutodiffError> {
        self.apply(Op::MaskMul(mask), &[a])
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Transpose, &[a])
    }

    /// Reverse sweep from a scalar `loss`. Every node gets a gradient of its
    /// own shape; nodes the loss does not depend on get zeros.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, AutodiffError> {
        let root = &self.nodes[loss.0].value;
        if !root.is_scalar() {
            return Err(AutodiffError::NonScalarLoss {
                shape: root.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::from_parts(root.shape().to_vec(), vec![1.0]));
        for idx in (0..=loss.0).rev() {
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.inputs.is_empty() {
                let inputs: Vec<&Tensor> =
                    node.inputs.iter().map(|id| &self.nodes[id.0].value).collect();
                let input_grads = ops::vjp(&node.op, &inputs, &node.value, &grad);
                for (id, g) in node.inputs.iter().zip(input_grads) {
                    match &mut grads[id.0] {
                        Some(acc) => {
                            for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                                *a += v;
                            }
                        }
                        slot @ None => *slot = Some(g),
                    }
                }
            }
            grads[idx] = Some(grad);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

/// Result of [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `id`; zeros if unreached.
    pub fn get(&self, id: NodeId) -> Tensor {
        match self.grads.get(id.0).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[id.0]),
        }
    }

    pub fn is_reached(&self, id: NodeId) -> bool {
        matches!(self.grads.get(id.0), Some(Some(_)))
    }

    pub fn take(&mut self, id: NodeId) -> Tensor {
        match self.grads.get_mut(id.0).and_then(|g| g.take()) {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[id.0]),
        }
    }
}

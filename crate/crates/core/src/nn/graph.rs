//! Reverse-mode automatic differentiation over a recorded tape.

use std::cell::RefCell;
use std::sync::Arc;

use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Maps the output gradient to one optional gradient per parent. The mask
/// says which parents need one; entries for the others may be `None`.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Arc<Tensor<T>>,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

/// Tape of tensor operations. Nodes are appended in evaluation order, so
/// the reverse sweep visits them by decreasing index.
pub struct Graph<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_node(&self, node: Node<T>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var(nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.leaf(Arc::new(value), false)
    }

    pub fn leaf(&self, value: Arc<Tensor<T>>, requires_grad: bool) -> Var {
        self.push_node(Node {
            value,
            requires_grad,
            parents: Vec::new(),
            backward: None,
        })
    }

    pub fn value(&self, v: Var) -> Arc<Tensor<T>> {
        Arc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes.borrow()[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> T {
        let value = self.value(v);
        assert_eq!(value.len(), 1, "item() on a non-scalar node");
        value.data()[0]
    }

    /// Records an operation. The backward closure is dropped immediately
    /// when no parent needs a gradient.
    pub(crate) fn record(
        &self,
        value: Tensor<T>,
        parents: &[Var],
        backward: impl Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Var {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.0].requires_grad)
        };
        self.push_node(Node {
            value: Arc::new(value),
            requires_grad,
            parents: parents.iter().map(|p| p.0).collect(),
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
        })
    }

    /// Same value as `x`, but cut from the tape.
    pub fn detach(&self, x: Var) -> Var {
        self.leaf(self.value(x), false)
    }

    /// Back-propagates from a one-element `root`. Gradients are retained
    /// for leaves only.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[root.0].value.len(), 1, "backward() needs a scalar root");
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        if !nodes[root.0].requires_grad {
            return Gradients { grads };
        }
        grads[root.0] = Some(Tensor::full(nodes[root.0].value.shape(), T::one()));
        for id in (0..=root.0).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(gy) = grads[id].take() else {
                continue;
            };
            let mask: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| nodes[p].requires_grad)
                .collect();
            let parent_grads = backward(&gy, &mask);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, g), needed) in node.parents.iter().zip(parent_grads).zip(mask) {
                let Some(g) = g else { continue };
                if !needed {
                    continue;
                }
                debug_assert_eq!(g.shape(), nodes[p].value.shape(), "gradient shape for node {p}");
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Gradients { grads }
    }
}

pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

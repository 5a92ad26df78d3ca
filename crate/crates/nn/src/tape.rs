//! Reverse-mode differentiation tape.
//!
//! Operations push nodes onto the tape in evaluation order, which is a valid
//! topological order, so the backward pass is a single reverse sweep over the
//! node list. Each node stores a closure that maps the node's output gradient
//! to one gradient contribution per parent.

use std::cell::RefCell;

use crate::tensor::{Real, Tensor};

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Value(pub(crate) usize);

/// The backward closure receives the output gradient and a per-parent flag
/// saying whether that parent's gradient is actually needed; it may return
/// `None` for parents it skipped.
type BackwardFn<F> = Box<dyn Fn(&Tensor<F>, &[bool]) -> Vec<Option<Tensor<F>>>>;

struct Node<F: Real> {
    value: Tensor<F>,
    grad: Option<Tensor<F>>,
    parents: Vec<Value>,
    backward: Option<BackwardFn<F>>,
    needs_grad: bool,
}

pub struct Tape<F: Real> {
    nodes: RefCell<Vec<Node<F>>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// Leaf that never receives a gradient (inputs, adjacency matrices, ...).
    pub fn constant(&self, value: Tensor<F>) -> Value {
        self.push_node(value, Vec::new(), None, false)
    }

    /// Leaf whose gradient is tracked (trainable parameter).
    pub fn param(&self, value: Tensor<F>) -> Value {
        self.push_node(value, Vec::new(), None, true)
    }

    pub(crate) fn push_op(
        &self,
        value: Tensor<F>,
        parents: Vec<Value>,
        backward: BackwardFn<F>,
    ) -> Value {
        let needs = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.0].needs_grad)
        };
        self.push_node(value, parents, Some(backward), needs)
    }

    fn push_node(
        &self,
        value: Tensor<F>,
        parents: Vec<Value>,
        backward: Option<BackwardFn<F>>,
        needs_grad: bool,
    ) -> Value {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            grad: None,
            parents,
            backward,
            needs_grad,
        });
        Value(nodes.len() - 1)
    }

    pub fn value(&self, v: Value) -> Tensor<F> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape_of(&self, v: Value) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    /// Gradient of `v` after [`Tape::backward`]; `None` if none flowed there.
    pub fn grad(&self, v: Value) -> Option<Tensor<F>> {
        self.nodes.borrow()[v.0].grad.clone()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Reverse sweep seeding `d root / d root = 1`. The root must be a scalar
    /// (single-element) tensor.
    pub fn backward(&self, root: Value) {
        let mut nodes = self.nodes.borrow_mut();
        assert_eq!(
            nodes[root.0].value.len(),
            1,
            "backward root must be scalar, got shape {:?}",
            nodes[root.0].value.shape()
        );
        let seed_shape = nodes[root.0].value.shape().to_vec();
        nodes[root.0].grad = Some(Tensor::full(&seed_shape, F::ONE));

        for idx in (0..=root.0).rev() {
            if nodes[idx].grad.is_none() || nodes[idx].backward.is_none() {
                continue;
            }
            if !nodes[idx].needs_grad {
                continue;
            }
            let grad = nodes[idx].grad.clone().unwrap();
            let parents = nodes[idx].parents.clone();
            let needs: Vec<bool> = parents.iter().map(|p| nodes[p.0].needs_grad).collect();
            let contributions = {
                let back = nodes[idx].backward.as_ref().unwrap();
                back(&grad, &needs)
            };
            assert_eq!(contributions.len(), parents.len());
            for (parent, contrib) in parents.into_iter().zip(contributions) {
                if !nodes[parent.0].needs_grad {
                    continue;
                }
                let Some(contrib) = contrib else { continue };
                match nodes[parent.0].grad.as_mut() {
                    Some(g) => g.add_assign(&contrib),
                    None => nodes[parent.0].grad = Some(contrib),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;

    #[test]
    fn backward_through_shared_input() {
        // y = x*x (via elementwise mul of x with itself): dy/dx = 2x
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_vec(vec![3.0]));
        let y = ops::mul(&tape, x, x);
        let s = ops::sum_all(&tape, y);
        tape.backward(s);
        assert_eq!(tape.grad(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn constants_get_no_grad() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_vec(vec![1.0, 2.0]));
        let w = tape.param(Tensor::from_vec(vec![4.0, 5.0]));
        let y = ops::mul(&tape, x, w);
        let s = ops::sum_all(&tape, y);
        tape.backward(s);
        assert!(tape.grad(x).is_none());
        assert_eq!(tape.grad(w).unwrap().data(), &[1.0, 2.0]);
    }
}

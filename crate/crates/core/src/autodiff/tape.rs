use std::borrow::Cow;

use super::ops::Op;
use super::params::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

pub(super) struct Node<'a> {
    pub(super) value: Cow<'a, Tensor>,
    pub(super) op: Op,
    pub(super) requires_grad: bool,
}

/// Dynamic computation tape. Operations are appended in execution order, so
/// every node's inputs precede it.
#[derive(Default)]
pub struct Tape<'a> {
    pub(super) nodes: Vec<Node<'a>>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(super) fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Borrowed constant input.
    pub fn constant_ref(&mut self, value: &'a Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Free input whose gradient can be read from [`Adjoints`].
    pub fn var(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Parameter leaf. The value is borrowed from the store; gradients are
    /// routed to the parameter's slot by [`Tape::backward`].
    pub fn param(&mut self, store: &'a ParamStore, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(store.value(id)),
            op: Op::Param(id),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Computes d(loss)/d(node) for every node that influences `loss`.
    pub fn gradients(&self, loss: Var) -> Result<Adjoints> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", lv.shape()),
            ));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(grad) = adj[i].take() else { continue };
            self.backprop(i, &grad, &mut adj);
            adj[i] = Some(grad);
        }
        let params = self.nodes[..=loss.0]
            .iter()
            .map(|n| match n.op {
                Op::Param(id) => Some(id),
                _ => None,
            })
            .collect();
        Ok(Adjoints { adj, params })
    }

    /// Adds d(loss)/d(param) into `grads` for every parameter on the tape.
    /// Calling it twice without zeroing doubles the accumulated gradient.
    pub fn backward(&self, loss: Var, grads: &mut Gradients) -> Result<()> {
        self.gradients(loss)?.accumulate_into(grads);
        Ok(())
    }

    /// Accumulates `delta` into the adjoint slot of `v` when `v` needs it.
    pub(super) fn acc(&self, adj: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = adj[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
        f(slot);
    }
}

/// Per-node gradients of one backward pass.
pub struct Adjoints {
    adj: Vec<Option<Vec<f64>>>,
    params: Vec<Option<ParamId>>,
}

impl Adjoints {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.adj.get(v.0).and_then(|a| a.as_deref())
    }

    /// Gradient w.r.t. `v`, zeros if `v` does not influence the loss.
    pub fn wrt(&self, tape: &Tape<'_>, v: Var) -> Vec<f64> {
        self.get(v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; tape.value(v).numel()])
    }

    pub fn accumulate_into(&self, grads: &mut Gradients) {
        for (a, p) in self.adj.iter().zip(&self.params) {
            if let (Some(a), Some(id)) = (a, p) {
                grads.accumulate(*id, a);
            }
        }
    }
}

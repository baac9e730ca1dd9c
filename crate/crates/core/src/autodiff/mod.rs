//! Eager reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation as it executes. [`Var`] is a cheap
//! handle into the tape; arithmetic on vars appends nodes. Calling
//! [`Tape::backward`] on a scalar walks the tape in reverse and accumulates
//! gradients, summing contributions for nodes with several consumers.
//!
//! Nodes built only from constants are recorded without a differentiable
//! op, so they never receive gradients.

mod conv;
mod elementwise;
mod linalg;
mod norm;
mod op;
mod reduce;
mod shape;

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::nn::Param;
use crate::tensor::Tensor;

pub use conv::Conv2dSpec;
pub use elementwise::{sigmoid, Unary};
pub use linalg::gemm;
pub use norm::{group_moments, NormGroups, RunningStats, BN_MOMENTUM};
pub use reduce::softmax_tensor;
pub use shape::concat;
pub(crate) use op::Op;

struct Node {
    value: Rc<Tensor>,
    requires_grad: bool,
    op: Op,
}

/// Single-owner recording of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    bound: RefCell<HashMap<String, usize>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.len()).finish()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable leaf.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push_raw(value, true, Op::Leaf)
    }

    /// Non-differentiable input.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_raw(value, false, Op::Leaf)
    }

    /// Binds a parameter as a leaf. Binding the same name twice returns the
    /// same node, so every use accumulates into one gradient.
    ///
    /// # Panics
    /// If a parameter of the same name but a different value was bound
    /// earlier, e.g. two modules with clashing names on one tape.
    pub fn param(&self, p: &Param) -> Var<'_> {
        if let Some(&id) = self.bound.borrow().get(p.name()) {
            assert!(
                *self.value_of(id) == *p.value(),
                "parameter {:?} bound twice on one tape with different values",
                p.name()
            );
            return Var { tape: self, id };
        }
        let v = self.leaf(p.value().clone());
        self.bound.borrow_mut().insert(p.name().to_string(), v.id);
        v
    }

    /// Names of all parameters bound so far.
    pub fn bound_params(&self) -> Vec<String> {
        let mut names: Vec<String> = self.bound.borrow().keys().cloned().collect();
        names.sort();
        names
    }

    fn push_raw(&self, value: Tensor, requires_grad: bool, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            requires_grad,
            op,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Appends an op result. The node is differentiable iff some input is.
    pub(crate) fn push(&self, value: Tensor, op: Op) -> Result<Var<'_>> {
        if !value.all_finite() {
            return Err(Error::Numerical(format!(
                "{} produced a non-finite value (output shape {:?})",
                op.name(),
                value.shape()
            )));
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            op.inputs().iter().any(|&i| nodes[i].requires_grad)
        };
        let op = if requires_grad { op } else { Op::Leaf };
        Ok(self.push_raw(value, requires_grad, op))
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::Contract("loss belongs to a different tape".into()));
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        if root.requires_grad {
            grads[loss.id] = Some(Tensor::ones(root.value.shape()));
        }
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].as_ref() else { continue };
            let contributions = node.op.backward(g, &node.value, &|i| &*nodes[i].value);
            for (input, contrib) in contributions {
                if !nodes[input].requires_grad {
                    continue;
                }
                debug_assert_eq!(contrib.shape(), nodes[input].value.shape(), "{}", node.op.name());
                match &mut grads[input] {
                    Some(acc) => acc.add_assign_scaled(&contrib, 1.0),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Ok(Gradients {
            grads,
            bound: self.bound.borrow().clone(),
        })
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    bound: HashMap<String, usize>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`; `None` if `v` does not reach the loss.
    pub fn wrt(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    /// Gradient for a parameter bound with [`Tape::param`].
    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.bound
            .get(name)
            .and_then(|&id| self.grads[id].as_ref())
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.bound.keys().map(String::as_str)
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub(crate) fn push(&self, value: Tensor, op: Op) -> Result<Var<'t>> {
        self.tape.push(value, op)
    }

    fn same_tape(&self, other: &Var<'t>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Contract("operands recorded on different tapes".into()))
        }
    }
}

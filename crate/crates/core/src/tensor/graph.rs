//! Define-by-run reverse-mode differentiation.
//!
//! Every op on [`Var`] computes its value eagerly and, when any input
//! requires a gradient, records a closure that maps the output gradient to
//! input gradients. The graph is rebuilt on every forward pass and freed when
//! the last handle to its root is dropped.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::rc::Rc;

use super::{Tensor, TensorError};

thread_local! {
    static NO_GRAD: Cell<bool> = const { Cell::new(false) };
    static STRICT: Cell<bool> = const { Cell::new(false) };
}

/// Disables graph recording on this thread until the guard is dropped.
pub struct NoGradGuard {
    previous: bool,
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        NO_GRAD.with(|c| c.set(self.previous));
    }
}

pub fn no_grad() -> NoGradGuard {
    let previous = NO_GRAD.with(|c| c.replace(true));
    NoGradGuard { previous }
}

pub fn grad_enabled() -> bool {
    !NO_GRAD.with(|c| c.get())
}

/// In strict mode every op rejects inputs containing NaN or infinity.
pub fn set_strict(strict: bool) {
    STRICT.with(|c| c.set(strict));
}

pub fn strict() -> bool {
    STRICT.with(|c| c.get())
}

/// Maps the output gradient to one optional gradient per parent.
pub(crate) type BackwardFn = Box<dyn Fn(&[Var], &[f64]) -> Vec<Option<Vec<f64>>>>;

struct Node {
    value: Tensor,
    requires_grad: bool,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
    grad: RefCell<Option<Vec<f64>>>,
}

/// A tensor participating in the differentiation graph.
#[derive(Clone)]
pub struct Var(Rc<Node>);

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("value", &self.0.value)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl Var {
    /// A leaf that accumulates gradient.
    pub fn leaf(value: Tensor) -> Var {
        Var::make_leaf(value, true)
    }

    /// A leaf that never receives gradient.
    pub fn constant(value: Tensor) -> Var {
        Var::make_leaf(value, false)
    }

    fn make_leaf(value: Tensor, requires_grad: bool) -> Var {
        Var(Rc::new(Node {
            value,
            requires_grad,
            parents: Vec::new(),
            backward: None,
            grad: RefCell::new(None),
        }))
    }

    /// Records an op result. Parents are retained only when a gradient can
    /// flow to at least one of them.
    pub(crate) fn from_op(value: Tensor, parents: &[&Var], backward: BackwardFn) -> Var {
        let requires_grad = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if !requires_grad {
            return Var::constant(value);
        }
        Var(Rc::new(Node {
            value,
            requires_grad: true,
            parents: parents.iter().map(|p| (*p).clone()).collect(),
            backward: Some(backward),
            grad: RefCell::new(None),
        }))
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn data(&self) -> &[f64] {
        self.0.value.data()
    }

    pub fn numel(&self) -> usize {
        self.0.value.numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Gradient accumulated on a leaf by [`Var::backward`].
    pub fn grad(&self) -> Option<Tensor> {
        self.0
            .grad
            .borrow()
            .as_ref()
            .map(|g| Tensor::from_parts(self.shape().to_vec(), g.clone()))
    }

    pub fn take_grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow_mut().take()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub fn ptr_eq(&self, other: &Var) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    /// Back-propagates from a single-element output, accumulating into the
    /// `grad` slot of every reachable leaf that requires a gradient.
    pub fn backward(&self) -> Result<(), TensorError> {
        if self.numel() != 1 {
            return Err(TensorError::InvalidShape {
                op: "backward",
                shape: self.shape().to_vec(),
                reason: "backward needs a single-element output".into(),
            });
        }
        self.backward_with(vec![1.0])
    }

    pub fn backward_with(&self, seed: Vec<f64>) -> Result<(), TensorError> {
        if seed.len() != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "backward",
                lhs: self.shape().to_vec(),
                rhs: vec![seed.len()],
            });
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topological_order();
        let mut pending: HashMap<*const Node, Vec<f64>> = HashMap::new();
        pending.insert(Rc::as_ptr(&self.0), seed);
        for var in order.iter().rev() {
            let key = Rc::as_ptr(&var.0);
            let Some(grad) = pending.remove(&key) else {
                continue;
            };
            match &var.0.backward {
                None => {
                    let mut slot = var.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, g)| *a += g),
                        None => *slot = Some(grad),
                    }
                }
                Some(f) => {
                    let parent_grads = f(&var.0.parents, &grad);
                    debug_assert_eq!(parent_grads.len(), var.0.parents.len());
                    for (parent, pg) in var.0.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), parent.numel());
                        let pkey = Rc::as_ptr(&parent.0);
                        match pending.get_mut(&pkey) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, g)| *a += g),
                            None => {
                                pending.insert(pkey, pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Nodes reachable from `self` that require gradient, parents first.
    fn topological_order(&self) -> Vec<Var> {
        let mut order = Vec::new();
        let mut visited: HashMap<*const Node, ()> = HashMap::new();
        // Iterative post-order DFS; deep graphs would overflow a recursive walk.
        let mut stack: Vec<(Var, usize)> = vec![(self.clone(), 0)];
        visited.insert(Rc::as_ptr(&self.0), ());
        while let Some((var, next)) = stack.pop() {
            if next < var.0.parents.len() {
                let parent = var.0.parents[next].clone();
                stack.push((var, next + 1));
                if parent.requires_grad() && !visited.contains_key(&Rc::as_ptr(&parent.0)) {
                    visited.insert(Rc::as_ptr(&parent.0), ());
                    stack.push((parent, 0));
                }
            } else {
                order.push(var);
            }
        }
        order
    }
}

pub(crate) fn check_finite(op: &'static str, inputs: &[&Var]) -> Result<(), TensorError> {
    if strict() && inputs.iter().any(|v| v.value().has_non_finite()) {
        return Err(TensorError::NonFinite { op });
    }
    Ok(())
}

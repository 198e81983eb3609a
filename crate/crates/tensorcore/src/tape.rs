//! Wengert tape: reverse-mode differentiation via operation recording.
//!
//! Every operation appends one node holding references to its parents and a
//! closure implementing the local gradient rule. `backward` sweeps the tape
//! once in reverse, accumulating parent gradients in recording order, which
//! keeps results bit-identical across runs.

use std::cell::RefCell;
use std::rc::Rc;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Local gradient rule: receives the output gradient and a mask of which
/// parents need gradients; returns one optional gradient per parent.
pub(crate) type BackwardFn<E> = Box<dyn Fn(&Tensor<E>, &[bool]) -> Vec<Option<Tensor<E>>>>;

struct Node<E: Element> {
    /// Tape ids of differentiable parents, aligned with the closure's parent
    /// order; `None` marks a constant input.
    parents: Vec<Option<usize>>,
    shape: Vec<usize>,
    /// `None` for leaves.
    backward: Option<BackwardFn<E>>,
}

struct TapeInner<E: Element> {
    nodes: Vec<Node<E>>,
    grad_enabled: bool,
}

/// Shared handle to a recording tape. Single-threaded by design: each worker
/// owns its own tape.
pub struct Tape<E: Element = f32> {
    inner: Rc<RefCell<TapeInner<E>>>,
}

impl<E: Element> Clone for Tape<E> {
    fn clone(&self) -> Self {
        Self {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Tape<E> {
    /// A tape that records gradients.
    pub fn new() -> Self {
        Self {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                grad_enabled: true,
            })),
        }
    }

    /// A tape that runs the same ops without recording; used for inference.
    pub fn inference() -> Self {
        Self {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                grad_enabled: false,
            })),
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.inner.borrow().grad_enabled
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn same_tape(&self, other: &Tape<E>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    /// Register an input. Only `requires_grad` leaves occupy a tape slot.
    pub fn leaf(&self, value: Tensor<E>, requires_grad: bool) -> Var<E> {
        let node = if requires_grad && self.grad_enabled() {
            let mut inner = self.inner.borrow_mut();
            let id = inner.nodes.len();
            inner.nodes.push(Node {
                parents: Vec::new(),
                shape: value.shape().to_vec(),
                backward: None,
            });
            Some(id)
        } else {
            None
        };
        Var {
            tape: self.clone(),
            value,
            node,
        }
    }

    pub fn constant(&self, value: Tensor<E>) -> Var<E> {
        self.leaf(value, false)
    }

    /// Record an op result. Skips recording when gradients are off or no
    /// parent participates in differentiation.
    pub(crate) fn record(
        &self,
        parents: &[&Var<E>],
        value: Tensor<E>,
        backward: BackwardFn<E>,
    ) -> Var<E> {
        let any_tracked = parents.iter().any(|p| p.node.is_some());
        if !self.grad_enabled() || !any_tracked {
            return Var {
                tape: self.clone(),
                value,
                node: None,
            };
        }
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            parents: parents.iter().map(|p| p.node).collect(),
            shape: value.shape().to_vec(),
            backward: Some(backward),
        });
        Var {
            tape: self.clone(),
            value,
            node: Some(id),
        }
    }

    pub(crate) fn check_same_tape(&self, op: &'static str, others: &[&Var<E>]) -> Result<()> {
        for v in others {
            if !self.same_tape(&v.tape) {
                return Err(TensorError::TapeMismatch { op });
            }
        }
        Ok(())
    }

    /// Reverse sweep from `loss`, visiting each recorded op exactly once.
    pub fn backward(&self, loss: &Var<E>) -> Result<Gradients<E>> {
        if !loss.value.is_scalar() {
            return Err(TensorError::NonScalarLoss(loss.value.shape().to_vec()));
        }
        let inner = self.inner.borrow();
        let mut grads: Vec<Option<Tensor<E>>> = vec![None; inner.nodes.len()];
        let root = match loss.node {
            Some(id) => id,
            // Loss does not depend on any tracked leaf: all gradients are zero.
            None => return Ok(Gradients { grads }),
        };
        grads[root] = Some(Tensor::ones(loss.value.shape().to_vec()));
        for id in (0..=root).rev() {
            let Some(grad_out) = grads[id].take() else {
                continue;
            };
            let node = &inner.nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                grads[id] = Some(grad_out); // leaf: keep the accumulated gradient
                continue;
            };
            if !grad_out.all_finite() {
                return Err(TensorError::NonFinite { op: "backward" });
            }
            let needs: Vec<bool> = node.parents.iter().map(|p| p.is_some()).collect();
            let parent_grads = backward(&grad_out, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (slot, grad) in node.parents.iter().zip(parent_grads.into_iter()) {
                let (Some(pid), Some(g)) = (slot, grad) else {
                    continue;
                };
                debug_assert_eq!(g.shape(), &inner.nodes[*pid].shape[..]);
                match &mut grads[*pid] {
                    Some(acc) => acc.accumulate(&g)?,
                    empty => *empty = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients for every tracked leaf after a `backward` sweep.
pub struct Gradients<E: Element = f32> {
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Element> Gradients<E> {
    pub fn get(&self, var: &Var<E>) -> Option<&Tensor<E>> {
        var.node.and_then(|id| self.grads.get(id)).and_then(|g| g.as_ref())
    }

    /// Gradient for a leaf, with zeros for leaves the loss never touched.
    pub fn get_or_zeros(&self, var: &Var<E>) -> Tensor<E> {
        match self.get(var) {
            Some(g) => g.clone(),
            None => Tensor::zeros(var.value().shape().to_vec()),
        }
    }
}

/// A tensor bound to a tape position.
pub struct Var<E: Element = f32> {
    pub(crate) tape: Tape<E>,
    pub(crate) value: Tensor<E>,
    pub(crate) node: Option<usize>,
}

impl<E: Element> Clone for Var<E> {
    fn clone(&self) -> Self {
        Self {
            tape: self.tape.clone(),
            value: self.value.clone(),
            node: self.node,
        }
    }
}

impl<E: Element> Var<E> {
    pub fn value(&self) -> &Tensor<E> {
        &self.value
    }

    pub fn tensor(&self) -> Tensor<E> {
        self.value.clone()
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn tape(&self) -> &Tape<E> {
        &self.tape
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }
}

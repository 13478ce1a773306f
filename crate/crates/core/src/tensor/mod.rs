//! Dense `f64` tensors with tape-style reverse-mode differentiation.
//!
//! Every operation records its parents and a backward closure at forward
//! time, so the graph is whatever the forward pass actually executed
//! (including data-dependent loops). [`Tensor::backward`] walks the graph
//! in reverse topological order and leaves a gradient on every tensor that
//! requires one.
//!
//! Tensors are immutable once built; only the gradient buffer changes.
//! Learnable state lives in [`Parameter`], which swaps in a fresh leaf
//! tensor whenever the optimizer updates it.

mod checkpoint;
mod conv;
pub mod gradcheck;
mod linalg;
mod ops;
mod optim;
mod param;
mod pool;
mod sample;

use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use conv::Conv2dOptions;
pub use linalg::{mac_count, reset_mac_count};
pub use optim::{cosine_lr, AdamW};
pub use param::{Module, Parameter};

/// Gradient returned by a backward closure for each parent, in order.
/// `None` means "no contribution".
pub type ParentGrads = Vec<Option<Vec<f64>>>;

type BackwardFn = Box<dyn Fn(&[f64]) -> ParentGrads + Send + Sync>;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with graph recording disabled on the current thread.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

struct Node {
    op: &'static str,
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    node: Option<Node>,
    backward_done: AtomicBool,
}

/// A dense row-major tensor of `f64`.
#[derive(Clone)]
pub struct Tensor(Arc<Inner>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.0.shape);
        if let Some(node) = &self.0.node {
            s.field("op", &node.op);
        }
        s.field("requires_grad", &self.0.requires_grad);
        if self.numel() <= 16 {
            s.field("data", &self.0.data);
        }
        s.finish()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, node: Option<Node>) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor(Arc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            node,
            backward_done: AtomicBool::new(false),
        }))
    }

    /// Creates a constant tensor; fails if `data` does not fill `shape`.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if numel_of(shape) != data.len() {
            return Err(Error::dim(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                numel_of(shape),
                data.len()
            )));
        }
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// Like [`Tensor::new`] but the length check is an assertion.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(numel_of(shape), data.len(), "shape {shape:?} vs len {}", data.len());
        Self::build(shape.to_vec(), data, false, None)
    }

    /// A leaf that collects gradients.
    pub fn leaf(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(numel_of(shape), data.len(), "shape {shape:?} vs len {}", data.len());
        Self::build(shape.to_vec(), data, true, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(shape.to_vec(), vec![0.0; numel_of(shape)], false, None)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::build(shape.to_vec(), vec![value; numel_of(shape)], false, None)
    }

    pub fn scalar(value: f64) -> Self {
        Self::build(vec![1], vec![value], false, None)
    }

    /// Returns a gradient-collecting leaf holding a copy of this tensor's data.
    pub fn to_leaf(&self) -> Self {
        Self::build(self.0.shape.clone(), self.0.data.clone(), true, None)
    }

    /// Returns a constant copy cut off from the graph.
    pub fn detach(&self) -> Self {
        Self::build(self.0.shape.clone(), self.0.data.clone(), false, None)
    }

    /// Records a new graph node. `backward` receives the output gradient and
    /// returns one optional gradient per parent, each shaped like that parent.
    pub fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: impl Fn(&[f64]) -> ParentGrads + Send + Sync + 'static,
    ) -> Self {
        let requires_grad = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if requires_grad {
            let node = Node {
                op,
                parents,
                backward: Box::new(backward),
            };
            Self::build(shape, data, true, Some(node))
        } else {
            Self::build(shape, data, false, None)
        }
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.0.shape[axis]
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().expect("grad lock").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock") = None;
    }

    fn accumulate_grad(&self, g: &[f64]) {
        let mut slot = self.0.grad.lock().expect("grad lock");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Tensors reachable from `self` through recorded nodes, parents first.
    fn topo_order(&self) -> Result<Vec<Tensor>> {
        // 1 = on the DFS stack, 2 = finished
        let mut state: HashMap<u64, u8> = HashMap::new();
        let mut order = Vec::new();
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        state.insert(self.id(), 1);
        while let Some((t, next)) = stack.pop() {
            let parents = t.0.node.as_ref().map(|n| n.parents.as_slice()).unwrap_or(&[]);
            if next < parents.len() {
                let p = parents[next].clone();
                stack.push((t, next + 1));
                if !p.requires_grad() {
                    continue;
                }
                match state.get(&p.id()) {
                    None => {
                        state.insert(p.id(), 1);
                        stack.push((p, 0));
                    }
                    Some(1) => {
                        return Err(Error::Internal(format!(
                            "cycle in autodiff graph at tensor {}",
                            p.id()
                        )))
                    }
                    Some(_) => {}
                }
            } else {
                state.insert(t.id(), 2);
                order.push(t);
            }
        }
        Ok(order)
    }

    /// Back-propagates from a scalar loss, leaving gradients on every
    /// reachable tensor that requires them.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::contract("loss is not connected to any parameter"));
        }
        if self.0.backward_done.swap(true, Ordering::SeqCst) {
            return Err(Error::contract(
                "backward already ran on this loss; call reset_backward first",
            ));
        }
        let order = self.topo_order()?;
        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);
        for t in order.iter().rev() {
            let g = pending.remove(&t.id()).unwrap_or_else(|| vec![0.0; t.numel()]);
            t.accumulate_grad(&g);
            let Some(node) = &t.0.node else { continue };
            let grads = (node.backward)(&g);
            if grads.len() != node.parents.len() {
                return Err(Error::Internal(format!(
                    "op {} returned {} gradients for {} parents",
                    node.op,
                    grads.len(),
                    node.parents.len()
                )));
            }
            for (p, pg) in node.parents.iter().zip(grads) {
                let Some(pg) = pg else { continue };
                if !p.requires_grad() {
                    continue;
                }
                if pg.len() != p.numel() {
                    return Err(Error::Internal(format!(
                        "op {} produced gradient of length {} for parent of shape {:?}",
                        node.op,
                        pg.len(),
                        p.shape()
                    )));
                }
                match pending.get_mut(&p.id()) {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                    None => {
                        pending.insert(p.id(), pg);
                    }
                }
            }
        }
        Ok(())
    }

    /// Clears gradients on the reachable graph so `backward` may run again.
    pub fn reset_backward(&self) -> Result<()> {
        for t in self.topo_order()? {
            t.zero_grad();
        }
        self.0.backward_done.store(false, Ordering::SeqCst);
        Ok(())
    }
}

/// Row-major strides for `shape`.
pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let x = Tensor::leaf(&[3], vec![1.0, -2.0, 5.0]);
        let loss = x.sum();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_gradient_is_analytic() {
        let x = Tensor::leaf(&[3], vec![1.0, 2.0, 3.0]);
        let loss = x.mul(&x).unwrap().sum();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn second_backward_without_reset_fails() {
        let x = Tensor::leaf(&[2], vec![1.0, 2.0]);
        let loss = x.sum();
        loss.backward().unwrap();
        assert!(matches!(loss.backward(), Err(Error::Contract(_))));
        loss.reset_backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let x = Tensor::leaf(&[2], vec![1.0, 2.0]);
        let y = x.mul_scalar(2.0);
        assert!(matches!(y.backward(), Err(Error::Contract(_))));
    }

    #[test]
    fn intermediates_receive_gradients() {
        let x = Tensor::leaf(&[2], vec![1.0, 2.0]);
        let y = x.mul_scalar(3.0);
        let unused = x.mul_scalar(7.0);
        let loss = y.sum();
        loss.backward().unwrap();
        assert_eq!(y.grad().unwrap(), vec![1.0, 1.0]);
        assert_eq!(x.grad().unwrap(), vec![3.0, 3.0]);
        assert!(unused.grad().is_none());
    }

    #[test]
    fn no_grad_skips_recording() {
        let x = Tensor::leaf(&[2], vec![1.0, 2.0]);
        let y = no_grad(|| x.mul_scalar(2.0));
        assert!(!y.requires_grad());
        assert!(grad_enabled());
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // loss = sum(x*x + x)
        let x = Tensor::leaf(&[2], vec![0.5, -1.5]);
        let loss = x.mul(&x).unwrap().add(&x).unwrap().sum();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, -2.0]);
    }
}

//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Tensors are rank ≤ 4, row-major, contiguous, and generic over [`Element`]
//! (`f32` or `f64`). Every forward operation validates shapes, checks the
//! result for NaN/Inf, and — when any input is tracked — records its parents
//! together with a backward closure. [`Tensor::backward`] walks the recorded
//! graph in reverse topological order and accumulates `dLoss/dLeaf` into
//! every gradient-requiring leaf. Accumulation is additive: calling
//! `backward` twice doubles the gradients, and only [`Tensor::zero_grad`]
//! clears them.
//!
//! Values are immutable after construction except through
//! [`Tensor::apply_update`], which is how optimizers and the finite-difference
//! checker perturb parameters in place. A graph is confined to the thread
//! that built it; move raw buffers (`to_vec`) across threads instead of
//! handles.

pub(crate) mod gemm;
mod ops;

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::rc::Rc;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::{Cell, Ref, RefCell};
use core::fmt;
use core::sync::atomic::{AtomicU64, Ordering};

use arrayvec::ArrayVec;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Element precision tag, stored in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Dtype> {
        match tag {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            _ => None,
        }
    }

    /// Bytes per element.
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dtype::F32 => write!(f, "f32"),
            Dtype::F64 => write!(f, "f64"),
        }
    }
}

/// Scalar element type for tensors: `f32` or `f64`.
pub trait Element:
    num_traits::Float + num_traits::NumAssignOps + core::iter::Sum<Self> + fmt::Debug + fmt::Display + 'static
{
    const DTYPE: Dtype;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    /// Little-endian encoding into exactly `DTYPE.size()` bytes.
    fn encode_le(self, out: &mut [u8]);
    fn decode_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const DTYPE: Dtype = Dtype::F32;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn encode_le(self, out: &mut [u8]) {
        out.copy_from_slice(&self.to_le_bytes());
    }
    fn decode_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("f32 is 4 bytes"))
    }
}

impl Element for f64 {
    const DTYPE: Dtype = Dtype::F64;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn encode_le(self, out: &mut [u8]) {
        out.copy_from_slice(&self.to_le_bytes());
    }
    fn decode_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("f64 is 8 bytes"))
    }
}

/// Tensor shape: up to four positive extents; rank 0 is a scalar.
#[derive(Clone, PartialEq, Eq)]
pub struct Shape {
    dims: ArrayVec<usize, 4>,
}

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.len() > 4 {
            return Err(Error::RankTooLarge { rank: dims.len() });
        }
        let shape = Shape {
            dims: dims.iter().copied().collect(),
        };
        if dims.contains(&0) {
            return Err(Error::EmptyExtent {
                shape: shape.to_string(),
            });
        }
        Ok(shape)
    }

    pub fn scalar() -> Self {
        Shape { dims: ArrayVec::new() }
    }

    pub fn vector(n: usize) -> Self {
        let mut dims = ArrayVec::new();
        dims.push(n);
        Shape { dims }
    }

    pub fn matrix(rows: usize, cols: usize) -> Self {
        let mut dims = ArrayVec::new();
        dims.push(rows);
        dims.push(cols);
        Shape { dims }
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.dims.is_empty() {
            return write!(f, "scalar");
        }
        for (i, d) in self.dims.iter().enumerate() {
            if i > 0 {
                write!(f, "x")?;
            }
            write!(f, "{}", d)?;
        }
        Ok(())
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Gradient-propagation closure, called as `backward(parents, out_data,
/// out_grad)`.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[Tensor<T>], &[T], &[T])>;

/// Recorded operation: parent handles plus the closure that pushes this
/// node's gradient into them.
struct Op<T: Element> {
    parents: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Node<T: Element> {
    id: u64,
    shape: Shape,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: Cell<bool>,
    op: Option<Op<T>>,
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Dense numeric array with shape, optional gradient, and autodiff tracking.
///
/// Cloning a `Tensor` clones the handle, not the buffer.
pub struct Tensor<T: Element> {
    node: Rc<Node<T>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            node: Rc::clone(&self.node),
        }
    }
}

impl<T: Element> Tensor<T> {
    fn new_leaf(shape: Shape, data: Vec<T>, requires_grad: bool) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor {
            node: Rc::new(Node {
                id: fresh_id(),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: Cell::new(requires_grad),
                op: None,
            }),
        }
    }

    /// Checked construction from a row-major buffer.
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if shape.numel() != data.len() {
            return Err(Error::shape(
                "from_vec",
                format!("shape {} holds {} values, got {}", shape, shape.numel(), data.len()),
            ));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "from_vec" });
        }
        Ok(Self::new_leaf(shape, data, false))
    }

    pub fn zeros(shape: Shape) -> Self {
        let n = shape.numel();
        Self::new_leaf(shape, vec![T::zero(); n], false)
    }

    pub fn scalar(value: T) -> Self {
        Self::new_leaf(Shape::scalar(), vec![value], false)
    }

    /// Leaf filled with normal(0, std) draws, in deterministic row-major order.
    pub fn randn(shape: Shape, std: f64, rng: &mut Rng) -> Self {
        let n = shape.numel();
        let data = (0..n).map(|_| T::from_f64(rng.normal(std))).collect();
        Self::new_leaf(shape, data, false)
    }

    /// Internal op constructor: checks finiteness and wires the graph.
    pub(crate) fn from_op(
        op_name: &'static str,
        shape: Shape,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Result<Self> {
        debug_assert_eq!(shape.numel(), data.len());
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: op_name });
        }
        let tracked = parents.iter().any(|p| p.tracked());
        Ok(Tensor {
            node: Rc::new(Node {
                id: fresh_id(),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: Cell::new(false),
                op: tracked.then_some(Op { parents, backward }),
            }),
        })
    }

    pub fn id(&self) -> u64 {
        self.node.id
    }

    pub fn shape(&self) -> &Shape {
        &self.node.shape
    }

    pub fn rank(&self) -> usize {
        self.node.shape.rank()
    }

    pub fn numel(&self) -> usize {
        self.node.shape.numel()
    }

    /// Borrow of the raw row-major buffer.
    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.node.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.borrow().clone()
    }

    /// Value of a rank-0 (or single-element) tensor.
    pub fn scalar_value(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::NotScalar {
                shape: self.shape().to_string(),
            });
        }
        Ok(self.node.data.borrow()[0])
    }

    /// Marks this leaf as a trainable parameter (or not). Builder form.
    pub fn with_requires_grad(self, flag: bool) -> Self {
        self.node.requires_grad.set(flag);
        self
    }

    pub fn set_requires_grad(&self, flag: bool) {
        self.node.requires_grad.set(flag);
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad.get()
    }

    /// Whether backward has to visit this node at all.
    pub(crate) fn tracked(&self) -> bool {
        self.node.requires_grad.get() || self.node.op.is_some()
    }

    /// Copy of the accumulated gradient, if any backward pass reached this
    /// tensor since the last [`Tensor::zero_grad`].
    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.borrow().clone()
    }

    /// Gradient with absent treated as exactly zero.
    pub fn grad_or_zeros(&self) -> Vec<T> {
        self.grad().unwrap_or_else(|| vec![T::zero(); self.numel()])
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, delta: &[T]) {
        debug_assert_eq!(delta.len(), self.numel());
        if !self.tracked() {
            return;
        }
        let mut slot = self.node.grad.borrow_mut();
        match slot.as_mut() {
            Some(grad) => {
                for (g, d) in grad.iter_mut().zip(delta) {
                    *g += *d;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    /// Explicit in-place mutation of the value buffer (optimizer updates,
    /// finite-difference perturbation, fault injection in tests).
    pub fn apply_update(&self, f: impl FnOnce(&mut [T])) {
        f(&mut self.node.data.borrow_mut());
    }

    /// Leaf copy of the current values, detached from any graph.
    pub fn detach(&self) -> Tensor<T> {
        Self::new_leaf(self.shape().clone(), self.to_vec(), false)
    }

    /// Reverse-mode gradient accumulation from a scalar loss.
    pub fn backward(&self) -> Result<()> {
        if self.rank() != 0 && self.numel() != 1 {
            return Err(Error::NotScalar {
                shape: self.shape().to_string(),
            });
        }
        let order = self.topo_order();
        self.accumulate_grad(&[T::one()]);
        for node in order.iter().rev() {
            let Some(op) = &node.node.op else { continue };
            let grad = node.node.grad.borrow().clone();
            let Some(grad) = grad else { continue };
            // Clone out the data so the closure can borrow parents freely,
            // including when a parent is the node itself used twice.
            let data = node.node.data.borrow().clone();
            (op.backward)(&op.parents, &data, &grad);
            // Only leaves (and explicitly retained intermediates) keep their
            // gradient; op nodes are consumed so a second backward pass
            // starts clean and leaf accumulation stays purely additive.
            if !node.node.requires_grad.get() {
                *node.node.grad.borrow_mut() = None;
            }
        }
        Ok(())
    }

    /// Post-order over the reachable graph; consumers end up after their
    /// parents, so iterating in reverse propagates top-down.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited = BTreeSet::new();
        let mut stack = vec![(self.clone(), false)];
        while let Some((tensor, expanded)) = stack.pop() {
            if expanded {
                order.push(tensor);
                continue;
            }
            if !visited.insert(tensor.id()) {
                continue;
            }
            stack.push((tensor.clone(), true));
            if let Some(op) = &tensor.node.op {
                for parent in &op.parents {
                    if parent.tracked() && !visited.contains(&parent.id()) {
                        stack.push((parent.clone(), false));
                    }
                }
            }
        }
        order
    }

    pub(crate) fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape().dims() {
            &[rows, cols] => Ok((rows, cols)),
            other => Err(Error::shape(op, format!("expected a matrix, got rank {}", other.len()))),
        }
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor<{}>(id={}, shape={}, requires_grad={})",
            T::DTYPE,
            self.id(),
            self.shape(),
            self.requires_grad()
        )
    }
}

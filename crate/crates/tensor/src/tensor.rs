use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Result, TensorError};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static NO_GRAD_DEPTH: Cell<usize> = const { Cell::new(0) };
}

/// Runs `f` without recording a computation graph. Results of ops evaluated
/// inside never track gradients, regardless of their inputs.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Guard;
    impl Drop for Guard {
        fn drop(&mut self) {
            NO_GRAD_DEPTH.with(|d| d.set(d.get() - 1));
        }
    }
    NO_GRAD_DEPTH.with(|d| d.set(d.get() + 1));
    let _guard = Guard;
    f()
}

pub fn grad_enabled() -> bool {
    NO_GRAD_DEPTH.with(|d| d.get() == 0)
}

/// The backward half of a recorded operation.
///
/// `inputs` lists the operands in a fixed order and `backward` returns one
/// entry per operand: the vector-Jacobian product of `grad_out` with respect
/// to that operand, or `None` when the operand receives no gradient.
pub trait Backward {
    fn name(&self) -> &'static str;
    fn inputs(&self) -> Vec<Tensor>;
    fn backward(&self, grad_out: &[f64]) -> Vec<Option<Vec<f64>>>;
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    track_grad: bool,
    op: Option<Box<dyn Backward>>,
}

/// Dense row-major f64 tensor. Cloning is cheap and shares storage, so a
/// clone of a parameter observes optimizer updates.
#[derive(Clone)]
pub struct Tensor(Rc<Inner>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.0.data.borrow();
        let preview: Vec<f64> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("track_grad", &self.0.track_grad)
            .field("op", &self.0.op.as_ref().map(|o| o.name()))
            .field("data", &preview)
            .finish()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

impl Tensor {
    fn build(
        op_name: &'static str,
        data: Vec<f64>,
        shape: Vec<usize>,
        track_grad: bool,
        op: Option<Box<dyn Backward>>,
    ) -> Result<Tensor> {
        let expected = numel_of(&shape);
        if data.len() != expected {
            return Err(TensorError::DataLength {
                op: op_name,
                shape,
                expected,
                got: data.len(),
            });
        }
        if shape.contains(&0) {
            return Err(TensorError::invalid(op_name, "zero-sized dimension"));
        }
        check_finite(op_name, &data)?;
        Ok(Tensor(Rc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            track_grad,
            op,
        })))
    }

    /// A constant (non-tracked) tensor.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        Self::build("new", data, shape.to_vec(), false, None)
    }

    /// A leaf tensor that accumulates gradients.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        Self::build("param", data, shape.to_vec(), true, None)
    }

    pub fn scalar(value: f64) -> Result<Tensor> {
        Self::new(vec![value], &[])
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        assert!(value.is_finite(), "fill value must be finite");
        Self::build("full", vec![value; numel_of(shape)], shape.to_vec(), false, None)
            .expect("fill construction is infallible for positive shapes")
    }

    /// Records the result of an operation. The op is kept only when gradient
    /// recording is enabled and at least one input tracks gradients.
    pub fn from_op(data: Vec<f64>, shape: &[usize], op: Box<dyn Backward>) -> Result<Tensor> {
        let name = op.name();
        let track = grad_enabled() && op.inputs().iter().any(Tensor::requires_grad);
        let op = if track { Some(op) } else { None };
        Self::build(name, data, shape.to_vec(), track, op)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel_of(&self.0.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.track_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.op.is_none()
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    /// Mutable access to the storage, for optimizers and finite-difference
    /// probes. Callers must keep values finite.
    pub fn data_mut(&self) -> RefMut<'_, Vec<f64>> {
        self.0.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data.borrow()[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    /// Overwrites the gradient slot, e.g. after clipping.
    pub fn set_grad(&self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.numel() {
            return Err(TensorError::DataLength {
                op: "set_grad",
                shape: self.shape().to_vec(),
                expected: self.numel(),
                got: grad.len(),
            });
        }
        *self.0.grad.borrow_mut() = Some(grad);
        Ok(())
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Copy of the values with no graph history.
    pub fn detach(&self) -> Tensor {
        Self::build("detach", self.to_vec(), self.0.shape.clone(), false, None)
            .expect("detached copy of a valid tensor")
    }

    /// Fresh leaf with the same values that tracks gradients.
    pub fn detach_param(&self) -> Tensor {
        Self::build("detach", self.to_vec(), self.0.shape.clone(), true, None)
            .expect("detached copy of a valid tensor")
    }

    fn accumulate_grad(&self, g: &[f64]) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Reverse-mode sweep from a scalar. Every tracked ancestor's gradient
    /// slot is incremented by this call's contribution.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NotScalar {
                shape: self.shape().to_vec(),
            });
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topological_order();
        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);

        for node in order.iter().rev() {
            let Some(g) = pending.get(&node.id()).cloned() else {
                continue;
            };
            if let Some(op) = node.0.op.as_ref() {
                let inputs = op.inputs();
                let grads = op.backward(&g);
                debug_assert_eq!(inputs.len(), grads.len(), "{}: gradient arity", op.name());
                for (input, grad) in inputs.iter().zip(grads) {
                    let Some(grad) = grad else { continue };
                    if !input.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(grad.len(), input.numel(), "{}: gradient length", op.name());
                    match pending.get_mut(&input.id()) {
                        Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, b)| *a += b),
                        None => {
                            pending.insert(input.id(), grad);
                        }
                    }
                }
            }
        }

        for node in &order {
            if let Some(g) = pending.get(&node.id()) {
                check_finite("backward", g)?;
                node.accumulate_grad(g);
            }
        }
        Ok(())
    }

    /// Tracked nodes reachable from `self`, inputs before consumers.
    fn topological_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        // (node, children_pushed)
        let mut stack = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.id()) {
                continue;
            }
            stack.push((node.clone(), true));
            if let Some(op) = node.0.op.as_ref() {
                for input in op.inputs() {
                    if input.requires_grad() && !visited.contains(&input.id()) {
                        stack.push((input, false));
                    }
                }
            }
        }
        order
    }
}

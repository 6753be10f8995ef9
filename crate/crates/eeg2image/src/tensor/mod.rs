//! Dense n-dimensional tensors with reverse-mode automatic differentiation.
//!
//! Tensors form an implicit DAG: each op output holds `Rc` edges to its
//! inputs together with a backward closure. [`Tensor::backward`] on a scalar
//! loss walks the graph once in reverse topological (creation) order and
//! accumulates gradients into every reachable gradient-tracking leaf.
//!
//! Values are 64-bit floats throughout. Tensors are immutable after creation
//! except through [`Tensor::set_data`], which exists for optimizer steps and
//! running-statistics buffers.

mod gemm;
mod ops;

pub use ops::{batchnorm_eval, batchnorm_train, layer_norm, Padding};

use crate::error::{Error, Result};
use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

type BackwardFn = Box<dyn Fn(&[f64])>;

pub(crate) struct Node {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: Cell<bool>,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
    back_done: Cell<bool>,
}

#[derive(Clone)]
pub struct Tensor {
    node: Rc<Node>,
}

fn check_shape(data_len: usize, shape: &[usize]) -> Result<()> {
    if shape.iter().any(|&e| e == 0) {
        return Err(Error::Shape(format!("zero extent in shape {shape:?}")));
    }
    let n: usize = shape.iter().product();
    if n != data_len {
        return Err(Error::Shape(format!(
            "shape {shape:?} implies {n} elements, got {data_len}"
        )));
    }
    Ok(())
}

impl Tensor {
    fn leaf(data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<Tensor> {
        check_shape(data.len(), shape)?;
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "leaf tensor of shape {shape:?} contains {bad}"
            )));
        }
        Ok(Tensor {
            node: Rc::new(Node {
                shape: shape.to_vec(),
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: Cell::new(requires_grad),
                parents: Vec::new(),
                backward: None,
                back_done: Cell::new(false),
            }),
        })
    }

    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        Tensor::leaf(data, shape, false)
    }

    /// Gradient-tracking leaf (a trainable parameter).
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        Tensor::leaf(data, shape, true)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::leaf(vec![0.0; n], shape, false).expect("zeros shape")
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::leaf(vec![value; n], shape, false).expect("full shape")
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::leaf(vec![value], &[1], false).expect("scalar")
    }

    pub(crate) fn from_op(
        data: Vec<f64>,
        shape: Vec<usize>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let (parents, backward) = if requires_grad {
            (parents, Some(backward))
        } else {
            (Vec::new(), None)
        };
        Tensor {
            node: Rc::new(Node {
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: Cell::new(requires_grad),
                parents,
                backward,
                back_done: Cell::new(false),
            }),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn numel(&self) -> usize {
        self.node.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad.get()
    }

    /// Stop tracking gradients for this leaf. Used to freeze trained
    /// upstream models during downstream training.
    pub fn freeze(&self) {
        assert!(
            self.node.parents.is_empty(),
            "freeze() is only meaningful on leaf tensors"
        );
        self.node.requires_grad.set(false);
    }

    pub fn data(&self) -> Vec<f64> {
        self.node.data.borrow().clone()
    }

    pub fn with_data<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.node.data.borrow())
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.node.data.borrow()[0]
    }

    /// Overwrite the stored values. Only for optimizer updates and
    /// running-statistics buffers; shape must match.
    pub fn set_data(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.numel() {
            return Err(Error::Shape(format!(
                "set_data: {} values into shape {:?}",
                values.len(),
                self.shape()
            )));
        }
        self.node.data.borrow_mut().copy_from_slice(values);
        Ok(())
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.node.grad.borrow().clone()
    }

    pub fn grad_or_zeros(&self) -> Vec<f64> {
        self.grad().unwrap_or_else(|| vec![0.0; self.numel()])
    }

    pub fn clear_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    /// Copy of the values as a fresh non-tracking leaf; cuts the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::leaf(self.data(), &self.node.shape, false).expect("detach")
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        let data = self.node.data.borrow();
        for (i, v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("{what}[{i}] = {v}")));
            }
        }
        Ok(())
    }

    fn ptr_id(&self) -> usize {
        Rc::as_ptr(&self.node) as usize
    }

    fn accumulate_grad(&self, g: &[f64]) {
        if !self.node.requires_grad.get() {
            return;
        }
        let mut slot = self.node.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Reverse-mode pass from a scalar loss. Populates `grad` on every
    /// gradient-tracking leaf reachable from the loss. A second call on the
    /// same graph without re-running the forward pass is an error.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Graph(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if self.node.back_done.get() {
            return Err(Error::Graph(
                "backward already ran on this graph; rebuild the forward pass first".into(),
            ));
        }
        if !self.item().is_finite() {
            return Err(Error::NonFinite(format!("loss = {}", self.item())));
        }

        // Iterative post-order DFS; creation order is the topological order.
        let mut topo: Vec<Tensor> = Vec::new();
        let mut seen: HashSet<usize> = HashSet::new();
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        seen.insert(self.ptr_id());
        while let Some((t, pi)) = stack.pop() {
            if pi < t.node.parents.len() {
                let parent = t.node.parents[pi].clone();
                stack.push((t, pi + 1));
                if parent.node.requires_grad.get() && seen.insert(parent.ptr_id()) {
                    stack.push((parent, 0));
                }
            } else {
                topo.push(t);
            }
        }

        self.node.back_done.set(true);
        self.accumulate_grad(&[1.0]);
        for t in topo.iter().rev() {
            if let Some(back) = &t.node.backward {
                let g = t.node.grad.borrow().clone();
                if let Some(g) = g {
                    back(&g);
                }
            }
        }
        Ok(())
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad.get())
            .finish()
    }
}

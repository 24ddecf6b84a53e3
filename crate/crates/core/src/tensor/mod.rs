//! Dense `f64` tensors with tape-free reverse-mode automatic differentiation.
//!
//! Every [`Tensor`] is an immutable node. Operations on tensors that require
//! gradients record a backward closure together with their parents, forming a
//! DAG rooted at the loss. [`Tensor::backward`] walks that DAG in reverse
//! topological order and accumulates gradients into the leaves that asked
//! for them.
//!
//! Parameters are leaves created with [`Tensor::parameter`]. Optimizers never
//! mutate a tensor in place: they build a fresh leaf with the updated values.

mod conv;
mod fft;
pub mod gradcheck;
mod ops;
mod spectral;

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

pub use conv::{conv2d, conv_output_size, conv_transpose2d, conv_transpose_output_size};
pub use fft::rfft_circular_conv;
pub use ops::Activation;
pub use spectral::{
    largest_singular_value, spectral_normalize, spectral_normalize_fixed, SpectralNormOutput,
};

type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Option<Vec<f64>>>>;

struct GradFn {
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: Rc<Vec<f64>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    grad_fn: Option<GradFn>,
}

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// N-dimensional real array with optional gradient tracking.
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl Tensor {
    fn leaf(shape: Vec<usize>, data: Rc<Vec<f64>>, requires_grad: bool) -> Tensor {
        Tensor(Rc::new(Node {
            id: next_id(),
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            grad_fn: None,
        }))
    }

    /// Constant tensor. Fails when `shape` does not account for every element.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        check_shape(shape, data.len())?;
        Ok(Tensor::leaf(shape.to_vec(), Rc::new(data), false))
    }

    /// Trainable leaf tensor.
    pub fn parameter(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        check_shape(shape, data.len())?;
        Ok(Tensor::leaf(shape.to_vec(), Rc::new(data), true))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::leaf(shape.to_vec(), Rc::new(vec![value; n]), false)
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::leaf(vec![1], Rc::new(vec![value]), false)
    }

    /// Builds an op output. When no parent tracks gradients the backward
    /// closure is dropped and the result is a plain constant.
    pub(crate) fn from_op<F>(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: F,
    ) -> Tensor
    where
        F: Fn(&[f64]) -> Vec<Option<Vec<f64>>> + 'static,
    {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        #[cfg(debug_assertions)]
        {
            if parents.iter().all(|p| p.is_finite()) && !data.iter().all(|v| v.is_finite()) {
                panic!("non-finite output from an op on finite inputs (shape {shape:?})");
            }
        }
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let grad_fn = requires_grad.then(|| GradFn {
            parents,
            backward: Box::new(backward),
        });
        Tensor(Rc::new(Node {
            id: next_id(),
            shape,
            data: Rc::new(data),
            requires_grad,
            grad: RefCell::new(None),
            grad_fn,
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub(crate) fn data_rc(&self) -> Rc<Vec<f64>> {
        Rc::clone(&self.0.data)
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.as_ref().clone()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_finite(&self) -> bool {
        self.0.data.iter().all(|v| v.is_finite())
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    /// A constant sharing this tensor's values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::leaf(self.0.shape.clone(), self.data_rc(), false)
    }

    /// A fresh gradient-tracking leaf sharing this tensor's values.
    pub fn requires_grad_leaf(&self) -> Tensor {
        Tensor::leaf(self.0.shape.clone(), self.data_rc(), true)
    }

    /// Accumulated gradient of a leaf, if `backward` has reached it.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
    /// reachable leaf created with `requires_grad`; repeated calls add up.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Numeric(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topological_order();
        let mut grads: HashMap<u64, Vec<f64>> = HashMap::new();
        grads.insert(self.0.id, vec![1.0]);
        for node in order.iter().rev() {
            let Some(g) = grads.remove(&node.0.id) else {
                continue;
            };
            match &node.0.grad_fn {
                Some(gf) => {
                    let parent_grads = (gf.backward)(&g);
                    debug_assert_eq!(parent_grads.len(), gf.parents.len());
                    for (parent, pg) in gf.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), parent.numel());
                        match grads.get_mut(&parent.0.id) {
                            Some(acc) => add_assign(acc, &pg),
                            None => {
                                grads.insert(parent.0.id, pg);
                            }
                        }
                    }
                }
                None => {
                    let mut slot = node.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => add_assign(acc, &g),
                        None => *slot = Some(g),
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over gradient-tracking nodes, iterative to keep deep graphs
    /// off the call stack.
    fn topological_order(&self) -> Vec<Tensor> {
        let mut visited: HashMap<u64, ()> = HashMap::new();
        let mut order = Vec::new();
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.0.id, ());
        while let Some((node, child)) = stack.pop() {
            let parents = node.0.grad_fn.as_ref().map(|g| g.parents.as_slice());
            match parents.and_then(|p| p.get(child)) {
                Some(parent) => {
                    let parent = parent.clone();
                    stack.push((node, child + 1));
                    if parent.requires_grad() && !visited.contains_key(&parent.0.id) {
                        visited.insert(parent.0.id, ());
                        stack.push((parent, 0));
                    }
                }
                None => order.push(node),
            }
        }
        order
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::shape(
            "tensor",
            format!("shape {shape:?} must be non-empty with positive extents"),
        ));
    }
    let n: usize = shape.iter().product();
    if n != len {
        return Err(Error::shape(
            "tensor",
            format!("shape {shape:?} holds {n} elements but {len} values were given"),
        ));
    }
    Ok(())
}

pub(crate) fn add_assign(acc: &mut [f64], other: &[f64]) {
    for (a, b) in acc.iter_mut().zip(other) {
        *a += b;
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` for row-major operands, where
/// `op(a)` is `m×k` and `op(b)` is `k×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds asserted above; strides describe row-major storage of the
    // stated logical dimensions.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_weight_gradient_is_sum_of_inputs() {
        let w = Tensor::parameter(&[1], vec![0.7]).unwrap();
        let x = Tensor::from_vec(&[4], vec![1.0, -2.0, 3.5, 0.25]).unwrap();
        let loss = x.mul_scalar_tensor(&w).unwrap().sum();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![2.75]);
    }

    #[test]
    fn disconnected_parameter_gets_no_gradient() {
        let w = Tensor::parameter(&[2], vec![1.0, 2.0]).unwrap();
        let unused = Tensor::parameter(&[2], vec![1.0, 2.0]).unwrap();
        let loss = w.mul(&w).unwrap().sum();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![2.0, 4.0]);
        assert!(unused.grad().unwrap_or_else(|| vec![0.0; 2]).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let w = Tensor::parameter(&[1], vec![3.0]).unwrap();
        let loss = w.mul(&w).unwrap().sum();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![12.0]);
        w.zero_grad();
        assert!(w.grad().is_none());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let w = Tensor::parameter(&[2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(w.backward(), Err(Error::Numeric(_))));
    }

    #[test]
    fn shared_subexpression_gradients_add() {
        // loss = sum((w*x) + (w*x)) -> dw = 2x
        let w = Tensor::parameter(&[3], vec![1.0, 1.0, 1.0]).unwrap();
        let x = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = w.mul(&x).unwrap();
        let loss = y.add(&y).unwrap().sum();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn detach_stops_gradient() {
        let w = Tensor::parameter(&[1], vec![2.0]).unwrap();
        let loss = w.mul(&w.detach()).unwrap().sum();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![2.0]);
    }

    #[test]
    fn invalid_shapes_rejected() {
        assert!(Tensor::from_vec(&[2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::from_vec(&[0], vec![]).is_err());
    }

    #[test]
    fn gemm_handles_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, &mut c, 0.0);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, &mut c, 0.0);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, 0.0);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }
}

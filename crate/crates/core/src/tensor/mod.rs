//! Minimal reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Tensor`] is an immutable, reference-counted value array. Operations on
//! tensors that require gradients record a [`GraphNode`] holding the inputs
//! and a backward rule; [`Tensor::backward`] walks the recorded graph in
//! reverse topological order and accumulates gradients into the leaves.
//!
//! ```
//! use hqlab::Tensor;
//!
//! let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
//! let loss = x.mul(&x).unwrap().sum_all();
//! loss.backward().unwrap();
//! assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
//! ```
//!
//! The graph is single-threaded (`Rc`-based). Kernels such as
//! [`conv2d`](Tensor::conv2d) may use data parallelism internally, but a
//! tensor never crosses a thread boundary.

mod elementwise;
pub mod gradcheck;
pub mod kernels;
mod linalg;
mod reduce;
mod shape_ops;

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

pub use elementwise::{elementwise, ElementwiseOp};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use reduce::{reduce, ReduceOp};

/// Arguments handed to a backward rule.
pub struct BackwardArgs<'a> {
    /// Gradient of the loss with respect to this node's output.
    pub grad_output: &'a [f64],
    /// Forward value of this node.
    pub output: &'a [f64],
    pub output_shape: &'a [usize],
    pub inputs: &'a [Tensor],
}

/// One gradient per input; `None` means "no contribution".
pub type InputGrads = Vec<Option<Vec<f64>>>;

pub type BackwardFn = Box<dyn Fn(&BackwardArgs<'_>) -> Result<InputGrads>>;

/// A recorded operation: tag, inputs and backward rule. Saved forward
/// context lives inside the backward closure.
pub struct GraphNode {
    op: &'static str,
    inputs: Vec<Tensor>,
    backward: BackwardFn,
}

impl GraphNode {
    pub fn op(&self) -> &'static str {
        self.op
    }

    pub fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
}

struct Inner {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    node: Option<GraphNode>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Inner>);

/// Counters gathered during one backward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BackwardStats {
    /// Interior nodes whose backward rule ran.
    pub nodes_visited: usize,
    /// Leaves that received a gradient.
    pub leaves_updated: usize,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_shape(data_len: usize, shape: &[usize]) -> Result<()> {
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::Shape(format!("zero extent in shape {shape:?}")));
    }
    if numel(shape) != data_len {
        return Err(Error::Shape(format!(
            "shape {shape:?} holds {} values, got {data_len}",
            numel(shape)
        )));
    }
    Ok(())
}

impl Tensor {
    fn from_parts(
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
        node: Option<GraphNode>,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Rc::new(Inner {
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            node,
        }))
    }

    /// A constant (non-differentiable) tensor.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        check_shape(data.len(), shape)?;
        Ok(Self::from_parts(shape.to_vec(), data, false, None))
    }

    /// A leaf that accumulates gradients.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        check_shape(data.len(), shape)?;
        Ok(Self::from_parts(shape.to_vec(), data, true, None))
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_parts(Vec::new(), vec![v], false, None)
    }

    pub fn scalar_param(v: f64) -> Self {
        Self::from_parts(Vec::new(), vec![v], true, None)
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(data, &[n])
    }

    pub fn full(shape: &[usize], v: f64) -> Result<Self> {
        Self::new(vec![v; numel(shape)], shape)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 1.0)
    }

    /// Builds the result of an operation. A graph node is recorded only when
    /// some input requires gradients.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        inputs: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Self {
        let requires_grad = inputs.iter().any(Tensor::requires_grad);
        let node = requires_grad.then(|| GraphNode {
            op,
            inputs,
            backward,
        });
        Self::from_parts(shape, data, requires_grad, node)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn len(&self) -> usize {
        self.0.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.data.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn node(&self) -> Option<&GraphNode> {
        self.0.node.as_ref()
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.len() != 1 {
            return Err(Error::Shape(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.0.data[0])
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Value-identical tensor severed from the graph.
    pub fn detach(&self) -> Tensor {
        Self::from_parts(self.0.shape.clone(), self.0.data.clone(), false, None)
    }

    fn key(&self) -> *const Inner {
        Rc::as_ptr(&self.0)
    }

    /// Reverse-mode sweep from a scalar loss. Gradients accumulate into
    /// every leaf with `requires_grad`; callers reset them between steps.
    pub fn backward(&self) -> Result<BackwardStats> {
        if self.len() != 1 {
            return Err(Error::NonScalarLoss(self.shape().to_vec()));
        }
        let mut stats = BackwardStats::default();
        if !self.requires_grad() {
            return Ok(stats);
        }
        let order = self.topo_order();
        let mut grads: HashMap<*const Inner, Vec<f64>> = HashMap::new();
        grads.insert(self.key(), vec![1.0]);
        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.key()) else {
                continue;
            };
            let Some(node) = &t.0.node else {
                let mut slot = t.0.grad.borrow_mut();
                match slot.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => *slot = Some(g),
                }
                stats.leaves_updated += 1;
                continue;
            };
            stats.nodes_visited += 1;
            let input_grads = (node.backward)(&BackwardArgs {
                grad_output: &g,
                output: &t.0.data,
                output_shape: &t.0.shape,
                inputs: &node.inputs,
            })?;
            if input_grads.len() != node.inputs.len() {
                return Err(Error::Shape(format!(
                    "backward of '{}' returned {} gradients for {} inputs",
                    node.op,
                    input_grads.len(),
                    node.inputs.len()
                )));
            }
            for (input, ig) in node.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if ig.len() != input.len() {
                    return Err(Error::Shape(format!(
                        "backward of '{}' returned gradient of length {} for input of shape {:?}",
                        node.op,
                        ig.len(),
                        input.shape()
                    )));
                }
                if !input.requires_grad() {
                    continue;
                }
                match grads.get_mut(&input.key()) {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                    None => {
                        grads.insert(input.key(), ig);
                    }
                }
            }
        }
        Ok(stats)
    }

    /// Post-order over the grad-requiring subgraph reachable from `self`.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen: HashSet<*const Inner> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(t.key()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = &t.0.node {
                for input in node.inputs.iter().rev() {
                    if input.requires_grad() && !seen.contains(&input.key()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        order
    }
}

/// Installs a user-defined backward rule.
///
/// `forward` computes the output shape and values from the inputs.
/// `backward` must return exactly one gradient per input, each matching that
/// input's length; violations surface as [`Error::Shape`] from
/// [`Tensor::backward`].
pub fn custom_grad<F, B>(op: &'static str, inputs: &[&Tensor], forward: F, backward: B) -> Result<Tensor>
where
    F: FnOnce(&[&Tensor]) -> Result<(Vec<usize>, Vec<f64>)>,
    B: Fn(&BackwardArgs<'_>) -> Result<Vec<Vec<f64>>> + 'static,
{
    let (shape, data) = forward(inputs)?;
    check_shape(data.len(), &shape)?;
    Ok(Tensor::from_op(
        op,
        shape,
        data,
        inputs.iter().map(|t| (*t).clone()).collect(),
        Box::new(move |args| Ok(backward(args)?.into_iter().map(Some).collect())),
    ))
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("Tensor");
        d.field("shape", &self.0.shape);
        if self.len() <= 16 {
            d.field("data", &self.0.data);
        }
        d.field("requires_grad", &self.0.requires_grad);
        if let Some(node) = &self.0.node {
            d.field("op", &node.op);
        }
        d.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn shape_invariant_enforced() {
        assert!(Tensor::new(vec![1.0, 2.0], &[3]).is_err());
        assert!(Tensor::new(vec![], &[0]).is_err());
        assert_eq!(Tensor::new(vec![1.0; 6], &[2, 3]).unwrap().len(), 6);
    }

    #[test]
    fn sum_gives_ones() {
        let x = Tensor::param(vec![1.0, -2.0, 3.0], &[3]).unwrap();
        x.sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_gradient() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        x.mul(&x).unwrap().sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let loss = x.mul(&x).unwrap().sum_all();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0, 8.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        assert!(matches!(x.exp().backward(), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn constants_never_accumulate() {
        let c = Tensor::new(vec![1.0, 2.0], &[2]).unwrap();
        let x = Tensor::param(vec![3.0, 4.0], &[2]).unwrap();
        x.mul(&c).unwrap().sum_all().backward().unwrap();
        assert!(c.grad().is_none());
        assert_eq!(x.grad().unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn detach_is_value_transparent_and_gradient_opaque() {
        let x = Tensor::param(vec![0.5, -1.5, 2.0], &[3]).unwrap();
        let d = x.detach();
        assert_eq!(d.data(), x.data());
        assert!(!d.requires_grad());
        // d(detach(x) * x)/dx == x, not 2x
        d.mul(&x).unwrap().sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), x.data().to_vec());

        let y = Tensor::param(vec![1.0], &[1]).unwrap();
        y.detach().exp().sum_all().backward().unwrap();
        assert!(y.grad().is_none());
    }

    #[test]
    fn diamond_visits_each_node_once() {
        let calls = Rc::new(Cell::new(0usize));
        let counter = calls.clone();
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let shared = custom_grad(
            "counted",
            &[&x],
            |ins| Ok((ins[0].shape().to_vec(), ins[0].data().to_vec())),
            move |args| {
                counter.set(counter.get() + 1);
                Ok(vec![args.grad_output.to_vec()])
            },
        )
        .unwrap();
        let a = shared.exp();
        let b = shared.sigmoid();
        let loss = a.add(&b).unwrap().sum_all();
        let stats = loss.backward().unwrap();
        assert_eq!(calls.get(), 1);
        // counted, exp, sigmoid, add, sum
        assert_eq!(stats.nodes_visited, 5);
        assert_eq!(stats.leaves_updated, 1);
    }

    #[test]
    fn custom_grad_identity_backward_passes_upstream() {
        let x = Tensor::param(vec![0.2, 1.7, -2.4], &[3]).unwrap();
        let r = custom_grad(
            "round_ste",
            &[&x],
            |ins| {
                Ok((
                    ins[0].shape().to_vec(),
                    ins[0].data().iter().map(|v| v.round()).collect(),
                ))
            },
            |args| Ok(vec![args.grad_output.to_vec()]),
        )
        .unwrap();
        assert_eq!(r.data(), &[0.0, 2.0, -2.0]);
        let w = Tensor::new(vec![1.0, 2.0, 3.0], &[3]).unwrap();
        r.mul(&w).unwrap().sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn custom_grad_zero_backward_blocks() {
        let x = Tensor::param(vec![0.3, 0.4], &[2]).unwrap();
        let r = custom_grad(
            "blocked",
            &[&x],
            |ins| Ok((ins[0].shape().to_vec(), ins[0].data().to_vec())),
            |args| Ok(vec![vec![0.0; args.grad_output.len()]]),
        )
        .unwrap();
        assert_eq!(r.data(), x.data());
        r.sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn custom_grad_shape_mismatch_errors() {
        let x = Tensor::param(vec![0.3, 0.4], &[2]).unwrap();
        let r = custom_grad(
            "bad",
            &[&x],
            |ins| Ok((ins[0].shape().to_vec(), ins[0].data().to_vec())),
            |_| Ok(vec![vec![1.0; 3]]),
        )
        .unwrap();
        assert!(matches!(r.sum_all().backward(), Err(Error::Shape(_))));
    }

    #[test]
    fn scaled_ste_has_unit_gradient_in_range() {
        // d(s * ste(v / s)) / dv == 1
        let s = 0.25;
        let v = Tensor::param(vec![0.3, -0.6, 0.1], &[3]).unwrap();
        let scaled = v.scale(1.0 / s);
        let q = custom_grad(
            "ste",
            &[&scaled],
            |ins| {
                Ok((
                    ins[0].shape().to_vec(),
                    ins[0].data().iter().map(|x| x.round_ties_even()).collect(),
                ))
            },
            |args| Ok(vec![args.grad_output.to_vec()]),
        )
        .unwrap();
        q.scale(s).sum_all().backward().unwrap();
        for g in v.grad().unwrap() {
            assert!((g - 1.0).abs() < 1e-15);
        }
    }
}

//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! Every operation returns a new [`Tensor`]. When gradient recording is on and
//! at least one input requires a gradient, the result keeps references to its
//! inputs together with a backward rule. Node ids are assigned from a global
//! counter, so a parent always has a smaller id than its children; sorting the
//! reachable nodes by descending id yields a valid reverse topological order.
//!
//! Inside [`no_grad`] nothing is recorded and intermediates are released as
//! soon as they go out of scope, which keeps inference memory bounded.

mod grad_check;
mod kernels;
mod ops;
mod params;
pub mod snapshot;

pub use grad_check::{grad_check, grad_check_params, relative_error};
pub use kernels::gemm;
pub use ops::sigmoid;
pub use params::{BoundParams, Param, ParamStore};

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite value produced by the forward pass")]
    NonFinite,
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with gradient recording disabled on the current thread.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let _restore = Restore(prev);
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Arguments handed to a backward rule.
pub(crate) struct BackwardArgs<'a> {
    pub parents: &'a [Tensor],
    pub out: &'a [f64],
    pub grad: &'a [f64],
    pub needs: &'a [bool],
}

type BackwardRule = Box<dyn Fn(&BackwardArgs) -> Vec<Option<Vec<f64>>>>;

struct GradFn {
    op: &'static str,
    parents: Vec<Tensor>,
    rule: BackwardRule,
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad_fn: Option<GradFn>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = self.0.grad_fn.as_ref().map(|g| g.op).unwrap_or("leaf");
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("shape", &self.0.shape)
            .field("op", &op)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn make(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, grad_fn: Option<GradFn>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad_fn,
        }))
    }

    /// Constant tensor (no gradient).
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(TensorError::InvalidArgument {
                op: "new",
                msg: format!("{} values for shape {:?}", data.len(), shape),
            });
        }
        Ok(Self::make(shape.to_vec(), data, false, None))
    }

    /// Leaf tensor that accumulates a gradient during [`Tensor::backward`].
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(TensorError::InvalidArgument {
                op: "param",
                msg: format!("{} values for shape {:?}", data.len(), shape),
            });
        }
        Ok(Self::make(shape.to_vec(), data, true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::make(shape.to_vec(), vec![0.0; numel(shape)], false, None)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::make(shape.to_vec(), vec![value; numel(shape)], false, None)
    }

    pub fn scalar(value: f64) -> Self {
        Self::make(vec![], vec![value], false, None)
    }

    /// Builds the result of an operation, recording the backward rule only when needed.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: &[&Tensor],
        rule: impl Fn(&BackwardArgs) -> Vec<Option<Vec<f64>>> + 'static,
    ) -> Self {
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if track {
            let grad_fn = GradFn {
                op,
                parents: parents.iter().map(|p| (*p).clone()).collect(),
                rule: Box::new(rule),
            };
            Self::make(shape, data, true, Some(grad_fn))
        } else {
            Self::make(shape, data, false, None)
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

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn op_name(&self) -> &'static str {
        self.0.grad_fn.as_ref().map(|g| g.op).unwrap_or("leaf")
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    /// Same values, detached from the graph.
    pub fn detach(&self) -> Tensor {
        Self::make(self.0.shape.clone(), self.0.data.clone(), false, None)
    }

    pub fn all_finite(&self) -> bool {
        self.0.data.iter().all(|v| v.is_finite())
    }

    /// Reverse-mode sweep from a scalar loss.
    ///
    /// Gradients from multiple uses of the same tensor add up. Each reachable
    /// node is visited exactly once.
    pub fn backward(&self) -> Result<Gradients> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape().to_vec()));
        }
        let mut order: Vec<Tensor> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !t.requires_grad() || !seen.insert(t.id()) {
                continue;
            }
            if let Some(gf) = &t.0.grad_fn {
                stack.extend(gf.parents.iter().cloned());
            }
            order.push(t);
        }
        order.sort_unstable_by(|a, b| b.id().cmp(&a.id()));

        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        let mut leaves: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);
        for node in &order {
            let Some(grad) = pending.remove(&node.id()) else {
                continue;
            };
            match &node.0.grad_fn {
                None => {
                    leaves.insert(node.id(), grad);
                }
                Some(gf) => {
                    let needs: Vec<bool> = gf.parents.iter().map(|p| p.requires_grad()).collect();
                    let parent_grads = (gf.rule)(&BackwardArgs {
                        parents: &gf.parents,
                        out: &node.0.data,
                        grad: &grad,
                        needs: &needs,
                    });
                    for (parent, pg) in gf.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), parent.numel(), "grad size for {}", gf.op);
                        match pending.get_mut(&parent.id()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, g)| *a += g),
                            None => {
                                pending.insert(parent.id(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(Gradients { by_id: leaves })
    }
}

/// Gradients of the leaves reached by a backward sweep.
#[derive(Debug, Default)]
pub struct Gradients {
    by_id: HashMap<u64, Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        self.by_id.get(&t.id()).map(|v| v.as_slice())
    }

    /// Gradient for `t`, or zeros when `t` did not influence the loss.
    pub fn get_or_zeros(&self, t: &Tensor) -> Vec<f64> {
        self.get(t).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; t.numel()])
    }
}

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use super::real::Real;
use super::tensor::{NodeId, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicUsize = AtomicUsize::new(1);

/// Vector-Jacobian product of one recorded operation.
///
/// Receives the gradient of the operation's output and a mask of which inputs
/// need a gradient; returns one entry per input (`None` where not requested).
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>>>;

struct Node<T: Real> {
    len: usize,
    inputs: Vec<Option<usize>>,
    backward: Option<BackwardFn<T>>,
}

/// Define-by-run gradient tape.
///
/// Every op is a method on the tape. On a recording tape an op whose inputs
/// carry nodes of this tape is appended in execution order, so the node list
/// is always topologically sorted. An inference tape evaluates the same ops
/// without recording anything; inputs are treated as constants.
pub struct Tape<T: Real = f32> {
    id: usize,
    recording: bool,
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            recording: true,
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn inference() -> Self {
        Self {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers `value` as a differentiable leaf (a parameter or an input
    /// whose gradient is wanted). On an inference tape this only detaches.
    pub fn leaf(&self, value: &Tensor<T>) -> Tensor<T> {
        if !self.recording {
            return value.detach();
        }
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        nodes.push(Node {
            len: value.numel(),
            inputs: Vec::new(),
            backward: None,
        });
        value.with_node(Some(NodeId {
            tape: self.id,
            index,
        }))
    }

    fn input_index(&self, t: &Tensor<T>) -> Result<Option<usize>> {
        match t.node() {
            None => Ok(None),
            Some(id) if id.tape == self.id => Ok(Some(id.index)),
            Some(_) => Err(Error::NotOnTape),
        }
    }

    /// Whether an op over `inputs` would be recorded.
    pub(crate) fn tracks(&self, inputs: &[&Tensor<T>]) -> bool {
        self.recording
            && inputs
                .iter()
                .any(|t| t.node().is_some_and(|id| id.tape == self.id))
    }

    /// Wraps an op result, recording it when any input is tracked.
    pub(crate) fn record(
        &self,
        inputs: &[&Tensor<T>],
        shape: Vec<usize>,
        data: Vec<T>,
        backward: BackwardFn<T>,
    ) -> Result<Tensor<T>> {
        if !self.recording {
            return Ok(Tensor::from_parts(shape, data, None));
        }
        let indices = inputs
            .iter()
            .map(|t| self.input_index(t))
            .collect::<Result<Vec<_>>>()?;
        if indices.iter().all(Option::is_none) {
            return Ok(Tensor::from_parts(shape, data, None));
        }
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        nodes.push(Node {
            len: data.len(),
            inputs: indices,
            backward: Some(backward),
        });
        Ok(Tensor::from_parts(
            shape,
            data,
            Some(NodeId {
                tape: self.id,
                index,
            }),
        ))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Gradients are accumulated additively across fan-out. Only leaf
    /// gradients are retained in the result.
    pub fn backward(&self, loss: &Tensor<T>) -> Result<Gradients<T>> {
        if loss.numel() != 1 {
            return Err(Error::NotScalar(loss.shape().to_vec()));
        }
        let root = match loss.node() {
            Some(id) if id.tape == self.id && self.recording => id.index,
            _ => return Err(Error::NotOnTape),
        };
        let nodes = self.nodes.borrow();
        let mut pending: Vec<Option<Vec<T>>> = (0..=root).map(|_| None).collect();
        pending[root] = Some(vec![T::ONE]);
        let mut leaves = HashMap::new();
        for i in (0..=root).rev() {
            let Some(grad) = pending[i].take() else {
                continue;
            };
            let node = &nodes[i];
            debug_assert_eq!(grad.len(), node.len);
            let Some(backward) = &node.backward else {
                leaves.insert(i, grad);
                continue;
            };
            let need: Vec<bool> = node.inputs.iter().map(Option::is_some).collect();
            let input_grads = backward(&grad, &need);
            for (slot, g) in node.inputs.iter().zip(input_grads) {
                if let (Some(p), Some(g)) = (slot, g) {
                    debug_assert_eq!(g.len(), nodes[*p].len);
                    match &mut pending[*p] {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                        empty => *empty = Some(g),
                    }
                }
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads: leaves,
        })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T: Real> {
    tape: usize,
    grads: HashMap<usize, Vec<T>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a leaf, or `None` if the loss does not depend on it.
    pub fn get(&self, leaf: &Tensor<T>) -> Option<Tensor<T>> {
        let id = leaf.node()?;
        if id.tape != self.tape {
            return None;
        }
        self.grads
            .get(&id.index)
            .map(|g| Tensor::from_parts(leaf.shape().to_vec(), g.clone(), None))
    }

    /// Gradient of a leaf; zeros when the leaf is unreached.
    pub fn wrt(&self, leaf: &Tensor<T>) -> Tensor<T> {
        self.get(leaf)
            .unwrap_or_else(|| Tensor::zeros(leaf.shape().to_vec()))
    }
}

use std::sync::atomic::{AtomicU64, Ordering};

use super::{Element, Result, Tensor, TensorError};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct NodeId {
    tape: u64,
    index: usize,
}

/// Backward rule of one recorded operation: receives the gradient of the
/// operation's output and accumulates into its parents.
pub(crate) type BackwardFn<E> = Box<dyn FnOnce(&[E], &mut GradSink<'_, E>)>;

struct Node<E: Element> {
    numel: usize,
    backward: Option<BackwardFn<E>>,
}

/// Ordered record of the operations executed during a forward pass.
///
/// The tape is single-writer. A tape created with [`Tape::inference`] records
/// nothing, so intermediate values are released as soon as they are dropped.
pub struct Tape<E: Element = f32> {
    id: u64,
    recording: bool,
    nodes: Vec<Node<E>>,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            recording: true,
            nodes: Vec::new(),
        }
    }

    /// A tape that never records; use for evaluation-only forwards.
    pub fn inference() -> Self {
        Self {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Number of recorded nodes (leaves included).
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers `t` as a gradient-receiving leaf. The returned tensor shares
    /// storage with `t`.
    pub fn leaf(&mut self, t: &Tensor<E>) -> Tensor<E> {
        if !self.recording {
            return t.detach();
        }
        let index = self.nodes.len();
        self.nodes.push(Node {
            numel: t.numel(),
            backward: None,
        });
        Tensor {
            shape: t.shape.clone(),
            data: std::sync::Arc::clone(&t.data),
            node: Some(NodeId { tape: self.id, index }),
        }
    }

    /// Node index of `t` on this tape, if tracked.
    pub(crate) fn parent(&self, t: &Tensor<E>) -> Result<Option<usize>> {
        match t.node {
            None => Ok(None),
            Some(id) if id.tape == self.id => Ok(Some(id.index)),
            Some(_) => Err(TensorError::ForeignTape),
        }
    }

    /// Wraps an operation result; records it when any input is tracked.
    pub(crate) fn record<F>(
        &mut self,
        shape: Vec<usize>,
        data: Vec<E>,
        parents: &[Option<usize>],
        backward: F,
    ) -> Tensor<E>
    where
        F: FnOnce(&[E], &mut GradSink<'_, E>) + 'static,
    {
        let mut out = Tensor::from_parts(shape, data);
        if self.recording && parents.iter().any(Option::is_some) {
            let index = self.nodes.len();
            self.nodes.push(Node {
                numel: out.numel(),
                backward: Some(Box::new(backward)),
            });
            out.node = Some(NodeId { tape: self.id, index });
        }
        out
    }

    /// Propagates `∂loss/∂·` to every leaf. Leaves that do not influence the
    /// loss receive zeros. Consumes the tape.
    pub fn backward(self, loss: &Tensor<E>) -> Result<Gradients<E>> {
        if loss.numel() != 1 {
            return Err(TensorError::Contract {
                op: "backward",
                msg: format!("loss must be a scalar, got shape {:?}", loss.shape()),
            });
        }
        let root = self.parent(loss)?.ok_or_else(|| TensorError::Contract {
            op: "backward",
            msg: "loss is not recorded on this tape".into(),
        })?;

        let numels: Vec<usize> = self.nodes.iter().map(|n| n.numel).collect();
        let mut grads: Vec<Option<Vec<E>>> = vec![None; self.nodes.len()];
        let mut is_leaf = vec![false; self.nodes.len()];
        grads[root] = Some(vec![E::one()]);

        let mut nodes = self.nodes;
        for index in (0..nodes.len()).rev() {
            match nodes[index].backward.take() {
                None => is_leaf[index] = true,
                Some(rule) => {
                    if let Some(g) = grads[index].take() {
                        let mut sink = GradSink {
                            grads: &mut grads,
                            numels: &numels,
                        };
                        rule(&g, &mut sink);
                    }
                }
            }
        }
        for (index, leaf) in is_leaf.iter().enumerate() {
            if *leaf && grads[index].is_none() {
                grads[index] = Some(vec![E::zero(); numels[index]]);
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads,
            is_leaf,
        })
    }
}

/// Accumulation target handed to backward rules.
pub(crate) struct GradSink<'a, E: Element> {
    grads: &'a mut [Option<Vec<E>>],
    numels: &'a [usize],
}

impl<E: Element> GradSink<'_, E> {
    /// Gradient buffer of node `index`, zero-initialized on first access.
    pub(crate) fn slot(&mut self, index: usize) -> &mut [E] {
        let n = self.numels[index];
        self.grads[index].get_or_insert_with(|| vec![E::zero(); n])
    }

    /// Adds `g` elementwise into node `index`.
    pub(crate) fn add(&mut self, index: usize, g: &[E]) {
        let slot = self.slot(index);
        for (s, &v) in slot.iter_mut().zip(g) {
            *s = *s + v;
        }
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<E: Element = f32> {
    tape: u64,
    grads: Vec<Option<Vec<E>>>,
    is_leaf: Vec<bool>,
}

impl<E: Element> Gradients<E> {
    /// Gradient of a leaf tensor registered on the originating tape.
    pub fn get(&self, t: &Tensor<E>) -> Option<&[E]> {
        let id = t.node?;
        if id.tape != self.tape || !self.is_leaf[id.index] {
            return None;
        }
        self.grads[id.index].as_deref()
    }
}

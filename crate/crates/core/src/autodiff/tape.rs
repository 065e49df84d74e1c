//! Wengert-style tape. Nodes are appended in creation order, so the node list
//! is already a topological order and backward is a single reverse sweep.
//!
//! A tape is active on the thread that started it until the guard is dropped.
//! Operations on tensors that require grad record a node on the active tape;
//! with no active tape they just compute values.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use super::ops::Op;
use super::tensor::{NodeRef, ParamId, Tensor};
use crate::error::{Error, Result};

pub(crate) struct Operand {
    pub node: Option<usize>,
    pub value: Tensor,
}

pub(crate) struct Node {
    pub op: Op,
    pub inputs: Vec<Operand>,
    pub output: Tensor,
}

struct TapeData {
    id: u64,
    nodes: Vec<Node>,
    leaves: HashMap<ParamId, usize>,
}

thread_local! {
    static ACTIVE: RefCell<Vec<Rc<RefCell<TapeData>>>> = const { RefCell::new(Vec::new()) };
}

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a recording tape. Recording stops when the handle is dropped.
pub struct Tape {
    data: Rc<RefCell<TapeData>>,
}

impl Tape {
    /// Starts recording on the current thread. Tapes nest; the newest one
    /// receives nodes.
    pub fn start() -> Tape {
        let data = Rc::new(RefCell::new(TapeData {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            leaves: HashMap::new(),
        }));
        ACTIVE.with(|a| a.borrow_mut().push(Rc::clone(&data)));
        Tape { data }
    }

    pub fn len(&self) -> usize {
        self.data.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reverse sweep from a scalar loss. Gradients accumulate by summation
    /// over fan-out; parameters the loss never touched are absent.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        if loss.numel() != 1 {
            return Err(Error::NonScalarLoss(loss.shape().to_vec()));
        }
        let data = self.data.borrow();
        let root = match loss.node {
            Some(NodeRef { tape, index }) if tape == data.id => index,
            _ => return Err(Error::LossNotOnTape),
        };

        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(root + 1);
        grads.resize_with(root + 1, || None);
        grads[root] = Some(vec![1.0]);

        for index in (0..=root).rev() {
            let Some(grad_out) = grads[index].take() else {
                continue;
            };
            let node = &data.nodes[index];
            if let Op::Leaf(_) = node.op {
                grads[index] = Some(grad_out);
                continue;
            }
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|o| &o.value).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|o| o.node.is_some()).collect();
            let input_grads = node.op.backward(&inputs, &node.output, &grad_out, &needs)?;
            for (operand, g) in node.inputs.iter().zip(input_grads) {
                let (Some(target), Some(g)) = (operand.node, g) else {
                    continue;
                };
                match &mut grads[target] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }

        let mut out = BTreeMap::new();
        for (&pid, &index) in &data.leaves {
            if index > root {
                continue;
            }
            if let Some(g) = grads[index].take() {
                let shape = data.nodes[index].output.shape().to_vec();
                out.insert(pid, Tensor::from_parts(shape, g));
            }
        }
        Ok(Gradients { by_param: out })
    }
}

impl Drop for Tape {
    fn drop(&mut self) {
        let id = self.data.borrow().id;
        ACTIVE.with(|a| a.borrow_mut().retain(|t| t.borrow().id != id));
    }
}

/// Gradients keyed by parameter identity.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    by_param: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn wrt(&self, param: &Tensor) -> Option<&Tensor> {
        param.param_id().and_then(|id| self.by_param.get(&id))
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(&id)
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamId, &Tensor)> {
        self.by_param.iter()
    }
}

/// Runs `f` with recording suspended on this thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let saved = ACTIVE.with(|a| std::mem::take(&mut *a.borrow_mut()));
    struct Restore(Option<Vec<Rc<RefCell<TapeData>>>>);
    impl Drop for Restore {
        fn drop(&mut self) {
            if let Some(saved) = self.0.take() {
                ACTIVE.with(|a| {
                    let mut a = a.borrow_mut();
                    let inner = std::mem::replace(&mut *a, saved);
                    a.extend(inner);
                });
            }
        }
    }
    let _restore = Restore(Some(saved));
    f()
}

pub fn is_recording() -> bool {
    ACTIVE.with(|a| !a.borrow().is_empty())
}

/// Records `op` if a tape is active and any input is tracked. Returns the
/// output tensor, linked to its node when recorded.
pub(crate) fn record(op: Op, inputs: &[&Tensor], output: Tensor) -> Tensor {
    if !inputs.iter().any(|t| t.requires_grad()) {
        return output;
    }
    let active = ACTIVE.with(|a| a.borrow().last().cloned());
    let Some(tape) = active else {
        return output;
    };
    let mut data = tape.borrow_mut();
    let tape_id = data.id;

    let mut operands = Vec::with_capacity(inputs.len());
    let mut tracked = false;
    for t in inputs {
        let node = match (t.node, t.param_id()) {
            (Some(r), _) if r.tape == tape_id => Some(r.index),
            (_, Some(pid)) => Some(leaf_index(&mut data, pid, t)),
            _ => None,
        };
        tracked |= node.is_some();
        operands.push(Operand {
            node,
            value: t.detach(),
        });
    }
    if !tracked {
        return output;
    }

    let index = data.nodes.len();
    data.nodes.push(Node {
        op,
        inputs: operands,
        output: output.detach(),
    });
    let mut output = output;
    output.node = Some(NodeRef {
        tape: tape_id,
        index,
    });
    output
}

fn leaf_index(data: &mut TapeData, pid: ParamId, value: &Tensor) -> usize {
    if let Some(&index) = data.leaves.get(&pid) {
        // A parameter re-used with different values on one tape would make
        // the leaf ambiguous; optimizers only swap values between tapes.
        debug_assert!(
            data.nodes[index].output.same_storage(value)
                || data.nodes[index].output.data() == value.data()
        );
        return index;
    }
    let index = data.nodes.len();
    data.nodes.push(Node {
        op: Op::Leaf(pid),
        inputs: Vec::new(),
        output: value.detach(),
    });
    data.leaves.insert(pid, index);
    index
}

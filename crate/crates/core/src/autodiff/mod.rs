//! Define-by-run reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every primitive applied during one forward pass.
//! [`Tape::backward`] replays the record in reverse to produce gradients for
//! every trainable leaf. Tapes are cheap and are rebuilt for every training
//! step; trainable values live in a [`ParameterStore`] between steps.

mod ops;
mod params;

pub use params::{ParamId, ParameterStore};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Whether stochastic primitives (dropout) are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        b_trans: bool,
    },
    BlockMatMul {
        a: Var,
        x: Var,
        blocks: usize,
        p: usize,
        q: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Log {
        a: Var,
        eps: f64,
    },
    Softmax(Var),
    MaskedSoftmax(Var),
    ConcatCols(Vec<Var>),
    SliceRows {
        a: Var,
        start: usize,
    },
    L2Normalize(Var),
    Mask {
        a: Var,
        mask: Vec<f64>,
    },
    Sum(Var),
    SumCols(Var),
    Pick {
        a: Var,
        cols: Vec<usize>,
    },
    GatherRows {
        a: Var,
        index: Vec<usize>,
    },
    ScaleRows {
        a: Var,
        weights: Vec<f64>,
    },
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Norms below this are treated as zero by [`Tape::l2_normalize`].
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
    mode: Mode,
}

impl Tape {
    pub fn new(mode: Mode) -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
            mode,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Drops every recorded node, keeping the mode.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.params.clear();
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A free trainable leaf not backed by a parameter store.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a trainable leaf holding a snapshot of parameter `id`.
    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> Var {
        let v = self.push(store.get(id).clone(), Op::Leaf, true);
        self.params.push((id, v));
        v
    }

    /// Replays the tape in reverse from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, or `None` when `v` does not
    /// influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to `v`, zeros if unreachable.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
    }

    /// One gradient per stored parameter, in store order. Parameters that
    /// were never bound or never reached get zeros.
    pub fn for_store(&self, store: &ParameterStore) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        for &(id, v) in &self.params {
            if let Some(g) = self.get(v) {
                out[id.index()].add_assign(g);
            }
        }
        out
    }
}

#[cfg(test)]
pub(crate) mod tests;

//! Dropout-twin contrastive objective with a memory bank of past session
//! embeddings.
//!
//! Each training session is passed through the model twice; the two hybrid
//! vectors form a positive pair. Negatives are cached twin vectors of other
//! training sessions, preferably ones ending in the same item, read from a
//! [`MemoryBank`] as constants.

use std::collections::HashMap;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mode, Tape, Var};
use crate::data::Session;
use crate::error::{Error, Result};
use crate::graph::GraphBatch;
use crate::model::{Bound, Forward, Model};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativeStrategy {
    /// Sessions sharing the anchor's last item.
    SameLastItem,
    /// Any session (`-WeakNeg`).
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastiveConfig {
    /// Off: single forward pass, no contrastive term (`-Contrast`).
    pub enabled: bool,
    /// Weight of the contrastive term in the total loss.
    pub beta: f64,
    pub temperature: f64,
    /// Sessions sampled per anchor; each contributes two vectors.
    pub negatives: usize,
    pub strategy: NegativeStrategy,
    /// Count the positive once per negative in the denominator, as the
    /// objective is sometimes written. Off: standard InfoNCE.
    pub literal_denominator: bool,
    /// Also use the second twin as an anchor and average both directions.
    pub symmetric: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            enabled: true,
            beta: 0.1,
            temperature: 12.0,
            negatives: 32,
            strategy: NegativeStrategy::SameLastItem,
            literal_denominator: false,
            symmetric: false,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        if self.negatives == 0 {
            return Err(Error::Config("negatives must be at least 1".into()));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!("beta {} must be non-negative", self.beta)));
        }
        Ok(())
    }

    /// Whether the twin forward pass runs at all.
    pub fn active(&self) -> bool {
        self.enabled && self.beta > 0.0
    }
}

/// Latest twin embeddings of every training session.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    dim: usize,
    entries: Vec<Option<(Vec<f64>, Vec<f64>)>>,
    last_items: Vec<usize>,
    by_last: HashMap<usize, Vec<usize>>,
}

impl MemoryBank {
    /// One invalid entry per session, indexed by position in `sessions`.
    pub fn new(sessions: &[Session], dim: usize) -> Self {
        let last_items: Vec<usize> = sessions.iter().map(Session::last_item).collect();
        let mut by_last: HashMap<usize, Vec<usize>> = HashMap::new();
        for (id, &item) in last_items.iter().enumerate() {
            by_last.entry(item).or_default().push(id);
        }
        MemoryBank {
            dim,
            entries: vec![None; last_items.len()],
            last_items,
            by_last,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn valid_count(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }

    pub fn entry(&self, id: usize) -> Option<(&[f64], &[f64])> {
        self.entries
            .get(id)?
            .as_ref()
            .map(|(a, b)| (a.as_slice(), b.as_slice()))
    }

    pub fn last_item(&self, id: usize) -> Option<usize> {
        self.last_items.get(id).copied()
    }

    /// Ids of sessions ending in `item`, in session order.
    pub fn sessions_ending_in(&self, item: usize) -> &[usize] {
        self.by_last.get(&item).map_or(&[], Vec::as_slice)
    }

    /// Stores copies of the two twin vectors for session `id`.
    pub fn update(&mut self, id: usize, first: &[f64], second: &[f64]) -> Result<()> {
        if id >= self.entries.len() {
            return Err(Error::contract(format!(
                "session {id} not in memory bank of {}",
                self.len()
            )));
        }
        if first.len() != self.dim || second.len() != self.dim {
            return Err(Error::dim(
                "bank_update",
                format!(
                    "vectors of {} and {}, bank holds {}",
                    first.len(),
                    second.len(),
                    self.dim
                ),
            ));
        }
        self.entries[id] = Some((first.to_vec(), second.to_vec()));
        Ok(())
    }
}

/// Negatives drawn for one anchor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Negatives {
    /// Two vectors per sampled session.
    pub vectors: Vec<Vec<f64>>,
    /// Sessions whose vectors were taken.
    pub sessions: Vec<usize>,
    /// The same-last-item pool was empty and random sessions were used.
    pub fallback: bool,
}

impl Negatives {
    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Up to `n` sessions' cached vectors for anchor `id`. Empty when the bank
/// has no valid entry besides the anchor.
pub fn sample_negatives<R: Rng + ?Sized>(
    bank: &MemoryBank,
    id: usize,
    n: usize,
    strategy: NegativeStrategy,
    rng: &mut R,
) -> Result<Negatives> {
    let last = bank
        .last_item(id)
        .ok_or_else(|| Error::contract(format!("session {id} not in memory bank")))?;
    let usable = |&&s: &&usize| s != id && bank.entries[s].is_some();
    let mut fallback = false;
    let mut pool: Vec<usize> = Vec::new();
    if strategy == NegativeStrategy::SameLastItem {
        pool = bank.sessions_ending_in(last).iter().filter(usable).copied().collect();
        fallback = pool.is_empty();
    }
    if pool.is_empty() {
        pool = (0..bank.len()).filter(|s| usable(&s)).collect();
    }
    let sessions: Vec<usize> = pool.choose_multiple(rng, n).copied().collect();
    let mut vectors = Vec::with_capacity(2 * sessions.len());
    for &s in &sessions {
        let (a, b) = bank.entry(s).expect("pool holds valid entries");
        vectors.push(a.to_vec());
        vectors.push(b.to_vec());
    }
    Ok(Negatives {
        vectors,
        sessions,
        fallback,
    })
}

/// Mean InfoNCE loss over the rows of `anchors`, with cosine similarity.
///
/// Row `b` contrasts `anchors[b]` against `positives[b]` and the constant
/// vectors `negatives[b]`. Rows without negatives contribute zero.
pub fn contrastive_loss(
    tape: &mut Tape,
    anchors: Var,
    positives: Var,
    negatives: &[Negatives],
    temperature: f64,
    literal_denominator: bool,
) -> Result<Var> {
    if !(temperature > 0.0) {
        return Err(Error::contract(format!("temperature {temperature} must be positive")));
    }
    let (rows, d) = (tape.value(anchors).rows(), tape.value(anchors).cols());
    if tape.value(positives).shape() != tape.value(anchors).shape() || negatives.len() != rows {
        return Err(Error::dim(
            "contrastive_loss",
            format!(
                "anchors {:?}, positives {:?}, {} negative sets",
                tape.value(anchors).shape(),
                tape.value(positives).shape(),
                negatives.len()
            ),
        ));
    }
    let k = negatives.iter().map(|n| n.vectors.len()).max().unwrap_or(0);
    if k == 0 {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }

    let a = tape.l2_normalize(anchors);
    let p = tape.l2_normalize(positives);
    let ap = tape.mul(a, p)?;
    let positive = tape.sum_cols(ap);

    // Row b of the block matrix holds the normalized negatives of anchor b,
    // transposed to [d, k] and zero-padded.
    let mut blocks = vec![0.0; rows * d * k];
    for (b, neg) in negatives.iter().enumerate() {
        for (j, v) in neg.vectors.iter().enumerate() {
            if v.len() != d {
                return Err(Error::dim(
                    "contrastive_loss",
                    format!("negative of length {}, expected {d}", v.len()),
                ));
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let inv = if norm < crate::autodiff::NORM_EPS {
                0.0
            } else {
                1.0 / norm
            };
            for (c, &x) in v.iter().enumerate() {
                blocks[b * d * k + c * k + j] = x * inv;
            }
        }
    }
    let blocks = tape.constant(Tensor::matrix(rows * d, k, blocks)?);
    let negative = tape.block_matmul(a, blocks, rows, 1, d)?;

    let mut shifted = positive;
    let mut offset = 0.0;
    if literal_denominator {
        let shift: Vec<f64> = negatives
            .iter()
            .map(|n| {
                if n.is_empty() {
                    0.0
                } else {
                    (n.vectors.len() as f64).ln() * temperature
                }
            })
            .collect();
        offset = shift.iter().sum::<f64>() / (rows as f64 * temperature);
        let shift = tape.constant(Tensor::matrix(rows, 1, shift)?);
        shifted = tape.add(positive, shift)?;
    }
    let logits = tape.concat_cols(&[shifted, negative])?;
    let logits = tape.scale(logits, 1.0 / temperature);
    let mut mask = vec![false; rows * (k + 1)];
    for (b, neg) in negatives.iter().enumerate() {
        mask[b * (k + 1)] = true;
        for j in 0..neg.vectors.len() {
            mask[b * (k + 1) + 1 + j] = true;
        }
    }
    let probs = tape.masked_softmax(logits, mask)?;
    let first = tape.pick(probs, vec![0; rows])?;
    let logp = tape.log(first, 1e-300);
    let total = tape.sum(logp);
    let mean = tape.scale(total, -1.0 / rows as f64);
    if literal_denominator {
        // -log(e^s / (n e^s + Σ)) = -log softmax(s + ln n) + ln n
        let c = tape.constant(Tensor::scalar(offset));
        return tape.add(mean, c);
    }
    Ok(mean)
}

/// Two forward passes of the same batch with independent dropout masks.
pub fn twin_forward<R: Rng + ?Sized>(
    model: &Model,
    tape: &mut Tape,
    params: &Bound,
    batch: &GraphBatch,
    rng: &mut R,
) -> Result<(Forward, Forward)> {
    if tape.mode() == Mode::Eval {
        return Err(Error::contract("twin forward needs training mode"));
    }
    let first = model.forward(tape, params, batch, rng)?;
    let second = model.forward(tape, params, batch, rng)?;
    Ok((first, second))
}

/// Writes the detached twin vectors of `ids` (rows of the two tensors).
pub fn bank_update(bank: &mut MemoryBank, ids: &[usize], first: &Tensor, second: &Tensor) -> Result<()> {
    if first.rows() != ids.len() || second.rows() != ids.len() {
        return Err(Error::dim(
            "bank_update",
            format!("{} ids, {} and {} rows", ids.len(), first.rows(), second.rows()),
        ));
    }
    for (r, &id) in ids.iter().enumerate() {
        bank.update(id, first.row(r), second.row(r))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests;

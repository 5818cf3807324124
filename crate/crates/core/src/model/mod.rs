//! Forward pass of the recommender.
//!
//! Matrices act on row vectors (`y = x · W`), so every weight is stored as
//! `[in, out]`. Batches are flat: node states are `[size * max_nodes, d]` and
//! position vectors `[size * max_len, d]`, as laid out by [`GraphBatch`].
//!
//! Pipeline per session:
//! 1. item vectors are L2-normalized and dropped out;
//! 2. `layers` gated graph updates mix each node with its in/out neighbours;
//! 3. node states are dropped out, scattered to positions and shifted by a
//!    learned positional vector;
//! 4. attention keyed on the last position pools a long-term vector; the
//!    last position itself is the short-term vector;
//! 5. a linear map of `[long ; short]` gives the hybrid session vector,
//!    scored against every item by scaled cosine similarity.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mode, ParamId, ParameterStore, Tape, Var};
use crate::data::Session;
use crate::error::{Error, Result};
use crate::graph::{batch_graphs, GraphBatch};
use crate::rng::Seed;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Embedding size `d`.
    pub dim: usize,
    /// Gated graph layers.
    pub layers: usize,
    /// Rows of the positional table; sessions are truncated to this length.
    pub max_len: usize,
    /// Logit scale applied to cosine scores; must exceed 1.
    pub scale: f64,
    pub dropout: f64,
    pub init_std: f64,
    /// Off: raw embeddings and inner-product scores (`-Norm`).
    pub normalize: bool,
    /// Off: no positional term (`-PE`).
    pub positional: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 100,
            layers: 1,
            max_len: 50,
            scale: 12.0,
            dropout: 0.1,
            init_std: 0.1,
            normalize: true,
            positional: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.layers == 0 || self.max_len == 0 {
            return Err(Error::Config("dim, layers and max_len must be positive".into()));
        }
        if self.normalize && !(self.scale > 1.0) {
            return Err(Error::Config(format!("scale {} must exceed 1", self.scale)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.init_std > 0.0) {
            return Err(Error::Config("init_std must be positive".into()));
        }
        Ok(())
    }
}

/// Parameter handles inside a [`ParameterStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamKeys {
    pub item_embeddings: ParamId,
    pub edge: ParamId,
    pub edge_bias: ParamId,
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub w_o: ParamId,
    pub u_o: ParamId,
    pub w_1: ParamId,
    pub w_2: ParamId,
    pub q: ParamId,
    pub attention_bias: ParamId,
    pub w_3: ParamId,
    pub positional: ParamId,
}

/// `(name, rows, cols)` of every parameter for `m` items.
fn layout(cfg: &ModelConfig, m: usize) -> Vec<(&'static str, usize, usize)> {
    let d = cfg.dim;
    vec![
        ("item_embeddings", m + 1, d),
        ("edge", 2 * d, d),
        ("edge_bias", 1, d),
        ("w_z", d, d),
        ("u_z", d, d),
        ("w_r", d, d),
        ("u_r", d, d),
        ("w_o", d, d),
        ("u_o", d, d),
        ("w_1", d, d),
        ("w_2", d, d),
        ("q", d, 1),
        ("attention_bias", 1, d),
        ("w_3", 2 * d, d),
        ("positional", cfg.max_len, d),
    ]
}

impl ParamKeys {
    fn resolve(store: &ParameterStore) -> Result<Self> {
        let id = |name: &str| {
            store
                .id(name)
                .ok_or_else(|| Error::Compatibility(format!("missing parameter {name}")))
        };
        Ok(ParamKeys {
            item_embeddings: id("item_embeddings")?,
            edge: id("edge")?,
            edge_bias: id("edge_bias")?,
            w_z: id("w_z")?,
            u_z: id("u_z")?,
            w_r: id("w_r")?,
            u_r: id("u_r")?,
            w_o: id("w_o")?,
            u_o: id("u_o")?,
            w_1: id("w_1")?,
            w_2: id("w_2")?,
            q: id("q")?,
            attention_bias: id("attention_bias")?,
            w_3: id("w_3")?,
            positional: id("positional")?,
        })
    }
}

/// Parameters recorded on one tape.
#[derive(Debug, Clone, Copy)]
pub struct Bound {
    pub item_embeddings: Var,
    pub edge: Var,
    pub edge_bias: Var,
    pub w_z: Var,
    pub u_z: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub w_o: Var,
    pub u_o: Var,
    pub w_1: Var,
    pub w_2: Var,
    pub q: Var,
    pub attention_bias: Var,
    pub w_3: Var,
    pub positional: Var,
}

impl Bound {
    /// Every parameter, item table first, in store order.
    pub fn all(&self) -> [Var; 15] {
        [
            self.item_embeddings,
            self.edge,
            self.edge_bias,
            self.w_z,
            self.u_z,
            self.w_r,
            self.u_r,
            self.w_o,
            self.u_o,
            self.w_1,
            self.w_2,
            self.q,
            self.attention_bias,
            self.w_3,
            self.positional,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    num_items: usize,
    pub params: ParameterStore,
    keys: ParamKeys,
}

impl Model {
    /// Gaussian initialization; the padding row of the item table is zero.
    pub fn new(config: ModelConfig, num_items: usize, seed: Seed) -> Result<Self> {
        config.validate()?;
        if num_items == 0 {
            return Err(Error::contract("model needs at least one item"));
        }
        let mut rng = seed.stream("init");
        let normal = Normal::new(0.0, config.init_std).expect("positive std");
        let mut params = ParameterStore::new();
        for (name, rows, cols) in layout(&config, num_items) {
            let mut data: Vec<f64> = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
            if name == "item_embeddings" {
                data[..cols].fill(0.0);
            }
            params.insert(name, Tensor::matrix(rows, cols, data)?);
        }
        let keys = ParamKeys::resolve(&params)?;
        Ok(Model {
            config,
            num_items,
            params,
            keys,
        })
    }

    /// Wraps an existing store, checking names and shapes.
    pub fn from_params(config: ModelConfig, num_items: usize, params: ParameterStore) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config, num_items);
        if expected.len() != params.len() {
            return Err(Error::Compatibility(format!(
                "expected {} parameters, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, rows, cols) in expected {
            let id = params
                .id(name)
                .ok_or_else(|| Error::Compatibility(format!("missing parameter {name}")))?;
            if params.get(id).shape() != [rows, cols] {
                return Err(Error::Compatibility(format!(
                    "{name}: expected [{rows}, {cols}], found {:?}",
                    params.get(id).shape()
                )));
            }
        }
        let keys = ParamKeys::resolve(&params)?;
        Ok(Model {
            config,
            num_items,
            params,
            keys,
        })
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn keys(&self) -> ParamKeys {
        self.keys
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let k = &self.keys;
        let p = &self.params;
        Bound {
            item_embeddings: tape.param(p, k.item_embeddings),
            edge: tape.param(p, k.edge),
            edge_bias: tape.param(p, k.edge_bias),
            w_z: tape.param(p, k.w_z),
            u_z: tape.param(p, k.u_z),
            w_r: tape.param(p, k.w_r),
            u_r: tape.param(p, k.u_r),
            w_o: tape.param(p, k.w_o),
            u_o: tape.param(p, k.u_o),
            w_1: tape.param(p, k.w_1),
            w_2: tape.param(p, k.w_2),
            q: tape.param(p, k.q),
            attention_bias: tape.param(p, k.attention_bias),
            w_3: tape.param(p, k.w_3),
            positional: tape.param(p, k.positional),
        }
    }

    /// Normalized (unless `-Norm`) and dropped-out item vectors, one row per
    /// index. Index 0 yields the zero vector.
    pub fn embed_items<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        p: &Bound,
        items: &[usize],
        rng: &mut R,
    ) -> Result<Var> {
        if let Some(bad) = items.iter().find(|&&i| i > self.num_items) {
            return Err(Error::contract(format!(
                "item index {bad} outside vocabulary of {}",
                self.num_items
            )));
        }
        let mut x = tape.gather_rows(p.item_embeddings, items.to_vec())?;
        if self.config.normalize {
            x = tape.l2_normalize(x);
        }
        tape.dropout(x, self.config.dropout, rng)
    }

    /// One gated graph update of all node states in `batch`.
    pub fn ggnn_step(&self, tape: &mut Tape, p: &Bound, batch: &GraphBatch, states: Var) -> Result<Var> {
        let (b, n, d) = (batch.size, batch.max_nodes, self.config.dim);
        if tape.value(states).shape() != [b * n, d] {
            return Err(Error::dim(
                "ggnn_step",
                format!("states {:?}, expected [{}, {d}]", tape.value(states).shape(), b * n),
            ));
        }
        let a_out = tape.constant(Tensor::matrix(b * n, n, batch.a_out.clone())?);
        let a_in = tape.constant(Tensor::matrix(b * n, n, batch.a_in.clone())?);
        let from_out = tape.block_matmul(a_out, states, b, n, n)?;
        let from_in = tape.block_matmul(a_in, states, b, n, n)?;
        let neighbours = tape.concat_cols(&[from_out, from_in])?;
        let a = tape.matmul(neighbours, p.edge)?;
        let a = tape.add_row(a, p.edge_bias)?;

        let gate = |tape: &mut Tape, w: Var, u: Var, h: Var| -> Result<Var> {
            let x = tape.matmul(a, w)?;
            let y = tape.matmul(h, u)?;
            tape.add(x, y)
        };
        let z = gate(tape, p.w_z, p.u_z, states)?;
        let z = tape.sigmoid(z);
        let r = gate(tape, p.w_r, p.u_r, states)?;
        let r = tape.sigmoid(r);
        let reset = tape.mul(r, states)?;
        let cand = gate(tape, p.w_o, p.u_o, reset)?;
        let cand = tape.tanh(cand);
        // (1 - z) ⊙ h + z ⊙ cand
        let delta = tape.sub(cand, states)?;
        let step = tape.mul(z, delta)?;
        tape.add(states, step)
    }

    /// `layers` graph updates followed by dropout, scattering to session
    /// positions and the positional term. Returns `[size * max_len, d]`.
    pub fn ggnn_forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        p: &Bound,
        batch: &GraphBatch,
        initial: Var,
        rng: &mut R,
    ) -> Result<Var> {
        if batch.max_len > self.config.max_len {
            return Err(Error::contract(format!(
                "session length {} exceeds positional table of {}",
                batch.max_len, self.config.max_len
            )));
        }
        let mut h = initial;
        for _ in 0..self.config.layers {
            h = self.ggnn_step(tape, p, batch, h)?;
        }
        let h = tape.dropout(h, self.config.dropout, rng)?;
        let at_positions = tape.gather_rows(h, batch.alias.clone())?;
        if !self.config.positional {
            return Ok(at_positions);
        }
        let pos = tape.gather_rows(p.positional, batch.positions.clone())?;
        tape.add(pos, at_positions)
    }

    /// Attention pooling keyed on the last position. Returns the long-term
    /// vector `[size, d]` and the weights `[size, max_len]`.
    pub fn attention_readout(
        &self,
        tape: &mut Tape,
        p: &Bound,
        batch: &GraphBatch,
        positions: Var,
    ) -> Result<(Var, Var)> {
        let (b, l) = (batch.size, batch.max_len);
        let last_of_row: Vec<usize> = (0..b * l).map(|row| batch.last[row / l]).collect();
        let last = tape.gather_rows(positions, last_of_row)?;
        let x = tape.matmul(last, p.w_1)?;
        let y = tape.matmul(positions, p.w_2)?;
        let s = tape.add(x, y)?;
        let s = tape.add_row(s, p.attention_bias)?;
        let s = tape.sigmoid(s);
        let e = tape.matmul(s, p.q)?;
        let e = tape.reshape(e, vec![b, l])?;
        let alpha = tape.masked_softmax(e, batch.position_mask.clone())?;
        let long = tape.block_matmul(alpha, positions, b, 1, l)?;
        Ok((long, alpha))
    }

    /// `W_3 · [long ; short]`.
    pub fn hybrid(&self, tape: &mut Tape, p: &Bound, long: Var, short: Var) -> Result<Var> {
        let cat = tape.concat_cols(&[long, short])?;
        tape.matmul(cat, p.w_3)
    }

    /// Logits over items `1..=m` (column `j` is item `j + 1`).
    pub fn score(&self, tape: &mut Tape, p: &Bound, hybrid: Var) -> Result<Var> {
        let items = tape.slice_rows(p.item_embeddings, 1, self.num_items + 1)?;
        if !self.config.normalize {
            return tape.matmul_nt(hybrid, items);
        }
        let h = tape.value(hybrid);
        if let Some(r) = (0..h.rows()).find(|&r| h.row(r).iter().all(|&x| x == 0.0)) {
            return Err(Error::contract(format!("hybrid session vector {r} is zero")));
        }
        let h = tape.l2_normalize(hybrid);
        let items = tape.l2_normalize(items);
        let cos = tape.matmul_nt(h, items)?;
        Ok(tape.scale(cos, self.config.scale))
    }

    /// Full forward pass for a batch.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        p: &Bound,
        batch: &GraphBatch,
        rng: &mut R,
    ) -> Result<Forward> {
        let initial = self.embed_items(tape, p, &batch.node_items, rng)?;
        let positions = self.ggnn_forward(tape, p, batch, initial, rng)?;
        let (long, alpha) = self.attention_readout(tape, p, batch, positions)?;
        let short = tape.gather_rows(positions, batch.last.clone())?;
        let hybrid = self.hybrid(tape, p, long, short)?;
        let logits = self.score(tape, p, hybrid)?;
        Ok(Forward { hybrid, logits, alpha })
    }

    /// Graph batch of `sessions`, each cut to its most recent `max_len`
    /// items.
    pub fn batch(&self, sessions: &[Session]) -> Result<GraphBatch> {
        let l = self.config.max_len;
        if sessions.iter().all(|s| s.len() <= l) {
            return batch_graphs(sessions);
        }
        let cut: Vec<Session> = sessions
            .iter()
            .map(|s| Session {
                items: s.items[s.len().saturating_sub(l)..].to_vec(),
                label: s.label,
            })
            .collect();
        batch_graphs(&cut)
    }

    /// Evaluation-mode logits `[sessions.len(), m]`.
    pub fn logits(&self, sessions: &[Session]) -> Result<Tensor> {
        let mut tape = Tape::new(Mode::Eval);
        let p = self.bind(&mut tape);
        let batch = self.batch(sessions)?;
        // Dropout is inactive in evaluation mode, so this stream is never read.
        let mut rng = Seed(0).stream("eval");
        let out = self.forward(&mut tape, &p, &batch, &mut rng)?;
        Ok(tape.value(out.logits).clone())
    }

    /// Evaluation-mode hybrid session vectors `[sessions.len(), d]`.
    pub fn session_embeddings(&self, sessions: &[Session]) -> Result<Tensor> {
        let mut tape = Tape::new(Mode::Eval);
        let p = self.bind(&mut tape);
        let batch = self.batch(sessions)?;
        let mut rng = Seed(0).stream("eval");
        let out = self.forward(&mut tape, &p, &batch, &mut rng)?;
        Ok(tape.value(out.hybrid).clone())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Forward {
    /// `[size, d]`
    pub hybrid: Var,
    /// `[size, m]`
    pub logits: Var,
    /// `[size, max_len]`
    pub alpha: Var,
}

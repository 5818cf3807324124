//! Per-session directed graphs and padded graph batches.
//!
//! Nodes are the distinct items of a session in first-occurrence order.
//! Every consecutive pair `(u, v)` is one transition. `a_out[u][v]` is the
//! number of `u -> v` transitions divided by the total number of outgoing
//! transitions of `u`; `a_in[v][u]` divides the same count by the incoming
//! transitions of `v`. Repeated consecutive items form self-loops.

use std::collections::HashMap;

use crate::data::{Session, PADDING};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SessionGraph {
    pub nodes: Vec<usize>,
    /// `alias[p]` is the node holding the item at session position `p`.
    pub alias: Vec<usize>,
    /// Row-major `n x n`.
    pub a_out: Vec<f64>,
    /// Row-major `n x n`.
    pub a_in: Vec<f64>,
    pub last_node: usize,
}

impl SessionGraph {
    pub fn build(items: &[usize]) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::contract("cannot build a graph for an empty session"));
        }
        let mut nodes = Vec::new();
        let mut slot: HashMap<usize, usize> = HashMap::new();
        let alias: Vec<usize> = items
            .iter()
            .map(|&item| {
                *slot.entry(item).or_insert_with(|| {
                    nodes.push(item);
                    nodes.len() - 1
                })
            })
            .collect();
        let n = nodes.len();
        let mut counts = vec![0.0; n * n];
        for w in alias.windows(2) {
            counts[w[0] * n + w[1]] += 1.0;
        }
        let mut a_out = counts.clone();
        for row in a_out.chunks_mut(n) {
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.iter_mut().for_each(|x| *x /= total);
            }
        }
        let mut a_in = vec![0.0; n * n];
        for v in 0..n {
            let total: f64 = (0..n).map(|u| counts[u * n + v]).sum();
            if total > 0.0 {
                for u in 0..n {
                    a_in[v * n + u] = counts[u * n + v] / total;
                }
            }
        }
        let last_node = *alias.last().expect("nonempty");
        Ok(SessionGraph {
            nodes,
            alias,
            a_out,
            a_in,
            last_node,
        })
    }

    pub fn from_session(session: &Session) -> Result<Self> {
        Self::build(&session.items)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn out_weight(&self, from: usize, to: usize) -> f64 {
        self.a_out[from * self.num_nodes() + to]
    }

    pub fn in_weight(&self, to: usize, from: usize) -> f64 {
        self.a_in[to * self.num_nodes() + from]
    }

    /// Row `i` of the connection matrix `[A_out | A_in]`, length `2n`.
    pub fn connection_row(&self, i: usize) -> Vec<f64> {
        let n = self.num_nodes();
        let mut row = self.a_out[i * n..(i + 1) * n].to_vec();
        row.extend_from_slice(&self.a_in[i * n..(i + 1) * n]);
        row
    }

    /// Item-level transitions recovered from `nodes` and `alias`.
    pub fn transitions(&self) -> Vec<(usize, usize)> {
        self.alias
            .windows(2)
            .map(|w| (self.nodes[w[0]], self.nodes[w[1]]))
            .collect()
    }
}

/// Graphs of several sessions padded to common node and position counts.
///
/// Nodes are laid out flat as `size * max_nodes` rows and positions as
/// `size * max_len` rows; padded entries hold item [`PADDING`] and are off in
/// the masks.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch {
    pub size: usize,
    pub max_nodes: usize,
    pub max_len: usize,
    pub node_items: Vec<usize>,
    pub node_mask: Vec<bool>,
    /// `size` blocks of `max_nodes x max_nodes`.
    pub a_out: Vec<f64>,
    pub a_in: Vec<f64>,
    /// Flat node row for every position.
    pub alias: Vec<usize>,
    /// Position index inside the session (0-based from its first item).
    pub positions: Vec<usize>,
    pub position_mask: Vec<bool>,
    /// Flat position row of each session's last item.
    pub last: Vec<usize>,
}

pub fn batch_graphs(sessions: &[Session]) -> Result<GraphBatch> {
    if sessions.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let graphs: Vec<SessionGraph> = sessions.iter().map(SessionGraph::from_session).collect::<Result<_>>()?;
    let size = graphs.len();
    let n = graphs.iter().map(SessionGraph::num_nodes).max().unwrap_or(0);
    let l = sessions.iter().map(Session::len).max().unwrap_or(0);
    let mut batch = GraphBatch {
        size,
        max_nodes: n,
        max_len: l,
        node_items: vec![PADDING; size * n],
        node_mask: vec![false; size * n],
        a_out: vec![0.0; size * n * n],
        a_in: vec![0.0; size * n * n],
        alias: vec![0; size * l],
        positions: vec![0; size * l],
        position_mask: vec![false; size * l],
        last: Vec::with_capacity(size),
    };
    for (b, g) in graphs.iter().enumerate() {
        let k = g.num_nodes();
        for (i, &item) in g.nodes.iter().enumerate() {
            batch.node_items[b * n + i] = item;
            batch.node_mask[b * n + i] = true;
            for j in 0..k {
                batch.a_out[b * n * n + i * n + j] = g.a_out[i * k + j];
                batch.a_in[b * n * n + i * n + j] = g.a_in[i * k + j];
            }
        }
        for p in 0..l {
            // Padded positions point at the session's first node.
            batch.alias[b * l + p] = b * n + g.alias.get(p).copied().unwrap_or(0);
        }
        for (p, _) in g.alias.iter().enumerate() {
            batch.positions[b * l + p] = p;
            batch.position_mask[b * l + p] = true;
        }
        batch.last.push(b * l + g.alias.len() - 1);
    }
    Ok(batch)
}

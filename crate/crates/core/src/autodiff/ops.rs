//! Primitive forward rules and their vector-Jacobian products.

use rand::Rng;

use super::{Mode, Node, Op, Tape, Var, NORM_EPS};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn shapes(a: &Tensor, b: &Tensor) -> String {
    format!("{:?} vs {:?}", a.shape(), b.shape())
}

fn softmax_row(x: &[f64], mask: Option<&[bool]>, out: &mut [f64]) {
    let keep = |j: usize| mask.is_none_or(|m| m[j]);
    let max = x
        .iter()
        .enumerate()
        .filter(|&(j, _)| keep(j))
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (j, o) in out.iter_mut().enumerate() {
        *o = if keep(j) { (x[j] - max).exp() } else { 0.0 };
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

impl Tape {
    fn binary_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim(op, shapes(ta, tb)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(a) || self.needs(b);
        self.push(value, op, needs)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        let needs = self.needs(a);
        self.push(value, op, needs)
    }

    /// `a · b` for `a: [m, k]`, `b: [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` for `a: [m, k]`, `b: [n, k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, b_trans: bool) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = (ta.rows(), ta.cols());
        let (kb, n) = if b_trans {
            (tb.cols(), tb.rows())
        } else {
            (tb.rows(), tb.cols())
        };
        if k != kb {
            return Err(Error::dim("matmul", shapes(ta, tb)));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), b_trans, &mut out, 0.0);
        let value = Tensor::matrix(m, n, out)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul { a, b, b_trans }, needs))
    }

    /// Independent products per block: `a` holds `blocks` matrices of shape
    /// `[p, q]` stacked row-wise and `x` holds `blocks` matrices `[q, r]`.
    /// Returns the stacked `[blocks * p, r]` result.
    pub fn block_matmul(&mut self, a: Var, x: Var, blocks: usize, p: usize, q: usize) -> Result<Var> {
        let (ta, tx) = (self.value(a), self.value(x));
        if ta.len() != blocks * p * q || tx.rows() != blocks * q {
            return Err(Error::dim(
                "block_matmul",
                format!("{} with blocks={blocks} p={p} q={q}", shapes(ta, tx)),
            ));
        }
        let r = tx.cols();
        let mut out = vec![0.0; blocks * p * r];
        for blk in 0..blocks {
            gemm(
                p,
                q,
                r,
                &ta.data()[blk * p * q..(blk + 1) * p * q],
                false,
                &tx.data()[blk * q * r..(blk + 1) * q * r],
                false,
                &mut out[blk * p * r..(blk + 1) * p * r],
                0.0,
            );
        }
        let value = Tensor::matrix(blocks * p, r, out)?;
        let needs = self.needs(a) || self.needs(x);
        Ok(self.push(value, Op::BlockMatMul { a, x, blocks, p, q }, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("hadamard", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    /// Adds the vector `row` (`cols` values) to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.len() != ta.cols() {
            return Err(Error::dim("add_row", shapes(ta, tr)));
        }
        let c = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + tr.data()[i % c])
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(row);
        Ok(self.push(value, Op::AddRow(a, row), needs))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.unary(a, |x| x * factor, Op::Scale(a, factor))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    /// Natural log with inputs clamped below at `eps`. Clamped entries pass
    /// no gradient.
    pub fn log(&mut self, a: Var, eps: f64) -> Var {
        self.unary(a, |x| x.max(eps).ln(), Op::Log { a, eps })
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let c = ta.cols();
        let mut out = vec![0.0; ta.len()];
        for (r, o) in out.chunks_mut(c).enumerate() {
            softmax_row(ta.row(r), None, o);
        }
        let value = Tensor::new(ta.shape().to_vec(), out).expect("same shape");
        let needs = self.needs(a);
        self.push(value, Op::Softmax(a), needs)
    }

    /// Row-wise softmax restricted to entries where `mask` is true; masked
    /// entries are exactly zero. Every row needs at least one live entry.
    pub fn masked_softmax(&mut self, a: Var, mask: Vec<bool>) -> Result<Var> {
        let ta = self.value(a);
        if mask.len() != ta.len() {
            return Err(Error::dim(
                "masked_softmax",
                format!("mask of {} for {:?}", mask.len(), ta.shape()),
            ));
        }
        let c = ta.cols();
        let mut out = vec![0.0; ta.len()];
        for (r, o) in out.chunks_mut(c).enumerate() {
            let m = &mask[r * c..(r + 1) * c];
            if !m.iter().any(|&b| b) {
                return Err(Error::contract(format!("softmax row {r} is fully masked")));
            }
            softmax_row(ta.row(r), Some(m), o);
        }
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::MaskedSoftmax(a), needs))
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            let detail: Vec<_> = parts.iter().map(|&p| self.value(p).shape().to_vec()).collect();
            return Err(Error::dim("concat", format!("{detail:?}")));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::matrix(rows, total, out)?;
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), needs))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ta = self.value(a);
        if start > end || end > ta.rows() {
            return Err(Error::dim("slice", format!("rows {start}..{end} of {:?}", ta.shape())));
        }
        let c = ta.cols();
        let value = Tensor::matrix(end - start, c, ta.data()[start * c..end * c].to_vec())?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::SliceRows { a, start }, needs))
    }

    /// Scales every row to unit Euclidean norm. Rows with norm below
    /// [`NORM_EPS`] map to zero.
    pub fn l2_normalize(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let c = ta.cols();
        let mut out = ta.data().to_vec();
        for row in out.chunks_mut(c) {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < NORM_EPS {
                row.fill(0.0);
            } else {
                row.iter_mut().for_each(|x| *x /= norm);
            }
        }
        let value = Tensor::new(ta.shape().to_vec(), out).expect("same shape");
        let needs = self.needs(a);
        self.push(value, Op::L2Normalize(a), needs)
    }

    /// Inverted dropout: in training mode each entry is zeroed with
    /// probability `p` and survivors are scaled by `1 / (1 - p)`. Identity in
    /// evaluation mode or when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::contract(format!("dropout probability {p} outside [0, 1)")));
        }
        if self.mode == Mode::Eval || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(a).len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        Ok(self.apply_mask(a, mask))
    }

    /// Multiplies `a` elementwise by a fixed, non-trainable mask.
    pub fn apply_mask(&mut self, a: Var, mask: Vec<f64>) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(a);
        self.push(value, Op::Mask { a, mask }, needs)
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let needs = self.needs(a);
        self.push(value, Op::Sum(a), needs)
    }

    /// Per-row sums, shape `[rows, 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let data: Vec<f64> = (0..ta.rows()).map(|r| ta.row(r).iter().sum()).collect();
        let value = Tensor::matrix(data.len(), 1, data).expect("column");
        let needs = self.needs(a);
        self.push(value, Op::SumCols(a), needs)
    }

    /// Picks entry `cols[r]` from each row `r`, shape `[rows, 1]`.
    pub fn pick(&mut self, a: Var, cols: Vec<usize>) -> Result<Var> {
        let ta = self.value(a);
        if cols.len() != ta.rows() || cols.iter().any(|&c| c >= ta.cols()) {
            return Err(Error::dim(
                "pick",
                format!("{} indices for {:?}", cols.len(), ta.shape()),
            ));
        }
        let data: Vec<f64> = cols.iter().enumerate().map(|(r, &c)| ta.get(r, c)).collect();
        let value = Tensor::matrix(data.len(), 1, data)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::Pick { a, cols }, needs))
    }

    /// Stacks rows of `a` selected by `index` (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, index: Vec<usize>) -> Result<Var> {
        let ta = self.value(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= ta.rows()) {
            return Err(Error::dim("gather_rows", format!("row {bad} of {:?}", ta.shape())));
        }
        let c = ta.cols();
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in &index {
            out.extend_from_slice(ta.row(i));
        }
        let value = Tensor::matrix(index.len(), c, out)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::GatherRows { a, index }, needs))
    }

    /// Multiplies row `r` by the constant `weights[r]`.
    pub fn scale_rows(&mut self, a: Var, weights: Vec<f64>) -> Result<Var> {
        let ta = self.value(a);
        if weights.len() != ta.rows() {
            return Err(Error::dim(
                "scale_rows",
                format!("{} weights for {:?}", weights.len(), ta.shape()),
            ));
        }
        let c = ta.cols();
        let data = ta.data().iter().enumerate().map(|(i, &x)| x * weights[i / c]).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::ScaleRows { a, weights }, needs))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(a).clone().reshaped(shape)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::Reshape(a), needs))
    }

    /// Accumulates the vector-Jacobian product of node `i` into its inputs.
    pub(super) fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node: &Node = &self.nodes[i];
        let out = &node.value;
        let mut acc = |v: Var, delta: Tensor| {
            if !self.needs(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let like = |v: Var, data: Vec<f64>| Tensor::new(self.value(v).shape().to_vec(), data).expect("gradient shape");
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, b_trans } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), out.cols());
                if self.needs(*a) {
                    // dA = G · op(B)ᵀ
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, tb.data(), !b_trans, &mut da, 0.0);
                    acc(*a, like(*a, da));
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; k * n];
                    if *b_trans {
                        // B is [n, k]: dB = Gᵀ · A
                        gemm(n, m, k, g.data(), true, ta.data(), false, &mut db, 0.0);
                    } else {
                        gemm(k, m, n, ta.data(), true, g.data(), false, &mut db, 0.0);
                    }
                    acc(*b, like(*b, db));
                }
            }
            Op::BlockMatMul { a, x, blocks, p, q } => {
                let (ta, tx) = (self.value(*a), self.value(*x));
                let (p, q, r) = (*p, *q, tx.cols());
                let mut da = vec![0.0; ta.len()];
                let mut dx = vec![0.0; tx.len()];
                for blk in 0..*blocks {
                    let gb = &g.data()[blk * p * r..(blk + 1) * p * r];
                    let ab = &ta.data()[blk * p * q..(blk + 1) * p * q];
                    let xb = &tx.data()[blk * q * r..(blk + 1) * q * r];
                    if self.needs(*a) {
                        gemm(
                            p,
                            r,
                            q,
                            gb,
                            false,
                            xb,
                            true,
                            &mut da[blk * p * q..(blk + 1) * p * q],
                            0.0,
                        );
                    }
                    if self.needs(*x) {
                        gemm(
                            q,
                            p,
                            r,
                            ab,
                            true,
                            gb,
                            false,
                            &mut dx[blk * q * r..(blk + 1) * q * r],
                            0.0,
                        );
                    }
                }
                acc(*a, like(*a, da));
                acc(*x, like(*x, dx));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let da = g.data().iter().zip(tb.data()).map(|(g, y)| g * y).collect();
                let db = g.data().iter().zip(ta.data()).map(|(g, x)| g * x).collect();
                acc(*a, like(*a, da));
                acc(*b, like(*b, db));
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                let c = g.cols();
                let mut dr = vec![0.0; c];
                for (j, &v) in g.data().iter().enumerate() {
                    dr[j % c] += v;
                }
                acc(*row, like(*row, dr));
            }
            Op::Scale(a, f) => acc(*a, g.map(|x| x * f)),
            Op::Sigmoid(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect();
                acc(*a, like(*a, d));
            }
            Op::Tanh(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                acc(*a, like(*a, d));
            }
            Op::Log { a, eps } => {
                let ta = self.value(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(ta.data())
                    .map(|(g, &x)| if x < *eps { 0.0 } else { g / x })
                    .collect();
                acc(*a, like(*a, d));
            }
            Op::Softmax(a) | Op::MaskedSoftmax(a) => {
                // dx = y ⊙ (g - <g, y>) row-wise; masked entries have y = 0.
                let c = out.cols();
                let mut d = vec![0.0; out.len()];
                for r in 0..out.rows() {
                    let (y, gr) = (out.row(r), g.row(r));
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        d[r * c + j] = y[j] * (gr[j] - dot);
                    }
                }
                acc(*a, like(*a, d));
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    let mut d = Vec::with_capacity(self.value(p).len());
                    for r in 0..g.rows() {
                        d.extend_from_slice(&g.row(r)[offset..offset + pc]);
                    }
                    offset += pc;
                    acc(p, like(p, d));
                }
            }
            Op::SliceRows { a, start } => {
                let ta = self.value(*a);
                let c = ta.cols();
                let mut d = vec![0.0; ta.len()];
                d[start * c..start * c + g.len()].copy_from_slice(g.data());
                acc(*a, like(*a, d));
            }
            Op::L2Normalize(a) => {
                // dx = (g - y <y, g>) / |x|
                let ta = self.value(*a);
                let c = ta.cols();
                let mut d = vec![0.0; ta.len()];
                for r in 0..ta.rows() {
                    let norm = ta.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
                    if norm < NORM_EPS {
                        continue;
                    }
                    let (y, gr) = (out.row(r), g.row(r));
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        d[r * c + j] = (gr[j] - y[j] * dot) / norm;
                    }
                }
                acc(*a, like(*a, d));
            }
            Op::Mask { a, mask } => {
                let d = g.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                acc(*a, like(*a, d));
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                acc(*a, like(*a, vec![g.item(); n]));
            }
            Op::SumCols(a) => {
                let ta = self.value(*a);
                let c = ta.cols();
                let d = (0..ta.len()).map(|j| g.data()[j / c]).collect();
                acc(*a, like(*a, d));
            }
            Op::Pick { a, cols } => {
                let ta = self.value(*a);
                let c = ta.cols();
                let mut d = vec![0.0; ta.len()];
                for (r, &col) in cols.iter().enumerate() {
                    d[r * c + col] = g.data()[r];
                }
                acc(*a, like(*a, d));
            }
            Op::GatherRows { a, index } => {
                let ta = self.value(*a);
                let c = ta.cols();
                let mut d = vec![0.0; ta.len()];
                for (r, &src) in index.iter().enumerate() {
                    for j in 0..c {
                        d[src * c + j] += g.data()[r * c + j];
                    }
                }
                acc(*a, like(*a, d));
            }
            Op::ScaleRows { a, weights } => {
                let c = g.cols();
                let d = g.data().iter().enumerate().map(|(j, &v)| v * weights[j / c]).collect();
                acc(*a, like(*a, d));
            }
            Op::Reshape(a) => acc(*a, like(*a, g.data().to_vec())),
        }
    }
}

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRowBroadcast(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    ConcatCols(Var, Var),
    ConcatRows(Vec<Var>),
    TileRow(Var, usize),
    Row(Var, usize),
    RowsSlice(Var, usize, usize),
    Transpose(Var),
    EmbeddingLookup(Var, Vec<usize>),
    Dropout(Var, Vec<f64>, f64),
    MeanOverSets(Var, Vec<Vec<usize>>),
    LogSoftmaxRows(Var, Option<Vec<Vec<bool>>>),
    Gather(Var, Vec<(usize, usize)>),
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed operations.
///
/// Operations append nodes; [`Tape::backward`] walks them in exact reverse
/// execution order, accumulating gradients additively across fan-out.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable input. `backward` will populate its gradient.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` loss w.r.t. `v`, if any flowed.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.grads.get(v.0).and_then(|g| {
            g.as_ref().map(|data| {
                Tensor::new(self.nodes[v.0].value.shape().to_vec(), data.clone())
                    .expect("gradient shape matches value shape")
            })
        })
    }

    fn mat(&self, v: Var, op: &str) -> Result<(usize, usize)> {
        let t = self.value(v);
        if t.is_matrix() {
            Ok((t.rows(), t.cols()))
        } else {
            Err(Error::shape(format!(
                "{op}: expected matrix, got shape {:?}",
                t.shape()
            )))
        }
    }

    /// Matrix product `[m,k] @ [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat(a, "matmul")?;
        let (k2, n) = self.mat(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul: inner dimensions differ, [{m},{k}] vs [{k2},{n}]"
            )));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += x * brow[j];
                }
            }
        }
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// Elementwise sum of same-shape tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(format!(
                "add: shapes differ, {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Add(a, b), rg))
    }

    /// `[m,n] + [1,n]`, the row added to every matrix row.
    pub fn add_row_broadcast(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.mat(a, "add_row_broadcast")?;
        let (r1, n2) = self.mat(row, "add_row_broadcast")?;
        if r1 != 1 || n2 != n {
            return Err(Error::shape(format!(
                "add_row_broadcast: [{m},{n}] vs row [{r1},{n2}]"
            )));
        }
        let av = self.value(a).data();
        let rv = self.value(row).data();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(av[i * n + j] + rv[j]);
            }
        }
        let rg = self.requires(a) || self.requires(row);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::AddRowBroadcast(a, row),
            rg,
        ))
    }

    /// Elementwise (Hadamard) product of same-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(format!(
                "mul: shapes differ, {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let data = self.value(a).data().iter().map(|x| x * c).collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.requires(a);
        self.push(
            Tensor::new(shape, data).expect("scale preserves shape"),
            Op::Scale(a, c),
            rg,
        )
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|x| x.tanh()).collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.requires(a);
        self.push(
            Tensor::new(shape, data).expect("tanh preserves shape"),
            Op::Tanh(a),
            rg,
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.requires(a);
        self.push(
            Tensor::new(shape, data).expect("sigmoid preserves shape"),
            Op::Sigmoid(a),
            rg,
        )
    }

    /// `[m,p] ++ [m,q] -> [m,p+q]` column-wise.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, p) = self.mat(a, "concat_cols")?;
        let (m2, q) = self.mat(b, "concat_cols")?;
        if m != m2 {
            return Err(Error::shape(format!(
                "concat_cols: row counts differ, [{m},{p}] vs [{m2},{q}]"
            )));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            out.extend_from_slice(&av[i * p..(i + 1) * p]);
            out.extend_from_slice(&bv[i * q..(i + 1) * q]);
        }
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor::new(vec![m, p + q], out)?, Op::ConcatCols(a, b), rg))
    }

    /// Stack matrices with equal column counts into one matrix.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat_rows: empty input list".to_string()));
        }
        let (_, n) = self.mat(parts[0], "concat_rows")?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.mat(p, "concat_rows")?;
            if c != n {
                return Err(Error::shape(format!(
                    "concat_rows: column counts differ, {n} vs {c}"
                )));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(
            Tensor::new(vec![rows, n], out)?,
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    /// Repeat a `[1,n]` row `m` times into `[m,n]`.
    pub fn tile_row(&mut self, row: Var, m: usize) -> Result<Var> {
        let (r, n) = self.mat(row, "tile_row")?;
        if r != 1 {
            return Err(Error::shape(format!(
                "tile_row: expected [1,n] row, got [{r},{n}]"
            )));
        }
        let rv = self.value(row).data().to_vec();
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(&rv);
        }
        let rg = self.requires(row);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::TileRow(row, m), rg))
    }

    /// Extract row `i` of a matrix as `[1,n]`.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let (m, n) = self.mat(a, "row")?;
        if i >= m {
            return Err(Error::shape(format!("row: index {i} out of {m} rows")));
        }
        let data = self.value(a).row_slice(i).to_vec();
        let rg = self.requires(a);
        Ok(self.push(Tensor::new(vec![1, n], data)?, Op::Row(a, i), rg))
    }

    /// Contiguous row range `[start, end)` of a matrix.
    pub fn rows_slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.mat(a, "rows_slice")?;
        if start > end || end > m {
            return Err(Error::shape(format!(
                "rows_slice: range {start}..{end} out of {m} rows"
            )));
        }
        let data = self.value(a).data()[start * n..end * n].to_vec();
        let rg = self.requires(a);
        Ok(self.push(
            Tensor::new(vec![end - start, n], data)?,
            Op::RowsSlice(a, start, end),
            rg,
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.mat(a, "transpose")?;
        let av = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        let rg = self.requires(a);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::Transpose(a), rg))
    }

    /// Gather rows of an embedding table: `table[ids[i], :]` stacked.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, e) = self.mat(table, "embedding_lookup")?;
        for &id in ids {
            if id >= v {
                return Err(Error::shape(format!(
                    "embedding_lookup: id {id} out of table rows {v}"
                )));
            }
        }
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            out.extend_from_slice(&tv[id * e..(id + 1) * e]);
        }
        let rg = self.requires(table);
        Ok(self.push(
            Tensor::new(vec![ids.len(), e], out)?,
            Op::EmbeddingLookup(table, ids.to_vec()),
            rg,
        ))
    }

    /// Inverted dropout with an explicit 0/1 mask: retained entries scale
    /// by `1/(1-rate)`. Eval mode is simply not applying the op.
    pub fn dropout(&mut self, a: Var, rate: f64, mask: Vec<f64>) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!("dropout rate {rate} not in [0,1)")));
        }
        if mask.len() != self.value(a).len() {
            return Err(Error::shape(format!(
                "dropout: mask length {} vs tensor length {}",
                mask.len(),
                self.value(a).len()
            )));
        }
        let keep = 1.0 / (1.0 - rate);
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(&mask)
            .map(|(x, m)| x * m * keep)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.requires(a);
        Ok(self.push(Tensor::new(shape, data)?, Op::Dropout(a, mask, rate), rg))
    }

    /// Dropout with a Bernoulli(1-rate) mask drawn from `rng`.
    /// `rate == 0` is the identity and draws nothing.
    pub fn dropout_seeded<R: Rng>(&mut self, a: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if rate == 0.0 {
            return Ok(a);
        }
        let n = self.value(a).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { 1.0 })
            .collect();
        self.dropout(a, rate, mask)
    }

    /// Mean of member rows per unit: `[n,h]` with `sets` -> `[u,h]`.
    pub fn mean_over_sets(&mut self, a: Var, sets: &[Vec<usize>]) -> Result<Var> {
        let (n, h) = self.mat(a, "mean_over_sets")?;
        for (u, set) in sets.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::validation(format!(
                    "mean_over_sets: unit {u} has an empty position set"
                )));
            }
            for &p in set {
                if p >= n {
                    return Err(Error::shape(format!(
                        "mean_over_sets: unit {u} position {p} out of {n} rows"
                    )));
                }
            }
        }
        let av = self.value(a).data();
        let mut out = vec![0.0; sets.len() * h];
        for (u, set) in sets.iter().enumerate() {
            let inv = 1.0 / set.len() as f64;
            for &p in set {
                for j in 0..h {
                    out[u * h + j] += av[p * h + j] * inv;
                }
            }
        }
        let rg = self.requires(a);
        Ok(self.push(
            Tensor::new(vec![sets.len(), h], out)?,
            Op::MeanOverSets(a, sets.to_vec()),
            rg,
        ))
    }

    /// Row-wise log-softmax. Entries where `mask` is true are excluded from
    /// the normalization and reported as negative infinity; gradients do not
    /// flow through them. A fully masked row is an error.
    pub fn log_softmax_rows(&mut self, a: Var, mask: Option<Vec<Vec<bool>>>) -> Result<Var> {
        let (m, n) = self.mat(a, "log_softmax_rows")?;
        if let Some(mk) = &mask {
            if mk.len() != m || mk.iter().any(|r| r.len() != n) {
                return Err(Error::shape(format!(
                    "log_softmax_rows: mask dimensions do not match [{m},{n}]"
                )));
            }
            for (i, r) in mk.iter().enumerate() {
                if r.iter().all(|&x| x) {
                    return Err(Error::validation(format!(
                        "log_softmax_rows: all candidates masked in row {i}"
                    )));
                }
            }
        }
        let av = self.value(a).data();
        let mut out = vec![f64::NEG_INFINITY; m * n];
        for i in 0..m {
            let live = |j: usize| mask.as_ref().map_or(true, |mk| !mk[i][j]);
            let mut mx = f64::NEG_INFINITY;
            for j in 0..n {
                if live(j) {
                    mx = mx.max(av[i * n + j]);
                }
            }
            let mut z = 0.0;
            for j in 0..n {
                if live(j) {
                    z += (av[i * n + j] - mx).exp();
                }
            }
            let lz = mx + z.ln();
            for j in 0..n {
                if live(j) {
                    out[i * n + j] = av[i * n + j] - lz;
                }
            }
        }
        let rg = self.requires(a);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::LogSoftmaxRows(a, mask),
            rg,
        ))
    }

    /// Pick matrix entries `(row, col)` into a vector.
    pub fn gather(&mut self, a: Var, pairs: &[(usize, usize)]) -> Result<Var> {
        let (m, n) = self.mat(a, "gather")?;
        for &(r, c) in pairs {
            if r >= m || c >= n {
                return Err(Error::shape(format!(
                    "gather: entry ({r},{c}) out of [{m},{n}]"
                )));
            }
        }
        let av = self.value(a).data();
        let data = pairs.iter().map(|&(r, c)| av[r * n + c]).collect();
        let rg = self.requires(a);
        Ok(self.push(
            Tensor::vector(data),
            Op::Gather(a, pairs.to_vec()),
            rg,
        ))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let rg = self.requires(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Populate gradients of every reachable `requires_grad` node with
    /// d loss / d node. `loss` must be scalar.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::shape(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            if grads[idx].is_none() || !self.nodes[idx].requires_grad {
                continue;
            }
            let g = grads[idx].take().expect("checked above");
            self.apply_backward(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
        grads[v.0].get_or_insert_with(|| vec![0.0; len])
    }

    fn apply_backward(&self, idx: usize, g: &[f64], grads: &mut Vec<Option<Vec<f64>>>) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = (av.rows(), av.cols());
                let n = bv.cols();
                if self.requires(*a) {
                    let da = Self::accumulate(grads, *a, m * k);
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g[i * n + j] * bv.data()[p * n + j];
                            }
                            da[i * k + p] += acc;
                        }
                    }
                }
                if self.requires(*b) {
                    let db = Self::accumulate(grads, *b, k * n);
                    for p in 0..k {
                        for i in 0..m {
                            let x = av.data()[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                db[p * n + j] += x * g[i * n + j];
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.requires(*v) {
                        let dv = Self::accumulate(grads, *v, g.len());
                        for (d, gi) in dv.iter_mut().zip(g) {
                            *d += gi;
                        }
                    }
                }
            }
            Op::AddRowBroadcast(a, row) => {
                let (m, n) = (self.value(*a).rows(), self.value(*a).cols());
                if self.requires(*a) {
                    let da = Self::accumulate(grads, *a, m * n);
                    for (d, gi) in da.iter_mut().zip(g) {
                        *d += gi;
                    }
                }
                if self.requires(*row) {
                    let dr = Self::accumulate(grads, *row, n);
                    for i in 0..m {
                        for j in 0..n {
                            dr[j] += g[i * n + j];
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.requires(*a) {
                    let bv: Vec<f64> = self.value(*b).data().to_vec();
                    let da = Self::accumulate(grads, *a, g.len());
                    for ((d, gi), x) in da.iter_mut().zip(g).zip(&bv) {
                        *d += gi * x;
                    }
                }
                if self.requires(*b) {
                    let av: Vec<f64> = self.value(*a).data().to_vec();
                    let db = Self::accumulate(grads, *b, g.len());
                    for ((d, gi), x) in db.iter_mut().zip(g).zip(&av) {
                        *d += gi * x;
                    }
                }
            }
            Op::Scale(a, c) => {
                if self.requires(*a) {
                    let da = Self::accumulate(grads, *a, g.len());
                    for (d, gi) in da.iter_mut().zip(g) {
                        *d += gi * c;
                    }
                }
            }
            Op::Tanh(a) => {
                if self.requires(*a) {
                    let y: Vec<f64> = node.value.data().to_vec();
                    let da = Self::accumulate(grads, *a, g.len());
                    for ((d, gi), yi) in da.iter_mut().zip(g).zip(&y) {
                        *d += gi * (1.0 - yi * yi);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if self.requires(*a) {
                    let y: Vec<f64> = node.value.data().to_vec();
                    let da = Self::accumulate(grads, *a, g.len());
                    for ((d, gi), yi) in da.iter_mut().zip(g).zip(&y) {
                        *d += gi * yi * (1.0 - yi);
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let (m, p) = (self.value(*a).rows(), self.value(*a).cols());
                let q = self.value(*b).cols();
                if self.requires(*a) {
                    let da = Self::accumulate(grads, *a, m * p);
                    for i in 0..m {
                        for j in 0..p {
                            da[i * p + j] += g[i * (p + q) + j];
                        }
                    }
                }
                if self.requires(*b) {
                    let db = Self::accumulate(grads, *b, m * q);
                    for i in 0..m {
                        for j in 0..q {
                            db[i * q + j] += g[i * (p + q) + p + j];
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if self.requires(p) {
                        let dp = Self::accumulate(grads, p, len);
                        for (d, gi) in dp.iter_mut().zip(&g[offset..offset + len]) {
                            *d += gi;
                        }
                    }
                    offset += len;
                }
            }
            Op::TileRow(row, m) => {
                if self.requires(*row) {
                    let n = self.value(*row).cols();
                    let dr = Self::accumulate(grads, *row, n);
                    for i in 0..*m {
                        for j in 0..n {
                            dr[j] += g[i * n + j];
                        }
                    }
                }
            }
            Op::Row(a, i) => {
                if self.requires(*a) {
                    let (m, n) = (self.value(*a).rows(), self.value(*a).cols());
                    let da = Self::accumulate(grads, *a, m * n);
                    for j in 0..n {
                        da[i * n + j] += g[j];
                    }
                }
            }
            Op::RowsSlice(a, start, _end) => {
                if self.requires(*a) {
                    let (m, n) = (self.value(*a).rows(), self.value(*a).cols());
                    let da = Self::accumulate(grads, *a, m * n);
                    for (off, gi) in g.iter().enumerate() {
                        da[start * n + off] += gi;
                    }
                }
            }
            Op::Transpose(a) => {
                if self.requires(*a) {
                    let (m, n) = (self.value(*a).rows(), self.value(*a).cols());
                    let da = Self::accumulate(grads, *a, m * n);
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] += g[j * m + i];
                        }
                    }
                }
            }
            Op::EmbeddingLookup(table, ids) => {
                if self.requires(*table) {
                    let (v, e) = (self.value(*table).rows(), self.value(*table).cols());
                    let dt = Self::accumulate(grads, *table, v * e);
                    for (i, &id) in ids.iter().enumerate() {
                        for j in 0..e {
                            dt[id * e + j] += g[i * e + j];
                        }
                    }
                }
            }
            Op::Dropout(a, mask, rate) => {
                if self.requires(*a) {
                    let keep = 1.0 / (1.0 - rate);
                    let da = Self::accumulate(grads, *a, g.len());
                    for ((d, gi), m) in da.iter_mut().zip(g).zip(mask) {
                        *d += gi * m * keep;
                    }
                }
            }
            Op::MeanOverSets(a, sets) => {
                if self.requires(*a) {
                    let (n, h) = (self.value(*a).rows(), self.value(*a).cols());
                    let da = Self::accumulate(grads, *a, n * h);
                    for (u, set) in sets.iter().enumerate() {
                        let inv = 1.0 / set.len() as f64;
                        for &p in set {
                            for j in 0..h {
                                da[p * h + j] += g[u * h + j] * inv;
                            }
                        }
                    }
                }
            }
            Op::LogSoftmaxRows(a, mask) => {
                if self.requires(*a) {
                    let (m, n) = (self.value(*a).rows(), self.value(*a).cols());
                    let y = node.value.data();
                    let da = Self::accumulate(grads, *a, m * n);
                    for i in 0..m {
                        let live =
                            |j: usize| mask.as_ref().map_or(true, |mk| !mk[i][j]);
                        let mut gsum = 0.0;
                        for j in 0..n {
                            if live(j) {
                                gsum += g[i * n + j];
                            }
                        }
                        for j in 0..n {
                            if live(j) {
                                let p = y[i * n + j].exp();
                                da[i * n + j] += g[i * n + j] - p * gsum;
                            }
                        }
                    }
                }
            }
            Op::Gather(a, pairs) => {
                if self.requires(*a) {
                    let (m, n) = (self.value(*a).rows(), self.value(*a).cols());
                    let da = Self::accumulate(grads, *a, m * n);
                    for (k, &(r, c)) in pairs.iter().enumerate() {
                        da[r * n + c] += g[k];
                    }
                }
            }
            Op::Sum(a) => {
                if self.requires(*a) {
                    let len = self.value(*a).len();
                    let da = Self::accumulate(grads, *a, len);
                    for d in da.iter_mut() {
                        *d += g[0];
                    }
                }
            }
        }
    }
}

/// Tape handles for one LSTM cell's weights.
///
/// Gate order is input, forget, output, candidate; `w_*` maps the input
/// row `[1,in]`, `u_*` the previous hidden `[1,hid]`, `b_*` is `[1,hid]`.
#[derive(Clone, Copy)]
pub struct LstmCellVars {
    pub w_i: Var,
    pub u_i: Var,
    pub b_i: Var,
    pub w_f: Var,
    pub u_f: Var,
    pub b_f: Var,
    pub w_o: Var,
    pub u_o: Var,
    pub b_o: Var,
    pub w_g: Var,
    pub u_g: Var,
    pub b_g: Var,
}

/// One LSTM cell step: returns `(h', c')`.
pub fn lstm_cell(
    tape: &mut Tape,
    x: Var,
    h: Var,
    c: Var,
    p: &LstmCellVars,
) -> Result<(Var, Var)> {
    let gate = |tape: &mut Tape, w: Var, u: Var, b: Var| -> Result<Var> {
        let xw = tape.matmul(x, w)?;
        let hu = tape.matmul(h, u)?;
        let s = tape.add(xw, hu)?;
        tape.add(s, b)
    };
    let i_pre = gate(tape, p.w_i, p.u_i, p.b_i)?;
    let f_pre = gate(tape, p.w_f, p.u_f, p.b_f)?;
    let o_pre = gate(tape, p.w_o, p.u_o, p.b_o)?;
    let g_pre = gate(tape, p.w_g, p.u_g, p.b_g)?;
    let i = tape.sigmoid(i_pre);
    let f = tape.sigmoid(f_pre);
    let o = tape.sigmoid(o_pre);
    let g = tape.tanh(g_pre);
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_next = tape.add(fc, ig)?;
    let c_tanh = tape.tanh(c_next);
    let h_next = tape.mul(o, c_tanh)?;
    Ok((h_next, c_next))
}

use crate::error::{Error, Result};

use super::params::{Gradients, ParamId, ParamStore};

/// Handle to a value recorded on a [`Tape`]. The tensor's values (and, after
/// `backward`, its gradient) live in the tape arena under `id`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiffTensor {
    pub id: usize,
    pub rows: usize,
    pub cols: usize,
    pub requires_grad: bool,
}

impl DiffTensor {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

enum Op {
    Leaf,
    Matmul { a: usize, b: usize },
    Transpose { a: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    // matrix (n x d) combined with a broadcast 1 x d row
    AddRow { m: usize, row: usize },
    MulRow { m: usize, row: usize },
    // matrix (n x d) combined with a broadcast n x 1 column
    AddCol { m: usize, col: usize },
    MulCol { m: usize, col: usize },
    // broadcast multiply by a 1x1 tensor
    MulScalar { a: usize, s: usize },
    Scale { a: usize, c: f64 },
    Offset { a: usize },
    Negate { a: usize },
    Abs { a: usize },
    Tanh { a: usize },
    Relu { a: usize },
    Sqrt { a: usize },
    Ln { a: usize },
    Cos { a: usize },
    Sin { a: usize },
    Recip { a: usize },
    SoftmaxRows { a: usize },
    LogSoftmaxRows { a: usize },
    // softmax restricted per row to entries where mask != 0; zeros elsewhere
    MaskedSoftmaxRows { a: usize, mask: Vec<f64> },
    GradReverse { a: usize, lambda: f64 },
    SumAll { a: usize },
    ConcatCols { parts: Vec<usize> },
    ConcatRows { parts: Vec<usize> },
    SliceCols { a: usize, start: usize },
    // one column index per row; output is n x 1
    GatherCols { a: usize, idx: Vec<usize> },
    Reshape { a: usize },
}

struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

/// Eagerly recorded computation tape. Nodes are append-only, so reverse node
/// order is a valid topological order for the backward pass, and two identical
/// op sequences replay bit-identically.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bindings: Vec<Option<usize>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<f64>, requires_grad: bool) -> DiffTensor {
        debug_assert_eq!(value.len(), rows * cols);
        let id = self.nodes.len();
        self.nodes.push(Node {
            op,
            rows,
            cols,
            value,
            grad: None,
            requires_grad,
        });
        DiffTensor {
            id,
            rows,
            cols,
            requires_grad,
        }
    }

    /// Constant leaf: participates in forward values but never receives a gradient.
    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Result<DiffTensor> {
        if value.len() != rows * cols {
            return Err(Error::Invalid(format!(
                "constant of shape {rows}x{cols} needs {} values, got {}",
                rows * cols,
                value.len()
            )));
        }
        Ok(self.push(Op::Leaf, rows, cols, value, false))
    }

    /// Differentiable leaf.
    pub fn leaf(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Result<DiffTensor> {
        if value.len() != rows * cols {
            return Err(Error::Invalid(format!(
                "leaf of shape {rows}x{cols} needs {} values, got {}",
                rows * cols,
                value.len()
            )));
        }
        Ok(self.push(Op::Leaf, rows, cols, value, true))
    }

    /// Bind a stored parameter onto the tape. Repeated binds of the same
    /// parameter within one tape return the same node so its gradient
    /// contributions accumulate.
    pub fn bind_param(&mut self, store: &ParamStore, id: ParamId) -> DiffTensor {
        if self.bindings.len() < store.len() {
            self.bindings.resize(store.len(), None);
        }
        if let Some(node) = self.bindings[id.0] {
            let n = &self.nodes[node];
            return DiffTensor {
                id: node,
                rows: n.rows,
                cols: n.cols,
                requires_grad: n.requires_grad,
            };
        }
        let p = store.param(id);
        let t = self.push(Op::Leaf, p.rows, p.cols, p.value.clone(), p.trainable);
        self.bindings[id.0] = Some(t.id);
        t
    }

    pub fn value(&self, t: DiffTensor) -> &[f64] {
        &self.nodes[t.id].value
    }

    pub fn grad(&self, t: DiffTensor) -> Option<&[f64]> {
        self.nodes[t.id].grad.as_deref()
    }

    // ── forward ops ──────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: DiffTensor, b: DiffTensor) -> Result<DiffTensor> {
        if a.cols != b.rows {
            return Err(Error::shape("matmul", a.shape(), b.shape()));
        }
        let value = matmul_raw(self.value(a), self.value(b), a.rows, a.cols, b.cols);
        let rg = a.requires_grad || b.requires_grad;
        Ok(self.push(Op::Matmul { a: a.id, b: b.id }, a.rows, b.cols, value, rg))
    }

    pub fn transpose(&mut self, a: DiffTensor) -> Result<DiffTensor> {
        let v = self.value(a);
        let mut out = vec![0.0; a.len()];
        for i in 0..a.rows {
            for j in 0..a.cols {
                out[j * a.rows + i] = v[i * a.cols + j];
            }
        }
        Ok(self.push(Op::Transpose { a: a.id }, a.cols, a.rows, out, a.requires_grad))
    }

    fn binary_same_shape(
        &mut self,
        op_name: &'static str,
        a: DiffTensor,
        b: DiffTensor,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<DiffTensor> {
        if a.shape() != b.shape() {
            return Err(Error::shape(op_name, a.shape(), b.shape()));
        }
        let value: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = a.requires_grad || b.requires_grad;
        Ok(self.push(op, a.rows, a.cols, value, rg))
    }

    pub fn add(&mut self, a: DiffTensor, b: DiffTensor) -> Result<DiffTensor> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add { a: a.id, b: b.id })
    }

    pub fn sub(&mut self, a: DiffTensor, b: DiffTensor) -> Result<DiffTensor> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub { a: a.id, b: b.id })
    }

    pub fn mul(&mut self, a: DiffTensor, b: DiffTensor) -> Result<DiffTensor> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul { a: a.id, b: b.id })
    }

    pub fn add_row(&mut self, m: DiffTensor, row: DiffTensor) -> Result<DiffTensor> {
        if row.rows != 1 || row.cols != m.cols {
            return Err(Error::shape("add_row", m.shape(), row.shape()));
        }
        let r = self.value(row).to_vec();
        let value: Vec<f64> = self
            .value(m)
            .iter()
            .enumerate()
            .map(|(i, &x)| x + r[i % m.cols])
            .collect();
        let rg = m.requires_grad || row.requires_grad;
        Ok(self.push(Op::AddRow { m: m.id, row: row.id }, m.rows, m.cols, value, rg))
    }

    pub fn mul_row(&mut self, m: DiffTensor, row: DiffTensor) -> Result<DiffTensor> {
        if row.rows != 1 || row.cols != m.cols {
            return Err(Error::shape("mul_row", m.shape(), row.shape()));
        }
        let r = self.value(row).to_vec();
        let value: Vec<f64> = self
            .value(m)
            .iter()
            .enumerate()
            .map(|(i, &x)| x * r[i % m.cols])
            .collect();
        let rg = m.requires_grad || row.requires_grad;
        Ok(self.push(Op::MulRow { m: m.id, row: row.id }, m.rows, m.cols, value, rg))
    }

    pub fn add_col(&mut self, m: DiffTensor, col: DiffTensor) -> Result<DiffTensor> {
        if col.cols != 1 || col.rows != m.rows {
            return Err(Error::shape("add_col", m.shape(), col.shape()));
        }
        let c = self.value(col).to_vec();
        let value: Vec<f64> = self
            .value(m)
            .iter()
            .enumerate()
            .map(|(i, &x)| x + c[i / m.cols])
            .collect();
        let rg = m.requires_grad || col.requires_grad;
        Ok(self.push(Op::AddCol { m: m.id, col: col.id }, m.rows, m.cols, value, rg))
    }

    pub fn mul_col(&mut self, m: DiffTensor, col: DiffTensor) -> Result<DiffTensor> {
        if col.cols != 1 || col.rows != m.rows {
            return Err(Error::shape("mul_col", m.shape(), col.shape()));
        }
        let c = self.value(col).to_vec();
        let value: Vec<f64> = self
            .value(m)
            .iter()
            .enumerate()
            .map(|(i, &x)| x * c[i / m.cols])
            .collect();
        let rg = m.requires_grad || col.requires_grad;
        Ok(self.push(Op::MulCol { m: m.id, col: col.id }, m.rows, m.cols, value, rg))
    }

    pub fn mul_scalar_t(&mut self, a: DiffTensor, s: DiffTensor) -> Result<DiffTensor> {
        if s.len() != 1 {
            return Err(Error::shape("mul_scalar_t", a.shape(), s.shape()));
        }
        let sv = self.value(s)[0];
        let value: Vec<f64> = self.value(a).iter().map(|&x| x * sv).collect();
        let rg = a.requires_grad || s.requires_grad;
        Ok(self.push(Op::MulScalar { a: a.id, s: s.id }, a.rows, a.cols, value, rg))
    }

    fn unary(&mut self, a: DiffTensor, f: impl Fn(f64) -> f64, op: Op) -> DiffTensor {
        let value: Vec<f64> = self.value(a).iter().map(|&x| f(x)).collect();
        self.push(op, a.rows, a.cols, value, a.requires_grad)
    }

    pub fn scale(&mut self, a: DiffTensor, c: f64) -> DiffTensor {
        self.unary(a, |x| x * c, Op::Scale { a: a.id, c })
    }

    pub fn offset(&mut self, a: DiffTensor, c: f64) -> DiffTensor {
        self.unary(a, |x| x + c, Op::Offset { a: a.id })
    }

    pub fn negate(&mut self, a: DiffTensor) -> DiffTensor {
        self.unary(a, |x| -x, Op::Negate { a: a.id })
    }

    pub fn abs(&mut self, a: DiffTensor) -> DiffTensor {
        self.unary(a, f64::abs, Op::Abs { a: a.id })
    }

    pub fn tanh(&mut self, a: DiffTensor) -> DiffTensor {
        self.unary(a, f64::tanh, Op::Tanh { a: a.id })
    }

    pub fn relu(&mut self, a: DiffTensor) -> DiffTensor {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu { a: a.id })
    }

    pub fn sqrt(&mut self, a: DiffTensor) -> DiffTensor {
        self.unary(a, f64::sqrt, Op::Sqrt { a: a.id })
    }

    pub fn ln(&mut self, a: DiffTensor) -> DiffTensor {
        self.unary(a, f64::ln, Op::Ln { a: a.id })
    }

    pub fn cos(&mut self, a: DiffTensor) -> DiffTensor {
        self.unary(a, f64::cos, Op::Cos { a: a.id })
    }

    pub fn sin(&mut self, a: DiffTensor) -> DiffTensor {
        self.unary(a, f64::sin, Op::Sin { a: a.id })
    }

    pub fn recip(&mut self, a: DiffTensor) -> DiffTensor {
        self.unary(a, |x| 1.0 / x, Op::Recip { a: a.id })
    }

    pub fn softmax_rows(&mut self, a: DiffTensor) -> DiffTensor {
        let mut value = self.value(a).to_vec();
        for r in value.chunks_mut(a.cols) {
            softmax_in_place(r);
        }
        self.push(Op::SoftmaxRows { a: a.id }, a.rows, a.cols, value, a.requires_grad)
    }

    pub fn log_softmax_rows(&mut self, a: DiffTensor) -> DiffTensor {
        let mut value = self.value(a).to_vec();
        for r in value.chunks_mut(a.cols) {
            let max = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = r.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
            for x in r.iter_mut() {
                *x -= lse;
            }
        }
        self.push(Op::LogSoftmaxRows { a: a.id }, a.rows, a.cols, value, a.requires_grad)
    }

    /// Row softmax over the entries with `mask != 0`; masked-out entries are 0.
    /// Rows whose mask is entirely zero come out as all-zero rows.
    pub fn masked_softmax_rows(&mut self, a: DiffTensor, mask: &[f64]) -> Result<DiffTensor> {
        if mask.len() != a.len() {
            return Err(Error::Invalid(format!(
                "masked_softmax_rows: mask has {} entries for a {}x{} input",
                mask.len(),
                a.rows,
                a.cols
            )));
        }
        let mut value = self.value(a).to_vec();
        for (r, mrow) in value.chunks_mut(a.cols).zip(mask.chunks(a.cols)) {
            masked_softmax_in_place(r, mrow);
        }
        let op = Op::MaskedSoftmaxRows {
            a: a.id,
            mask: mask.to_vec(),
        };
        Ok(self.push(op, a.rows, a.cols, value, a.requires_grad))
    }

    /// Identity in the forward direction; multiplies the gradient by `-lambda`
    /// on the way back.
    pub fn grad_reverse(&mut self, a: DiffTensor, lambda: f64) -> DiffTensor {
        let value = self.value(a).to_vec();
        self.push(
            Op::GradReverse { a: a.id, lambda },
            a.rows,
            a.cols,
            value,
            a.requires_grad,
        )
    }

    pub fn sum_all(&mut self, a: DiffTensor) -> DiffTensor {
        let s: f64 = self.value(a).iter().sum();
        self.push(Op::SumAll { a: a.id }, 1, 1, vec![s], a.requires_grad)
    }

    pub fn concat_cols(&mut self, parts: &[DiffTensor]) -> Result<DiffTensor> {
        if parts.is_empty() {
            return Err(Error::Invalid("concat_cols of zero tensors".into()));
        }
        let rows = parts[0].rows;
        if parts.iter().any(|p| p.rows != rows) {
            return Err(Error::Invalid("concat_cols requires equal row counts".into()));
        }
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut value = vec![0.0; rows * cols];
        let mut off = 0;
        for p in parts {
            let v = self.value(*p);
            for i in 0..rows {
                value[i * cols + off..i * cols + off + p.cols]
                    .copy_from_slice(&v[i * p.cols..(i + 1) * p.cols]);
            }
            off += p.cols;
        }
        let rg = parts.iter().any(|p| p.requires_grad);
        let op = Op::ConcatCols {
            parts: parts.iter().map(|p| p.id).collect(),
        };
        Ok(self.push(op, rows, cols, value, rg))
    }

    pub fn concat_rows(&mut self, parts: &[DiffTensor]) -> Result<DiffTensor> {
        if parts.is_empty() {
            return Err(Error::Invalid("concat_rows of zero tensors".into()));
        }
        let cols = parts[0].cols;
        if parts.iter().any(|p| p.cols != cols) {
            return Err(Error::Invalid("concat_rows requires equal column counts".into()));
        }
        let rows: usize = parts.iter().map(|p| p.rows).sum();
        let mut value = Vec::with_capacity(rows * cols);
        for p in parts {
            value.extend_from_slice(self.value(*p));
        }
        let rg = parts.iter().any(|p| p.requires_grad);
        let op = Op::ConcatRows {
            parts: parts.iter().map(|p| p.id).collect(),
        };
        Ok(self.push(op, rows, cols, value, rg))
    }

    pub fn slice_cols(&mut self, a: DiffTensor, start: usize, len: usize) -> Result<DiffTensor> {
        if start + len > a.cols || len == 0 {
            return Err(Error::Invalid(format!(
                "slice_cols [{start}, {}) out of bounds for {} columns",
                start + len,
                a.cols
            )));
        }
        let v = self.value(a);
        let mut value = Vec::with_capacity(a.rows * len);
        for i in 0..a.rows {
            value.extend_from_slice(&v[i * a.cols + start..i * a.cols + start + len]);
        }
        Ok(self.push(Op::SliceCols { a: a.id, start }, a.rows, len, value, a.requires_grad))
    }

    /// Per-row column gather: output `i` is `a[i, idx[i]]`.
    pub fn gather_cols(&mut self, a: DiffTensor, idx: &[usize]) -> Result<DiffTensor> {
        if idx.len() != a.rows {
            return Err(Error::Invalid(format!(
                "gather_cols needs one index per row ({} rows, {} indices)",
                a.rows,
                idx.len()
            )));
        }
        if let Some(&bad) = idx.iter().find(|&&j| j >= a.cols) {
            return Err(Error::Invalid(format!(
                "gather_cols index {bad} out of bounds for {} columns",
                a.cols
            )));
        }
        let v = self.value(a);
        let value: Vec<f64> = idx.iter().enumerate().map(|(i, &j)| v[i * a.cols + j]).collect();
        let op = Op::GatherCols {
            a: a.id,
            idx: idx.to_vec(),
        };
        Ok(self.push(op, a.rows, 1, value, a.requires_grad))
    }

    pub fn reshape(&mut self, a: DiffTensor, rows: usize, cols: usize) -> Result<DiffTensor> {
        if rows * cols != a.len() {
            return Err(Error::shape("reshape", a.shape(), (rows, cols)));
        }
        let value = self.value(a).to_vec();
        Ok(self.push(Op::Reshape { a: a.id }, rows, cols, value, a.requires_grad))
    }

    // ── backward ─────────────────────────────────────────────────────────

    /// Accumulate gradients of `loss` into every node that requires them.
    /// Existing gradients are cleared first, so repeated calls do not stack.
    pub fn backward(&mut self, loss: DiffTensor) -> Result<()> {
        if loss.len() != 1 {
            return Err(Error::Invalid(format!(
                "backward requires a scalar loss, got {}x{}",
                loss.rows, loss.cols
            )));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[loss.id].grad = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[id].grad.take() else {
                continue;
            };
            self.propagate(id, &g);
            self.nodes[id].grad = Some(g);
        }
        Ok(())
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes[id].requires_grad
    }

    fn accum(&mut self, id: usize, contrib: &[f64]) {
        let n = &mut self.nodes[id];
        let len = n.value.len();
        let g = n.grad.get_or_insert_with(|| vec![0.0; len]);
        for (gi, &c) in g.iter_mut().zip(contrib) {
            *gi += c;
        }
    }

    fn propagate(&mut self, id: usize, g: &[f64]) {
        let (rows, cols) = (self.nodes[id].rows, self.nodes[id].cols);
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (a, b) = (*a, *b);
                let k = self.nodes[a].cols;
                if self.needs(a) {
                    // da = g . b^T
                    let bv = &self.nodes[b].value;
                    let mut da = vec![0.0; self.nodes[a].value.len()];
                    for i in 0..rows {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..cols {
                                s += g[i * cols + j] * bv[p * cols + j];
                            }
                            da[i * k + p] = s;
                        }
                    }
                    self.accum(a, &da);
                }
                if self.needs(b) {
                    // db = a^T . g
                    let av = &self.nodes[a].value;
                    let mut db = vec![0.0; self.nodes[b].value.len()];
                    for i in 0..rows {
                        for p in 0..k {
                            let av_ip = av[i * k + p];
                            if av_ip != 0.0 {
                                for j in 0..cols {
                                    db[p * cols + j] += av_ip * g[i * cols + j];
                                }
                            }
                        }
                    }
                    self.accum(b, &db);
                }
            }
            Op::Transpose { a } => {
                let a = *a;
                if self.needs(a) {
                    let (ar, ac) = (self.nodes[a].rows, self.nodes[a].cols);
                    let mut da = vec![0.0; ar * ac];
                    for i in 0..rows {
                        for j in 0..cols {
                            da[j * ac + i] = g[i * cols + j];
                        }
                    }
                    self.accum(a, &da);
                }
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                if self.needs(a) {
                    self.accum(a, g);
                }
                if self.needs(b) {
                    self.accum(b, g);
                }
            }
            Op::Sub { a, b } => {
                let (a, b) = (*a, *b);
                if self.needs(a) {
                    self.accum(a, g);
                }
                if self.needs(b) {
                    let neg: Vec<f64> = g.iter().map(|&x| -x).collect();
                    self.accum(b, &neg);
                }
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                if self.needs(a) {
                    let da: Vec<f64> = g.iter().zip(&self.nodes[b].value).map(|(&x, &y)| x * y).collect();
                    self.accum(a, &da);
                }
                if self.needs(b) {
                    let db: Vec<f64> = g.iter().zip(&self.nodes[a].value).map(|(&x, &y)| x * y).collect();
                    self.accum(b, &db);
                }
            }
            Op::AddRow { m, row } => {
                let (m, row) = (*m, *row);
                if self.needs(m) {
                    self.accum(m, g);
                }
                if self.needs(row) {
                    let mut dr = vec![0.0; cols];
                    for (i, &x) in g.iter().enumerate() {
                        dr[i % cols] += x;
                    }
                    self.accum(row, &dr);
                }
            }
            Op::MulRow { m, row } => {
                let (m, row) = (*m, *row);
                if self.needs(m) {
                    let rv = &self.nodes[row].value;
                    let dm: Vec<f64> = g.iter().enumerate().map(|(i, &x)| x * rv[i % cols]).collect();
                    self.accum(m, &dm);
                }
                if self.needs(row) {
                    let mv = &self.nodes[m].value;
                    let mut dr = vec![0.0; cols];
                    for (i, &x) in g.iter().enumerate() {
                        dr[i % cols] += x * mv[i];
                    }
                    self.accum(row, &dr);
                }
            }
            Op::AddCol { m, col } => {
                let (m, col) = (*m, *col);
                if self.needs(m) {
                    self.accum(m, g);
                }
                if self.needs(col) {
                    let mut dc = vec![0.0; rows];
                    for (i, &x) in g.iter().enumerate() {
                        dc[i / cols] += x;
                    }
                    self.accum(col, &dc);
                }
            }
            Op::MulCol { m, col } => {
                let (m, col) = (*m, *col);
                if self.needs(m) {
                    let cv = &self.nodes[col].value;
                    let dm: Vec<f64> = g.iter().enumerate().map(|(i, &x)| x * cv[i / cols]).collect();
                    self.accum(m, &dm);
                }
                if self.needs(col) {
                    let mv = &self.nodes[m].value;
                    let mut dc = vec![0.0; rows];
                    for (i, &x) in g.iter().enumerate() {
                        dc[i / cols] += x * mv[i];
                    }
                    self.accum(col, &dc);
                }
            }
            Op::MulScalar { a, s } => {
                let (a, s) = (*a, *s);
                if self.needs(a) {
                    let sv = self.nodes[s].value[0];
                    let da: Vec<f64> = g.iter().map(|&x| x * sv).collect();
                    self.accum(a, &da);
                }
                if self.needs(s) {
                    let av = &self.nodes[a].value;
                    let ds: f64 = g.iter().zip(av).map(|(&x, &y)| x * y).sum();
                    self.accum(s, &[ds]);
                }
            }
            Op::Scale { a, c } => {
                let (a, c) = (*a, *c);
                if self.needs(a) {
                    let da: Vec<f64> = g.iter().map(|&x| x * c).collect();
                    self.accum(a, &da);
                }
            }
            Op::Offset { a } => {
                let a = *a;
                if self.needs(a) {
                    self.accum(a, g);
                }
            }
            Op::Negate { a } => {
                let a = *a;
                if self.needs(a) {
                    let da: Vec<f64> = g.iter().map(|&x| -x).collect();
                    self.accum(a, &da);
                }
            }
            Op::Abs { a } => {
                let a = *a;
                if self.needs(a) {
                    let av = &self.nodes[a].value;
                    let da: Vec<f64> = g
                        .iter()
                        .zip(av)
                        .map(|(&x, &v)| {
                            if v > 0.0 {
                                x
                            } else if v < 0.0 {
                                -x
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    self.accum(a, &da);
                }
            }
            Op::Tanh { a } => {
                let a = *a;
                if self.needs(a) {
                    let yv = &self.nodes[id].value;
                    let da: Vec<f64> = g.iter().zip(yv).map(|(&x, &y)| x * (1.0 - y * y)).collect();
                    self.accum(a, &da);
                }
            }
            Op::Relu { a } => {
                let a = *a;
                if self.needs(a) {
                    let av = &self.nodes[a].value;
                    let da: Vec<f64> = g.iter().zip(av).map(|(&x, &v)| if v > 0.0 { x } else { 0.0 }).collect();
                    self.accum(a, &da);
                }
            }
            Op::Sqrt { a } => {
                let a = *a;
                if self.needs(a) {
                    let yv = &self.nodes[id].value;
                    let da: Vec<f64> = g.iter().zip(yv).map(|(&x, &y)| x * 0.5 / y).collect();
                    self.accum(a, &da);
                }
            }
            Op::Ln { a } => {
                let a = *a;
                if self.needs(a) {
                    let av = &self.nodes[a].value;
                    let da: Vec<f64> = g.iter().zip(av).map(|(&x, &v)| x / v).collect();
                    self.accum(a, &da);
                }
            }
            Op::Cos { a } => {
                let a = *a;
                if self.needs(a) {
                    let av = &self.nodes[a].value;
                    let da: Vec<f64> = g.iter().zip(av).map(|(&x, &v)| -x * v.sin()).collect();
                    self.accum(a, &da);
                }
            }
            Op::Sin { a } => {
                let a = *a;
                if self.needs(a) {
                    let av = &self.nodes[a].value;
                    let da: Vec<f64> = g.iter().zip(av).map(|(&x, &v)| x * v.cos()).collect();
                    self.accum(a, &da);
                }
            }
            Op::Recip { a } => {
                let a = *a;
                if self.needs(a) {
                    let yv = &self.nodes[id].value;
                    let da: Vec<f64> = g.iter().zip(yv).map(|(&x, &y)| -x * y * y).collect();
                    self.accum(a, &da);
                }
            }
            Op::SoftmaxRows { a } => {
                let a = *a;
                if self.needs(a) {
                    let yv = &self.nodes[id].value;
                    let mut da = vec![0.0; g.len()];
                    for r in 0..rows {
                        let o = r * cols;
                        let dot: f64 = (0..cols).map(|j| g[o + j] * yv[o + j]).sum();
                        for j in 0..cols {
                            da[o + j] = yv[o + j] * (g[o + j] - dot);
                        }
                    }
                    self.accum(a, &da);
                }
            }
            Op::LogSoftmaxRows { a } => {
                let a = *a;
                if self.needs(a) {
                    let yv = &self.nodes[id].value;
                    let mut da = vec![0.0; g.len()];
                    for r in 0..rows {
                        let o = r * cols;
                        let gsum: f64 = (0..cols).map(|j| g[o + j]).sum();
                        for j in 0..cols {
                            da[o + j] = g[o + j] - yv[o + j].exp() * gsum;
                        }
                    }
                    self.accum(a, &da);
                }
            }
            Op::MaskedSoftmaxRows { a, mask } => {
                let a = *a;
                if self.needs(a) {
                    let mask = mask.clone();
                    let yv = &self.nodes[id].value;
                    let mut da = vec![0.0; g.len()];
                    for r in 0..rows {
                        let o = r * cols;
                        let dot: f64 = (0..cols)
                            .filter(|&j| mask[o + j] != 0.0)
                            .map(|j| g[o + j] * yv[o + j])
                            .sum();
                        for j in 0..cols {
                            if mask[o + j] != 0.0 {
                                da[o + j] = yv[o + j] * (g[o + j] - dot);
                            }
                        }
                    }
                    self.accum(a, &da);
                }
            }
            Op::GradReverse { a, lambda } => {
                let (a, lambda) = (*a, *lambda);
                if self.needs(a) {
                    let da: Vec<f64> = g.iter().map(|&x| -lambda * x).collect();
                    self.accum(a, &da);
                }
            }
            Op::SumAll { a } => {
                let a = *a;
                if self.needs(a) {
                    let da = vec![g[0]; self.nodes[a].value.len()];
                    self.accum(a, &da);
                }
            }
            Op::ConcatCols { parts } => {
                let parts = parts.clone();
                let mut off = 0;
                for p in parts {
                    let pc = self.nodes[p].cols;
                    if self.needs(p) {
                        let pr = self.nodes[p].rows;
                        let mut dp = vec![0.0; pr * pc];
                        for i in 0..pr {
                            dp[i * pc..(i + 1) * pc]
                                .copy_from_slice(&g[i * cols + off..i * cols + off + pc]);
                        }
                        self.accum(p, &dp);
                    }
                    off += pc;
                }
            }
            Op::ConcatRows { parts } => {
                let parts = parts.clone();
                let mut off = 0;
                for p in parts {
                    let n = self.nodes[p].value.len();
                    if self.needs(p) {
                        self.accum(p, &g[off..off + n]);
                    }
                    off += n;
                }
            }
            Op::SliceCols { a, start } => {
                let (a, start) = (*a, *start);
                if self.needs(a) {
                    let ac = self.nodes[a].cols;
                    let mut da = vec![0.0; self.nodes[a].value.len()];
                    for i in 0..rows {
                        da[i * ac + start..i * ac + start + cols]
                            .copy_from_slice(&g[i * cols..(i + 1) * cols]);
                    }
                    self.accum(a, &da);
                }
            }
            Op::GatherCols { a, idx } => {
                let a = *a;
                if self.needs(a) {
                    let idx = idx.clone();
                    let ac = self.nodes[a].cols;
                    let mut da = vec![0.0; self.nodes[a].value.len()];
                    for (i, &j) in idx.iter().enumerate() {
                        da[i * ac + j] = g[i];
                    }
                    self.accum(a, &da);
                }
            }
            Op::Reshape { a } => {
                let a = *a;
                if self.needs(a) {
                    self.accum(a, g);
                }
            }
        }
    }

    /// Collect parameter gradients for every parameter bound onto this tape.
    /// Unbound parameters report `None`.
    pub fn param_grads(&self, store: &ParamStore) -> Gradients {
        let mut out = vec![None; store.len()];
        for (pid, binding) in self.bindings.iter().enumerate() {
            if let Some(node) = binding {
                if let Some(g) = &self.nodes[*node].grad {
                    out[pid] = Some(g.clone());
                }
            }
        }
        Gradients::new(out)
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av != 0.0 {
                let bo = p * n;
                let oo = i * n;
                for j in 0..n {
                    out[oo + j] += av * b[bo + j];
                }
            }
        }
    }
    out
}

fn softmax_in_place(r: &mut [f64]) {
    let max = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in r.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in r.iter_mut() {
        *x /= sum;
    }
}

fn masked_softmax_in_place(r: &mut [f64], mask: &[f64]) {
    let mut max = f64::NEG_INFINITY;
    for (x, &m) in r.iter().zip(mask) {
        if m != 0.0 && *x > max {
            max = *x;
        }
    }
    if max == f64::NEG_INFINITY {
        r.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let mut sum = 0.0;
    for (x, &m) in r.iter_mut().zip(mask) {
        if m != 0.0 {
            *x = (*x - max).exp();
            sum += *x;
        } else {
            *x = 0.0;
        }
    }
    for (x, &m) in r.iter_mut().zip(mask) {
        if m != 0.0 {
            *x /= sum;
        }
    }
}

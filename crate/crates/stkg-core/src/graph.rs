//! Dense sensor-graph handling and the two message-passing layers.
//!
//! Both layers take the adjacency and input as tape tensors so that dynamic
//! (learned) adjacencies keep their gradients, and take the shared MLP as a
//! closure so callers control its parameters.

use crate::autodiff::{DiffTensor, Tape};
use crate::error::{Error, Result};

/// Dense weighted adjacency over `n` sensors, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Adjacency {
    n: usize,
    w: Vec<f64>,
}

impl Adjacency {
    pub fn new(n: usize, w: Vec<f64>) -> Result<Self> {
        if w.len() != n * n {
            return Err(Error::Invalid(format!(
                "adjacency over {n} sensors needs {} weights, got {}",
                n * n,
                w.len()
            )));
        }
        Ok(Adjacency { n, w })
    }

    pub fn zeros(n: usize) -> Self {
        Adjacency { n, w: vec![0.0; n * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.w[i * self.n + j] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.w
    }

    /// Scale each row to sum to 1; all-zero rows stay zero.
    pub fn row_normalized(&self) -> Adjacency {
        let mut w = self.w.clone();
        for row in w.chunks_mut(self.n) {
            let s: f64 = row.iter().sum();
            if s != 0.0 {
                for x in row.iter_mut() {
                    *x /= s;
                }
            }
        }
        Adjacency { n: self.n, w }
    }

    /// Submatrix over the given sensor indices, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Adjacency {
        let m = idx.len();
        let mut w = vec![0.0; m * m];
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                w[a * m + b] = self.get(i, j);
            }
        }
        Adjacency { n: m, w }
    }

    pub fn permuted(&self, perm: &[usize]) -> Adjacency {
        self.subset(perm)
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<DiffTensor> {
        tape.constant(self.n, self.n, self.w.clone())
    }
}

/// 0/1 support of the per-row top-`k` selection over off-diagonal entries.
/// Ties keep the lowest column index; the diagonal is never selected. Every
/// row selects exactly `min(k, n-1)` entries.
pub fn topk_support(scores: &[f64], n: usize, k: usize) -> Result<Vec<f64>> {
    if scores.len() != n * n {
        return Err(Error::Invalid(format!(
            "top-k over {n} sensors needs {} scores, got {}",
            n * n,
            scores.len()
        )));
    }
    if k == 0 {
        return Err(Error::Invalid("top-k requires k >= 1".into()));
    }
    let keep = k.min(n.saturating_sub(1));
    let mut mask = vec![0.0; n * n];
    let mut order: Vec<usize> = Vec::with_capacity(n.saturating_sub(1));
    for i in 0..n {
        order.clear();
        order.extend((0..n).filter(|&j| j != i));
        let row = &scores[i * n..(i + 1) * n];
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        for &j in order.iter().take(keep) {
            mask[i * n + j] = 1.0;
        }
    }
    Ok(mask)
}

/// Keep the top-`k` off-diagonal scores per row and renormalize them with a
/// row softmax; everything else becomes an exact zero.
pub fn topk_sparsify(scores: &Adjacency, k: usize) -> Result<Adjacency> {
    let n = scores.n;
    let mask = topk_support(&scores.w, n, k)?;
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        let row = &scores.w[i * n..(i + 1) * n];
        let mrow = &mask[i * n..(i + 1) * n];
        let mut max = f64::NEG_INFINITY;
        for j in 0..n {
            if mrow[j] != 0.0 && row[j] > max {
                max = row[j];
            }
        }
        if max == f64::NEG_INFINITY {
            continue;
        }
        let mut sum = 0.0;
        for j in 0..n {
            if mrow[j] != 0.0 {
                let e = (row[j] - max).exp();
                w[i * n + j] = e;
                sum += e;
            }
        }
        for j in 0..n {
            if mrow[j] != 0.0 {
                w[i * n + j] /= sum;
            }
        }
    }
    Ok(Adjacency { n, w })
}

/// Neighborhood aggregation without a self term: `MLP(A · X)`. A node only
/// sees itself if the adjacency carries an explicit self-loop.
pub fn masked_gnn_layer<F>(tape: &mut Tape, x: DiffTensor, a: DiffTensor, mlp: F) -> Result<DiffTensor>
where
    F: FnOnce(&mut Tape, DiffTensor) -> Result<DiffTensor>,
{
    check_layer_shapes("masked_gnn_layer", x, a)?;
    let agg = tape.matmul(a, x)?;
    mlp(tape, agg)
}

/// Isomorphism-style aggregation with a learnable self weight:
/// `MLP((1 + eps) * X + A * X)` where `eps` is a 1x1 tensor.
pub fn gin_layer<F>(
    tape: &mut Tape,
    x: DiffTensor,
    a: DiffTensor,
    eps: DiffTensor,
    mlp: F,
) -> Result<DiffTensor>
where
    F: FnOnce(&mut Tape, DiffTensor) -> Result<DiffTensor>,
{
    check_layer_shapes("gin_layer", x, a)?;
    if eps.len() != 1 {
        return Err(Error::shape("gin_layer eps", eps.shape(), (1, 1)));
    }
    let one = tape.constant(1, 1, vec![1.0])?;
    let coef = tape.add(one, eps)?;
    let self_term = tape.mul_scalar_t(x, coef)?;
    let agg = tape.matmul(a, x)?;
    let combined = tape.add(self_term, agg)?;
    mlp(tape, combined)
}

fn check_layer_shapes(op: &'static str, x: DiffTensor, a: DiffTensor) -> Result<()> {
    if a.rows != a.cols {
        return Err(Error::shape(op, a.shape(), (a.rows, a.rows)));
    }
    if a.cols != x.rows {
        return Err(Error::shape(op, a.shape(), x.shape()));
    }
    Ok(())
}

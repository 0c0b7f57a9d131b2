//! Small neural building blocks shared by the encoder, decoder, phase module
//! and discriminator: a two-layer MLP with tanh hidden activation, inverted
//! dropout, and fan-balanced uniform initialization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{DiffTensor, ParamGroup, ParamId, ParamStore, Tape};
use crate::error::Result;

/// Forward-pass mode. Dropout draws from the carried RNG only in training.
pub enum Mode<'a> {
    Train { dropout: f64, rng: &'a mut ChaCha8Rng },
    Eval,
}

/// Fan-balanced uniform init on `(-b, b)` with `b = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Two-layer perceptron `d_in -> hidden -> d_out`, tanh in the middle,
/// linear output, dropout on the hidden activations while training.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub hidden: usize,
}

impl Mlp {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        hidden: usize,
        d_out: usize,
        group: ParamGroup,
        rng: &mut ChaCha8Rng,
    ) -> Result<Mlp> {
        let w1 = store.add(
            format!("{prefix}.w1"),
            d_in,
            hidden,
            xavier_uniform(rng, d_in, hidden),
            true,
            group,
        )?;
        let b1 = store.add(format!("{prefix}.b1"), 1, hidden, vec![0.0; hidden], true, group)?;
        let w2 = store.add(
            format!("{prefix}.w2"),
            hidden,
            d_out,
            xavier_uniform(rng, hidden, d_out),
            true,
            group,
        )?;
        let b2 = store.add(format!("{prefix}.b2"), 1, d_out, vec![0.0; d_out], true, group)?;
        Ok(Mlp { w1, b1, w2, b2, hidden })
    }

    /// Register a square perceptron (`d_in == d_out`, `hidden >= d_in`) whose
    /// initial map is close to the identity: the first `d_in` hidden units
    /// carry a damped copy of the input through the tanh's linear region and
    /// the second layer undoes the damping, while the remaining hidden units
    /// start from small random weights. Layers that refine a signal already
    /// in the right space (message passing over windows, phase-embedding
    /// mixing) start as refinements instead of as random projections, which
    /// keeps the spectral content of their inputs visible downstream from the
    /// first epoch.
    pub fn register_near_identity(
        store: &mut ParamStore,
        prefix: &str,
        d: usize,
        hidden: usize,
        group: ParamGroup,
        rng: &mut ChaCha8Rng,
    ) -> Result<Mlp> {
        if hidden < d {
            return Err(crate::error::Error::Invalid(format!(
                "near-identity MLP needs hidden >= width, got {hidden} < {d}"
            )));
        }
        const DAMP: f64 = 0.05;
        let mut w1_vals = xavier_uniform(rng, d, hidden);
        for v in w1_vals.iter_mut() {
            *v *= 0.25;
        }
        for i in 0..d {
            for j in 0..d {
                w1_vals[i * hidden + j] = if i == j { DAMP } else { 0.0 };
            }
        }
        let mut w2_vals = xavier_uniform(rng, hidden, d);
        for v in w2_vals.iter_mut() {
            *v *= 0.1;
        }
        for i in 0..d {
            for j in 0..d {
                w2_vals[i * d + j] = if i == j { 1.0 / DAMP } else { 0.0 };
            }
        }
        let w1 = store.add(format!("{prefix}.w1"), d, hidden, w1_vals, true, group)?;
        let b1 = store.add(format!("{prefix}.b1"), 1, hidden, vec![0.0; hidden], true, group)?;
        let w2 = store.add(format!("{prefix}.w2"), hidden, d, w2_vals, true, group)?;
        let b2 = store.add(format!("{prefix}.b2"), 1, d, vec![0.0; d], true, group)?;
        Ok(Mlp { w1, b1, w2, b2, hidden })
    }

    /// Apply to a row-per-item input `x` (shape `n x d_in`).
    pub fn apply(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: DiffTensor,
        mode: &mut Mode,
    ) -> Result<DiffTensor> {
        let w1 = tape.bind_param(store, self.w1);
        let b1 = tape.bind_param(store, self.b1);
        let w2 = tape.bind_param(store, self.w2);
        let b2 = tape.bind_param(store, self.b2);
        let h = tape.matmul(x, w1)?;
        let h = tape.add_row(h, b1)?;
        let h = tape.tanh(h);
        let h = apply_dropout(tape, h, mode)?;
        let y = tape.matmul(h, w2)?;
        tape.add_row(y, b2)
    }
}

/// Inverted dropout: in training, each entry is zeroed with probability `p`
/// and survivors are scaled by `1/(1-p)`; evaluation passes through.
pub fn apply_dropout(tape: &mut Tape, x: DiffTensor, mode: &mut Mode) -> Result<DiffTensor> {
    match mode {
        Mode::Eval => Ok(x),
        Mode::Train { dropout, rng } => {
            let p = *dropout;
            if p == 0.0 {
                return Ok(x);
            }
            let keep = 1.0 / (1.0 - p);
            let mask: Vec<f64> = (0..x.rows * x.cols)
                .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
                .collect();
            let m = tape.constant(x.rows, x.cols, mask)?;
            tape.mul(x, m)
        }
    }
}

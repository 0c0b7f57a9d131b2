use crate::error::{Error, Result};

use super::params::ParamStore;
use super::tape::{DiffTensor, Tape};

/// Outcome of a finite-difference check. The relative error of a coordinate is
/// `|ad - fd| / max(|ad|, |fd|, 1)`, so coordinates with near-zero gradients
/// are compared absolutely and large gradients relatively.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Worst relative error per differentiable input, in input order.
    pub per_input: Vec<f64>,
}

fn rel_err(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / ad.abs().max(fd.abs()).max(1.0)
}

/// Compare reverse-mode gradients of `f` against central finite differences
/// at the given input point. `f` must build a scalar loss from the inputs and
/// be deterministic; `points` are `(rows, cols, values)` triples.
pub fn check_gradients<F>(f: F, points: &[(usize, usize, Vec<f64>)], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[DiffTensor]) -> Result<DiffTensor>,
{
    if h <= 0.0 {
        return Err(Error::Invalid("finite-difference step must be positive".into()));
    }
    let eval = |values: &[(usize, usize, Vec<f64>)]| -> Result<(Tape, Vec<DiffTensor>, DiffTensor)> {
        let mut tape = Tape::new();
        let mut inputs = Vec::with_capacity(values.len());
        for (rows, cols, v) in values {
            inputs.push(tape.leaf(*rows, *cols, v.clone())?);
        }
        let loss = f(&mut tape, &inputs)?;
        if loss.len() != 1 {
            return Err(Error::Invalid(format!(
                "gradient check requires a scalar loss, got {}x{}",
                loss.rows, loss.cols
            )));
        }
        Ok((tape, inputs, loss))
    };

    let (mut tape, inputs, loss) = eval(points)?;
    tape.backward(loss)?;
    let ad: Vec<Vec<f64>> = inputs
        .iter()
        .map(|&t| tape.grad(t).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();

    let mut per_input = vec![0.0_f64; points.len()];
    let mut scratch = points.to_vec();
    for (pi, (_, _, values)) in points.iter().enumerate() {
        for ci in 0..values.len() {
            scratch[pi].2[ci] = values[ci] + h;
            let (t_hi, _, l_hi) = eval(&scratch)?;
            let f_hi = t_hi.value(l_hi)[0];
            scratch[pi].2[ci] = values[ci] - h;
            let (t_lo, _, l_lo) = eval(&scratch)?;
            let f_lo = t_lo.value(l_lo)[0];
            scratch[pi].2[ci] = values[ci];
            let fd = (f_hi - f_lo) / (2.0 * h);
            let err = rel_err(ad[pi][ci], fd);
            if err > per_input[pi] {
                per_input[pi] = err;
            }
        }
    }
    let max_rel_err = per_input.iter().cloned().fold(0.0, f64::max);
    Ok(GradCheckReport { max_rel_err, per_input })
}

/// Finite-difference check of a forward pass that reads its parameters from a
/// store (the whole-model case). `forward` must bind parameters through the
/// tape and return a scalar loss; it is re-evaluated with each trainable
/// coordinate perturbed by `±h`.
pub fn check_param_gradients<F>(forward: F, store: &ParamStore, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<DiffTensor>,
{
    if h <= 0.0 {
        return Err(Error::Invalid("finite-difference step must be positive".into()));
    }
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = forward(&mut tape, s)?;
        if loss.len() != 1 {
            return Err(Error::Invalid(format!(
                "gradient check requires a scalar loss, got {}x{}",
                loss.rows, loss.cols
            )));
        }
        Ok(tape.value(loss)[0])
    };

    let mut tape = Tape::new();
    let loss = forward(&mut tape, store)?;
    if loss.len() != 1 {
        return Err(Error::Invalid(format!(
            "gradient check requires a scalar loss, got {}x{}",
            loss.rows, loss.cols
        )));
    }
    tape.backward(loss)?;
    let grads = tape.param_grads(store);

    let trainable: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    let mut per_input = Vec::with_capacity(trainable.len());
    let mut scratch = store.clone();
    for &id in &trainable {
        let n = store.value(id).len();
        let mut worst = 0.0_f64;
        for ci in 0..n {
            let orig = store.value(id)[ci];
            scratch.value_mut(id)[ci] = orig + h;
            let f_hi = eval(&scratch)?;
            scratch.value_mut(id)[ci] = orig - h;
            let f_lo = eval(&scratch)?;
            scratch.value_mut(id)[ci] = orig;
            let fd = (f_hi - f_lo) / (2.0 * h);
            let adg = grads.get(id).map_or(0.0, |g| g[ci]);
            let err = rel_err(adg, fd);
            if err > worst {
                worst = err;
            }
        }
        per_input.push(worst);
    }
    let max_rel_err = per_input.iter().cloned().fold(0.0, f64::max);
    Ok(GradCheckReport { max_rel_err, per_input })
}

//! Evaluation: masked-cell error metrics, a parameter-free neighbor-average
//! baseline, a domain-separability diagnostic over encoder patches, and a
//! circular cross-correlation probe for timing alignment.

use crate::data::{eval_batch, make_windows, Dataset, EvalScope, SplitPlan};
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::nn::Mode;
use crate::Tape;

/// Errors over masked cells only. `r2` is NaN when the masked truth has no
/// variance (the score is undefined there, and NaN survives CSV round trips).
#[derive(Clone, Debug)]
pub struct MetricReport {
    pub mae: f64,
    pub rmse: f64,
    pub r2: f64,
    /// Number of (sensor, time) cells the metrics were computed over.
    pub cells: usize,
    /// Masked sensors contributing at least one cell.
    pub sensors: usize,
    /// Windows contributing at least one cell.
    pub windows: usize,
    pub scope: String,
}

impl MetricReport {
    pub fn csv_header() -> &'static str {
        "scope,mae,rmse,r2,cells,sensors,windows"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.scope, self.mae, self.rmse, self.r2, self.cells, self.sensors, self.windows
        )
    }
}

/// Streaming accumulator over (prediction, truth) pairs at masked cells.
#[derive(Clone, Debug, Default)]
pub struct MetricAccum {
    n: usize,
    abs_sum: f64,
    sq_sum: f64,
    truth_sum: f64,
    truth_sq_sum: f64,
}

impl MetricAccum {
    pub fn push(&mut self, pred: f64, truth: f64) {
        let d = pred - truth;
        self.n += 1;
        self.abs_sum += d.abs();
        self.sq_sum += d * d;
        self.truth_sum += truth;
        self.truth_sq_sum += truth * truth;
    }

    pub fn push_rows(&mut self, pred: &[f64], truth: &[f64]) {
        for (p, t) in pred.iter().zip(truth) {
            self.push(*p, *t);
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn report(&self, scope: &str, sensors: usize, windows: usize) -> Result<MetricReport> {
        if self.n == 0 {
            return Err(Error::Invalid("no masked cells to score".into()));
        }
        let n = self.n as f64;
        let mae = self.abs_sum / n;
        let rmse = (self.sq_sum / n).sqrt();
        let mean = self.truth_sum / n;
        let ss_tot = self.truth_sq_sum - n * mean * mean;
        let r2 = if ss_tot > 0.0 { 1.0 - self.sq_sum / ss_tot } else { f64::NAN };
        Ok(MetricReport {
            mae,
            rmse,
            r2,
            cells: self.n,
            sensors,
            windows,
            scope: scope.to_string(),
        })
    }
}

fn scope_label(scope: EvalScope) -> &'static str {
    match scope {
        EvalScope::Val => "validation",
        EvalScope::Test => "test",
    }
}

/// Score a model on the held-out span: non-overlapping windows, all sensors
/// present with every non-trusted row zeroed, errors taken at the scope's
/// sensors only.
pub fn evaluate_model(
    model: &ModelState,
    ds: &Dataset,
    split: &SplitPlan,
    scope: EvalScope,
) -> Result<MetricReport> {
    let l = model.config.series_len;
    let plan = make_windows(split.t_train, ds.t(), l, l)?;
    let mut accum = MetricAccum::default();
    let mut sensors = 0usize;
    let mut windows = 0usize;
    for &start in &plan.starts {
        let batch = eval_batch(ds, split, start, l, scope)?;
        let mut tape = Tape::new();
        let out = model.forward_on(&mut tape, &batch, &mut Mode::Eval)?;
        let xhat = tape.value(out.xhat);
        if windows == 0 {
            sensors = batch.masked.iter().filter(|m| **m).count();
        }
        windows += 1;
        for (i, masked) in batch.masked.iter().enumerate() {
            if *masked {
                accum.push_rows(&xhat[i * l..(i + 1) * l], &batch.truth[i]);
            }
        }
    }
    accum.report(scope_label(scope), sensors, windows)
}

/// Parameter-free baseline: each non-trusted sensor becomes the edge-weight
/// weighted mean of its trusted first-order neighbors' series (weights
/// renormalized over the trusted neighbors); a sensor with no trusted
/// neighbor falls back to the global mean series of the trusted set.
/// Trusted rows pass through unchanged. Stateless and idempotent.
pub fn okriging_predictions(ds: &Dataset, known: &[usize]) -> Result<Vec<Vec<f64>>> {
    let n = ds.n();
    let t = ds.t();
    if known.is_empty() {
        return Err(Error::Invalid("baseline needs at least one trusted sensor".into()));
    }
    for &k in known {
        if k >= n {
            return Err(Error::Invalid(format!("trusted sensor {k} out of range (n={n})")));
        }
    }
    let mut is_known = vec![false; n];
    for &k in known {
        is_known[k] = true;
    }
    let mut global_mean = vec![0.0f64; t];
    for &k in known {
        for (s, g) in ds.series[k].iter().zip(global_mean.iter_mut()) {
            *g += *s;
        }
    }
    for g in global_mean.iter_mut() {
        *g /= known.len() as f64;
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if is_known[i] {
            out.push(ds.series[i].clone());
            continue;
        }
        let mut weights = Vec::new();
        for &j in known {
            let w = ds.adjacency.get(i, j);
            if w > 0.0 {
                weights.push((j, w));
            }
        }
        let total: f64 = weights.iter().map(|(_, w)| w).sum();
        if total <= 0.0 {
            out.push(global_mean.clone());
            continue;
        }
        let mut row = vec![0.0f64; t];
        for (j, w) in &weights {
            for (s, r) in ds.series[*j].iter().zip(row.iter_mut()) {
                *r += *s * *w / total;
            }
        }
        out.push(row);
    }
    Ok(out)
}

/// Score the baseline over exactly the cells `evaluate_model` scores.
pub fn okriging_eval(
    ds: &Dataset,
    split: &SplitPlan,
    scope: EvalScope,
    series_len: usize,
) -> Result<MetricReport> {
    let preds = okriging_predictions(ds, &split.known)?;
    let plan = make_windows(split.t_train, ds.t(), series_len, series_len)?;
    let mut accum = MetricAccum::default();
    let mut sensors = 0usize;
    let mut windows = 0usize;
    for &start in &plan.starts {
        let batch = eval_batch(ds, split, start, series_len, scope)?;
        if windows == 0 {
            sensors = batch.masked.iter().filter(|m| **m).count();
        }
        windows += 1;
        for (i, masked) in batch.masked.iter().enumerate() {
            if *masked {
                accum.push_rows(&preds[i][start..start + series_len], &batch.truth[i]);
            }
        }
    }
    accum.report(&format!("{}-baseline", scope_label(scope)), sensors, windows)
}

/// Separability of two domains under a fixed binary classifier:
/// `2 * (1 - [source fraction labeled 0 + target fraction labeled 1])`.
/// May be negative when the classifier is oriented against the domains;
/// monotone decreasing in the bracket.
pub fn h_divergence_from_rates(source_labeled_0: f64, target_labeled_1: f64) -> f64 {
    2.0 * (1.0 - (source_labeled_0 + target_labeled_1))
}

/// Domain-separability estimate over two nonempty feature sets with a given
/// classifier (`1` = target). The hypothesis pool searched is the classifier
/// and its negation, so the result lies in `[0, 2]` and remains a lower
/// bound on the class-wide value.
pub fn proxy_h_divergence<F>(source: &[Vec<f64>], target: &[Vec<f64>], eta: F) -> Result<f64>
where
    F: Fn(&[f64]) -> usize,
{
    if source.is_empty() || target.is_empty() {
        return Err(Error::Invalid("both domains need at least one sample".into()));
    }
    let src0 = source.iter().filter(|x| eta(x) == 0).count() as f64 / source.len() as f64;
    let tgt1 = target.iter().filter(|x| eta(x) == 1).count() as f64 / target.len() as f64;
    let d = h_divergence_from_rates(src0, tgt1);
    let d_flipped = h_divergence_from_rates(1.0 - src0, 1.0 - tgt1);
    Ok(d.max(d_flipped))
}

/// Discriminator health on one model: cross-entropy and the separability
/// estimate over encoder patches on the held-out span, labeling trusted
/// sensors as the source domain and the scope's sensors as the target
/// (other sensors are left out).
#[derive(Clone, Debug)]
pub struct ProbeReport {
    pub bce: f64,
    pub divergence: f64,
    pub source_patches: usize,
    pub target_patches: usize,
}

impl ProbeReport {
    pub fn csv_header() -> &'static str {
        "bce,divergence,source_patches,target_patches"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.bce, self.divergence, self.source_patches, self.target_patches
        )
    }
}

pub fn discriminator_probe(
    model: &ModelState,
    ds: &Dataset,
    split: &SplitPlan,
    scope: EvalScope,
) -> Result<ProbeReport> {
    let l = model.config.series_len;
    let plan = make_windows(split.t_train, ds.t(), l, l)?;
    let mut ce_sum = 0.0f64;
    let mut n_src = 0usize;
    let mut n_tgt = 0usize;
    let mut src0 = 0usize;
    let mut tgt1 = 0usize;
    for &start in &plan.starts {
        let batch = eval_batch(ds, split, start, l, scope)?;
        let mut tape = Tape::new();
        let out = model.forward_on(&mut tape, &batch, &mut Mode::Eval)?;
        let logits = model.discriminate(&mut tape, out.z, None, &mut Mode::Eval)?;
        let vals = tape.value(logits);
        let n = batch.rows();
        for r in 0..logits.rows {
            let sensor = r % n;
            let label = if batch.restore[sensor] {
                0usize
            } else if batch.masked[sensor] {
                1usize
            } else {
                continue;
            };
            let l0 = vals[2 * r];
            let l1 = vals[2 * r + 1];
            let m = l0.max(l1);
            let lse = m + ((l0 - m).exp() + (l1 - m).exp()).ln();
            ce_sum += lse - if label == 0 { l0 } else { l1 };
            let predicted = usize::from(l1 > l0);
            if label == 0 {
                n_src += 1;
                src0 += usize::from(predicted == 0);
            } else {
                n_tgt += 1;
                tgt1 += usize::from(predicted == 1);
            }
        }
    }
    if n_src == 0 || n_tgt == 0 {
        return Err(Error::Invalid("probe needs patches from both domains".into()));
    }
    let d = h_divergence_from_rates(src0 as f64 / n_src as f64, tgt1 as f64 / n_tgt as f64);
    let d_flipped = h_divergence_from_rates(
        1.0 - src0 as f64 / n_src as f64,
        1.0 - tgt1 as f64 / n_tgt as f64,
    );
    Ok(ProbeReport {
        bce: ce_sum / (n_src + n_tgt) as f64,
        divergence: d.max(d_flipped),
        source_patches: n_src,
        target_patches: n_tgt,
    })
}

/// Lag `s` maximizing `sum_t a[(t + s) mod L] * b[t]`; ties take the
/// smallest lag. If `a` is `b` delayed by `s` steps circularly, this
/// returns `s`.
pub fn circular_xcorr_lag(a: &[f64], b: &[f64]) -> Result<usize> {
    let l = a.len();
    if l == 0 || b.len() != l {
        return Err(Error::Invalid(format!(
            "cross-correlation needs equal nonzero lengths, got {} and {}",
            l,
            b.len()
        )));
    }
    let mut best_lag = 0usize;
    let mut best = f64::NEG_INFINITY;
    for lag in 0..l {
        let mut s = 0.0f64;
        for t in 0..l {
            s += a[(t + lag) % l] * b[t];
        }
        if s > best {
            best = s;
            best_lag = lag;
        }
    }
    Ok(best_lag)
}

/// Distance between two circular lags on a ring of length `len`.
pub fn circular_lag_distance(a: usize, b: usize, len: usize) -> usize {
    let d = (a as i64 - b as i64).rem_euclid(len as i64) as usize;
    d.min(len - d)
}

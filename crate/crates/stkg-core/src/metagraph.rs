//! Windowed dynamic-graph construction from metadata. Each sensor gets an
//! embedding built from its frequency signature plus whatever metadata the
//! dataset offers (timestamps, coordinates); pairwise scores between
//! embeddings are sparsified and row-normalized into an adjacency that the
//! rest of the model consumes. All tables are sensor-count independent, so
//! the construction transfers to unseen sensors unchanged.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{DiffTensor, ParamGroup, ParamId, ParamStore, Tape};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::graph::topk_support;
use crate::nn::{xavier_uniform, Mode};
use crate::spectral::rfft;

/// Tokens per encoded coordinate pair: two blocks of
/// `sign, hundreds, tens, ones, point, four fraction digits`.
pub const COORD_TOKENS: usize = 18;
/// Token vocabulary: digits 0-9, then `+`, `-`, `.`.
pub const COORD_VOCAB: usize = 13;
const TOKEN_PLUS: usize = 10;
const TOKEN_MINUS: usize = 11;
const TOKEN_POINT: usize = 12;

#[derive(Clone, Debug)]
pub struct AttnHead {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
}

/// Parameters of the metadata embedding and edge scoring. Two edge-weight
/// rows are registered, one per decomposition branch; downstream consumers
/// pick which adjacency they read.
#[derive(Clone, Debug)]
pub struct MetaGraphParams {
    pub time_of_day: ParamId,
    pub day_of_week: ParamId,
    pub digits: ParamId,
    pub coord_w: ParamId,
    pub coord_b: ParamId,
    pub heads: Vec<AttnHead>,
    pub attn_out: ParamId,
    pub linear_w: ParamId,
    pub linear_b: ParamId,
    pub edge_trend: ParamId,
    pub edge_resid: ParamId,
}

impl MetaGraphParams {
    pub fn register(
        store: &mut ParamStore,
        cfg: &ModelConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<MetaGraphParams> {
        let g = ParamGroup::MetaGraph;
        let et = cfg.time_dim();
        let e = cfg.label_dim;
        let ed = cfg.digit_dim;
        let f = cfg.meta_dim;
        let time_of_day = store.add(
            "metagraph.time_of_day",
            cfg.steps_per_day,
            et,
            xavier_uniform(rng, cfg.steps_per_day, et),
            true,
            g,
        )?;
        let day_of_week =
            store.add("metagraph.day_of_week", 7, et, xavier_uniform(rng, 7, et), true, g)?;
        let digits = store.add(
            "metagraph.digits",
            COORD_VOCAB,
            ed,
            xavier_uniform(rng, COORD_VOCAB, ed),
            true,
            g,
        )?;
        let coord_in = COORD_TOKENS * ed;
        let coord_w = store.add(
            "metagraph.coord_w",
            coord_in,
            e,
            xavier_uniform(rng, coord_in, e),
            true,
            g,
        )?;
        let coord_b = store.add("metagraph.coord_b", 1, e, vec![0.0; e], true, g)?;
        let dh = e / cfg.attn_heads;
        let qd = cfg.query_dim();
        let mut heads = Vec::with_capacity(cfg.attn_heads);
        for h in 0..cfg.attn_heads {
            let wq = store.add(
                format!("metagraph.attn.{h}.wq"),
                qd,
                dh,
                xavier_uniform(rng, qd, dh),
                true,
                g,
            )?;
            let wk = store.add(
                format!("metagraph.attn.{h}.wk"),
                f,
                dh,
                xavier_uniform(rng, f, dh),
                true,
                g,
            )?;
            let wv = store.add(
                format!("metagraph.attn.{h}.wv"),
                f,
                dh,
                xavier_uniform(rng, f, dh),
                true,
                g,
            )?;
            heads.push(AttnHead { wq, wk, wv });
        }
        let attn_out =
            store.add("metagraph.attn.out", e, e, xavier_uniform(rng, e, e), true, g)?;
        let lin_in = cfg.linear_in_dim();
        let linear_w = store.add(
            "metagraph.linear_w",
            lin_in,
            e,
            xavier_uniform(rng, lin_in, e),
            true,
            g,
        )?;
        let linear_b = store.add("metagraph.linear_b", 1, e, vec![0.0; e], true, g)?;
        let edge_trend =
            store.add("metagraph.edge.trend", 1, e, xavier_uniform(rng, 1, e), true, g)?;
        let edge_resid =
            store.add("metagraph.edge.resid", 1, e, xavier_uniform(rng, 1, e), true, g)?;
        Ok(MetaGraphParams {
            time_of_day,
            day_of_week,
            digits,
            coord_w,
            coord_b,
            heads,
            attn_out,
            linear_w,
            linear_b,
            edge_trend,
            edge_resid,
        })
    }
}

/// Per-sensor frequency signature of a window: the first `ceil(f/2)` bin
/// amplitudes followed by the first `floor(f/2)` bin phases, row-major over
/// sensors. Zero rows produce all-zero features.
pub fn frequency_features(rows: &[Vec<f64>], f: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(rows.len() * f);
    let n_amp = f.div_ceil(2);
    let n_phase = f / 2;
    for (i, row) in rows.iter().enumerate() {
        let spec = rfft(row)?;
        if spec.bins.len() < n_amp || spec.bins.len() < n_phase {
            return Err(Error::Invalid(format!(
                "row {i}: window of length {} has {} frequency bins, \
                 cannot fill {} features",
                row.len(),
                spec.bins.len(),
                f
            )));
        }
        for k in 0..n_amp {
            out.push(spec.bins[k].amplitude);
        }
        for k in 0..n_phase {
            out.push(spec.bins[k].phase);
        }
    }
    Ok(out)
}

/// Encode one coordinate pair as digit tokens: per coordinate a sign token,
/// three integer digits (zero padded), a point token, and four fraction
/// digits (rounded). Coordinates must satisfy `|c| < 1000`.
pub fn coordinate_tokens(lat: f64, lon: f64) -> Result<[usize; COORD_TOKENS]> {
    let mut out = [0usize; COORD_TOKENS];
    let mut pos = 0;
    for &c in &[lat, lon] {
        if !c.is_finite() || c.abs() >= 1000.0 {
            return Err(Error::Data(format!("coordinate {c} out of representable range")));
        }
        let scaled = (c.abs() * 10_000.0).round() as i64;
        if scaled >= 10_000_000 {
            return Err(Error::Data(format!("coordinate {c} out of representable range")));
        }
        out[pos] = if c.is_sign_negative() { TOKEN_MINUS } else { TOKEN_PLUS };
        pos += 1;
        let int_part = (scaled / 10_000) as usize;
        for div in [100, 10, 1] {
            out[pos] = (int_part / div) % 10;
            pos += 1;
        }
        out[pos] = TOKEN_POINT;
        pos += 1;
        let frac = (scaled % 10_000) as usize;
        for div in [1000, 100, 10, 1] {
            out[pos] = (frac / div) % 10;
            pos += 1;
        }
    }
    Ok(out)
}

/// One-hot constant matrix with a single 1 per row.
fn onehot(tape: &mut Tape, picks: &[usize], width: usize) -> Result<DiffTensor> {
    let mut data = vec![0.0; picks.len() * width];
    for (r, &p) in picks.iter().enumerate() {
        if p >= width {
            return Err(Error::Invalid(format!("one-hot index {p} out of width {width}")));
        }
        data[r * width + p] = 1.0;
    }
    tape.constant(picks.len(), width, data)
}

/// Timestamp embedding of a window start: time-of-day row next to
/// day-of-week row, shape `1 x 2*time_dim`.
pub fn embed_time(
    tape: &mut Tape,
    store: &ParamStore,
    p: &MetaGraphParams,
    tod: usize,
    dow: usize,
    steps_per_day: usize,
) -> Result<DiffTensor> {
    if tod >= steps_per_day {
        return Err(Error::Invalid(format!("time-of-day index {tod} >= {steps_per_day}")));
    }
    if dow >= 7 {
        return Err(Error::Invalid(format!("day-of-week index {dow} >= 7")));
    }
    let tod_sel = onehot(tape, &[tod], steps_per_day)?;
    let dow_sel = onehot(tape, &[dow], 7)?;
    let tod_table = tape.bind_param(store, p.time_of_day);
    let dow_table = tape.bind_param(store, p.day_of_week);
    let t = tape.matmul(tod_sel, tod_table)?;
    let d = tape.matmul(dow_sel, dow_table)?;
    tape.concat_cols(&[t, d])
}

/// Coordinate embedding: digit-token lookups concatenated per sensor, then a
/// shared linear projection. Shape `n x label_dim`.
///
/// While training, whole tokens are dropped (and the survivors rescaled)
/// before the projection. A sensor's full token string is unique, so without
/// this the embedding degenerates into a memorized per-sensor identifier
/// that transfers to no new sensor; token dropout forces the projection to
/// read digits, not identities.
pub fn embed_coordinates(
    tape: &mut Tape,
    store: &ParamStore,
    p: &MetaGraphParams,
    coords: &[(f64, f64)],
    mode: &mut Mode,
) -> Result<DiffTensor> {
    let n = coords.len();
    let mut token_cols: Vec<Vec<usize>> = vec![Vec::with_capacity(n); COORD_TOKENS];
    for &(lat, lon) in coords {
        let toks = coordinate_tokens(lat, lon)?;
        for (slot, &t) in toks.iter().enumerate() {
            token_cols[slot].push(t);
        }
    }
    let table = tape.bind_param(store, p.digits);
    let mut parts = Vec::with_capacity(COORD_TOKENS);
    for col in &token_cols {
        let sel = onehot(tape, col, COORD_VOCAB)?;
        let looked = tape.matmul(sel, table)?;
        let looked = match mode {
            Mode::Eval => looked,
            Mode::Train { dropout, rng } => {
                let keep = 1.0 / (1.0 - *dropout);
                let row_mask: Vec<f64> = (0..n)
                    .map(|_| if rng.gen::<f64>() < *dropout { 0.0 } else { keep })
                    .collect();
                let m = tape.constant(n, 1, row_mask)?;
                tape.mul_col(looked, m)?
            }
        };
        parts.push(looked);
    }
    let stacked = tape.concat_cols(&parts)?;
    let w = tape.bind_param(store, p.coord_w);
    let b = tape.bind_param(store, p.coord_b);
    let projected = tape.matmul(stacked, w)?;
    tape.add_row(projected, b)
}

/// Inputs that vary per window.
pub struct WindowMeta<'a> {
    /// Raw rows the frequency features are computed from, one per sensor.
    pub series_rows: &'a [Vec<f64>],
    pub coords: Option<&'a [(f64, f64)]>,
    pub tod: usize,
    pub dow: usize,
}

/// Build per-sensor embeddings, shape `n x label_dim`. With coordinates (and
/// location not ablated) a multi-head attention mixes each sensor's
/// timestamp+coordinate query against every sensor's frequency signature;
/// otherwise a linear layer reads the concatenated timestamp and frequency
/// features directly.
pub fn build_embedding(
    tape: &mut Tape,
    store: &ParamStore,
    p: &MetaGraphParams,
    cfg: &ModelConfig,
    meta: &WindowMeta,
    mode: &mut Mode,
) -> Result<DiffTensor> {
    let n = meta.series_rows.len();
    if n == 0 {
        return Err(Error::Invalid("embedding needs at least one sensor".into()));
    }
    let freq_data = frequency_features(meta.series_rows, cfg.meta_dim)?;
    let freq = tape.constant(n, cfg.meta_dim, freq_data)?;
    let use_time = !cfg.ablation.no_timestamp;
    let time_rows = if use_time {
        let row = embed_time(tape, store, p, meta.tod, meta.dow, cfg.steps_per_day)?;
        let ones = tape.constant(n, 1, vec![1.0; n])?;
        Some(tape.matmul(ones, row)?)
    } else {
        None
    };

    let coords = match (meta.coords, cfg.ablation.no_location) {
        (Some(c), false) => Some(c),
        _ => None,
    };
    if let Some(coords) = coords {
        if coords.len() != n {
            return Err(Error::shape(
                "embedding",
                (coords.len(), 2),
                (n, cfg.meta_dim),
            ));
        }
        let coord_emb = embed_coordinates(tape, store, p, coords, mode)?;
        let query = match time_rows {
            Some(t) => tape.concat_cols(&[t, coord_emb])?,
            None => coord_emb,
        };
        let dh = cfg.label_dim / cfg.attn_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(p.heads.len());
        for head in &p.heads {
            let wq = tape.bind_param(store, head.wq);
            let wk = tape.bind_param(store, head.wk);
            let wv = tape.bind_param(store, head.wv);
            let q = tape.matmul(query, wq)?;
            let k = tape.matmul(freq, wk)?;
            let v = tape.matmul(freq, wv)?;
            let kt = tape.transpose(k)?;
            let logits = tape.matmul(q, kt)?;
            let logits = tape.scale(logits, scale);
            let attn = tape.softmax_rows(logits);
            outs.push(tape.matmul(attn, v)?);
        }
        let mixed = tape.concat_cols(&outs)?;
        let wo = tape.bind_param(store, p.attn_out);
        tape.matmul(mixed, wo)
    } else {
        let input = match time_rows {
            Some(t) => tape.concat_cols(&[t, freq])?,
            None => freq,
        };
        let w = tape.bind_param(store, p.linear_w);
        let b = tape.bind_param(store, p.linear_b);
        let y = tape.matmul(input, w)?;
        tape.add_row(y, b)
    }
}

/// Pairwise-score a set of embeddings with an edge-weight row, keep the top-k
/// entries per row, and renormalize them to a row-stochastic adjacency.
/// Gradients flow into the embeddings and the edge weights through the
/// surviving entries.
pub fn dynamic_graph(
    tape: &mut Tape,
    store: &ParamStore,
    de: DiffTensor,
    edge: ParamId,
    topk: usize,
) -> Result<DiffTensor> {
    let n = de.rows;
    let w = tape.bind_param(store, edge);
    let weighted = tape.mul_row(de, w)?;
    let det = tape.transpose(de)?;
    let scores = tape.matmul(weighted, det)?;
    let support = topk_support(tape.value(scores), n, topk)?;
    tape.masked_softmax_rows(scores, &support)
}

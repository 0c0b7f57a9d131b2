//! Differentiable phase correction. Each window is (optionally) split into
//! trend and residual, each branch picks its few highest-amplitude frequency
//! bins per sensor, re-predicts their phases by message passing over a graph
//! of phase-cell embeddings, and the corrected sinusoids replace the original
//! ones. The replacement is expressed additively against the original input,
//! so with a zero-initialized head (offset mode) the module is exactly the
//! identity, bit for bit.
//!
//! Everything stays on the tape: bin coefficients are recovered with constant
//! cosine/sine matrices, and the corrected sinusoid is assembled from the
//! angle-addition identities, so gradients reach the head, the message
//! passing, and the input series. Bin selection and phase-cell lookup indices
//! are computed from values only and are not differentiated through.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{DiffTensor, ParamGroup, ParamId, ParamStore, Tape};
use crate::config::{ModelConfig, PhaseMode};
use crate::error::{Error, Result};
use crate::graph::gin_layer;
use crate::nn::{Mlp, Mode};
use crate::spectral::{fold_weight, trend_matrix};

#[derive(Clone, Debug)]
pub struct GinBlock {
    pub eps: ParamId,
    pub mlp: Mlp,
}

#[derive(Clone, Debug)]
pub struct BranchParams {
    pub gin: Vec<GinBlock>,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

#[derive(Clone, Debug)]
pub struct PhaseParams {
    /// Frozen table of phase-cell embeddings, `bins x embed_dim`.
    pub table: ParamId,
    pub trend: BranchParams,
    pub resid: BranchParams,
}

impl PhaseParams {
    pub fn register(
        store: &mut ParamStore,
        cfg: &ModelConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<PhaseParams> {
        let g = ParamGroup::Phase;
        let m = cfg.phase.bins;
        let e = cfg.phase.embed_dim;
        let table_vals: Vec<f64> = (0..m * e).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let table = store.add("phase.table", m, e, table_vals, false, g)?;
        let trend = Self::register_branch(store, "phase.trend", cfg, rng)?;
        let resid = Self::register_branch(store, "phase.resid", cfg, rng)?;
        Ok(PhaseParams { table, trend, resid })
    }

    fn register_branch(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &ModelConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<BranchParams> {
        let g = ParamGroup::Phase;
        let e = cfg.phase.embed_dim;
        let mut gin = Vec::with_capacity(cfg.phase.layers);
        for j in 0..cfg.phase.layers {
            let eps = store.add(format!("{prefix}.gin{j}.eps"), 1, 1, vec![0.0], true, g)?;
            let mlp = Mlp::register_near_identity(
                store,
                &format!("{prefix}.gin{j}"),
                e,
                cfg.phase.hidden,
                g,
                rng,
            )?;
            gin.push(GinBlock { eps, mlp });
        }
        // In offset mode a zero head makes the whole module the identity at
        // initialization; in absolute mode the head starts like any layer.
        let head_init = match cfg.phase.mode {
            PhaseMode::Offset => vec![0.0; e],
            PhaseMode::Absolute => crate::nn::xavier_uniform(rng, e, 1),
        };
        let head_w = store.add(format!("{prefix}.head_w"), e, 1, head_init, true, g)?;
        let head_b = store.add(format!("{prefix}.head_b"), 1, 1, vec![0.0], true, g)?;
        Ok(BranchParams { gin, head_w, head_b })
    }
}

/// Map a phase in `(-pi, pi]` to one of `m` equal cells.
pub fn discretize_phase(phi: f64, m: usize) -> usize {
    let cell = ((phi + PI) / (TAU / m as f64)).floor();
    (cell.max(0.0) as usize).min(m - 1)
}

/// Per-slot record of what the module did, for inspection in tests and
/// diagnostics. Entries are per sensor.
#[derive(Clone, Debug)]
pub struct SlotTrace {
    pub bins: Vec<usize>,
    pub phase_old: Vec<f64>,
    pub phase_new: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct PhaseTrace {
    /// `[branch][slot]`; one branch when decomposition is ablated,
    /// otherwise trend then residual.
    pub branches: Vec<Vec<SlotTrace>>,
}

/// Optional replacement for the head output, one value per sensor, applied
/// to every slot: offsets in offset mode, absolute phases otherwise.
pub type PhaseOverride<'a> = Option<&'a [f64]>;

/// Run the module over a window `x` (`n x series_len`). `a_trend`/`a_resid`
/// are the adjacencies the two branches' message passing uses (the same
/// tensor may be passed twice). Returns the corrected window and a trace.
#[allow(clippy::too_many_arguments)]
pub fn phase_forward(
    tape: &mut Tape,
    store: &ParamStore,
    p: &PhaseParams,
    cfg: &ModelConfig,
    x: DiffTensor,
    a_trend: DiffTensor,
    a_resid: DiffTensor,
    mode: &mut Mode,
    ovr: PhaseOverride,
) -> Result<(DiffTensor, PhaseTrace)> {
    let l = cfg.series_len;
    if x.cols != l {
        return Err(Error::shape("phase_forward", (x.rows, x.cols), (x.rows, l)));
    }
    let mut trace = PhaseTrace::default();
    let mut out = x;
    if cfg.ablation.no_decompose {
        let (contrib, slots) =
            branch_contribution(tape, store, p, &p.resid, cfg, x, a_resid, mode, ovr)?;
        trace.branches.push(slots);
        if let Some(c) = contrib {
            out = tape.add(out, c)?;
        }
    } else {
        let mt = transposed_trend_constant(tape, l, cfg.phase.trend_window)?;
        let trend = tape.matmul(x, mt)?;
        let resid = tape.sub(x, trend)?;
        let (c_t, s_t) =
            branch_contribution(tape, store, p, &p.trend, cfg, trend, a_trend, mode, ovr)?;
        let (c_r, s_r) =
            branch_contribution(tape, store, p, &p.resid, cfg, resid, a_resid, mode, ovr)?;
        trace.branches.push(s_t);
        trace.branches.push(s_r);
        if let Some(c) = c_t {
            out = tape.add(out, c)?;
        }
        if let Some(c) = c_r {
            out = tape.add(out, c)?;
        }
    }
    Ok((out, trace))
}

fn transposed_trend_constant(tape: &mut Tape, l: usize, w: usize) -> Result<DiffTensor> {
    let m = trend_matrix(l, w)?;
    let mut mt = vec![0.0; l * l];
    for r in 0..l {
        for c in 0..l {
            mt[c * l + r] = m[r * l + c];
        }
    }
    tape.constant(l, l, mt)
}

/// The additive correction one branch makes to the full window, plus traces.
/// `None` means the branch had nothing to change (cannot happen with valid
/// configs, kept for shape safety).
#[allow(clippy::too_many_arguments)]
fn branch_contribution(
    tape: &mut Tape,
    store: &ParamStore,
    p: &PhaseParams,
    branch: &BranchParams,
    cfg: &ModelConfig,
    xb: DiffTensor,
    a_phase: DiffTensor,
    mode: &mut Mode,
    ovr: PhaseOverride,
) -> Result<(Option<DiffTensor>, Vec<SlotTrace>)> {
    let n = xb.rows;
    let l = cfg.series_len;
    let bins = l / 2 + 1;
    // DC and (at even lengths) the alternating bin have no free phase in a
    // real signal, so only paired bins are candidates for re-timing.
    let top = if l % 2 == 0 { bins - 1 } else { bins };
    let candidates = top - 1;
    if cfg.phase.modified > candidates {
        return Err(Error::Invalid(format!(
            "cannot modify {} bins: length-{l} windows have {candidates} re-timable bins",
            cfg.phase.modified
        )));
    }
    if let Some(vals) = ovr {
        if vals.len() != n {
            return Err(Error::Invalid(format!(
                "phase override carries {} values for {n} sensors",
                vals.len()
            )));
        }
    }

    // Bin coefficients via constant transform matrices: re = x . C, im = x . S.
    let mut c_mat = vec![0.0; l * bins];
    let mut s_mat = vec![0.0; l * bins];
    for t in 0..l {
        for k in 0..bins {
            let ang = TAU * (k * t) as f64 / l as f64;
            c_mat[t * bins + k] = ang.cos();
            s_mat[t * bins + k] = -ang.sin();
        }
    }
    let c_const = tape.constant(l, bins, c_mat)?;
    let s_const = tape.constant(l, bins, s_mat)?;
    let re = tape.matmul(xb, c_const)?;
    let im = tape.matmul(xb, s_const)?;

    // Value-level amplitude ranking; ties keep the lower bin.
    let re_v = tape.value(re).to_vec();
    let im_v = tape.value(im).to_vec();
    let mut order: Vec<Vec<usize>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut idx: Vec<usize> = (1..top).collect();
        idx.sort_by(|&a, &b| {
            let aa = re_v[i * bins + a].hypot(im_v[i * bins + a]);
            let ab = re_v[i * bins + b].hypot(im_v[i * bins + b]);
            ab.total_cmp(&aa).then(a.cmp(&b))
        });
        order.push(idx);
    }

    let table = tape.bind_param(store, p.table);
    let mut total: Option<DiffTensor> = None;
    let mut slots = Vec::with_capacity(cfg.phase.modified);
    for slot in 0..cfg.phase.modified {
        let sel: Vec<usize> = (0..n).map(|i| order[i][slot]).collect();
        let phase_old: Vec<f64> = (0..n)
            .map(|i| im_v[i * bins + sel[i]].atan2(re_v[i * bins + sel[i]]))
            .collect();

        // Predicted angle per sensor (offset or absolute), `n x 1`.
        let pred = match ovr {
            Some(vals) => tape.constant(n, 1, vals.to_vec())?,
            None => {
                let cells: Vec<usize> =
                    phase_old.iter().map(|&ph| discretize_phase(ph, cfg.phase.bins)).collect();
                let mut onehot = vec![0.0; n * cfg.phase.bins];
                for (i, &cell) in cells.iter().enumerate() {
                    onehot[i * cfg.phase.bins + cell] = 1.0;
                }
                let sel_m = tape.constant(n, cfg.phase.bins, onehot)?;
                let mut phi = tape.matmul(sel_m, table)?;
                for block in &branch.gin {
                    let eps = tape.bind_param(store, block.eps);
                    phi = gin_layer(tape, phi, a_phase, eps, |t, h| {
                        block.mlp.apply(t, store, h, mode)
                    })?;
                }
                let w = tape.bind_param(store, branch.head_w);
                let b = tape.bind_param(store, branch.head_b);
                let y = tape.matmul(phi, w)?;
                let y = tape.add_row(y, b)?;
                let y = tape.tanh(y);
                tape.scale(y, PI)
            }
        };

        // Original and retimed sinusoid of the selected bin, per sensor.
        let re_sel = tape.gather_cols(re, &sel)?;
        let im_sel = tape.gather_cols(im, &sel)?;
        let mut cos_w = vec![0.0; n * l];
        let mut sin_w = vec![0.0; n * l];
        let mut coef = vec![0.0; n];
        for i in 0..n {
            for t in 0..l {
                let ang = TAU * (sel[i] * t) as f64 / l as f64;
                cos_w[i * l + t] = ang.cos();
                sin_w[i * l + t] = ang.sin();
            }
            coef[i] = fold_weight(sel[i], l) / l as f64;
        }
        let cos_w = tape.constant(n, l, cos_w)?;
        let sin_w = tape.constant(n, l, sin_w)?;
        let coef = tape.constant(n, 1, coef)?;

        let p1a = tape.mul_col(cos_w, re_sel)?;
        let p1b = tape.mul_col(sin_w, im_sel)?;
        let p1 = tape.sub(p1a, p1b)?; // A cos(wt + phi_old)
        let new = match cfg.phase.mode {
            PhaseMode::Offset => {
                let p2a = tape.mul_col(sin_w, re_sel)?;
                let p2b = tape.mul_col(cos_w, im_sel)?;
                let p2 = tape.add(p2a, p2b)?; // A sin(wt + phi_old)
                let cos_d = tape.cos(pred);
                let sin_d = tape.sin(pred);
                let t1 = tape.mul_col(p1, cos_d)?;
                let t2 = tape.mul_col(p2, sin_d)?;
                tape.sub(t1, t2)? // A cos(wt + phi_old + delta)
            }
            PhaseMode::Absolute => {
                let re2 = tape.mul(re_sel, re_sel)?;
                let im2 = tape.mul(im_sel, im_sel)?;
                let sq = tape.add(re2, im2)?;
                let sq = tape.offset(sq, 1e-24);
                let amp = tape.sqrt(sq);
                let cos_p = tape.cos(pred);
                let sin_p = tape.sin(pred);
                let ac = tape.mul(amp, cos_p)?;
                let as_ = tape.mul(amp, sin_p)?;
                let t1 = tape.mul_col(cos_w, ac)?;
                let t2 = tape.mul_col(sin_w, as_)?;
                tape.sub(t1, t2)? // A cos(wt + phi_new)
            }
        };
        let delta = tape.sub(new, p1)?;
        let contrib = tape.mul_col(delta, coef)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, contrib)?,
            None => contrib,
        });

        let pred_v = tape.value(pred);
        let phase_new: Vec<f64> = match cfg.phase.mode {
            PhaseMode::Offset => phase_old
                .iter()
                .zip(pred_v.iter())
                .map(|(&old, &d)| crate::spectral::wrap_phase(old + d))
                .collect(),
            PhaseMode::Absolute => pred_v.to_vec(),
        };
        slots.push(SlotTrace { bins: sel, phase_old, phase_new });
    }
    Ok((total, slots))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Ablation;
    use crate::graph::Adjacency;
    use crate::spectral::{apply_phase, irfft, rfft};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn cfg_with(l: usize, decompose: bool, mode: PhaseMode) -> ModelConfig {
        let mut cfg = ModelConfig::default();
        cfg.series_len = l;
        cfg.meta_dim = 8;
        cfg.phase.bins = 16;
        cfg.phase.embed_dim = 5;
        cfg.phase.hidden = 7;
        cfg.phase.layers = 2;
        cfg.phase.modified = 1;
        cfg.phase.mode = mode;
        cfg.phase.trend_window = 5;
        cfg.ablation = Ablation { no_decompose: !decompose, ..Ablation::default() };
        cfg.validate().unwrap();
        cfg
    }

    fn setup(cfg: &ModelConfig, seed: u64) -> (ParamStore, PhaseParams) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = PhaseParams::register(&mut store, cfg, &mut rng).unwrap();
        (store, p)
    }

    fn ring(tape: &mut Tape, n: usize) -> DiffTensor {
        let mut a = Adjacency::zeros(n);
        for i in 0..n {
            a.set(i, (i + 1) % n, 0.5);
            a.set(i, (i + n - 1) % n, 0.5);
        }
        if n == 1 {
            return tape.constant(1, 1, vec![0.0]).unwrap();
        }
        a.bind(tape).unwrap()
    }

    fn tone(l: usize, k: usize, amp: f64, phase: f64) -> Vec<f64> {
        (0..l).map(|t| amp * (TAU * (k * t) as f64 / l as f64 + phase).cos()).collect()
    }

    #[test]
    fn identity_at_init_offset_mode() {
        for decompose in [false, true] {
            let cfg = cfg_with(24, decompose, PhaseMode::Offset);
            let (store, p) = setup(&cfg, 3);
            let mut rows: Vec<f64> = Vec::new();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            for _ in 0..3 {
                for _ in 0..24 {
                    rows.push(rng.gen_range(-2.0..2.0));
                }
            }
            rows.splice(24..48, vec![0.0; 24]); // one all-zero row
            let mut tape = Tape::new();
            let x = tape.constant(4, 24, {
                let mut v = rows.clone();
                v.extend(tone(24, 3, 1.5, 0.2));
                v
            }).unwrap();
            let a = ring(&mut tape, 4);
            let (out, trace) = phase_forward(
                &mut tape, &store, &p, &cfg, x, a, a, &mut Mode::Eval, None,
            )
            .unwrap();
            assert_eq!(tape.value(x), tape.value(out), "decompose={decompose}");
            let expected_branches = if decompose { 2 } else { 1 };
            assert_eq!(trace.branches.len(), expected_branches);
        }
    }

    #[test]
    fn forced_offset_matches_spectral_oracle_single_branch() {
        let cfg = cfg_with(24, false, PhaseMode::Offset);
        let (store, p) = setup(&cfg, 5);
        let x_row = tone(24, 2, 3.0, 0.7);
        let delta = 0.9;
        let mut tape = Tape::new();
        let x = tape.constant(1, 24, x_row.clone()).unwrap();
        let a = ring(&mut tape, 1);
        let (out, trace) =
            phase_forward(&mut tape, &store, &p, &cfg, x, a, a, &mut Mode::Eval, Some(&[delta]))
                .unwrap();
        let spec = rfft(&x_row).unwrap();
        let shifted = irfft(&apply_phase(&spec, 2, 0.7 + delta).unwrap());
        for (g, w) in tape.value(out).iter().zip(shifted.iter()) {
            assert!((g - w).abs() < 1e-9, "{g} vs {w}");
        }
        assert_eq!(trace.branches[0][0].bins, vec![2]);
        assert!((trace.branches[0][0].phase_old[0] - 0.7).abs() < 1e-9);
        assert!((trace.branches[0][0].phase_new[0] - 1.6).abs() < 1e-9);
    }

    #[test]
    fn forced_offset_recombines_across_decomposition() {
        // A pure tone splits into two tones of the same frequency; shifting
        // both branches by the same offset must shift the whole signal.
        let cfg = cfg_with(24, true, PhaseMode::Offset);
        let (store, p) = setup(&cfg, 5);
        let x_row = tone(24, 2, 3.0, 0.7);
        let delta = -1.3;
        let mut tape = Tape::new();
        let x = tape.constant(1, 24, x_row.clone()).unwrap();
        let a = ring(&mut tape, 1);
        let (out, trace) =
            phase_forward(&mut tape, &store, &p, &cfg, x, a, a, &mut Mode::Eval, Some(&[delta]))
                .unwrap();
        let want = tone(24, 2, 3.0, 0.7 + delta);
        for (g, w) in tape.value(out).iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-9, "{g} vs {w}");
        }
        for branch in &trace.branches {
            assert_eq!(branch[0].bins, vec![2], "both branches keep the tone's bin");
        }
    }

    #[test]
    fn absolute_mode_sets_phase_outright() {
        let cfg = cfg_with(24, false, PhaseMode::Absolute);
        let (store, p) = setup(&cfg, 8);
        let x_row = tone(24, 5, 2.0, -0.4);
        let psi = 1.1;
        let mut tape = Tape::new();
        let x = tape.constant(1, 24, x_row.clone()).unwrap();
        let a = ring(&mut tape, 1);
        let (out, _) =
            phase_forward(&mut tape, &store, &p, &cfg, x, a, a, &mut Mode::Eval, Some(&[psi]))
                .unwrap();
        let spec = rfft(&x_row).unwrap();
        let want = irfft(&apply_phase(&spec, 5, psi).unwrap());
        for (g, w) in tape.value(out).iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-9, "{g} vs {w}");
        }
    }

    #[test]
    fn per_sensor_bins_are_independent() {
        let cfg = cfg_with(24, false, PhaseMode::Offset);
        let (store, p) = setup(&cfg, 2);
        let rows = [tone(24, 3, 2.0, 0.3), tone(24, 7, 1.0, -1.0)].concat();
        let deltas = [0.5, -0.8];
        let mut tape = Tape::new();
        let x = tape.constant(2, 24, rows.clone()).unwrap();
        let a = ring(&mut tape, 2);
        let (out, trace) =
            phase_forward(&mut tape, &store, &p, &cfg, x, a, a, &mut Mode::Eval, Some(&deltas))
                .unwrap();
        assert_eq!(trace.branches[0][0].bins, vec![3, 7]);
        let got = tape.value(out);
        let want0 = tone(24, 3, 2.0, 0.3 + 0.5);
        let want1 = tone(24, 7, 1.0, -1.0 - 0.8);
        for t in 0..24 {
            assert!((got[t] - want0[t]).abs() < 1e-9);
            assert!((got[24 + t] - want1[t]).abs() < 1e-9);
        }
    }

    #[test]
    fn selection_prefers_high_amplitude_with_low_bin_ties() {
        let cfg = cfg_with(24, false, PhaseMode::Offset);
        let (store, p) = setup(&cfg, 2);
        let mut row = tone(24, 3, 5.0, 0.0);
        let other = tone(24, 7, 2.0, 0.0);
        for t in 0..24 {
            row[t] += other[t];
        }
        let mut tape = Tape::new();
        let x = tape.constant(1, 24, row).unwrap();
        let a = ring(&mut tape, 1);
        let (_, trace) =
            phase_forward(&mut tape, &store, &p, &cfg, x, a, a, &mut Mode::Eval, Some(&[0.0]))
                .unwrap();
        assert_eq!(trace.branches[0][0].bins, vec![3]);

        // A zero row ties every candidate at amplitude 0: the lowest bin
        // wins, and the correction leaves the zeros untouched.
        let mut tape = Tape::new();
        let x = tape.constant(1, 24, vec![0.0; 24]).unwrap();
        let a = ring(&mut tape, 1);
        let (out, trace) =
            phase_forward(&mut tape, &store, &p, &cfg, x, a, a, &mut Mode::Eval, Some(&[0.9]))
                .unwrap();
        assert_eq!(trace.branches[0][0].bins, vec![1]);
        assert!(tape.value(out).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gradients_reach_head_and_messages_but_not_table() {
        let cfg = cfg_with(24, true, PhaseMode::Offset);
        let (mut store, p) = setup(&cfg, 4);
        // Nudge the head so the prediction is non-trivial.
        store.value_mut(p.resid.head_w)[0] = 0.3;
        store.value_mut(p.trend.head_w)[1] = -0.2;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let rows: Vec<f64> = (0..3 * 24).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let mut tape = Tape::new();
        let x = tape.constant(3, 24, rows).unwrap();
        let a = ring(&mut tape, 3);
        let (out, _) =
            phase_forward(&mut tape, &store, &p, &cfg, x, a, a, &mut Mode::Eval, None).unwrap();
        let sq = tape.mul(out, out).unwrap();
        let loss = tape.sum_all(sq);
        tape.backward(loss).unwrap();
        let grads = tape.param_grads(&store);
        assert!(grads.get(p.resid.head_w).is_some_and(|g| g.iter().any(|v| v.abs() > 1e-12)));
        assert!(grads.get(p.resid.gin[0].mlp.w1).is_some());
        assert!(grads.get(p.resid.gin[0].eps).is_some());
        assert!(grads.get(p.table).is_none(), "frozen table must not accumulate gradient");
    }

    #[test]
    fn discretize_phase_cells() {
        assert_eq!(discretize_phase(-PI, 16), 0);
        assert_eq!(discretize_phase(-PI + 1e-9, 16), 0);
        assert_eq!(discretize_phase(0.0, 16), 8);
        assert_eq!(discretize_phase(PI, 16), 15);
        assert_eq!(discretize_phase(PI - 1e-9, 16), 15);
        // Cell edges: just below and above -pi + width.
        let width = TAU / 16.0;
        assert_eq!(discretize_phase(-PI + width - 1e-9, 16), 0);
        assert_eq!(discretize_phase(-PI + width + 1e-9, 16), 1);
    }

    #[test]
    fn multi_slot_modifies_distinct_bins() {
        let mut cfg = cfg_with(24, false, PhaseMode::Offset);
        cfg.phase.modified = 2;
        cfg.validate().unwrap();
        let (store, p) = setup(&cfg, 2);
        let mut row = tone(24, 3, 5.0, 0.2);
        let other = tone(24, 8, 2.0, -0.6);
        for t in 0..24 {
            row[t] += other[t];
        }
        let mut tape = Tape::new();
        let x = tape.constant(1, 24, row.clone()).unwrap();
        let a = ring(&mut tape, 1);
        let delta = 0.7;
        let (out, trace) =
            phase_forward(&mut tape, &store, &p, &cfg, x, a, a, &mut Mode::Eval, Some(&[delta]))
                .unwrap();
        assert_eq!(trace.branches[0][0].bins, vec![3]);
        assert_eq!(trace.branches[0][1].bins, vec![8]);
        let mut want = tone(24, 3, 5.0, 0.2 + delta);
        let w2 = tone(24, 8, 2.0, -0.6 + delta);
        for t in 0..24 {
            want[t] += w2[t];
        }
        for (g, w) in tape.value(out).iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-9, "{g} vs {w}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        /// Forced offsets through the single-branch path agree with the
        /// value-level spectral pipeline for arbitrary signals.
        #[test]
        fn forced_offset_agrees_with_oracle(
            seed in 0u64..1000,
            delta in -3.0f64..3.0,
        ) {
            let l = 24usize;
            let cfg = cfg_with(l, false, PhaseMode::Offset);
            let (store, p) = setup(&cfg, 1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let row: Vec<f64> = (0..l).map(|_| rng.gen_range(-3.0..3.0)).collect();

            let mut tape = Tape::new();
            let x = tape.constant(1, l, row.clone()).unwrap();
            let a = ring(&mut tape, 1);
            let (out, trace) = phase_forward(
                &mut tape, &store, &p, &cfg, x, a, a, &mut Mode::Eval, Some(&[delta]),
            ).unwrap();

            // Oracle: same selection rule, then the value-level pipeline.
            let spec = rfft(&row).unwrap();
            let top = if l % 2 == 0 { spec.bins.len() - 1 } else { spec.bins.len() };
            let mut best = 1usize;
            for k in 2..top {
                if spec.bins[k].amplitude > spec.bins[best].amplitude {
                    best = k;
                }
            }
            prop_assert_eq!(trace.branches[0][0].bins[0], best);
            let want = irfft(&apply_phase(
                &spec, best, spec.bins[best].phase + delta,
            ).unwrap());
            for (g, w) in tape.value(out).iter().zip(want.iter()) {
                prop_assert!((g - w).abs() < 1e-7, "{} vs {}", g, w);
            }
        }
    }
}

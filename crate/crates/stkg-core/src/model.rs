//! Full architecture assembly. The encoder is a stack of masked message
//! passing layers (a sensor never sees its own row) followed by the phase
//! module; the decoder runs two branches — masked message passing on the
//! predefined graph and self-inclusive message passing on the learned graph —
//! each layer wrapped in reversible renormalization and with trusted rows
//! re-imposed after every layer; a linear convergence layer mixes all branch
//! outputs plus the encoder output into the reconstruction. A patch
//! discriminator over the encoder output provides the adversarial signal.
//!
//! No parameter shape depends on the number of sensors, so one trained model
//! applies to any sensor set (the kriging setting requires exactly that).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{DiffTensor, ParamGroup, ParamId, ParamStore, Tape};
use crate::config::ModelConfig;
use crate::data::KrigeBatch;
use crate::error::{Error, Result};
use crate::graph::{gin_layer, masked_gnn_layer};
use crate::metagraph::{build_embedding, dynamic_graph, MetaGraphParams, WindowMeta};
use crate::nn::{Mlp, Mode};
use crate::phase::{phase_forward, PhaseParams, PhaseTrace};

#[derive(Clone, Debug)]
pub struct RevinParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Clone, Debug)]
pub struct DecMaskedLayer {
    pub mlp: Mlp,
    pub revin: RevinParams,
}

#[derive(Clone, Debug)]
pub struct DecGinLayer {
    pub eps: ParamId,
    pub mlp: Mlp,
    pub revin: RevinParams,
}

#[derive(Clone, Debug)]
pub struct ConvergenceParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Clone, Debug)]
pub struct Architecture {
    pub encoder: Vec<Mlp>,
    pub metagraph: MetaGraphParams,
    pub phase: PhaseParams,
    pub dec_masked: Vec<DecMaskedLayer>,
    pub dec_gin: Vec<DecGinLayer>,
    pub convergence: ConvergenceParams,
    pub discriminator: Mlp,
}

#[derive(Clone, Debug)]
pub struct ModelState {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub arch: Architecture,
}

/// What one window's forward pass produces.
pub struct ForwardOutput {
    /// Reconstruction, `n x series_len`.
    pub xhat: DiffTensor,
    /// Encoder output (input to both decoder branches and the
    /// discriminator), `n x series_len`.
    pub z: DiffTensor,
    /// Message-passing output before the phase stage (the phase stage's
    /// input; equals `z` when that stage is disabled). Useful for probing
    /// how far the phase stage translated each row.
    pub pre_phase: DiffTensor,
    pub trace: PhaseTrace,
}

/// Deterministically build a model: same config and seed, same parameters.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<ModelState> {
    config.validate()?;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = config.series_len;
    let h = config.hidden;

    let mut encoder = Vec::with_capacity(config.encoder_layers);
    for k in 0..config.encoder_layers {
        encoder.push(Mlp::register_near_identity(
            &mut store,
            &format!("enc.{k}"),
            l,
            h,
            ParamGroup::Encoder,
            &mut rng,
        )?);
    }
    let metagraph = MetaGraphParams::register(&mut store, config, &mut rng)?;
    let phase = PhaseParams::register(&mut store, config, &mut rng)?;

    let register_revin = |store: &mut ParamStore, prefix: &str| -> Result<RevinParams> {
        let gamma =
            store.add(format!("{prefix}.gamma"), 1, l, vec![1.0; l], true, ParamGroup::Decoder)?;
        let beta =
            store.add(format!("{prefix}.beta"), 1, l, vec![0.0; l], true, ParamGroup::Decoder)?;
        Ok(RevinParams { gamma, beta })
    };
    let mut dec_masked = Vec::with_capacity(config.decoder_layers);
    for j in 0..config.decoder_layers {
        let mlp = Mlp::register_near_identity(
            &mut store,
            &format!("dec.masked.{j}"),
            l,
            h,
            ParamGroup::Decoder,
            &mut rng,
        )?;
        let revin = register_revin(&mut store, &format!("dec.masked.{j}"))?;
        dec_masked.push(DecMaskedLayer { mlp, revin });
    }
    let mut dec_gin = Vec::with_capacity(config.decoder_layers);
    for j in 0..config.decoder_layers {
        let eps =
            store.add(format!("dec.gin.{j}.eps"), 1, 1, vec![0.0], true, ParamGroup::Decoder)?;
        let mlp = Mlp::register_near_identity(
            &mut store,
            &format!("dec.gin.{j}"),
            l,
            h,
            ParamGroup::Decoder,
            &mut rng,
        )?;
        let revin = register_revin(&mut store, &format!("dec.gin.{j}"))?;
        dec_gin.push(DecGinLayer { eps, mlp, revin });
    }

    let channels = 2 * config.decoder_layers + 1;
    // The channel mix starts as a plain average so the initial output is the
    // mean of branch reconstructions rather than a random combination.
    let mut conv_w1 = vec![0.0; channels * channels];
    for i in 0..channels {
        conv_w1[i * channels + i] = 1.0;
    }
    let convergence = ConvergenceParams {
        w1: store.add("conv.w1", channels, channels, conv_w1, true, ParamGroup::Convergence)?,
        b1: store.add("conv.b1", channels, 1, vec![0.0; channels], true, ParamGroup::Convergence)?,
        w2: store.add(
            "conv.w2",
            1,
            channels,
            vec![1.0 / channels as f64; channels],
            true,
            ParamGroup::Convergence,
        )?,
        b2: store.add("conv.b2", 1, 1, vec![0.0], true, ParamGroup::Convergence)?,
    };
    let discriminator = Mlp::register(
        &mut store,
        "disc",
        config.patch_len,
        config.disc_hidden,
        2,
        ParamGroup::Discriminator,
        &mut rng,
    )?;

    Ok(ModelState {
        config: config.clone(),
        store,
        arch: Architecture {
            encoder,
            metagraph,
            phase,
            dec_masked,
            dec_gin,
            convergence,
            discriminator,
        },
    })
}

/// Row renormalization: per-row mean/deviation are recorded, the row is
/// standardized, then an elementwise affine (shared across sensors) applies.
/// `denormalize` inverts both with the recorded statistics.
pub fn revin_normalize(
    tape: &mut Tape,
    store: &ParamStore,
    rv: &RevinParams,
    x: DiffTensor,
) -> Result<(DiffTensor, DiffTensor, DiffTensor)> {
    let l = x.cols;
    let ones = tape.constant(l, 1, vec![1.0; l])?;
    let sums = tape.matmul(x, ones)?;
    let mu = tape.scale(sums, 1.0 / l as f64);
    let neg_mu = tape.negate(mu);
    let centered = tape.add_col(x, neg_mu)?;
    let sq = tape.mul(centered, centered)?;
    let var_sum = tape.matmul(sq, ones)?;
    let var = tape.scale(var_sum, 1.0 / l as f64);
    let var = tape.offset(var, 1e-12);
    let dev = tape.sqrt(var);
    let dev = tape.offset(dev, 1e-5);
    let inv = tape.recip(dev);
    let xn = tape.mul_col(centered, inv)?;
    let gamma = tape.bind_param(store, rv.gamma);
    let beta = tape.bind_param(store, rv.beta);
    let xn = tape.mul_row(xn, gamma)?;
    let xn = tape.add_row(xn, beta)?;
    Ok((xn, mu, dev))
}

pub fn revin_denormalize(
    tape: &mut Tape,
    store: &ParamStore,
    rv: &RevinParams,
    y: DiffTensor,
    mu: DiffTensor,
    dev: DiffTensor,
) -> Result<DiffTensor> {
    let gamma = tape.bind_param(store, rv.gamma);
    let beta = tape.bind_param(store, rv.beta);
    let neg_beta = tape.negate(beta);
    let y = tape.add_row(y, neg_beta)?;
    let inv_gamma = tape.recip(gamma);
    let y = tape.mul_row(y, inv_gamma)?;
    let y = tape.mul_col(y, dev)?;
    tape.add_col(y, mu)
}

impl ModelState {
    /// Forward pass over one window.
    pub fn forward_on(
        &self,
        tape: &mut Tape,
        batch: &KrigeBatch,
        mode: &mut Mode,
    ) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let store = &self.store;
        let n = batch.rows();
        let l = cfg.series_len;
        if n == 0 {
            return Err(Error::Invalid("batch has no rows".into()));
        }
        if batch.x.iter().any(|r| r.len() != l)
            || batch.restore.len() != n
            || batch.adjacency.n() != n
        {
            return Err(Error::Invalid(format!(
                "batch shapes disagree with a window length of {l} over {n} sensors"
            )));
        }

        let flat: Vec<f64> = batch.x.iter().flatten().copied().collect();
        let x0 = tape.constant(n, l, flat)?;
        let a_pred = batch.adjacency.bind(tape)?;

        // Encoder: masked message passing, then phase correction.
        let mut h = x0;
        for mlp in &self.arch.encoder {
            h = masked_gnn_layer(tape, h, a_pred, |t, m| mlp.apply(t, store, m, mode))?;
        }

        // Learned adjacencies from metadata (per branch).
        let (a_trend, a_resid) = if cfg.ablation.no_dynamic_graph {
            (a_pred, a_pred)
        } else {
            let meta = WindowMeta {
                series_rows: &batch.x,
                coords: batch.coords.as_deref(),
                tod: batch.tod,
                dow: batch.dow,
            };
            let de = build_embedding(tape, store, &self.arch.metagraph, cfg, &meta, mode)?;
            let at = dynamic_graph(tape, store, de, self.arch.metagraph.edge_trend, cfg.topk)?;
            let ar = dynamic_graph(tape, store, de, self.arch.metagraph.edge_resid, cfg.topk)?;
            (at, ar)
        };

        let pre_phase = h;
        let (z, trace) = if cfg.ablation.no_phase_module {
            (h, PhaseTrace::default())
        } else {
            let (pt, pr) = if cfg.ablation.predefined_phase_graph {
                (a_pred, a_pred)
            } else {
                (a_trend, a_resid)
            };
            phase_forward(tape, store, &self.arch.phase, cfg, h, pt, pr, mode, None)?
        };

        // Constants for re-imposing trusted rows after every decoder layer.
        let free_col: Vec<f64> =
            batch.restore.iter().map(|&r| if r { 0.0 } else { 1.0 }).collect();
        let free_col = tape.constant(n, 1, free_col)?;
        let mut keep = vec![0.0; n * l];
        for (i, row) in batch.x.iter().enumerate() {
            if batch.restore[i] {
                keep[i * l..(i + 1) * l].copy_from_slice(row);
            }
        }
        let keep = tape.constant(n, l, keep)?;
        let reimpose = |tape: &mut Tape, y: DiffTensor| -> Result<DiffTensor> {
            let fr = tape.mul_col(y, free_col)?;
            tape.add(fr, keep)
        };

        let mut channels: Vec<DiffTensor> = Vec::with_capacity(2 * cfg.decoder_layers + 1);
        let mut cur = z;
        for layer in &self.arch.dec_masked {
            let (xn, mu, dev) = if cfg.ablation.no_revin {
                (cur, None, None)
            } else {
                let (xn, mu, dev) = revin_normalize(tape, store, &layer.revin, cur)?;
                (xn, Some(mu), Some(dev))
            };
            let y = masked_gnn_layer(tape, xn, a_pred, |t, m| mlp_of(&layer.mlp, t, store, m, mode))?;
            let y = match (mu, dev) {
                (Some(mu), Some(dev)) => revin_denormalize(tape, store, &layer.revin, y, mu, dev)?,
                _ => y,
            };
            cur = reimpose(tape, y)?;
            channels.push(cur);
        }
        let mut cur = z;
        for layer in &self.arch.dec_gin {
            let (xn, mu, dev) = if cfg.ablation.no_revin {
                (cur, None, None)
            } else {
                let (xn, mu, dev) = revin_normalize(tape, store, &layer.revin, cur)?;
                (xn, Some(mu), Some(dev))
            };
            let eps = tape.bind_param(store, layer.eps);
            let y = gin_layer(tape, xn, a_resid, eps, |t, m| {
                mlp_of(&layer.mlp, t, store, m, mode)
            })?;
            let y = match (mu, dev) {
                (Some(mu), Some(dev)) => revin_denormalize(tape, store, &layer.revin, y, mu, dev)?,
                _ => y,
            };
            cur = reimpose(tape, y)?;
            channels.push(cur);
        }
        channels.push(z);

        // Convergence: two linear mixes across the channel axis.
        let c = channels.len();
        let mut rows = Vec::with_capacity(c);
        for ch in channels {
            rows.push(tape.reshape(ch, 1, n * l)?);
        }
        let stacked = tape.concat_rows(&rows)?;
        let w1 = tape.bind_param(store, self.arch.convergence.w1);
        let b1 = tape.bind_param(store, self.arch.convergence.b1);
        let w2 = tape.bind_param(store, self.arch.convergence.w2);
        let b2 = tape.bind_param(store, self.arch.convergence.b2);
        let y = tape.matmul(w1, stacked)?;
        let y = tape.add_col(y, b1)?;
        let y = tape.matmul(w2, y)?;
        let y = tape.add_col(y, b2)?;
        let xhat = tape.reshape(y, n, l)?;

        Ok(ForwardOutput { xhat, z, pre_phase, trace })
    }

    /// Patch logits over an encoder output: the window splits into
    /// `series_len / patch_len` column patches, every (patch, sensor) pair
    /// becomes one row, and a shared classifier scores each row. With
    /// `grl_lambda` set, gradients flowing back into `z` are reversed and
    /// scaled. Row order: patch-major, sensors in batch order inside a patch.
    pub fn discriminate(
        &self,
        tape: &mut Tape,
        z: DiffTensor,
        grl_lambda: Option<f64>,
        mode: &mut Mode,
    ) -> Result<DiffTensor> {
        let l = self.config.series_len;
        let pl = self.config.patch_len;
        let c = l / pl;
        if c == 0 {
            return Err(Error::Invalid(format!("patch length {pl} exceeds window {l}")));
        }
        let zin = match grl_lambda {
            Some(lambda) => tape.grad_reverse(z, lambda),
            None => z,
        };
        let mut patches = Vec::with_capacity(c);
        for p in 0..c {
            patches.push(tape.slice_cols(zin, p * pl, pl)?);
        }
        let stacked = tape.concat_rows(&patches)?;
        self.arch.discriminator.apply(tape, &self.store, stacked, mode)
    }

    /// Evaluation-mode reconstruction of a batch, with trusted rows restored
    /// to their observations.
    pub fn krige(&self, batch: &KrigeBatch) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let out = self.forward_on(&mut tape, batch, &mut Mode::Eval)?;
        let l = self.config.series_len;
        let vals = tape.value(out.xhat);
        Ok((0..batch.rows())
            .map(|i| {
                if batch.restore[i] {
                    batch.x[i].clone()
                } else {
                    vals[i * l..(i + 1) * l].to_vec()
                }
            })
            .collect())
    }
}

fn mlp_of(
    mlp: &Mlp,
    tape: &mut Tape,
    store: &ParamStore,
    x: DiffTensor,
    mode: &mut Mode,
) -> Result<DiffTensor> {
    mlp.apply(tape, store, x, mode)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::config::Ablation;
    use crate::data::{eval_batch, generate_synthetic, make_split, train_batch, EvalScope,
                      SyntheticSpec};

    pub(crate) fn small_config() -> ModelConfig {
        let mut cfg = ModelConfig::default();
        cfg.series_len = 12;
        cfg.hidden = 10;
        cfg.encoder_layers = 2;
        cfg.decoder_layers = 2;
        cfg.label_dim = 6;
        cfg.meta_dim = 8;
        cfg.digit_dim = 3;
        cfg.attn_heads = 2;
        cfg.topk = 3;
        cfg.patch_len = 4;
        cfg.disc_hidden = 6;
        cfg.steps_per_day = 24;
        cfg.phase.bins = 16;
        cfg.phase.embed_dim = 5;
        cfg.phase.hidden = 6;
        cfg.phase.layers = 1;
        cfg.phase.trend_window = 3;
        cfg.validate().unwrap();
        cfg
    }

    fn batch_pair() -> (ModelState, KrigeBatch, KrigeBatch) {
        let cfg = small_config();
        let model = init_model(&cfg, 7).unwrap();
        let synth = generate_synthetic(&SyntheticSpec {
            sensors: 9,
            steps: 120,
            seed: 11,
            noise: 0.2,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let ds = synth.dataset;
        let split = make_split(ds.n(), ds.t(), (7, 1, 2), 2).unwrap();
        let tb = train_batch(&ds, &split, 5, cfg.series_len, &[0, 2]).unwrap();
        let eb = eval_batch(&ds, &split, split.t_train, cfg.series_len, EvalScope::Test).unwrap();
        (model, tb, eb)
    }

    #[test]
    fn init_is_deterministic_and_grouped() {
        let cfg = small_config();
        let a = init_model(&cfg, 3).unwrap();
        let b = init_model(&cfg, 3).unwrap();
        let c = init_model(&cfg, 4).unwrap();
        assert_eq!(a.store.registry(), b.store.registry());
        for ((_, pa), (_, pb)) in a.store.iter().zip(b.store.iter()) {
            assert_eq!(pa.value, pb.value);
        }
        assert!(
            a.store.iter().zip(c.store.iter()).any(|((_, x), (_, y))| x.value != y.value),
            "different seeds give different weights"
        );
        for group in [
            ParamGroup::Encoder,
            ParamGroup::MetaGraph,
            ParamGroup::Phase,
            ParamGroup::Decoder,
            ParamGroup::Convergence,
            ParamGroup::Discriminator,
        ] {
            assert!(
                a.store.iter().any(|(_, p)| p.group == group),
                "missing parameter group {group:?}"
            );
        }
        assert!(a.store.iter().any(|(_, p)| !p.trainable), "frozen table present");
    }

    #[test]
    fn forward_shapes_and_eval_determinism() {
        let (model, tb, eb) = batch_pair();
        let l = model.config.series_len;
        let run = |b: &KrigeBatch| {
            let mut tape = Tape::new();
            let out = model.forward_on(&mut tape, b, &mut Mode::Eval).unwrap();
            assert_eq!((out.xhat.rows, out.xhat.cols), (b.rows(), l));
            assert_eq!((out.z.rows, out.z.cols), (b.rows(), l));
            let v = tape.value(out.xhat).to_vec();
            assert!(v.iter().all(|x| x.is_finite()));
            v
        };
        assert_eq!(run(&tb), run(&tb));
        assert_eq!(run(&eb), run(&eb));
    }

    #[test]
    fn forward_is_permutation_equivariant() {
        let (model, tb, _) = batch_pair();
        let l = model.config.series_len;
        let n = tb.rows();
        let perm: Vec<usize> = (0..n).map(|i| (i * 3 + 2) % n).collect();
        {
            // perm must be a bijection for the test to make sense
            let mut sorted = perm.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        }
        let mut tape = Tape::new();
        let base = model.forward_on(&mut tape, &tb, &mut Mode::Eval).unwrap();
        let base_vals = tape.value(base.xhat).to_vec();

        let pb = tb.permuted(&perm).unwrap();
        let mut tape2 = Tape::new();
        let permuted = model.forward_on(&mut tape2, &pb, &mut Mode::Eval).unwrap();
        let perm_vals = tape2.value(permuted.xhat);

        for (new_r, &old_r) in perm.iter().enumerate() {
            for t in 0..l {
                let a = perm_vals[new_r * l + t];
                let b = base_vals[old_r * l + t];
                assert!(
                    (a - b).abs() < 1e-8,
                    "row {new_r} (was {old_r}) t={t}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn train_mode_dropout_is_seed_deterministic() {
        let (model, tb, _) = batch_pair();
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut tape = Tape::new();
            let out = model
                .forward_on(&mut tape, &tb, &mut Mode::Train { dropout: 0.3, rng: &mut rng })
                .unwrap();
            tape.value(out.xhat).to_vec()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn discriminator_rows_and_grl_sign_flip() {
        let (model, tb, _) = batch_pair();
        let n = tb.rows();
        let c = model.config.series_len / model.config.patch_len;

        let grads_with = |lambda: Option<f64>| {
            let mut tape = Tape::new();
            let out = model.forward_on(&mut tape, &tb, &mut Mode::Eval).unwrap();
            let logits = model.discriminate(&mut tape, out.z, lambda, &mut Mode::Eval).unwrap();
            assert_eq!((logits.rows, logits.cols), (c * n, 2));
            let s = tape.sum_all(logits);
            let sq = tape.mul(s, s).unwrap();
            tape.backward(sq).unwrap();
            tape.param_grads(&model.store)
        };
        let g_plain = grads_with(None);
        let g_rev = grads_with(Some(1.0));
        let enc_w1 = model.arch.encoder[0].w1;
        let a = g_plain.get(enc_w1).expect("encoder reached");
        let b = g_rev.get(enc_w1).expect("encoder reached through reversal");
        assert!(a.iter().any(|v| v.abs() > 1e-12));
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x + y).abs() < 1e-10, "reversal must negate upstream gradients");
        }
        // Discriminator's own gradients are identical either way.
        let d_plain = g_plain.get(model.arch.discriminator.w1).unwrap();
        let d_rev = g_rev.get(model.arch.discriminator.w1).unwrap();
        for (x, y) in d_plain.iter().zip(d_rev.iter()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn revin_round_trips_and_passes_zero_rows() {
        let cfg = small_config();
        let model = init_model(&cfg, 1).unwrap();
        let rv = &model.arch.dec_masked[0].revin;
        let mut tape = Tape::new();
        let mut data = vec![0.0; 3 * cfg.series_len];
        for (i, v) in data.iter_mut().enumerate() {
            *v = ((i * 37 % 17) as f64 - 8.0) * 0.35;
        }
        data[cfg.series_len..2 * cfg.series_len].fill(0.0);
        let x = tape.constant(3, cfg.series_len, data.clone()).unwrap();
        let (xn, mu, dev) = revin_normalize(&mut tape, &model.store, rv, x).unwrap();
        let back = revin_denormalize(&mut tape, &model.store, rv, xn, mu, dev).unwrap();
        for (a, b) in tape.value(back).iter().zip(data.iter()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        // The zero row stays finite through normalization.
        assert!(tape.value(xn).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn all_ablations_run_and_stay_finite() {
        let synth = generate_synthetic(&SyntheticSpec {
            sensors: 8,
            steps: 80,
            seed: 3,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let ds = synth.dataset;
        let split = make_split(ds.n(), ds.t(), (7, 1, 2), 1).unwrap();
        let flags =
            ["S", "S-location", "S-timestamp", "T", "T-phasegraph", "T-decouple", "A", "Revin"];
        for flag in flags {
            let mut cfg = small_config();
            cfg.ablation = Ablation::parse(&[flag.to_string()]).unwrap();
            let model = init_model(&cfg, 2).unwrap();
            let tb = train_batch(&ds, &split, 0, cfg.series_len, &[1]).unwrap();
            let mut tape = Tape::new();
            let out = model.forward_on(&mut tape, &tb, &mut Mode::Eval).unwrap();
            assert!(
                tape.value(out.xhat).iter().all(|v| v.is_finite()),
                "ablation {flag} produced non-finite output"
            );
        }
    }

    #[test]
    fn krige_restores_trusted_rows() {
        let (model, _, eb) = batch_pair();
        let rows = model.krige(&eb).unwrap();
        for i in 0..eb.rows() {
            if eb.restore[i] {
                assert_eq!(rows[i], eb.x[i]);
            } else {
                assert!(rows[i].iter().all(|v| v.is_finite()));
            }
        }
    }

    #[test]
    fn works_across_different_sensor_counts() {
        // The same parameters serve batches of any size: that is the point
        // of inductive kriging.
        let cfg = small_config();
        let model = init_model(&cfg, 9).unwrap();
        for sensors in [4usize, 7, 13] {
            let synth = generate_synthetic(&SyntheticSpec {
                sensors,
                steps: 60,
                seed: sensors as u64,
                ..SyntheticSpec::default()
            })
            .unwrap();
            let ds = synth.dataset;
            let split = make_split(ds.n(), ds.t(), (7, 1, 2), 0).unwrap();
            let tb = train_batch(&ds, &split, 0, cfg.series_len, &[0]).unwrap();
            let mut tape = Tape::new();
            let out = model.forward_on(&mut tape, &tb, &mut Mode::Eval).unwrap();
            assert_eq!(out.xhat.rows, split.known.len());
        }
    }
}

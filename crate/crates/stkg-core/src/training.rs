//! Training loop: semi-supervised masking of trusted sensors, a masked
//! reconstruction loss joined with a domain-classification loss through a
//! gradient-reversal stage for the opening epochs, discriminator freezing
//! afterwards, and Adam throughout. Fixed seeds give bit-identical runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AdamState, DiffTensor, ParamGroup, Tape};
use crate::config::TrainConfig;
use crate::data::{make_windows, train_batch, Dataset, EvalScope, SplitPlan};
use crate::error::{Error, Result};
use crate::evalharness::{evaluate_model, MetricReport};
use crate::model::ModelState;
use crate::nn::Mode;

/// Sensors (as indices into the trusted-row order) hidden from one batch's
/// forward pass and treated as the unknown domain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskPlan {
    pub rows: Vec<usize>,
}

/// Draw `ceil(ratio * known)` distinct trusted rows, deterministic under the
/// RNG state. The result is sorted.
pub fn sample_mask(known: usize, ratio: f64, rng: &mut ChaCha8Rng) -> Result<MaskPlan> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Invalid(format!("mask ratio {ratio} outside [0, 1]")));
    }
    if known == 0 {
        return Err(Error::Invalid("no trusted sensors to mask".into()));
    }
    let m = (ratio * known as f64).ceil() as usize;
    let mut idx: Vec<usize> = (0..known).collect();
    for i in 0..m.min(known) {
        let j = rng.gen_range(i..known);
        idx.swap(i, j);
    }
    let mut rows: Vec<usize> = idx[..m.min(known)].to_vec();
    rows.sort_unstable();
    Ok(MaskPlan { rows })
}

/// Domain labels for discriminator patches, patch-major to match the
/// discriminator's row layout: unmasked trusted rows are class 0, masked
/// rows class 1, and each patch's label flips independently with
/// probability `rho`.
pub fn domain_labels(
    masked: &[bool],
    patches: usize,
    rho: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    if !(0.0..0.5).contains(&rho) {
        return Err(Error::Invalid(format!("label-noise fraction {rho} outside [0, 0.5)")));
    }
    let mut labels = Vec::with_capacity(patches * masked.len());
    for _ in 0..patches {
        for m in masked {
            let base = usize::from(*m);
            let flip = rho > 0.0 && rng.gen_range(0.0..1.0) < rho;
            labels.push(if flip { 1 - base } else { base });
        }
    }
    Ok(labels)
}

/// Cross-entropy of two-way logits against hard labels; returns the summed
/// loss tensor plus the row count, so several windows can be pooled into a
/// single mean.
pub fn class_ce_sum(
    tape: &mut Tape,
    logits: DiffTensor,
    labels: &[usize],
) -> Result<(DiffTensor, usize)> {
    if logits.cols != 2 || logits.rows != labels.len() {
        return Err(Error::Invalid(format!(
            "logits {}x{} against {} labels",
            logits.rows,
            logits.cols,
            labels.len()
        )));
    }
    let mut onehot = vec![0.0f64; labels.len() * 2];
    for (r, l) in labels.iter().enumerate() {
        if *l > 1 {
            return Err(Error::Invalid(format!("label {l} is not binary")));
        }
        onehot[r * 2 + l] = 1.0;
    }
    let oh = tape.constant(labels.len(), 2, onehot)?;
    let logp = tape.log_softmax_rows(logits);
    let picked = tape.mul(logp, oh)?;
    let total = tape.sum_all(picked);
    Ok((tape.negate(total), labels.len()))
}

/// Absolute reconstruction error summed over the masked rows' cells
/// (a 1x1 tensor), plus the cell count. Unmasked cells contribute exactly
/// zero gradient: the difference is multiplied by a 0/1 column before the
/// absolute value.
pub fn masked_abs_sum(
    tape: &mut Tape,
    xhat: DiffTensor,
    truth: &[Vec<f64>],
    masked: &[bool],
) -> Result<(DiffTensor, usize)> {
    let n = xhat.rows;
    let l = xhat.cols;
    if truth.len() != n || masked.len() != n {
        return Err(Error::Invalid(format!(
            "prediction has {n} rows, truth {} and mask {}",
            truth.len(),
            masked.len()
        )));
    }
    let flat: Vec<f64> = truth.iter().flat_map(|r| r.iter().copied()).collect();
    if flat.len() != n * l {
        return Err(Error::Invalid("ragged truth rows".into()));
    }
    let t = tape.constant(n, l, flat)?;
    let mask_col: Vec<f64> = masked.iter().map(|m| f64::from(u8::from(*m))).collect();
    let mc = tape.constant(n, 1, mask_col)?;
    let diff = tape.sub(xhat, t)?;
    let gated = tape.mul_col(diff, mc)?;
    let a = tape.abs(gated);
    let count = masked.iter().filter(|m| **m).count() * l;
    Ok((tape.sum_all(a), count))
}

/// One epoch's mean losses.
#[derive(Clone, Copy, Debug)]
pub struct EpochLosses {
    pub main: f64,
    pub discriminator: f64,
}

/// Per-epoch history row.
#[derive(Clone, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss_main: f64,
    pub loss_d: f64,
    pub val_mae: f64,
    pub val_rmse: f64,
    pub val_r2: f64,
}

impl EpochStats {
    pub fn csv_header() -> &'static str {
        "epoch,loss_main,loss_d,val_mae,val_rmse,val_r2"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.loss_main, self.loss_d, self.val_mae, self.val_rmse, self.val_r2
        )
    }
}

pub struct FitResult {
    /// State after the last epoch.
    pub model: ModelState,
    /// Snapshot with the lowest validation MAE.
    pub best: ModelState,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
}

/// Owns everything one training run mutates. Distinct RNG streams feed
/// shuffling, masking, label noise, and dropout so the sequences stay
/// reproducible regardless of batch composition.
pub struct Trainer<'a> {
    pub model: ModelState,
    adam: AdamState,
    ds: &'a Dataset,
    split: &'a SplitPlan,
    cfg: TrainConfig,
    starts: Vec<usize>,
    shuffle_rng: ChaCha8Rng,
    mask_rng: ChaCha8Rng,
    flip_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl<'a> Trainer<'a> {
    pub fn new(
        model: ModelState,
        ds: &'a Dataset,
        split: &'a SplitPlan,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if split.known.is_empty() {
            return Err(Error::Invalid("no trusted sensors to train on".into()));
        }
        let l = model.config.series_len;
        let plan = make_windows(0, split.t_train, l, cfg.train_stride)?;
        if plan.starts.is_empty() {
            return Err(Error::Invalid(format!(
                "training span {} is shorter than one window of {l}",
                split.t_train
            )));
        }
        let adam = AdamState::new(&model.store, cfg.lr);
        Ok(Trainer {
            model,
            adam,
            ds,
            split,
            cfg: cfg.clone(),
            starts: plan.starts,
            shuffle_rng: stream(cfg.seed, 1),
            mask_rng: stream(cfg.seed, 2),
            flip_rng: stream(cfg.seed, 3),
            dropout_rng: stream(cfg.seed, 4),
        })
    }

    /// Whether the domain loss still trains (and reverses into the encoder)
    /// at a 1-based epoch index.
    pub fn adversarial_active(&self, epoch: usize) -> bool {
        epoch <= self.cfg.adversarial_rounds && !self.model.config.ablation.no_adversarial
    }

    /// One pass over every training window in shuffled batches. `epoch` is
    /// 1-based. Returns the mean per-batch losses; the domain loss is always
    /// evaluated for the history, but only steps parameters while the
    /// adversarial stage is active.
    pub fn run_epoch(&mut self, epoch: usize) -> Result<EpochLosses> {
        let adversarial = self.adversarial_active(epoch);
        let l = self.model.config.series_len;
        let known = self.split.known.len();
        let mut order = self.starts.clone();
        for i in (1..order.len()).rev() {
            let j = self.shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut main_total = 0.0f64;
        let mut disc_total = 0.0f64;
        let mut batches = 0usize;
        for (batch_no, chunk) in order.chunks(self.cfg.batch_size.max(1)).enumerate() {
            let plan = sample_mask(known, self.cfg.mask_ratio, &mut self.mask_rng)?;
            let mut tape = Tape::new();
            let mut main_parts: Vec<DiffTensor> = Vec::new();
            let mut main_count = 0usize;
            let mut disc_parts: Vec<DiffTensor> = Vec::new();
            let mut disc_rows = 0usize;
            for &start in chunk {
                let batch = train_batch(self.ds, self.split, start, l, &plan.rows)?;
                let mut mode = Mode::Train {
                    dropout: self.cfg.dropout,
                    rng: &mut self.dropout_rng,
                };
                let out = self.model.forward_on(&mut tape, &batch, &mut mode)?;
                let (part, count) = masked_abs_sum(&mut tape, out.xhat, &batch.truth, &batch.masked)?;
                if count > 0 {
                    main_parts.push(part);
                    main_count += count;
                }
                let grl = if adversarial { Some(self.cfg.grl_lambda) } else { None };
                let logits = self.model.discriminate(&mut tape, out.z, grl, &mut mode)?;
                let patches = logits.rows / batch.rows();
                let labels =
                    domain_labels(&batch.masked, patches, self.cfg.label_noise, &mut self.flip_rng)?;
                let (ce, rows) = class_ce_sum(&mut tape, logits, &labels)?;
                disc_parts.push(ce);
                disc_rows += rows;
            }
            let loss_main = if main_count > 0 {
                let total = sum_parts(&mut tape, &main_parts)?;
                tape.scale(total, 1.0 / main_count as f64)
            } else {
                log::warn!("epoch {epoch} batch {batch_no}: empty mask, main loss is 0");
                tape.constant(1, 1, vec![0.0])?
            };
            let loss_d = {
                let total = sum_parts(&mut tape, &disc_parts)?;
                tape.scale(total, 1.0 / disc_rows.max(1) as f64)
            };
            let loss = if adversarial { tape.add(loss_main, loss_d)? } else { loss_main };
            let (lm, ld, lv) = (
                tape.value(loss_main)[0],
                tape.value(loss_d)[0],
                tape.value(loss)[0],
            );
            if !lv.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}, batch {batch_no}: main={lm}, domain={ld}"
                )));
            }
            tape.backward(loss)?;
            let grads = tape.param_grads(&self.model.store);
            self.adam.step(&mut self.model.store, &grads, |p| {
                !adversarial && p.group == ParamGroup::Discriminator
            })?;
            main_total += lm;
            disc_total += ld;
            batches += 1;
        }
        Ok(EpochLosses {
            main: main_total / batches.max(1) as f64,
            discriminator: disc_total / batches.max(1) as f64,
        })
    }
}

fn sum_parts(tape: &mut Tape, parts: &[DiffTensor]) -> Result<DiffTensor> {
    match parts.split_first() {
        None => tape.constant(1, 1, vec![0.0]),
        Some((first, rest)) => {
            let mut acc = *first;
            for p in rest {
                acc = tape.add(acc, *p)?;
            }
            Ok(acc)
        }
    }
}

/// Full training run: shuffled masked batches per epoch, validation metrics
/// after each epoch, best-validation snapshot returned alongside the final
/// state. The callback sees every epoch's stats and the current model.
pub fn fit(
    model: ModelState,
    ds: &Dataset,
    split: &SplitPlan,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats, &ModelState) -> Result<()>,
) -> Result<FitResult> {
    let mut trainer = Trainer::new(model, ds, split, cfg)?;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ModelState)> = None;
    for epoch in 1..=cfg.epochs {
        let losses = trainer.run_epoch(epoch)?;
        let val = evaluate_model(&trainer.model, ds, split, EvalScope::Val)?;
        let stats = EpochStats {
            epoch,
            loss_main: losses.main,
            loss_d: losses.discriminator,
            val_mae: val.mae,
            val_rmse: val.rmse,
            val_r2: val.r2,
        };
        let better = match &best {
            None => true,
            Some((mae, ..)) => stats.val_mae < *mae,
        };
        if better {
            best = Some((stats.val_mae, epoch, trainer.model.clone()));
        }
        on_epoch(&stats, &trainer.model)?;
        history.push(stats);
    }
    let (_, best_epoch, best_model) =
        best.ok_or_else(|| Error::Invalid("training ran zero epochs".into()))?;
    Ok(FitResult {
        model: trainer.model,
        best: best_model,
        best_epoch,
        history,
    })
}

/// A configuration small enough to finite-difference every trainable
/// coordinate in seconds.
pub fn gradcheck_config() -> crate::config::ModelConfig {
    let mut cfg = crate::config::ModelConfig {
        series_len: 8,
        hidden: 6,
        encoder_layers: 1,
        decoder_layers: 1,
        label_dim: 4,
        meta_dim: 6,
        digit_dim: 2,
        attn_heads: 2,
        topk: 2,
        patch_len: 4,
        disc_hidden: 4,
        steps_per_day: 24,
        ..crate::config::ModelConfig::default()
    };
    cfg.phase.bins = 8;
    cfg.phase.embed_dim = 3;
    cfg.phase.hidden = 4;
    cfg.phase.layers = 1;
    cfg.phase.modified = 1;
    cfg.phase.trend_window = 3;
    cfg
}

/// Central finite differences over every trainable coordinate of a freshly
/// seeded model, against the reverse-mode gradient of the joint loss on one
/// deterministic synthetic batch. The discriminator path runs without
/// gradient reversal here: reversal is forward-identity, so the loss value
/// is unchanged, and with it in place the reverse-mode gradient would (by
/// design) not be the derivative finite differences measure.
pub fn full_model_gradcheck(
    cfg: &crate::config::ModelConfig,
    seed: u64,
    h: f64,
) -> Result<crate::autodiff::GradCheckReport> {
    cfg.validate()?;
    if 1440 % cfg.steps_per_day != 0 {
        return Err(Error::Invalid(format!(
            "steps per day {} does not divide a day of minutes",
            cfg.steps_per_day
        )));
    }
    let spec = crate::data::SyntheticSpec {
        sensors: 5,
        steps: cfg.series_len * 3,
        seed,
        period: cfg.series_len,
        shift_max: 2,
        noise: 0.1,
        neighbors: 3,
        step_minutes: (1440 / cfg.steps_per_day) as u32,
        shifts: None,
    };
    let synth = crate::data::generate_synthetic(&spec)?;
    let split = crate::data::make_split(spec.sensors, spec.steps, (7, 1, 2), seed)?;
    let batch = train_batch(&synth.dataset, &split, 0, cfg.series_len, &[0, 2])?;
    let model = crate::model::init_model(cfg, seed)?;
    let mut label_rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = domain_labels(
        &batch.masked,
        cfg.series_len / cfg.patch_len,
        0.0,
        &mut label_rng,
    )?;
    let arch = model.arch.clone();
    let model_cfg = model.config.clone();
    let forward = |tape: &mut Tape, store: &crate::autodiff::ParamStore| {
        let m = ModelState {
            config: model_cfg.clone(),
            store: store.clone(),
            arch: arch.clone(),
        };
        let out = m.forward_on(tape, &batch, &mut Mode::Eval)?;
        let (s, count) = masked_abs_sum(tape, out.xhat, &batch.truth, &batch.masked)?;
        let main = tape.scale(s, 1.0 / count.max(1) as f64);
        let logits = m.discriminate(tape, out.z, None, &mut Mode::Eval)?;
        let (ce, rows) = class_ce_sum(tape, logits, &labels)?;
        let domain = tape.scale(ce, 1.0 / rows as f64);
        tape.add(main, domain)
    };
    crate::autodiff::check_param_gradients(forward, &model.store, h)
}

/// One row of the known/validation/unknown ratio sweep.
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub x: u32,
    pub y: u32,
    pub z: u32,
    pub seed: u64,
    pub mae: f64,
    pub rmse: f64,
    pub r2: f64,
}

impl SweepRow {
    pub fn csv_header() -> &'static str {
        "x,y,z,seed,mae,rmse,r2"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.x, self.y, self.z, self.seed, self.mae, self.rmse, self.r2
        )
    }
}

/// Re-split, retrain, and score the test sensors for every (ratio, seed)
/// pair. Each run gets an isolated RNG lineage from its own seed.
pub fn missing_rate_sweep(
    ds: &Dataset,
    model_cfg: &crate::config::ModelConfig,
    train_cfg: &TrainConfig,
    ratios: &[(u32, u32, u32)],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(ratios.len() * seeds.len());
    for &(x, y, z) in ratios {
        for &seed in seeds {
            let split = crate::data::make_split(ds.n(), ds.t(), (x, y, z), seed)?;
            let model = crate::model::init_model(model_cfg, seed)?;
            let mut cfg = train_cfg.clone();
            cfg.seed = seed;
            let result = fit(model, ds, &split, &cfg, |_, _| Ok(()))?;
            let report: MetricReport =
                evaluate_model(&result.best, ds, &split, EvalScope::Test)?;
            log::info!(
                "sweep {x}K{y}V{z}U seed {seed}: test mae {:.4} rmse {:.4}",
                report.mae,
                report.rmse
            );
            rows.push(SweepRow {
                x,
                y,
                z,
                seed,
                mae: report.mae,
                rmse: report.rmse,
                r2: report.r2,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, make_split, SyntheticSpec};
    use crate::model::{init_model, tests::small_config};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn mask_sampling_contract() {
        let mut r = rng(1);
        assert!(sample_mask(7, 0.0, &mut r).unwrap().rows.is_empty());
        assert_eq!(sample_mask(7, 1.0, &mut r).unwrap().rows, (0..7).collect::<Vec<_>>());
        let m = sample_mask(7, 0.25, &mut r).unwrap();
        assert_eq!(m.rows.len(), 2); // ceil(1.75)
        assert!(m.rows.windows(2).all(|w| w[0] < w[1]));
        assert!(m.rows.iter().all(|&i| i < 7));
        let a = sample_mask(10, 0.4, &mut rng(9)).unwrap();
        let b = sample_mask(10, 0.4, &mut rng(9)).unwrap();
        assert_eq!(a, b);
        assert!(sample_mask(5, 1.5, &mut r).is_err());
    }

    #[test]
    fn label_noise_flips_about_rho_fraction() {
        let masked = vec![false, true, false, true, false, false, true, false, true, false];
        let mut r = rng(3);
        let labels = domain_labels(&masked, 100, 0.1, &mut r).unwrap();
        assert_eq!(labels.len(), 1000);
        let flips: usize = labels
            .iter()
            .enumerate()
            .filter(|(i, l)| **l != usize::from(masked[i % 10]))
            .count();
        assert!((70..=130).contains(&flips), "{flips} flips");
        let clean = domain_labels(&masked, 3, 0.0, &mut r).unwrap();
        for (i, l) in clean.iter().enumerate() {
            assert_eq!(*l, usize::from(masked[i % 10]));
        }
        assert!(domain_labels(&masked, 1, 0.5, &mut r).is_err());
    }

    #[test]
    fn cross_entropy_matches_chance_and_confidence() {
        let mut tape = Tape::new();
        let logits = tape.leaf(4, 2, vec![0.0; 8]).unwrap();
        let (ce, n) = class_ce_sum(&mut tape, logits, &[0, 1, 0, 1]).unwrap();
        assert_eq!(n, 4);
        let mean = tape.value(ce)[0] / 4.0;
        assert!((mean - std::f64::consts::LN_2).abs() < 1e-12);

        let mut tape = Tape::new();
        let confident = tape
            .leaf(2, 2, vec![12.0, -12.0, -12.0, 12.0])
            .unwrap();
        let (ce, _) = class_ce_sum(&mut tape, confident, &[0, 1]).unwrap();
        assert!(tape.value(ce)[0] / 2.0 < 1e-3);
    }

    #[test]
    fn masked_mae_examples_and_unmasked_invariance() {
        let mut tape = Tape::new();
        let xhat = tape.leaf(2, 2, vec![1.0, 3.0, 50.0, -50.0]).unwrap();
        let truth = vec![vec![1.0, 2.0], vec![0.0, 0.0]];
        let masked = vec![true, false];
        let (s, count) = masked_abs_sum(&mut tape, xhat, &truth, &masked).unwrap();
        assert_eq!(count, 2);
        assert!((tape.value(s)[0] / count as f64 - 0.5).abs() < 1e-12);
        tape.backward(s).unwrap();
        let g = tape.grad(xhat).unwrap();
        assert_eq!(&g[2..4], &[0.0, 0.0], "unmasked rows carry zero gradient");
        assert!(g[1] != 0.0);
    }

    fn tiny_setup(
        sensors: usize,
        steps: usize,
    ) -> (crate::data::Synthetic, SplitPlan, crate::config::ModelConfig) {
        let spec = SyntheticSpec {
            sensors,
            steps,
            step_minutes: 60,
            ..SyntheticSpec::default()
        };
        let synth = generate_synthetic(&spec).unwrap();
        let split = make_split(sensors, steps, (7, 1, 2), 0).unwrap();
        let mut cfg = small_config();
        cfg.steps_per_day = 24;
        (synth, split, cfg)
    }

    fn tiny_train_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 16,
            lr: 0.003,
            adversarial_rounds: 2,
            grl_lambda: 1.0,
            dropout: 0.3,
            mask_ratio: 0.25,
            label_noise: 0.05,
            train_stride: 4,
            seed: 7,
        }
    }

    #[test]
    fn fixed_seed_runs_are_bit_identical() {
        let (synth, split, mcfg) = tiny_setup(10, 120);
        let tcfg = tiny_train_cfg();
        let run = || {
            let model = init_model(&mcfg, 1).unwrap();
            fit(model, &synth.dataset, &split, &tcfg, |_, _| Ok(())).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.history.len(), tcfg.epochs);
        for (ha, hb) in a.history.iter().zip(&b.history) {
            assert_eq!(ha.loss_main, hb.loss_main);
            assert_eq!(ha.loss_d, hb.loss_d);
            assert_eq!(ha.val_mae, hb.val_mae);
        }
        for ((_, pa), (_, pb)) in a.model.store.iter().zip(b.model.store.iter()) {
            assert_eq!(pa.value, pb.value, "{}", pa.name);
        }
    }

    #[test]
    fn best_checkpoint_attains_min_validation_mae() {
        let (synth, split, mcfg) = tiny_setup(10, 120);
        let tcfg = tiny_train_cfg();
        let model = init_model(&mcfg, 2).unwrap();
        let result = fit(model, &synth.dataset, &split, &tcfg, |_, _| Ok(())).unwrap();
        let min = result
            .history
            .iter()
            .map(|h| h.val_mae)
            .fold(f64::INFINITY, f64::min);
        let best_row = &result.history[result.best_epoch - 1];
        assert_eq!(best_row.val_mae, min);
        let rescored =
            evaluate_model(&result.best, &synth.dataset, &split, EvalScope::Val).unwrap();
        assert!((rescored.mae - min).abs() < 1e-12);
    }

    #[test]
    fn discriminator_frozen_after_adversarial_stage() {
        let (synth, split, mcfg) = tiny_setup(10, 120);
        let mut tcfg = tiny_train_cfg();
        tcfg.epochs = 4;
        tcfg.adversarial_rounds = 2;
        let model = init_model(&mcfg, 3).unwrap();
        let mut at_freeze: Option<Vec<Vec<f64>>> = None;
        let mut moved_during_adversarial = false;
        let initial: Vec<Vec<f64>> = model
            .store
            .iter()
            .filter(|(_, p)| p.group == ParamGroup::Discriminator)
            .map(|(_, p)| p.value.clone())
            .collect();
        let result = fit(model, &synth.dataset, &split, &tcfg, |stats, m| {
            let disc: Vec<Vec<f64>> = m
                .store
                .iter()
                .filter(|(_, p)| p.group == ParamGroup::Discriminator)
                .map(|(_, p)| p.value.clone())
                .collect();
            if stats.epoch == 2 {
                moved_during_adversarial = disc != initial;
                at_freeze = Some(disc);
            } else if stats.epoch > 2 {
                assert_eq!(disc, *at_freeze.as_ref().unwrap(), "epoch {}", stats.epoch);
            }
            Ok(())
        })
        .unwrap();
        assert!(moved_during_adversarial, "discriminator never trained");
        assert_eq!(result.history.len(), 4);
    }

    #[test]
    fn domain_loss_gradient_reverses_exactly_into_encoder() {
        let (synth, split, mcfg) = tiny_setup(10, 96);
        let model = init_model(&mcfg, 5).unwrap();
        let plan = MaskPlan { rows: vec![0, 3] };
        let batch = train_batch(&synth.dataset, &split, 0, mcfg.series_len, &plan.rows).unwrap();
        let grads_with = |grl: Option<f64>| {
            let mut tape = Tape::new();
            let out = model.forward_on(&mut tape, &batch, &mut Mode::Eval).unwrap();
            let logits = model.discriminate(&mut tape, out.z, grl, &mut Mode::Eval).unwrap();
            let labels =
                domain_labels(&batch.masked, logits.rows / batch.rows(), 0.0, &mut rng(0)).unwrap();
            let (ce, rows) = class_ce_sum(&mut tape, logits, &labels).unwrap();
            let loss = tape.scale(ce, 1.0 / rows as f64);
            tape.backward(loss).unwrap();
            tape.param_grads(&model.store)
        };
        let reversed = grads_with(Some(1.0));
        let plain = grads_with(None);
        let mut checked = 0usize;
        for (id, p) in model.store.iter() {
            let (a, b) = match (reversed.get(id), plain.get(id)) {
                (Some(a), Some(b)) => (a, b),
                _ => continue,
            };
            match p.group {
                ParamGroup::Discriminator => {
                    for (x, y) in a.iter().zip(b) {
                        assert!((x - y).abs() <= 1e-12, "{} unchanged", p.name);
                    }
                }
                _ => {
                    for (x, y) in a.iter().zip(b) {
                        assert!((x + y).abs() <= 1e-12, "{} negated", p.name);
                    }
                    checked += 1;
                }
            }
        }
        assert!(checked > 0, "no upstream parameters received gradient");
    }

    #[test]
    fn training_reduces_masked_loss() {
        let (synth, split, mcfg) = tiny_setup(10, 200);
        let mut tcfg = tiny_train_cfg();
        tcfg.epochs = 8;
        tcfg.dropout = 0.0;
        tcfg.train_stride = 2;
        let model = init_model(&mcfg, 6).unwrap();
        let result = fit(model, &synth.dataset, &split, &tcfg, |_, _| Ok(())).unwrap();
        let first = result.history.first().unwrap().loss_main;
        let last = result.history.last().unwrap().loss_main;
        assert!(last < first, "main loss {first} -> {last}");
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostics() {
        let (synth, split, mcfg) = tiny_setup(10, 96);
        let mut model = init_model(&mcfg, 7).unwrap();
        let id = model.store.by_name("enc.0.w1").unwrap();
        model.store.value_mut(id)[0] = f64::NAN;
        let err = fit(model, &synth.dataset, &split, &tiny_train_cfg(), |_, _| Ok(()))
            .err()
            .expect("non-finite loss must abort training")
            .to_string();
        assert!(err.contains("epoch 1"), "{err}");
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        let report = full_model_gradcheck(&gradcheck_config(), 0, 1e-5).unwrap();
        assert!(report.max_rel_err < 1e-4, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn sweep_emits_one_row_per_ratio_and_seed() {
        let (synth, _, mcfg) = tiny_setup(10, 96);
        let mut tcfg = tiny_train_cfg();
        tcfg.epochs = 1;
        tcfg.train_stride = 12;
        let rows = missing_rate_sweep(
            &synth.dataset,
            &mcfg,
            &tcfg,
            &[(7, 1, 2), (4, 4, 2)],
            &[0, 1],
        )
        .unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!((rows[0].x, rows[0].y, rows[0].z, rows[0].seed), (7, 1, 2, 0));
        assert_eq!((rows[3].x, rows[3].y, rows[3].z, rows[3].seed), (4, 4, 2, 1));
        for r in &rows {
            assert!(r.mae.is_finite() && r.rmse >= r.mae);
        }
    }
}

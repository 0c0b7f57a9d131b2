//! Command-line entry point for the kriging pipeline: synthetic data,
//! training, inference over unknown sensors, evaluation, the missing-rate
//! sweep, discriminator diagnostics, and a gradient self-check.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 1 any other failure. A TOML file passed via --config overrides flags.
//! The seed falls back to the STKG_SEED environment variable, then 0.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use stkg_core::checkpoint::{load_model, save_model};
use stkg_core::data::{
    eval_batch, make_split, make_windows, Dataset, EvalScope, SplitPlan, Synthetic, SyntheticSpec,
};
use stkg_core::evalharness::{
    discriminator_probe, evaluate_model, okriging_eval, MetricReport, ProbeReport,
};
use stkg_core::model::{init_model, ModelState};
use stkg_core::training::{
    fit, full_model_gradcheck, gradcheck_config, missing_rate_sweep, EpochStats, SweepRow,
};
use stkg_core::{Ablation, Adjacency, Error, FileConfig, ModelConfig, PhaseMode, Result, TrainConfig};

#[derive(Parser)]
#[command(name = "stkg", version, about = "Spatio-temporal kriging: training, inference and diagnostics")]
struct Cli {
    /// Omit timestamps from log lines so logs are reproducible.
    #[arg(long, global = true)]
    no_timestamps: bool,
    /// Log level: error, warn, info, debug, trace.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic sensor network (series, adjacency, metadata, shifts).
    Synth(SynthArgs),
    /// Train a model and write checkpoints plus a history CSV.
    Train(TrainArgs),
    /// Reconstruct every unknown sensor's held-out series from a checkpoint.
    Krige(KrigeArgs),
    /// Score a checkpoint (and the neighbor-average baseline) on held-out sensors.
    Eval(EvalArgs),
    /// Retrain across known/validation/unknown ratios and seeds.
    Sweep(SweepArgs),
    /// Discriminator cross-entropy and domain-separability curve over saved epochs.
    Diagnose(DiagnoseArgs),
    /// Compare every trainable gradient against central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Series CSV: header `timestamp,<id>,...`, uniformly spaced rows.
    #[arg(long)]
    series: PathBuf,
    /// Edge list CSV: header `from,to,weight`.
    #[arg(long)]
    adjacency: PathBuf,
    /// Coordinates CSV: header `id,latitude,longitude`.
    #[arg(long)]
    metadata: Option<PathBuf>,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        Dataset::load(&self.series, &self.adjacency, self.metadata.as_deref())
    }
}

#[derive(Args)]
struct SplitArgs {
    /// known:validation:unknown tenths, e.g. 7:1:2.
    #[arg(long, default_value = "7:1:2")]
    split: String,
    /// RNG seed; falls back to STKG_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ModelFlags {
    /// Window length in steps.
    #[arg(long, default_value_t = 24)]
    window: usize,
    #[arg(long, default_value_t = 100)]
    hidden: usize,
    #[arg(long, default_value_t = 2)]
    encoder_layers: usize,
    #[arg(long, default_value_t = 2)]
    decoder_layers: usize,
    /// Embedding width of timestamp/coordinate labels.
    #[arg(long, default_value_t = 12)]
    label_dim: usize,
    /// Frequency-feature width fed to the graph builder.
    #[arg(long, default_value_t = 20)]
    meta_dim: usize,
    /// Per-token width of coordinate digit embeddings.
    #[arg(long, default_value_t = 12)]
    digit_dim: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    /// Neighbors kept per row in learned graphs.
    #[arg(long, default_value_t = 5)]
    topk: usize,
    /// Discriminator patch length (must divide into the window).
    #[arg(long, default_value_t = 6)]
    patch_len: usize,
    #[arg(long, default_value_t = 32)]
    disc_hidden: usize,
    /// Phase-table bins.
    #[arg(long, default_value_t = 64)]
    phase_bins: usize,
    /// Frequency bins re-phased per branch.
    #[arg(long, default_value_t = 1)]
    phase_modified: usize,
    /// offset | absolute.
    #[arg(long, default_value = "offset")]
    phase_mode: String,
    /// Moving-average window of the trend split (odd).
    #[arg(long, default_value_t = 5)]
    trend_window: usize,
    /// Ablations: S, S-location, S-timestamp, T, T-phasegraph, T-decouple, A, Revin.
    #[arg(long = "ablate", value_delimiter = ',')]
    ablate: Vec<String>,
}

impl ModelFlags {
    fn to_config(&self, steps_per_day: usize) -> Result<ModelConfig> {
        let mut cfg = ModelConfig {
            series_len: self.window,
            hidden: self.hidden,
            encoder_layers: self.encoder_layers,
            decoder_layers: self.decoder_layers,
            label_dim: self.label_dim,
            meta_dim: self.meta_dim,
            digit_dim: self.digit_dim,
            attn_heads: self.heads,
            topk: self.topk,
            patch_len: self.patch_len,
            disc_hidden: self.disc_hidden,
            steps_per_day,
            ablation: Ablation::parse(&self.ablate)?,
            ..ModelConfig::default()
        };
        cfg.phase.bins = self.phase_bins;
        cfg.phase.modified = self.phase_modified;
        cfg.phase.trend_window = self.trend_window;
        cfg.phase.mode = match self.phase_mode.as_str() {
            "offset" => PhaseMode::Offset,
            "absolute" => PhaseMode::Absolute,
            other => return Err(Error::Invalid(format!("unknown phase mode {other}"))),
        };
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.003)]
    lr: f64,
    /// Epochs before the discriminator freezes.
    #[arg(long, default_value_t = 5)]
    rounds: usize,
    /// Gradient-reversal strength.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0.3)]
    dropout: f64,
    /// Fraction of trusted sensors hidden per batch.
    #[arg(long, default_value_t = 0.25)]
    mask_ratio: f64,
    /// Fraction of domain labels flipped per patch.
    #[arg(long, default_value_t = 0.05)]
    label_noise: f64,
    /// Stride between training windows.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// TOML file whose values override these flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl TrainFlags {
    fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            adversarial_rounds: self.rounds,
            grl_lambda: self.lambda,
            dropout: self.dropout,
            mask_ratio: self.mask_ratio,
            label_noise: self.label_noise,
            train_stride: self.stride,
            seed,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Number of sensors.
    #[arg(long, default_value_t = 30)]
    n: usize,
    /// Number of time steps.
    #[arg(long, default_value_t = 2000)]
    t: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(short, long, default_value = "data")]
    out: PathBuf,
    /// Dominant tone period in steps.
    #[arg(long, default_value_t = 24)]
    period: usize,
    /// Max per-sensor delay in steps.
    #[arg(long, default_value_t = 3)]
    shift_max: i64,
    /// Additive noise standard deviation.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 4)]
    neighbors: usize,
    #[arg(long, default_value_t = 60)]
    step_minutes: u32,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    split: SplitArgs,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(short, long, default_value = "run")]
    out: PathBuf,
    /// Also save one checkpoint per epoch (epoch-NNN.stkg), for `diagnose`.
    #[arg(long)]
    save_epochs: bool,
}

#[derive(Args)]
struct KrigeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    split: SplitArgs,
    /// Output CSV of reconstructed series over the held-out span.
    #[arg(short, long, default_value = "predictions.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    split: SplitArgs,
    /// validation | test
    #[arg(long, default_value = "test")]
    scope: String,
    /// Optional metrics CSV (model row plus baseline row).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    train: TrainFlags,
    /// Comma-separated x:y:z ratio list.
    #[arg(long, default_value = "7:1:2,4:4:2,2:6:2,1:7:2")]
    ratios: String,
    /// Comma-separated seed list.
    #[arg(long, default_value = "0,1,2")]
    seeds: String,
    #[arg(short, long, default_value = "sweep.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Directory holding epoch-NNN.stkg checkpoints from `train --save-epochs`.
    #[arg(long)]
    checkpoints: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(short, long, default_value = "confusion.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Number of seeds to check (0, 1, ...).
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    /// Maximum allowed relative error.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

fn main() {
    let cli = Cli::parse();
    let mut builder = env_logger::Builder::from_env(
        env_logger::Env::default().default_filter_or(cli.log_level.clone()),
    );
    if cli.no_timestamps {
        builder.format_timestamp(None);
    }
    let _ = builder.try_init();
    match run(cli.cmd) {
        Ok(()) => {}
        Err(e) => {
            log::error!("{e}");
            std::process::exit(match e {
                Error::Invalid(_) => 2,
                Error::Data(_) | Error::Format(_) | Error::Io(_) => 3,
                _ => 1,
            });
        }
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Synth(a) => cmd_synth(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Krige(a) => cmd_krige(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::Diagnose(a) => cmd_diagnose(a),
        Cmd::Gradcheck(a) => cmd_gradcheck(a),
    }
}

fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("STKG_SEED") {
        Ok(v) => v
            .parse::<u64>()
            .map_err(|_| Error::Invalid(format!("STKG_SEED is not an integer: {v}"))),
        Err(_) => Ok(0),
    }
}

fn parse_ratio(text: &str) -> Result<(u32, u32, u32)> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::Invalid(format!("split {text} is not of the form x:y:z")));
    }
    let mut v = [0u32; 3];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p
            .trim()
            .parse()
            .map_err(|_| Error::Invalid(format!("split component {p} is not an integer")))?;
    }
    Ok((v[0], v[1], v[2]))
}

fn parse_ratio_list(text: &str) -> Result<Vec<(u32, u32, u32)>> {
    text.split(',').map(parse_ratio).collect()
}

fn parse_seed_list(text: &str) -> Result<Vec<u64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| Error::Invalid(format!("seed {s} is not an integer")))
        })
        .collect()
}

/// Build both configurations: defaults, then flags, then the TOML file.
fn resolve_configs(
    model: &ModelFlags,
    train: &TrainFlags,
    seed_flag: Option<u64>,
    steps_per_day: usize,
) -> Result<(ModelConfig, TrainConfig)> {
    let mut mcfg = model.to_config(steps_per_day)?;
    let mut tcfg = train.to_config(resolve_seed(seed_flag)?);
    if let Some(path) = &train.config {
        let text = fs::read_to_string(path)?;
        FileConfig::parse(&text)?.apply(&mut tcfg, &mut mcfg)?;
    }
    mcfg.validate()?;
    tcfg.validate()?;
    Ok((mcfg, tcfg))
}

fn load_split(ds: &Dataset, args: &SplitArgs, seed: u64) -> Result<SplitPlan> {
    make_split(ds.n(), ds.t(), parse_ratio(&args.split)?, seed)
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        sensors: a.n,
        steps: a.t,
        seed: resolve_seed(a.seed)?,
        period: a.period,
        shift_max: a.shift_max,
        noise: a.noise,
        neighbors: a.neighbors,
        step_minutes: a.step_minutes,
        shifts: None,
    };
    let Synthetic { dataset, shifts } = stkg_core::data::generate_synthetic(&spec)?;
    dataset.save(&a.out)?;
    let mut text = String::from("id,shift\n");
    for (id, s) in dataset.ids.iter().zip(&shifts) {
        text.push_str(&format!("{id},{s}\n"));
    }
    fs::write(a.out.join("shifts.csv"), text)?;
    log::info!(
        "wrote {} sensors x {} steps to {}",
        dataset.n(),
        dataset.t(),
        a.out.display()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let ds = a.data.load()?;
    let (mcfg, tcfg) = resolve_configs(&a.model, &a.train, a.split.seed, ds.steps_per_day()?)?;
    let split = load_split(&ds, &a.split, tcfg.seed)?;
    log::info!(
        "{} trusted / {} validation / {} unknown sensors; training span {} of {} steps",
        split.known.len(),
        split.val.len(),
        split.test.len(),
        split.t_train,
        ds.t()
    );
    let model = init_model(&mcfg, tcfg.seed)?;
    fs::create_dir_all(&a.out)?;
    let mut history = String::from(EpochStats::csv_header());
    history.push('\n');
    let save_epochs = a.save_epochs;
    let out_dir = a.out.clone();
    let result = fit(model, &ds, &split, &tcfg, |stats, m| {
        log::info!(
            "epoch {:>3}: loss {:.5} domain {:.5} val mae {:.5}",
            stats.epoch,
            stats.loss_main,
            stats.loss_d,
            stats.val_mae
        );
        history.push_str(&stats.csv_row());
        history.push('\n');
        if save_epochs {
            save_model(m, &out_dir.join(format!("epoch-{:03}.stkg", stats.epoch)))?;
        }
        Ok(())
    })?;
    fs::write(a.out.join("history.csv"), history)?;
    save_model(&result.best, &a.out.join("model.stkg"))?;
    save_model(&result.model, &a.out.join("model-final.stkg"))?;
    let best = &result.history[result.best_epoch - 1];
    println!(
        "best epoch {} val mae {:.6}; checkpoints in {}",
        result.best_epoch,
        best.val_mae,
        a.out.display()
    );
    Ok(())
}

fn load_model_for(ds: &Dataset, path: &Path) -> Result<ModelState> {
    let model = load_model(path)?;
    let spd = ds.steps_per_day()?;
    if model.config.steps_per_day != spd {
        return Err(Error::Invalid(format!(
            "checkpoint expects {} steps per day, dataset has {spd}",
            model.config.steps_per_day
        )));
    }
    Ok(model)
}

fn cmd_krige(a: KrigeArgs) -> Result<()> {
    let ds = a.data.load()?;
    let model = load_model_for(&ds, &a.checkpoint)?;
    let split = load_split(&ds, &a.split, resolve_seed(a.split.seed)?)?;
    let l = model.config.series_len;
    let plan = make_windows(split.t_train, ds.t(), l, l)?;
    if plan.starts.is_empty() {
        return Err(Error::Data(format!(
            "held-out span {} is shorter than one window of {l}",
            ds.t() - split.t_train
        )));
    }
    let span = plan.starts.len() * l;
    let mut series = vec![vec![0.0f64; span]; ds.n()];
    for (w, &start) in plan.starts.iter().enumerate() {
        let batch = eval_batch(&ds, &split, start, l, EvalScope::Test)?;
        let rows = model.krige(&batch)?;
        for (i, row) in rows.iter().enumerate() {
            series[i][w * l..(w + 1) * l].copy_from_slice(row);
        }
    }
    let start = ds.start
        + chrono::Duration::minutes(split.t_train as i64 * i64::from(ds.step_minutes));
    let out_ds = Dataset {
        ids: ds.ids.clone(),
        series,
        adjacency: Adjacency::zeros(ds.n()),
        coords: None,
        start,
        step_minutes: ds.step_minutes,
    };
    stkg_core::data::save_series(&out_ds, &a.out)?;
    println!(
        "wrote {} reconstructed sensors ({} unknown) x {span} steps to {}",
        ds.n(),
        split.val.len() + split.test.len(),
        a.out.display()
    );
    Ok(())
}

fn parse_scope(text: &str) -> Result<EvalScope> {
    match text {
        "test" => Ok(EvalScope::Test),
        "val" | "validation" => Ok(EvalScope::Val),
        other => Err(Error::Invalid(format!("scope {other} is not test or validation"))),
    }
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let ds = a.data.load()?;
    let model = load_model_for(&ds, &a.checkpoint)?;
    let split = load_split(&ds, &a.split, resolve_seed(a.split.seed)?)?;
    let scope = parse_scope(&a.scope)?;
    let report = evaluate_model(&model, &ds, &split, scope)?;
    let baseline = okriging_eval(&ds, &split, scope, model.config.series_len)?;
    print_report(&report);
    print_report(&baseline);
    if let Some(path) = &a.out {
        let mut text = String::from(MetricReport::csv_header());
        text.push('\n');
        text.push_str(&report.csv_row());
        text.push('\n');
        text.push_str(&baseline.csv_row());
        text.push('\n');
        fs::write(path, text)?;
    }
    Ok(())
}

fn print_report(r: &MetricReport) {
    println!(
        "{:<20} mae {:.6} rmse {:.6} r2 {:.6} ({} cells, {} sensors, {} windows)",
        r.scope, r.mae, r.rmse, r.r2, r.cells, r.sensors, r.windows
    );
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let ds = a.data.load()?;
    let (mcfg, tcfg) = resolve_configs(&a.model, &a.train, None, ds.steps_per_day()?)?;
    let ratios = parse_ratio_list(&a.ratios)?;
    let seeds = parse_seed_list(&a.seeds)?;
    let rows = missing_rate_sweep(&ds, &mcfg, &tcfg, &ratios, &seeds)?;
    let mut text = String::from(SweepRow::csv_header());
    text.push('\n');
    for r in &rows {
        println!(
            "{}K{}V{}U seed {}: mae {:.6} rmse {:.6} r2 {:.6}",
            r.x, r.y, r.z, r.seed, r.mae, r.rmse, r.r2
        );
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    fs::write(&a.out, text)?;
    println!("wrote {} rows to {}", rows.len(), a.out.display());
    Ok(())
}

fn cmd_diagnose(a: DiagnoseArgs) -> Result<()> {
    let ds = a.data.load()?;
    let split = load_split(&ds, &a.split, resolve_seed(a.split.seed)?)?;
    let mut entries: Vec<(usize, PathBuf)> = Vec::new();
    for entry in fs::read_dir(&a.checkpoints)? {
        let path = entry?.path();
        let name = match path.file_name().and_then(|n| n.to_str()) {
            Some(n) => n,
            None => continue,
        };
        if let Some(num) = name.strip_prefix("epoch-").and_then(|r| r.strip_suffix(".stkg")) {
            if let Ok(epoch) = num.parse::<usize>() {
                entries.push((epoch, path));
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::Data(format!(
            "no epoch-NNN.stkg checkpoints in {} (train with --save-epochs)",
            a.checkpoints.display()
        )));
    }
    entries.sort();
    let mut text = String::from("epoch,");
    text.push_str(ProbeReport::csv_header());
    text.push('\n');
    let mut last: Option<ProbeReport> = None;
    for (epoch, path) in &entries {
        let model = load_model_for(&ds, path)?;
        let probe = discriminator_probe(&model, &ds, &split, EvalScope::Test)?;
        text.push_str(&format!("{epoch},{}\n", probe.csv_row()));
        log::info!(
            "epoch {epoch}: probe bce {:.5} divergence {:.5}",
            probe.bce,
            probe.divergence
        );
        last = Some(probe);
    }
    fs::write(&a.out, text)?;
    let final_probe = last.expect("at least one checkpoint");
    println!(
        "{} checkpoints; final probe bce {:.6}, domain divergence {:.6} (lower-bound estimate in [0,2])",
        entries.len(),
        final_probe.bce,
        final_probe.divergence
    );
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    if a.seeds == 0 {
        return Err(Error::Invalid("gradcheck needs at least one seed".into()));
    }
    let cfg = gradcheck_config();
    let mut worst = 0.0f64;
    for seed in 0..a.seeds {
        let report = full_model_gradcheck(&cfg, seed, a.step)?;
        println!("seed {seed}: max rel err {:.3e}", report.max_rel_err);
        worst = worst.max(report.max_rel_err);
    }
    if worst > a.tol {
        return Err(Error::Numeric(format!(
            "worst relative error {worst:.3e} exceeds tolerance {:.1e}",
            a.tol
        )));
    }
    println!("all {} seeds within {:.1e}", a.seeds, a.tol);
    Ok(())
}

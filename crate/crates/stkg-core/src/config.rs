//! Run configuration: model dimensions, phase-module settings, training
//! hyperparameters, ablation switches, and the `key = value` config-file
//! format that can override any of them.

use serde::Deserialize;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhaseMode {
    /// Head output is added to the original phase (identity at zero init).
    Offset,
    /// Head output replaces the phase outright.
    Absolute,
}

/// Settings of the phase re-prediction module.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseConfig {
    /// Number of discretization cells for phase-table lookups.
    pub bins: usize,
    /// Width of a phase-table row.
    pub embed_dim: usize,
    /// Hidden width of the per-layer MLPs over phase embeddings.
    pub hidden: usize,
    /// Message-passing layers over the phase graph.
    pub layers: usize,
    /// How many top-amplitude bins are re-predicted per sensor and branch.
    pub modified: usize,
    pub mode: PhaseMode,
    /// Moving-average width of the trend/residual split (odd).
    pub trend_window: usize,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        PhaseConfig {
            bins: 64,
            embed_dim: 16,
            hidden: 32,
            layers: 2,
            modified: 1,
            mode: PhaseMode::Offset,
            trend_window: 5,
        }
    }
}

/// Ablation switches. All default to off; each removes or replaces one
/// architectural ingredient while keeping the parameter registry intact.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Ablation {
    /// `S`: replace every dynamic adjacency with the predefined graph.
    pub no_dynamic_graph: bool,
    /// `S-location`: drop coordinates from the embedding (falls back to the
    /// linear path).
    pub no_location: bool,
    /// `S-timestamp`: drop the timestamp embedding.
    pub no_timestamp: bool,
    /// `T`: remove the phase module from the encoder.
    pub no_phase_module: bool,
    /// `T-phasegraph`: run the phase module on the predefined graph.
    pub predefined_phase_graph: bool,
    /// `T-decouple`: no trend/residual split; the raw series goes through a
    /// single branch.
    pub no_decompose: bool,
    /// `A`: never train the discriminator and drop the adversarial loss.
    pub no_adversarial: bool,
    /// `Revin`: remove per-layer renormalization in the decoder.
    pub no_revin: bool,
}

impl Ablation {
    pub fn parse(flags: &[String]) -> Result<Ablation> {
        let mut a = Ablation::default();
        for f in flags {
            match f.as_str() {
                "S" => a.no_dynamic_graph = true,
                "S-location" => a.no_location = true,
                "S-timestamp" => a.no_timestamp = true,
                "T" => a.no_phase_module = true,
                "T-phasegraph" => a.predefined_phase_graph = true,
                "T-decouple" => a.no_decompose = true,
                "A" => a.no_adversarial = true,
                "Revin" => a.no_revin = true,
                other => {
                    return Err(Error::Invalid(format!(
                        "unknown ablation flag {other}; expected one of \
                         S, S-location, S-timestamp, T, T-phasegraph, T-decouple, A, Revin"
                    )))
                }
            }
        }
        Ok(a)
    }
}

/// Architecture dimensions. None of these may depend on the number of sensors
/// in a batch; that property is what makes the model inductive.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Window length in steps.
    pub series_len: usize,
    /// Hidden width of the encoder/decoder MLPs.
    pub hidden: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    /// Width of metadata label embeddings.
    pub label_dim: usize,
    /// Width of the per-sensor frequency feature vector.
    pub meta_dim: usize,
    /// Width of one coordinate-digit embedding row.
    pub digit_dim: usize,
    pub attn_heads: usize,
    /// Neighbors kept per row when sparsifying dynamic graphs.
    pub topk: usize,
    /// Discriminator patch length.
    pub patch_len: usize,
    pub disc_hidden: usize,
    /// Time-of-day table size; must equal steps per day of the dataset.
    pub steps_per_day: usize,
    pub phase: PhaseConfig,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            series_len: 24,
            hidden: 100,
            encoder_layers: 2,
            decoder_layers: 2,
            label_dim: 12,
            meta_dim: 20,
            digit_dim: 12,
            attn_heads: 2,
            topk: 5,
            patch_len: 6,
            disc_hidden: 32,
            steps_per_day: 288,
            phase: PhaseConfig::default(),
            ablation: Ablation::default(),
        }
    }
}

impl ModelConfig {
    /// Width of one timestamp-table row; time-of-day and day-of-week rows
    /// concatenate to a full label embedding.
    pub fn time_dim(&self) -> usize {
        self.label_dim / 2
    }

    /// Query width of the attention path, after ablations.
    pub fn query_dim(&self) -> usize {
        if self.ablation.no_timestamp {
            self.label_dim
        } else {
            2 * self.time_dim() + self.label_dim
        }
    }

    /// Input width of the linear embedding path, after ablations.
    pub fn linear_in_dim(&self) -> usize {
        if self.ablation.no_timestamp {
            self.meta_dim
        } else {
            2 * self.time_dim() + self.meta_dim
        }
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.series_len;
        if l < 2 {
            return Err(Error::Invalid(format!("series_len must be at least 2, got {l}")));
        }
        if self.hidden == 0 || self.encoder_layers == 0 || self.decoder_layers == 0 {
            return Err(Error::Invalid("hidden width and layer counts must be positive".into()));
        }
        if self.label_dim == 0 || self.label_dim % 2 != 0 {
            return Err(Error::Invalid(format!(
                "label_dim must be positive and even, got {}",
                self.label_dim
            )));
        }
        if self.attn_heads == 0 || self.label_dim % self.attn_heads != 0 {
            return Err(Error::Invalid(format!(
                "label_dim {} must divide into {} attention heads",
                self.label_dim, self.attn_heads
            )));
        }
        let bins = l / 2 + 1;
        if self.meta_dim == 0 || self.meta_dim > 2 * bins {
            return Err(Error::Invalid(format!(
                "meta_dim {} out of range: a length-{l} window offers at most {} frequency features",
                self.meta_dim,
                2 * bins
            )));
        }
        if self.digit_dim == 0 {
            return Err(Error::Invalid("digit_dim must be positive".into()));
        }
        if self.topk == 0 {
            return Err(Error::Invalid("topk must be at least 1".into()));
        }
        if self.patch_len == 0 || self.patch_len > l {
            return Err(Error::Invalid(format!(
                "patch_len must be in 1..={l}, got {}",
                self.patch_len
            )));
        }
        if self.disc_hidden == 0 {
            return Err(Error::Invalid("disc_hidden must be positive".into()));
        }
        if self.steps_per_day == 0 {
            return Err(Error::Invalid("steps_per_day must be positive".into()));
        }
        let p = &self.phase;
        if p.bins == 0 {
            return Err(Error::Invalid("phase bins must be positive".into()));
        }
        if p.embed_dim == 0 || p.hidden == 0 || p.layers == 0 {
            return Err(Error::Invalid("phase dims and layer count must be positive".into()));
        }
        if p.modified == 0 || p.modified > (l - 1) / 2 {
            return Err(Error::Invalid(format!(
                "phase modified-bin count must be in 1..={}, got {}",
                (l - 1) / 2,
                p.modified
            )));
        }
        crate::spectral::validate_trend_window(p.trend_window, l)?;
        Ok(())
    }
}

/// Training hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Number of initial epochs in which the discriminator trains jointly
    /// (with gradient reversal); afterwards it is frozen.
    pub adversarial_rounds: usize,
    pub grl_lambda: f64,
    pub dropout: f64,
    /// Fraction of known sensors hidden per batch (count rounds up).
    pub mask_ratio: f64,
    /// Probability of flipping each patch's domain label.
    pub label_noise: f64,
    /// Stride between consecutive training windows.
    pub train_stride: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 64,
            lr: 0.003,
            adversarial_rounds: 5,
            grl_lambda: 1.0,
            dropout: 0.3,
            mask_ratio: 0.25,
            label_noise: 0.05,
            train_stride: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.train_stride == 0 {
            return Err(Error::Invalid("epochs, batch_size and train_stride must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio <= 1.0) {
            return Err(Error::Invalid(format!(
                "mask_ratio must lie in (0, 1], got {}",
                self.mask_ratio
            )));
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return Err(Error::Invalid(format!(
                "label_noise must lie in [0, 1), got {}",
                self.label_noise
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Invalid(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.grl_lambda < 0.0 {
            return Err(Error::Invalid(format!(
                "grl_lambda must be nonnegative, got {}",
                self.grl_lambda
            )));
        }
        Ok(())
    }
}

// ── config file ──────────────────────────────────────────────────────────

/// Optional overrides loaded from a `key = value` config file with `[train]`,
/// `[model]`, and `[phase]` sections. Every present key overrides the value
/// assembled from defaults and command-line flags.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub train: TrainOverrides,
    #[serde(default)]
    pub model: ModelOverrides,
    #[serde(default)]
    pub phase: PhaseOverrides,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub adversarial_rounds: Option<usize>,
    pub grl_lambda: Option<f64>,
    pub dropout: Option<f64>,
    pub mask_ratio: Option<f64>,
    pub label_noise: Option<f64>,
    pub train_stride: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOverrides {
    pub series_len: Option<usize>,
    pub hidden: Option<usize>,
    pub encoder_layers: Option<usize>,
    pub decoder_layers: Option<usize>,
    pub label_dim: Option<usize>,
    pub meta_dim: Option<usize>,
    pub digit_dim: Option<usize>,
    pub attn_heads: Option<usize>,
    pub topk: Option<usize>,
    pub patch_len: Option<usize>,
    pub disc_hidden: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseOverrides {
    pub bins: Option<usize>,
    pub embed_dim: Option<usize>,
    pub hidden: Option<usize>,
    pub layers: Option<usize>,
    pub modified: Option<usize>,
    /// `"offset"` or `"absolute"`.
    pub mode: Option<String>,
    pub trend_window: Option<usize>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<FileConfig> {
        toml::from_str(text).map_err(|e| Error::Invalid(format!("config file: {e}")))
    }

    pub fn apply(&self, train: &mut TrainConfig, model: &mut ModelConfig) -> Result<()> {
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        set!(train.epochs, self.train.epochs);
        set!(train.batch_size, self.train.batch_size);
        set!(train.lr, self.train.lr);
        set!(train.adversarial_rounds, self.train.adversarial_rounds);
        set!(train.grl_lambda, self.train.grl_lambda);
        set!(train.dropout, self.train.dropout);
        set!(train.mask_ratio, self.train.mask_ratio);
        set!(train.label_noise, self.train.label_noise);
        set!(train.train_stride, self.train.train_stride);
        set!(train.seed, self.train.seed);

        set!(model.series_len, self.model.series_len);
        set!(model.hidden, self.model.hidden);
        set!(model.encoder_layers, self.model.encoder_layers);
        set!(model.decoder_layers, self.model.decoder_layers);
        set!(model.label_dim, self.model.label_dim);
        set!(model.meta_dim, self.model.meta_dim);
        set!(model.digit_dim, self.model.digit_dim);
        set!(model.attn_heads, self.model.attn_heads);
        set!(model.topk, self.model.topk);
        set!(model.patch_len, self.model.patch_len);
        set!(model.disc_hidden, self.model.disc_hidden);

        set!(model.phase.bins, self.phase.bins);
        set!(model.phase.embed_dim, self.phase.embed_dim);
        set!(model.phase.hidden, self.phase.hidden);
        set!(model.phase.layers, self.phase.layers);
        set!(model.phase.modified, self.phase.modified);
        set!(model.phase.trend_window, self.phase.trend_window);
        if let Some(mode) = &self.phase.mode {
            model.phase.mode = match mode.as_str() {
                "offset" => PhaseMode::Offset,
                "absolute" => PhaseMode::Absolute,
                other => {
                    return Err(Error::Invalid(format!(
                        "phase mode must be \"offset\" or \"absolute\", got {other:?}"
                    )))
                }
            };
        }
        Ok(())
    }
}

//! Shared fixtures for the benchmark suite.

use stkg_core::config::ModelConfig;
use stkg_core::data::{make_split, train_batch, Dataset, KrigeBatch, SplitPlan, SyntheticSpec};

/// A mid-sized deterministic dataset for benchmarks.
pub fn bench_dataset(sensors: usize, steps: usize) -> Dataset {
    let spec = SyntheticSpec {
        sensors,
        steps,
        seed: 42,
        step_minutes: 60,
        ..SyntheticSpec::default()
    };
    stkg_core::data::generate_synthetic(&spec)
        .expect("synthetic generation")
        .dataset
}

/// A model configuration between the unit-test toy and the paper-scale
/// defaults, so benches finish quickly but exercise every stage.
pub fn bench_config() -> ModelConfig {
    let mut cfg = ModelConfig {
        series_len: 24,
        hidden: 32,
        label_dim: 8,
        meta_dim: 12,
        digit_dim: 6,
        steps_per_day: 24,
        ..ModelConfig::default()
    };
    cfg.phase.bins = 32;
    cfg.phase.embed_dim = 8;
    cfg.phase.hidden = 16;
    cfg.phase.layers = 1;
    cfg
}

pub fn bench_batch(ds: &Dataset) -> (SplitPlan, KrigeBatch) {
    let split = make_split(ds.n(), ds.t(), (7, 1, 2), 0).expect("split");
    let batch = train_batch(ds, &split, 0, 24, &[0, 2]).expect("batch");
    (split, batch)
}

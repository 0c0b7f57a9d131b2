//! Datasets and the kriging protocol around them: CSV load/save with strict
//! validation, sensor and time splits, window enumeration, per-window batch
//! assembly, and a synthetic generator whose ground truth (per-sensor time
//! shifts of a shared parent signal) is known exactly.

use std::path::Path;

use chrono::{Datelike, NaiveDateTime, Timelike};
use log::warn;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::graph::Adjacency;

const TIME_FMT: &str = "%Y-%m-%d %H:%M:%S";

/// A sensor network recording: aligned series, a predefined weighted graph,
/// and optional metadata (coordinates). Series rows follow `ids` order.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub ids: Vec<String>,
    /// `n x t`, row per sensor.
    pub series: Vec<Vec<f64>>,
    /// Raw (unnormalized) predefined edge weights.
    pub adjacency: Adjacency,
    pub coords: Option<Vec<(f64, f64)>>,
    pub start: NaiveDateTime,
    pub step_minutes: u32,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn t(&self) -> usize {
        self.series.first().map_or(0, Vec::len)
    }

    /// Steps in one day; the recording step must divide a day evenly.
    pub fn steps_per_day(&self) -> Result<usize> {
        let day = 24 * 60;
        if self.step_minutes == 0 || day % self.step_minutes != 0 {
            return Err(Error::Data(format!(
                "step of {} minutes does not divide a day",
                self.step_minutes
            )));
        }
        Ok((day / self.step_minutes) as usize)
    }

    /// Time-of-day slot and day-of-week (0 = Monday) of an absolute step.
    pub fn time_indices(&self, step: usize) -> Result<(usize, usize)> {
        let steps_per_day = self.steps_per_day()?;
        let dt = self.start + chrono::Duration::minutes(step as i64 * self.step_minutes as i64);
        let minutes = (dt.hour() * 60 + dt.minute()) as usize;
        let tod = (minutes / self.step_minutes as usize).min(steps_per_day - 1);
        let dow = dt.weekday().num_days_from_monday() as usize;
        Ok((tod, dow))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::Data("dataset has no sensors".into()));
        }
        if self.series.len() != n {
            return Err(Error::Data(format!(
                "{} id(s) but {} series rows",
                n,
                self.series.len()
            )));
        }
        let t = self.t();
        if t < 2 {
            return Err(Error::Data("dataset needs at least two time steps".into()));
        }
        if let Some(row) = self.series.iter().find(|r| r.len() != t) {
            return Err(Error::Data(format!(
                "ragged series: expected {t} steps, found a row with {}",
                row.len()
            )));
        }
        if self.adjacency.n() != n {
            return Err(Error::Data(format!(
                "adjacency is over {} nodes but the dataset has {n}",
                self.adjacency.n()
            )));
        }
        if let Some(c) = &self.coords {
            if c.len() != n {
                return Err(Error::Data(format!(
                    "{} coordinate pairs for {n} sensors",
                    c.len()
                )));
            }
        }
        self.steps_per_day()?;
        Ok(())
    }

    /// Load from `series.csv` + `adjacency.csv` (+ optional `metadata.csv`).
    pub fn load(
        series_path: &Path,
        adjacency_path: &Path,
        metadata_path: Option<&Path>,
    ) -> Result<Dataset> {
        let (ids, series, start, step_minutes) = load_series(series_path)?;
        let adjacency = load_adjacency(adjacency_path, &ids)?;
        let coords = match metadata_path {
            Some(p) => Some(load_metadata(p, &ids)?),
            None => None,
        };
        let ds = Dataset { ids, series, adjacency, coords, start, step_minutes };
        ds.validate()?;
        Ok(ds)
    }

    /// Write `series.csv`, `adjacency.csv` and (when coordinates exist)
    /// `metadata.csv` into a directory.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        save_series(self, &dir.join("series.csv"))?;
        save_adjacency(&self.adjacency, &self.ids, &dir.join("adjacency.csv"))?;
        if self.coords.is_some() {
            save_metadata(self, &dir.join("metadata.csv"))?;
        }
        Ok(())
    }
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

/// Series CSV: header `timestamp,<id>,...`; one row per step. Timestamps
/// must be strictly increasing and uniformly spaced. Missing cells (empty or
/// NaN) are forward-filled per sensor; cells missing from the start become 0.
pub fn load_series(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>, NaiveDateTime, u32)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.len() < 2 || headers.get(0) != Some("timestamp") {
        return Err(Error::Data(format!(
            "{}: header must be `timestamp,<sensor>,...`",
            path.display()
        )));
    }
    let ids: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
    let n = ids.len();
    let mut times: Vec<NaiveDateTime> = Vec::new();
    let mut cells: Vec<Vec<Option<f64>>> = vec![Vec::new(); n];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = line_of(&rec);
        if rec.len() != n + 1 {
            return Err(Error::Data(format!(
                "{}: line {line}: expected {} fields, got {}",
                path.display(),
                n + 1,
                rec.len()
            )));
        }
        let ts = NaiveDateTime::parse_from_str(&rec[0], TIME_FMT).map_err(|e| {
            Error::Data(format!("{}: line {line}: bad timestamp {:?}: {e}", path.display(), &rec[0]))
        })?;
        times.push(ts);
        for (i, field) in rec.iter().skip(1).enumerate() {
            if field.is_empty() || field.eq_ignore_ascii_case("nan") {
                cells[i].push(None);
            } else {
                let v: f64 = field.parse().map_err(|_| {
                    Error::Data(format!(
                        "{}: line {line}: bad value {field:?} for sensor {}",
                        path.display(),
                        ids[i]
                    ))
                })?;
                if !v.is_finite() {
                    cells[i].push(None);
                } else {
                    cells[i].push(Some(v));
                }
            }
        }
    }
    if times.len() < 2 {
        return Err(Error::Data(format!(
            "{}: need at least two rows to establish the step",
            path.display()
        )));
    }
    let step = times[1] - times[0];
    let minutes = step.num_minutes();
    if minutes <= 0 || step != chrono::Duration::minutes(minutes) {
        return Err(Error::Data(format!(
            "{}: step between rows 1 and 2 must be a positive whole number of minutes",
            path.display()
        )));
    }
    for (k, pair) in times.windows(2).enumerate() {
        if pair[1] - pair[0] != step {
            return Err(Error::Data(format!(
                "{}: line {}: timestamps must be uniformly spaced ({} then {})",
                path.display(),
                k + 3,
                pair[0].format(TIME_FMT),
                pair[1].format(TIME_FMT)
            )));
        }
    }
    let mut filled = 0usize;
    let series: Vec<Vec<f64>> = cells
        .into_iter()
        .map(|col| {
            let mut last = 0.0;
            col.into_iter()
                .map(|c| match c {
                    Some(v) => {
                        last = v;
                        v
                    }
                    None => {
                        filled += 1;
                        last
                    }
                })
                .collect()
        })
        .collect();
    if filled > 0 {
        warn!("{}: filled {filled} missing cell(s)", path.display());
    }
    Ok((ids, series, times[0], minutes as u32))
}

pub fn save_series(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["timestamp".to_string()];
    header.extend(ds.ids.iter().cloned());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for t in 0..ds.t() {
        let ts = ds.start + chrono::Duration::minutes(t as i64 * ds.step_minutes as i64);
        let mut row = vec![ts.format(TIME_FMT).to_string()];
        for i in 0..ds.n() {
            row.push(format!("{}", ds.series[i][t]));
        }
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

/// Adjacency CSV: header `from,to,weight`, one directed edge per row.
/// Endpoints must be known ids; weights must be finite and nonnegative.
pub fn load_adjacency(path: &Path, ids: &[String]) -> Result<Adjacency> {
    let index = |name: &str, line: u64| {
        ids.iter().position(|i| i == name).ok_or_else(|| {
            Error::Data(format!("{}: line {line}: unknown sensor {name:?}", path.display()))
        })
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?;
    if headers.iter().collect::<Vec<_>>() != vec!["from", "to", "weight"] {
        return Err(Error::Data(format!(
            "{}: header must be `from,to,weight`",
            path.display()
        )));
    }
    let mut a = Adjacency::zeros(ids.len());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = line_of(&rec);
        if rec.len() != 3 {
            return Err(Error::Data(format!(
                "{}: line {line}: expected 3 fields, got {}",
                path.display(),
                rec.len()
            )));
        }
        let i = index(&rec[0], line)?;
        let j = index(&rec[1], line)?;
        if i == j {
            return Err(Error::Data(format!(
                "{}: line {line}: self edge on {:?}",
                path.display(),
                &rec[0]
            )));
        }
        let wv: f64 = rec[2].parse().map_err(|_| {
            Error::Data(format!("{}: line {line}: bad weight {:?}", path.display(), &rec[2]))
        })?;
        if !wv.is_finite() || wv < 0.0 {
            return Err(Error::Data(format!(
                "{}: line {line}: weight must be finite and nonnegative, got {wv}",
                path.display()
            )));
        }
        a.set(i, j, wv);
    }
    Ok(a)
}

pub fn save_adjacency(a: &Adjacency, ids: &[String], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["from", "to", "weight"]).map_err(|e| csv_err(path, e))?;
    for i in 0..a.n() {
        for j in 0..a.n() {
            let v = a.get(i, j);
            if v != 0.0 {
                w.write_record([ids[i].as_str(), ids[j].as_str(), &format!("{v}")])
                    .map_err(|e| csv_err(path, e))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Metadata CSV: header `id,latitude,longitude`; exactly one row per sensor.
pub fn load_metadata(path: &Path, ids: &[String]) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?;
    if headers.iter().collect::<Vec<_>>() != vec!["id", "latitude", "longitude"] {
        return Err(Error::Data(format!(
            "{}: header must be `id,latitude,longitude`",
            path.display()
        )));
    }
    let mut coords: Vec<Option<(f64, f64)>> = vec![None; ids.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = line_of(&rec);
        let pos = ids.iter().position(|i| i.as_str() == &rec[0]).ok_or_else(|| {
            Error::Data(format!("{}: line {line}: unknown sensor {:?}", path.display(), &rec[0]))
        })?;
        if coords[pos].is_some() {
            return Err(Error::Data(format!(
                "{}: line {line}: duplicate metadata for {:?}",
                path.display(),
                &rec[0]
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| {
                Error::Data(format!("{}: line {line}: bad coordinate {s:?}", path.display()))
            })
        };
        coords[pos] = Some((parse(&rec[1])?, parse(&rec[2])?));
    }
    coords
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            c.ok_or_else(|| {
                Error::Data(format!("{}: no metadata for sensor {:?}", path.display(), ids[i]))
            })
        })
        .collect()
}

pub fn save_metadata(ds: &Dataset, path: &Path) -> Result<()> {
    let coords = ds
        .coords
        .as_ref()
        .ok_or_else(|| Error::Invalid("dataset carries no metadata to save".into()))?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["id", "latitude", "longitude"]).map_err(|e| csv_err(path, e))?;
    for (id, (lat, lon)) in ds.ids.iter().zip(coords.iter()) {
        w.write_record([id.as_str(), &format!("{lat}"), &format!("{lon}")])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

// ── splits ───────────────────────────────────────────────────────────────

/// Which sensors are observed and which serve validation/final evaluation,
/// plus where the time axis splits between training and evaluation spans.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitPlan {
    pub known: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Steps `[0, t_train)` are the training span, the rest evaluation.
    pub t_train: usize,
}

/// Split `n` sensors `x:y:z` (tenths; x + y + z = 10) with counts rounded
/// down for val/test and the remainder kept as known, and split `t` steps
/// 7:3. Sensor assignment is a seeded shuffle; sets are sorted ascending.
pub fn make_split(n: usize, t: usize, ratios: (u32, u32, u32), seed: u64) -> Result<SplitPlan> {
    let (x, y, z) = ratios;
    if x + y + z != 10 {
        return Err(Error::Invalid(format!(
            "split ratios must sum to 10, got {x}:{y}:{z}"
        )));
    }
    if x == 0 {
        return Err(Error::Invalid("at least one tenth of sensors must stay known".into()));
    }
    let n_val = n * y as usize / 10;
    let n_test = n * z as usize / 10;
    if n_val + n_test >= n {
        return Err(Error::Invalid(format!(
            "{n} sensors cannot sustain a {x}:{y}:{z} split"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Partial Fisher-Yates over the whole range.
    for i in 0..n.saturating_sub(1) {
        let j = rng.gen_range(i..n);
        order.swap(i, j);
    }
    let mut val: Vec<usize> = order[..n_val].to_vec();
    let mut test: Vec<usize> = order[n_val..n_val + n_test].to_vec();
    let mut known: Vec<usize> = order[n_val + n_test..].to_vec();
    val.sort_unstable();
    test.sort_unstable();
    known.sort_unstable();
    let t_train = (t as f64 * 0.7).floor() as usize;
    Ok(SplitPlan { known, val, test, t_train })
}

// ── windows ──────────────────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowPlan {
    pub len: usize,
    /// Absolute start steps.
    pub starts: Vec<usize>,
}

/// All windows of length `len` fully inside `[t0, t1)`, advancing by
/// `stride`.
pub fn make_windows(t0: usize, t1: usize, len: usize, stride: usize) -> Result<WindowPlan> {
    if len == 0 || stride == 0 {
        return Err(Error::Invalid("window length and stride must be positive".into()));
    }
    let mut starts = Vec::new();
    let mut s = t0;
    while s + len <= t1 {
        starts.push(s);
        s += stride;
    }
    Ok(WindowPlan { len, starts })
}

// ── batches ──────────────────────────────────────────────────────────────

/// One window of sensors ready for the model. `x` rows that are hidden
/// (unknown or deliberately masked) are zero; `truth` keeps the real values
/// for losses and metrics.
#[derive(Clone, Debug)]
pub struct KrigeBatch {
    pub x: Vec<Vec<f64>>,
    pub truth: Vec<Vec<f64>>,
    /// Row-normalized predefined subgraph over the batch rows.
    pub adjacency: Adjacency,
    pub coords: Option<Vec<(f64, f64)>>,
    pub tod: usize,
    pub dow: usize,
    /// Rows whose input is trusted; the decoder re-imposes them after every
    /// layer.
    pub restore: Vec<bool>,
    /// Rows the loss/metrics are computed on.
    pub masked: Vec<bool>,
}

impl KrigeBatch {
    pub fn rows(&self) -> usize {
        self.x.len()
    }

    /// Reindex every per-row structure by `perm` (new row r holds old row
    /// `perm[r]`). For equivariance checks.
    pub fn permuted(&self, perm: &[usize]) -> Result<KrigeBatch> {
        if perm.len() != self.rows() {
            return Err(Error::Invalid("permutation length mismatch".into()));
        }
        Ok(KrigeBatch {
            x: perm.iter().map(|&i| self.x[i].clone()).collect(),
            truth: perm.iter().map(|&i| self.truth[i].clone()).collect(),
            adjacency: self.adjacency.permuted(perm),
            coords: self
                .coords
                .as_ref()
                .map(|c| perm.iter().map(|&i| c[i]).collect()),
            tod: self.tod,
            dow: self.dow,
            restore: perm.iter().map(|&i| self.restore[i]).collect(),
            masked: perm.iter().map(|&i| self.masked[i]).collect(),
        })
    }
}

fn window_rows(ds: &Dataset, rows: &[usize], start: usize, len: usize) -> Result<Vec<Vec<f64>>> {
    if start + len > ds.t() {
        return Err(Error::Invalid(format!(
            "window [{start}, {}) exceeds {} steps",
            start + len,
            ds.t()
        )));
    }
    Ok(rows.iter().map(|&i| ds.series[i][start..start + len].to_vec()).collect())
}

/// Training batch: rows are the known sensors in dataset order; `mask_rows`
/// (positions into the known list) are hidden and become the loss targets.
pub fn train_batch(
    ds: &Dataset,
    split: &SplitPlan,
    start: usize,
    len: usize,
    mask_rows: &[usize],
) -> Result<KrigeBatch> {
    let truth = window_rows(ds, &split.known, start, len)?;
    let mut masked = vec![false; split.known.len()];
    for &r in mask_rows {
        if r >= masked.len() {
            return Err(Error::Invalid(format!(
                "mask row {r} out of range for {} known sensors",
                masked.len()
            )));
        }
        masked[r] = true;
    }
    let x: Vec<Vec<f64>> = truth
        .iter()
        .enumerate()
        .map(|(i, row)| if masked[i] { vec![0.0; len] } else { row.clone() })
        .collect();
    let restore: Vec<bool> = masked.iter().map(|m| !m).collect();
    let adjacency = ds.adjacency.subset(&split.known).row_normalized();
    let coords = ds
        .coords
        .as_ref()
        .map(|c| split.known.iter().map(|&i| c[i]).collect());
    let (tod, dow) = ds.time_indices(start)?;
    Ok(KrigeBatch { x, truth, adjacency, coords, tod, dow, restore, masked })
}

/// Which unknown sensors a batch evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalScope {
    Val,
    Test,
}

/// Evaluation batch: rows are every sensor in dataset order; all non-known
/// rows are hidden on input, and metrics target only the scope set.
pub fn eval_batch(
    ds: &Dataset,
    split: &SplitPlan,
    start: usize,
    len: usize,
    scope: EvalScope,
) -> Result<KrigeBatch> {
    let all: Vec<usize> = (0..ds.n()).collect();
    let truth = window_rows(ds, &all, start, len)?;
    let known = membership(&split.known, ds.n());
    let target = match scope {
        EvalScope::Val => membership(&split.val, ds.n()),
        EvalScope::Test => membership(&split.test, ds.n()),
    };
    let x: Vec<Vec<f64>> = truth
        .iter()
        .enumerate()
        .map(|(i, row)| if known[i] { row.clone() } else { vec![0.0; len] })
        .collect();
    let adjacency = ds.adjacency.subset(&all).row_normalized();
    let (tod, dow) = ds.time_indices(start)?;
    Ok(KrigeBatch {
        x,
        truth,
        adjacency,
        coords: ds.coords.clone(),
        tod,
        dow,
        restore: known,
        masked: target,
    })
}

fn membership(set: &[usize], n: usize) -> Vec<bool> {
    let mut m = vec![false; n];
    for &i in set {
        m[i] = true;
    }
    m
}

// ── synthetic oracle ─────────────────────────────────────────────────────

/// Recipe for a dataset with known ground truth: every sensor plays the same
/// parent signal delayed by a per-sensor number of steps, plus noise.
#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub sensors: usize,
    pub steps: usize,
    pub seed: u64,
    /// Parent tone period in steps.
    pub period: usize,
    /// Shifts are drawn uniformly from `0..=shift_max` unless overridden.
    pub shift_max: i64,
    /// Standard deviation of the additive noise.
    pub noise: f64,
    /// Neighbors per node in the distance graph.
    pub neighbors: usize,
    pub step_minutes: u32,
    pub shifts: Option<Vec<i64>>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            sensors: 10,
            steps: 480,
            seed: 0,
            period: 24,
            shift_max: 6,
            noise: 0.1,
            neighbors: 4,
            step_minutes: 60,
            shifts: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Synthetic {
    pub dataset: Dataset,
    pub shifts: Vec<i64>,
}

/// The parent waveform, defined for any integer step.
pub fn synthetic_parent(t: i64, period: usize) -> f64 {
    use std::f64::consts::TAU;
    let p = period as f64;
    (TAU * t as f64 / p).sin() + 0.5 * (TAU * t as f64 / (5.0 * p) + 0.9).sin()
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Synthetic> {
    if spec.sensors < 2 {
        return Err(Error::Invalid("synthetic data needs at least two sensors".into()));
    }
    if spec.steps < 2 || spec.period < 2 {
        return Err(Error::Invalid("steps and period must be at least 2".into()));
    }
    if spec.shift_max < 0 || spec.noise < 0.0 || spec.neighbors == 0 {
        return Err(Error::Invalid(
            "shift_max and noise must be nonnegative, neighbors positive".into(),
        ));
    }
    let n = spec.sensors;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let shifts: Vec<i64> = match &spec.shifts {
        Some(s) => {
            if s.len() != n {
                return Err(Error::Invalid(format!(
                    "{} shift overrides for {n} sensors",
                    s.len()
                )));
            }
            s.clone()
        }
        None => (0..n).map(|_| rng.gen_range(0..=spec.shift_max)).collect(),
    };
    let coords: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.gen_range(30.0..40.0), rng.gen_range(110.0..120.0)))
        .collect();
    let series: Vec<Vec<f64>> = shifts
        .iter()
        .map(|&s| {
            (0..spec.steps as i64)
                .map(|t| {
                    let noise = if spec.noise > 0.0 {
                        gaussian(&mut rng) * spec.noise
                    } else {
                        0.0
                    };
                    synthetic_parent(t - s, spec.period) + noise
                })
                .collect()
        })
        .collect();
    let adjacency = knn_graph(&coords, spec.neighbors);
    let ids: Vec<String> = (0..n).map(|i| format!("s{i:03}")).collect();
    let start = NaiveDateTime::parse_from_str("2012-03-01 00:00:00", TIME_FMT)
        .expect("fixed timestamp parses");
    let dataset = Dataset {
        ids,
        series,
        adjacency,
        coords: Some(coords),
        start,
        step_minutes: spec.step_minutes,
    };
    dataset.validate()?;
    Ok(Synthetic { dataset, shifts })
}

/// Standard normal via the polar method, deterministic for a seeded RNG.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u = rng.gen_range(-1.0f64..1.0);
        let v = rng.gen_range(-1.0f64..1.0);
        let s = u * u + v * v;
        if s > 0.0 && s < 1.0 {
            return u * (-2.0 * s.ln() / s).sqrt();
        }
    }
}

/// Mutual distance graph: each node links to its `k` nearest others with
/// weight `exp(-(d/sigma)^2)`, sigma being the mean kept distance;
/// symmetrized by taking the larger direction.
fn knn_graph(coords: &[(f64, f64)], k: usize) -> Adjacency {
    let n = coords.len();
    let mut picks: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    let mut kept_sum = 0.0;
    let mut kept_cnt = 0usize;
    for i in 0..n {
        let mut d: Vec<(usize, f64)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let dx = coords[i].0 - coords[j].0;
                let dy = coords[i].1 - coords[j].1;
                (j, (dx * dx + dy * dy).sqrt())
            })
            .collect();
        d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        d.truncate(k.min(n - 1));
        for &(_, dist) in &d {
            kept_sum += dist;
            kept_cnt += 1;
        }
        picks.push(d);
    }
    let sigma = if kept_cnt > 0 { (kept_sum / kept_cnt as f64).max(1e-12) } else { 1.0 };
    let mut a = Adjacency::zeros(n);
    for (i, row) in picks.iter().enumerate() {
        for &(j, dist) in row {
            let w = (-(dist / sigma) * (dist / sigma)).exp();
            if w > a.get(i, j) {
                a.set(i, j, w);
            }
            if w > a.get(j, i) {
                a.set(j, i, w);
            }
        }
    }
    a
}

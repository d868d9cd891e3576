//! Random-number streams, the Euler-Maruyama stepper, and offline
//! training-set generation.
//!
//! # Randomness layout
//!
//! Every path owns a counter-based stream keyed by `(master_seed,
//! stream_id)`. A stream's draws are a fixed deterministic sequence: they do
//! not depend on which worker consumes them or on how many other streams
//! exist. That is what makes sequential and pooled runs of the same seed
//! bitwise identical, and what lets error metrics replay a path's draws
//! after the fact.
//!
//! Normal variates are produced by pushing one uniform draw through a
//! rational approximation of the normal quantile function, so every normal
//! consumes exactly one raw draw and the counter arithmetic stays trivial.
//! The transform's relative error (~1.2e-9) is far below Monte Carlo noise
//! at any sample size used here; coupled comparisons are unaffected since
//! both sides of a coupling consume identical draws.

use std::io::{BufRead, BufReader, BufWriter, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::collocation::{self, CollocationGrid};
use crate::csvnum;
use crate::models::{ou_model, ModelParams, SdeModel};
use crate::num::Real;
use crate::runtime::{partition_paths, Backend};
use crate::scheme::RunStats;
use crate::{Error, Result};

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;
const STREAM_STRIDE: u64 = 0xd134_2543_de82_ef95;

/// Stream id reserved for feature sampling in [`generate_training_set`];
/// label simulation uses ids `sample * inner_paths + path`, which stay far
/// below this.
const FEATURE_STREAM_ID: u64 = u64::MAX;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based random stream: output `n` is a pure function of
/// `(master_seed, stream_id, n)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
    counter: u64,
    base: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let base =
            mix(master_seed ^ GOLDEN_GAMMA).wrapping_add(stream_id.wrapping_mul(STREAM_STRIDE));
        RngStream {
            master_seed,
            stream_id,
            counter: 0,
            base,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Number of raw draws consumed so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Next raw draw; advances the counter by one.
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter += 1;
        mix(self.base.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform draw strictly inside (0, 1); consumes one raw draw.
    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }
}

/// Standard normal draw; consumes exactly one raw draw from the stream.
///
/// The value is computed in `f64` and then rounded to `T`, so the stream of
/// draws is identical across scalar types.
#[inline]
pub fn draw_standard_normal<T: Real>(stream: &mut RngStream) -> T {
    T::of(collocation::normal_quantile_approx(stream.next_uniform()))
}

/// One Euler-Maruyama step: `y + a(t,y) dt + b(t,y) sqrt(dt) x`.
#[inline]
pub fn euler_step<T: Real>(
    y: T,
    t: T,
    dt: T,
    model: &SdeModel<T>,
    params: &ModelParams<T>,
    x: T,
) -> T {
    debug_assert!(dt > T::zero());
    y + model.drift(t, y, params) * dt + model.diffusion(t, y, params) * dt.sqrt() * x
}

/// Simulates one Euler-Maruyama path over `[0, horizon]` with `n_steps`
/// equal steps, consuming one normal draw per step. Returns the `n_steps+1`
/// states including the initial value.
pub fn euler_path<T: Real>(
    model: &SdeModel<T>,
    params: &ModelParams<T>,
    horizon: T,
    n_steps: usize,
    stream: &mut RngStream,
) -> Vec<T> {
    assert!(n_steps >= 1, "euler_path requires at least one step");
    assert!(horizon > T::zero(), "euler_path requires a positive horizon");
    let dt = horizon / T::of_usize(n_steps);
    let mut path = Vec::with_capacity(n_steps + 1);
    let mut y = model.initial_value;
    path.push(y);
    for i in 0..n_steps {
        let t = dt * T::of_usize(i);
        let x = draw_standard_normal(stream);
        y = euler_step(y, t, dt, model, params, x);
        path.push(y);
    }
    path
}

/// Terminal state of an Euler-Maruyama path; allocation-free inner loop of
/// the training-set generator.
pub(crate) fn euler_terminal<T: Real>(
    model: &SdeModel<T>,
    params: &ModelParams<T>,
    horizon: T,
    n_steps: usize,
    stream: &mut RngStream,
) -> T {
    let dt = horizon / T::of_usize(n_steps);
    let mut y = model.initial_value;
    for i in 0..n_steps {
        let t = dt * T::of_usize(i);
        let x = draw_standard_normal(stream);
        y = euler_step(y, t, dt, model, params, x);
    }
    y
}

/// Which sampler produced a [`PathSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchemeKind {
    Euler,
    SevenLeague,
    SevenLeagueCdc,
    ExactOu,
}

impl SchemeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemeKind::Euler => "euler",
            SchemeKind::SevenLeague => "7l",
            SchemeKind::SevenLeagueCdc => "7l-cdc",
            SchemeKind::ExactOu => "exact",
        }
    }
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(SchemeKind::Euler),
            "7l" => Ok(SchemeKind::SevenLeague),
            "7l-cdc" => Ok(SchemeKind::SevenLeagueCdc),
            "exact" => Ok(SchemeKind::ExactOu),
            other => Err(Error::Config(format!(
                "unknown scheme {other:?} (expected 7l, 7l-cdc, euler or exact)"
            ))),
        }
    }
}

/// A matrix of simulated paths on an equidistant time grid, together with
/// the identity of the per-path random streams that produced it (path `p`
/// consumed draws from `RngStream::new(master_seed, p)`).
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet<T> {
    values: Vec<T>,
    times: Vec<T>,
    scheme: SchemeKind,
    master_seed: u64,
    stats: RunStats,
}

impl<T: Real> PathSet<T> {
    pub(crate) fn new(
        values: Vec<T>,
        times: Vec<T>,
        scheme: SchemeKind,
        master_seed: u64,
        stats: RunStats,
    ) -> Self {
        assert!(!times.is_empty());
        assert_eq!(values.len() % times.len(), 0);
        debug_assert!(times.windows(2).all(|w| w[0] < w[1]));
        PathSet {
            values,
            times,
            scheme,
            master_seed,
            stats,
        }
    }

    pub fn n_paths(&self) -> usize {
        self.values.len() / self.times.len()
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn scheme(&self) -> SchemeKind {
        self.scheme
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stats(&self) -> &RunStats {
        &self.stats
    }

    /// All states of path `p`, from the initial value to the terminal one.
    pub fn path(&self, p: usize) -> &[T] {
        let w = self.times.len();
        &self.values[p * w..(p + 1) * w]
    }

    /// Terminal state of every path.
    pub fn terminal_values(&self) -> impl Iterator<Item = T> + '_ {
        let w = self.times.len();
        self.values.iter().skip(w - 1).step_by(w).copied()
    }

    /// Flat row-major storage, one row per path.
    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Writes one row per path, columns `t_0..t_N`, floats with 17
    /// significant digits.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut out = BufWriter::new(file);
        let header: Vec<String> = (0..self.times.len()).map(|i| format!("t_{i}")).collect();
        out.write_all(csvnum::record(&header).as_bytes())?;
        for p in 0..self.n_paths() {
            let fields: Vec<String> = self.path(p).iter().map(|&v| csvnum::fmt(v)).collect();
            out.write_all(csvnum::record(&fields).as_bytes())?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Uniform sampling ranges for the training features, stored with the data
/// set for audit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingRanges {
    pub y_start: (f64, f64),
    pub dt: (f64, f64),
    pub mean_level: (f64, f64),
    pub reversion_speed: (f64, f64),
    pub volatility: (f64, f64),
}

impl Default for SamplingRanges {
    fn default() -> Self {
        SamplingRanges {
            y_start: (-2.0, 2.0),
            dt: (0.05, 2.0),
            mean_level: (-1.0, 1.0),
            reversion_speed: (0.1, 2.0),
            volatility: (0.1, 1.0),
        }
    }
}

impl SamplingRanges {
    fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("y_start", self.y_start),
            ("dt", self.dt),
            ("ybar", self.mean_level),
            ("lambda", self.reversion_speed),
            ("sigma", self.volatility),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!("empty or non-finite range for {name}")));
            }
        }
        if self.dt.0 <= 0.0 {
            return Err(Error::Config("dt range must be positive".into()));
        }
        if self.reversion_speed.0 < 0.0 || self.volatility.0 < 0.0 {
            return Err(Error::Config("lambda and sigma ranges must be >= 0".into()));
        }
        Ok(())
    }

    fn sample(&self, stream: &mut RngStream) -> [f64; FEATURE_DIM] {
        let draw = |s: &mut RngStream, (lo, hi): (f64, f64)| lo + s.next_uniform() * (hi - lo);
        [
            draw(stream, self.y_start),
            draw(stream, self.dt),
            draw(stream, self.mean_level),
            draw(stream, self.reversion_speed),
            draw(stream, self.volatility),
        ]
    }
}

/// Feature layout: `(y_start, dt, ybar, lambda, sigma)`.
pub const FEATURE_DIM: usize = 5;

pub const FEATURE_NAMES: [&str; FEATURE_DIM] = ["y_start", "dt", "ybar", "lambda", "sigma"];

/// Generation parameters recorded alongside the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub m: usize,
    pub inner_paths: usize,
    pub fine_step: f64,
    pub seed: u64,
    pub ranges: SamplingRanges,
}

/// Supervised pairs for the collocation predictor: feature rows
/// `(y_start, dt, ybar, lambda, sigma)` against label rows of `m`
/// ascending collocation points.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet<T> {
    features: Vec<T>,
    labels: Vec<T>,
    meta: TrainingMeta,
}

impl<T: Real> TrainingSet<T> {
    pub fn n_samples(&self) -> usize {
        self.features.len() / FEATURE_DIM
    }

    pub fn m(&self) -> usize {
        self.meta.m
    }

    pub fn meta(&self) -> &TrainingMeta {
        &self.meta
    }

    pub fn feature_row(&self, i: usize) -> &[T] {
        &self.features[i * FEATURE_DIM..(i + 1) * FEATURE_DIM]
    }

    pub fn label_row(&self, i: usize) -> &[T] {
        let m = self.meta.m;
        &self.labels[i * m..(i + 1) * m]
    }

    pub fn features(&self) -> &[T] {
        &self.features
    }

    pub fn labels(&self) -> &[T] {
        &self.labels
    }

    /// Sidecar path for the meta JSON: `data.csv` -> `data.meta.json`.
    pub fn meta_path(csv_path: &Path) -> PathBuf {
        csv_path.with_extension("meta.json")
    }

    /// Writes the data as CSV (header `y_start,dt,ybar,lambda,sigma,
    /// y_1..y_m`, 17-significant-digit floats) plus the JSON meta sidecar.
    pub fn write_csv(&self, csv_path: &Path) -> Result<()> {
        let file = std::fs::File::create(csv_path)?;
        let mut out = BufWriter::new(file);
        let mut header: Vec<String> = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
        for j in 1..=self.meta.m {
            header.push(format!("y_{j}"));
        }
        out.write_all(csvnum::record(&header).as_bytes())?;
        for i in 0..self.n_samples() {
            let mut fields: Vec<String> =
                self.feature_row(i).iter().map(|&v| csvnum::fmt(v)).collect();
            fields.extend(self.label_row(i).iter().map(|&v| csvnum::fmt(v)));
            out.write_all(csvnum::record(&fields).as_bytes())?;
        }
        out.flush()?;
        let meta_file = std::fs::File::create(Self::meta_path(csv_path))?;
        serde_json::to_writer_pretty(meta_file, &self.meta)?;
        Ok(())
    }

    /// Reads a data set written by [`TrainingSet::write_csv`].
    pub fn read_csv(csv_path: &Path) -> Result<Self> {
        let meta_file = std::fs::File::open(Self::meta_path(csv_path)).map_err(|e| {
            Error::Config(format!(
                "missing meta sidecar {}: {e}",
                Self::meta_path(csv_path).display()
            ))
        })?;
        let meta: TrainingMeta = serde_json::from_reader(meta_file)?;
        let file = std::fs::File::open(csv_path)?;
        let reader = BufReader::new(file);
        let mut lines = reader.lines();
        let header = lines.next().ok_or(Error::Csv {
            line: 1,
            reason: "empty file".into(),
        })??;
        let cols: Vec<&str> = header.trim_end().split(',').collect();
        if cols.len() != FEATURE_DIM + meta.m
            || cols[..FEATURE_DIM] != FEATURE_NAMES[..]
        {
            return Err(Error::Csv {
                line: 1,
                reason: format!("unexpected header {header:?}"),
            });
        }
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (idx, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row = idx + 2;
            let fields: Vec<&str> = line.trim_end().split(',').collect();
            if fields.len() != FEATURE_DIM + meta.m {
                return Err(Error::Csv {
                    line: row,
                    reason: format!("expected {} fields, got {}", FEATURE_DIM + meta.m, fields.len()),
                });
            }
            for field in &fields[..FEATURE_DIM] {
                features.push(csvnum::parse::<T>(field, row)?);
            }
            for field in &fields[FEATURE_DIM..] {
                labels.push(csvnum::parse::<T>(field, row)?);
            }
        }
        Ok(TrainingSet {
            features,
            labels,
            meta,
        })
    }
}

/// Generation parameters for [`generate_training_set`]. Defaults follow the
/// experiment configuration: 1e5 samples, 1e5 inner paths, fine step 1e-3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingGenConfig {
    pub ranges: SamplingRanges,
    pub n_samples: usize,
    pub inner_paths: usize,
    pub fine_step: f64,
    pub seed: u64,
}

impl Default for TrainingGenConfig {
    fn default() -> Self {
        TrainingGenConfig {
            ranges: SamplingRanges::default(),
            n_samples: 100_000,
            inner_paths: 100_000,
            fine_step: 1e-3,
            seed: 7,
        }
    }
}

/// Builds a supervised data set for the collocation predictor.
///
/// For each sample, a feature row is drawn uniformly from the configured
/// ranges, `inner_paths` Euler-Maruyama paths run from `y_start` over
/// horizon `dt` with `ceil(dt / fine_step)` equal sub-steps, and the label
/// row is the empirical collocation points of the terminal values at the
/// grid's quantile levels. Label rows are nondecreasing by construction.
///
/// Sample generation is reproducible bit for bit from `(config, grid)`
/// regardless of the backend: the feature stream and every inner path
/// stream are keyed by sample and path index, never by worker.
pub fn generate_training_set<T: Real>(
    config: &TrainingGenConfig,
    grid: &CollocationGrid<T>,
    backend: &Backend,
) -> Result<TrainingSet<T>> {
    config.ranges.validate()?;
    let m = grid.m();
    let n = config.n_samples;
    if n == 0 {
        return Err(Error::Config("n_samples must be >= 1".into()));
    }
    if config.inner_paths < m {
        return Err(Error::Config(format!(
            "inner_paths {} < m {}",
            config.inner_paths, m
        )));
    }
    // Estimating the p-quantile needs order statistics in the tail:
    // require at least 10 expected samples beyond the extreme level.
    let min_tail = grid.levels()[0]
        .as_f64()
        .min(1.0 - grid.levels()[m - 1].as_f64());
    let required = (10.0 / min_tail).ceil() as usize;
    if config.inner_paths < required {
        return Err(Error::Config(format!(
            "inner_paths {} too small for the m={m} tail levels; need >= {required}",
            config.inner_paths
        )));
    }
    if !(config.fine_step > 0.0) || config.fine_step > config.ranges.dt.0 {
        return Err(Error::Config(format!(
            "fine_step {} must lie in (0, min dt = {}]",
            config.fine_step, config.ranges.dt.0
        )));
    }

    let mut feature_stream = RngStream::new(config.seed, FEATURE_STREAM_ID);
    let mut features = Vec::with_capacity(n * FEATURE_DIM);
    for _ in 0..n {
        for v in config.ranges.sample(&mut feature_stream) {
            features.push(T::of(v));
        }
    }

    let mut labels = vec![T::zero(); n * m];
    let partition = partition_paths(n, backend.workers());

    struct Group<'a, T> {
        first_sample: usize,
        labels: &'a mut [T],
    }

    let mut groups: Vec<Group<'_, T>> = Vec::with_capacity(partition.len());
    let mut rest = labels.as_mut_slice();
    for range in &partition.groups {
        let (head, tail) = rest.split_at_mut(range.len() * m);
        groups.push(Group {
            first_sample: range.start,
            labels: head,
        });
        rest = tail;
    }

    let features_ref = &features;
    let inner_paths = config.inner_paths as u64;
    backend.for_each_group(&mut groups, &|group: &mut Group<'_, T>| {
        let mut terminals = vec![T::zero(); config.inner_paths];
        let rows = group.labels.len() / m;
        for local in 0..rows {
            let i = group.first_sample + local;
            let row = &features_ref[i * FEATURE_DIM..(i + 1) * FEATURE_DIM];
            let (y_start, dt) = (row[0], row[1]);
            let params = ModelParams {
                mean_level: row[2],
                reversion_speed: row[3],
                volatility: row[4],
            };
            let model = ou_model(y_start);
            let n_sub = (dt.as_f64() / config.fine_step).ceil().max(1.0) as usize;
            for (j, slot) in terminals.iter_mut().enumerate() {
                let mut stream =
                    RngStream::new(config.seed, i as u64 * inner_paths + j as u64);
                *slot = euler_terminal(&model, &params, dt, n_sub, &mut stream);
            }
            let points = collocation::empirical_collocation(&terminals, grid)?;
            group.labels[local * m..(local + 1) * m].copy_from_slice(&points);
        }
        Ok(())
    })?;

    Ok(TrainingSet {
        features,
        labels,
        meta: TrainingMeta {
            m,
            inner_paths: config.inner_paths,
            fine_step: config.fine_step,
            seed: config.seed,
            ranges: config.ranges,
        },
    })
}

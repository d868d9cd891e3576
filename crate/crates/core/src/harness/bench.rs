//! Sequential-vs-pool timing of the per-path workload.

use std::io::{BufWriter, Write as _};
use std::path::Path;

use crate::csvnum;
use crate::models::{ModelParams, SdeModel};
use crate::num::Real;
use crate::runtime::{timed, Backend};
use crate::scheme::{run_scheme, CollocationPredictor, SchemeConfig};
use crate::simulate::SchemeKind;
use crate::{Error, Result};

/// Speedup convention used throughout: sequential wall time divided by
/// parallel wall time, so values above 1 mean the pool is faster.
pub fn speedup_ratio(sequential_seconds: f64, parallel_seconds: f64) -> f64 {
    sequential_seconds / parallel_seconds
}

/// One benchmark cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub n_paths: usize,
    pub scheme: SchemeKind,
    pub sequential_seconds: f64,
    pub parallel_seconds: f64,
    pub speedup: f64,
}

/// Timing table plus the context needed to read it.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub repeats: usize,
    pub backend: String,
    pub environment: String,
}

impl BenchReport {
    /// CSV with columns
    /// `n_paths,scheme,sequential_seconds,parallel_seconds,speedup`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut out = BufWriter::new(file);
        out.write_all(b"n_paths,scheme,sequential_seconds,parallel_seconds,speedup\n")?;
        for r in &self.rows {
            let fields = [
                r.n_paths.to_string(),
                r.scheme.to_string(),
                csvnum::fmt(r.sequential_seconds),
                csvnum::fmt(r.parallel_seconds),
                csvnum::fmt(r.speedup),
            ];
            out.write_all(csvnum::record(&fields).as_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    /// Human-readable table; speedups shown with one decimal.
    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "backend={} repeats={} ({})\n",
            self.backend, self.repeats, self.environment
        ));
        s.push_str("n_paths    scheme   seq_s      par_s      speedup\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{:<10} {:<8} {:<10.3} {:<10.3} {:.1}\n",
                r.n_paths, r.scheme, r.sequential_seconds, r.parallel_seconds, r.speedup
            ));
        }
        s
    }
}

/// Benchmark settings; the workload is a full simulation run per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub path_counts: Vec<usize>,
    pub schemes: Vec<SchemeKind>,
    pub horizon: f64,
    pub n_steps: usize,
    pub repeats: usize,
    pub workers: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            path_counts: vec![1_000, 50_000],
            schemes: vec![SchemeKind::SevenLeague, SchemeKind::SevenLeagueCdc],
            horizon: 2.0,
            n_steps: 4,
            repeats: 10,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            seed: 1,
        }
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Times every `(n_paths, scheme)` cell on the sequential backend and on a
/// worker pool, taking the median of `repeats` runs after one discarded
/// warm-up run per backend.
pub fn speedup_bench<T: Real>(
    model: &SdeModel<T>,
    params: &ModelParams<T>,
    predictor: Option<&CollocationPredictor<'_, T>>,
    config: &BenchConfig,
) -> Result<BenchReport> {
    if config.repeats < 1 {
        return Err(Error::Config("repeats must be >= 1".into()));
    }
    if config.path_counts.is_empty() || config.schemes.is_empty() {
        return Err(Error::Config("path_counts and schemes must be non-empty".into()));
    }
    let pool = Backend::pool(config.workers)?;
    let sequential = Backend::Sequential;
    let mut rows = Vec::new();
    for &n_paths in &config.path_counts {
        for &scheme in &config.schemes {
            let cfg = SchemeConfig::new(
                T::of(config.horizon),
                config.n_steps,
                n_paths,
                scheme,
                config.seed,
            );
            // Warm-up runs, excluded from statistics.
            run_scheme(model, params, predictor, &cfg, &sequential)?;
            run_scheme(model, params, predictor, &cfg, &pool)?;

            let mut seq_times = Vec::with_capacity(config.repeats);
            let mut par_times = Vec::with_capacity(config.repeats);
            for _ in 0..config.repeats {
                let (result, secs) =
                    timed(|| run_scheme(model, params, predictor, &cfg, &sequential));
                result?;
                seq_times.push(secs);
            }
            for _ in 0..config.repeats {
                let (result, secs) = timed(|| run_scheme(model, params, predictor, &cfg, &pool));
                result?;
                par_times.push(secs);
            }
            let sequential_seconds = median(seq_times);
            let parallel_seconds = median(par_times);
            rows.push(BenchRow {
                n_paths,
                scheme,
                sequential_seconds,
                parallel_seconds,
                speedup: speedup_ratio(sequential_seconds, parallel_seconds),
            });
        }
    }
    Ok(BenchReport {
        rows,
        repeats: config.repeats,
        backend: pool.describe(),
        environment: format!(
            "{} logical cores",
            std::thread::available_parallelism().map_or(1, |n| n.get())
        ),
    })
}

//! Error metrics, convergence studies, benchmarks and the CLI.

mod bench;
mod cli;

pub use bench::{speedup_bench, speedup_ratio, BenchConfig, BenchReport, BenchRow};
pub use cli::cli_main;

use std::io::{BufWriter, Write as _};
use std::path::Path;

use crate::csvnum;
use crate::models::{ou_conditional_moments, ou_exact_sample, ModelParams, SdeModel};
use crate::num::Real;
use crate::runtime::Backend;
use crate::scheme::{run_scheme, CollocationPredictor, SchemeConfig};
use crate::simulate::{draw_standard_normal, PathSet, RngStream, SchemeKind};
use crate::{Error, Result};

/// Strong and weak terminal errors of one simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub dt: f64,
    pub scheme: SchemeKind,
    pub strong_error: f64,
    pub weak_error: f64,
    pub n_paths: usize,
}

/// Mean absolute terminal deviation from the coupled exact reference.
///
/// Every scheme here consumes exactly one normal draw per path per step
/// from the path's own stream, so the exact reference is rebuilt by
/// replaying those draws through the exact transition law step by step.
/// The result is the sample mean over paths of `|Y_T - Y_T_ref|`.
pub fn strong_error<T: Real>(paths: &PathSet<T>, params: &ModelParams<T>) -> Result<T> {
    params.validate()?;
    let n_steps = paths.n_steps();
    let times = paths.times();
    let mut total = T::zero();
    for p in 0..paths.n_paths() {
        let mut stream = RngStream::new(paths.master_seed(), p as u64);
        let row = paths.path(p);
        let mut reference = row[0];
        for i in 0..n_steps {
            let dt = times[i + 1] - times[i];
            let x = draw_standard_normal(&mut stream);
            reference = ou_exact_sample(reference, dt, params, x)?;
        }
        total = total + (row[n_steps] - reference).abs();
    }
    Ok(total / T::of_usize(paths.n_paths()))
}

/// Absolute difference between the terminal sample mean and the analytic
/// transition mean at the horizon.
pub fn weak_error<T: Real>(paths: &PathSet<T>, params: &ModelParams<T>) -> Result<T> {
    params.validate()?;
    let y0 = paths.path(0)[0];
    let horizon = *paths.times().last().expect("non-empty time grid");
    let analytic = ou_conditional_moments(y0, horizon, params)?.mean;
    let sum: T = paths.terminal_values().sum();
    let mean = sum / T::of_usize(paths.n_paths());
    Ok((mean - analytic).abs())
}

/// Step-size grid for [`convergence_study`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceConfig {
    pub horizon: f64,
    pub dt_values: Vec<f64>,
    pub schemes: Vec<SchemeKind>,
    pub n_paths: usize,
    pub seed: u64,
}

/// Number of steps for a `dt` that must divide the horizon.
pub(crate) fn steps_for(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || dt > horizon {
        return Err(Error::Config(format!("dt {dt} outside (0, {horizon}]")));
    }
    let n = (horizon / dt).round();
    if n < 1.0 || ((n * dt - horizon).abs() > 1e-9 * horizon.max(1.0)) {
        return Err(Error::Config(format!("dt {dt} does not divide horizon {horizon}")));
    }
    Ok(n as usize)
}

/// Runs every `(dt, scheme)` cell and reports strong and weak errors.
pub fn convergence_study<T: Real>(
    model: &SdeModel<T>,
    params: &ModelParams<T>,
    predictor: Option<&CollocationPredictor<'_, T>>,
    config: &ConvergenceConfig,
    backend: &Backend,
) -> Result<Vec<ErrorReport>> {
    let mut reports = Vec::with_capacity(config.dt_values.len() * config.schemes.len());
    for &dt in &config.dt_values {
        let n_steps = steps_for(config.horizon, dt)?;
        for &scheme in &config.schemes {
            let sim_cfg = SchemeConfig::new(
                T::of(config.horizon),
                n_steps,
                config.n_paths,
                scheme,
                config.seed,
            );
            let paths = run_scheme(model, params, predictor, &sim_cfg, backend)?;
            reports.push(ErrorReport {
                dt,
                scheme,
                strong_error: strong_error(&paths, params)?.as_f64(),
                weak_error: weak_error(&paths, params)?.as_f64(),
                n_paths: config.n_paths,
            });
        }
    }
    Ok(reports)
}

/// CSV with columns `dt,scheme,strong_error,weak_error,n_paths`.
pub fn write_error_reports_csv(reports: &[ErrorReport], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    out.write_all(b"dt,scheme,strong_error,weak_error,n_paths\n")?;
    for r in reports {
        let fields = [
            csvnum::fmt(r.dt),
            r.scheme.to_string(),
            csvnum::fmt(r.strong_error),
            csvnum::fmt(r.weak_error),
            r.n_paths.to_string(),
        ];
        out.write_all(csvnum::record(&fields).as_bytes())?;
    }
    out.flush()?;
    Ok(())
}

//! Scalar SDE models.
//!
//! The simulation code works against [`SdeModel`], a pair of pure drift and
//! diffusion callables plus an initial value. The Ornstein-Uhlenbeck
//! process is the concrete instance used throughout: it is the one model
//! with a closed-form Gaussian transition law, which makes it the oracle
//! for everything downstream — exact pathwise references for error
//! metrics and exact conditional collocation points for validating the
//! learned predictor.

use crate::collocation::CollocationGrid;
use crate::num::Real;
use crate::{Error, Result};

/// Below this value of `reversion_speed * dt` the transition variance
/// switches to its Taylor expansion to avoid 0/0 at zero reversion.
const SMALL_LAMBDA_DT: f64 = 1e-6;

/// Mean-reversion parameter set: long-term mean, reversion speed, volatility.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams<T> {
    pub mean_level: T,
    pub reversion_speed: T,
    pub volatility: T,
}

impl<T: Real> ModelParams<T> {
    /// Validates `reversion_speed >= 0`, `volatility >= 0`, all finite.
    pub fn new(mean_level: T, reversion_speed: T, volatility: T) -> Result<Self> {
        let p = ModelParams {
            mean_level,
            reversion_speed,
            volatility,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean_level.is_finite()
            && self.reversion_speed.is_finite()
            && self.volatility.is_finite())
        {
            return Err(Error::Config("model parameters must be finite".into()));
        }
        if self.reversion_speed < T::zero() {
            return Err(Error::Config("reversion_speed must be >= 0".into()));
        }
        if self.volatility < T::zero() {
            return Err(Error::Config("volatility must be >= 0".into()));
        }
        Ok(())
    }
}

/// A scalar Ito SDE `dY = a(t, Y) dt + b(t, Y) dW` with initial value.
///
/// Drift and diffusion are pure functions of their arguments, so models are
/// freely shareable across workers.
#[derive(Clone, Copy)]
pub struct SdeModel<T> {
    pub drift: fn(T, T, &ModelParams<T>) -> T,
    pub diffusion: fn(T, T, &ModelParams<T>) -> T,
    pub initial_value: T,
}

impl<T: Real> SdeModel<T> {
    pub fn drift(&self, t: T, y: T, params: &ModelParams<T>) -> T {
        (self.drift)(t, y, params)
    }

    pub fn diffusion(&self, t: T, y: T, params: &ModelParams<T>) -> T {
        (self.diffusion)(t, y, params)
    }
}

impl<T: std::fmt::Debug> std::fmt::Debug for SdeModel<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SdeModel")
            .field("initial_value", &self.initial_value)
            .finish_non_exhaustive()
    }
}

/// Ornstein-Uhlenbeck drift `-lambda * (y - mean)`.
pub fn ou_drift<T: Real>(_t: T, y: T, params: &ModelParams<T>) -> T {
    -params.reversion_speed * (y - params.mean_level)
}

/// Ornstein-Uhlenbeck diffusion: the constant volatility (additive noise).
pub fn ou_diffusion<T: Real>(_t: T, _y: T, params: &ModelParams<T>) -> T {
    params.volatility
}

/// The OU model with the given initial value.
pub fn ou_model<T: Real>(initial_value: T) -> SdeModel<T> {
    SdeModel {
        drift: ou_drift,
        diffusion: ou_diffusion,
        initial_value,
    }
}

/// Mean and standard deviation of a Gaussian conditional transition law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalMoments<T> {
    pub mean: T,
    pub std: T,
}

/// Exact OU transition moments over a step of length `dt > 0`:
///
/// ```text
/// mean = y0 * exp(-lambda dt) + mean_level * (1 - exp(-lambda dt))
/// var  = sigma^2 * (1 - exp(-2 lambda dt)) / (2 lambda)
/// ```
///
/// For `lambda * dt < 1e-6` the variance factor uses the three-term Taylor
/// expansion `dt * (1 - lambda dt + (2/3) (lambda dt)^2)`, which covers the
/// Brownian limit `lambda = 0` and keeps the two branches continuous to
/// machine precision.
pub fn ou_conditional_moments<T: Real>(
    y0: T,
    dt: T,
    params: &ModelParams<T>,
) -> Result<ConditionalMoments<T>> {
    if !(dt > T::zero()) {
        return Err(Error::Domain(format!("step size must be positive: {dt}")));
    }
    let lambda = params.reversion_speed;
    let decay = (-lambda * dt).exp();
    let mean = y0 * decay + params.mean_level * (T::one() - decay);
    let u = lambda * dt;
    let var_factor = if u < T::of(SMALL_LAMBDA_DT) {
        dt * (T::one() - u + T::of(2.0 / 3.0) * u * u)
    } else {
        // 1 - exp(-2u) without cancellation.
        -(-(T::of(2.0) * u)).exp_m1() / (T::of(2.0) * lambda)
    };
    let std = params.volatility * var_factor.sqrt();
    Ok(ConditionalMoments { mean, std })
}

/// Exact OU sample over horizon `t` given the standard normal draw `x`.
///
/// When `x` is the same draw a scheme consumed, this is the coupled
/// pathwise reference for that scheme's step.
pub fn ou_exact_sample<T: Real>(y0: T, t: T, params: &ModelParams<T>, x: T) -> Result<T> {
    let moments = ou_conditional_moments(y0, t, params)?;
    Ok(moments.mean + moments.std * x)
}

/// Exact conditional collocation points of the OU transition law: the
/// Gaussian quantiles at the grid nodes, `y_j = mean + std * x_j`.
///
/// Strictly increasing whenever `volatility > 0`. This is the ANN-free
/// ground truth the learned predictor is validated against.
pub fn ou_exact_collocation<T: Real>(
    y0: T,
    dt: T,
    params: &ModelParams<T>,
    grid: &CollocationGrid<T>,
) -> Result<Vec<T>> {
    let moments = ou_conditional_moments(y0, dt, params)?;
    Ok(grid
        .nodes()
        .iter()
        .map(|&x| moments.mean + moments.std * x)
        .collect())
}

//! Collocation grids for the standard normal and empirical quantile
//! extraction.
//!
//! The grid nodes are the abscissae of the polynomials orthogonal under the
//! N(0,1) density (probabilists' convention, unit variance), computed as the
//! eigenvalues of the symmetric tridiagonal Jacobi matrix with zero diagonal
//! and off-diagonal entries `sqrt(k)`. Each node carries its quantile level
//! `p_j = cdf(x_j)`; matching those levels in a sample set yields the
//! empirical collocation points of the sampled distribution.

use crate::interp;
use crate::num::Real;
use crate::{Error, Result};

/// Largest supported grid size.
pub const MAX_GRID_SIZE: usize = 20;

/// Default number of collocation points.
pub const DEFAULT_GRID_SIZE: usize = 5;

/// Gauss-Hermite nodes for N(0,1) with their quantile levels.
///
/// Invariants established by the constructor: nodes strictly ascending and
/// exactly antisymmetric (`x_j = -x_{m-1-j}`), levels strictly ascending
/// with `p_j + p_{m-1-j} = 1` up to rounding. The barycentric weights of
/// the node set are computed once here and reused by every interpolant
/// built on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationGrid<T> {
    nodes: Vec<T>,
    levels: Vec<T>,
    bary_weights: Vec<T>,
}

impl<T: Real> CollocationGrid<T> {
    pub fn m(&self) -> usize {
        self.nodes.len()
    }

    /// Nodes in standard-normal coordinates, ascending.
    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }

    /// Quantile levels `cdf(x_j)`, ascending, in (0,1).
    pub fn levels(&self) -> &[T] {
        &self.levels
    }

    /// Barycentric weights of the node set.
    pub fn bary_weights(&self) -> &[T] {
        &self.bary_weights
    }
}

/// Builds the size-`m` Gauss-Hermite grid, `1 <= m <= 20`.
pub fn gauss_hermite_grid<T: Real>(m: usize) -> Result<CollocationGrid<T>> {
    if !(1..=MAX_GRID_SIZE).contains(&m) {
        return Err(Error::Config(format!(
            "grid size m={m} outside 1..={MAX_GRID_SIZE}"
        )));
    }
    // Jacobi matrix of the probabilists' Hermite recurrence.
    let diag = vec![T::zero(); m];
    let mut off = vec![T::zero(); m];
    for (k, slot) in off.iter_mut().enumerate().take(m - 1) {
        *slot = T::of_usize(k + 1).sqrt();
    }
    let mut nodes = tridiag_eigenvalues(diag, off)?;

    // The spectrum is symmetric about zero; enforce that exactly.
    for j in 0..m / 2 {
        let v = (nodes[j] - nodes[m - 1 - j]) / T::of(2.0);
        nodes[j] = v;
        nodes[m - 1 - j] = -v;
    }
    if m % 2 == 1 {
        nodes[m / 2] = T::zero();
    }

    for w in nodes.windows(2) {
        if !(w[0] < w[1]) {
            return Err(Error::Domain(
                "Gauss-Hermite eigenvalues failed to separate".into(),
            ));
        }
    }
    let levels: Vec<T> = nodes.iter().map(|&x| normal_cdf(x)).collect();
    let bary_weights = interp::bary_weights(&nodes)?;
    Ok(CollocationGrid {
        nodes,
        levels,
        bary_weights,
    })
}

/// Standard normal cumulative distribution function.
///
/// Computed from the complementary error function; absolute error is at
/// the few-ulp level, far below 1e-12.
pub fn normal_cdf<T: Real>(x: T) -> T {
    let half = T::of(0.5);
    half * (-x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erfc()
}

/// Standard normal quantile function (inverse of [`normal_cdf`]).
///
/// Rational initial guess refined with one Halley step against the
/// erfc-based CDF. Returns the mathematical limits at `p <= 0` / `p >= 1`.
pub fn normal_quantile<T: Real>(p: T) -> T {
    if p <= T::zero() {
        return T::neg_infinity();
    }
    if p >= T::one() {
        return T::infinity();
    }
    let x = normal_quantile_approx(p);
    let two = T::of(2.0);
    let sqrt_two_pi = T::of((2.0 * std::f64::consts::PI).sqrt());
    let err = normal_cdf(x) - p;
    let u = err * sqrt_two_pi * (x * x / two).exp();
    x - u / (T::one() + x * u / two)
}

/// Rational approximation of the normal quantile (max relative error about
/// 1.2e-9). This is the transform used in the sampling hot loop, where the
/// approximation error is orders of magnitude below Monte Carlo noise.
pub(crate) fn normal_quantile_approx<T: Real>(p: T) -> T {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let p_low = T::of(0.02425);
    let one = T::one();
    let two = T::of(2.0);
    if p < p_low {
        let q = (-two * p.ln()).sqrt();
        (((((T::of(C[0]) * q + T::of(C[1])) * q + T::of(C[2])) * q + T::of(C[3])) * q
            + T::of(C[4]))
            * q
            + T::of(C[5]))
            / ((((T::of(D[0]) * q + T::of(D[1])) * q + T::of(D[2])) * q + T::of(D[3])) * q + one)
    } else if p <= one - p_low {
        let q = p - T::of(0.5);
        let r = q * q;
        q * (((((T::of(A[0]) * r + T::of(A[1])) * r + T::of(A[2])) * r + T::of(A[3])) * r
            + T::of(A[4]))
            * r
            + T::of(A[5]))
            / (((((T::of(B[0]) * r + T::of(B[1])) * r + T::of(B[2])) * r + T::of(B[3])) * r
                + T::of(B[4]))
                * r
                + one)
    } else {
        let q = (-two * (one - p).ln()).sqrt();
        -((((((T::of(C[0]) * q + T::of(C[1])) * q + T::of(C[2])) * q + T::of(C[3])) * q
            + T::of(C[4]))
            * q
            + T::of(C[5]))
            / ((((T::of(D[0]) * q + T::of(D[1])) * q + T::of(D[2])) * q + T::of(D[3])) * q + one))
    }
}

/// Empirical collocation points of a sample set: the sample quantiles at
/// the grid's levels.
///
/// Quantile rule: linear interpolation between order statistics with
/// plotting position `(k + 1/2) / n` for the k-th smallest sample. The
/// output is nondecreasing by construction.
pub fn empirical_collocation<T: Real>(samples: &[T], grid: &CollocationGrid<T>) -> Result<Vec<T>> {
    if samples.len() < grid.m() {
        return Err(Error::Config(format!(
            "need at least m={} samples, got {}",
            grid.m(),
            samples.len()
        )));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::Domain("samples must be finite".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite samples order"));
    Ok(grid
        .levels()
        .iter()
        .map(|&p| quantile_sorted(&sorted, p))
        .collect())
}

/// Quantile of an ascending sample at level `p`.
fn quantile_sorted<T: Real>(sorted: &[T], p: T) -> T {
    let n = sorted.len();
    let h = p * T::of_usize(n) - T::of(0.5);
    if h <= T::zero() {
        return sorted[0];
    }
    if h >= T::of_usize(n - 1) {
        return sorted[n - 1];
    }
    let k = h.floor();
    let frac = h - k;
    let k = k.to_usize().expect("in-range order statistic index");
    sorted[k] + frac * (sorted[k + 1] - sorted[k])
}

/// Eigenvalues of a symmetric tridiagonal matrix by the implicit-shift QL
/// iteration. `off[i]` couples `diag[i]` and `diag[i+1]`; `off[n-1]` is
/// ignored. Returns the eigenvalues sorted ascending.
fn tridiag_eigenvalues<T: Real>(mut diag: Vec<T>, mut off: Vec<T>) -> Result<Vec<T>> {
    let n = diag.len();
    if n == 0 {
        return Ok(diag);
    }
    off[n - 1] = T::zero();
    let two = T::of(2.0);
    for l in 0..n {
        let mut iterations = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = diag[m].abs() + diag[m + 1].abs();
                if off[m].abs() <= T::epsilon() * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iterations += 1;
            if iterations > 50 {
                return Err(Error::Domain(
                    "tridiagonal eigenvalue iteration did not converge".into(),
                ));
            }
            let mut g = (diag[l + 1] - diag[l]) / (two * off[l]);
            let mut r = g.hypot(T::one());
            g = diag[m] - diag[l] + off[l] / (g + r.copysign(g));
            let mut s = T::one();
            let mut c = T::one();
            let mut p = T::zero();
            let mut underflow = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * off[i];
                let b = c * off[i];
                r = f.hypot(g);
                off[i + 1] = r;
                if r == T::zero() {
                    diag[i + 1] = diag[i + 1] - p;
                    off[m] = T::zero();
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + two * c * b;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            diag[l] = diag[l] - p;
            off[l] = g;
            off[m] = T::zero();
        }
    }
    diag.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    Ok(diag)
}

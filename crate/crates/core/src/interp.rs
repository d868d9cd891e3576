//! Barycentric Lagrange interpolation.
//!
//! The sampler's map from a standard-normal draw to a target-distribution
//! sample is the degree-(m-1) polynomial through the m pairs
//! (node, collocation point), evaluated in the second barycentric form
//!
//! ```text
//!            sum_j  w_j * y_j / (x - x_j)
//!   g(x)  =  ----------------------------- ,   w_j = 1 / prod_{k!=j} (x_j - x_k).
//!            sum_j  w_j / (x - x_j)
//! ```
//!
//! The node set is fixed per run while the values change per path and per
//! step, so the weights are computed once (the grid caches them) and every
//! evaluation costs O(m). Arguments beyond the node range are evaluated by
//! the same formula, i.e. polynomial extrapolation.

use crate::collocation::CollocationGrid;
use crate::num::Real;
use crate::{Error, Result};

/// Relative node-hit tolerance: closer than this to a node, return the node
/// value directly instead of dividing by a vanishing gap.
const NODE_HIT_TOL: f64 = 1e-14;

/// A polynomial interpolant in barycentric form, borrowing its node set,
/// weights and values. Construction performs no arithmetic beyond a length
/// check, so per-path interpolants are free to build in the hot loop.
#[derive(Debug, Clone, Copy)]
pub struct BarycentricInterpolant<'a, T> {
    pub nodes: &'a [T],
    pub values: &'a [T],
    pub weights: &'a [T],
}

impl<'a, T: Real> BarycentricInterpolant<'a, T> {
    /// Evaluates the interpolant at `x` (second barycentric form).
    pub fn eval(&self, x: T) -> T {
        bary_eval_parts(self.nodes, self.weights, self.values, x)
    }
}

/// Barycentric weights `w_j = 1 / prod_{k!=j} (x_j - x_k)`.
///
/// Fails with [`Error::DegenerateNodes`] if two nodes coincide.
pub fn bary_weights<T: Real>(nodes: &[T]) -> Result<Vec<T>> {
    let m = nodes.len();
    let mut weights = vec![T::one(); m];
    for j in 0..m {
        for k in 0..m {
            if k == j {
                continue;
            }
            let gap = nodes[j] - nodes[k];
            if gap == T::zero() {
                return Err(Error::DegenerateNodes {
                    i: j.min(k),
                    j: j.max(k),
                });
            }
            weights[j] = weights[j] / gap;
        }
    }
    Ok(weights)
}

/// Builds the sampling map through `(grid.nodes()[j], points[j])`, reusing
/// the grid's cached weights.
pub fn build_gm<'a, T: Real>(
    grid: &'a CollocationGrid<T>,
    points: &'a [T],
) -> Result<BarycentricInterpolant<'a, T>> {
    if points.len() != grid.m() {
        return Err(Error::Config(format!(
            "expected {} collocation points, got {}",
            grid.m(),
            points.len()
        )));
    }
    Ok(BarycentricInterpolant {
        nodes: grid.nodes(),
        values: points,
        weights: grid.bary_weights(),
    })
}

/// Second-form barycentric evaluation over explicit parts.
pub(crate) fn bary_eval_parts<T: Real>(nodes: &[T], weights: &[T], values: &[T], x: T) -> T {
    let tol = T::of(NODE_HIT_TOL);
    let mut num = T::zero();
    let mut den = T::zero();
    for j in 0..nodes.len() {
        let gap = x - nodes[j];
        if gap.abs() < tol * T::one().max(nodes[j].abs()) {
            return values[j];
        }
        let q = weights[j] / gap;
        num = num + q * values[j];
        den = den + q;
    }
    num / den
}

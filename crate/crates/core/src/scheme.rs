//! The online large-time-step sampler.
//!
//! Each time step proceeds in two phases. First the collocation predictor
//! is evaluated once, batched over paths, yielding for every path the `m`
//! conditional collocation points of the transition law ahead of it. Then,
//! independently per path, the normal-to-target map through those points is
//! built (barycentric form, grid weights precomputed), one standard normal
//! is drawn from the path's own stream, and the map is evaluated. Collecting
//! all paths ends the step; every path consumes exactly one draw per step.
//!
//! The CDC ("compressed distribution of collocation points") variant cuts
//! predictor work per step from one row per path to `m` rows total: the
//! predictor is evaluated only at the `m` marginal collocation points of
//! the current cross-path distribution, and each path's conditional points
//! are recovered by interpolating the resulting table at its own state.

use crate::ann::{Mlp, Normalization};
use crate::collocation::{empirical_collocation, CollocationGrid};
use crate::interp::{bary_weights, build_gm};
use crate::models::{ou_conditional_moments, ModelParams, SdeModel};
use crate::num::Real;
use crate::runtime::{partition_paths, Backend};
use crate::simulate::{
    draw_standard_normal, euler_step, PathSet, RngStream, SchemeKind, FEATURE_DIM,
};
use crate::{Error, Result};

/// Matches the node-hit policy of the interpolation module.
const NODE_HIT_TOL: f64 = 1e-14;

/// Instrumentation accumulated over a simulation run.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct RunStats {
    /// Batched predictor calls.
    pub predictor_invocations: u64,
    /// Total rows across all predictor calls.
    pub predictor_rows: u64,
    /// Point vectors that were out of order and had to be sorted (or would
    /// have been sorted, when repair is disabled).
    pub sort_repairs: u64,
    /// Normal draws falling outside the collocation node range, where the
    /// map extrapolates.
    pub draws_outside_node_hull: u64,
    /// CDC only: path states outside the marginal node range.
    pub cdc_states_outside_hull: u64,
    /// CDC only: steps that fell back to nearest-row lookup because the
    /// marginal nodes contained duplicates.
    pub cdc_nearest_row_fallbacks: u64,
}

#[derive(Debug, Default, Clone, Copy)]
struct StepCounters {
    sort_repairs: u64,
    draws_outside_node_hull: u64,
    cdc_states_outside_hull: u64,
}

impl RunStats {
    fn absorb(&mut self, c: StepCounters) {
        self.sort_repairs += c.sort_repairs;
        self.draws_outside_node_hull += c.draws_outside_node_hull;
        self.cdc_states_outside_hull += c.cdc_states_outside_hull;
    }
}

/// What produces the conditional collocation points.
pub enum PredictorKind<'a, T: Real> {
    /// Closed-form OU transition law; the ANN-free reference predictor.
    ExactOu,
    /// A trained network with its feature/label normalization.
    Ann {
        mlp: &'a Mlp<T>,
        normalization: &'a Normalization<T>,
    },
}

/// A collocation-point predictor bound to a grid.
pub struct CollocationPredictor<'a, T: Real> {
    pub kind: PredictorKind<'a, T>,
    pub grid: &'a CollocationGrid<T>,
}

impl<'a, T: Real> CollocationPredictor<'a, T> {
    pub fn exact_ou(grid: &'a CollocationGrid<T>) -> Self {
        CollocationPredictor {
            kind: PredictorKind::ExactOu,
            grid,
        }
    }

    pub fn ann(
        mlp: &'a Mlp<T>,
        normalization: &'a Normalization<T>,
        grid: &'a CollocationGrid<T>,
    ) -> Result<Self> {
        if mlp.input_dim() != FEATURE_DIM {
            return Err(Error::Config(format!(
                "network expects {} inputs, the feature layout has {FEATURE_DIM}",
                mlp.input_dim()
            )));
        }
        if mlp.output_dim() != grid.m() {
            return Err(Error::Config(format!(
                "network has {} outputs for a grid of m={}",
                mlp.output_dim(),
                grid.m()
            )));
        }
        Ok(CollocationPredictor {
            kind: PredictorKind::Ann { mlp, normalization },
            grid,
        })
    }

    /// Conditional collocation points for one state. Equivalent to a
    /// one-row [`CollocationPredictor::predict_points_batch`].
    pub fn predict_points(
        &self,
        state: T,
        dt: T,
        params: &ModelParams<T>,
        repair: bool,
        stats: &mut RunStats,
    ) -> Result<Vec<T>> {
        self.predict_points_batch(std::slice::from_ref(&state), dt, params, repair, stats)
    }

    /// Conditional collocation points for a batch of states, one row per
    /// state, in a single predictor invocation. Rows are checked finite
    /// and sort-repaired (violations counted; sorting skipped when `repair`
    /// is false).
    pub fn predict_points_batch(
        &self,
        states: &[T],
        dt: T,
        params: &ModelParams<T>,
        repair: bool,
        stats: &mut RunStats,
    ) -> Result<Vec<T>> {
        let m = self.grid.m();
        let rows = states.len();
        let mut out;
        match &self.kind {
            PredictorKind::ExactOu => {
                out = Vec::with_capacity(rows * m);
                for &y in states {
                    let moments = ou_conditional_moments(y, dt, params)?;
                    for &x in self.grid.nodes() {
                        out.push(moments.mean + moments.std * x);
                    }
                }
            }
            PredictorKind::Ann { mlp, normalization } => {
                let mut features = Vec::with_capacity(rows * FEATURE_DIM);
                for &y in states {
                    features.push(y);
                    features.push(dt);
                    features.push(params.mean_level);
                    features.push(params.reversion_speed);
                    features.push(params.volatility);
                }
                let features = normalization.normalize_features(&features);
                let raw = mlp.forward(&features, rows)?;
                out = normalization.denormalize_labels(&raw);
            }
        }
        stats.predictor_invocations += 1;
        stats.predictor_rows += rows as u64;
        for (r, row) in out.chunks_exact_mut(m).enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Prediction { path: r });
            }
            if !row.windows(2).all(|w| w[0] <= w[1]) {
                stats.sort_repairs += 1;
                if repair {
                    row.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite points"));
                }
            }
        }
        Ok(out)
    }
}

/// Simulation configuration: horizon `T`, `N` equidistant steps of size
/// `T/N`, path count, scheme variant and master seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeConfig<T> {
    pub horizon: T,
    pub n_steps: usize,
    pub n_paths: usize,
    pub variant: SchemeKind,
    pub sort_repair: bool,
    pub seed: u64,
}

impl<T: Real> SchemeConfig<T> {
    pub fn new(horizon: T, n_steps: usize, n_paths: usize, variant: SchemeKind, seed: u64) -> Self {
        SchemeConfig {
            horizon,
            n_steps,
            n_paths,
            variant,
            sort_repair: true,
            seed,
        }
    }

    pub fn dt(&self) -> T {
        self.horizon / T::of_usize(self.n_steps)
    }

    fn validate(&self) -> Result<()> {
        if !(self.horizon > T::zero()) {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if self.n_steps == 0 || self.n_paths == 0 {
            return Err(Error::Config("n_steps and n_paths must be >= 1".into()));
        }
        Ok(())
    }

    fn times(&self) -> Vec<T> {
        (0..=self.n_steps)
            .map(|i| self.horizon * T::of_usize(i) / T::of_usize(self.n_steps))
            .collect()
    }
}

/// One sampler step for one path: build the map through the predicted
/// points on the grid nodes, draw once, evaluate.
pub fn seven_league_step<T: Real>(
    points: &[T],
    grid: &CollocationGrid<T>,
    stream: &mut RngStream,
) -> Result<T> {
    let gm = build_gm(grid, points)?;
    let x = draw_standard_normal(stream);
    Ok(gm.eval(x))
}

fn sampler_step<T: Real>(
    points: &[T],
    grid: &CollocationGrid<T>,
    stream: &mut RngStream,
    counters: &mut StepCounters,
) -> Result<T> {
    let gm = build_gm(grid, points)?;
    let x: T = draw_standard_normal(stream);
    let nodes = grid.nodes();
    if x < nodes[0] || x > nodes[nodes.len() - 1] {
        counters.draws_outside_node_hull += 1;
    }
    Ok(gm.eval(x))
}

/// Predictor table of the CDC variant for one time step.
///
/// `rows[k*m + j]` is the j-th conditional collocation point given the
/// k-th marginal node. Evaluation interpolates each column at a path's
/// state (barycentric over the marginal nodes). Degenerate marginal node
/// sets collapse to a single row (all states equal) or fall back to
/// nearest-row lookup (partial duplicates).
#[derive(Debug, Clone)]
pub struct CdcTable<T> {
    marginal_nodes: Vec<T>,
    marginal_weights: Option<Vec<T>>,
    rows: Vec<T>,
    m: usize,
}

/// Builds the per-step CDC table: marginal collocation points of the
/// current cross-path distribution, then one batched predictor call of `m`
/// rows (one row when all states coincide).
pub fn build_cdc_table<T: Real>(
    predictor: &CollocationPredictor<'_, T>,
    current_states: &[T],
    dt: T,
    params: &ModelParams<T>,
    repair: bool,
    stats: &mut RunStats,
) -> Result<CdcTable<T>> {
    let m = predictor.grid.m();
    let z = empirical_collocation(current_states, predictor.grid)?;
    if z.windows(2).all(|w| w[0] == w[1]) {
        let rows = predictor.predict_points_batch(&z[..1], dt, params, repair, stats)?;
        return Ok(CdcTable {
            marginal_nodes: vec![z[0]],
            marginal_weights: None,
            rows,
            m,
        });
    }
    let rows = predictor.predict_points_batch(&z, dt, params, repair, stats)?;
    let marginal_weights = match bary_weights(&z) {
        Ok(w) => Some(w),
        Err(Error::DegenerateNodes { .. }) => {
            stats.cdc_nearest_row_fallbacks += 1;
            None
        }
        Err(e) => return Err(e),
    };
    Ok(CdcTable {
        marginal_nodes: z,
        marginal_weights,
        rows,
        m,
    })
}

impl<T: Real> CdcTable<T> {
    pub fn marginal_nodes(&self) -> &[T] {
        &self.marginal_nodes
    }

    /// Conditional collocation points for a path at state `y`.
    pub fn points_for_path(&self, y: T) -> Vec<T> {
        let mut out = vec![T::zero(); self.m];
        let mut scratch = StepCounters::default();
        self.fill_points(y, &mut out, &mut scratch);
        out
    }

    fn fill_points(&self, y: T, out: &mut [T], counters: &mut StepCounters) {
        let z = &self.marginal_nodes;
        let k_rows = z.len();
        if k_rows == 1 {
            out.copy_from_slice(&self.rows[..self.m]);
            return;
        }
        if y < z[0] || y > z[k_rows - 1] {
            counters.cdc_states_outside_hull += 1;
        }
        match &self.marginal_weights {
            Some(weights) => {
                let tol = T::of(NODE_HIT_TOL);
                for (k, &zk) in z.iter().enumerate() {
                    if (y - zk).abs() < tol * T::one().max(zk.abs()) {
                        out.copy_from_slice(&self.rows[k * self.m..(k + 1) * self.m]);
                        return;
                    }
                }
                // Shared barycentric factors across the m columns.
                let mut den = T::zero();
                out.iter_mut().for_each(|o| *o = T::zero());
                for k in 0..k_rows {
                    let q = weights[k] / (y - z[k]);
                    den = den + q;
                    let row = &self.rows[k * self.m..(k + 1) * self.m];
                    for (o, &c) in out.iter_mut().zip(row) {
                        *o = *o + q * c;
                    }
                }
                for o in out.iter_mut() {
                    *o = *o / den;
                }
            }
            None => {
                // Nearest marginal node by distance.
                let mut best = 0usize;
                let mut best_gap = (y - z[0]).abs();
                for (k, &zk) in z.iter().enumerate().skip(1) {
                    let gap = (y - zk).abs();
                    if gap < best_gap {
                        best = k;
                        best_gap = gap;
                    }
                }
                out.copy_from_slice(&self.rows[best * self.m..(best + 1) * self.m]);
            }
        }
        if !out.windows(2).all(|w| w[0] <= w[1]) {
            counters.sort_repairs += 1;
            out.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite points"));
        }
    }
}

struct PathChunk<'a, T> {
    first_path: usize,
    values: &'a mut [T],
    streams: &'a mut [RngStream],
    scratch: Vec<T>,
    counters: StepCounters,
}

/// Runs the per-path phase of one time step: for every path, reads column
/// `col`, applies `advance`, writes column `col + 1`. Paths are split into
/// contiguous groups over the backend's workers; values are independent of
/// the backend because each path's randomness comes from its own stream.
#[allow(clippy::too_many_arguments)]
fn run_path_phase<T, C, F>(
    backend: &Backend,
    row_len: usize,
    col: usize,
    values: &mut [T],
    streams: &mut [RngStream],
    scratch_len: usize,
    ctx: &C,
    advance: &F,
) -> Result<StepCounters>
where
    T: Real,
    C: Sync,
    F: Fn(&C, usize, T, &mut RngStream, &mut [T], &mut StepCounters) -> Result<T> + Sync,
{
    let n_paths = streams.len();
    let partition = partition_paths(n_paths, backend.workers());
    let mut chunks: Vec<PathChunk<'_, T>> = Vec::with_capacity(partition.len());
    let mut values_rest = values;
    let mut streams_rest = streams;
    for range in &partition.groups {
        let (v_head, v_tail) = values_rest.split_at_mut(range.len() * row_len);
        let (s_head, s_tail) = streams_rest.split_at_mut(range.len());
        chunks.push(PathChunk {
            first_path: range.start,
            values: v_head,
            streams: s_head,
            scratch: vec![T::zero(); scratch_len],
            counters: StepCounters::default(),
        });
        values_rest = v_tail;
        streams_rest = s_tail;
    }

    backend.for_each_group(&mut chunks, &|chunk: &mut PathChunk<'_, T>| {
        for local in 0..chunk.streams.len() {
            let y = chunk.values[local * row_len + col];
            let path = chunk.first_path + local;
            let next = advance(
                ctx,
                path,
                y,
                &mut chunk.streams[local],
                &mut chunk.scratch,
                &mut chunk.counters,
            )?;
            chunk.values[local * row_len + col + 1] = next;
        }
        Ok(())
    })?;

    let mut total = StepCounters::default();
    for chunk in &chunks {
        total.sort_repairs += chunk.counters.sort_repairs;
        total.draws_outside_node_hull += chunk.counters.draws_outside_node_hull;
        total.cdc_states_outside_hull += chunk.counters.cdc_states_outside_hull;
    }
    Ok(total)
}

fn path_matrix<T: Real>(cfg: &SchemeConfig<T>, y0: T) -> (Vec<T>, Vec<RngStream>) {
    let row_len = cfg.n_steps + 1;
    let values = vec![y0; cfg.n_paths * row_len];
    let streams = (0..cfg.n_paths)
        .map(|p| RngStream::new(cfg.seed, p as u64))
        .collect();
    (values, streams)
}

fn gather_states<T: Real>(values: &[T], row_len: usize, col: usize, out: &mut [T]) {
    for (p, slot) in out.iter_mut().enumerate() {
        *slot = values[p * row_len + col];
    }
}

/// Large-step simulation with one predictor row per path per step.
pub fn simulate_7l<T: Real>(
    model: &SdeModel<T>,
    params: &ModelParams<T>,
    predictor: &CollocationPredictor<'_, T>,
    cfg: &SchemeConfig<T>,
    backend: &Backend,
) -> Result<PathSet<T>> {
    cfg.validate()?;
    params.validate()?;
    let row_len = cfg.n_steps + 1;
    let dt = cfg.dt();
    let m = predictor.grid.m();
    let (mut values, mut streams) = path_matrix(cfg, model.initial_value);
    let mut stats = RunStats::default();
    let mut states = vec![T::zero(); cfg.n_paths];
    for i in 0..cfg.n_steps {
        gather_states(&values, row_len, i, &mut states);
        let points =
            predictor.predict_points_batch(&states, dt, params, cfg.sort_repair, &mut stats)?;
        let ctx = (points, predictor.grid);
        let counters = run_path_phase(
            backend,
            row_len,
            i,
            &mut values,
            &mut streams,
            0,
            &ctx,
            &|(points, grid): &(Vec<T>, &CollocationGrid<T>),
              path,
              _y,
              stream,
              _scratch,
              counters| {
                sampler_step(&points[path * m..(path + 1) * m], grid, stream, counters)
            },
        )?;
        stats.absorb(counters);
    }
    Ok(PathSet::new(
        values,
        cfg.times(),
        SchemeKind::SevenLeague,
        cfg.seed,
        stats,
    ))
}

/// Large-step simulation with `m` predictor rows per step: predictions at
/// the marginal collocation points only, conditional points recovered per
/// path by interpolating the table.
pub fn simulate_cdc<T: Real>(
    model: &SdeModel<T>,
    params: &ModelParams<T>,
    predictor: &CollocationPredictor<'_, T>,
    cfg: &SchemeConfig<T>,
    backend: &Backend,
) -> Result<PathSet<T>> {
    cfg.validate()?;
    params.validate()?;
    if cfg.n_paths < predictor.grid.m() {
        return Err(Error::Config(format!(
            "CDC needs at least m={} paths, got {}",
            predictor.grid.m(),
            cfg.n_paths
        )));
    }
    let row_len = cfg.n_steps + 1;
    let dt = cfg.dt();
    let m = predictor.grid.m();
    let (mut values, mut streams) = path_matrix(cfg, model.initial_value);
    let mut stats = RunStats::default();
    let mut states = vec![T::zero(); cfg.n_paths];
    for i in 0..cfg.n_steps {
        gather_states(&values, row_len, i, &mut states);
        let table = build_cdc_table(predictor, &states, dt, params, cfg.sort_repair, &mut stats)?;
        let ctx = (table, predictor.grid);
        let counters = run_path_phase(
            backend,
            row_len,
            i,
            &mut values,
            &mut streams,
            m,
            &ctx,
            &|(table, grid): &(CdcTable<T>, &CollocationGrid<T>),
              _path,
              y,
              stream,
              scratch,
              counters| {
                table.fill_points(y, scratch, counters);
                sampler_step(scratch, grid, stream, counters)
            },
        )?;
        stats.absorb(counters);
    }
    Ok(PathSet::new(
        values,
        cfg.times(),
        SchemeKind::SevenLeagueCdc,
        cfg.seed,
        stats,
    ))
}

/// Euler-Maruyama on the same coarse grid and stream layout, for
/// convergence contrast.
pub fn simulate_euler<T: Real>(
    model: &SdeModel<T>,
    params: &ModelParams<T>,
    cfg: &SchemeConfig<T>,
    backend: &Backend,
) -> Result<PathSet<T>> {
    cfg.validate()?;
    params.validate()?;
    let row_len = cfg.n_steps + 1;
    let dt = cfg.dt();
    let (mut values, mut streams) = path_matrix(cfg, model.initial_value);
    let mut stats = RunStats::default();
    for i in 0..cfg.n_steps {
        let t = dt * T::of_usize(i);
        let ctx = (t, dt);
        let counters = run_path_phase(
            backend,
            row_len,
            i,
            &mut values,
            &mut streams,
            0,
            &ctx,
            &|&(t, dt): &(T, T), _path, y, stream, _scratch, _counters| {
                let x = draw_standard_normal(stream);
                Ok(euler_step(y, t, dt, model, params, x))
            },
        )?;
        stats.absorb(counters);
    }
    Ok(PathSet::new(
        values,
        cfg.times(),
        SchemeKind::Euler,
        cfg.seed,
        stats,
    ))
}

/// Exact per-step OU sampling on the same stream layout; the reference
/// sampler every other scheme is coupled against.
pub fn simulate_exact_ou<T: Real>(
    model: &SdeModel<T>,
    params: &ModelParams<T>,
    cfg: &SchemeConfig<T>,
    backend: &Backend,
) -> Result<PathSet<T>> {
    cfg.validate()?;
    params.validate()?;
    let row_len = cfg.n_steps + 1;
    let dt = cfg.dt();
    let (mut values, mut streams) = path_matrix(cfg, model.initial_value);
    let mut stats = RunStats::default();
    for i in 0..cfg.n_steps {
        let counters = run_path_phase(
            backend,
            row_len,
            i,
            &mut values,
            &mut streams,
            0,
            &dt,
            &|&dt: &T, _path, y, stream, _scratch, _counters| {
                let x: T = draw_standard_normal(stream);
                crate::models::ou_exact_sample(y, dt, params, x)
            },
        )?;
        stats.absorb(counters);
    }
    Ok(PathSet::new(
        values,
        cfg.times(),
        SchemeKind::ExactOu,
        cfg.seed,
        stats,
    ))
}

/// Dispatches on `cfg.variant`. The predictor is required for the
/// large-step variants and ignored by `euler` and `exact`.
pub fn run_scheme<T: Real>(
    model: &SdeModel<T>,
    params: &ModelParams<T>,
    predictor: Option<&CollocationPredictor<'_, T>>,
    cfg: &SchemeConfig<T>,
    backend: &Backend,
) -> Result<PathSet<T>> {
    match cfg.variant {
        SchemeKind::SevenLeague => {
            let p = predictor
                .ok_or_else(|| Error::Config("scheme 7l needs a predictor".into()))?;
            simulate_7l(model, params, p, cfg, backend)
        }
        SchemeKind::SevenLeagueCdc => {
            let p = predictor
                .ok_or_else(|| Error::Config("scheme 7l-cdc needs a predictor".into()))?;
            simulate_cdc(model, params, p, cfg, backend)
        }
        SchemeKind::Euler => simulate_euler(model, params, cfg, backend),
        SchemeKind::ExactOu => simulate_exact_ou(model, params, cfg, backend),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collocation::gauss_hermite_grid;
    use crate::models::{ou_exact_collocation, ou_exact_sample, ou_model};

    fn ou_params() -> ModelParams<f64> {
        ModelParams::new(0.0, 1.0, 0.5).unwrap()
    }

    #[test]
    fn exact_predictor_degenerate_when_flat() {
        let grid = gauss_hermite_grid(5).unwrap();
        let pred = CollocationPredictor::exact_ou(&grid);
        let params = ModelParams::new(0.3, 1.0, 0.0).unwrap();
        let mut stats = RunStats::default();
        let pts = pred
            .predict_points(1.0, 0.5, &params, true, &mut stats)
            .unwrap();
        assert!(pts.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn exact_predictor_matches_closed_form() {
        let grid = gauss_hermite_grid(5).unwrap();
        let pred = CollocationPredictor::exact_ou(&grid);
        let params = ou_params();
        let mut stats = RunStats::default();
        let pts = pred
            .predict_points(1.0, 0.5, &params, true, &mut stats)
            .unwrap();
        let reference = ou_exact_collocation(1.0, 0.5, &params, &grid).unwrap();
        assert_eq!(pts, reference);
        assert_eq!(stats.predictor_invocations, 1);
        assert_eq!(stats.predictor_rows, 1);
        assert_eq!(stats.sort_repairs, 0, "exact points already sorted");
    }

    #[test]
    fn batch_equals_per_row_loop() {
        let grid = gauss_hermite_grid(5).unwrap();
        let pred = CollocationPredictor::exact_ou(&grid);
        let params = ou_params();
        let states: Vec<f64> = (0..40).map(|i| -1.0 + i as f64 * 0.05).collect();
        let mut stats = RunStats::default();
        let batch = pred
            .predict_points_batch(&states, 0.25, &params, true, &mut stats)
            .unwrap();
        assert_eq!(stats.predictor_invocations, 1, "one batched invocation");
        assert_eq!(stats.predictor_rows, 40);
        for (r, &y) in states.iter().enumerate() {
            let mut row_stats = RunStats::default();
            let row = pred
                .predict_points(y, 0.25, &params, true, &mut row_stats)
                .unwrap();
            assert_eq!(&batch[r * 5..(r + 1) * 5], row.as_slice(), "row {r}");
        }

        let same = vec![0.7f64; 8];
        let rows = pred
            .predict_points_batch(&same, 0.25, &params, true, &mut stats)
            .unwrap();
        for r in 1..8 {
            assert_eq!(rows[..5], rows[r * 5..(r + 1) * 5]);
        }
    }

    #[test]
    fn non_finite_prediction_reports_path() {
        let grid = gauss_hermite_grid(3).unwrap();
        let mut stream = RngStream::new(8, 0);
        let mut mlp: Mlp<f64> = Mlp::new(&[5, 4, 3], &mut stream).unwrap();
        mlp.weights_mut()[1][0] = f64::NAN;
        let norm = Normalization {
            feature_shift: vec![0.0; 5],
            feature_scale: vec![1.0; 5],
            label_shift: vec![0.0; 3],
            label_scale: vec![1.0; 3],
        };
        let pred = CollocationPredictor::ann(&mlp, &norm, &grid).unwrap();
        let mut stats = RunStats::default();
        match pred.predict_points_batch(&[0.1, 0.2], 0.5, &ou_params(), true, &mut stats) {
            Err(Error::Prediction { path }) => assert_eq!(path, 0),
            other => panic!("expected prediction error, got {other:?}"),
        }
    }

    #[test]
    fn ann_predictor_shape_validation() {
        let grid = gauss_hermite_grid(5).unwrap();
        let mut stream = RngStream::new(8, 0);
        let wrong_out: Mlp<f64> = Mlp::new(&[5, 4, 3], &mut stream).unwrap();
        let norm = Normalization {
            feature_shift: vec![0.0; 5],
            feature_scale: vec![1.0; 5],
            label_shift: vec![0.0; 3],
            label_scale: vec![1.0; 3],
        };
        assert!(CollocationPredictor::ann(&wrong_out, &norm, &grid).is_err());
    }

    #[test]
    fn step_constant_points_ignore_draw() {
        let grid = gauss_hermite_grid(5).unwrap();
        let points = vec![2.5f64; 5];
        let mut stream = RngStream::new(1, 0);
        let y = seven_league_step(&points, &grid, &mut stream).unwrap();
        assert!((y - 2.5).abs() < 1e-12);
        assert_eq!(stream.counter(), 1, "one draw per step");
    }

    #[test]
    fn step_reproduces_gaussian_map() {
        let grid = gauss_hermite_grid(5).unwrap();
        let params = ou_params();
        let moments = ou_conditional_moments(1.0, 0.5, &params).unwrap();
        let points: Vec<f64> = grid.nodes().iter().map(|&x| moments.mean + moments.std * x).collect();
        let mut stream = RngStream::new(3, 7);
        let mut replay = stream.clone();
        let y = seven_league_step(&points, &grid, &mut stream).unwrap();
        let x: f64 = draw_standard_normal(&mut replay);
        assert!((y - (moments.mean + moments.std * x)).abs() < 1e-12);

        // Fixed stream state, deterministic output.
        let mut s1 = RngStream::new(3, 7);
        let mut s2 = RngStream::new(3, 7);
        assert_eq!(
            seven_league_step(&points, &grid, &mut s1).unwrap(),
            seven_league_step(&points, &grid, &mut s2).unwrap()
        );
    }

    fn small_cfg(n_steps: usize, n_paths: usize) -> SchemeConfig<f64> {
        SchemeConfig::new(2.0, n_steps, n_paths, SchemeKind::SevenLeague, 42)
    }

    #[test]
    fn deterministic_limit_follows_mean_trajectory() {
        let grid = gauss_hermite_grid(5).unwrap();
        let pred = CollocationPredictor::exact_ou(&grid);
        let params = ModelParams::new(0.0, 1.0, 0.0).unwrap();
        let model = ou_model(1.0);
        let cfg = small_cfg(4, 32);
        let paths = simulate_7l(&model, &params, &pred, &cfg, &Backend::Sequential).unwrap();
        for p in 0..paths.n_paths() {
            for (i, &t) in paths.times().iter().enumerate() {
                let expect = if i == 0 { 1.0 } else { (-t).exp() };
                assert!(
                    (paths.path(p)[i] - expect).abs() < 1e-12,
                    "path {p} step {i}"
                );
            }
        }
    }

    /// Pathwise oracle exactness: with the exact predictor, the sampler
    /// reproduces the exact per-step recursion with the same draws.
    #[test]
    fn exact_predictor_reproduces_exact_recursion() {
        let grid = gauss_hermite_grid(5).unwrap();
        let pred = CollocationPredictor::exact_ou(&grid);
        let params = ou_params();
        let model = ou_model(1.0);
        for n_steps in [1usize, 2, 4, 8] {
            let cfg = small_cfg(n_steps, 64);
            let paths = simulate_7l(&model, &params, &pred, &cfg, &Backend::Sequential).unwrap();
            let dt = cfg.dt();
            for p in 0..paths.n_paths() {
                let mut stream = RngStream::new(cfg.seed, p as u64);
                let mut y = 1.0f64;
                for i in 0..n_steps {
                    let x: f64 = draw_standard_normal(&mut stream);
                    y = ou_exact_sample(y, dt, &params, x).unwrap();
                    assert!(
                        (paths.path(p)[i + 1] - y).abs() < 1e-10,
                        "dt={dt} path {p} step {i}"
                    );
                }
            }
        }
    }

    #[test]
    fn predictor_row_counts_per_variant() {
        let grid = gauss_hermite_grid(5).unwrap();
        let pred = CollocationPredictor::exact_ou(&grid);
        let params = ou_params();
        let model = ou_model(1.0);
        let cfg = small_cfg(4, 128);
        let paths = simulate_7l(&model, &params, &pred, &cfg, &Backend::Sequential).unwrap();
        assert_eq!(paths.stats().predictor_invocations, 4);
        assert_eq!(paths.stats().predictor_rows, 4 * 128);
        assert_eq!(paths.stats().sort_repairs, 0);

        let mut cfg = cfg;
        cfg.variant = SchemeKind::SevenLeagueCdc;
        let cdc = simulate_cdc(&model, &params, &pred, &cfg, &Backend::Sequential).unwrap();
        assert_eq!(cdc.stats().predictor_invocations, 4);
        // All paths start at the same point, so the first step's marginal
        // distribution is a point mass and its table collapses to one row;
        // every later step costs m rows.
        assert_eq!(cdc.stats().predictor_rows, 1 + 3 * 5);
    }

    #[test]
    fn cdc_matches_plain_sampler_for_exact_predictor() {
        let grid = gauss_hermite_grid(5).unwrap();
        let pred = CollocationPredictor::exact_ou(&grid);
        let params = ou_params();
        let model = ou_model(1.0);
        let cfg = small_cfg(4, 512);
        let plain = simulate_7l(&model, &params, &pred, &cfg, &Backend::Sequential).unwrap();
        let cdc = simulate_cdc(&model, &params, &pred, &cfg, &Backend::Sequential).unwrap();
        let mut max_gap = 0.0f64;
        for (a, b) in plain.values().iter().zip(cdc.values()) {
            max_gap = max_gap.max((a - b).abs());
        }
        assert!(max_gap < 1e-8, "pathwise gap {max_gap}");
        assert_eq!(cdc.stats().cdc_nearest_row_fallbacks, 0);
    }

    #[test]
    fn cdc_table_interpolation_properties() {
        let grid = gauss_hermite_grid(5).unwrap();
        let pred = CollocationPredictor::exact_ou(&grid);
        let params = ou_params();
        let mut stats = RunStats::default();
        let states: Vec<f64> = (0..200).map(|i| -1.0 + 0.01 * i as f64).collect();
        let table = build_cdc_table(&pred, &states, 0.5, &params, true, &mut stats).unwrap();

        // At a marginal node, the table row comes back verbatim.
        let z0 = table.marginal_nodes()[2];
        let row = table.points_for_path(z0);
        assert_eq!(row, table.rows[2 * 5..3 * 5].to_vec());

        // Exact conditional points are affine in the state, which Lagrange
        // interpolation reproduces.
        for &y in &[-0.6, -0.1, 0.4, 0.8] {
            let via_table = table.points_for_path(y);
            let direct = pred
                .predict_points(y, 0.5, &params, true, &mut stats)
                .unwrap();
            for (a, b) in via_table.iter().zip(&direct) {
                assert!((a - b).abs() < 1e-9, "y={y}");
            }
        }
    }

    #[test]
    fn cdc_degenerate_states_collapse_to_single_row() {
        let grid = gauss_hermite_grid(5).unwrap();
        let pred = CollocationPredictor::exact_ou(&grid);
        let params = ou_params();
        let mut stats = RunStats::default();
        let states = vec![0.9f64; 50];
        let table = build_cdc_table(&pred, &states, 0.5, &params, true, &mut stats).unwrap();
        assert_eq!(table.marginal_nodes().len(), 1);
        let expected = pred
            .predict_points(0.9, 0.5, &params, true, &mut stats)
            .unwrap();
        assert_eq!(table.points_for_path(-3.0), expected);
        assert_eq!(table.points_for_path(7.0), expected);
    }

    #[test]
    fn constant_table_rows_give_constant_output() {
        let table = CdcTable {
            marginal_nodes: vec![-1.0, 0.0, 1.0],
            marginal_weights: Some(bary_weights(&[-1.0, 0.0, 1.0]).unwrap()),
            rows: vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0],
            m: 2,
        };
        for &y in &[-0.7, 0.3, 2.5] {
            assert_eq!(table.points_for_path(y), vec![1.0, 2.0]);
        }
    }

    #[test]
    fn terminal_moments_match_transition_law() {
        let grid = gauss_hermite_grid(5).unwrap();
        let pred = CollocationPredictor::exact_ou(&grid);
        let params = ou_params();
        let model = ou_model(1.0);
        let n_paths = 100_000;
        let cfg = SchemeConfig::new(2.0, 4, n_paths, SchemeKind::SevenLeague, 97);
        let paths = simulate_7l(&model, &params, &pred, &cfg, &Backend::Sequential).unwrap();
        let moments = ou_conditional_moments(1.0, 2.0, &params).unwrap();

        let n = n_paths as f64;
        let mean: f64 = paths.terminal_values().sum::<f64>() / n;
        let var: f64 = paths
            .terminal_values()
            .map(|y| (y - mean) * (y - mean))
            .sum::<f64>()
            / (n - 1.0);
        let mean_se = moments.std / n.sqrt();
        let var_se = moments.std * moments.std * (2.0 / (n - 1.0)).sqrt();
        assert!(
            (mean - moments.mean).abs() < 4.0 * mean_se,
            "terminal mean {mean} vs {} (4se {})",
            moments.mean,
            4.0 * mean_se
        );
        assert!(
            (var - moments.std * moments.std).abs() < 4.0 * var_se,
            "terminal variance {var} vs {} (4se {})",
            moments.std * moments.std,
            4.0 * var_se
        );
    }

    #[test]
    fn cdc_identical_to_plain_when_deterministic() {
        // sigma = 0: the constant interpolant reproduces the mean up to a
        // draw-dependent last bit, so the two variants coincide at rounding
        // level rather than bitwise.
        let grid = gauss_hermite_grid(5).unwrap();
        let pred = CollocationPredictor::exact_ou(&grid);
        let params = ModelParams::new(0.3, 1.0, 0.0).unwrap();
        let model = ou_model(1.0);
        let cfg = small_cfg(4, 64);
        let plain = simulate_7l(&model, &params, &pred, &cfg, &Backend::Sequential).unwrap();
        let cdc = simulate_cdc(&model, &params, &pred, &cfg, &Backend::Sequential).unwrap();
        for (a, b) in plain.values().iter().zip(cdc.values()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn backends_agree_bitwise() {
        let grid = gauss_hermite_grid(5).unwrap();
        let pred = CollocationPredictor::exact_ou(&grid);
        let params = ou_params();
        let model = ou_model(1.0);
        for variant in [SchemeKind::SevenLeague, SchemeKind::SevenLeagueCdc] {
            let mut cfg = small_cfg(3, 257);
            cfg.variant = variant;
            let seq = run_scheme(&model, &params, Some(&pred), &cfg, &Backend::Sequential).unwrap();
            let pool4 =
                run_scheme(&model, &params, Some(&pred), &cfg, &Backend::pool(4).unwrap()).unwrap();
            assert_eq!(seq, pool4, "{variant}: sequential vs pool(4)");
        }
    }

    #[test]
    fn euler_and_exact_schemes_run() {
        let params = ou_params();
        let model = ou_model(1.0);
        let mut cfg = small_cfg(4, 64);
        cfg.variant = SchemeKind::Euler;
        let euler = run_scheme(&model, &params, None, &cfg, &Backend::Sequential).unwrap();
        assert_eq!(euler.scheme(), SchemeKind::Euler);
        assert_eq!(euler.n_paths(), 64);

        cfg.variant = SchemeKind::ExactOu;
        let exact = run_scheme(&model, &params, None, &cfg, &Backend::Sequential).unwrap();

        // Exact-predictor sampler and the exact scheme share draws, so they
        // coincide pathwise up to interpolation rounding.
        let grid = gauss_hermite_grid(5).unwrap();
        let pred = CollocationPredictor::exact_ou(&grid);
        cfg.variant = SchemeKind::SevenLeague;
        let sl = run_scheme(&model, &params, Some(&pred), &cfg, &Backend::Sequential).unwrap();
        for (a, b) in exact.values().iter().zip(sl.values()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn missing_predictor_rejected() {
        let params = ou_params();
        let model = ou_model(1.0);
        let cfg = small_cfg(2, 8);
        assert!(run_scheme(&model, &params, None, &cfg, &Backend::Sequential).is_err());
    }
}

//! Implementation notes: the two limit systems get genuinely independent exact
//! solvers (a circulant cosine/sine expansion versus a dense symmetric
//! eigendecomposition over the permuted coupling), so cross-validation compares
//! different code paths, not one implementation with itself. The ε-level scheme is
//! arranged so the semi-discrete system is exactly the gradient flow of the
//! discrete energy with trapezoid weights; the energy balance check then measures
//! only time-integration error.

use crate::mgrid::{coarse_grain, extend_periodic, pairwise_sum, to_shuffled, CellFunction, MgridError};
use crate::schedule::{PeriodSchedule, ScheduleError};
use crate::shuffle::{compose_shuffle, neighbor_maps_finite, ShuffleError};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use thiserror::Error;

/// Halving iterations allowed when the rk4 step refines itself.
const MAX_HALVINGS: usize = 24;

/// Endpoint agreement (sup norm) at which rk4 step refinement stops.
const RK4_ENDPOINT_TOL: f64 = 1e-8;

/// Errors from solver configuration and validation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum HeatError {
    /// Underlying schedule query failed.
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    /// Underlying shuffle construction failed.
    #[error(transparent)]
    Shuffle(#[from] ShuffleError),
    /// Underlying cell-function operation failed.
    #[error(transparent)]
    Mgrid(#[from] MgridError),
    /// Heat conductivity must be finite and positive.
    #[error("diffusivity must be finite and positive, got {value}")]
    BadDiffusivity {
        /// Offending value.
        value: f64,
    },
    /// Escape and exchange rates must be finite and nonnegative.
    #[error("{name} rate must be finite and nonnegative, got {value}")]
    BadRate {
        /// Which rate.
        name: &'static str,
        /// Offending value.
        value: f64,
    },
    /// The gap half-fraction must satisfy 0 < δ < 1/2.
    #[error("delta must lie strictly between 0 and 1/2, got {value}")]
    BadDelta {
        /// Offending value.
        value: f64,
    },
    /// Layer states must be nonempty.
    #[error("layer state must hold at least one value")]
    EmptyState,
    /// A state value was NaN or infinite.
    #[error("state value at index {index} is not finite")]
    NonFinite {
        /// Offending index.
        index: usize,
    },
    /// Horizon and sample times must be finite and positive.
    #[error("time {value} must be finite and positive")]
    BadTime {
        /// Offending value.
        value: f64,
    },
    /// Trajectories need at least two snapshots.
    #[error("need at least 2 snapshots, got {samples}")]
    BadSamples {
        /// Requested snapshot count.
        samples: usize,
    },
    /// Comparison time lists must be nonempty.
    #[error("time list is empty")]
    EmptyTimes,
    /// Initial data sits at the wrong level.
    #[error("initial data at level {got}, expected level {expected}")]
    WrongLevel {
        /// Level the operation requires.
        expected: usize,
        /// Level found.
        got: usize,
    },
    /// Initial data must be scalar per block.
    #[error("initial data must be one-dimensional with payload 1, got dim {dim} payload {payload}")]
    NotScalarBlocks {
        /// Dimension found.
        dim: usize,
        /// Payload found.
        payload: usize,
    },
    /// Initial data lives on a different schedule.
    #[error("initial data uses a different period schedule")]
    ScheduleMismatch,
    /// Coarse level must not exceed the fine level.
    #[error("coarse level {coarse} exceeds fine level {fine}")]
    BadLevels {
        /// Coarse side.
        coarse: usize,
        /// Fine side.
        fine: usize,
    },
    /// Geometry must hold at least one layer.
    #[error("geometry needs at least one layer")]
    NoLayers,
    /// Each layer needs enough grid nodes.
    #[error("under-resolved layers: {nodes} nodes per layer, need at least 8")]
    UnderResolvedLayers {
        /// Nodes per layer requested.
        nodes: usize,
    },
    /// Grid profile length does not match the geometry.
    #[error("grid profile has {got} values, geometry wants {expected}")]
    LengthMismatch {
        /// Required length.
        expected: usize,
        /// Provided length.
        got: usize,
    },
    /// Explicit step exceeds the diffusion stability bound.
    #[error("stability violation: step {dt:.6e} exceeds the diffusion bound {max:.6e}")]
    UnstableStep {
        /// Requested step.
        dt: f64,
        /// Largest stable step dz²/(2A).
        max: f64,
    },
    /// The trajectory carries no dissipation integral.
    #[error("trajectory carries no dissipation integral; use the ε-level solver")]
    MissingDissipation,
    /// Step halving failed to settle the endpoint.
    #[error("rk4 endpoint did not settle after {steps} steps per interval")]
    NoConvergence {
        /// Final steps per interval tried.
        steps: usize,
    },
}

/// Physical parameters of the layered medium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatParams {
    /// Heat conductivity A inside each layer.
    #[serde(rename = "A")]
    pub diffusivity: f64,
    /// Escape rate K through gap faces to the environment.
    #[serde(rename = "K")]
    pub escape: f64,
    /// Exchange rate J between facing layers.
    #[serde(rename = "J")]
    pub exchange: f64,
    /// Gap half-fraction δ, 0 < δ < 1/2.
    pub delta: f64,
}

impl HeatParams {
    /// Validates positivity and range constraints.
    pub fn validate(&self) -> Result<(), HeatError> {
        if !(self.diffusivity.is_finite() && self.diffusivity > 0.0) {
            return Err(HeatError::BadDiffusivity {
                value: self.diffusivity,
            });
        }
        if !(self.escape.is_finite() && self.escape >= 0.0) {
            return Err(HeatError::BadRate {
                name: "escape",
                value: self.escape,
            });
        }
        if !(self.exchange.is_finite() && self.exchange >= 0.0) {
            return Err(HeatError::BadRate {
                name: "exchange",
                value: self.exchange,
            });
        }
        if !(self.delta.is_finite() && self.delta > 0.0 && self.delta < 0.5) {
            return Err(HeatError::BadDelta { value: self.delta });
        }
        Ok(())
    }

    /// The factor 1 − 2δ scaling every limit coupling.
    pub fn coupling_scale(&self) -> f64 {
        1.0 - 2.0 * self.delta
    }
}

/// Integration method for the limit systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Spectral solution, exact up to rounding.
    Exact,
    /// Classical fixed-step rk4 with endpoint-settling step refinement.
    Rk4,
}

/// Per-layer values of a limit system, indexed cyclically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerState {
    values: Vec<f64>,
}

impl LayerState {
    /// Wraps per-layer values; must be nonempty and finite.
    pub fn new(values: Vec<f64>) -> Result<Self, HeatError> {
        if values.is_empty() {
            return Err(HeatError::EmptyState);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(HeatError::NonFinite { index });
        }
        Ok(Self { values })
    }

    /// Layer count M.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// Always false by construction.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// The values in layer order.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value of layer j with indices taken modulo M.
    pub fn get(&self, j: i64) -> f64 {
        let m = self.values.len() as i64;
        self.values[j.rem_euclid(m) as usize]
    }

    /// Mean over layers.
    pub fn mean(&self) -> f64 {
        pairwise_sum(&self.values) / self.values.len() as f64
    }
}

/// Time-ordered solver output at uniform snapshot cadence.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    method: Method,
    step: Option<f64>,
    dissipation: Option<f64>,
}

impl Trajectory {
    fn new(
        times: Vec<f64>,
        states: Vec<Vec<f64>>,
        method: Method,
        step: Option<f64>,
        dissipation: Option<f64>,
    ) -> Self {
        debug_assert!(times.len() == states.len() && !times.is_empty());
        debug_assert!(times.windows(2).all(|w| w[1] > w[0]));
        Self {
            times,
            states,
            method,
            step,
            dissipation,
        }
    }

    /// Snapshot times, strictly increasing from 0.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Snapshot states, one vector per time.
    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    /// The state at the final time.
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory is nonempty")
    }

    /// The final time.
    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory is nonempty")
    }

    /// How the trajectory was produced.
    pub fn method(&self) -> Method {
        self.method
    }

    /// Fixed time step, when a stepping method produced the run.
    pub fn step(&self) -> Option<f64> {
        self.step
    }

    /// Accumulated ∫‖∂u/∂t‖² dt, when the solver tracked it.
    pub fn dissipation(&self) -> Option<f64> {
        self.dissipation
    }

    /// Long-format CSV of the whole run: one `t,block_or_layer_index,value` row
    /// per state entry per snapshot.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,block_or_layer_index,value\n");
        for (t, state) in self.times.iter().zip(&self.states) {
            for (i, v) in state.iter().enumerate() {
                out.push_str(&crate::mgrid::format_f64(*t));
                out.push(',');
                out.push_str(&i.to_string());
                out.push(',');
                out.push_str(&crate::mgrid::format_f64(*v));
                out.push('\n');
            }
        }
        out
    }
}

/// Serializable description of one shuffle-limit run: which schedule level to
/// evolve, for how long, and by which method. The JSON keys are `params`
/// (with `A`, `K`, `J`, `delta`), `schedule`, `level`, `T`, and `method`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    /// Physical parameters.
    pub params: HeatParams,
    /// The period schedule the block grid lives on.
    pub schedule: PeriodSchedule,
    /// Level of the block grid.
    pub level: usize,
    /// Final time.
    #[serde(rename = "T")]
    pub t_final: f64,
    /// Integration method.
    pub method: Method,
}

fn check_horizon(t_final: f64, samples: usize) -> Result<(), HeatError> {
    if !(t_final.is_finite() && t_final > 0.0) {
        return Err(HeatError::BadTime { value: t_final });
    }
    if samples < 2 {
        return Err(HeatError::BadSamples { samples });
    }
    Ok(())
}

/// One classical rk4 sweep at fixed steps per snapshot interval.
fn rk4_run<F: Fn(&[f64], &mut [f64])>(
    rhs: &F,
    u0: &[f64],
    t_final: f64,
    samples: usize,
    steps: usize,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = u0.len();
    let interval = t_final / (samples - 1) as f64;
    let dt = interval / steps as f64;
    let mut times = Vec::with_capacity(samples);
    let mut states = Vec::with_capacity(samples);
    times.push(0.0);
    states.push(u0.to_vec());
    let mut u = u0.to_vec();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut stage = vec![0.0; n];
    for i in 1..samples {
        for _ in 0..steps {
            rhs(&u, &mut k1);
            for j in 0..n {
                stage[j] = u[j] + 0.5 * dt * k1[j];
            }
            rhs(&stage, &mut k2);
            for j in 0..n {
                stage[j] = u[j] + 0.5 * dt * k2[j];
            }
            rhs(&stage, &mut k3);
            for j in 0..n {
                stage[j] = u[j] + dt * k3[j];
            }
            rhs(&stage, &mut k4);
            for j in 0..n {
                u[j] += dt / 6.0 * (k1[j] + 2.0 * (k2[j] + k3[j]) + k4[j]);
            }
        }
        times.push(interval * i as f64);
        states.push(u.clone());
    }
    (times, states)
}

/// Runs rk4, doubling steps per interval until the endpoint state settles below
/// [`RK4_ENDPOINT_TOL`]; returns the settled run and its step.
fn rk4_settled<F: Fn(&[f64], &mut [f64])>(
    rhs: &F,
    u0: &[f64],
    t_final: f64,
    samples: usize,
    rate_scale: f64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>, f64), HeatError> {
    let interval = t_final / (samples - 1) as f64;
    let mut steps = ((interval * rate_scale / 2.5).ceil() as usize).max(4);
    let mut current = rk4_run(rhs, u0, t_final, samples, steps);
    for _ in 0..MAX_HALVINGS {
        let finer = rk4_run(rhs, u0, t_final, samples, steps * 2);
        let diff = current
            .1
            .last()
            .expect("nonempty")
            .iter()
            .zip(finer.1.last().expect("nonempty"))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        steps *= 2;
        if diff < RK4_ENDPOINT_TOL {
            let dt = interval / steps as f64;
            return Ok((finer.0, finer.1, dt));
        }
        current = finer;
    }
    Err(HeatError::NoConvergence { steps })
}

/// Right side of the cyclic limit system
/// du_j/dt = −(2K/(1−2δ))·u_j − (J/(1−2δ))·(2u_j − u_{j+1} − u_{j−1}).
fn system_rhs(params: &HeatParams, u: &[f64], out: &mut [f64]) {
    let m = u.len();
    let c = params.coupling_scale();
    let k2 = 2.0 * params.escape / c;
    let j = params.exchange / c;
    for i in 0..m {
        let up = u[(i + 1) % m];
        let down = u[(i + m - 1) % m];
        out[i] = -k2 * u[i] - j * (2.0 * u[i] - up - down);
    }
}

/// Exact circulant solution through the real discrete Fourier basis.
fn circulant_exact(
    params: &HeatParams,
    u0: &[f64],
    t_final: f64,
    samples: usize,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let m = u0.len();
    let mf = m as f64;
    let c = params.coupling_scale();
    let lambdas: Vec<f64> = (0..m)
        .map(|k| {
            let angle = TAU * k as f64 / mf;
            (2.0 * params.escape + params.exchange * (2.0 - 2.0 * angle.cos())) / c
        })
        .collect();
    let mut cos_coeff = Vec::with_capacity(m);
    let mut sin_coeff = Vec::with_capacity(m);
    for k in 0..m {
        let cos_terms: Vec<f64> = (0..m)
            .map(|j| u0[j] * (TAU * (k * j) as f64 / mf).cos())
            .collect();
        let sin_terms: Vec<f64> = (0..m)
            .map(|j| u0[j] * (TAU * (k * j) as f64 / mf).sin())
            .collect();
        cos_coeff.push(pairwise_sum(&cos_terms) / mf);
        sin_coeff.push(pairwise_sum(&sin_terms) / mf);
    }
    let interval = t_final / (samples - 1) as f64;
    let mut times = Vec::with_capacity(samples);
    let mut states = Vec::with_capacity(samples);
    for i in 0..samples {
        let t = interval * i as f64;
        let decay: Vec<f64> = lambdas.iter().map(|l| (-l * t).exp()).collect();
        let mut state = Vec::with_capacity(m);
        for j in 0..m {
            let modes: Vec<f64> = (0..m)
                .map(|k| {
                    let angle = TAU * (k * j) as f64 / mf;
                    (cos_coeff[k] * angle.cos() + sin_coeff[k] * angle.sin()) * decay[k]
                })
                .collect();
            state.push(pairwise_sum(&modes));
        }
        times.push(t);
        states.push(state);
    }
    (times, states)
}

/// Solves the cyclic two-scale limit system for the layer values.
pub fn solve_two_scale_system(
    params: &HeatParams,
    u0: &LayerState,
    t_final: f64,
    samples: usize,
    method: Method,
) -> Result<Trajectory, HeatError> {
    params.validate()?;
    check_horizon(t_final, samples)?;
    match method {
        Method::Exact => {
            let (times, states) = circulant_exact(params, u0.values(), t_final, samples);
            Ok(Trajectory::new(times, states, method, None, None))
        }
        Method::Rk4 => {
            let rate = (2.0 * params.escape + 4.0 * params.exchange) / params.coupling_scale();
            let rhs = |u: &[f64], out: &mut [f64]| system_rhs(params, u, out);
            let (times, states, dt) = rk4_settled(&rhs, u0.values(), t_final, samples, rate)?;
            Ok(Trajectory::new(times, states, method, Some(dt), None))
        }
    }
}

/// Coupling matrix of the shuffled limit system at one level: the circulant
/// conjugated by the composed shuffle, realized through the block-level τ± tables.
fn shuffle_coupling_matrix(
    s: &PeriodSchedule,
    level: usize,
    params: &HeatParams,
) -> Result<DMatrix<f64>, HeatError> {
    let maps = neighbor_maps_finite(s, level)?;
    let m = maps.up.len();
    let c = params.coupling_scale();
    let diag = (2.0 * params.escape + 2.0 * params.exchange) / c;
    let j = params.exchange / c;
    let mut mat = DMatrix::zeros(m, m);
    for b in 0..m {
        mat[(b, b)] += diag;
        mat[(b, maps.up[b] as usize)] -= j;
        mat[(b, maps.down[b] as usize)] -= j;
    }
    Ok(mat)
}

/// Solves the shuffled limit system dw/dt = −(2K/(1−2δ))w − (J/(1−2δ))(2w − w∘τ⁺ − w∘τ⁻)
/// on the level-N block grid.
pub fn solve_shuffle_limit(
    s: &PeriodSchedule,
    level: usize,
    params: &HeatParams,
    w0: &CellFunction,
    t_final: f64,
    samples: usize,
    method: Method,
) -> Result<Trajectory, HeatError> {
    params.validate()?;
    check_horizon(t_final, samples)?;
    if w0.schedule() != s {
        return Err(HeatError::ScheduleMismatch);
    }
    if w0.level() != level {
        return Err(HeatError::WrongLevel {
            expected: level,
            got: w0.level(),
        });
    }
    if w0.dim() != 1 || w0.payload() != 1 {
        return Err(HeatError::NotScalarBlocks {
            dim: w0.dim(),
            payload: w0.payload(),
        });
    }
    match method {
        Method::Exact => {
            let mat = shuffle_coupling_matrix(s, level, params)?;
            let m = mat.nrows();
            let eigen = mat.symmetric_eigen();
            let coeffs = eigen.eigenvectors.tr_mul(&DVector::from_column_slice(w0.values()));
            let interval = t_final / (samples - 1) as f64;
            let mut times = Vec::with_capacity(samples);
            let mut states = Vec::with_capacity(samples);
            for i in 0..samples {
                let t = interval * i as f64;
                let decayed = DVector::from_fn(m, |k, _| {
                    coeffs[k] * (-eigen.eigenvalues[k] * t).exp()
                });
                let state = &eigen.eigenvectors * decayed;
                times.push(t);
                states.push(state.iter().copied().collect());
            }
            Ok(Trajectory::new(times, states, method, None, None))
        }
        Method::Rk4 => {
            let maps = neighbor_maps_finite(s, level)?;
            let c = params.coupling_scale();
            let k2 = 2.0 * params.escape / c;
            let j = params.exchange / c;
            let rhs = |u: &[f64], out: &mut [f64]| {
                for b in 0..u.len() {
                    let up = u[maps.up[b] as usize];
                    let down = u[maps.down[b] as usize];
                    out[b] = -k2 * u[b] - j * (2.0 * u[b] - up - down);
                }
            };
            let rate = (2.0 * params.escape + 4.0 * params.exchange) / c;
            let (times, states, dt) = rk4_settled(&rhs, w0.values(), t_final, samples, rate)?;
            Ok(Trajectory::new(times, states, method, Some(dt), None))
        }
    }
}

/// Discretization geometry of the resolved layered problem: N layers, each carrying
/// an equally spaced node grid across its width (1 − 2δ)/N.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeatGeometry {
    layers: usize,
    nodes_per_layer: usize,
}

impl HeatGeometry {
    /// Validates the layer count and per-layer resolution (at least 8 nodes).
    pub fn new(layers: usize, nodes_per_layer: usize) -> Result<Self, HeatError> {
        if layers == 0 {
            return Err(HeatError::NoLayers);
        }
        if nodes_per_layer < 8 {
            return Err(HeatError::UnderResolvedLayers {
                nodes: nodes_per_layer,
            });
        }
        Ok(Self {
            layers,
            nodes_per_layer,
        })
    }

    /// Layer count N.
    pub fn layers(&self) -> usize {
        self.layers
    }

    /// Grid nodes per layer.
    pub fn nodes_per_layer(&self) -> usize {
        self.nodes_per_layer
    }

    /// Total unknowns.
    pub fn nodes(&self) -> usize {
        self.layers * self.nodes_per_layer
    }

    /// Width (1 − 2δ)/N of one layer.
    pub fn layer_width(&self, params: &HeatParams) -> f64 {
        params.coupling_scale() / self.layers as f64
    }

    /// Grid spacing inside a layer.
    pub fn spacing(&self, params: &HeatParams) -> f64 {
        self.layer_width(params) / (self.nodes_per_layer - 1) as f64
    }

    /// Physical z-coordinates of all nodes: layer j occupies
    /// ((j+δ)/N, (j+1−δ)/N) with nodes at its ends and equally spaced between.
    pub fn node_positions(&self, params: &HeatParams) -> Vec<f64> {
        let n = self.layers as f64;
        let h = self.spacing(params);
        let mut z = Vec::with_capacity(self.nodes());
        for j in 0..self.layers {
            let bottom = (j as f64 + params.delta) / n;
            for i in 0..self.nodes_per_layer {
                z.push(bottom + i as f64 * h);
            }
        }
        z
    }
}

/// Right side of the resolved scheme: interior second differences plus ghost-value
/// eliminated Robin fluxes on the gap faces; outer faces are insulated.
fn epsilon_rhs(geom: &HeatGeometry, params: &HeatParams, u: &[f64], out: &mut [f64]) {
    let n = geom.layers;
    let npl = geom.nodes_per_layer;
    let h = geom.spacing(params);
    let a = params.diffusivity;
    let inv_h2 = 1.0 / (h * h);
    let k_n = params.escape / n as f64;
    let j_n = params.exchange / n as f64;
    for layer in 0..n {
        let base = layer * npl;
        for i in 1..npl - 1 {
            out[base + i] = a * (u[base + i - 1] - 2.0 * u[base + i] + u[base + i + 1]) * inv_h2;
        }
        let bottom = u[base];
        let mut flux = 0.0;
        if layer > 0 {
            let partner = u[base - 1];
            flux = -k_n * bottom + j_n * (partner - bottom);
        }
        out[base] = 2.0 * a * (u[base + 1] - bottom) * inv_h2 + 2.0 / h * flux;
        let top = u[base + npl - 1];
        let mut flux = 0.0;
        if layer < n - 1 {
            let partner = u[base + npl];
            flux = -k_n * top + j_n * (partner - top);
        }
        out[base + npl - 1] = 2.0 * a * (u[base + npl - 2] - top) * inv_h2 + 2.0 / h * flux;
    }
}

/// ‖du‖² with the trapezoid weights of the layer grids (the norm whose gradient
/// flow the scheme realizes).
fn weighted_norm_sq(geom: &HeatGeometry, h: f64, du: &[f64]) -> f64 {
    let npl = geom.nodes_per_layer;
    let mut total = 0.0;
    for layer in 0..geom.layers {
        let base = layer * npl;
        let mut acc = 0.5 * (du[base] * du[base] + du[base + npl - 1] * du[base + npl - 1]);
        for i in 1..npl - 1 {
            acc += du[base + i] * du[base + i];
        }
        total += acc * h;
    }
    total
}

/// Composite Simpson integral of uniformly spaced samples; len must be odd.
fn simpson(values: &[f64], dt: f64) -> f64 {
    debug_assert!(values.len() >= 3 && values.len() % 2 == 1);
    let weighted: Vec<f64> = values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let w = if i == 0 || i == values.len() - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * v
        })
        .collect();
    pairwise_sum(&weighted) * dt / 3.0
}

/// Solves the resolved layered heat problem by rk4 on the ghost-eliminated scheme,
/// accumulating the dissipation integral ∫‖∂u/∂t‖² dt by Simpson's rule.
///
/// `dt` overrides the default step 0.25·dz²/(2A); explicit steps above dz²/(2A)
/// are rejected as unstable.
pub fn solve_epsilon_1d(
    geom: &HeatGeometry,
    params: &HeatParams,
    u0: &[f64],
    t_final: f64,
    dt: Option<f64>,
    samples: usize,
) -> Result<Trajectory, HeatError> {
    params.validate()?;
    check_horizon(t_final, samples)?;
    if u0.len() != geom.nodes() {
        return Err(HeatError::LengthMismatch {
            expected: geom.nodes(),
            got: u0.len(),
        });
    }
    if let Some(index) = u0.iter().position(|v| !v.is_finite()) {
        return Err(HeatError::NonFinite { index });
    }
    let h = geom.spacing(params);
    let dt_max = h * h / (2.0 * params.diffusivity);
    let requested = match dt {
        Some(v) => {
            if !(v.is_finite() && v > 0.0) {
                return Err(HeatError::BadTime { value: v });
            }
            if v > dt_max * (1.0 + 1e-12) {
                return Err(HeatError::UnstableStep { dt: v, max: dt_max });
            }
            v
        }
        None => 0.25 * dt_max,
    };
    let interval = t_final / (samples - 1) as f64;
    let mut steps = (interval / requested).ceil() as usize;
    steps += steps % 2;
    steps = steps.max(2);
    let dt_eff = interval / steps as f64;
    let n = u0.len();
    let mut u = u0.to_vec();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut stage = vec![0.0; n];
    let mut rates = Vec::with_capacity(steps + 1);
    let mut times = Vec::with_capacity(samples);
    let mut states = Vec::with_capacity(samples);
    times.push(0.0);
    states.push(u.clone());
    let mut dissipated = 0.0;
    for i in 1..samples {
        rates.clear();
        for _ in 0..steps {
            epsilon_rhs(geom, params, &u, &mut k1);
            rates.push(weighted_norm_sq(geom, h, &k1));
            for j in 0..n {
                stage[j] = u[j] + 0.5 * dt_eff * k1[j];
            }
            epsilon_rhs(geom, params, &stage, &mut k2);
            for j in 0..n {
                stage[j] = u[j] + 0.5 * dt_eff * k2[j];
            }
            epsilon_rhs(geom, params, &stage, &mut k3);
            for j in 0..n {
                stage[j] = u[j] + dt_eff * k3[j];
            }
            epsilon_rhs(geom, params, &stage, &mut k4);
            for j in 0..n {
                u[j] += dt_eff / 6.0 * (k1[j] + 2.0 * (k2[j] + k3[j]) + k4[j]);
            }
        }
        epsilon_rhs(geom, params, &u, &mut k1);
        rates.push(weighted_norm_sq(geom, h, &k1));
        dissipated += simpson(&rates, dt_eff);
        times.push(interval * i as f64);
        states.push(u.clone());
    }
    Ok(Trajectory::new(
        times,
        states,
        Method::Rk4,
        Some(dt_eff),
        Some(dissipated),
    ))
}

/// Trapezoid mean of each layer's grid values.
pub fn layer_means(geom: &HeatGeometry, u: &[f64]) -> Vec<f64> {
    assert_eq!(u.len(), geom.nodes(), "grid profile length mismatch");
    let npl = geom.nodes_per_layer;
    (0..geom.layers)
        .map(|layer| {
            let base = layer * npl;
            let mut acc = 0.5 * (u[base] + u[base + npl - 1]);
            for i in 1..npl - 1 {
                acc += u[base + i];
            }
            acc / (npl - 1) as f64
        })
        .collect()
}

/// Discrete energy of a grid profile: gradient term with trapezoid quadrature,
/// escape traces on the 2(N−1) interior gap faces, and exchange jumps across the
/// N−1 gaps.
pub fn energy(geom: &HeatGeometry, params: &HeatParams, u: &[f64]) -> f64 {
    assert_eq!(u.len(), geom.nodes(), "grid profile length mismatch");
    let npl = geom.nodes_per_layer;
    let n = geom.layers;
    let h = geom.spacing(params);
    let mut grad = 0.0;
    for layer in 0..n {
        let base = layer * npl;
        for i in 0..npl - 1 {
            let d = u[base + i + 1] - u[base + i];
            grad += d * d;
        }
    }
    let mut traces = 0.0;
    for layer in 0..n {
        let base = layer * npl;
        if layer > 0 {
            traces += u[base] * u[base];
        }
        if layer < n - 1 {
            let top = u[base + npl - 1];
            traces += top * top;
        }
    }
    let mut jumps = 0.0;
    for gap in 1..n {
        let d = u[gap * npl] - u[gap * npl - 1];
        jumps += d * d;
    }
    let nf = n as f64;
    0.5 * params.diffusivity * grad / h
        + 0.5 * params.escape / nf * traces
        + 0.5 * params.exchange / nf * jumps
}

/// Result of the energy balance audit.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    /// E(u(0)).
    pub initial: f64,
    /// E(u(T)).
    pub final_energy: f64,
    /// ∫₀ᵀ ‖∂u/∂t‖² dt accumulated along the run.
    pub dissipated: f64,
    /// |E(u(T)) + dissipated − E(u(0))|.
    pub residual: f64,
    /// Tolerance the residual was held to.
    pub tol: f64,
    /// residual ≤ tol.
    pub pass: bool,
}

/// Audits the energy identity E(u(T)) + ∫₀ᵀ‖∂u/∂t‖² dt = E(u(0)) along a resolved
/// trajectory; the trajectory must carry the dissipation integral.
pub fn energy_balance_check(
    traj: &Trajectory,
    geom: &HeatGeometry,
    params: &HeatParams,
    tol: f64,
) -> Result<EnergyReport, HeatError> {
    params.validate()?;
    let first = traj.states.first().ok_or(HeatError::EmptyState)?;
    if first.len() != geom.nodes() {
        return Err(HeatError::LengthMismatch {
            expected: geom.nodes(),
            got: first.len(),
        });
    }
    let dissipated = traj.dissipation.ok_or(HeatError::MissingDissipation)?;
    let initial = energy(geom, params, first);
    let final_energy = energy(geom, params, traj.final_state());
    let residual = (final_energy + dissipated - initial).abs();
    Ok(EnergyReport {
        initial,
        final_energy,
        dissipated,
        residual,
        tol,
        pass: residual <= tol,
    })
}

/// Result of comparing the two limit descriptions.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossValidateReport {
    /// The comparison times.
    pub times: Vec<f64>,
    /// Max-norm deviation between the two sides at each time.
    pub deviations: Vec<f64>,
    /// Tolerance each deviation was held to.
    pub tol: f64,
    /// All deviations within tolerance.
    pub pass: bool,
}

/// Cross-validates the limit descriptions: evolving level-n data through the cyclic
/// system and shuffling must match evolving its periodic extension through the
/// shuffled system at level N and coarse-graining back, at every requested time.
pub fn cross_validate(
    s: &PeriodSchedule,
    n: usize,
    big_n: usize,
    params: &HeatParams,
    w0: &CellFunction,
    times: &[f64],
    tol: f64,
) -> Result<CrossValidateReport, HeatError> {
    params.validate()?;
    if n > big_n {
        return Err(HeatError::BadLevels {
            coarse: n,
            fine: big_n,
        });
    }
    s.try_cumulative(big_n)?;
    if w0.schedule() != s {
        return Err(HeatError::ScheduleMismatch);
    }
    if w0.level() != n {
        return Err(HeatError::WrongLevel {
            expected: n,
            got: w0.level(),
        });
    }
    if w0.dim() != 1 || w0.payload() != 1 {
        return Err(HeatError::NotScalarBlocks {
            dim: w0.dim(),
            payload: w0.payload(),
        });
    }
    if times.is_empty() {
        return Err(HeatError::EmptyTimes);
    }
    let h_n = compose_shuffle(s, n)?;
    let h_fine = compose_shuffle(s, big_n)?;
    let extended = extend_periodic(w0, big_n)?;
    let shuffled0 = to_shuffled(&extended, &h_fine)?;
    let u0 = LayerState::new(w0.values().to_vec())?;
    let blocks_n = w0.values().len();
    let mut deviations = Vec::with_capacity(times.len());
    for &t in times {
        if !(t.is_finite() && t > 0.0) {
            return Err(HeatError::BadTime { value: t });
        }
        let system = solve_two_scale_system(params, &u0, t, 2, Method::Exact)?;
        let sys_final = system.final_state();
        let shuffled_sys: Vec<f64> = (0..blocks_n)
            .map(|b| sys_final[h_n.forward()[b] as usize])
            .collect();
        let limit = solve_shuffle_limit(s, big_n, params, &shuffled0, t, 2, Method::Exact)?;
        let fine_cf = CellFunction::new(s, big_n, 1, 1, limit.final_state().to_vec())?;
        let coarse = coarse_grain(&fine_cf, n)?;
        let dev = coarse
            .values()
            .iter()
            .zip(&shuffled_sys)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        deviations.push(dev);
    }
    let pass = deviations.iter().all(|d| *d <= tol);
    Ok(CrossValidateReport {
        times: times.to_vec(),
        deviations,
        tol,
        pass,
    })
}

//! Time integration of the transport network by tracing characteristics.
//!
//! Along a characteristic `x - v t = const` the density only decays, so every node is
//! read off either the inflow history at `x = 0` (when the characteristic entered
//! through the junction) or the initial line (when it started inside the circle),
//! multiplied by the exact survival factor of the path. Inflow and outflow traces are
//! sampled every `dt` into ring buffers; the junction reads the outflow buffer through
//! a [`DelayStencil`] and writes the next inflow sample.
//!
//! One step from `t` to `t + dt`:
//! 1. interior nodes at `t + dt` (they only read inflow samples up to `t`, because the
//!    transit time to node 1 is at least `dx / v_max ≥ dt`);
//! 2. push the outflow trace at `t + dt`;
//! 3. evaluate the junction condition for the inflow node at `t + dt`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::TraceHistory;
use crate::model::{network_bounds, NetworkSpec, VelocityBounds};
use crate::operators::{scattering_table, survival_unchecked, DelayStencil, VelocityGrid};

/// Spatial cells on the shortest circle unless overridden.
pub const DEFAULT_SPATIAL_CELLS: usize = 64;
/// Default time step as a fraction of `dx_min / v_max`.
pub const DEFAULT_CFL: f64 = 0.9;

const RANDOM_LATTICE: usize = 8;

fn mix(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice_cell(s: f64) -> usize {
    ((s * RANDOM_LATTICE as f64).floor().max(0.0) as usize).min(RANDOM_LATTICE - 1)
}

fn unit_velocity(vb: &VelocityBounds, v: f64) -> f64 {
    (v - vb.v_min) / vb.width()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldTerm {
    pub weight: f64,
    pub field: FieldPreset,
}

/// Initial density `f_j(x, v)` or history `φ_j(θ, v)` on one circle, written in the
/// unit coordinate `s ∈ [0, 1]` (`x / l_j` or `(θ + r_j) / r_j`).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FieldPreset {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    GaussianBump {
        amplitude: f64,
        center: f64,
        width: f64,
    },
    /// Piecewise constant on an 8 × 8 lattice over `(s, v)`, values in `[0, amplitude)`.
    RandomNonneg {
        seed: u64,
        #[serde(default = "unit")]
        amplitude: f64,
    },
    Combination {
        terms: Vec<FieldTerm>,
    },
}

fn unit() -> f64 {
    1.0
}

impl FieldPreset {
    pub fn value(&self, vb: &VelocityBounds, circle: usize, s: f64, v: f64) -> f64 {
        match self {
            FieldPreset::Zero => 0.0,
            FieldPreset::Constant { value } => *value,
            FieldPreset::GaussianBump {
                amplitude,
                center,
                width,
            } => {
                let d = (s - center) / width;
                amplitude * (-0.5 * d * d).exp()
            }
            FieldPreset::RandomNonneg { seed, amplitude } => {
                let cell = lattice_cell(s) * RANDOM_LATTICE + lattice_cell(unit_velocity(vb, v));
                let mut rng = ChaCha8Rng::seed_from_u64(mix(*seed, circle as u64));
                let mut x = 0.0;
                for _ in 0..=cell {
                    x = rng.gen::<f64>();
                }
                amplitude * x
            }
            FieldPreset::Combination { terms } => terms
                .iter()
                .map(|t| t.weight * t.field.value(vb, circle, s, v))
                .sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceTerm {
    pub weight: f64,
    pub disturbance: DisturbancePreset,
}

/// Junction disturbance `u(t, v)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DisturbancePreset {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    /// `value` on `[t0, t1)`, zero elsewhere.
    Pulse {
        value: f64,
        t0: f64,
        t1: f64,
    },
    /// Held for `hold` time units, piecewise constant on 8 velocity cells, values in `[0, bound]`.
    BoundedRandom {
        seed: u64,
        bound: f64,
        hold: f64,
    },
    Combination {
        terms: Vec<DisturbanceTerm>,
    },
}

impl DisturbancePreset {
    pub fn value(&self, vb: &VelocityBounds, t: f64, v: f64) -> f64 {
        match self {
            DisturbancePreset::Zero => 0.0,
            DisturbancePreset::Constant { value } => *value,
            DisturbancePreset::Pulse { value, t0, t1 } => {
                if (*t0..*t1).contains(&t) {
                    *value
                } else {
                    0.0
                }
            }
            DisturbancePreset::BoundedRandom { seed, bound, hold } => {
                let slot = (t / hold).floor().max(0.0) as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(mix(*seed, slot));
                let cell = lattice_cell(unit_velocity(vb, v));
                let mut x = 0.0;
                for _ in 0..=cell {
                    x = rng.gen::<f64>();
                }
                bound * x
            }
            DisturbancePreset::Combination { terms } => terms
                .iter()
                .map(|term| term.weight * term.disturbance.value(vb, t, v))
                .sum(),
        }
    }

    /// Declared bound on `sup_{t,v} |u(t, v)|`.
    pub fn sup_bound(&self) -> f64 {
        match self {
            DisturbancePreset::Zero => 0.0,
            DisturbancePreset::Constant { value } | DisturbancePreset::Pulse { value, .. } => {
                value.abs()
            }
            DisturbancePreset::BoundedRandom { bound, .. } => bound.abs(),
            DisturbancePreset::Combination { terms } => terms
                .iter()
                .map(|t| t.weight.abs() * t.disturbance.sup_bound())
                .sum(),
        }
    }

    /// `‖u‖_{L^∞(ℝ₊; L¹(V))}` from the declared bound.
    pub fn sup_norm(&self, vb: &VelocityBounds) -> f64 {
        self.sup_bound() * vb.width()
    }

    fn validate(&self) -> Result<()> {
        match self {
            DisturbancePreset::Pulse { t0, t1, .. } if !(t0 <= t1) => Err(Error::validation(
                "disturbance",
                None,
                "pulse needs t0 <= t1",
            )),
            DisturbancePreset::BoundedRandom { hold, bound, .. }
                if !(*hold > 0.0 && *bound >= 0.0) =>
            {
                Err(Error::validation(
                    "disturbance",
                    None,
                    "bounded random needs hold > 0 and bound >= 0",
                ))
            }
            DisturbancePreset::Combination { terms } => {
                terms.iter().try_for_each(|t| t.disturbance.validate())
            }
            _ => Ok(()),
        }
    }
}

/// The scenario document: data, disturbance and resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub initial: FieldPreset,
    #[serde(default)]
    pub history: FieldPreset,
    #[serde(default)]
    pub disturbance: DisturbancePreset,
    pub t_end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default = "default_stride")]
    pub stride: usize,
    /// Spatial cells on the shortest circle; longer circles get proportionally more.
    #[serde(default = "default_cells")]
    pub spatial_cells: usize,
    #[serde(default)]
    pub snapshots: bool,
}

fn default_stride() -> usize {
    1
}

fn default_cells() -> usize {
    DEFAULT_SPATIAL_CELLS
}

impl ScenarioConfig {
    pub fn new(t_end: f64) -> Self {
        Self {
            initial: FieldPreset::Zero,
            history: FieldPreset::Zero,
            disturbance: DisturbancePreset::Zero,
            t_end,
            dt: None,
            stride: 1,
            spatial_cells: DEFAULT_SPATIAL_CELLS,
            snapshots: false,
        }
    }

    pub fn from_json(doc: &str) -> Result<Self> {
        serde_json::from_str(doc).map_err(|e| Error::Schema(e.to_string()))
    }
}

/// A validated scenario bound to a network and velocity grid.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: NetworkSpec,
    pub grid: VelocityGrid,
    pub config: ScenarioConfig,
    cells: Vec<usize>,
    dt: f64,
}

impl Scenario {
    pub fn new(spec: NetworkSpec, grid: VelocityGrid, config: ScenarioConfig) -> Result<Self> {
        if !(config.t_end > 0.0 && config.t_end.is_finite()) {
            return Err(Error::validation("t_end", None, "t_end must be positive"));
        }
        if config.stride == 0 || config.spatial_cells == 0 {
            return Err(Error::validation(
                "stride",
                None,
                "stride and spatial_cells must be positive",
            ));
        }
        config.disturbance.validate()?;
        let l_under = network_bounds(&spec).l_under;
        let cells: Vec<usize> = spec
            .circles()
            .iter()
            .map(|c| {
                ((config.spatial_cells as f64 * c.length / l_under) - 1e-9)
                    .ceil()
                    .max(1.0) as usize
            })
            .collect();
        let limit = Self::cfl_limit_of(&spec, &cells);
        let dt = config.dt.unwrap_or(DEFAULT_CFL * limit);
        if !(dt > 0.0) {
            return Err(Error::validation("dt", None, "dt must be positive"));
        }
        if dt > limit * (1.0 + 1e-12) {
            return Err(Error::Cfl { dt, limit });
        }
        Ok(Self {
            spec,
            grid,
            config,
            cells,
            dt,
        })
    }

    fn cfl_limit_of(spec: &NetworkSpec, cells: &[usize]) -> f64 {
        let dx_min = spec
            .circles()
            .iter()
            .zip(cells)
            .map(|(c, &m)| c.length / m as f64)
            .fold(f64::INFINITY, f64::min);
        dx_min / spec.velocity().v_max
    }

    /// `dx_min / v_max`.
    pub fn cfl_limit(&self) -> f64 {
        Self::cfl_limit_of(&self.spec, &self.cells)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn spatial_cells(&self) -> &[usize] {
        &self.cells
    }

    /// Number of steps to reach `t_end`.
    pub fn steps(&self) -> usize {
        (self.config.t_end / self.dt - 1e-9).ceil() as usize
    }

    /// A copy with every field replaced by the given ones, same resolution.
    pub fn with_data(
        &self,
        initial: FieldPreset,
        history: FieldPreset,
        disturbance: DisturbancePreset,
    ) -> Self {
        let mut out = self.clone();
        out.config.initial = initial;
        out.config.history = history;
        out.config.disturbance = disturbance;
        out
    }

    /// `u(t, v_k)` on the velocity grid.
    pub fn disturbance_at(&self, t: f64) -> Vec<f64> {
        let vb = self.spec.velocity();
        self.grid
            .centers()
            .iter()
            .map(|&v| self.config.disturbance.value(vb, t, v))
            .collect()
    }
}

#[derive(Debug, Clone)]
struct CircleState {
    dx: f64,
    nodes: usize,
    /// `[k * nodes + m]`
    density: Vec<f64>,
    initial: Vec<f64>,
    /// `exp(-∫_0^{x_m} q / v_k)`
    inflow_decay: Vec<f64>,
    inflow: TraceHistory,
    trace: TraceHistory,
    stencil: DelayStencil,
    /// Stencil weight not yet re-emitted after `n` lags: `Σ_{m > n} w_m`.
    pending: Vec<f64>,
    /// `β_j(v_k, v_k') v_k' Δv_k' / v_k`, row-major by outgoing cell.
    scatter: Vec<f64>,
}

/// Densities, trace histories and clock of a running simulation.
#[derive(Debug, Clone)]
pub struct SimState {
    t: f64,
    steps: usize,
    dt: f64,
    centers: Vec<f64>,
    widths: Vec<f64>,
    circles: Vec<CircleState>,
}

impl SimState {
    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Density of circle `j`, `[k * (M_j + 1) + m]`.
    pub fn density(&self, j: usize) -> &[f64] {
        &self.circles[j].density
    }

    pub fn nodes(&self, j: usize) -> usize {
        self.circles[j].nodes
    }

    pub fn trace_history(&self, j: usize) -> &TraceHistory {
        &self.circles[j].trace
    }

    pub fn inflow_history(&self, j: usize) -> &TraceHistory {
        &self.circles[j].inflow
    }

    /// `Σ_j ∫∫ |z_j| dx dv`: trapezoid in space, midpoint in velocity.
    pub fn norm_state(&self) -> f64 {
        self.circles
            .iter()
            .map(|c| {
                (0..self.widths.len())
                    .map(|k| {
                        self.widths[k] * trapezoid(&c.density[k * c.nodes..(k + 1) * c.nodes], c.dx)
                    })
                    .sum::<f64>()
            })
            .sum()
    }

    /// `Σ_j ∫_{-r_j}^0 ∫ |z_j(t + θ, l_j, v)| dv dθ` over the stored traces.
    pub fn norm_history(&self, spec: &NetworkSpec) -> f64 {
        self.circles
            .iter()
            .zip(spec.circles())
            .map(|(c, cs)| {
                let per_lag = |n: usize| -> f64 {
                    c.trace
                        .lag(n)
                        .iter()
                        .zip(&self.widths)
                        .map(|(z, w)| z.abs() * w)
                        .sum()
                };
                window_integral(c.trace.len(), self.dt, cs.delay, per_lag)
            })
            .sum()
    }

    /// Outflow rate `∫ v z_j(t, l_j, v) dv` per circle.
    pub fn outflux(&self) -> Vec<f64> {
        self.circles
            .iter()
            .map(|c| self.flux(c.trace.lag(0)))
            .collect()
    }

    /// Inflow rate `∫ v z_j(t, 0, v) dv` per circle.
    pub fn influx(&self) -> Vec<f64> {
        self.circles
            .iter()
            .map(|c| self.flux(c.inflow.lag(0)))
            .collect()
    }

    fn flux(&self, z: &[f64]) -> f64 {
        z.iter()
            .zip(&self.centers)
            .zip(&self.widths)
            .map(|((z, v), w)| z * v * w)
            .sum()
    }
}

fn trapezoid(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    h * (values.iter().map(|v| v.abs()).sum::<f64>()
        - 0.5 * (values[0].abs() + values[n - 1].abs()))
}

/// `∫_0^{span} g(σ) dσ` for `g` sampled at lags `n · step`, linear in between.
fn window_integral(len: usize, step: f64, span: f64, sample: impl Fn(usize) -> f64) -> f64 {
    let mut total = 0.0;
    let mut n = 0;
    while (n as f64 + 1.0) * step <= span + 1e-12 * step && n + 1 < len {
        total += 0.5 * step * (sample(n) + sample(n + 1));
        n += 1;
    }
    let rest = span - n as f64 * step;
    if rest > 1e-12 * step && n + 1 < len {
        let (a, b) = (sample(n), sample(n + 1));
        let frac = rest / step;
        total += rest * (a + 0.5 * frac * (b - a));
    }
    total
}

/// Samples the initial data and pre-fills every history from the scenario presets.
pub fn init_state(scenario: &Scenario) -> SimState {
    let spec = &scenario.spec;
    let grid = &scenario.grid;
    let vb = spec.velocity();
    let dt = scenario.dt;
    let kn = grid.len();
    let mut circles: Vec<CircleState> = spec
        .circles()
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let cells = scenario.cells[j];
            let nodes = cells + 1;
            let dx = c.length / cells as f64;
            let mut initial = vec![0.0; kn * nodes];
            let mut inflow_decay = vec![0.0; kn * nodes];
            for k in 0..kn {
                let v = grid.center(k);
                for m in 0..nodes {
                    let x = m as f64 * dx;
                    initial[k * nodes + m] =
                        scenario
                            .config
                            .initial
                            .value(vb, j, m as f64 / cells as f64, v);
                    inflow_decay[k * nodes + m] = survival_unchecked(spec, j, 0.0, v, 0.0, x);
                }
            }
            let stencil = DelayStencil::for_circle(spec, j, dt);
            let lags = stencil.weights().len();
            let mut trace = TraceHistory::new(kn, lags + 1, dt);
            let mut sample = vec![0.0; kn];
            for n in (0..=lags).rev() {
                let theta = -(n as f64) * dt;
                let s = ((theta + c.delay) / c.delay).max(0.0);
                for (k, out) in sample.iter_mut().enumerate() {
                    *out = scenario.config.history.value(vb, j, s, grid.center(k));
                }
                trace.push(&sample);
            }
            let max_transit = c.length / grid.center(0);
            let inflow = TraceHistory::new(kn, (max_transit / dt).ceil() as usize + 3, dt);
            let pending = (0..lags)
                .map(|n| stencil.weights()[n + 1..].iter().sum())
                .collect();
            let table = scattering_table(spec, grid, j);
            let scatter = (0..kn * kn)
                .map(|idx| {
                    let (k, kp) = (idx / kn, idx % kn);
                    table[idx] * grid.center(kp) * grid.width(kp) / grid.center(k)
                })
                .collect();
            CircleState {
                dx,
                nodes,
                density: initial.clone(),
                initial,
                inflow_decay,
                inflow,
                trace,
                stencil,
                pending,
                scatter,
            }
        })
        .collect();
    let u = scenario.disturbance_at(0.0);
    let inflow = junction_inflow(spec, &circles, grid, &u);
    for (c, z0) in circles.iter_mut().zip(&inflow) {
        c.inflow.push(z0);
    }
    SimState {
        t: 0.0,
        steps: 0,
        dt,
        centers: grid.centers().to_vec(),
        widths: grid.widths().to_vec(),
        circles,
    }
}

/// `z_i(t, 0, v_k) = Σ_j w_ij [S_j(k) + u(t, v_k)/v_k]` with
/// `S_j(k) = Σ_k' β_j(v_k, v_k') v_k' Δv_k' / v_k · ∫dη_j(θ) z_j(t + θ, l_j, v_k')`.
fn junction_inflow(
    spec: &NetworkSpec,
    circles: &[CircleState],
    grid: &VelocityGrid,
    u: &[f64],
) -> Vec<Vec<f64>> {
    let kn = grid.len();
    let scattered: Vec<Vec<f64>> = circles
        .par_iter()
        .map(|c| {
            let mut delayed = vec![0.0; kn];
            for (n, &w) in c.stencil.weights().iter().enumerate() {
                if w != 0.0 {
                    for (d, z) in delayed.iter_mut().zip(c.trace.lag(n)) {
                        *d += w * z;
                    }
                }
            }
            (0..kn)
                .map(|k| {
                    c.scatter[k * kn..(k + 1) * kn]
                        .iter()
                        .zip(&delayed)
                        .map(|(b, d)| b * d)
                        .sum()
                })
                .collect()
        })
        .collect();
    let outside = spec.flags().input_outside_sum;
    (0..spec.len())
        .map(|i| {
            let mut z = vec![0.0; kn];
            let mut routed = 0.0;
            for (j, s) in scattered.iter().enumerate() {
                let w = spec.routing().get(i, j);
                if w == 0.0 {
                    continue;
                }
                routed += w;
                for (zk, sk) in z.iter_mut().zip(s) {
                    *zk += w * sk;
                }
            }
            let input_weight = if outside { 1.0 } else { routed };
            if input_weight != 0.0 {
                for (k, zk) in z.iter_mut().enumerate() {
                    *zk += input_weight * u[k] / grid.center(k);
                }
            }
            z
        })
        .collect()
}

/// Advances the state by one time step.
pub fn step(state: &mut SimState, scenario: &Scenario) -> Result<()> {
    let limit = scenario.cfl_limit();
    if state.dt > limit * (1.0 + 1e-12) {
        return Err(Error::Cfl {
            dt: state.dt,
            limit,
        });
    }
    let spec = &scenario.spec;
    let grid = &scenario.grid;
    let kn = grid.len();
    let dt = state.dt;
    let t_new = (state.steps + 1) as f64 * dt;

    state.circles.par_iter_mut().enumerate().for_each(|(j, c)| {
        let nodes = c.nodes;
        let cells = nodes - 1;
        for k in 0..kn {
            let v = grid.center(k);
            for m in 1..nodes {
                let x = m as f64 * c.dx;
                let transit = x / v;
                let idx = k * nodes + m;
                c.density[idx] = if transit <= t_new + 1e-12 * dt {
                    // entered through the junction at t_new - transit; newest inflow is at t_new - dt
                    let lag = (transit / dt - 1.0).max(0.0);
                    c.inflow.interpolate_cell(lag, k) * c.inflow_decay[idx]
                } else {
                    let foot = x - v * t_new;
                    let p = foot / c.dx;
                    let n = (p.floor() as usize).min(cells - 1);
                    let frac = p - n as f64;
                    let row = &c.initial[k * nodes..(k + 1) * nodes];
                    let f = (1.0 - frac) * row[n] + frac * row[n + 1];
                    f * survival_unchecked(spec, j, 0.0, v, foot, x)
                };
            }
        }
        let outflow: Vec<f64> = (0..kn).map(|k| c.density[k * nodes + cells]).collect();
        c.trace.push(&outflow);
    });

    let u = scenario.disturbance_at(t_new);
    let inflow = junction_inflow(spec, &state.circles, grid, &u);
    for (c, z0) in state.circles.iter_mut().zip(&inflow) {
        c.inflow.push(z0);
        for (k, &z) in z0.iter().enumerate() {
            c.density[k * c.nodes] = z;
        }
    }
    state.steps += 1;
    state.t = t_new;
    Ok(())
}

/// Mass on the circles plus mass travelling through the delay lines.
///
/// Outflow leaving circle `j` at `t - σ` is still in transit for the stencil weight
/// not yet re-emitted after lag `σ`, so the transit mass is `∫ F_j(t - σ) C_j(σ) dσ`
/// with `C_j` the remaining weight.
pub fn total_mass(state: &SimState) -> f64 {
    let transit: f64 = state
        .circles
        .iter()
        .map(|c| {
            let flux = |n: usize| state.flux(c.trace.lag(n));
            c.pending
                .iter()
                .enumerate()
                .filter(|(n, _)| n + 1 < c.trace.len())
                .map(|(n, &w)| 0.5 * state.dt * (flux(n) + flux(n + 1)) * w)
                .sum::<f64>()
        })
        .sum();
    state.norm_state() + transit
}

/// Recorded densities of every circle at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub densities: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub norm_state: Vec<f64>,
    pub norm_history: Vec<f64>,
    pub total_mass: Vec<f64>,
    /// `[record][circle]`
    pub outflux: Vec<Vec<f64>>,
    pub influx: Vec<Vec<f64>>,
    /// `‖u(t, ·)‖_{L¹(V)}` at each record.
    pub input_norm: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `‖z(t)‖ + ‖ž^t‖` per record.
    pub fn combined_norm(&self) -> Vec<f64> {
        self.norm_state
            .iter()
            .zip(&self.norm_history)
            .map(|(a, b)| a + b)
            .collect()
    }

    fn record(&mut self, state: &SimState, scenario: &Scenario) {
        self.times.push(state.t);
        self.norm_state.push(state.norm_state());
        self.norm_history.push(state.norm_history(&scenario.spec));
        self.total_mass.push(total_mass(state));
        self.outflux.push(state.outflux());
        self.influx.push(state.influx());
        let u = scenario.disturbance_at(state.t);
        self.input_norm
            .push(u.iter().zip(&state.widths).map(|(a, w)| a.abs() * w).sum());
        if scenario.config.snapshots {
            self.snapshots.push(Snapshot {
                t: state.t,
                densities: state.circles.iter().map(|c| c.density.clone()).collect(),
            });
        }
    }

    /// CSV with `t,norm_state,norm_history,total_mass,outflux_0,…`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let circles = self.outflux.first().map_or(0, Vec::len);
        write!(out, "t,norm_state,norm_history,total_mass")?;
        for j in 0..circles {
            write!(out, ",outflux_{j}")?;
        }
        writeln!(out)?;
        for r in 0..self.len() {
            write!(
                out,
                "{:e},{:e},{:e},{:e}",
                self.times[r], self.norm_state[r], self.norm_history[r], self.total_mass[r]
            )?;
            for f in &self.outflux[r] {
                write!(out, ",{f:e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Raw little-endian `f64`: per snapshot, `t` followed by every density in circle order.
    pub fn write_snapshots<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for s in &self.snapshots {
            out.write_all(&s.t.to_le_bytes())?;
            for d in s.densities.iter().flatten() {
                out.write_all(&d.to_le_bytes())?;
            }
        }
        Ok(())
    }
}

/// Runs the scenario to `t_end`, recording every `stride` steps (and the final step).
pub fn run(scenario: &Scenario) -> Result<Trajectory> {
    let mut state = init_state(scenario);
    let mut traj = Trajectory::default();
    traj.record(&state, scenario);
    let steps = scenario.steps();
    for n in 1..=steps {
        step(&mut state, scenario)?;
        if n % scenario.config.stride == 0 || n == steps {
            traj.record(&state, scenario);
        }
    }
    Ok(traj)
}

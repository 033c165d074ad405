//! Velocity-discretized junction operators.
//!
//! Indices are flattened as `circle * K + cell`. Every operator acts on weighted ℓ¹
//! where index `(·, k)` carries weight `Δv_k`, so the induced norm of a matrix `A` is
//! `max_col Σ_row Δv_row |A[row, col]| / Δv_col`.
//!
//! The gain operator maps inflow densities at the junction (one per circle) to the
//! inflow densities they produce one round trip later:
//!
//! ```text
//! Λ_λ[(i,k),(j,k')] = η̂_j(λ) · β_j(v_k, v_k') · v_k' / v_k · w_ij · S_j(λ, v_k') · Δv_k'
//! ```
//!
//! with `η̂_j` the Laplace transform of the delay measure and `S_j` the survival factor
//! along the whole circle. The block operator `PD_λ` splits this product through an
//! intermediate space indexed by routing edges `(i, j)` with `w_ij > 0`.

use std::io::Write;

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    density_breaks, measure_atoms, measure_density, network_bounds, routing_norm,
    AbsorptionProfile, DelayMeasure, NetworkSpec, VelocityBounds,
};

/// Above this many `(circle, cell)` unknowns operators are applied matrix-free.
pub const DENSE_LIMIT: usize = 20_000;

/// Uniform midpoint discretization of `[v_min, v_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityGrid {
    bounds: VelocityBounds,
    centers: Vec<f64>,
    widths: Vec<f64>,
}

impl VelocityGrid {
    pub const DEFAULT_CELLS: usize = 16;

    pub fn uniform(bounds: VelocityBounds, cells: usize) -> Result<Self> {
        if cells == 0 {
            return Err(Error::Precondition(
                "velocity grid needs at least one cell".into(),
            ));
        }
        if !(bounds.v_max > bounds.v_min && bounds.v_min > 0.0) {
            return Err(Error::Precondition(
                "velocity grid needs 0 < v_min < v_max".into(),
            ));
        }
        let h = bounds.width() / cells as f64;
        let centers = (0..cells)
            .map(|k| bounds.v_min + (k as f64 + 0.5) * h)
            .collect();
        Ok(Self {
            bounds,
            centers,
            widths: vec![h; cells],
        })
    }

    pub fn for_spec(spec: &NetworkSpec, cells: usize) -> Result<Self> {
        Self::uniform(*spec.velocity(), cells)
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn bounds(&self) -> &VelocityBounds {
        &self.bounds
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    #[inline]
    pub fn center(&self, k: usize) -> f64 {
        self.centers[k]
    }

    #[inline]
    pub fn width(&self, k: usize) -> f64 {
        self.widths[k]
    }

    /// Weighted ℓ¹ weights for a space of `blocks` copies of the grid.
    pub fn block_weights(&self, blocks: usize) -> Vec<f64> {
        (0..blocks)
            .flat_map(|_| self.widths.iter().copied())
            .collect()
    }
}

/// Square linear operator applied by matrix-vector products.
pub trait LinearOperator: Send + Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    /// The dense matrix, when one is stored.
    fn dense(&self) -> Option<&Array2<f64>> {
        None
    }
}

/// Dense nonnegative matrix together with its ℓ¹ weights.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockOperator {
    matrix: Array2<f64>,
    weights: Vec<f64>,
}

impl BlockOperator {
    pub fn new(matrix: Array2<f64>, weights: Vec<f64>) -> Self {
        assert_eq!(matrix.nrows(), matrix.ncols(), "block operators are square");
        assert_eq!(matrix.nrows(), weights.len(), "one weight per index");
        Self { matrix, weights }
    }

    /// Plain ℓ¹ (unit weights).
    pub fn from_matrix(matrix: Array2<f64>) -> Self {
        let n = matrix.nrows();
        Self::new(matrix, vec![1.0; n])
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Induced weighted ℓ¹ norm: the largest weighted column sum.
    pub fn norm(&self) -> f64 {
        let w = &self.weights;
        (0..self.matrix.ncols())
            .filter(|&c| w[c] > 0.0)
            .map(|c| {
                let col = self.matrix.column(c);
                col.iter().zip(w).map(|(a, wr)| wr * a.abs()).sum::<f64>() / w[c]
            })
            .fold(0.0, f64::max)
    }

    pub fn transpose(&self) -> BlockOperator {
        BlockOperator::new(self.matrix.t().to_owned(), self.weights.clone())
    }

    pub fn is_nonnegative(&self) -> bool {
        self.matrix.iter().all(|&a| a >= 0.0)
    }

    /// Writes `row,col,value` lines for every nonzero entry.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "row,col,value")?;
        for ((r, c), &a) in self.matrix.indexed_iter() {
            if a != 0.0 {
                writeln!(out, "{r},{c},{a:e}")?;
            }
        }
        Ok(())
    }
}

impl LinearOperator for BlockOperator {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (yi, row) in y.iter_mut().zip(self.matrix.rows()) {
            *yi = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    fn dense(&self) -> Option<&Array2<f64>> {
        Some(&self.matrix)
    }
}

/// `exp(-∫_0^x (λ + q_j(y, v)) / v dy)`.
pub fn survival_factor(spec: &NetworkSpec, j: usize, lambda: f64, v: f64, x: f64) -> Result<f64> {
    let c = spec.circle(j);
    if !(0.0..=c.length).contains(&x) {
        return Err(Error::Domain(format!(
            "position {x} outside [0, {}] on circle {j}",
            c.length
        )));
    }
    Ok(survival_unchecked(spec, j, lambda, v, 0.0, x))
}

/// `exp(-∫_a^b (λ + q_j)/v dy)` without range checks.
#[inline]
pub(crate) fn survival_unchecked(
    spec: &NetworkSpec,
    j: usize,
    lambda: f64,
    v: f64,
    a: f64,
    b: f64,
) -> f64 {
    let c = spec.circle(j);
    let q = c
        .absorption
        .path_integral(c.length, spec.velocity(), v, a, b);
    (-(lambda * (b - a) + q) / v).exp()
}

/// Largest survival factor over `x ∈ [0, l_j]` at `λ = 0`.
fn sup_survival(spec: &NetworkSpec, j: usize, v: f64) -> f64 {
    let c = spec.circle(j);
    match &c.absorption {
        AbsorptionProfile::Constant { value } => {
            if *value >= 0.0 {
                1.0
            } else {
                (-value * c.length / v).exp()
            }
        }
        // the exponent is piecewise linear in x, so the sup sits on a breakpoint
        AbsorptionProfile::Tabulated(t) => (0..=t.nx)
            .map(|m| survival_unchecked(spec, j, 0.0, v, 0.0, c.length * m as f64 / t.nx as f64))
            .fold(0.0, f64::max),
    }
}

/// `β_j(v_k, v_k')` on the grid, row-major by outgoing cell.
pub(crate) fn scattering_table(spec: &NetworkSpec, grid: &VelocityGrid, j: usize) -> Vec<f64> {
    let vb = spec.velocity();
    let beta = &spec.circle(j).scattering;
    let v = grid.centers();
    v.iter()
        .flat_map(|&vo| v.iter().map(move |&vi| beta.value(vb, vo, vi)))
        .collect()
}

/// Product in which a zero factor wins over an overflowed one.
#[inline]
fn mul0(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}

/// Every factor of `Λ_λ` evaluated once on the grid.
#[derive(Debug, Clone)]
pub struct JunctionFactors {
    lambda: f64,
    circles: usize,
    cells: usize,
    centers: Vec<f64>,
    widths: Vec<f64>,
    laplace: Vec<f64>,
    survival: Vec<f64>,
    beta: Vec<Vec<f64>>,
    routing: Vec<f64>,
    edges: Vec<(usize, usize)>,
}

impl JunctionFactors {
    pub fn new(spec: &NetworkSpec, grid: &VelocityGrid, lambda: f64) -> Self {
        let jn = spec.len();
        let kn = grid.len();
        let survival = (0..jn)
            .flat_map(|j| {
                let l = spec.circle(j).length;
                grid.centers()
                    .iter()
                    .map(move |&v| survival_unchecked(spec, j, lambda, v, 0.0, l))
                    .collect::<Vec<_>>()
            })
            .collect();
        let routing: Vec<f64> = (0..jn)
            .flat_map(|i| (0..jn).map(move |j| spec.routing().get(i, j)))
            .collect();
        let edges = (0..jn)
            .flat_map(|i| (0..jn).map(move |j| (i, j)))
            .filter(|&(i, j)| routing[i * jn + j] > 0.0)
            .collect();
        Self {
            lambda,
            circles: jn,
            cells: kn,
            centers: grid.centers().to_vec(),
            widths: grid.widths().to_vec(),
            laplace: spec.circles().iter().map(|c| c.laplace(lambda)).collect(),
            survival,
            beta: (0..jn).map(|j| scattering_table(spec, grid, j)).collect(),
            routing,
            edges,
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Dimension of the gain operator.
    pub fn gain_dim(&self) -> usize {
        self.circles * self.cells
    }

    /// Dimension of the block operator: inflow densities plus one block per edge.
    pub fn pd_dim(&self) -> usize {
        (self.circles + self.edges.len()) * self.cells
    }

    #[inline]
    fn w(&self, i: usize, j: usize) -> f64 {
        self.routing[i * self.circles + j]
    }

    /// `η̂_j β_j(v_k, v_k') v_k' Δv_k' / v_k`
    #[inline]
    fn scatter_entry(&self, j: usize, k: usize, kp: usize) -> f64 {
        let beta = self.beta[j][k * self.cells + kp];
        mul0(
            self.laplace[j],
            beta * self.centers[kp] * self.widths[kp] / self.centers[k],
        )
    }

    pub fn gain_entry(&self, i: usize, k: usize, j: usize, kp: usize) -> f64 {
        let w = self.w(i, j);
        mul0(
            self.scatter_entry(j, k, kp),
            w * self.survival[j * self.cells + kp],
        )
    }

    /// Norm of the delay-scatter block.
    pub fn scatter_norm(&self) -> f64 {
        let kn = self.cells;
        let mut incoming: Vec<usize> = self.edges.iter().map(|&(_, j)| j).collect();
        incoming.sort_unstable();
        incoming.dedup();
        incoming
            .into_iter()
            .flat_map(|j| {
                (0..kn).map(move |kp| {
                    (0..kn)
                        .map(|k| self.widths[k] * self.scatter_entry(j, k, kp))
                        .sum::<f64>()
                        / self.widths[kp]
                })
            })
            .fold(0.0, f64::max)
    }

    /// Norm of the route-and-survive block.
    pub fn route_norm(&self) -> f64 {
        let jn = self.circles;
        (0..jn)
            .flat_map(|j| {
                let col: f64 = (0..jn).map(|i| self.w(i, j)).sum();
                (0..self.cells).map(move |kp| self.survival[j * self.cells + kp] * col)
            })
            .fold(0.0, f64::max)
    }

    pub fn pd_norm(&self) -> f64 {
        self.scatter_norm().max(self.route_norm())
    }

    /// `Λ_λ` as a dense matrix, rows in parallel.
    pub fn gain_matrix(&self) -> Array2<f64> {
        let n = self.gain_dim();
        let kn = self.cells;
        let rows: Vec<f64> = (0..n)
            .into_par_iter()
            .flat_map_iter(|row| {
                let (i, k) = (row / kn, row % kn);
                (0..n).map(move |col| self.gain_entry(i, k, col / kn, col % kn))
            })
            .collect();
        Array2::from_shape_vec((n, n), rows).expect("square gain matrix")
    }

    /// `PD_λ = [[0, scatter], [route, 0]]` as a dense matrix.
    pub fn pd_matrix(&self) -> Array2<f64> {
        let kn = self.cells;
        let top = self.circles * kn;
        let n = self.pd_dim();
        let mut m = Array2::zeros((n, n));
        for (e, &(i, j)) in self.edges.iter().enumerate() {
            let base = top + e * kn;
            for k in 0..kn {
                for kp in 0..kn {
                    m[[i * kn + k, base + kp]] = self.scatter_entry(j, k, kp);
                }
                m[[base + k, j * kn + k]] = mul0(self.w(i, j), self.survival[j * kn + k]);
            }
        }
        m
    }
}

/// `Λ_λ` applied as three sweeps: survive, scatter per incoming circle, route.
#[derive(Debug, Clone)]
pub struct GainOperator {
    factors: JunctionFactors,
}

impl GainOperator {
    pub fn new(factors: JunctionFactors) -> Self {
        Self { factors }
    }
}

impl LinearOperator for GainOperator {
    fn dim(&self) -> usize {
        self.factors.gain_dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let f = &self.factors;
        let kn = f.cells;
        let scattered: Vec<f64> = (0..f.circles)
            .into_par_iter()
            .flat_map_iter(|j| {
                let flux: Vec<f64> = (0..kn)
                    .map(|kp| mul0(f.survival[j * kn + kp], x[j * kn + kp]))
                    .collect();
                (0..kn).map(move |k| {
                    (0..kn)
                        .map(|kp| mul0(f.scatter_entry(j, k, kp), flux[kp]))
                        .sum::<f64>()
                })
            })
            .collect();
        y.par_chunks_mut(kn).enumerate().for_each(|(i, yi)| {
            yi.fill(0.0);
            for j in 0..f.circles {
                let w = f.w(i, j);
                if w != 0.0 {
                    for (dst, s) in yi.iter_mut().zip(&scattered[j * kn..(j + 1) * kn]) {
                        *dst += w * s;
                    }
                }
            }
        });
    }
}

/// `PD_λ` applied matrix-free.
#[derive(Debug, Clone)]
pub struct PdOperator {
    factors: JunctionFactors,
}

impl PdOperator {
    pub fn new(factors: JunctionFactors) -> Self {
        Self { factors }
    }
}

impl LinearOperator for PdOperator {
    fn dim(&self) -> usize {
        self.factors.pd_dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let f = &self.factors;
        let kn = f.cells;
        let top = f.circles * kn;
        let (y_top, y_edges) = y.split_at_mut(top);
        y_top.fill(0.0);
        for (e, &(i, j)) in f.edges.iter().enumerate() {
            let h = &x[top + e * kn..top + (e + 1) * kn];
            for k in 0..kn {
                y_top[i * kn + k] += (0..kn)
                    .map(|kp| mul0(f.scatter_entry(j, k, kp), h[kp]))
                    .sum::<f64>();
            }
            for kp in 0..kn {
                y_edges[e * kn + kp] = mul0(f.w(i, j) * f.survival[j * kn + kp], x[j * kn + kp]);
            }
        }
    }
}

/// Dense when small, matrix-free otherwise.
pub fn gain_operator(
    spec: &NetworkSpec,
    grid: &VelocityGrid,
    lambda: f64,
) -> Box<dyn LinearOperator> {
    let factors = JunctionFactors::new(spec, grid, lambda);
    if factors.gain_dim() <= DENSE_LIMIT {
        let weights = grid.block_weights(spec.len());
        Box::new(BlockOperator::new(factors.gain_matrix(), weights))
    } else {
        Box::new(GainOperator::new(factors))
    }
}

/// Dense when small, matrix-free otherwise.
pub fn pd_operator(
    spec: &NetworkSpec,
    grid: &VelocityGrid,
    lambda: f64,
) -> Box<dyn LinearOperator> {
    let factors = JunctionFactors::new(spec, grid, lambda);
    if factors.pd_dim() <= DENSE_LIMIT {
        let weights = grid.block_weights(factors.pd_dim() / grid.len());
        Box::new(BlockOperator::new(factors.pd_matrix(), weights))
    } else {
        Box::new(PdOperator::new(factors))
    }
}

#[derive(Debug, Clone)]
pub struct GainAssemblyReport {
    pub lambda: f64,
    pub matrix: BlockOperator,
    /// Weighted norm of the change when each velocity cell is split in two.
    pub quadrature_residual: f64,
    /// `‖L e_λ‖`
    pub scatter_norm: f64,
    /// `‖𝓕 Ξ_λ‖`
    pub route_norm: f64,
}

/// Dense `Λ_λ` with diagnostics.
pub fn assemble_gain(spec: &NetworkSpec, grid: &VelocityGrid, lambda: f64) -> GainAssemblyReport {
    let factors = JunctionFactors::new(spec, grid, lambda);
    let matrix = BlockOperator::new(factors.gain_matrix(), grid.block_weights(spec.len()));
    GainAssemblyReport {
        lambda,
        quadrature_residual: quadrature_residual(spec, grid, lambda, &matrix),
        scatter_norm: factors.scatter_norm(),
        route_norm: factors.route_norm(),
        matrix,
    }
}

fn quadrature_residual(
    spec: &NetworkSpec,
    grid: &VelocityGrid,
    lambda: f64,
    gain: &BlockOperator,
) -> f64 {
    let kn = grid.len();
    let jn = spec.len();
    let vb = spec.velocity();
    let laplace: Vec<f64> = spec.circles().iter().map(|c| c.laplace(lambda)).collect();
    // split-cell column integrand: Δv/2 Σ_± β(v_k, v±) v± S_j(v±)
    let split = |j: usize, k: usize, kp: usize| -> f64 {
        let (v, h) = (grid.center(kp), grid.width(kp));
        let l = spec.circle(j).length;
        [v - 0.25 * h, v + 0.25 * h]
            .iter()
            .map(|&s| {
                spec.circle(j).scattering.value(vb, grid.center(k), s)
                    * s
                    * survival_unchecked(spec, j, lambda, s, 0.0, l)
            })
            .sum::<f64>()
            * 0.5
            * h
    };
    (0..jn * kn)
        .into_par_iter()
        .map(|col| {
            let (j, kp) = (col / kn, col % kn);
            let mut total = 0.0;
            for i in 0..jn {
                let w = spec.routing().get(i, j);
                if w == 0.0 {
                    continue;
                }
                for k in 0..kn {
                    let refined = laplace[j] / grid.center(k) * w * split(j, k, kp);
                    total += grid.width(k) * (refined - gain.matrix()[[i * kn + k, col]]).abs();
                }
            }
            total / grid.width(kp)
        })
        .reduce(|| 0.0, f64::max)
}

/// Dense `PD_λ` on `(J + E)·K` indices.
pub fn assemble_pd(spec: &NetworkSpec, grid: &VelocityGrid, lambda: f64) -> BlockOperator {
    let factors = JunctionFactors::new(spec, grid, lambda);
    let weights = grid.block_weights(factors.pd_dim() / grid.len());
    BlockOperator::new(factors.pd_matrix(), weights)
}

/// `‖PD_λ‖` from the block factors, without assembling the matrix.
pub fn pd_norm(spec: &NetworkSpec, grid: &VelocityGrid, lambda: f64) -> f64 {
    JunctionFactors::new(spec, grid, lambda).pd_norm()
}

/// `max(Var̄ · v_max / v_min, e^{l̄γ̄/v_min} ‖M‖)`; valid for mass-preserving scattering.
pub fn pd_norm_paper_bound(spec: &NetworkSpec) -> Result<f64> {
    if !spec.flags().mass_preserving {
        return Err(Error::Precondition(
            "the block norm bound requires mass-preserving scattering".into(),
        ));
    }
    let b = network_bounds(spec);
    let vb = spec.velocity();
    Ok((b.var_bar * vb.v_max / vb.v_min)
        .max((b.l_bar * b.gamma_bar / vb.v_min).exp() * b.routing_norm))
}

/// Bounds on `(‖D₀‖, ‖K‖)`: `(e^{l̄γ̄/v_min}, ‖M‖)`.
pub fn dirichlet_norm_paper_bound(spec: &NetworkSpec) -> (f64, f64) {
    let b = network_bounds(spec);
    (
        (b.l_bar * b.gamma_bar / spec.velocity().v_min).exp(),
        routing_norm(spec.routing()),
    )
}

/// Discretized `‖Ξ₀‖`: the largest survival factor over circles, cells and positions.
pub fn dirichlet_norm(spec: &NetworkSpec, grid: &VelocityGrid) -> f64 {
    (0..spec.len())
        .flat_map(|j| {
            grid.centers()
                .iter()
                .map(move |&v| sup_survival(spec, j, v))
        })
        .fold(0.0, f64::max)
}

const GAUSS5: [(f64, f64); 5] = [
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.0, 0.568_888_888_888_888_9),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

/// Five-point Gauss–Legendre rule on `[a, b]`.
pub(crate) fn gauss5(a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    GAUSS5
        .iter()
        .map(|&(x, w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

/// Weights pairing a delay measure with a history sampled at lags `0, s, 2s, …`.
///
/// The history is read as the piecewise-linear interpolant of its samples, so the
/// weight of lag `n` is the integral of the hat function centred there against the
/// measure. Weights are nonnegative and sum to the total mass.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayStencil {
    step: f64,
    weights: Vec<f64>,
}

impl DelayStencil {
    pub fn new(measure: &DelayMeasure, delay: f64, step: f64) -> Self {
        assert!(step > 0.0 && delay > 0.0);
        let ratio = delay / step;
        let lags = if (ratio - ratio.round()).abs() < 1e-9 * ratio.max(1.0) {
            ratio.round() as usize
        } else {
            ratio.ceil() as usize
        };
        let mut weights = vec![0.0; lags + 1];
        for (theta, mass) in measure_atoms(measure, delay) {
            let p = (-theta / step).clamp(0.0, lags as f64);
            let n = (p.floor() as usize).min(lags);
            let frac = p - n as f64;
            weights[n] += (1.0 - frac) * mass;
            if frac > 0.0 {
                weights[n + 1] += frac * mass;
            }
        }
        let breaks = density_breaks(measure, delay);
        for n in 0..lags {
            let (hi, lo) = (-(n as f64) * step, (-((n + 1) as f64) * step).max(-delay));
            let mut cuts = vec![lo, hi];
            cuts.extend(breaks.iter().copied().filter(|&b| b > lo && b < hi));
            cuts.sort_by(f64::total_cmp);
            for w in cuts.windows(2) {
                let near =
                    |t: f64| measure_density(measure, delay, t) * (1.0 - (-t / step - n as f64));
                let far = |t: f64| measure_density(measure, delay, t) * (-t / step - n as f64);
                weights[n] += gauss5(w[0], w[1], near);
                weights[n + 1] += gauss5(w[0], w[1], far);
            }
        }
        Self { step, weights }
    }

    pub fn for_circle(spec: &NetworkSpec, j: usize, step: f64) -> Self {
        let c = spec.circle(j);
        Self::new(&c.delay_measure, c.delay, step)
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Oldest lag the stencil reads.
    pub fn reach(&self) -> f64 {
        (self.weights.len() - 1) as f64 * self.step
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Boundary-trace history of one circle, one value per velocity cell.
pub trait FluxHistory {
    /// The history covers lags `θ ∈ [-span, 0]`.
    fn span(&self) -> f64;
    fn trace(&self, theta: f64, out: &mut [f64]);
}

/// A history given by a closure `θ ↦ trace`.
pub struct FnHistory<F> {
    span: f64,
    f: F,
}

impl<F: Fn(f64, &mut [f64])> FnHistory<F> {
    pub fn new(span: f64, f: F) -> Self {
        Self { span, f }
    }
}

impl<F: Fn(f64, &mut [f64])> FluxHistory for FnHistory<F> {
    fn span(&self) -> f64 {
        self.span
    }

    fn trace(&self, theta: f64, out: &mut [f64]) {
        (self.f)(theta, out)
    }
}

/// `∫ dη_j(θ) z(θ, ·)` per velocity cell, read through the stencil.
pub(crate) fn delayed_trace(
    j: usize,
    history: &dyn FluxHistory,
    stencil: &DelayStencil,
    out: &mut [f64],
) -> Result<()> {
    let reach = stencil.reach();
    if history.span() < reach * (1.0 - 1e-12) {
        return Err(Error::HistoryGap {
            circle: j,
            covered: history.span(),
            needed: reach,
        });
    }
    out.fill(0.0);
    let mut buf = vec![0.0; out.len()];
    for (n, &w) in stencil.weights().iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        history.trace(-(n as f64) * stencil.step(), &mut buf);
        for (o, b) in out.iter_mut().zip(&buf) {
            *o += w * b;
        }
    }
    Ok(())
}

/// `(1/v_k) ∫dη_j(θ) ∫β_j(v_k, v') v' z_j(θ, v') dv'` for one outgoing cell.
pub fn apply_delay_kernel(
    spec: &NetworkSpec,
    grid: &VelocityGrid,
    j: usize,
    history: &dyn FluxHistory,
    stencil: &DelayStencil,
    k_out: usize,
) -> Result<f64> {
    let mut delayed = vec![0.0; grid.len()];
    delayed_trace(j, history, stencil, &mut delayed)?;
    let vb = spec.velocity();
    let beta = &spec.circle(j).scattering;
    let v = grid.center(k_out);
    Ok((0..grid.len())
        .map(|kp| {
            beta.value(vb, v, grid.center(kp)) * grid.center(kp) * grid.width(kp) * delayed[kp]
        })
        .sum::<f64>()
        / v)
}

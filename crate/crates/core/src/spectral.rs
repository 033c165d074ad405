//! Perron roots, small-gain certificates, the spectral abscissa and the explicit
//! input-to-state constants.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::{exp_window, network_bounds, DelayMeasure, NetworkSpec};
use crate::operators::{
    dirichlet_norm_paper_bound, gain_operator, gauss5, pd_norm, pd_norm_paper_bound, pd_operator,
    survival_unchecked, LinearOperator, VelocityGrid,
};

/// Default absolute tolerance for Perron roots.
pub const RADIUS_TOL: f64 = 1e-10;
/// Default bracket width for the abscissa bisection.
pub const ABSCISSA_TOL: f64 = 1e-6;
/// Half-width of the band around 1 where a certificate is not decided.
pub const INCONCLUSIVE_BAND: f64 = 1e-3;
/// Relative deflation applied to the sampled resolvent constant.
pub const RESOLVENT_SAFETY: f64 = 0.05;

const POWER_CAP: usize = 20_000;
const GELFAND_CAP: usize = 60;
const OSCILLATION_WINDOW: usize = 16;
const MAX_DOUBLINGS: usize = 60;

enum PowerOutcome {
    Converged(f64),
    Nilpotent,
    Stalled { last: f64, mean: f64 },
}

fn power_stage(op: &dyn LinearOperator, shift: f64, tol: f64) -> PowerOutcome {
    let n = op.dim();
    let mut x = vec![1.0 / n as f64; n];
    let mut y = vec![0.0; n];
    let mut ratios: Vec<f64> = Vec::new();
    let mut calm = 0;
    for _ in 0..POWER_CAP {
        op.apply(&x, &mut y);
        for (yi, xi) in y.iter_mut().zip(&x) {
            *yi += shift * xi;
        }
        if y.iter().any(|v| !v.is_finite()) {
            return PowerOutcome::Converged(f64::INFINITY);
        }
        let s: f64 = y.iter().map(|v| v.abs()).sum();
        if s == 0.0 {
            return PowerOutcome::Nilpotent;
        }
        let scale = tol * s.max(1.0);

        // Collatz–Wielandt: min (Ax)_i/x_i ≤ r ≤ max (Ax)_i/x_i for x > 0
        if x.iter().all(|&v| v > 0.0) {
            let (lo, hi) = x
                .iter()
                .zip(&y)
                .map(|(a, b)| b / a)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), q| {
                    (lo.min(q), hi.max(q))
                });
            if hi - lo <= scale {
                return PowerOutcome::Converged(0.5 * (lo + hi) - shift);
            }
        }

        // geometric tail: remaining change ≤ d·q/(1-q) once differences contract
        ratios.push(s);
        let m = ratios.len();
        if m >= 3 {
            let d1 = (ratios[m - 1] - ratios[m - 2]).abs();
            let d0 = (ratios[m - 2] - ratios[m - 3]).abs();
            let settled = if d1 == 0.0 {
                d0 <= scale
            } else {
                let q = d1 / d0;
                q < 1.0 && d1 <= scale && d1 * q / (1.0 - q) <= scale
            };
            calm = if settled { calm + 1 } else { 0 };
            if calm >= 2 {
                return PowerOutcome::Converged(s - shift);
            }
        }
        if m >= OSCILLATION_WINDOW && oscillates(&ratios[m - OSCILLATION_WINDOW..], scale) {
            break;
        }
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / s;
        }
    }
    let tail = &ratios[ratios.len().saturating_sub(16)..];
    PowerOutcome::Stalled {
        last: *ratios.last().unwrap_or(&0.0) - shift,
        mean: tail.iter().sum::<f64>() / tail.len().max(1) as f64,
    }
}

/// Differences alternate in sign and do not contract over two steps: the dominant
/// eigenvalue has a peripheral partner (e.g. `±r` of a block-antidiagonal operator).
fn oscillates(sums: &[f64], scale: f64) -> bool {
    let d: Vec<f64> = sums.windows(2).map(|w| w[1] - w[0]).collect();
    let alternating = d.windows(2).all(|p| p[0] * p[1] < 0.0);
    let n = d.len();
    alternating && d[n - 1].abs() > scale && d[n - 1].abs() >= 0.9 * d[n - 3].abs()
}

fn l1_norm(a: &Array2<f64>) -> f64 {
    a.columns()
        .into_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `‖A^{2^m}‖^{1/2^m}` by repeated squaring, kept in log scale.
fn gelfand(a: &Array2<f64>, tol: f64) -> (Option<f64>, f64) {
    let n0 = l1_norm(a);
    if n0 == 0.0 {
        return (Some(0.0), 0.0);
    }
    let mut b = a / n0;
    let mut log_scale = n0.ln();
    let mut prev = n0;
    for m in 1..=GELFAND_CAP {
        b = b.dot(&b);
        let n = l1_norm(&b);
        if n == 0.0 {
            return (Some(0.0), 0.0);
        }
        b /= n;
        log_scale = 2.0 * log_scale + n.ln();
        let est = (log_scale / 2f64.powi(m as i32)).exp();
        if (est - prev).abs() < tol * est.max(1.0) {
            return (Some(est), est);
        }
        prev = est;
    }
    (None, prev)
}

/// Perron root of a nonnegative operator to within `tol` (absolute, relative above 1).
///
/// Power iteration from the all-ones vector; if it stalls (periodic spectra), the same
/// iteration on `A + σI`; then, for dense operators, the Gelfand limit.
pub fn spectral_radius(op: &dyn LinearOperator, tol: f64) -> Result<f64> {
    if op.dim() == 0 {
        return Ok(0.0);
    }
    let mean = match power_stage(op, 0.0, tol) {
        PowerOutcome::Converged(r) => return Ok(r.max(0.0)),
        PowerOutcome::Nilpotent => return Ok(0.0),
        PowerOutcome::Stalled { mean, .. } => mean,
    };
    let shift = if mean > 0.0 { mean } else { 1.0 };
    let power_estimate = match power_stage(op, shift, tol) {
        PowerOutcome::Converged(r) => return Ok(r.max(0.0)),
        PowerOutcome::Nilpotent => return Ok(0.0),
        PowerOutcome::Stalled { last, .. } => last,
    };
    let gelfand_estimate = match op.dense() {
        Some(a) => match gelfand(a, tol) {
            (Some(r), _) => return Ok(r),
            (None, est) => est,
        },
        None => f64::NAN,
    };
    Err(Error::Convergence {
        power_estimate,
        gelfand_estimate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Decision {
    Iss,
    NotIss,
    Inconclusive,
}

impl Decision {
    pub fn from_radius(r: f64) -> Self {
        if (r - 1.0).abs() < INCONCLUSIVE_BAND {
            Decision::Inconclusive
        } else if r < 1.0 {
            Decision::Iss
        } else {
            Decision::NotIss
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundCheck {
    pub value: Option<f64>,
    pub status: CheckStatus,
}

impl BoundCheck {
    fn of(value: Option<f64>) -> Self {
        match value {
            None => BoundCheck {
                value: None,
                status: CheckStatus::NotApplicable,
            },
            Some(v) => BoundCheck {
                value: Some(v),
                status: if v < 1.0 {
                    CheckStatus::Pass
                } else {
                    CheckStatus::Fail
                },
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SufficientChecks {
    pub example1_bound: BoundCheck,
    pub example2_bound: BoundCheck,
    #[serde(rename = "C1_condition")]
    pub c1_condition: BoundCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    /// `r(Λ₀)`
    pub r_gain: f64,
    /// `r(PD₀)`
    pub pd_radius: f64,
    /// Discretized `‖PD₀‖`.
    pub pd_norm: f64,
    /// `r_gain < 1`, regardless of the inconclusive band.
    pub strict_small_gain: bool,
    pub decision: Decision,
    pub sufficient_checks: SufficientChecks,
    pub velocity_cells: usize,
    pub routing_norm: f64,
}

/// `β̄ v_max ln(v_max/v_min) e^{γ̄ l̄/v_min} ‖M‖`, for all-Dirac networks.
pub fn example1_bound(spec: &NetworkSpec) -> Option<f64> {
    if !spec
        .circles()
        .iter()
        .all(|c| matches!(c.delay_measure, DelayMeasure::Dirac))
    {
        return None;
    }
    let b = network_bounds(spec);
    let vb = spec.velocity();
    Some(
        b.beta_bar
            * vb.v_max
            * (vb.v_max / vb.v_min).ln()
            * (b.gamma_bar * b.l_bar / vb.v_min).exp()
            * b.routing_norm,
    )
}

/// `r̄ (v_max/v_min) e^{γ̄ l̄/v_min} ‖M‖`, for mass-preserving networks with exponential
/// delay densities of positive rate.
pub fn example2_bound(spec: &NetworkSpec) -> Option<f64> {
    let all_exp = spec
        .circles()
        .iter()
        .all(|c| matches!(c.delay_measure, DelayMeasure::Exponential { theta } if theta > 0.0));
    if !(all_exp && spec.flags().mass_preserving) {
        return None;
    }
    let b = network_bounds(spec);
    let vb = spec.velocity();
    Some(b.r_bar * vb.v_max / vb.v_min * (b.gamma_bar * b.l_bar / vb.v_min).exp() * b.routing_norm)
}

pub fn small_gain_certificate(spec: &NetworkSpec, grid: &VelocityGrid) -> Result<Certificate> {
    let r_gain = spectral_radius(gain_operator(spec, grid, 0.0).as_ref(), RADIUS_TOL)?;
    let pd_radius = spectral_radius(pd_operator(spec, grid, 0.0).as_ref(), RADIUS_TOL)?;
    Ok(Certificate {
        r_gain,
        pd_radius,
        pd_norm: pd_norm(spec, grid, 0.0),
        strict_small_gain: r_gain < 1.0,
        decision: Decision::from_radius(r_gain),
        sufficient_checks: SufficientChecks {
            example1_bound: BoundCheck::of(example1_bound(spec)),
            example2_bound: BoundCheck::of(example2_bound(spec)),
            c1_condition: BoundCheck::of(pd_norm_paper_bound(spec).ok()),
        },
        velocity_cells: grid.len(),
        routing_norm: network_bounds(spec).routing_norm,
    })
}

/// `r(Λ_λ)`.
pub fn gain_radius(spec: &NetworkSpec, grid: &VelocityGrid, lambda: f64) -> Result<f64> {
    spectral_radius(gain_operator(spec, grid, lambda).as_ref(), RADIUS_TOL)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AbscissaResult {
    /// The `λ` where `r(Λ_λ) = 1`.
    pub lambda_star: f64,
    pub bracket_width: f64,
    pub iterations: usize,
    /// `r(Λ_λ)` at the lower and upper ends of the final bracket.
    pub r_lower: f64,
    pub r_upper: f64,
}

impl AbscissaResult {
    /// Exponential decay rate `-λ*` when it is positive.
    pub fn predicted_decay(&self) -> Option<f64> {
        (self.lambda_star < 0.0).then_some(-self.lambda_star)
    }
}

/// Bisection on `λ ↦ r(Λ_λ) - 1`, which is strictly decreasing when scattering is nonzero.
pub fn spectral_abscissa(
    spec: &NetworkSpec,
    grid: &VelocityGrid,
    tol: f64,
) -> Result<AbscissaResult> {
    let b = network_bounds(spec);
    let radius = |lam: f64| gain_radius(spec, grid, lam);
    let (mut lo, mut hi) = (-spec.velocity().v_min * b.gamma_bar - 10.0, 10.0);
    let (mut r_lo, mut r_hi) = (radius(lo)?, radius(hi)?);
    let mut doublings = 0;
    while !(r_lo > 1.0 && r_hi < 1.0) {
        if doublings == MAX_DOUBLINGS {
            return Err(Error::Bracket { doublings, lo, hi });
        }
        doublings += 1;
        if r_lo <= 1.0 {
            lo *= 2.0;
            r_lo = radius(lo)?;
        }
        if r_hi >= 1.0 {
            hi *= 2.0;
            r_hi = radius(hi)?;
        }
    }
    let mut iterations = 0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let r = radius(mid)?;
        if r > 1.0 {
            lo = mid;
            r_lo = r;
        } else {
            hi = mid;
            r_hi = r;
        }
        iterations += 1;
    }
    Ok(AbscissaResult {
        lambda_star: 0.5 * (lo + hi),
        bracket_width: hi - lo,
        iterations,
        r_lower: r_lo,
        r_upper: r_hi,
    })
}

/// Norm ratios `‖R(λ, A)x‖ / ‖x‖` for the transport and history resolvents with zero
/// inflow, discretized by midpoint cells in space, lag and velocity.
#[derive(Debug, Clone)]
pub struct ResolventKernel {
    lambda: f64,
    /// Per circle, `[k * cells + m]`: `(1/v) ∫_y^l e^{-∫_y^x (λ+q)/v} dx` at cell midpoint `y`.
    transport: Vec<Vec<f64>>,
    /// Per circle, `[m]`: `(1 - e^{-λ(σ + r)})/λ` at cell midpoint `σ`.
    history: Vec<Vec<f64>>,
    dx: Vec<f64>,
    dsigma: Vec<f64>,
    dv: Vec<f64>,
    cells: usize,
}

impl ResolventKernel {
    pub fn new(spec: &NetworkSpec, grid: &VelocityGrid, lambda: f64, cells: usize) -> Result<Self> {
        let floor = 0f64.max(-spec.absorption_bounds().gamma2);
        if !(lambda > floor) {
            return Err(Error::Precondition(format!(
                "resolvent estimate needs λ > {floor}, got {lambda}"
            )));
        }
        let kn = grid.len();
        let mut transport = Vec::with_capacity(spec.len());
        let mut history = Vec::with_capacity(spec.len());
        for (j, c) in spec.circles().iter().enumerate() {
            let dx = c.length / cells as f64;
            let mut t = vec![0.0; kn * cells];
            for k in 0..kn {
                let v = grid.center(k);
                for m in 0..cells {
                    let y = (m as f64 + 0.5) * dx;
                    t[k * cells + m] = transport_green(spec, j, lambda, v, y);
                }
            }
            transport.push(t);
            let ds = c.delay / cells as f64;
            history.push(
                (0..cells)
                    .map(|m| exp_window(lambda, c.delay - (m as f64 + 0.5) * ds))
                    .collect(),
            );
        }
        Ok(Self {
            lambda,
            transport,
            history,
            dx: spec
                .circles()
                .iter()
                .map(|c| c.length / cells as f64)
                .collect(),
            dsigma: spec
                .circles()
                .iter()
                .map(|c| c.delay / cells as f64)
                .collect(),
            dv: grid.widths().to_vec(),
            cells,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Length of the state part: circles × velocity cells × space cells.
    pub fn state_len(&self) -> usize {
        self.transport.len() * self.dv.len() * self.cells
    }

    /// Length of the history part: circles × velocity cells × lag cells.
    pub fn history_len(&self) -> usize {
        self.history.len() * self.dv.len() * self.cells
    }

    /// `‖R x‖ / ‖x‖` for nonnegative `x = (state, history)`; `None` when `x = 0`.
    pub fn ratio(&self, state: &[f64], history: &[f64]) -> Option<f64> {
        let (kn, mn) = (self.dv.len(), self.cells);
        let (mut num, mut den) = (0.0, 0.0);
        for j in 0..self.transport.len() {
            for k in 0..kn {
                for m in 0..mn {
                    let idx = (j * kn + k) * mn + m;
                    let (ws, wh) = (self.dx[j] * self.dv[k], self.dsigma[j] * self.dv[k]);
                    num += ws * state[idx] * self.transport[j][k * mn + m]
                        + wh * history[idx] * self.history[j][m];
                    den += ws * state[idx] + wh * history[idx];
                }
            }
        }
        (den > 0.0).then(|| num / den)
    }
}

fn transport_green(spec: &NetworkSpec, j: usize, lambda: f64, v: f64, y: f64) -> f64 {
    let c = spec.circle(j);
    match &c.absorption {
        crate::model::AbsorptionProfile::Constant { value } => {
            exp_window((lambda + value) / v, c.length - y) / v
        }
        crate::model::AbsorptionProfile::Tabulated(t) => {
            let h = c.length / t.nx as f64;
            let mut cuts = vec![y];
            cuts.extend((1..t.nx).map(|m| m as f64 * h).filter(|&b| b > y));
            cuts.push(c.length);
            cuts.windows(2)
                .map(|w| {
                    let pieces = 8;
                    let step = (w[1] - w[0]) / pieces as f64;
                    (0..pieces)
                        .map(|p| {
                            let a = w[0] + p as f64 * step;
                            gauss5(a, a + step, |x| {
                                survival_unchecked(spec, j, lambda, v, y, x)
                            })
                        })
                        .sum::<f64>()
                })
                .sum::<f64>()
                / v
        }
    }
}

/// Sampled lower estimate of `inf ‖R(λ, A)x‖/‖x‖` over nonnegative `x`, deflated by 5%.
pub fn resolvent_constant_c(
    spec: &NetworkSpec,
    grid: &VelocityGrid,
    lambda: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::Precondition("need at least one sample".into()));
    }
    let kernel = ResolventKernel::new(spec, grid, lambda, 32)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::INFINITY;
    let (mut state, mut history) = (
        vec![0.0; kernel.state_len()],
        vec![0.0; kernel.history_len()],
    );
    let mut taken = 0;
    while taken < samples {
        state.iter_mut().for_each(|x| *x = rng.gen::<f64>());
        history.iter_mut().for_each(|x| *x = rng.gen::<f64>());
        if let Some(r) = kernel.ratio(&state, &history) {
            best = best.min(r);
            taken += 1;
        }
    }
    Ok(best * (1.0 - RESOLVENT_SAFETY))
}

/// Which value of `‖PD₀‖` enters the input gain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PdNormSource {
    #[default]
    Discretized,
    AnalyticBound,
}

/// Decay envelope `‖𝒯(t)‖ ≤ N e^{-a t}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Envelope {
    pub n: f64,
    pub a: f64,
}

fn serialize_p<S: Serializer>(p: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if p.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IssConstants {
    #[serde(rename = "N")]
    pub n: f64,
    pub a: f64,
    pub c: f64,
    #[serde(serialize_with = "serialize_p")]
    pub p: f64,
    pub c_check_p: f64,
    /// `‖K‖ ‖D₀‖ Č_p / (1 - ‖PD₀‖)`
    pub gain: f64,
    pub pd_norm: f64,
    pub pd_norm_source: PdNormSource,
    pub dirichlet_bound: f64,
    pub routing_bound: f64,
}

/// `Č_p`: `N/c` for `p = 1`, `(N/c)((p-1)/(p a))^{(p-1)/p}` for `1 < p < ∞`, `N/(a c)` for `p = ∞`.
pub fn check_constant(n: f64, a: f64, c: f64, p: f64) -> Result<f64> {
    if !(n > 0.0 && a > 0.0 && c > 0.0) {
        return Err(Error::Precondition(format!(
            "need N, a, c > 0 (got N = {n}, a = {a}, c = {c})"
        )));
    }
    if p.is_nan() || p < 1.0 {
        return Err(Error::Precondition(format!("need 1 <= p <= inf, got {p}")));
    }
    Ok(if p == 1.0 {
        n / c
    } else if p.is_infinite() {
        n / (a * c)
    } else {
        let e = (p - 1.0) / p;
        n / c * ((p - 1.0) / (p * a)).powf(e)
    })
}

pub fn iss_constants(
    spec: &NetworkSpec,
    grid: &VelocityGrid,
    p: f64,
    envelope: Envelope,
    c: f64,
    source: PdNormSource,
) -> Result<IssConstants> {
    let pd = match source {
        PdNormSource::Discretized => pd_norm(spec, grid, 0.0),
        PdNormSource::AnalyticBound => pd_norm_paper_bound(spec)?,
    };
    if pd >= 1.0 {
        return Err(Error::SmallGainViolation(format!(
            "‖PD₀‖ = {pd} is not below 1, so the input gain is unavailable"
        )));
    }
    let c_check_p = check_constant(envelope.n, envelope.a, c, p)?;
    let (d0, k) = dirichlet_norm_paper_bound(spec);
    Ok(IssConstants {
        n: envelope.n,
        a: envelope.a,
        c,
        p,
        c_check_p,
        gain: k * d0 * c_check_p / (1.0 - pd),
        pd_norm: pd,
        pd_norm_source: source,
        dirichlet_bound: d0,
        routing_bound: k,
    })
}

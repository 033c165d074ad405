//! Links the certificate to simulated behaviour: decay fits, trajectory-wise ISS checks
//! and parameter sweeps across the small-gain threshold.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::{network_bounds, NetworkSpec};
use crate::operators::{gain_operator, gauss5, survival_unchecked, VelocityGrid};
use crate::simulator::{run, DisturbancePreset, FieldPreset, Scenario, ScenarioConfig, Trajectory};
use crate::spectral::{
    gain_radius, iss_constants, resolvent_constant_c, small_gain_certificate, spectral_abscissa,
    Certificate, Decision, Envelope, IssConstants, PdNormSource, ABSCISSA_TOL,
};

/// Version stamp of every JSON report.
pub const SCHEMA_VERSION: u32 = 1;
/// Fitted decay rates are deflated by this factor before entering the ISS constants.
pub const ENVELOPE_DEFLATION: f64 = 0.9;
/// Relative slack granted to the pointwise ISS bound.
pub const ISS_SLACK: f64 = 0.05;
/// Offset above `max(0, -γ₂)` at which the resolvent constant is sampled.
pub const RESOLVENT_OFFSET: f64 = 1e-6;
pub const RESOLVENT_SAMPLES: usize = 64;

const STEADY_PANELS: usize = 16;

const ENVELOPE_NOTE: &str =
    "N and a are not constructive; a is 0.9 times a decay rate and N is the sup of \
                             e^{at} times the normalized norm over an unforced companion run";

/// Least-squares fit of `ln(norm)` against `t` on a window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    #[serde(rename = "N_hat")]
    pub n_hat: f64,
    /// Decay rate: positive when the norm decays.
    pub a_hat: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the log fit.
    pub residual: f64,
    pub window: (f64, f64),
    pub samples: usize,
}

impl DecayFit {
    pub fn decays(&self) -> bool {
        self.a_hat > 0.0
    }
}

/// Tail window `[t_end / 2, t_end]`.
pub fn default_window(times: &[f64]) -> (f64, f64) {
    let end = times.last().copied().unwrap_or(0.0);
    (0.5 * end, end)
}

/// Fits `norm(t) ≈ e^{b - a t}` on `window` and sets `N_hat = sup_t norm(t) e^{a t} / reference`
/// over every sample, so `N_hat ≥ norm(0) / reference`.
pub fn fit_series(
    times: &[f64],
    norms: &[f64],
    window: (f64, f64),
    reference: f64,
) -> Result<DecayFit> {
    assert_eq!(times.len(), norms.len());
    if let Some(r) =
        (0..norms.len()).find(|&r| norms[r] == 0.0 && norms[r..].iter().all(|&n| n == 0.0))
    {
        if times[r] <= window.1 {
            return Err(Error::Extinction { time: times[r] });
        }
    }
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(norms)
        .filter(|(t, _)| **t >= window.0 - 1e-12 && **t <= window.1 + 1e-12)
        .map(|(&t, &n)| (t, n))
        .collect();
    if let Some(&(t, _)) = pts.iter().find(|(_, n)| *n <= 0.0) {
        return Err(Error::Extinction { time: t });
    }
    if pts.len() < 2 {
        return Err(Error::Precondition(format!(
            "fit window [{}, {}] holds {} samples",
            window.0,
            window.1,
            pts.len()
        )));
    }
    if !(reference > 0.0) {
        return Err(Error::Precondition(
            "reference norm must be positive".into(),
        ));
    }
    let n = pts.len() as f64;
    let t_mean = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let y_mean = pts.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - t_mean).powi(2)).sum();
    let sxy: f64 = pts
        .iter()
        .map(|p| (p.0 - t_mean) * (p.1.ln() - y_mean))
        .sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * t_mean;
    let residual = (pts
        .iter()
        .map(|p| (p.1.ln() - intercept - slope * p.0).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let a_hat = -slope;
    Ok(DecayFit {
        n_hat: envelope_constant(times, norms, a_hat, reference),
        a_hat,
        intercept,
        residual,
        window,
        samples: pts.len(),
    })
}

fn envelope_constant(times: &[f64], norms: &[f64], a: f64, reference: f64) -> f64 {
    times
        .iter()
        .zip(norms)
        .map(|(t, n)| n * (a * t).exp() / reference)
        .fold(0.0, f64::max)
}

/// Decay fit of `‖z(t)‖ + ‖ž^t‖`, normalized by its initial value.
pub fn fit_decay(traj: &Trajectory, window: Option<(f64, f64)>) -> Result<DecayFit> {
    let norms = traj.combined_norm();
    let window = window.unwrap_or_else(|| default_window(&traj.times));
    let reference = norms.first().copied().unwrap_or(0.0);
    fit_series(&traj.times, &norms, window, reference)
}

/// Decay rate of an unforced run; an extinct run is fitted on the samples before extinction.
fn companion_rate(traj: &Trajectory) -> Result<f64> {
    match fit_decay(traj, None) {
        Ok(fit) => Ok(fit.a_hat),
        Err(Error::Extinction { time }) => {
            let alive = traj.times.iter().take_while(|&&t| t < time).count();
            if alive < 3 {
                return Ok(1.0 / time.max(f64::MIN_POSITIVE));
            }
            let times = &traj.times[..alive];
            let norms = &traj.combined_norm()[..alive];
            fit_series(times, norms, (0.0, times[alive - 1]), norms[0]).map(|f| f.a_hat)
        }
        Err(e) => Err(e),
    }
}

/// `Envelope { N, a }` with `N = max(1, sup_t norm(t) e^{a t} / norm(0))` over `traj`.
pub fn envelope_from_run(traj: &Trajectory, a: f64) -> Envelope {
    let norms = traj.combined_norm();
    let n = envelope_constant(&traj.times, &norms, a, norms[0]).max(1.0);
    Envelope { n, a }
}

/// `‖u‖_{L^p(0, t_end; L¹(V))}`: the declared bound for `p = ∞`, closed form for constant
/// and pulse disturbances, trapezoid over the recorded samples otherwise.
pub fn disturbance_norm(scenario: &Scenario, traj: &Trajectory, p: f64) -> f64 {
    let vb = scenario.spec.velocity();
    let d = &scenario.config.disturbance;
    if p.is_infinite() {
        return d.sup_norm(vb);
    }
    let horizon = traj.times.last().copied().unwrap_or(0.0);
    match d {
        DisturbancePreset::Zero => 0.0,
        DisturbancePreset::Constant { value } => value.abs() * vb.width() * horizon.powf(1.0 / p),
        DisturbancePreset::Pulse { value, t0, t1 } => {
            let on = t1.clamp(0.0, horizon) - t0.clamp(0.0, horizon);
            value.abs() * vb.width() * on.max(0.0).powf(1.0 / p)
        }
        _ => {
            let integral: f64 = traj
                .times
                .windows(2)
                .zip(traj.input_norm.windows(2))
                .map(|(t, u)| 0.5 * (t[1] - t[0]) * (u[0].powf(p) + u[1].powf(p)))
                .sum();
            integral.powf(1.0 / p)
        }
    }
}

/// Norm of the steady state driven by a constant junction input `u(v_k)`.
///
/// The inflow solves `g = Λ₀ g + b` with `b_i(k) = (Σ_j w_ij) u_k / v_k`; each circle then
/// holds `∫_0^l g e^{-∫_0^x q/v}` per velocity cell.
pub fn steady_state_norm(spec: &NetworkSpec, grid: &VelocityGrid, u: &[f64]) -> Result<f64> {
    let kn = grid.len();
    let op = gain_operator(spec, grid, 0.0);
    let outside = spec.flags().input_outside_sum;
    let rows = spec.routing().rows();
    let b: Vec<f64> = (0..spec.len() * kn)
        .map(|idx| {
            let (i, k) = (idx / kn, idx % kn);
            let routed: f64 = if outside { 1.0 } else { rows[i].iter().sum() };
            routed * u[k] / grid.center(k)
        })
        .collect();
    let mut g = b.clone();
    let mut next = vec![0.0; g.len()];
    for _ in 0..100_000 {
        op.apply(&g, &mut next);
        let mut change: f64 = 0.0;
        for ((n, gi), bi) in next.iter_mut().zip(&mut g).zip(&b) {
            *n += bi;
            change = change.max((*n - *gi).abs());
            *gi = *n;
        }
        let scale = g.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        if change <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
            let mut total = 0.0;
            for j in 0..spec.len() {
                let l = spec.circle(j).length;
                for k in 0..kn {
                    let v = grid.center(k);
                    let h = l / STEADY_PANELS as f64;
                    let mass: f64 = (0..STEADY_PANELS)
                        .map(|p| {
                            let a = p as f64 * h;
                            gauss5(a, a + h, |x| survival_unchecked(spec, j, 0.0, v, 0.0, x))
                        })
                        .sum();
                    total += grid.width(k) * g[j * kn + k].abs() * mass;
                }
            }
            return Ok(total);
        }
        if !scale.is_finite() {
            break;
        }
    }
    Err(Error::SmallGainViolation(
        "steady-state iteration did not converge".into(),
    ))
}

/// Unforced run reusing a scenario's data and resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Companion {
    pub initial: FieldPreset,
    pub history: FieldPreset,
    pub t_end: f64,
}

impl Companion {
    /// Same data as the scenario, or unit initial density when the scenario starts at rest.
    pub fn for_scenario(scenario: &Scenario) -> Self {
        let cfg = &scenario.config;
        let at_rest = cfg.initial == FieldPreset::Zero && cfg.history == FieldPreset::Zero;
        Self {
            initial: if at_rest {
                FieldPreset::Constant { value: 1.0 }
            } else {
                cfg.initial.clone()
            },
            history: cfg.history.clone(),
            t_end: cfg.t_end,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportInputs {
    pub companion: Option<Companion>,
    pub pd_norm_source: PdNormSource,
    pub resolvent_samples: usize,
    pub seed: u64,
}

impl ReportInputs {
    pub fn for_scenario(scenario: &Scenario, seed: u64) -> Self {
        Self {
            companion: Some(Companion::for_scenario(scenario)),
            pd_norm_source: PdNormSource::Discretized,
            resolvent_samples: RESOLVENT_SAMPLES,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Fail,
    Inconclusive,
}

/// Worst point of one trajectory against `N e^{-at}(‖f‖+‖φ‖) + ρ‖u‖_p`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub initial_norm: f64,
    pub input_norm: f64,
    /// `min_t (bound(t) - ‖z(t)‖) / bound(t)`.
    pub worst_margin: f64,
    pub worst_time: f64,
    pub sup_norm: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioMeta {
    pub t_end: f64,
    pub dt: f64,
    pub stride: usize,
    pub spatial_cells: Vec<usize>,
    pub velocity_cells: usize,
    pub records: usize,
}

impl ScenarioMeta {
    fn new(scenario: &Scenario, records: usize) -> Self {
        Self {
            t_end: scenario.config.t_end,
            dt: scenario.dt(),
            stride: scenario.config.stride,
            spatial_cells: scenario.spatial_cells().to_vec(),
            velocity_cells: scenario.grid.len(),
            records,
        }
    }
}

fn serialize_p<S: Serializer>(p: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if p.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IssReport {
    pub schema_version: u32,
    pub outcome: Outcome,
    pub certificate: Certificate,
    #[serde(serialize_with = "serialize_p")]
    pub p: f64,
    pub companion_fit: Option<DecayFit>,
    pub iss_constants: Option<IssConstants>,
    pub trajectory: Option<TrajectoryRecord>,
    pub slack: f64,
    pub scenario: ScenarioMeta,
    pub envelope_method: &'static str,
}

/// Pointwise check of a recorded trajectory against the ISS bound.
pub fn check_trajectory(
    traj: &Trajectory,
    constants: &IssConstants,
    input_norm: f64,
    slack: f64,
) -> TrajectoryRecord {
    let initial_norm = traj.norm_state[0] + traj.norm_history[0];
    let mut worst = (f64::INFINITY, 0.0);
    for (&t, &z) in traj.times.iter().zip(&traj.norm_state) {
        let bound =
            constants.n * (-constants.a * t).exp() * initial_norm + constants.gain * input_norm;
        let margin = if bound > 0.0 {
            (bound - z) / bound
        } else if z == 0.0 {
            0.0
        } else {
            f64::NEG_INFINITY
        };
        if margin < worst.0 {
            worst = (margin, t);
        }
    }
    TrajectoryRecord {
        initial_norm,
        input_norm,
        worst_margin: worst.0,
        worst_time: worst.1,
        sup_norm: traj.norm_state.iter().copied().fold(0.0, f64::max),
        pass: worst.0 >= -slack,
    }
}

/// Constants from an unforced companion run: `a = 0.9 · a_hat`, `N` from the same run, `c`
/// sampled just right of `max(0, -γ₂)`.
pub fn companion_constants(
    scenario: &Scenario,
    p: f64,
    inputs: &ReportInputs,
) -> Result<(DecayFit, Option<f64>, IssConstants)> {
    let companion = inputs.companion.as_ref().ok_or(Error::MissingEnvelope)?;
    let mut unforced = scenario.with_data(
        companion.initial.clone(),
        companion.history.clone(),
        DisturbancePreset::Zero,
    );
    unforced.config.t_end = companion.t_end;
    unforced.config.snapshots = false;
    let traj = run(&unforced)?;
    let rate = companion_rate(&traj)?;
    if !(rate > 0.0) {
        return Err(Error::Precondition(format!(
            "unforced companion run does not decay (fitted rate {rate})"
        )));
    }
    let fit = fit_decay(&traj, None).ok();
    let envelope = envelope_from_run(&traj, ENVELOPE_DEFLATION * rate);
    let spec = &scenario.spec;
    let lambda = (-network_bounds(spec).gamma2).max(0.0) + RESOLVENT_OFFSET;
    let c = resolvent_constant_c(
        spec,
        &scenario.grid,
        lambda,
        inputs.resolvent_samples,
        inputs.seed,
    )?;
    let constants = iss_constants(spec, &scenario.grid, p, envelope, c, inputs.pd_norm_source)?;
    let fit = fit.unwrap_or(DecayFit {
        n_hat: envelope.n,
        a_hat: rate,
        intercept: 0.0,
        residual: 0.0,
        window: (0.0, companion.t_end),
        samples: traj.len(),
    });
    Ok((fit, Some(rate), constants))
}

/// Runs the scenario and checks `‖z(t)‖ ≤ N e^{-at}(‖f‖+‖φ‖) + ρ‖u‖_p` at every record.
pub fn verify_iss(scenario: &Scenario, p: f64, inputs: &ReportInputs) -> Result<IssReport> {
    let certificate = small_gain_certificate(&scenario.spec, &scenario.grid)?;
    let base = |outcome, fit, constants, trajectory, records| IssReport {
        schema_version: SCHEMA_VERSION,
        outcome,
        certificate: certificate.clone(),
        p,
        companion_fit: fit,
        iss_constants: constants,
        trajectory,
        slack: ISS_SLACK,
        scenario: ScenarioMeta::new(scenario, records),
        envelope_method: ENVELOPE_NOTE,
    };
    match certificate.decision {
        Decision::NotIss => {
            return Err(Error::SmallGainViolation(format!(
                "r(gain) = {} is not below 1",
                certificate.r_gain
            )))
        }
        Decision::Inconclusive => return Ok(base(Outcome::Inconclusive, None, None, None, 0)),
        Decision::Iss => {}
    }
    let (fit, _, constants) = companion_constants(scenario, p, inputs)?;
    let traj = run(scenario)?;
    let input_norm = disturbance_norm(scenario, &traj, p);
    let record = check_trajectory(&traj, &constants, input_norm, ISS_SLACK);
    let outcome = if record.pass {
        Outcome::Pass
    } else {
        Outcome::Fail
    };
    Ok(base(
        outcome,
        Some(fit),
        Some(constants),
        Some(record),
        traj.len(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    RoutingScale,
    BetaScale,
    DelayScale,
}

impl SweepParameter {
    pub fn apply(self, spec: &NetworkSpec, value: f64) -> Result<NetworkSpec> {
        match self {
            SweepParameter::RoutingScale => spec.with_routing_scale(value),
            SweepParameter::BetaScale => spec.with_beta_scale(value),
            SweepParameter::DelayScale => spec.with_delay_scale(value),
        }
    }
}

impl fmt::Display for SweepParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParameter::RoutingScale => "routing_scale",
            SweepParameter::BetaScale => "beta_scale",
            SweepParameter::DelayScale => "delay_scale",
        })
    }
}

impl FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "routing_scale" => Ok(SweepParameter::RoutingScale),
            "beta_scale" => Ok(SweepParameter::BetaScale),
            "delay_scale" => Ok(SweepParameter::DelayScale),
            other => Err(Error::validation(
                "param",
                None,
                format!(
                    "unknown sweep parameter `{other}` (routing_scale, beta_scale, delay_scale)"
                ),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Behaviour {
    Decay,
    Growth,
    Extinction,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepEntry {
    pub value: f64,
    pub r_gain: f64,
    pub decision: Decision,
    pub a_hat: Option<f64>,
    pub behaviour: Behaviour,
    /// `None` inside the inconclusive band.
    pub agrees: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub schema_version: u32,
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    pub entries: Vec<SweepEntry>,
    /// Adjacent values between which `r(gain) - 1` changes sign.
    pub threshold: Option<(f64, f64)>,
    pub agreement: bool,
}

impl SweepResult {
    /// `value,r_gain,decision,a_hat,behaviour,agrees`
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "value,r_gain,decision,a_hat,behaviour,agrees")?;
        for e in &self.entries {
            let decision = serde_json::to_value(e.decision).map_err(std::io::Error::other)?;
            let behaviour = serde_json::to_value(e.behaviour).map_err(std::io::Error::other)?;
            writeln!(
                out,
                "{:e},{:e},{},{},{},{}",
                e.value,
                e.r_gain,
                decision.as_str().unwrap_or_default(),
                e.a_hat.map_or(String::new(), |a| format!("{a:e}")),
                behaviour.as_str().unwrap_or_default(),
                e.agrees.map_or(String::new(), |a| a.to_string()),
            )?;
        }
        Ok(())
    }
}

/// Resolution and length of the short unforced runs in a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub spatial_cells: usize,
    pub dt: Option<f64>,
    /// Run length in slowest circulation periods `l̄/v_min + r̄`.
    pub periods: f64,
    pub initial: FieldPreset,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            spatial_cells: 32,
            dt: None,
            periods: 8.0,
            initial: FieldPreset::Constant { value: 1.0 },
        }
    }
}

/// Unforced run with the options' data; returns the fitted rate or extinction.
pub fn observe_behaviour(
    spec: &NetworkSpec,
    grid: &VelocityGrid,
    opts: &SweepOptions,
) -> Result<(Behaviour, Option<f64>)> {
    let b = network_bounds(spec);
    let mut cfg = ScenarioConfig::new(opts.periods * (b.l_bar / spec.velocity().v_min + b.r_bar));
    cfg.initial = opts.initial.clone();
    cfg.spatial_cells = opts.spatial_cells;
    cfg.dt = opts.dt;
    let scenario = Scenario::new(spec.clone(), grid.clone(), cfg)?;
    let traj = run(&scenario)?;
    match fit_decay(&traj, None) {
        Ok(fit) => Ok((
            if fit.decays() {
                Behaviour::Decay
            } else {
                Behaviour::Growth
            },
            Some(fit.a_hat),
        )),
        Err(Error::Extinction { .. }) => Ok((Behaviour::Extinction, None)),
        Err(e) => Err(e),
    }
}

/// Certificate plus a short unforced run for every value, in parallel.
pub fn sweep(
    spec: &NetworkSpec,
    grid: &VelocityGrid,
    parameter: SweepParameter,
    values: &[f64],
    opts: &SweepOptions,
) -> Result<SweepResult> {
    if values.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Precondition(
            "sweep values must be strictly increasing".into(),
        ));
    }
    let entries: Vec<SweepEntry> = values
        .par_iter()
        .map(|&value| {
            let scaled = parameter.apply(spec, value)?;
            let r_gain = gain_radius(&scaled, grid, 0.0)?;
            let decision = Decision::from_radius(r_gain);
            let (behaviour, a_hat) = observe_behaviour(&scaled, grid, opts)?;
            let agrees = match decision {
                Decision::Inconclusive => None,
                Decision::Iss => Some(behaviour != Behaviour::Growth),
                Decision::NotIss => Some(behaviour == Behaviour::Growth),
            };
            Ok(SweepEntry {
                value,
                r_gain,
                decision,
                a_hat,
                behaviour,
                agrees,
            })
        })
        .collect::<Result<_>>()?;
    let threshold = entries
        .windows(2)
        .find(|w| (w[0].r_gain - 1.0).signum() != (w[1].r_gain - 1.0).signum())
        .map(|w| (w[0].value, w[1].value));
    let agreement = entries.iter().all(|e| e.agrees != Some(false));
    Ok(SweepResult {
        schema_version: SCHEMA_VERSION,
        parameter,
        values: values.to_vec(),
        entries,
        threshold,
        agreement,
    })
}

/// Certificate, abscissa and constants for `analyze`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub schema_version: u32,
    pub certificate: Certificate,
    pub lambda_star: Option<f64>,
    pub predicted_decay: Option<f64>,
    pub iss_constants: Option<IssConstants>,
    /// Why constants are absent, when they are.
    pub constants_unavailable: Option<String>,
    pub envelope_method: &'static str,
}

/// Certificate and, for ISS networks, constants with `a = 0.9 · (-λ*)` and `N` from an
/// unforced run with unit initial density.
pub fn analyze(
    spec: &NetworkSpec,
    grid: &VelocityGrid,
    p: f64,
    spatial_cells: usize,
    seed: u64,
) -> Result<AnalysisReport> {
    let certificate = small_gain_certificate(spec, grid)?;
    let mut report = AnalysisReport {
        schema_version: SCHEMA_VERSION,
        certificate: certificate.clone(),
        lambda_star: None,
        predicted_decay: None,
        iss_constants: None,
        constants_unavailable: None,
        envelope_method: ENVELOPE_NOTE,
    };
    if certificate.r_gain > 0.0 {
        let abscissa = spectral_abscissa(spec, grid, ABSCISSA_TOL)?;
        report.lambda_star = Some(abscissa.lambda_star);
        report.predicted_decay = abscissa.predicted_decay();
    }
    if certificate.decision != Decision::Iss {
        report.constants_unavailable = Some(format!("decision is {:?}", certificate.decision));
        return Ok(report);
    }
    let b = network_bounds(spec);
    let mut cfg = ScenarioConfig::new(8.0 * (b.l_bar / spec.velocity().v_min + b.r_bar));
    cfg.initial = FieldPreset::Constant { value: 1.0 };
    cfg.spatial_cells = spatial_cells;
    let scenario = Scenario::new(spec.clone(), grid.clone(), cfg)?;
    let traj = run(&scenario)?;
    let rate = match report.predicted_decay {
        Some(rate) => rate,
        None => companion_rate(&traj)?,
    };
    let envelope = envelope_from_run(&traj, ENVELOPE_DEFLATION * rate);
    let lambda = (-b.gamma2).max(0.0) + RESOLVENT_OFFSET;
    let c = resolvent_constant_c(spec, grid, lambda, RESOLVENT_SAMPLES, seed)?;
    match iss_constants(spec, grid, p, envelope, c, PdNormSource::Discretized) {
        Ok(k) => report.iss_constants = Some(k),
        Err(Error::SmallGainViolation(msg)) => report.constants_unavailable = Some(msg),
        Err(e) => return Err(e),
    }
    Ok(report)
}

/// Threshold of `value ↦ r(gain) - 1` by bisection between two values with opposite decisions.
pub fn locate_threshold(
    spec: &NetworkSpec,
    grid: &VelocityGrid,
    parameter: SweepParameter,
    bracket: (f64, f64),
    tol: f64,
) -> Result<f64> {
    let excess =
        |x: f64| -> Result<f64> { Ok(gain_radius(&parameter.apply(spec, x)?, grid, 0.0)? - 1.0) };
    let (mut lo, mut hi) = bracket;
    let (f_lo, f_hi) = (excess(lo)?, excess(hi)?);
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::Precondition(format!(
            "r(gain) - 1 has the same sign at {lo} and {hi}"
        )));
    }
    let rising = f_lo < 0.0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if (excess(mid)? < 0.0) == rising {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

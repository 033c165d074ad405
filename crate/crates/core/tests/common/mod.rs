//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use transport_iss::model::{
    load_network, AbsorptionProfile, DelayMeasure, NetworkSpec, ScatteringKernel,
};
use transport_iss::operators::VelocityGrid;

pub fn spec(doc: Value) -> NetworkSpec {
    load_network(&doc.to_string()).unwrap_or_else(|e| panic!("fixture rejected: {e}\n{doc:#}"))
}

pub fn grid(spec: &NetworkSpec, cells: usize) -> VelocityGrid {
    VelocityGrid::for_spec(spec, cells).unwrap()
}

pub fn circle(length: f64, delay: f64, gamma: f64, beta: Value, measure: Value) -> Value {
    json!({
        "length": length,
        "delay": delay,
        "absorption": { "type": "constant", "value": gamma },
        "scattering": beta,
        "delay_measure": measure,
    })
}

pub fn constant_beta(value: f64) -> Value {
    json!({ "type": "constant", "value": value })
}

pub fn dirac() -> Value {
    json!({ "type": "dirac" })
}

pub fn exponential(theta: f64) -> Value {
    json!({ "type": "exponential", "theta": theta })
}

/// One circle with mass-preserving constant scattering: `r(Λ₀) = w e^{-γ l / v₁} η̂(0)` when `K = 1`.
pub fn single_circle(w: f64, gamma: f64, length: f64, delay: f64, measure: Value) -> NetworkSpec {
    spec(json!({
        "velocity": { "v_min": 0.5, "v_max": 1.5 },
        "circles": [circle(length, delay, gamma, constant_beta(1.0), measure)],
        "routing": [[w]],
        "flags": { "mass_preserving": true },
    }))
}

/// Five circles with mixed lengths, delays, absorption, kernels and measures.
pub fn five_circle(routing_scale: f64) -> NetworkSpec {
    let s = routing_scale;
    spec(json!({
        "velocity": { "v_min": 0.6, "v_max": 1.4 },
        "circles": [
            circle(1.0, 0.4, 0.1, constant_beta(1.25), dirac()),
            circle(1.5, 0.6, 0.0, constant_beta(1.25), exponential(2.0)),
            circle(0.7, 0.3, 0.2, json!({
                "type": "separable",
                "outgoing": { "type": "exponential", "amplitude": 1.0, "rate": -0.4 },
                "incoming": { "type": "constant", "value": 1.2 }
            }), dirac()),
            circle(1.2, 0.5, 0.05, constant_beta(1.0), json!({
                "type": "piecewise",
                "atoms": [{ "theta": -0.5, "mass": 0.5 }],
                "density": [{ "start": -0.4, "end": -0.1, "value": 1.0 }]
            })),
            {
                "length": 0.9,
                "delay": 0.8,
                "absorption": { "type": "tabulated", "nx": 2, "nv": 2, "values": [0.0, 0.3, 0.1, 0.2] },
                "scattering": { "type": "tabulated", "n": 2, "values": [1.0, 1.5, 1.5, 1.0] },
                "delay_measure": dirac()
            }
        ],
        "routing": [
            [0.1 * s, 0.2 * s, 0.3 * s, 0.1 * s, 0.2 * s],
            [0.3 * s, 0.1 * s, 0.1 * s, 0.2 * s, 0.2 * s],
            [0.2 * s, 0.2 * s, 0.1 * s, 0.3 * s, 0.1 * s],
            [0.1 * s, 0.3 * s, 0.2 * s, 0.1 * s, 0.2 * s],
            [0.2 * s, 0.1 * s, 0.2 * s, 0.2 * s, 0.1 * s]
        ]
    }))
}

pub fn three_circle(routing_scale: f64) -> NetworkSpec {
    let s = routing_scale;
    spec(json!({
        "velocity": { "v_min": 0.5, "v_max": 1.5 },
        "circles": [
            circle(1.0, 0.5, 0.2, constant_beta(1.0), dirac()),
            circle(1.4, 0.8, 0.1, constant_beta(1.0), exponential(1.5)),
            circle(0.8, 0.3, 0.3, json!({
                "type": "separable",
                "outgoing": { "type": "exponential", "amplitude": 1.0, "rate": -0.5 },
                "incoming": { "type": "constant", "value": 0.8 }
            }), json!({
                "type": "piecewise",
                "atoms": [{ "theta": -0.3, "mass": 0.4 }],
                "density": [{ "start": -0.2, "end": 0.0, "value": 1.5 }]
            }))
        ],
        "routing": [[0.2 * s, 0.3 * s, 0.3 * s], [0.3 * s, 0.2 * s, 0.3 * s], [0.3 * s, 0.3 * s, 0.2 * s]]
    }))
}

pub fn tabulated_pair(routing_scale: f64) -> NetworkSpec {
    let s = routing_scale;
    spec(json!({
        "velocity": { "v_min": 0.5, "v_max": 1.5 },
        "circles": [
            {
                "length": 1.0,
                "delay": 0.6,
                "absorption": { "type": "tabulated", "nx": 3, "nv": 2, "values": [0.1, 0.4, 0.0, 0.2, 0.3, 0.1] },
                "scattering": { "type": "tabulated", "n": 2, "values": [0.6, 1.2, 1.4, 0.8] },
                "delay_measure": dirac()
            },
            {
                "length": 0.8,
                "delay": 0.4,
                "absorption": { "type": "constant", "value": 0.15 },
                "scattering": constant_beta(1.0),
                "delay_measure": exponential(3.0)
            }
        ],
        "routing": [[0.3 * s, 0.4 * s], [0.5 * s, 0.3 * s]],
        "absorption_bounds": { "gamma1": 0.0, "gamma2": 0.5 }
    }))
}

pub fn narrow_pair(routing_scale: f64) -> NetworkSpec {
    let s = routing_scale;
    spec(json!({
        "velocity": { "v_min": 0.8, "v_max": 1.2 },
        "circles": [
            circle(1.0, 0.5, 0.2, constant_beta(1.5), dirac()),
            circle(1.3, 0.7, 0.1, constant_beta(1.5), exponential(1.0))
        ],
        "routing": [[0.4 * s, 0.5 * s], [0.5 * s, 0.4 * s]]
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expect {
    Iss,
    NotIss,
}

pub struct Fixture {
    pub name: &'static str,
    pub spec: NetworkSpec,
    pub expect: Expect,
}

/// Twelve specs: six stable and six unstable by construction, each with `|r(Λ₀) - 1| ≥ 0.1`.
pub fn regression_suite() -> Vec<Fixture> {
    let f = |name, spec, expect| Fixture { name, spec, expect };
    vec![
        f(
            "single_dirac_w05",
            single_circle(0.5, 0.0, 1.0, 1.0, dirac()),
            Expect::Iss,
        ),
        f(
            "single_exp_w09",
            single_circle(0.9, 0.1, 1.0, 1.0, exponential(1.0)),
            Expect::Iss,
        ),
        f("narrow_pair", narrow_pair(1.0), Expect::Iss),
        f("three_circle", three_circle(1.0), Expect::Iss),
        f("five_circle", five_circle(1.0), Expect::Iss),
        f("tabulated_pair", tabulated_pair(1.0), Expect::Iss),
        f(
            "single_dirac_w15",
            single_circle(1.5, 0.0, 1.0, 1.0, dirac()),
            Expect::NotIss,
        ),
        f(
            "single_dirac_w2_absorbing",
            single_circle(2.0, 0.2, 1.0, 0.5, dirac()),
            Expect::NotIss,
        ),
        f(
            "single_exp_w25",
            single_circle(2.5, 0.0, 1.0, 2.0, exponential(0.5)),
            Expect::NotIss,
        ),
        f("three_circle_x3", three_circle(3.0), Expect::NotIss),
        f("five_circle_x2", five_circle(2.0), Expect::NotIss),
        f("tabulated_pair_x35", tabulated_pair(3.5), Expect::NotIss),
    ]
}

/// Stable specs with `‖PD₀‖ < 1`, so the input gain exists.
pub fn iss_constant_suite() -> Vec<(&'static str, NetworkSpec)> {
    let band = |v_min: f64, v_max: f64, circles: Value, routing: Value| {
        spec(json!({
            "velocity": { "v_min": v_min, "v_max": v_max },
            "circles": circles,
            "routing": routing,
        }))
    };
    vec![
        ("narrow_pair", narrow_pair(1.0)),
        (
            "narrow_single_dirac",
            band(
                0.9,
                1.1,
                json!([circle(1.0, 0.5, 0.1, constant_beta(4.0), dirac())]),
                json!([[0.8]]),
            ),
        ),
        (
            "narrow_single_exp",
            band(
                0.9,
                1.1,
                json!([circle(1.0, 1.0, 0.0, constant_beta(4.0), exponential(1.0))]),
                json!([[0.9]]),
            ),
        ),
        (
            "narrow_triple",
            band(
                0.85,
                1.15,
                json!([
                    circle(1.0, 0.4, 0.1, constant_beta(2.0), dirac()),
                    circle(0.8, 0.6, 0.2, constant_beta(2.0), exponential(2.0)),
                    circle(1.2, 0.3, 0.0, constant_beta(2.0), dirac())
                ]),
                json!([[0.2, 0.3, 0.3], [0.3, 0.2, 0.3], [0.3, 0.3, 0.2]]),
            ),
        ),
        (
            "narrow_pair_light",
            band(
                0.9,
                1.1,
                json!([
                    circle(0.9, 0.5, 0.3, constant_beta(3.0), dirac()),
                    circle(1.1, 0.5, 0.3, constant_beta(3.0), dirac())
                ]),
                json!([[0.3, 0.6], [0.6, 0.3]]),
            ),
        ),
        (
            "narrow_quad",
            band(
                0.8,
                1.2,
                json!([
                    circle(1.0, 0.5, 0.1, constant_beta(1.0), dirac()),
                    circle(1.0, 0.6, 0.1, constant_beta(1.0), exponential(1.5)),
                    circle(0.8, 0.4, 0.2, constant_beta(1.0), dirac()),
                    circle(1.2, 0.7, 0.0, constant_beta(1.0), dirac())
                ]),
                json!([
                    [0.2, 0.2, 0.3, 0.2],
                    [0.3, 0.2, 0.2, 0.2],
                    [0.2, 0.3, 0.2, 0.3],
                    [0.2, 0.2, 0.2, 0.2]
                ]),
            ),
        ),
    ]
}

/// Which random family to draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Mass-preserving scattering, any measure.
    MassPreserving,
    /// Dirac measures, any nonnegative scattering.
    Dirac,
    /// Exponential measures with positive rate and mass-preserving scattering.
    Exponential,
}

/// A random valid spec of the given family.
pub fn random_spec(family: Family, seed: u64) -> NetworkSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=4usize);
    let v_min = rng.gen_range(0.3..1.0);
    let v_max = v_min * rng.gen_range(1.05..3.0);
    let width = v_max - v_min;
    let circles: Vec<Value> = (0..n)
        .map(|_| {
            let length = rng.gen_range(0.4..2.0);
            let delay = rng.gen_range(0.1..2.0);
            let absorption = if rng.gen_bool(0.5) {
                json!({ "type": "constant", "value": rng.gen_range(-0.2..0.6) })
            } else {
                let values: Vec<f64> = (0..6).map(|_| rng.gen_range(-0.2..0.6)).collect();
                json!({ "type": "tabulated", "nx": 3, "nv": 2, "values": values })
            };
            let preserving = family != Family::Dirac || rng.gen_bool(0.3);
            let scattering = if preserving {
                if rng.gen_bool(0.5) {
                    constant_beta(1.0 / width)
                } else {
                    // outgoing profile normalized to unit mass
                    let rate: f64 = rng.gen_range(-1.5..1.5);
                    let mass = ((rate * v_max).exp() - (rate * v_min).exp()) / rate;
                    json!({
                        "type": "separable",
                        "outgoing": { "type": "exponential", "amplitude": 1.0 / mass, "rate": rate },
                        "incoming": { "type": "constant", "value": 1.0 }
                    })
                }
            } else {
                let values: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..2.0)).collect();
                json!({ "type": "tabulated", "n": 2, "values": values })
            };
            let measure = match family {
                Family::Dirac => dirac(),
                Family::Exponential => exponential(rng.gen_range(0.2..3.0)),
                Family::MassPreserving => match rng.gen_range(0..3) {
                    0 => dirac(),
                    1 => exponential(rng.gen_range(-1.0..3.0) + 0.05),
                    _ => {
                        let a = rng.gen_range(0.0..0.6);
                        json!({
                            "type": "piecewise",
                            "atoms": [{ "theta": -delay * rng.gen_range(0.1..1.0), "mass": a }],
                            "density": [{ "start": -delay, "end": -0.3 * delay, "value": rng.gen_range(0.0..1.0) }]
                        })
                    }
                },
            };
            json!({
                "length": length,
                "delay": delay,
                "absorption": absorption,
                "scattering": scattering,
                "delay_measure": measure
            })
        })
        .collect();
    let routing: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| rng.gen_range(0.0..1.0) / n as f64).collect())
        .collect();
    let mass_preserving = family != Family::Dirac;
    spec(json!({
        "velocity": { "v_min": v_min, "v_max": v_max },
        "circles": circles,
        "routing": routing,
        "flags": { "mass_preserving": mass_preserving },
    }))
}

/// Adaptive Simpson quadrature to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1)
            + recurse(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 50)
}

/// Adaptive Simpson split at known discontinuities.
pub fn piecewise_simpson(f: &dyn Fn(f64) -> f64, cuts: &[f64], tol: f64) -> f64 {
    cuts.windows(2)
        .map(|w| adaptive_simpson(f, w[0], w[1], tol))
        .sum()
}

/// `q_j(x, v)` read straight from the profile definition.
pub fn absorption_at(spec: &NetworkSpec, j: usize, x: f64, v: f64) -> f64 {
    let c = spec.circle(j);
    let vb = spec.velocity();
    match &c.absorption {
        AbsorptionProfile::Constant { value } => *value,
        AbsorptionProfile::Tabulated(t) => {
            let ix = ((x / c.length * t.nx as f64).floor() as usize).min(t.nx - 1);
            let iv = (((v - vb.v_min) / (vb.v_max - vb.v_min) * t.nv as f64).floor() as usize)
                .min(t.nv - 1);
            t.values[ix * t.nv + iv]
        }
    }
}

/// `∫ e^{λθ} dη(θ)` by quadrature of the density plus the atoms.
pub fn laplace_oracle(measure: &DelayMeasure, delay: f64, lambda: f64) -> f64 {
    match measure {
        DelayMeasure::Dirac => (-lambda * delay).exp(),
        DelayMeasure::Exponential { theta } => {
            adaptive_simpson(&|t: f64| ((lambda + theta) * t).exp(), -delay, 0.0, 1e-13)
        }
        DelayMeasure::Piecewise { atoms, density } => {
            atoms
                .iter()
                .map(|a| a.mass * (lambda * a.theta).exp())
                .sum::<f64>()
                + density
                    .iter()
                    .map(|p| {
                        p.value
                            * adaptive_simpson(&|t: f64| (lambda * t).exp(), p.start, p.end, 1e-13)
                    })
                    .sum::<f64>()
        }
    }
}

/// `exp(-∫_0^x (λ + q(y, v))/v dy)` by adaptive quadrature, split at table cells.
pub fn survival_oracle(spec: &NetworkSpec, j: usize, lambda: f64, v: f64, x: f64) -> f64 {
    let l = spec.circle(j).length;
    let mut cuts = vec![0.0];
    if let AbsorptionProfile::Tabulated(t) = &spec.circle(j).absorption {
        cuts.extend(
            (1..t.nx)
                .map(|i| i as f64 * l / t.nx as f64)
                .filter(|&c| c < x),
        );
    }
    cuts.push(x);
    let q = piecewise_simpson(
        &|y| (lambda + absorption_at(spec, j, y, v)) / v,
        &cuts,
        1e-13,
    );
    (-q).exp()
}

/// `β_j(v, v')` read from the kernel definition.
pub fn beta_at(spec: &NetworkSpec, j: usize, v: f64, v_in: f64) -> f64 {
    let vb = spec.velocity();
    let cell = |x: f64, n: usize| {
        (((x - vb.v_min) / (vb.v_max - vb.v_min) * n as f64).floor() as usize).min(n - 1)
    };
    match &spec.circle(j).scattering {
        ScatteringKernel::Constant { value } => *value,
        ScatteringKernel::Separable { outgoing, incoming } => {
            outgoing.value(vb, v) * incoming.value(vb, v_in)
        }
        ScatteringKernel::Tabulated { n, values } => values[cell(v, *n) * n + cell(v_in, *n)],
    }
}

/// `Λ_λ[(i,k),(j,k')]` from its defining product, every factor computed independently.
pub fn gain_entry_oracle(
    spec: &NetworkSpec,
    grid: &VelocityGrid,
    lambda: f64,
    i: usize,
    k: usize,
    j: usize,
    kp: usize,
) -> f64 {
    let c = spec.circle(j);
    let (v, vp) = (grid.center(k), grid.center(kp));
    laplace_oracle(&c.delay_measure, c.delay, lambda) * beta_at(spec, j, v, vp) * vp / v
        * spec.routing().get(i, j)
        * survival_oracle(spec, j, lambda, vp, c.length)
        * grid.width(kp)
}

/// Exact solution of the single-circle, single-velocity system by the method of steps.
///
/// With one velocity cell and `β = 1/(v_max - v_min)` the junction reads
/// `g(t) = w (z(t - r, l) + u / v)`, and every value is traced back along characteristics
/// to the initial line or the prescribed history.
pub struct MethodOfSteps<'a> {
    pub w: f64,
    pub gamma: f64,
    pub length: f64,
    pub delay: f64,
    pub v: f64,
    pub u: f64,
    pub initial: &'a dyn Fn(f64) -> f64,
    pub history: &'a dyn Fn(f64) -> f64,
}

impl MethodOfSteps<'_> {
    /// Outflow trace `z(s, l)`.
    pub fn trace(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return (self.history)(s);
        }
        let transit = self.length / self.v;
        if s < transit {
            (self.initial)(self.length - self.v * s) * (-self.gamma * s).exp()
        } else {
            self.inflow(s - transit) * (-self.gamma * transit).exp()
        }
    }

    /// Inflow `z(t, 0)` for `t ≥ 0`; the input enters inside the routing sum.
    pub fn inflow(&self, t: f64) -> f64 {
        self.w * (self.trace(t - self.delay) + self.u / self.v)
    }

    /// State `z(t, x)`.
    pub fn state(&self, t: f64, x: f64) -> f64 {
        let age = x / self.v;
        if t >= age {
            self.inflow(t - age) * (-self.gamma * age).exp()
        } else {
            (self.initial)(x - self.v * t) * (-self.gamma * t).exp()
        }
    }
}

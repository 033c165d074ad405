//! Network description: circles joined at a single junction, their coefficients,
//! the routing matrix and the scalar bounds derived from them.

mod measure;

pub(crate) use measure::{density_breaks, exp_window, measure_atoms, measure_density};
pub use measure::{
    measure_cumulative, measure_laplace, measure_total_variation, Atom, DelayMeasure, DensityPiece,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance on `∫ β(v, v') dv = 1` for specs flagged mass preserving.
pub const MASS_PRESERVING_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityBounds {
    pub v_min: f64,
    pub v_max: f64,
}

impl VelocityBounds {
    pub fn width(&self) -> f64 {
        self.v_max - self.v_min
    }

    /// Index of the uniform cell of `[v_min, v_max]` (split in `n`) containing `v`.
    fn cell(&self, v: f64, n: usize) -> usize {
        let w = self.width();
        if w <= 0.0 {
            return 0;
        }
        let idx = ((v - self.v_min) / w * n as f64).floor();
        (idx.max(0.0) as usize).min(n - 1)
    }
}

/// Piecewise-constant absorption on a uniform `nx × nv` grid over `[0, l] × [v_min, v_max]`,
/// stored row-major by position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionTable {
    pub nx: usize,
    pub nv: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AbsorptionProfile {
    Constant { value: f64 },
    Tabulated(AbsorptionTable),
}

impl AbsorptionProfile {
    pub fn value(&self, length: f64, vb: &VelocityBounds, x: f64, v: f64) -> f64 {
        match self {
            AbsorptionProfile::Constant { value } => *value,
            AbsorptionProfile::Tabulated(t) => {
                let ix = ((x / length * t.nx as f64).floor().max(0.0) as usize).min(t.nx - 1);
                let iv = vb.cell(v, t.nv);
                t.values[ix * t.nv + iv]
            }
        }
    }

    /// Exact `∫_a^b q(y, v) dy` for `0 ≤ a ≤ b ≤ length`.
    pub fn path_integral(&self, length: f64, vb: &VelocityBounds, v: f64, a: f64, b: f64) -> f64 {
        match self {
            AbsorptionProfile::Constant { value } => value * (b - a),
            AbsorptionProfile::Tabulated(t) => {
                let iv = vb.cell(v, t.nv);
                let h = length / t.nx as f64;
                let first = ((a / h).floor().max(0.0) as usize).min(t.nx - 1);
                let mut total = 0.0;
                for ix in first..t.nx {
                    let lo = ix as f64 * h;
                    if lo >= b {
                        break;
                    }
                    let hi = if ix + 1 == t.nx {
                        length.max(b)
                    } else {
                        (ix + 1) as f64 * h
                    };
                    let overlap = hi.min(b) - lo.max(a);
                    if overlap > 0.0 {
                        total += t.values[ix * t.nv + iv] * overlap;
                    }
                }
                total
            }
        }
    }

    fn range(&self) -> (f64, f64) {
        match self {
            AbsorptionProfile::Constant { value } => (*value, *value),
            AbsorptionProfile::Tabulated(t) => t
                .values
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &q| {
                    (lo.min(q), hi.max(q))
                }),
        }
    }
}

/// A nonnegative function of one velocity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum VelocityProfile {
    Constant {
        value: f64,
    },
    /// `amplitude · e^{rate·v}`
    Exponential {
        amplitude: f64,
        rate: f64,
    },
    /// Piecewise constant on a uniform split of `[v_min, v_max]`.
    Tabulated {
        values: Vec<f64>,
    },
}

impl VelocityProfile {
    pub fn value(&self, vb: &VelocityBounds, v: f64) -> f64 {
        match self {
            VelocityProfile::Constant { value } => *value,
            VelocityProfile::Exponential { amplitude, rate } => amplitude * (rate * v).exp(),
            VelocityProfile::Tabulated { values } => values[vb.cell(v, values.len())],
        }
    }

    /// Exact `∫_{v_min}^{v_max}` of the profile.
    pub fn integral(&self, vb: &VelocityBounds) -> f64 {
        match self {
            VelocityProfile::Constant { value } => value * vb.width(),
            VelocityProfile::Exponential { amplitude, rate } => {
                amplitude * (rate * vb.v_max).exp() * exp_window(*rate, vb.width())
            }
            VelocityProfile::Tabulated { values } => {
                values.iter().sum::<f64>() * vb.width() / values.len() as f64
            }
        }
    }

    fn sup_abs(&self, vb: &VelocityBounds) -> f64 {
        match self {
            VelocityProfile::Constant { value } => value.abs(),
            VelocityProfile::Exponential { amplitude, rate } => {
                amplitude.abs() * (rate * vb.v_min).exp().max((rate * vb.v_max).exp())
            }
            VelocityProfile::Tabulated { values } => values.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }

    fn min_value(&self, vb: &VelocityBounds) -> f64 {
        match self {
            VelocityProfile::Constant { value } => *value,
            VelocityProfile::Exponential { amplitude, rate } => {
                amplitude * (rate * vb.v_min).exp().min((rate * vb.v_max).exp())
            }
            VelocityProfile::Tabulated { values } => {
                values.iter().copied().fold(f64::INFINITY, f64::min)
            }
        }
    }

    fn scaled(&self, s: f64) -> VelocityProfile {
        match self {
            VelocityProfile::Constant { value } => VelocityProfile::Constant { value: value * s },
            VelocityProfile::Exponential { amplitude, rate } => VelocityProfile::Exponential {
                amplitude: amplitude * s,
                rate: *rate,
            },
            VelocityProfile::Tabulated { values } => VelocityProfile::Tabulated {
                values: values.iter().map(|x| x * s).collect(),
            },
        }
    }
}

/// Scattering kernel `β(v, v')`: outgoing velocity `v`, incoming velocity `v'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScatteringKernel {
    Constant {
        value: f64,
    },
    /// `β(v, v') = outgoing(v) · incoming(v')`
    Separable {
        outgoing: VelocityProfile,
        incoming: VelocityProfile,
    },
    /// Piecewise constant on an `n × n` uniform grid; row = outgoing cell.
    Tabulated {
        n: usize,
        values: Vec<f64>,
    },
}

impl ScatteringKernel {
    pub fn value(&self, vb: &VelocityBounds, v: f64, v_in: f64) -> f64 {
        match self {
            ScatteringKernel::Constant { value } => *value,
            ScatteringKernel::Separable { outgoing, incoming } => {
                outgoing.value(vb, v) * incoming.value(vb, v_in)
            }
            ScatteringKernel::Tabulated { n, values } => {
                values[vb.cell(v, *n) * n + vb.cell(v_in, *n)]
            }
        }
    }

    /// Exact `∫ β(v, v_in) dv` over the velocity range.
    pub fn outgoing_mass(&self, vb: &VelocityBounds, v_in: f64) -> f64 {
        match self {
            ScatteringKernel::Constant { value } => value * vb.width(),
            ScatteringKernel::Separable { outgoing, incoming } => {
                outgoing.integral(vb) * incoming.value(vb, v_in)
            }
            ScatteringKernel::Tabulated { n, values } => {
                let col = vb.cell(v_in, *n);
                (0..*n).map(|row| values[row * n + col]).sum::<f64>() * vb.width() / *n as f64
            }
        }
    }

    pub fn sup_abs(&self, vb: &VelocityBounds) -> f64 {
        match self {
            ScatteringKernel::Constant { value } => value.abs(),
            ScatteringKernel::Separable { outgoing, incoming } => {
                outgoing.sup_abs(vb) * incoming.sup_abs(vb)
            }
            ScatteringKernel::Tabulated { values, .. } => {
                values.iter().fold(0.0, |m, x| m.max(x.abs()))
            }
        }
    }

    fn min_value(&self, vb: &VelocityBounds) -> f64 {
        match self {
            ScatteringKernel::Constant { value } => *value,
            ScatteringKernel::Separable { outgoing, incoming } => {
                outgoing.min_value(vb).min(0.0).min(incoming.min_value(vb))
            }
            ScatteringKernel::Tabulated { values, .. } => {
                values.iter().copied().fold(f64::INFINITY, f64::min)
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            ScatteringKernel::Constant { value } => *value == 0.0,
            ScatteringKernel::Separable { outgoing, incoming } => {
                let zero = |p: &VelocityProfile| match p {
                    VelocityProfile::Constant { value } => *value == 0.0,
                    VelocityProfile::Exponential { amplitude, .. } => *amplitude == 0.0,
                    VelocityProfile::Tabulated { values } => values.iter().all(|x| *x == 0.0),
                };
                zero(outgoing) || zero(incoming)
            }
            ScatteringKernel::Tabulated { values, .. } => values.iter().all(|x| *x == 0.0),
        }
    }

    pub fn scaled(&self, s: f64) -> ScatteringKernel {
        match self {
            ScatteringKernel::Constant { value } => ScatteringKernel::Constant { value: value * s },
            ScatteringKernel::Separable { outgoing, incoming } => ScatteringKernel::Separable {
                outgoing: outgoing.scaled(s),
                incoming: incoming.clone(),
            },
            ScatteringKernel::Tabulated { n, values } => ScatteringKernel::Tabulated {
                n: *n,
                values: values.iter().map(|x| x * s).collect(),
            },
        }
    }

    /// Velocities at which mass preservation is checked: every cell of a tabulated
    /// factor plus a uniform sweep.
    fn probe_velocities(&self, vb: &VelocityBounds) -> Vec<f64> {
        let mut n = 64;
        if let ScatteringKernel::Tabulated { n: tn, .. } = self {
            n = n.max(*tn);
        }
        if let ScatteringKernel::Separable {
            incoming: VelocityProfile::Tabulated { values },
            ..
        } = self
        {
            n = n.max(values.len());
        }
        (0..n)
            .map(|i| vb.v_min + (i as f64 + 0.5) / n as f64 * vb.width())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircleSpec {
    pub length: f64,
    pub delay: f64,
    pub absorption: AbsorptionProfile,
    pub scattering: ScatteringKernel,
    pub delay_measure: DelayMeasure,
}

impl CircleSpec {
    pub fn total_variation(&self) -> f64 {
        measure_total_variation(&self.delay_measure, self.delay)
    }

    pub fn laplace(&self, lambda: f64) -> f64 {
        measure_laplace(&self.delay_measure, self.delay, lambda)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NetworkFlags {
    #[serde(default)]
    pub mass_preserving: bool,
    /// Inject the disturbance once per outgoing circle instead of inside the routing sum.
    #[serde(default)]
    pub input_outside_sum: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionBounds {
    pub gamma1: f64,
    pub gamma2: f64,
}

/// Dense `J × J` routing matrix, row-major; `w_ij` routes incoming circle `j` to outgoing `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingMatrix {
    size: usize,
    weights: Vec<f64>,
}

impl RoutingMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let size = rows.len();
        if rows.iter().any(|r| r.len() != size) {
            return Err(Error::validation(
                "routing",
                None,
                "routing matrix must be square",
            ));
        }
        Ok(Self {
            size,
            weights: rows.into_iter().flatten().collect(),
        })
    }

    pub fn from_row_major(size: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != size * size {
            return Err(Error::validation(
                "routing",
                None,
                format!("expected {} entries, found {}", size * size, weights.len()),
            ));
        }
        Ok(Self { size, weights })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.size + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.weights
            .chunks(self.size.max(1))
            .map(<[f64]>::to_vec)
            .collect()
    }

    pub fn column_sum(&self, j: usize) -> f64 {
        (0..self.size).map(|i| self.get(i, j).abs()).sum()
    }

    pub fn scaled(&self, s: f64) -> RoutingMatrix {
        RoutingMatrix {
            size: self.size,
            weights: self.weights.iter().map(|w| w * s).collect(),
        }
    }
}

/// Induced ℓ¹ operator norm: the largest absolute column sum.
pub fn routing_norm(routing: &RoutingMatrix) -> f64 {
    (0..routing.size())
        .map(|j| routing.column_sum(j))
        .fold(0.0, f64::max)
}

/// Validated network description. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    velocity: VelocityBounds,
    circles: Vec<CircleSpec>,
    routing: RoutingMatrix,
    flags: NetworkFlags,
    absorption_bounds: AbsorptionBounds,
    declared_bounds: bool,
}

/// The JSON configuration document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDocument {
    pub velocity: VelocityBounds,
    pub circles: Vec<CircleSpec>,
    pub routing: RoutingDocument,
    #[serde(default)]
    pub flags: NetworkFlags,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub absorption_bounds: Option<AbsorptionBounds>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RoutingDocument {
    Rows(Vec<Vec<f64>>),
    Flat(Vec<f64>),
}

/// Parses and validates a JSON network document.
pub fn load_network(config_document: &str) -> Result<NetworkSpec> {
    let doc: NetworkDocument =
        serde_json::from_str(config_document).map_err(|e| Error::Schema(e.to_string()))?;
    NetworkSpec::from_document(doc)
}

impl NetworkSpec {
    pub fn new(
        velocity: VelocityBounds,
        circles: Vec<CircleSpec>,
        routing: RoutingMatrix,
        flags: NetworkFlags,
        absorption_bounds: Option<AbsorptionBounds>,
    ) -> Result<Self> {
        let declared_bounds = absorption_bounds.is_some();
        let computed = circles.iter().fold(
            AbsorptionBounds {
                gamma1: f64::INFINITY,
                gamma2: f64::NEG_INFINITY,
            },
            |b, c| {
                let (lo, hi) = c.absorption.range();
                AbsorptionBounds {
                    gamma1: b.gamma1.min(lo),
                    gamma2: b.gamma2.max(hi),
                }
            },
        );
        let spec = NetworkSpec {
            velocity,
            circles,
            routing,
            flags,
            absorption_bounds: absorption_bounds.unwrap_or(computed),
            declared_bounds,
        };
        spec.validate()?;
        for (j, c) in spec.circles.iter().enumerate() {
            if c.delay_measure.has_atom_at_zero() {
                log::warn!("circle {j}: delay measure has an atom at θ = 0 (instantaneous junction feedback)");
            }
        }
        Ok(spec)
    }

    pub fn from_document(doc: NetworkDocument) -> Result<Self> {
        let routing = match doc.routing {
            RoutingDocument::Rows(rows) => RoutingMatrix::from_rows(rows)?,
            RoutingDocument::Flat(flat) => RoutingMatrix::from_row_major(doc.circles.len(), flat)?,
        };
        Self::new(
            doc.velocity,
            doc.circles,
            routing,
            doc.flags,
            doc.absorption_bounds,
        )
    }

    pub fn to_document(&self) -> NetworkDocument {
        NetworkDocument {
            velocity: self.velocity,
            circles: self.circles.clone(),
            routing: RoutingDocument::Rows(self.routing.rows()),
            flags: self.flags,
            absorption_bounds: self.declared_bounds.then_some(self.absorption_bounds),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("network document serializes")
    }

    fn validate(&self) -> Result<()> {
        let vb = &self.velocity;
        if !(vb.v_min.is_finite() && vb.v_max.is_finite() && vb.v_min > 0.0 && vb.v_min <= vb.v_max)
        {
            return Err(Error::validation(
                "velocity",
                None,
                "need 0 < v_min <= v_max < inf",
            ));
        }
        let j_count = self.circles.len();
        if j_count == 0 {
            return Err(Error::validation(
                "circles",
                None,
                "at least one circle is required",
            ));
        }
        if self.routing.size() != j_count {
            return Err(Error::validation(
                "routing",
                None,
                format!(
                    "routing is {0}x{0} but there are {j_count} circles",
                    self.routing.size()
                ),
            ));
        }
        for i in 0..j_count {
            for j in 0..j_count {
                let w = self.routing.get(i, j);
                if !(w.is_finite() && w >= 0.0) {
                    return Err(Error::validation(
                        format!("routing[{i}][{j}]"),
                        Some(j),
                        format!("routing weights must be finite and nonnegative, found {w}"),
                    ));
                }
            }
        }
        let ab = self.absorption_bounds;
        if !(ab.gamma1.is_finite() && ab.gamma2.is_finite() && ab.gamma1 <= ab.gamma2) {
            return Err(Error::validation(
                "absorption_bounds",
                None,
                "need finite gamma1 <= gamma2",
            ));
        }
        for (j, c) in self.circles.iter().enumerate() {
            validate_circle(j, c, vb, &ab, self.flags.mass_preserving)?;
        }
        Ok(())
    }

    pub fn velocity(&self) -> &VelocityBounds {
        &self.velocity
    }

    pub fn circles(&self) -> &[CircleSpec] {
        &self.circles
    }

    pub fn circle(&self, j: usize) -> &CircleSpec {
        &self.circles[j]
    }

    pub fn len(&self) -> usize {
        self.circles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.circles.is_empty()
    }

    pub fn routing(&self) -> &RoutingMatrix {
        &self.routing
    }

    pub fn flags(&self) -> NetworkFlags {
        self.flags
    }

    pub fn absorption_bounds(&self) -> AbsorptionBounds {
        self.absorption_bounds
    }

    /// Copy with every routing weight multiplied by `s ≥ 0`.
    pub fn with_routing_scale(&self, s: f64) -> Result<Self> {
        let mut out = self.clone();
        out.routing = self.routing.scaled(s);
        out.validate()?;
        Ok(out)
    }

    /// Copy with every scattering kernel multiplied by `s ≥ 0`; clears the
    /// mass-preserving flag unless `s == 1`.
    pub fn with_beta_scale(&self, s: f64) -> Result<Self> {
        let mut out = self.clone();
        for c in &mut out.circles {
            c.scattering = c.scattering.scaled(s);
        }
        if s != 1.0 {
            out.flags.mass_preserving = false;
        }
        out.validate()?;
        Ok(out)
    }

    /// Copy with every delay (and the time axis of its measure) multiplied by `s > 0`.
    pub fn with_delay_scale(&self, s: f64) -> Result<Self> {
        let mut out = self.clone();
        for c in &mut out.circles {
            c.delay *= s;
            c.delay_measure = c.delay_measure.time_scaled(s);
        }
        out.validate()?;
        Ok(out)
    }

    /// Copy with a replaced routing matrix.
    pub fn with_routing(&self, routing: RoutingMatrix) -> Result<Self> {
        let mut out = self.clone();
        out.routing = routing;
        out.validate()?;
        Ok(out)
    }
}

fn validate_circle(
    j: usize,
    c: &CircleSpec,
    vb: &VelocityBounds,
    ab: &AbsorptionBounds,
    mass_preserving: bool,
) -> Result<()> {
    let field = |name: &str| format!("circles[{j}].{name}");
    if !(c.length.is_finite() && c.length > 0.0) {
        return Err(Error::validation(
            field("length"),
            Some(j),
            "length must be positive",
        ));
    }
    if !(c.delay.is_finite() && c.delay > 0.0) {
        return Err(Error::validation(
            field("delay"),
            Some(j),
            "delay must be positive",
        ));
    }

    match &c.absorption {
        AbsorptionProfile::Constant { value } if !value.is_finite() => {
            return Err(Error::validation(
                field("absorption"),
                Some(j),
                "absorption must be finite",
            ));
        }
        AbsorptionProfile::Tabulated(t) => {
            if t.nx == 0 || t.nv == 0 || t.values.len() != t.nx * t.nv {
                return Err(Error::validation(
                    field("absorption"),
                    Some(j),
                    "tabulated absorption needs nx*nv values with nx, nv >= 1",
                ));
            }
            if t.values.iter().any(|q| !q.is_finite()) {
                return Err(Error::validation(
                    field("absorption"),
                    Some(j),
                    "absorption must be finite",
                ));
            }
        }
        _ => {}
    }
    let (lo, hi) = c.absorption.range();
    if lo < ab.gamma1 {
        return Err(Error::validation(
            "absorption_bounds.gamma1",
            Some(j),
            format!("absorption value {lo} is below gamma1 = {}", ab.gamma1),
        ));
    }
    if hi > ab.gamma2 {
        return Err(Error::validation(
            "absorption_bounds.gamma2",
            Some(j),
            format!("absorption value {hi} is above gamma2 = {}", ab.gamma2),
        ));
    }

    match &c.scattering {
        ScatteringKernel::Tabulated { n, values } if *n == 0 || values.len() != n * n => {
            return Err(Error::validation(
                field("scattering"),
                Some(j),
                "tabulated kernel needs n*n values",
            ));
        }
        ScatteringKernel::Separable { outgoing, incoming } => {
            for p in [outgoing, incoming] {
                if matches!(p, VelocityProfile::Tabulated { values } if values.is_empty()) {
                    return Err(Error::validation(
                        field("scattering"),
                        Some(j),
                        "empty tabulated profile",
                    ));
                }
            }
        }
        _ => {}
    }
    let beta_min = c.scattering.min_value(vb);
    let beta_sup = c.scattering.sup_abs(vb);
    if !(beta_min >= 0.0 && beta_sup.is_finite()) {
        return Err(Error::validation(
            field("scattering"),
            Some(j),
            "scattering kernel must be finite and nonnegative",
        ));
    }
    if mass_preserving {
        for v_in in c.scattering.probe_velocities(vb) {
            let m = c.scattering.outgoing_mass(vb, v_in);
            if (m - 1.0).abs() > MASS_PRESERVING_TOL {
                return Err(Error::validation(
                    field("scattering"),
                    Some(j),
                    format!("flagged mass preserving but ∫β(v, {v_in:.4}) dv = {m}"),
                ));
            }
        }
    }

    validate_measure(j, c)?;
    Ok(())
}

fn validate_measure(j: usize, c: &CircleSpec) -> Result<()> {
    let field = format!("circles[{j}].delay_measure");
    let r = c.delay;
    match &c.delay_measure {
        DelayMeasure::Dirac => {}
        DelayMeasure::Exponential { theta } => {
            if !theta.is_finite() || *theta == 0.0 {
                return Err(Error::validation(
                    field,
                    Some(j),
                    "exponential rate must be finite and nonzero",
                ));
            }
        }
        DelayMeasure::Piecewise { atoms, density } => {
            for a in atoms {
                if !(a.mass.is_finite() && a.mass >= 0.0) {
                    return Err(Error::validation(
                        field,
                        Some(j),
                        "atom masses must be nonnegative",
                    ));
                }
                if !(a.theta >= -r && a.theta <= 0.0) {
                    return Err(Error::validation(
                        field,
                        Some(j),
                        format!("atom at {} outside [-r, 0]", a.theta),
                    ));
                }
            }
            for p in density {
                if !(p.value.is_finite() && p.value >= 0.0) {
                    return Err(Error::validation(
                        field,
                        Some(j),
                        "density values must be nonnegative",
                    ));
                }
                if !(p.start < p.end && p.start >= -r && p.end <= 0.0) {
                    return Err(Error::validation(
                        field,
                        Some(j),
                        format!(
                            "density piece [{}, {}] must be a nonempty subinterval of [-r, 0]",
                            p.start, p.end
                        ),
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Sup/inf parameters of the (truncated) network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkBounds {
    pub l_bar: f64,
    pub l_under: f64,
    pub r_bar: f64,
    pub beta_bar: f64,
    pub var_bar: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma_bar: f64,
    pub routing_norm: f64,
}

pub fn network_bounds(spec: &NetworkSpec) -> NetworkBounds {
    let vb = spec.velocity();
    let cs = spec.circles();
    let ab = spec.absorption_bounds();
    NetworkBounds {
        l_bar: cs.iter().map(|c| c.length).fold(0.0, f64::max),
        l_under: cs.iter().map(|c| c.length).fold(f64::INFINITY, f64::min),
        r_bar: cs.iter().map(|c| c.delay).fold(0.0, f64::max),
        beta_bar: cs
            .iter()
            .map(|c| c.scattering.sup_abs(vb))
            .fold(0.0, f64::max),
        // support sits inside [-r_j, 0] ⊂ [-r̄, 0], so the variation over [-r̄, 0] is the total mass
        var_bar: cs
            .iter()
            .map(CircleSpec::total_variation)
            .fold(0.0, f64::max),
        gamma1: ab.gamma1,
        gamma2: ab.gamma2,
        gamma_bar: ab.gamma1.abs().max(ab.gamma2.abs()),
        routing_norm: routing_norm(spec.routing()),
    }
}

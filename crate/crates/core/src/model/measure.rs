//! Positive delay measures on `[-r, 0]` and their transforms.
//!
//! Every measure here is scalar and nonnegative, so its total variation equals its
//! total mass. The cumulative function `θ ↦ η([-r, θ))` is left-continuous by
//! construction: an atom at `θ_a` is counted only for `θ > θ_a`.

use serde::{Deserialize, Serialize};

/// A piece of piecewise-constant density `value` on `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityPiece {
    pub start: f64,
    pub end: f64,
    pub value: f64,
}

/// An atom of `mass` located at `theta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub theta: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DelayMeasure {
    /// Unit point mass at `-r`.
    Dirac,
    /// Density `e^{theta·θ}` on `[-r, 0]`, `theta != 0`.
    Exponential { theta: f64 },
    /// Atoms plus a piecewise-constant density.
    Piecewise {
        #[serde(default)]
        atoms: Vec<Atom>,
        #[serde(default)]
        density: Vec<DensityPiece>,
    },
}

/// `-expm1(-s·w) / s`, i.e. `∫_0^w e^{-s u} du`, stable for `s → 0`.
pub(crate) fn exp_window(s: f64, w: f64) -> f64 {
    let x = s * w;
    if x.abs() < 1e-8 {
        w * (1.0 - 0.5 * x + x * x / 6.0)
    } else {
        -(-x).exp_m1() / s
    }
}

/// Total mass of the (positive) measure.
pub fn measure_total_variation(m: &DelayMeasure, delay: f64) -> f64 {
    measure_laplace(m, delay, 0.0)
}

/// `∫_{[-r,0]} e^{λθ} dη(θ)` in closed form for every supported variant.
pub fn measure_laplace(m: &DelayMeasure, delay: f64, lambda: f64) -> f64 {
    match m {
        DelayMeasure::Dirac => (-lambda * delay).exp(),
        DelayMeasure::Exponential { theta } => exp_window(lambda + theta, delay),
        DelayMeasure::Piecewise { atoms, density } => {
            let atom_part: f64 = atoms
                .iter()
                .map(|a| a.mass * (lambda * a.theta).exp())
                .sum();
            let density_part: f64 = density
                .iter()
                .map(|p| p.value * (lambda * p.end).exp() * exp_window(lambda, p.end - p.start))
                .sum();
            atom_part + density_part
        }
    }
}

/// Left-continuous cumulative mass `η([-r, θ))`.
pub fn measure_cumulative(m: &DelayMeasure, delay: f64, theta: f64) -> f64 {
    match m {
        DelayMeasure::Dirac => {
            if theta > -delay {
                1.0
            } else {
                0.0
            }
        }
        DelayMeasure::Exponential { theta: k } => {
            let upper = theta.clamp(-delay, 0.0);
            // ∫_{-r}^{upper} e^{kθ} dθ = e^{k·upper} ∫_0^{upper+r} e^{-k u} du
            (k * upper).exp() * exp_window(*k, upper + delay)
        }
        DelayMeasure::Piecewise { atoms, density } => {
            let atom_part: f64 = atoms
                .iter()
                .filter(|a| a.theta < theta)
                .map(|a| a.mass)
                .sum();
            let density_part: f64 = density
                .iter()
                .map(|p| p.value * (theta.min(p.end) - p.start).max(0.0))
                .sum();
            atom_part + density_part
        }
    }
}

/// Density of the absolutely continuous part at `θ` (atoms excluded).
pub(crate) fn measure_density(m: &DelayMeasure, delay: f64, theta: f64) -> f64 {
    match m {
        DelayMeasure::Dirac => 0.0,
        DelayMeasure::Exponential { theta: k } => {
            if (-delay..=0.0).contains(&theta) {
                (k * theta).exp()
            } else {
                0.0
            }
        }
        DelayMeasure::Piecewise { density, .. } => density
            .iter()
            .filter(|p| theta >= p.start && theta < p.end)
            .map(|p| p.value)
            .sum(),
    }
}

/// Atoms of the measure as `(θ, mass)` pairs.
pub(crate) fn measure_atoms(m: &DelayMeasure, delay: f64) -> Vec<(f64, f64)> {
    match m {
        DelayMeasure::Dirac => vec![(-delay, 1.0)],
        DelayMeasure::Exponential { .. } => Vec::new(),
        DelayMeasure::Piecewise { atoms, .. } => atoms.iter().map(|a| (a.theta, a.mass)).collect(),
    }
}

/// Breakpoints where the density may jump (sorted, within `[-r, 0]`).
pub(crate) fn density_breaks(m: &DelayMeasure, delay: f64) -> Vec<f64> {
    let mut b = vec![-delay, 0.0];
    if let DelayMeasure::Piecewise { density, .. } = m {
        for p in density {
            b.push(p.start);
            b.push(p.end);
        }
    }
    b.retain(|x| (-delay..=0.0).contains(x));
    b.sort_by(f64::total_cmp);
    b.dedup();
    b
}

impl DelayMeasure {
    /// The same measure with its time axis stretched by `factor > 0`, matching a delay
    /// scaled by the same factor.
    pub fn time_scaled(&self, factor: f64) -> DelayMeasure {
        match self {
            DelayMeasure::Dirac => DelayMeasure::Dirac,
            // dη = e^{ϑθ}dθ on [-r,0] becomes e^{(ϑ/s)θ}dθ on [-s r, 0]
            DelayMeasure::Exponential { theta } => DelayMeasure::Exponential {
                theta: theta / factor,
            },
            DelayMeasure::Piecewise { atoms, density } => DelayMeasure::Piecewise {
                atoms: atoms
                    .iter()
                    .map(|a| Atom {
                        theta: a.theta * factor,
                        mass: a.mass,
                    })
                    .collect(),
                density: density
                    .iter()
                    .map(|p| DensityPiece {
                        start: p.start * factor,
                        end: p.end * factor,
                        value: p.value / factor,
                    })
                    .collect(),
            },
        }
    }

    pub(crate) fn has_atom_at_zero(&self) -> bool {
        matches!(self, DelayMeasure::Piecewise { atoms, .. } if atoms.iter().any(|a| a.theta == 0.0 && a.mass > 0.0))
    }
}

mod common;

use ndarray::s;
use proptest::prelude::*;
use serde_json::json;

use common::{
    adaptive_simpson, beta_at, circle, constant_beta, dirac, exponential, gain_entry_oracle, grid,
    laplace_oracle, random_spec, regression_suite, single_circle, spec, survival_oracle, Family,
};
use transport_iss::model::{measure_total_variation, network_bounds, NetworkSpec};
use transport_iss::operators::{
    apply_delay_kernel, assemble_gain, assemble_pd, dirichlet_norm, dirichlet_norm_paper_bound,
    pd_norm, pd_norm_paper_bound, survival_factor, DelayStencil, FnHistory, JunctionFactors,
};
use transport_iss::spectral::{spectral_radius, RADIUS_TOL};
use transport_iss::Error;

fn tabulated_steps() -> NetworkSpec {
    spec(json!({
        "velocity": { "v_min": 0.5, "v_max": 1.5 },
        "circles": [{
            "length": 2.0,
            "delay": 1.0,
            "absorption": { "type": "tabulated", "nx": 2, "nv": 1, "values": [0.3, 1.1] },
            "scattering": constant_beta(1.0),
            "delay_measure": dirac()
        }],
        "routing": [[0.5]],
        "flags": { "mass_preserving": true }
    }))
}

#[test]
fn survival_without_absorption_is_one() {
    let s = single_circle(0.5, 0.0, 1.3, 1.0, dirac());
    for x in [0.0, 0.4, 1.3] {
        for v in [0.5, 1.0, 1.5] {
            assert_eq!(survival_factor(&s, 0, 0.0, v, x).unwrap(), 1.0);
        }
    }
}

#[test]
fn survival_with_constant_absorption_is_exponential() {
    let (gamma, l) = (0.4, 1.3);
    let s = single_circle(0.5, gamma, l, 1.0, dirac());
    for v in [0.5, 0.8, 1.5] {
        let got = survival_factor(&s, 0, 0.0, v, l).unwrap();
        assert!((got - (-gamma * l / v).exp()).abs() < 1e-15);
    }
}

#[test]
fn survival_with_tabulated_steps_matches_quadrature() {
    let s = tabulated_steps();
    for &x in &[0.3, 1.0, 1.7, 2.0] {
        for &v in &[0.55, 1.2] {
            let got = survival_factor(&s, 0, 1.0, v, x).unwrap();
            let want = survival_oracle(&s, 0, 1.0, v, x);
            assert!((got - want).abs() < 1e-10, "x={x} v={v}: {got} vs {want}");
        }
    }
}

#[test]
fn survival_outside_the_circle_is_a_domain_error() {
    let s = tabulated_steps();
    assert!(matches!(
        survival_factor(&s, 0, 0.0, 1.0, 2.5),
        Err(Error::Domain(_))
    ));
}

fn midpoint_velocity_integral(
    s: &NetworkSpec,
    k: usize,
    h: &dyn Fn(f64) -> f64,
    cells: usize,
) -> f64 {
    let g = grid(s, cells);
    let v = g.center(k);
    (0..g.len())
        .map(|kp| beta_at(s, 0, v, g.center(kp)) * g.center(kp) * h(g.center(kp)) * g.width(kp))
        .sum::<f64>()
        / v
}

fn constant_history(s: &NetworkSpec, cells: usize, h: fn(f64) -> f64) -> impl Fn(f64, &mut [f64]) {
    let centers = grid(s, cells).centers().to_vec();
    move |_theta, out: &mut [f64]| {
        for (o, v) in out.iter_mut().zip(&centers) {
            *o = h(*v);
        }
    }
}

#[test]
fn delay_kernel_with_zero_scattering_vanishes() {
    let s = spec(json!({
        "velocity": { "v_min": 0.5, "v_max": 1.5 },
        "circles": [circle(1.0, 1.0, 0.0, constant_beta(0.0), dirac())],
        "routing": [[0.5]],
    }));
    let g = grid(&s, 8);
    let hist = FnHistory::new(1.0, constant_history(&s, 8, |v| 1.0 + v));
    let stencil = DelayStencil::for_circle(&s, 0, 0.05);
    for k in 0..8 {
        assert_eq!(
            apply_delay_kernel(&s, &g, 0, &hist, &stencil, k).unwrap(),
            0.0
        );
    }
}

#[test]
fn delay_kernel_with_dirac_reads_the_history_at_the_delay() {
    let s = single_circle(0.5, 0.0, 1.0, 0.8, dirac());
    let g = grid(&s, 8);
    let stencil = DelayStencil::for_circle(&s, 0, 0.03);
    let hist = FnHistory::new(stencil.reach(), constant_history(&s, 8, |v| v * v));
    for k in 0..8 {
        let got = apply_delay_kernel(&s, &g, 0, &hist, &stencil, k).unwrap();
        let want = midpoint_velocity_integral(&s, k, &|v| v * v, 8);
        assert!((got - want).abs() < 1e-13 * want, "{got} vs {want}");
    }
}

#[test]
fn delay_kernel_with_exponential_density_scales_by_total_variation() {
    let (theta, r) = (1.7, 1.2);
    let s = single_circle(0.5, 0.0, 1.0, r, exponential(theta));
    let g = grid(&s, 6);
    let stencil = DelayStencil::for_circle(&s, 0, 0.01);
    let hist = FnHistory::new(stencil.reach(), constant_history(&s, 6, |v| 2.0 - v));
    let tv = measure_total_variation(&s.circle(0).delay_measure, r);
    assert!((stencil.total_mass() - tv).abs() < 1e-12);
    for k in 0..6 {
        let got = apply_delay_kernel(&s, &g, 0, &hist, &stencil, k).unwrap();
        let want = tv * midpoint_velocity_integral(&s, k, &|v| 2.0 - v, 6);
        assert!((got - want).abs() < 1e-12 * want, "{got} vs {want}");
    }
}

#[test]
fn delay_kernel_reports_a_short_history() {
    let s = single_circle(0.5, 0.0, 1.0, 0.8, dirac());
    let g = grid(&s, 4);
    let hist = FnHistory::new(0.5, constant_history(&s, 4, |_| 1.0));
    let stencil = DelayStencil::for_circle(&s, 0, 0.1);
    assert!(matches!(
        apply_delay_kernel(&s, &g, 0, &hist, &stencil, 0),
        Err(Error::HistoryGap { circle: 0, .. })
    ));
}

#[test]
fn gain_with_zero_scattering_is_zero() {
    let s = spec(json!({
        "velocity": { "v_min": 0.5, "v_max": 1.5 },
        "circles": [
            circle(1.0, 1.0, 0.1, constant_beta(0.0), dirac()),
            circle(2.0, 0.5, 0.0, constant_beta(0.0), exponential(1.0))
        ],
        "routing": [[0.5, 0.5], [0.5, 0.5]],
    }));
    let g = grid(&s, 5);
    let report = assemble_gain(&s, &g, 0.0);
    assert!(report.matrix.matrix().iter().all(|&a| a == 0.0));
    let pd = assemble_pd(&s, &g, 0.0);
    let top = s.len() * g.len();
    assert!(pd
        .matrix()
        .slice(s![..top, top..])
        .iter()
        .all(|&a| a == 0.0));
    assert_eq!(spectral_radius(&pd, RADIUS_TOL).unwrap(), 0.0);
}

#[test]
fn single_cell_gain_is_the_scalar_loop_gain() {
    let (w, gamma, l) = (0.7, 0.3, 1.4);
    let s = single_circle(w, gamma, l, 1.0, dirac());
    let g = grid(&s, 1);
    let v = g.center(0);
    let m = assemble_gain(&s, &g, 0.0).matrix;
    let want = w * (-gamma * l / v).exp();
    assert!((m.matrix()[[0, 0]] - want).abs() < 1e-15);
    assert!((gain_entry_oracle(&s, &g, 0.0, 0, 0, 0, 0) - want).abs() < 1e-12);
    let r_pd = spectral_radius(&assemble_pd(&s, &g, 0.0), RADIUS_TOL).unwrap();
    assert!((r_pd - want.sqrt()).abs() < 1e-10);
}

#[test]
fn dirac_network_gain_matches_the_oracle_entrywise() {
    let s = spec(json!({
        "velocity": { "v_min": 0.5, "v_max": 2.0 },
        "circles": [
            circle(1.0, 0.6, 0.2, constant_beta(0.8), dirac()),
            circle(1.5, 1.1, 0.1, constant_beta(0.5), dirac())
        ],
        "routing": [[0.3, 0.2], [0.4, 0.1]],
    }));
    let g = grid(&s, 6);
    let f = JunctionFactors::new(&s, &g, 0.0);
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..6 {
                for kp in 0..6 {
                    let want = gain_entry_oracle(&s, &g, 0.0, i, k, j, kp);
                    let got = f.gain_entry(i, k, j, kp);
                    assert!(
                        (got - want).abs() < 1e-8 * want.max(1e-3),
                        "({i},{k},{j},{kp})"
                    );
                }
            }
        }
    }
}

#[test]
fn pd_squared_restricts_to_the_gain() {
    for fx in regression_suite() {
        let g = grid(&fx.spec, 6);
        for lambda in [0.0, 0.7] {
            let pd = assemble_pd(&fx.spec, &g, lambda);
            let gain = assemble_gain(&fx.spec, &g, lambda).matrix;
            let top = fx.spec.len() * g.len();
            let m = pd.matrix();
            let product = m.slice(s![..top, top..]).dot(&m.slice(s![top.., ..top]));
            let diff = (&product - gain.matrix())
                .iter()
                .fold(0.0f64, |a, b| a.max(b.abs()));
            assert!(diff < 1e-12, "{}: {diff}", fx.name);
        }
    }
}

#[test]
fn pd_norm_matches_the_assembled_matrix() {
    for fx in regression_suite() {
        let g = grid(&fx.spec, 5);
        let assembled = assemble_pd(&fx.spec, &g, 0.0).norm();
        let factored = pd_norm(&fx.spec, &g, 0.0);
        assert!(
            (assembled - factored).abs() < 1e-12 * assembled.max(1.0),
            "{}",
            fx.name
        );
    }
}

/// `|row sum of Λ₀ at the middle cell - its continuum value|`.
fn middle_row_error(s: &NetworkSpec, cells: usize) -> f64 {
    let g = grid(s, cells);
    let mid = cells / 2;
    let v = g.center(mid);
    let vb = *s.velocity();
    let f = JunctionFactors::new(s, &g, 0.0);
    let discrete: f64 = (0..cells).map(|kp| f.gain_entry(0, mid, 0, kp)).sum();
    let c = s.circle(0);
    let integrand = |vp: f64| beta_at(s, 0, v, vp) * vp * survival_oracle(s, 0, 0.0, vp, c.length);
    let exact = laplace_oracle(&c.delay_measure, c.delay, 0.0) * s.routing().get(0, 0) / v
        * adaptive_simpson(&integrand, vb.v_min, vb.v_max, 1e-13);
    (discrete - exact).abs()
}

#[test]
fn gain_quadrature_converges_at_first_order() {
    let s = spec(json!({
        "velocity": { "v_min": 0.5, "v_max": 1.5 },
        "circles": [{
            "length": 1.5,
            "delay": 0.7,
            "absorption": { "type": "tabulated", "nx": 3, "nv": 1, "values": [0.2, 0.9, 0.4] },
            "scattering": {
                "type": "separable",
                "outgoing": { "type": "exponential", "amplitude": 1.0, "rate": 0.6 },
                "incoming": { "type": "exponential", "amplitude": 1.0, "rate": -1.1 }
            },
            "delay_measure": exponential(1.0)
        }],
        "routing": [[0.6]],
    }));
    let errors: Vec<f64> = [3, 9, 27, 81]
        .iter()
        .map(|&k| middle_row_error(&s, k))
        .collect();
    for w in errors.windows(2) {
        assert!(w[1] <= w[0] / 3.0 * 1.05, "{errors:?}");
    }
    assert!(errors[3] < 1e-3, "{errors:?}");
}

#[test]
fn block_norm_bound_examples() {
    // v_max = 2 v_min, variation 0.3, no absorption, ‖M‖ = 0.5
    let s = spec(json!({
        "velocity": { "v_min": 1.0, "v_max": 2.0 },
        "circles": [circle(1.0, 1.0, 0.0, constant_beta(1.0), json!({
            "type": "piecewise",
            "density": [{ "start": -1.0, "end": 0.0, "value": 0.3 }]
        }))],
        "routing": [[0.5]],
        "flags": { "mass_preserving": true },
    }));
    assert!((pd_norm_paper_bound(&s).unwrap() - 0.6).abs() < 1e-15);

    let r = 1.4;
    let s = spec(json!({
        "velocity": { "v_min": 0.8, "v_max": 1.2 },
        "circles": [
            circle(1.0, r, 0.1, constant_beta(2.5), exponential(1.0)),
            circle(0.7, r, 0.3, constant_beta(2.5), exponential(1.0))
        ],
        "routing": [[0.2, 0.3], [0.3, 0.2]],
        "flags": { "mass_preserving": true },
    }));
    let b = network_bounds(&s);
    let looser = (r * 1.5).max((b.l_bar * b.gamma_bar / 0.8).exp() * b.routing_norm);
    assert!(pd_norm_paper_bound(&s).unwrap() <= looser);

    let unnormalized = spec(json!({
        "velocity": { "v_min": 0.5, "v_max": 1.5 },
        "circles": [circle(1.0, 1.0, 0.0, constant_beta(0.3), dirac())],
        "routing": [[0.5]],
    }));
    assert!(matches!(
        pd_norm_paper_bound(&unnormalized),
        Err(Error::Precondition(_))
    ));
}

#[test]
fn dirichlet_bound_examples() {
    let s = single_circle(0.5, 0.0, 1.0, 1.0, dirac());
    assert_eq!(dirichlet_norm_paper_bound(&s).0, 1.0);
    let s = spec(json!({
        "velocity": { "v_min": 1.0, "v_max": 2.0 },
        "circles": [circle(1.0, 1.0, 1.0, constant_beta(1.0), dirac())],
        "routing": [[0.5]],
    }));
    assert!((dirichlet_norm_paper_bound(&s).0 - std::f64::consts::E).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gain_is_entrywise_nonincreasing_in_lambda(seed in 0u64..10_000, lo in -1.0..2.0f64, gap in 0.01..2.0f64) {
        let s = random_spec(Family::MassPreserving, seed);
        let g = grid(&s, 4);
        let a = assemble_gain(&s, &g, lo).matrix;
        let b = assemble_gain(&s, &g, lo + gap).matrix;
        for (x, y) in a.matrix().iter().zip(b.matrix()) {
            prop_assert!(*y <= *x * (1.0 + 1e-13));
        }
    }

    #[test]
    fn discretized_dirichlet_norm_is_dominated(seed in 0u64..10_000) {
        let s = random_spec(Family::Dirac, seed);
        let g = grid(&s, 6);
        prop_assert!(dirichlet_norm(&s, &g) <= dirichlet_norm_paper_bound(&s).0 + 1e-12);
    }

    #[test]
    fn stencil_weights_are_nonnegative_with_full_mass(seed in 0u64..10_000, step in 0.005..0.3f64) {
        let s = random_spec(Family::MassPreserving, seed);
        for (j, c) in s.circles().iter().enumerate() {
            let st = DelayStencil::for_circle(&s, j, step);
            prop_assert!(st.weights().iter().all(|&w| w >= 0.0));
            let tv = measure_total_variation(&c.delay_measure, c.delay);
            prop_assert!((st.total_mass() - tv).abs() <= 1e-12 * tv.max(1.0));
        }
    }
}

mod common;

use std::sync::Arc;

use common::checks::{duality_discrepancy, gradient_fd_discrepancy};
use common::{random_data, random_field, rng, square};
use heatsource::assembly::{CoefficientSet, SpaceTimeField};
use heatsource::inverse::{cg_minimize, InverseConfig, Tikhonov};
use heatsource::mesh::{Axis, BoundarySpec, Mesh};
use heatsource::pde::{ParabolicProblem, TimeGrid};
use proptest::prelude::*;

fn gamma() -> impl Strategy<Value = BoundarySpec> {
    prop_oneof![
        Just(BoundarySpec::All),
        Just(BoundarySpec::line(Axis::Y, -1.0)),
        Just(BoundarySpec::line(Axis::X, 1.0)),
        Just(BoundarySpec::Lines(vec![(Axis::X, -1.0), (Axis::Y, 1.0)])),
    ]
}

/// Time-dependent `A`, `b`, `sigma`, so every step has its own operator.
fn varying_problem(n: usize, steps: usize, gamma: &BoundarySpec, b: f64, sigma: f64) -> ParabolicProblem {
    let mesh = Mesh::rectangle(square(), n).unwrap().tag_boundary(gamma).unwrap();
    let coeffs = CoefficientSet::constant([[1.0, 0.0], [0.0, 1.0]], b, sigma, 0.4, 0.4)
        .with_diffusion(|x, _, t| [[2.0 + t, 0.5 * x], [0.5 * x, 1.5 + t]], 0.9)
        .with_reaction(move |x: f64, _: f64, t: f64| b * (1.0 + t * x * x))
        .with_robin(move |_: f64, y: f64, t: f64| sigma * (1.0 + t + y * y))
        .time_dependent(true);
    ParabolicProblem::new(Arc::new(mesh), TimeGrid::new(1.0, steps).unwrap(), &coeffs).unwrap()
}

#[test]
fn gradient_matches_central_differences() {
    for seed in 0..4 {
        let err = gradient_fd_discrepancy(seed, 6, 1e-5);
        assert!(err <= 1e-6, "seed {seed}: {err:e}");
    }
}

#[test]
fn duality_holds_for_the_standard_coefficients() {
    let err = duality_discrepancy(3, 10);
    assert!(err <= 1e-9, "{err:e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn duality_holds_for_time_dependent_coefficients(
        seed in 0u64..1000, n in 2usize..5, steps in 1usize..6, g in gamma(), b in 0.0..2.0f64, sigma in 0.0..2.0f64,
    ) {
        let pde = varying_problem(n, steps, &g, b, sigma);
        let mut r = rng(seed);
        let data = random_data(&pde, &mut r);
        let f = random_field(pde.grid(), pde.num_nodes(), &mut r);
        let xi = random_field(pde.grid(), pde.num_nodes(), &mut r);
        let state = pde.solve_forward(&f).unwrap();
        let adjoint = pde.solve_adjoint(&state, &data).unwrap();
        let p = SpaceTimeField::from_slabs(pde.grid(), adjoint.states[..steps].to_vec()).unwrap();
        let lhs = pde.boundary_inner(&pde.solve_sensitivity(&xi).unwrap(), &pde.misfit(&state, &data)).unwrap();
        let rhs = p.inner(pde.mass(), &xi);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs().max(lhs.abs()).max(1e-12), "{lhs} vs {rhs}");
    }

    #[test]
    fn exact_line_search_minimizes_along_the_direction(seed in 0u64..1000, g in gamma()) {
        let pde = varying_problem(3, 3, &g, 1.0, 1.0);
        let mut r = rng(seed);
        let data = random_data(&pde, &mut r);
        let f_star = random_field(pde.grid(), pde.num_nodes(), &mut r);
        let j = Tikhonov::new(&pde, &data, 0.02, &f_star);
        let f = random_field(pde.grid(), pde.num_nodes(), &mut r);
        let d = random_field(pde.grid(), pde.num_nodes(), &mut r);
        let alpha = j.step_size(&f, &d).unwrap();
        let at = |a: f64| {
            let mut x = f.clone();
            x.add_scaled(a, &d);
            j.cost(&x).unwrap()
        };
        let best = at(alpha);
        let h = 1e-3 * alpha.abs().max(1e-3);
        prop_assert!(best <= at(alpha + h) && best <= at(alpha - h));
    }

    #[test]
    fn cg_decreases_the_cost_monotonically(seed in 0u64..1000) {
        let pde = varying_problem(3, 4, &BoundarySpec::All, 1.0, 1.0);
        let mut r = rng(seed);
        let data = random_data(&pde, &mut r);
        let config = InverseConfig::new(0.01, random_field(pde.grid(), pde.num_nodes(), &mut r));
        let report = cg_minimize(&Tikhonov::from_config(&pde, &data, &config), &config).unwrap();
        for w in report.history.windows(2) {
            prop_assert!(w[1].cost <= w[0].cost * (1.0 + 1e-12));
        }
        prop_assert!(report.final_grad_norm() <= report.threshold);
    }
}

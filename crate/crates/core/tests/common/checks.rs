//! Scalar discrepancy measures shared by the oracle tests and the
//! acceptance suite.

use heatsource::assembly::{
    assemble_boundary_mass, assemble_mass, assemble_operator, edge_mass, element_mass, element_stiffness,
    SpaceTimeField,
};
use heatsource::experiments::STANDARD_DIFFUSION;
use heatsource::inverse::{cg_minimize, InverseConfig, Tikhonov};
use heatsource::mesh::{BoundarySpec, Mesh, Point};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::dense::{self, dense_system, DenseSystem};
use super::{standard_coefficients, problem, random_data, random_field, rng, square};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Element mass, stiffness and edge mass against quadrature, over random
/// nondegenerate triangles. Returns the largest entrywise error relative to
/// the largest entry.
pub fn element_matrix_discrepancy(seed: u64, count: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < count {
        let p: [Point; 3] = [0, 1, 2].map(|_| [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)]);
        let twice_area = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
        if twice_area.abs() < 0.05 {
            continue;
        }
        done += 1;
        let (_, area) = heatsource::assembly::barycentric_gradients(p);
        let pairs = [
            (element_mass(area), dense::mass(p)),
            (element_stiffness(p, STANDARD_DIFFUSION), dense::stiffness(p, STANDARD_DIFFUSION)),
        ];
        for (got, want) in pairs {
            let scale = want.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
            for i in 0..3 {
                for j in 0..3 {
                    worst = worst.max((got[i][j] - want[i][j]).abs() / scale);
                }
            }
        }
        let len = r.gen_range(0.01..2.0);
        let (got, want) = (edge_mass(len), dense::edge_mass(len));
        for i in 0..2 {
            for j in 0..2 {
                worst = worst.max(rel(got[i][j], want[i][j]));
            }
        }
    }
    worst
}

pub fn standard_dense(mesh: &Mesh) -> DenseSystem {
    dense_system(mesh, STANDARD_DIFFUSION, 1.0, 1.0, 0.4, 0.4)
}

/// Assembled global matrices against dense brute-force assembly.
pub fn global_matrix_discrepancy(n: usize, gamma: &BoundarySpec) -> f64 {
    let mesh = Mesh::rectangle(square(), n).unwrap().tag_boundary(gamma).unwrap();
    let d = standard_dense(&mesh);
    let m = dense::to_dense(&assemble_mass(&mesh).to_dense());
    let k = dense::to_dense(&assemble_operator(&mesh, &standard_coefficients(), 0.0).unwrap().to_dense());
    let b = dense::to_dense(&assemble_boundary_mass(&mesh).unwrap().to_dense());
    [
        dense::max_abs_diff(&m, &d.mass) / d.mass.abs().max(),
        dense::max_abs_diff(&k, &d.operator) / d.operator.abs().max(),
        dense::max_abs_diff(&b, &d.boundary) / d.boundary.abs().max(),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

/// Single Crank-Nicolson steps and a whole trajectory against dense LU.
pub fn cn_step_discrepancy(seed: u64) -> f64 {
    let mut r = rng(seed);
    let pde = problem(3, 5, &BoundarySpec::line(heatsource::mesh::Axis::Y, -1.0));
    let d = standard_dense(pde.mesh());
    let tau = pde.grid().tau();
    let nodes = pde.num_nodes();
    let mut worst: f64 = 0.0;
    for n in 1..=pde.grid().steps {
        let y: Vec<f64> = (0..nodes).map(|_| r.gen_range(-1.0..1.0)).collect();
        let load: Vec<f64> = (0..nodes).map(|_| r.gen_range(-1.0..1.0)).collect();
        let got = DVector::from_vec(pde.cn_step(n, &y, &load).unwrap());
        let want = d.step(tau, &DVector::from_vec(y), &DVector::from_vec(load));
        worst = worst.max((got - &want).amax() / want.amax());
    }
    let f = random_field(pde.grid(), nodes, &mut r);
    let got = pde.solve_forward(&f).unwrap();
    let want = d.forward(tau, &f.slabs);
    for (g, w) in got.states.iter().zip(&want) {
        worst = worst.max((DVector::from_column_slice(g) - w).amax() / w.amax());
    }
    worst
}

/// CG minimizer against the dense normal-equations solution on the 9-node
/// mesh with `M = 4`; relative max-norm difference.
pub fn normal_equations_discrepancy(seed: u64) -> f64 {
    let mut r = rng(seed);
    let pde = problem(2, 4, &BoundarySpec::All);
    let data = random_data(&pde, &mut r);
    let f_star = random_field(pde.grid(), pde.num_nodes(), &mut r);
    let rho = 0.05;
    let mut config = InverseConfig::new(rho, f_star.clone());
    config.tau_a = 0.0;
    config.tau_r = 1e-13;
    let report = cg_minimize(&Tikhonov::from_config(&pde, &data, &config), &config).unwrap();
    let d = standard_dense(pde.mesh());
    let want = d.normal_equations_minimizer(pde.grid().tau(), pde.grid().steps, &data.values, rho, &f_star.slabs);
    let got = DMatrix::from_fn(pde.num_nodes(), 4, |i, k| report.minimizer.slabs[k][i]);
    let want = DMatrix::from_fn(pde.num_nodes(), 4, |i, k| want[k][i]);
    (got - &want).amax() / want.amax()
}

/// Largest relative gap between `(grad J, d)` and a central difference of
/// `J` with step `eps`, over `dirs` random directions.
pub fn gradient_fd_discrepancy(seed: u64, dirs: usize, eps: f64) -> f64 {
    let mut r = rng(seed);
    let pde = problem(2, 4, &BoundarySpec::line(heatsource::mesh::Axis::Y, -1.0));
    let data = random_data(&pde, &mut r);
    let f_star = random_field(pde.grid(), pde.num_nodes(), &mut r);
    let j = Tikhonov::new(&pde, &data, 0.03, &f_star);
    let f = random_field(pde.grid(), pde.num_nodes(), &mut r);
    let g = j.gradient(&f).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..dirs {
        let d = random_field(pde.grid(), pde.num_nodes(), &mut r);
        let mut plus = f.clone();
        plus.add_scaled(eps, &d);
        let mut minus = f.clone();
        minus.add_scaled(-eps, &d);
        let fd = (j.cost(&plus).unwrap() - j.cost(&minus).unwrap()) / (2.0 * eps);
        worst = worst.max(rel(fd, g.inner(pde.mass(), &d)));
    }
    worst
}

/// `sum tau (U_0(xi), B (U - z)) = sum tau (P^{n-1}, M xi^n)` over random
/// directions; largest relative gap.
pub fn duality_discrepancy(seed: u64, count: usize) -> f64 {
    let mut r = rng(seed);
    let pde = problem(4, 6, &BoundarySpec::line(heatsource::mesh::Axis::Y, -1.0));
    let data = random_data(&pde, &mut r);
    let f = random_field(pde.grid(), pde.num_nodes(), &mut r);
    let state = pde.solve_forward(&f).unwrap();
    let adjoint = pde.solve_adjoint(&state, &data).unwrap();
    let misfit = pde.misfit(&state, &data);
    let p = SpaceTimeField::from_slabs(pde.grid(), adjoint.states[..pde.grid().steps].to_vec()).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let xi = random_field(pde.grid(), pde.num_nodes(), &mut r);
        let sens = pde.solve_sensitivity(&xi).unwrap();
        let lhs = pde.boundary_inner(&sens, &misfit).unwrap();
        let rhs = p.inner(pde.mass(), &xi);
        worst = worst.max(rel(lhs, rhs));
    }
    worst
}

#![allow(dead_code)]

pub mod checks;
pub mod dense;

use std::sync::Arc;

use heatsource::assembly::{CoefficientSet, SpaceTimeField};
use heatsource::experiments::STANDARD_DIFFUSION;
use heatsource::mesh::{BoundarySpec, Mesh, Rect};
use heatsource::pde::{BoundaryObservation, ParabolicProblem, TimeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn square() -> Rect {
    Rect::new(-1.0, 1.0, -1.0, 1.0)
}

pub fn standard_coefficients() -> CoefficientSet {
    CoefficientSet::constant(STANDARD_DIFFUSION, 1.0, 1.0, 0.4, 0.4)
}

/// `(n+1)^2` nodes on the square, standard coefficients.
pub fn problem(n: usize, steps: usize, gamma: &BoundarySpec) -> ParabolicProblem {
    let mesh = Mesh::rectangle(square(), n).unwrap().tag_boundary(gamma).unwrap();
    ParabolicProblem::new(Arc::new(mesh), TimeGrid::new(1.0, steps).unwrap(), &standard_coefficients()).unwrap()
}

pub fn random_field(grid: TimeGrid, nodes: usize, rng: &mut ChaCha8Rng) -> SpaceTimeField {
    let slabs = (0..grid.steps).map(|_| (0..nodes).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    SpaceTimeField::from_slabs(grid, slabs).unwrap()
}

pub fn random_data(pde: &ParabolicProblem, rng: &mut ChaCha8Rng) -> BoundaryObservation {
    let values = (0..pde.grid().steps).map(|_| (0..pde.num_nodes()).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
    BoundaryObservation { values, delta: 0.0, seed: 0 }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

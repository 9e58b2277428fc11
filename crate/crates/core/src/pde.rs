//! Crank-Nicolson Galerkin time stepping.
//!
//! Every solver here runs the same step
//!
//! ```text
//!   (M / tau + K^n / 2) x = (M / tau - K^n / 2) y + load
//! ```
//!
//! forward (`y = U^{n-1}`, `x = U^n`) or backward (`y = P^n`, `x = P^{n-1}`),
//! so the discrete adjoint is the exact dual of the discrete forward map.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sprs_ldl::{Ldl, LdlNumeric};

use crate::assembly::{
    assemble_boundary_load, assemble_boundary_mass, assemble_mass, assemble_operator, interpolate_nodal,
    CoefficientSet, SpaceTimeField,
};
use crate::mesh::Mesh;
use crate::{Error, Result, SparseSymMatrix};

/// Uniform partition of `[0, T]` into `steps` slabs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub final_time: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(final_time: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidParameter { name: "steps", msg: "need at least one time step".into() });
        }
        if !(final_time > 0.0 && final_time.is_finite()) {
            return Err(Error::InvalidParameter { name: "final_time", msg: format!("{final_time} is not positive") });
        }
        Ok(TimeGrid { final_time, steps })
    }

    pub fn tau(&self) -> f64 {
        self.final_time / self.steps as f64
    }

    /// `t^n`; the last level is exactly `T`.
    pub fn level(&self, n: usize) -> f64 {
        if n == self.steps {
            self.final_time
        } else {
            n as f64 * self.tau()
        }
    }

    /// The grid with every slab split in two.
    pub fn refined(&self) -> TimeGrid {
        TimeGrid { final_time: self.final_time, steps: 2 * self.steps }
    }

    /// Slab `n` (1-based) containing `t`, clamped to `1..=steps`.
    pub fn slab_of(&self, t: f64) -> usize {
        ((t / self.tau()).ceil() as usize).clamp(1, self.steps)
    }
}

/// Nodal fields at the time levels `t^0 .. t^M`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn zeros(grid: TimeGrid, nodes: usize) -> Self {
        Trajectory { grid, states: vec![vec![0.0; nodes]; grid.steps + 1] }
    }

    pub fn num_nodes(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    /// `self += a * other`.
    pub fn add_scaled(&mut self, a: f64, other: &Trajectory) {
        for (s, o) in self.states.iter_mut().zip(&other.states) {
            for (v, w) in s.iter_mut().zip(o) {
                *v += a * w;
            }
        }
    }

    /// CSV with one row per `(n, node)`: `n,t,node,value`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "t", "node", "value"])?;
        for (n, state) in self.states.iter().enumerate() {
            let t = format!("{:.16e}", self.grid.level(n));
            for (i, v) in state.iter().enumerate() {
                w.write_record([n.to_string(), t.clone(), i.to_string(), format!("{v:.16e}")])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Boundary data `z` on the observed nodes, constant on each time slab.
///
/// `values[k]` is a full nodal vector for slab `k + 1`; entries off the
/// observed boundary are zero and never read.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryObservation {
    pub values: Vec<Vec<f64>>,
    pub delta: f64,
    pub seed: u64,
}

/// Cached sparse LDL^T factorization of an SPD matrix.
pub struct SpdSolver {
    matrix: SparseSymMatrix,
    ldl: LdlNumeric<f64, usize>,
}

/// Relative residual every solve must reach.
pub const SOLVE_TOLERANCE: f64 = 1e-10;

impl SpdSolver {
    pub fn new(matrix: SparseSymMatrix) -> Result<Self> {
        let ldl = Ldl::new()
            .fill_in_reduction(sprs::FillInReduction::ReverseCuthillMcKee)
            .check_symmetry(sprs::SymmetryCheck::DontCheckSymmetry)
            .numeric(matrix.as_csmat().view())
            .map_err(|_| Error::Indefinite { pivot: 0, value: 0.0 })?;
        if let Some((pivot, &value)) = ldl.d().iter().enumerate().find(|(_, d)| !(**d > 0.0)) {
            return Err(Error::Indefinite { pivot, value });
        }
        Ok(SpdSolver { matrix, ldl })
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.matrix.dim() {
            return Err(Error::Dimension { expected: self.matrix.dim(), got: rhs.len() });
        }
        let norm_b = norm2(rhs);
        let mut x = self.ldl.solve(rhs);
        if norm_b == 0.0 {
            return Ok(x);
        }
        let mut residual = f64::INFINITY;
        // a couple of refinement sweeps absorb round-off on ill-scaled systems
        for _ in 0..3 {
            let ax = self.matrix.mul_vec(&x);
            let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
            residual = norm2(&r) / norm_b;
            if residual <= SOLVE_TOLERANCE {
                return Ok(x);
            }
            let dx = self.ldl.solve(&r);
            for (xi, di) in x.iter_mut().zip(dx) {
                *xi += di;
            }
        }
        Err(Error::NonConvergence { residual, tolerance: SOLVE_TOLERANCE })
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One-shot SPD solve.
pub fn solve_spd(matrix: &SparseSymMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    SpdSolver::new(matrix.clone())?.solve(rhs)
}

struct StepOperator {
    explicit: SparseSymMatrix,
    implicit: Arc<SpdSolver>,
}

/// Discretized parabolic problem on a fixed mesh and time grid.
pub struct ParabolicProblem {
    mesh: Arc<Mesh>,
    grid: TimeGrid,
    mass: SparseSymMatrix,
    boundary_mass: Option<SparseSymMatrix>,
    /// One entry when the coefficients are time independent, else one per step.
    steps: Vec<StepOperator>,
    /// `G^n` for `n = 1..=M`, stored at index `n - 1`.
    boundary_loads: Vec<Vec<f64>>,
    initial: Vec<f64>,
}

impl ParabolicProblem {
    pub fn new(mesh: Arc<Mesh>, grid: TimeGrid, coeffs: &CoefficientSet) -> Result<Self> {
        let mass = assemble_mass(&mesh);
        let boundary_mass = if mesh.observed_edges().next().is_some() {
            Some(assemble_boundary_mass(&mesh)?)
        } else {
            None
        };
        let tau = grid.tau();
        let build = |t: f64| -> Result<StepOperator> {
            let k = assemble_operator(&mesh, coeffs, t)?;
            Ok(StepOperator {
                explicit: mass.combine(1.0 / tau, &k, -0.5),
                implicit: Arc::new(SpdSolver::new(mass.combine(1.0 / tau, &k, 0.5))?),
            })
        };
        let steps = if coeffs.time_dependent {
            (1..=grid.steps).map(|n| build(grid.level(n))).collect::<Result<_>>()?
        } else {
            vec![build(grid.level(grid.steps))?]
        };
        let boundary_loads =
            (1..=grid.steps).map(|n| assemble_boundary_load(&mesh, coeffs.flux.as_ref(), grid.level(n))).collect();
        let q = |x: f64, y: f64, _: f64| (coeffs.initial)(x, y);
        let initial = interpolate_nodal(&mesh, &q, Some(0.0))?;
        Ok(ParabolicProblem { mesh, grid, mass, boundary_mass, steps, boundary_loads, initial })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn mass(&self) -> &SparseSymMatrix {
        &self.mass
    }

    pub fn num_nodes(&self) -> usize {
        self.mesh.num_nodes()
    }

    pub fn boundary_mass(&self) -> Result<&SparseSymMatrix> {
        self.boundary_mass.as_ref().ok_or_else(|| Error::EmptyBoundarySelection("<mesh tags>".into()))
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.initial
    }

    pub fn boundary_load(&self, n: usize) -> &[f64] {
        &self.boundary_loads[n - 1]
    }

    fn step_operator(&self, n: usize) -> &StepOperator {
        if self.steps.len() == 1 {
            &self.steps[0]
        } else {
            &self.steps[n - 1]
        }
    }

    /// The shared kernel: solves `(M/tau + K^n/2) x = (M/tau - K^n/2) y + load`.
    pub fn cn_step(&self, n: usize, y: &[f64], load: &[f64]) -> Result<Vec<f64>> {
        let op = self.step_operator(n);
        let mut rhs = op.explicit.mul_vec(y);
        for (r, l) in rhs.iter_mut().zip(load) {
            *r += l;
        }
        op.implicit.solve(&rhs)
    }

    fn check_field(&self, f: &SpaceTimeField) -> Result<()> {
        if f.grid != self.grid {
            return Err(Error::Dimension { expected: self.grid.steps, got: f.grid.steps });
        }
        if f.num_nodes() != self.num_nodes() {
            return Err(Error::Dimension { expected: self.num_nodes(), got: f.num_nodes() });
        }
        Ok(())
    }

    /// Forward march from `initial` with per-step loads `load(n)`, `n = 1..=M`.
    pub fn march_forward(&self, initial: Vec<f64>, mut load: impl FnMut(usize) -> Vec<f64>) -> Result<Trajectory> {
        let mut states = Vec::with_capacity(self.grid.steps + 1);
        states.push(initial);
        for n in 1..=self.grid.steps {
            let next = self.cn_step(n, &states[n - 1], &load(n))?;
            states.push(next);
        }
        Ok(Trajectory { grid: self.grid, states })
    }

    /// Backward march from `P^M = 0` with per-step loads `load(n)`, `n = M..=1`.
    ///
    /// Step `n` solves with the implicit matrix of forward step `n` but
    /// applies the explicit matrix of forward step `n + 1`, which makes it
    /// the exact transpose of the forward scheme when coefficients vary in
    /// time.
    pub fn march_backward(&self, mut load: impl FnMut(usize) -> Vec<f64>) -> Result<Trajectory> {
        let m = self.grid.steps;
        let mut states = vec![Vec::new(); m + 1];
        states[m] = vec![0.0; self.num_nodes()];
        for n in (1..=m).rev() {
            let mut rhs = if n < m { self.step_operator(n + 1).explicit.mul_vec(&states[n]) } else { vec![0.0; self.num_nodes()] };
            for (r, l) in rhs.iter_mut().zip(load(n)) {
                *r += l;
            }
            states[n - 1] = self.step_operator(n).implicit.solve(&rhs)?;
        }
        Ok(Trajectory { grid: self.grid, states })
    }

    /// State `U(f)` with `U^0 = q_h`.
    pub fn solve_forward(&self, f: &SpaceTimeField) -> Result<Trajectory> {
        self.check_field(f)?;
        self.march_forward(self.initial.clone(), |n| {
            let mut load = self.mass.mul_vec(&f.slabs[n - 1]);
            for (l, g) in load.iter_mut().zip(&self.boundary_loads[n - 1]) {
                *l += g;
            }
            load
        })
    }

    /// Forward state for loads given directly as vectors `(f^n, phi_i)`.
    pub fn solve_forward_with_loads(&self, source_loads: &[Vec<f64>]) -> Result<Trajectory> {
        if source_loads.len() != self.grid.steps {
            return Err(Error::Dimension { expected: self.grid.steps, got: source_loads.len() });
        }
        self.march_forward(self.initial.clone(), |n| {
            let mut load = source_loads[n - 1].clone();
            for (l, g) in load.iter_mut().zip(&self.boundary_loads[n - 1]) {
                *l += g;
            }
            load
        })
    }

    /// Derivative of the source-to-state map in direction `xi`: zero initial
    /// value, zero boundary flux.
    pub fn solve_sensitivity(&self, xi: &SpaceTimeField) -> Result<Trajectory> {
        self.check_field(xi)?;
        self.march_forward(vec![0.0; self.num_nodes()], |n| self.mass.mul_vec(&xi.slabs[n - 1]))
    }

    /// Discrete adjoint driven by the boundary misfit `U^n - z^n`.
    pub fn solve_adjoint(&self, state: &Trajectory, z: &BoundaryObservation) -> Result<Trajectory> {
        let b = self.boundary_mass()?;
        if state.states.len() != self.grid.steps + 1 || z.values.len() != self.grid.steps {
            return Err(Error::Dimension { expected: self.grid.steps, got: z.values.len() });
        }
        self.march_backward(|n| {
            let misfit: Vec<f64> = state.states[n].iter().zip(&z.values[n - 1]).map(|(u, z)| u - z).collect();
            b.mul_vec(&misfit)
        })
    }

    /// Backward problem with flux data `w` on the observed boundary and zero
    /// final value. `w` is given per slab at the nodes.
    pub fn solve_source_condition(&self, w: &SpaceTimeField) -> Result<Trajectory> {
        self.check_field(w)?;
        let b = self.boundary_mass()?;
        self.march_backward(|n| b.mul_vec(&w.slabs[n - 1]))
    }

    /// `sum_{n=1}^M tau a^n^T B_Gamma b^n` over time levels `1..=M`.
    pub fn boundary_inner(&self, a: &Trajectory, b: &Trajectory) -> Result<f64> {
        let bm = self.boundary_mass()?;
        let tau = self.grid.tau();
        Ok((1..=self.grid.steps).map(|n| tau * bm.inner(&a.states[n], &b.states[n])).sum())
    }

    /// Boundary misfit `U^n - z^n` packed as a trajectory (level 0 zero).
    pub fn misfit(&self, state: &Trajectory, z: &BoundaryObservation) -> Trajectory {
        let mut r = Trajectory::zeros(self.grid, self.num_nodes());
        for n in 1..=self.grid.steps {
            r.states[n] = state.states[n].iter().zip(&z.values[n - 1]).map(|(u, z)| u - z).collect();
        }
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{BoundarySpec, Rect};

    #[test]
    fn time_grid() {
        let g = TimeGrid::new(1.0, 3).unwrap();
        assert_eq!(g.level(3), 1.0);
        assert_eq!(g.level(0), 0.0);
        assert_eq!(g.slab_of(0.5), 2);
        assert_eq!(g.slab_of(0.0), 1);
        assert!(TimeGrid::new(1.0, 0).is_err());
        assert!(TimeGrid::new(-1.0, 2).is_err());
    }

    #[test]
    fn spd_identity_and_hand_inverse() {
        let i = SparseSymMatrix::identity(3);
        assert_eq!(solve_spd(&i, &[1.0, -2.0, 3.0]).unwrap(), vec![1.0, -2.0, 3.0]);
        let a = SparseSymMatrix::from_triplets(2, &[(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 2.0)]);
        let x = solve_spd(&a, &[1.0, 1.0]).unwrap();
        assert!((x[0] - 1.0 / 3.0).abs() < 1e-15 && (x[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn spd_reports_indefiniteness() {
        let a = SparseSymMatrix::from_triplets(2, &[(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)]);
        assert!(matches!(solve_spd(&a, &[1.0, 1.0]), Err(Error::Indefinite { .. })));
        let z = SparseSymMatrix::from_triplets(2, &[(0, 0, 1.0)]);
        assert!(matches!(solve_spd(&z, &[1.0, 1.0]), Err(Error::Indefinite { .. })));
        assert!(matches!(solve_spd(&SparseSymMatrix::identity(2), &[1.0]), Err(Error::Dimension { .. })));
    }

    fn tiny_problem(coeffs: &CoefficientSet, steps: usize) -> ParabolicProblem {
        let mesh = Mesh::rectangle(Rect::new(-1.0, 1.0, -1.0, 1.0), 2)
            .unwrap()
            .tag_boundary(&BoundarySpec::All)
            .unwrap();
        ParabolicProblem::new(Arc::new(mesh), TimeGrid::new(1.0, steps).unwrap(), coeffs).unwrap()
    }

    #[test]
    fn zero_data_gives_zero_state() {
        let c = CoefficientSet::constant([[3.0, 1.0], [1.0, 2.0]], 1.0, 1.0, 0.0, 0.0);
        let p = tiny_problem(&c, 3);
        let u = p.solve_forward(&SpaceTimeField::zeros(p.grid(), p.num_nodes())).unwrap();
        assert!(u.states.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_steady_state_is_preserved() {
        // u = 0.4 solves u_t - div(A grad u) + u = 0.4, grad u . n + u = 0.4
        let c = CoefficientSet::constant([[3.0, 1.0], [1.0, 2.0]], 1.0, 1.0, 0.4, 0.4);
        let p = tiny_problem(&c, 5);
        let f = SpaceTimeField::constant(p.grid(), p.num_nodes(), 0.4);
        let u = p.solve_forward(&f).unwrap();
        assert!(u.states.iter().flatten().all(|v| (v - 0.4).abs() < 1e-10));
    }

    #[test]
    fn sensitivity_matches_homogeneous_forward() {
        let c = CoefficientSet::constant([[3.0, 1.0], [1.0, 2.0]], 1.0, 1.0, 0.4, 0.4);
        let p = tiny_problem(&c, 4);
        let h = tiny_problem(&c.homogeneous(), 4);
        let xi = SpaceTimeField::from_slabs(
            p.grid(),
            (0..4).map(|k| (0..9).map(|i| ((i * 7 + k * 3) % 5) as f64 - 2.0).collect()).collect(),
        )
        .unwrap();
        let a = p.solve_sensitivity(&xi).unwrap();
        let b = h.solve_forward(&xi).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn adjoint_vanishes_for_matching_data() {
        let c = CoefficientSet::constant([[3.0, 1.0], [1.0, 2.0]], 1.0, 1.0, 0.4, 0.4);
        let p = tiny_problem(&c, 4);
        let u = p.solve_forward(&SpaceTimeField::constant(p.grid(), 9, 1.0)).unwrap();
        let z = BoundaryObservation { values: u.states[1..].to_vec(), delta: 0.0, seed: 0 };
        let adj = p.solve_adjoint(&u, &z).unwrap();
        assert!(adj.states.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn source_condition_shares_the_adjoint_kernel() {
        let c = CoefficientSet::constant([[3.0, 1.0], [1.0, 2.0]], 1.0, 1.0, 0.0, 0.0);
        let p = tiny_problem(&c, 4);
        let w = SpaceTimeField::constant(p.grid(), 9, 0.2);
        let f = p.solve_source_condition(&w).unwrap();
        // feed the same values through the adjoint as a misfit U - z = w
        let state = Trajectory { grid: p.grid(), states: std::iter::once(vec![0.0; 9]).chain(w.slabs.clone()).collect() };
        let z = BoundaryObservation { values: vec![vec![0.0; 9]; 4], delta: 0.0, seed: 0 };
        assert_eq!(p.solve_adjoint(&state, &z).unwrap(), f);
        assert!(f.states[4].iter().all(|&v| v == 0.0));
        assert!(f.states[0].iter().all(|&v| v > 0.0));
        let zero = p.solve_source_condition(&SpaceTimeField::zeros(p.grid(), 9)).unwrap();
        assert!(zero.states.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn trajectory_csv() {
        let t = Trajectory::zeros(TimeGrid::new(1.0, 2).unwrap(), 2);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().count(), 1 + 3 * 2);
        assert!(s.starts_with("n,t,node,value\n0,0.0000000000000000e0,0,"));
    }
}

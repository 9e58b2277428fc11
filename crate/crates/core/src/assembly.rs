//! P1 finite-element assembly.
//!
//! Coefficients are sampled with one-point rules: `A` and `b` at element
//! centroids, `sigma` and `g` at boundary-edge midpoints. With constant
//! coefficients every matrix below is integrated exactly.

use std::sync::Arc;

use crate::mesh::{Mesh, Point};
use crate::pde::TimeGrid;
use crate::{Error, Result, SparseSymMatrix};

/// A scalar function of `(x, y, t)` together with its time average over a
/// slab.
pub trait SpaceTimeFunction: Send + Sync {
    fn value(&self, x: f64, y: f64, t: f64) -> f64;

    /// `(1 / (t1 - t0)) * int_{t0}^{t1} value(x, y, s) ds`. The default uses
    /// two-point Gauss, exact for cubics in time; implementations with
    /// discontinuities in time should override it.
    fn slab_mean(&self, x: f64, y: f64, t0: f64, t1: f64) -> f64 {
        let mid = 0.5 * (t0 + t1);
        let half = 0.5 * (t1 - t0) / 3f64.sqrt();
        0.5 * (self.value(x, y, mid - half) + self.value(x, y, mid + half))
    }
}

impl<F> SpaceTimeFunction for F
where
    F: Fn(f64, f64, f64) -> f64 + Send + Sync,
{
    fn value(&self, x: f64, y: f64, t: f64) -> f64 {
        self(x, y, t)
    }
}

pub type ScalarField = Arc<dyn SpaceTimeFunction>;
pub type TensorField = Arc<dyn Fn(f64, f64, f64) -> [[f64; 2]; 2] + Send + Sync>;
pub type InitialField = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Data of the parabolic problem: `A`, `b`, `sigma`, `g` and `q`.
#[derive(Clone)]
pub struct CoefficientSet {
    pub diffusion: TensorField,
    pub reaction: ScalarField,
    pub robin: ScalarField,
    pub flux: ScalarField,
    pub initial: InitialField,
    /// Declared lower bound `a` in `A xi . xi >= a |xi|^2`.
    pub ellipticity: f64,
    /// When false the operator matrix is assembled once and reused for
    /// every time level.
    pub time_dependent: bool,
}

impl std::fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("ellipticity", &self.ellipticity)
            .field("time_dependent", &self.time_dependent)
            .finish_non_exhaustive()
    }
}

impl CoefficientSet {
    /// Constant coefficients; the ellipticity bound is the smallest
    /// eigenvalue of `a`.
    pub fn constant(a: [[f64; 2]; 2], b: f64, sigma: f64, g: f64, q: f64) -> Self {
        CoefficientSet {
            diffusion: Arc::new(move |_, _, _| a),
            reaction: Arc::new(move |_: f64, _: f64, _: f64| b),
            robin: Arc::new(move |_: f64, _: f64, _: f64| sigma),
            flux: Arc::new(move |_: f64, _: f64, _: f64| g),
            initial: Arc::new(move |_, _| q),
            ellipticity: min_eigenvalue(a),
            time_dependent: false,
        }
    }

    pub fn with_flux(mut self, g: impl SpaceTimeFunction + 'static) -> Self {
        self.flux = Arc::new(g);
        self
    }

    pub fn with_initial(mut self, q: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.initial = Arc::new(q);
        self
    }

    pub fn with_reaction(mut self, b: impl SpaceTimeFunction + 'static) -> Self {
        self.reaction = Arc::new(b);
        self
    }

    pub fn with_robin(mut self, sigma: impl SpaceTimeFunction + 'static) -> Self {
        self.robin = Arc::new(sigma);
        self
    }

    pub fn with_diffusion(
        mut self,
        a: impl Fn(f64, f64, f64) -> [[f64; 2]; 2] + Send + Sync + 'static,
        ellipticity: f64,
    ) -> Self {
        self.diffusion = Arc::new(a);
        self.ellipticity = ellipticity;
        self
    }

    pub fn time_dependent(mut self, yes: bool) -> Self {
        self.time_dependent = yes;
        self
    }

    /// Same operator with zero boundary flux and zero initial value, as used
    /// by the sensitivity and adjoint problems.
    pub fn homogeneous(&self) -> Self {
        let mut c = self.clone();
        c.flux = Arc::new(|_: f64, _: f64, _: f64| 0.0);
        c.initial = Arc::new(|_, _| 0.0);
        c
    }
}

fn min_eigenvalue(a: [[f64; 2]; 2]) -> f64 {
    let mean = 0.5 * (a[0][0] + a[1][1]);
    let half_gap = 0.5 * (a[0][0] - a[1][1]);
    let off = 0.5 * (a[0][1] + a[1][0]);
    mean - half_gap.hypot(off)
}

/// Per-slab nodal values of a function piecewise constant in time.
///
/// `slabs[k]` holds the values on `(t^k, t^{k+1}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    pub grid: TimeGrid,
    pub slabs: Vec<Vec<f64>>,
}

impl SpaceTimeField {
    pub fn zeros(grid: TimeGrid, nodes: usize) -> Self {
        Self::constant(grid, nodes, 0.0)
    }

    pub fn constant(grid: TimeGrid, nodes: usize, value: f64) -> Self {
        SpaceTimeField { grid, slabs: vec![vec![value; nodes]; grid.steps] }
    }

    pub fn from_slabs(grid: TimeGrid, slabs: Vec<Vec<f64>>) -> Result<Self> {
        if slabs.len() != grid.steps {
            return Err(Error::Dimension { expected: grid.steps, got: slabs.len() });
        }
        if let Some(first) = slabs.first() {
            if let Some(bad) = slabs.iter().find(|s| s.len() != first.len()) {
                return Err(Error::Dimension { expected: first.len(), got: bad.len() });
            }
        }
        Ok(SpaceTimeField { grid, slabs })
    }

    pub fn num_nodes(&self) -> usize {
        self.slabs.first().map_or(0, Vec::len)
    }

    /// `self += a * other`.
    pub fn add_scaled(&mut self, a: f64, other: &SpaceTimeField) {
        for (s, o) in self.slabs.iter_mut().zip(&other.slabs) {
            for (v, w) in s.iter_mut().zip(o) {
                *v += a * w;
            }
        }
    }

    pub fn scaled(&self, a: f64) -> SpaceTimeField {
        self.map(|v| a * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> SpaceTimeField {
        SpaceTimeField {
            grid: self.grid,
            slabs: self.slabs.iter().map(|s| s.iter().map(|&v| f(v)).collect()).collect(),
        }
    }

    pub fn sub(&self, other: &SpaceTimeField) -> SpaceTimeField {
        let mut d = self.clone();
        d.add_scaled(-1.0, other);
        d
    }

    /// `L2(Omega_T)` pairing `sum_n tau a^n^T M b^n`.
    pub fn inner(&self, mass: &SparseSymMatrix, other: &SpaceTimeField) -> f64 {
        let tau = self.grid.tau();
        self.slabs.iter().zip(&other.slabs).map(|(a, b)| tau * mass.inner(a, b)).sum()
    }

    pub fn norm(&self, mass: &SparseSymMatrix) -> f64 {
        self.inner(mass, self).max(0.0).sqrt()
    }

    /// Space-time mean `(1, f) / (|Omega| T)`.
    pub fn mean(&self, mass: &SparseSymMatrix) -> f64 {
        let ones = vec![1.0; mass.dim()];
        let area = mass.inner(&ones, &ones);
        let tau = self.grid.tau();
        let total: f64 = self.slabs.iter().map(|s| tau * mass.inner(&ones, s)).sum();
        total / (area * self.grid.final_time)
    }
}

pub fn element_mass(area: f64) -> [[f64; 3]; 3] {
    let d = area / 6.0;
    let o = area / 12.0;
    [[d, o, o], [o, d, o], [o, o, d]]
}

/// Gradients of the barycentric coordinates of a triangle, and its
/// (unsigned) area.
pub fn barycentric_gradients(p: [Point; 3]) -> ([[f64; 2]; 3], f64) {
    let two_area = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let g = [0, 1, 2].map(|i| {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        [(p[j][1] - p[k][1]) / two_area, (p[k][0] - p[j][0]) / two_area]
    });
    (g, 0.5 * two_area.abs())
}

/// `int_T A grad(phi_i) . grad(phi_j)` for constant `A`.
pub fn element_stiffness(p: [Point; 3], a: [[f64; 2]; 2]) -> [[f64; 3]; 3] {
    let (g, area) = barycentric_gradients(p);
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let ag = [a[0][0] * g[j][0] + a[0][1] * g[j][1], a[1][0] * g[j][0] + a[1][1] * g[j][1]];
            k[i][j] = area * (g[i][0] * ag[0] + g[i][1] * ag[1]);
        }
    }
    k
}

pub fn edge_mass(length: f64) -> [[f64; 2]; 2] {
    [[length / 3.0, length / 6.0], [length / 6.0, length / 3.0]]
}

fn centroid(p: [Point; 3]) -> Point {
    [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0]
}

fn midpoint(a: Point, b: Point) -> Point {
    [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
}

pub fn assemble_mass(mesh: &Mesh) -> SparseSymMatrix {
    let mut trip = Vec::with_capacity(9 * mesh.triangles().len());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let m = element_mass(mesh.signed_area(t));
        for i in 0..3 {
            for j in 0..3 {
                trip.push((tri[i], tri[j], m[i][j]));
            }
        }
    }
    SparseSymMatrix::from_triplets(mesh.num_nodes(), &trip)
}

/// Matrix of `a^n(phi_j, phi_i)` with coefficients frozen at time `t`.
pub fn assemble_operator(mesh: &Mesh, coeffs: &CoefficientSet, t: f64) -> Result<SparseSymMatrix> {
    let mut trip = Vec::with_capacity(9 * mesh.triangles().len() + 4 * mesh.boundary_edges().len());
    for (e, tri) in mesh.triangles().iter().enumerate() {
        let p = mesh.triangle_points(e);
        let c = centroid(p);
        let a = (coeffs.diffusion)(c[0], c[1], t);
        let scale = a[0][0].abs().max(a[1][1].abs()).max(1.0);
        let min_eig = min_eigenvalue(a);
        if (a[0][1] - a[1][0]).abs() > 1e-12 * scale || !(min_eig >= coeffs.ellipticity) || min_eig <= 0.0 {
            return Err(Error::NotElliptic { x: c[0], y: c[1], t, min_eig, bound: coeffs.ellipticity });
        }
        let b = coeffs.reaction.value(c[0], c[1], t);
        check_nonnegative("reaction", b, c, t)?;
        let k = element_stiffness(p, a);
        let m = element_mass(mesh.signed_area(e));
        for i in 0..3 {
            for j in 0..3 {
                trip.push((tri[i], tri[j], k[i][j] + b * m[i][j]));
            }
        }
    }
    for edge in mesh.boundary_edges() {
        let [a, b] = edge.nodes;
        let mid = midpoint(mesh.nodes()[a], mesh.nodes()[b]);
        let sigma = coeffs.robin.value(mid[0], mid[1], t);
        check_nonnegative("robin", sigma, mid, t)?;
        if sigma != 0.0 {
            let m = edge_mass(mesh.edge_length(a, b));
            for (i, &gi) in edge.nodes.iter().enumerate() {
                for (j, &gj) in edge.nodes.iter().enumerate() {
                    trip.push((gi, gj, sigma * m[i][j]));
                }
            }
        }
    }
    Ok(SparseSymMatrix::from_triplets(mesh.num_nodes(), &trip))
}

fn check_nonnegative(name: &'static str, v: f64, p: Point, t: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::NonFinite { x: p[0], y: p[1], t });
    }
    if v < 0.0 {
        return Err(Error::InvalidParameter {
            name,
            msg: format!("negative value {v} at ({}, {}, t = {t})", p[0], p[1]),
        });
    }
    Ok(())
}

/// `int_Gamma phi_i phi_j` over the observed edges.
pub fn assemble_boundary_mass(mesh: &Mesh) -> Result<SparseSymMatrix> {
    let mut trip = Vec::new();
    for edge in mesh.observed_edges() {
        let m = edge_mass(mesh.edge_length(edge.nodes[0], edge.nodes[1]));
        for (i, &gi) in edge.nodes.iter().enumerate() {
            for (j, &gj) in edge.nodes.iter().enumerate() {
                trip.push((gi, gj, m[i][j]));
            }
        }
    }
    if trip.is_empty() {
        return Err(Error::EmptyBoundarySelection("<mesh tags>".into()));
    }
    Ok(SparseSymMatrix::from_triplets(mesh.num_nodes(), &trip))
}

/// `(fbar, phi_i)` for a P1 field `fbar`.
pub fn assemble_load(mesh: &Mesh, fbar: &[f64]) -> Result<Vec<f64>> {
    if fbar.len() != mesh.num_nodes() {
        return Err(Error::Dimension { expected: mesh.num_nodes(), got: fbar.len() });
    }
    let mut load = vec![0.0; mesh.num_nodes()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let m = element_mass(mesh.signed_area(t));
        for i in 0..3 {
            load[tri[i]] += (0..3).map(|j| m[i][j] * fbar[tri[j]]).sum::<f64>();
        }
    }
    Ok(load)
}

/// `(f, phi_i)` with `f` sampled once per element at its centroid.
pub fn assemble_centroid_load(mesh: &Mesh, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let mut load = vec![0.0; mesh.num_nodes()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let c = centroid(mesh.triangle_points(t));
        let share = f(c[0], c[1]) * mesh.signed_area(t) / 3.0;
        for &v in tri {
            load[v] += share;
        }
    }
    load
}

/// `(g(., t), phi_i)_{L2(dOmega)}` with midpoint sampling of `g`.
pub fn assemble_boundary_load(mesh: &Mesh, g: &dyn SpaceTimeFunction, t: f64) -> Vec<f64> {
    let mut load = vec![0.0; mesh.num_nodes()];
    for edge in mesh.boundary_edges() {
        let [a, b] = edge.nodes;
        let mid = midpoint(mesh.nodes()[a], mesh.nodes()[b]);
        let share = 0.5 * g.value(mid[0], mid[1], t) * mesh.edge_length(a, b);
        load[a] += share;
        load[b] += share;
    }
    load
}

pub fn interpolate_nodal(mesh: &Mesh, field: &dyn SpaceTimeFunction, t: Option<f64>) -> Result<Vec<f64>> {
    let t = t.unwrap_or(0.0);
    mesh.nodes()
        .iter()
        .map(|p| {
            let v = field.value(p[0], p[1], t);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFinite { x: p[0], y: p[1], t })
            }
        })
        .collect()
}

/// Nodal values of the slab means of `field`.
pub fn slab_average(field: &dyn SpaceTimeFunction, grid: TimeGrid, mesh: &Mesh) -> Result<SpaceTimeField> {
    let slabs = (1..=grid.steps)
        .map(|n| {
            let (t0, t1) = (grid.level(n - 1), grid.level(n));
            mesh.nodes()
                .iter()
                .map(|p| {
                    let v = field.slab_mean(p[0], p[1], t0, t1);
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(Error::NonFinite { x: p[0], y: p[1], t: t1 })
                    }
                })
                .collect()
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    SpaceTimeField::from_slabs(grid, slabs)
}

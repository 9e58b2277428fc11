//! Brute-force dense reference computations built only from mesh geometry.

use heatsource::mesh::{Mesh, Point};
use nalgebra::{DMatrix, DVector, Matrix3};

/// Hat-function gradients by inverting the Vandermonde matrix of `1, x, y`.
pub fn hat_gradients(p: [Point; 3]) -> [[f64; 2]; 3] {
    let v = Matrix3::new(1.0, p[0][0], p[0][1], 1.0, p[1][0], p[1][1], 1.0, p[2][0], p[2][1]);
    let c = v.try_inverse().expect("degenerate triangle");
    // column i holds the coefficients of the i-th hat
    [0, 1, 2].map(|i| [c[(1, i)], c[(2, i)]])
}

fn hat_values(p: [Point; 3], q: Point) -> [f64; 3] {
    let v = Matrix3::new(1.0, p[0][0], p[0][1], 1.0, p[1][0], p[1][1], 1.0, p[2][0], p[2][1]);
    let c = v.try_inverse().unwrap();
    [0, 1, 2].map(|i| c[(0, i)] + c[(1, i)] * q[0] + c[(2, i)] * q[1])
}

fn area(p: [Point; 3]) -> f64 {
    0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1])).abs()
}

/// Edge-midpoint rule, exact for quadratics.
pub fn mass(p: [Point; 3]) -> [[f64; 3]; 3] {
    let a = area(p);
    let mids = [0, 1, 2].map(|k| {
        let (i, j) = ((k + 1) % 3, (k + 2) % 3);
        [0.5 * (p[i][0] + p[j][0]), 0.5 * (p[i][1] + p[j][1])]
    });
    let mut m = [[0.0; 3]; 3];
    for q in mids {
        let phi = hat_values(p, q);
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += a / 3.0 * phi[i] * phi[j];
            }
        }
    }
    m
}

pub fn stiffness(p: [Point; 3], d: [[f64; 2]; 2]) -> [[f64; 3]; 3] {
    let g = hat_gradients(p);
    let a = area(p);
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let ag = [d[0][0] * g[j][0] + d[0][1] * g[j][1], d[1][0] * g[j][0] + d[1][1] * g[j][1]];
            k[i][j] = a * (g[i][0] * ag[0] + g[i][1] * ag[1]);
        }
    }
    k
}

/// Simpson's rule for `int_e phi_i phi_j`, exact for quadratics.
pub fn edge_mass(len: f64) -> [[f64; 2]; 2] {
    // phi values at the ends and the midpoint
    let (ends, mid) = ([[1.0, 0.0], [0.0, 1.0]], [0.5, 0.5]);
    let mut m = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            m[i][j] = len / 6.0 * (ends[0][i] * ends[0][j] + 4.0 * mid[i] * mid[j] + ends[1][i] * ends[1][j]);
        }
    }
    m
}

/// Dense global matrices for constant coefficients.
pub struct DenseSystem {
    pub mass: DMatrix<f64>,
    /// Diffusion + reaction + Robin.
    pub operator: DMatrix<f64>,
    pub boundary: DMatrix<f64>,
    /// `int_{boundary} g phi_i`.
    pub flux: DVector<f64>,
    pub initial: DVector<f64>,
}

pub fn dense_system(mesh: &Mesh, d: [[f64; 2]; 2], b: f64, sigma: f64, g: f64, q: f64) -> DenseSystem {
    let n = mesh.num_nodes();
    let mut mass_m = DMatrix::zeros(n, n);
    let mut op = DMatrix::zeros(n, n);
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let p = mesh.triangle_points(t);
        let m = mass(p);
        let k = stiffness(p, d);
        for i in 0..3 {
            for j in 0..3 {
                mass_m[(tri[i], tri[j])] += m[i][j];
                op[(tri[i], tri[j])] += k[i][j] + b * m[i][j];
            }
        }
    }
    let mut boundary = DMatrix::zeros(n, n);
    let mut flux = DVector::zeros(n);
    for e in mesh.boundary_edges() {
        let [a, c] = e.nodes;
        let len = mesh.edge_length(a, c);
        let em = edge_mass(len);
        for (i, &ni) in [a, c].iter().enumerate() {
            flux[ni] += g * len / 2.0;
            for (j, &nj) in [a, c].iter().enumerate() {
                op[(ni, nj)] += sigma * em[i][j];
                if e.observed {
                    boundary[(ni, nj)] += em[i][j];
                }
            }
        }
    }
    DenseSystem { mass: mass_m, operator: op, boundary, flux, initial: DVector::from_element(n, q) }
}

impl DenseSystem {
    pub fn lhs(&self, tau: f64) -> DMatrix<f64> {
        &self.mass / tau + &self.operator * 0.5
    }

    pub fn rhs_matrix(&self, tau: f64) -> DMatrix<f64> {
        &self.mass / tau - &self.operator * 0.5
    }

    /// One Crank-Nicolson step by dense LU.
    pub fn step(&self, tau: f64, y: &DVector<f64>, load: &DVector<f64>) -> DVector<f64> {
        let rhs = self.rhs_matrix(tau) * y + load;
        self.lhs(tau).lu().solve(&rhs).expect("singular step matrix")
    }

    /// Forward trajectory for slab-constant nodal sources.
    pub fn forward(&self, tau: f64, f: &[Vec<f64>]) -> Vec<DVector<f64>> {
        let mut states = vec![self.initial.clone()];
        for slab in f {
            let load = &self.mass * DVector::from_column_slice(slab) + &self.flux;
            let next = self.step(tau, states.last().unwrap(), &load);
            states.push(next);
        }
        states
    }

    /// Minimizer of the discrete functional via its normal equations, with
    /// the space-time source stacked slab by slab.
    pub fn normal_equations_minimizer(
        &self,
        tau: f64,
        steps: usize,
        z: &[Vec<f64>],
        rho: f64,
        f_star: &[Vec<f64>],
    ) -> Vec<Vec<f64>> {
        let n = self.mass.nrows();
        let dim = n * steps;
        let lhs = self.lhs(tau).lu();
        let rhs_m = self.rhs_matrix(tau);
        // columns of the source-to-trace matrix, source unit vectors one at a time
        let mut s = DMatrix::zeros(dim, dim);
        for col in 0..dim {
            let mut u = DVector::zeros(n);
            for k in 0..steps {
                let mut load = DVector::zeros(n);
                if k == col / n {
                    load = self.mass.column(col % n).into_owned();
                }
                u = lhs.solve(&(&rhs_m * &u + load)).unwrap();
                s.view_mut((k * n, col), (n, 1)).copy_from(&u);
            }
        }
        // affine part: zero source
        let zero = vec![vec![0.0; n]; steps];
        let base = self.forward(tau, &zero);
        let mut w = DMatrix::zeros(dim, dim);
        let mut reg = DMatrix::zeros(dim, dim);
        let mut resid = DVector::zeros(dim);
        let mut fs = DVector::zeros(dim);
        for k in 0..steps {
            w.view_mut((k * n, k * n), (n, n)).copy_from(&(&self.boundary * tau));
            reg.view_mut((k * n, k * n), (n, n)).copy_from(&(&self.mass * (tau * rho)));
            for i in 0..n {
                resid[k * n + i] = z[k][i] - base[k + 1][i];
                fs[k * n + i] = f_star[k][i];
            }
        }
        let a = s.transpose() * &w * &s + &reg;
        let rhs = s.transpose() * &w * resid + &reg * fs;
        let sol = a.cholesky().expect("normal equations not SPD").solve(&rhs);
        (0..steps).map(|k| sol.rows(k * n, n).iter().copied().collect()).collect()
    }
}

pub fn to_dense(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

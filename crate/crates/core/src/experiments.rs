//! Benchmark scenarios on `Omega_T = (-1, 1)^2 x (0, 1]`, synthetic noisy
//! data, error norms and convergence tables.
//!
//! Synthetic truth is always computed on the once-refined mesh and time
//! grid (`h/2`, `tau/2`) and restricted to the working discretization, so the
//! inversion never sees data produced by its own forward operator.

use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::assembly::{assemble_centroid_load, slab_average, CoefficientSet, ScalarField, SpaceTimeField, SpaceTimeFunction};
use crate::inverse::{cg_minimize, CgReport, InverseConfig, Tikhonov};
use crate::mesh::{Axis, BoundarySpec, Mesh, Rect};
pub use crate::pde::BoundaryObservation;
use crate::pde::{ParabolicProblem, TimeGrid, Trajectory};
use crate::{Error, Result};

/// The diffusion tensor used by most scenarios.
pub const STANDARD_DIFFUSION: [[f64; 2]; 2] = [[3.0, 1.0], [1.0, 2.0]];

/// Probe points; the nearest mesh node is used.
pub const PROBE_P1: [f64; 2] = [-0.1, -0.5];
pub const PROBE_P2: [f64; 2] = [0.5, 0.6];

/// Time-only source profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeProfile {
    /// `(2t - 1)^2 sin(2t - 1)`
    Smooth,
    /// `0.5 - |0.5 - t|`
    Hat,
    /// `0.5 H(t - 0.5)`
    Step,
}

impl TimeProfile {
    pub fn name(&self) -> &'static str {
        match self {
            TimeProfile::Smooth => "smooth",
            TimeProfile::Hat => "hat",
            TimeProfile::Step => "step",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "smooth" => Some(TimeProfile::Smooth),
            "hat" => Some(TimeProfile::Hat),
            "step" => Some(TimeProfile::Step),
            _ => None,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TimeProfile::Smooth => (2.0 * t - 1.0).powi(2) * (2.0 * t - 1.0).sin(),
            TimeProfile::Hat => 0.5 - (0.5 - t).abs(),
            TimeProfile::Step => {
                if t > 0.5 {
                    0.5
                } else {
                    0.0
                }
            }
        }
    }

    /// Antiderivative for the kinked profiles.
    fn primitive(&self, t: f64) -> Option<f64> {
        match self {
            TimeProfile::Smooth => None,
            TimeProfile::Hat => Some(if t <= 0.5 { 0.5 * t * t } else { t - 0.5 * t * t - 0.25 }),
            TimeProfile::Step => Some(0.5 * (t - 0.5).max(0.0)),
        }
    }
}

impl SpaceTimeFunction for TimeProfile {
    fn value(&self, _x: f64, _y: f64, t: f64) -> f64 {
        self.eval(t)
    }

    fn slab_mean(&self, x: f64, y: f64, t0: f64, t1: f64) -> f64 {
        match (self.primitive(t0), self.primitive(t1)) {
            (Some(a), Some(b)) => (b - a) / (t1 - t0),
            _ => {
                let mid = 0.5 * (t0 + t1);
                let half = 0.5 * (t1 - t0) / 3f64.sqrt();
                0.5 * (self.value(x, y, mid - half) + self.value(x, y, mid + half))
            }
        }
    }
}

/// `0.5` on the open disc of radius `0.5` about the origin, else `0`.
pub fn disc_source(x: f64, y: f64, _t: f64) -> f64 {
    if x * x + y * y < 0.25 {
        0.5
    } else {
        0.0
    }
}

/// Source of the manufactured state `u = t (x^2 - 1)^2 (y^2 - 1)^2` for
/// `A = I`, `b = sigma = 0`.
pub fn manufactured_source(x: f64, y: f64, t: f64) -> f64 {
    let px = (x * x - 1.0).powi(2);
    let py = (y * y - 1.0).powi(2);
    px * py - t * px * (12.0 * y * y - 4.0) - t * (12.0 * x * x - 4.0) * py
}

pub fn manufactured_state(x: f64, y: f64, t: f64) -> f64 {
    t * (x * x - 1.0).powi(2) * (y * y - 1.0).powi(2)
}

/// How the exact source enters the fine-grid forward solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Nodal interpolation of slab means, load `M f`.
    Nodal,
    /// One sample per element at its centroid.
    Centroid,
}

#[derive(Clone)]
pub enum SourceModel {
    Analytic { f: ScalarField, sampling: Sampling },
    /// `f = F(w) + f*` with `F` the solution of the backward problem with
    /// flux `w` on the observed boundary.
    SourceCondition { w: f64, prior: ScalarField },
}

#[derive(Clone)]
pub enum PriorRule {
    /// `f + 0.2 (f - mean(f))`
    Perturbed,
    Exact,
    Constant(f64),
    Function(ScalarField),
}

impl PriorRule {
    pub fn describe(&self) -> String {
        match self {
            PriorRule::Perturbed => "f + 0.2 (f - f_mean)".into(),
            PriorRule::Exact => "exact".into(),
            PriorRule::Constant(c) => format!("constant {c}"),
            PriorRule::Function(_) => "function".into(),
        }
    }
}

/// Parameter coupling `tau = a h`, `rho = b h`, `delta = c h^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Coupling {
    pub tau_factor: f64,
    pub rho_factor: f64,
    pub delta_factor: f64,
}

impl Default for Coupling {
    fn default() -> Self {
        Coupling { tau_factor: 0.25, rho_factor: 0.01, delta_factor: 0.5 }
    }
}

#[derive(Clone)]
pub struct Scenario {
    pub name: String,
    pub coeffs: CoefficientSet,
    pub source: SourceModel,
    pub prior: PriorRule,
    pub observation: BoundarySpec,
    pub coupling: Coupling,
    pub bounds: Rect,
    pub final_time: f64,
    /// Nominal mesh size of level 1; level `l` uses `base_h / 2^(l-1)`.
    pub base_h: f64,
    pub seed: u64,
    pub tau_a: f64,
    pub tau_r: f64,
    pub k_max: usize,
}

impl Scenario {
    pub const NAMES: [&'static str; 4] = ["time_dependent", "space_dependent", "general", "source_condition"];

    fn base(name: &str, coeffs: CoefficientSet, source: SourceModel, observation: BoundarySpec) -> Self {
        Scenario {
            name: name.into(),
            coeffs,
            source,
            prior: PriorRule::Perturbed,
            observation,
            coupling: Coupling::default(),
            bounds: Rect::new(-1.0, 1.0, -1.0, 1.0),
            final_time: 1.0,
            base_h: 0.8,
            seed: 1,
            tau_a: InverseConfig::DEFAULT_TAU_A,
            tau_r: InverseConfig::DEFAULT_TAU_R,
            k_max: InverseConfig::DEFAULT_K_MAX,
        }
    }

    /// Time-only source, data on the bottom side `y = -1`.
    pub fn time_dependent(profile: TimeProfile) -> Self {
        let coeffs = CoefficientSet::constant(STANDARD_DIFFUSION, 1.0, 1.0, 0.4, 0.4);
        let mut s = Self::base(
            "time_dependent",
            coeffs,
            SourceModel::Analytic { f: Arc::new(profile), sampling: Sampling::Nodal },
            BoundarySpec::line(Axis::Y, -1.0),
        );
        s.name = format!("time_dependent/{}", profile.name());
        s
    }

    /// Disc indicator constant in time, data on the whole boundary.
    pub fn space_dependent() -> Self {
        let coeffs = CoefficientSet::constant(STANDARD_DIFFUSION, 1.0, 1.0, 0.4, 0.4);
        Self::base(
            "space_dependent",
            coeffs,
            SourceModel::Analytic { f: Arc::new(disc_source), sampling: Sampling::Centroid },
            BoundarySpec::All,
        )
    }

    /// Manufactured smooth source with `A = I`, `b = sigma = g = q = 0`.
    pub fn general() -> Self {
        let coeffs = CoefficientSet::constant([[1.0, 0.0], [0.0, 1.0]], 0.0, 0.0, 0.0, 0.0);
        Self::base(
            "general",
            coeffs,
            SourceModel::Analytic { f: Arc::new(manufactured_source), sampling: Sampling::Nodal },
            BoundarySpec::All,
        )
    }

    /// Source `F(0.2) + (x^2 + y) t` satisfying the source condition.
    pub fn source_condition() -> Self {
        let coeffs = CoefficientSet::constant(STANDARD_DIFFUSION, 1.0, 1.0, 0.4, 0.4);
        let prior: ScalarField = Arc::new(|x: f64, y: f64, t: f64| (x * x + y) * t);
        let mut s = Self::base(
            "source_condition",
            coeffs,
            SourceModel::SourceCondition { w: 0.2, prior: prior.clone() },
            BoundarySpec::All,
        );
        s.prior = PriorRule::Function(prior);
        s
    }

    /// Built-in scenario by name; `time_dependent` accepts a `/profile`
    /// suffix and defaults to the smooth profile.
    pub fn by_name(name: &str) -> Option<Self> {
        let (head, variant) = match name.split_once('/') {
            Some((h, v)) => (h, Some(v)),
            None => (name, None),
        };
        match (head, variant) {
            ("time_dependent", v) => Some(Self::time_dependent(TimeProfile::from_name(v.unwrap_or("smooth"))?)),
            ("space_dependent", None) => Some(Self::space_dependent()),
            ("general", None) => Some(Self::general()),
            ("source_condition", None) => Some(Self::source_condition()),
            _ => None,
        }
    }

    pub fn with_prior(mut self, prior: PriorRule) -> Self {
        self.prior = prior;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_coupling(mut self, coupling: Coupling) -> Self {
        self.coupling = coupling;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.coupling;
        for (name, v) in [("tau_factor", c.tau_factor), ("rho_factor", c.rho_factor), ("base_h", self.base_h)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter { name, msg: format!("{v} must be positive") });
            }
        }
        if !(c.delta_factor >= 0.0) {
            return Err(Error::InvalidParameter { name: "delta_factor", msg: format!("{} is negative", c.delta_factor) });
        }
        if let SourceModel::Analytic { f, .. } = &self.source {
            let v = f.value(0.0, 0.0, 0.5 * self.final_time);
            if !v.is_finite() {
                return Err(Error::NonFinite { x: 0.0, y: 0.0, t: 0.5 * self.final_time });
            }
        }
        Ok(())
    }

    /// Discretization for refinement level `level >= 1`.
    pub fn level_params(&self, level: usize) -> Result<LevelParams> {
        if level == 0 {
            return Err(Error::InvalidParameter { name: "level", msg: "levels start at 1".into() });
        }
        let h = self.base_h / f64::powi(2.0, level as i32 - 1);
        let n_base = cells_for(self.bounds, self.base_h);
        self.params(level, h, n_base << (level - 1))
    }

    /// Discretization for a single nominal mesh size.
    pub fn params_for_h(&self, h: f64) -> Result<LevelParams> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidParameter { name: "h", msg: format!("{h} must be positive") });
        }
        self.params(0, h, cells_for(self.bounds, h))
    }

    fn params(&self, level: usize, h: f64, cells: usize) -> Result<LevelParams> {
        let c = &self.coupling;
        let steps = ((self.final_time / (c.tau_factor * h)).round() as usize).max(1);
        let grid = TimeGrid::new(self.final_time, steps)?;
        let diag = (self.bounds.x1 - self.bounds.x0).hypot(self.bounds.y1 - self.bounds.y0);
        Ok(LevelParams {
            level,
            h,
            mesh_h: diag / cells as f64,
            cells,
            steps,
            tau: grid.tau(),
            rho: c.rho_factor * h,
            delta: c.delta_factor * h * h,
        })
    }
}

fn cells_for(bounds: Rect, h: f64) -> usize {
    let diag = (bounds.x1 - bounds.x0).hypot(bounds.y1 - bounds.y0);
    ((diag / h) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelParams {
    /// 0 for single-h runs.
    pub level: usize,
    /// Nominal mesh size driving the couplings.
    pub h: f64,
    /// Longest edge of the actual mesh.
    pub mesh_h: f64,
    pub cells: usize,
    pub steps: usize,
    pub tau: f64,
    pub rho: f64,
    pub delta: f64,
}

/// Boundary trace of `state` with uniform noise rescaled to
/// `|z - trace|_{L2(Sigma)} = delta`.
pub fn synthesize_observation(
    pde: &ParabolicProblem,
    state: &Trajectory,
    delta: f64,
    seed: u64,
) -> Result<BoundaryObservation> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameter { name: "delta", msg: format!("{delta} must be nonnegative") });
    }
    let observed = pde.mesh().observed_nodes();
    let n = pde.num_nodes();
    let steps = pde.grid().steps;
    let trace: Vec<Vec<f64>> = (1..=steps)
        .map(|k| {
            let mut v = vec![0.0; n];
            for &i in &observed {
                v[i] = state.states[k][i];
            }
            v
        })
        .collect();
    if delta == 0.0 {
        return Ok(BoundaryObservation { values: trace, delta, seed });
    }

    let b = pde.boundary_mass()?;
    let tau = pde.grid().tau();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (noise, norm) = loop {
        let noise: Vec<Vec<f64>> = (0..steps)
            .map(|_| {
                let mut v = vec![0.0; n];
                for &i in &observed {
                    v[i] = rng.gen::<f64>();
                }
                v
            })
            .collect();
        let norm = noise.iter().map(|r| tau * b.inner(r, r)).sum::<f64>().sqrt();
        if norm > 0.0 {
            break (noise, norm);
        }
    };
    let scale = delta / norm;
    let values = trace
        .into_iter()
        .zip(noise)
        .map(|(t, r)| t.iter().zip(&r).map(|(a, b)| a + scale * b).collect())
        .collect();
    Ok(BoundaryObservation { values, delta, seed })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorNorms {
    pub state_l2: f64,
    pub state_sigma: f64,
    pub source_l2: f64,
}

/// `|u - u_rec|` in `L2(Omega_T)` and `L2(Sigma)` over levels `1..=M`, and
/// `|f - f_rec|` in `L2(Omega_T)`.
pub fn error_norms(
    pde: &ParabolicProblem,
    f_rec: &SpaceTimeField,
    f_exact: &SpaceTimeField,
    u_rec: &Trajectory,
    u_exact: &Trajectory,
) -> Result<ErrorNorms> {
    let mass = pde.mass();
    let tau = pde.grid().tau();
    let mut diff = u_exact.clone();
    diff.add_scaled(-1.0, u_rec);
    let state_l2 = (1..=pde.grid().steps).map(|n| tau * mass.inner(&diff.states[n], &diff.states[n])).sum::<f64>();
    let state_sigma = pde.boundary_inner(&diff, &diff)?;
    let source_l2 = f_exact.sub(f_rec).norm(mass);
    Ok(ErrorNorms { state_l2: state_l2.max(0.0).sqrt(), state_sigma: state_sigma.max(0.0).sqrt(), source_l2 })
}

/// `EOC_l = log2(e_l / e_{l+1})` for errors on meshes halved between
/// entries, and their mean.
pub fn compute_eoc(errors: &[f64]) -> Result<(Vec<f64>, f64)> {
    if errors.len() < 2 || errors.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
        return Err(Error::BadErrorSequence(errors.to_vec()));
    }
    let eoc: Vec<f64> = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let mean = eoc.iter().sum::<f64>() / eoc.len() as f64;
    Ok((eoc, mean))
}

/// `(slab midpoint, value)` at a node of a slab-constant field.
pub fn probe_time_series(field: &SpaceTimeField, node: usize) -> Result<Vec<(f64, f64)>> {
    if node >= field.num_nodes() {
        return Err(Error::Dimension { expected: field.num_nodes(), got: node });
    }
    let g = field.grid;
    Ok(field.slabs.iter().enumerate().map(|(k, s)| (0.5 * (g.level(k) + g.level(k + 1)), s[node])).collect())
}

/// `(t^n, value)` at a node of a trajectory.
pub fn probe_trajectory(traj: &Trajectory, node: usize) -> Result<Vec<(f64, f64)>> {
    if node >= traj.num_nodes() {
        return Err(Error::Dimension { expected: traj.num_nodes(), got: node });
    }
    Ok(traj.states.iter().enumerate().map(|(n, s)| (traj.grid.level(n), s[node])).collect())
}

/// Values along the mesh line through `node` that runs parallel to `axis`,
/// sorted by the varying coordinate.
pub fn probe_line(mesh: &Mesh, values: &[f64], node: usize, axis: Axis) -> Result<Vec<(f64, f64)>> {
    if node >= mesh.num_nodes() || values.len() != mesh.num_nodes() {
        return Err(Error::Dimension { expected: mesh.num_nodes(), got: node.max(values.len()) });
    }
    let (vary, fixed) = match axis {
        Axis::X => (0, 1),
        Axis::Y => (1, 0),
    };
    let level = mesh.nodes()[node][fixed];
    let tol = 1e-12 * (1.0 + level.abs());
    let mut line: Vec<(f64, f64)> = mesh
        .nodes()
        .iter()
        .zip(values)
        .filter(|(p, _)| (p[fixed] - level).abs() <= tol)
        .map(|(p, &v)| (p[vary], v))
        .collect();
    if line.len() < 2 {
        return Err(Error::OffMeshLine { node, axis: if vary == 0 { 'x' } else { 'y' } });
    }
    line.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(line)
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeRow {
    pub probe: &'static str,
    /// `t`, `x` or `y`.
    pub kind: char,
    pub coordinate: f64,
    pub exact: f64,
    pub recovered: f64,
}

/// Time series at P1 and P2 and spatial slices through P1 at `t = T/2`.
fn collect_probes(mesh: &Mesh, f_exact: &SpaceTimeField, f_rec: &SpaceTimeField) -> Result<Vec<ProbeRow>> {
    let mut rows = Vec::new();
    for (name, p) in [("P1", PROBE_P1), ("P2", PROBE_P2)] {
        let node = mesh.closest_node(p);
        let ex = probe_time_series(f_exact, node)?;
        let re = probe_time_series(f_rec, node)?;
        for ((t, e), (_, r)) in ex.into_iter().zip(re) {
            rows.push(ProbeRow { probe: name, kind: 't', coordinate: t, exact: e, recovered: r });
        }
    }
    let node = mesh.closest_node(PROBE_P1);
    let k = f_exact.grid.slab_of(0.5 * f_exact.grid.final_time) - 1;
    for (axis, kind) in [(Axis::X, 'x'), (Axis::Y, 'y')] {
        let ex = probe_line(mesh, &f_exact.slabs[k], node, axis)?;
        let re = probe_line(mesh, &f_rec.slabs[k], node, axis)?;
        for ((c, e), (_, r)) in ex.into_iter().zip(re) {
            rows.push(ProbeRow { probe: "P1", kind, coordinate: c, exact: e, recovered: r });
        }
    }
    Ok(rows)
}

pub fn write_probes_csv<W: Write>(rows: &[ProbeRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["probe", "kind", "coordinate", "exact", "recovered"])?;
    for r in rows {
        w.write_record([
            r.probe.to_string(),
            r.kind.to_string(),
            format!("{:.16e}", r.coordinate),
            format!("{:.16e}", r.exact),
            format!("{:.16e}", r.recovered),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Everything computed for one discretization level.
pub struct LevelOutcome {
    pub params: LevelParams,
    pub errors: ErrorNorms,
    pub report: CgReport,
    pub f_exact: SpaceTimeField,
    pub u_exact: Trajectory,
    pub data: BoundaryObservation,
    pub f_star: SpaceTimeField,
    pub mesh: Arc<Mesh>,
    pub probes: Vec<ProbeRow>,
    pub seed: u64,
    /// `|f_exact|_{L2(Omega_T)}`.
    pub source_norm: f64,
    pub elapsed: Duration,
}

/// Exact source and state on the working discretization; the state comes
/// from the fine grid.
pub struct SyntheticTruth {
    pub f_exact: SpaceTimeField,
    pub u_exact: Trajectory,
}

pub fn synthesize_truth(scenario: &Scenario, mesh: &Mesh, grid: TimeGrid) -> Result<SyntheticTruth> {
    let coarse_nodes = mesh.num_nodes();
    let fine_mesh = Arc::new(mesh.refine());
    let fine_grid = grid.refined();
    let fine = ParabolicProblem::new(fine_mesh.clone(), fine_grid, &scenario.coeffs)?;

    let (fine_state, f_exact) = match &scenario.source {
        SourceModel::Analytic { f, sampling } => {
            let u = match sampling {
                Sampling::Nodal => fine.solve_forward(&slab_average(f.as_ref(), fine_grid, &fine_mesh)?)?,
                Sampling::Centroid => {
                    let loads: Vec<Vec<f64>> = (1..=fine_grid.steps)
                        .map(|n| {
                            let (t0, t1) = (fine_grid.level(n - 1), fine_grid.level(n));
                            assemble_centroid_load(&fine_mesh, |x, y| f.slab_mean(x, y, t0, t1))
                        })
                        .collect();
                    fine.solve_forward_with_loads(&loads)?
                }
            };
            (u, slab_average(f.as_ref(), grid, mesh)?)
        }
        SourceModel::SourceCondition { w, prior } => {
            let mut wf = SpaceTimeField::zeros(fine_grid, fine_mesh.num_nodes());
            for &i in &fine_mesh.observed_nodes() {
                for s in &mut wf.slabs {
                    s[i] = *w;
                }
            }
            let big_f = fine.solve_source_condition(&wf)?;
            let mut f_fine = slab_average(prior.as_ref(), fine_grid, &fine_mesh)?;
            for (slab, p) in f_fine.slabs.iter_mut().zip(&big_f.states) {
                for (v, pv) in slab.iter_mut().zip(p) {
                    *v += pv;
                }
            }
            let u = fine.solve_forward(&f_fine)?;
            let coarse = (0..grid.steps)
                .map(|k| {
                    let (a, b) = (&f_fine.slabs[2 * k], &f_fine.slabs[2 * k + 1]);
                    (0..coarse_nodes).map(|i| 0.5 * (a[i] + b[i])).collect()
                })
                .collect();
            (u, SpaceTimeField::from_slabs(grid, coarse)?)
        }
    };

    // parent nodes keep their indices under refinement, fine level 2n is t^n
    let u_exact = Trajectory {
        grid,
        states: (0..=grid.steps).map(|n| fine_state.states[2 * n][..coarse_nodes].to_vec()).collect(),
    };
    Ok(SyntheticTruth { f_exact, u_exact })
}

pub fn prior_field(rule: &PriorRule, f_exact: &SpaceTimeField, mesh: &Mesh, mass: &crate::SparseSymMatrix) -> Result<SpaceTimeField> {
    Ok(match rule {
        PriorRule::Perturbed => {
            let mean = f_exact.mean(mass);
            f_exact.map(|v| v + 0.2 * (v - mean))
        }
        PriorRule::Exact => f_exact.clone(),
        PriorRule::Constant(c) => SpaceTimeField::constant(f_exact.grid, f_exact.num_nodes(), *c),
        PriorRule::Function(g) => slab_average(g.as_ref(), f_exact.grid, mesh)?,
    })
}

/// Full pipeline for one discretization.
pub fn run_level(scenario: &Scenario, params: LevelParams) -> Result<LevelOutcome> {
    let start = Instant::now();
    scenario.validate()?;
    let mesh = Arc::new(Mesh::rectangle(scenario.bounds, params.cells)?.tag_boundary(&scenario.observation)?);
    let grid = TimeGrid::new(scenario.final_time, params.steps)?;
    let SyntheticTruth { f_exact, u_exact } = synthesize_truth(scenario, &mesh, grid)?;

    let pde = ParabolicProblem::new(mesh.clone(), grid, &scenario.coeffs)?;
    let seed = scenario.seed.wrapping_add(params.level as u64);
    let data = synthesize_observation(&pde, &u_exact, params.delta, seed)?;
    let f_star = prior_field(&scenario.prior, &f_exact, &mesh, pde.mass())?;

    let mut config = InverseConfig::new(params.rho, f_star.clone());
    config.tau_a = scenario.tau_a;
    config.tau_r = scenario.tau_r;
    config.k_max = scenario.k_max;
    let report = cg_minimize(&Tikhonov::from_config(&pde, &data, &config), &config)?;

    let errors = error_norms(&pde, &report.minimizer, &f_exact, &report.state, &u_exact)?;
    let probes = collect_probes(&mesh, &f_exact, &report.minimizer)?;
    let source_norm = f_exact.norm(pde.mass());
    Ok(LevelOutcome { params, errors, report, f_exact, u_exact, data, f_star, mesh, probes, seed, source_norm, elapsed: start.elapsed() })
}

#[derive(Debug, Clone, Serialize)]
pub struct EocRow {
    pub level: usize,
    pub h: f64,
    pub delta: f64,
    pub rho: f64,
    /// `None` when the level failed.
    pub errors: Option<ErrorNorms>,
    pub iterations: Option<usize>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EocTable {
    pub rows: Vec<EocRow>,
    /// Per row from the second on: EOC of state `L2(Omega_T)`, state
    /// `L2(Sigma)`, source `L2(Omega_T)`.
    pub eoc: Vec<[Option<f64>; 3]>,
    pub means: [Option<f64>; 3],
}

impl EocTable {
    pub fn from_rows(rows: Vec<EocRow>) -> Self {
        let cols = |e: &ErrorNorms| [e.state_l2, e.state_sigma, e.source_l2];
        let mut eoc = Vec::new();
        let mut sums = [0.0; 3];
        let mut counts = [0usize; 3];
        for w in rows.windows(2) {
            let mut entry = [None; 3];
            if let (Some(a), Some(b)) = (&w[0].errors, &w[1].errors) {
                let (a, b) = (cols(a), cols(b));
                for c in 0..3 {
                    if let Ok((v, _)) = compute_eoc(&[a[c], b[c]]) {
                        entry[c] = Some(v[0]);
                        sums[c] += v[0];
                        counts[c] += 1;
                    }
                }
            }
            eoc.push(entry);
        }
        let means = [0, 1, 2].map(|c| (counts[c] > 0).then(|| sums[c] / counts[c] as f64));
        EocTable { rows, eoc, means }
    }

    /// `level,h,delta,rho,state_l2,state_sigma,source_l2,iterations,status`.
    pub fn write_table_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["level", "h", "delta", "rho", "state_l2", "state_sigma", "source_l2", "iterations", "status"])?;
        for r in &self.rows {
            let e = |f: fn(&ErrorNorms) -> f64| r.errors.as_ref().map(|x| format!("{:.16e}", f(x))).unwrap_or_default();
            w.write_record([
                r.level.to_string(),
                format!("{:.16e}", r.h),
                format!("{:.16e}", r.delta),
                format!("{:.16e}", r.rho),
                e(|x| x.state_l2),
                e(|x| x.state_sigma),
                e(|x| x.source_l2),
                r.iterations.map(|k| k.to_string()).unwrap_or_default(),
                r.failure.clone().unwrap_or_else(|| "ok".into()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `level,eoc_state_l2,eoc_state_sigma,eoc_source_l2` with a final
    /// `mean` row.
    pub fn write_eoc_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["level", "eoc_state_l2", "eoc_state_sigma", "eoc_source_l2"])?;
        let fmt = |v: &Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
        for (row, e) in self.rows.iter().skip(1).zip(&self.eoc) {
            w.write_record([row.level.to_string(), fmt(&e[0]), fmt(&e[1]), fmt(&e[2])])?;
        }
        w.write_record(["mean".to_string(), fmt(&self.means[0]), fmt(&self.means[1]), fmt(&self.means[2])])?;
        w.flush()?;
        Ok(())
    }
}

pub struct ScenarioRun {
    pub table: EocTable,
    /// Same order as the requested levels.
    pub outcomes: Vec<Result<LevelOutcome>>,
}

/// Runs the requested refinement levels, `jobs` of them concurrently.
/// Failed levels stay in the table, marked, without errors.
pub fn run_scenario(scenario: &Scenario, levels: &[usize], jobs: usize) -> Result<ScenarioRun> {
    scenario.validate()?;
    let params = levels.iter().map(|&l| scenario.level_params(l)).collect::<Result<Vec<_>>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter { name: "jobs", msg: e.to_string() })?;
    let outcomes: Vec<Result<LevelOutcome>> =
        pool.install(|| params.par_iter().map(|&p| run_level(scenario, p)).collect());
    let rows = params
        .iter()
        .zip(&outcomes)
        .map(|(p, o)| EocRow {
            level: p.level,
            h: p.h,
            delta: p.delta,
            rho: p.rho,
            errors: o.as_ref().ok().map(|o| o.errors),
            iterations: o.as_ref().ok().map(|o| o.report.iterations),
            failure: o.as_ref().err().map(|e| e.to_string()),
        })
        .collect();
    Ok(ScenarioRun { table: EocTable::from_rows(rows), outcomes })
}

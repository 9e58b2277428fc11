//! Tikhonov-regularized output least squares and its CG minimizer.
//!
//! All inner products on sources are the space-time `L2` pairing
//! `sum_n tau a^n^T M b^n`, so the adjoint-based gradient is the Riesz
//! representative of the derivative of `J`.

use std::io::Write;

use serde::Serialize;

use crate::assembly::SpaceTimeField;
use crate::pde::{BoundaryObservation, ParabolicProblem, Trajectory};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct InverseConfig {
    pub rho: f64,
    pub f_star: SpaceTimeField,
    pub f0: SpaceTimeField,
    pub tau_a: f64,
    pub tau_r: f64,
    pub k_max: usize,
}

impl InverseConfig {
    pub const DEFAULT_TAU_A: f64 = 1e-10;
    pub const DEFAULT_TAU_R: f64 = 1e-6;
    pub const DEFAULT_K_MAX: usize = 500;

    /// Default tolerances and `f0 = 0`.
    pub fn new(rho: f64, f_star: SpaceTimeField) -> Self {
        let f0 = SpaceTimeField::zeros(f_star.grid, f_star.num_nodes());
        InverseConfig {
            rho,
            f_star,
            f0,
            tau_a: Self::DEFAULT_TAU_A,
            tau_r: Self::DEFAULT_TAU_R,
            k_max: Self::DEFAULT_K_MAX,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidParameter { name: "rho", msg: format!("{} must be positive", self.rho) });
        }
        if !(self.tau_a >= 0.0 && self.tau_r >= 0.0) || (self.tau_a == 0.0 && self.tau_r == 0.0) {
            return Err(Error::InvalidParameter {
                name: "tau_a",
                msg: format!("tolerances ({}, {}) must be nonnegative and not both zero", self.tau_a, self.tau_r),
            });
        }
        if self.k_max == 0 {
            return Err(Error::InvalidParameter { name: "k_max", msg: "must be at least 1".into() });
        }
        if self.f0.grid != self.f_star.grid || self.f0.num_nodes() != self.f_star.num_nodes() {
            return Err(Error::Dimension { expected: self.f_star.num_nodes(), got: self.f0.num_nodes() });
        }
        Ok(())
    }
}

/// The discrete functional `J` for fixed data, prior and weight.
pub struct Tikhonov<'a> {
    pde: &'a ParabolicProblem,
    data: &'a BoundaryObservation,
    rho: f64,
    f_star: &'a SpaceTimeField,
}

impl<'a> Tikhonov<'a> {
    pub fn new(pde: &'a ParabolicProblem, data: &'a BoundaryObservation, rho: f64, f_star: &'a SpaceTimeField) -> Self {
        Tikhonov { pde, data, rho, f_star }
    }

    pub fn from_config(pde: &'a ParabolicProblem, data: &'a BoundaryObservation, config: &'a InverseConfig) -> Self {
        Self::new(pde, data, config.rho, &config.f_star)
    }

    pub fn pde(&self) -> &ParabolicProblem {
        self.pde
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn cost(&self, f: &SpaceTimeField) -> Result<f64> {
        let state = self.pde.solve_forward(f)?;
        self.cost_at(&state, f)
    }

    /// `J(f)` given the already computed state `U(f)`.
    pub fn cost_at(&self, state: &Trajectory, f: &SpaceTimeField) -> Result<f64> {
        let r = self.pde.misfit(state, self.data);
        let misfit = self.pde.boundary_inner(&r, &r)?;
        let d = f.sub(self.f_star);
        Ok(misfit + self.rho * d.inner(self.pde.mass(), &d))
    }

    pub fn gradient(&self, f: &SpaceTimeField) -> Result<SpaceTimeField> {
        let state = self.pde.solve_forward(f)?;
        self.gradient_at(&state, f)
    }

    /// `grad J = 2 G_J + 2 rho (f - f*)` where slab `n` of `G_J` is `P^{n-1}`.
    pub fn gradient_at(&self, state: &Trajectory, f: &SpaceTimeField) -> Result<SpaceTimeField> {
        let adjoint = self.pde.solve_adjoint(state, self.data)?;
        let slabs = f
            .slabs
            .iter()
            .zip(&self.f_star.slabs)
            .zip(&adjoint.states)
            .map(|((fs, ps), p)| {
                fs.iter().zip(ps).zip(p).map(|((fv, sv), pv)| 2.0 * pv + 2.0 * self.rho * (fv - sv)).collect()
            })
            .collect();
        Ok(SpaceTimeField { grid: f.grid, slabs })
    }

    /// Exact minimizer of `alpha -> J(f + alpha d)`.
    pub fn step_size(&self, f: &SpaceTimeField, d: &SpaceTimeField) -> Result<f64> {
        let state = self.pde.solve_forward(f)?;
        let sens = self.pde.solve_sensitivity(d)?;
        self.step_size_at(&state, &sens, f, d)
    }

    fn step_size_at(&self, state: &Trajectory, sens: &Trajectory, f: &SpaceTimeField, d: &SpaceTimeField) -> Result<f64> {
        let mass = self.pde.mass();
        let dd = d.inner(mass, d);
        if dd == 0.0 {
            return Err(Error::ZeroDirection);
        }
        let r = self.pde.misfit(state, self.data);
        let num = self.pde.boundary_inner(sens, &r)? + self.rho * d.inner(mass, &f.sub(self.f_star));
        let den = self.pde.boundary_inner(sens, sens)? + self.rho * dd;
        Ok(-num / den)
    }

    /// `|f - f* + G_J(f) / rho|`, the defect in the fixed-point form of the
    /// first-order condition.
    pub fn optimality_residual(&self, f: &SpaceTimeField) -> Result<f64> {
        let state = self.pde.solve_forward(f)?;
        let adjoint = self.pde.solve_adjoint(&state, self.data)?;
        let mut r = f.sub(self.f_star);
        for (slab, p) in r.slabs.iter_mut().zip(&adjoint.states) {
            for (v, pv) in slab.iter_mut().zip(p) {
                *v += pv / self.rho;
            }
        }
        Ok(r.norm(self.pde.mass()))
    }
}

/// Polak-Ribiere coefficient `(g, g - g_prev) / |g_prev|^2`.
pub fn pr_beta(g: &SpaceTimeField, g_prev: &SpaceTimeField, mass: &crate::SparseSymMatrix) -> Result<f64> {
    let denom = g_prev.inner(mass, g_prev);
    if denom == 0.0 {
        return Err(Error::ZeroGradient);
    }
    Ok(g.inner(mass, &g.sub(g_prev)) / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone, Serialize)]
pub struct CgIterate {
    pub k: usize,
    pub cost: f64,
    pub grad_norm: f64,
    /// Step taken from this iterate; `None` on the last one.
    pub alpha: Option<f64>,
    /// Coefficient used to build the direction at this iterate.
    pub beta: f64,
    /// Polak-Ribiere went negative and was reset to zero.
    pub restarted: bool,
}

#[derive(Debug, Clone)]
pub struct CgReport {
    pub minimizer: SpaceTimeField,
    pub state: Trajectory,
    pub iterations: usize,
    pub history: Vec<CgIterate>,
    pub stop: StopReason,
    /// `tau_a + tau_r |grad J(f0)|`.
    pub threshold: f64,
}

impl CgReport {
    pub fn final_grad_norm(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |h| h.grad_norm)
    }

    pub fn restarts(&self) -> usize {
        self.history.iter().filter(|h| h.restarted).count()
    }

    /// CSV `k,J,grad_norm,alpha,beta`; `alpha` is empty on the last row.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "J", "grad_norm", "alpha", "beta"])?;
        for h in &self.history {
            w.write_record([
                h.k.to_string(),
                format!("{:.16e}", h.cost),
                format!("{:.16e}", h.grad_norm),
                h.alpha.map(|a| format!("{a:.16e}")).unwrap_or_default(),
                format!("{:.16e}", h.beta),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Nonlinear CG with Polak-Ribiere directions and exact line search.
///
/// The state is updated incrementally, `U(f + a d) = U(f) + a U_0(d)`, so each
/// iteration costs one sensitivity and one adjoint solve.
pub fn cg_minimize(problem: &Tikhonov<'_>, config: &InverseConfig) -> Result<CgReport> {
    config.validate()?;
    let pde = problem.pde;
    let mass = pde.mass();

    let mut f = config.f0.clone();
    let mut state = pde.solve_forward(&f)?;
    let mut grad = problem.gradient_at(&state, &f)?;
    let mut grad_norm = grad.norm(mass);
    let threshold = config.tau_a + config.tau_r * grad_norm;

    let mut history = vec![CgIterate {
        k: 0,
        cost: problem.cost_at(&state, &f)?,
        grad_norm,
        alpha: None,
        beta: 0.0,
        restarted: false,
    }];

    let mut k = 0;
    let stop = if grad_norm <= threshold {
        StopReason::Converged
    } else {
        let mut dir = grad.scaled(-1.0);
        loop {
            let sens = pde.solve_sensitivity(&dir)?;
            let alpha = problem.step_size_at(&state, &sens, &f, &dir)?;
            f.add_scaled(alpha, &dir);
            state.add_scaled(alpha, &sens);
            history[k].alpha = Some(alpha);
            k += 1;

            let mut next = problem.gradient_at(&state, &f)?;
            grad_norm = next.norm(mass);
            if grad_norm <= threshold {
                // confirm against a fresh solve before accepting
                state = pde.solve_forward(&f)?;
                next = problem.gradient_at(&state, &f)?;
                grad_norm = next.norm(mass);
            }
            let mut entry =
                CgIterate { k, cost: problem.cost_at(&state, &f)?, grad_norm, alpha: None, beta: 0.0, restarted: false };
            if grad_norm <= threshold {
                history.push(entry);
                break StopReason::Converged;
            }
            if k >= config.k_max {
                history.push(entry);
                break StopReason::MaxIterations;
            }
            let beta = pr_beta(&next, &grad, mass)?;
            if beta < 0.0 {
                entry.restarted = true;
            }
            entry.beta = beta.max(0.0);
            dir = dir.scaled(entry.beta);
            dir.add_scaled(-1.0, &next);
            grad = next;
            history.push(entry);
        }
    };

    // fresh solve so the reported state carries no accumulated update error
    if stop == StopReason::MaxIterations {
        state = pde.solve_forward(&f)?;
    }
    Ok(CgReport { minimizer: f, state, iterations: k, history, stop, threshold })
}

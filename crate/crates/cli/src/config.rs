//! Experiment configuration files (TOML).
//!
//! A config either names a built-in scenario (`scenario = "general"`) or
//! spells out the problem in a `[problem]` table with expression strings.
//! Numerics live under `[numerics]`; anything omitted takes the default
//! couplings `tau = 0.25 h`, `rho = 0.01 h`, `delta = 0.5 h^2`.

use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use heatsource::assembly::{CoefficientSet, ScalarField};
use heatsource::experiments::{Coupling, PriorRule, Sampling, Scenario, SourceModel};
use heatsource::inverse::InverseConfig;
use heatsource::mesh::{BoundarySpec, Rect};
use serde::{Deserialize, Serialize};

use crate::expr::Expr;

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    /// Malformed TOML; the message carries line and column.
    Syntax(String),
    /// Well-formed but invalid; `key` is the dotted path.
    Invalid { key: String, msg: String },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Syntax(m) => write!(f, "config syntax error: {m}"),
            ConfigError::Invalid { key, msg } => write!(f, "invalid config value `{key}`: {msg}"),
        }
    }
}

impl std::error::Error for ConfigError {}

fn invalid(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.into(), msg: msg.into() }
}

/// A number or an expression string.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
enum RawExpr {
    Number(f64),
    Text(String),
}

impl RawExpr {
    fn text(&self) -> String {
        match self {
            RawExpr::Number(v) => format!("{v:?}"),
            RawExpr::Text(s) => s.clone(),
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scenario: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    output: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    numerics: Option<RawNumerics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    problem: Option<RawProblem>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNumerics {
    #[serde(skip_serializing_if = "Option::is_none")]
    levels: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    base_h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tau_factor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rho_factor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta_factor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tau_a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tau_r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    k_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    jobs: Option<usize>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    #[serde(skip_serializing_if = "Option::is_none")]
    bounds: Option<[f64; 4]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    diffusion: Option<[[RawExpr; 2]; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ellipticity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reaction: Option<RawExpr>,
    #[serde(skip_serializing_if = "Option::is_none")]
    robin: Option<RawExpr>,
    #[serde(skip_serializing_if = "Option::is_none")]
    flux: Option<RawExpr>,
    #[serde(skip_serializing_if = "Option::is_none")]
    initial: Option<RawExpr>,
    #[serde(skip_serializing_if = "Option::is_none")]
    source: Option<RawExpr>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sampling: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    source_condition: Option<RawSourceCondition>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prior: Option<RawExpr>,
    #[serde(skip_serializing_if = "Option::is_none")]
    observation: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSourceCondition {
    w: f64,
    base: RawExpr,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceSpec {
    Expression { expr: Expr, sampling: Sampling },
    /// `F(w) + base`.
    Condition { w: f64, base: Expr },
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum PriorSpec {
    Perturbed,
    Exact,
    Expression(Expr),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub bounds: [f64; 4],
    pub final_time: f64,
    pub diffusion: [[Expr; 2]; 2],
    pub ellipticity: f64,
    pub reaction: Expr,
    pub robin: Expr,
    pub flux: Expr,
    pub initial: Expr,
    pub source: SourceSpec,
    pub prior: PriorSpec,
    pub observation: BoundarySpec,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSource {
    Builtin(String),
    Custom(Box<ProblemSpec>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NumericSpec {
    /// Refinement levels; ignored when `h` is set.
    pub levels: Vec<usize>,
    /// Single nominal mesh size.
    pub h: Option<f64>,
    pub base_h: f64,
    pub coupling: Coupling,
    pub tau_a: f64,
    pub tau_r: f64,
    pub k_max: usize,
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub problem: ProblemSource,
    pub numerics: NumericSpec,
}

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_BASE_H: f64 = 0.8;

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn positive(key: &str, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(key, format!("{v} must be positive")))
    }
}

fn nonnegative(key: &str, v: f64) -> Result<f64, ConfigError> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(key, format!("{v} must be nonnegative")))
    }
}

fn expression(key: &str, raw: &RawExpr, bounds: [f64; 4], final_time: f64) -> Result<Expr, ConfigError> {
    let e = Expr::parse(&raw.text()).map_err(|e| invalid(key, e.to_string()))?;
    e.check_total(bounds, final_time).map_err(|e| invalid(key, e.to_string()))?;
    Ok(e)
}

impl NumericSpec {
    pub fn defaults() -> Self {
        NumericSpec {
            levels: vec![1, 2, 3, 4],
            h: None,
            base_h: DEFAULT_BASE_H,
            coupling: Coupling::default(),
            tau_a: InverseConfig::DEFAULT_TAU_A,
            tau_r: InverseConfig::DEFAULT_TAU_R,
            k_max: InverseConfig::DEFAULT_K_MAX,
            jobs: default_jobs(),
        }
    }

    fn from_raw(raw: RawNumerics) -> Result<Self, ConfigError> {
        let d = Self::defaults();
        let levels = raw.levels.unwrap_or(d.levels);
        if levels.is_empty() {
            return Err(invalid("numerics.levels", "empty level list"));
        }
        if levels.contains(&0) {
            return Err(invalid("numerics.levels", "levels start at 1"));
        }
        if levels.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(invalid("numerics.levels", "levels must be consecutive and increasing"));
        }
        let h = raw.h.map(|h| positive("numerics.h", h)).transpose()?;
        let coupling = Coupling {
            tau_factor: positive("numerics.tau_factor", raw.tau_factor.unwrap_or(d.coupling.tau_factor))?,
            rho_factor: positive("numerics.rho_factor", raw.rho_factor.unwrap_or(d.coupling.rho_factor))?,
            delta_factor: nonnegative("numerics.delta_factor", raw.delta_factor.unwrap_or(d.coupling.delta_factor))?,
        };
        let k_max = raw.k_max.unwrap_or(d.k_max);
        if k_max == 0 {
            return Err(invalid("numerics.k_max", "must be at least 1"));
        }
        let jobs = raw.jobs.unwrap_or(d.jobs);
        if jobs == 0 {
            return Err(invalid("numerics.jobs", "must be at least 1"));
        }
        Ok(NumericSpec {
            levels,
            h,
            base_h: positive("numerics.base_h", raw.base_h.unwrap_or(d.base_h))?,
            coupling,
            tau_a: nonnegative("numerics.tau_a", raw.tau_a.unwrap_or(d.tau_a))?,
            tau_r: nonnegative("numerics.tau_r", raw.tau_r.unwrap_or(d.tau_r))?,
            k_max,
            jobs,
        })
    }

    fn to_raw(&self) -> RawNumerics {
        RawNumerics {
            levels: Some(self.levels.clone()),
            h: self.h,
            base_h: Some(self.base_h),
            tau_factor: Some(self.coupling.tau_factor),
            rho_factor: Some(self.coupling.rho_factor),
            delta_factor: Some(self.coupling.delta_factor),
            tau_a: Some(self.tau_a),
            tau_r: Some(self.tau_r),
            k_max: Some(self.k_max),
            jobs: Some(self.jobs),
        }
    }
}

fn min_sampled_eigenvalue(a: &[[Expr; 2]; 2], bounds: [f64; 4], final_time: f64) -> f64 {
    let k = 8;
    let mut worst = f64::INFINITY;
    for i in 0..=k {
        for j in 0..=k {
            for n in 0..=k {
                let x = bounds[0] + (bounds[1] - bounds[0]) * i as f64 / k as f64;
                let y = bounds[2] + (bounds[3] - bounds[2]) * j as f64 / k as f64;
                let t = final_time * n as f64 / k as f64;
                let m = [[a[0][0].eval(x, y, t), a[0][1].eval(x, y, t)], [a[1][0].eval(x, y, t), a[1][1].eval(x, y, t)]];
                let mean = 0.5 * (m[0][0] + m[1][1]);
                let gap = (0.5 * (m[0][0] - m[1][1])).hypot(0.5 * (m[0][1] + m[1][0]));
                worst = worst.min(mean - gap);
            }
        }
    }
    worst
}

impl ProblemSpec {
    fn from_raw(raw: RawProblem) -> Result<Self, ConfigError> {
        let bounds = raw.bounds.unwrap_or([-1.0, 1.0, -1.0, 1.0]);
        if !(bounds[0] < bounds[1] && bounds[2] < bounds[3]) || bounds.iter().any(|v| !v.is_finite()) {
            return Err(invalid("problem.bounds", "expected [x0, x1, y0, y1] with x0 < x1 and y0 < y1"));
        }
        let final_time = positive("problem.final_time", raw.final_time.unwrap_or(1.0))?;
        let ex = |key: &str, raw: Option<RawExpr>, default: f64| {
            expression(key, &raw.unwrap_or(RawExpr::Number(default)), bounds, final_time)
        };

        let d = raw.diffusion.unwrap_or([
            [RawExpr::Number(1.0), RawExpr::Number(0.0)],
            [RawExpr::Number(0.0), RawExpr::Number(1.0)],
        ]);
        let diffusion = [
            [expression("problem.diffusion[0][0]", &d[0][0], bounds, final_time)?, expression("problem.diffusion[0][1]", &d[0][1], bounds, final_time)?],
            [expression("problem.diffusion[1][0]", &d[1][0], bounds, final_time)?, expression("problem.diffusion[1][1]", &d[1][1], bounds, final_time)?],
        ];
        if diffusion[0][1] != diffusion[1][0] {
            return Err(invalid("problem.diffusion", "the tensor must be symmetric (identical off-diagonal expressions)"));
        }
        let sampled = min_sampled_eigenvalue(&diffusion, bounds, final_time);
        let ellipticity = match raw.ellipticity {
            Some(a) => positive("problem.ellipticity", a)?,
            None if sampled > 0.0 => sampled,
            None => return Err(invalid("problem.diffusion", format!("not positive definite (smallest sampled eigenvalue {sampled})"))),
        };

        let source = match (raw.source, raw.source_condition) {
            (Some(_), Some(_)) => return Err(invalid("problem.source", "`source` and `source_condition` are exclusive")),
            (None, None) => return Err(invalid("problem.source", "missing")),
            (Some(s), None) => {
                let sampling = match raw.sampling.as_deref().unwrap_or("nodal") {
                    "nodal" => Sampling::Nodal,
                    "centroid" => Sampling::Centroid,
                    other => return Err(invalid("problem.sampling", format!("{other:?} is neither \"nodal\" nor \"centroid\""))),
                };
                SourceSpec::Expression { expr: expression("problem.source", &s, bounds, final_time)?, sampling }
            }
            (None, Some(c)) => {
                if raw.sampling.is_some() {
                    return Err(invalid("problem.sampling", "only applies to `source`"));
                }
                if !c.w.is_finite() {
                    return Err(invalid("problem.source_condition.w", "must be finite"));
                }
                SourceSpec::Condition { w: c.w, base: expression("problem.source_condition.base", &c.base, bounds, final_time)? }
            }
        };
        let prior = match raw.prior {
            None => PriorSpec::Perturbed,
            Some(RawExpr::Text(s)) if s == "perturbed" => PriorSpec::Perturbed,
            Some(RawExpr::Text(s)) if s == "exact" => PriorSpec::Exact,
            Some(p) => PriorSpec::Expression(expression("problem.prior", &p, bounds, final_time)?),
        };
        let observation = raw
            .observation
            .as_deref()
            .unwrap_or("all")
            .parse::<BoundarySpec>()
            .map_err(|e| invalid("problem.observation", e.to_string()))?;

        Ok(ProblemSpec {
            bounds,
            final_time,
            diffusion,
            ellipticity,
            reaction: ex("problem.reaction", raw.reaction, 0.0)?,
            robin: ex("problem.robin", raw.robin, 0.0)?,
            flux: ex("problem.flux", raw.flux, 0.0)?,
            initial: ex("problem.initial", raw.initial, 0.0)?,
            source,
            prior,
            observation,
        })
    }

    fn to_raw(&self) -> RawProblem {
        let t = |e: &Expr| RawExpr::Text(e.text().to_string());
        let (source, sampling, source_condition) = match &self.source {
            SourceSpec::Expression { expr, sampling } => (
                Some(t(expr)),
                Some(match sampling {
                    Sampling::Nodal => "nodal".to_string(),
                    Sampling::Centroid => "centroid".to_string(),
                }),
                None,
            ),
            SourceSpec::Condition { w, base } => (None, None, Some(RawSourceCondition { w: *w, base: t(base) })),
        };
        RawProblem {
            bounds: Some(self.bounds),
            final_time: Some(self.final_time),
            diffusion: Some([
                [t(&self.diffusion[0][0]), t(&self.diffusion[0][1])],
                [t(&self.diffusion[1][0]), t(&self.diffusion[1][1])],
            ]),
            ellipticity: Some(self.ellipticity),
            reaction: Some(t(&self.reaction)),
            robin: Some(t(&self.robin)),
            flux: Some(t(&self.flux)),
            initial: Some(t(&self.initial)),
            source,
            sampling,
            source_condition,
            prior: Some(match &self.prior {
                PriorSpec::Perturbed => RawExpr::Text("perturbed".into()),
                PriorSpec::Exact => RawExpr::Text("exact".into()),
                PriorSpec::Expression(e) => t(e),
            }),
            observation: Some(self.observation.to_string()),
        }
    }

    fn coefficients(&self) -> CoefficientSet {
        let field = |e: &Expr| -> ScalarField { Arc::new(e.clone()) };
        let d = self.diffusion.clone();
        let time_dependent = self.diffusion.iter().flatten().any(Expr::uses_t) || self.reaction.uses_t() || self.robin.uses_t();
        let initial = self.initial.clone();
        CoefficientSet {
            diffusion: Arc::new(move |x, y, t| {
                [[d[0][0].eval(x, y, t), d[0][1].eval(x, y, t)], [d[1][0].eval(x, y, t), d[1][1].eval(x, y, t)]]
            }),
            reaction: field(&self.reaction),
            robin: field(&self.robin),
            flux: field(&self.flux),
            initial: Arc::new(move |x, y| initial.eval(x, y, 0.0)),
            ellipticity: self.ellipticity,
            time_dependent,
        }
    }
}

impl ExperimentSpec {
    /// Spec for a built-in scenario with default numerics.
    pub fn builtin(name: &str) -> Result<Self, ConfigError> {
        if Scenario::by_name(name).is_none() {
            return Err(invalid("scenario", format!("unknown scenario {name:?}; known: {}", Scenario::NAMES.join(", "))));
        }
        Ok(ExperimentSpec {
            name: name.to_string(),
            seed: DEFAULT_SEED,
            output: None,
            problem: ProblemSource::Builtin(name.to_string()),
            numerics: NumericSpec::defaults(),
        })
    }

    pub fn scenario(&self) -> Scenario {
        let mut s = match &self.problem {
            ProblemSource::Builtin(name) => Scenario::by_name(name).expect("validated at parse time"),
            ProblemSource::Custom(p) => {
                let source = match &p.source {
                    SourceSpec::Expression { expr, sampling } => {
                        SourceModel::Analytic { f: Arc::new(expr.clone()), sampling: *sampling }
                    }
                    SourceSpec::Condition { w, base } => SourceModel::SourceCondition { w: *w, prior: Arc::new(base.clone()) },
                };
                let mut s = Scenario::general();
                s.coeffs = p.coefficients();
                s.source = source;
                s.prior = match &p.prior {
                    PriorSpec::Perturbed => PriorRule::Perturbed,
                    PriorSpec::Exact => PriorRule::Exact,
                    PriorSpec::Expression(e) => PriorRule::Function(Arc::new(e.clone())),
                };
                s.observation = p.observation.clone();
                s.bounds = Rect::new(p.bounds[0], p.bounds[1], p.bounds[2], p.bounds[3]);
                s.final_time = p.final_time;
                s
            }
        };
        s.name = self.name.clone();
        s.seed = self.seed;
        s.coupling = self.numerics.coupling;
        s.base_h = self.numerics.base_h;
        s.tau_a = self.numerics.tau_a;
        s.tau_r = self.numerics.tau_r;
        s.k_max = self.numerics.k_max;
        s
    }

    /// TOML text that parses back to this spec.
    pub fn emit(&self) -> String {
        let (scenario, problem) = match &self.problem {
            ProblemSource::Builtin(n) => (Some(n.clone()), None),
            ProblemSource::Custom(p) => (None, Some(p.to_raw())),
        };
        let raw = RawConfig {
            name: Some(self.name.clone()),
            scenario,
            seed: Some(self.seed),
            output: self.output.as_ref().map(|p| p.display().to_string()),
            numerics: Some(self.numerics.to_raw()),
            problem,
        };
        toml::to_string(&raw).expect("config types serialize")
    }
}

/// Parses and validates config text, filling defaults.
pub fn parse_config(text: &str) -> Result<ExperimentSpec, ConfigError> {
    if text.trim().is_empty() {
        return Err(ConfigError::Syntax("empty config".into()));
    }
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    let problem = match (raw.scenario, raw.problem) {
        (Some(_), Some(_)) => return Err(invalid("problem", "`scenario` and `[problem]` are exclusive")),
        (None, None) => return Err(invalid("scenario", "either `scenario` or a `[problem]` table is required")),
        (Some(name), None) => {
            if Scenario::by_name(&name).is_none() {
                return Err(invalid("scenario", format!("unknown scenario {name:?}; known: {}", Scenario::NAMES.join(", "))));
            }
            ProblemSource::Builtin(name)
        }
        (None, Some(p)) => ProblemSource::Custom(Box::new(ProblemSpec::from_raw(p)?)),
    };
    let name = match (&raw.name, &problem) {
        (Some(n), _) => n.clone(),
        (None, ProblemSource::Builtin(n)) => n.clone(),
        (None, ProblemSource::Custom(_)) => "custom".into(),
    };
    if name.is_empty() {
        return Err(invalid("name", "must not be empty"));
    }
    Ok(ExperimentSpec {
        name,
        seed: raw.seed.unwrap_or(DEFAULT_SEED),
        output: raw.output.map(PathBuf::from),
        problem,
        numerics: NumericSpec::from_raw(raw.numerics.unwrap_or_default())?,
    })
}

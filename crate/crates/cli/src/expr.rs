//! Scalar expressions over `x`, `y`, `t`, compiled once with `fasteval`.
//!
//! Besides fasteval's builtins (`sin`, `cos`, `abs`, `log`, `min`, `max`,
//! `pi()`, ...) the names `exp`, `sqrt`, `heaviside(s)` (`1` for `s > 0`, else
//! `0`) and `disc(x0, y0, r)` (indicator of the open disc) are available.

use std::fmt;

use fasteval::{Compiler, Evaler};
use heatsource::assembly::SpaceTimeFunction;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExprError(pub String);

impl fmt::Display for ExprError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ExprError {}

pub struct Expr {
    text: String,
    slab: fasteval::Slab,
    instruction: fasteval::Instruction,
    uses_t: bool,
}

impl Clone for Expr {
    fn clone(&self) -> Self {
        Expr::parse(&self.text).expect("expression parsed once already")
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({:?})", self.text)
    }
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.text == other.text
    }
}

/// Points at which every expression is test-evaluated when parsed.
const PROBES: [(f64, f64, f64); 4] = [(0.0, 0.0, 0.0), (0.31, -0.47, 0.5), (-1.0, 1.0, 1.0), (0.7, 0.2, 0.9)];

fn lookup(x: f64, y: f64, t: f64, name: &str, args: &[f64]) -> Option<f64> {
    Some(match (name, args) {
        ("x", []) => x,
        ("y", []) => y,
        ("t", []) => t,
        ("exp", [a]) => a.exp(),
        ("sqrt", [a]) => a.sqrt(),
        ("heaviside", [a]) => {
            if *a > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        ("disc", [x0, y0, r]) => {
            if (x - x0).powi(2) + (y - y0).powi(2) < r * r {
                1.0
            } else {
                0.0
            }
        }
        _ => return None,
    })
}

impl Expr {
    pub fn parse(text: &str) -> Result<Expr, ExprError> {
        let mut slab = fasteval::Slab::new();
        let parsed = fasteval::Parser::new()
            .parse(text, &mut slab.ps)
            .map_err(|e| ExprError(format!("cannot parse {text:?}: {e}")))?;
        let instruction = parsed.from(&slab.ps).compile(&slab.ps, &mut slab.cs);
        let mut expr = Expr { text: text.to_string(), slab, instruction, uses_t: false };
        let mut uses_t = false;
        for &(x, y, t) in &PROBES {
            let mut cb = |name: &str, args: Vec<f64>| {
                uses_t |= name == "t";
                lookup(x, y, t, name, &args)
            };
            expr.instruction.eval(&expr.slab, &mut cb).map_err(|e| ExprError(format!("cannot evaluate {text:?}: {e}")))?;
        }
        expr.uses_t = uses_t;
        Ok(expr)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Whether the variable `t` occurs in any evaluated branch.
    pub fn uses_t(&self) -> bool {
        self.uses_t
    }

    /// `NaN` if evaluation fails; parsing already rejected unknown names.
    pub fn eval(&self, x: f64, y: f64, t: f64) -> f64 {
        let mut cb = |name: &str, args: Vec<f64>| lookup(x, y, t, name, &args);
        self.instruction.eval(&self.slab, &mut cb).unwrap_or(f64::NAN)
    }

    /// Checks finiteness on a grid over the box and time interval.
    pub fn check_total(&self, bounds: [f64; 4], final_time: f64) -> Result<(), ExprError> {
        let k = 8;
        for i in 0..=k {
            for j in 0..=k {
                for n in 0..=k {
                    let x = bounds[0] + (bounds[1] - bounds[0]) * i as f64 / k as f64;
                    let y = bounds[2] + (bounds[3] - bounds[2]) * j as f64 / k as f64;
                    let t = final_time * n as f64 / k as f64;
                    let v = self.eval(x, y, t);
                    if !v.is_finite() {
                        return Err(ExprError(format!("{:?} is {v} at (x, y, t) = ({x}, {y}, {t})", self.text)));
                    }
                }
            }
        }
        Ok(())
    }
}

impl SpaceTimeFunction for Expr {
    fn value(&self, x: f64, y: f64, t: f64) -> f64 {
        self.eval(x, y, t)
    }
}

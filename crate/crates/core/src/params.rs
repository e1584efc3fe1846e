//! Scalar model parameters and the rules that turn an intensity `n` into a radius `R_n`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the ball radius `R_n` is derived from the intensity `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum RadiusRule {
    /// A fixed radius, independent of `n`.
    Explicit { radius: f64 },
    /// `R_n = 2 log(n / nu) / (zeta (d - 1))`, constant expected average degree when `2 alpha > zeta`.
    Thermodynamic { nu: f64 },
    /// `R_n = c log n`.
    LogMultiple { c: f64 },
}

impl RadiusRule {
    pub fn radius(&self, n: f64, zeta: f64, d: usize) -> f64 {
        match *self {
            RadiusRule::Explicit { radius } => radius,
            RadiusRule::Thermodynamic { nu } => 2.0 * (n / nu).ln() / (zeta * (d as f64 - 1.0)),
            RadiusRule::LogMultiple { c } => c * n.ln(),
        }
    }

    fn validate(&self) -> Result<()> {
        let (name, v) = match *self {
            RadiusRule::Explicit { radius } => ("radius", radius),
            RadiusRule::Thermodynamic { nu } => ("nu", nu),
            RadiusRule::LogMultiple { c } => ("c", c),
        };
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("radius rule {name} must be positive, got {v}")))
        }
    }
}

/// Parses `thermo:NU`, `logmult:C` or `explicit:R`.
impl FromStr for RadiusRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, value) = s
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("radius rule `{s}` is not KIND:VALUE")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("radius rule value `{value}` is not a number")))?;
        let rule = match kind.trim() {
            "thermo" | "thermodynamic" => RadiusRule::Thermodynamic { nu: value },
            "logmult" | "log" => RadiusRule::LogMultiple { c: value },
            "explicit" => RadiusRule::Explicit { radius: value },
            other => return Err(Error::Parse(format!("unknown radius rule `{other}`"))),
        };
        rule.validate()?;
        Ok(rule)
    }
}

impl fmt::Display for RadiusRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RadiusRule::Explicit { radius } => write!(f, "explicit:{radius}"),
            RadiusRule::Thermodynamic { nu } => write!(f, "thermo:{nu}"),
            RadiusRule::LogMultiple { c } => write!(f, "logmult:{c}"),
        }
    }
}

/// All scalar parameters of the model.
///
/// `alpha` shapes the radial sampling density, `zeta` the curvature of the metric used to
/// connect points, and `gamma` the depth fraction of the boundary annulus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub d: usize,
    pub alpha: f64,
    pub zeta: f64,
    pub n: f64,
    pub radius_rule: RadiusRule,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

fn default_gamma() -> f64 {
    1.0
}

impl ModelParams {
    pub fn new(d: usize, alpha: f64, zeta: f64, n: f64, radius_rule: RadiusRule) -> Result<Self> {
        let p = Self { d, alpha, zeta, n, radius_rule, gamma: 1.0 };
        p.validate()?;
        Ok(p)
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        self.gamma = gamma;
        self.validate()?;
        Ok(self)
    }

    pub fn with_n(mut self, n: f64) -> Result<Self> {
        self.n = n;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if self.d < 2 {
            return bad(format!("d must be at least 2, got {}", self.d));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.zeta.is_finite() && self.zeta > 0.0) {
            return bad(format!("zeta must be positive, got {}", self.zeta));
        }
        if !(self.n.is_finite() && self.n > 0.0) {
            return bad(format!("n must be positive, got {}", self.n));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        self.radius_rule.validate()?;
        let r = self.radius();
        if !(r.is_finite() && r > 0.0) {
            return bad(format!("radius rule {} yields R = {r} at n = {}", self.radius_rule, self.n));
        }
        Ok(())
    }

    /// The realized ball radius `R_n`.
    pub fn radius(&self) -> f64 {
        self.radius_rule.radius(self.n, self.zeta, self.d)
    }

    /// Largest admissible depth for annulus points, `gamma * R_n`.
    pub fn depth_bound(&self) -> f64 {
        self.gamma * self.radius()
    }
}

//! Exponential utilities with constant or piecewise-constant absolute risk aversion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Terminal utility of log-wealth.
///
/// `Dara` switches from risk aversion `a0` to the lower `a1` above `x_star`;
/// the two exponential branches are glued so that value and slope are
/// continuous at the switch point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum UtilitySpec {
    Cara { a: f64 },
    Dara { a0: f64, a1: f64, x_star: f64 },
}

impl UtilitySpec {
    pub fn cara(a: f64) -> Result<Self> {
        let u = UtilitySpec::Cara { a };
        u.validate()?;
        Ok(u)
    }

    pub fn dara(a0: f64, a1: f64, x_star: f64) -> Result<Self> {
        let u = UtilitySpec::Dara { a0, a1, x_star };
        u.validate()?;
        Ok(u)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            UtilitySpec::Cara { a } if a > 0.0 && a.is_finite() => Ok(()),
            UtilitySpec::Cara { a } => Err(Error::Config(format!("CARA needs a > 0, got {a}"))),
            UtilitySpec::Dara { a0, a1, x_star }
                if a0 > a1 && a1 > 0.0 && a0.is_finite() && x_star.is_finite() =>
            {
                Ok(())
            }
            UtilitySpec::Dara { a0, a1, .. } => Err(Error::Config(format!(
                "DARA needs a0 > a1 > 0, got a0 = {a0}, a1 = {a1}"
            ))),
        }
    }

    /// Glue constant `c* = e^{−a0 x*}(a0 − a1)/a1` of the lower branch.
    fn glue(a0: f64, a1: f64, x_star: f64) -> f64 {
        (-a0 * x_star).exp() * (a0 - a1) / a1
    }

    pub fn value(&self, x: f64) -> f64 {
        match *self {
            UtilitySpec::Cara { a } => -(-a * x).exp(),
            UtilitySpec::Dara { a0, a1, x_star } => {
                if x <= x_star {
                    -(-a0 * x).exp() - Self::glue(a0, a1, x_star)
                } else {
                    -(a0 / a1) * (-a1 * x + (a1 - a0) * x_star).exp()
                }
            }
        }
    }

    /// First derivative `U′(x)`, positive everywhere.
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            UtilitySpec::Cara { a } => a * (-a * x).exp(),
            UtilitySpec::Dara { a0, a1, x_star } => {
                if x <= x_star {
                    a0 * (-a0 * x).exp()
                } else {
                    a0 * (-a1 * x + (a1 - a0) * x_star).exp()
                }
            }
        }
    }

    /// Absolute risk aversion `−U″/U′`; left-closed at the DARA switch point.
    pub fn risk_aversion(&self, x: f64) -> f64 {
        match *self {
            UtilitySpec::Cara { a } => a,
            UtilitySpec::Dara { a0, a1, x_star } => {
                if x <= x_star {
                    a0
                } else {
                    a1
                }
            }
        }
    }

    /// Bounds of the risk-aversion profile.
    pub fn risk_aversion_range(&self) -> (f64, f64) {
        match *self {
            UtilitySpec::Cara { a } => (a, a),
            UtilitySpec::Dara { a0, a1, .. } => (a1, a0),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            UtilitySpec::Cara { a } => format!("cara(a={a})"),
            UtilitySpec::Dara { a0, a1, x_star } => format!("dara(a0={a0},a1={a1},x*={x_star})"),
        }
    }
}

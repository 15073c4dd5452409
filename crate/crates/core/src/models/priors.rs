use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma};
use statrs::function::gamma::ln_gamma;

use super::ModelError;

/// Proper prior on a strictly positive hyperparameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum HyperPrior {
    /// Shape/rate parameterization.
    Gamma { shape: f64, rate: f64 },
    /// Density `∝ x^{−shape−1} exp(−scale/x)`.
    InverseGamma { shape: f64, scale: f64 },
    /// Open interval `(lower, upper)`.
    Uniform { lower: f64, upper: f64 },
}

impl HyperPrior {
    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = match *self {
            HyperPrior::Gamma { shape, rate } => pos(shape) && pos(rate),
            HyperPrior::InverseGamma { shape, scale } => pos(shape) && pos(scale),
            HyperPrior::Uniform { lower, upper } => {
                lower.is_finite() && upper.is_finite() && lower >= 0.0 && lower < upper
            }
        };
        if ok {
            Ok(())
        } else {
            Err(ModelError::ImproperPrior(format!("{self:?}")))
        }
    }

    /// Log density; `−∞` outside the support.
    pub fn ln_pdf(&self, x: f64) -> f64 {
        if !(x > 0.0 && x.is_finite()) {
            return f64::NEG_INFINITY;
        }
        match *self {
            HyperPrior::Gamma { shape, rate } => {
                shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
            }
            HyperPrior::InverseGamma { shape, scale } => {
                shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
            }
            HyperPrior::Uniform { lower, upper } => {
                if x > lower && x < upper {
                    -(upper - lower).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn in_support(&self, x: f64) -> bool {
        self.ln_pdf(x) > f64::NEG_INFINITY
    }

    pub fn median(&self) -> f64 {
        match *self {
            HyperPrior::Gamma { shape, rate } => gamma_median(shape, rate),
            HyperPrior::InverseGamma { shape, scale } => 1.0 / gamma_median(shape, scale),
            HyperPrior::Uniform { lower, upper } => 0.5 * (lower + upper),
        }
    }
}

fn pos(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

fn gamma_median(shape: f64, rate: f64) -> f64 {
    if shape == 1.0 {
        return std::f64::consts::LN_2 / rate;
    }
    Gamma::new(shape, rate)
        .map(|g| g.inverse_cdf(0.5))
        .unwrap_or(shape / rate)
}

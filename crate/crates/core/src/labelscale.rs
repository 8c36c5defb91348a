//! Label normalization fitted on training targets, with exact inverses.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScaleError {
    #[error("{method} needs at least {need} labels, got {got}")]
    TooFewLabels { method: ScaleMethod, need: usize, got: usize },
    #[error("labels are constant; {0} is undefined")]
    Degenerate(ScaleMethod),
    #[error("log_norm requires labels > -1, got {0}")]
    OutOfDomain(f64),
    #[error("non-finite label {0}")]
    NonFinite(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMethod {
    #[default]
    ZScore,
    MinMax,
    LogNorm,
    Identity,
}

impl ScaleMethod {
    pub fn name(self) -> &'static str {
        match self {
            ScaleMethod::ZScore => "z_score",
            ScaleMethod::MinMax => "min_max",
            ScaleMethod::LogNorm => "log_norm",
            ScaleMethod::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<ScaleMethod> {
        match s {
            "z_score" | "zscore" | "z_norm" => Some(ScaleMethod::ZScore),
            "min_max" | "minmax" => Some(ScaleMethod::MinMax),
            "log_norm" | "log" => Some(ScaleMethod::LogNorm),
            "identity" | "none" => Some(ScaleMethod::Identity),
            _ => None,
        }
    }
}

impl std::fmt::Display for ScaleMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Fitted scaler state. Serialized verbatim into checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum LabelScaler {
    ZScore { mu: f64, sigma: f64, fitted_on: usize },
    MinMax { y_min: f64, y_max: f64, fitted_on: usize },
    LogNorm { fitted_on: usize },
    Identity { fitted_on: usize },
}

impl LabelScaler {
    /// Fits on training labels. `z_score` uses the population standard
    /// deviation (divide by N).
    pub fn fit(labels: &[f64], method: ScaleMethod) -> Result<LabelScaler, ScaleError> {
        if let Some(&bad) = labels.iter().find(|y| !y.is_finite()) {
            return Err(ScaleError::NonFinite(bad));
        }
        let n = labels.len();
        match method {
            ScaleMethod::ZScore => {
                if n < 2 {
                    return Err(ScaleError::TooFewLabels { method, need: 2, got: n });
                }
                let mu = labels.iter().sum::<f64>() / n as f64;
                let var = labels.iter().map(|y| (y - mu) * (y - mu)).sum::<f64>() / n as f64;
                let sigma = var.sqrt();
                if sigma <= 0.0 || !sigma.is_finite() {
                    return Err(ScaleError::Degenerate(method));
                }
                Ok(LabelScaler::ZScore { mu, sigma, fitted_on: n })
            }
            ScaleMethod::MinMax => {
                if n < 2 {
                    return Err(ScaleError::TooFewLabels { method, need: 2, got: n });
                }
                let y_min = labels.iter().copied().fold(f64::INFINITY, f64::min);
                let y_max = labels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if y_max <= y_min {
                    return Err(ScaleError::Degenerate(method));
                }
                Ok(LabelScaler::MinMax { y_min, y_max, fitted_on: n })
            }
            ScaleMethod::LogNorm => {
                if let Some(&bad) = labels.iter().find(|&&y| y <= -1.0) {
                    return Err(ScaleError::OutOfDomain(bad));
                }
                Ok(LabelScaler::LogNorm { fitted_on: n })
            }
            ScaleMethod::Identity => Ok(LabelScaler::Identity { fitted_on: n }),
        }
    }

    pub fn identity() -> LabelScaler {
        LabelScaler::Identity { fitted_on: 0 }
    }

    pub fn method(&self) -> ScaleMethod {
        match self {
            LabelScaler::ZScore { .. } => ScaleMethod::ZScore,
            LabelScaler::MinMax { .. } => ScaleMethod::MinMax,
            LabelScaler::LogNorm { .. } => ScaleMethod::LogNorm,
            LabelScaler::Identity { .. } => ScaleMethod::Identity,
        }
    }

    pub fn fitted_on(&self) -> usize {
        match *self {
            LabelScaler::ZScore { fitted_on, .. }
            | LabelScaler::MinMax { fitted_on, .. }
            | LabelScaler::LogNorm { fitted_on }
            | LabelScaler::Identity { fitted_on } => fitted_on,
        }
    }

    pub fn transform(&self, y: f64) -> Result<f64, ScaleError> {
        Ok(match *self {
            LabelScaler::ZScore { mu, sigma, .. } => (y - mu) / sigma,
            LabelScaler::MinMax { y_min, y_max, .. } => (y - y_min) / (y_max - y_min),
            LabelScaler::LogNorm { .. } => {
                if y <= -1.0 {
                    return Err(ScaleError::OutOfDomain(y));
                }
                y.ln_1p()
            }
            LabelScaler::Identity { .. } => y,
        })
    }

    pub fn inverse(&self, y_hat: f64) -> f64 {
        match *self {
            LabelScaler::ZScore { mu, sigma, .. } => y_hat * sigma + mu,
            LabelScaler::MinMax { y_min, y_max, .. } => y_hat * (y_max - y_min) + y_min,
            LabelScaler::LogNorm { .. } => y_hat.exp_m1(),
            LabelScaler::Identity { .. } => y_hat,
        }
    }

    /// Factor converting a scaled-space absolute error into original units
    /// for the affine methods; `None` for log_norm.
    pub fn scale_factor(&self) -> Option<f64> {
        match *self {
            LabelScaler::ZScore { sigma, .. } => Some(sigma),
            LabelScaler::MinMax { y_min, y_max, .. } => Some(y_max - y_min),
            LabelScaler::LogNorm { .. } => None,
            LabelScaler::Identity { .. } => Some(1.0),
        }
    }
}

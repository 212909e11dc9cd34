use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::NsktrError;

/// Data-fidelity term of the regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    /// `½ Σ (y_i − ⟨X_i, B⟩)²`
    Linear,
    /// `Σ log(1 + exp(−y_i ⟨X_i, B⟩))` with labels in {−1, +1}
    Logistic,
}

impl Loss {
    /// Loss contribution of one sample with linear predictor `eta`.
    pub fn value(self, y: f64, eta: f64) -> f64 {
        match self {
            Loss::Linear => 0.5 * (y - eta) * (y - eta),
            Loss::Logistic => log1p_exp(-y * eta),
        }
    }
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Loss::Linear => "linear",
            Loss::Logistic => "logistic",
        })
    }
}

impl FromStr for Loss {
    type Err = NsktrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(Loss::Linear),
            "logistic" => Ok(Loss::Logistic),
            other => Err(NsktrError::Usage(format!("unknown loss `{other}`"))),
        }
    }
}

/// `log(1 + exp(t))` without overflow.
#[inline]
pub fn log1p_exp(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn check_labels(loss: Loss, y: &[f64]) -> Result<(), NsktrError> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(NsktrError::NonFinite("responses"));
    }
    if loss == Loss::Logistic {
        if let Some((index, &value)) = y.iter().enumerate().find(|(_, &v)| v != 1.0 && v != -1.0) {
            return Err(NsktrError::InvalidLabel { index, value });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_logistic_helpers() {
        assert!((log1p_exp(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(log1p_exp(1000.0), 1000.0);
        assert!(log1p_exp(-1000.0) >= 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
    }

    #[test]
    fn label_checks() {
        assert!(check_labels(Loss::Logistic, &[1.0, -1.0]).is_ok());
        assert!(matches!(
            check_labels(Loss::Logistic, &[1.0, 0.0]),
            Err(NsktrError::InvalidLabel { index: 1, .. })
        ));
        assert!(check_labels(Loss::Linear, &[0.3, f64::NAN]).is_err());
    }
}

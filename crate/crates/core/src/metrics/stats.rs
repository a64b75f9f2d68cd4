use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::MetricError;

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.96;

/// Mean of one metric over a test set with its 95% confidence half-width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub mean: f64,
    pub ci_halfwidth: f64,
    pub n: usize,
}

/// `mean ± 1.96·σ/√n` with the sample (n−1) standard deviation; a single
/// value has zero spread.
pub fn mean_ci(name: impl Into<String>, values: &[f64]) -> Result<MetricReport, MetricError> {
    if values.is_empty() {
        return Err(MetricError::Input("cannot summarize an empty sample".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = if n == 1 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Ok(MetricReport {
        name: name.into(),
        mean,
        ci_halfwidth: Z_95 * sd / (n as f64).sqrt(),
        n,
    })
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZTestResult {
    pub successes: u64,
    pub trials: u64,
    pub p0: f64,
    pub phat: f64,
    pub z: f64,
    /// One-sided p-value for the alternative `p > p0`.
    pub p_value: f64,
}

/// One-sided Wald test of `p > p0` for a binomial proportion.
///
/// The standard error uses the sample proportion, `√(p̂(1−p̂)/n)`. When
/// `p̂` is 0 or 1 the standard error vanishes: `p̂ = 0` yields `z = −∞`,
/// p-value 1, and `p̂ = 1` yields `z = +∞`, p-value 0.
pub fn z_test_proportion(successes: u64, trials: u64, p0: f64) -> Result<ZTestResult, MetricError> {
    if trials == 0 {
        return Err(MetricError::Input("trials must be at least 1".into()));
    }
    if successes > trials {
        return Err(MetricError::Input(format!(
            "successes {successes} exceed trials {trials}"
        )));
    }
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(MetricError::Input(format!("null proportion {p0} outside (0, 1)")));
    }
    let n = trials as f64;
    let phat = successes as f64 / n;
    let se = (phat * (1.0 - phat) / n).sqrt();
    let (z, p_value) = if se == 0.0 {
        if phat <= p0 {
            (f64::NEG_INFINITY, 1.0)
        } else {
            (f64::INFINITY, 0.0)
        }
    } else {
        let z = (phat - p0) / se;
        (z, 1.0 - normal_cdf(z))
    };
    Ok(ZTestResult { successes, trials, p0, phat, z, p_value })
}

//! Representativeness checks of a reduced sample against the full samples:
//! Welch's unequal-variance t-test on operational attributes and Pearson's
//! goodness-of-fit chi-square on categorical distributions.

use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TTestResult {
    pub t: f64,
    /// Welch–Satterthwaite degrees of freedom.
    pub df: f64,
    pub p_two_sided: f64,
    pub significant_95: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub df: usize,
    pub p: f64,
    /// Categories skipped because their expected count was zero.
    pub dropped: Vec<usize>,
}

/// Two-sample Welch t-test from summary moments.
pub fn welch_t(
    mean1: f64,
    sd1: f64,
    n1: usize,
    mean2: f64,
    sd2: f64,
    n2: usize,
) -> Result<TTestResult> {
    if !(sd1 > 0.0 && sd2 > 0.0) {
        return Err(Error::domain("standard deviations must be positive"));
    }
    if n1 < 2 || n2 < 2 {
        return Err(Error::domain("each sample needs at least two observations"));
    }
    let a = sd1 * sd1 / n1 as f64;
    let b = sd2 * sd2 / n2 as f64;
    let t = (mean1 - mean2) / (a + b).sqrt();
    let df = (a + b).powi(2) / (a * a / (n1 - 1) as f64 + b * b / (n2 - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::domain(e.to_string()))?;
    let p_two_sided = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTestResult {
        t,
        df,
        p_two_sided,
        significant_95: p_two_sided < 0.05,
    })
}

/// Pearson goodness-of-fit statistic with `df = categories - 1` over the
/// categories whose expected count is positive.
pub fn chi_square_gof(observed: &[f64], expected: &[f64]) -> Result<ChiSquareResult> {
    if observed.len() != expected.len() {
        return Err(Error::Arity {
            what: "chi-square categories".into(),
            expected: expected.len(),
            found: observed.len(),
        });
    }
    let mut statistic = 0.0;
    let mut used = 0usize;
    let mut dropped = Vec::new();
    for (i, (&o, &e)) in observed.iter().zip(expected).enumerate() {
        if e > 0.0 {
            statistic += (o - e).powi(2) / e;
            used += 1;
        } else {
            dropped.push(i);
        }
    }
    if used < 2 {
        return Err(Error::domain(
            "chi-square needs at least two categories with positive expected counts",
        ));
    }
    let df = used - 1;
    let dist = ChiSquared::new(df as f64).map_err(|e| Error::domain(e.to_string()))?;
    Ok(ChiSquareResult {
        statistic,
        df,
        p: dist.sf(statistic).clamp(0.0, 1.0),
        dropped,
    })
}

/// Sample mean and standard deviation (n - 1 denominator).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

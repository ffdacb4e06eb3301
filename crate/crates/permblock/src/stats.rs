//! Thin distribution helpers shared by the tests and the harness.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};

/// Standard normal upper tail P(Z >= z).
pub fn normal_sf(z: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).unwrap();
    n.sf(z)
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).unwrap();
    n.cdf(z)
}

/// Two-sided p-value from a standard-normal statistic.
pub fn normal_p_two_sided(z: f64) -> f64 {
    (2.0 * normal_sf(z.abs())).min(1.0)
}

/// Two-sided p-value from a Student-t statistic with `df` degrees of freedom.
pub fn t_p_two_sided(t: f64, df: f64) -> f64 {
    if !t.is_finite() || df <= 0.0 {
        return 1.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df).unwrap();
    (2.0 * dist.sf(t.abs())).min(1.0)
}

/// Upper-tail p-value from a chi-squared statistic with `df` degrees of
/// freedom.
pub fn chi2_p(x: f64, df: f64) -> f64 {
    if !x.is_finite() || x <= 0.0 {
        return 1.0;
    }
    let dist = ChiSquared::new(df).unwrap();
    dist.sf(x)
}

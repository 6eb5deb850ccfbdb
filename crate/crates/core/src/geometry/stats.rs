//! Small hypothesis tests used by the comparisons.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided p value.
    pub p: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

fn two_sided(t: f64, df: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive df");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

/// Welch's unequal-variance two-sample t-test of `mean(b) − mean(a)`.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::DegenerateTest("each sample needs at least two values".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let se2 = va / na + vb / nb;
    if se2 <= 0.0 {
        if ma == mb {
            return Err(Error::DegenerateTest("both samples have zero variance".into()));
        }
        return Err(Error::DegenerateTest("zero variance with different means".into()));
    }
    let t = (mb - ma) / se2.sqrt();
    let df = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    Ok(TTest { t, df, p: two_sided(t, df) })
}

/// One-sample t-test of `mean(d) = 0` (paired differences).
pub fn paired_t_test(d: &[f64]) -> Result<TTest> {
    if d.len() < 2 {
        return Err(Error::DegenerateTest("paired test needs at least two pairs".into()));
    }
    let (m, v) = mean_var(d);
    if v <= 0.0 {
        return Err(Error::DegenerateTest("paired differences have zero variance".into()));
    }
    let df = d.len() as f64 - 1.0;
    let t = m / (v / d.len() as f64).sqrt();
    Ok(TTest { t, df, p: two_sided(t, df) })
}

/// Exact two-sided sign test on paired differences; zeros are dropped.
/// Returns `(positives, negatives, p)`.
pub fn sign_test(d: &[f64]) -> (usize, usize, f64) {
    let pos = d.iter().filter(|&&x| x > 0.0).count();
    let neg = d.iter().filter(|&&x| x < 0.0).count();
    let n = (pos + neg) as u64;
    if n == 0 {
        return (0, 0, 1.0);
    }
    let k = pos.max(neg) as u64;
    let bin = Binomial::new(0.5, n).expect("valid binomial");
    let upper = if k == 0 { 1.0 } else { 1.0 - bin.cdf(k - 1) };
    (pos, neg, (2.0 * upper).min(1.0))
}

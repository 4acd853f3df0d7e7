use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub n: usize,
    pub mean_difference: f64,
    /// `None` when the differences have zero spread but nonzero mean.
    pub t: Option<f64>,
    /// Two-sided.
    pub p: f64,
    /// Set when the sample sd is zero with a nonzero mean; `p` is then the
    /// 0 sentinel.
    pub degenerate: bool,
}

/// Two-sided paired t-test on `a − b` with `n − 1` degrees of freedom.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("paired lists differ in length: {} vs {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::invalid("paired t-test needs at least two pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("paired differences".into()));
    }
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if d.iter().all(|&v| v == 0.0) {
        return Ok(TTest {
            n,
            mean_difference: 0.0,
            t: Some(0.0),
            p: 1.0,
            degenerate: false,
        });
    }
    if sd == 0.0 {
        return Ok(TTest {
            n,
            mean_difference: mean,
            t: None,
            p: 0.0,
            degenerate: true,
        });
    }
    let t = mean / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("valid t parameters");
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(TTest {
        n,
        mean_difference: mean,
        t: Some(t),
        p,
        degenerate: false,
    })
}

use serde::{Deserialize, Serialize};

use crate::data::Slice;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocConfig {
    /// Total fraction of intensity outliers clipped, split evenly between
    /// both tails.
    pub outlier_fraction: f64,
    /// Slices with a smaller standard deviation normalize to all zeros.
    pub eps_std: f64,
}

impl Default for PreprocConfig {
    fn default() -> Self {
        Self {
            outlier_fraction: 0.05,
            eps_std: 1e-6,
        }
    }
}

impl PreprocConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.outlier_fraction) {
            return Err(Error::invalid(format!(
                "outlier_fraction must lie in [0, 0.5), got {}",
                self.outlier_fraction
            )));
        }
        if !(self.eps_std >= 0.0) {
            return Err(Error::invalid("eps_std must be non-negative"));
        }
        Ok(())
    }
}

/// Quantile of already sorted data with linear interpolation between order
/// statistics (position `p·(n-1)`).
pub fn quantile(sorted: &[f32], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] as f64 + (sorted[hi] as f64 - sorted[lo] as f64) * frac
}

/// Clamps values to the `[fraction/2, 1 - fraction/2]` quantile range.
pub fn clip_outliers(slice: &Slice, fraction: f64) -> Result<Slice> {
    if !(0.0..0.5).contains(&fraction) {
        return Err(Error::invalid(format!(
            "outlier fraction must lie in [0, 0.5), got {fraction}"
        )));
    }
    if !slice.is_all_finite() {
        return Err(Error::NonFinite("clip_outliers input".into()));
    }
    if fraction == 0.0 {
        return Ok(slice.clone());
    }
    let mut sorted = slice.values().to_vec();
    sorted.sort_by(f32::total_cmp);
    let lo = quantile(&sorted, fraction / 2.0) as f32;
    let hi = quantile(&sorted, 1.0 - fraction / 2.0) as f32;
    Ok(slice.map(|v| v.clamp(lo, hi)))
}

/// Per-slice standardization to zero mean and unit population std.
pub fn zscore(slice: &Slice, eps_std: f64) -> Slice {
    let n = slice.values().len() as f64;
    let mean = slice.values().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = slice
        .values()
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    if std < eps_std {
        return slice.map(|_| 0.0);
    }
    slice.map(|v| ((v as f64 - mean) / std) as f32)
}

/// Middle slice (`floor(n/2)`) of an axial stack.
pub fn central_slice(volume: &[Slice]) -> Result<&Slice> {
    volume
        .get(volume.len() / 2)
        .ok_or_else(|| Error::invalid("cannot take the central slice of an empty volume"))
}

/// Outlier clipping followed by z-scoring.
pub fn preprocess(slice: &Slice, config: &PreprocConfig) -> Result<Slice> {
    config.validate()?;
    let clipped = clip_outliers(slice, config.outlier_fraction)?;
    Ok(zscore(&clipped, config.eps_std))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_zero_fraction_and_constant_are_identity() {
        let s = Slice::from_fn(4, 4, |r, c| (r * 7 + c * 3) as f32);
        assert_eq!(clip_outliers(&s, 0.0).unwrap(), s);
        let k = Slice::from_fn(4, 4, |_, _| 2.5);
        assert_eq!(clip_outliers(&k, 0.05).unwrap(), k);
        assert!(clip_outliers(&s, 0.5).is_err());
    }

    #[test]
    fn clip_matches_enumerated_percentiles() {
        let s = Slice::from_fn(10, 10, |r, c| (r * 10 + c + 1) as f32);
        let out = clip_outliers(&s, 0.05).unwrap();
        // Oracle: sorted 1..=100, position p*(n-1) interpolated by hand.
        let interp = |p: f64| {
            let pos = p * 99.0;
            let lo = pos.floor();
            (lo + 1.0) + (pos - lo)
        };
        let (lo, hi) = (interp(0.025), interp(0.975));
        assert!((lo - 3.475).abs() < 1e-9 && (hi - 97.525).abs() < 1e-9);
        let min = out.values().iter().cloned().fold(f32::INFINITY, f32::min);
        let max = out.values().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        assert_eq!(min, lo as f32);
        assert_eq!(max, hi as f32);
    }

    #[test]
    fn zscore_cases() {
        let s = Slice::new(1, 2, vec![0.0, 2.0]).unwrap();
        assert_eq!(zscore(&s, 1e-6).values(), &[-1.0, 1.0]);
        let k = Slice::from_fn(3, 3, |_, _| 4.0);
        assert!(zscore(&k, 1e-6).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn central_slice_index() {
        let vol: Vec<Slice> = (0..5).map(|i| Slice::from_fn(1, 1, |_, _| i as f32)).collect();
        assert_eq!(central_slice(&vol).unwrap().values(), &[2.0]);
        assert_eq!(central_slice(&vol[..4]).unwrap().values(), &[2.0]);
        assert_eq!(central_slice(&vol[..1]).unwrap().values(), &[0.0]);
        assert!(central_slice(&[]).is_err());
    }
}

use crate::error::{Error, Result};

/// Smallest side length accepted for a stored scan.
pub const MIN_SCAN_SIDE: usize = 32;

/// A single 2D slice, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl Slice {
    /// Builds a slice, rejecting empty shapes, length mismatches and
    /// non-finite values. Scan-level size limits are checked separately by
    /// [`Slice::check_scan_size`].
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::ShapeMismatch(format!("empty slice {height}x{width}")));
        }
        if values.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width} slice needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("slice value at index {i}")));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    /// Builds a slice from a per-pixel function `f(row, col)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            values,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    /// Same shape, new values. Callers guarantee the length.
    pub(crate) fn with_values(&self, values: Vec<f32>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self {
            height: self.height,
            width: self.width,
            values,
        }
    }

    pub(crate) fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        self.with_values(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn check_scan_size(&self) -> Result<()> {
        if self.height < MIN_SCAN_SIDE || self.width < MIN_SCAN_SIDE {
            return Err(Error::ShapeMismatch(format!(
                "scan slices must be at least {MIN_SCAN_SIDE}x{MIN_SCAN_SIDE}, got {}x{}",
                self.height, self.width
            )));
        }
        Ok(())
    }

    pub fn is_all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Bilinear sample at fractional (row, col); taps outside the grid read 0.
    #[inline]
    pub fn sample_bilinear(&self, row: f64, col: f64) -> f32 {
        let r0 = row.floor();
        let c0 = col.floor();
        let fr = row - r0;
        let fc = col - c0;
        let (r0, c0) = (r0 as i64, c0 as i64);
        let tap = |r: i64, c: i64| -> f64 {
            if r < 0 || c < 0 || r >= self.height as i64 || c >= self.width as i64 {
                0.0
            } else {
                self.values[r as usize * self.width + c as usize] as f64
            }
        };
        let top = tap(r0, c0) * (1.0 - fc) + tap(r0, c0 + 1) * fc;
        let bottom = tap(r0 + 1, c0) * (1.0 - fc) + tap(r0 + 1, c0 + 1) * fc;
        (top * (1.0 - fr) + bottom * fr) as f32
    }
}

//! The six distortions and their Bernoulli composition.
//!
//! Intensity transforms (negative, shift, bias field) run first, then the
//! structural ones (rotation, black patches, elastic), always in that order.
//! Randomness lives entirely in [`sample_transform`]; applying a
//! [`TransformVector`] is a pure function.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Slice;
use crate::error::{Error, Result};

/// Enable probability per transform, in [`TransformKind`] order.
pub const ENABLE_PROB: [f64; 6] = [0.40, 0.40, 0.30, 1.00, 0.40, 0.30];

pub const MAX_SHIFT: f64 = 0.25;
pub const MAX_ANGLE_DEG: f64 = 3.0;
pub const MAX_PATCHES: usize = 3;
pub const PATCH_SIZE: usize = 10;
pub const ELASTIC_MAGNITUDE: (f64, f64) = (1.0, 2.0);
/// Bias field coefficient bound; coefficients are uniform in ±this.
pub const BIAS_COEFF_BOUND: f64 = 0.5;
/// Monomials of a bivariate cubic: 1, x, y, x², xy, y², x³, x²y, xy², y³.
pub const BIAS_COEFFS: usize = 10;
/// Control grid side for elastic deformation.
pub const ELASTIC_GRID: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    Negative = 0,
    IntensityShift = 1,
    BiasField = 2,
    Rotation = 3,
    BlackPatches = 4,
    Elastic = 5,
}

/// Concrete parameters. Fields of disabled transforms hold neutral values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub shift: f64,
    pub bias_coeffs: [f64; BIAS_COEFFS],
    pub angle_deg: f64,
    /// Patch top-left corners as fractions of the free range, in [0, 1).
    pub patches: Vec<(f64, f64)>,
    pub elastic_magnitude: f64,
    /// Control displacements `[d_row, d_col]`, row-major over the grid.
    pub elastic_grid: [[f64; 2]; ELASTIC_GRID * ELASTIC_GRID],
}

impl Default for TransformParams {
    fn default() -> Self {
        Self {
            shift: 0.0,
            bias_coeffs: [0.0; BIAS_COEFFS],
            angle_deg: 0.0,
            patches: Vec::new(),
            elastic_magnitude: 0.0,
            elastic_grid: [[0.0; 2]; ELASTIC_GRID * ELASTIC_GRID],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformVector {
    pub flags: [bool; 6],
    pub params: TransformParams,
}

impl TransformVector {
    /// Rotation by 0° and nothing else.
    pub fn identity() -> Self {
        let mut flags = [false; 6];
        flags[TransformKind::Rotation as usize] = true;
        Self {
            flags,
            params: TransformParams::default(),
        }
    }

    pub fn enabled(&self, kind: TransformKind) -> bool {
        self.flags[kind as usize]
    }
}

/// Draws a uniform point in the disc of radius `magnitude` for every control
/// point.
pub fn sample_elastic_grid<R: Rng + ?Sized>(
    magnitude: f64,
    rng: &mut R,
) -> [[f64; 2]; ELASTIC_GRID * ELASTIC_GRID] {
    let mut grid = [[0.0; 2]; ELASTIC_GRID * ELASTIC_GRID];
    for g in grid.iter_mut() {
        let radius = magnitude * rng.random::<f64>().sqrt();
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        *g = [radius * theta.sin(), radius * theta.cos()];
    }
    grid
}

/// Samples the enable flags, then parameters for each enabled transform.
pub fn sample_transform<R: Rng + ?Sized>(rng: &mut R) -> TransformVector {
    let mut flags = [false; 6];
    for (f, &p) in flags.iter_mut().zip(ENABLE_PROB.iter()) {
        *f = rng.random_bool(p);
    }
    let mut params = TransformParams::default();
    if flags[TransformKind::IntensityShift as usize] {
        params.shift = rng.random_range(-MAX_SHIFT..=MAX_SHIFT);
    }
    if flags[TransformKind::BiasField as usize] {
        for c in params.bias_coeffs.iter_mut() {
            *c = rng.random_range(-BIAS_COEFF_BOUND..=BIAS_COEFF_BOUND);
        }
    }
    if flags[TransformKind::Rotation as usize] {
        params.angle_deg = rng.random_range(-MAX_ANGLE_DEG..=MAX_ANGLE_DEG);
    }
    if flags[TransformKind::BlackPatches as usize] {
        let n = rng.random_range(1..=MAX_PATCHES);
        params.patches = (0..n)
            .map(|_| (rng.random::<f64>(), rng.random::<f64>()))
            .collect();
    }
    if flags[TransformKind::Elastic as usize] {
        let m = rng.random_range(ELASTIC_MAGNITUDE.0..=ELASTIC_MAGNITUDE.1);
        params.elastic_magnitude = m;
        params.elastic_grid = sample_elastic_grid(m, rng);
    }
    TransformVector { flags, params }
}

/// Applies every enabled transform in fixed order.
pub fn apply_transform(tv: &TransformVector, slice: &Slice) -> Slice {
    use TransformKind::*;
    let p = &tv.params;
    let mut out = slice.clone();
    if tv.enabled(Negative) {
        out = negative(&out);
    }
    if tv.enabled(IntensityShift) {
        out = intensity_shift(&out, p.shift);
    }
    if tv.enabled(BiasField) {
        out = bias_field(&out, &p.bias_coeffs).expect("fixed coefficient count");
    }
    if tv.enabled(Rotation) && p.angle_deg != 0.0 {
        out = rotate_unchecked(&out, p.angle_deg);
    }
    if tv.enabled(BlackPatches) && out.height() >= PATCH_SIZE && out.width() >= PATCH_SIZE {
        let corners: Vec<(usize, usize)> = p
            .patches
            .iter()
            .map(|&(fr, fc)| patch_corner(&out, fr, fc))
            .collect();
        out = black_patches_at(&out, &corners).expect("size checked");
    }
    if tv.enabled(Elastic) {
        out = elastic_with_grid(&out, &p.elastic_grid);
    }
    out
}

pub fn negative(slice: &Slice) -> Slice {
    slice.map(|v| -v)
}

pub fn intensity_shift(slice: &Slice, delta: f64) -> Slice {
    slice.map(|v| (v as f64 + delta) as f32)
}

fn normalized_coord(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        2.0 * i as f64 / (n - 1) as f64 - 1.0
    }
}

/// Cubic polynomial in normalized coordinates (`x` along columns, `y` along
/// rows, both in [-1, 1]).
pub fn bias_field_value(coeffs: &[f64], x: f64, y: f64) -> f64 {
    let monomials = [
        1.0,
        x,
        y,
        x * x,
        x * y,
        y * y,
        x * x * x,
        x * x * y,
        x * y * y,
        y * y * y,
    ];
    coeffs.iter().zip(monomials).map(|(c, m)| c * m).sum()
}

/// Multiplies by `exp(poly(x, y))`.
pub fn bias_field(slice: &Slice, coeffs: &[f64]) -> Result<Slice> {
    if coeffs.len() != BIAS_COEFFS {
        return Err(Error::invalid(format!(
            "bias field needs {BIAS_COEFFS} coefficients, got {}",
            coeffs.len()
        )));
    }
    let (h, w) = (slice.height(), slice.width());
    Ok(Slice::from_fn(h, w, |r, c| {
        let field = bias_field_value(coeffs, normalized_coord(c, w), normalized_coord(r, h)).exp();
        (slice.get(r, c) as f64 * field) as f32
    }))
}

/// Rotation about the image centre with bilinear sampling; outside reads 0.
pub fn rotate(slice: &Slice, angle_deg: f64) -> Result<Slice> {
    if !(angle_deg.abs() <= MAX_ANGLE_DEG) {
        return Err(Error::invalid(format!(
            "rotation angle must be within ±{MAX_ANGLE_DEG}°, got {angle_deg}"
        )));
    }
    Ok(rotate_unchecked(slice, angle_deg))
}

fn rotate_unchecked(slice: &Slice, angle_deg: f64) -> Slice {
    let (h, w) = (slice.height(), slice.width());
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let cr = (h as f64 - 1.0) / 2.0;
    let cc = (w as f64 - 1.0) / 2.0;
    Slice::from_fn(h, w, |r, c| {
        let y = r as f64 - cr;
        let x = c as f64 - cc;
        let xs = cos * x + sin * y;
        let ys = -sin * x + cos * y;
        slice.sample_bilinear(ys + cr, xs + cc)
    })
}

fn patch_corner(slice: &Slice, fr: f64, fc: f64) -> (usize, usize) {
    let rows = slice.height() - PATCH_SIZE + 1;
    let cols = slice.width() - PATCH_SIZE + 1;
    let r = ((fr * rows as f64) as usize).min(rows - 1);
    let c = ((fc * cols as f64) as usize).min(cols - 1);
    (r, c)
}

/// Zeroes 10×10 blocks with the given top-left corners.
pub fn black_patches_at(slice: &Slice, corners: &[(usize, usize)]) -> Result<Slice> {
    let (h, w) = (slice.height(), slice.width());
    if h < PATCH_SIZE || w < PATCH_SIZE {
        return Err(Error::invalid(format!(
            "black patches need at least {PATCH_SIZE}x{PATCH_SIZE} pixels"
        )));
    }
    let mut values = slice.values().to_vec();
    for &(top, left) in corners {
        if top + PATCH_SIZE > h || left + PATCH_SIZE > w {
            return Err(Error::invalid(format!("patch at ({top}, {left}) leaves the image")));
        }
        for r in top..top + PATCH_SIZE {
            values[r * w + left..r * w + left + PATCH_SIZE].fill(0.0);
        }
    }
    Ok(slice.with_values(values))
}

/// One to three randomly placed 10×10 zero patches.
pub fn black_patches<R: Rng + ?Sized>(slice: &Slice, rng: &mut R) -> Result<Slice> {
    if slice.height() < PATCH_SIZE || slice.width() < PATCH_SIZE {
        return Err(Error::invalid(format!(
            "black patches need at least {PATCH_SIZE}x{PATCH_SIZE} pixels"
        )));
    }
    let n = rng.random_range(1..=MAX_PATCHES);
    let corners: Vec<(usize, usize)> = (0..n)
        .map(|_| patch_corner(slice, rng.random::<f64>(), rng.random::<f64>()))
        .collect();
    black_patches_at(slice, &corners)
}

/// Displacement `[d_row, d_col]` at pixel (r, c) of an `h`×`w` image, the
/// bilinear upsampling of the control grid. Every value is a convex
/// combination of control vectors.
pub fn elastic_displacement(
    grid: &[[f64; 2]; ELASTIC_GRID * ELASTIC_GRID],
    h: usize,
    w: usize,
    r: usize,
    c: usize,
) -> [f64; 2] {
    let cells = (ELASTIC_GRID - 1) as f64;
    let to_grid = |i: usize, n: usize| {
        if n <= 1 {
            0.0
        } else {
            i as f64 * cells / (n - 1) as f64
        }
    };
    let gy = to_grid(r, h);
    let gx = to_grid(c, w);
    let y0 = (gy.floor() as usize).min(ELASTIC_GRID - 2);
    let x0 = (gx.floor() as usize).min(ELASTIC_GRID - 2);
    let fy = gy - y0 as f64;
    let fx = gx - x0 as f64;
    let at = |y: usize, x: usize| grid[y * ELASTIC_GRID + x];
    let mut d = [0.0; 2];
    for (k, dk) in d.iter_mut().enumerate() {
        let top = at(y0, x0)[k] * (1.0 - fx) + at(y0, x0 + 1)[k] * fx;
        let bottom = at(y0 + 1, x0)[k] * (1.0 - fx) + at(y0 + 1, x0 + 1)[k] * fx;
        *dk = top * (1.0 - fy) + bottom * fy;
    }
    d
}

/// Backward warp through the upsampled control-grid displacement field,
/// bilinear sampling, outside reads 0.
pub fn elastic_with_grid(slice: &Slice, grid: &[[f64; 2]; ELASTIC_GRID * ELASTIC_GRID]) -> Slice {
    let (h, w) = (slice.height(), slice.width());
    Slice::from_fn(h, w, |r, c| {
        let d = elastic_displacement(grid, h, w, r, c);
        if d == [0.0, 0.0] {
            slice.get(r, c)
        } else {
            slice.sample_bilinear(r as f64 + d[0], c as f64 + d[1])
        }
    })
}

pub fn elastic<R: Rng + ?Sized>(slice: &Slice, magnitude: f64, rng: &mut R) -> Result<Slice> {
    if !(ELASTIC_MAGNITUDE.0..=ELASTIC_MAGNITUDE.1).contains(&magnitude) {
        return Err(Error::invalid(format!(
            "elastic magnitude must lie in [1, 2], got {magnitude}"
        )));
    }
    let grid = sample_elastic_grid(magnitude, rng);
    Ok(elastic_with_grid(slice, &grid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn textured(h: usize, w: usize) -> Slice {
        Slice::from_fn(h, w, |r, c| 1.0 + ((r * 31 + c * 17) % 13) as f32 * 0.1)
    }

    #[test]
    fn bernoulli_rates_match_table() {
        let mut rng = seed::rng(&[42]);
        let n = 10_000;
        let mut counts = [0usize; 6];
        for _ in 0..n {
            let tv = sample_transform(&mut rng);
            assert!(tv.flags[3]);
            for (c, f) in counts.iter_mut().zip(tv.flags) {
                *c += f as usize;
            }
        }
        for (c, p) in counts.iter().zip(ENABLE_PROB) {
            assert!((*c as f64 / n as f64 - p).abs() <= 0.03);
        }
    }

    #[test]
    fn sampled_parameters_stay_in_range() {
        let mut rng = seed::rng(&[7]);
        for _ in 0..2000 {
            let tv = sample_transform(&mut rng);
            let p = &tv.params;
            assert!(p.shift.abs() <= 0.25);
            assert!(p.angle_deg.abs() <= 3.0);
            assert!(p.patches.len() <= 3);
            assert!(p.bias_coeffs.iter().all(|c| c.abs() <= 0.5));
            if tv.enabled(TransformKind::Elastic) {
                assert!((1.0..=2.0).contains(&p.elastic_magnitude));
                for g in p.elastic_grid {
                    assert!(g[0].hypot(g[1]) <= p.elastic_magnitude + 1e-12);
                }
            }
        }
        let a = sample_transform(&mut seed::rng(&[3]));
        let b = sample_transform(&mut seed::rng(&[3]));
        assert_eq!(a, b);
    }

    #[test]
    fn identity_vector_is_identity() {
        let s = textured(40, 36);
        assert_eq!(apply_transform(&TransformVector::identity(), &s), s);
        let mut tv = TransformVector::identity();
        tv.flags = [false, true, true, true, true, true];
        // All parameters neutral.
        let out = apply_transform(&tv, &s);
        for (a, b) in out.values().iter().zip(s.values()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn negative_cases() {
        let s = Slice::new(1, 2, vec![-0.5, 0.5]).unwrap();
        assert_eq!(negative(&s).values(), &[0.5, -0.5]);
        assert_eq!(negative(&negative(&s)), s);
        let z = Slice::zeros(3, 3);
        assert_eq!(negative(&z), z);
        let mut tv = TransformVector::identity();
        tv.flags[0] = true;
        assert_eq!(apply_transform(&tv, &s), negative(&s));
    }

    #[test]
    fn shift_cases() {
        let s = Slice::new(1, 1, vec![1.0]).unwrap();
        assert_eq!(intensity_shift(&s, 0.25).values(), &[1.25]);
        assert_eq!(intensity_shift(&s, 0.0), s);
    }

    #[test]
    fn bias_field_cases() {
        let s = textured(12, 9);
        assert_eq!(bias_field(&s, &[0.0; 10]).unwrap(), s);
        let mut c = [0.0; 10];
        c[0] = 1.0;
        let scaled = bias_field(&s, &c).unwrap();
        for (a, b) in scaled.values().iter().zip(s.values()) {
            assert!((a - b * std::f32::consts::E).abs() <= 1e-5 * a.abs());
        }
        let coeffs = [0.1, -0.2, 0.3, 0.05, -0.15, 0.25, -0.3, 0.2, 0.1, -0.05];
        let ones = Slice::from_fn(12, 9, |_, _| 1.0);
        let field = bias_field(&ones, &coeffs).unwrap();
        for (r, c, x, y) in [(0, 0, -1.0, -1.0), (0, 8, 1.0, -1.0), (11, 0, -1.0, 1.0), (11, 8, 1.0, 1.0)] {
            let direct: f64 = coeffs[0]
                + coeffs[1] * x
                + coeffs[2] * y
                + coeffs[3] * x * x
                + coeffs[4] * x * y
                + coeffs[5] * y * y
                + coeffs[6] * x * x * x
                + coeffs[7] * x * x * y
                + coeffs[8] * x * y * y
                + coeffs[9] * y * y * y;
            assert!((field.get(r, c) as f64 - direct.exp()).abs() < 1e-6);
        }
        assert!(bias_field(&s, &[0.0; 9]).is_err());
    }

    #[test]
    fn rotation_cases() {
        let s = textured(33, 33);
        assert_eq!(rotate(&s, 0.0).unwrap(), s);
        assert!(rotate(&s, 3.5).is_err());

        let mut dot = Slice::zeros(33, 33).into_values();
        dot[16 * 33 + 16] = 1.0;
        let dot = Slice::new(33, 33, dot).unwrap();
        for angle in [-3.0, -1.2, 0.7, 3.0] {
            let r = rotate(&dot, angle).unwrap();
            assert_eq!(r.get(16, 16), 1.0);
        }

        let smooth = Slice::from_fn(64, 64, |r, c| ((r as f32) * 0.1).sin() + ((c as f32) * 0.13).cos());
        let back = rotate(&rotate(&smooth, 3.0).unwrap(), -3.0).unwrap();
        let mut err = 0.0;
        let mut n = 0;
        for r in 8..56 {
            for c in 8..56 {
                err += (back.get(r, c) - smooth.get(r, c)).abs() as f64;
                n += 1;
            }
        }
        // Dynamic range of `smooth` is about 4.
        assert!(err / n as f64 / 4.0 < 0.05);
    }

    #[test]
    fn black_patch_cases() {
        let s = textured(40, 40);
        let one = black_patches_at(&s, &[(5, 7)]).unwrap();
        let changed: Vec<usize> = (0..s.values().len())
            .filter(|&i| one.values()[i] != s.values()[i])
            .collect();
        assert_eq!(changed.len(), 100);
        for i in changed {
            let (r, c) = (i / 40, i % 40);
            assert!((5..15).contains(&r) && (7..17).contains(&c));
        }
        let mut rng = seed::rng(&[1]);
        for _ in 0..500 {
            let out = black_patches(&s, &mut rng).unwrap();
            let n = out.values().iter().zip(s.values()).filter(|(a, b)| a != b).count();
            assert!((100..=300).contains(&n));
        }
        let a = black_patches(&s, &mut seed::rng(&[9])).unwrap();
        let b = black_patches(&s, &mut seed::rng(&[9])).unwrap();
        assert_eq!(a, b);
        assert!(black_patches(&Slice::zeros(9, 40), &mut rng).is_err());
    }

    #[test]
    fn elastic_cases() {
        let s = textured(32, 32);
        let zero = [[0.0; 2]; 16];
        assert_eq!(elastic_with_grid(&s, &zero), s);
        assert!(elastic(&s, 2.5, &mut seed::rng(&[0])).is_err());
        assert!(elastic(&s, 0.5, &mut seed::rng(&[0])).is_err());

        let mut rng = seed::rng(&[12]);
        for _ in 0..50 {
            let grid = sample_elastic_grid(2.0, &mut rng);
            for r in 0..32 {
                for c in 0..32 {
                    let d = elastic_displacement(&grid, 32, 32, r, c);
                    assert!(d[0].hypot(d[1]) <= 2.0 + 1e-12);
                }
            }
        }

        // Constant displacement applied to a linear ramp shifts it exactly.
        let ramp = Slice::from_fn(32, 32, |r, c| 0.05 * r as f32 + 0.03 * c as f32 + 1.0);
        let (dr, dc) = (0.6, -1.1);
        let out = elastic_with_grid(&ramp, &[[dr, dc]; 16]);
        for r in 2..30 {
            for c in 2..30 {
                let expected = 0.05 * (r as f64 + dr) + 0.03 * (c as f64 + dc) + 1.0;
                assert!((out.get(r, c) as f64 - expected).abs() < 1e-5);
            }
        }
    }
}

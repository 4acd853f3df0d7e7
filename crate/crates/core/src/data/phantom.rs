//! Procedural brain phantoms.
//!
//! A subject is a handful of morphological parameters; a scan renders them
//! at a given age. Geometry is defined on a 64-pixel reference grid and
//! scaled to the requested size, so a phenotype is independent of the
//! output resolution.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::slice::Slice;
use crate::error::{Error, Result};
use crate::seed::{self, stream};

/// Side length of the grid phenotype geometry is expressed in.
pub const PHANTOM_REF_SIZE: f64 = 64.0;

/// Minimum render size.
pub const MIN_RENDER_SIZE: usize = 64;

const NOISE_STD: f64 = 0.02;

const INTENSITY_SKULL: f64 = 0.85;
const INTENSITY_CSF: f64 = 0.2;
const INTENSITY_GREY: f64 = 0.55;
const INTENSITY_WHITE: f64 = 0.72;
const INTENSITY_VENTRICLE: f64 = 0.1;
const FOLD_AMPLITUDE: f64 = 0.15;

/// Per-acquisition pose and field ranges.
const POSE_MAX_DEG: f64 = 2.0;
const POSE_MAX_SHIFT: f64 = 0.75;
const FIELD_MAX_COEFF: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectPhenotype {
    /// Skull semi-axes (horizontal, vertical) in reference-grid pixels.
    pub skull_axes: (f64, f64),
    pub ventricle_scale: f64,
    /// Ventricle rotation in radians.
    pub ventricle_angle: f64,
    pub cortex_fold_freq: f64,
    pub cortex_fold_phase: f64,
    /// Left/right ventricle size imbalance.
    pub asymmetry: f64,
    /// Fractional ventricle growth per 365 days.
    pub aging_rate: f64,
}

impl SubjectPhenotype {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.skull_axes.0,
            self.skull_axes.1,
            self.ventricle_scale,
            self.ventricle_angle,
            self.cortex_fold_freq,
            self.cortex_fold_phase,
            self.asymmetry,
            self.aging_rate,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("phenotype field".into()));
        }
        let max_axis = PHANTOM_REF_SIZE / 2.0 - 0.5 - 4.0;
        let axes_ok = [self.skull_axes.0, self.skull_axes.1]
            .iter()
            .all(|&a| a > 0.0 && a <= max_axis);
        if !axes_ok
            || !(0.5..=1.5).contains(&self.ventricle_scale)
            || !(-0.2..=0.2).contains(&self.asymmetry)
            || self.aging_rate < 0.0
        {
            return Err(Error::invalid(format!("phenotype out of range: {self:?}")));
        }
        Ok(())
    }
}

/// Deterministic phenotype for `seed`.
pub fn generate_subject(seed: u64) -> SubjectPhenotype {
    let mut rng = seed::rng(&[stream::SUBJECT, seed]);
    SubjectPhenotype {
        skull_axes: (rng.random_range(20.0..25.0), rng.random_range(23.0..27.0)),
        ventricle_scale: rng.random_range(0.5..=1.5),
        ventricle_angle: rng.random_range(-0.35..0.35),
        cortex_fold_freq: rng.random_range(5.0..12.0),
        cortex_fold_phase: rng.random_range(0.0..2.0 * PI),
        asymmetry: rng.random_range(-0.2..=0.2),
        aging_rate: rng.random_range(0.02..0.08),
    }
}

/// Whether (p, q) in the ventricle frame falls inside either lateral horn.
fn in_ventricles(p: f64, q: f64, ph: &SubjectPhenotype, growth: f64) -> bool {
    let s = ph.ventricle_scale;
    let offset = 3.2 * s;
    let horn = |centre: f64, size: f64| {
        let ax = 2.2 * s * growth * size;
        let ay = 6.0 * s * growth * size;
        let dp = (p - centre) / ax;
        let dq = q / ay;
        dp * dp + dq * dq <= 1.0
    };
    horn(-offset, 1.0 + ph.asymmetry) || horn(offset, 1.0 - ph.asymmetry)
}

/// Noise-free intensity at reference-grid coordinates (u right, v down).
fn intensity(u: f64, v: f64, ph: &SubjectPhenotype, growth: f64) -> f64 {
    let (a, b) = ph.skull_axes;
    let rho = ((u / a).powi(2) + (v / b).powi(2)).sqrt();
    if rho > 1.0 {
        return 0.0;
    }
    if rho > 0.9 {
        return INTENSITY_SKULL;
    }
    if rho > 0.84 {
        return INTENSITY_CSF;
    }
    let (sin_t, cos_t) = ph.ventricle_angle.sin_cos();
    let p = cos_t * u + sin_t * v;
    let q = -sin_t * u + cos_t * v;
    if in_ventricles(p, q, ph, growth) {
        return INTENSITY_VENTRICLE;
    }
    if rho > 0.55 {
        let theta = v.atan2(u);
        INTENSITY_GREY + FOLD_AMPLITUDE * (ph.cortex_fold_freq * theta + ph.cortex_fold_phase).sin()
    } else {
        INTENSITY_WHITE
    }
}

/// Scan-to-scan variation of one acquisition: residual head pose after
/// alignment and a smooth multiplicative scanner field.
#[derive(Debug, Clone, PartialEq)]
pub struct Acquisition {
    pub angle_rad: f64,
    /// Head offset in reference-grid pixels.
    pub shift: (f64, f64),
    /// Coefficients of `u, v, uv, u², v²` (coordinates scaled to about
    /// [-1, 1]) in the log-field.
    pub field: [f64; 5],
}

impl Acquisition {
    pub fn sample(noise_seed: u64) -> Self {
        let mut rng = seed::rng(&[stream::NOISE, noise_seed, 1]);
        let max_angle = POSE_MAX_DEG.to_radians();
        Self {
            angle_rad: rng.random_range(-max_angle..=max_angle),
            shift: (
                rng.random_range(-POSE_MAX_SHIFT..=POSE_MAX_SHIFT),
                rng.random_range(-POSE_MAX_SHIFT..=POSE_MAX_SHIFT),
            ),
            field: std::array::from_fn(|_| rng.random_range(-FIELD_MAX_COEFF..=FIELD_MAX_COEFF)),
        }
    }

    fn field_at(&self, u: f64, v: f64) -> f64 {
        let (x, y) = (u / (PHANTOM_REF_SIZE / 2.0), v / (PHANTOM_REF_SIZE / 2.0));
        let f = &self.field;
        (f[0] * x + f[1] * y + f[2] * x * y + f[3] * x * x + f[4] * y * y).exp()
    }
}

/// Renders a `size`×`size` slice of `phenotype` at `age_days`.
///
/// Values lie in [0, 1]: background 0, a bright skull ring, cortical folds,
/// white matter and dark lateral ventricles whose linear size grows by
/// `aging_rate` per year. `noise_seed` fixes the acquisition (see
/// [`Acquisition`]) and the Gaussian noise (std 0.02); the result is
/// clamped back to [0, 1].
pub fn render_scan(
    phenotype: &SubjectPhenotype,
    age_days: i64,
    noise_seed: u64,
    size: usize,
) -> Result<Slice> {
    if size < MIN_RENDER_SIZE {
        return Err(Error::invalid(format!(
            "render size must be at least {MIN_RENDER_SIZE}, got {size}"
        )));
    }
    phenotype.validate()?;
    let growth = 1.0 + phenotype.aging_rate * age_days.max(0) as f64 / 365.0;
    let scale = size as f64 / PHANTOM_REF_SIZE;
    let centre = (size as f64 - 1.0) / 2.0;
    let acq = Acquisition::sample(noise_seed);
    let (sin_a, cos_a) = acq.angle_rad.sin_cos();
    let mut rng = seed::rng(&[stream::NOISE, noise_seed]);
    let noise = Normal::new(0.0, NOISE_STD).expect("valid normal");
    Ok(Slice::from_fn(size, size, |r, c| {
        let x = (c as f64 - centre) / scale - acq.shift.0;
        let y = (r as f64 - centre) / scale - acq.shift.1;
        let u = cos_a * x + sin_a * y;
        let v = -sin_a * x + cos_a * y;
        let clean = intensity(u, v, phenotype, growth) * acq.field_at(u, v);
        (clean + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ventricle_pixels(s: &Slice) -> usize {
        // Dark pixels in the central disc: ventricles are the only dark
        // structure well inside the brain.
        let c = (s.width() as f64 - 1.0) / 2.0;
        let radius = s.width() as f64 * 0.25;
        let mut n = 0;
        for r in 0..s.height() {
            for col in 0..s.width() {
                let d = ((r as f64 - c).powi(2) + (col as f64 - c).powi(2)).sqrt();
                if d < radius && s.get(r, col) < 0.3 {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn subject_is_deterministic() {
        assert_eq!(generate_subject(7), generate_subject(7));
        assert_ne!(generate_subject(1), generate_subject(2));
    }

    #[test]
    fn phenotype_sweep_satisfies_invariants() {
        for seed in 0..1000 {
            let ph = generate_subject(seed);
            ph.validate().unwrap();
            assert!(ph.aging_rate > 0.0);
        }
    }

    #[test]
    fn render_is_deterministic_and_bounded() {
        let ph = generate_subject(3);
        let a = render_scan(&ph, 100, 9, 64).unwrap();
        let b = render_scan(&ph, 100, 9, 64).unwrap();
        assert_eq!(a, b);
        assert!(a.values().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(render_scan(&ph, 0, 0, 63).is_err());
    }

    #[test]
    fn ventricles_grow_with_age() {
        for seed in 0..20 {
            let ph = generate_subject(seed);
            let young = render_scan(&ph, 0, 1, 96).unwrap();
            let old = render_scan(&ph, 730, 1, 96).unwrap();
            assert!(
                ventricle_pixels(&old) > ventricle_pixels(&young),
                "seed {seed}: {} vs {}",
                ventricle_pixels(&old),
                ventricle_pixels(&young)
            );
        }
    }

    #[test]
    fn noise_seed_changes_little() {
        let ph = generate_subject(11);
        let a = render_scan(&ph, 365, 1, 96).unwrap();
        let b = render_scan(&ph, 365, 2, 96).unwrap();
        assert_ne!(a, b);
        let mad: f64 = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y).abs() as f64)
            .sum::<f64>()
            / a.values().len() as f64;
        assert!(mad < 0.1, "mean abs diff {mad}");
    }
}

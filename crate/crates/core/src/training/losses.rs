//! The two training objectives and their combination.
//!
//! Kernels take `b`×`s` f32 embedding matrices (row per sample) and compute
//! in f64; the backward functions return f64 gradients that the graph casts
//! back to f32.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Added to the per-dimension std before dividing.
pub const STANDARDIZE_EPS: f64 = 1e-5;
/// Lower bound on embedding norms inside the cosine similarity.
pub const NORM_EPS: f64 = 1e-12;

/// (anchor, positive, negative) row indices into an embedding batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

fn matrix_dims(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match *t.shape() {
        [b, s] => Ok((b, s)),
        _ => Err(Error::ShapeMismatch(format!(
            "{what} must be 2D, got {:?}",
            t.shape()
        ))),
    }
}

/// Column-standardized copy of a `b`×`s` matrix.
struct Standardized {
    b: usize,
    s: usize,
    z: Vec<f64>,
    centered: Vec<f64>,
    std: Vec<f64>,
}

fn standardize(e: &[f32], b: usize, s: usize) -> Standardized {
    let mut mean = vec![0.0f64; s];
    for k in 0..b {
        for j in 0..s {
            mean[j] += e[k * s + j] as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= b as f64);
    let mut centered = vec![0.0f64; b * s];
    let mut var = vec![0.0f64; s];
    for k in 0..b {
        for j in 0..s {
            let c = e[k * s + j] as f64 - mean[j];
            centered[k * s + j] = c;
            var[j] += c * c;
        }
    }
    let std: Vec<f64> = var.iter().map(|v| (v / b as f64).sqrt()).collect();
    let mut z = centered.clone();
    for k in 0..b {
        for j in 0..s {
            z[k * s + j] /= std[j] + STANDARDIZE_EPS;
        }
    }
    Standardized {
        b,
        s,
        z,
        centered,
        std,
    }
}

impl Standardized {
    /// Pulls a gradient w.r.t. the standardized values back to the input.
    fn backward(&self, dz: &[f64]) -> Vec<f64> {
        let (b, s) = (self.b, self.s);
        let mut dx = vec![0.0; b * s];
        for j in 0..s {
            let d = self.std[j] + STANDARDIZE_EPS;
            let mut sum_dz = 0.0;
            let mut sum_dz_c = 0.0;
            for k in 0..b {
                sum_dz += dz[k * s + j];
                sum_dz_c += dz[k * s + j] * self.centered[k * s + j];
            }
            let mean_dz = sum_dz / b as f64;
            let std_term = if self.std[j] > 0.0 {
                sum_dz_c / (b as f64 * self.std[j] * d * d)
            } else {
                0.0
            };
            for k in 0..b {
                dx[k * s + j] = (dz[k * s + j] - mean_dz) / d - self.centered[k * s + j] * std_term;
            }
        }
        dx
    }
}

/// Cross-correlation matrix of two embedding batches: both are standardized
/// per dimension over the batch, then `C = Z1ᵀ Z2 / b`. Returns `s`×`s`
/// row-major.
pub fn cross_correlation(e1: &Tensor, e2: &Tensor) -> Result<Vec<f64>> {
    Ok(CrossCorrelation::new(e1, e2)?.c)
}

/// Cross-correlation with the intermediate state needed for gradients.
pub(crate) struct CrossCorrelation {
    z1: Standardized,
    z2: Standardized,
    pub c: Vec<f64>,
}

impl CrossCorrelation {
    pub fn new(e1: &Tensor, e2: &Tensor) -> Result<Self> {
        let (b, s) = matrix_dims(e1, "E1")?;
        if e2.shape() != e1.shape() {
            return Err(Error::ShapeMismatch(format!(
                "E1 {:?} and E2 {:?} differ",
                e1.shape(),
                e2.shape()
            )));
        }
        if b < 2 {
            return Err(Error::invalid("cross-correlation needs a batch of at least 2"));
        }
        let z1 = standardize(e1.data(), b, s);
        let z2 = standardize(e2.data(), b, s);
        let mut c = vec![0.0; s * s];
        for k in 0..b {
            let r1 = &z1.z[k * s..(k + 1) * s];
            let r2 = &z2.z[k * s..(k + 1) * s];
            for (i, &a) in r1.iter().enumerate() {
                let row = &mut c[i * s..(i + 1) * s];
                for (cij, &bj) in row.iter_mut().zip(r2) {
                    *cij += a * bj;
                }
            }
        }
        c.iter_mut().for_each(|v| *v /= b as f64);
        Ok(Self { z1, z2, c })
    }

    /// Gradients w.r.t. E1 and E2 given `dL/dC`.
    pub fn backward(&self, dc: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (b, s) = (self.z1.b, self.z1.s);
        let mut dz1 = vec![0.0; b * s];
        let mut dz2 = vec![0.0; b * s];
        for k in 0..b {
            let r1 = &self.z1.z[k * s..(k + 1) * s];
            let r2 = &self.z2.z[k * s..(k + 1) * s];
            for i in 0..s {
                let dci = &dc[i * s..(i + 1) * s];
                let mut acc = 0.0;
                for j in 0..s {
                    acc += dci[j] * r2[j];
                    dz2[k * s + j] += dci[j] * r1[i];
                }
                dz1[k * s + i] = acc;
            }
        }
        let inv_b = 1.0 / b as f64;
        dz1.iter_mut().chain(dz2.iter_mut()).for_each(|v| *v *= inv_b);
        (self.z1.backward(&dz1), self.z2.backward(&dz2))
    }
}

fn check_square(c: &[f64]) -> Result<usize> {
    let s = (c.len() as f64).sqrt().round() as usize;
    if s * s != c.len() || s == 0 {
        return Err(Error::ShapeMismatch(format!(
            "cross-correlation with {} entries is not square",
            c.len()
        )));
    }
    Ok(s)
}

/// `Σᵢ (1 − cᵢᵢ)² + λ Σᵢ Σ_{j≠i} cᵢⱼ²` for a row-major square `C`.
pub fn barlow_twins_loss(c: &[f64], lambda: f64) -> Result<f64> {
    let s = check_square(c)?;
    let mut on = 0.0;
    let mut off = 0.0;
    for i in 0..s {
        for j in 0..s {
            let v = c[i * s + j];
            if i == j {
                on += (1.0 - v) * (1.0 - v);
            } else {
                off += v * v;
            }
        }
    }
    Ok(on + lambda * off)
}

pub fn barlow_twins_grad(c: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let s = check_square(c)?;
    Ok((0..s * s)
        .map(|idx| {
            let v = c[idx];
            if idx / s == idx % s {
                -2.0 * (1.0 - v)
            } else {
                2.0 * lambda * v
            }
        })
        .collect())
}

/// `ln(1 + eˣ)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-triplet InfoNCE from the two cosine similarities:
/// `−log(e^{sp/τ} / (e^{sp/τ} + e^{sn/τ})) = softplus((sn − sp)/τ)`.
pub fn info_nce_from_similarities(sim_pos: f64, sim_neg: f64, tau: f64) -> f64 {
    softplus((sim_neg - sim_pos) / tau)
}

fn unit_rows(e: &[f32], b: usize, s: usize) -> (Vec<f64>, Vec<f64>) {
    let mut units = vec![0.0; b * s];
    let mut norms = vec![0.0; b];
    for k in 0..b {
        let row = &e[k * s..(k + 1) * s];
        let n = row
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
            .max(NORM_EPS);
        norms[k] = n;
        for j in 0..s {
            units[k * s + j] = row[j] as f64 / n;
        }
    }
    (units, norms)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_triplets(triplets: &[Triplet], b: usize, tau: f64) -> Result<()> {
    if triplets.is_empty() {
        return Err(Error::invalid("InfoNCE needs at least one triplet"));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    if let Some(t) = triplets
        .iter()
        .find(|t| t.anchor >= b || t.positive >= b || t.negative >= b)
    {
        return Err(Error::invalid(format!("triplet {t:?} out of range for batch {b}")));
    }
    Ok(())
}

/// Mean InfoNCE over mined triplets with cosine similarity.
pub fn info_nce_loss(embeddings: &Tensor, triplets: &[Triplet], tau: f64) -> Result<f64> {
    let (b, s) = matrix_dims(embeddings, "embeddings")?;
    check_triplets(triplets, b, tau)?;
    let (u, _) = unit_rows(embeddings.data(), b, s);
    let row = |i: usize| &u[i * s..(i + 1) * s];
    let total: f64 = triplets
        .iter()
        .map(|t| {
            let sp = dot(row(t.anchor), row(t.positive));
            let sn = dot(row(t.anchor), row(t.negative));
            info_nce_from_similarities(sp, sn, tau)
        })
        .sum();
    Ok(total / triplets.len() as f64)
}

/// Gradient of [`info_nce_loss`] w.r.t. the embedding matrix.
pub fn info_nce_grad(embeddings: &Tensor, triplets: &[Triplet], tau: f64) -> Result<Vec<f64>> {
    let (b, s) = matrix_dims(embeddings, "embeddings")?;
    check_triplets(triplets, b, tau)?;
    let (u, norms) = unit_rows(embeddings.data(), b, s);
    let row = |i: usize| &u[i * s..(i + 1) * s];
    let mut grad = vec![0.0; b * s];
    let scale = 1.0 / triplets.len() as f64;
    // d cos(x, y) / dx = (û_y − cos·û_x) / |x|
    let add_cos_grad = |grad: &mut [f64], x: usize, y: usize, cos: f64, w: f64| {
        for j in 0..s {
            grad[x * s + j] += w * (u[y * s + j] - cos * u[x * s + j]) / norms[x];
        }
    };
    for t in triplets {
        let sp = dot(row(t.anchor), row(t.positive));
        let sn = dot(row(t.anchor), row(t.negative));
        let sig = sigmoid((sn - sp) / tau) * scale / tau;
        add_cos_grad(&mut grad, t.anchor, t.positive, sp, -sig);
        add_cos_grad(&mut grad, t.positive, t.anchor, sp, -sig);
        add_cos_grad(&mut grad, t.anchor, t.negative, sn, sig);
        add_cos_grad(&mut grad, t.negative, t.anchor, sn, sig);
    }
    Ok(grad)
}

/// `β·L_BT + (1 − β)·L_C`.
pub fn combined_loss(l_bt: f64, l_c: f64, beta: f64) -> f64 {
    beta * l_bt + (1.0 - beta) * l_c
}

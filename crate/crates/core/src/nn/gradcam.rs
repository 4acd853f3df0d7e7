//! Grad-CAM saliency averaged over every representation element.

use super::graph::{Graph, Mode};
use super::model::{batch_tensor, encoder_forward};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::data::Slice;
use crate::error::Result;

/// Saliency over the input grid, normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl SaliencyMap {
    pub fn into_slice(self) -> Slice {
        Slice::new(self.height, self.width, self.values).expect("finite map")
    }
}

/// Bilinear resize with half-pixel centres; edges clamp.
pub fn upsample_bilinear(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let axis = |dst: usize, n_in: usize, n_out: usize| {
        let pos = ((dst as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0);
        let lo = (pos.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, pos - lo as f64)
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for r in 0..out_h {
        let (r0, r1, fr) = axis(r, h, out_h);
        for c in 0..out_w {
            let (c0, c1, fc) = axis(c, w, out_w);
            let top = src[r0 * w + c0] * (1.0 - fc) + src[r0 * w + c1] * fc;
            let bottom = src[r1 * w + c0] * (1.0 - fc) + src[r1 * w + c1] * fc;
            out.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    out
}

/// Min-max scaling; an all-zero map stays zero and a constant positive map
/// becomes all ones.
fn normalize(map: &[f64]) -> Vec<f32> {
    let max = map.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = map.iter().cloned().fold(f64::INFINITY, f64::min);
    if max <= 0.0 {
        return vec![0.0; map.len()];
    }
    let range = max - min;
    if range <= f64::EPSILON * max {
        return vec![1.0; map.len()];
    }
    map.iter().map(|&v| ((v - min) / range) as f32).collect()
}

pub fn gradcam(store: &ParamStore, slice: &Slice) -> Result<SaliencyMap> {
    let mut g = Graph::tracing_all(store, Mode::Eval);
    let x = g.input(batch_tensor([slice])?);
    let out = encoder_forward(&mut g, x)?;
    let act = g.value(out.last_activation).clone();
    let (c, h, w) = (act.dim(1), act.dim(2), act.dim(3));
    let hw = h * w;
    let z = g.value(out.repr).len();
    let (out_h, out_w) = (slice.height(), slice.width());
    let mut total = vec![0.0f64; out_h * out_w];
    for i in 0..z {
        let mut seed = Tensor::zeros(&[1, z]);
        seed.data_mut()[i] = 1.0;
        let grads = g.backward_from(out.repr, seed, Some(out.last_activation))?;
        let Some(da) = grads.get(out.last_activation) else {
            continue;
        };
        let weights: Vec<f64> = da
            .data()
            .chunks_exact(hw)
            .map(|plane| plane.iter().map(|&v| v as f64).sum::<f64>() / hw as f64)
            .collect();
        let mut cam = vec![0.0f64; hw];
        for (ch, &wc) in weights.iter().enumerate().take(c) {
            for (acc, &a) in cam.iter_mut().zip(&act.data()[ch * hw..(ch + 1) * hw]) {
                *acc += wc * a as f64;
            }
        }
        cam.iter_mut().for_each(|v| *v = v.max(0.0));
        for (t, v) in total.iter_mut().zip(upsample_bilinear(&cam, h, w, out_h, out_w)) {
            *t += v;
        }
    }
    total.iter_mut().for_each(|v| *v /= z as f64);
    Ok(SaliencyMap {
        height: out_h,
        width: out_w,
        values: normalize(&total),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsample_identity_and_constant() {
        let src = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(upsample_bilinear(&src, 2, 2, 2, 2), src.to_vec());
        let up = upsample_bilinear(&[5.0; 4], 2, 2, 7, 3);
        assert!(up.iter().all(|&v| (v - 5.0).abs() < 1e-12));
    }

    #[test]
    fn upsample_half_pixel_centres() {
        // 1×2 → 1×4: centres at -0.25, 0.25, 0.75, 1.25 in source pixels
        let up = upsample_bilinear(&[0.0, 1.0], 1, 2, 1, 4);
        assert_eq!(up, vec![0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn normalization_rules() {
        assert_eq!(normalize(&[0.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(normalize(&[2.0, 2.0]), vec![1.0, 1.0]);
        assert_eq!(normalize(&[1.0, 3.0, 2.0]), vec![0.0, 1.0, 0.5]);
    }
}

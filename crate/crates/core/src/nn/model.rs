//! Encoder ℛ (conv blocks → pooling → affine) and projection head P.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Mode, Var};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::data::Slice;
use crate::error::{Error, Result};
use crate::seed;

/// Samples per inference forward pass.
const INFER_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub n_blocks: usize,
    pub channels: Vec<usize>,
    /// Representation (fingerprint) size.
    pub repr_dim: usize,
    /// Embedding size fed to the losses.
    pub proj_dim: usize,
    pub frozen_blocks: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            n_blocks: 4,
            channels: vec![16, 32, 64, 128],
            repr_dim: 64,
            proj_dim: 256,
            frozen_blocks: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 {
            return Err(Error::invalid("n_blocks must be at least 1"));
        }
        if self.channels.len() != self.n_blocks {
            return Err(Error::invalid(format!(
                "{} channel counts for {} blocks",
                self.channels.len(),
                self.n_blocks
            )));
        }
        if self.channels.contains(&0) {
            return Err(Error::invalid("channel counts must be positive"));
        }
        if self.repr_dim < 8 {
            return Err(Error::invalid("repr_dim must be at least 8"));
        }
        if self.proj_dim < self.repr_dim {
            return Err(Error::invalid("proj_dim must be at least repr_dim"));
        }
        if self.frozen_blocks > self.n_blocks {
            return Err(Error::invalid("frozen_blocks exceeds n_blocks"));
        }
        Ok(())
    }
}

pub fn block_prefix(i: usize) -> String {
    format!("block{i}")
}

fn uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f32).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product")
}

fn insert_norm(store: &mut ParamStore, prefix: &str, c: usize) -> Result<()> {
    store.insert(format!("{prefix}.weight"), Tensor::full(&[c], 1.0), true)?;
    store.insert(format!("{prefix}.bias"), Tensor::zeros(&[c]), true)?;
    store.insert(format!("{prefix}.running_mean"), Tensor::zeros(&[c]), true)?;
    store.insert(format!("{prefix}.running_var"), Tensor::full(&[c], 1.0), true)?;
    Ok(())
}

/// Fresh parameters; blocks `1..=frozen_blocks` come back frozen.
pub fn init_params(cfg: &EncoderConfig, seed_value: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = seed::rng(&[seed_value, seed::stream::INIT]);
    let mut store = ParamStore::new();
    let mut cin = 1;
    for (i, &cout) in (1..=cfg.n_blocks).zip(&cfg.channels) {
        let p = block_prefix(i);
        store.insert(format!("{p}.conv.weight"), uniform(&[cout, cin, 3, 3], cin * 9, &mut rng), false)?;
        insert_norm(&mut store, &format!("{p}.bn"), cout)?;
        cin = cout;
    }
    let (z, s) = (cfg.repr_dim, cfg.proj_dim);
    store.insert("encoder.fc.weight", uniform(&[z, cin], cin, &mut rng), false)?;
    store.insert("encoder.fc.bias", Tensor::zeros(&[z]), true)?;
    store.insert("projector.fc1.weight", uniform(&[s, z], z, &mut rng), false)?;
    store.insert("projector.fc1.bias", Tensor::zeros(&[s]), true)?;
    insert_norm(&mut store, "projector.bn", s)?;
    store.insert("projector.fc2.weight", uniform(&[s, s], s, &mut rng), false)?;
    store.insert("projector.fc2.bias", Tensor::zeros(&[s]), true)?;
    freeze_blocks(&mut store, cfg.frozen_blocks)?;
    Ok(store)
}

/// Number of consecutive `block{i}` conv layers present, from 1.
pub fn block_count(store: &ParamStore) -> usize {
    (1..)
        .take_while(|&i| store.get(&format!("{}.conv.weight", block_prefix(i))).is_some())
        .count()
}

/// Representation size of a stored encoder.
pub fn repr_dim(store: &ParamStore) -> Result<usize> {
    Ok(store.tensor("encoder.fc.weight")?.dim(0))
}

/// Marks every parameter of blocks `1..=k` frozen, running statistics
/// included.
pub fn freeze_blocks(store: &mut ParamStore, k: usize) -> Result<()> {
    let n = block_count(store);
    if k > n {
        return Err(Error::invalid(format!("cannot freeze {k} of {n} blocks")));
    }
    for i in 1..=k {
        store.freeze_prefix(&format!("{}.", block_prefix(i)));
    }
    Ok(())
}

/// Stacks equally sized slices into a `[n, 1, h, w]` tensor.
pub fn batch_tensor<'a>(slices: impl IntoIterator<Item = &'a Slice>) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut dims = None;
    let mut n = 0;
    for s in slices {
        let d = (s.height(), s.width());
        if *dims.get_or_insert(d) != d {
            return Err(Error::ShapeMismatch(format!(
                "slice {}x{} in a batch of {:?}",
                d.0, d.1, dims
            )));
        }
        data.extend_from_slice(s.values());
        n += 1;
    }
    let (h, w) = dims.ok_or_else(|| Error::invalid("empty batch"))?;
    Tensor::new(vec![n, 1, h, w], data)
}

/// Nodes of interest from one encoder pass.
#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    /// `[n, repr_dim]`.
    pub repr: Var,
    /// Rectified output of the last conv block, `[n, c, h', w']`.
    pub last_activation: Var,
}

pub fn encoder_forward(g: &mut Graph<'_>, x: Var) -> Result<EncoderOutput> {
    let n_blocks = block_count(g.store());
    if n_blocks == 0 {
        return Err(Error::NotFound("encoder blocks in parameter store".into()));
    }
    let mut h = x;
    for i in 1..=n_blocks {
        let p = block_prefix(i);
        let w = g.param(&format!("{p}.conv.weight"))?;
        let y = g.conv2d(h, w, 2, 1)?;
        let y = g.batch_norm(y, &format!("{p}.bn"))?;
        h = g.relu(y);
    }
    let pooled = g.global_avg_pool(h)?;
    let w = g.param("encoder.fc.weight")?;
    let b = g.param("encoder.fc.bias")?;
    let repr = g.linear(pooled, w, Some(b))?;
    Ok(EncoderOutput {
        repr,
        last_activation: h,
    })
}

pub fn projector_forward(g: &mut Graph<'_>, repr: Var) -> Result<Var> {
    let w1 = g.param("projector.fc1.weight")?;
    let b1 = g.param("projector.fc1.bias")?;
    let h = g.linear(repr, w1, Some(b1))?;
    let h = g.batch_norm(h, "projector.bn")?;
    let h = g.relu(h);
    let w2 = g.param("projector.fc2.weight")?;
    let b2 = g.param("projector.fc2.bias")?;
    g.linear(h, w2, Some(b2))
}

/// Inference-mode representations, one row per slice.
pub fn represent(store: &ParamStore, slices: &[Slice]) -> Result<Tensor> {
    represent_refs(store, &slices.iter().collect::<Vec<_>>())
}

pub fn represent_refs(store: &ParamStore, slices: &[&Slice]) -> Result<Tensor> {
    if slices.is_empty() {
        return Err(Error::invalid("no slices to embed"));
    }
    let mut rows = Vec::new();
    for chunk in slices.chunks(INFER_CHUNK) {
        let mut g = Graph::new(store, Mode::Eval);
        let x = g.input(batch_tensor(chunk.iter().copied())?);
        let out = encoder_forward(&mut g, x)?;
        rows.extend_from_slice(g.value(out.repr).data());
    }
    let z = rows.len() / slices.len();
    Tensor::new(vec![slices.len(), z], rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> EncoderConfig {
        EncoderConfig {
            n_blocks: 2,
            channels: vec![4, 8],
            repr_dim: 8,
            proj_dim: 16,
            frozen_blocks: 0,
        }
    }

    fn slice(seed_value: u64) -> Slice {
        let mut rng = seed::rng(&[seed_value]);
        Slice::from_fn(32, 32, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn config_validation() {
        assert!(EncoderConfig::default().validate().is_ok());
        let mut c = small();
        c.repr_dim = 4;
        assert!(c.validate().is_err());
        let mut c = small();
        c.proj_dim = 7;
        assert!(c.validate().is_err());
        let mut c = small();
        c.channels.push(3);
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_repr() {
        let store = init_params(&small(), 3).unwrap();
        let zero = Slice::zeros(32, 32);
        let r = represent(&store, &[zero]).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inference_rows_are_independent() {
        let store = init_params(&small(), 3).unwrap();
        let a = slice(1);
        let b = slice(2);
        let single = represent(&store, std::slice::from_ref(&a)).unwrap();
        let same = represent(&store, &[a.clone(), a.clone()]).unwrap();
        assert_eq!(same.row(0), same.row(1));
        assert_eq!(same.row(0), single.row(0));
        let dup = represent(&store, &[a.clone(), b.clone(), a, b]).unwrap();
        assert_eq!(dup.row(0), single.row(0));
        assert_eq!(dup.row(1), dup.row(3));
    }

    #[test]
    fn projector_shape() {
        let store = init_params(&small(), 0).unwrap();
        for b in [2, 5] {
            let mut g = Graph::new(&store, Mode::Train);
            let x = g.input(batch_tensor(&(0..b).map(slice).collect::<Vec<_>>()).unwrap());
            let out = encoder_forward(&mut g, x).unwrap();
            let e = projector_forward(&mut g, out.repr).unwrap();
            assert_eq!(g.value(out.repr).shape(), &[b as usize, 8]);
            assert_eq!(g.value(e).shape(), &[b as usize, 16]);
        }
    }

    #[test]
    fn projector_identity_construction() {
        // fc1 = I, bn passes a zero-mean unit-variance batch through, fc2 = I
        let z = 8;
        let mut store = ParamStore::new();
        let eye = |n: usize| {
            Tensor::new(
                vec![n, n],
                (0..n * n).map(|i| if i / n == i % n { 1.0 } else { 0.0 }).collect(),
            )
            .unwrap()
        };
        store.insert("projector.fc1.weight", eye(z), false).unwrap();
        store.insert("projector.fc1.bias", Tensor::zeros(&[z]), true).unwrap();
        insert_norm(&mut store, "projector.bn", z).unwrap();
        store.insert("projector.fc2.weight", eye(z), false).unwrap();
        store.insert("projector.fc2.bias", Tensor::zeros(&[z]), true).unwrap();
        // rows r and -r: per-column mean 0, population variance 1
        let r: Vec<f32> = (0..z).map(|j| if j % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let mut data = r.clone();
        data.extend(r.iter().map(|v| -v));
        let mut g = Graph::new(&store, Mode::Train);
        let x = g.input(Tensor::new(vec![2, z], data.clone()).unwrap());
        let e = projector_forward(&mut g, x).unwrap();
        let scale = 1.0 / (1.0f32 + 1e-5).sqrt();
        for (&o, &i) in g.value(e).data().iter().zip(&data) {
            assert!((o - i.max(0.0) * scale).abs() < 1e-6);
            assert!((o - i.max(0.0)).abs() < 1e-4);
        }
    }

    #[test]
    fn freezing_marks_blocks() {
        let mut store = init_params(&small(), 0).unwrap();
        freeze_blocks(&mut store, 0).unwrap();
        assert!(store.iter().all(|(_, e)| !e.frozen));
        freeze_blocks(&mut store, 1).unwrap();
        for (name, e) in store.iter() {
            assert_eq!(e.frozen, name.starts_with("block1."), "{name}");
        }
        assert!(freeze_blocks(&mut store, 3).is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_params(&small(), 9).unwrap();
        let b = init_params(&small(), 9).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_ne!(a.to_bytes(), init_params(&small(), 10).unwrap().to_bytes());
    }
}

//! Post-layer-norm bidirectional transformer encoder with BERT/RoBERTa
//! parameter naming (`embeddings.*`, `encoder.layer.{i}.*`), so converted
//! pre-trained weights load by name.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, D};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{const_tensor, fetch, normal_tensor};
use super::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub intermediate: usize,
    pub max_positions: usize,
    /// First row of the position table used for token 0 (2 for RoBERTa).
    #[serde(default)]
    pub position_offset: usize,
    pub layer_norm_eps: f64,
    pub init_std: f64,
}

impl EncoderConfig {
    /// 12-layer, 768-wide base configuration.
    pub fn base(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            hidden: 768,
            layers: 12,
            heads: 12,
            intermediate: 3072,
            max_positions: 514,
            position_offset: 2,
            layer_norm_eps: 1e-5,
            init_std: 0.02,
        }
    }

    /// Small configuration for CPU experiments.
    pub fn tiny(vocab_size: usize, hidden: usize, layers: usize) -> Self {
        Self {
            vocab_size,
            hidden,
            layers,
            heads: 4.min(hidden).max(1),
            intermediate: 4 * hidden,
            max_positions: 160,
            position_offset: 0,
            layer_norm_eps: 1e-5,
            init_std: 0.02,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(ModelError::Config(format!(
                "hidden size {} not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if self.vocab_size == 0 || self.layers == 0 || self.intermediate == 0 {
            return Err(ModelError::Config("vocab, layers and intermediate must be positive".into()));
        }
        Ok(())
    }

    /// Parameter names and shapes in a fixed order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.hidden;
        let mut v = vec![
            ("embeddings.word_embeddings.weight".to_string(), vec![self.vocab_size, d]),
            (
                "embeddings.position_embeddings.weight".to_string(),
                vec![self.max_positions, d],
            ),
            ("embeddings.token_type_embeddings.weight".to_string(), vec![1, d]),
            ("embeddings.LayerNorm.weight".to_string(), vec![d]),
            ("embeddings.LayerNorm.bias".to_string(), vec![d]),
        ];
        for i in 0..self.layers {
            let p = format!("encoder.layer.{i}");
            for (name, out, inp) in [
                ("attention.self.query", d, d),
                ("attention.self.key", d, d),
                ("attention.self.value", d, d),
                ("attention.output.dense", d, d),
                ("intermediate.dense", self.intermediate, d),
                ("output.dense", d, self.intermediate),
            ] {
                v.push((format!("{p}.{name}.weight"), vec![out, inp]));
                v.push((format!("{p}.{name}.bias"), vec![out]));
            }
            for ln in ["attention.output.LayerNorm", "output.LayerNorm"] {
                v.push((format!("{p}.{ln}.weight"), vec![d]));
                v.push((format!("{p}.{ln}.bias"), vec![d]));
            }
        }
        v
    }

    /// Random weights standing in for a pre-trained encoder. Deterministic in `seed`.
    pub fn random_weights(&self, seed: u64, dtype: DType, device: &Device) -> Result<BTreeMap<String, Tensor>, ModelError> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.parameter_shapes()
            .into_iter()
            .map(|(name, shape)| {
                let t = init_for(&name, &shape, self.init_std, &mut rng, dtype, device)?;
                Ok((name, t))
            })
            .collect()
    }
}

pub(crate) fn init_for<R: Rng>(
    name: &str,
    shape: &[usize],
    std: f64,
    rng: &mut R,
    dtype: DType,
    device: &Device,
) -> Result<Tensor, ModelError> {
    if name.contains("LayerNorm") {
        let v = if name.ends_with("weight") { 1.0 } else { 0.0 };
        const_tensor(v, shape, dtype, device)
    } else if name.ends_with("bias") {
        const_tensor(0.0, shape, dtype, device)
    } else {
        normal_tensor(rng, shape, std, dtype, device)
    }
}

/// Inverted dropout with its own seeded generator.
pub struct Dropout {
    p: f64,
    rng: Option<ChaCha8Rng>,
}

impl Dropout {
    pub fn disabled() -> Self {
        Self { p: 0.0, rng: None }
    }

    pub fn new(p: f64, seed: u64, stream: u64) -> Self {
        if p <= 0.0 {
            return Self::disabled();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { p, rng: Some(rng) }
    }

    pub fn is_active(&self) -> bool {
        self.rng.is_some()
    }

    pub fn apply(&mut self, x: &Tensor) -> Result<Tensor, ModelError> {
        let Some(rng) = self.rng.as_mut() else {
            return Ok(x.clone());
        };
        let keep = 1.0 - self.p;
        let scale = 1.0 / keep;
        let mask: Vec<f64> = (0..x.elem_count())
            .map(|_| if rng.random_bool(keep) { scale } else { 0.0 })
            .collect();
        let mask = Tensor::from_vec(mask, x.dims(), x.device())?.to_dtype(x.dtype())?;
        Ok(x.mul(&mask)?)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn load(map: &BTreeMap<String, Tensor>, prefix: &str, out: usize, inp: usize) -> Result<Self, ModelError> {
        Ok(Self {
            weight: fetch(map, &format!("{prefix}.weight"), &[out, inp])?,
            bias: fetch(map, &format!("{prefix}.bias"), &[out])?,
        })
    }

    /// Applies `x W^T + b` over the last dimension of `x`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        let dims = x.dims().to_vec();
        let inp = *dims.last().expect("rank >= 1");
        let rows: usize = dims[..dims.len() - 1].iter().product();
        let y = x.reshape((rows, inp))?.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?;
        let mut out_dims = dims;
        *out_dims.last_mut().unwrap() = self.weight.dim(0)?;
        Ok(y.reshape(out_dims)?)
    }
}

#[derive(Debug, Clone)]
struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl LayerNorm {
    fn load(map: &BTreeMap<String, Tensor>, prefix: &str, d: usize, eps: f64) -> Result<Self, ModelError> {
        Ok(Self {
            weight: fetch(map, &format!("{prefix}.weight"), &[d])?,
            bias: fetch(map, &format!("{prefix}.bias"), &[d])?,
            eps,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)?)
    }
}

/// Softmax over the last dimension built from differentiable primitives.
pub(crate) fn softmax_last(x: &Tensor) -> Result<Tensor, ModelError> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    query: Linear,
    key: Linear,
    value: Linear,
    attn_out: Linear,
    attn_ln: LayerNorm,
    intermediate: Linear,
    output: Linear,
    out_ln: LayerNorm,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    word: Tensor,
    position: Tensor,
    token_type: Tensor,
    emb_ln: LayerNorm,
    layers: Vec<EncoderLayer>,
}

impl Encoder {
    /// Builds an encoder over the tensors in `map` whose names start with `prefix`
    /// (e.g. `"encoder."`; pass `""` for bare names).
    pub fn from_params(config: &EncoderConfig, map: &BTreeMap<String, Tensor>, prefix: &str) -> Result<Self, ModelError> {
        config.validate()?;
        let sub: BTreeMap<String, Tensor> = map
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
            .collect();
        let d = config.hidden;
        let eps = config.layer_norm_eps;
        let mut layers = Vec::with_capacity(config.layers);
        for i in 0..config.layers {
            let p = format!("encoder.layer.{i}");
            layers.push(EncoderLayer {
                query: Linear::load(&sub, &format!("{p}.attention.self.query"), d, d)?,
                key: Linear::load(&sub, &format!("{p}.attention.self.key"), d, d)?,
                value: Linear::load(&sub, &format!("{p}.attention.self.value"), d, d)?,
                attn_out: Linear::load(&sub, &format!("{p}.attention.output.dense"), d, d)?,
                attn_ln: LayerNorm::load(&sub, &format!("{p}.attention.output.LayerNorm"), d, eps)?,
                intermediate: Linear::load(&sub, &format!("{p}.intermediate.dense"), config.intermediate, d)?,
                output: Linear::load(&sub, &format!("{p}.output.dense"), d, config.intermediate)?,
                out_ln: LayerNorm::load(&sub, &format!("{p}.output.LayerNorm"), d, eps)?,
            });
        }
        Ok(Self {
            word: fetch(&sub, "embeddings.word_embeddings.weight", &[config.vocab_size, d])?,
            position: fetch(&sub, "embeddings.position_embeddings.weight", &[config.max_positions, d])?,
            token_type: fetch(&sub, "embeddings.token_type_embeddings.weight", &[1, d])?,
            emb_ln: LayerNorm::load(&sub, "embeddings.LayerNorm", d, eps)?,
            layers,
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// `ids`: `[batch, len]` u32; `mask`: additive `[batch, 1, 1, len]`.
    /// Returns hidden states `[batch, len, hidden]`.
    pub fn forward(&self, ids: &Tensor, mask: &Tensor, dropout: &mut Dropout) -> Result<Tensor, ModelError> {
        let (b, l) = ids.dims2()?;
        let d = self.config.hidden;
        if l + self.config.position_offset > self.config.max_positions {
            return Err(ModelError::Config(format!(
                "sequence length {l} exceeds {} positions",
                self.config.max_positions
            )));
        }
        let words = self.word.index_select(&ids.flatten_all()?, 0)?.reshape((b, l, d))?;
        let pos = self.position.narrow(0, self.config.position_offset, l)?;
        let x = words.broadcast_add(&pos)?.broadcast_add(&self.token_type)?;
        let mut x = dropout.apply(&self.emb_ln.forward(&x)?)?;

        let heads = self.config.heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        for layer in &self.layers {
            let split = |t: Tensor| -> Result<Tensor, ModelError> {
                Ok(t.reshape((b, l, heads, dh))?.transpose(1, 2)?.contiguous()?)
            };
            let q = split(layer.query.forward(&x)?)?;
            let k = split(layer.key.forward(&x)?)?;
            let v = split(layer.value.forward(&x)?)?;
            let scores = (q.matmul(&k.t()?)? * scale)?.broadcast_add(mask)?;
            let probs = dropout.apply(&softmax_last(&scores)?)?;
            let ctx = probs.matmul(&v)?.transpose(1, 2)?.reshape((b, l, d))?;
            let attn = dropout.apply(&layer.attn_out.forward(&ctx)?)?;
            x = layer.attn_ln.forward(&(attn + &x)?)?;
            let h = layer.intermediate.forward(&x)?.gelu_erf()?;
            let h = dropout.apply(&layer.output.forward(&h)?)?;
            x = layer.out_ln.forward(&(h + &x)?)?;
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_of_tiny_config() {
        let cfg = EncoderConfig::tiny(50, 8, 2);
        let w = cfg.random_weights(0, DType::F64, &Device::Cpu).unwrap();
        let n: usize = w.values().map(|t| t.elem_count()).sum();
        let per_layer = 4 * (8 * 8 + 8) + (32 * 8 + 32) + (8 * 32 + 8) + 4 * 8;
        assert_eq!(n, 50 * 8 + 160 * 8 + 8 + 2 * 8 + 2 * per_layer);
    }

    #[test]
    fn random_weights_deterministic() {
        let cfg = EncoderConfig::tiny(20, 8, 1);
        let a = cfg.random_weights(3, DType::F32, &Device::Cpu).unwrap();
        let b = cfg.random_weights(3, DType::F32, &Device::Cpu).unwrap();
        for (k, t) in &a {
            let x = t.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let y = b[k].flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert_eq!(x, y, "{k}");
        }
    }

    #[test]
    fn padding_does_not_change_unpadded_outputs() {
        let cfg = EncoderConfig::tiny(20, 8, 2);
        let w = cfg.random_weights(1, DType::F64, &Device::Cpu).unwrap();
        let enc = Encoder::from_params(&cfg, &w, "").unwrap();
        let dev = Device::Cpu;
        let short = Tensor::new(&[[2u32, 7, 9, 3]], &dev).unwrap();
        let padded = Tensor::new(&[[2u32, 7, 9, 3, 0, 0]], &dev).unwrap();
        let m_short = Tensor::zeros((1, 1, 1, 4), DType::F64, &dev).unwrap();
        let m_pad = Tensor::new(&[0.0f64, 0.0, 0.0, 0.0, -1e9, -1e9], &dev)
            .unwrap()
            .reshape((1, 1, 1, 6))
            .unwrap();
        let a = enc.forward(&short, &m_short, &mut Dropout::disabled()).unwrap();
        let b = enc.forward(&padded, &m_pad, &mut Dropout::disabled()).unwrap().narrow(1, 0, 4).unwrap();
        let diff = (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(diff < 1e-12, "{diff}");
    }
}

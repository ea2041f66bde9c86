//! The expectation-realization network and its realization-only baseline.
//!
//! One trainable encoder is run twice, on the marked input S and on the
//! masked input M. For ER a frozen copy of the initial encoder also runs on M
//! to produce anchor vectors. Target vectors are means over the target's
//! subword span; sentence vectors are the `[CLS]` outputs.

pub mod checkpoint;
pub mod encoder;
pub mod head;
pub mod params;

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::EncodedPair;
use crate::evaluation::{ModelTag, Prediction, DECISION_THRESHOLD};
pub use checkpoint::{load_checkpoint, load_checkpoint_as, save_checkpoint, CheckpointMeta, CHECKPOINT_FORMAT};
pub use encoder::{Dropout, Encoder, EncoderConfig};
pub use head::{Activation, HeadConfig, InteractionHead};
pub use params::ParamStore;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("checkpoint holds a {found} model, expected {expected}")]
    ArchitectureMismatch { expected: Architecture, found: Architecture },
    #[error("checkpoint format `{found}` is not supported (expected `{expected}`)")]
    VersionMismatch { expected: String, found: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "ER")]
    Er,
    #[serde(rename = "RSPV")]
    Rspv,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::Er => "ER",
            Architecture::Rspv => "RSPV",
        })
    }
}

impl FromStr for Architecture {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "er" => Ok(Architecture::Er),
            "rspv" => Ok(Architecture::Rspv),
            _ => Err(ModelError::Config(format!("unknown architecture {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
    pub precision: Precision,
    pub head_init_std: f64,
}

impl ModelConfig {
    pub fn new(architecture: Architecture, encoder: EncoderConfig) -> Self {
        let head = HeadConfig::single_layer(encoder.hidden);
        let head_init_std = encoder.init_std;
        Self {
            architecture,
            encoder,
            head,
            precision: Precision::F32,
            head_init_std,
        }
    }

    pub fn dtype(&self) -> DType {
        self.precision.dtype()
    }
}

/// The six vectors of one instance, for inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErRepresentations {
    pub v_s_t: Vec<f64>,
    pub v_m_t: Vec<f64>,
    pub v_s: Vec<f64>,
    pub v_m: Vec<f64>,
    pub u_m_t: Vec<f64>,
    pub u_m: Vec<f64>,
}

impl ErRepresentations {
    pub fn is_finite(&self) -> bool {
        [&self.v_s_t, &self.v_m_t, &self.v_s, &self.v_m, &self.u_m_t, &self.u_m]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

struct SeqTensors {
    ids: Tensor,
    mask: Tensor,
    pool: Tensor,
}

const MASK_NEG: f64 = -1e9;

impl SeqTensors {
    fn build(seqs: &[&[u32]], spans: &[Range<usize>], pad: u32, dtype: DType, device: &Device) -> Result<Self, ModelError> {
        let b = seqs.len();
        let l = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut ids = vec![pad; b * l];
        let mut mask = vec![MASK_NEG; b * l];
        let mut pool = vec![0.0f64; b * l];
        for (i, (seq, span)) in seqs.iter().zip(spans).enumerate() {
            ids[i * l..i * l + seq.len()].copy_from_slice(seq);
            mask[i * l..i * l + seq.len()].iter_mut().for_each(|m| *m = 0.0);
            let w = 1.0 / span.len() as f64;
            for p in span.clone() {
                pool[i * l + p] = w;
            }
        }
        Ok(Self {
            ids: Tensor::from_vec(ids, (b, l), device)?,
            mask: Tensor::from_vec(mask, (b, 1, 1, l), device)?.to_dtype(dtype)?,
            pool: Tensor::from_vec(pool, (b, 1, l), device)?.to_dtype(dtype)?,
        })
    }
}

/// A padded mini-batch of encoded pairs.
pub struct Batch {
    pub instance_ids: Vec<String>,
    pub labels: Vec<u8>,
    label_tensor: Tensor,
    realization: SeqTensors,
    expectation: SeqTensors,
}

impl Batch {
    pub fn new(pairs: &[&EncodedPair], pad_id: u32, dtype: DType, device: &Device) -> Result<Self, ModelError> {
        if pairs.is_empty() {
            return Err(ModelError::Config("empty batch".into()));
        }
        for p in pairs {
            if p.realization_span.is_empty() || p.expectation_span.is_empty() {
                return Err(ModelError::Config(format!("empty target span for `{}`", p.instance_id)));
            }
        }
        let s: Vec<&[u32]> = pairs.iter().map(|p| p.realization_ids.as_slice()).collect();
        let s_spans: Vec<Range<usize>> = pairs.iter().map(|p| p.realization_span.clone()).collect();
        let m: Vec<&[u32]> = pairs.iter().map(|p| p.expectation_ids.as_slice()).collect();
        let m_spans: Vec<Range<usize>> = pairs.iter().map(|p| p.expectation_span.clone()).collect();
        let labels: Vec<u8> = pairs.iter().map(|p| p.label).collect();
        let lf: Vec<f64> = labels.iter().map(|&y| y as f64).collect();
        Ok(Self {
            instance_ids: pairs.iter().map(|p| p.instance_id.clone()).collect(),
            label_tensor: Tensor::from_vec(lf, pairs.len(), device)?.to_dtype(dtype)?,
            labels,
            realization: SeqTensors::build(&s, &s_spans, pad_id, dtype, device)?,
            expectation: SeqTensors::build(&m, &m_spans, pad_id, dtype, device)?,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label_tensor(&self) -> &Tensor {
        &self.label_tensor
    }
}

/// Batched representation tensors, each `[batch, d]`. Expectation and anchor
/// vectors are present for ER only; anchors are detached.
pub struct RepTensors {
    pub v_s_t: Tensor,
    pub v_s: Tensor,
    pub v_m_t: Option<Tensor>,
    pub v_m: Option<Tensor>,
    pub u_m_t: Option<Tensor>,
    pub u_m: Option<Tensor>,
}

pub struct BatchOutput {
    pub logits: Tensor,
    pub probs: Tensor,
    pub reps: RepTensors,
}

fn cls(hidden: &Tensor) -> Result<Tensor, ModelError> {
    Ok(hidden.narrow(1, 0, 1)?.squeeze(1)?)
}

fn span_mean(pool: &Tensor, hidden: &Tensor) -> Result<Tensor, ModelError> {
    Ok(pool.matmul(hidden)?.squeeze(1)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor, ModelError> {
    Ok((x.neg()?.exp()? + 1.0)?.recip()?)
}

pub struct MetaphorModel {
    config: ModelConfig,
    params: ParamStore,
    anchor: Option<BTreeMap<String, Tensor>>,
    encoder: Encoder,
    anchor_encoder: Option<Encoder>,
    head: InteractionHead,
    device: Device,
}

impl MetaphorModel {
    /// Fresh model: the trainable encoder and (for ER) the frozen anchor are
    /// both copies of `encoder_weights` (bare BERT-style names); the head is
    /// initialised from `seed`.
    pub fn new(config: ModelConfig, encoder_weights: &BTreeMap<String, Tensor>, seed: u64) -> Result<Self, ModelError> {
        let device = Device::Cpu;
        let dtype = config.dtype();
        let mut trainable = BTreeMap::new();
        for (k, t) in encoder_weights {
            trainable.insert(format!("encoder.{k}"), t.to_dtype(dtype)?);
        }
        trainable.extend(config.head.random_weights(
            config.architecture,
            config.encoder.hidden,
            config.head_init_std,
            seed,
            dtype,
            &device,
        )?);
        let anchor = match config.architecture {
            Architecture::Er => Some(
                encoder_weights
                    .iter()
                    .map(|(k, t)| Ok((k.clone(), t.to_dtype(dtype)?.detach().copy()?)))
                    .collect::<Result<BTreeMap<_, _>, ModelError>>()?,
            ),
            Architecture::Rspv => None,
        };
        Self::from_parts(config, &trainable, anchor)
    }

    /// Rebuilds a model from trainable tensors (`encoder.*`, `head.*`) and
    /// optional anchor tensors (bare encoder names).
    pub fn from_parts(
        config: ModelConfig,
        trainable: &BTreeMap<String, Tensor>,
        anchor: Option<BTreeMap<String, Tensor>>,
    ) -> Result<Self, ModelError> {
        let device = Device::Cpu;
        let dtype = config.dtype();
        if (config.architecture == Architecture::Er) != anchor.is_some() {
            return Err(ModelError::Config(format!(
                "{} model {} anchor weights",
                config.architecture,
                if anchor.is_some() { "cannot take" } else { "requires" }
            )));
        }
        let cast: BTreeMap<String, Tensor> = trainable
            .iter()
            .map(|(k, t)| Ok((k.clone(), t.to_dtype(dtype)?)))
            .collect::<Result<_, ModelError>>()?;
        let expected: usize = config.encoder.parameter_shapes().len()
            + config.head.parameter_shapes(config.architecture, config.encoder.hidden).len();
        if cast.len() != expected {
            return Err(ModelError::Config(format!(
                "expected {expected} trainable tensors, found {}",
                cast.len()
            )));
        }
        let params = ParamStore::from_tensors(&cast)?;
        let live = params.tensors();
        let encoder = Encoder::from_params(&config.encoder, &live, "encoder.")?;
        let head = InteractionHead::from_params(config.architecture, &config.head, config.encoder.hidden, &live)?;
        let anchor = match anchor {
            Some(a) => Some(
                a.iter()
                    .map(|(k, t)| Ok((k.clone(), t.to_dtype(dtype)?.detach())))
                    .collect::<Result<BTreeMap<_, _>, ModelError>>()?,
            ),
            None => None,
        };
        let anchor_encoder = match &anchor {
            Some(a) => Some(Encoder::from_params(&config.encoder, a, "")?),
            None => None,
        };
        Ok(Self {
            config,
            params,
            anchor,
            encoder,
            anchor_encoder,
            head,
            device,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn trainable_tensors(&self) -> BTreeMap<String, Tensor> {
        self.params.tensors()
    }

    pub fn anchor_tensors(&self) -> Option<&BTreeMap<String, Tensor>> {
        self.anchor.as_ref()
    }

    /// Variables of the interaction head only.
    pub fn head_vars(&self) -> Vec<(String, candle_core::Var)> {
        self.params
            .names()
            .filter(|n| n.starts_with("head."))
            .map(|n| (n.to_string(), self.params.get(n).unwrap().clone()))
            .collect()
    }

    pub fn batch(&self, pairs: &[&EncodedPair], pad_id: u32) -> Result<Batch, ModelError> {
        Batch::new(pairs, pad_id, self.config.dtype(), &self.device)
    }

    pub fn forward(&self, batch: &Batch, dropout: &mut Dropout) -> Result<BatchOutput, ModelError> {
        let s = &batch.realization;
        let hs = self.encoder.forward(&s.ids, &s.mask, dropout)?;
        let v_s = cls(&hs)?;
        let v_s_t = span_mean(&s.pool, &hs)?;
        let (logits, reps) = match self.config.architecture {
            Architecture::Er => {
                let m = &batch.expectation;
                let hm = self.encoder.forward(&m.ids, &m.mask, dropout)?;
                let v_m = cls(&hm)?;
                let v_m_t = span_mean(&m.pool, &hm)?;
                let anchor = self
                    .anchor_encoder
                    .as_ref()
                    .ok_or_else(|| ModelError::Config("ER model without anchor encoder".into()))?;
                let hu = anchor.forward(&m.ids, &m.mask, &mut Dropout::disabled())?.detach();
                let u_m = cls(&hu)?;
                let u_m_t = span_mean(&m.pool, &hu)?;
                let logits = self.head.forward_er(&v_s_t, &v_m_t, &v_s, &v_m)?;
                (
                    logits,
                    RepTensors {
                        v_s_t,
                        v_s,
                        v_m_t: Some(v_m_t),
                        v_m: Some(v_m),
                        u_m_t: Some(u_m_t),
                        u_m: Some(u_m),
                    },
                )
            }
            Architecture::Rspv => {
                let logits = self.head.forward_rspv(&v_s, &v_s_t)?;
                (
                    logits,
                    RepTensors {
                        v_s_t,
                        v_s,
                        v_m_t: None,
                        v_m: None,
                        u_m_t: None,
                        u_m: None,
                    },
                )
            }
        };
        let probs = sigmoid(&logits)?;
        Ok(BatchOutput { logits, probs, reps })
    }

    /// Evaluation-mode predictions in input order.
    pub fn predict(&self, pairs: &[EncodedPair], pad_id: u32, batch_size: usize, tag: &ModelTag) -> Result<Vec<Prediction>, ModelError> {
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(batch_size.max(1)) {
            let refs: Vec<&EncodedPair> = chunk.iter().collect();
            let batch = self.batch(&refs, pad_id)?;
            let probs = self.forward(&batch, &mut Dropout::disabled())?.probs;
            let probs = probs.to_dtype(DType::F64)?.to_vec1::<f64>()?;
            for ((id, &gold), p) in batch.instance_ids.iter().zip(&batch.labels).zip(probs) {
                if !p.is_finite() {
                    return Err(ModelError::NonFinite(format!("probability for `{id}`")));
                }
                out.push(Prediction {
                    instance_id: id.clone(),
                    gold,
                    probability: p,
                    label: u8::from(p >= DECISION_THRESHOLD),
                    model_tag: tag.clone(),
                });
            }
        }
        Ok(out)
    }

    /// Full ER pass for one pair.
    pub fn forward_er(&self, pair: &EncodedPair, pad_id: u32, tag: &ModelTag) -> Result<(ErRepresentations, Prediction), ModelError> {
        if self.config.architecture != Architecture::Er {
            return Err(ModelError::ArchitectureMismatch {
                expected: Architecture::Er,
                found: self.config.architecture,
            });
        }
        let batch = self.batch(&[pair], pad_id)?;
        let out = self.forward(&batch, &mut Dropout::disabled())?;
        let row = |t: &Tensor| -> Result<Vec<f64>, ModelError> {
            Ok(t.to_dtype(DType::F64)?.squeeze(0)?.to_vec1::<f64>()?)
        };
        let r = &out.reps;
        let reps = ErRepresentations {
            v_s_t: row(&r.v_s_t)?,
            v_m_t: row(r.v_m_t.as_ref().unwrap())?,
            v_s: row(&r.v_s)?,
            v_m: row(r.v_m.as_ref().unwrap())?,
            u_m_t: row(r.u_m_t.as_ref().unwrap())?,
            u_m: row(r.u_m.as_ref().unwrap())?,
        };
        if !reps.is_finite() {
            return Err(ModelError::NonFinite(format!("representations of `{}`", pair.instance_id)));
        }
        let p = out.probs.to_dtype(DType::F64)?.to_vec1::<f64>()?[0];
        if !p.is_finite() {
            return Err(ModelError::NonFinite(format!("probability for `{}`", pair.instance_id)));
        }
        let pred = Prediction {
            instance_id: pair.instance_id.clone(),
            gold: pair.label,
            probability: p,
            label: u8::from(p >= DECISION_THRESHOLD),
            model_tag: tag.clone(),
        };
        Ok((reps, pred))
    }

    /// Realization-only pass for one pair.
    pub fn forward_rspv(&self, pair: &EncodedPair, pad_id: u32, tag: &ModelTag) -> Result<Prediction, ModelError> {
        if self.config.architecture != Architecture::Rspv {
            return Err(ModelError::ArchitectureMismatch {
                expected: Architecture::Rspv,
                found: self.config.architecture,
            });
        }
        let mut preds = self.predict(std::slice::from_ref(pair), pad_id, 1, tag)?;
        Ok(preds.remove(0))
    }

    /// Overwrites one trainable parameter (used by ablation tooling and tests).
    pub fn set_param(&self, name: &str, value: &Tensor) -> Result<(), ModelError> {
        let var = self
            .params
            .get(name)
            .ok_or_else(|| ModelError::Config(format!("no parameter `{name}`")))?;
        var.set(&value.to_dtype(self.config.dtype())?)?;
        Ok(())
    }
}

/// Normalises pre-trained weight names (`roberta.` / `bert.` prefixes) and
/// grows the word embedding table by one row for the marker token when the
/// source vocabulary lacks it.
pub fn adapt_pretrained(
    raw: BTreeMap<String, Tensor>,
    config: &EncoderConfig,
    seed: u64,
) -> Result<BTreeMap<String, Tensor>, ModelError> {
    use rand::SeedableRng;
    let wanted: BTreeMap<String, Vec<usize>> = config.parameter_shapes().into_iter().collect();
    let mut out = BTreeMap::new();
    for (k, t) in raw {
        let bare = k
            .strip_prefix("roberta.")
            .or_else(|| k.strip_prefix("bert."))
            .unwrap_or(&k)
            .to_string();
        if wanted.contains_key(&bare) {
            out.insert(bare, t);
        }
    }
    let key = "embeddings.word_embeddings.weight";
    if let Some(w) = out.get(key) {
        let (rows, d) = w.dims2()?;
        if rows + 1 == config.vocab_size {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let extra = params::normal_tensor(&mut rng, &[1, d], config.init_std, w.dtype(), w.device())?;
            let grown = Tensor::cat(&[w, &extra], 0)?;
            out.insert(key.to_string(), grown);
        }
    }
    let tt = "embeddings.token_type_embeddings.weight";
    if let Some(t) = out.get(tt) {
        if t.dim(0)? > 1 {
            let first = t.narrow(0, 0, 1)?;
            out.insert(tt.to_string(), first);
        }
    }
    for name in wanted.keys() {
        if !out.contains_key(name) {
            return Err(ModelError::Config(format!("pre-trained weights lack `{name}`")));
        }
    }
    Ok(out)
}

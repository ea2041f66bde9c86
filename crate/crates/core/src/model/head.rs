//! Interaction layers and the logistic output.
//!
//! ER: `logit = w . [f(v_M_t ; v_S_t) ; g(v_M ; v_S)] + b`.
//! R-SPV: `logit = w . g(v_S ; v_S_t) + b`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{init_for, Linear};
use super::{Architecture, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    None,
    Relu,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::None => "none",
            Activation::Relu => "relu",
        })
    }
}

impl FromStr for Activation {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "identity" | "linear" => Ok(Activation::None),
            "relu" => Ok(Activation::Relu),
            _ => Err(ModelError::Config(format!("unknown activation {s:?}"))),
        }
    }
}

/// Widths of the stacked layers inside `f` and `g`, and their activation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HeadConfig {
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
}

impl HeadConfig {
    /// One `2d -> d` layer with ReLU.
    pub fn single_layer(d: usize) -> Self {
        Self {
            hidden_dims: vec![d],
            activation: Activation::Relu,
        }
    }

    pub fn output_dim(&self) -> usize {
        *self.hidden_dims.last().expect("validated non-empty")
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(ModelError::Config("head hidden dims must be non-empty and positive".into()));
        }
        Ok(())
    }

    /// Total hidden width, used to order configurations by size.
    pub fn size(&self) -> usize {
        self.hidden_dims.iter().sum()
    }

    pub fn parameter_shapes(&self, arch: Architecture, d: usize) -> Vec<(String, Vec<usize>)> {
        let mut shapes = Vec::new();
        let mut mlp = |name: &str| {
            let mut inp = 2 * d;
            for (i, &out) in self.hidden_dims.iter().enumerate() {
                shapes.push((format!("head.{name}.{i}.weight"), vec![out, inp]));
                shapes.push((format!("head.{name}.{i}.bias"), vec![out]));
                inp = out;
            }
        };
        if arch == Architecture::Er {
            mlp("f");
        }
        mlp("g");
        let feat = match arch {
            Architecture::Er => 2 * self.output_dim(),
            Architecture::Rspv => self.output_dim(),
        };
        shapes.push(("head.out.weight".into(), vec![1, feat]));
        shapes.push(("head.out.bias".into(), vec![1]));
        shapes
    }

    pub fn random_weights(
        &self,
        arch: Architecture,
        d: usize,
        std: f64,
        seed: u64,
        dtype: DType,
        device: &Device,
    ) -> Result<BTreeMap<String, Tensor>, ModelError> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        self.parameter_shapes(arch, d)
            .into_iter()
            .map(|(name, shape)| Ok((name.clone(), init_for(&name, &shape, std, &mut rng, dtype, device)?)))
            .collect()
    }
}

#[derive(Debug, Clone)]
struct Mlp {
    layers: Vec<Linear>,
    activation: Activation,
}

impl Mlp {
    fn load(map: &BTreeMap<String, Tensor>, name: &str, cfg: &HeadConfig, d: usize) -> Result<Self, ModelError> {
        let mut inp = 2 * d;
        let mut layers = Vec::new();
        for (i, &out) in cfg.hidden_dims.iter().enumerate() {
            layers.push(Linear::load(map, &format!("head.{name}.{i}"), out, inp)?);
            inp = out;
        }
        Ok(Self {
            layers,
            activation: cfg.activation,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward(&h)?;
            if self.activation == Activation::Relu {
                h = h.relu()?;
            }
        }
        Ok(h)
    }
}

#[derive(Debug, Clone)]
pub struct InteractionHead {
    arch: Architecture,
    local: Option<Mlp>,
    global: Mlp,
    out: Linear,
}

impl InteractionHead {
    pub fn from_params(
        arch: Architecture,
        cfg: &HeadConfig,
        d: usize,
        map: &BTreeMap<String, Tensor>,
    ) -> Result<Self, ModelError> {
        cfg.validate()?;
        let local = match arch {
            Architecture::Er => Some(Mlp::load(map, "f", cfg, d)?),
            Architecture::Rspv => None,
        };
        let feat = match arch {
            Architecture::Er => 2 * cfg.output_dim(),
            Architecture::Rspv => cfg.output_dim(),
        };
        Ok(Self {
            arch,
            local,
            global: Mlp::load(map, "g", cfg, d)?,
            out: Linear::load(map, "head.out", 1, feat)?,
        })
    }

    /// ER logits `[batch]` from `[batch, d]` representations.
    pub fn forward_er(&self, v_s_t: &Tensor, v_m_t: &Tensor, v_s: &Tensor, v_m: &Tensor) -> Result<Tensor, ModelError> {
        let local = self
            .local
            .as_ref()
            .ok_or_else(|| ModelError::Config("R-SPV head has no local interaction layer".into()))?;
        let h_local = local.forward(&Tensor::cat(&[v_m_t, v_s_t], 1)?)?;
        let h_global = self.global.forward(&Tensor::cat(&[v_m, v_s], 1)?)?;
        let feats = Tensor::cat(&[&h_local, &h_global], 1)?;
        Ok(self.out.forward(&feats)?.squeeze(1)?)
    }

    /// R-SPV logits `[batch]`.
    pub fn forward_rspv(&self, v_s: &Tensor, v_s_t: &Tensor) -> Result<Tensor, ModelError> {
        if self.arch != Architecture::Rspv {
            return Err(ModelError::Config("ER head cannot run the realization-only path".into()));
        }
        let h = self.global.forward(&Tensor::cat(&[v_s, v_s_t], 1)?)?;
        Ok(self.out.forward(&h)?.squeeze(1)?)
    }
}

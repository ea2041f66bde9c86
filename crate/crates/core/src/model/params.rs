use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::ModelError;

/// Named trainable parameters.
#[derive(Debug, Clone)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
}

impl ParamStore {
    /// Takes ownership of fresh copies of `tensors` as variables.
    pub fn from_tensors(tensors: &BTreeMap<String, Tensor>) -> Result<Self, ModelError> {
        let vars = tensors
            .iter()
            .map(|(name, t)| Ok((name.clone(), Var::from_tensor(&t.copy()?)?)))
            .collect::<Result<_, ModelError>>()?;
        Ok(Self { vars })
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    /// Live tensor handles; gradients taken w.r.t. these reach the variables.
    pub fn tensors(&self) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }
}

/// Detached deep copies.
pub fn deep_copy(tensors: &BTreeMap<String, Tensor>) -> Result<BTreeMap<String, Tensor>, ModelError> {
    tensors
        .iter()
        .map(|(k, t)| Ok((k.clone(), t.detach().copy()?)))
        .collect()
}

/// SHA-256 over names, shapes and little-endian f64 values of every tensor.
pub fn checksum(tensors: &BTreeMap<String, Tensor>) -> Result<String, ModelError> {
    let mut h = Sha256::new();
    for (name, t) in tensors {
        h.update(name.as_bytes());
        h.update(format!("{:?}", t.dims()).as_bytes());
        for v in t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()? {
            h.update(v.to_le_bytes());
        }
    }
    Ok(hex::encode(h.finalize()))
}

pub(crate) fn normal_tensor<R: Rng>(
    rng: &mut R,
    shape: &[usize],
    std: f64,
    dtype: DType,
    device: &Device,
) -> Result<Tensor, ModelError> {
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0, std).map_err(|e| ModelError::Config(e.to_string()))?;
    let data: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
    Ok(Tensor::from_vec(data, shape, device)?.to_dtype(dtype)?)
}

pub(crate) fn const_tensor(value: f64, shape: &[usize], dtype: DType, device: &Device) -> Result<Tensor, ModelError> {
    Ok(Tensor::full(value, shape, device)?.to_dtype(dtype)?)
}

/// Fetches a tensor and checks its shape.
pub(crate) fn fetch(map: &BTreeMap<String, Tensor>, name: &str, shape: &[usize]) -> Result<Tensor, ModelError> {
    let t = map
        .get(name)
        .ok_or_else(|| ModelError::Config(format!("missing parameter `{name}`")))?;
    if t.dims() != shape {
        return Err(ModelError::Config(format!(
            "parameter `{name}` has shape {:?}, expected {shape:?}",
            t.dims()
        )));
    }
    Ok(t.clone())
}

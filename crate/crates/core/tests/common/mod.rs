#![allow(dead_code)]

pub mod checks;

use std::collections::BTreeMap;
use std::path::PathBuf;

use candle_core::{DType, Device, Tensor};
use metaphor_er_core::corpus::synthetic::{compatibility_corpus, SyntheticSpec};
use metaphor_er_core::corpus::{DatasetId, TargetInstance};
use metaphor_er_core::encoding::{encode_all, EncodedPair, SubwordTokenizer, WordPieceTokenizer};
use metaphor_er_core::model::{Architecture, EncoderConfig, MetaphorModel, ModelConfig, Precision};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn instance(id: &str, words: &[&str], target: usize, label: u8, lemma: &str) -> TargetInstance {
    TargetInstance {
        instance_id: id.into(),
        dataset: DatasetId::Vua20,
        sentence: words.iter().map(|w| w.to_string()).collect(),
        target_index: target,
        label,
        lemma: lemma.into(),
        pos: Some("VERB".into()),
        metaphoricity: None,
        derived_lemma: false,
    }
}

/// A small encoded corpus plus a matching tokenizer.
pub struct Toy {
    pub instances: Vec<TargetInstance>,
    pub tokenizer: WordPieceTokenizer,
    pub pairs: Vec<EncodedPair>,
}

pub fn toy(n: usize, seed: u64) -> Toy {
    let instances = compatibility_corpus(&SyntheticSpec {
        n_instances: n,
        classes: 3,
        seed,
        ..Default::default()
    });
    let tokenizer = WordPieceTokenizer::build_from_instances(&instances, 1, true);
    let (pairs, excluded) = encode_all(&instances, &tokenizer, 32);
    assert!(excluded.is_empty());
    Toy {
        instances,
        tokenizer,
        pairs,
    }
}

pub fn encoder_config(tok: &WordPieceTokenizer, hidden: usize, layers: usize) -> EncoderConfig {
    EncoderConfig::tiny(tok.vocab_size(), hidden, layers)
}

pub fn encoder_weights(cfg: &EncoderConfig, dtype: DType, seed: u64) -> BTreeMap<String, Tensor> {
    cfg.random_weights(seed, dtype, &Device::Cpu).unwrap()
}

pub fn model(arch: Architecture, enc: &EncoderConfig, precision: Precision, seed: u64) -> MetaphorModel {
    let mut cfg = ModelConfig::new(arch, enc.clone());
    cfg.precision = precision;
    let weights = encoder_weights(enc, precision.dtype(), seed);
    MetaphorModel::new(cfg, &weights, seed).unwrap()
}

pub fn to_f64(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap()
}

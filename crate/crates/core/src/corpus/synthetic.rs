//! Constructed corpora where the label is a fixed function of whether the
//! target's class agrees with the class of its context words.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetId, TargetInstance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_instances: usize,
    pub classes: usize,
    pub verbs_per_class: usize,
    pub nouns_per_class: usize,
    /// Probability that the target's class matches the context (label 0).
    pub match_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_instances: 2000,
            classes: 4,
            verbs_per_class: 6,
            nouns_per_class: 6,
            match_rate: 0.5,
            seed: 13,
        }
    }
}

const FILLERS: [&str; 8] = ["the", "a", "then", "quietly", "again", "today", "still", "there"];

fn fillers(rng: &mut ChaCha8Rng, out: &mut Vec<String>, max: usize) {
    for _ in 0..rng.random_range(0..=max) {
        out.push(FILLERS.choose(rng).unwrap().to_string());
    }
}

/// Sentences `[fillers] noun [fillers] VERB [fillers] noun [fillers] .` whose
/// two nouns share a class; label 1 iff the verb's class differs from it.
pub fn compatibility_corpus(spec: &SyntheticSpec) -> Vec<TargetInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.n_instances)
        .map(|i| {
            let ctx = rng.random_range(0..spec.classes);
            let matched = rng.random_bool(spec.match_rate);
            let verb_class = if matched || spec.classes < 2 {
                ctx
            } else {
                (ctx + rng.random_range(1..spec.classes)) % spec.classes
            };
            let verb = format!("v{verb_class}x{}", rng.random_range(0..spec.verbs_per_class));
            let mut noun = || format!("n{ctx}x{}", rng.random_range(0..spec.nouns_per_class));
            let (n1, n2) = (noun(), noun());
            let mut sentence = Vec::new();
            fillers(&mut rng, &mut sentence, 2);
            sentence.push(n1);
            fillers(&mut rng, &mut sentence, 1);
            let target_index = sentence.len();
            sentence.push(verb.clone());
            fillers(&mut rng, &mut sentence, 1);
            sentence.push(n2);
            fillers(&mut rng, &mut sentence, 2);
            sentence.push(".".into());
            TargetInstance {
                instance_id: format!("syn{i:05}"),
                dataset: DatasetId::Vua20,
                sentence,
                target_index,
                label: u8::from(verb_class != ctx),
                lemma: verb,
                pos: Some("VERB".into()),
                metaphoricity: None,
                derived_lemma: false,
            }
        })
        .collect()
}

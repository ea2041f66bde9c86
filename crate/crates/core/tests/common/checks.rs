//! Property checks shared by the unit-style test files and the acceptance
//! runner. Each `check_*` takes one generated case.

use std::collections::{BTreeMap, BTreeSet};

use candle_core::{DType, Device, Tensor};
use metaphor_er_core::corpus::TargetInstance;
use metaphor_er_core::encoding::{encode_pair, SubwordTokenizer, WordPieceTokenizer, CLS, MASK, PAD, SEP, UNK};
use metaphor_er_core::evaluation::{ensemble, prf, ConfusionCounts, ModelTag, Prediction};
use metaphor_er_core::model::{Architecture, Dropout, ErRepresentations, Precision};
use metaphor_er_core::splits::{build_ood_folds, build_wid_folds, FoldPlan};
use metaphor_er_core::training::{batch_loss, compute_loss, cosine, LossConfig};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

use super::{encoder_config, instance, model, to_f64, toy};

pub fn corpus_strategy(min_lemmas: usize) -> impl Strategy<Value = Vec<TargetInstance>> {
    (min_lemmas..40usize)
        .prop_flat_map(|n_lemmas| {
            (Just(n_lemmas), prop::collection::vec((0..n_lemmas, 0u8..2), n_lemmas.max(10)..300))
        })
        .prop_map(|(n_lemmas, rows)| {
            // every lemma appears at least once
            let lemma_of = |i: usize, l: usize| if i < n_lemmas { i } else { l };
            rows.iter()
                .enumerate()
                .map(|(i, &(l, y))| {
                    let lemma = format!("lem{}", lemma_of(i, l));
                    instance(&format!("i{i:04}"), &["the", lemma.as_str(), "."], 1, y, &lemma)
                })
                .collect()
        })
}

fn check_partition(plan: &FoldPlan, data: &[TargetInstance], k: usize) -> Result<(), TestCaseError> {
    let ids: BTreeSet<&str> = data.iter().map(|t| t.instance_id.as_str()).collect();
    let mut seen = BTreeSet::new();
    for f in 0..k {
        let test = plan.test_ids(f);
        prop_assert!(!test.is_empty(), "fold {} empty", f);
        for id in &test {
            prop_assert!(seen.insert(*id), "{} in two folds", id);
        }
        let train: BTreeSet<&str> = plan.train_ids(f).into_iter().collect();
        prop_assert!(test.iter().all(|id| !train.contains(id)));
        prop_assert_eq!(train.len() + test.len(), data.len());
    }
    prop_assert_eq!(seen, ids);
    Ok(())
}

pub fn check_wid(data: &[TargetInstance], k: usize, seed: u64) -> Result<(), TestCaseError> {
    if data.len() < k {
        return Err(TestCaseError::reject("fewer instances than folds"));
    }
    let plan = build_wid_folds(data, k, seed).unwrap();
    check_partition(&plan, data, k)?;
    let sizes = plan.fold_sizes();
    prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    prop_assert_eq!(plan, build_wid_folds(data, k, seed).unwrap());
    Ok(())
}

pub fn check_ood(data: &[TargetInstance], k: usize, seed: u64) -> Result<(), TestCaseError> {
    let plan = build_ood_folds(data, k, seed).unwrap();
    check_partition(&plan, data, k)?;
    let mut fold_of_lemma: BTreeMap<&str, usize> = BTreeMap::new();
    for t in data {
        let f = plan.fold_of(&t.instance_id).unwrap();
        let prev = *fold_of_lemma.entry(&t.lemma).or_insert(f);
        prop_assert_eq!(prev, f, "lemma {} spans folds", &t.lemma);
    }
    for f in 0..k {
        let test: BTreeSet<&str> = plan.test_ids(f).into_iter().collect();
        let test_lemmas: BTreeSet<&str> =
            data.iter().filter(|t| test.contains(t.instance_id.as_str())).map(|t| t.lemma.as_str()).collect();
        let train_lemmas: BTreeSet<&str> =
            data.iter().filter(|t| !test.contains(t.instance_id.as_str())).map(|t| t.lemma.as_str()).collect();
        prop_assert!(test_lemmas.is_disjoint(&train_lemmas));
    }
    Ok(())
}

pub const WORDS: [&str; 8] = ["the", "sun", "walked", "between", "clouds", ".", "unbelievable", "qqq"];

/// Vocabulary where "unbelievable" splits into three pieces and "qqq" is unknown.
pub fn wp() -> WordPieceTokenizer {
    let mut tokens: Vec<String> = [PAD, UNK, CLS, SEP, MASK].iter().map(|s| s.to_string()).collect();
    tokens.extend(WORDS[..6].iter().map(|s| s.to_string()));
    tokens.extend(["un", "##believ", "##able"].iter().map(|s| s.to_string()));
    WordPieceTokenizer::from_tokens(tokens, true).unwrap()
}

pub fn encode_case() -> impl Strategy<Value = (Vec<usize>, prop::sample::Index, usize)> {
    (prop::collection::vec(0usize..WORDS.len(), 1..40), any::<prop::sample::Index>(), 5usize..60)
}

pub fn check_encode(tok: &WordPieceTokenizer, words: &[usize], t: prop::sample::Index, max_len: usize) -> Result<(), TestCaseError> {
    let sentence: Vec<&str> = words.iter().map(|&i| WORDS[i]).collect();
    let target = t.index(sentence.len());
    let inst = instance("x", &sentence, target, 1, "walk");
    let pair = match encode_pair(&inst, tok, max_len) {
        Ok(p) => p,
        Err(_) => {
            let before: usize = sentence[..=target].iter().map(|w| tok.tokenize_word(w).len()).sum();
            prop_assert!(before > max_len - 4, "rejected a target that fits");
            return Ok(());
        }
    };
    let pieces = tok.tokenize_word(sentence[target]);
    prop_assert_eq!(&pair.target_ids, &pieces);
    prop_assert_eq!(&pair.realization_ids[pair.realization_span.clone()], pieces.as_slice());
    prop_assert_eq!(pair.realization_ids[pair.realization_span.start - 1], tok.marker_id());
    prop_assert_eq!(pair.realization_ids[pair.realization_span.end], tok.marker_id());
    prop_assert!(pair.expectation_ids[pair.expectation_span.clone()].iter().all(|&i| i == tok.mask_id()));
    prop_assert_eq!(pair.expectation_span.len(), pieces.len());
    prop_assert_eq!(pair.realization_len(), pair.expectation_len() + 2);
    prop_assert!(pair.realization_len() <= max_len);
    prop_assert_eq!(pair.unmarked(tok.marker_id()), pair.unmasked());
    let full: Vec<u32> = sentence.iter().flat_map(|w| tok.tokenize_word(w)).collect();
    let body = &pair.unmasked()[1..pair.expectation_len() - 1];
    prop_assert_eq!(body, &full[..body.len()]);
    prop_assert_eq!(pair.truncated, body.len() < full.len());
    prop_assert_eq!(pair.unmasked()[0], tok.cls_id());
    prop_assert_eq!(*pair.unmasked().last().unwrap(), tok.sep_id());
    Ok(())
}

pub type LossCase = (u8, f64, Vec<Vec<f64>>, f64, f64);

pub fn loss_case() -> impl Strategy<Value = LossCase> {
    (
        0u8..2,
        0.0f64..=1.0,
        prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 6), 6),
        0.0f64..4.0,
        0.0f64..4.0,
    )
}

pub fn check_loss_decomposition((y, p, vecs, a1, a2): LossCase) -> Result<(), TestCaseError> {
    let reps = ErRepresentations {
        v_s_t: vecs[0].clone(),
        v_m_t: vecs[1].clone(),
        v_s: vecs[2].clone(),
        v_m: vecs[3].clone(),
        u_m_t: vecs[4].clone(),
        u_m: vecs[5].clone(),
    };
    let cfg = LossConfig::new(a1, a2).unwrap();
    let t = compute_loss(y, p, &reps, &cfg).unwrap();
    prop_assert_eq!(t.total, t.ce - a1 * t.sim_local - a2 * t.sim_global);
    prop_assert_eq!(t.sim_local, cosine(&vecs[4], &vecs[1]));
    prop_assert_eq!(t.sim_global, cosine(&vecs[5], &vecs[3]));
    prop_assert!(t.sim_local.abs() <= 1.0 + 1e-12 && t.sim_global.abs() <= 1.0 + 1e-12);
    prop_assert!(t.ce >= 0.0);
    let ood = compute_loss(y, p, &reps, &LossConfig::ood()).unwrap();
    prop_assert_eq!(ood.total, ood.ce);
    Ok(())
}

pub fn check_prf(labels: &[(u8, u8)]) -> Result<(), TestCaseError> {
    let gold: Vec<u8> = labels.iter().map(|l| l.0).collect();
    let pred: Vec<u8> = labels.iter().map(|l| l.1).collect();
    let got = prf(&ConfusionCounts::from_labels(&gold, &pred));
    // oracle: set-based definitions over index sets
    let g: BTreeSet<usize> = (0..gold.len()).filter(|&i| gold[i] == 1).collect();
    let s: BTreeSet<usize> = (0..pred.len()).filter(|&i| pred[i] == 1).collect();
    let hit = g.intersection(&s).count() as f64;
    let precision = if s.is_empty() { 0.0 } else { hit / s.len() as f64 };
    let recall = if g.is_empty() { 0.0 } else { hit / g.len() as f64 };
    let f1 = if g.len() + s.len() == 0 { 0.0 } else { 2.0 * hit / (g.len() + s.len()) as f64 };
    prop_assert!((got.precision - precision).abs() < 1e-12);
    prop_assert!((got.recall - recall).abs() < 1e-12);
    prop_assert!((got.f1 - f1).abs() < 1e-12);
    Ok(())
}

pub fn check_identical_ensemble(probs: &[(u8, f64)], n: usize) -> Result<(), TestCaseError> {
    let member: Vec<Prediction> = probs
        .iter()
        .enumerate()
        .map(|(i, &(g, p))| Prediction::new(format!("i{i}"), g, p, ModelTag::new("ER", Some(1), None)))
        .collect();
    let tag = ModelTag::new("ER-Ens", None, None);
    let ens = ensemble(&vec![member.clone(); n], tag).unwrap();
    prop_assert_eq!(ens.len(), member.len());
    for (e, m) in ens.iter().zip(&member) {
        prop_assert_eq!(&e.instance_id, &m.instance_id);
        prop_assert_eq!(e.probability.to_bits(), m.probability.to_bits());
        prop_assert_eq!(e.label, m.label);
        prop_assert_eq!(e.gold, m.gold);
    }
    Ok(())
}

/// Similarity terms of a fresh ER model and `total - ce`, in both precisions.
pub fn step_zero_similarities() -> Vec<(Precision, f64, f64, f64)> {
    let toy = toy(16, 7);
    let enc = encoder_config(&toy.tokenizer, 16, 2);
    let refs: Vec<_> = toy.pairs.iter().collect();
    [Precision::F32, Precision::F64]
        .into_iter()
        .map(|precision| {
            let m = model(Architecture::Er, &enc, precision, 4);
            let batch = m.batch(&refs, toy.tokenizer.pad_id()).unwrap();
            let out = m.forward(&batch, &mut Dropout::disabled()).unwrap();
            let (_, terms) = batch_loss(&out, batch.label_tensor(), &LossConfig::wid()).unwrap();
            (precision, terms.sim_local, terms.sim_global, terms.total - terms.ce)
        })
        .collect()
}

/// Compares autodiff gradients of every head parameter with central
/// differences (h = 1e-5, F64). Returns `(checked entries, worst relative
/// error)` per architecture; entries where both sides vanish (inactive ReLU
/// units) are skipped but must agree on being zero.
pub fn head_gradient_errors() -> Vec<(Architecture, usize, f64)> {
    let toy = toy(8, 8);
    let enc = encoder_config(&toy.tokenizer, 8, 1);
    let refs: Vec<_> = toy.pairs.iter().collect();
    let cfg = LossConfig::wid();
    let mut report = Vec::new();
    for arch in [Architecture::Er, Architecture::Rspv] {
        let m = model(arch, &enc, Precision::F64, 11);
        // larger head weights so the loss is far from flat
        for (name, t) in m.trainable_tensors() {
            if name.starts_with("head.") {
                m.set_param(&name, &t.randn_like(0.0, 0.5).unwrap()).unwrap();
            }
        }
        let batch = m.batch(&refs, toy.tokenizer.pad_id()).unwrap();
        let loss_value = || {
            let out = m.forward(&batch, &mut Dropout::disabled()).unwrap();
            batch_loss(&out, batch.label_tensor(), &cfg).unwrap().1.total
        };
        let out = m.forward(&batch, &mut Dropout::disabled()).unwrap();
        let (loss, _) = batch_loss(&out, batch.label_tensor(), &cfg).unwrap();
        let grads = loss.backward().unwrap();
        let mut checked = 0;
        let mut worst = 0.0f64;
        for (_, var) in m.head_vars() {
            let g = to_f64(grads.get(var.as_tensor()).unwrap());
            let base = to_f64(var.as_tensor());
            let shape = var.as_tensor().shape().clone();
            for i in 0..base.len() {
                let h = 1e-5;
                let mut plus = base.clone();
                plus[i] += h;
                var.set(&Tensor::from_vec(plus, &shape, &Device::Cpu).unwrap()).unwrap();
                let lp = loss_value();
                let mut minus = base.clone();
                minus[i] -= h;
                var.set(&Tensor::from_vec(minus, &shape, &Device::Cpu).unwrap()).unwrap();
                let lm = loss_value();
                var.set(&Tensor::from_vec(base.clone(), &shape, &Device::Cpu).unwrap()).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let scale = g[i].abs().max(fd.abs());
                if scale < 1e-7 {
                    continue;
                }
                worst = worst.max((g[i] - fd).abs() / scale);
                checked += 1;
            }
        }
        report.push((arch, checked, worst));
    }
    report
}

pub fn dtype_name(p: Precision) -> &'static str {
    match p.dtype() {
        DType::F64 => "f64",
        _ => "f32",
    }
}

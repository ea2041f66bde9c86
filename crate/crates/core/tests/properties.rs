mod common;

use std::collections::{BTreeMap, BTreeSet};

use candle_core::DType;
use metaphor_er_core::encoding::SubwordTokenizer;
use metaphor_er_core::evaluation::{micro_average, paired_ttest, ConfusionCounts, ModelTag, Prediction};
use metaphor_er_core::model::{Architecture, Dropout, Precision};
use metaphor_er_core::splits::build_wid_folds;
use metaphor_er_core::training::{batch_loss, compute_loss, lr_at_step, LossConfig, ScheduleConfig};
use proptest::prelude::*;

use common::checks::*;
use common::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn wid_folds_partition(data in corpus_strategy(1), k in 2usize..11, seed in any::<u64>()) {
        check_wid(&data, k, seed)?;
    }

    #[test]
    fn ood_folds_are_lemma_disjoint(data in corpus_strategy(10), k in 2usize..11, seed in any::<u64>()) {
        check_ood(&data, k, seed)?;
    }

    #[test]
    fn train_dev_split_partitions_training_folds(data in corpus_strategy(1), seed in any::<u64>(), frac in 0.0f64..0.5) {
        prop_assume!(data.len() >= 5);
        let plan = build_wid_folds(&data, 5, seed).unwrap();
        let (train, dev) = plan.train_dev_split(2, frac, seed);
        let all: BTreeSet<&str> = plan.train_ids(2).into_iter().collect();
        let got: BTreeSet<&str> = train.iter().chain(&dev).map(String::as_str).collect();
        prop_assert_eq!(train.len() + dev.len(), all.len());
        prop_assert_eq!(got, all);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn encode_mask_alignment_round_trips((words, t, max_len) in encode_case()) {
        check_encode(&wp(), &words, t, max_len)?;
    }

    #[test]
    fn instance_loss_decomposes(case in loss_case()) {
        check_loss_decomposition(case)?;
    }

    #[test]
    fn prf_matches_brute_force(labels in prop::collection::vec((0u8..2, 0u8..2), 0..200)) {
        check_prf(&labels)?;
    }

    #[test]
    fn micro_average_is_order_invariant(
        rows in prop::collection::vec((0u8..2, 0.0f64..1.0), 2..120),
        cut in any::<prop::sample::Index>(),
        seed in any::<u64>(),
    ) {
        let preds: Vec<Prediction> = rows
            .iter()
            .enumerate()
            .map(|(i, &(g, p))| Prediction::new(format!("i{i}"), g, p, ModelTag::new("ER", None, None)))
            .collect();
        let gold: BTreeMap<String, u8> = preds.iter().map(|p| (p.instance_id.clone(), p.gold)).collect();
        let (whole, _) = micro_average(std::slice::from_ref(&preds), &gold).unwrap();
        let mut shuffled = preds.clone();
        use rand::{seq::SliceRandom, SeedableRng};
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let c = cut.index(shuffled.len());
        let folds = vec![shuffled[..c].to_vec(), shuffled[c..].to_vec()];
        let (split, _) = micro_average(&folds, &gold).unwrap();
        prop_assert_eq!(whole, split);
        prop_assert_eq!(whole, ConfusionCounts::from_predictions(&preds));
    }

    #[test]
    fn ensemble_of_identical_members_is_identity(
        probs in prop::collection::vec((0u8..2, 0.0f64..=1.0), 1..80),
        n in 1usize..8,
    ) {
        check_identical_ensemble(&probs, n)?;
    }

    #[test]
    fn ttest_is_antisymmetric(
        a in prop::collection::vec(0.0f64..1.0, 2..12),
        shift in prop::collection::vec(-0.2f64..0.2, 12),
    ) {
        let b: Vec<f64> = a.iter().zip(&shift).map(|(x, s)| x + s).collect();
        let ab = paired_ttest(&a, &b).unwrap();
        let ba = paired_ttest(&b, &a).unwrap();
        prop_assume!(!ab.zero_variance);
        prop_assert!((ab.t + ba.t).abs() < 1e-9 * ab.t.abs().max(1.0));
        prop_assert!((ab.p_value + ba.p_value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn lr_schedule_is_bounded_and_unimodal(
        peak in 1e-6f64..1e-2,
        warmup in 0usize..4,
        extra in 1usize..6,
        n_train in 1usize..500,
        batch in 1usize..64,
    ) {
        let cfg = ScheduleConfig {
            peak_lr: peak,
            warmup_epochs: warmup,
            total_epochs: warmup + extra,
            batch_size: batch,
            ..Default::default()
        };
        let spe = cfg.steps_per_epoch(n_train);
        let total = spe * cfg.total_epochs;
        let lrs: Vec<f64> = (0..total).map(|s| lr_at_step(s, spe, &cfg).unwrap()).collect();
        prop_assert!(lrs.iter().all(|&l| (0.0..=peak * (1.0 + 1e-12)).contains(&l)));
        let top = lrs.iter().cloned().fold(0.0, f64::max);
        let peak_at = lrs.iter().position(|&l| l == top).unwrap();
        prop_assert!(lrs[..=peak_at].windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(lrs[peak_at..].windows(2).all(|w| w[0] >= w[1]));
        prop_assert_eq!(lr_at_step(total, spe, &cfg).unwrap(), 0.0);
        prop_assert!(lr_at_step(total + 1, spe, &cfg).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// The scalar the optimizer sees is the batch mean of per-instance losses.
    #[test]
    fn batch_loss_is_mean_of_instance_losses(seed in 0u64..1000, a1 in 0.0f64..3.0, a2 in 0.0f64..3.0) {
        let toy = toy(12, seed);
        let enc = encoder_config(&toy.tokenizer, 8, 1);
        let model = model(Architecture::Er, &enc, Precision::F64, seed);
        // perturb the trainable encoder so similarity terms move away from 1
        for (name, t) in model.trainable_tensors() {
            if name.starts_with("encoder.") && name.ends_with("weight") {
                let noise = t.randn_like(0.0, 0.05).unwrap();
                model.set_param(&name, &(t + noise).unwrap()).unwrap();
            }
        }
        let cfg = LossConfig::new(a1, a2).unwrap();
        let refs: Vec<_> = toy.pairs.iter().collect();
        let batch = model.batch(&refs, toy.tokenizer.pad_id()).unwrap();
        let out = model.forward(&batch, &mut Dropout::disabled()).unwrap();
        let (loss, terms) = batch_loss(&out, batch.label_tensor(), &cfg).unwrap();
        let tag = ModelTag::new("ER", None, None);
        let mut sums = [0.0; 4];
        for p in &toy.pairs {
            let (reps, pred) = model.forward_er(p, toy.tokenizer.pad_id(), &tag).unwrap();
            let t = compute_loss(p.label, pred.probability, &reps, &cfg).unwrap();
            for (s, v) in sums.iter_mut().zip([t.ce, t.sim_local, t.sim_global, t.total]) {
                *s += v / toy.pairs.len() as f64;
            }
        }
        let scalar = loss.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap();
        prop_assert!((scalar - terms.total).abs() < 1e-12);
        prop_assert!((terms.total - (terms.ce - a1 * terms.sim_local - a2 * terms.sim_global)).abs() < 1e-12);
        for (got, want) in [terms.ce, terms.sim_local, terms.sim_global, terms.total].iter().zip(sums) {
            prop_assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
        prop_assert!(terms.sim_local < 1.0);
    }
}

#[test]
fn ttest_fixture() {
    let a = [1.0, 0.5, 1.5, 1.0, 0.5];
    let r = paired_ttest(&a, &[0.0; 5]).unwrap();
    assert!((r.t - 4.81070235442364).abs() < 1e-10);
    assert!((r.p_value - 0.004290459360962386).abs() < 1e-10);
    assert!(r.significant);
    // rounded to the reported precision
    assert_eq!(format!("{:.2}", r.t), "4.81");
    assert_eq!(format!("{:.4}", r.p_value), "0.0043");
}

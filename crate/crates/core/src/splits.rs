//! Evaluation protocols: random k-fold (WID), lemma-disjoint k-fold (OOD) and
//! the test-only novel subset scored by WID-trained models.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DatasetId, TargetInstance};

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("infeasible split: {0}")]
    Infeasible(String),
    #[error("instance `{0}` not found or not eligible")]
    MissingInstance(String),
    #[error("duplicate instance id `{0}`")]
    DuplicateId(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SplitMode {
    Wid,
    Ood,
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitMode::Wid => "WID",
            SplitMode::Ood => "OOD",
        })
    }
}

impl FromStr for SplitMode {
    type Err = SplitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "wid" => Ok(SplitMode::Wid),
            "ood" => Ok(SplitMode::Ood),
            _ => Err(SplitError::Parse {
                line: 0,
                message: format!("unknown split mode {s:?}"),
            }),
        }
    }
}

/// Instance-to-fold assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub dataset: DatasetId,
    pub mode: SplitMode,
    pub k: usize,
    pub seed: u64,
    pub assignment: BTreeMap<String, usize>,
}

impl FoldPlan {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignment.get(id).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }

    pub fn test_ids(&self, fold: usize) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn train_ids(&self, fold: usize) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &f)| f != fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    /// Splits the training folds of `test_fold` into train and development
    /// ids; `dev_fraction` of the training instances (rounded) go to dev,
    /// chosen by `seed`.
    pub fn train_dev_split(&self, test_fold: usize, dev_fraction: f64, seed: u64) -> (Vec<String>, Vec<String>) {
        let mut ids: Vec<String> = self.train_ids(test_fold).into_iter().map(String::from).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(test_fold as u64 + 1);
        ids.shuffle(&mut rng);
        let n_dev = ((ids.len() as f64) * dev_fraction).round() as usize;
        let train = ids.split_off(n_dev.min(ids.len()));
        let mut dev = ids;
        let mut train = train;
        dev.sort();
        train.sort();
        (train, dev)
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "# dataset={} mode={} k={} seed={}",
            self.dataset, self.mode, self.k, self.seed
        )?;
        for (id, fold) in &self.assignment {
            writeln!(out, "{id}\t{fold}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, SplitError> {
        let mut lines = reader.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        let meta = parse_meta(&header, 1)?;
        let get = |key: &str| {
            meta.get(key).ok_or_else(|| SplitError::Parse {
                line: 1,
                message: format!("missing `{key}` in plan header"),
            })
        };
        let bad = |key: &str| SplitError::Parse {
            line: 1,
            message: format!("invalid `{key}` in plan header"),
        };
        let dataset: DatasetId = get("dataset")?.parse().map_err(|_| bad("dataset"))?;
        let mode: SplitMode = get("mode")?.parse()?;
        let k: usize = get("k")?.parse().map_err(|_| bad("k"))?;
        let seed: u64 = get("seed")?.parse().map_err(|_| bad("seed"))?;
        let assignment = read_id_column_pairs(lines, 2, |v| v.parse::<usize>().ok().filter(|&f| f < k))?;
        Ok(FoldPlan {
            dataset,
            mode,
            k,
            seed,
            assignment,
        })
    }
}

fn parse_meta(header: &str, line: usize) -> Result<HashMap<String, String>, SplitError> {
    let body = header.strip_prefix('#').ok_or_else(|| SplitError::Parse {
        line,
        message: "expected a `# key=value ...` header".into(),
    })?;
    Ok(body
        .split_whitespace()
        .filter_map(|kv| kv.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect())
}

fn read_id_column_pairs<I, T, F>(lines: I, first_line: usize, parse: F) -> Result<BTreeMap<String, T>, SplitError>
where
    I: Iterator<Item = std::io::Result<String>>,
    F: Fn(&str) -> Option<T>,
{
    let mut map = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let lineno = first_line + i;
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, v) = line.split_once('\t').ok_or_else(|| SplitError::Parse {
            line: lineno,
            message: "expected `instance_id<TAB>value`".into(),
        })?;
        let value = parse(v.trim()).ok_or_else(|| SplitError::Parse {
            line: lineno,
            message: format!("invalid value {v:?}"),
        })?;
        if map.insert(id.to_string(), value).is_some() {
            return Err(SplitError::DuplicateId(id.to_string()));
        }
    }
    Ok(map)
}

fn check_unique(instances: &[TargetInstance]) -> Result<(), SplitError> {
    let mut seen = HashSet::new();
    for inst in instances {
        if !seen.insert(inst.instance_id.as_str()) {
            return Err(SplitError::DuplicateId(inst.instance_id.clone()));
        }
    }
    Ok(())
}

fn dataset_of(instances: &[TargetInstance]) -> DatasetId {
    instances.first().map(|i| i.dataset).unwrap_or(DatasetId::Vua20)
}

/// Random k-fold assignment; fold sizes differ by at most one.
pub fn build_wid_folds(instances: &[TargetInstance], k: usize, seed: u64) -> Result<FoldPlan, SplitError> {
    if k < 2 {
        return Err(SplitError::Infeasible(format!("k must be at least 2, got {k}")));
    }
    if instances.len() < k {
        return Err(SplitError::Infeasible(format!(
            "{} instances cannot fill {k} folds",
            instances.len()
        )));
    }
    check_unique(instances)?;
    let mut order: Vec<usize> = (0..instances.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let assignment = order
        .iter()
        .enumerate()
        .map(|(pos, &i)| (instances[i].instance_id.clone(), pos % k))
        .collect();
    Ok(FoldPlan {
        dataset: dataset_of(instances),
        mode: SplitMode::Wid,
        k,
        seed,
        assignment,
    })
}

/// Two-fold plan for corpora with a predefined test set: fold 0 holds
/// `test_ids`, fold 1 everything else. Training on fold 0 only therefore
/// fits the standard training portion.
pub fn build_fixed_split(instances: &[TargetInstance], test_ids: &[String]) -> Result<FoldPlan, SplitError> {
    check_unique(instances)?;
    let test: HashSet<&str> = test_ids.iter().map(String::as_str).collect();
    let known: HashSet<&str> = instances.iter().map(|i| i.instance_id.as_str()).collect();
    if let Some(id) = test_ids.iter().find(|id| !known.contains(id.as_str())) {
        return Err(SplitError::MissingInstance(id.clone()));
    }
    if test.is_empty() || test.len() == instances.len() {
        return Err(SplitError::Infeasible("test set must be a proper, non-empty subset".into()));
    }
    let assignment = instances
        .iter()
        .map(|i| (i.instance_id.clone(), usize::from(!test.contains(i.instance_id.as_str()))))
        .collect();
    Ok(FoldPlan {
        dataset: dataset_of(instances),
        mode: SplitMode::Wid,
        k: 2,
        seed: 0,
        assignment,
    })
}

/// Lemma-disjoint k-fold assignment. Lemma groups are placed largest first
/// (seeded shuffle breaks count ties) into the currently smallest fold.
pub fn build_ood_folds(instances: &[TargetInstance], k: usize, seed: u64) -> Result<FoldPlan, SplitError> {
    if k < 2 {
        return Err(SplitError::Infeasible(format!("k must be at least 2, got {k}")));
    }
    check_unique(instances)?;
    let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for inst in instances {
        groups.entry(&inst.lemma).or_default().push(&inst.instance_id);
    }
    if groups.len() < k {
        return Err(SplitError::Infeasible(format!(
            "{} distinct lemmas cannot fill {k} lemma-disjoint folds",
            groups.len()
        )));
    }
    let mut groups: Vec<(&str, Vec<&str>)> = groups.into_iter().collect();
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // Stable sort keeps the shuffled order among equal counts.
    groups.sort_by(|a, b| b.1.len().cmp(&a.1.len()));

    let mut sizes = vec![0usize; k];
    let mut assignment = BTreeMap::new();
    for (_, ids) in groups {
        let (fold, _) = sizes
            .iter()
            .enumerate()
            .min_by_key(|&(i, &s)| (s, i))
            .expect("k >= 2");
        sizes[fold] += ids.len();
        for id in ids {
            assignment.insert(id.to_string(), fold);
        }
    }
    Ok(FoldPlan {
        dataset: dataset_of(instances),
        mode: SplitMode::Ood,
        k,
        seed,
        assignment,
    })
}

/// Test-only subset of LCC: supplied novel positives plus sampled literal
/// negatives matching the full dataset's positive ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NovelSubset {
    pub positive_ids: Vec<String>,
    pub negative_ids: Vec<String>,
    pub target_pos_ratio: f64,
    pub seed: u64,
}

impl NovelSubset {
    pub fn achieved_ratio(&self) -> f64 {
        let total = self.positive_ids.len() + self.negative_ids.len();
        if total == 0 {
            return 0.0;
        }
        self.positive_ids.len() as f64 / total as f64
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.positive_ids.iter().chain(&self.negative_ids).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.positive_ids.len() + self.negative_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `# novel target_pos_ratio=.. seed=..` followed by `instance_id<TAB>label`.
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# novel target_pos_ratio={} seed={}", self.target_pos_ratio, self.seed)?;
        for id in &self.positive_ids {
            writeln!(out, "{id}\t1")?;
        }
        for id in &self.negative_ids {
            writeln!(out, "{id}\t0")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, SplitError> {
        let mut lines = reader.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        let meta = parse_meta(&header, 1)?;
        let target_pos_ratio = meta
            .get("target_pos_ratio")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| SplitError::Parse {
                line: 1,
                message: "missing target_pos_ratio".into(),
            })?;
        let seed = meta.get("seed").and_then(|v| v.parse().ok()).unwrap_or(0);
        let mut positive_ids = Vec::new();
        let mut negative_ids = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once('\t') {
                Some((id, "1")) => positive_ids.push(id.to_string()),
                Some((id, "0")) => negative_ids.push(id.to_string()),
                _ => {
                    return Err(SplitError::Parse {
                        line: i + 2,
                        message: "expected `instance_id<TAB>0|1`".into(),
                    })
                }
            }
        }
        Ok(NovelSubset {
            positive_ids,
            negative_ids,
            target_pos_ratio,
            seed,
        })
    }
}

/// Reads a one-id-per-line list; blank lines and `#` comments are skipped.
pub fn read_id_list<R: BufRead>(reader: R) -> Result<Vec<String>, SplitError> {
    let mut ids = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('#') {
            ids.push(t.to_string());
        }
    }
    Ok(ids)
}

pub fn build_novel_subset(
    lcc_instances: &[TargetInstance],
    novel_positive_ids: &[String],
    seed: u64,
) -> Result<NovelSubset, SplitError> {
    if lcc_instances.is_empty() {
        return Err(SplitError::Infeasible("empty LCC instance list".into()));
    }
    let by_id: HashMap<&str, &TargetInstance> =
        lcc_instances.iter().map(|i| (i.instance_id.as_str(), i)).collect();
    let mut positives = HashSet::new();
    for id in novel_positive_ids {
        match by_id.get(id.as_str()) {
            Some(inst) if inst.label == 1 && inst.metaphoricity == Some(3.0) => {
                if !positives.insert(id.as_str()) {
                    return Err(SplitError::DuplicateId(id.clone()));
                }
            }
            _ => return Err(SplitError::MissingInstance(id.clone())),
        }
    }
    let n_pos_full = lcc_instances.iter().filter(|i| i.label == 1).count();
    let ratio = n_pos_full as f64 / lcc_instances.len() as f64;
    if ratio <= 0.0 || ratio >= 1.0 {
        return Err(SplitError::Infeasible(format!(
            "full-dataset positive ratio {ratio} leaves nothing to match"
        )));
    }
    let n_pos = novel_positive_ids.len();
    let n_neg = (n_pos as f64 * (1.0 - ratio) / ratio).round() as usize;
    let pool: Vec<&str> = lcc_instances
        .iter()
        .filter(|i| i.label == 0)
        .map(|i| i.instance_id.as_str())
        .collect();
    if pool.len() < n_neg {
        return Err(SplitError::Infeasible(format!(
            "need {n_neg} negatives, only {} available",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut negative_ids: Vec<String> = pool
        .choose_multiple(&mut rng, n_neg)
        .map(|s| s.to_string())
        .collect();
    negative_ids.sort();
    Ok(NovelSubset {
        positive_ids: novel_positive_ids.to_vec(),
        negative_ids,
        target_pos_ratio: ratio,
        seed,
    })
}

/// Maps every novel instance to the WID fold whose held-out model may score it.
pub fn novel_eval_guard(novel: &NovelSubset, wid_plan: &FoldPlan) -> Result<BTreeMap<String, usize>, SplitError> {
    if wid_plan.mode != SplitMode::Wid {
        return Err(SplitError::Infeasible("novel evaluation requires a WID plan".into()));
    }
    novel
        .ids()
        .map(|id| {
            wid_plan
                .fold_of(id)
                .map(|f| (id.to_string(), f))
                .ok_or_else(|| SplitError::MissingInstance(id.to_string()))
        })
        .collect()
}

pub fn write_guard<W: Write>(mut out: W, guard: &BTreeMap<String, usize>) -> std::io::Result<()> {
    for (id, fold) in guard {
        writeln!(out, "{id}\t{fold}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth(n: usize, lemmas: usize) -> Vec<TargetInstance> {
        (0..n)
            .map(|i| TargetInstance {
                instance_id: format!("i{i:05}"),
                dataset: DatasetId::Lcc,
                sentence: vec!["w".into(), "x".into()],
                target_index: 0,
                label: u8::from(i % 3 == 0),
                lemma: format!("l{}", i % lemmas),
                pos: None,
                metaphoricity: Some(if i % 3 == 0 { 3.0 } else { 0.0 }),
                derived_lemma: false,
            })
            .collect()
    }

    #[test]
    fn wid_exact_partition_of_ten() {
        let plan = build_wid_folds(&synth(10, 3), 10, 1).unwrap();
        assert_eq!(plan.fold_sizes(), vec![1; 10]);
    }

    #[test]
    fn wid_lcc_sized_folds() {
        let plan = build_wid_folds(&synth(5646, 50), 10, 3).unwrap();
        let sizes = plan.fold_sizes();
        assert!(sizes.iter().all(|&s| s == 564 || s == 565), "{sizes:?}");
        assert_eq!(sizes.iter().sum::<usize>(), 5646);
    }

    #[test]
    fn wid_deterministic_and_seed_sensitive() {
        let xs = synth(100, 7);
        assert_eq!(build_wid_folds(&xs, 10, 5).unwrap(), build_wid_folds(&xs, 10, 5).unwrap());
        assert_ne!(
            build_wid_folds(&xs, 10, 5).unwrap().assignment,
            build_wid_folds(&xs, 10, 6).unwrap().assignment
        );
    }

    #[test]
    fn wid_infeasible() {
        assert!(matches!(build_wid_folds(&synth(3, 1), 10, 0), Err(SplitError::Infeasible(_))));
        assert!(matches!(build_wid_folds(&synth(3, 1), 1, 0), Err(SplitError::Infeasible(_))));
    }

    #[test]
    fn ood_forced_assignment() {
        let mut xs = synth(4, 1);
        xs[0].lemma = "a".into();
        xs[1].lemma = "a".into();
        xs[2].lemma = "a".into();
        xs[3].lemma = "b".into();
        let plan = build_ood_folds(&xs, 2, 0).unwrap();
        let mut sizes = plan.fold_sizes();
        sizes.sort();
        assert_eq!(sizes, vec![1, 3]);
    }

    #[test]
    fn ood_too_few_lemmas() {
        assert!(matches!(build_ood_folds(&synth(50, 5), 10, 0), Err(SplitError::Infeasible(_))));
    }

    #[test]
    fn ood_fifty_lemmas_every_fold_nonempty() {
        let plan = build_ood_folds(&synth(3737, 50), 10, 7).unwrap();
        assert!(plan.fold_sizes().iter().all(|&s| s > 0));
    }

    #[test]
    fn dev_split_takes_ten_percent() {
        let plan = build_wid_folds(&synth(100, 5), 10, 0).unwrap();
        let (train, dev) = plan.train_dev_split(0, 0.1, 42);
        assert_eq!(dev.len(), 9);
        assert_eq!(train.len(), 81);
        let test: HashSet<&str> = plan.test_ids(0).into_iter().collect();
        assert!(train.iter().chain(&dev).all(|id| !test.contains(id.as_str())));
        assert_eq!(plan.train_dev_split(0, 0.1, 42), (train, dev));
    }

    #[test]
    fn plan_file_round_trip() {
        let plan = build_ood_folds(&synth(60, 12), 4, 9).unwrap();
        let mut buf = Vec::new();
        plan.write(&mut buf).unwrap();
        assert_eq!(FoldPlan::read(buf.as_slice()).unwrap(), plan);
    }

    #[test]
    fn novel_single_positive_half_ratio() {
        let mut xs = synth(4, 2);
        for (i, x) in xs.iter_mut().enumerate() {
            x.label = u8::from(i < 2);
            x.metaphoricity = Some(if i < 2 { 3.0 } else { 0.0 });
        }
        let novel = build_novel_subset(&xs, &["i00000".to_string()], 0).unwrap();
        assert_eq!(novel.negative_ids.len(), 1);
        assert_eq!(novel.achieved_ratio(), 0.5);
    }

    #[test]
    fn novel_rejects_literal_positive() {
        let xs = synth(30, 2);
        let err = build_novel_subset(&xs, &["i00001".to_string()], 0).unwrap_err();
        assert!(matches!(err, SplitError::MissingInstance(id) if id == "i00001"));
        let err = build_novel_subset(&xs, &["nope".to_string()], 0).unwrap_err();
        assert!(matches!(err, SplitError::MissingInstance(_)));
    }

    #[test]
    fn novel_insufficient_negatives() {
        let mut xs = synth(6, 2);
        for x in xs.iter_mut() {
            x.label = 1;
            x.metaphoricity = Some(3.0);
        }
        xs[5].label = 0;
        xs[5].metaphoricity = Some(0.0);
        // ratio 5/6: 4 positives need round(0.8) = 1 negative.
        let ids: Vec<String> = (0..4).map(|i| format!("i{i:05}")).collect();
        assert!(build_novel_subset(&xs, &ids, 0).is_ok());
        // No literal instances left at all.
        xs[5].label = 1;
        xs[5].metaphoricity = Some(3.0);
        assert!(matches!(build_novel_subset(&xs, &ids, 0), Err(SplitError::Infeasible(_))));
    }

    #[test]
    fn guard_empty_and_identity() {
        let xs = synth(40, 4);
        let plan = build_wid_folds(&xs, 10, 2).unwrap();
        let empty = NovelSubset {
            positive_ids: vec![],
            negative_ids: vec![],
            target_pos_ratio: 0.3,
            seed: 0,
        };
        assert!(novel_eval_guard(&empty, &plan).unwrap().is_empty());

        let all = NovelSubset {
            positive_ids: xs.iter().filter(|x| x.label == 1).map(|x| x.instance_id.clone()).collect(),
            negative_ids: xs.iter().filter(|x| x.label == 0).map(|x| x.instance_id.clone()).collect(),
            target_pos_ratio: 0.3,
            seed: 0,
        };
        assert_eq!(novel_eval_guard(&all, &plan).unwrap(), plan.assignment);
    }

    #[test]
    fn guard_missing_id() {
        let plan = build_wid_folds(&synth(20, 4), 10, 2).unwrap();
        let novel = NovelSubset {
            positive_ids: vec!["zzz".into()],
            negative_ids: vec![],
            target_pos_ratio: 0.3,
            seed: 0,
        };
        assert!(matches!(novel_eval_guard(&novel, &plan), Err(SplitError::MissingInstance(_))));
    }

    #[test]
    fn novel_file_round_trip() {
        let xs = synth(300, 4);
        let pos: Vec<String> = xs.iter().filter(|x| x.label == 1).take(20).map(|x| x.instance_id.clone()).collect();
        let novel = build_novel_subset(&xs, &pos, 4).unwrap();
        let mut buf = Vec::new();
        novel.write(&mut buf).unwrap();
        let back = NovelSubset::read(buf.as_slice()).unwrap();
        assert_eq!(back.positive_ids, novel.positive_ids);
        assert_eq!(back.negative_ids, novel.negative_ids);
        assert_eq!(back.target_pos_ratio, novel.target_pos_ratio);
    }

    #[test]
    fn fixed_split_puts_test_ids_in_fold_zero() {
        let xs = synth(10, 3);
        let test = vec!["i00002".to_string(), "i00007".to_string()];
        let plan = build_fixed_split(&xs, &test).unwrap();
        assert_eq!(plan.test_ids(0), vec!["i00002", "i00007"]);
        assert_eq!(plan.train_ids(0).len(), 8);
        assert!(matches!(build_fixed_split(&xs, &["nope".into()]), Err(SplitError::MissingInstance(_))));
        assert!(build_fixed_split(&xs, &[]).is_err());
    }
}

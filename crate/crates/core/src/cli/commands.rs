//! Subcommand implementations.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Protocol};
use super::manifest::write_manifest;
use super::{CliError, SplitModeArg};
use crate::corpus::{self, TargetInstance};
use crate::encoding::{encode_all, EncodedPair, SubwordTokenizer, WordPieceTokenizer};
use crate::evaluation::{
    emit_report, ensemble as ensemble_predictions, micro_average, paired_ttest, read_predictions, write_predictions,
    Comparison, ConfusionCounts, ModelTag, Prediction, Prf, ReportRow, RunReport, SeedMetrics,
};
use crate::llm_baseline::{
    features_for, fold_aligned_predictions, query_all, render_prompt, AnswerFeatures, CacheMode, ChatBackend,
    ClientConfig, HttpChatClient, ResponseCache,
};
use crate::model::{
    adapt_pretrained, save_checkpoint, Activation, Architecture, CheckpointMeta, EncoderConfig, ModelConfig,
    Precision, CHECKPOINT_FORMAT,
};
use crate::splits::{self, FoldPlan, NovelSubset};
use crate::training::{train_run, write_log, RunSpec};

pub const LLM_SYSTEM: &str = "LLM";
const EXCLUDED_FILE: &str = "excluded.txt";
const PREDICTIONS_FILE: &str = "predictions.jsonl";
const PAIRING_UNIT: &str = "per-fold F1 paired by (seed, fold); single-run systems are paired with every seed of the other";

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(p) = path.parent() {
        create_dir(p)?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(value).expect("value serializes");
    if let Some(p) = path.parent() {
        create_dir(p)?;
    }
    std::fs::write(path, json + "\n").map_err(|e| CliError::io(path, e))
}

fn require(path: &Path, hint: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Precondition(format!("{} not found ({hint})", path.display())))
    }
}

fn load_corpus(cfg: &ExperimentConfig) -> Result<Vec<TargetInstance>, CliError> {
    let path = cfg.corpus_path();
    require(&path, "run `ingest` first")?;
    Ok(corpus::read_canonical_file(&path)?.instances)
}

fn load_plan(cfg: &ExperimentConfig, protocol: Protocol) -> Result<FoldPlan, CliError> {
    let path = cfg.plan_path(protocol);
    let mode = protocol.as_str().to_lowercase();
    require(&path, &format!("run `split --mode {mode}` first"))?;
    let f = File::open(&path).map_err(|e| CliError::io(&path, e))?;
    Ok(FoldPlan::read(BufReader::new(f))?)
}

fn load_novel(cfg: &ExperimentConfig) -> Result<NovelSubset, CliError> {
    let path = cfg.plan_path(Protocol::Novel);
    require(&path, "run `split --mode novel` first")?;
    let f = File::open(&path).map_err(|e| CliError::io(&path, e))?;
    Ok(NovelSubset::read(BufReader::new(f))?)
}

pub fn ingest(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let data = cfg
        .data
        .as_ref()
        .ok_or_else(|| CliError::Config("`ingest` needs --data".into()))?;
    let format: corpus::SourceFormat = cfg
        .format
        .as_deref()
        .ok_or_else(|| CliError::Config("`ingest` needs --format".into()))?
        .parse()?;
    let ingested = corpus::ingest(data, cfg.dataset, format)?;
    let dir = cfg.data_dir();
    create_dir(&dir)?;
    corpus::write_canonical_file(&cfg.corpus_path(), &ingested.instances)?;
    let rej = dir.join("rejections.tsv");
    let mut w = create(&rej)?;
    corpus::write_rejections(&mut w, &ingested.rejections).map_err(|e| CliError::io(&rej, e))?;
    w.flush().map_err(|e| CliError::io(&rej, e))?;
    drop(w);
    write_manifest(&dir, "ingest", cfg)?;
    println!(
        "{}: {} instances, {} rejected, {} intermediate excluded",
        cfg.dataset,
        ingested.instances.len(),
        ingested.rejections.len(),
        ingested.excluded_intermediate
    );
    Ok(())
}

pub fn stats(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let instances = load_corpus(cfg)?;
    let s = corpus::compute_stats(&instances)?;
    write_json(&cfg.data_dir().join("stats.json"), &s)?;
    write_manifest(&cfg.data_dir(), "stats", cfg)?;
    println!("{} {}", cfg.dataset, s.table_row());
    Ok(())
}

pub fn split(cfg: &ExperimentConfig, mode: SplitModeArg) -> Result<(), CliError> {
    let instances = load_corpus(cfg)?;
    let dir = cfg.splits_dir();
    match mode {
        SplitModeArg::Wid | SplitModeArg::Ood => {
            let (plan, protocol) = if let (SplitModeArg::Wid, Some(path)) = (mode, &cfg.test_ids) {
                let f = File::open(path).map_err(|e| CliError::io(path, e))?;
                let ids = splits::read_id_list(BufReader::new(f))?;
                (splits::build_fixed_split(&instances, &ids)?, Protocol::Wid)
            } else if mode == SplitModeArg::Wid {
                (splits::build_wid_folds(&instances, cfg.k, cfg.split_seed)?, Protocol::Wid)
            } else {
                (splits::build_ood_folds(&instances, cfg.k, cfg.split_seed)?, Protocol::Ood)
            };
            let path = cfg.plan_path(protocol);
            let mut w = create(&path)?;
            plan.write(&mut w).map_err(|e| CliError::io(&path, e))?;
            w.flush().map_err(|e| CliError::io(&path, e))?;
            println!("{}: fold sizes {:?}", path.display(), plan.fold_sizes());
        }
        SplitModeArg::Novel => {
            let ids_path = cfg
                .novel_ids
                .as_ref()
                .ok_or_else(|| CliError::Config("novel split needs --novel-ids".into()))?;
            let f = File::open(ids_path).map_err(|e| CliError::io(ids_path, e))?;
            let ids = splits::read_id_list(BufReader::new(f))?;
            let subset = splits::build_novel_subset(&instances, &ids, cfg.novel_seed)?;
            let path = cfg.plan_path(Protocol::Novel);
            let mut w = create(&path)?;
            subset.write(&mut w).map_err(|e| CliError::io(&path, e))?;
            w.flush().map_err(|e| CliError::io(&path, e))?;
            println!(
                "{}: {} positives, {} negatives",
                path.display(),
                subset.positive_ids.len(),
                subset.negative_ids.len()
            );
        }
    }
    write_manifest(&dir, "split", cfg)?;
    Ok(())
}

fn tokenizer(cfg: &ExperimentConfig, instances: &[TargetInstance]) -> Result<WordPieceTokenizer, CliError> {
    let path = cfg.vocab_path();
    let lowercase = cfg.encoder != "bert-base-cased";
    if path.exists() {
        return Ok(WordPieceTokenizer::from_vocab_file(&path, lowercase)?);
    }
    if cfg.vocab.is_some() {
        return Err(CliError::Precondition(format!("vocabulary {} not found", path.display())));
    }
    let tok = WordPieceTokenizer::build_from_instances(instances, 1, lowercase);
    let mut w = create(&path)?;
    tok.write_vocab(&mut w).map_err(|e| CliError::io(&path, e))?;
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(tok)
}

fn encoder_setup(cfg: &ExperimentConfig, vocab_size: usize) -> Result<(EncoderConfig, BTreeMap<String, Tensor>), CliError> {
    match cfg.encoder.as_str() {
        "tiny" => {
            let enc = EncoderConfig::tiny(vocab_size, cfg.encoder_hidden, cfg.encoder_layers);
            let weights = enc.random_weights(cfg.encoder_seed, DType::F32, &Device::Cpu)?;
            Ok((enc, weights))
        }
        "bert-base" | "bert-base-uncased" | "bert-base-cased" => {
            let path = cfg
                .encoder_weights
                .as_ref()
                .ok_or_else(|| CliError::Config("a pre-trained encoder needs encoder_weights".into()))?;
            let enc = EncoderConfig {
                max_positions: 512,
                position_offset: 0,
                layer_norm_eps: 1e-12,
                ..EncoderConfig::base(vocab_size)
            };
            let raw = candle_core::safetensors::load(path, &Device::Cpu).map_err(crate::model::ModelError::from)?;
            let weights = adapt_pretrained(raw.into_iter().collect(), &enc, cfg.encoder_seed)?;
            Ok((enc, weights))
        }
        other => Err(CliError::Config(format!("unknown encoder `{other}`"))),
    }
}

fn model_config(cfg: &ExperimentConfig, enc: EncoderConfig) -> Result<ModelConfig, CliError> {
    let mut mc = ModelConfig::new(cfg.architecture, enc);
    if !cfg.head_dims.is_empty() {
        mc.head.hidden_dims = cfg.head_dims.clone();
    }
    mc.head.activation = cfg.head_activation.parse::<Activation>()?;
    mc.head.validate()?;
    mc.precision = match cfg.precision.as_str() {
        "f32" => Precision::F32,
        "f64" => Precision::F64,
        p => return Err(CliError::Config(format!("unknown precision `{p}`"))),
    };
    Ok(mc)
}

fn write_id_list(path: &Path, ids: impl IntoIterator<Item = String>) -> Result<(), CliError> {
    let mut w = create(path)?;
    for id in ids {
        writeln!(w, "{id}").map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn read_id_set(path: &Path) -> Result<BTreeSet<String>, CliError> {
    if !path.exists() {
        return Ok(BTreeSet::new());
    }
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = BTreeSet::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if !line.trim().is_empty() {
            out.insert(line.trim().to_string());
        }
    }
    Ok(out)
}

pub fn train(cfg: &ExperimentConfig) -> Result<(), CliError> {
    if cfg.protocol == Protocol::Novel {
        return Err(CliError::Config(
            "the novel protocol is scored by WID runs; train with --protocol wid".into(),
        ));
    }
    let instances = load_corpus(cfg)?;
    let plan = load_plan(cfg, cfg.protocol)?;
    let tok = tokenizer(cfg, &instances)?;
    let (pairs, excluded) = encode_all(&instances, &tok, cfg.max_len);
    let by_id: BTreeMap<&str, &EncodedPair> = pairs.iter().map(|p| (p.instance_id.as_str(), p)).collect();
    let (enc, weights) = encoder_setup(cfg, tok.vocab_size())?;
    let model_cfg = model_config(cfg, enc)?;
    let system = cfg.architecture.to_string();
    let arch_dir = cfg.arch_dir(cfg.protocol, &system);
    write_id_list(&arch_dir.join(EXCLUDED_FILE), excluded.iter().map(|e| e.instance_id.clone()))?;

    let runs: Vec<(usize, u64)> = cfg
        .folds()
        .into_iter()
        .flat_map(|f| cfg.seeds.iter().map(move |&s| (f, s)))
        .collect();
    let pick = |ids: &[String]| -> Vec<EncodedPair> {
        ids.iter().filter_map(|i| by_id.get(i.as_str()).map(|p| (*p).clone())).collect()
    };
    let run_one = |&(fold, seed): &(usize, u64)| -> Result<(), CliError> {
        let (train_ids, dev_ids) = plan.train_dev_split(fold, cfg.dev_fraction, seed);
        let test_ids: Vec<String> = plan.test_ids(fold).into_iter().map(String::from).collect();
        let spec = RunSpec {
            model: model_cfg.clone(),
            schedule: cfg.schedule(),
            loss: cfg.loss(),
            seed,
            pad_id: tok.pad_id(),
        };
        let out = train_run(&spec, &weights, &pick(&train_ids), &pick(&dev_ids))?;
        let dir = cfg.run_dir(cfg.protocol, &system, fold, Some(seed));
        create_dir(&dir)?;
        let meta = CheckpointMeta {
            format: CHECKPOINT_FORMAT.into(),
            config: model_cfg.clone(),
            seed,
            fold: Some(fold),
            alpha1: spec.loss.alpha1,
            alpha2: spec.loss.alpha2,
            vocab_hash: tok.vocab_hash(),
        };
        save_checkpoint(&out.model, &meta, &dir.join("checkpoint.safetensors"))?;
        write_log(&dir.join("log.jsonl"), &out.log)?;
        let tag = ModelTag::new(system.clone(), Some(seed), Some(fold));
        let preds = out
            .model
            .predict(&pick(&test_ids), tok.pad_id(), cfg.batch_size, &tag)?;
        write_predictions(&dir.join(PREDICTIONS_FILE), &preds)?;
        write_json(
            &dir.join("run.json"),
            &serde_json::json!({
                "schedule": spec.schedule,
                "loss": spec.loss,
                "dev_best_epoch": out.dev_best_epoch,
                "warnings": out.warnings,
                "n_train": train_ids.len(),
                "n_dev": dev_ids.len(),
            }),
        )?;
        write_manifest(&dir, "train", cfg)?;
        log::info!("finished {}", dir.display());
        Ok(())
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let results: Vec<Result<(), CliError>> = pool.install(|| runs.par_iter().map(run_one).collect());
    results.into_iter().collect::<Result<(), _>>()?;
    write_manifest(&arch_dir, "train", cfg)?;
    println!("trained {} run(s) under {}", runs.len(), arch_dir.display());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldEval {
    pub n: usize,
    pub f1: f64,
}

/// Metrics of one seed (or of a seedless system).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEval {
    pub seed: Option<u64>,
    pub folds_expected: usize,
    pub per_fold: BTreeMap<usize, FoldEval>,
    pub counts: Option<ConfusionCounts>,
    /// Percentages; absent while folds are missing.
    pub metrics: Option<Prf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub dataset: String,
    pub protocol: Protocol,
    pub system: String,
    pub seeds: Vec<SeedEval>,
}

/// Which predictions count for a protocol and which gold labels they face.
struct Scope {
    source: Protocol,
    gold: BTreeMap<String, u8>,
    folds: BTreeSet<usize>,
    /// Novel protocol: the fold allowed to score each novel id.
    guard: Option<BTreeMap<String, usize>>,
}

impl Scope {
    fn new(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let instances = load_corpus(cfg)?;
        let labels: BTreeMap<&str, u8> = instances.iter().map(|i| (i.instance_id.as_str(), i.label)).collect();
        match cfg.protocol {
            Protocol::Wid | Protocol::Ood => {
                let plan = load_plan(cfg, cfg.protocol)?;
                let folds: BTreeSet<usize> = cfg.folds().into_iter().collect();
                let gold = plan
                    .assignment
                    .iter()
                    .filter(|(_, f)| folds.contains(f))
                    .filter_map(|(id, _)| labels.get(id.as_str()).map(|&l| (id.clone(), l)))
                    .collect();
                Ok(Self {
                    source: cfg.protocol,
                    gold,
                    folds,
                    guard: None,
                })
            }
            Protocol::Novel => {
                let novel = load_novel(cfg)?;
                let plan = load_plan(cfg, Protocol::Wid)?;
                let guard = splits::novel_eval_guard(&novel, &plan)?;
                let gold = novel
                    .positive_ids
                    .iter()
                    .map(|id| (id.clone(), 1))
                    .chain(novel.negative_ids.iter().map(|id| (id.clone(), 0)))
                    .collect();
                Ok(Self {
                    source: Protocol::Wid,
                    folds: guard.values().copied().collect(),
                    gold,
                    guard: Some(guard),
                })
            }
        }
    }

    /// Folds whose test predictions are needed.
    fn folds(&self) -> BTreeSet<usize> {
        self.folds.clone()
    }

    fn restrict(&self, fold: usize, preds: Vec<Prediction>) -> Vec<Prediction> {
        match &self.guard {
            Some(g) => preds.into_iter().filter(|p| g.get(&p.instance_id) == Some(&fold)).collect(),
            None => preds,
        }
    }
}

/// `fold{f}_seed{s}` or `fold{f}`.
fn parse_run_dir(name: &str) -> Option<(usize, Option<u64>)> {
    let rest = name.strip_prefix("fold")?;
    match rest.split_once("_seed") {
        Some((f, s)) => Some((f.parse().ok()?, Some(s.parse().ok()?))),
        None => Some((rest.parse().ok()?, None)),
    }
}

type RunPredictions = BTreeMap<Option<u64>, BTreeMap<usize, Vec<Prediction>>>;

fn collect_runs(system_dir: &Path) -> Result<RunPredictions, CliError> {
    let mut out: RunPredictions = BTreeMap::new();
    let entries = std::fs::read_dir(system_dir).map_err(|e| CliError::io(system_dir, e))?;
    let mut names: Vec<(String, PathBuf)> = entries
        .filter_map(Result::ok)
        .map(|e| (e.file_name().to_string_lossy().into_owned(), e.path()))
        .collect();
    names.sort();
    for (name, path) in names {
        let Some((fold, seed)) = parse_run_dir(&name) else { continue };
        let file = path.join(PREDICTIONS_FILE);
        if file.exists() {
            out.entry(seed).or_default().insert(fold, read_predictions(&file)?);
        }
    }
    Ok(out)
}

fn systems(cfg: &ExperimentConfig, source: Protocol) -> Result<Vec<String>, CliError> {
    let dir = cfg.out.join("runs").join(cfg.dataset.to_string()).join(source.as_str());
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut out: Vec<String> = std::fs::read_dir(&dir)
        .map_err(|e| CliError::io(&dir, e))?
        .filter_map(Result::ok)
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    out.sort();
    Ok(out)
}

fn summarize(cfg: &ExperimentConfig, scope: &Scope, system: &str, runs: RunPredictions, excluded: &BTreeSet<String>) -> Result<EvalSummary, CliError> {
    let folds = scope.folds();
    let gold: BTreeMap<String, u8> = scope
        .gold
        .iter()
        .filter(|(id, _)| !excluded.contains(*id))
        .map(|(k, v)| (k.clone(), *v))
        .collect();
    let mut seeds = Vec::new();
    for (seed, by_fold) in runs {
        let mut per_fold = BTreeMap::new();
        let mut kept = Vec::new();
        for (fold, preds) in by_fold {
            if !folds.contains(&fold) {
                continue;
            }
            let preds = scope.restrict(fold, preds);
            let c = ConfusionCounts::from_predictions(&preds);
            per_fold.insert(
                fold,
                FoldEval {
                    n: preds.len(),
                    f1: 100.0 * c.prf().f1,
                },
            );
            kept.push(preds);
        }
        let (counts, metrics) = if per_fold.len() == folds.len() {
            let (c, p) = micro_average(&kept, &gold)?;
            (Some(c), Some(p.as_percent()))
        } else {
            (None, None)
        };
        seeds.push(SeedEval {
            seed,
            folds_expected: folds.len(),
            per_fold,
            counts,
            metrics,
        });
    }
    Ok(EvalSummary {
        dataset: cfg.dataset.to_string(),
        protocol: cfg.protocol,
        system: system.to_string(),
        seeds,
    })
}

fn summary_path(cfg: &ExperimentConfig, system: &str) -> PathBuf {
    cfg.eval_dir().join(format!("{}_{system}.json", cfg.protocol))
}

/// Evaluates every system that has runs for the protocol.
pub fn evaluate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let scope = Scope::new(cfg)?;
    let systems = systems(cfg, scope.source)?;
    if systems.is_empty() {
        let dir = cfg.out.join("runs").join(cfg.dataset.to_string()).join(scope.source.as_str());
        return Err(CliError::Precondition(format!(
            "no {} runs under {} (run `train --protocol {}` first)",
            scope.source,
            dir.display(),
            scope.source.as_str().to_lowercase()
        )));
    }
    for system in &systems {
        let dir = cfg.arch_dir(scope.source, system);
        let runs = collect_runs(&dir)?;
        if runs.is_empty() {
            continue;
        }
        if scope.guard.is_some() {
            let missing: Vec<String> = runs
                .iter()
                .flat_map(|(seed, by_fold)| {
                    scope
                        .folds()
                        .into_iter()
                        .filter(|f| !by_fold.contains_key(f))
                        .map(|f| cfg.run_dir(scope.source, system, f, *seed).display().to_string())
                        .collect::<Vec<_>>()
                })
                .collect();
            if !missing.is_empty() {
                return Err(CliError::Precondition(format!(
                    "novel evaluation of {system} needs the complete WID grid; missing {}",
                    missing.join(", ")
                )));
            }
        }
        let excluded = read_id_set(&dir.join(EXCLUDED_FILE))?;
        let summary = summarize(cfg, &scope, system, runs, &excluded)?;
        let path = summary_path(cfg, system);
        write_json(&path, &summary)?;
        for s in &summary.seeds {
            match &s.metrics {
                Some(m) => println!(
                    "{} {system} seed {:?}: P {:.1} R {:.1} F1 {:.1}",
                    cfg.protocol, s.seed, m.precision, m.recall, m.f1
                ),
                None => println!(
                    "{} {system} seed {:?}: incomplete ({}/{} folds)",
                    cfg.protocol,
                    s.seed,
                    s.per_fold.len(),
                    s.folds_expected
                ),
            }
        }
    }
    write_manifest(&cfg.eval_dir(), "evaluate", cfg)?;
    Ok(())
}

/// Averages the first `ensemble_size` seeds of each fold into a seedless
/// `<arch>-Ens(N)` system.
pub fn ensemble(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let source = match cfg.protocol {
        Protocol::Novel => Protocol::Wid,
        p => p,
    };
    let n = cfg.ensemble_size;
    if n == 0 || n > cfg.seeds.len() {
        return Err(CliError::Config(format!("ensemble size {n} needs 1..={} seeds", cfg.seeds.len())));
    }
    let arch = cfg.architecture.to_string();
    let members: Vec<u64> = cfg.seeds[..n].to_vec();
    let name = format!("{arch}-Ens({n})");
    let src_dir = cfg.arch_dir(source, &arch);
    let mut missing = Vec::new();
    let folds = cfg.folds();
    for &fold in &folds {
        for &seed in &members {
            let f = cfg.run_dir(source, &arch, fold, Some(seed)).join(PREDICTIONS_FILE);
            if !f.exists() {
                missing.push(f.display().to_string());
            }
        }
    }
    if !missing.is_empty() {
        return Err(CliError::Precondition(format!("ensemble members missing: {}", missing.join(", "))));
    }
    for &fold in &folds {
        let preds = members
            .iter()
            .map(|&s| read_predictions(&cfg.run_dir(source, &arch, fold, Some(s)).join(PREDICTIONS_FILE)))
            .collect::<Result<Vec<_>, _>>()?;
        let tag = ModelTag::new(name.clone(), None, Some(fold));
        let combined = ensemble_predictions(&preds, tag)?;
        let dir = cfg.run_dir(source, &name, fold, None);
        write_predictions(&dir.join(PREDICTIONS_FILE), &combined)?;
        write_manifest(&dir, "ensemble", cfg)?;
    }
    let out_dir = cfg.arch_dir(source, &name);
    let excluded = src_dir.join(EXCLUDED_FILE);
    if excluded.exists() {
        std::fs::copy(&excluded, out_dir.join(EXCLUDED_FILE)).map_err(|e| CliError::io(&excluded, e))?;
    }
    write_manifest(&out_dir, "ensemble", cfg)?;
    println!("wrote {name} predictions for {} folds", folds.len());
    Ok(())
}

pub fn llm_baseline(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let source = match cfg.protocol {
        Protocol::Novel => Protocol::Wid,
        p => p,
    };
    let instances = load_corpus(cfg)?;
    let plan = load_plan(cfg, source)?;
    let prompts = instances.iter().map(render_prompt).collect::<Result<Vec<_>, _>>()?;
    let llm_dir = cfg.out.join("llm").join(cfg.dataset.to_string());
    create_dir(&llm_dir)?;
    let cache = ResponseCache::open(&llm_dir.join("cache.jsonl"))?;
    let client_cfg = ClientConfig {
        base_url: cfg.llm_base_url.clone(),
        model: cfg.llm_model.clone(),
        api_key_env: cfg.llm_api_key_env.clone(),
        ..ClientConfig::default()
    };
    let mode = if cfg.llm_replay { CacheMode::Replay } else { CacheMode::Live };
    let client = match mode {
        CacheMode::Live => HttpChatClient::from_env(client_cfg.clone())
            .or_else(|_| Ok::<_, CliError>(HttpChatClient::new(client_cfg.clone(), None)))?,
        CacheMode::Replay => HttpChatClient::new(client_cfg.clone(), None),
    };
    let backend: &dyn ChatBackend = &client;
    let outcomes = query_all(&prompts, backend, &cache, mode, cfg.llm_concurrency)?;
    let features = features_for(&outcomes);
    let feat_path = llm_dir.join("features.jsonl");
    let mut w = create(&feat_path)?;
    for f in &features {
        writeln!(w, "{}", serde_json::to_string(f).expect("features serialize")).map_err(|e| CliError::io(&feat_path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&feat_path, e))?;
    drop(w);
    let failed = features
        .iter()
        .filter(|f| f.parse_status == crate::llm_baseline::ParseStatus::Failed)
        .count();
    let by_id: BTreeMap<String, AnswerFeatures> = features.into_iter().map(|f| (f.instance_id.clone(), f)).collect();
    let gold: BTreeMap<String, u8> = instances.iter().map(|i| (i.instance_id.clone(), i.label)).collect();
    let per_fold = fold_aligned_predictions(&by_id, &gold, &plan, cfg.llm_l2, LLM_SYSTEM)?;
    for (fold, preds) in per_fold.iter().enumerate() {
        let dir = cfg.run_dir(source, LLM_SYSTEM, fold, None);
        write_predictions(&dir.join(PREDICTIONS_FILE), preds)?;
        write_manifest(&dir, "llm-baseline", cfg)?;
    }
    write_manifest(&cfg.arch_dir(source, LLM_SYSTEM), "llm-baseline", cfg)?;
    println!(
        "{} prompts, {} from cache, {} failed",
        outcomes.len(),
        outcomes.iter().filter(|o| o.from_cache).count(),
        failed
    );
    Ok(())
}

fn read_summary(path: &Path) -> Result<EvalSummary, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Per-fold F1 pairs; seedless systems pair with every seed of the other.
fn pair_scores(a: &EvalSummary, b: &EvalSummary) -> (Vec<f64>, Vec<f64>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for sa in &a.seeds {
        for sb in &b.seeds {
            if sa.seed.is_some() && sb.seed.is_some() && sa.seed != sb.seed {
                continue;
            }
            for (fold, fa) in &sa.per_fold {
                if let Some(fb) = sb.per_fold.get(fold) {
                    xs.push(fa.f1);
                    ys.push(fb.f1);
                }
            }
        }
    }
    (xs, ys)
}

/// Name shown in tables; the ablation is spelled with its hyphen there.
fn table_label(system: &str) -> String {
    match system.strip_prefix("RSPV") {
        Some(rest) => format!("R-SPV{rest}"),
        None => system.to_string(),
    }
}

pub fn report(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let dir = cfg.eval_dir();
    let prefix = format!("{}_", cfg.protocol);
    let mut summaries = Vec::new();
    if dir.exists() {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| CliError::io(&dir, e))?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with(&prefix) && n.ends_with(".json"))
            })
            .collect();
        paths.sort();
        for p in paths {
            summaries.push(read_summary(&p)?);
        }
    }
    if summaries.is_empty() {
        return Err(CliError::Precondition(format!(
            "no {} evaluations in {} (run `evaluate` first)",
            cfg.protocol,
            dir.display()
        )));
    }
    let order = |s: &str| match s {
        LLM_SYSTEM => 0,
        "RSPV" => 1,
        "ER" => 2,
        _ => 3,
    };
    summaries.sort_by(|a, b| (order(&a.system), &a.system).cmp(&(order(&b.system), &b.system)));
    let rows = summaries
        .iter()
        .map(|s| {
            let per_seed = s
                .seeds
                .iter()
                .map(|e| SeedMetrics {
                    seed: e.seed.unwrap_or(0),
                    folds_scored: e.per_fold.len(),
                    folds_expected: e.folds_expected,
                    metrics: e.metrics,
                })
                .collect();
            let size = s
                .system
                .split_once("-Ens(")
                .and_then(|(_, n)| n.trim_end_matches(')').parse().ok());
            ReportRow::new(table_label(&s.system), size, per_seed)
        })
        .collect();
    let mut comparisons = Vec::new();
    let find = |name: &str| summaries.iter().find(|s| s.system == name);
    for s in summaries.iter().filter(|s| s.system.starts_with(&Architecture::Er.to_string())) {
        for (baseline, mark) in [("RSPV", "*"), (LLM_SYSTEM, "†")] {
            let Some(b) = find(baseline) else { continue };
            let (xs, ys) = pair_scores(s, b);
            if xs.len() < 2 {
                continue;
            }
            comparisons.push(Comparison {
                system: table_label(&s.system),
                baseline: table_label(baseline),
                mark: mark.to_string(),
                test: paired_ttest(&xs, &ys)?,
            });
        }
    }
    let report = RunReport {
        dataset: cfg.dataset.to_string(),
        protocol: cfg.protocol.to_string(),
        pairing_unit: PAIRING_UNIT.to_string(),
        rows,
        comparisons,
    };
    let out = cfg.reports_dir();
    let (_, txt) = emit_report(&report, &out, cfg.protocol.as_str())?;
    write_manifest(&out, "report", cfg)?;
    let table = std::fs::read_to_string(&txt).map_err(|e| CliError::io(&txt, e))?;
    print!("{table}");
    Ok(())
}

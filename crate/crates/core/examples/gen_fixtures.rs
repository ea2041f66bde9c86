//! Regenerates the packaged test fixtures under `tests/fixtures/`.
//!
//! The TroFi- and LCC-shaped files are synthetic stand-ins whose counts match
//! the published dataset statistics; their words are meaningless.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use metaphor_er_core::corpus::synthetic::{compatibility_corpus, SyntheticSpec};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "t", "v"];
const NUCLEI: [&str; 5] = ["a", "e", "i", "o", "u"];
const CODAS: [&str; 6] = ["", "n", "r", "l", "m", "k"];

fn filler_vocab(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    let mut seen = HashSet::new();
    while seen.len() < n {
        let syl = rng.random_range(1..=3);
        let mut w = String::new();
        for _ in 0..syl {
            w.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
            w.push_str(NUCLEI[rng.random_range(0..NUCLEI.len())]);
        }
        w.push_str(CODAS[rng.random_range(0..CODAS.len())]);
        seen.insert(w);
    }
    let mut v: Vec<String> = seen.into_iter().collect();
    v.sort();
    v
}

/// `n` lengths in `[lo, hi]` summing to exactly `total`.
fn lengths(rng: &mut ChaCha8Rng, n: usize, total: usize, lo: usize, hi: usize) -> Vec<usize> {
    let mut l: Vec<usize> = (0..n).map(|_| rng.random_range(lo..=hi)).collect();
    let mut sum: usize = l.iter().sum();
    while sum != total {
        let i = rng.random_range(0..n);
        if sum < total && l[i] < hi {
            l[i] += 1;
            sum += 1;
        } else if sum > total && l[i] > lo {
            l[i] -= 1;
            sum -= 1;
        }
    }
    l
}

fn sentence(rng: &mut ChaCha8Rng, vocab: &[String], len: usize, seen: &mut HashSet<Vec<String>>) -> Vec<String> {
    loop {
        let s: Vec<String> = (0..len).map(|_| vocab[rng.random_range(0..vocab.len())].clone()).collect();
        if seen.insert(s.clone()) {
            return s;
        }
    }
}

fn trofi(dir: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let vocab = filler_vocab(&mut rng, 600);
    let verbs: Vec<String> = (0..50).map(|i| format!("qu{}{}t", NUCLEI[i % 5], ONSETS[i / 5 % 12])).collect();
    let (n, n_pos, total) = (3737usize, 1626usize, 105_757usize);
    let lens = lengths(&mut rng, n, total, 8, 49);
    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i < n_pos)).collect();
    labels.shuffle(&mut rng);
    let mut seen = HashSet::new();
    let mut per_verb: Vec<Vec<(u8, String)>> = vec![Vec::new(); verbs.len()];
    for (i, (&len, &label)) in lens.iter().zip(&labels).enumerate() {
        let v = i % verbs.len();
        let mut s = sentence(&mut rng, &vocab, len - 1, &mut seen);
        let at = rng.random_range(0..=s.len());
        s.insert(at, verbs[v].clone());
        per_verb[v].push((label, s.join(" ")));
    }
    let mut out = String::new();
    for (v, rows) in per_verb.iter().enumerate() {
        let _ = writeln!(out, "***{}***", verbs[v]);
        for (cluster, tag, name) in [(0u8, "L", "*literal cluster*"), (1, "N", "*nonliteral cluster*")] {
            let _ = writeln!(out, "{name}");
            for (j, (label, s)) in rows.iter().enumerate() {
                if *label == cluster {
                    let _ = writeln!(out, "s{j} {tag}\t{s}");
                }
            }
            let _ = writeln!(out);
        }
    }
    std::fs::write(dir.join("trofi_synthetic.txt"), out).unwrap();
}

fn lcc(dir: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let vocab = filler_vocab(&mut rng, 800);
    let (n_targets, n_pos, n_sent, total) = (5646usize, 1632usize, 5390usize, 155_771usize);
    let lens = lengths(&mut rng, n_sent, total, 8, 50);
    let mut seen = HashSet::new();
    let sentences: Vec<Vec<String>> = lens.iter().map(|&l| sentence(&mut rng, &vocab, l, &mut seen)).collect();
    // The first (n_targets - n_sent) sentences carry two targets.
    let mut targets: Vec<(usize, usize)> = Vec::new();
    for (i, s) in sentences.iter().enumerate() {
        let a = rng.random_range(0..s.len());
        targets.push((i, a));
        if i < n_targets - n_sent {
            let b = (a + 1 + rng.random_range(0..s.len() - 1)) % s.len();
            targets.push((i, b));
        }
    }
    let mut labels: Vec<u8> = (0..n_targets).map(|i| u8::from(i < n_pos)).collect();
    labels.shuffle(&mut rng);
    let mut out = String::from("id\tsentence\ttarget_index\tmetaphoricity\n");
    let mut positives = Vec::new();
    for (k, (&(si, ti), &label)) in targets.iter().zip(&labels).enumerate() {
        let id = format!("lcc{k:05}");
        if label == 1 {
            positives.push(id.clone());
        }
        let score = if label == 1 { "3.0" } else { "0.0" };
        let _ = writeln!(out, "{id}\t{}\t{ti}\t{score}", sentences[si].join(" "));
    }
    // Intermediate scores are dropped at ingestion.
    for k in 0..700 {
        let len = rng.random_range(8..=50);
        let s = sentence(&mut rng, &vocab, len, &mut seen);
        let score = ["1.0", "1.5", "2.0", "2.5"][k % 4];
        let _ = writeln!(out, "lccx{k:04}\t{}\t{}\t{score}", s.join(" "), rng.random_range(0..len));
    }
    std::fs::write(dir.join("lcc_synthetic.tsv"), out).unwrap();
    positives.shuffle(&mut rng);
    let mut novel: Vec<String> = positives.into_iter().take(237).collect();
    novel.sort();
    std::fs::write(dir.join("lcc_novel_ids.txt"), novel.join("\n") + "\n").unwrap();
}

/// Small VUA-style file for the command-line pipeline.
fn mini_vua(dir: &Path) {
    let data = compatibility_corpus(&SyntheticSpec {
        n_instances: 240,
        classes: 3,
        verbs_per_class: 3,
        nouns_per_class: 3,
        match_rate: 0.5,
        seed: 5,
    });
    let mut out = String::from("id\tsentence\ttarget_index\tlabel\tpos\n");
    for t in &data {
        let _ = writeln!(out, "{}\t{}\t{}\t{}\tVERB", t.instance_id, t.sentence.join(" "), t.target_index, t.label);
    }
    std::fs::write(dir.join("mini_vua.tsv"), out).unwrap();
}

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    std::fs::create_dir_all(&dir).unwrap();
    trofi(&dir);
    lcc(&dir);
    mini_vua(&dir);
    println!("fixtures written to {}", dir.display());
}

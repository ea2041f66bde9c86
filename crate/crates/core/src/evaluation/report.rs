//! Report assembly and rendering.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EvalError, Prf, TTestResult};

/// Pooled metrics of one seed, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub folds_scored: usize,
    pub folds_expected: usize,
    pub metrics: Option<Prf>,
}

impl SeedMetrics {
    pub fn is_complete(&self) -> bool {
        self.metrics.is_some() && self.folds_scored == self.folds_expected
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub system: String,
    pub ensemble_size: Option<usize>,
    pub per_seed: Vec<SeedMetrics>,
    /// Mean over complete seeds; `None` when any seed is incomplete.
    pub mean: Option<Prf>,
}

impl ReportRow {
    /// Builds a row and averages the per-seed metrics, leaving a gap when
    /// any seed is incomplete.
    pub fn new(system: impl Into<String>, ensemble_size: Option<usize>, per_seed: Vec<SeedMetrics>) -> Self {
        let complete = !per_seed.is_empty() && per_seed.iter().all(SeedMetrics::is_complete);
        let mean = complete.then(|| {
            let n = per_seed.len() as f64;
            let sum = |f: fn(&Prf) -> f64| per_seed.iter().map(|s| f(s.metrics.as_ref().unwrap())).sum::<f64>() / n;
            Prf {
                precision: sum(|m| m.precision),
                recall: sum(|m| m.recall),
                f1: sum(|m| m.f1),
            }
        });
        Self {
            system: system.into(),
            ensemble_size,
            per_seed,
            mean,
        }
    }
}

/// Significance of `system` over `baseline`, rendered with `mark`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub system: String,
    pub baseline: String,
    pub mark: String,
    pub test: TTestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub protocol: String,
    pub pairing_unit: String,
    pub rows: Vec<ReportRow>,
    pub comparisons: Vec<Comparison>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.1}"))
}

/// Aligned text table: one row per system, F1 suffixed by the marks of its
/// significant comparisons.
pub fn render_table(report: &RunReport) -> Result<String, EvalError> {
    if report.rows.is_empty() {
        return Err(EvalError::EmptyReport);
    }
    let mut lines: Vec<[String; 4]> = vec![["Model".into(), "P".into(), "R".into(), "F1".into()]];
    for row in &report.rows {
        let marks: String = report
            .comparisons
            .iter()
            .filter(|c| c.system == row.system && c.test.significant)
            .map(|c| c.mark.as_str())
            .collect();
        let m = row.mean.as_ref();
        let f1 = match m {
            Some(m) => format!("{:.1}{marks}", m.f1),
            None => "-".into(),
        };
        lines.push([
            row.system.clone(),
            cell(m.map(|m| m.precision)),
            cell(m.map(|m| m.recall)),
            f1,
        ]);
    }
    let width = |i: usize| lines.iter().map(|l| l[i].chars().count()).max().unwrap_or(0);
    let w: Vec<usize> = (0..4).map(width).collect();
    let mut out = format!("{} {}\n", report.dataset, report.protocol);
    for l in &lines {
        let _ = writeln!(
            out,
            "{:<w0$}  {:>w1$}  {:>w2$}  {:<w3$}",
            l[0],
            l[1],
            l[2],
            l[3],
            w0 = w[0],
            w1 = w[1],
            w2 = w[2],
            w3 = w[3]
        );
    }
    for row in &report.rows {
        for s in row.per_seed.iter().filter(|s| !s.is_complete()) {
            let _ = writeln!(
                out,
                "gap: {} seed {} has {}/{} folds",
                row.system, s.seed, s.folds_scored, s.folds_expected
            );
        }
    }
    for c in &report.comparisons {
        let _ = writeln!(
            out,
            "{} {} vs {}: t={:.3} p={:.4} n={}{}",
            c.mark,
            c.system,
            c.baseline,
            c.test.t,
            c.test.p_value,
            c.test.n,
            if c.test.zero_variance { " (zero variance)" } else { "" }
        );
    }
    let _ = writeln!(out, "pairing: {}", report.pairing_unit);
    Ok(out.lines().map(str::trim_end).collect::<Vec<_>>().join("\n") + "\n")
}

/// Writes `<stem>.json` and `<stem>.txt` into `dir`.
pub fn emit_report(report: &RunReport, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf), EvalError> {
    let table = render_table(report)?;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| EvalError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let json_path = dir.join(format!("{stem}.json"));
    let txt_path = dir.join(format!("{stem}.txt"));
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(&json_path, json + "\n").map_err(io(&json_path))?;
    std::fs::write(&txt_path, table).map_err(io(&txt_path))?;
    Ok((json_path, txt_path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seed(seed: u64, f1: f64) -> SeedMetrics {
        SeedMetrics {
            seed,
            folds_scored: 10,
            folds_expected: 10,
            metrics: Some(Prf {
                precision: f1 - 1.0,
                recall: f1 + 1.0,
                f1,
            }),
        }
    }

    fn test(significant: bool) -> TTestResult {
        TTestResult {
            n: 50,
            mean_diff: 1.0,
            t: 3.0,
            p_value: if significant { 0.002 } else { 0.3 },
            significant,
            zero_variance: false,
        }
    }

    fn report() -> RunReport {
        RunReport {
            dataset: "VUA20".into(),
            protocol: "WID".into(),
            pairing_unit: "per-fold F1".into(),
            rows: vec![
                ReportRow::new("R-SPV", None, vec![seed(1, 70.0)]),
                ReportRow::new("ER", None, vec![seed(1, 72.0), seed(2, 73.2)]),
            ],
            comparisons: vec![
                Comparison {
                    system: "ER".into(),
                    baseline: "R-SPV".into(),
                    mark: "*".into(),
                    test: test(true),
                },
                Comparison {
                    system: "ER".into(),
                    baseline: "MelBERT".into(),
                    mark: "†".into(),
                    test: test(true),
                },
            ],
        }
    }

    #[test]
    fn marks_and_means() {
        let t = render_table(&report()).unwrap();
        let er = t.lines().find(|l| l.starts_with("ER ")).unwrap();
        assert!(er.contains("71.6  73.6  72.6*†"), "{er}");
    }

    #[test]
    fn insignificant_has_no_mark() {
        let mut r = report();
        r.comparisons[1].test = test(false);
        let t = render_table(&r).unwrap();
        let er = t.lines().find(|l| l.starts_with("ER ")).unwrap();
        assert!(er.ends_with("72.6*"), "{er}");
    }

    #[test]
    fn gaps_are_explicit() {
        let mut r = report();
        let mut partial = seed(3, 10.0);
        partial.folds_scored = 7;
        r.rows[0] = ReportRow::new("R-SPV", None, vec![seed(1, 70.0), partial]);
        let t = render_table(&r).unwrap();
        assert!(t.contains("R-SPV     -     -  -\n"), "{t}");
        assert!(t.contains("gap: R-SPV seed 3 has 7/10 folds"));
    }

    #[test]
    fn empty_report_is_error() {
        let mut r = report();
        r.rows.clear();
        assert!(matches!(render_table(&r), Err(EvalError::EmptyReport)));
    }

    #[test]
    fn emits_both_files() {
        let dir = tempfile::tempdir().unwrap();
        let (j, t) = emit_report(&report(), dir.path(), "table").unwrap();
        let back: RunReport = serde_json::from_str(&std::fs::read_to_string(j).unwrap()).unwrap();
        assert_eq!(back, report());
        assert!(std::fs::read_to_string(t).unwrap().starts_with("VUA20 WID"));
    }
}

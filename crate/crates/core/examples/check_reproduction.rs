//! Compares finished full-size experiment grids against published figures.
//!
//!     cargo run --release --example check_reproduction -- out
//!
//! Reads `eval/<DATASET>/<PROTOCOL>_<SYSTEM>.json` below the output directory
//! (written by `metaphor-er evaluate`) and prints one line per target.
//! Targets whose grids have not been run are reported as MISSING.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use metaphor_er_core::cli::EvalSummary;

/// Mean F1 (percent) over seeds with complete metrics.
fn mean_f1(out: &Path, dataset: &str, file: &str) -> Option<f64> {
    let path = out.join("eval").join(dataset).join(format!("{file}.json"));
    let text = std::fs::read_to_string(path).ok()?;
    let summary: EvalSummary = serde_json::from_str(&text).ok()?;
    let f1s: Vec<f64> = summary.seeds.iter().filter_map(|s| s.metrics.map(|m| m.f1)).collect();
    (!f1s.is_empty()).then(|| f1s.iter().sum::<f64>() / f1s.len() as f64)
}

enum Check {
    Within { dataset: &'static str, target: f64, tol: f64 },
    Above { dataset: &'static str, higher: &'static str, lower: &'static str },
}

fn main() -> ExitCode {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out".into()));
    let checks = [
        Check::Within { dataset: "VUA20", target: 72.6, tol: 1.0 },
        Check::Within { dataset: "LCC", target: 85.5, tol: 1.5 },
        Check::Above { dataset: "LCC", higher: "WID_ER-Ens(5)", lower: "WID_ER" },
        Check::Within { dataset: "TROFI", target: 71.9, tol: 1.5 },
        Check::Above { dataset: "LCC", higher: "WID_ER", lower: "OOD_ER" },
        Check::Above { dataset: "TROFI", higher: "WID_ER", lower: "OOD_ER" },
    ];
    let mut failed = false;
    for check in checks {
        let line = match check {
            Check::Within { dataset, target, tol } => match mean_f1(&out, dataset, "WID_ER") {
                Some(f1) => {
                    let ok = (f1 - target).abs() <= tol;
                    failed |= !ok;
                    format!("{} {dataset} ER F1 {f1:.1} vs {target} +/- {tol}", if ok { "PASS" } else { "FAIL" })
                }
                None => format!("MISSING {dataset} WID_ER"),
            },
            Check::Above { dataset, higher, lower } => {
                match (mean_f1(&out, dataset, higher), mean_f1(&out, dataset, lower)) {
                    (Some(h), Some(l)) => {
                        let ok = h >= l;
                        failed |= !ok;
                        format!("{} {dataset} {higher} {h:.1} >= {lower} {l:.1}", if ok { "PASS" } else { "FAIL" })
                    }
                    _ => format!("MISSING {dataset} {higher} or {lower}"),
                }
            }
        };
        println!("{line}");
    }
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

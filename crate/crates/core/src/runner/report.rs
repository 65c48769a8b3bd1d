use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ScoreReport;
use crate::neural::{EpochLoss, LossCurve};

/// Scores of one model on one seed's test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedScore {
    pub seed: u64,
    pub scores: ScoreReport,
    /// Mean categorical cross-entropy on the test split.
    pub loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanScores {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    /// Table row label.
    pub name: String,
    /// File-name key (`loss_curve_<key>.csv`).
    pub key: String,
    pub seeds: Vec<SeedScore>,
    /// Set when any stage of this model failed; the row is then incomplete.
    pub error: Option<String>,
}

impl ModelResult {
    pub fn new(name: impl Into<String>, key: impl Into<String>) -> Self {
        ModelResult { name: name.into(), key: key.into(), seeds: Vec::new(), error: None }
    }

    pub fn fail(&mut self, msg: impl Into<String>) {
        if self.error.is_none() {
            self.error = Some(msg.into());
        }
    }

    /// Mean over seeds; `None` for failed or empty rows.
    pub fn mean(&self) -> Option<MeanScores> {
        if self.error.is_some() || self.seeds.is_empty() {
            return None;
        }
        let n = self.seeds.len() as f64;
        let avg = |f: fn(&SeedScore) -> f64| self.seeds.iter().map(f).sum::<f64>() / n;
        Some(MeanScores {
            accuracy: avg(|s| s.scores.accuracy),
            precision: avg(|s| s.scores.precision),
            recall: avg(|s| s.scores.recall),
            f1: avg(|s| s.scores.f1),
            loss: avg(|s| s.loss),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub key: String,
    pub per_seed: Vec<(u64, LossCurve)>,
}

impl CurveRecord {
    /// Epoch-wise mean over seeds, truncated to the shortest curve. The
    /// validation column is kept only when every seed has it.
    pub fn mean(&self) -> LossCurve {
        let len = self.per_seed.iter().map(|(_, c)| c.len()).min().unwrap_or(0);
        let n = self.per_seed.len() as f64;
        let epochs = (0..len)
            .map(|e| {
                let rows: Vec<&EpochLoss> = self.per_seed.iter().map(|(_, c)| &c.epochs[e]).collect();
                let val: Option<Vec<f64>> = rows.iter().map(|r| r.val_loss).collect();
                let acc: Option<Vec<f64>> = rows.iter().map(|r| r.val_accuracy).collect();
                EpochLoss {
                    epoch: e + 1,
                    train_loss: rows.iter().map(|r| r.train_loss).sum::<f64>() / n,
                    val_loss: val.map(|v| v.iter().sum::<f64>() / n),
                    val_accuracy: acc.map(|v| v.iter().sum::<f64>() / n),
                }
            })
            .collect();
        LossCurve { epochs }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub dataset: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub class_names: Vec<String>,
    pub documents: usize,
    pub dropped_rows: usize,
    pub leaky: bool,
    /// Wall-clock seconds per stage and model.
    pub durations: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub metadata: RunMetadata,
    pub baselines: Vec<ModelResult>,
    /// Per-lineage rows, then the stack row when one was trained.
    pub transformers: Vec<ModelResult>,
    pub curves: Vec<CurveRecord>,
}

pub const STACK_ROW: &str = "Our method";

impl ReportBundle {
    /// False when any row failed.
    pub fn complete(&self) -> bool {
        self.baselines.iter().chain(&self.transformers).all(|m| m.error.is_none())
    }

    pub fn model(&self, name: &str) -> Option<&ModelResult> {
        self.baselines.iter().chain(&self.transformers).find(|m| m.name == name)
    }

    pub fn curve(&self, key: &str) -> Option<&CurveRecord> {
        self.curves.iter().find(|c| c.key == key)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

const BASELINE_COLUMNS: [&str; 4] = ["Accuracy", "Precision", "Recall", "F1-Score"];
const TRANSFORMER_COLUMNS: [&str; 4] = ["Accuracy", "Precision", "Recall", "Loss"];

fn baseline_values(m: &MeanScores) -> [f64; 4] {
    [m.accuracy, m.precision, m.recall, m.f1]
}

fn transformer_values(m: &MeanScores) -> [f64; 4] {
    [m.accuracy, m.precision, m.recall, m.loss]
}

fn table_csv(rows: &[ModelResult], columns: [&str; 4], values: fn(&MeanScores) -> [f64; 4]) -> String {
    let mut out = format!("Model,{}\n", columns.join(","));
    for r in rows {
        let cells: Vec<String> = match r.mean() {
            Some(m) => values(&m).iter().map(|v| format!("{v:?}")).collect(),
            None => vec![String::new(); 4],
        };
        let _ = writeln!(out, "{},{}", r.name, cells.join(","));
    }
    out
}

fn table_md(caption: &str, rows: &[ModelResult], columns: [&str; 4], values: fn(&MeanScores) -> [f64; 4]) -> String {
    let mut out = format!("### {caption}\n\n| Model | {} |\n|---|---|---|---|---|\n", columns.join(" | "));
    for r in rows {
        let cells: Vec<String> = match r.mean() {
            Some(m) => values(&m).iter().map(|v| format!("{v:.4}")).collect(),
            None => vec!["failed".into(); 4],
        };
        let _ = writeln!(out, "| {} | {} |", r.name, cells.join(" | "));
    }
    let failed: Vec<&ModelResult> = rows.iter().filter(|r| r.error.is_some()).collect();
    if !failed.is_empty() {
        out.push('\n');
        for r in failed {
            let _ = writeln!(out, "- {} failed: {}", r.name, r.error.as_deref().unwrap_or_default());
        }
    }
    out
}

/// Parses a table written by [`emit_report`]: row label, then one value per
/// column (`None` for failed rows).
pub fn read_table_csv(path: impl AsRef<Path>) -> Result<Vec<(String, Vec<Option<f64>>)>> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::Csv { path: path.to_path_buf(), message: e.to_string() };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        let name = rec.get(0).unwrap_or_default().to_string();
        let vals = rec
            .iter()
            .skip(1)
            .map(|c| if c.is_empty() { Ok(None) } else { c.parse().map(Some).map_err(|_| Error::Format(format!("bad number `{c}` in {}", path.display()))) })
            .collect::<Result<Vec<_>>>()?;
        rows.push((name, vals));
    }
    Ok(rows)
}

fn write(path: PathBuf, text: &str, out: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    out.push(path);
    Ok(())
}

/// Writes the tables, one loss-curve CSV per curve, and `report.json`.
/// Returns the written paths. Only `report.json` carries a timestamp.
pub fn emit_report(b: &ReportBundle, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    let md = &b.metadata;
    let seeds = if md.seeds.len() == 1 { "1 seed".to_string() } else { format!("mean over {} seeds", md.seeds.len()) };

    if !b.baselines.is_empty() {
        write(dir.join("baselines.csv"), &table_csv(&b.baselines, BASELINE_COLUMNS, baseline_values), &mut files)?;
        let caption = format!("Classical baselines on {} ({seeds})", md.dataset);
        write(dir.join("baselines.md"), &table_md(&caption, &b.baselines, BASELINE_COLUMNS, baseline_values), &mut files)?;
    }
    if !b.transformers.is_empty() {
        write(dir.join("transformers.csv"), &table_csv(&b.transformers, TRANSFORMER_COLUMNS, transformer_values), &mut files)?;
        let leak = if md.leaky { ", leaky meta-features" } else { "" };
        let caption = format!("Transformer models on {} ({seeds}{leak})", md.dataset);
        write(dir.join("transformers.md"), &table_md(&caption, &b.transformers, TRANSFORMER_COLUMNS, transformer_values), &mut files)?;
    }
    for c in &b.curves {
        write(dir.join(format!("loss_curve_{}.csv", c.key)), &c.mean().to_csv(), &mut files)?;
    }
    let generated = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let json = serde_json::json!({
        "generated_at_unix": generated,
        "complete": b.complete(),
        "means": b.baselines.iter().chain(&b.transformers).map(|m| (m.name.clone(), m.mean())).collect::<BTreeMap<_, _>>(),
        "bundle": b,
    });
    write(dir.join("report.json"), &serde_json::to_string_pretty(&json)?, &mut files)?;
    Ok(files)
}

//! Sentence-level precision / recall / F1 and report rendering.
//!
//! Empty-set conventions for a single example:
//!
//! | pred  | gold  | P | R | F1 |
//! |-------|-------|---|---|----|
//! | ∅     | ∅     | 1 | 1 | 1  |
//! | ∅     | ≠ ∅   | 0 | 0 | 0  |
//! | ≠ ∅   | ∅     | 0 | 0 | 0  |
//!
//! Micro averaging applies the same rules to pooled counts.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("cannot aggregate zero examples")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub pred_size: usize,
    pub gold_size: usize,
    pub hits: usize,
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn harmonic_mean(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn rates(hits: usize, pred: usize, gold: usize) -> (f64, f64) {
    match (pred, gold) {
        (0, 0) => (1.0, 1.0),
        (0, _) | (_, 0) => (0.0, 0.0),
        (p, g) => (hits as f64 / p as f64, hits as f64 / g as f64),
    }
}

pub fn prf<T: Ord>(pred: &BTreeSet<T>, gold: &BTreeSet<T>) -> ExampleScore {
    let hits = pred.intersection(gold).count();
    let (precision, recall) = rates(hits, pred.len(), gold.len());
    ExampleScore {
        precision,
        recall,
        f1: harmonic_mean(precision, recall),
        pred_size: pred.len(),
        gold_size: gold.len(),
        hits,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AverageMode {
    Micro,
    Macro,
}

impl AverageMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AverageMode::Micro => "micro",
            AverageMode::Macro => "macro",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Macro only: harmonic mean of the averaged precision and recall.
    pub f1_of_means: Option<f64>,
    pub n_examples: usize,
}

pub fn aggregate(scores: &[ExampleScore], mode: AverageMode) -> Result<Aggregate, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = scores.len();
    Ok(match mode {
        AverageMode::Macro => {
            let mean = |f: fn(&ExampleScore) -> f64| scores.iter().map(f).sum::<f64>() / n as f64;
            let precision = mean(|s| s.precision);
            let recall = mean(|s| s.recall);
            Aggregate {
                precision,
                recall,
                f1: mean(|s| s.f1),
                f1_of_means: Some(harmonic_mean(precision, recall)),
                n_examples: n,
            }
        }
        AverageMode::Micro => {
            let hits = scores.iter().map(|s| s.hits).sum();
            let pred = scores.iter().map(|s| s.pred_size).sum();
            let gold = scores.iter().map(|s| s.gold_size).sum();
            let (precision, recall) = rates(hits, pred, gold);
            Aggregate {
                precision,
                recall,
                f1: harmonic_mean(precision, recall),
                f1_of_means: None,
                n_examples: n,
            }
        }
    })
}

/// One evaluated example: gold and predicted sets plus whether the
/// prediction came from unparseable output (scored as an empty set).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoredItem<T> {
    pub gold: BTreeSet<T>,
    pub pred: BTreeSet<T>,
    pub unparseable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub dataset: String,
    pub mode: AverageMode,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n_examples: usize,
    pub n_unparseable: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

/// Scores one (method, dataset) pair, producing a micro and a macro row.
pub fn evaluate<T: Ord>(
    method: &str,
    dataset: &str,
    items: &[ScoredItem<T>],
) -> Result<Vec<ReportRow>, EvalError> {
    let empty = BTreeSet::new();
    let scores: Vec<ExampleScore> = items
        .iter()
        .map(|it| prf(if it.unparseable { &empty } else { &it.pred }, &it.gold))
        .collect();
    let n_unparseable = items.iter().filter(|it| it.unparseable).count();
    [AverageMode::Micro, AverageMode::Macro]
        .into_iter()
        .map(|mode| {
            let agg = aggregate(&scores, mode)?;
            Ok(ReportRow {
                method: method.to_string(),
                dataset: dataset.to_string(),
                mode,
                precision: agg.precision,
                recall: agg.recall,
                f1: agg.f1,
                n_examples: agg.n_examples,
                n_unparseable,
            })
        })
        .collect()
}

pub fn pct(v: f64) -> String {
    format!("{:.1}", v * 100.0)
}

pub const CSV_HEADER: &str =
    "method,dataset,mode,precision_pct,recall_pct,f1_pct,n_examples,n_unparseable";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn render_csv(report: &EvalReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            csv_field(&r.method),
            csv_field(&r.dataset),
            r.mode.as_str(),
            pct(r.precision),
            pct(r.recall),
            pct(r.f1),
            r.n_examples,
            r.n_unparseable
        );
    }
    out
}

/// Fixed-width text table with `P | R | F1` columns in percent.
pub fn render_table(report: &EvalReport) -> String {
    let method_w = report.rows.iter().map(|r| r.method.len()).max().unwrap_or(0).max(6);
    let dataset_w = report.rows.iter().map(|r| r.dataset.len()).max().unwrap_or(0).max(7);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:method_w$} | {:dataset_w$} | mode  |     P |     R |    F1 |     n | unparseable",
        "method", "dataset"
    );
    let _ = writeln!(out, "{}", "-".repeat(method_w + dataset_w + 57));
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{:method_w$} | {:dataset_w$} | {:5} | {:>5} | {:>5} | {:>5} | {:>5} | {}",
            r.method,
            r.dataset,
            r.mode.as_str(),
            pct(r.precision),
            pct(r.recall),
            pct(r.f1),
            r.n_examples,
            r.n_unparseable
        );
    }
    out.push_str(
        "\nF1 is computed from unrounded precision and recall; recomputing it from the \
         printed one-decimal values can differ by up to 0.1.\n",
    );
    out
}

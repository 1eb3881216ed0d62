//! Confusion matrices, per-class and pooled positive-class metrics, and
//! report rendering.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::risk::RiskClass;

/// Rows are gold labels, columns predictions, both in `RiskClass` order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn from_labels(gold: &[RiskClass], predicted: &[RiskClass]) -> ConfusionMatrix {
        assert_eq!(gold.len(), predicted.len(), "gold and predicted label vectors differ in length");
        let mut cm = ConfusionMatrix::default();
        for (g, p) in gold.iter().zip(predicted) {
            cm.add(*g, *p);
        }
        cm
    }

    pub fn add(&mut self, gold: RiskClass, predicted: RiskClass) {
        self.counts[gold.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn get(&self, gold: RiskClass, predicted: RiskClass) -> u64 {
        self.counts[gold.index()][predicted.index()]
    }

    fn row(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    fn col(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    pub fn accuracy(&self) -> Metric {
        let correct: u64 = (0..3).map(|i| self.counts[i][i]).sum();
        Metric::ratio(correct, self.total())
    }
}

/// A metric value that may be undefined (zero denominator, or F1 without a
/// single true positive). Undefined renders as `-`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric(pub Option<f64>);

impl Metric {
    pub const UNDEFINED: Metric = Metric(None);

    pub fn ratio(num: u64, den: u64) -> Metric {
        if den == 0 {
            Metric(None)
        } else {
            Metric(Some(num as f64 / den as f64))
        }
    }

    pub fn value(self) -> Option<f64> {
        self.0
    }

    pub fn is_defined(self) -> bool {
        self.0.is_some()
    }

    /// Value with undefined ordered below every defined value.
    pub fn or_below_zero(self) -> f64 {
        self.0.unwrap_or(-1.0)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(v) => match f.precision() {
                Some(p) => write!(f, "{v:.p$}"),
                None => write!(f, "{v:.4}"),
            },
            None => f.pad("-"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: Metric,
    pub recall: Metric,
    pub f1: Metric,
}

impl Prf {
    fn from_counts(tp: u64, fp: u64, fn_: u64) -> Prf {
        let precision = Metric::ratio(tp, tp + fp);
        let recall = Metric::ratio(tp, tp + fn_);
        let f1 = if tp == 0 { Metric::UNDEFINED } else { Metric::ratio(2 * tp, 2 * tp + fp + fn_) };
        Prf { precision, recall, f1 }
    }
}

pub fn class_metrics(cm: &ConfusionMatrix, class: RiskClass) -> Prf {
    let c = class.index();
    let tp = cm.counts[c][c];
    Prf::from_counts(tp, cm.col(c) - tp, cm.row(c) - tp)
}

/// Micro-averaged metrics over `positive`: true positives, false positives
/// and false negatives are pooled across the positive classes. A positive
/// sample predicted as a different positive class counts as one false
/// negative and one false positive.
pub fn micro_avg_positive(cm: &ConfusionMatrix, positive: &[RiskClass]) -> Prf {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for class in positive {
        let c = class.index();
        let hit = cm.counts[c][c];
        tp += hit;
        fp += cm.col(c) - hit;
        fn_ += cm.row(c) - hit;
    }
    Prf::from_counts(tp, fp, fn_)
}

pub const POSITIVE: [RiskClass; 2] = [RiskClass::Risky, RiskClass::Blocked];

/// The nine headline numbers for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub risky: Prf,
    pub blocked: Prf,
    pub combined: Prf,
}

impl ReportRow {
    pub fn from_matrix(model: impl Into<String>, cm: &ConfusionMatrix) -> ReportRow {
        ReportRow {
            model: model.into(),
            risky: class_metrics(cm, RiskClass::Risky),
            blocked: class_metrics(cm, RiskClass::Blocked),
            combined: micro_avg_positive(cm, &POSITIVE),
        }
    }

    fn cells(&self) -> [Metric; 9] {
        [
            self.risky.precision,
            self.blocked.precision,
            self.combined.precision,
            self.risky.recall,
            self.blocked.recall,
            self.combined.recall,
            self.risky.f1,
            self.blocked.f1,
            self.combined.f1,
        ]
    }
}

/// Aligned text table: Precision, Recall and F1 for RISKY, BLOCKED and R+B.
pub fn render_table(rows: &[ReportRow]) -> String {
    let width = rows.iter().map(|r| r.model.len()).max().unwrap_or(0).max(5);
    let mut out = String::new();
    out.push_str(&format!(
        "{:<width$} | {:^26} | {:^26} | {:^26}\n",
        "Model", "Precision", "Recall", "F1-score"
    ));
    let sub = format!("{:>8} {:>8} {:>8}", "RISKY", "BLOCKED", "R+B");
    out.push_str(&format!("{:<width$} | {sub} | {sub} | {sub}\n", ""));
    out.push_str(&format!("{}\n", "-".repeat(width + 3 * 29)));
    for row in rows {
        let c = row.cells();
        let group = |s: &[Metric]| format!("{:>8} {:>8} {:>8}", s[0], s[1], s[2]);
        out.push_str(&format!(
            "{:<width$} | {} | {} | {}\n",
            row.model,
            group(&c[0..3]),
            group(&c[3..6]),
            group(&c[6..9])
        ));
    }
    out
}

/// Parse a table produced by [`render_table`] back into model names and the
/// nine cell values (rounded as rendered).
pub fn parse_table(text: &str) -> Option<Vec<(String, [Metric; 9])>> {
    let mut out = Vec::new();
    for line in text.lines().skip(3) {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(" | ");
        let model = parts.next()?.trim_end().to_string();
        let mut cells = Vec::with_capacity(9);
        for group in parts {
            for tok in group.split_whitespace() {
                cells.push(if tok == "-" { Metric::UNDEFINED } else { Metric(Some(tok.parse().ok()?)) });
            }
        }
        out.push((model, cells.try_into().ok()?));
    }
    Some(out)
}

/// Machine-readable variant: one JSON object per row.
pub fn render_jsonl(rows: &[ReportRow]) -> String {
    rows.iter().map(|r| serde_json::to_string(r).expect("plain data") + "\n").collect()
}

pub fn parse_jsonl(text: &str) -> Result<Vec<ReportRow>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

/// One point of a data-size curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub model: String,
    pub size: usize,
    pub f1: Metric,
}

/// One `model size f1` line per point.
pub fn render_curve(points: &[CurvePoint]) -> String {
    points.iter().map(|p| format!("{}\t{}\t{}\n", p.model, p.size, p.f1)).collect()
}

//! Confusion matrices and macro-averaged precision / recall / F1 / accuracy.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `K x K` counts; rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Data("confusion matrix rows must be square".into()));
        }
        Ok(ConfusionMatrix {
            k,
            counts: rows.concat(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn add(&mut self, truth: usize, pred: usize) {
        self.counts[truth * self.k + pred] += 1;
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.k.max(1)).map(<[u64]>::to_vec).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    /// Row sums: number of samples of each true class.
    pub fn support(&self) -> Vec<u64> {
        (0..self.k).map(|t| (0..self.k).map(|p| self.get(t, p)).sum()).collect()
    }

    /// Column sums: number of predictions of each class.
    pub fn predicted(&self) -> Vec<u64> {
        (0..self.k).map(|p| (0..self.k).map(|t| self.get(t, p)).sum()).collect()
    }

    /// Comma-separated table with a header row of class names.
    pub fn to_csv(&self, class_names: &[String]) -> String {
        let names = display_names(class_names, self.k);
        let mut out = String::from("true\\pred");
        for n in &names {
            out.push(',');
            out.push_str(&csv_field(n));
        }
        out.push('\n');
        for (t, n) in names.iter().enumerate() {
            out.push_str(&csv_field(n));
            for p in 0..self.k {
                let _ = write!(out, ",{}", self.get(t, p));
            }
            out.push('\n');
        }
        out
    }

    /// Heatmap of row-normalized counts with the raw count in each cell.
    pub fn to_svg(&self, class_names: &[String]) -> String {
        let names = display_names(class_names, self.k);
        let cell = 36usize;
        let margin = 120usize;
        let size = margin + cell * self.k + 20;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let support = self.support();
        for t in 0..self.k {
            for p in 0..self.k {
                let c = self.get(t, p);
                let frac = if support[t] == 0 { 0.0 } else { c as f64 / support[t] as f64 };
                let shade = (255.0 * (1.0 - frac)).round() as u8;
                let (x, y) = (margin + p * cell, margin + t * cell);
                let _ = writeln!(
                    s,
                    r##"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)" stroke="#ccc"/>"##
                );
                let fg = if frac > 0.5 { "white" } else { "black" };
                let _ = writeln!(
                    s,
                    r#"<text x="{}" y="{}" text-anchor="middle" fill="{fg}">{c}</text>"#,
                    x + cell / 2,
                    y + cell / 2 + 4
                );
            }
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
                margin - 6,
                margin + t * cell + cell / 2 + 4,
                xml_escape(&names[t])
            );
            let (x, y) = (margin + t * cell + cell / 2, margin - 6);
            let _ = writeln!(
                s,
                r#"<text x="{x}" y="{y}" transform="rotate(-45 {x} {y})">{}</text>"#,
                xml_escape(&names[t])
            );
        }
        let _ = writeln!(s, r#"<text x="4" y="14">rows: true class, columns: predicted</text>"#);
        s.push_str("</svg>\n");
        s
    }
}

fn display_names(class_names: &[String], k: usize) -> Vec<String> {
    (0..k)
        .map(|i| class_names.get(i).cloned().unwrap_or_else(|| i.to_string()))
        .collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Tallies predictions against labels.
pub fn confusion(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Data(format!(
            "{} labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(k);
    for (i, (&t, &p)) in y_true.iter().zip(y_pred).enumerate() {
        if t >= k || p >= k {
            return Err(Error::Data(format!(
                "sample {i}: label {t} / prediction {p} outside 0..{k}"
            )));
        }
        cm.add(t, p);
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub class_names: Vec<String>,
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    /// Per-class ratios whose denominator was zero and were set to 0.
    pub zero_division_warnings: usize,
    pub confusion: ConfusionMatrix,
}

fn ratio(num: u64, den: u64, warnings: &mut usize) -> f64 {
    if den == 0 {
        *warnings += 1;
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// One-vs-rest per-class scores and unweighted class means.
pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 || cm.k == 0 {
        return Err(Error::Data("cannot score an empty confusion matrix".into()));
    }
    let support = cm.support();
    let predicted = cm.predicted();
    let mut warnings = 0;
    let per_class: Vec<ClassMetrics> = (0..cm.k)
        .map(|c| {
            let tp = cm.get(c, c);
            let precision = ratio(tp, predicted[c], &mut warnings);
            let recall = ratio(tp, support[c], &mut warnings);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support: support[c],
            }
        })
        .collect();
    let k = cm.k as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k;
    Ok(MetricsReport {
        class_names: (0..cm.k).map(|i| i.to_string()).collect(),
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        accuracy: cm.trace() as f64 / total as f64,
        per_class,
        zero_division_warnings: warnings,
        confusion: cm.clone(),
    })
}

impl MetricsReport {
    pub fn with_class_names(mut self, names: &[String]) -> Self {
        self.class_names = display_names(names, self.per_class.len());
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `metrics.json`, `confusion.csv` and `confusion.svg` into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            ("metrics.json", self.to_json()?),
            ("confusion.csv", self.confusion.to_csv(&self.class_names)),
            ("confusion.svg", self.confusion.to_svg(&self.class_names)),
        ];
        for (name, body) in files {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Scores of a predictor that always answers the most frequent training class.
pub fn majority_baseline(train_labels: &[usize], test_labels: &[usize], k: usize) -> Result<MetricsReport> {
    let mut counts = vec![0usize; k];
    for &l in train_labels {
        if l >= k {
            return Err(Error::Data(format!("label {l} outside 0..{k}")));
        }
        counts[l] += 1;
    }
    let majority = counts
        .iter()
        .enumerate()
        .fold((0, 0), |best, (i, &c)| if c > best.1 { (i, c) } else { best })
        .0;
    let preds = vec![majority; test_labels.len()];
    compute_metrics(&confusion(test_labels, &preds, k)?)
}

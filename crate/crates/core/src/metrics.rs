//! Binary segmentation metrics: IOU, F1, recall and precision.

use std::fmt;
use std::ops::{Add, AddAssign};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default binarization threshold (`p >= threshold` is road).
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct MetricCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl MetricCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl Add for MetricCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self::new(self.tp + o.tp, self.fp + o.fp, self.fn_ + o.fn_, self.tn + o.tn)
    }
}

impl AddAssign for MetricCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

/// Counts pixels after thresholding `p`; targets are positive when `> 0.5`.
pub fn confusion_counts(p: &[f64], t: &[f64], threshold: f64) -> Result<MetricCounts> {
    if p.len() != t.len() {
        return Err(Error::Shape(format!(
            "prediction has {} pixels, target {}",
            p.len(),
            t.len()
        )));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("threshold {threshold} outside (0, 1)")));
    }
    let mut c = MetricCounts::default();
    for (&pi, &ti) in p.iter().zip(t) {
        match (pi >= threshold, ti > 0.5) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AveragingMode {
    /// Pool counts over the set, then compute metrics.
    Micro,
    /// Compute metrics per image, then average.
    #[default]
    Macro,
}

impl fmt::Display for AveragingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AveragingMode::Micro => "micro",
            AveragingMode::Macro => "macro",
        })
    }
}

impl FromStr for AveragingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "micro" => Ok(AveragingMode::Micro),
            "macro" => Ok(AveragingMode::Macro),
            other => Err(Error::Parse(format!("unknown averaging mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub iou: f64,
    pub f1: f64,
    pub recall: f64,
    pub precision: f64,
    pub mode: AveragingMode,
}

/// `num / den`, with `0/0` read as 1 when nothing was missed.
fn ratio(tp: u64, den: u64) -> f64 {
    if den == 0 {
        if tp == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        tp as f64 / den as f64
    }
}

pub fn metrics_from_counts(c: MetricCounts) -> MetricReport {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let iou = ratio(c.tp, c.tp + c.fp + c.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    MetricReport {
        iou,
        f1,
        recall,
        precision,
        mode: AveragingMode::Micro,
    }
}

/// Aggregates per-image counts in the requested mode.
pub fn report_from_counts(counts: &[MetricCounts], mode: AveragingMode) -> Result<MetricReport> {
    if counts.is_empty() {
        return Err(Error::Empty("no images to evaluate".into()));
    }
    Ok(match mode {
        AveragingMode::Micro => {
            metrics_from_counts(counts.iter().copied().fold(MetricCounts::default(), Add::add))
        }
        AveragingMode::Macro => {
            let n = counts.len() as f64;
            let mut r = MetricReport {
                iou: 0.0,
                f1: 0.0,
                recall: 0.0,
                precision: 0.0,
                mode,
            };
            for m in counts.iter().map(|&c| metrics_from_counts(c)) {
                r.iou += m.iou / n;
                r.f1 += m.f1 / n;
                r.recall += m.recall / n;
                r.precision += m.precision / n;
            }
            r
        }
    })
}

/// Evaluates aligned predictions and targets.
pub fn evaluate_set<P, T>(
    predictions: &[P],
    targets: &[T],
    threshold: f64,
    mode: AveragingMode,
) -> Result<MetricReport>
where
    P: AsRef<[f64]>,
    T: AsRef<[f64]>,
{
    if predictions.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let counts = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| confusion_counts(p.as_ref(), t.as_ref(), threshold))
        .collect::<Result<Vec<_>>>()?;
    report_from_counts(&counts, mode)
}

impl MetricReport {
    /// `(column, percentage)` in reporting order.
    pub fn columns(&self) -> [(&'static str, f64); 4] {
        [
            ("IOU", 100.0 * self.iou),
            ("F1", 100.0 * self.f1),
            ("Recall", 100.0 * self.recall),
            ("Precision", 100.0 * self.precision),
        ]
    }

    /// `key = value` lines, percentages with two decimals.
    pub fn to_key_values(&self, prefix: &str) -> String {
        let mut out = format!("{prefix}mode = \"{}\"\n", self.mode);
        for (k, v) in self.columns() {
            out.push_str(&format!("{prefix}{} = {v:.2}\n", k.to_lowercase()));
        }
        out
    }
}

/// Renders rows of `(label, report)` as an aligned text table.
pub fn format_table(title: &str, rows: &[(String, MetricReport)]) -> String {
    let label_w = rows
        .iter()
        .map(|(l, _)| l.chars().count())
        .chain([title.chars().count()])
        .max()
        .unwrap_or(0);
    let mut out = format!(
        "{title:<label_w$}  {:>8}  {:>8}  {:>8}  {:>9}\n",
        "IOU", "F1", "Recall", "Precision"
    );
    for (label, r) in rows {
        let [(_, iou), (_, f1), (_, rec), (_, prec)] = r.columns();
        out.push_str(&format!(
            "{label:<label_w$}  {iou:>8.2}  {f1:>8.2}  {rec:>8.2}  {prec:>9.2}\n"
        ));
    }
    out
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [(_, iou), (_, f1), (_, rec), (_, prec)] = self.columns();
        write!(
            f,
            "IOU {iou:.2}  F1 {f1:.2}  Recall {rec:.2}  Precision {prec:.2} ({})",
            self.mode
        )
    }
}

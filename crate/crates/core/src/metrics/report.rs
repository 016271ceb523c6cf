use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CaseMetrics;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub case_id: String,
    #[serde(flatten)]
    pub metrics: CaseMetrics,
}

/// Per-case metrics plus per-class means across cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub num_classes: usize,
    pub cases: Vec<CaseReport>,
    /// Indexed by foreground class `1..N`.
    pub class_mean_dsc: Vec<f64>,
    pub class_mean_hd95: Vec<Option<f64>>,
    pub mean_dsc: f64,
    pub mean_hd95: Option<f64>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl EvaluationReport {
    pub fn new(num_classes: usize, cases: Vec<CaseReport>) -> Self {
        let fg = num_classes.saturating_sub(1);
        let class_mean_dsc: Vec<f64> = (0..fg)
            .map(|k| mean(cases.iter().map(|c| c.metrics.per_class[k].dsc)).unwrap_or(f64::NAN))
            .collect();
        let class_mean_hd95: Vec<Option<f64>> = (0..fg)
            .map(|k| mean(cases.iter().filter_map(|c| c.metrics.per_class[k].hd95)))
            .collect();
        Self {
            num_classes,
            mean_dsc: mean(class_mean_dsc.iter().copied()).unwrap_or(f64::NAN),
            mean_hd95: mean(class_mean_hd95.iter().flatten().copied()),
            class_mean_dsc,
            class_mean_hd95,
            cases,
        }
    }
}

pub fn write_json_report(report: &EvaluationReport, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One row per case and class: `case_id,class_id,dsc,hd95`. Undefined HD95 is left empty.
pub fn write_csv_summary(report: &EvaluationReport, path: &Path) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Other(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["case_id", "class_id", "dsc", "hd95"]).map_err(csv_err)?;
    for case in &report.cases {
        for m in &case.metrics.per_class {
            let hd = m.hd95.map(|v| format!("{v:.6}")).unwrap_or_default();
            w.write_record([case.case_id.clone(), m.class_id.to_string(), format!("{:.6}", m.dsc), hd])
                .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

//! The `report` command: a comparison table over several evaluation reports,
//! with signed deltas against the first one.

use std::path::Path;

use anyhow::{bail, Context};
use ltseg_core::MetricsReport;
use serde::Serialize;

use crate::commands::EvalReport;

pub const COLUMNS: [&str; 5] = [
    "per_class_f1@10",
    "per_class_f1@25",
    "per_class_f1@50",
    "per_class_acc",
    "global_f1@25",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub name: String,
    pub values: [f64; 5],
    pub deltas: [f64; 5],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub columns: [&'static str; 5],
    pub rows: Vec<Row>,
}

fn values(name: &str, m: &MetricsReport) -> anyhow::Result<[f64; 5]> {
    let f1 = |thr: f64| {
        m.f1_at(thr)
            .with_context(|| format!("{name}: no F1 score at IoU {thr}"))
    };
    Ok([
        f1(0.10)?.per_class,
        f1(0.25)?.per_class,
        f1(0.50)?.per_class,
        m.per_class_acc,
        f1(0.25)?.global,
    ])
}

/// Builds the table from named metric reports; the first is the baseline.
pub fn compare(reports: &[(String, MetricsReport)]) -> anyhow::Result<Comparison> {
    let Some((_, first)) = reports.first() else {
        bail!("at least one report is required");
    };
    let mut rows: Vec<Row> = Vec::with_capacity(reports.len());
    for (name, m) in reports {
        if m.num_classes != first.num_classes {
            bail!(
                "{name} has {} classes but the baseline has {}",
                m.num_classes,
                first.num_classes
            );
        }
        let v = values(name, m)?;
        let base = rows.first().map_or(v, |r| r.values);
        let deltas = std::array::from_fn(|n| v[n] - base[n]);
        rows.push(Row {
            name: name.clone(),
            values: v,
            deltas,
        });
    }
    Ok(Comparison { columns: COLUMNS, rows })
}

pub fn load_report(path: &Path) -> anyhow::Result<MetricsReport> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let r: EvalReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(r.metrics)
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("report");
        for c in self.columns {
            out.push_str(&format!(",{c}"));
        }
        for c in self.columns {
            out.push_str(&format!(",delta_{c}"));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.name);
            for v in r.values.iter().chain(&r.deltas) {
                out.push_str(&format!(",{v:.2}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("table serializes");
        s.push('\n');
        s
    }
}

//! Drinking-water suitability verdict from estimated parameter maps.
//!
//! Each parameter is summarized by the median of its mean map over the
//! navigable area and compared against configured limits.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::worldsim::{Parameter, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Threshold {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

impl Threshold {
    pub fn admits(&self, v: f64) -> bool {
        self.min.is_none_or(|m| v >= m) && self.max.is_none_or(|m| v <= m)
    }
}

pub type Thresholds = BTreeMap<Parameter, Threshold>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateSummary {
    pub median: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub cells: usize,
}

impl EstimateSummary {
    pub fn of(field: &ScalarField) -> Option<Self> {
        let mut v: Vec<f64> = field.finite_values().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        };
        Some(Self {
            median,
            mean: v.iter().sum::<f64>() / n as f64,
            min: v[0],
            max: v[n - 1],
            cells: n,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceEntry {
    pub parameter: Parameter,
    pub estimate: EstimateSummary,
    pub threshold: Threshold,
    pub passes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceReport {
    pub entries: Vec<ComplianceEntry>,
    pub suitable: bool,
    pub notices: Vec<String>,
}

impl ComplianceReport {
    pub fn failing(&self) -> impl Iterator<Item = Parameter> + '_ {
        self.entries.iter().filter(|e| !e.passes).map(|e| e.parameter)
    }
}

pub fn compliance(estimates: &[ScalarField], thresholds: &Thresholds) -> ComplianceReport {
    let mut entries = Vec::new();
    let mut notices = Vec::new();
    for field in estimates {
        let Some(threshold) = thresholds.get(&field.parameter) else {
            notices.push(format!("no thresholds configured for {}, skipped", field.parameter));
            continue;
        };
        let Some(estimate) = EstimateSummary::of(field) else {
            notices.push(format!("{} map has no data, skipped", field.parameter));
            continue;
        };
        entries.push(ComplianceEntry {
            parameter: field.parameter,
            estimate,
            threshold: *threshold,
            passes: threshold.admits(estimate.median),
        });
    }
    for p in thresholds.keys() {
        if !estimates.iter().any(|f| f.parameter == *p) {
            notices.push(format!("no estimate available for {p}"));
        }
    }
    if entries.is_empty() {
        notices.push("no parameter was compared; suitability holds vacuously".into());
    }
    ComplianceReport {
        suitable: entries.iter().all(|e| e.passes),
        entries,
        notices,
    }
}

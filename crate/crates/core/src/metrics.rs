//! Prediction errors, over/under-provisioning totals, and report files.
//!
//! A positive error `prediction - measured` is overprovisioning (more CPU
//! reserved than used); a negative one is underprovisioning.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::federation::{LossKind, RoundResult};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {0} predictions vs {1} targets")]
    Shape(usize, usize),
    #[error("{0}")]
    Usage(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid summary: {0}")]
    Json(#[from] serde_json::Error),
}

/// Number of per-sample errors written for the first and final rounds.
pub const ERROR_SAMPLES: usize = 100;

pub fn prediction_errors(predictions: &[f64], targets: &[f64]) -> Result<Vec<f64>, MetricsError> {
    if predictions.len() != targets.len() {
        return Err(MetricsError::Shape(predictions.len(), targets.len()));
    }
    Ok(predictions.iter().zip(targets).map(|(p, y)| p - y).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProvisioningStats {
    pub over_total: f64,
    pub under_total: f64,
    pub over_count: usize,
    pub under_count: usize,
    pub mean_abs_error: f64,
    pub sample_count: usize,
}

impl ProvisioningStats {
    pub fn combined_total(&self) -> f64 {
        self.over_total + self.under_total
    }
}

/// Splits errors into overprovisioned and underprovisioned volume. Exact
/// zeros count toward neither side.
pub fn provisioning_decomposition(errors: &[f64]) -> Result<ProvisioningStats, MetricsError> {
    if errors.is_empty() {
        return Err(MetricsError::Usage("no prediction errors to decompose".into()));
    }
    let mut s = ProvisioningStats {
        over_total: 0.0,
        under_total: 0.0,
        over_count: 0,
        under_count: 0,
        mean_abs_error: 0.0,
        sample_count: errors.len(),
    };
    let mut abs_sum = 0.0;
    for &e in errors {
        if e > 0.0 {
            s.over_total += e;
            s.over_count += 1;
        } else if e < 0.0 {
            s.under_total -= e;
            s.under_count += 1;
        }
        abs_sum += e.abs();
    }
    s.mean_abs_error = abs_sum / errors.len() as f64;
    Ok(s)
}

/// Baseline-to-FLMR ratio of a provisioning total. Infinite when the FLMR
/// total is zero and the baseline's is not; serialized as the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ratio(pub f64);

impl Ratio {
    fn of(baseline: f64, flmr: f64) -> Self {
        if flmr == 0.0 {
            Ratio(if baseline == 0.0 { 1.0 } else { f64::INFINITY })
        } else {
            Ratio(baseline / flmr)
        }
    }

    pub fn is_infinite(&self) -> bool {
        self.0.is_infinite()
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Ratio(v)),
            Raw::Text(t) if t == "inf" => Ok(Ratio(f64::INFINITY)),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("unexpected ratio {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratios {
    pub over_ratio: Ratio,
    pub under_ratio: Ratio,
    pub combined_ratio: Ratio,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonReport {
    pub flmr: ProvisioningStats,
    pub baseline: ProvisioningStats,
    pub ratios: Ratios,
}

impl ComparisonReport {
    /// Names of ratios that came out infinite.
    pub fn infinite_ratios(&self) -> Vec<&'static str> {
        let r = &self.ratios;
        [("over_ratio", r.over_ratio), ("under_ratio", r.under_ratio), ("combined_ratio", r.combined_ratio)]
            .into_iter()
            .filter(|(_, v)| v.is_infinite())
            .map(|(n, _)| n)
            .collect()
    }
}

pub fn compare(flmr: &ProvisioningStats, baseline: &ProvisioningStats) -> ComparisonReport {
    ComparisonReport {
        flmr: *flmr,
        baseline: *baseline,
        ratios: Ratios {
            over_ratio: Ratio::of(baseline.over_total, flmr.over_total),
            under_ratio: Ratio::of(baseline.under_total, flmr.under_total),
            combined_ratio: Ratio::of(baseline.combined_total(), flmr.combined_total()),
        },
    }
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Summary {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flmr: Option<ProvisioningStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<ProvisioningStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratios: Option<Ratios>,
}

impl Summary {
    /// Summary of a single run; the stats land under `flmr` or `baseline`
    /// depending on the objective.
    pub fn single(kind: LossKind, stats: ProvisioningStats) -> Self {
        match kind {
            LossKind::Flmr => Summary { flmr: Some(stats), ..Default::default() },
            LossKind::DeepCog => Summary { baseline: Some(stats), ..Default::default() },
        }
    }

    pub fn from_comparison(report: &ComparisonReport) -> Self {
        Summary { flmr: Some(report.flmr), baseline: Some(report.baseline), ratios: Some(report.ratios) }
    }

    pub fn to_json(&self) -> Result<String, MetricsError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, MetricsError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Per-sample errors of the first and final broadcast models.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSnapshots {
    pub first_round: Vec<f64>,
    pub final_round: Vec<f64>,
}

fn write_errors(path: &Path, errors: &[f64]) -> Result<(), MetricsError> {
    let mut out = String::from("sample_index,p_err\n");
    for (i, e) in errors.iter().take(ERROR_SAMPLES).enumerate() {
        out.push_str(&format!("{i},{e}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes `rounds.csv`, `errors_round0.csv`, `errors_final.csv` and
/// `summary.json` into `out_dir`.
///
/// Round-level FLMR losses are written as `1 - phi` of the client-mean
/// satisfaction, so the identity holds on every emitted line.
pub fn emit_reports(
    results: &[RoundResult],
    kind: LossKind,
    errors: &ErrorSnapshots,
    summary: &Summary,
    out_dir: &Path,
) -> Result<(), MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::Usage("no rounds to report".into()));
    }
    fs::create_dir_all(out_dir)?;
    let mut rounds = String::from("round,train_loss,train_phi,test_loss,test_phi\n");
    for r in results {
        let train_phi = r.mean_train_phi();
        let test_phi = r.mean_test_phi();
        let (train_loss, test_loss) = match kind {
            LossKind::Flmr => (1.0 - train_phi, 1.0 - test_phi),
            LossKind::DeepCog => (r.mean_train_loss(), r.mean_test_loss()),
        };
        rounds.push_str(&format!("{},{train_loss},{train_phi},{test_loss},{test_phi}\n", r.round));
    }
    fs::write(out_dir.join("rounds.csv"), rounds)?;
    write_errors(&out_dir.join("errors_round0.csv"), &errors.first_round)?;
    write_errors(&out_dir.join("errors_final.csv"), &errors.final_round)?;
    let mut f = fs::File::create(out_dir.join("summary.json"))?;
    f.write_all(summary.to_json()?.as_bytes())?;
    Ok(())
}

//! One JSON document per (experiment, condition, seed) cell.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forests::ImportanceSplit;
use crate::graph::{AuditDigest, Protocol};
use crate::ingest::FitScope;
use crate::metrics::{CalibrationReport, CostPoint, MetricBundle, PerStepReport};
use crate::models::EarlyStopSplit;
use crate::store::write_atomic;

pub const RECORD_SCHEMA_VERSION: u32 = 1;
/// Published schema for [`RunRecord`], kept in the repository.
pub const RECORD_SCHEMA: &str = include_str!("../../../../schemas/run_record.schema.json");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed,
}

/// Temperature scaling under both calibration-set choices.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    /// Fit on test steps 35–36, reported on steps 37–49.
    pub paper_faithful: Option<CalibrationReport>,
    /// Fit on timesteps 30–34, reported on the whole test period.
    pub train_tail: Option<CalibrationReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub loss: f64,
    pub train_f1: f64,
    pub test_f1: f64,
    pub val_f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistorySummary {
    pub early_stop_split: EarlyStopSplit,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_test_f1: f64,
    pub final_train_f1: f64,
    pub final_loss: f64,
    pub param_count: usize,
    pub curve: Vec<CurvePoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub experiment: String,
    pub condition: String,
    pub seed: u64,
    pub config_hash: String,
    pub model: String,
    pub protocol: Protocol,
    pub fit_scope: FitScope,
    pub graph_variant: String,
    pub status: CellStatus,
    pub error: Option<String>,
    /// Test-period metrics over every labelled row of steps 35–49.
    pub metrics: Option<MetricBundle>,
    /// 95% bootstrap interval of the test F1.
    pub f1_ci: Option<(f64, f64)>,
    pub per_step: Option<PerStepReport>,
    pub cost: Vec<CostPoint>,
    pub calibration: Option<CalibrationSummary>,
    pub history: Option<HistorySummary>,
    pub importance: Option<ImportanceSplit>,
    /// Present for every cell that trains a neural encoder.
    pub audit: Option<AuditDigest>,
    pub warnings: Vec<String>,
    pub wall_time_s: f64,
}

impl RunRecord {
    pub fn is_ok(&self) -> bool {
        self.status == CellStatus::Ok
    }

    pub fn f1(&self) -> Option<f64> {
        self.metrics.as_ref().map(|m| m.f1)
    }

    /// The record with its wall time zeroed, the one field that differs
    /// between repeated executions.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_time_s: 0.0,
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text)?;
        if r.schema_version != RECORD_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "run record schema version {} (expected {RECORD_SCHEMA_VERSION})",
                r.schema_version
            )));
        }
        Ok(r)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    /// Write-once: the file appears complete or not at all.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }
}

/// `{out}/{experiment}/{condition}/seed{k}.json`.
pub fn record_path(out: &Path, experiment: &str, condition: &str, seed: u64) -> PathBuf {
    out.join(experiment)
        .join(condition)
        .join(format!("seed{seed}.json"))
}

pub fn checkpoint_path(out: &Path, experiment: &str, condition: &str, seed: u64) -> PathBuf {
    out.join(experiment)
        .join(condition)
        .join(format!("seed{seed}.ckpt"))
}

/// Every record under `{dir}/{condition}/seed*.json`, sorted by condition
/// then seed. Unreadable files are errors, not skipped.
pub fn load_records(experiment_dir: &Path) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    let rd = std::fs::read_dir(experiment_dir).map_err(|e| Error::io(experiment_dir, e))?;
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(experiment_dir, e))?;
        if !entry.path().is_dir() {
            continue;
        }
        let sub = entry.path();
        for f in std::fs::read_dir(&sub).map_err(|e| Error::io(&sub, e))? {
            let p = f.map_err(|e| Error::io(&sub, e))?.path();
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if name.starts_with("seed") && name.ends_with(".json") {
                out.push(RunRecord::read(&p)?);
            }
        }
    }
    out.sort_by(|a, b| a.condition.cmp(&b.condition).then(a.seed.cmp(&b.seed)));
    Ok(out)
}

#[cfg(test)]
pub(crate) fn sample_record(condition: &str, seed: u64, f1: f64) -> RunRecord {
    use crate::metrics::Confusion;
    RunRecord {
        schema_version: RECORD_SCHEMA_VERSION,
        experiment: "e".into(),
        condition: condition.into(),
        seed,
        config_hash: "0".repeat(64),
        model: "sage".into(),
        protocol: Protocol::StrictInductive,
        fit_scope: FitScope::FullPopulation,
        graph_variant: "original".into(),
        status: CellStatus::Ok,
        error: None,
        metrics: Some(MetricBundle {
            f1,
            precision: f1,
            recall: f1,
            auc_roc: 0.9,
            average_precision: 0.5,
            confusion: Confusion {
                tp: 1,
                fp: 1,
                fn_: 1,
                tn: 1,
            },
            threshold: None,
            undefined_recall: false,
            undefined_auc: false,
        }),
        f1_ci: Some((f1 - 0.01, f1 + 0.01)),
        per_step: None,
        cost: vec![],
        calibration: None,
        history: None,
        importance: None,
        audit: None,
        warnings: vec![],
        wall_time_s: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_atomic_write() {
        let dir = tempfile::tempdir().unwrap();
        let r = sample_record("sage", 3, 0.123456789012345);
        let p = record_path(dir.path(), "e", "sage", 3);
        assert!(p.ends_with("e/sage/seed3.json"));
        r.write(&p).unwrap();
        let back = RunRecord::read(&p).unwrap();
        assert_eq!(back, r);
        let names: Vec<_> = std::fs::read_dir(p.parent().unwrap())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names.len(), 1, "temporary files left behind: {names:?}");
        assert_eq!(load_records(&dir.path().join("e")).unwrap(), vec![r]);
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let mut r = sample_record("a", 0, 0.5);
        r.schema_version = 99;
        assert!(matches!(
            RunRecord::from_json(&r.to_json().unwrap()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn schema_lists_every_record_field() {
        let schema: serde_json::Value = serde_json::from_str(RECORD_SCHEMA).unwrap();
        let props = schema["properties"].as_object().unwrap();
        let record = serde_json::to_value(sample_record("a", 0, 0.5)).unwrap();
        let fields = record.as_object().unwrap();
        for k in fields.keys() {
            assert!(props.contains_key(k), "schema misses {k}");
        }
        for k in props.keys() {
            assert!(fields.contains_key(k), "schema lists unknown field {k}");
        }
        let required: Vec<&str> = schema["required"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_str().unwrap())
            .collect();
        assert_eq!(required.len(), fields.len());
    }
}

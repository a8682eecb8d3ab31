//! File schemas and writers.
//!
//! Detections are a JSON array of `{image_id, category_id, box, score}` with
//! `box = [x1, y1, x2, y2]`; ground truth has the same shape without
//! `score`. Run directories hold `runrecord.json`, `metrics.csv` and, after
//! divergence, an empty `TRUNCATED` marker.

use std::fs;
use std::path::Path;

use o2f_core::assignment::SoftAnchor;
use o2f_core::metrics::{Counts, GroundTruth, ThresholdAp};
use o2f_core::sim::RunRecord;
use o2f_core::{AssignMethod, BBox, Detection};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const RUN_RECORD: &str = "runrecord.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const TRUNCATED: &str = "TRUNCATED";
pub const EVAL_JSON: &str = "eval.json";
pub const ASSIGN_JSON: &str = "assign.json";
pub const GRADCHECK_JSON: &str = "gradcheck.json";
pub const SWEEP_JSON: &str = "sweep.json";

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    #[serde(rename = "T_j")]
    pub t_j: f64,
    pub loss_total: f64,
    pub loss_cls: f64,
    pub loss_reg: f64,
    pub ap_nms: f64,
    pub ap_nonms: f64,
    pub dup_per_gt: f64,
    pub seconds: f64,
}

pub fn metrics_rows(record: &RunRecord) -> Vec<MetricsRow> {
    record
        .epochs
        .iter()
        .map(|e| MetricsRow {
            epoch: e.epoch,
            t_j: e.temperature,
            loss_total: e.loss_total,
            loss_cls: e.loss_cls,
            loss_reg: e.loss_reg,
            ap_nms: e.ap_nms,
            ap_nonms: e.ap_nonms,
            dup_per_gt: e.dup_per_gt,
            seconds: e.seconds,
        })
        .collect()
}

pub fn metrics_csv(record: &RunRecord) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let rows = metrics_rows(record);
    if rows.is_empty() {
        // keep the header even when no epoch finished
        w.write_record([
            "epoch",
            "T_j",
            "loss_total",
            "loss_cls",
            "loss_reg",
            "ap_nms",
            "ap_nonms",
            "dup_per_gt",
            "seconds",
        ])
        .map_err(|e| CliError::Failed(e.to_string()))?;
    }
    for row in rows {
        w.serialize(row).map_err(|e| CliError::Failed(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Failed(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<Result<Vec<MetricsRow>, _>>()
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Failed(e.to_string()))?;
    text.push('\n');
    write_file(path, text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Writes the record, the per-epoch CSV and, for truncated runs, the marker.
pub fn write_run(dir: &Path, record: &RunRecord) -> Result<(), CliError> {
    create_dir(dir)?;
    write_json(&dir.join(RUN_RECORD), record)?;
    write_file(&dir.join(METRICS_CSV), metrics_csv(record)?)?;
    let marker = dir.join(TRUNCATED);
    if record.truncated {
        write_file(&marker, record.diagnostic.as_deref().unwrap_or(""))?;
    } else if marker.exists() {
        fs::remove_file(&marker).map_err(|e| CliError::io(&marker, e))?;
    }
    Ok(())
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>, CliError> {
    let dets: Vec<Detection> = read_json(path)?;
    if let Some(d) = dets.iter().find(|d| !d.score.is_finite()) {
        return Err(CliError::config(format!("{}: non-finite score {}", path.display(), d.score)));
    }
    Ok(dets)
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruth>, CliError> {
    read_json(path)
}

/// Output of `eval`. Fields of metrics that were not requested are omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub n_detections: usize,
    pub n_ground_truth: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nms_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_ap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub average_recall: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recall_50: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ap_per_iou: Option<Vec<ThresholdAp>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<Vec<Counts>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mmr: Option<f64>,
}

/// One anchor's prediction as read by `assign`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    #[serde(default)]
    pub image_id: u64,
    pub anchor_id: usize,
    /// Anchor point `[x, y]`.
    pub point: [f64; 2],
    pub stride: f64,
    pub cls_scores: Vec<f64>,
    pub ctr_score: f64,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDump {
    pub instance: usize,
    pub category_id: usize,
    #[serde(rename = "box")]
    pub bbox: BBox,
    /// Anchor ids below, not positions.
    pub certain: Option<usize>,
    pub fallback: bool,
    pub positives: Vec<usize>,
    pub ambiguous: Vec<SoftAnchor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageAssignment {
    pub image_id: u64,
    pub instances: Vec<InstanceDump>,
    pub negatives: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssignDump {
    pub method: AssignMethod,
    pub temperature: f64,
    pub images: Vec<ImageAssignment>,
}

/// Summary line per run in `sweep.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepEntry {
    pub name: String,
    pub overrides: serde_json::Map<String, serde_json::Value>,
    pub truncated: bool,
    pub final_ap_nms: Option<f64>,
    pub final_ap_nonms: Option<f64>,
    pub final_dup_per_gt: Option<f64>,
}

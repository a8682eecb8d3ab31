//! Subcommand implementations. Each returns its output value so tests can
//! call them without spawning a process.

use std::collections::BTreeMap;
use std::path::Path;

use o2f_core::anchor::Anchor;
use o2f_core::assignment::{assign, AssignConfig, SoftAnchor};
use o2f_core::loss::gradcheck::{run_suite, SuiteOptions, SuiteReport};
use o2f_core::metrics::{coco_map, default_fppi_points, mmr, EvalConfig, GroundTruth};
use o2f_core::postprocess::nms;
use o2f_core::sim::{train_run, AssignMode, AssignSection, ExperimentConfig, NoClock, RunRecord, TrainError};
use o2f_core::{AnchorRole, Combine, Detection, Instance, Prediction};
use rayon::prelude::*;
use serde_json::Value;

use crate::config::{self, finish, parse_flat, set_path, tree_from_assignments, tree_from_str, Assignment};
use crate::error::CliError;
use crate::exec::{RayonExecutor, WallClock};
use crate::io::{self, AssignDump, EvalReport, ImageAssignment, InstanceDump, PredictionRecord, SweepEntry};

/// Overrides shared by `train` and `sweep`, applied after the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<String>,
    pub nms_threshold: Option<f64>,
    /// `key=value` pairs in the config syntax.
    pub set: Vec<String>,
}

impl Overrides {
    fn apply(&self, tree: &mut Value) -> Result<(), CliError> {
        if !self.set.is_empty() {
            for a in parse_flat(&self.set.join("\n"))? {
                set_path(tree, &a.key, a.value)?;
            }
        }
        if let Some(seed) = self.seed {
            set_path(tree, "seed", seed.into())?;
        }
        if let Some(mode) = &self.mode {
            set_path(tree, "assign.mode", Value::String(mode.clone()))?;
        }
        if let Some(t) = self.nms_threshold {
            set_path(tree, "eval.nms_threshold", t.into())?;
        }
        Ok(())
    }
}

/// Loads a config file (or the defaults) and applies overrides. The result is
/// validated and has per-model defaults filled in.
pub fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<ExperimentConfig, CliError> {
    let mut tree = match path {
        Some(p) => tree_from_str(&config::read_text(p)?)?,
        None => tree_from_str("")?,
    };
    overrides.apply(&mut tree)?;
    Ok(finish(tree)?.resolved())
}

fn run_training(cfg: &ExperimentConfig, exec: &RayonExecutor) -> Result<RunRecord, TrainError> {
    if cfg.output.wall_time {
        train_run(cfg, exec, &WallClock::default())
    } else {
        train_run(cfg, exec, &NoClock)
    }
}

/// Trains one run and writes its directory. Divergence still writes the
/// partial record before returning the error.
pub fn train_to_dir(cfg: &ExperimentConfig, out: &Path, exec: &RayonExecutor) -> Result<RunRecord, CliError> {
    match run_training(cfg, exec) {
        Ok(record) => {
            io::write_run(out, &record)?;
            Ok(record)
        }
        Err(TrainError::Diverged(record)) => {
            io::write_run(out, &record)?;
            Err(CliError::Diverged(record.diagnostic.unwrap_or_default()))
        }
        Err(TrainError::Invalid(e)) => Err(CliError::config(e.to_string())),
    }
}

pub fn train(config: Option<&Path>, out: &Path, overrides: &Overrides, exec: &RayonExecutor) -> Result<RunRecord, CliError> {
    let cfg = load_config(config, overrides)?;
    train_to_dir(&cfg, out, exec)
}

/// One expanded sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub name: String,
    pub overrides: serde_json::Map<String, Value>,
    pub config: ExperimentConfig,
}

fn label(key: &str, value: &Value) -> String {
    let last = key.rsplit('.').next().unwrap_or(key).to_uppercase();
    let v = match value {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    format!("{last}{v}")
}

/// Expands a sweep file. Lines `sweep.<key> = [v1, v2, ...]` define axes;
/// every other line is the shared base config. Runs are the cartesian
/// product in file order, named by joining `KEY<value>` labels with `_`
/// (`sweep.assign.k = [7, 5, 3]` gives `K7`, `K5`, `K3`).
pub fn expand_sweep(text: &str, overrides: &Overrides) -> Result<Vec<SweepRun>, CliError> {
    let items = parse_flat(text)?;
    let (axes, base): (Vec<Assignment>, Vec<Assignment>) = items.into_iter().partition(|a| a.key.starts_with("sweep."));
    if axes.is_empty() {
        return Err(CliError::config("sweep file has no `sweep.<key> = [...]` lines"));
    }
    let mut axes_vals: Vec<(String, Vec<Value>)> = Vec::new();
    for a in axes {
        let key = a.key["sweep.".len()..].to_string();
        match a.value {
            Value::Array(vs) if !vs.is_empty() => axes_vals.push((key, vs)),
            _ => return Err(CliError::config(format!("line {}: sweep values must be a non-empty list", a.line))),
        }
    }
    let mut combos: Vec<Vec<(String, Value)>> = vec![Vec::new()];
    for (key, vals) in &axes_vals {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                vals.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push((key.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    let mut runs = Vec::with_capacity(combos.len());
    for combo in combos {
        let mut tree = tree_from_assignments(&base)?;
        let mut ov = serde_json::Map::new();
        for (k, v) in &combo {
            set_path(&mut tree, k, v.clone())?;
            ov.insert(k.clone(), v.clone());
        }
        overrides.apply(&mut tree)?;
        let name = combo.iter().map(|(k, v)| label(k, v)).collect::<Vec<_>>().join("_");
        if name.contains(['/', '\\']) || name.starts_with('.') {
            return Err(CliError::config(format!("sweep value gives an unusable directory name `{name}`")));
        }
        if runs.iter().any(|r: &SweepRun| r.name == name) {
            return Err(CliError::config(format!("duplicate sweep run `{name}`")));
        }
        runs.push(SweepRun {
            name,
            overrides: ov,
            config: finish(tree)?.resolved(),
        });
    }
    Ok(runs)
}

/// Runs every sweep point in parallel, each in `out/<name>`. All configs
/// are validated before anything is written.
pub fn sweep(config: &Path, out: &Path, overrides: &Overrides, exec: &RayonExecutor) -> Result<Vec<SweepEntry>, CliError> {
    let runs = expand_sweep(&config::read_text(config)?, overrides)?;
    io::create_dir(out)?;
    let results: Vec<Result<RunRecord, CliError>> = exec.install(|| {
        runs.par_iter()
            .map(|r| train_to_dir(&r.config, &out.join(&r.name), exec))
            .collect()
    });
    let mut entries = Vec::with_capacity(runs.len());
    let mut diverged = Vec::new();
    for (run, res) in runs.iter().zip(results) {
        let record = match res {
            Ok(rec) => Some(rec),
            Err(CliError::Diverged(_)) => {
                diverged.push(run.name.clone());
                None
            }
            Err(e) => return Err(e),
        };
        let last = record.as_ref().and_then(|r| r.last().cloned());
        entries.push(SweepEntry {
            name: run.name.clone(),
            overrides: run.overrides.clone(),
            truncated: record.is_none(),
            final_ap_nms: last.as_ref().map(|e| e.ap_nms),
            final_ap_nonms: last.as_ref().map(|e| e.ap_nonms),
            final_dup_per_gt: last.as_ref().map(|e| e.dup_per_gt),
        });
    }
    io::write_json(&out.join(io::SWEEP_JSON), &entries)?;
    if !diverged.is_empty() {
        return Err(CliError::Diverged(format!("runs {}", diverged.join(", "))));
    }
    Ok(entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    Ap,
    Mmr,
    #[default]
    All,
}

pub fn eval(dets: &[Detection], gts: &[GroundTruth], metric: Metric, nms_threshold: Option<f64>) -> Result<EvalReport, CliError> {
    let dets = match nms_threshold {
        Some(t) if (0.0..=1.0).contains(&t) => nms(dets, t),
        Some(t) => return Err(CliError::config(format!("nms threshold {t} outside [0, 1]"))),
        None => dets.to_vec(),
    };
    let mut report = EvalReport {
        n_detections: dets.len(),
        n_ground_truth: gts.len(),
        nms_threshold,
        mean_ap: None,
        average_recall: None,
        recall_50: None,
        ap_per_iou: None,
        counts: None,
        mmr: None,
    };
    if matches!(metric, Metric::Ap | Metric::All) {
        let r = coco_map(&dets, gts, &EvalConfig::default()).map_err(|e| CliError::config(e.to_string()))?;
        report.mean_ap = Some(r.mean_ap);
        report.average_recall = Some(r.average_recall);
        report.recall_50 = Some(r.recall_50);
        report.ap_per_iou = Some(r.ap_per_iou);
        report.counts = Some(r.counts);
    }
    if matches!(metric, Metric::Mmr | Metric::All) {
        report.mmr = Some(mmr(&dets, gts, &default_fppi_points()).map_err(|e| CliError::config(e.to_string()))?);
    }
    Ok(report)
}

pub fn eval_files(
    detections: &Path,
    gt: &Path,
    metric: Metric,
    nms_threshold: Option<f64>,
    out: Option<&Path>,
) -> Result<EvalReport, CliError> {
    let report = eval(&io::read_detections(detections)?, &io::read_ground_truth(gt)?, metric, nms_threshold)?;
    if let Some(dir) = out {
        io::create_dir(dir)?;
        io::write_json(&dir.join(io::EVAL_JSON), &report)?;
    }
    Ok(report)
}

/// Settings for `assign`.
#[derive(Debug, Clone)]
pub struct AssignOptions {
    pub mode: String,
    pub k: usize,
    pub alpha: f64,
    pub combine: Combine,
    pub temperature: f64,
}

impl Default for AssignOptions {
    fn default() -> Self {
        let d = AssignSection::default();
        Self {
            mode: "o2f".into(),
            k: d.k,
            alpha: d.alpha,
            combine: d.combine,
            temperature: o2f_core::ScheduleConfig::default().t_max,
        }
    }
}

fn check_prediction(p: &PredictionRecord) -> Result<(), CliError> {
    let unit = |v: f64| (0.0..=1.0).contains(&v);
    if !(p.cls_scores.iter().all(|&v| unit(v)) && unit(p.ctr_score)) {
        return Err(CliError::config(format!("anchor {}: scores must lie in [0, 1]", p.anchor_id)));
    }
    if !(p.stride > 0.0 && p.stride.is_finite() && p.point.iter().all(|v| v.is_finite())) {
        return Err(CliError::config(format!("anchor {}: bad point or stride", p.anchor_id)));
    }
    Ok(())
}

pub fn assign_records(preds: &[PredictionRecord], gts: &[GroundTruth], opts: &AssignOptions) -> Result<AssignDump, CliError> {
    let mode: AssignMode = serde_json::from_value(Value::String(opts.mode.clone()))
        .map_err(|_| CliError::config(format!("unknown assignment mode `{}`", opts.mode)))?;
    let section = AssignSection {
        mode,
        k: opts.k,
        alpha: opts.alpha,
        combine: opts.combine,
        ..AssignSection::default()
    };
    let method = section.method();
    let cfg: AssignConfig = section.config();
    if !(0.0..=1.0).contains(&opts.temperature) {
        return Err(CliError::config("temperature must lie in [0, 1]"));
    }

    let mut by_image: BTreeMap<u64, (Vec<&PredictionRecord>, Vec<&GroundTruth>)> = BTreeMap::new();
    for p in preds {
        check_prediction(p)?;
        by_image.entry(p.image_id).or_default().0.push(p);
    }
    for g in gts {
        by_image.entry(g.image).or_default().1.push(g);
    }

    let mut images = Vec::with_capacity(by_image.len());
    for (image_id, (ps, gs)) in by_image {
        let mut ids: Vec<usize> = ps.iter().map(|p| p.anchor_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(CliError::config(format!("image {image_id}: duplicate anchor ids")));
        }
        let anchors: Vec<Anchor> = ps
            .iter()
            .map(|p| Anchor {
                id: p.anchor_id,
                x: p.point[0],
                y: p.point[1],
                stride: p.stride,
                level: 0,
                row: 0,
                col: 0,
            })
            .collect();
        let predictions: Vec<Prediction> = ps
            .iter()
            .map(|p| Prediction {
                anchor_id: p.anchor_id,
                cls_scores: p.cls_scores.clone(),
                ctr_score: p.ctr_score,
                bbox: p.bbox,
            })
            .collect();
        let instances: Vec<Instance> = gs.iter().map(|g| Instance::new(g.bbox, g.category)).collect();
        let result = assign(method, &anchors, &predictions, &instances, &cfg, opts.temperature)
            .map_err(|e| CliError::config(format!("image {image_id}: {e}")))?;
        let id = |i: usize| result.anchor_ids[i];
        let dumps = result
            .instances
            .iter()
            .enumerate()
            .map(|(j, a)| InstanceDump {
                instance: j,
                category_id: instances[j].category,
                bbox: instances[j].bbox,
                certain: a.certain.map(id),
                fallback: a.fallback,
                positives: a.positives.iter().map(|&i| id(i)).collect(),
                ambiguous: a.ambiguous.iter().map(|s| SoftAnchor { anchor: id(s.anchor), t: s.t }).collect(),
            })
            .collect();
        let negatives = result
            .roles
            .iter()
            .enumerate()
            .filter(|(_, r)| matches!(r, AnchorRole::Negative))
            .map(|(i, _)| id(i))
            .collect();
        images.push(ImageAssignment {
            image_id,
            instances: dumps,
            negatives,
        });
    }
    Ok(AssignDump {
        method,
        temperature: opts.temperature,
        images,
    })
}

pub fn assign_files(predictions: &Path, gt: &Path, opts: &AssignOptions, out: Option<&Path>) -> Result<AssignDump, CliError> {
    let preds: Vec<PredictionRecord> = io::read_json(predictions)?;
    let dump = assign_records(&preds, &io::read_ground_truth(gt)?, opts)?;
    if let Some(dir) = out {
        io::create_dir(dir)?;
        io::write_json(&dir.join(io::ASSIGN_JSON), &dump)?;
    }
    Ok(dump)
}

pub fn gradcheck(seed: u64, trials: usize, corrupt: f64, out: Option<&Path>) -> Result<SuiteReport, CliError> {
    let report = run_suite(&SuiteOptions {
        seed,
        trials,
        corrupt,
        ..SuiteOptions::default()
    })
    .map_err(|e| CliError::config(e.to_string()))?;
    if let Some(dir) = out {
        io::create_dir(dir)?;
        io::write_json(&dir.join(io::GRADCHECK_JSON), &report)?;
    }
    Ok(report)
}

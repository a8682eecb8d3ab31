//! Detection evaluation: greedy detection/ground-truth matching, 101-point
//! interpolated AP, COCO-style AP/AR over IoU thresholds, and the
//! log-average miss rate over false positives per image.
//!
//! All reductions run in a fixed order (categories, then images, ascending),
//! so results do not depend on how callers schedule the work.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::geometry::{iou, BBox};
use crate::math::{exp, ln};
use crate::postprocess::{detection_order, filter_detections, Detection};

/// Lower clamp applied to miss rates before taking logs.
pub const MISS_RATE_FLOOR: f64 = 1e-4;

/// IoU threshold used by the miss-rate protocol.
pub const MMR_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(rename = "image_id")]
    pub image: u64,
    #[serde(rename = "category_id")]
    pub category: usize,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

/// Per-detection and per-ground-truth outcome of [`match_detections`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    pub det_tp: Vec<bool>,
    /// Index of the detection matched to each ground truth.
    pub gt_matched: Vec<Option<usize>>,
}

/// Greedy matching for one image and category. `dets` must be sorted by
/// descending score; each takes the unmatched ground truth with the highest
/// IoU, provided it reaches `iou_threshold`.
pub fn match_detections(dets: &[BBox], gts: &[BBox], iou_threshold: f64) -> MatchResult {
    let mut gt_matched = vec![None; gts.len()];
    let mut det_tp = vec![false; dets.len()];
    for (d, det) in dets.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt_matched[g].is_some() {
                continue;
            }
            let v = iou(det, gt);
            if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            gt_matched[g] = Some(d);
            det_tp[d] = true;
        }
    }
    MatchResult { det_tp, gt_matched }
}

/// Recall sample points `0, 0.01, ..., 1`.
fn recall_points() -> impl Iterator<Item = f64> {
    (0..=100).map(|i| i as f64 / 100.0)
}

/// Area under the interpolated precision/recall curve sampled at 101 recall
/// points. `tp` lists detections in descending score order.
///
/// Returns `None` when there is nothing to evaluate (no ground truth and no
/// detections) and `Some(0.0)` for detections without ground truth.
pub fn average_precision(tp: &[bool], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return if tp.is_empty() { None } else { Some(0.0) };
    }
    let mut precision = Vec::with_capacity(tp.len());
    let mut recall = Vec::with_capacity(tp.len());
    let (mut n_tp, mut n_fp) = (0usize, 0usize);
    for &is_tp in tp {
        if is_tp {
            n_tp += 1;
        } else {
            n_fp += 1;
        }
        precision.push(n_tp as f64 / (n_tp + n_fp) as f64);
        recall.push(n_tp as f64 / n_gt as f64);
    }
    // precision envelope, non-increasing in recall
    for i in (0..precision.len().saturating_sub(1)).rev() {
        if precision[i + 1] > precision[i] {
            precision[i] = precision[i + 1];
        }
    }
    let mut sum = 0.0;
    let mut idx = 0;
    for r in recall_points() {
        while idx < recall.len() && recall[idx] < r {
            idx += 1;
        }
        if idx < recall.len() {
            sum += precision[idx];
        }
    }
    Some(sum / 101.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    /// Detections kept per image, best first.
    pub max_dets: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: coco_iou_thresholds(),
            max_dets: 100,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iou_thresholds.is_empty() {
            return Err(config_err("at least one IoU threshold is required"));
        }
        if self.iou_thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return Err(config_err("IoU thresholds must lie in (0, 1]"));
        }
        if self.max_dets == 0 {
            return Err(config_err("max_dets must be at least 1"));
        }
        Ok(())
    }
}

/// `0.50, 0.55, ..., 0.95`.
pub fn coco_iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// Nine log-spaced points in `[1e-2, 1]`.
pub fn default_fppi_points() -> Vec<f64> {
    (0..9).map(|i| libm::pow(10.0, -2.0 + 0.25 * i as f64)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdAp {
    pub iou: f64,
    pub ap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub ap_per_iou: Vec<ThresholdAp>,
    pub mean_ap: f64,
    pub average_recall: f64,
    /// Recall at IoU 0.5 over all retained detections.
    pub recall_50: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mmr: Option<f64>,
    pub counts: Vec<Counts>,
}

/// Detections and ground truth of one (category, image) cell.
#[derive(Default)]
struct Cell {
    dets: Vec<Detection>,
    gts: Vec<BBox>,
}

/// Groups by category, then image, both ascending. Detections are sorted best
/// first within each cell.
fn group(dets: &[Detection], gts: &[GroundTruth]) -> BTreeMap<usize, BTreeMap<u64, Cell>> {
    let mut cells: BTreeMap<usize, BTreeMap<u64, Cell>> = BTreeMap::new();
    for g in gts {
        cells.entry(g.category).or_default().entry(g.image).or_default().gts.push(g.bbox);
    }
    for d in dets {
        cells.entry(d.category).or_default().entry(d.image).or_default().dets.push(*d);
    }
    for per_img in cells.values_mut() {
        for c in per_img.values_mut() {
            c.dets.sort_by(detection_order);
        }
    }
    cells
}

/// Matched detections of one category at one threshold, pooled over images.
struct Pooled {
    /// `(detection, is_tp)`.
    scored: Vec<(Detection, bool)>,
    n_gt: usize,
    n_tp: usize,
}

fn pool(per_img: &BTreeMap<u64, Cell>, iou_threshold: f64) -> Pooled {
    let mut scored = Vec::new();
    let (mut n_gt, mut n_tp) = (0, 0);
    for cell in per_img.values() {
        let boxes: Vec<BBox> = cell.dets.iter().map(|d| d.bbox).collect();
        let m = match_detections(&boxes, &cell.gts, iou_threshold);
        n_gt += cell.gts.len();
        n_tp += m.det_tp.iter().filter(|t| **t).count();
        scored.extend(cell.dets.iter().copied().zip(m.det_tp));
    }
    scored.sort_by(|a, b| detection_order(&a.0, &b.0));
    Pooled { scored, n_gt, n_tp }
}

/// COCO-style evaluation: AP per IoU threshold (averaged over categories),
/// their mean, and average recall.
pub fn coco_map(dets: &[Detection], gts: &[GroundTruth], cfg: &EvalConfig) -> Result<EvalResult> {
    cfg.validate()?;
    let capped = filter_detections(dets, f64::NEG_INFINITY, cfg.max_dets);
    let cells = group(&capped, gts);

    let mut ap_per_iou = Vec::with_capacity(cfg.iou_thresholds.len());
    let mut recalls = Vec::with_capacity(cfg.iou_thresholds.len());
    let mut counts = Vec::with_capacity(cfg.iou_thresholds.len());
    for &thr in &cfg.iou_thresholds {
        let (mut ap_sum, mut ap_n) = (0.0, 0usize);
        let (mut rec_sum, mut rec_n) = (0.0, 0usize);
        let mut cnt = Counts { tp: 0, fp: 0, fn_: 0 };
        for per_img in cells.values() {
            let p = pool(per_img, thr);
            let flags: Vec<bool> = p.scored.iter().map(|(_, tp)| *tp).collect();
            if let Some(ap) = average_precision(&flags, p.n_gt) {
                ap_sum += ap;
                ap_n += 1;
            }
            if p.n_gt > 0 {
                rec_sum += p.n_tp as f64 / p.n_gt as f64;
                rec_n += 1;
            }
            cnt.tp += p.n_tp;
            cnt.fp += flags.len() - p.n_tp;
            cnt.fn_ += p.n_gt - p.n_tp;
        }
        ap_per_iou.push(ThresholdAp {
            iou: thr,
            ap: if ap_n > 0 { ap_sum / ap_n as f64 } else { 0.0 },
        });
        recalls.push(if rec_n > 0 { rec_sum / rec_n as f64 } else { 0.0 });
        counts.push(cnt);
    }
    let n = ap_per_iou.len() as f64;
    let mean_ap = ap_per_iou.iter().map(|a| a.ap).sum::<f64>() / n;
    let average_recall = recalls.iter().sum::<f64>() / n;

    let (mut tp50, mut gt50) = (0usize, 0usize);
    for per_img in cells.values() {
        let p = pool(per_img, 0.5);
        tp50 += p.n_tp;
        gt50 += p.n_gt;
    }
    Ok(EvalResult {
        ap_per_iou,
        mean_ap,
        average_recall,
        recall_50: if gt50 > 0 { tp50 as f64 / gt50 as f64 } else { 0.0 },
        mmr: None,
        counts,
    })
}

/// Log-average miss rate over false positives per image.
///
/// Detections are matched class-aware at IoU 0.5 and swept from the highest
/// score down, cutting only between distinct scores. At each reference
/// point the miss rate of the lowest cut whose FPPI does not exceed it is
/// taken; the result is the geometric mean of those miss rates, each clamped
/// below at [`MISS_RATE_FLOOR`]. Images are those appearing in either input.
pub fn mmr(dets: &[Detection], gts: &[GroundTruth], fppi_points: &[f64]) -> Result<f64> {
    if gts.is_empty() {
        return Err(config_err("miss rate needs at least one ground truth"));
    }
    if fppi_points.is_empty() {
        return Err(config_err("miss rate needs at least one FPPI point"));
    }
    let mut images: Vec<u64> = gts.iter().map(|g| g.image).chain(dets.iter().map(|d| d.image)).collect();
    images.sort_unstable();
    images.dedup();
    let n_images = images.len() as f64;
    let n_gt = gts.len() as f64;

    let cells = group(dets, gts);
    let mut scored: Vec<(Detection, bool)> = Vec::new();
    for per_img in cells.values() {
        scored.extend(pool(per_img, MMR_IOU).scored);
    }
    scored.sort_by(|a, b| detection_order(&a.0, &b.0));

    // (fppi, miss rate) at every cut, starting from the empty cut
    let mut curve = vec![(0.0, 1.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (k, (d, is_tp)) in scored.iter().enumerate() {
        if *is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_score = scored.get(k + 1).is_none_or(|next| next.0.score != d.score);
        if last_of_score {
            curve.push((fp as f64 / n_images, 1.0 - tp as f64 / n_gt));
        }
    }

    let mut log_sum = 0.0;
    for &point in fppi_points {
        let miss = curve
            .iter()
            .filter(|(f, _)| *f <= point)
            .map(|(_, m)| *m)
            .fold(1.0, f64::min);
        log_sum += ln(miss.max(MISS_RATE_FLOOR));
    }
    Ok(exp(log_sum / fppi_points.len() as f64))
}

//! Training loop: forward, assign, loss, backward, step; per-epoch evaluation.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anchor::{build_anchor_grid, AnchorGrid};
use crate::assignment::assign;
use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::head::{box_param_grad, decode, Prediction};
use crate::loss::objective;
use crate::metrics::{coco_map, default_fppi_points, mmr, EvalConfig, GroundTruth};
use crate::postprocess::{filter_detections, nms, Detection};
use crate::schedule::epoch_temperature;
use crate::sim::config::ExperimentConfig;
use crate::sim::exec::{Clock, Executor};
use crate::sim::model::{Model, ModelKind, RawGrad};
use crate::sim::optim::{epoch_lr, Sgd};
use crate::sim::scene::{generate_scene, Scene};

/// Offset between training and held-out scene seeds.
pub const EVAL_SEED_OFFSET: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub temperature: f64,
    pub loss_total: f64,
    pub loss_cls: f64,
    pub loss_reg: f64,
    pub ap_nms: f64,
    pub ap_nonms: f64,
    pub dup_per_gt: f64,
    pub mmr_nms: Option<f64>,
    pub mmr_nonms: Option<f64>,
    /// Instances that fell back to their nearest free anchor.
    pub fallbacks: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub num_params: usize,
    pub config: ExperimentConfig,
    pub epochs: Vec<EpochRecord>,
    pub truncated: bool,
    pub diagnostic: Option<String>,
}

impl RunRecord {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Invalid(#[from] Error),
    /// Training produced non-finite values; the record holds every completed
    /// epoch.
    #[error("training diverged: {}", .0.diagnostic.as_deref().unwrap_or("non-finite values"))]
    Diverged(Box<RunRecord>),
}

/// Evaluation summary for one model snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub ap_nms: f64,
    pub ap_nonms: f64,
    pub dup_per_gt: f64,
    pub mmr_nms: Option<f64>,
    pub mmr_nonms: Option<f64>,
}

/// Mean number of detections scoring above `score_threshold` whose best
/// matching ground truth (same image and category, IoU >= `iou_threshold`)
/// is each ground truth, over ground truths with at least one such detection.
pub fn duplicates_per_gt(dets: &[Detection], gts: &[GroundTruth], score_threshold: f64, iou_threshold: f64) -> f64 {
    let mut counts = vec![0usize; gts.len()];
    for d in dets.iter().filter(|d| d.score > score_threshold) {
        let mut best: Option<(f64, usize)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt.image != d.image || gt.category != d.category {
                continue;
            }
            let v = iou(&d.bbox, &gt.bbox);
            if v >= iou_threshold && best.is_none_or(|(b, _)| v > b) {
                best = Some((v, g));
            }
        }
        if let Some((_, g)) = best {
            counts[g] += 1;
        }
    }
    let matched: Vec<usize> = counts.into_iter().filter(|&c| c > 0).collect();
    if matched.is_empty() {
        0.0
    } else {
        matched.iter().sum::<usize>() as f64 / matched.len() as f64
    }
}

/// Every (anchor, category) pair as a detection scored by its joint score.
pub fn predictions_to_detections(preds: &[Prediction], image: u64) -> Vec<Detection> {
    let mut out = Vec::new();
    for p in preds {
        for c in 0..p.n_categories() {
            out.push(Detection {
                image,
                category: c,
                bbox: p.bbox,
                score: p.joint(c),
                anchor_id: p.anchor_id,
            });
        }
    }
    out
}

pub fn scene_ground_truth(scene: &Scene, image: u64) -> Vec<GroundTruth> {
    scene
        .instances
        .iter()
        .map(|i| GroundTruth {
            image,
            category: i.category,
            bbox: i.bbox,
        })
        .collect()
}

/// Scores `model` on `scenes`; scene `k` is image `k` and uses slot `k`.
pub fn evaluate<E: Executor>(
    model: &Model,
    grid: &AnchorGrid,
    scenes: &[Scene],
    cfg: &ExperimentConfig,
    exec: &E,
) -> Result<Snapshot> {
    let e = &cfg.eval;
    let per_scene = exec.map(scenes.len(), |k| -> Result<Vec<Detection>> {
        let preds = model.forward(grid, &scenes[k], k)?;
        Ok(filter_detections(
            &predictions_to_detections(&preds, k as u64),
            e.score_threshold,
            e.max_dets,
        ))
    });
    let mut dets = Vec::new();
    for r in per_scene {
        dets.extend(r?);
    }
    let gts: Vec<GroundTruth> = scenes
        .iter()
        .enumerate()
        .flat_map(|(k, s)| scene_ground_truth(s, k as u64))
        .collect();
    let eval_cfg = EvalConfig {
        max_dets: e.max_dets,
        ..EvalConfig::default()
    };
    let kept = nms(&dets, e.nms_threshold);
    let ap_nonms = coco_map(&dets, &gts, &eval_cfg)?.mean_ap;
    let ap_nms = coco_map(&kept, &gts, &eval_cfg)?.mean_ap;
    let dup_per_gt = duplicates_per_gt(&dets, &gts, e.dup_threshold, e.dup_iou);
    let (mmr_nms, mmr_nonms) = if e.mmr && !gts.is_empty() {
        let pts = default_fppi_points();
        (Some(mmr(&kept, &gts, &pts)?), Some(mmr(&dets, &gts, &pts)?))
    } else {
        (None, None)
    };
    Ok(Snapshot {
        ap_nms,
        ap_nonms,
        dup_per_gt,
        mmr_nms,
        mmr_nonms,
    })
}

struct StepOut {
    total: f64,
    cls: f64,
    reg: f64,
    fallbacks: usize,
    grad: Vec<f64>,
}

fn scene_step(
    model: &Model,
    grid: &AnchorGrid,
    scene: &Scene,
    slot: usize,
    cfg: &ExperimentConfig,
    temperature: f64,
) -> Result<StepOut> {
    let (raws, cache) = model.forward_raw(grid, scene, slot)?;
    let preds: Vec<Prediction> = grid
        .anchors
        .iter()
        .zip(&raws)
        .map(|(a, r)| decode(a, r))
        .collect::<Result<_>>()?;
    let assignment = assign(
        cfg.assign.method(),
        &grid.anchors,
        &preds,
        &scene.instances,
        &cfg.assign.config(),
        temperature,
    )?;
    let loss = objective(&assignment, &preds, &scene.instances, &cfg.loss)?;
    let d_raw: Vec<RawGrad> = grid
        .anchors
        .iter()
        .zip(&raws)
        .zip(&loss.grads)
        .map(|((a, r), g)| RawGrad {
            cls: g.cls.clone(),
            ctr: g.ctr,
            box_params: box_param_grad(a, r, &g.bbox),
        })
        .collect();
    let grad = model.backward(&cache, &d_raw)?;
    Ok(StepOut {
        total: loss.total,
        cls: loss.cls(),
        reg: loss.reg,
        fallbacks: assignment.fallbacks(),
        grad,
    })
}

/// Training and held-out scenes for `cfg`.
pub fn build_scenes(cfg: &ExperimentConfig) -> Result<(Vec<Scene>, Vec<Scene>)> {
    let train = (0..cfg.train.n_scenes as u64)
        .map(|i| generate_scene(&cfg.scene, cfg.seed.wrapping_add(i)))
        .collect::<Result<Vec<_>>>()?;
    let held_out = match cfg.model.kind {
        ModelKind::Tabular => Vec::new(),
        ModelKind::Mlp => (0..cfg.eval.n_scenes as u64)
            .map(|i| generate_scene(&cfg.scene, cfg.seed.wrapping_add(EVAL_SEED_OFFSET + i)))
            .collect::<Result<Vec<_>>>()?,
    };
    Ok((train, held_out))
}

/// Runs the full experiment described by `cfg`.
pub fn train_run<E: Executor, C: Clock>(cfg: &ExperimentConfig, exec: &E, clock: &C) -> Result<RunRecord, TrainError> {
    cfg.validate()?;
    let cfg = cfg.resolved();
    let grid = build_anchor_grid(cfg.scene.width, cfg.scene.height, &cfg.grid.strides)?;
    let (train_scenes, held_out) = build_scenes(&cfg)?;
    let eval_scenes: &[Scene] = match cfg.model.kind {
        ModelKind::Tabular => &train_scenes,
        ModelKind::Mlp => &held_out,
    };
    let mut model = Model::new(
        &cfg.model,
        &grid,
        cfg.scene.n_categories,
        train_scenes.len(),
        cfg.seed ^ 0x6d6f_6465_6c00,
    )?;
    let mut opt = Sgd::new(
        cfg.learning_rate(),
        cfg.optimizer.momentum,
        cfg.optimizer.grad_clip,
        model.num_params(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7368_7566_666c);
    let mut record = RunRecord {
        seed: cfg.seed,
        num_params: model.num_params(),
        config: cfg.clone(),
        epochs: Vec::with_capacity(cfg.schedule.n_epochs),
        truncated: false,
        diagnostic: None,
    };
    let diverge = |mut record: RunRecord, epoch: usize, err: Error| -> TrainError {
        record.truncated = true;
        record.diagnostic = Some(format!("epoch {epoch}: {err}"));
        TrainError::Diverged(Box::new(record))
    };

    for epoch in 0..cfg.schedule.n_epochs {
        let started = clock.now();
        let temperature = epoch_temperature(&cfg.schedule, epoch)?;
        opt.lr = epoch_lr(cfg.learning_rate(), cfg.optimizer.decay, epoch, cfg.schedule.n_epochs);
        let (mut total, mut cls, mut reg) = (0.0, 0.0, 0.0);
        let mut fallbacks = 0usize;
        let mut steps = 0usize;
        let mut order: Vec<usize> = (0..train_scenes.len()).collect();
        for _ in 0..cfg.train.passes {
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.train.batch_size) {
                let outs = exec.map(batch.len(), |b| {
                    let slot = batch[b];
                    scene_step(&model, &grid, &train_scenes[slot], slot, &cfg, temperature)
                });
                let mut grad = vec![0.0; model.num_params()];
                for out in outs {
                    let out = match out {
                        Ok(o) => o,
                        Err(e @ Error::NonFinite(_)) => return Err(diverge(record, epoch, e)),
                        Err(e) => return Err(e.into()),
                    };
                    total += out.total;
                    cls += out.cls;
                    reg += out.reg;
                    fallbacks += out.fallbacks;
                    steps += 1;
                    for (g, v) in grad.iter_mut().zip(&out.grad) {
                        *g += v;
                    }
                }
                let scale = 1.0 / batch.len() as f64;
                grad.iter_mut().for_each(|g| *g *= scale);
                if let Err(e) = opt.step(model.params_mut(), &grad) {
                    return Err(diverge(record, epoch, e));
                }
            }
        }
        let n = steps as f64;
        let snap = match evaluate(&model, &grid, eval_scenes, &cfg, exec) {
            Ok(s) => s,
            Err(e @ Error::NonFinite(_)) => return Err(diverge(record, epoch, e)),
            Err(e) => return Err(e.into()),
        };
        let rec = EpochRecord {
            epoch,
            temperature,
            loss_total: total / n,
            loss_cls: cls / n,
            loss_reg: reg / n,
            ap_nms: snap.ap_nms,
            ap_nonms: snap.ap_nonms,
            dup_per_gt: snap.dup_per_gt,
            mmr_nms: snap.mmr_nms,
            mmr_nonms: snap.mmr_nonms,
            fallbacks,
            seconds: clock.now() - started,
        };
        log::debug!(
            "epoch {epoch} T={temperature:.3} loss={:.4} ap_nms={:.4} ap_nonms={:.4} dup={:.3}",
            rec.loss_total,
            rec.ap_nms,
            rec.ap_nonms,
            rec.dup_per_gt
        );
        record.epochs.push(rec);
    }
    Ok(record)
}

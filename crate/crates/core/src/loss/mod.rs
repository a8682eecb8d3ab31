//! Classification and regression losses with analytic gradients.
//!
//! Classification is supervised on the joint score `p = sigmoid(cls) *
//! sigmoid(ctr)`: full BCE on certain (and one-to-many) positives, soft BCE
//! on ambiguous anchors, and focal loss towards zero everywhere else. Boxes
//! of every non-negative anchor regress to their owner with the GIoU loss.

pub mod gradcheck;

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::assignment::{AnchorRole, AssignmentResult, Instance};
use crate::error::{config_err, Error, Result};
use crate::geometry::giou_loss_grad;
use crate::head::Prediction;
use crate::math::{ln, powf};

pub const DEFAULT_EPS: f64 = 1e-7;

/// Anchors with a positive degree above this count towards the normalizer.
pub const POSITIVE_MASS_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub reg_weight: f64,
    pub eps: f64,
    /// Divide classification by `1 + #positives` and average regression.
    pub normalize: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            reg_weight: 1.0,
            eps: DEFAULT_EPS,
            normalize: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.focal_gamma >= 0.0 && self.focal_gamma.is_finite()) {
            return Err(config_err("focal_gamma must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.focal_alpha) {
            return Err(config_err("focal_alpha must lie in [0, 1]"));
        }
        if !(self.reg_weight > 0.0 && self.reg_weight.is_finite()) {
            return Err(config_err("reg_weight must be positive"));
        }
        if !(self.eps > 0.0 && self.eps <= 1e-3) {
            return Err(config_err("eps must lie in (0, 1e-3]"));
        }
        Ok(())
    }
}

/// Clamps `p` into `[eps, 1 - eps]`; the flag is false when clamping kicked in.
#[inline]
fn clamp_prob(p: f64, eps: f64) -> (f64, bool) {
    if p < eps {
        (eps, false)
    } else if p > 1.0 - eps {
        (1.0 - eps, false)
    } else {
        (p, true)
    }
}

/// `-t ln p - (1 - t) ln(1 - p)` with `p` clamped to `[eps, 1 - eps]`.
pub fn soft_bce(p: f64, t: f64) -> f64 {
    soft_bce_grad(p, t, DEFAULT_EPS).0
}

/// Soft BCE and its derivative w.r.t. `p` (zero where the clamp is active).
pub fn soft_bce_grad(p: f64, t: f64, eps: f64) -> (f64, f64) {
    let (q, live) = clamp_prob(p, eps);
    let value = -t * ln(q) - (1.0 - t) * ln(1.0 - q);
    let d = if live { -t / q + (1.0 - t) / (1.0 - q) } else { 0.0 };
    (value, d)
}

/// Focal loss for a zero target: `(1 - alpha) p^gamma (-ln(1 - p))`.
pub fn focal_negative(p: f64, gamma: f64, alpha: f64) -> f64 {
    focal_negative_grad(p, gamma, alpha, DEFAULT_EPS).0
}

pub fn focal_negative_grad(p: f64, gamma: f64, alpha: f64, eps: f64) -> (f64, f64) {
    let (q, live) = clamp_prob(p, eps);
    let w = 1.0 - alpha;
    let nll = -ln(1.0 - q);
    let value = w * powf(q, gamma) * nll;
    let d = if !live {
        0.0
    } else if gamma == 0.0 {
        w / (1.0 - q)
    } else {
        w * (gamma * powf(q, gamma - 1.0) * nll + powf(q, gamma) / (1.0 - q))
    };
    (value, d)
}

/// Gradient of the objective for one anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorGrad {
    /// d/d classification logit, per category.
    pub cls: Vec<f64>,
    /// d/d centerness logit.
    pub ctr: f64,
    /// d/d predicted corners `(x1, y1, x2, y2)`.
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

impl AnchorGrad {
    pub fn zeros(n_categories: usize) -> Self {
        Self {
            cls: vec![0.0; n_categories],
            ctr: 0.0,
            bbox: [0.0; 4],
        }
    }
}

/// Raw (unnormalized) classification terms and their gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ClsLoss {
    pub certain: f64,
    pub ambiguous: f64,
    pub negative: f64,
    /// Anchors whose target exceeds [`POSITIVE_MASS_FLOOR`].
    pub num_positive: usize,
    pub grads: Vec<AnchorGrad>,
}

impl ClsLoss {
    pub fn total(&self) -> f64 {
        self.certain + self.ambiguous + self.negative
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegLoss {
    pub total: f64,
    pub num_anchors: usize,
    /// d/d corners per anchor (zero for negatives).
    pub grads: Vec<[f64; 4]>,
}

/// Loss terms after normalization, plus the gradient table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls_certain: f64,
    pub cls_ambiguous: f64,
    pub cls_negative: f64,
    pub reg: f64,
    pub total: f64,
    pub grads: Vec<AnchorGrad>,
}

impl LossBreakdown {
    pub fn cls(&self) -> f64 {
        self.cls_certain + self.cls_ambiguous + self.cls_negative
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
            && self
                .grads
                .iter()
                .all(|g| g.ctr.is_finite() && g.cls.iter().all(|v| v.is_finite()) && g.bbox.iter().all(|v| v.is_finite()))
    }
}

fn owner_category(role: &AnchorRole, instances: &[Instance], anchor: usize) -> Result<Option<usize>> {
    match role.owner() {
        None => Ok(None),
        Some(j) => instances
            .get(j)
            .map(|inst| Some(inst.category))
            .ok_or(Error::MissingOwner { anchor }),
    }
}

/// Classification objective summed over anchors and categories.
///
/// The owner's category of a certain/positive anchor gets `BCE(p, 1)`, an
/// ambiguous anchor gets `BCE(p, t)`, and every other (anchor, category)
/// pair gets the focal negative term.
pub fn cls_loss(
    assignment: &AssignmentResult,
    preds: &[Prediction],
    instances: &[Instance],
    cfg: &LossConfig,
) -> Result<ClsLoss> {
    if assignment.num_anchors() != preds.len() {
        return Err(Error::AnchorMismatch {
            expected: assignment.num_anchors(),
            got: preds.len(),
        });
    }
    let mut out = ClsLoss {
        certain: 0.0,
        ambiguous: 0.0,
        negative: 0.0,
        num_positive: 0,
        grads: Vec::with_capacity(preds.len()),
    };
    for (i, (pred, role)) in preds.iter().zip(&assignment.roles).enumerate() {
        let owner_cat = owner_category(role, instances, i)?;
        if role.target() > POSITIVE_MASS_FLOOR {
            out.num_positive += 1;
        }
        let ctr = pred.ctr_score;
        let mut g = AnchorGrad::zeros(pred.n_categories());
        for (c, &cls) in pred.cls_scores.iter().enumerate() {
            let p = cls * ctr;
            let d_p = if Some(c) == owner_cat {
                let (v, d) = soft_bce_grad(p, role.target(), cfg.eps);
                match role {
                    AnchorRole::Ambiguous { .. } => out.ambiguous += v,
                    _ => out.certain += v,
                }
                d
            } else {
                let (v, d) = focal_negative_grad(p, cfg.focal_gamma, cfg.focal_alpha, cfg.eps);
                out.negative += v;
                d
            };
            // dp/dz_cls = p (1 - cls), dp/dz_ctr = p (1 - ctr)
            g.cls[c] = d_p * p * (1.0 - cls);
            g.ctr += d_p * p * (1.0 - ctr);
        }
        out.grads.push(g);
    }
    Ok(out)
}

/// GIoU regression over every non-negative anchor against its owner.
pub fn reg_loss(assignment: &AssignmentResult, preds: &[Prediction], instances: &[Instance]) -> Result<RegLoss> {
    if assignment.num_anchors() != preds.len() {
        return Err(Error::AnchorMismatch {
            expected: assignment.num_anchors(),
            got: preds.len(),
        });
    }
    let mut total = 0.0;
    let mut num_anchors = 0;
    let mut grads = vec![[0.0; 4]; preds.len()];
    for (i, j) in assignment.non_negative() {
        let gt = instances.get(j).ok_or(Error::MissingOwner { anchor: i })?;
        let (l, g) = giou_loss_grad(&preds[i].bbox, &gt.bbox)?;
        total += l;
        num_anchors += 1;
        grads[i] = g;
    }
    Ok(RegLoss {
        total,
        num_anchors,
        grads,
    })
}

/// Full training objective for one image: normalized classification plus
/// weighted regression, with gradients w.r.t. logits and corners.
pub fn objective(
    assignment: &AssignmentResult,
    preds: &[Prediction],
    instances: &[Instance],
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    let cls = cls_loss(assignment, preds, instances, cfg)?;
    let reg = reg_loss(assignment, preds, instances)?;
    let (cls_scale, reg_scale) = if cfg.normalize {
        (1.0 / (1.0 + cls.num_positive as f64), 1.0 / (reg.num_anchors.max(1) as f64))
    } else {
        (1.0, 1.0)
    };
    let reg_value = reg.total * reg_scale;
    let mut grads = cls.grads;
    for (g, rg) in grads.iter_mut().zip(&reg.grads) {
        for v in g.cls.iter_mut() {
            *v *= cls_scale;
        }
        g.ctr *= cls_scale;
        g.bbox = rg.map(|v| cfg.reg_weight * reg_scale * v);
    }
    let cls_certain = cls.certain * cls_scale;
    let cls_ambiguous = cls.ambiguous * cls_scale;
    let cls_negative = cls.negative * cls_scale;
    let out = LossBreakdown {
        cls_certain,
        cls_ambiguous,
        cls_negative,
        reg: reg_value,
        total: cls_certain + cls_ambiguous + cls_negative + cfg.reg_weight * reg_value,
        grads,
    };
    if !out.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    Ok(out)
}

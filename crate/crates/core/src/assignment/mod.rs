//! Label assignment: maps predictions and ground truth to per-anchor
//! supervision.
//!
//! Every strategy ranks anchors against an instance with the gated matching
//! score `S = 1[inside] * p^(1-alpha) * iou^alpha` (or the additive variant).
//! One-to-few keeps the top anchor as the certain positive and the next `K`
//! as ambiguous anchors with soft positive degrees; the baselines keep only
//! the top anchor (one-to-one), the top `k` as full positives (one-to-many),
//! or solve a bipartite matching.
//!
//! Anchors are claimed greedily in descending global score order, so an
//! anchor belongs to at most one instance. Equal scores go to the lower
//! anchor id, then the lower instance index.

pub mod hungarian;

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::anchor::Anchor;
use crate::error::{config_err, Error, Result};
use crate::geometry::{in_center_region, iou, BBox, CenterRegion};
use crate::head::Prediction;
use crate::math::powf;
use crate::schedule::soft_positive_degree;

/// A ground-truth object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub category: usize,
}

impl Instance {
    pub fn new(bbox: BBox, category: usize) -> Self {
        Self { bbox, category }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Combine {
    #[default]
    Multiply,
    Add,
}

/// Which score plays the role of `p` in the matching score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreSource {
    #[default]
    Joint,
    Cls,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssignConfig {
    pub alpha: f64,
    pub combine: Combine,
    pub radius_factor: f64,
    pub score_source: ScoreSource,
}

impl Default for AssignConfig {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            combine: Combine::Multiply,
            radius_factor: CenterRegion::DEFAULT_RADIUS_FACTOR,
            score_source: ScoreSource::Joint,
        }
    }
}

impl AssignConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(config_err("alpha must lie in [0, 1]"));
        }
        if !(self.radius_factor > 0.0 && self.radius_factor.is_finite()) {
            return Err(config_err("radius_factor must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum AssignMethod {
    /// One certain positive plus up to `k` soft ambiguous anchors.
    O2f { k: usize },
    O2oTop1,
    O2oHungarian,
    /// Top `k` anchors all fully positive. `k = 2` is one-to-two.
    O2mTopK { k: usize },
}

impl AssignMethod {
    pub fn validate(&self) -> Result<()> {
        match self {
            AssignMethod::O2mTopK { k: 0 } => Err(config_err("o2m needs k >= 1")),
            _ => Ok(()),
        }
    }
}

/// Soft target for an ambiguous anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftAnchor {
    pub anchor: usize,
    pub t: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InstanceAssignment {
    pub certain: Option<usize>,
    /// Extra full positives (one-to-many only), in rank order.
    pub positives: Vec<usize>,
    /// Ambiguous anchors in rank order.
    pub ambiguous: Vec<SoftAnchor>,
    /// The certain anchor came from the nearest-anchor fallback.
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "role")]
pub enum AnchorRole {
    Negative,
    Certain { instance: usize },
    Positive { instance: usize },
    Ambiguous { instance: usize, t: f64 },
}

impl AnchorRole {
    pub fn owner(&self) -> Option<usize> {
        match *self {
            AnchorRole::Negative => None,
            AnchorRole::Certain { instance }
            | AnchorRole::Positive { instance }
            | AnchorRole::Ambiguous { instance, .. } => Some(instance),
        }
    }

    /// Classification target for the owner's category.
    pub fn target(&self) -> f64 {
        match *self {
            AnchorRole::Negative => 0.0,
            AnchorRole::Certain { .. } | AnchorRole::Positive { .. } => 1.0,
            AnchorRole::Ambiguous { t, .. } => t,
        }
    }
}

/// Result of assigning one image. Anchor indices refer to positions in the
/// prediction slice; `anchor_ids` maps them back to caller ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentResult {
    pub instances: Vec<InstanceAssignment>,
    pub roles: Vec<AnchorRole>,
    pub anchor_ids: Vec<usize>,
}

impl AssignmentResult {
    pub fn num_anchors(&self) -> usize {
        self.roles.len()
    }

    pub fn fallbacks(&self) -> usize {
        self.instances.iter().filter(|a| a.fallback).count()
    }

    /// Anchors that take part in regression (every non-negative role).
    pub fn non_negative(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.roles
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.owner().map(|o| (i, o)))
    }

    pub fn certain_anchors(&self) -> Vec<Option<usize>> {
        self.instances.iter().map(|a| a.certain).collect()
    }
}

/// Gated matching score between an anchor and an instance.
pub fn matching_score(p: f64, iou_val: f64, inside: bool, alpha: f64, combine: Combine) -> f64 {
    if !inside {
        return 0.0;
    }
    match combine {
        Combine::Multiply => powf(p, 1.0 - alpha) * powf(iou_val, alpha),
        Combine::Add => (1.0 - alpha) * p + alpha * iou_val,
    }
}

/// Scores of every (instance, anchor) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingMatrix {
    /// `scores[j][i]`: matching score of anchor `i` for instance `j`.
    pub scores: Vec<Vec<f64>>,
    /// `inside[j][i]`: anchor `i` lies in the center region of instance `j`.
    pub inside: Vec<Vec<bool>>,
    /// `joint[j][i]`: joint score of anchor `i` for instance `j`'s category.
    pub joint: Vec<Vec<f64>>,
    pub anchor_ids: Vec<usize>,
    /// Anchor points, used by the nearest-anchor fallback.
    pub points: Vec<(f64, f64)>,
    /// Instance centers.
    pub centers: Vec<(f64, f64)>,
}

impl MatchingMatrix {
    pub fn build(
        anchors: &[Anchor],
        preds: &[Prediction],
        instances: &[Instance],
        cfg: &AssignConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if preds.is_empty() {
            return Err(Error::EmptyPredictions);
        }
        if anchors.len() != preds.len() {
            return Err(Error::AnchorMismatch {
                expected: anchors.len(),
                got: preds.len(),
            });
        }
        let mut scores = Vec::with_capacity(instances.len());
        let mut inside = Vec::with_capacity(instances.len());
        let mut joint = Vec::with_capacity(instances.len());
        for inst in instances {
            let region = CenterRegion::new(inst.bbox, cfg.radius_factor)?;
            let c = inst.category;
            let mut s_row = Vec::with_capacity(preds.len());
            let mut in_row = Vec::with_capacity(preds.len());
            let mut j_row = Vec::with_capacity(preds.len());
            for (a, p) in anchors.iter().zip(preds) {
                if c >= p.n_categories() {
                    return Err(config_err("instance category outside prediction range"));
                }
                let joint_p = p.joint(c);
                let score_p = match cfg.score_source {
                    ScoreSource::Joint => joint_p,
                    ScoreSource::Cls => p.cls_scores[c],
                };
                let is_in = in_center_region(a.point(), &region, a.stride);
                let s = matching_score(score_p, iou(&p.bbox, &inst.bbox), is_in, cfg.alpha, cfg.combine);
                if !s.is_finite() {
                    return Err(Error::NonFinite("matching score"));
                }
                s_row.push(s);
                in_row.push(is_in);
                j_row.push(joint_p);
            }
            scores.push(s_row);
            inside.push(in_row);
            joint.push(j_row);
        }
        Ok(Self {
            scores,
            inside,
            joint,
            anchor_ids: preds.iter().map(|p| p.anchor_id).collect(),
            points: anchors.iter().map(|a| a.point()).collect(),
            centers: instances.iter().map(|i| i.bbox.center()).collect(),
        })
    }

    pub fn num_instances(&self) -> usize {
        self.scores.len()
    }

    pub fn num_anchors(&self) -> usize {
        self.anchor_ids.len()
    }
}

/// Greedy claims: for every instance, up to `quota` anchors in rank order.
/// The flag marks instances whose single claim came from the fallback.
fn greedy_claims(m: &MatchingMatrix, quota: usize) -> Vec<(Vec<usize>, bool)> {
    let n_inst = m.num_instances();
    let n_anch = m.num_anchors();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for j in 0..n_inst {
        for i in 0..n_anch {
            if m.inside[j][i] {
                pairs.push((m.scores[j][i], j, i));
            }
        }
    }
    pairs.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| m.anchor_ids[a.2].cmp(&m.anchor_ids[b.2]))
            .then_with(|| a.1.cmp(&b.1))
    });

    let mut claimed = vec![false; n_anch];
    let mut claims: Vec<(Vec<usize>, bool)> = vec![(Vec::new(), false); n_inst];
    if quota > 0 {
        for &(_, j, i) in &pairs {
            if claimed[i] || claims[j].0.len() >= quota {
                continue;
            }
            claimed[i] = true;
            claims[j].0.push(i);
        }
    }

    // Instances left without any anchor take the nearest unclaimed one.
    for (j, claim) in claims.iter_mut().enumerate() {
        if quota == 0 || !claim.0.is_empty() {
            continue;
        }
        let (cx, cy) = m.centers[j];
        let nearest = (0..n_anch).filter(|&i| !claimed[i]).min_by(|&a, &b| {
            let da = dist2(m.points[a], (cx, cy));
            let db = dist2(m.points[b], (cx, cy));
            da.total_cmp(&db).then_with(|| m.anchor_ids[a].cmp(&m.anchor_ids[b]))
        });
        if let Some(i) = nearest {
            log::debug!("instance {j}: no candidate anchors, falling back to nearest anchor {}", m.anchor_ids[i]);
            claimed[i] = true;
            *claim = (alloc::vec![i], true);
        } else {
            log::warn!("instance {j}: every anchor is already claimed");
        }
    }
    claims
}

#[inline]
fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (a.0 - b.0, a.1 - b.1);
    dx * dx + dy * dy
}

/// Assigns from a precomputed matching matrix.
pub fn assign_from_matrix(m: &MatchingMatrix, method: AssignMethod, temperature: f64) -> Result<AssignmentResult> {
    method.validate()?;
    if m.num_anchors() == 0 {
        return Err(Error::EmptyPredictions);
    }
    let n_anch = m.num_anchors();
    let mut roles = vec![AnchorRole::Negative; n_anch];
    let mut instances = vec![InstanceAssignment::default(); m.num_instances()];

    match method {
        AssignMethod::O2oHungarian => {
            let matching = hungarian::max_weight_matching(&m.scores)?;
            for (j, &i) in matching.iter().enumerate() {
                instances[j].certain = Some(i);
                roles[i] = AnchorRole::Certain { instance: j };
            }
        }
        AssignMethod::O2oTop1 | AssignMethod::O2f { .. } | AssignMethod::O2mTopK { .. } => {
            let quota = match method {
                AssignMethod::O2f { k } => k + 1,
                AssignMethod::O2mTopK { k } => k,
                _ => 1,
            };
            let claims = greedy_claims(m, quota);
            for (j, (ranked, fallback)) in claims.into_iter().enumerate() {
                let Some((&first, rest)) = ranked.split_first() else {
                    continue;
                };
                let slot = &mut instances[j];
                slot.certain = Some(first);
                slot.fallback = fallback;
                roles[first] = AnchorRole::Certain { instance: j };
                match method {
                    AssignMethod::O2mTopK { .. } => {
                        for &i in rest {
                            slot.positives.push(i);
                            roles[i] = AnchorRole::Positive { instance: j };
                        }
                    }
                    AssignMethod::O2f { .. } if !rest.is_empty() => {
                        let p_max = ranked.iter().map(|&i| m.joint[j][i]).fold(0.0, f64::max);
                        for &i in rest {
                            let t = if p_max > 0.0 {
                                soft_positive_degree(m.joint[j][i], p_max, temperature)?
                            } else {
                                temperature
                            };
                            slot.ambiguous.push(SoftAnchor { anchor: i, t });
                            roles[i] = AnchorRole::Ambiguous { instance: j, t };
                        }
                    }
                    _ => {}
                }
            }
        }
    }
    Ok(AssignmentResult {
        instances,
        roles,
        anchor_ids: m.anchor_ids.clone(),
    })
}

/// Dispatches on `method`.
pub fn assign(
    method: AssignMethod,
    anchors: &[Anchor],
    preds: &[Prediction],
    instances: &[Instance],
    cfg: &AssignConfig,
    temperature: f64,
) -> Result<AssignmentResult> {
    let m = MatchingMatrix::build(anchors, preds, instances, cfg)?;
    assign_from_matrix(&m, method, temperature)
}

/// One certain anchor plus `k` ambiguous anchors per instance.
pub fn assign_o2f(
    anchors: &[Anchor],
    preds: &[Prediction],
    instances: &[Instance],
    k: usize,
    temperature: f64,
    cfg: &AssignConfig,
) -> Result<AssignmentResult> {
    assign(AssignMethod::O2f { k }, anchors, preds, instances, cfg, temperature)
}

pub fn assign_o2o_top1(
    anchors: &[Anchor],
    preds: &[Prediction],
    instances: &[Instance],
    cfg: &AssignConfig,
) -> Result<AssignmentResult> {
    assign(AssignMethod::O2oTop1, anchors, preds, instances, cfg, 0.0)
}

/// Maximum-total-score bipartite matching of instances to anchors.
pub fn assign_o2o_hungarian(
    anchors: &[Anchor],
    preds: &[Prediction],
    instances: &[Instance],
    cfg: &AssignConfig,
) -> Result<AssignmentResult> {
    assign(AssignMethod::O2oHungarian, anchors, preds, instances, cfg, 0.0)
}

pub fn assign_o2m_topk(
    anchors: &[Anchor],
    preds: &[Prediction],
    instances: &[Instance],
    k: usize,
    cfg: &AssignConfig,
) -> Result<AssignmentResult> {
    assign(AssignMethod::O2mTopK { k }, anchors, preds, instances, cfg, 0.0)
}

#[cfg(test)]
mod tests;

//! Central finite-difference checks of analytic gradients.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{cls_loss, focal_negative_grad, soft_bce_grad, LossConfig};
use crate::assignment::{AnchorRole, AssignmentResult, InstanceAssignment, Instance, SoftAnchor};
use crate::error::{config_err, Error, Result};
use crate::geometry::{giou_loss_grad, BBox};
use crate::head::Prediction;
use crate::math::{abs, sigmoid};

/// Gradients smaller than this are compared in absolute terms.
pub const REL_ERR_FLOOR: f64 = 1e-3;

/// Pass threshold for the relative error.
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

pub const DEFAULT_STEP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub max_rel_err: f64,
    /// Parameter index with the largest error.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub passed: bool,
}

/// `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    abs(analytic - numeric) / abs(analytic).max(abs(numeric)).max(REL_ERR_FLOOR)
}

/// Compares the analytic gradient returned by `f` at `point` with central
/// differences of its value.
pub fn grad_check<F>(f: F, point: &[f64], step: f64, tol: f64) -> Result<GradReport>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(1e-5..=1e-2).contains(&step) {
        return Err(config_err("finite-difference step must lie in [1e-5, 1e-2]"));
    }
    let (value, analytic) = f(point)?;
    if !value.is_finite() || analytic.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("analytic gradient"));
    }
    if analytic.len() != point.len() {
        return Err(config_err("gradient length does not match the point"));
    }
    let mut x = point.to_vec();
    let mut numeric = Vec::with_capacity(point.len());
    for k in 0..point.len() {
        x[k] = point[k] + step;
        let up = f(&x)?.0;
        x[k] = point[k] - step;
        let down = f(&x)?.0;
        x[k] = point[k];
        let d = (up - down) / (2.0 * step);
        if !d.is_finite() {
            return Err(Error::NonFinite("finite difference"));
        }
        numeric.push(d);
    }
    let (worst_index, max_rel_err) = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .enumerate()
        .fold((0, 0.0), |acc, (i, e)| if e > acc.1 { (i, e) } else { acc });
    Ok(GradReport {
        max_rel_err,
        worst_index,
        analytic,
        numeric,
        passed: max_rel_err < tol,
    })
}

/// Soft BCE as a function of the logit `z` (`p = sigmoid(z)`).
pub fn soft_bce_logit(z: f64, t: f64, eps: f64) -> (f64, f64) {
    let p = sigmoid(z);
    let (v, d) = soft_bce_grad(p, t, eps);
    (v, d * p * (1.0 - p))
}

/// Focal negative as a function of the logit `z`.
pub fn focal_negative_logit(z: f64, gamma: f64, alpha: f64, eps: f64) -> (f64, f64) {
    let p = sigmoid(z);
    let (v, d) = focal_negative_grad(p, gamma, alpha, eps);
    (v, d * p * (1.0 - p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpReport {
    pub op: String,
    pub points: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub trials: usize,
    pub step: f64,
    pub tolerance: f64,
    pub ops: Vec<OpReport>,
    pub max_rel_err: f64,
    pub passed: bool,
}

/// Options for [`run_suite`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteOptions {
    pub seed: u64,
    pub trials: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Scales every analytic gradient by `1 + corrupt`; a negative control.
    pub corrupt: f64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 1000,
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
            corrupt: 0.0,
        }
    }
}

/// Random box pair whose edges stay at least `margin` away from every kink of
/// the GIoU loss (coincident edges, touching intersections).
fn smooth_box_pair(rng: &mut ChaCha8Rng, margin: f64) -> (BBox, BBox) {
    loop {
        let mut coords = [0.0f64; 8];
        for k in 0..2 {
            let x1 = rng.gen_range(0.0..10.0);
            let y1 = rng.gen_range(0.0..10.0);
            let w = rng.gen_range(0.5..8.0);
            let h = rng.gen_range(0.5..8.0);
            coords[4 * k..4 * k + 4].copy_from_slice(&[x1, y1, x1 + w, y1 + h]);
        }
        let (p, g) = (&coords[..4], &coords[4..]);
        let mut far = true;
        for (a, b) in [(p[0], g[0]), (p[2], g[2]), (p[1], g[1]), (p[3], g[3])] {
            far &= abs(a - b) > margin;
        }
        // intersection width/height away from zero
        for (lo_a, hi_a, lo_b, hi_b) in [(p[0], p[2], g[0], g[2]), (p[1], p[3], g[1], g[3])] {
            far &= abs(hi_a.min(hi_b) - lo_a.max(lo_b)) > margin;
        }
        if far {
            return (
                BBox::new(p[0], p[1], p[2], p[3]).expect("valid"),
                BBox::new(g[0], g[1], g[2], g[3]).expect("valid"),
            );
        }
    }
}

/// Random single-image classification fixture: `n` anchors, `c` categories,
/// logits laid out as `[cls_0..cls_c, ctr]` per anchor.
struct ClsFixture {
    n: usize,
    c: usize,
    assignment: AssignmentResult,
    instances: Vec<Instance>,
    boxes: Vec<BBox>,
}

impl ClsFixture {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let n = rng.gen_range(3..7);
        let c = rng.gen_range(1..4);
        let b = BBox::new(0.0, 0.0, 4.0, 4.0).expect("valid");
        let instances = vec![Instance::new(b, rng.gen_range(0..c)), Instance::new(b, rng.gen_range(0..c))];
        let mut roles = Vec::with_capacity(n);
        let mut per_instance = vec![InstanceAssignment::default(); 2];
        for i in 0..n {
            let j = rng.gen_range(0..2);
            let role = match rng.gen_range(0..4) {
                0 => AnchorRole::Negative,
                1 => AnchorRole::Certain { instance: j },
                2 => AnchorRole::Positive { instance: j },
                _ => {
                    let t = rng.gen_range(0.0..0.6);
                    per_instance[j].ambiguous.push(SoftAnchor { anchor: i, t });
                    AnchorRole::Ambiguous { instance: j, t }
                }
            };
            roles.push(role);
        }
        Self {
            n,
            c,
            assignment: AssignmentResult {
                instances: per_instance,
                roles,
                anchor_ids: (0..n).collect(),
            },
            instances,
            boxes: vec![b; n],
        }
    }

    fn preds(&self, logits: &[f64]) -> Vec<Prediction> {
        let stride = self.c + 1;
        (0..self.n)
            .map(|i| {
                let row = &logits[i * stride..(i + 1) * stride];
                Prediction {
                    anchor_id: i,
                    cls_scores: row[..self.c].iter().map(|&z| sigmoid(z)).collect(),
                    ctr_score: sigmoid(row[self.c]),
                    bbox: self.boxes[i],
                }
            })
            .collect()
    }
}

/// Runs finite-difference checks over soft BCE, focal negative, the
/// classification objective and the GIoU loss at `trials` random points each.
pub fn run_suite(opts: &SuiteOptions) -> Result<SuiteReport> {
    if opts.trials == 0 {
        return Err(config_err("trials must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let cfg = LossConfig::default();
    let scale = 1.0 + opts.corrupt;
    let (step, tol) = (opts.step, opts.tolerance);
    let mut worst = [0.0f64; 4];

    for _ in 0..opts.trials {
        let z = rng.gen_range(-4.0..4.0);
        let t = rng.gen_range(0.0..1.0);
        let r = grad_check(
            |x| {
                let (v, d) = soft_bce_logit(x[0], t, cfg.eps);
                Ok((v, vec![d * scale]))
            },
            &[z],
            step,
            tol,
        )?;
        worst[0] = worst[0].max(r.max_rel_err);

        let z = rng.gen_range(-4.0..4.0);
        let gamma = rng.gen_range(0.0..3.0);
        let alpha = rng.gen_range(0.0..1.0);
        let r = grad_check(
            |x| {
                let (v, d) = focal_negative_logit(x[0], gamma, alpha, cfg.eps);
                Ok((v, vec![d * scale]))
            },
            &[z],
            step,
            tol,
        )?;
        worst[1] = worst[1].max(r.max_rel_err);

        let fx = ClsFixture::random(&mut rng);
        let logits: Vec<f64> = (0..fx.n * (fx.c + 1)).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let r = grad_check(
            |x| {
                let preds = fx.preds(x);
                let l = cls_loss(&fx.assignment, &preds, &fx.instances, &cfg)?;
                let mut g = Vec::with_capacity(x.len());
                for ag in &l.grads {
                    g.extend(ag.cls.iter().map(|v| v * scale));
                    g.push(ag.ctr * scale);
                }
                Ok((l.total(), g))
            },
            &logits,
            step,
            tol,
        )?;
        worst[2] = worst[2].max(r.max_rel_err);

        let (pred, gt) = smooth_box_pair(&mut rng, 10.0 * step);
        let r = grad_check(
            |x| {
                let p = BBox::new(x[0], x[1], x[2], x[3])?;
                let (l, g) = giou_loss_grad(&p, &gt)?;
                Ok((l, g.iter().map(|v| v * scale).collect()))
            },
            &pred.to_array(),
            step,
            tol,
        )?;
        worst[3] = worst[3].max(r.max_rel_err);
    }

    let names = ["soft_bce", "focal_negative", "cls_loss", "giou_loss"];
    let ops: Vec<OpReport> = names
        .iter()
        .zip(worst)
        .map(|(n, e)| OpReport {
            op: String::from(*n),
            points: opts.trials,
            max_rel_err: e,
        })
        .collect();
    let max_rel_err = worst.iter().copied().fold(0.0, f64::max);
    Ok(SuiteReport {
        seed: opts.seed,
        trials: opts.trials,
        step,
        tolerance: tol,
        ops,
        max_rel_err,
        passed: max_rel_err < tol,
    })
}

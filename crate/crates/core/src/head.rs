//! Per-anchor detector outputs: raw logits and the decoded prediction.
//!
//! Classification and centerness logits go through a logistic; the joint
//! score of category `c` is `cls[c] * ctr`. Box parameters are `ltrb`
//! distances from the anchor point, `stride * softplus(raw)`.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::anchor::Anchor;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::math::{sigmoid, softplus};

/// Raw head outputs for one anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawOutput {
    pub cls_logits: Vec<f64>,
    pub ctr_logit: f64,
    /// Pre-softplus left, top, right, bottom distances.
    pub box_params: [f64; 4],
}

impl RawOutput {
    pub fn zeros(n_categories: usize) -> Self {
        Self {
            cls_logits: alloc::vec![0.0; n_categories],
            ctr_logit: 0.0,
            box_params: [0.0; 4],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.ctr_logit.is_finite()
            && self.cls_logits.iter().all(|v| v.is_finite())
            && self.box_params.iter().all(|v| v.is_finite())
    }
}

/// Decoded per-anchor prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub anchor_id: usize,
    pub cls_scores: Vec<f64>,
    pub ctr_score: f64,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

impl Prediction {
    /// Classification-centerness joint score for `category`.
    #[inline]
    pub fn joint(&self, category: usize) -> f64 {
        self.cls_scores[category] * self.ctr_score
    }

    pub fn n_categories(&self) -> usize {
        self.cls_scores.len()
    }
}

/// Maps raw outputs at `anchor` to scores and a box.
pub fn decode(anchor: &Anchor, raw: &RawOutput) -> Result<Prediction> {
    if !raw.is_finite() {
        return Err(Error::NonFinite("head outputs"));
    }
    let s = anchor.stride;
    let d = raw.box_params.map(|v| s * softplus(v));
    let bbox = BBox::new(anchor.x - d[0], anchor.y - d[1], anchor.x + d[2], anchor.y + d[3])?;
    Ok(Prediction {
        anchor_id: anchor.id,
        cls_scores: raw.cls_logits.iter().map(|&z| sigmoid(z)).collect(),
        ctr_score: sigmoid(raw.ctr_logit),
        bbox,
    })
}

/// Chains a gradient w.r.t. the decoded corners `(x1, y1, x2, y2)` back to the
/// raw box parameters.
pub fn box_param_grad(anchor: &Anchor, raw: &RawOutput, d_corners: &[f64; 4]) -> [f64; 4] {
    let s = anchor.stride;
    let p = &raw.box_params;
    [
        -d_corners[0] * s * sigmoid(p[0]),
        -d_corners[1] * s * sigmoid(p[1]),
        d_corners[2] * s * sigmoid(p[2]),
        d_corners[3] * s * sigmoid(p[3]),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn anchor() -> Anchor {
        Anchor {
            id: 3,
            x: 20.0,
            y: 12.0,
            stride: 8.0,
            level: 0,
            row: 1,
            col: 2,
        }
    }

    #[test]
    fn zero_logits() {
        let p = decode(&anchor(), &RawOutput::zeros(3)).unwrap();
        assert_eq!(p.cls_scores, alloc::vec![0.5; 3]);
        assert_eq!(p.ctr_score, 0.5);
        assert_eq!(p.joint(1), 0.25);
        let d = 8.0 * libm::log(2.0);
        assert!((p.bbox.x1() - (20.0 - d)).abs() < 1e-12);
        assert!((p.bbox.y2() - (12.0 + d)).abs() < 1e-12);
    }

    #[test]
    fn ltrb_decoding() {
        let mut raw = RawOutput::zeros(1);
        let ltrb = [1.0, 2.0, 3.0, 4.0];
        for k in 0..4 {
            raw.box_params[k] = crate::math::softplus_inv(ltrb[k] / 8.0);
        }
        let b = decode(&anchor(), &raw).unwrap().bbox;
        let want = [20.0 - 1.0, 12.0 - 2.0, 20.0 + 3.0, 12.0 + 4.0];
        for (got, want) in b.to_array().iter().zip(want) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn non_finite_rejected() {
        let mut raw = RawOutput::zeros(1);
        raw.ctr_logit = f64::NAN;
        assert!(decode(&anchor(), &raw).is_err());
    }
}

//! Inference-side filtering: score threshold, per-image cap and class-aware
//! greedy NMS. NMS only serves as a baseline comparator.

use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::geometry::{iou, BBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "image_id")]
    pub image: u64,
    #[serde(rename = "category_id")]
    pub category: usize,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
    /// Source anchor; breaks score ties.
    #[serde(default)]
    pub anchor_id: usize,
}

/// Best first: higher score, then lower anchor id, image, category.
pub fn detection_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.anchor_id.cmp(&b.anchor_id))
        .then_with(|| a.image.cmp(&b.image))
        .then_with(|| a.category.cmp(&b.category))
}

/// Greedy class-aware NMS. A detection is dropped when its IoU with an
/// already kept detection of the same image and category exceeds
/// `iou_threshold`. Output is in descending score order.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| detection_order(a, b));
    let mut kept: Vec<Detection> = Vec::new();
    // kept indices per (image, category) group
    let mut groups: Vec<((u64, usize), Vec<usize>)> = Vec::new();
    for d in order {
        let key = (d.image, d.category);
        let slot = match groups.iter().position(|(k, _)| *k == key) {
            Some(s) => s,
            None => {
                groups.push((key, Vec::new()));
                groups.len() - 1
            }
        };
        let suppressed = groups[slot]
            .1
            .iter()
            .any(|&k| iou(&kept[k].bbox, &d.bbox) > iou_threshold);
        if !suppressed {
            groups[slot].1.push(kept.len());
            kept.push(*d);
        }
    }
    kept
}

/// Drops detections scoring below `score_threshold` and keeps the best
/// `max_per_image` per image. Output is in descending score order.
pub fn filter_detections(dets: &[Detection], score_threshold: f64, max_per_image: usize) -> Vec<Detection> {
    let mut sorted: Vec<Detection> = dets.iter().filter(|d| d.score >= score_threshold).copied().collect();
    sorted.sort_by(detection_order);
    let mut counts: Vec<(u64, usize)> = Vec::new();
    sorted
        .into_iter()
        .filter(|d| {
            let slot = match counts.iter().position(|(img, _)| *img == d.image) {
                Some(s) => s,
                None => {
                    counts.push((d.image, 0));
                    counts.len() - 1
                }
            };
            counts[slot].1 += 1;
            counts[slot].1 <= max_per_image
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn det(b: [f64; 4], score: f64, anchor_id: usize) -> Detection {
        Detection {
            image: 0,
            category: 0,
            bbox: BBox::try_from(b).unwrap(),
            score,
            anchor_id,
        }
    }

    #[test]
    fn empty() {
        assert!(nms(&[], 0.6).is_empty());
        assert!(filter_detections(&[], 0.1, 10).is_empty());
    }

    #[test]
    fn identical_boxes() {
        let d = vec![det([0., 0., 2., 2.], 0.8, 1), det([0., 0., 2., 2.], 0.9, 0)];
        let k = nms(&d, 0.6);
        assert_eq!(k.len(), 1);
        assert_eq!(k[0].score, 0.9);
    }

    #[test]
    fn low_overlap_both_kept() {
        let d = vec![det([0., 0., 2., 2.], 0.9, 0), det([1., 1., 3., 3.], 0.8, 1)];
        assert_eq!(nms(&d, 0.6).len(), 2);
    }

    #[test]
    fn class_and_image_aware() {
        let mut a = det([0., 0., 2., 2.], 0.9, 0);
        let mut b = a;
        b.score = 0.8;
        b.category = 1;
        assert_eq!(nms(&[a, b], 0.5).len(), 2);
        a.category = 1;
        a.image = 4;
        assert_eq!(nms(&[a, b], 0.5).len(), 2);
    }

    #[test]
    fn threshold_is_strict() {
        // IoU exactly 0.5: not suppressed at threshold 0.5
        let d = vec![det([0., 0., 2., 1.], 0.9, 0), det([0., 0., 1., 1.], 0.8, 1)];
        assert_eq!(iou(&d[0].bbox, &d[1].bbox), 0.5);
        assert_eq!(nms(&d, 0.5).len(), 2);
        assert_eq!(nms(&d, 0.49).len(), 1);
    }

    #[test]
    fn filter_threshold_and_cap() {
        let d: Vec<Detection> = (0..5).map(|i| det([0., 0., 1., 1.], 0.1 * (i + 1) as f64, i)).collect();
        assert!(filter_detections(&d, 0.9, 10).is_empty());
        let top = filter_detections(&d, 0.0, 3);
        let scores: Vec<f64> = top.iter().map(|d| d.score).collect();
        assert_eq!(scores, vec![0.5, 0.4, 0.30000000000000004]);
    }

    #[test]
    fn filter_ties_prefer_lower_anchor() {
        let d = vec![
            det([0., 0., 1., 1.], 0.5, 9),
            det([0., 0., 1., 1.], 0.7, 4),
            det([0., 0., 1., 1.], 0.5, 2),
            det([0., 0., 1., 1.], 0.5, 5),
        ];
        let top: Vec<usize> = filter_detections(&d, 0.0, 3).iter().map(|d| d.anchor_id).collect();
        assert_eq!(top, vec![4, 2, 5]);
    }

    #[test]
    fn cap_is_per_image() {
        let mut d = vec![det([0., 0., 1., 1.], 0.9, 0), det([0., 0., 1., 1.], 0.8, 1)];
        d[1].image = 1;
        assert_eq!(filter_detections(&d, 0.0, 1).len(), 2);
    }
}

#![allow(dead_code)]

use o2f_core::BBox;
use proptest::prelude::*;

pub fn bbox() -> impl Strategy<Value = BBox> {
    (-50.0..50.0f64, -50.0..50.0f64, 0.1..40.0f64, 0.1..40.0f64)
        .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
}

pub fn small_bbox(extent: f64) -> impl Strategy<Value = BBox> {
    (0.0..extent, 0.0..extent, 1.0..extent / 2.0, 1.0..extent / 2.0)
        .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
}

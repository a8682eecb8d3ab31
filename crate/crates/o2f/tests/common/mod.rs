#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

pub fn o2f(args: &[&str]) -> Output {
    o2f_env(args, &[])
}

pub fn o2f_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_o2f"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn o2f")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn write(path: &Path, v: &Value) {
    std::fs::write(path, serde_json::to_string(v).unwrap()).unwrap();
}

/// Two images, two categories. Category 0 has a duplicate and a loose
/// detection (IoU 0.7); category 1 has one exact hit and one stray box.
pub fn micro_detections() -> Value {
    json!([
        {"image_id": 1, "category_id": 0, "box": [0, 0, 10, 10], "score": 0.9},
        {"image_id": 1, "category_id": 0, "box": [0, 0, 10, 8], "score": 0.8},
        {"image_id": 2, "category_id": 0, "box": [0, 0, 10, 7], "score": 0.7},
        {"image_id": 1, "category_id": 1, "box": [20, 20, 30, 30], "score": 0.6},
        {"image_id": 2, "category_id": 1, "box": [0, 0, 5, 5], "score": 0.5}
    ])
}

pub fn micro_ground_truth() -> Value {
    json!([
        {"image_id": 1, "category_id": 0, "box": [0, 0, 10, 10]},
        {"image_id": 1, "category_id": 1, "box": [20, 20, 30, 30]},
        {"image_id": 2, "category_id": 0, "box": [0, 0, 10, 10]}
    ])
}

/// Hand-computed mean AP of the micro fixture over IoU 0.50:0.95.
pub fn micro_mean_ap() -> f64 {
    // category 0 ranks [TP, FP, TP] up to IoU 0.7 and [TP, FP, FP] above;
    // category 1 is perfect
    let cat0_loose = (51.0 + 50.0 * 2.0 / 3.0) / 101.0;
    let cat0_tight = 51.0 / 101.0;
    (5.0 * (cat0_loose + 1.0) / 2.0 + 5.0 * (cat0_tight + 1.0) / 2.0) / 10.0
}

/// Three anchors inside one instance: joint scores 0.9/0.7/0.2, IoUs
/// 0.8/0.7/0.3.
pub fn three_anchor_predictions() -> Value {
    json!([
        {"anchor_id": 0, "point": [4, 4], "stride": 4, "cls_scores": [0.9], "ctr_score": 1.0, "box": [0, 0, 10, 8]},
        {"anchor_id": 1, "point": [5, 5], "stride": 4, "cls_scores": [0.7], "ctr_score": 1.0, "box": [0, 0, 10, 7]},
        {"anchor_id": 2, "point": [6, 6], "stride": 4, "cls_scores": [0.2], "ctr_score": 1.0, "box": [0, 0, 10, 3]}
    ])
}

pub fn one_instance() -> Value {
    json!([{"image_id": 0, "category_id": 0, "box": [0, 0, 10, 10]}])
}

/// With alpha = 0 the matching score is the joint score, so the score matrix
/// is rows = instances [[0.9, 0.8], [0.85, 0.1]].
pub fn two_by_two_predictions() -> Value {
    json!([
        {"anchor_id": 0, "point": [4, 4], "stride": 4, "cls_scores": [0.9, 0.85], "ctr_score": 1.0, "box": [0, 0, 10, 10]},
        {"anchor_id": 1, "point": [5, 5], "stride": 4, "cls_scores": [0.8, 0.1], "ctr_score": 1.0, "box": [0, 0, 10, 10]}
    ])
}

pub fn two_instances() -> Value {
    json!([
        {"image_id": 0, "category_id": 0, "box": [0, 0, 10, 10]},
        {"image_id": 0, "category_id": 1, "box": [0, 0, 10, 10]}
    ])
}

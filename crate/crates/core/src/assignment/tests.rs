use super::*;
use alloc::vec;

fn anchor(id: usize, x: f64, y: f64, stride: f64) -> Anchor {
    Anchor {
        id,
        x,
        y,
        stride,
        level: 0,
        row: 0,
        col: id,
    }
}

fn pred(id: usize, joint: f64, bbox: [f64; 4]) -> Prediction {
    Prediction {
        anchor_id: id,
        cls_scores: vec![joint],
        ctr_score: 1.0,
        bbox: BBox::try_from(bbox).unwrap(),
    }
}

/// Three anchors inside one instance with joint scores 0.9/0.7/0.2 and
/// IoUs 0.8/0.7/0.3 against the ground truth.
fn three_anchor_fixture() -> (Vec<Anchor>, Vec<Prediction>, Vec<Instance>) {
    let anchors = vec![anchor(0, 4.0, 4.0, 4.0), anchor(1, 5.0, 5.0, 4.0), anchor(2, 6.0, 6.0, 4.0)];
    let preds = vec![
        pred(0, 0.9, [0., 0., 10., 8.]),
        pred(1, 0.7, [0., 0., 10., 7.]),
        pred(2, 0.2, [0., 0., 10., 3.]),
    ];
    let gt = vec![Instance::new(BBox::new(0., 0., 10., 10.).unwrap(), 0)];
    (anchors, preds, gt)
}

fn cfg() -> AssignConfig {
    AssignConfig::default()
}

#[test]
fn matching_score_examples() {
    assert_eq!(matching_score(0.9, 0.9, false, 0.8, Combine::Multiply), 0.0);
    assert_eq!(matching_score(0.9, 0.9, false, 0.8, Combine::Add), 0.0);
    for alpha in [0.0, 0.3, 0.8, 1.0] {
        assert_eq!(matching_score(1.0, 1.0, true, alpha, Combine::Multiply), 1.0);
    }
    let s = matching_score(0.5, 0.6, true, 0.8, Combine::Multiply);
    let want = libm::pow(0.5, 0.2) * libm::pow(0.6, 0.8);
    assert!((s - want).abs() < 1e-15);
    assert!((s - 0.5785).abs() < 1e-4);
    let s = matching_score(0.5, 0.6, true, 0.8, Combine::Add);
    assert!((s - (0.2 * 0.5 + 0.8 * 0.6)).abs() < 1e-15);
}

#[test]
fn zero_pow_zero_is_one() {
    // alpha = 1 with p = 0: the classification factor is 0^0 = 1
    assert_eq!(matching_score(0.0, 0.5, true, 1.0, Combine::Multiply), 0.5);
    // alpha = 0 with iou = 0
    assert_eq!(matching_score(0.4, 0.0, true, 0.0, Combine::Multiply), 0.4);
}

#[test]
fn fixture_ious() {
    let (_, preds, gt) = three_anchor_fixture();
    let ious: Vec<f64> = preds.iter().map(|p| iou(&p.bbox, &gt[0].bbox)).collect();
    for (got, want) in ious.iter().zip([0.8, 0.7, 0.3]) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn o2f_three_anchor_example() {
    let (anchors, preds, gt) = three_anchor_fixture();
    let m = MatchingMatrix::build(&anchors, &preds, &gt, &cfg()).unwrap();
    let s0 = libm::pow(0.9, 0.2) * libm::pow(0.8, 0.8);
    assert!((m.scores[0][0] - s0).abs() < 1e-12);
    assert!((s0 - 0.8187).abs() < 1e-3);
    assert!((m.scores[0][1] - 0.7).abs() < 1e-12);

    let r = assign_o2f(&anchors, &preds, &gt, 1, 0.6, &cfg()).unwrap();
    assert_eq!(r.instances[0].certain, Some(0));
    assert_eq!(r.instances[0].ambiguous.len(), 1);
    assert_eq!(r.instances[0].ambiguous[0].anchor, 1);
    let t = r.instances[0].ambiguous[0].t;
    assert!((t - 0.7 / 0.9 * 0.6).abs() < 1e-12);
    assert_eq!(r.roles[2], AnchorRole::Negative);
    assert_eq!(r.roles[0], AnchorRole::Certain { instance: 0 });
}

#[test]
fn o2f_k0_is_top1() {
    let (anchors, preds, gt) = three_anchor_fixture();
    let a = assign_o2f(&anchors, &preds, &gt, 0, 0.6, &cfg()).unwrap();
    let b = assign_o2o_top1(&anchors, &preds, &gt, &cfg()).unwrap();
    assert!(a.instances[0].ambiguous.is_empty());
    assert_eq!(a.roles, b.roles);
    assert_eq!(b.instances[0].certain, Some(0));
    assert_eq!(b.roles[1], AnchorRole::Negative);
    assert_eq!(b.roles[2], AnchorRole::Negative);
}

#[test]
fn single_anchor_single_instance() {
    let anchors = vec![anchor(0, 5.0, 5.0, 4.0)];
    let preds = vec![pred(0, 0.3, [1., 1., 9., 9.])];
    let gt = vec![Instance::new(BBox::new(0., 0., 10., 10.).unwrap(), 0)];
    let r = assign_o2f(&anchors, &preds, &gt, 7, 0.6, &cfg()).unwrap();
    assert_eq!(r.instances[0].certain, Some(0));
    assert!(r.instances[0].ambiguous.is_empty());
    assert!(!r.instances[0].fallback);
}

#[test]
fn o2m_examples() {
    let (anchors, preds, gt) = three_anchor_fixture();
    let r = assign_o2m_topk(&anchors, &preds, &gt, 2, &cfg()).unwrap();
    assert_eq!(r.roles[0], AnchorRole::Certain { instance: 0 });
    assert_eq!(r.roles[1], AnchorRole::Positive { instance: 0 });
    assert_eq!(r.roles[2], AnchorRole::Negative);

    let all = assign_o2m_topk(&anchors, &preds, &gt, 10, &cfg()).unwrap();
    assert!(all.roles.iter().all(|r| r.owner() == Some(0)));

    let one = assign_o2m_topk(&anchors, &preds, &gt, 1, &cfg()).unwrap();
    let top1 = assign_o2o_top1(&anchors, &preds, &gt, &cfg()).unwrap();
    assert_eq!(one.roles, top1.roles);

    assert!(assign_o2m_topk(&anchors, &preds, &gt, 0, &cfg()).is_err());
}

fn matrix(scores: Vec<Vec<f64>>) -> MatchingMatrix {
    let n_anch = scores[0].len();
    let n_inst = scores.len();
    MatchingMatrix {
        inside: scores.iter().map(|r| r.iter().map(|_| true).collect()).collect(),
        joint: scores.clone(),
        scores,
        anchor_ids: (0..n_anch).collect(),
        points: (0..n_anch).map(|i| (i as f64, 0.0)).collect(),
        centers: (0..n_inst).map(|j| (j as f64, 0.0)).collect(),
    }
}

/// Brute force for the greedy rule: the instance whose best score is highest
/// keeps its top anchor, the other takes its best remaining one.
#[test]
fn colliding_top1_two_instances() {
    let scores = vec![vec![0.9, 0.6, 0.1, 0.0], vec![0.8, 0.7, 0.5, 0.2]];
    let m = matrix(scores.clone());
    let r = assign_from_matrix(&m, AssignMethod::O2oTop1, 0.0).unwrap();

    let (winner, loser) = if scores[0][0] >= scores[1][0] { (0, 1) } else { (1, 0) };
    let loser_best = (0..4)
        .filter(|&i| i != 0)
        .max_by(|&a, &b| scores[loser][a].total_cmp(&scores[loser][b]))
        .unwrap();
    assert_eq!(r.instances[winner].certain, Some(0));
    assert_eq!(r.instances[loser].certain, Some(loser_best));
    assert_eq!(r.instances[1].certain, Some(1));
}

#[test]
fn disjoint_candidates() {
    let anchors = vec![anchor(0, 5.0, 5.0, 4.0), anchor(1, 25.0, 25.0, 4.0)];
    let preds = vec![pred(0, 0.5, [0., 0., 10., 10.]), pred(1, 0.5, [20., 20., 30., 30.])];
    let gt = vec![
        Instance::new(BBox::new(0., 0., 10., 10.).unwrap(), 0),
        Instance::new(BBox::new(20., 20., 30., 30.).unwrap(), 0),
    ];
    let r = assign_o2o_top1(&anchors, &preds, &gt, &cfg()).unwrap();
    assert_eq!(r.certain_anchors(), vec![Some(0), Some(1)]);
}

#[test]
fn equal_scores_prefer_lower_anchor_id() {
    let mut m = matrix(vec![vec![0.5, 0.5, 0.5]]);
    m.anchor_ids = vec![7, 3, 5];
    let r = assign_from_matrix(&m, AssignMethod::O2f { k: 1 }, 0.6).unwrap();
    assert_eq!(r.instances[0].certain, Some(1));
    assert_eq!(r.instances[0].ambiguous[0].anchor, 2);
}

#[test]
fn zero_joint_scores_give_uniform_t() {
    let mut m = matrix(vec![vec![0.5, 0.4, 0.3]]);
    m.joint = vec![vec![0.0, 0.0, 0.0]];
    let r = assign_from_matrix(&m, AssignMethod::O2f { k: 2 }, 0.6).unwrap();
    assert!(r.instances[0].ambiguous.iter().all(|a| a.t == 0.6));
}

#[test]
fn fallback_to_nearest_anchor() {
    // the instance is far smaller than the stride; no anchor point falls inside it
    let anchors = vec![anchor(0, 4.0, 4.0, 8.0), anchor(1, 12.0, 4.0, 8.0)];
    let preds = vec![pred(0, 0.5, [0., 0., 8., 8.]), pred(1, 0.5, [8., 0., 16., 8.])];
    let gt = vec![Instance::new(BBox::new(9.0, 1.0, 11.0, 3.0).unwrap(), 0)];
    let r = assign_o2f(&anchors, &preds, &gt, 7, 0.6, &cfg()).unwrap();
    assert_eq!(r.instances[0].certain, Some(1));
    assert!(r.instances[0].fallback);
    assert!(r.instances[0].ambiguous.is_empty());
    assert_eq!(r.fallbacks(), 1);
}

#[test]
fn hungarian_two_by_two() {
    let m = matrix(vec![vec![0.9, 0.8], vec![0.85, 0.1]]);
    let r = assign_from_matrix(&m, AssignMethod::O2oHungarian, 0.0).unwrap();
    assert_eq!(r.certain_anchors(), vec![Some(1), Some(0)]);
    // greedy top-1 takes the 0.9 pair instead
    let g = assign_from_matrix(&m, AssignMethod::O2oTop1, 0.0).unwrap();
    assert_eq!(g.certain_anchors(), vec![Some(0), Some(1)]);
}

#[test]
fn hungarian_needs_enough_anchors() {
    let anchors = vec![anchor(0, 5.0, 5.0, 4.0)];
    let preds = vec![pred(0, 0.5, [0., 0., 10., 10.])];
    let b = BBox::new(0., 0., 10., 10.).unwrap();
    let gt = vec![Instance::new(b, 0), Instance::new(b, 0)];
    assert!(matches!(
        assign_o2o_hungarian(&anchors, &preds, &gt, &cfg()),
        Err(Error::TooFewAnchors { .. })
    ));
    let r = assign_o2o_hungarian(&anchors, &preds, &gt[..1], &cfg()).unwrap();
    assert_eq!(r.instances[0].certain, Some(0));
}

#[test]
fn empty_predictions_error() {
    let gt = vec![Instance::new(BBox::new(0., 0., 10., 10.).unwrap(), 0)];
    assert_eq!(assign_o2f(&[], &[], &gt, 7, 0.6, &cfg()), Err(Error::EmptyPredictions));
}

#[test]
fn no_instances_all_negative() {
    let (anchors, preds, _) = three_anchor_fixture();
    let r = assign_o2f(&anchors, &preds, &[], 7, 0.6, &cfg()).unwrap();
    assert!(r.roles.iter().all(|r| *r == AnchorRole::Negative));
}

#[test]
fn add_mode_argmax_moves_under_scaling() {
    // additive scores are not scale-equivariant in p for 0 < alpha < 1
    let s = |p: f64, q: f64| matching_score(p, q, true, 0.5, Combine::Add);
    assert!(s(0.8, 0.2) > s(0.2, 0.7));
    assert!(s(0.4, 0.2) < s(0.1, 0.7));
    let m = |p: f64, q: f64| matching_score(p, q, true, 0.5, Combine::Multiply);
    assert!(m(0.8, 0.2) > m(0.2, 0.7));
    assert!(m(0.4, 0.2) > m(0.1, 0.7));
}

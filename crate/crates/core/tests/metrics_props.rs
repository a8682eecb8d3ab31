use o2f_core::geometry::iou;
use o2f_core::metrics::{average_precision, coco_map, default_fppi_points, mmr, EvalConfig, GroundTruth, MISS_RATE_FLOOR};
use o2f_core::{BBox, Detection};
use proptest::prelude::*;

fn boxes(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<(u64, BBox, f64)>> {
    prop::collection::vec((0u64..3, 0.0..30.0f64, 0.0..30.0f64, 2.0..10.0f64, 2.0..10.0f64, 0.0..1.0f64), n).prop_map(|v| {
        v.into_iter()
            .map(|(img, x, y, w, h, s)| (img, BBox::new(x, y, x + w, y + h).unwrap(), s))
            .collect()
    })
}

fn as_dets(v: &[(u64, BBox, f64)]) -> Vec<Detection> {
    v.iter()
        .enumerate()
        .map(|(i, &(image, bbox, score))| Detection {
            image,
            category: 0,
            bbox,
            score,
            anchor_id: i,
        })
        .collect()
}

fn as_gts(v: &[(u64, BBox, f64)]) -> Vec<GroundTruth> {
    v.iter()
        .map(|&(image, bbox, _)| GroundTruth {
            image,
            category: 0,
            bbox,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1_000))]

    #[test]
    fn ap_bounded_and_monotone(flags in prop::collection::vec(any::<bool>(), 0..30), extra in 0usize..5, pick in any::<prop::sample::Index>()) {
        let n_gt = flags.iter().filter(|f| **f).count() + extra + 1;
        let ap = average_precision(&flags, n_gt).unwrap();
        prop_assert!((0.0..=1.0).contains(&ap));
        // turning a false positive into a hit never hurts
        if let Some(pos) = flags.iter().enumerate().filter(|(_, f)| !**f).map(|(i, _)| i).nth(pick.index(flags.len().max(1)) % flags.len().max(1)) {
            let mut better = flags.clone();
            better[pos] = true;
            prop_assert!(average_precision(&better, n_gt).unwrap() >= ap - 1e-15);
        }
    }

    #[test]
    fn coco_bounded(d in boxes(0..20), g in boxes(1..10)) {
        let r = coco_map(&as_dets(&d), &as_gts(&g), &EvalConfig::default()).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.mean_ap));
        prop_assert!((0.0..=1.0).contains(&r.average_recall));
    }

    #[test]
    fn perfect_detections_score_one(g in boxes(1..10)) {
        let gts = as_gts(&g);
        let dets = as_dets(&g.iter().map(|&(i, b, _)| (i, b, 0.9)).collect::<Vec<_>>());
        prop_assert_eq!(coco_map(&dets, &gts, &EvalConfig::default()).unwrap().mean_ap, 1.0);
    }

    /// Adding a top-scoring exact hit for a ground truth that nothing covers
    /// can only lower the miss rate.
    #[test]
    fn mmr_falls_with_extra_hit(d in boxes(0..20), g in boxes(1..10)) {
        let dets = as_dets(&d);
        let gts = as_gts(&g);
        let pts = default_fppi_points();
        let before = mmr(&dets, &gts, &pts).unwrap();
        prop_assert!((MISS_RATE_FLOOR..=1.0).contains(&before));
        let uncovered = gts.iter().find(|t| {
            !dets.iter().any(|d| d.image == t.image && iou(&d.bbox, &t.bbox) >= 0.5)
        });
        if let Some(t) = uncovered {
            let mut more = dets.clone();
            more.push(Detection { image: t.image, category: 0, bbox: t.bbox, score: 2.0, anchor_id: 999 });
            prop_assert!(mmr(&more, &gts, &pts).unwrap() <= before + 1e-15);
        }
    }
}

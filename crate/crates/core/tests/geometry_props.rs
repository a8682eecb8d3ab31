mod common;

use common::bbox;
use o2f_core::geometry::{giou, giou_loss, giou_loss_grad, iou};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn iou_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let v = iou(&a, &b);
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&v));
        let g = giou(&a, &b).unwrap();
        prop_assert_eq!(g, giou(&b, &a).unwrap());
        prop_assert!(g <= v + 1e-12);
        prop_assert!((-1.0..=1.0).contains(&g));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn self_overlap_is_one(a in bbox()) {
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        prop_assert!(giou_loss(&a, &a).unwrap().abs() < 1e-12);
    }

    #[test]
    fn translation_invariant(a in bbox(), b in bbox(), dx in -100.0..100.0f64, dy in -100.0..100.0f64) {
        let (ta, tb) = (a.translate(dx, dy).unwrap(), b.translate(dx, dy).unwrap());
        prop_assert!((iou(&a, &b) - iou(&ta, &tb)).abs() < 1e-9);
        prop_assert!((giou(&a, &b).unwrap() - giou(&ta, &tb).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn giou_falls_with_separation(a in bbox(), b in bbox(), d1 in 0.0..50.0f64, extra in 0.1..50.0f64) {
        // push b to the right of a, then further
        let base = a.x2() - b.x1();
        let near = b.translate(base + d1, 0.0).unwrap();
        let far = b.translate(base + d1 + extra, 0.0).unwrap();
        prop_assert_eq!(iou(&a, &near), 0.0);
        prop_assert!(giou(&a, &far).unwrap() < giou(&a, &near).unwrap());
    }

    #[test]
    fn giou_loss_in_range(a in bbox(), b in bbox()) {
        let (l, g) = giou_loss_grad(&a, &b).unwrap();
        prop_assert!((0.0..=2.0).contains(&l));
        prop_assert!((l - giou_loss(&a, &b).unwrap()).abs() < 1e-12);
        prop_assert!(g.iter().all(|v| v.is_finite()));
    }
}

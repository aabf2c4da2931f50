use dtnet_core::losses::{
    bce_loss, focal_loss, hybrid_loss, iou_log_loss, iou_loss, soft_jaccard, ImageTerms, LossParams,
};
use dtnet_core::metrics::{
    confusion_counts, evaluate_set, metrics_from_counts, report_from_counts, AveragingMode, MetricCounts,
};
use proptest::prelude::*;

fn binary(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(any::<bool>().prop_map(|b| f64::from(u8::from(b))), n)
}

fn probs(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..=1.0f64, n)
}

/// Pixel-loop reference, written independently of the library.
fn oracle(p: &[f64], t: &[f64], threshold: f64) -> (u64, u64, u64, u64) {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for i in 0..p.len() {
        let pred = p[i] >= threshold;
        let truth = t[i] == 1.0;
        if pred && truth {
            tp += 1;
        } else if pred {
            fp += 1;
        } else if truth {
            fn_ += 1;
        } else {
            tn += 1;
        }
    }
    (tp, fp, fn_, tn)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn counts_and_micro_metrics_match_the_oracle(p in binary(256), t in binary(256)) {
        let c = confusion_counts(&p, &t, 0.5).unwrap();
        let (tp, fp, fn_, tn) = oracle(&p, &t, 0.5);
        prop_assert_eq!(c, MetricCounts::new(tp, fp, fn_, tn));
        let m = metrics_from_counts(c);
        if tp > 0 {
            prop_assert_eq!(m.precision, tp as f64 / (tp + fp) as f64);
            prop_assert_eq!(m.recall, tp as f64 / (tp + fn_) as f64);
            prop_assert_eq!(m.iou, tp as f64 / (tp + fp + fn_) as f64);
            let (pr, re) = (m.precision, m.recall);
            prop_assert!((m.f1 - 2.0 * pr * re / (pr + re)).abs() <= 1e-12);
            prop_assert!((m.f1 - 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64).abs() <= 1e-12);
            prop_assert!((m.iou - m.f1 / (2.0 - m.f1)).abs() <= 1e-12);
        }
    }

    #[test]
    fn thresholding_is_inclusive(p in probs(64), t in binary(64), th in 0.05..0.95f64) {
        let c = confusion_counts(&p, &t, th).unwrap();
        let (tp, fp, fn_, tn) = oracle(&p, &t, th);
        prop_assert_eq!(c, MetricCounts::new(tp, fp, fn_, tn));
        prop_assert_eq!(c.total(), 64);
    }

    #[test]
    fn micro_pools_counts_and_macro_averages_images(
        set in prop::collection::vec((binary(16), binary(16)), 1..6),
    ) {
        let preds: Vec<_> = set.iter().map(|(p, _)| p.clone()).collect();
        let targets: Vec<_> = set.iter().map(|(_, t)| t.clone()).collect();
        let counts: Vec<_> = set.iter().map(|(p, t)| confusion_counts(p, t, 0.5).unwrap()).collect();
        let pooled = counts.iter().fold(MetricCounts::default(), |a, &b| a + b);
        let micro = evaluate_set(&preds, &targets, 0.5, AveragingMode::Micro).unwrap();
        prop_assert_eq!(micro.iou, metrics_from_counts(pooled).iou);
        let mac = evaluate_set(&preds, &targets, 0.5, AveragingMode::Macro).unwrap();
        let mean_iou = counts.iter().map(|&c| metrics_from_counts(c).iou).sum::<f64>() / counts.len() as f64;
        prop_assert!((mac.iou - mean_iou).abs() <= 1e-12);
        for v in [mac.iou, mac.f1, mac.recall, mac.precision, micro.iou, micro.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn losses_are_bounded_and_vanish_at_the_target(p in probs(32), t in binary(32)) {
        prop_assert!(bce_loss(&p, &t).unwrap() >= 0.0);
        let l = iou_loss(&p, &t, 1e-6).unwrap();
        prop_assert!((0.0..1.0).contains(&l) || l.abs() < 1e-15);
        prop_assert!(iou_loss(&t, &t, 1e-6).unwrap() <= 1e-9);
        prop_assert!(iou_log_loss(&t, &t, 1e-6).unwrap() <= 1e-9);
        prop_assert!(focal_loss(&p, &t, 0.75, 2.0).unwrap() >= 0.0);
        prop_assert!(focal_loss(&p, &t, 0.5, 0.0).unwrap() == 0.5 * bce_loss(&p, &t).unwrap());
    }

    #[test]
    fn raising_a_road_pixel_lowers_the_iou_loss(
        p in probs(16), t in binary(16), i in 0usize..16, bump in 0.01..0.5f64,
    ) {
        prop_assume!(t[i] == 1.0 && p[i] + bump <= 1.0);
        let mut q = p.clone();
        q[i] += bump;
        prop_assert!(iou_loss(&q, &t, 1e-6).unwrap() < iou_loss(&p, &t, 1e-6).unwrap());
    }
}

#[test]
fn degenerate_metric_conventions() {
    let empty = metrics_from_counts(MetricCounts::new(0, 0, 0, 10));
    assert_eq!((empty.iou, empty.precision, empty.recall, empty.f1), (1.0, 1.0, 1.0, 1.0));
    let all_wrong = metrics_from_counts(MetricCounts::new(0, 3, 2, 5));
    assert_eq!((all_wrong.iou, all_wrong.f1), (0.0, 0.0));
    assert!(report_from_counts(&[], AveragingMode::Macro).is_err());
    assert!(confusion_counts(&[0.5], &[1.0, 0.0], 0.5).is_err());
    assert!(confusion_counts(&[0.5], &[1.0], 1.0).is_err());
}

#[test]
fn loss_point_values() {
    for t in [0.0, 1.0] {
        assert!((bce_loss(&[0.5], &[t]).unwrap() - 2f64.ln()).abs() <= 1e-9);
    }
    let v = focal_loss(&[0.9], &[1.0], 0.75, 2.0).unwrap();
    assert!((v - 7.902e-4).abs() <= 1e-7, "{v}");
    assert_eq!(soft_jaccard(&[0.0; 4], &[0.0; 4], 1e-6).unwrap(), 1.0);
    assert!(bce_loss(&[], &[]).is_err());
    assert!(iou_loss(&[0.1, 0.2], &[1.0], 1e-6).is_err());
}

#[test]
fn perfect_predictions_cost_nearly_nothing() {
    let t: Vec<f64> = (0..64).map(|i| f64::from(u8::from(i % 3 == 0))).collect();
    let e: Vec<f64> = (0..64).map(|i| f64::from(u8::from(i % 7 == 0))).collect();
    let img = ImageTerms {
        road: &t,
        area: &t,
        edge: Some((&e, &e)),
    };
    let v = hybrid_loss(&[img, img], &LossParams::default()).unwrap();
    assert!((0.0..=1e-5).contains(&v), "{v}");
}

#[test]
fn single_task_mode_skips_the_focal_term() {
    let p = [0.3, 0.8, 0.6, 0.1];
    let t = [0.0, 1.0, 1.0, 0.0];
    let params = LossParams::default();
    let single = hybrid_loss(&[ImageTerms { road: &p, area: &t, edge: None }], &params).unwrap();
    let expect = bce_loss(&p, &t).unwrap() + iou_loss(&p, &t, params.stabilizer).unwrap();
    assert!((single - expect).abs() <= 1e-15);
    let dual = hybrid_loss(
        &[ImageTerms { road: &p, area: &t, edge: Some((&p, &t)) }],
        &params,
    )
    .unwrap();
    let focal = focal_loss(&p, &t, params.lambda, params.gamma).unwrap();
    assert!((dual - expect - focal).abs() <= 1e-15);
}

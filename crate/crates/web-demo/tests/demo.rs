use objmap_web_demo::{exploration_demo, filter_demo, yaw_demo};

#[test]
fn filtering_removes_far_outliers_and_keeps_the_cloud() {
    let r = filter_demo(1, 400, 0.05, 20.0).unwrap();
    let injected = r.injected.iter().filter(|&&b| b).count();
    assert_eq!(r.points.len(), 400 + injected);
    assert!(r.outliers_removed * 10 >= injected * 8, "{} of {injected}", r.outliers_removed);
    assert!(r.inliers_lost <= 40);
    let norm = |p: [f64; 3]| p.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm(r.filtered_center) < norm(r.raw_center));
}

#[test]
fn filter_inputs_are_validated() {
    assert!(filter_demo(1, 400, 0.95, 5.0).is_err());
    assert!(filter_demo(1, 400, 0.2, 0.5).is_err());
    assert!(filter_demo(1, 3, 0.2, 5.0).is_err());
}

#[test]
fn yaw_curve_peaks_at_the_true_yaw() {
    let r = yaw_demo(2, 27.0, 0.0, 10).unwrap();
    assert_eq!(r.samples.len(), 30);
    assert!(r.segments > 0);
    assert!(r.error_deg <= 6.0, "{}", r.error_deg);
    let best = r.samples.iter().map(|s| s.1).fold(f64::MIN, f64::max);
    let chosen = r.samples.iter().find(|s| (s.0 - r.chosen_yaw_deg).abs() < 1e-9).unwrap();
    assert_eq!(chosen.1, best);
    assert!(yaw_demo(2, 27.0, 0.0, 0).is_err());
}

#[test]
fn exploration_reports_every_step() {
    let r = exploration_demo(3, 4, "nbv").unwrap();
    assert_eq!(r.ground_truth.len(), 4);
    assert!(r.steps.len() >= 4);
    assert!(r.steps.iter().all(|s| (0.0..=1.0).contains(&s.mean_iou_3d)));
    assert!(!r.estimates.is_empty());
    assert!(exploration_demo(3, 4, "sideways").is_err());
    assert!(exploration_demo(3, 0, "nbv").is_err());
}

#[test]
fn results_are_reproducible() {
    assert_eq!(filter_demo(5, 300, 0.2, 5.0), filter_demo(5, 300, 0.2, 5.0));
    assert_eq!(exploration_demo(4, 3, "random"), exploration_demo(4, 3, "random"));
}

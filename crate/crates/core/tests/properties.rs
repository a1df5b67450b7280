//! Cross-module invariants, checked on generated inputs, plus end-to-end
//! scenarios with independently known outcomes.

use std::f64::consts::PI;

use nalgebra::Vector2;
use proptest::prelude::*;

use objmap_core::association::{double_t_test, rank_sum, single_t_test_1d, Strategy as Association, TestOutcome};
use objmap_core::association::hypothesis::mid_ranks;
use objmap_core::exploration::grid::{grid_entropy, SurfaceGrid};
use objmap_core::exploration::sim::{default_intrinsics, SensorModel, Shape, SimObject, SimScene, Table};
use objmap_core::exploration::simulate_observation;
use objmap_core::geometry::{bbox_iou, BBox2D, CubeModel, Pose, Vec3};
use objmap_core::parameterization::iforest::{average_path_length, build_forest, filter_outliers, score_from_path_length};
use objmap_core::parameterization::estimate_centroid_scale;
use objmap_core::pipeline::eval::{iou_2d_top, iou_3d, yaw_error_deg};
use objmap_core::pipeline::{read_frames, round_sig, run_mapping, write_frames, Config};
use objmap_core::topomap::{build_topo_map, match_maps, transform_nodes, Similarity4, TopoConfig, TopoNode};

fn bbox() -> impl Strategy<Value = BBox2D> {
    (0.0..500.0f64, 0.0..400.0f64, 1.0..200.0f64, 1.0..200.0f64).prop_map(|(x, y, w, h)| BBox2D::new(x, y, x + w, y + h))
}

fn cube() -> impl Strategy<Value = CubeModel> {
    (
        -1.0..1.0f64,
        -1.0..1.0f64,
        0.0..0.5f64,
        -PI..PI,
        0.02..0.5f64,
        0.02..0.5f64,
        0.02..0.5f64,
    )
        .prop_map(|(x, y, z, yaw, a, b, c)| CubeModel {
            t: Vec3::new(x, y, z),
            yaw,
            s: Vec3::new(a, b, c),
        })
}

fn samples(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, n)
}

proptest! {
    #[test]
    fn box_iou_is_a_bounded_symmetric_overlap(a in bbox(), b in bbox()) {
        let ab = bbox_iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - bbox_iou(&b, &a)).abs() < 1e-12);
        prop_assert!((bbox_iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cube_iou_is_a_bounded_symmetric_overlap(a in cube(), b in cube()) {
        for f in [iou_3d, iou_2d_top] {
            let ab = f(&a, &b);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((ab - f(&b, &a)).abs() < 1e-9);
            prop_assert!((f(&a, &a) - 1.0).abs() < 1e-9);
        }
        // The volume overlap never exceeds the footprint overlap times the
        // smaller height ratio, so it is at most the footprint IoU.
        prop_assert!(iou_3d(&a, &b) <= iou_2d_top(&a, &b) + 1e-9);
    }

    #[test]
    fn yaw_error_is_folded_and_symmetric(a in -10.0..10.0f64, b in -10.0..10.0f64) {
        let e = yaw_error_deg(a, b);
        prop_assert!((0.0..=45.0 + 1e-9).contains(&e));
        prop_assert!((e - yaw_error_deg(b, a)).abs() < 1e-9);
        prop_assert!(yaw_error_deg(a, a + PI / 2.0) < 1e-6);
    }

    #[test]
    fn mid_ranks_sum_to_the_triangular_number(xs in prop::collection::vec(0..20i32, 1..60)) {
        let xs: Vec<f64> = xs.into_iter().map(f64::from).collect();
        let n = xs.len() as f64;
        let total: f64 = mid_ranks(&xs).iter().sum();
        prop_assert!((total - n * (n + 1.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn rank_sum_is_symmetric_in_its_samples(p in samples(30), q in samples(25)) {
        let a = rank_sum(&p, &q, 0.05);
        let b = rank_sum(&q, &p, 0.05);
        // The two U statistics always add up to |P|·|Q|.
        prop_assert!((a.w_p + a.w_q - 750.0).abs() < 1e-9);
        prop_assert!((a.w_p - b.w_q).abs() < 1e-9);
        prop_assert_eq!(a.accept, b.accept);
    }

    #[test]
    fn double_t_test_is_symmetric(
        a in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), 2..12),
        b in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), 2..12),
    ) {
        let a: Vec<Vec3> = a.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect();
        let b: Vec<Vec3> = b.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect();
        prop_assert_eq!(double_t_test(&a, &b, 0.05), double_t_test(&b, &a, 0.05));
    }

    #[test]
    fn t_test_accepts_the_sample_mean(xs in samples(12)) {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let out = single_t_test_1d(&xs, m, 0.05);
        prop_assert!(out.is_accept() || out == TestOutcome::DegenerateVariance);
    }

    #[test]
    fn anomaly_score_decreases_with_path_length(h1 in 0.0..30.0f64, h2 in 0.0..30.0f64, psi in 2usize..512) {
        let c = average_path_length(psi);
        let (s1, s2) = (score_from_path_length(h1, c), score_from_path_length(h2, c));
        prop_assert!(s1 > 0.0 && s1 <= 1.0);
        if h1 < h2 {
            prop_assert!(s1 > s2);
        }
    }

    #[test]
    fn filtering_keeps_a_subset_of_at_least_four_points(
        pts in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), 10..80),
        seed in 0u64..1000,
    ) {
        let pts: Vec<Vec3> = pts.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect();
        let forest = build_forest(&pts, 20, 64, seed).unwrap();
        let r = filter_outliers(&pts, &forest);
        prop_assert!(r.inliers.len() >= 4);
        prop_assert!(r.indices.windows(2).all(|w| w[0] < w[1]));
        for (&i, p) in r.indices.iter().zip(&r.inliers) {
            prop_assert_eq!(pts[i], *p);
        }
    }

    #[test]
    fn centroid_and_scale_are_translation_equivariant(
        pts in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), 4..40),
        shift in (-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64),
    ) {
        let pts: Vec<Vec3> = pts.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect();
        let d = Vec3::new(shift.0, shift.1, shift.2);
        let moved: Vec<Vec3> = pts.iter().map(|p| p + d).collect();
        let (t0, s0) = estimate_centroid_scale(&pts).unwrap();
        let (t1, s1) = estimate_centroid_scale(&moved).unwrap();
        prop_assert!((t1 - t0 - d).norm() < 1e-9);
        prop_assert!((s1 - s0).norm() < 1e-9);
    }

    #[test]
    fn grid_entropy_is_a_binary_entropy(p in 0.0..=1.0f64) {
        let h = grid_entropy(p).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&h));
        prop_assert!((h - grid_entropy(1.0 - p).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn grid_counts_cover_every_cell_and_entropy_never_rises(c in cube(), az in -PI..PI) {
        let mut grid = SurfaceGrid::new(&c, 0.05);
        let total = grid.counts().total();
        let (h0, _) = grid.entropy();
        let eye = c.t + Vec3::new(1.0 * az.cos(), 1.0 * az.sin(), 0.8);
        let camera = Pose::look_at(eye, c.t, Vec3::z());
        grid.update(&c, &[c.t + Vec3::new(0.0, 0.0, c.s.z)], &camera, &default_intrinsics());
        let counts = grid.counts();
        prop_assert_eq!(counts.unknown + counts.occupied + counts.free, total);
        prop_assert!(grid.entropy().0 <= h0 + 1e-9);
    }

    #[test]
    fn rounding_keeps_nine_significant_digits(x in -1e6..1e6f64) {
        let r = round_sig(x);
        prop_assert!((r - x).abs() <= 1e-8 * x.abs().max(1e-300));
        prop_assert_eq!(round_sig(r), r);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn matching_recovers_any_similarity(
        scale in 0.3..3.0f64,
        yaw in -PI..PI,
        tx in -10.0..10.0f64,
        ty in -10.0..10.0f64,
        tz in -1.0..1.0f64,
        seed in 0u64..1000,
    ) {
        let nodes = room_nodes();
        let truth = Similarity4 { scale, yaw, translation: Vec3::new(tx, ty, tz) };
        // A metric edge cutoff would change the graph under scaling; the
        // nearest-neighbour structure alone is similarity invariant.
        let cfg = TopoConfig { d_max: 1e3, ..TopoConfig::default() };
        let a = build_topo_map(nodes.clone(), cfg.k_nn, cfg.d_max);
        let b = build_topo_map(transform_nodes(&nodes, &truth), cfg.k_nn, cfg.d_max);
        let m = match_maps(&a, &b, &cfg, seed).unwrap();
        let t = m.transform.expect("transform");
        prop_assert!((t.scale - scale).abs() < 1e-6);
        prop_assert!(((t.yaw - yaw + PI).rem_euclid(2.0 * PI) - PI).abs() < 1e-6);
        prop_assert!((t.translation - truth.translation).norm() < 1e-6);
        for &k in &m.inliers {
            let p = m.pairs[k];
            prop_assert!((t.apply(&a.nodes[p.a].t) - b.nodes[p.b].t).norm() < m.inlier_radius);
        }
    }
}

/// Twelve distinct boxes at fixed, irregular positions.
fn room_nodes() -> Vec<TopoNode> {
    let labels = ["chair", "box", "monitor", "suitcase"];
    (0..12)
        .map(|i| {
            let a = i as f64 * 2.39996;
            let r = 1.0 + 0.35 * i as f64;
            let cube = CubeModel {
                t: Vec3::new(r * a.cos(), r * a.sin(), 0.3 + 0.05 * (i % 3) as f64),
                yaw: 0.4 * i as f64 - 2.0,
                s: Vec3::new(0.2 + 0.01 * i as f64, 0.15, 0.3),
            };
            TopoNode::from_model(i, labels[i as usize % 4], &objmap_core::parameterization::ObjectModel::Cube(cube))
        })
        .collect()
}

#[test]
fn average_path_length_matches_the_harmonic_formula() {
    // c(n) = 2 H(n-1) - 2 (n-1)/n with H(i) = ln i + γ.
    let gamma = 0.577_215_664_9;
    let c = |n: f64| 2.0 * ((n - 1.0).ln() + gamma) - 2.0 * (n - 1.0) / n;
    assert!((average_path_length(256) - c(256.0)).abs() < 1e-12);
    assert!((average_path_length(256) - 10.244).abs() < 1e-3);
    assert!((score_from_path_length(c(256.0), c(256.0)) - 0.5).abs() < 1e-15);
}

#[test]
fn unit_boxes_offset_by_half_overlap_by_a_third() {
    let a = CubeModel { t: Vec3::zeros(), yaw: 0.0, s: Vec3::repeat(0.5) };
    let b = CubeModel { t: Vec3::new(0.5, 0.0, 0.0), ..a };
    // Intersection 0.5, union 1.5.
    assert!((iou_3d(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    assert!((iou_2d_top(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
}

// ------------------------------------------------------------- end to end

fn three_object_scene() -> SimScene {
    let object = |id: u64, label: &str, shape: Shape, x: f64, y: f64, s: [f64; 3]| SimObject {
        id,
        label: label.into(),
        shape,
        t: Vec3::new(x, y, 0.75 + s[2]),
        yaw: 0.3 * id as f64,
        s: Vec3::from(s),
        texture_density: 0.5,
    };
    SimScene {
        table: Table {
            center: Vector2::zeros(),
            half_size: Vector2::new(0.6, 0.4),
            height: 0.75,
        },
        objects: vec![
            object(1, "book", Shape::Box, -0.35, -0.15, [0.10, 0.07, 0.025]),
            object(2, "cup", Shape::Cylinder, 0.0, 0.2, [0.04, 0.04, 0.05]),
            object(3, "laptop", Shape::Box, 0.35, -0.1, [0.15, 0.11, 0.02]),
        ],
        seed: 0,
        intrinsics: default_intrinsics(),
        sensor: SensorModel::default(),
    }
}

fn orbit(scene: &SimScene, n: usize) -> Vec<objmap_core::pipeline::Frame> {
    let center = scene.table.center3();
    (0..n)
        .map(|i| {
            let a = -PI / 2.0 + 0.6 * (i as f64 / n as f64 - 0.5);
            let eye = center + Vec3::new(1.1 * a.cos(), 1.1 * a.sin(), 0.7);
            simulate_observation(scene, &Pose::look_at(eye, center, Vec3::z()), i as u64)
        })
        .collect()
}

#[test]
fn well_separated_objects_map_one_to_one() {
    let scene = three_object_scene();
    scene.validate().unwrap();
    let frames = orbit(&scene, 20);
    let (_, map) = run_mapping(&frames, &Config::default(), 7);
    let mut labels: Vec<&str> = map.objects.iter().map(|o| o.label.as_str()).collect();
    labels.sort_unstable();
    assert_eq!(labels, ["book", "cup", "laptop"]);
    for o in &map.objects {
        let gt = scene.objects.iter().find(|g| g.label == o.label).unwrap();
        assert!((o.t - gt.t).norm() < 0.05, "{} off by {}", o.label, (o.t - gt.t).norm());
    }
}

#[test]
fn object_count_is_bounded_by_detections() {
    let scene = three_object_scene();
    let frames = orbit(&scene, 12);
    let detections: usize = frames.iter().map(|f| f.detections.len()).sum();
    for strategy in [Association::Ensemble, Association::IouOnly, Association::IouNp, Association::IouTTest] {
        let mut cfg = Config::default();
        cfg.association.strategy = strategy;
        let (_, map) = run_mapping(&frames, &cfg, 1);
        assert!(!map.objects.is_empty() && map.objects.len() <= detections, "{strategy:?}");
    }
}

#[test]
fn replaying_a_frame_adds_no_object() {
    let scene = three_object_scene();
    let mut frames = orbit(&scene, 10);
    let (_, before) = run_mapping(&frames, &Config::default(), 3);
    let mut again = frames.last().unwrap().clone();
    again.frame_id += 1;
    frames.push(again);
    let (_, after) = run_mapping(&frames, &Config::default(), 3);
    assert_eq!(before.objects.len(), after.objects.len());
}

#[test]
fn frames_survive_a_round_trip() {
    let frames = orbit(&three_object_scene(), 4);
    let mut buf = Vec::new();
    write_frames(&mut buf, &frames).unwrap();
    let back = read_frames(buf.as_slice()).unwrap();
    assert_eq!(back.len(), frames.len());
    let mut again = Vec::new();
    write_frames(&mut again, &back).unwrap();
    assert_eq!(buf, again);
    let (_, a) = run_mapping(&frames, &Config::default(), 0);
    let (_, b) = run_mapping(&back, &Config::default(), 0);
    assert_eq!(a.objects.len(), b.objects.len());
    for (x, y) in a.objects.iter().zip(&b.objects) {
        assert!((x.t - y.t).norm() < 1e-6);
    }
}

#[test]
fn mapping_is_deterministic() {
    let frames = orbit(&three_object_scene(), 8);
    let (_, a) = run_mapping(&frames, &Config::default(), 11);
    let (_, b) = run_mapping(&frames, &Config::default(), 11);
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
}

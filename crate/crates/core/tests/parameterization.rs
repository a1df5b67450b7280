mod iforest {
    #![allow(unused_imports)]
    use rand::seq::index::sample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use serde::{Deserialize, Serialize};
    use objmap_core::error::ParamError;
    use objmap_core::geometry::Vec3;
    use objmap_core::parameterization::iforest::*;
    use approx::assert_relative_eq;
    use rand_distr::{Distribution, Normal};

    fn cloud(n: usize, sigma: f64, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Normal::new(0.0, sigma).unwrap();
        (0..n)
            .map(|_| Vec3::new(g.sample(&mut rng), g.sample(&mut rng), g.sample(&mut rng)))
            .collect()
    }

    #[test]
    fn normalizer_for_256() {
        // Direct evaluation: 2 (ln 255 + γ) - 2 * 255 / 256.
        let expected = 2.0 * (255f64.ln() + 0.5772156649) - 2.0 * 255.0 / 256.0;
        assert_relative_eq!(average_path_length(256), expected, epsilon = 1e-12);
        assert_relative_eq!(average_path_length(256), 10.2448, epsilon = 1e-3);
        assert_eq!(average_path_length(1), 0.0);
    }

    #[test]
    fn score_is_half_at_normalizer() {
        assert_eq!(score_from_path_length(7.5, 7.5), 0.5);
        assert!(score_from_path_length(2.0, 7.5) > score_from_path_length(3.0, 7.5));
    }

    #[test]
    fn forest_is_reproducible() {
        let x = cloud(256, 1.0, 1);
        let a = build_forest(&x, 100, 256, 42).unwrap();
        let b = build_forest(&x, 100, 256, 42).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = build_forest(&x, 100, 256, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn constant_points_make_single_leaves() {
        let x = vec![Vec3::new(1.0, 2.0, 3.0); 50];
        let f = build_forest(&x, 10, 32, 0).unwrap();
        for t in &f.trees {
            assert_eq!(t.nodes, vec![Node::External { size: 32 }]);
        }
    }

    #[test]
    fn height_cap_respected() {
        let x = cloud(300, 1.0, 2);
        let f = build_forest(&x, 20, 2, 0).unwrap();
        assert_eq!(f.height_limit, 1);
        assert!(f.trees.iter().all(|t| t.depth() <= 1));
        let f = build_forest(&x, 20, 256, 0).unwrap();
        assert!(f.trees.iter().all(|t| t.depth() <= 8));
    }

    #[test]
    fn too_few_points() {
        let x = cloud(9, 1.0, 0);
        assert_eq!(
            build_forest(&x, 10, 9, 0),
            Err(ParamError::TooFewPoints { needed: 10, got: 9 })
        );
    }

    #[test]
    fn splits_lie_within_routed_range() {
        let x = cloud(200, 1.0, 9);
        let f = build_forest(&x, 10, 128, 5).unwrap();
        // Every internal split must separate at least the extremes of the
        // global cloud along its dimension.
        for t in &f.trees {
            for n in &t.nodes {
                if let Node::Internal { dim, split, .. } = n {
                    let lo = x.iter().map(|p| p[*dim as usize]).fold(f64::INFINITY, f64::min);
                    let hi = x.iter().map(|p| p[*dim as usize]).fold(f64::NEG_INFINITY, f64::max);
                    assert!(*split >= lo && *split < hi);
                }
            }
        }
    }

    #[test]
    fn isolated_point_scores_highest() {
        let mut x = cloud(500, 0.05, 4);
        x.push(Vec3::new(0.5, 0.0, 0.0));
        let f = build_forest(&x, 100, 256, 7).unwrap();
        let scores: Vec<f64> = x.iter().map(|p| f.anomaly_score(p)).collect();
        let (imax, smax) = scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        assert_eq!(imax, 500);
        assert!(*smax > 0.6, "outlier score {smax}");
    }

    #[test]
    fn clean_cloud_keeps_most_points() {
        let x = cloud(500, 0.05, 8);
        let f = build_forest(&x, 100, 256, 8).unwrap();
        let r = filter_outliers(&x, &f);
        assert!(r.inliers.len() as f64 >= 0.9 * 500.0, "kept {}", r.inliers.len());
    }

    #[test]
    fn floor_rule_keeps_four() {
        let big = cloud(50, 1.0, 3);
        let f = build_forest(&big, 10, 32, 0).unwrap();
        let four = &big[..4];
        assert_eq!(filter_outliers(four, &f).inliers.len(), 4);
        // Far-away points would all be rejected; the floor keeps the best four.
        let far: Vec<Vec3> = (0..6).map(|i| Vec3::repeat(100.0 + i as f64)).collect();
        let r = filter_outliers(&far, &f);
        assert_eq!(r.inliers.len(), 4);
    }
}

mod estimate {
    #![allow(unused_imports)]
    use serde::{Deserialize, Serialize};
    use objmap_core::error::ParamError;
    use objmap_core::geometry::{rot_z, CubeModel, QuadricModel, Vec3};
    use objmap_core::parameterization::iforest::{build_forest, filter_outliers, FilterResult, IsolationForest};
    use objmap_core::parameterization::orientation::{
        init_orientation, refine_pose, OrientationInit, RefineParams, RefineResult,
        SegmentObservation, MIN_HALF_EXTENT,
    };
    use objmap_core::parameterization::*;
    use approx::assert_relative_eq;

    #[test]
    fn unit_cube_corners() {
        let pts: Vec<Vec3> = (0..8)
            .map(|i| {
                Vec3::new(
                    if i & 1 != 0 { 0.5 } else { -0.5 },
                    if i & 2 != 0 { 0.5 } else { -0.5 },
                    if i & 4 != 0 { 0.5 } else { -0.5 },
                )
            })
            .collect();
        let (t, s) = estimate_centroid_scale(&pts).unwrap();
        assert_relative_eq!(t, Vec3::zeros());
        assert_relative_eq!(s, Vec3::repeat(0.5));

        let d = Vec3::new(1.0, -2.0, 3.0);
        let shifted: Vec<Vec3> = pts.iter().map(|p| p + d).collect();
        let (t2, s2) = estimate_centroid_scale(&shifted).unwrap();
        assert_relative_eq!(t2, d, epsilon = 1e-12);
        assert_relative_eq!(s2, s, epsilon = 1e-12);
    }

    #[test]
    fn flat_cloud_clamps_height() {
        let pts: Vec<Vec3> = (0..10)
            .map(|i| Vec3::new(i as f64 * 0.1, (i % 3) as f64 * 0.1, 0.7))
            .collect();
        let (_, s) = estimate_centroid_scale(&pts).unwrap();
        assert_eq!(s.z, MIN_HALF_EXTENT);
    }

    #[test]
    fn too_few_inliers() {
        assert!(matches!(
            estimate_centroid_scale(&[Vec3::zeros(); 3]),
            Err(ParamError::TooFewPoints { needed: 4, got: 3 })
        ));
        assert!(matches!(
            parameterize(&[Vec3::zeros(); 9], &[], ModelKind::Cube, &ParamConfig::default(), 0),
            Err(ParamError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn model_kind_by_label() {
        assert_eq!(ModelKind::for_label("book"), ModelKind::Cube);
        assert_eq!(ModelKind::for_label("keyboard"), ModelKind::Cube);
        assert_eq!(ModelKind::for_label("chair"), ModelKind::Cube);
        assert_eq!(ModelKind::for_label("ball"), ModelKind::Quadric);
        assert_eq!(ModelKind::for_label("bottle"), ModelKind::Quadric);
        assert_eq!(ModelKind::for_label("cup"), ModelKind::Quadric);
        assert_eq!(ModelKind::for_label("zebra"), ModelKind::Cube);
    }

    #[test]
    fn quadric_pipeline_keeps_zero_yaw() {
        let pts: Vec<Vec3> = (0..64)
            .map(|i| {
                let a = i as f64 * 0.3;
                Vec3::new(a.cos() * 0.05, a.sin() * 0.05, (i % 8) as f64 * 0.02)
            })
            .collect();
        let est = parameterize(&pts, &[], ModelKind::Quadric, &ParamConfig::default(), 1).unwrap();
        assert_eq!(est.model.kind(), ModelKind::Quadric);
        assert_eq!(est.model.yaw(), 0.0);
        assert!(est.inlier_count <= pts.len());
        let again = parameterize(&pts, &[], ModelKind::Quadric, &ParamConfig::default(), 1).unwrap();
        assert_eq!(est, again);
    }
}

mod orientation {
    #![allow(unused_imports)]
    use std::f64::consts::{FRAC_PI_2, PI};
    use serde::{Deserialize, Serialize};
    use objmap_core::geometry::{
        angle_between_lines, line_angle, normalize_yaw, project_unchecked, CameraIntrinsics,
        CubeModel, LineSegment2D, Pose, Projection, Vec2, CUBE_EDGES,
    };
    use objmap_core::parameterization::orientation::*;
    use objmap_core::geometry::Vec3;
    use approx::assert_relative_eq;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(525.0, 525.0, 319.5, 239.5, 640, 480).unwrap()
    }

    /// Projected edges of `cube` seen from `eye`, emitted as segments.
    fn observe(cube: &CubeModel, eye: Vec3) -> SegmentObservation {
        let camera = Pose::look_at(eye, cube.t, Vec3::z());
        let px: Vec<Option<Vec2>> = (0..8)
            .map(|i| project_unchecked(&cube.to_world(&cube.object_vertex(i)), &k(), &camera).pixel())
            .collect();
        let segments = CUBE_EDGES
            .iter()
            .filter_map(|&(a, b)| Some(LineSegment2D { p0: px[a]?, p1: px[b]? }))
            .collect();
        SegmentObservation {
            intrinsics: k(),
            camera,
            segments,
        }
    }

    fn ring(cube: &CubeModel, n: usize) -> Vec<SegmentObservation> {
        (0..n)
            .map(|i| {
                let a = 0.3 + i as f64 * 0.5;
                observe(cube, cube.t + Vec3::new(1.2 * a.cos(), 1.2 * a.sin(), 0.8))
            })
            .collect()
    }

    #[test]
    fn perfect_alignment_score() {
        let cube = CubeModel::new(Vec3::new(0.0, 0.0, 0.1), 0.4, Vec3::new(0.2, 0.1, 0.1)).unwrap();
        let obs = observe(&cube, Vec3::new(1.0, 0.5, 0.9));
        let fs = frame_score(&cube, &obs).unwrap();
        assert_relative_eq!(fs.score, 1.5, epsilon = 1e-9);
        assert_eq!(fs.n_aligned, fs.n_segments);
    }

    #[test]
    fn recovers_yaw_within_one_step() {
        let cube = CubeModel::new(Vec3::new(0.0, 0.0, 0.1), 0.4, Vec3::new(0.2, 0.1, 0.08)).unwrap();
        let init = init_orientation(&cube.t, &cube.s, &ring(&cube, 4));
        assert!(init.has_segments());
        assert_eq!(init.scores.len(), YAW_SAMPLES);
        assert!((init.yaw - 0.4).abs() <= PI / 30.0, "yaw {}", init.yaw);
    }

    #[test]
    fn no_segments_falls_back_to_zero() {
        let obs = vec![SegmentObservation {
            intrinsics: k(),
            camera: Pose::identity(),
            segments: vec![],
        }];
        let init = init_orientation(&Vec3::new(0.0, 0.0, 2.0), &Vec3::repeat(0.1), &obs);
        assert_eq!(init.yaw, 0.0);
        assert!(init.error.is_infinite());
    }

    #[test]
    fn score_ignores_segment_direction() {
        let cube = CubeModel::new(Vec3::new(0.0, 0.0, 0.1), -0.7, Vec3::new(0.2, 0.1, 0.08)).unwrap();
        let obs = ring(&cube, 3);
        let flipped: Vec<SegmentObservation> = obs
            .iter()
            .map(|o| SegmentObservation {
                segments: o.segments.iter().map(|s| s.reversed()).collect(),
                ..o.clone()
            })
            .collect();
        let a = init_orientation(&cube.t, &cube.s, &obs);
        let b = init_orientation(&cube.t, &cube.s, &flipped);
        assert_eq!(a, b);
    }

    #[test]
    fn refine_is_fixed_point_at_optimum() {
        let cube = CubeModel::new(Vec3::new(0.0, 0.0, 0.1), 0.3, Vec3::new(0.2, 0.1, 0.08)).unwrap();
        let obs = ring(&cube, 4);
        let r = refine_pose(&cube, &obs, &RefineParams::default());
        assert_eq!(r.cube, cube);
    }

    #[test]
    fn refine_fixes_yaw_perturbation() {
        let gt = CubeModel::new(Vec3::new(0.0, 0.0, 0.1), 0.3, Vec3::new(0.2, 0.1, 0.08)).unwrap();
        let obs = ring(&gt, 4);
        let mut start = gt;
        start.yaw += 3f64.to_radians();
        let r = refine_pose(&start, &obs, &RefineParams::default());
        assert!((r.cube.yaw - gt.yaw).abs() < 1f64.to_radians(), "yaw {}", r.cube.yaw);
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn refine_shrinks_inflated_scale() {
        let gt = CubeModel::new(Vec3::new(0.0, 0.0, 0.1), -0.5, Vec3::new(0.2, 0.12, 0.08)).unwrap();
        let obs = ring(&gt, 5);
        let mut start = gt;
        start.s *= 1.2;
        let r = refine_pose(&start, &obs, &RefineParams::default());
        for i in 0..3 {
            let rel = (r.cube.s[i] - gt.s[i]).abs() / gt.s[i];
            assert!(rel < 0.05, "axis {i}: {} vs {}", r.cube.s[i], gt.s[i]);
        }
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn refine_without_parallel_segments_is_identity() {
        let cube = CubeModel::new(Vec3::new(0.0, 0.0, 2.0), 0.0, Vec3::repeat(0.1)).unwrap();
        let obs = vec![SegmentObservation {
            intrinsics: k(),
            camera: Pose::identity(),
            segments: vec![],
        }];
        let r = refine_pose(&cube, &obs, &RefineParams::default());
        assert_eq!(r.cube, cube);
        assert!(r.trace.is_empty());
    }
}

mod hypothesis {
    #![allow(unused_imports)]
    use serde::{Deserialize, Serialize};
    use objmap_core::geometry::Vec3;
    use objmap_core::stats::{mean, normal_two_sided_quantile, sample_variance, t_two_sided_quantile};
    use objmap_core::association::hypothesis::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    /// Brute-force Mann–Whitney U: count pairs with p > q, ties count half.
    fn u_by_pairs(p: &[f64], q: &[f64]) -> f64 {
        let mut u = 0.0;
        for &a in p {
            for &b in q {
                if a > b {
                    u += 1.0;
                } else if a == b {
                    u += 0.5;
                }
            }
        }
        u
    }

    #[test]
    fn hand_computed_rank_sums() {
        let r = rank_sum(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0], 0.05);
        assert_eq!((r.w_p, r.w_q, r.w), (0.0, 9.0, 0.0));
        assert_eq!(r.mean, 4.5);
        assert_relative_eq!(r.variance, 5.25);
        assert_relative_eq!(r.lower, 0.00909, epsilon = 1e-4);
        assert_relative_eq!(r.upper, 8.99091, epsilon = 1e-4);
        assert!(!r.accept);

        let r = rank_sum(&[1.0, 3.0, 5.0], &[2.0, 4.0, 6.0], 0.05);
        assert_eq!((r.w_p, r.w_q, r.w), (3.0, 6.0, 3.0));
        assert!(r.accept);

        let r = rank_sum(&[1.0; 4], &[2.0; 4], 0.05);
        assert_eq!(r.mean, 8.0);
    }

    #[test]
    fn small_samples_not_applicable() {
        assert_eq!(
            rank_sum_test(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], 0.05),
            TestOutcome::NotApplicable
        );
    }

    #[test]
    fn mid_ranks_for_ties() {
        assert_eq!(mid_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn np_test_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p: Vec<Vec3> = (0..100)
            .map(|_| Vec3::new(rng.random(), rng.random::<f64>() * 2.0, rng.random::<f64>() * 0.5))
            .collect();
        let jittered: Vec<Vec3> = p
            .iter()
            .map(|v| v + Vec3::repeat(1e-9 * rng.random::<f64>()))
            .collect();
        assert_eq!(np_test_3d(&p, &jittered, 0.05), TestOutcome::Accept);

        let shifted: Vec<Vec3> = p.iter().map(|v| v + Vec3::new(10.0, 0.0, 0.0)).collect();
        assert_eq!(np_test_3d(&p, &shifted, 0.05), TestOutcome::Reject);

        // Distinct per-axis distributions: permuting axes changes at least one marginal.
        let permuted: Vec<Vec3> = p.iter().map(|v| Vec3::new(v.y, v.z, v.x)).collect();
        assert_eq!(np_test_3d(&p, &permuted, 0.05), TestOutcome::Reject);
    }

    #[test]
    fn shifted_cloud_rejection_rate() {
        // Monte-Carlo oracle: a cloud moved by ten times its extent along x.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trials = 200;
        let mut rejected = 0;
        for _ in 0..trials {
            let p: Vec<Vec3> = (0..100)
                .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
                .collect();
            let q: Vec<Vec3> = (0..100)
                .map(|_| Vec3::new(10.0 + rng.random::<f64>(), rng.random(), rng.random()))
                .collect();
            if np_test_3d(&p, &q, 0.05) == TestOutcome::Reject {
                rejected += 1;
            }
        }
        assert!(rejected as f64 / trials as f64 > 0.99);
    }

    #[test]
    fn single_t_examples() {
        // Mean (1,1,1) with spread 0.2 per axis.
        let d = [-0.2, 0.2, 0.0, -0.2, 0.2];
        let hist: Vec<Vec3> = d.iter().map(|x| Vec3::repeat(1.0 + x)).collect();
        let sd = sample_variance(&hist.iter().map(|v| v.x).collect::<Vec<_>>()).sqrt();
        assert_relative_eq!(sd, 0.2, epsilon = 1e-12);
        assert_eq!(single_t_test(&hist, &Vec3::repeat(1.0), 0.05), TestOutcome::Accept);

        // Mean 0, sd 0.1, n = 10; c = (1,0,0) gives t_x = -31.6 against 2.262.
        let base: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let scale = 0.1 / sample_variance(&base).sqrt();
        let hist: Vec<Vec3> = base.iter().map(|b| Vec3::repeat(b * scale)).collect();
        let col: Vec<f64> = hist.iter().map(|v| v.x).collect();
        let t = (mean(&col) - 1.0) / (0.1 / 10f64.sqrt());
        assert_relative_eq!(t, -31.62, epsilon = 1e-2);
        assert_eq!(
            single_t_test(&hist, &Vec3::new(1.0, 0.0, 0.0), 0.05),
            TestOutcome::Reject
        );

        let flat = vec![Vec3::repeat(2.0); 5];
        assert_eq!(
            single_t_test(&flat, &Vec3::repeat(2.0), 0.05),
            TestOutcome::DegenerateVariance
        );
        assert_eq!(
            single_t_test(&hist[..2], &Vec3::zeros(), 0.05),
            TestOutcome::NotApplicable
        );
    }

    #[test]
    fn double_t_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let c1: Vec<Vec3> = (0..8)
            .map(|_| Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng)))
            .collect();
        assert_eq!(double_t_test(&c1, &c1.clone(), 0.05), TestOutcome::Accept);

        let c2: Vec<Vec3> = (0..8)
            .map(|_| {
                Vec3::new(1.0 + noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng))
            })
            .collect();
        assert_eq!(double_t_test(&c1, &c2, 0.05), TestOutcome::Reject);
    }

    #[test]
    fn pooled_std_two_and_two() {
        // Equal variance, n1 = n2 = 2: the pooled error is sigma * sqrt(1/2 + 1/2) = sigma.
        let a = [0.0, 2.0];
        let b = [5.0, 7.0];
        let sigma = sample_variance(&a).sqrt();
        assert_relative_eq!(pooled_std(&a, &b), sigma, epsilon = 1e-12);
        let t = (mean(&a) - mean(&b)) / pooled_std(&a, &b);
        assert_relative_eq!(t, (mean(&a) - mean(&b)) / sigma, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn w_matches_pair_counting(
            p in prop::collection::vec(0u8..20, 1..30),
            q in prop::collection::vec(0u8..20, 1..30),
        ) {
            let p: Vec<f64> = p.into_iter().map(f64::from).collect();
            let q: Vec<f64> = q.into_iter().map(f64::from).collect();
            let r = rank_sum(&p, &q, 0.05);
            prop_assert!((r.w_p - u_by_pairs(&p, &q)).abs() < 1e-9);
            prop_assert!((r.w_q - u_by_pairs(&q, &p)).abs() < 1e-9);
            prop_assert!((r.w_p + r.w_q - (p.len() * q.len()) as f64).abs() < 1e-9);
        }

        #[test]
        fn double_t_symmetric(
            a in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), 2..12),
            b in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), 2..12),
        ) {
            let a: Vec<Vec3> = a.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect();
            let b: Vec<Vec3> = b.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect();
            prop_assert_eq!(double_t_test(&a, &b, 0.05), double_t_test(&b, &a, 0.05));
        }
    }
}

mod association {
    #![allow(unused_imports)]
    use std::collections::BTreeMap;
    use rand::seq::index::sample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use serde::{Deserialize, Serialize};
    use objmap_core::geometry::{bbox_iou, project_bbox, BBox2D, CameraIntrinsics, Pose, Vec3};
    use objmap_core::parameterization::ObjectEstimate;
    use objmap_core::association::hypothesis::{
        double_t_test, np_test_3d, rank_sum, rank_sum_test, single_t_test, single_t_test_1d,
        TestOutcome,
    };
    use objmap_core::association::*;
    use objmap_core::geometry::{cube_vertices, CubeModel};
    use rand_distr::{Distribution, Normal};

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(525.0, 525.0, 319.5, 239.5, 640, 480).unwrap()
    }

    fn camera() -> Pose {
        Pose::look_at(Vec3::new(0.0, -2.0, 1.0), Vec3::zeros(), Vec3::z())
    }

    /// Points on the surface of a box plus the detection it produces.
    fn observe(center: Vec3, label: &str, frame_id: u64, seed: u64) -> LocalObject {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cube = CubeModel::new(center, 0.0, Vec3::new(0.1, 0.08, 0.06)).unwrap();
        let pts: Vec<Vec3> = (0..60)
            .map(|_| {
                let o = Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                cube.to_world(&o.component_mul(&cube.s))
            })
            .collect();
        let bbox = project_bbox(cube_vertices(&cube).iter(), &k(), &camera()).unwrap();
        LocalObject::new(label, bbox, pts, frame_id)
    }

    #[test]
    fn empty_map_spawns_all() {
        let mut map = GlobalMap::new(0);
        let locals = vec![
            observe(Vec3::new(-0.5, 0.0, 0.0), "book", 0, 1),
            observe(Vec3::new(0.0, 0.0, 0.0), "cup", 0, 2),
            observe(Vec3::new(0.5, 0.0, 0.0), "book", 0, 3),
        ];
        let r = associate_frame(&mut map, &locals, &k(), &camera(), &AssociationConfig::default());
        assert_eq!(r.created().len(), 3);
        assert_eq!(map.len(), 3);
    }

    #[test]
    fn replay_keeps_object_count() {
        let cfg = AssociationConfig::default();
        let mut map = GlobalMap::new(0);
        let scene = |f: u64| {
            vec![
                observe(Vec3::new(-0.5, 0.0, 0.0), "book", f, 10 + f),
                observe(Vec3::new(0.5, 0.3, 0.0), "cup", f, 20 + f),
            ]
        };
        associate_frame(&mut map, &scene(0), &k(), &camera(), &cfg);
        let n = map.len();
        for f in 1..6 {
            let r = associate_frame(&mut map, &scene(f), &k(), &camera(), &cfg);
            assert_eq!(r.matched_pairs().len(), 2, "frame {f}");
            assert_eq!(map.len(), n);
        }
        // Replaying an already absorbed observation does not add objects.
        let mut again = scene(5);
        for l in &mut again {
            l.frame_id = 6;
        }
        associate_frame(&mut map, &again, &k(), &camera(), &cfg);
        assert_eq!(map.len(), n);
    }

    #[test]
    fn label_mismatch_never_matches() {
        let cfg = AssociationConfig::default();
        let mut map = GlobalMap::new(0);
        associate_frame(&mut map, &[observe(Vec3::zeros(), "book", 0, 1)], &k(), &camera(), &cfg);
        let r = associate_frame(&mut map, &[observe(Vec3::zeros(), "cup", 1, 2)], &k(), &camera(), &cfg);
        assert!(r.decisions[0].candidates.is_empty());
        assert_eq!(map.len(), 2);
    }

    #[test]
    fn motion_iou_cases() {
        let mut g = GlobalObject::from_local(0, &observe(Vec3::zeros(), "book", 0, 1), Vec3::zeros());
        let b = |x: f64| BBox2D::new(x, 10.0, x + 50.0, 60.0);
        g.observations = vec![
            BoxObservation { frame_id: 3, bbox: b(100.0) },
            BoxObservation { frame_id: 4, bbox: b(110.0) },
        ];
        let mut l = LocalObject::new("book", b(120.0), vec![], 5);
        assert_eq!(motion_iou(&g, &l), Some(1.0));
        l.frame_id = 6;
        assert_eq!(motion_iou(&g, &l), None);

        g.observations = vec![
            BoxObservation { frame_id: 3, bbox: b(100.0) },
            BoxObservation { frame_id: 4, bbox: b(100.0) },
        ];
        let l = LocalObject::new("book", b(100.0), vec![], 5);
        assert_eq!(motion_iou(&g, &l), Some(1.0));
    }

    #[test]
    fn highest_project_iou_wins() {
        let cfg = AssociationConfig::default();
        let mut map = GlobalMap::new(0);
        // Two same-label objects, the second slightly offset from the detection.
        let a = observe(Vec3::new(0.0, 0.0, 0.0), "book", 0, 1);
        let b = observe(Vec3::new(0.06, 0.0, 0.0), "book", 0, 2);
        map.spawn(&a, a.centroid.unwrap());
        map.spawn(&b, b.centroid.unwrap());
        let det = observe(Vec3::new(0.0, 0.0, 0.0), "book", 3, 4);
        let r = associate_frame(&mut map, &[det], &k(), &camera(), &AssociationConfig {
            strategy: Strategy::IouNp,
            ..cfg
        });
        let d = &r.decisions[0];
        let scores: Vec<(u64, f64)> = d
            .candidates
            .iter()
            .filter(|c| c.accepted)
            .map(|c| (c.global_id, c.project_iou.unwrap()))
            .collect();
        let best = scores.iter().max_by(|x, y| x.1.total_cmp(&y.1)).unwrap().0;
        assert_eq!(d.matched, Some(best));
        assert_eq!(d.matched, Some(0));
    }

    fn history(center: Vec3, n: usize, sigma: f64, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Normal::new(0.0, sigma).unwrap();
        (0..n)
            .map(|_| center + Vec3::new(g.sample(&mut rng), g.sample(&mut rng), g.sample(&mut rng)))
            .collect()
    }

    fn object_with_history(id: u64, label: &str, hist: Vec<Vec3>) -> GlobalObject {
        GlobalObject {
            id,
            votes: BTreeMap::from([(label.to_string(), hist.len() as u32)]),
            points: hist.clone(),
            points_seen: hist.len() as u64,
            centroid_history: hist,
            observations: vec![],
            estimate: None,
        }
    }

    #[test]
    fn split_observations_merge() {
        // One object whose observations were split into two globals.
        let all = history(Vec3::new(1.0, 2.0, 0.5), 12, 0.02, 7);
        let mut map = GlobalMap::new(0);
        map.insert(object_with_history(0, "book", all[..6].to_vec()));
        map.insert(object_with_history(1, "book", all[6..].to_vec()));
        let merges = merge_duplicates(&mut map, &AssociationConfig::default());
        assert_eq!(merges.len(), 1);
        assert_eq!((merges[0].kept, merges[0].removed), (0, 1));
        assert_eq!(map.len(), 1);
        assert_eq!(map.objects[&0].centroid_history.len(), 12);
    }

    #[test]
    fn distinct_objects_stay_apart() {
        let mut map = GlobalMap::new(0);
        map.insert(object_with_history(0, "book", history(Vec3::zeros(), 8, 0.02, 1)));
        map.insert(object_with_history(1, "book", history(Vec3::new(2.0, 0.0, 0.0), 8, 0.02, 2)));
        // Within the gate but clearly different.
        map.insert(object_with_history(2, "book", history(Vec3::new(0.5, 0.0, 0.0), 8, 0.02, 3)));
        // Same place, different label.
        map.insert(object_with_history(3, "cup", history(Vec3::zeros(), 8, 0.02, 4)));
        assert!(merge_duplicates(&mut map, &AssociationConfig::default()).is_empty());
        assert_eq!(map.len(), 4);

        let mut single = GlobalMap::new(0);
        single.insert(object_with_history(0, "book", history(Vec3::zeros(), 8, 0.02, 1)));
        assert!(merge_duplicates(&mut single, &AssociationConfig::default()).is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(AssociationConfig::default().validate().is_ok());
        let bad = AssociationConfig { alpha: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = AssociationConfig { iou_project_min: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}

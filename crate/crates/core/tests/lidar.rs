use std::f64::consts::PI;

use nalgebra::{Isometry3, Translation3, UnitQuaternion};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxworld_core::conditions::{BoxTrack, TimedPose};
use voxworld_core::gaussians::{Gaussian3D, GaussianScene, SceneObject, Sky};
use voxworld_core::geom::BoxPose;
use voxworld_core::lidar::{
    cast_lidar, read_points_ply, write_points_ply, LidarOptions, LidarPattern, LidarPatternConfig, LidarReturn,
    DEFAULT_PATTERN_JSON,
};
use voxworld_core::{Execution, Vec3};

mod oracles;
use oracles::{oracle_hit, random_beams, random_gaussians, random_rotation};

fn static_scene(gs: Vec<Gaussian3D>) -> GaussianScene {
    GaussianScene {
        static_gaussians: gs,
        objects: vec![],
        sky: Sky::Gradient,
    }
}

#[test]
fn ranges_match_analytic_ellipsoid_intersections() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let gs = random_gaussians(&mut r, 120, 15.0);
    let beams = random_beams(&mut r, 1000);
    let pattern = LidarPattern::new(beams, 60.0, 0.3, 2.0).unwrap();
    let sensor = Isometry3::from_parts(Translation3::new(0.5, -0.3, 0.2), UnitQuaternion::from_euler_angles(0.0, 0.0, 0.4));
    let scene = static_scene(gs.clone());
    let got = cast_lidar(&scene, &sensor, 0.0, &pattern, &LidarOptions::default());
    let mut by_beam = vec![None; pattern.beams.len()];
    for ret in &got {
        by_beam[ret.beam] = Some(*ret);
    }
    let o = sensor.translation.vector;
    let (mut hits, mut checked) = (0, 0);
    for (b, got) in by_beam.iter().enumerate() {
        let d = sensor.rotation * pattern.direction(b);
        let mut best: Option<(f64, bool)> = None;
        let mut ambiguous = false;
        for g in gs.iter().filter(|g| g.opacity >= 0.3) {
            match oracle_hit(g, 2.0, &o, &d) {
                Some((t, tangent)) if t.is_nan() => ambiguous |= tangent,
                Some((t, tangent)) => {
                    ambiguous |= tangent;
                    if t <= 60.0 && best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, tangent));
                    }
                }
                None => {}
            }
        }
        if ambiguous {
            continue;
        }
        checked += 1;
        match (best, got) {
            (None, None) => {}
            (Some((t, _)), Some(ret)) => {
                hits += 1;
                assert!((ret.range - t).abs() < 1e-9, "beam {b}: {} vs {t}", ret.range);
                assert!((ret.position - (o + d * t)).norm() < 1e-9);
            }
            other => panic!("beam {b}: hit disagreement {other:?}"),
        }
    }
    assert!(checked >= 990, "{checked}");
    assert!(hits >= 200, "{hits}");
}

#[test]
fn bvh_matches_brute_force() {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let scene = static_scene(random_gaussians(&mut r, 500, 30.0));
    let pattern = LidarPattern::new(random_beams(&mut r, 2000), 80.0, 0.5, 2.0).unwrap();
    let sensor = Isometry3::translation(0.0, 0.0, 0.5);
    let brute = cast_lidar(
        &scene,
        &sensor,
        0.0,
        &pattern,
        &LidarOptions {
            use_bvh: false,
            execution: Execution::Sequential,
        },
    );
    for execution in [Execution::Sequential, Execution::Parallel] {
        let fast = cast_lidar(&scene, &sensor, 0.0, &pattern, &LidarOptions { use_bvh: true, execution });
        assert_eq!(fast, brute);
    }
    assert!(brute.len() > 100);
}

#[test]
fn rigid_motion_of_scene_and_sensor_preserves_ranges() {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let gs = random_gaussians(&mut r, 60, 15.0);
    let pattern = LidarPattern::new(random_beams(&mut r, 1500), 50.0, 0.4, 2.0).unwrap();
    let sensor = Isometry3::translation(0.2, 0.1, 0.0);
    let base = cast_lidar(&static_scene(gs.clone()), &sensor, 0.0, &pattern, &LidarOptions::default());
    for _ in 0..3 {
        let iso = Isometry3::from_parts(
            Translation3::new(r.random_range(-100.0..100.0), r.random_range(-100.0..100.0), r.random_range(-5.0..5.0)),
            random_rotation(&mut r),
        );
        let moved: Vec<Gaussian3D> = gs.iter().map(|g| g.transformed(&iso)).collect();
        let got = cast_lidar(&static_scene(moved), &(iso * sensor), 0.0, &pattern, &LidarOptions::default());
        let beams = |v: &[LidarReturn]| v.iter().map(|x| x.beam).collect::<Vec<_>>();
        assert_eq!(beams(&got), beams(&base));
        for (a, b) in base.iter().zip(&got) {
            assert!((a.range - b.range).abs() < 1e-9);
            let p = iso * nalgebra::Point3::from(a.position);
            assert!((p.coords - b.position).norm() < 1e-8);
        }
    }
}

#[test]
fn origin_inside_an_ellipsoid_sees_past_it() {
    let around = Gaussian3D::isotropic(Vec3::zeros(), 1.0, 1.0, [0.5; 3]);
    let ahead = Gaussian3D::isotropic(Vec3::new(10.0, 0.0, 0.0), 0.5, 1.0, [0.5; 3]);
    let pattern = LidarPattern::new(vec![[0.0, 0.0], [PI, 0.0]], 100.0, 0.5, 2.0).unwrap();
    let got = cast_lidar(&static_scene(vec![around, ahead]), &Isometry3::identity(), 0.0, &pattern, &LidarOptions::default());
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].beam, 0);
    assert!((got[0].range - 9.0).abs() < 1e-12);
}

#[test]
fn dynamic_returns_carry_their_instance() {
    let track = BoxTrack::new(
        5,
        Vec3::new(4.0, 2.0, 1.5),
        vec![
            TimedPose {
                t: 0.0,
                pose: BoxPose::new(Vec3::new(10.0, 0.0, 0.0), 0.0),
            },
            TimedPose {
                t: 1.0,
                pose: BoxPose::new(Vec3::new(20.0, 0.0, 0.0), 0.0),
            },
        ],
    )
    .unwrap();
    let scene = GaussianScene {
        static_gaussians: vec![],
        objects: vec![SceneObject {
            instance_id: 5,
            gaussians: vec![Gaussian3D::isotropic(Vec3::zeros(), 0.5, 1.0, [0.5; 3])],
            track,
        }],
        sky: Sky::Gradient,
    };
    let pattern = LidarPattern::new(vec![[0.0, 0.0]], 100.0, 0.5, 2.0).unwrap();
    let at = |t: f64| cast_lidar(&scene, &Isometry3::identity(), t, &pattern, &LidarOptions::default());
    assert_eq!(at(0.0)[0].instance, Some(5));
    assert!((at(0.0)[0].range - 9.0).abs() < 1e-12);
    assert!((at(0.5)[0].range - 14.0).abs() < 1e-12);
    assert!(at(2.0).is_empty());
}

#[test]
fn low_opacity_gaussians_are_transparent() {
    let g = Gaussian3D::isotropic(Vec3::new(5.0, 0.0, 0.0), 0.5, 0.2, [0.5; 3]);
    let pattern = LidarPattern::new(vec![[0.0, 0.0]], 100.0, 0.5, 2.0).unwrap();
    assert!(cast_lidar(&static_scene(vec![g]), &Isometry3::identity(), 0.0, &pattern, &LidarOptions::default()).is_empty());
}

#[test]
fn pattern_config_and_validation() {
    let cfg: LidarPatternConfig = serde_json::from_str(DEFAULT_PATTERN_JSON).unwrap();
    let p = LidarPattern::from_config(&cfg).unwrap();
    assert_eq!(p, LidarPattern::default_64());
    let d = p.direction(0);
    assert!((d.norm() - 1.0).abs() < 1e-12);
    assert!(LidarPattern::new(vec![], 0.0, 0.5, 2.0).is_err());
    assert!(LidarPattern::new(vec![], 10.0, 1.5, 2.0).is_err());
    assert!(LidarPattern::new(vec![[f64::NAN, 0.0]], 10.0, 0.5, 2.0).is_err());
    let explicit: LidarPatternConfig =
        serde_json::from_str(r#"{"beams":{"layout":"explicit","beams_rad":[[0.0,0.1]]},"max_range":5,"opacity_threshold":0.5}"#)
            .unwrap();
    assert_eq!(explicit.k_sigma, 2.0);
    assert!(serde_json::from_str::<LidarPatternConfig>(r#"{"beams":{"layout":"explicit","beams_rad":[]},"max_range":5,"opacity_threshold":0.5,"extra":1}"#).is_err());
}

#[test]
fn point_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let scene = static_scene(random_gaussians(&mut r, 100, 20.0));
    let got = cast_lidar(&scene, &Isometry3::identity(), 0.0, &LidarPattern::default_64(), &LidarOptions::default());
    let path = dir.path().join("sweep.ply");
    write_points_ply(&path, &got).unwrap();
    let back = read_points_ply(&path).unwrap();
    assert_eq!(back.len(), got.len());
    for (a, b) in got.iter().zip(&back) {
        assert_eq!((a.beam, a.range, a.instance), (b.beam, b.range, b.instance));
        assert!((a.position - b.position).norm() < 1e-4);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn longer_range_only_adds_returns(seed in 0u64..10_000, r1 in 1.0f64..40.0, extra in 0.0f64..40.0) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let scene = static_scene(random_gaussians(&mut r, 40, 20.0));
        let beams = random_beams(&mut r, 300);
        let near = LidarPattern::new(beams.clone(), r1, 0.5, 2.0).unwrap();
        let far = LidarPattern::new(beams, r1 + extra, 0.5, 2.0).unwrap();
        let a = cast_lidar(&scene, &Isometry3::identity(), 0.0, &near, &LidarOptions::default());
        let b = cast_lidar(&scene, &Isometry3::identity(), 0.0, &far, &LidarOptions::default());
        prop_assert!(a.len() <= b.len());
        for ret in &a {
            prop_assert!(ret.range <= r1);
            prop_assert!(b.contains(ret));
        }
        for ret in &b {
            prop_assert!(ret.range > r1 || a.contains(ret));
        }
    }
}

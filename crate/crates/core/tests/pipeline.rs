//! Cross-module integration: multi-view fusion geometry and the f32
//! instantiation of the scalar-generic pipeline.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use specklecloud::camera::{CameraIntrinsics, RigidPose, StereoRig};
use specklecloud::classify::{self, FeatureSpec, TrainConfig};
use specklecloud::geometry::primitives;
use specklecloud::nalgebra::{Point3, Vector3};
use specklecloud::pointcloud::{farthest_point_sample, fuse_views, normalize_unit_ball};
use specklecloud::render::{make_speckle_pattern, render_stereo, SceneConfig};
use specklecloud::stereo::{backproject, block_match, disparity_to_depth, MatchParams};

/// Two speckled views of one plane, matched, triangulated, and fused in the
/// world frame: every fused point must lie within the half-pixel disparity
/// quantization bound of the analytic plane.
#[test]
fn fused_plane_views_stay_within_quantization_bound() {
    let f = 800.0f64;
    let b = 0.1f64;
    let z = 4.0f64;
    let res = 320u32;

    let mesh = primitives::plane(10.0, 10.0).translated(Vector3::new(0.0, 0.0, z));
    let mut scene = SceneConfig::new(mesh);
    scene.light_position = Point3::new(0.0, 0.0, 0.0);
    scene.light_size = 0.2;
    scene.light_intensity = 6.0;
    scene.seed = 3;

    let intr = CameraIntrinsics::centered(f, res, res).unwrap();
    let pattern = make_speckle_pattern(9, res, res, 0.15).unwrap();
    let params = MatchParams {
        max_disparity: 32,
        ..MatchParams::default()
    };

    // One head-on view, one slightly translated and tilted.
    let pose_a = RigidPose::identity();
    let pose_b = RigidPose::identity()
        .perturbed(Vector3::new(0.08, -0.05, 0.02), (0.02, -0.03, 0.01))
        .unwrap();

    let mut views = Vec::new();
    for pose in [pose_a, pose_b] {
        let rig = StereoRig::new(intr, pose, b, intr).unwrap();
        let (left, right) = render_stereo(&scene, &rig, &pattern);
        let disp = block_match(&left, &right, &params).unwrap();
        let depth = disparity_to_depth(&disp, f, b).unwrap();
        views.push(backproject(&depth, &intr, &pose).unwrap());
    }
    let fused = fuse_views(&views).unwrap();
    assert!(fused.len() > 50_000, "fused {} points", fused.len());

    // Quantization bound at the plane depth, with slack for the tilted view.
    let bound = z * z * 0.5 / (f * b) * 1.5;
    for p in fused.points() {
        assert!(
            (p.z - z).abs() <= bound,
            "fused point {p:?} deviates beyond {bound}"
        );
    }
}

/// The whole numeric pipeline also instantiates at f32.
#[test]
fn pipeline_runs_at_f32() {
    let mesh = primitives::icosphere(1.0f32, 3)
        .normalize_to_unit_cube()
        .unwrap();
    let mesh = mesh.translated(Vector3::new(0.0, 0.0, 3.0));

    let mut scene = SceneConfig::new(mesh);
    scene.light_position = Point3::new(0.0f32, 0.0, 1.0);
    scene.light_intensity = 10.0;

    let intr = CameraIntrinsics::centered(220.0f32, 160, 160).unwrap();
    let rig = StereoRig::new(intr, RigidPose::identity(), 0.1, intr).unwrap();
    let pattern = make_speckle_pattern::<f32>(4, 160, 160, 0.2).unwrap();
    let (left, right) = render_stereo(&scene, &rig, &pattern);
    assert!(left.pixels().iter().all(|v| v.is_finite()));

    let params = MatchParams::<f32> {
        max_disparity: 16,
        ..MatchParams::default()
    };
    let disp = block_match(&left, &right, &params).unwrap();
    assert!(disp.valid_count() > 100, "valid {}", disp.valid_count());
    let depth = disparity_to_depth(&disp, 220.0f32, 0.1).unwrap();
    let cloud = backproject(&depth, &intr, &RigidPose::identity()).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let sampled = farthest_point_sample(&cloud, 128.min(cloud.len()), &mut rng).unwrap();
    let normalized = normalize_unit_ball(&sampled).unwrap();
    let features = classify::extract_features(&normalized, &FeatureSpec::builtin()).unwrap();
    assert_eq!(features.len(), 64);
    assert!(features.iter().all(|v| v.is_finite()));

    // tiny f32 training round on synthetic features
    let xs: Vec<Vec<f32>> = (0..8)
        .map(|i| (0..4).map(|j| ((i * 7 + j * 3) % 5) as f32 - 2.0).collect())
        .collect();
    let ys: Vec<Vec<f32>> = (0..8)
        .map(|i| {
            let mut v = vec![0.0f32; 2];
            v[i % 2] = 1.0;
            v
        })
        .collect();
    let cfg = TrainConfig {
        epochs: 20,
        ..TrainConfig::default()
    };
    let model =
        classify::train_on_soft_features(&xs, &ys, 2, FeatureSpec::external(4), &cfg).unwrap();
    let proba = model.predict_proba_features(&xs[0]).unwrap();
    assert!((proba.iter().sum::<f32>() - 1.0).abs() < 1e-6);
}

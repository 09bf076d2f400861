//! Synthesis of noise-realistic object point clouds by simulating an active
//! stereo depth sensor (speckle projection, stereo rendering, block matching,
//! triangulation, multi-view fusion, farthest-point sampling), together with
//! self-training domain adaptation for point-cloud classification.
//!
//! All geometry, imaging, and training math is generic over the scalar type
//! (`f32` or `f64`) via the [`Real`] trait; the aliases below pin the `f64`
//! instantiation used by the CLI and dataset pipeline.

pub mod adapt;
pub mod camera;
pub mod classify;
pub mod error;
pub mod geometry;
pub mod image;
pub mod num;
pub mod pointcloud;
pub mod render;
pub mod stereo;
pub mod synth;

pub use error::{Error, Result};
pub use nalgebra;
pub use num::Real;

/// Default scalar for the dataset pipeline and CLI.
pub type Scalar = f64;

pub type Mesh = geometry::TriangleMesh<Scalar>;
pub type Pose = camera::RigidPose<Scalar>;
pub type Intrinsics = camera::CameraIntrinsics<Scalar>;
pub type Rig = camera::StereoRig<Scalar>;
pub type Image = image::GrayImage<Scalar>;
pub type Depth = image::DepthMap<Scalar>;
pub type Disparity = image::DisparityMap<Scalar>;
pub type Cloud = pointcloud::PointCloud<Scalar>;
pub type Classifier = classify::ClassifierModel<Scalar>;

//! Ray-cast rendering of stereo image pairs under an area light and an
//! active speckle projector, plus direct (clean) depth rendering.
//!
//! The material model is single-albedo Lambertian; the projector is a pinhole
//! projective texture. One primary ray per pixel. Rendering is deterministic
//! for a fixed scene seed and light-sample count regardless of worker count:
//! light-sample jitter is hashed from pixel coordinates instead of drawn from
//! a shared sequential stream.

pub mod bvh;
mod speckle;

pub use bvh::{ray_triangle, Bvh, Hit, Ray};
pub use speckle::{make_speckle_pattern, SpecklePattern};

use nalgebra::Point3;
use rayon::prelude::*;

use crate::camera::{CameraIntrinsics, RigidPose, StereoRig};
use crate::geometry::TriangleMesh;
use crate::image::{DepthMap, GrayImage};
use crate::num::{cast, Real};

/// Scene description for one rendered object.
#[derive(Debug, Clone)]
pub struct SceneConfig<T: Real> {
    pub mesh: TriangleMesh<T>,
    /// Diffuse reflectance in (0, 1].
    pub albedo: T,
    /// Center of the square area emitter.
    pub light_position: Point3<T>,
    /// Edge length of the emitter (meters); 0 collapses it to a point light.
    pub light_size: T,
    pub light_intensity: T,
    /// Constant ambient term; keeps shadow regions from going fully black.
    pub ambient: T,
    /// Radiant scale of the projector texture.
    pub projector_intensity: T,
    /// Stratified shadow-ray samples toward the area light.
    pub light_samples: u32,
    /// Seed for the per-pixel light-sample jitter.
    pub seed: u64,
}

impl<T: Real> SceneConfig<T> {
    /// Scene with default illumination: albedo 0.7, ambient 0.05, a 1 m area
    /// light 4 m above the origin, and 16 light samples.
    pub fn new(mesh: TriangleMesh<T>) -> Self {
        Self {
            mesh,
            albedo: cast(0.7),
            light_position: Point3::new(T::zero(), T::zero(), cast(4.0)),
            light_size: T::one(),
            light_intensity: cast(10.0),
            ambient: cast(0.05),
            projector_intensity: cast(8.0),
            light_samples: 16,
            seed: 0,
        }
    }
}

const SHADOW_NORMAL_OFFSET: f64 = 1e-4;
const PRIMARY_T_MIN: f64 = 1e-6;

/// Render the rectified stereo pair seen by `rig` with the speckle projector
/// active. Background pixels are 0; output is clamped to [0, 1].
pub fn render_stereo<T: Real>(
    scene: &SceneConfig<T>,
    rig: &StereoRig<T>,
    pattern: &SpecklePattern<T>,
) -> (GrayImage<T>, GrayImage<T>) {
    let bvh = Bvh::build(&scene.mesh);
    let projector = Some((&rig.projector_intrinsics, &rig.projector_pose, pattern));
    let left = render_view(scene, &bvh, &rig.intrinsics, &rig.left_pose, projector);
    let right = render_view(scene, &bvh, &rig.intrinsics, &rig.right_pose(), projector);
    (left, right)
}

/// Depth of the nearest surface along each pixel's optical axis; pixels that
/// hit nothing are invalid.
pub fn render_clean_depth<T: Real>(
    scene: &SceneConfig<T>,
    intrinsics: &CameraIntrinsics<T>,
    pose: &RigidPose<T>,
) -> DepthMap<T> {
    let bvh = Bvh::build(&scene.mesh);
    let width = intrinsics.width;
    let height = intrinsics.height;
    let origin = pose.center();
    let t_min = cast::<T>(PRIMARY_T_MIN);
    let inf = cast::<T>(f64::INFINITY);

    let mut depth = DepthMap::invalid(width, height);
    let rows: Vec<Vec<Option<T>>> = (0..height)
        .into_par_iter()
        .map(|y| {
            (0..width)
                .map(|x| {
                    // Ray direction has unit camera-frame z, so t equals the
                    // depth along the optical axis.
                    let dir = pose.direction_to_world(&intrinsics.pixel_ray_dir(x, y));
                    bvh.nearest(&Ray { origin, dir }, t_min, inf).map(|h| h.t)
                })
                .collect()
        })
        .collect();
    for (y, row) in rows.into_iter().enumerate() {
        for (x, v) in row.into_iter().enumerate() {
            if let Some(t) = v {
                depth.set(x as u32, y as u32, t);
            }
        }
    }
    depth
}

/// Render one camera view. `projector` supplies the projective speckle
/// texture; pass `None` for passively lit renders.
pub fn render_view<T: Real>(
    scene: &SceneConfig<T>,
    bvh: &Bvh<T>,
    intrinsics: &CameraIntrinsics<T>,
    pose: &RigidPose<T>,
    projector: Option<(&CameraIntrinsics<T>, &RigidPose<T>, &SpecklePattern<T>)>,
) -> GrayImage<T> {
    let width = intrinsics.width;
    let height = intrinsics.height;
    let origin = pose.center();
    let t_min = cast::<T>(PRIMARY_T_MIN);
    let inf = cast::<T>(f64::INFINITY);
    let grid = (scene.light_samples as f64).sqrt().ceil().max(1.0) as u32;
    let samples = grid * grid;
    let sample_norm = T::one() / cast::<T>(samples as f64);
    let offset = cast::<T>(SHADOW_NORMAL_OFFSET);
    let shadow_t_max = T::one() - cast::<T>(1e-4);

    let mut pixels = vec![T::zero(); (width * height) as usize];
    pixels
        .par_chunks_mut(width as usize)
        .enumerate()
        .for_each(|(y, row)| {
            let y = y as u32;
            for (x, px) in row.iter_mut().enumerate() {
                let x = x as u32;
                let dir = pose.direction_to_world(&intrinsics.pixel_ray_dir(x, y));
                let ray = Ray { origin, dir };
                let Some(hit) = bvh.nearest(&ray, t_min, inf) else {
                    continue; // background stays 0
                };
                let p = Point3::from(origin.coords + dir * hit.t);
                let mut normal = scene.mesh.face_normals()[hit.face];
                if normal.dot(&dir) > T::zero() {
                    normal = -normal; // shade double-sided
                }
                let shadow_origin = Point3::from(p.coords + normal * offset);

                let mut radiance = scene.ambient;

                // Area light: stratified shadow-tested samples, cosine
                // weighted with inverse-square falloff.
                let mut light_sum = T::zero();
                for s in 0..samples {
                    let (sx, sy) = (s % grid, s / grid);
                    let ju = hash01(scene.seed, x, y, 2 * s);
                    let jv = hash01(scene.seed, x, y, 2 * s + 1);
                    let su = (cast::<T>(sx as f64) + cast::<T>(ju)) / cast::<T>(grid as f64)
                        - cast::<T>(0.5);
                    let sv = (cast::<T>(sy as f64) + cast::<T>(jv)) / cast::<T>(grid as f64)
                        - cast::<T>(0.5);
                    let sample = Point3::new(
                        scene.light_position.x + su * scene.light_size,
                        scene.light_position.y + sv * scene.light_size,
                        scene.light_position.z,
                    );
                    let wi = sample - p;
                    let d2 = wi.norm_squared();
                    if d2 <= T::zero() {
                        continue;
                    }
                    let cos = normal.dot(&wi) / d2.sqrt();
                    if cos <= T::zero() {
                        continue;
                    }
                    let shadow = Ray {
                        origin: shadow_origin,
                        dir: wi,
                    };
                    if !bvh.occluded(&shadow, cast::<T>(1e-6), shadow_t_max) {
                        light_sum += cos / d2;
                    }
                }
                radiance += scene.light_intensity * light_sum * sample_norm;

                // Projector: projective speckle texture with cosine falloff,
                // shadow-tested toward the projector center; zero outside the
                // projector frustum.
                if let Some((proj_intr, proj_pose, pattern)) = projector {
                    let p_proj = proj_pose.to_camera(&p);
                    if let Some((u, v)) = proj_intr.project(&p_proj) {
                        if proj_intr.contains(u, v) {
                            let wi = proj_pose.center() - p;
                            let d2 = wi.norm_squared();
                            let cos = normal.dot(&wi) / d2.sqrt();
                            if cos > T::zero() {
                                let shadow = Ray {
                                    origin: shadow_origin,
                                    dir: wi,
                                };
                                if !bvh.occluded(&shadow, cast::<T>(1e-6), shadow_t_max) {
                                    let tex = pattern.texture.bilinear(u, v);
                                    radiance += scene.projector_intensity * tex * cos / d2;
                                }
                            }
                        }
                    }
                }

                *px = (scene.albedo * radiance).clamp(T::zero(), T::one());
            }
        });

    GrayImage::from_pixels(width, height, pixels).expect("buffer sized to resolution")
}

use crate::num::splitmix64;

/// Deterministic per-pixel jitter in [0, 1).
fn hash01(seed: u64, x: u32, y: u32, k: u32) -> f64 {
    let mixed = splitmix64(seed)
        ^ splitmix64(((x as u64) << 32) | y as u64)
        ^ splitmix64(0x5851_F42D_4C95_7F2D ^ k as u64);
    (splitmix64(mixed) >> 11) as f64 / (1u64 << 53) as f64
}

//! Dataset generation: pose sampling around the object, per-instance
//! multi-view rendering/matching/fusion, farthest-point sampling, labeling,
//! and manifest persistence.
//!
//! Determinism contract: (global seed, instance id) fully determines every
//! instance's z-rotation, poses, speckle pattern, and sampling, so a dataset
//! regenerates bit-identically regardless of the worker count.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Point3, Vector3};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, RigidPose, StereoRig};
use crate::error::{Error, Result};
use crate::geometry::{load_mesh, random_z_rotation, TriangleMesh};
use crate::num::{cast, splitmix64, Real};
use crate::pointcloud::{
    farthest_point_sample, fuse_views, region_dropout, write_cloud_bin, PointCloud,
};
use crate::render::{make_speckle_pattern, render_clean_depth, render_stereo, SceneConfig};
use crate::stereo::{backproject, block_match, disparity_to_depth, downsample_depth, MatchParams};

/// How an instance's point cloud is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenerationMode {
    /// Full sensor simulation: speckle projection, stereo rendering, block
    /// matching, triangulation.
    Speckle,
    /// Directly measured depth per pixel (no stereo imaging or matching).
    Clean,
    /// Ideal uniform area-weighted sampling of the mesh surface.
    Surface,
}

impl std::str::FromStr for GenerationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "speckle" => Ok(Self::Speckle),
            "clean" => Ok(Self::Clean),
            "surface" => Ok(Self::Surface),
            other => Err(Error::InvalidConfig(format!(
                "unknown mode '{other}' (expected speckle, clean, or surface)"
            ))),
        }
    }
}

impl std::fmt::Display for GenerationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Speckle => "speckle",
            Self::Clean => "clean",
            Self::Surface => "surface",
        })
    }
}

/// Every knob of the generation pipeline. Serializable as the structured
/// config file; command-line flags override individual fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub mode: GenerationMode,
    /// Camera distance range from the object center, meters.
    pub distance_range: (f64, f64),
    /// Camera elevation range, degrees above the horizon.
    pub elevation_range_deg: (f64, f64),
    /// Views fused per instance.
    pub n_views: usize,
    /// Per-axis translation jitter of the non-anchor views, meters.
    pub view_translation_jitter: f64,
    /// Per-Euler-angle rotation jitter of the non-anchor views, radians.
    pub view_rotation_jitter: f64,
    pub baseline_m: f64,
    pub focal_length_px: f64,
    pub render_width: u32,
    pub render_height: u32,
    /// Depth maps are median-downsampled by this factor before
    /// back-projection (speckle mode).
    pub depth_downsample: u32,
    /// Points kept by farthest-point sampling.
    pub fps_points: usize,
    /// Clouds generated per mesh.
    pub repetitions: usize,
    pub pattern_dot_density: f64,
    pub albedo: f64,
    pub ambient: f64,
    pub light_intensity: f64,
    pub light_height_m: f64,
    pub light_size_m: f64,
    pub projector_intensity: f64,
    pub light_samples: u32,
    pub window_radius: usize,
    pub max_disparity: usize,
    pub uniqueness_ratio: f64,
    pub lr_consistency_tol: usize,
    pub texture_threshold: f64,
    /// Surface mode presamples this multiple of fps_points before FPS.
    pub surface_oversample: usize,
    /// Optional region dropout fraction applied to the surface presample.
    pub region_dropout: Option<f64>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            mode: GenerationMode::Speckle,
            distance_range: (3.0, 5.0),
            elevation_range_deg: (20.0, 50.0),
            n_views: 3,
            view_translation_jitter: 0.10,
            view_rotation_jitter: 0.1,
            baseline_m: 0.10,
            focal_length_px: 1000.0,
            render_width: 1080,
            render_height: 1080,
            depth_downsample: 4,
            fps_points: 2048,
            repetitions: 1,
            pattern_dot_density: 0.15,
            albedo: 0.7,
            ambient: 0.05,
            light_intensity: 22.0,
            light_height_m: 6.0,
            light_size_m: 1.0,
            projector_intensity: 9.0,
            light_samples: 16,
            window_radius: 5,
            max_disparity: 128,
            uniqueness_ratio: 1.15,
            lr_consistency_tol: 1,
            texture_threshold: 1e-4,
            surface_oversample: 4,
            region_dropout: None,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= hi;
        if !ordered(self.distance_range) {
            return Err(Error::InvalidConfig(
                "distance range must be ordered".into(),
            ));
        }
        if self.elevation_range_deg.0 > self.elevation_range_deg.1
            || self.elevation_range_deg.0 < -90.0
            || self.elevation_range_deg.1 > 90.0
        {
            return Err(Error::InvalidConfig("bad elevation range".into()));
        }
        if self.n_views < 1 {
            return Err(Error::InvalidConfig("n_views must be >= 1".into()));
        }
        if self.fps_points < 1 {
            return Err(Error::InvalidConfig("fps_points must be >= 1".into()));
        }
        if self.repetitions < 1 {
            return Err(Error::InvalidConfig("repetitions must be >= 1".into()));
        }
        if !self.render_width.is_multiple_of(self.depth_downsample)
            || !self.render_height.is_multiple_of(self.depth_downsample)
        {
            return Err(Error::InvalidConfig(
                "depth_downsample must divide the render resolution".into(),
            ));
        }
        if let Some(f) = self.region_dropout {
            if !(0.0..1.0).contains(&f) || f == 0.0 {
                return Err(Error::InvalidConfig(
                    "region_dropout must lie in (0, 1)".into(),
                ));
            }
        }
        Ok(())
    }

    fn intrinsics<T: Real>(&self) -> Result<CameraIntrinsics<T>> {
        CameraIntrinsics::centered(
            cast(self.focal_length_px),
            self.render_width,
            self.render_height,
        )
    }

    fn match_params<T: Real>(&self) -> MatchParams<T> {
        MatchParams {
            window_radius: self.window_radius,
            max_disparity: self.max_disparity,
            uniqueness_ratio: cast(self.uniqueness_ratio),
            lr_consistency_tol: self.lr_consistency_tol,
            texture_threshold: cast(self.texture_threshold),
        }
    }

    fn scene<T: Real>(&self, mesh: TriangleMesh<T>, seed: u64) -> SceneConfig<T> {
        SceneConfig {
            mesh,
            albedo: cast(self.albedo),
            light_position: Point3::new(T::zero(), T::zero(), cast(self.light_height_m)),
            light_size: cast(self.light_size_m),
            light_intensity: cast(self.light_intensity),
            ambient: cast(self.ambient),
            projector_intensity: cast(self.projector_intensity),
            light_samples: self.light_samples,
            seed,
        }
    }
}

/// Sample the per-instance camera poses: a random anchor (distance, elevation,
/// azimuth, looking at the origin) plus jittered variants of it.
pub fn sample_camera_poses<T: Real, R: Rng>(
    rng: &mut R,
    cfg: &GenerationConfig,
) -> Result<Vec<RigidPose<T>>> {
    let (d_lo, d_hi) = cfg.distance_range;
    let (e_lo, e_hi) = cfg.elevation_range_deg;
    let dist = d_lo + rng.random::<f64>() * (d_hi - d_lo);
    let elev = (e_lo + rng.random::<f64>() * (e_hi - e_lo)).to_radians();
    let azim = rng.random::<f64>() * std::f64::consts::TAU;
    let eye = Point3::new(
        cast::<T>(dist * elev.cos() * azim.cos()),
        cast::<T>(dist * elev.cos() * azim.sin()),
        cast::<T>(dist * elev.sin()),
    );
    let anchor = RigidPose::look_at(eye, Point3::origin(), Vector3::z())?;
    let mut poses = vec![anchor];
    let tj = cfg.view_translation_jitter;
    let rj = cfg.view_rotation_jitter;
    for _ in 1..cfg.n_views {
        let mut sym = |scale: f64| cast::<T>((rng.random::<f64>() * 2.0 - 1.0) * scale);
        let delta_t = Vector3::new(sym(tj), sym(tj), sym(tj));
        let euler = (sym(rj), sym(rj), sym(rj));
        poses.push(anchor.perturbed(delta_t, euler)?);
    }
    Ok(poses)
}

// Fixed ChaCha stream ids, one per randomized stage, so modes that share a
// seed share poses but nothing else leaks between stages.
const STREAM_ZROT: u64 = 0;
const STREAM_POSES: u64 = 1;
const STREAM_PATTERN: u64 = 2;
const STREAM_FPS: u64 = 3;
const STREAM_SURFACE: u64 = 4;
const STREAM_SCENE: u64 = 5;
const STREAM_DROPOUT: u64 = 6;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The camera poses an instance with this seed will use, in any mode.
pub fn instance_poses<T: Real>(cfg: &GenerationConfig, seed: u64) -> Result<Vec<RigidPose<T>>> {
    sample_camera_poses(&mut stream_rng(seed, STREAM_POSES), cfg)
}

/// Generate one instance from a unit-cube-normalized mesh. The mesh receives
/// a seeded z-rotation, is captured from `n_views` poses according to the
/// mode, fused, and reduced to exactly `fps_points` points.
pub fn generate_instance<T: Real>(
    mesh: &TriangleMesh<T>,
    cfg: &GenerationConfig,
    seed: u64,
) -> Result<PointCloud<T>> {
    cfg.validate()?;
    let mesh = random_z_rotation(mesh, &mut stream_rng(seed, STREAM_ZROT));
    let poses: Vec<RigidPose<T>> = instance_poses(cfg, seed)?;

    let fused = match cfg.mode {
        GenerationMode::Speckle => {
            let intr: CameraIntrinsics<T> = cfg.intrinsics()?;
            let pattern = make_speckle_pattern::<T>(
                stream_rng(seed, STREAM_PATTERN).next_u64(),
                cfg.render_width,
                cfg.render_height,
                cast(cfg.pattern_dot_density),
            )?;
            let scene = cfg.scene(mesh, stream_rng(seed, STREAM_SCENE).next_u64());
            let params = cfg.match_params::<T>();
            let low_intr = intr.downsampled(cfg.depth_downsample)?;
            let mut views = Vec::new();
            for pose in &poses {
                let rig = StereoRig::new(intr, *pose, cast(cfg.baseline_m), intr)?;
                let (left, right) = render_stereo(&scene, &rig, &pattern);
                let disp = block_match(&left, &right, &params)?;
                let depth = disparity_to_depth(&disp, intr.focal_px, rig.baseline_m)?;
                let low = downsample_depth(&depth, cfg.depth_downsample)?;
                match backproject(&low, &low_intr, pose) {
                    Ok(cloud) => views.push(cloud),
                    Err(Error::EmptyInput(_)) => {
                        log::warn!("view produced no valid depth; skipping");
                    }
                    Err(e) => return Err(e),
                }
            }
            fuse_with_context(views, cfg, "speckle")?
        }
        GenerationMode::Clean => {
            let intr: CameraIntrinsics<T> = cfg.intrinsics()?;
            let scene = cfg.scene(mesh, stream_rng(seed, STREAM_SCENE).next_u64());
            let mut views = Vec::new();
            for pose in &poses {
                let depth = render_clean_depth(&scene, &intr, pose);
                match backproject(&depth, &intr, pose) {
                    Ok(cloud) => views.push(cloud),
                    Err(Error::EmptyInput(_)) => {
                        log::warn!("view produced no valid depth; skipping");
                    }
                    Err(e) => return Err(e),
                }
            }
            fuse_with_context(views, cfg, "clean")?
        }
        GenerationMode::Surface => {
            let n = cfg.fps_points * cfg.surface_oversample.max(1);
            let sampled = sample_surface(&mesh, n, &mut stream_rng(seed, STREAM_SURFACE))?;
            match cfg.region_dropout {
                Some(frac) => {
                    region_dropout(&sampled, frac, &mut stream_rng(seed, STREAM_DROPOUT))?
                }
                None => sampled,
            }
        }
    };

    if fused.len() < cfg.fps_points {
        return Err(Error::InsufficientPoints {
            needed: cfg.fps_points,
            got: fused.len(),
            context: format!("{} mode, {} views fused", cfg.mode, cfg.n_views),
        });
    }
    farthest_point_sample(&fused, cfg.fps_points, &mut stream_rng(seed, STREAM_FPS))
}

fn fuse_with_context<T: Real>(
    views: Vec<PointCloud<T>>,
    cfg: &GenerationConfig,
    mode: &str,
) -> Result<PointCloud<T>> {
    fuse_views(&views).map_err(|_| Error::InsufficientPoints {
        needed: cfg.fps_points,
        got: 0,
        context: format!("{mode} mode, all {} views empty", cfg.n_views),
    })
}

/// Uniform area-weighted surface sampling.
fn sample_surface<T: Real, R: Rng>(
    mesh: &TriangleMesh<T>,
    n: usize,
    rng: &mut R,
) -> Result<PointCloud<T>> {
    let mut cumulative = Vec::with_capacity(mesh.face_count());
    let mut total = 0.0f64;
    for i in 0..mesh.face_count() {
        total += crate::num::to_f64(mesh.face_area(i));
        cumulative.push(total);
    }
    if total <= 0.0 {
        return Err(Error::Degenerate("mesh has zero surface area".into()));
    }
    let points = (0..n)
        .map(|_| {
            let target = rng.random::<f64>() * total;
            let face = cumulative
                .partition_point(|&c| c < target)
                .min(mesh.face_count() - 1);
            let [a, b, c] = mesh.triangle(face);
            // uniform barycentric via the square-root trick
            let su = rng.random::<f64>().sqrt();
            let v = rng.random::<f64>();
            let wa = cast::<T>(1.0 - su);
            let wb = cast::<T>(su * (1.0 - v));
            let wc = cast::<T>(su * v);
            Point3::from(a.coords * wa + b.coords * wb + c.coords * wc)
        })
        .collect();
    Ok(PointCloud::new(points))
}

/// One dataset instance on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub class_index: usize,
    pub class_name: String,
    pub mesh_path: String,
    /// Relative to the manifest's directory.
    pub cloud_path: String,
    pub seed: u64,
    pub mode: GenerationMode,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub class_names: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json =
            serde_json::to_string_pretty(self).map_err(|e| Error::Manifest(e.to_string()))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Self =
            serde_json::from_str(&text).map_err(|e| Error::Manifest(e.to_string()))?;
        for e in &manifest.entries {
            if e.class_index >= manifest.class_names.len() {
                return Err(Error::Manifest(format!(
                    "entry {} has class index {} out of range",
                    e.id, e.class_index
                )));
            }
        }
        Ok(manifest)
    }
}

/// Deterministic per-instance seed from the global seed and instance id.
pub fn instance_seed(global_seed: u64, id: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64; // FNV-1a
    for b in id.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(global_seed ^ splitmix64(h))
}

/// Generate a labeled dataset from a directory of class subdirectories of
/// mesh files. Writes one cloud file per mesh per repetition under
/// `out_dir/clouds/` plus `out_dir/manifest.json`. Instance work runs on a
/// pool of `workers` threads (0 = default parallelism); output bytes are
/// identical for any worker count.
pub fn generate_dataset(
    mesh_dir: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
    cfg: &GenerationConfig,
    seed: u64,
    workers: usize,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    let mesh_dir = mesh_dir.as_ref();
    let out_dir = out_dir.as_ref();

    let mut class_names: Vec<String> = fs::read_dir(mesh_dir)
        .map_err(|e| Error::io(mesh_dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().to_str().map(String::from))
        .collect();
    class_names.sort();
    if class_names.is_empty() {
        return Err(Error::Manifest(format!(
            "no class subdirectories under {}",
            mesh_dir.display()
        )));
    }

    struct Job {
        id: String,
        class_index: usize,
        class_name: String,
        mesh_path: PathBuf,
        seed: u64,
    }

    let mut jobs = Vec::new();
    for (class_index, class_name) in class_names.iter().enumerate() {
        let class_dir = mesh_dir.join(class_name);
        let mut meshes: Vec<PathBuf> = fs::read_dir(&class_dir)
            .map_err(|e| Error::io(&class_dir, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("obj") | Some("ply")
                )
            })
            .collect();
        meshes.sort();
        if meshes.is_empty() {
            return Err(Error::Manifest(format!(
                "class directory {} contains no mesh files",
                class_dir.display()
            )));
        }
        for mesh_path in meshes {
            let stem = mesh_path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("mesh")
                .to_string();
            for rep in 0..cfg.repetitions {
                let id = format!("{class_name}_{stem}_r{rep:02}");
                jobs.push(Job {
                    seed: instance_seed(seed, &id),
                    id,
                    class_index,
                    class_name: class_name.clone(),
                    mesh_path: mesh_path.clone(),
                });
            }
        }
    }

    let clouds_dir = out_dir.join("clouds");
    fs::create_dir_all(&clouds_dir).map_err(|e| Error::io(&clouds_dir, e))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let entries: Vec<ManifestEntry> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let mesh = load_mesh::<f64>(&job.mesh_path)?.normalize_to_unit_cube()?;
                let cloud = generate_instance(&mesh, cfg, job.seed).map_err(|e| match e {
                    Error::InsufficientPoints {
                        needed,
                        got,
                        context,
                    } => Error::InsufficientPoints {
                        needed,
                        got,
                        context: format!("{context}; model {}", job.mesh_path.display()),
                    },
                    other => other,
                })?;
                let cloud_rel = format!("clouds/{}.cloud", job.id);
                write_cloud_bin(&cloud, out_dir.join(&cloud_rel))?;
                Ok(ManifestEntry {
                    id: job.id.clone(),
                    class_index: job.class_index,
                    class_name: job.class_name.clone(),
                    mesh_path: job.mesh_path.display().to_string(),
                    cloud_path: cloud_rel,
                    seed: job.seed,
                    mode: cfg.mode,
                })
            })
            .collect::<Result<_>>()
    })?;

    let manifest = DatasetManifest {
        class_names,
        entries,
    };
    manifest.save(out_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Load every cloud referenced by a manifest, labeled with its class index.
pub fn load_dataset<T: Real>(
    manifest_path: impl AsRef<Path>,
) -> Result<(Vec<PointCloud<T>>, Vec<String>)> {
    let manifest_path = manifest_path.as_ref();
    let manifest = DatasetManifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let clouds = manifest
        .entries
        .iter()
        .map(|e| {
            let mut cloud = crate::pointcloud::read_cloud_bin::<T>(base.join(&e.cloud_path))?;
            cloud.label = Some(e.class_index);
            Ok(cloud)
        })
        .collect::<Result<_>>()?;
    Ok((clouds, manifest.class_names))
}

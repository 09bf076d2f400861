//! Triangle meshes: loading, normalization, and rigid transforms feeding the
//! renderer.

mod load;
pub mod primitives;

pub use load::{load_mesh, load_obj, load_ply, save_obj};

use nalgebra::{Matrix3, Point3, Vector3};
use rand::Rng;

use crate::error::{Error, Result};
use crate::num::{cast, Real};

/// Indexed triangle surface. Immutable after construction; transforms return
/// new meshes so instances can be shared across parallel render workers.
#[derive(Debug, Clone)]
pub struct TriangleMesh<T: Real> {
    vertices: Vec<Point3<T>>,
    faces: Vec<[u32; 3]>,
    face_normals: Vec<Vector3<T>>,
}

impl<T: Real> TriangleMesh<T> {
    /// Build a mesh from vertices and face indices. Faces with out-of-range
    /// indices are an error; degenerate faces (area below 1e-12 relative to
    /// the bounding-box scale) are dropped. Errors if no valid face remains.
    pub fn new(vertices: Vec<Point3<T>>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let (mesh, _) = Self::new_counting_dropped(vertices, faces)?;
        Ok(mesh)
    }

    /// Like [`TriangleMesh::new`] but also reports how many degenerate faces
    /// were dropped.
    pub fn new_counting_dropped(
        vertices: Vec<Point3<T>>,
        faces: Vec<[u32; 3]>,
    ) -> Result<(Self, usize)> {
        for p in &vertices {
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(Error::Degenerate("non-finite vertex coordinate".into()));
            }
        }
        let n = vertices.len() as u32;
        for f in &faces {
            if f.iter().any(|&i| i >= n) {
                return Err(Error::Degenerate(format!(
                    "face index out of range (vertex count {n})"
                )));
            }
        }

        // Area threshold scaled by the bounding-box diagonal so the filter is
        // unit-independent.
        let diag2 = match bounding_box(&vertices) {
            Some((lo, hi)) => (hi - lo).norm_squared(),
            None => return Err(Error::EmptyMesh),
        };
        let threshold = cast::<T>(1e-12) * if diag2 > T::zero() { diag2 } else { T::one() };

        let mut kept = Vec::with_capacity(faces.len());
        let mut normals = Vec::with_capacity(faces.len());
        let mut dropped = 0usize;
        for f in faces {
            let a = vertices[f[0] as usize];
            let b = vertices[f[1] as usize];
            let c = vertices[f[2] as usize];
            let cross = (b - a).cross(&(c - a));
            let doubled_area = cross.norm();
            if doubled_area * cast::<T>(0.5) <= threshold {
                dropped += 1;
                continue;
            }
            kept.push(f);
            normals.push(cross / doubled_area);
        }
        if kept.is_empty() {
            return Err(Error::EmptyMesh);
        }
        Ok((
            Self {
                vertices,
                faces: kept,
                face_normals: normals,
            },
            dropped,
        ))
    }

    pub fn vertices(&self) -> &[Point3<T>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    /// Unit per-face normals, consistent with the vertex winding order.
    pub fn face_normals(&self) -> &[Vector3<T>] {
        &self.face_normals
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Corner positions of face `i`.
    pub fn triangle(&self, i: usize) -> [Point3<T>; 3] {
        let f = self.faces[i];
        [
            self.vertices[f[0] as usize],
            self.vertices[f[1] as usize],
            self.vertices[f[2] as usize],
        ]
    }

    /// Axis-aligned bounding box (min, max).
    pub fn bounding_box(&self) -> (Point3<T>, Point3<T>) {
        bounding_box(&self.vertices).expect("mesh is never empty")
    }

    /// Uniformly scale and translate so the bounding box is centered at the
    /// origin with its longest side equal to 1. Aspect ratios are preserved.
    pub fn normalize_to_unit_cube(&self) -> Result<Self> {
        let (lo, hi) = self.bounding_box();
        let extent = hi - lo;
        let longest = extent.x.max(extent.y).max(extent.z);
        if longest <= T::zero() {
            return Err(Error::Degenerate(
                "mesh has zero extent; cannot normalize".into(),
            ));
        }
        let center = nalgebra::center(&lo, &hi);
        let scale = T::one() / longest;
        let vertices = self
            .vertices
            .iter()
            .map(|p| Point3::from((p - center) * scale))
            .collect();
        Ok(Self {
            vertices,
            faces: self.faces.clone(),
            face_normals: self.face_normals.clone(),
        })
    }

    /// Rotate about the world z-axis by `angle` radians. z-coordinates are
    /// preserved exactly.
    pub fn rotated_z(&self, angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        let map = |p: &Point3<T>| Point3::new(c * p.x - s * p.y, s * p.x + c * p.y, p.z);
        let vertices = self.vertices.iter().map(map).collect();
        let face_normals = self
            .face_normals
            .iter()
            .map(|v| Vector3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z))
            .collect();
        Self {
            vertices,
            faces: self.faces.clone(),
            face_normals,
        }
    }

    /// Apply `p -> rotation * p + translation` to all vertices.
    pub fn transformed(&self, rotation: &Matrix3<T>, translation: &Vector3<T>) -> Self {
        let vertices = self
            .vertices
            .iter()
            .map(|p| Point3::from(rotation * p.coords + translation))
            .collect();
        let face_normals = self.face_normals.iter().map(|v| rotation * v).collect();
        Self {
            vertices,
            faces: self.faces.clone(),
            face_normals,
        }
    }

    pub fn translated(&self, offset: Vector3<T>) -> Self {
        self.transformed(&Matrix3::identity(), &offset)
    }

    /// Per-axis scaling. Normals are recomputed since non-uniform scaling does
    /// not preserve them.
    pub fn scaled(&self, factors: Vector3<T>) -> Result<Self> {
        let vertices: Vec<Point3<T>> = self
            .vertices
            .iter()
            .map(|p| Point3::new(p.x * factors.x, p.y * factors.y, p.z * factors.z))
            .collect();
        Self::new(vertices, self.faces.clone())
    }

    /// Area of face `i`.
    pub fn face_area(&self, i: usize) -> T {
        let [a, b, c] = self.triangle(i);
        (b - a).cross(&(c - a)).norm() * cast::<T>(0.5)
    }

    /// Total surface area.
    pub fn surface_area(&self) -> T {
        (0..self.face_count()).fold(T::zero(), |acc, i| acc + self.face_area(i))
    }
}

/// Rotate a mesh about the world z-axis by an angle drawn uniformly from
/// [0, 2pi).
pub fn random_z_rotation<T: Real, R: Rng>(mesh: &TriangleMesh<T>, rng: &mut R) -> TriangleMesh<T> {
    let angle = rng.random::<f64>() * std::f64::consts::TAU;
    mesh.rotated_z(cast(angle))
}

fn bounding_box<T: Real>(points: &[Point3<T>]) -> Option<(Point3<T>, Point3<T>)> {
    let first = points.first()?;
    let mut lo = *first;
    let mut hi = *first;
    for p in points {
        lo = Point3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
        hi = Point3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
    }
    Some((lo, hi))
}

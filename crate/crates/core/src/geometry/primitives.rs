//! Procedural primitive meshes, used for tests, benchmarks, and demo scenes.

use nalgebra::{Point3, Vector3};

use super::TriangleMesh;
use crate::num::{cast, Real};

/// Axis-aligned box centered at the origin with the given edge lengths.
pub fn box_mesh<T: Real>(extents: Vector3<T>) -> TriangleMesh<T> {
    let h = extents * cast::<T>(0.5);
    let v = |x: i32, y: i32, z: i32| {
        Point3::new(
            h.x * cast::<T>(x as f64),
            h.y * cast::<T>(y as f64),
            h.z * cast::<T>(z as f64),
        )
    };
    let vertices = vec![
        v(-1, -1, -1),
        v(1, -1, -1),
        v(1, 1, -1),
        v(-1, 1, -1),
        v(-1, -1, 1),
        v(1, -1, 1),
        v(1, 1, 1),
        v(-1, 1, 1),
    ];
    // Outward winding.
    let faces = vec![
        [0, 2, 1],
        [0, 3, 2], // -z
        [4, 5, 6],
        [4, 6, 7], // +z
        [0, 1, 5],
        [0, 5, 4], // -y
        [2, 3, 7],
        [2, 7, 6], // +y
        [1, 2, 6],
        [1, 6, 5], // +x
        [3, 0, 4],
        [3, 4, 7], // -x
    ];
    TriangleMesh::new(vertices, faces).expect("box is non-degenerate")
}

/// Icosphere of the given radius; `subdivisions` quadruples the face count
/// each step (level 0 is an icosahedron with 20 faces).
pub fn icosphere<T: Real>(radius: T, subdivisions: u32) -> TriangleMesh<T> {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut verts: Vec<Vector3<f64>> = vec![
        Vector3::new(-1.0, phi, 0.0),
        Vector3::new(1.0, phi, 0.0),
        Vector3::new(-1.0, -phi, 0.0),
        Vector3::new(1.0, -phi, 0.0),
        Vector3::new(0.0, -1.0, phi),
        Vector3::new(0.0, 1.0, phi),
        Vector3::new(0.0, -1.0, -phi),
        Vector3::new(0.0, 1.0, -phi),
        Vector3::new(phi, 0.0, -1.0),
        Vector3::new(phi, 0.0, 1.0),
        Vector3::new(-phi, 0.0, -1.0),
        Vector3::new(-phi, 0.0, 1.0),
    ]
    .into_iter()
    .map(|v| v.normalize())
    .collect();

    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..subdivisions {
        let mut midpoint = std::collections::HashMap::<(u32, u32), u32>::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mid = |a: u32, b: u32, verts: &mut Vec<Vector3<f64>>| -> u32 {
                let key = (a.min(b), a.max(b));
                *midpoint.entry(key).or_insert_with(|| {
                    let m = ((verts[a as usize] + verts[b as usize]) * 0.5).normalize();
                    verts.push(m);
                    (verts.len() - 1) as u32
                })
            };
            let ab = mid(f[0], f[1], &mut verts);
            let bc = mid(f[1], f[2], &mut verts);
            let ca = mid(f[2], f[0], &mut verts);
            next.push([f[0], ab, ca]);
            next.push([f[1], bc, ab]);
            next.push([f[2], ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }

    let vertices = verts
        .into_iter()
        .map(|v| Point3::from(v.map(|c| cast::<T>(c)) * radius))
        .collect();
    TriangleMesh::new(vertices, faces).expect("icosphere is non-degenerate")
}

/// Closed cylinder along z, centered at the origin.
pub fn cylinder<T: Real>(radius: T, height: T, segments: u32) -> TriangleMesh<T> {
    assert!(segments >= 3);
    let half = height * cast::<T>(0.5);
    let mut vertices: Vec<Point3<T>> = Vec::new();
    for ring in [-1.0, 1.0] {
        let z = half * cast::<T>(ring);
        for s in 0..segments {
            let a = std::f64::consts::TAU * s as f64 / segments as f64;
            vertices.push(Point3::new(
                radius * cast::<T>(a.cos()),
                radius * cast::<T>(a.sin()),
                z,
            ));
        }
    }
    let bottom_center = vertices.len() as u32;
    vertices.push(Point3::new(T::zero(), T::zero(), -half));
    let top_center = vertices.len() as u32;
    vertices.push(Point3::new(T::zero(), T::zero(), half));

    let mut faces = Vec::new();
    for s in 0..segments {
        let s2 = (s + 1) % segments;
        let (b0, b1) = (s, s2);
        let (t0, t1) = (segments + s, segments + s2);
        faces.push([b0, b1, t1]);
        faces.push([b0, t1, t0]);
        faces.push([bottom_center, b1, b0]);
        faces.push([top_center, t0, t1]);
    }
    TriangleMesh::new(vertices, faces).expect("cylinder is non-degenerate")
}

/// Closed cone along z with its base at -height/2 and apex at +height/2.
pub fn cone<T: Real>(radius: T, height: T, segments: u32) -> TriangleMesh<T> {
    assert!(segments >= 3);
    let half = height * cast::<T>(0.5);
    let mut vertices: Vec<Point3<T>> = Vec::new();
    for s in 0..segments {
        let a = std::f64::consts::TAU * s as f64 / segments as f64;
        vertices.push(Point3::new(
            radius * cast::<T>(a.cos()),
            radius * cast::<T>(a.sin()),
            -half,
        ));
    }
    let apex = vertices.len() as u32;
    vertices.push(Point3::new(T::zero(), T::zero(), half));
    let base_center = vertices.len() as u32;
    vertices.push(Point3::new(T::zero(), T::zero(), -half));

    let mut faces = Vec::new();
    for s in 0..segments {
        let s2 = (s + 1) % segments;
        faces.push([s, s2, apex]);
        faces.push([base_center, s2, s]);
    }
    TriangleMesh::new(vertices, faces).expect("cone is non-degenerate")
}

/// Latitude/longitude sphere with explicit pole vertices at (0, 0, +-r).
pub fn uv_sphere<T: Real>(radius: T, rings: u32, segments: u32) -> TriangleMesh<T> {
    assert!(rings >= 2 && segments >= 3);
    let mut vertices: Vec<Point3<T>> = Vec::new();
    vertices.push(Point3::new(T::zero(), T::zero(), radius)); // north pole
    for r in 1..rings {
        let theta = std::f64::consts::PI * r as f64 / rings as f64;
        for s in 0..segments {
            let phi = std::f64::consts::TAU * s as f64 / segments as f64;
            vertices.push(Point3::new(
                radius * cast::<T>(theta.sin() * phi.cos()),
                radius * cast::<T>(theta.sin() * phi.sin()),
                radius * cast::<T>(theta.cos()),
            ));
        }
    }
    let south = vertices.len() as u32;
    vertices.push(Point3::new(T::zero(), T::zero(), -radius));

    let ring = |r: u32, s: u32| 1 + (r - 1) * segments + (s % segments);
    let mut faces = Vec::new();
    for s in 0..segments {
        faces.push([0, ring(1, s + 1), ring(1, s)]);
        faces.push([south, ring(rings - 1, s), ring(rings - 1, s + 1)]);
    }
    for r in 1..rings - 1 {
        for s in 0..segments {
            let (a, b) = (ring(r, s), ring(r, s + 1));
            let (c, d) = (ring(r + 1, s), ring(r + 1, s + 1));
            faces.push([a, b, d]);
            faces.push([a, d, c]);
        }
    }
    TriangleMesh::new(vertices, faces).expect("uv sphere is non-degenerate")
}

/// Rectangle in the xy-plane centered at the origin, normal +z (two
/// triangles).
pub fn plane<T: Real>(width: T, height: T) -> TriangleMesh<T> {
    let hw = width * cast::<T>(0.5);
    let hh = height * cast::<T>(0.5);
    let vertices = vec![
        Point3::new(-hw, -hh, T::zero()),
        Point3::new(hw, -hh, T::zero()),
        Point3::new(hw, hh, T::zero()),
        Point3::new(-hw, hh, T::zero()),
    ];
    let faces = vec![[0, 1, 2], [0, 2, 3]];
    TriangleMesh::new(vertices, faces).expect("plane is non-degenerate")
}

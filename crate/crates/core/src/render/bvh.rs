//! Bounding-volume hierarchy over mesh triangles for ray queries.
//!
//! Queries return the same nearest hit as brute-force triangle iteration;
//! the tests check this against an exhaustive oracle.

use nalgebra::{Point3, Vector3};

use crate::geometry::TriangleMesh;
use crate::num::{cast, Real};

/// Ray with arbitrary-length direction; hit parameters t are expressed in
/// units of `dir`, so `origin + dir * t` is the hit point.
#[derive(Debug, Clone, Copy)]
pub struct Ray<T: Real> {
    pub origin: Point3<T>,
    pub dir: Vector3<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit<T: Real> {
    pub t: T,
    pub face: usize,
}

#[derive(Debug, Clone)]
struct Node<T: Real> {
    lo: Point3<T>,
    hi: Point3<T>,
    // Leaf when count > 0: triangles order[start..start+count].
    // Interior otherwise: children at `left` and `right`.
    left: u32,
    right: u32,
    start: u32,
    count: u32,
}

#[derive(Debug, Clone)]
pub struct Bvh<T: Real> {
    nodes: Vec<Node<T>>,
    order: Vec<u32>,
    tris: Vec<[Point3<T>; 3]>,
}

const LEAF_SIZE: usize = 4;

impl<T: Real> Bvh<T> {
    /// Build over all faces of `mesh`. An empty mesh yields a structure that
    /// reports no hits.
    pub fn build(mesh: &TriangleMesh<T>) -> Self {
        let tris: Vec<[Point3<T>; 3]> = (0..mesh.face_count()).map(|i| mesh.triangle(i)).collect();
        Self::from_triangles(tris)
    }

    pub fn from_triangles(tris: Vec<[Point3<T>; 3]>) -> Self {
        let n = tris.len();
        let mut order: Vec<u32> = (0..n as u32).collect();
        let centroids: Vec<Point3<T>> = tris
            .iter()
            .map(|t| Point3::from((t[0].coords + t[1].coords + t[2].coords) / cast::<T>(3.0)))
            .collect();
        let mut nodes = Vec::new();
        if n > 0 {
            build_node(&tris, &centroids, &mut order, 0, n, &mut nodes);
        }
        Self { nodes, order, tris }
    }

    /// Nearest hit with t in (t_min, t_max).
    pub fn nearest(&self, ray: &Ray<T>, t_min: T, t_max: T) -> Option<Hit<T>> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = inv_dir(&ray.dir);
        let mut best: Option<Hit<T>> = None;
        let mut limit = t_max;
        let mut stack = [0u32; 64];
        let mut top = 0usize;
        stack[top] = 0;
        top += 1;
        while top > 0 {
            top -= 1;
            let node = &self.nodes[stack[top] as usize];
            if !hit_aabb(ray, &inv, &node.lo, &node.hi, t_min, limit) {
                continue;
            }
            if node.count > 0 {
                for k in node.start..node.start + node.count {
                    let face = self.order[k as usize] as usize;
                    let tri = &self.tris[face];
                    if let Some(t) = ray_triangle(ray, &tri[0], &tri[1], &tri[2]) {
                        if t > t_min && t < limit {
                            limit = t;
                            best = Some(Hit { t, face });
                        }
                    }
                }
            } else {
                stack[top] = node.left;
                stack[top + 1] = node.right;
                top += 2;
            }
        }
        best
    }

    /// True when any triangle intersects the ray with t in (t_min, t_max).
    pub fn occluded(&self, ray: &Ray<T>, t_min: T, t_max: T) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        let inv = inv_dir(&ray.dir);
        let mut stack = [0u32; 64];
        let mut top = 0usize;
        stack[top] = 0;
        top += 1;
        while top > 0 {
            top -= 1;
            let node = &self.nodes[stack[top] as usize];
            if !hit_aabb(ray, &inv, &node.lo, &node.hi, t_min, t_max) {
                continue;
            }
            if node.count > 0 {
                for k in node.start..node.start + node.count {
                    let tri = &self.tris[self.order[k as usize] as usize];
                    if let Some(t) = ray_triangle(ray, &tri[0], &tri[1], &tri[2]) {
                        if t > t_min && t < t_max {
                            return true;
                        }
                    }
                }
            } else {
                stack[top] = node.left;
                stack[top + 1] = node.right;
                top += 2;
            }
        }
        false
    }

    /// Brute-force nearest hit over every triangle; the reference the tree is
    /// checked against.
    pub fn nearest_brute_force(&self, ray: &Ray<T>, t_min: T, t_max: T) -> Option<Hit<T>> {
        let mut best: Option<Hit<T>> = None;
        let mut limit = t_max;
        for (face, tri) in self.tris.iter().enumerate() {
            if let Some(t) = ray_triangle(ray, &tri[0], &tri[1], &tri[2]) {
                if t > t_min && t < limit {
                    limit = t;
                    best = Some(Hit { t, face });
                }
            }
        }
        best
    }
}

fn build_node<T: Real>(
    tris: &[[Point3<T>; 3]],
    centroids: &[Point3<T>],
    order: &mut [u32],
    start: usize,
    count: usize,
    nodes: &mut Vec<Node<T>>,
) -> u32 {
    let slot = nodes.len() as u32;
    let (lo, hi) = bounds(tris, &order[start..start + count]);
    nodes.push(Node {
        lo,
        hi,
        left: 0,
        right: 0,
        start: start as u32,
        count: count as u32,
    });

    if count <= LEAF_SIZE {
        return slot;
    }

    // Median split along the longest centroid-extent axis.
    let (clo, chi) = centroid_bounds(centroids, &order[start..start + count]);
    let extent = chi - clo;
    let axis = if extent.x >= extent.y && extent.x >= extent.z {
        0
    } else if extent.y >= extent.z {
        1
    } else {
        2
    };
    if extent[axis] <= T::zero() {
        return slot; // all centroids coincide; keep as a fat leaf
    }
    let slice = &mut order[start..start + count];
    let mid = count / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| {
        centroids[a as usize][axis]
            .partial_cmp(&centroids[b as usize][axis])
            .expect("finite centroid coordinates")
            .then(a.cmp(&b))
    });

    let left = build_node(tris, centroids, order, start, mid, nodes);
    let right = build_node(tris, centroids, order, start + mid, count - mid, nodes);
    let node = &mut nodes[slot as usize];
    node.left = left;
    node.right = right;
    node.count = 0;
    slot
}

fn bounds<T: Real>(tris: &[[Point3<T>; 3]], idx: &[u32]) -> (Point3<T>, Point3<T>) {
    let mut lo = tris[idx[0] as usize][0];
    let mut hi = lo;
    for &i in idx {
        for p in &tris[i as usize] {
            lo = Point3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
            hi = Point3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
        }
    }
    (lo, hi)
}

fn centroid_bounds<T: Real>(centroids: &[Point3<T>], idx: &[u32]) -> (Point3<T>, Point3<T>) {
    let mut lo = centroids[idx[0] as usize];
    let mut hi = lo;
    for &i in idx {
        let p = centroids[i as usize];
        lo = Point3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
        hi = Point3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
    }
    (lo, hi)
}

fn inv_dir<T: Real>(dir: &Vector3<T>) -> Vector3<T> {
    // Divisions by zero produce infinities, which the slab test handles.
    Vector3::new(T::one() / dir.x, T::one() / dir.y, T::one() / dir.z)
}

fn hit_aabb<T: Real>(
    ray: &Ray<T>,
    inv: &Vector3<T>,
    lo: &Point3<T>,
    hi: &Point3<T>,
    t_min: T,
    t_max: T,
) -> bool {
    let mut t0 = t_min;
    let mut t1 = t_max;
    for axis in 0..3 {
        // A zero direction component would turn the slab test into 0 * inf;
        // the ray then hits iff its origin lies within the slab.
        if ray.dir[axis] == T::zero() {
            if ray.origin[axis] < lo[axis] || ray.origin[axis] > hi[axis] {
                return false;
            }
            continue;
        }
        let a = (lo[axis] - ray.origin[axis]) * inv[axis];
        let b = (hi[axis] - ray.origin[axis]) * inv[axis];
        let (near, far) = if a <= b { (a, b) } else { (b, a) };
        if near > t0 {
            t0 = near;
        }
        if far < t1 {
            t1 = far;
        }
        if t0 > t1 {
            return false;
        }
    }
    true
}

/// Moller-Trumbore intersection, double-sided. Returns the ray parameter in
/// units of `ray.dir`.
pub fn ray_triangle<T: Real>(
    ray: &Ray<T>,
    a: &Point3<T>,
    b: &Point3<T>,
    c: &Point3<T>,
) -> Option<T> {
    let e1 = b - a;
    let e2 = c - a;
    let pvec = ray.dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() <= T::zero() {
        return None;
    }
    let inv_det = T::one() / det;
    let tvec = ray.origin - a;
    let u = tvec.dot(&pvec) * inv_det;
    if u < T::zero() || u > T::one() {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = ray.dir.dot(&qvec) * inv_det;
    if v < T::zero() || u + v > T::one() {
        return None;
    }
    Some(e2.dot(&qvec) * inv_det)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_triangle_matches_brute_force() {
        let mesh = primitives::plane(2.0f64, 2.0);
        let bvh = Bvh::build(&mesh);
        let ray = Ray {
            origin: Point3::new(0.1, 0.2, -3.0),
            dir: Vector3::new(0.0, 0.0, 1.0),
        };
        let a = bvh.nearest(&ray, 1e-9, f64::INFINITY);
        let b = bvh.nearest_brute_force(&ray, 1e-9, f64::INFINITY);
        assert_eq!(a, b);
        assert!((a.unwrap().t - 3.0).abs() < 1e-12);
    }

    #[test]
    fn missing_ray_hits_nothing() {
        let mesh = primitives::plane(2.0f64, 2.0);
        let bvh = Bvh::build(&mesh);
        let ray = Ray {
            origin: Point3::new(5.0, 5.0, -3.0),
            dir: Vector3::new(0.0, 0.0, 1.0),
        };
        assert!(bvh.nearest(&ray, 1e-9, f64::INFINITY).is_none());
        assert!(bvh.nearest_brute_force(&ray, 1e-9, f64::INFINITY).is_none());
    }

    #[test]
    fn sphere_rays_match_brute_force_oracle() {
        // ~10k-triangle sphere, 1k random rays.
        let mesh = primitives::icosphere(1.0f64, 4)
            .normalize_to_unit_cube()
            .unwrap();
        assert!(mesh.face_count() >= 5000);
        let bvh = Bvh::build(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut hits = 0;
        for _ in 0..1000 {
            let origin = Point3::new(
                rng.random::<f64>() * 4.0 - 2.0,
                rng.random::<f64>() * 4.0 - 2.0,
                -3.0,
            );
            let target = Point3::new(
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
            );
            let ray = Ray {
                origin,
                dir: target - origin,
            };
            let fast = bvh.nearest(&ray, 1e-9, f64::INFINITY);
            let slow = bvh.nearest_brute_force(&ray, 1e-9, f64::INFINITY);
            match (fast, slow) {
                (None, None) => {}
                (Some(f), Some(s)) => {
                    assert!((f.t - s.t).abs() < 1e-12, "t mismatch: {} vs {}", f.t, s.t);
                    if (f.t - s.t).abs() == 0.0 {
                        hits += 1;
                    }
                }
                other => panic!("hit disagreement: {other:?}"),
            }
        }
        assert!(hits > 100, "expected a healthy number of hits, got {hits}");
    }

    #[test]
    fn occlusion_respects_t_range() {
        let mesh = primitives::plane(2.0f64, 2.0);
        let bvh = Bvh::build(&mesh);
        let ray = Ray {
            origin: Point3::new(0.0, 0.0, -1.0),
            dir: Vector3::new(0.0, 0.0, 1.0),
        };
        assert!(bvh.occluded(&ray, 1e-9, 2.0));
        assert!(!bvh.occluded(&ray, 1e-9, 0.5)); // plane is at t = 1
    }
}

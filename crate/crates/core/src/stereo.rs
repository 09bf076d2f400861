//! Block-matching disparity estimation, disparity-to-depth conversion,
//! back-projection to 3D points, and depth-map downsampling.
//!
//! The matcher is plain SAD block matching over integer disparities with a
//! uniqueness ratio test, left-right consistency, a texture-variance gate,
//! and 3-point parabolic subpixel refinement. All functions are pure over
//! immutable images; rows are matched in parallel and the result does not
//! depend on the worker count.

use nalgebra::Point3;
use rayon::prelude::*;

use crate::camera::{CameraIntrinsics, RigidPose};
use crate::error::{Error, Result};
use crate::image::{DepthMap, DisparityMap, GrayImage};
use crate::num::{cast, to_f64, Real};
use crate::pointcloud::PointCloud;

/// Block-matching parameters.
#[derive(Debug, Clone, Copy)]
pub struct MatchParams<T: Real> {
    /// Window half-size; the SAD window is (2r+1) x (2r+1).
    pub window_radius: usize,
    /// Largest disparity searched (inclusive), in pixels.
    pub max_disparity: usize,
    /// Second-best SAD must be at least this multiple of the best.
    pub uniqueness_ratio: T,
    /// Allowed left/right disparity disagreement, in pixels.
    pub lr_consistency_tol: usize,
    /// Minimum window intensity variance; rejects textureless regions.
    pub texture_threshold: T,
}

impl<T: Real> Default for MatchParams<T> {
    fn default() -> Self {
        Self {
            window_radius: 5,
            max_disparity: 128,
            uniqueness_ratio: cast(1.15),
            lr_consistency_tol: 1,
            texture_threshold: cast(1e-4),
        }
    }
}

impl<T: Real> MatchParams<T> {
    fn validate(&self) -> Result<()> {
        if self.window_radius < 1 {
            return Err(Error::InvalidConfig("window_radius must be >= 1".into()));
        }
        if self.max_disparity < 1 {
            return Err(Error::InvalidConfig("max_disparity must be >= 1".into()));
        }
        if self.uniqueness_ratio <= T::one() {
            return Err(Error::InvalidConfig("uniqueness_ratio must be > 1".into()));
        }
        Ok(())
    }
}

// Output rows are processed in fixed-size chunks so the cost volume stays
// small and the chunking (not the thread count) decides the work split.
const ROW_CHUNK: usize = 8;

/// SAD block matching over rectified images. For each left pixel the best
/// integer disparity in [0, max_disparity] survives only if it passes the
/// uniqueness, left-right-consistency, and texture tests; survivors are
/// refined with a 3-point parabola. Pixels within `window_radius` of any
/// edge, or within `max_disparity + window_radius` of the left edge (where
/// the search range would be truncated), are invalid.
pub fn block_match<T: Real>(
    left: &GrayImage<T>,
    right: &GrayImage<T>,
    params: &MatchParams<T>,
) -> Result<DisparityMap<T>> {
    params.validate()?;
    if left.width() != right.width() || left.height() != right.height() {
        return Err(Error::DimensionMismatch(
            left.width(),
            left.height(),
            right.width(),
            right.height(),
        ));
    }
    let w = left.width() as usize;
    let h = left.height() as usize;
    let r = params.window_radius;
    let d_max = params.max_disparity;

    let mut out = DisparityMap::invalid(left.width(), left.height());
    if w < 2 * r + 2 || h < 2 * r + 1 {
        return Ok(out); // no pixel has a full window
    }

    let texture_ok = texture_mask(left, r, params.texture_threshold);

    let first_row = r;
    let last_row = h - r; // exclusive
    let chunk_starts: Vec<usize> = (first_row..last_row).step_by(ROW_CHUNK).collect();

    let chunks: Vec<(usize, Vec<RowResult<T>>)> = chunk_starts
        .par_iter()
        .map(|&ys| {
            let ye = (ys + ROW_CHUNK).min(last_row);
            let rows = match_row_chunk(left, right, params, &texture_ok, ys, ye);
            (ys, rows)
        })
        .collect();

    for (ys, rows) in chunks {
        for (i, row) in rows.into_iter().enumerate() {
            let y = (ys + i) as u32;
            for (x, disp) in row.disparities {
                out.set(x as u32, y, disp);
            }
        }
    }
    let _ = d_max;
    Ok(out)
}

struct RowResult<T: Real> {
    disparities: Vec<(usize, T)>,
}

fn match_row_chunk<T: Real>(
    left: &GrayImage<T>,
    right: &GrayImage<T>,
    params: &MatchParams<T>,
    texture_ok: &[bool],
    ys: usize,
    ye: usize,
) -> Vec<RowResult<T>> {
    let w = left.width() as usize;
    let r = params.window_radius;
    let d_n = params.max_disparity + 1;
    let rows = ye - ys;
    let win = 2 * r + 1;

    // cost[(row * w + x) * d_n + d] = SAD of the window at (x, y) against the
    // right image shifted by d. Filled disparity-by-disparity with running
    // horizontal and vertical window sums.
    let mut cost = vec![T::zero(); rows * w * d_n];
    let mut hsum = vec![T::zero(); (rows + 2 * r) * w];
    let mut vsum = vec![T::zero(); w];

    for d in 0..d_n {
        let x_first = d + r; // leftmost pixel whose window fits in both images
        let x_last = w - 1 - r; // rightmost, inclusive
        if x_first > x_last {
            break;
        }
        for (k, yy) in (ys - r..ye + r).enumerate() {
            let lrow = left.row(yy as u32);
            let rrow = right.row(yy as u32);
            let hrow = &mut hsum[k * w..(k + 1) * w];
            let mut acc = T::zero();
            for x in d..d + win {
                acc += (lrow[x] - rrow[x - d]).abs();
            }
            hrow[x_first] = acc;
            for x in x_first + 1..=x_last {
                acc += (lrow[x + r] - rrow[x + r - d]).abs()
                    - (lrow[x - r - 1] - rrow[x - r - 1 - d]).abs();
                hrow[x] = acc;
            }
        }
        vsum[x_first..=x_last].fill(T::zero());
        for k in 0..win {
            let hrow = &hsum[k * w..(k + 1) * w];
            for x in x_first..=x_last {
                vsum[x] += hrow[x];
            }
        }
        for row in 0..rows {
            if row > 0 {
                let sub = &hsum[(row - 1) * w..row * w];
                let add = &hsum[(row - 1 + win) * w..(row + win) * w];
                for x in x_first..=x_last {
                    vsum[x] += add[x] - sub[x];
                }
            }
            for x in x_first..=x_last {
                cost[(row * w + x) * d_n + d] = vsum[x];
            }
        }
    }

    let mut results = Vec::with_capacity(rows);
    let mut right_disp = vec![usize::MAX; w];
    for row in 0..rows {
        let y = ys + row;

        // Right-image winner-take-all from the same cost volume:
        // cost_right(xr, d) = cost_left(xr + d, d).
        for (xr, slot) in right_disp.iter_mut().enumerate().take(w - r).skip(r) {
            let mut best = None;
            let mut best_c = T::zero();
            let lim = (w - 1 - r).saturating_sub(xr).min(params.max_disparity);
            for d in 0..=lim {
                let c = cost[(row * w + xr + d) * d_n + d];
                if best.is_none() || c < best_c {
                    best = Some(d);
                    best_c = c;
                }
            }
            *slot = best.unwrap_or(usize::MAX);
        }

        let mut disparities = Vec::new();
        // Pixels whose search range would be truncated by the left border
        // (x - r < max_disparity) stay invalid, like the window border.
        let x_valid_from = (params.max_disparity + r).max(r);
        for x in x_valid_from..w - r {
            if !texture_ok[y * w + x] {
                continue;
            }
            let lim = x.saturating_sub(r).min(params.max_disparity);
            let c = &cost[(row * w + x) * d_n..(row * w + x) * d_n + lim + 1];

            let mut best_d = 0usize;
            let mut best_c = c[0];
            for (d, &v) in c.iter().enumerate().skip(1) {
                if v < best_c {
                    best_c = v;
                    best_d = d;
                }
            }

            // Uniqueness: second best over disparities not adjacent to the
            // winner (neighbors share most of the window and are always
            // close).
            let mut second: Option<T> = None;
            for (d, &v) in c.iter().enumerate() {
                if d + 1 >= best_d && d <= best_d + 1 {
                    continue;
                }
                if second.is_none_or(|s| v < s) {
                    second = Some(v);
                }
            }
            if let Some(s) = second {
                if s < params.uniqueness_ratio * best_c {
                    continue;
                }
            }

            // Left-right consistency on integer disparities.
            let xr = x - best_d;
            let rd = right_disp[xr];
            if rd == usize::MAX || rd.abs_diff(best_d) > params.lr_consistency_tol {
                continue;
            }

            // Parabolic subpixel refinement. A zero-cost winner is an exact
            // match; the parabola is meaningless there.
            let mut delta = T::zero();
            if best_d > 0 && best_d < lim && best_c > T::zero() {
                let c0 = c[best_d - 1];
                let c2 = c[best_d + 1];
                let denom = c0 - best_c - best_c + c2;
                if denom > T::zero() {
                    let half = cast::<T>(0.5);
                    delta = (half * (c0 - c2) / denom).clamp(-half, half);
                }
            }
            disparities.push((x, cast::<T>(best_d as f64) + delta));
        }
        results.push(RowResult { disparities });
    }
    results
}

/// Per-pixel window-variance gate, computed from integral images.
fn texture_mask<T: Real>(img: &GrayImage<T>, r: usize, threshold: T) -> Vec<bool> {
    let w = img.width() as usize;
    let h = img.height() as usize;
    let mut sum = vec![0f64; (w + 1) * (h + 1)];
    let mut sq = vec![0f64; (w + 1) * (h + 1)];
    for y in 0..h {
        let row = img.row(y as u32);
        for x in 0..w {
            let v = to_f64(row[x]);
            sum[(y + 1) * (w + 1) + x + 1] =
                v + sum[y * (w + 1) + x + 1] + sum[(y + 1) * (w + 1) + x] - sum[y * (w + 1) + x];
            sq[(y + 1) * (w + 1) + x + 1] =
                v * v + sq[y * (w + 1) + x + 1] + sq[(y + 1) * (w + 1) + x] - sq[y * (w + 1) + x];
        }
    }
    let thr = to_f64(threshold);
    let n = ((2 * r + 1) * (2 * r + 1)) as f64;
    let mut mask = vec![false; w * h];
    for y in r..h - r {
        for x in r..w.saturating_sub(r) {
            let (x0, y0, x1, y1) = (x - r, y - r, x + r + 1, y + r + 1);
            let rect = |m: &[f64]| {
                m[y1 * (w + 1) + x1] - m[y0 * (w + 1) + x1] - m[y1 * (w + 1) + x0]
                    + m[y0 * (w + 1) + x0]
            };
            let s = rect(&sum);
            let s2 = rect(&sq);
            let var = (s2 - s * s / n) / n;
            mask[y * w + x] = var >= thr;
        }
    }
    mask
}

/// Convert disparity to metric depth via z = f*b/d. Disparities at or below
/// 0.5 px are marked invalid instead of producing huge or infinite depths.
pub fn disparity_to_depth<T: Real>(
    disp: &DisparityMap<T>,
    focal_px: T,
    baseline_m: T,
) -> Result<DepthMap<T>> {
    if focal_px <= T::zero() || baseline_m <= T::zero() {
        return Err(Error::InvalidConfig(
            "focal length and baseline must be positive".into(),
        ));
    }
    let d_min = cast::<T>(0.5);
    let fb = focal_px * baseline_m;
    let mut depth = DepthMap::invalid(disp.width(), disp.height());
    for (x, y, d) in disp.iter_valid() {
        if d > d_min {
            depth.set(x, y, fb / d);
        }
    }
    Ok(depth)
}

/// Back-project every valid depth pixel to a world-frame 3D point.
pub fn backproject<T: Real>(
    depth: &DepthMap<T>,
    intrinsics: &CameraIntrinsics<T>,
    pose: &RigidPose<T>,
) -> Result<PointCloud<T>> {
    if depth.valid_count() == 0 {
        return Err(Error::EmptyInput("depth map has no valid pixels".into()));
    }
    let points: Vec<Point3<T>> = depth
        .iter_valid()
        .map(|(x, y, z)| pose.to_world(&intrinsics.backproject_pixel(x, y, z)))
        .collect();
    Ok(PointCloud::new(points))
}

/// Reduce resolution by an integer factor; each output pixel is the median of
/// the valid depths in its block, invalid when fewer than half the block's
/// pixels are valid.
pub fn downsample_depth<T: Real>(depth: &DepthMap<T>, factor: u32) -> Result<DepthMap<T>> {
    if factor == 0
        || !depth.width().is_multiple_of(factor)
        || !depth.height().is_multiple_of(factor)
    {
        return Err(Error::InvalidConfig(format!(
            "factor {factor} does not divide {}x{}",
            depth.width(),
            depth.height()
        )));
    }
    let ow = depth.width() / factor;
    let oh = depth.height() / factor;
    let block = (factor * factor) as usize;
    let mut out = DepthMap::invalid(ow, oh);
    let mut vals: Vec<T> = Vec::with_capacity(block);
    for oy in 0..oh {
        for ox in 0..ow {
            vals.clear();
            for dy in 0..factor {
                for dx in 0..factor {
                    if let Some(v) = depth.get(ox * factor + dx, oy * factor + dy) {
                        vals.push(v);
                    }
                }
            }
            if vals.len() * 2 < block {
                continue;
            }
            vals.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite depths"));
            let n = vals.len();
            let median = if n % 2 == 1 {
                vals[n / 2]
            } else {
                (vals[n / 2 - 1] + vals[n / 2]) * cast::<T>(0.5)
            };
            out.set(ox, oy, median);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::make_speckle_pattern;
    use proptest::prelude::*;

    /// Left image: smooth speckle texture. Right image: the same content
    /// shifted left by k pixels, so every pixel has disparity
    /// u_left - u_right = k.
    fn shifted_pair(w: u32, h: u32, k: usize, seed: u64) -> (GrayImage<f64>, GrayImage<f64>) {
        let base = make_speckle_pattern::<f64>(seed, w + k as u32, h, 0.25)
            .unwrap()
            .texture;
        let mut left = GrayImage::zeros(w, h);
        let mut right = GrayImage::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                left.set(x, y, base.get(x, y));
                right.set(x, y, base.get(x + k as u32, y));
            }
        }
        (left, right)
    }

    #[test]
    fn exact_integer_shift_recovers_disparity() {
        let k = 7;
        let (left, right) = shifted_pair(160, 64, k, 3);
        let params = MatchParams {
            max_disparity: 24,
            ..MatchParams::default()
        };
        let disp = block_match(&left, &right, &params).unwrap();
        assert!(disp.valid_count() > 1000, "valid: {}", disp.valid_count());
        for (x, y, d) in disp.iter_valid() {
            assert!(
                (d - k as f64).abs() <= 0.01,
                "({x},{y}): disparity {d} vs {k}"
            );
        }
    }

    #[test]
    fn uniform_images_are_all_invalid() {
        let left = GrayImage::from_pixels(64, 64, vec![0.5f64; 64 * 64]).unwrap();
        let right = left.clone();
        let disp = block_match(&left, &right, &MatchParams::default()).unwrap();
        assert_eq!(disp.valid_count(), 0);
    }

    #[test]
    fn mismatched_resolutions_error() {
        let a = GrayImage::<f64>::zeros(32, 32);
        let b = GrayImage::<f64>::zeros(32, 16);
        assert!(matches!(
            block_match(&a, &b, &MatchParams::default()),
            Err(Error::DimensionMismatch(..))
        ));
    }

    #[test]
    fn disparity_to_depth_formula() {
        let mut disp = DisparityMap::<f64>::invalid(4, 1);
        disp.set(0, 0, 25.0);
        disp.set(1, 0, 50.0);
        disp.set(2, 0, 0.0); // guarded
        let depth = disparity_to_depth(&disp, 1000.0, 0.1).unwrap();
        assert_eq!(depth.get(0, 0), Some(4.0));
        assert_eq!(depth.get(1, 0), Some(2.0));
        assert_eq!(depth.get(2, 0), None);
        assert_eq!(depth.get(3, 0), None); // was invalid already
    }

    #[test]
    fn depth_times_disparity_is_fb_and_monotone() {
        let f = 870.0f64;
        let b = 0.12f64;
        let mut disp = DisparityMap::<f64>::invalid(64, 1);
        for x in 0..64 {
            disp.set(x, 0, 1.0 + x as f64 * 1.7);
        }
        let depth = disparity_to_depth(&disp, f, b).unwrap();
        let mut prev = f64::INFINITY;
        for x in 0..64 {
            let d = disp.get(x, 0).unwrap();
            let z = depth.get(x, 0).unwrap();
            assert!((z * d - f * b).abs() / (f * b) < 1e-12);
            assert!(z < prev, "depth must shrink as disparity grows");
            prev = z;
        }
    }

    #[test]
    fn backproject_principal_point() {
        let intr = CameraIntrinsics::<f64>::new(500.0, (16.5, 16.5), 32, 32).unwrap();
        let mut depth = DepthMap::invalid(32, 32);
        depth.set(16, 16, 3.0); // pixel center (16.5, 16.5) = principal point
        let pc = backproject(&depth, &intr, &RigidPose::identity()).unwrap();
        assert_eq!(pc.len(), 1);
        assert!((pc.points()[0] - Point3::new(0.0, 0.0, 3.0)).norm() < 1e-12);
    }

    #[test]
    fn backproject_inverts_projection() {
        let intr = CameraIntrinsics::<f64>::centered(200.0, 256, 256).unwrap();
        let pose = RigidPose::look_at(
            Point3::new(1.0, -2.0, 1.5),
            Point3::origin(),
            nalgebra::Vector3::z(),
        )
        .unwrap();
        let p_world = Point3::new(0.21, 0.05, -0.13);
        let p_cam = pose.to_camera(&p_world);
        let (u, v) = intr.project(&p_cam).unwrap();
        // write the depth into the pixel whose center is nearest (u, v)
        let (ix, iy) = ((u - 0.5).round() as u32, (v - 0.5).round() as u32);
        let mut depth = DepthMap::invalid(256, 256);
        depth.set(ix, iy, p_cam.z);
        let pc = backproject(&depth, &intr, &pose).unwrap();
        // the pixel-center ray differs from the exact projection by < 1 px
        let err = (pc.points()[0] - p_world).norm();
        assert!(err < p_cam.z * 1.5 / 200.0, "round trip error {err}");
    }

    #[test]
    fn backproject_exact_on_pixel_centers() {
        let intr = CameraIntrinsics::<f64>::centered(640.0, 64, 64).unwrap();
        let pose = RigidPose::identity();
        let mut depth = DepthMap::invalid(64, 64);
        depth.set(10, 20, 2.5);
        let p = backproject(&depth, &intr, &pose).unwrap().points()[0];
        let p_cam = Point3::new(p.x, p.y, p.z);
        let (u, v) = intr.project(&p_cam).unwrap();
        assert!((u - 10.5).abs() < 1e-9 && (v - 20.5).abs() < 1e-9);
    }

    #[test]
    fn backproject_empty_mask_errors() {
        let intr = CameraIntrinsics::<f64>::centered(100.0, 8, 8).unwrap();
        let depth = DepthMap::<f64>::invalid(8, 8);
        assert!(backproject(&depth, &intr, &RigidPose::identity()).is_err());
    }

    #[test]
    fn downsample_median_and_shape() {
        let mut depth = DepthMap::<f64>::invalid(8, 8);
        for y in 0..8 {
            for x in 0..8 {
                depth.set(x, y, 4.0);
            }
        }
        // one outlier in the top-left 4x4 block
        depth.set(1, 1, 100.0);
        let low = downsample_depth(&depth, 4).unwrap();
        assert_eq!((low.width(), low.height()), (2, 2));
        assert_eq!(low.get(0, 0), Some(4.0));
        assert_eq!(low.get(1, 1), Some(4.0));
        assert!(downsample_depth(&depth, 3).is_err());
    }

    #[test]
    fn downsample_rejects_mostly_invalid_blocks() {
        let mut depth = DepthMap::<f64>::invalid(4, 4);
        for i in 0..7 {
            depth.set(i % 4, i / 4, 1.0); // 7 of 16 valid
        }
        let low = downsample_depth(&depth, 4).unwrap();
        assert_eq!(low.get(0, 0), None);
        depth.set(3, 1, 1.0); // 8 of 16
        let low = downsample_depth(&depth, 4).unwrap();
        assert_eq!(low.get(0, 0), Some(1.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn shifted_pairs_match_for_any_small_shift(k in 1usize..12, seed in 0u64..50) {
            let (left, right) = shifted_pair(96, 40, k, seed);
            let params = MatchParams { max_disparity: 16, ..MatchParams::default() };
            let disp = block_match(&left, &right, &params).unwrap();
            prop_assert!(disp.valid_count() > 200);
            for (_, _, d) in disp.iter_valid() {
                prop_assert!((d - k as f64).abs() <= 0.01);
            }
        }
    }
}

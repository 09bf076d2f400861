//! Pinhole cameras, rigid poses, and the rectified stereo rig.
//!
//! Camera frame convention: +x right, +y down, +z forward (optical axis).
//! Continuous image coordinates put pixel (ix, iy) at (ix + 0.5, iy + 0.5);
//! a point at camera-frame (X, Y, Z) projects to u = f*X/Z + cx,
//! v = f*Y/Z + cy.

use nalgebra::{Matrix3, Point3, Vector3};

use crate::error::{Error, Result};
use crate::num::{cast, Real};

/// Shared pinhole intrinsics (single focal length, square pixels).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics<T: Real> {
    pub focal_px: T,
    pub principal: (T, T),
    pub width: u32,
    pub height: u32,
}

impl<T: Real> CameraIntrinsics<T> {
    pub fn new(focal_px: T, principal: (T, T), width: u32, height: u32) -> Result<Self> {
        if focal_px <= T::zero() {
            return Err(Error::InvalidConfig("focal length must be positive".into()));
        }
        if width < 2 || height < 2 {
            return Err(Error::InvalidConfig(
                "resolution must be at least 2x2".into(),
            ));
        }
        let (cx, cy) = principal;
        if cx < T::zero()
            || cy < T::zero()
            || cx > cast::<T>(width as f64)
            || cy > cast::<T>(height as f64)
        {
            return Err(Error::InvalidConfig(
                "principal point outside image bounds".into(),
            ));
        }
        Ok(Self {
            focal_px,
            principal,
            width,
            height,
        })
    }

    /// Intrinsics with the principal point at the image center.
    pub fn centered(focal_px: T, width: u32, height: u32) -> Result<Self> {
        Self::new(
            focal_px,
            (
                cast::<T>(width as f64 / 2.0),
                cast::<T>(height as f64 / 2.0),
            ),
            width,
            height,
        )
    }

    /// Project a camera-frame point; `None` when it lies at or behind the
    /// camera plane. Returns continuous image coordinates.
    pub fn project(&self, p: &Point3<T>) -> Option<(T, T)> {
        if p.z <= T::zero() {
            return None;
        }
        let u = self.focal_px * p.x / p.z + self.principal.0;
        let v = self.focal_px * p.y / p.z + self.principal.1;
        Some((u, v))
    }

    pub fn contains(&self, u: T, v: T) -> bool {
        u >= T::zero()
            && v >= T::zero()
            && u < cast::<T>(self.width as f64)
            && v < cast::<T>(self.height as f64)
    }

    /// Camera-frame ray direction through continuous image coordinates
    /// (u, v). The z component is 1, so a ray parameter t equals the
    /// camera-frame depth of the point it reaches.
    pub fn ray_dir(&self, u: T, v: T) -> Vector3<T> {
        Vector3::new(
            (u - self.principal.0) / self.focal_px,
            (v - self.principal.1) / self.focal_px,
            T::one(),
        )
    }

    /// Ray through the center of pixel (ix, iy).
    pub fn pixel_ray_dir(&self, ix: u32, iy: u32) -> Vector3<T> {
        self.ray_dir(cast::<T>(ix as f64 + 0.5), cast::<T>(iy as f64 + 0.5))
    }

    /// Camera-frame point for pixel (ix, iy) at depth `z` (inverse of
    /// projection on pixel centers).
    pub fn backproject_pixel(&self, ix: u32, iy: u32, z: T) -> Point3<T> {
        let u = cast::<T>(ix as f64 + 0.5);
        let v = cast::<T>(iy as f64 + 0.5);
        Point3::new(
            (u - self.principal.0) * z / self.focal_px,
            (v - self.principal.1) * z / self.focal_px,
            z,
        )
    }

    /// Intrinsics of the image after dividing both dimensions by `factor`.
    pub fn downsampled(&self, factor: u32) -> Result<Self> {
        if factor == 0 || !self.width.is_multiple_of(factor) || !self.height.is_multiple_of(factor)
        {
            return Err(Error::InvalidConfig(format!(
                "downsample factor {factor} does not divide {}x{}",
                self.width, self.height
            )));
        }
        let s = cast::<T>(factor as f64);
        Self::new(
            self.focal_px / s,
            (self.principal.0 / s, self.principal.1 / s),
            self.width / factor,
            self.height / factor,
        )
    }
}

/// Rigid transform mapping camera-frame coordinates into the world frame:
/// `p_world = R * p_cam + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose<T: Real> {
    rotation: Matrix3<T>,
    translation: Vector3<T>,
}

impl<T: Real> RigidPose<T> {
    /// Validates that `rotation` is orthonormal with determinant +1.
    pub fn new(rotation: Matrix3<T>, translation: Vector3<T>) -> Result<Self> {
        let tol = cast::<T>((1e3 * T::eps()).max(1e-9));
        let gram = rotation.transpose() * rotation - Matrix3::identity();
        if gram.norm() > tol {
            return Err(Error::Degenerate("rotation is not orthonormal".into()));
        }
        if (rotation.determinant() - T::one()).abs() > tol {
            return Err(Error::Degenerate("rotation determinant is not +1".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Camera at `eye` looking at `target`, with `up` fixing the roll.
    /// In the resulting pose the camera y-axis points away from `up`.
    pub fn look_at(eye: Point3<T>, target: Point3<T>, up: Vector3<T>) -> Result<Self> {
        let forward = target - eye;
        if forward.norm_squared() <= T::zero() {
            return Err(Error::Degenerate("look_at: eye equals target".into()));
        }
        let z = forward.normalize();
        let x = z.cross(&up);
        if x.norm_squared() <= cast::<T>(1e-12) {
            return Err(Error::Degenerate(
                "look_at: view direction parallel to up".into(),
            ));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_columns(&[x, y, z]);
        Self::new(rotation, eye.coords)
    }

    pub fn rotation(&self) -> &Matrix3<T> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<T> {
        &self.translation
    }

    /// Camera origin in world coordinates.
    pub fn center(&self) -> Point3<T> {
        Point3::from(self.translation)
    }

    pub fn to_world(&self, p_cam: &Point3<T>) -> Point3<T> {
        Point3::from(self.rotation * p_cam.coords + self.translation)
    }

    pub fn to_camera(&self, p_world: &Point3<T>) -> Point3<T> {
        Point3::from(self.rotation.transpose() * (p_world.coords - self.translation))
    }

    pub fn direction_to_world(&self, v: &Vector3<T>) -> Vector3<T> {
        self.rotation * v
    }

    /// Camera x-axis in world coordinates.
    pub fn x_axis(&self) -> Vector3<T> {
        self.rotation.column(0).into_owned()
    }

    /// Pose translated in the world frame and rotated in its own frame by
    /// intrinsic z-y-x Euler angles. Used for view jitter around an anchor.
    pub fn perturbed(&self, delta_t: Vector3<T>, euler: (T, T, T)) -> Result<Self> {
        let (rx, ry, rz) = euler;
        let r = nalgebra::Rotation3::from_euler_angles(rx, ry, rz);
        Self::new(self.rotation * r.into_inner(), self.translation + delta_t)
    }
}

/// Rectified stereo rig with an active speckle projector.
///
/// The right camera shares the left camera's orientation and is offset by
/// `baseline_m` along the left camera's x-axis; the projector sits halfway
/// between the two cameras.
#[derive(Debug, Clone)]
pub struct StereoRig<T: Real> {
    pub intrinsics: CameraIntrinsics<T>,
    pub left_pose: RigidPose<T>,
    pub baseline_m: T,
    pub projector_pose: RigidPose<T>,
    pub projector_intrinsics: CameraIntrinsics<T>,
}

impl<T: Real> StereoRig<T> {
    pub fn new(
        intrinsics: CameraIntrinsics<T>,
        left_pose: RigidPose<T>,
        baseline_m: T,
        projector_intrinsics: CameraIntrinsics<T>,
    ) -> Result<Self> {
        if baseline_m <= T::zero() {
            return Err(Error::InvalidConfig("baseline must be positive".into()));
        }
        let half = left_pose.x_axis() * (baseline_m * cast::<T>(0.5));
        let projector_pose = RigidPose::new(*left_pose.rotation(), left_pose.translation() + half)?;
        Ok(Self {
            intrinsics,
            left_pose,
            baseline_m,
            projector_pose,
            projector_intrinsics,
        })
    }

    /// Right camera pose: left pose translated by the baseline along the left
    /// camera's x-axis.
    pub fn right_pose(&self) -> RigidPose<T> {
        RigidPose {
            rotation: self.left_pose.rotation,
            translation: self.left_pose.translation + self.left_pose.x_axis() * self.baseline_m,
        }
    }
}

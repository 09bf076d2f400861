//! Scalar abstraction for the whole crate: f32 or f64.

use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar used by geometry, imaging, and training math.
pub trait Real:
    nalgebra::RealField + Copy + Default + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
    /// Machine epsilon of the concrete type, as f64.
    fn eps() -> f64;
}

impl Real for f32 {
    fn eps() -> f64 {
        f32::EPSILON as f64
    }
}

impl Real for f64 {
    fn eps() -> f64 {
        f64::EPSILON
    }
}

/// Convert an f64 value into the working scalar.
#[inline]
pub fn cast<T: Real>(v: f64) -> T {
    T::from_f64(v).expect("value not representable in scalar type")
}

/// SplitMix64 finalizer; the basis for all derived seeds and hash-based
/// sampling, so results are identical across platforms and worker counts.
#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derive an independent sub-seed from a base seed and a salt.
#[inline]
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    splitmix64(seed ^ splitmix64(salt))
}

/// Convert the working scalar to f64 for I/O and diagnostics.
#[inline]
pub fn to_f64<T: Real>(v: T) -> f64 {
    v.to_f64().expect("scalar not representable as f64")
}

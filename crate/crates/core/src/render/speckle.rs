//! Pseudo-random speckle dot patterns for the active projector.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::num::{cast, to_f64, Real};

/// Projector texture: a field of small Gaussian dot splats.
#[derive(Debug, Clone)]
pub struct SpecklePattern<T: Real> {
    pub texture: GrayImage<T>,
    pub dot_density: T,
    pub seed: u64,
}

/// Build a deterministic speckle pattern. Dot centers are drawn uniformly
/// from a seeded stream; each dot is a Gaussian splat with sigma of one
/// texel. `dot_density` approximates the fraction of texels lit above 0.5.
pub fn make_speckle_pattern<T: Real>(
    seed: u64,
    width: u32,
    height: u32,
    dot_density: T,
) -> Result<SpecklePattern<T>> {
    let density = to_f64(dot_density);
    if !(0.0..1.0).contains(&density) || density == 0.0 {
        return Err(Error::InvalidConfig(format!(
            "dot density must lie in (0, 1), got {density}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let texels = (width as f64) * (height as f64);
    // An isolated unit-sigma splat lights ~5 texels above 0.5.
    let dots = ((density * texels) / 5.0).round().max(1.0) as u64;

    let sigma = 1.0f64;
    let radius = 3i64; // 3 sigma support
    let inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);

    let mut buf = vec![0.0f64; (width * height) as usize];
    for _ in 0..dots {
        let cx = rng.random::<f64>() * width as f64;
        let cy = rng.random::<f64>() * height as f64;
        let ix0 = (cx.floor() as i64 - radius).max(0);
        let ix1 = (cx.floor() as i64 + radius).min(width as i64 - 1);
        let iy0 = (cy.floor() as i64 - radius).max(0);
        let iy1 = (cy.floor() as i64 + radius).min(height as i64 - 1);
        for iy in iy0..=iy1 {
            for ix in ix0..=ix1 {
                let dx = ix as f64 + 0.5 - cx;
                let dy = iy as f64 + 0.5 - cy;
                let v = (-(dx * dx + dy * dy) * inv_two_sigma2).exp();
                buf[(iy as u64 * width as u64 + ix as u64) as usize] += v;
            }
        }
    }

    let pixels: Vec<T> = buf.into_iter().map(|v| cast(v.clamp(0.0, 1.0))).collect();
    Ok(SpecklePattern {
        texture: GrayImage::from_pixels(width, height, pixels)?,
        dot_density,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bit_identical() {
        let a = make_speckle_pattern::<f64>(7, 128, 128, 0.15).unwrap();
        let b = make_speckle_pattern::<f64>(7, 128, 128, 0.15).unwrap();
        assert_eq!(a.texture.pixels(), b.texture.pixels());
    }

    #[test]
    fn lit_fraction_tracks_density() {
        let p = make_speckle_pattern::<f64>(3, 512, 512, 0.1).unwrap();
        let lit = p.texture.pixels().iter().filter(|&&v| v > 0.5).count();
        let frac = lit as f64 / (512.0 * 512.0);
        assert!((0.05..=0.2).contains(&frac), "lit fraction {frac}");
    }

    #[test]
    fn near_zero_density_is_near_black() {
        let p = make_speckle_pattern::<f64>(3, 256, 256, 1e-5).unwrap();
        let lit = p.texture.pixels().iter().filter(|&&v| v > 0.5).count();
        assert!(lit <= 5, "{lit} texels lit");
    }

    #[test]
    fn rejects_out_of_range_density() {
        assert!(make_speckle_pattern::<f64>(0, 64, 64, 0.0).is_err());
        assert!(make_speckle_pattern::<f64>(0, 64, 64, 1.0).is_err());
    }
}

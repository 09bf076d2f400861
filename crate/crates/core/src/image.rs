//! Image-plane grids: grayscale renders, disparity maps, and depth maps,
//! with PNG and PFM debug export.
//!
//! Invalid pixels never serialize as NaN: disparity uses a -1 sentinel,
//! depth uses 0.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::num::{cast, to_f64, Real};

/// W x H grayscale intensities in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage<T: Real> {
    width: u32,
    height: u32,
    pixels: Vec<T>,
}

impl<T: Real> GrayImage<T> {
    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            pixels: vec![T::zero(); (width * height) as usize],
        }
    }

    pub fn from_pixels(width: u32, height: u32, pixels: Vec<T>) -> Result<Self> {
        if pixels.len() != (width * height) as usize {
            return Err(Error::InvalidConfig("pixel buffer size mismatch".into()));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> T {
        self.pixels[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: T) {
        self.pixels[(y * self.width + x) as usize] = v;
    }

    pub fn pixels(&self) -> &[T] {
        &self.pixels
    }

    pub fn row(&self, y: u32) -> &[T] {
        let w = self.width as usize;
        &self.pixels[y as usize * w..(y as usize + 1) * w]
    }

    /// Bilinear sample at continuous coordinates; texel (i, j) is centered at
    /// (i + 0.5, j + 0.5). Coordinates are clamped to the image border.
    pub fn bilinear(&self, u: T, v: T) -> T {
        let half = cast::<T>(0.5);
        let x = u - half;
        let y = v - half;
        let x0f = x.floor();
        let y0f = y.floor();
        let fx = x - x0f;
        let fy = y - y0f;
        let clamp = |v: f64, hi: u32| -> u32 { v.max(0.0).min(hi as f64 - 1.0) as u32 };
        let x0 = clamp(to_f64(x0f), self.width);
        let y0 = clamp(to_f64(y0f), self.height);
        let x1 = clamp(to_f64(x0f) + 1.0, self.width);
        let y1 = clamp(to_f64(y0f) + 1.0, self.height);
        let one = T::one();
        self.get(x0, y0) * (one - fx) * (one - fy)
            + self.get(x1, y0) * fx * (one - fy)
            + self.get(x0, y1) * (one - fx) * fy
            + self.get(x1, y1) * fx * fy
    }

    /// Write as 8-bit grayscale PNG (values clamped to [0, 1]).
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes: Vec<u8> = self
            .pixels
            .iter()
            .map(|&v| (to_f64(v).clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let img = image::GrayImage::from_raw(self.width, self.height, bytes)
            .expect("buffer size matches dimensions");
        img.save(path)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))
    }
}

/// Per-pixel metric depth (meters) with a validity mask. Invalid pixels carry
/// the sentinel 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap<T: Real> {
    width: u32,
    height: u32,
    values: Vec<T>,
    valid: Vec<bool>,
}

/// Per-pixel subpixel disparity (pixels) with a validity mask. Invalid pixels
/// carry the sentinel -1.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap<T: Real> {
    width: u32,
    height: u32,
    values: Vec<T>,
    valid: Vec<bool>,
}

macro_rules! masked_grid {
    ($name:ident, $sentinel:expr) => {
        impl<T: Real> $name<T> {
            pub fn invalid(width: u32, height: u32) -> Self {
                Self {
                    width,
                    height,
                    values: vec![cast::<T>($sentinel); (width * height) as usize],
                    valid: vec![false; (width * height) as usize],
                }
            }

            pub fn width(&self) -> u32 {
                self.width
            }

            pub fn height(&self) -> u32 {
                self.height
            }

            #[inline]
            pub fn is_valid(&self, x: u32, y: u32) -> bool {
                self.valid[(y * self.width + x) as usize]
            }

            /// Value at a valid pixel; `None` when masked out.
            #[inline]
            pub fn get(&self, x: u32, y: u32) -> Option<T> {
                let i = (y * self.width + x) as usize;
                self.valid[i].then(|| self.values[i])
            }

            #[inline]
            pub fn set(&mut self, x: u32, y: u32, v: T) {
                let i = (y * self.width + x) as usize;
                self.values[i] = v;
                self.valid[i] = true;
            }

            #[inline]
            pub fn set_invalid(&mut self, x: u32, y: u32) {
                let i = (y * self.width + x) as usize;
                self.values[i] = cast::<T>($sentinel);
                self.valid[i] = false;
            }

            pub fn valid_count(&self) -> usize {
                self.valid.iter().filter(|&&v| v).count()
            }

            pub fn valid_fraction(&self) -> f64 {
                self.valid_count() as f64 / (self.width * self.height) as f64
            }

            /// Iterate (x, y, value) over valid pixels.
            pub fn iter_valid(&self) -> impl Iterator<Item = (u32, u32, T)> + '_ {
                let w = self.width;
                self.values
                    .iter()
                    .zip(&self.valid)
                    .enumerate()
                    .filter_map(move |(i, (&v, &ok))| ok.then(|| (i as u32 % w, i as u32 / w, v)))
            }

            /// Export as PFM (little-endian float32, invalid pixels as the
            /// sentinel).
            pub fn save_pfm(&self, path: impl AsRef<Path>) -> Result<()> {
                save_pfm(path, self.width, self.height, &self.values)
            }
        }
    };
}

masked_grid!(DepthMap, 0.0);
masked_grid!(DisparityMap, -1.0);

macro_rules! false_color {
    ($name:ident) => {
        impl<T: Real> $name<T> {
            /// False-color PNG of the valid range (jet-style ramp); invalid
            /// pixels are black.
            pub fn save_false_color_png(&self, path: impl AsRef<Path>) -> Result<()> {
                let path = path.as_ref();
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for (_, _, v) in self.iter_valid() {
                    let v = to_f64(v);
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                let span = if hi > lo { hi - lo } else { 1.0 };
                let mut bytes = vec![0u8; (self.width * self.height * 3) as usize];
                for (i, (&v, &ok)) in self.values.iter().zip(&self.valid).enumerate() {
                    if ok {
                        let t = ((to_f64(v) - lo) / span).clamp(0.0, 1.0);
                        let (r, g, b) = jet(t);
                        bytes[i * 3] = r;
                        bytes[i * 3 + 1] = g;
                        bytes[i * 3 + 2] = b;
                    }
                }
                let img = image::RgbImage::from_raw(self.width, self.height, bytes)
                    .expect("buffer size matches dimensions");
                img.save(path)
                    .map_err(|e| Error::io(path, std::io::Error::other(e)))
            }
        }
    };
}

false_color!(DisparityMap);
false_color!(DepthMap);

fn jet(t: f64) -> (u8, u8, u8) {
    let r = (1.5 - (4.0 * t - 3.0).abs()).clamp(0.0, 1.0);
    let g = (1.5 - (4.0 * t - 2.0).abs()).clamp(0.0, 1.0);
    let b = (1.5 - (4.0 * t - 1.0).abs()).clamp(0.0, 1.0);
    ((r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8)
}

/// Write a single-channel PFM: scale -1 (little endian), rows bottom-up.
pub fn save_pfm<T: Real>(
    path: impl AsRef<Path>,
    width: u32,
    height: u32,
    values: &[T],
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    write!(out, "Pf\n{} {}\n-1.0\n", width, height).map_err(io)?;
    for y in (0..height).rev() {
        for x in 0..width {
            let v = to_f64(values[(y * width + x) as usize]) as f32;
            out.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    Ok(())
}

/// Read a single-channel little-endian PFM (as written by [`save_pfm`]).
pub fn load_pfm<T: Real>(path: impl AsRef<Path>) -> Result<(u32, u32, Vec<T>)> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;

    let mut pos = 0usize;
    let mut token = || -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(path, 0, "truncated pfm header"));
        }
        let s = String::from_utf8_lossy(&bytes[start..pos]).into_owned();
        pos += 1; // single whitespace after each token
        Ok(s)
    };

    if token()? != "Pf" {
        return Err(Error::parse(path, 0, "not a grayscale pfm"));
    }
    let width: u32 = token()?
        .parse()
        .map_err(|_| Error::parse(path, 0, "bad width"))?;
    let height: u32 = token()?
        .parse()
        .map_err(|_| Error::parse(path, 0, "bad height"))?;
    let scale: f64 = token()?
        .parse()
        .map_err(|_| Error::parse(path, 0, "bad scale"))?;
    if scale >= 0.0 {
        return Err(Error::parse(path, 0, "big-endian pfm not supported"));
    }

    let need = (width * height * 4) as usize;
    if bytes.len() < pos + need {
        return Err(Error::parse(path, 0, "truncated pfm payload"));
    }
    let mut values = vec![T::zero(); (width * height) as usize];
    for y in (0..height).rev() {
        for x in 0..width {
            let b = [bytes[pos], bytes[pos + 1], bytes[pos + 2], bytes[pos + 3]];
            pos += 4;
            values[(y * width + x) as usize] = cast(f32::from_le_bytes(b) as f64);
        }
    }
    Ok((width, height, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_at_texel_center_is_exact() {
        let mut img = GrayImage::<f64>::zeros(4, 4);
        img.set(2, 1, 0.75);
        assert_eq!(img.bilinear(2.5, 1.5), 0.75);
    }

    #[test]
    fn bilinear_interpolates_halfway() {
        let mut img = GrayImage::<f64>::zeros(4, 4);
        img.set(0, 0, 1.0);
        img.set(1, 0, 0.0);
        let v = img.bilinear(1.0, 0.5);
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn masked_grids_track_validity() {
        let mut d = DepthMap::<f64>::invalid(3, 2);
        assert_eq!(d.valid_count(), 0);
        d.set(1, 1, 4.0);
        assert_eq!(d.get(1, 1), Some(4.0));
        assert_eq!(d.get(0, 0), None);
        d.set_invalid(1, 1);
        assert_eq!(d.valid_count(), 0);
    }

    #[test]
    fn disparity_sentinel_is_minus_one() {
        let d = DisparityMap::<f64>::invalid(2, 2);
        assert_eq!(d.values[0], -1.0);
    }

    #[test]
    fn pfm_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.pfm");
        let vals: Vec<f64> = (0..12).map(|i| i as f64 * 0.5).collect();
        save_pfm(&p, 4, 3, &vals).unwrap();
        let (w, h, back) = load_pfm::<f64>(&p).unwrap();
        assert_eq!((w, h), (4, 3));
        for (a, b) in vals.iter().zip(&back) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn png_export_writes_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img.png");
        let mut img = GrayImage::<f32>::zeros(8, 8);
        img.set(3, 3, 1.0);
        img.save_png(&p).unwrap();
        assert!(p.metadata().unwrap().len() > 0);
    }
}

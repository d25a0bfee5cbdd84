//! Color-space-correct image primitives shared by every other module.
//!
//! Two raster types exist: [`Image`] for displayable content (gamma-encoded
//! values in [0,1], or non-negative linear-light intensities) and
//! [`SignedImage`] for residual reflections, which may go negative and are
//! never clamped. All blending happens on [`ColorSpace::Linear`] data; the
//! gamma transfer is a pure power law with exponent 2.2.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Display gamma exponent. The transfer functions are x^GAMMA (decode) and
/// x^(1/GAMMA) (encode), evaluated in f64 so the round trip stays within 1e-6
/// on f32 storage.
pub const GAMMA: f64 = 2.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColorSpace {
    /// Display space: every pixel lies in [0, 1].
    GammaEncoded,
    /// Linear light: non-negative, values above 1 permitted for intermediates.
    Linear,
}

/// An H x W x 3 raster tagged with its color space. Pixels are stored
/// interleaved (RGB, row-major) as f32.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pixels: Vec<f32>,
    height: usize,
    width: usize,
    space: ColorSpace,
}

impl Image {
    pub fn new(pixels: Vec<f32>, height: usize, width: usize, space: ColorSpace) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::ShapeMismatch(format!(
                "image dimensions must be at least 1x1, got {height}x{width}"
            )));
        }
        if pixels.len() != height * width * 3 {
            return Err(Error::ShapeMismatch(format!(
                "pixel buffer holds {} values, expected {} for {height}x{width}x3",
                pixels.len(),
                height * width * 3
            )));
        }
        for &v in &pixels {
            if !v.is_finite() {
                return Err(Error::NonFinite("image pixel is NaN or infinite".into()));
            }
            match space {
                ColorSpace::GammaEncoded => {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(Error::InvalidArgument(format!(
                            "gamma-encoded pixel {v} outside [0,1]"
                        )));
                    }
                }
                ColorSpace::Linear => {
                    if v < 0.0 {
                        return Err(Error::InvalidArgument(format!(
                            "linear pixel {v} is negative; use SignedImage for signed data"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            pixels,
            height,
            width,
            space,
        })
    }

    /// Constructs without range validation. Callers must uphold the space
    /// invariants themselves; every use site in this crate produces values
    /// that satisfy them by construction.
    pub(crate) fn from_raw(
        pixels: Vec<f32>,
        height: usize,
        width: usize,
        space: ColorSpace,
    ) -> Self {
        debug_assert_eq!(pixels.len(), height * width * 3);
        Self {
            pixels,
            height,
            width,
            space,
        }
    }

    pub fn constant(height: usize, width: usize, value: f32, space: ColorSpace) -> Result<Self> {
        Self::new(vec![value; height * width * 3], height, width, space)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn space(&self) -> ColorSpace {
        self.space
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.pixels[(y * self.width + x) * 3 + c]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Axis-aligned crop. `size` rows/cols starting at (y0, x0).
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Image> {
        if y0 + h > self.height || x0 + w > self.width || h == 0 || w == 0 {
            return Err(Error::ShapeMismatch(format!(
                "crop {h}x{w}+{y0}+{x0} exceeds image {}x{}",
                self.height, self.width
            )));
        }
        let mut out = Vec::with_capacity(h * w * 3);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * 3;
            out.extend_from_slice(&self.pixels[start..start + w * 3]);
        }
        Ok(Image::from_raw(out, h, w, self.space))
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = Vec::with_capacity(self.pixels.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                let i = (y * self.width + x) * 3;
                out.extend_from_slice(&self.pixels[i..i + 3]);
            }
        }
        Image::from_raw(out, self.height, self.width, self.space)
    }
}

/// A raster with unrestricted range, always in linear space. Houses residual
/// reflections, which go negative wherever the scaled transmission exceeds
/// the composite image.
#[derive(Clone, Debug, PartialEq)]
pub struct SignedImage {
    pixels: Vec<f32>,
    height: usize,
    width: usize,
}

impl SignedImage {
    pub fn new(pixels: Vec<f32>, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width * 3 {
            return Err(Error::ShapeMismatch(format!(
                "signed image buffer of {} values does not match {height}x{width}x3",
                pixels.len()
            )));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("signed image pixel is NaN or infinite".into()));
        }
        Ok(Self {
            pixels,
            height,
            width,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.pixels[(y * self.width + x) * 3 + c]
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<SignedImage> {
        if y0 + h > self.height || x0 + w > self.width || h == 0 || w == 0 {
            return Err(Error::ShapeMismatch(format!(
                "crop {h}x{w}+{y0}+{x0} exceeds image {}x{}",
                self.height, self.width
            )));
        }
        let mut out = Vec::with_capacity(h * w * 3);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * 3;
            out.extend_from_slice(&self.pixels[start..start + w * 3]);
        }
        SignedImage::new(out, h, w)
    }

    pub fn flip_horizontal(&self) -> SignedImage {
        let mut out = Vec::with_capacity(self.pixels.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                let i = (y * self.width + x) * 3;
                out.extend_from_slice(&self.pixels[i..i + 3]);
            }
        }
        SignedImage {
            pixels: out,
            height: self.height,
            width: self.width,
        }
    }
}

/// Removes the display gamma: x -> x^2.2, [0,1] -> [0,1].
pub fn gamma_decode(img: &Image) -> Result<Image> {
    if img.space != ColorSpace::GammaEncoded {
        return Err(Error::ColorSpaceMismatch {
            expected: ColorSpace::GammaEncoded,
            actual: img.space,
        });
    }
    let pixels = img
        .pixels
        .iter()
        .map(|&v| (v as f64).powf(GAMMA) as f32)
        .collect();
    Ok(Image::from_raw(pixels, img.height, img.width, ColorSpace::Linear))
}

/// Applies the display gamma: clamp to [0,1], then x -> x^(1/2.2).
pub fn gamma_encode(img: &Image) -> Result<Image> {
    if img.space != ColorSpace::Linear {
        return Err(Error::ColorSpaceMismatch {
            expected: ColorSpace::Linear,
            actual: img.space,
        });
    }
    if img.pixels.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("cannot gamma-encode NaN pixels".into()));
    }
    let pixels = img
        .pixels
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) as f64).powf(1.0 / GAMMA) as f32)
        .collect();
    Ok(Image::from_raw(
        pixels,
        img.height,
        img.width,
        ColorSpace::GammaEncoded,
    ))
}

/// Elementwise clamp to [0,1]; the color-space tag is preserved.
pub fn clip01(img: &Image) -> Image {
    let pixels = img.pixels.iter().map(|&v| v.clamp(0.0, 1.0)).collect();
    Image::from_raw(pixels, img.height, img.width, img.space)
}

/// Loads an 8-bit RGB raster. Bytes map to [0,1] by division with 255; the
/// result is tagged gamma-encoded.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let reader = image::ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let decoded = reader.decode()?;
    let rgb = match decoded {
        image::DynamicImage::ImageRgb8(img) => img,
        image::DynamicImage::ImageRgb16(_) | image::DynamicImage::ImageRgb32F(_) => {
            return Err(Error::InvalidArgument(format!(
                "{}: unsupported bit depth (need 8-bit RGB)",
                path.display()
            )))
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "{}: not an RGB image (color type {:?})",
                path.display(),
                other.color()
            )))
        }
    };
    let (w, h) = rgb.dimensions();
    let pixels = rgb.into_raw().iter().map(|&b| b as f32 / 255.0).collect();
    Image::new(pixels, h as usize, w as usize, ColorSpace::GammaEncoded)
}

/// Writes a gamma-encoded image as 8-bit RGB PNG, rounding to nearest byte.
/// Exact inverse of [`load_image`] on any valid 8-bit file.
pub fn save_image(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    if img.space != ColorSpace::GammaEncoded {
        return Err(Error::ColorSpaceMismatch {
            expected: ColorSpace::GammaEncoded,
            actual: img.space,
        });
    }
    let bytes: Vec<u8> = img
        .pixels
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, bytes)
        .expect("buffer length matches dimensions");
    buf.save(path)?;
    Ok(())
}

/// Extracts `count` square crops at uniformly sampled offsets. Deterministic
/// under `seed`.
pub fn extract_patches(img: &Image, size: usize, count: usize, seed: u64) -> Result<Vec<Image>> {
    if size == 0 {
        return Err(Error::InvalidArgument("patch size must be positive".into()));
    }
    if size > img.height || size > img.width {
        return Err(Error::InvalidArgument(format!(
            "patch size {size} exceeds image {}x{}",
            img.height, img.width
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut patches = Vec::with_capacity(count);
    for _ in 0..count {
        let y0 = rng.random_range(0..=img.height - size);
        let x0 = rng.random_range(0..=img.width - size);
        patches.push(img.crop(y0, x0, size, size)?);
    }
    Ok(patches)
}

/// Halves both dimensions by 2x2 box averaging, reflect-padding odd inputs.
fn downsample_half(img: &Image) -> Image {
    let (h, w) = (img.height, img.width);
    let oh = h.div_ceil(2);
    let ow = w.div_ceil(2);
    // reflect index: mirror across the last row/col without repeating the edge
    let reflect = |i: usize, n: usize| -> usize {
        if i < n {
            i
        } else if n == 1 {
            0
        } else {
            2 * n - 2 - i
        }
    };
    let mut out = vec![0f32; oh * ow * 3];
    for y in 0..oh {
        for x in 0..ow {
            for c in 0..3 {
                let mut acc = 0f64;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let sy = reflect(2 * y + dy, h);
                        let sx = reflect(2 * x + dx, w);
                        acc += img.get(sy, sx, c) as f64;
                    }
                }
                out[(y * ow + x) * 3 + c] = (acc / 4.0) as f32;
            }
        }
    }
    Image::from_raw(out, oh, ow, img.space)
}

/// Box-average downsampling by a factor of 2 or 4. Inputs whose sides are not
/// divisible by the factor are reflect-padded to the next multiple, so the
/// output is always ceil(H/f) x ceil(W/f).
pub fn downsample(img: &Image, factor: usize) -> Result<Image> {
    match factor {
        2 => Ok(downsample_half(img)),
        4 => Ok(downsample_half(&downsample_half(img))),
        other => Err(Error::InvalidArgument(format!(
            "downsample factor must be 2 or 4, got {other}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(h: usize, w: usize, v: f32, space: ColorSpace) -> Image {
        Image::constant(h, w, v, space).unwrap()
    }

    #[test]
    fn gamma_decode_fixed_points() {
        let zeros = uniform(2, 2, 0.0, ColorSpace::GammaEncoded);
        let ones = uniform(2, 2, 1.0, ColorSpace::GammaEncoded);
        assert!(gamma_decode(&zeros).unwrap().pixels().iter().all(|&v| v == 0.0));
        assert!(gamma_decode(&ones).unwrap().pixels().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn gamma_decode_half() {
        // 0.5^2.2 evaluated independently
        let expected = 0.21763764f32;
        let img = uniform(3, 3, 0.5, ColorSpace::GammaEncoded);
        let lin = gamma_decode(&img).unwrap();
        assert_eq!(lin.space(), ColorSpace::Linear);
        for &v in lin.pixels() {
            assert!((v - expected).abs() < 1e-7, "got {v}");
        }
    }

    #[test]
    fn gamma_decode_rejects_linear_input() {
        let img = uniform(1, 1, 0.5, ColorSpace::Linear);
        assert!(matches!(
            gamma_decode(&img),
            Err(Error::ColorSpaceMismatch { .. })
        ));
    }

    #[test]
    fn gamma_encode_inverts_decode_example() {
        let img = uniform(2, 2, 0.21763764, ColorSpace::Linear);
        let enc = gamma_encode(&img).unwrap();
        for &v in enc.pixels() {
            assert!((v - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn gamma_encode_clamps_overrange() {
        let img = uniform(1, 1, 1.3, ColorSpace::Linear);
        let enc = gamma_encode(&img).unwrap();
        assert_eq!(enc.pixels()[0], 1.0);
    }

    #[test]
    fn gamma_round_trip_dense_grid() {
        let n = 4096;
        let pixels: Vec<f32> = (0..n * 3).map(|i| (i / 3) as f32 / (n - 1) as f32).collect();
        let img = Image::new(pixels.clone(), 1, n, ColorSpace::GammaEncoded).unwrap();
        let round = gamma_encode(&gamma_decode(&img).unwrap()).unwrap();
        for (a, b) in pixels.iter().zip(round.pixels()) {
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn clip01_bounds_and_idempotence() {
        let img = Image::from_raw(vec![-0.2, 0.5, 1.7], 1, 1, ColorSpace::Linear);
        let clipped = clip01(&img);
        assert_eq!(clipped.pixels(), &[0.0, 0.5, 1.0]);
        assert_eq!(clip01(&clipped).pixels(), clipped.pixels());
        assert_eq!(clipped.space(), ColorSpace::Linear);
    }

    #[test]
    fn png_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        // all byte values appear somewhere
        let pixels: Vec<f32> = (0..16 * 16 * 3).map(|i| (i % 256) as f32 / 255.0).collect();
        let img = Image::new(pixels, 16, 16, ColorSpace::GammaEncoded).unwrap();
        save_image(&path, &img).unwrap();
        let loaded = load_image(&path).unwrap();
        assert_eq!(loaded.pixels(), img.pixels());
        // byte-level: save the reload and compare files
        let path2 = dir.path().join("img2.png");
        save_image(&path2, &loaded).unwrap();
        let b1 = std::fs::read(&path).unwrap();
        let b2 = std::fs::read(&path2).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn load_rejects_missing_and_non_rgb() {
        assert!(load_image("/nonexistent/file.png").is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gray.png");
        let gray = image::GrayImage::from_pixel(4, 4, image::Luma([128u8]));
        gray.save(&path).unwrap();
        assert!(matches!(load_image(&path), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn byte_mapping_endpoints() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.png");
        let buf = image::RgbImage::from_fn(3, 1, |x, _| match x {
            0 => image::Rgb([0, 0, 0]),
            1 => image::Rgb([128, 128, 128]),
            _ => image::Rgb([255, 255, 255]),
        });
        buf.save(&path).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.get(0, 0, 0), 0.0);
        assert_eq!(img.get(0, 1, 0), 128.0 / 255.0);
        assert_eq!(img.get(0, 2, 0), 1.0);
    }

    #[test]
    fn patches_identity_and_determinism() {
        let pixels: Vec<f32> = (0..8 * 8 * 3).map(|i| (i % 97) as f32 / 96.0).collect();
        let img = Image::new(pixels, 8, 8, ColorSpace::GammaEncoded).unwrap();
        // size == H == W -> identity crop
        let same = extract_patches(&img, 8, 3, 1).unwrap();
        for p in &same {
            assert_eq!(p.pixels(), img.pixels());
        }
        let a = extract_patches(&img, 4, 5, 42).unwrap();
        let b = extract_patches(&img, 4, 5, 42).unwrap();
        for (pa, pb) in a.iter().zip(&b) {
            assert_eq!(pa.pixels(), pb.pixels());
        }
        assert!(extract_patches(&img, 9, 1, 0).is_err());
    }

    #[test]
    fn patches_shape() {
        let img = uniform(512, 512, 0.3, ColorSpace::GammaEncoded);
        let ps = extract_patches(&img, 256, 4, 7).unwrap();
        assert_eq!(ps.len(), 4);
        for p in ps {
            assert_eq!((p.height(), p.width()), (256, 256));
        }
    }

    #[test]
    fn downsample_constant_and_shapes() {
        let img = uniform(256, 256, 0.37, ColorSpace::Linear);
        let half = downsample(&img, 2).unwrap();
        assert_eq!((half.height(), half.width()), (128, 128));
        for &v in half.pixels() {
            assert_eq!(v, 0.37);
        }
        let quarter = downsample(&img, 4).unwrap();
        assert_eq!((quarter.height(), quarter.width()), (64, 64));
        assert!(downsample(&img, 3).is_err());
    }

    #[test]
    fn downsample_block_average() {
        // 2x2 block [0,0;1,1] -> single pixel 0.5
        let img = Image::new(
            vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
            2,
            2,
            ColorSpace::Linear,
        )
        .unwrap();
        let out = downsample(&img, 2).unwrap();
        assert_eq!((out.height(), out.width()), (1, 1));
        for &v in out.pixels() {
            assert_eq!(v, 0.5);
        }
    }

    #[test]
    fn downsample_odd_sizes_reflect() {
        let img = uniform(5, 7, 0.25, ColorSpace::Linear);
        let half = downsample(&img, 2).unwrap();
        assert_eq!((half.height(), half.width()), (3, 4));
        for &v in half.pixels() {
            assert_eq!(v, 0.25);
        }
    }

    #[test]
    fn invariants_on_construction() {
        assert!(Image::new(vec![0.5; 3], 1, 1, ColorSpace::GammaEncoded).is_ok());
        assert!(Image::new(vec![1.5; 3], 1, 1, ColorSpace::GammaEncoded).is_err());
        assert!(Image::new(vec![-0.1; 3], 1, 1, ColorSpace::Linear).is_err());
        assert!(Image::new(vec![1.5; 3], 1, 1, ColorSpace::Linear).is_ok());
        assert!(Image::new(vec![f32::NAN; 3], 1, 1, ColorSpace::Linear).is_err());
        assert!(SignedImage::new(vec![-4.0; 3], 1, 1).is_ok());
        assert!(SignedImage::new(vec![f32::INFINITY; 3], 1, 1).is_err());
    }
}

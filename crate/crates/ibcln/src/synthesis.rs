//! Synthetic training data in linear color space.
//!
//! A training triple is built as I = clip01(alpha * T + R) from a transmission
//! image T and a blurred reflection layer R; the residual-reflection ground
//! truth is then recovered exactly as R~ = I - alpha * T, with no clipping, so
//! the pair (T, R~) reconstructs I by a plain affine combination.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{
    clip01, gamma_decode, gamma_encode, load_image, save_image, ColorSpace, Image, SignedImage,
};

/// Blend scalar bounds: glass attenuates the transmitted scene only slightly.
pub const ALPHA_MIN: f32 = 0.8;
pub const ALPHA_MAX: f32 = 1.0;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    /// Uniform sampling range for the blend scalar alpha, within [0.8, 1.0].
    pub alpha_range: (f32, f32),
    /// Uniform sampling range for the Gaussian blur sigma (pixels).
    pub blur_sigma_range: (f32, f32),
    /// Kernel radius in multiples of sigma.
    pub kernel_truncation: f32,
    /// Pull over-bright reflection content back into range before compositing.
    pub adaptive_subtract: bool,
    pub seed: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            alpha_range: (ALPHA_MIN, ALPHA_MAX),
            // defocused-reflection assumption: reflections are out of focus
            blur_sigma_range: (2.0, 5.0),
            kernel_truncation: 4.0,
            adaptive_subtract: true,
            seed: 0,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        let (alo, ahi) = self.alpha_range;
        if !(alo <= ahi && (ALPHA_MIN..=ALPHA_MAX).contains(&alo) && ahi <= ALPHA_MAX) {
            return Err(Error::Config(format!(
                "alpha_range ({alo}, {ahi}) must satisfy 0.8 <= lo <= hi <= 1.0"
            )));
        }
        let (slo, shi) = self.blur_sigma_range;
        if !(slo > 0.0 && slo <= shi) {
            return Err(Error::Config(format!(
                "blur_sigma_range ({slo}, {shi}) must satisfy 0 < lo <= hi"
            )));
        }
        if self.kernel_truncation <= 0.0 {
            return Err(Error::Config("kernel_truncation must be positive".into()));
        }
        Ok(())
    }
}

/// One training sample: composite input, transmission ground truth, residual
/// reflection ground truth and the blend scalar that ties them together.
#[derive(Clone, Debug)]
pub struct TrainTriple {
    pub input: Image,
    pub transmission: Image,
    pub residual: SignedImage,
    pub alpha: f32,
}

fn uniform_in(rng: &mut impl Rng, lo: f32, hi: f32) -> f32 {
    if lo >= hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Separable Gaussian blur with reflect boundary handling. The kernel is
/// truncated at `truncation * sigma` and normalized to unit sum.
pub fn gaussian_blur(img: &Image, sigma: f32, truncation: f32) -> Result<Image> {
    if sigma <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "blur sigma must be positive, got {sigma}"
        )));
    }
    let radius = ((truncation * sigma).ceil() as usize).max(1);
    let mut kernel = Vec::with_capacity(2 * radius + 1);
    let s2 = 2.0 * (sigma as f64) * (sigma as f64);
    for i in -(radius as isize)..=(radius as isize) {
        kernel.push((-(i * i) as f64 / s2).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= norm;
    }

    let (h, w) = (img.height(), img.width());
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        if n == 1 {
            return 0;
        }
        while i < 0 || i >= n {
            if i < 0 {
                i = -i;
            }
            if i >= n {
                i = 2 * n - 2 - i;
            }
        }
        i as usize
    };

    // horizontal pass
    let mut tmp = vec![0f32; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0f64;
                for (ki, kv) in kernel.iter().enumerate() {
                    let sx = reflect(x as isize + ki as isize - radius as isize, w);
                    acc += kv * img.get(y, sx, c) as f64;
                }
                tmp[(y * w + x) * 3 + c] = acc as f32;
            }
        }
    }
    // vertical pass
    let mut out = vec![0f32; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0f64;
                for (ki, kv) in kernel.iter().enumerate() {
                    let sy = reflect(y as isize + ki as isize - radius as isize, h);
                    acc += kv * tmp[(sy * w + x) * 3 + c] as f64;
                }
                out[(y * w + x) * 3 + c] = acc.max(0.0) as f32;
            }
        }
    }
    Ok(Image::from_raw(out, h, w, img.space()))
}

/// Turns a raw linear-space image into a reflection layer: Gaussian blur with
/// sigma drawn from the configured range; when `adaptive_subtract` is set, the
/// layer's own over-bright excess (mean of values above 1) is subtracted and
/// negatives are floored at 0. The blend-aware subtraction that also accounts
/// for the transmission happens in [`subtract_blend_excess`] during dataset
/// generation.
pub fn make_reflection_layer(
    raw: &Image,
    cfg: &SynthesisConfig,
    rng: &mut impl Rng,
) -> Result<Image> {
    if raw.space() != ColorSpace::Linear {
        return Err(Error::ColorSpaceMismatch {
            expected: ColorSpace::Linear,
            actual: raw.space(),
        });
    }
    cfg.validate()?;
    let sigma = uniform_in(rng, cfg.blur_sigma_range.0, cfg.blur_sigma_range.1);
    let blurred = gaussian_blur(raw, sigma, cfg.kernel_truncation)?;
    if !cfg.adaptive_subtract {
        return Ok(blurred);
    }
    let (excess_sum, excess_count) = blurred
        .pixels()
        .iter()
        .filter(|&&v| v > 1.0)
        .fold((0f64, 0usize), |(s, n), &v| (s + (v - 1.0) as f64, n + 1));
    if excess_count == 0 {
        return Ok(blurred);
    }
    let s = (excess_sum / excess_count as f64) as f32;
    let pixels = blurred.pixels().iter().map(|&v| (v - s).max(0.0)).collect();
    Ok(Image::from_raw(
        pixels,
        blurred.height(),
        blurred.width(),
        ColorSpace::Linear,
    ))
}

/// Subtracts from R the mean excess of alpha*T + R over 1 (measured on the
/// pixels that exceed 1), flooring at 0. Keeps clipping rare in the composite
/// so the residual round trip stays exact almost everywhere.
pub fn subtract_blend_excess(r: &Image, t: &Image, alpha: f32) -> Result<Image> {
    if !r.same_shape(t) {
        return Err(Error::ShapeMismatch(format!(
            "reflection {}x{} vs transmission {}x{}",
            r.height(),
            r.width(),
            t.height(),
            t.width()
        )));
    }
    let mut excess_sum = 0f64;
    let mut excess_count = 0usize;
    for (rv, tv) in r.pixels().iter().zip(t.pixels()) {
        let blend = alpha as f64 * *tv as f64 + *rv as f64;
        if blend > 1.0 {
            excess_sum += blend - 1.0;
            excess_count += 1;
        }
    }
    if excess_count == 0 {
        return Ok(r.clone());
    }
    let s = (excess_sum / excess_count as f64) as f32;
    let pixels = r.pixels().iter().map(|&v| (v - s).max(0.0)).collect();
    Ok(Image::from_raw(
        pixels,
        r.height(),
        r.width(),
        ColorSpace::Linear,
    ))
}

/// I = clip01(alpha * T + R), all in linear space.
pub fn compose(t: &Image, r: &Image, alpha: f32) -> Result<Image> {
    if !t.same_shape(r) {
        return Err(Error::ShapeMismatch(format!(
            "transmission {}x{} vs reflection {}x{}",
            t.height(),
            t.width(),
            r.height(),
            r.width()
        )));
    }
    if !(ALPHA_MIN..=ALPHA_MAX).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "alpha {alpha} outside [{ALPHA_MIN}, {ALPHA_MAX}]"
        )));
    }
    if t.space() != ColorSpace::Linear || r.space() != ColorSpace::Linear {
        return Err(Error::ColorSpaceMismatch {
            expected: ColorSpace::Linear,
            actual: if t.space() != ColorSpace::Linear {
                t.space()
            } else {
                r.space()
            },
        });
    }
    let pixels = t
        .pixels()
        .iter()
        .zip(r.pixels())
        .map(|(&tv, &rv)| (alpha as f64 * tv as f64 + rv as f64) as f32)
        .collect();
    Ok(clip01(&Image::from_raw(
        pixels,
        t.height(),
        t.width(),
        ColorSpace::Linear,
    )))
}

/// R~ = I - alpha * T, exactly, with no clipping. The result may be negative
/// wherever the scaled transmission exceeds the composite.
pub fn residual_reflection(input: &Image, t: &Image, alpha: f32) -> Result<SignedImage> {
    if !input.same_shape(t) {
        return Err(Error::ShapeMismatch(format!(
            "input {}x{} vs transmission {}x{}",
            input.height(),
            input.width(),
            t.height(),
            t.width()
        )));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha {alpha} outside (0, 1]"
        )));
    }
    let pixels = input
        .pixels()
        .iter()
        .zip(t.pixels())
        .map(|(&iv, &tv)| (iv as f64 - alpha as f64 * tv as f64) as f32)
        .collect();
    SignedImage::new(pixels, input.height(), input.width())
}

/// Least-squares blend scalar for a real (I, T) pair: <I,T>/<T,T> clamped to
/// [0.8, 1.0].
pub fn estimate_alpha(input: &Image, t: &Image) -> Result<f32> {
    if !input.same_shape(t) {
        return Err(Error::ShapeMismatch(format!(
            "input {}x{} vs transmission {}x{}",
            input.height(),
            input.width(),
            t.height(),
            t.width()
        )));
    }
    let mut it = 0f64;
    let mut tt = 0f64;
    for (&iv, &tv) in input.pixels().iter().zip(t.pixels()) {
        it += iv as f64 * tv as f64;
        tt += tv as f64 * tv as f64;
    }
    if tt == 0.0 {
        return Err(Error::InvalidArgument(
            "cannot estimate alpha: transmission is identically zero".into(),
        ));
    }
    Ok(((it / tt) as f32).clamp(ALPHA_MIN, ALPHA_MAX))
}

// ---------------------------------------------------------------------------
// Residual raster format: 8-byte header (H, W as u32 LE) followed by three
// H*W planes of f32 LE values, plane-major (R, G, B).
// ---------------------------------------------------------------------------

pub fn write_residual(path: impl AsRef<Path>, residual: &SignedImage) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(8 + residual.pixels().len() * 4);
    buf.extend_from_slice(&(residual.height() as u32).to_le_bytes());
    buf.extend_from_slice(&(residual.width() as u32).to_le_bytes());
    for c in 0..3 {
        for y in 0..residual.height() {
            for x in 0..residual.width() {
                buf.extend_from_slice(&residual.get(y, x, c).to_le_bytes());
            }
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_residual(path: impl AsRef<Path>) -> Result<SignedImage> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 {
        return Err(Error::Dataset(format!(
            "{}: residual file shorter than its header",
            path.display()
        )));
    }
    let h = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let expected = 8 + h * w * 3 * 4;
    if bytes.len() != expected {
        return Err(Error::Dataset(format!(
            "{}: residual file holds {} bytes, expected {expected} for {h}x{w}",
            path.display(),
            bytes.len()
        )));
    }
    let mut pixels = vec![0f32; h * w * 3];
    let mut off = 8;
    for c in 0..3 {
        for i in 0..h * w {
            let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            pixels[i * 3 + c] = v;
            off += 4;
        }
    }
    SignedImage::new(pixels, h, w)
}

// ---------------------------------------------------------------------------
// Dataset generation and the on-disk manifest
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestRow {
    pub index: usize,
    pub alpha: f32,
    pub seed: u64,
    pub source_t: String,
    pub source_r: String,
}

/// A generated dataset rooted at the directory holding `manifest.csv`.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    root: PathBuf,
    rows: Vec<ManifestRow>,
}

impl SyntheticDataset {
    pub fn open(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let root = manifest_path
            .parent()
            .ok_or_else(|| Error::Dataset(format!("{}: no parent directory", manifest_path.display())))?
            .to_path_buf();
        let mut reader = csv::Reader::from_path(manifest_path)
            .map_err(|e| Error::Dataset(format!("{}: {e}", manifest_path.display())))?;
        let mut rows = Vec::new();
        for row in reader.deserialize::<ManifestRow>() {
            rows.push(row?);
        }
        Ok(Self { root, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[ManifestRow] {
        &self.rows
    }

    /// Loads the triple for one manifest row; input and transmission come back
    /// in linear space, the residual from its exact float container.
    pub fn load_triple(&self, idx: usize) -> Result<TrainTriple> {
        let row = self
            .rows
            .get(idx)
            .ok_or_else(|| Error::Dataset(format!("triple index {idx} out of range")))?;
        let name = format!("{:05}", row.index);
        let input = gamma_decode(&load_image(self.root.join("input").join(format!("{name}.png")))?)?;
        let transmission = gamma_decode(&load_image(
            self.root.join("transmission").join(format!("{name}.png")),
        )?)?;
        let residual = read_residual(self.root.join("residual").join(format!("{name}.f32")))?;
        if residual.height() != input.height() || residual.width() != input.width() {
            return Err(Error::Dataset(format!(
                "triple {name}: residual {}x{} does not match input {}x{}",
                residual.height(),
                residual.width(),
                input.height(),
                input.width()
            )));
        }
        Ok(TrainTriple {
            input,
            transmission,
            residual,
            alpha: row.alpha,
        })
    }
}

fn list_rasters(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Dataset(format!(
            "{}: no PNG rasters found",
            dir.display()
        )));
    }
    Ok(files)
}

/// Per-index random stream so parallel and serial generation agree.
fn index_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Generates `n` training triples under `out_dir` and writes `manifest.csv`.
/// Layout: out_dir/{input,transmission,residual}/NNNNN.{png,f32}. The whole
/// run is a deterministic function of the sources and `cfg.seed`.
pub fn generate_dataset(
    transmission_dir: impl AsRef<Path>,
    reflection_dir: impl AsRef<Path>,
    cfg: &SynthesisConfig,
    out_dir: impl AsRef<Path>,
    n: usize,
) -> Result<PathBuf> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    let sources_t = list_rasters(transmission_dir.as_ref())?;
    let sources_r = list_rasters(reflection_dir.as_ref())?;

    for sub in ["input", "transmission", "residual"] {
        fs::create_dir_all(out_dir.join(sub)).map_err(|e| Error::io(out_dir.join(sub), e))?;
    }

    let manifest_path = out_dir.join("manifest.csv");
    let mut writer = csv::Writer::from_path(&manifest_path)
        .map_err(|e| Error::Dataset(format!("{}: {e}", manifest_path.display())))?;

    for index in 0..n {
        let mut rng = index_rng(cfg.seed, index);
        let src_t = &sources_t[rng.random_range(0..sources_t.len())];
        let src_r = &sources_r[rng.random_range(0..sources_r.len())];
        let t_full = gamma_decode(&load_image(src_t)?)?;
        let r_full = gamma_decode(&load_image(src_r)?)?;

        // crop both to the common size at independent random offsets
        let h = t_full.height().min(r_full.height());
        let w = t_full.width().min(r_full.width());
        let ty = rng.random_range(0..=t_full.height() - h);
        let tx = rng.random_range(0..=t_full.width() - w);
        let ry = rng.random_range(0..=r_full.height() - h);
        let rx = rng.random_range(0..=r_full.width() - w);
        let t = t_full.crop(ty, tx, h, w)?;
        let r_raw = r_full.crop(ry, rx, h, w)?;

        let alpha = uniform_in(&mut rng, cfg.alpha_range.0, cfg.alpha_range.1);
        let mut reflection = make_reflection_layer(&r_raw, cfg, &mut rng)?;
        if cfg.adaptive_subtract {
            reflection = subtract_blend_excess(&reflection, &t, alpha)?;
        }
        let input = compose(&t, &reflection, alpha)?;
        let residual = residual_reflection(&input, &t, alpha)?;

        let name = format!("{index:05}");
        save_image(out_dir.join("input").join(format!("{name}.png")), &gamma_encode(&input)?)?;
        save_image(
            out_dir.join("transmission").join(format!("{name}.png")),
            &gamma_encode(&t)?,
        )?;
        write_residual(out_dir.join("residual").join(format!("{name}.f32")), &residual)?;

        writer.serialize(ManifestRow {
            index,
            alpha,
            seed: cfg.seed,
            source_t: src_t.file_name().unwrap_or_default().to_string_lossy().into_owned(),
            source_r: src_r.file_name().unwrap_or_default().to_string_lossy().into_owned(),
        })?;
    }
    writer.flush().map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}

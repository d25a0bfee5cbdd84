//! PSNR/SSIM metrics and the benchmark protocol: per-image rows, per-dataset
//! means and the image-weighted overall average, plus the time-step sweep.
//!
//! Metrics are computed in f64 on gamma-encoded images; model outputs are
//! quantized to the 8-bit grid first, matching how benchmark datasets are
//! distributed on disk.

use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device};

use crate::error::{Error, Result};
use crate::imaging::{gamma_encode, load_image, save_image, ColorSpace, Image};
use crate::model::{cascade_forward, LoadedModel};
use crate::tensor::{image_to_tensor, tensor_to_image};

/// PSNR reported for identical images (and the ceiling for near-identical
/// ones), keeping tables free of infinities.
pub const PSNR_CAP_DB: f64 = 100.0;

/// One benchmark measurement.
#[derive(Clone, Debug)]
pub struct MetricRow {
    pub dataset: String,
    pub image_id: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Rounds every pixel to the nearest 8-bit level.
pub fn quantize8(img: &Image) -> Image {
    let pixels = img
        .pixels()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
        .collect();
    Image::from_raw(pixels, img.height(), img.width(), img.space())
}

fn check_metric_inputs(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "metric inputs {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    for img in [a, b] {
        if img.space() != ColorSpace::GammaEncoded {
            return Err(Error::ColorSpaceMismatch {
                expected: ColorSpace::GammaEncoded,
                actual: img.space(),
            });
        }
    }
    Ok(())
}

/// PSNR over raw f64 sample buffers on unit dynamic range:
/// 10 log10(1 / MSE), capped at [`PSNR_CAP_DB`].
pub fn psnr_values(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "psnr buffers of {} vs {} samples",
            a.len(),
            b.len()
        )));
    }
    let mut acc = 0f64;
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    let mse = acc / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Peak signal-to-noise ratio in dB between two gamma-encoded images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check_metric_inputs(a, b)?;
    let av: Vec<f64> = a.pixels().iter().map(|&v| v as f64).collect();
    let bv: Vec<f64> = b.pixels().iter().map(|&v| v as f64).collect();
    psnr_values(&av, &bv)
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn ssim_window_weights() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w1 = [0f64; SSIM_WINDOW];
    let center = (SSIM_WINDOW / 2) as isize;
    for (i, w) in w1.iter_mut().enumerate() {
        let d = i as isize - center;
        *w = (-((d * d) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = w1.iter().sum();
    let mut out = [0f64; SSIM_WINDOW * SSIM_WINDOW];
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            out[y * SSIM_WINDOW + x] = (w1[y] / sum) * (w1[x] / sum);
        }
    }
    out
}

/// Single-scale structural similarity: 11x11 Gaussian window (sigma 1.5),
/// C1 = 0.01^2, C2 = 0.03^2 on unit dynamic range, valid-positions windows,
/// averaged over the three channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_metric_inputs(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let weights = ssim_window_weights();
    let mut total = 0f64;
    let mut count = 0usize;
    for c in 0..3 {
        for y0 in 0..=h - SSIM_WINDOW {
            for x0 in 0..=w - SSIM_WINDOW {
                let mut mu_x = 0f64;
                let mut mu_y = 0f64;
                let mut xx = 0f64;
                let mut yy = 0f64;
                let mut xy = 0f64;
                for dy in 0..SSIM_WINDOW {
                    for dx in 0..SSIM_WINDOW {
                        let wgt = weights[dy * SSIM_WINDOW + dx];
                        let xv = a.get(y0 + dy, x0 + dx, c) as f64;
                        let yv = b.get(y0 + dy, x0 + dx, c) as f64;
                        mu_x += wgt * xv;
                        mu_y += wgt * yv;
                        xx += wgt * xv * xv;
                        yy += wgt * yv * yv;
                        xy += wgt * xv * yv;
                    }
                }
                let var_x = xx - mu_x * mu_x;
                let var_y = yy - mu_y * mu_y;
                let cov = xy - mu_x * mu_y;
                let numerator = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov + SSIM_C2);
                let denominator = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2);
                total += numerator / denominator;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// PSNR between two linear-space images measured the way benchmark rows are:
/// gamma-encode both, quantize to the 8-bit grid, compare.
pub fn psnr_linear_pair(a_linear: &Image, b_linear: &Image) -> Result<f64> {
    psnr(
        &quantize8(&gamma_encode(a_linear)?),
        &quantize8(&gamma_encode(b_linear)?),
    )
}

// ---------------------------------------------------------------------------
// Benchmark harness
// ---------------------------------------------------------------------------

/// Anything that maps an input image to per-step transmission estimates.
pub trait Restorer {
    /// Per-step transmission predictions in linear space, length `n`.
    fn restore_trace(&self, input: &Image, n: usize) -> Result<Vec<Image>>;
}

/// Plumbing stub: predicts the input itself at every step.
pub struct IdentityRestorer;

impl Restorer for IdentityRestorer {
    fn restore_trace(&self, input: &Image, n: usize) -> Result<Vec<Image>> {
        if input.space() != ColorSpace::Linear {
            return Err(Error::ColorSpaceMismatch {
                expected: ColorSpace::Linear,
                actual: input.space(),
            });
        }
        Ok(vec![input.clone(); n])
    }
}

/// A restored checkpoint driving the cascade.
pub struct ModelRestorer {
    model: LoadedModel,
    device: Device,
}

impl ModelRestorer {
    pub fn new(model: LoadedModel) -> Self {
        Self {
            model,
            device: Device::Cpu,
        }
    }

    pub fn default_steps(&self) -> usize {
        self.model.manifest.n_steps
    }
}

impl Restorer for ModelRestorer {
    fn restore_trace(&self, input: &Image, n: usize) -> Result<Vec<Image>> {
        let tensor = image_to_tensor(input, &self.device, DType::F32)?.unsqueeze(0)?;
        let trace = cascade_forward(&self.model.g_t, self.model.g_r.as_ref(), &tensor, n)?;
        trace
            .transmissions
            .iter()
            .map(tensor_to_image)
            .collect::<Result<Vec<_>>>()
    }
}

/// Matching (input, transmission) file pairs found in a dataset directory.
pub struct PairListing {
    pub pairs: Vec<(PathBuf, PathBuf)>,
    /// Stems present on one side only.
    pub unpaired: Vec<String>,
}

/// Scans `dir/input` and `dir/transmission` for PNGs with matching stems.
pub fn list_pairs(dir: &Path) -> Result<PairListing> {
    let list = |sub: &str| -> Result<Vec<PathBuf>> {
        let sub_dir = dir.join(sub);
        let entries = fs::read_dir(&sub_dir).map_err(|e| Error::io(&sub_dir, e))?;
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
        Ok(files)
    };
    let inputs = list("input")?;
    let gts = list("transmission")?;
    let stem_of = |p: &PathBuf| {
        p.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    let gt_stems: std::collections::BTreeMap<String, PathBuf> =
        gts.iter().map(|p| (stem_of(p), p.clone())).collect();
    let input_stems: std::collections::BTreeSet<String> = inputs.iter().map(stem_of).collect();

    let mut pairs = Vec::new();
    let mut unpaired = Vec::new();
    for input in &inputs {
        let stem = stem_of(input);
        match gt_stems.get(&stem) {
            Some(gt) => pairs.push((input.clone(), gt.clone())),
            None => unpaired.push(format!("input/{stem}")),
        }
    }
    for stem in gt_stems.keys() {
        if !input_stems.contains(stem) {
            unpaired.push(format!("transmission/{stem}"));
        }
    }
    Ok(PairListing { pairs, unpaired })
}

#[derive(Debug)]
pub struct BenchmarkReport {
    pub rows: Vec<MetricRow>,
    /// (dataset, mean psnr, mean ssim, image count)
    pub per_dataset: Vec<(String, f64, f64, usize)>,
    /// Image-weighted mean over every row.
    pub overall: (f64, f64, usize),
    /// Pairing or shape problems, reported and skipped.
    pub skipped: Vec<String>,
}

fn side_by_side(images: &[&Image]) -> Image {
    let h = images[0].height();
    let total_w: usize = images.iter().map(|i| i.width()).sum();
    let mut pixels = vec![0f32; h * total_w * 3];
    let mut x_off = 0;
    for img in images {
        for y in 0..h.min(img.height()) {
            for x in 0..img.width() {
                for c in 0..3 {
                    pixels[(y * total_w + x_off + x) * 3 + c] = img.get(y, x, c);
                }
            }
        }
        x_off += img.width();
    }
    Image::from_raw(pixels, h, total_w, ColorSpace::GammaEncoded)
}

/// Evaluates a restorer over dataset directories. Each directory contributes
/// its matched pairs; rows are written to `results.csv`, per-dataset and
/// overall means to `summary.csv`, and a side-by-side contact sheet per image
/// (input | prediction | ground truth) when `out_dir` is given.
pub fn benchmark(
    restorer: &dyn Restorer,
    datasets: &[PathBuf],
    n: usize,
    out_dir: Option<&Path>,
) -> Result<BenchmarkReport> {
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let sheets_dir = match out_dir {
        Some(dir) => {
            let sheets = dir.join("sheets");
            fs::create_dir_all(&sheets).map_err(|e| Error::io(&sheets, e))?;
            Some(sheets)
        }
        None => None,
    };

    for dataset_dir in datasets {
        let dataset = dataset_dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| dataset_dir.display().to_string());
        let listing = list_pairs(dataset_dir)?;
        skipped.extend(listing.unpaired.iter().map(|s| format!("{dataset}/{s}")));

        for (input_path, gt_path) in &listing.pairs {
            let image_id = input_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let input_enc = load_image(input_path)?;
            let gt_enc = load_image(gt_path)?;
            if !input_enc.same_shape(&gt_enc) {
                skipped.push(format!("{dataset}/{image_id} (size mismatch)"));
                continue;
            }
            let input_lin = crate::imaging::gamma_decode(&input_enc)?;
            let trace = restorer.restore_trace(&input_lin, n)?;
            let t_hat_lin = trace.last().ok_or_else(|| {
                Error::InvalidArgument("restorer returned an empty trace".into())
            })?;
            let t_hat_enc = quantize8(&gamma_encode(t_hat_lin)?);
            let row = MetricRow {
                dataset: dataset.clone(),
                image_id: image_id.clone(),
                psnr: psnr(&t_hat_enc, &gt_enc)?,
                ssim: ssim(&t_hat_enc, &gt_enc)?,
            };
            if let Some(sheets) = &sheets_dir {
                let sheet = side_by_side(&[&input_enc, &t_hat_enc, &gt_enc]);
                save_image(sheets.join(format!("{dataset}_{image_id}.png")), &sheet)?;
            }
            rows.push(row);
        }
    }

    let mut per_dataset = Vec::new();
    let mut seen = Vec::new();
    for row in &rows {
        if !seen.contains(&row.dataset) {
            seen.push(row.dataset.clone());
        }
    }
    for dataset in seen {
        let subset: Vec<&MetricRow> = rows.iter().filter(|r| r.dataset == dataset).collect();
        let count = subset.len();
        let psnr_mean = subset.iter().map(|r| r.psnr).sum::<f64>() / count as f64;
        let ssim_mean = subset.iter().map(|r| r.ssim).sum::<f64>() / count as f64;
        per_dataset.push((dataset, psnr_mean, ssim_mean, count));
    }
    let overall = if rows.is_empty() {
        (0.0, 0.0, 0)
    } else {
        (
            rows.iter().map(|r| r.psnr).sum::<f64>() / rows.len() as f64,
            rows.iter().map(|r| r.ssim).sum::<f64>() / rows.len() as f64,
            rows.len(),
        )
    };

    if let Some(dir) = out_dir {
        let results_path = dir.join("results.csv");
        let mut results = csv::Writer::from_path(&results_path)
            .map_err(|e| Error::Dataset(format!("{}: {e}", results_path.display())))?;
        results.write_record(["dataset", "image_id", "psnr", "ssim"])?;
        for row in &rows {
            results.write_record([
                row.dataset.clone(),
                row.image_id.clone(),
                row.psnr.to_string(),
                row.ssim.to_string(),
            ])?;
        }
        results.flush().map_err(|e| Error::io(&results_path, e))?;

        let summary_path = dir.join("summary.csv");
        let mut summary = csv::Writer::from_path(&summary_path)
            .map_err(|e| Error::Dataset(format!("{}: {e}", summary_path.display())))?;
        summary.write_record(["dataset", "images", "psnr", "ssim"])?;
        for (dataset, psnr_mean, ssim_mean, count) in &per_dataset {
            summary.write_record([
                dataset.clone(),
                count.to_string(),
                psnr_mean.to_string(),
                ssim_mean.to_string(),
            ])?;
        }
        summary.write_record([
            "overall".to_string(),
            overall.2.to_string(),
            overall.0.to_string(),
            overall.1.to_string(),
        ])?;
        summary.flush().map_err(|e| Error::io(&summary_path, e))?;
    }

    Ok(BenchmarkReport {
        rows,
        per_dataset,
        overall,
        skipped,
    })
}

/// Metric-vs-N curve: one cascade forward at max(N) per image, measuring the
/// trace entry for every requested step. Returns (n, mean psnr, mean ssim)
/// rows and optionally writes them as CSV.
pub fn timestep_sweep(
    restorer: &dyn Restorer,
    datasets: &[PathBuf],
    n_list: &[usize],
    out_csv: Option<&Path>,
) -> Result<Vec<(usize, f64, f64)>> {
    if n_list.is_empty() {
        return Err(Error::InvalidArgument("n_list must not be empty".into()));
    }
    if n_list.contains(&0) {
        return Err(Error::InvalidArgument("time steps must be >= 1".into()));
    }
    let n_max = *n_list.iter().max().expect("nonempty");

    let mut acc: Vec<(f64, f64, usize)> = vec![(0.0, 0.0, 0); n_list.len()];
    for dataset_dir in datasets {
        let listing = list_pairs(dataset_dir)?;
        for (input_path, gt_path) in &listing.pairs {
            let input_enc = load_image(input_path)?;
            let gt_enc = load_image(gt_path)?;
            if !input_enc.same_shape(&gt_enc) {
                continue;
            }
            let input_lin = crate::imaging::gamma_decode(&input_enc)?;
            let trace = restorer.restore_trace(&input_lin, n_max)?;
            for (slot, &n) in n_list.iter().enumerate() {
                let t_hat_enc = quantize8(&gamma_encode(&trace[n - 1])?);
                acc[slot].0 += psnr(&t_hat_enc, &gt_enc)?;
                acc[slot].1 += ssim(&t_hat_enc, &gt_enc)?;
                acc[slot].2 += 1;
            }
        }
    }

    let curve: Vec<(usize, f64, f64)> = n_list
        .iter()
        .zip(&acc)
        .map(|(&n, &(p, s, c))| {
            if c == 0 {
                (n, 0.0, 0.0)
            } else {
                (n, p / c as f64, s / c as f64)
            }
        })
        .collect();

    if let Some(path) = out_csv {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut writer = csv::Writer::from_path(path)
            .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
        writer.write_record(["n", "psnr", "ssim"])?;
        for (n, p, s) in &curve {
            writer.write_record([n.to_string(), p.to_string(), s.to_string()])?;
        }
        writer.flush().map_err(|e| Error::io(path, e))?;
    }
    Ok(curve)
}

//! Bridging between raster images and NCHW tensors, plus small tensor ops
//! shared by the model and loss modules.

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};
use crate::imaging::{ColorSpace, Image, SignedImage};

/// Image -> (3, H, W) tensor, planar.
pub fn image_to_tensor(img: &Image, device: &Device, dtype: DType) -> Result<Tensor> {
    let (h, w) = (img.height(), img.width());
    let mut planar = vec![0f32; h * w * 3];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                planar[c * h * w + y * w + x] = img.get(y, x, c);
            }
        }
    }
    let t = Tensor::from_vec(planar, (3, h, w), device)?;
    Ok(t.to_dtype(dtype)?)
}

/// SignedImage -> (3, H, W) tensor, planar.
pub fn signed_to_tensor(img: &SignedImage, device: &Device, dtype: DType) -> Result<Tensor> {
    let (h, w) = (img.height(), img.width());
    let mut planar = vec![0f32; h * w * 3];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                planar[c * h * w + y * w + x] = img.get(y, x, c);
            }
        }
    }
    let t = Tensor::from_vec(planar, (3, h, w), device)?;
    Ok(t.to_dtype(dtype)?)
}

/// Stacks (3, H, W) tensors into a batch (B, 3, H, W).
pub fn stack_batch(items: &[Tensor]) -> Result<Tensor> {
    if items.is_empty() {
        return Err(Error::InvalidArgument("cannot stack an empty batch".into()));
    }
    Ok(Tensor::stack(items, 0)?)
}

/// (3, H, W) or (1, 3, H, W) tensor -> linear-space image. Negative values
/// (the network emits unclamped reals) are floored at 0 here; clamping to the
/// displayable range happens in gamma encoding when the image is saved.
pub fn tensor_to_image(t: &Tensor) -> Result<Image> {
    let t = match t.dims() {
        [1, 3, _, _] => t.squeeze(0)?,
        [3, _, _] => t.clone(),
        dims => {
            return Err(Error::ShapeMismatch(format!(
                "expected (3,H,W) or (1,3,H,W) tensor, got {dims:?}"
            )))
        }
    };
    let (_, h, w) = t.dims3()?;
    let planar = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    let mut pixels = vec![0f32; h * w * 3];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let v = planar[c * h * w + y * w + x];
                pixels[(y * w + x) * 3 + c] = if v.is_finite() { v.max(0.0) } else { 0.0 };
            }
        }
    }
    Image::new(pixels, h, w, ColorSpace::Linear)
}

/// Reflection padding by one pixel on both spatial dims of an NCHW tensor.
/// For a 3x3 kernel this reproduces mirror-without-edge boundary handling.
pub fn reflect_pad1(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let (top, bottom) = if h >= 2 {
        (x.narrow(2, 1, 1)?, x.narrow(2, h - 2, 1)?)
    } else {
        (x.narrow(2, 0, 1)?, x.narrow(2, 0, 1)?)
    };
    let x = Tensor::cat(&[&top, x, &bottom], 2)?;
    let (_, _, _, w2) = x.dims4()?;
    debug_assert_eq!(w2, w);
    let (left, right) = if w >= 2 {
        (x.narrow(3, 1, 1)?, x.narrow(3, w - 2, 1)?)
    } else {
        (x.narrow(3, 0, 1)?, x.narrow(3, 0, 1)?)
    };
    Ok(Tensor::cat(&[&left, &x, &right], 3)?)
}

/// Halves spatial dims by 2x2 box averaging; odd inputs are padded with their
/// mirrored last row/column first, so the output is ceil(H/2) x ceil(W/2),
/// matching the stride-2 convolution geometry of the sub-networks.
pub fn downsample_half(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let mut x = x.clone();
    if h % 2 == 1 {
        let pad = if h >= 2 {
            x.narrow(2, h - 2, 1)?
        } else {
            x.narrow(2, h - 1, 1)?
        };
        x = Tensor::cat(&[&x, &pad], 2)?;
    }
    let (_, _, _, w_now) = x.dims4()?;
    debug_assert_eq!(w_now, w);
    if w % 2 == 1 {
        let pad = if w >= 2 {
            x.narrow(3, w - 2, 1)?
        } else {
            x.narrow(3, w - 1, 1)?
        };
        x = Tensor::cat(&[&x, &pad], 3)?;
    }
    Ok(x.avg_pool2d(2)?)
}

/// Quarter-resolution box average: two successive halvings.
pub fn downsample_quarter(x: &Tensor) -> Result<Tensor> {
    downsample_half(&downsample_half(x)?)
}

/// 2x2 max pooling with stride 2 built from elementwise maxima, so gradients
/// route to the argmax correctly. Odd inputs are padded with their mirrored
/// last row/column first.
pub fn max_pool2x2(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let mut x = x.clone();
    if h % 2 == 1 {
        let pad = x.narrow(2, h.saturating_sub(2).min(h - 1), 1)?;
        x = Tensor::cat(&[&x, &pad], 2)?;
    }
    if w % 2 == 1 {
        let pad = x.narrow(3, w.saturating_sub(2).min(w - 1), 1)?;
        x = Tensor::cat(&[&x, &pad], 3)?;
    }
    let (b, c, h2, w2) = x.dims4()?;
    let grid = x.reshape((b, c, h2 / 2, 2, w2 / 2, 2))?;
    let mut cells = Vec::with_capacity(4);
    for dy in 0..2 {
        for dx in 0..2 {
            cells.push(
                grid.narrow(3, dy, 1)?
                    .narrow(5, dx, 1)?
                    .reshape((b, c, h2 / 2, w2 / 2))?,
            );
        }
    }
    let mut out = cells[0].clone();
    for cell in &cells[1..] {
        out = out.maximum(cell)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging;

    #[test]
    fn image_tensor_round_trip() {
        let pixels: Vec<f32> = (0..4 * 5 * 3).map(|i| i as f32 / 100.0).collect();
        let img = Image::new(pixels, 4, 5, ColorSpace::Linear).unwrap();
        let t = image_to_tensor(&img, &Device::Cpu, DType::F32).unwrap();
        assert_eq!(t.dims(), &[3, 4, 5]);
        let back = tensor_to_image(&t).unwrap();
        assert_eq!(back.pixels(), img.pixels());
    }

    #[test]
    fn downsample_matches_imaging_module() {
        let pixels: Vec<f32> = (0..6 * 6 * 3).map(|i| (i % 13) as f32 / 13.0).collect();
        let img = Image::new(pixels, 6, 6, ColorSpace::Linear).unwrap();
        let t = image_to_tensor(&img, &Device::Cpu, DType::F32).unwrap().unsqueeze(0).unwrap();
        let half_t = tensor_to_image(&downsample_half(&t).unwrap()).unwrap();
        let half_img = imaging::downsample(&img, 2).unwrap();
        for (a, b) in half_t.pixels().iter().zip(half_img.pixels()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn reflect_pad_shape_and_values() {
        let t = Tensor::from_vec(
            (0..16).map(|i| i as f32).collect::<Vec<_>>(),
            (1, 1, 4, 4),
            &Device::Cpu,
        )
        .unwrap();
        let p = reflect_pad1(&t).unwrap();
        assert_eq!(p.dims(), &[1, 1, 6, 6]);
        let v = p.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        // row 0 mirrors row index 1 of the source (values 4..8), column-padded
        assert_eq!(&v[0..6], &[5.0, 4.0, 5.0, 6.0, 7.0, 6.0]);
    }
}

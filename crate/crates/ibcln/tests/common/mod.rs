//! Shared fixtures for the integration suites: procedural source imagery with
//! natural low-frequency content.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Writes `count` smooth RGB PNGs (layered sinusoids per channel) of the
/// given size. Deterministic under `seed`.
pub fn write_smooth_sources(dir: &Path, count: usize, size: u32, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..count {
        let mut params = Vec::new();
        for _ in 0..3 {
            let octaves: Vec<(f32, f32, f32, f32, f32)> = (0..3)
                .map(|_| {
                    (
                        rng.random_range(0.5..3.0f32),
                        rng.random_range(0.5..3.0f32),
                        rng.random_range(0.0..std::f32::consts::TAU),
                        rng.random_range(0.0..std::f32::consts::TAU),
                        rng.random_range(0.2..1.0f32),
                    )
                })
                .collect();
            params.push(octaves);
        }
        let img = image::RgbImage::from_fn(size, size, |x, y| {
            let mut rgb = [0u8; 3];
            for (c, octaves) in params.iter().enumerate() {
                let mut v = 0f32;
                let mut wsum = 0f32;
                for &(fx, fy, px, py, w) in octaves {
                    let sx = (std::f32::consts::TAU * fx * x as f32 / size as f32 + px).sin();
                    let sy = (std::f32::consts::TAU * fy * y as f32 / size as f32 + py).sin();
                    v += w * sx * sy;
                    wsum += w;
                }
                let norm = 0.5 + 0.35 * v / wsum;
                rgb[c] = (norm.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
            image::Rgb(rgb)
        });
        img.save(dir.join(format!("src_{i}.png"))).unwrap();
    }
}

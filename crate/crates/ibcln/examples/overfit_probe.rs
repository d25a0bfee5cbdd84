//! Desk-scale overfit probe: generates four synthetic 64x64 triples and
//! trains the complete model on them, printing the PSNR trajectory.

use std::path::Path;
use std::time::Instant;

use ibcln::model::{DiscriminatorConfig, SubnetConfig};
use ibcln::synthesis::{generate_dataset, SynthesisConfig};
use ibcln::training::{train, DataSource, TrainConfig};

fn write_smooth_sources(dir: &Path, count: usize, seed: u64) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
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
        let img = image::RgbImage::from_fn(64, 64, |x, y| {
            let mut rgb = [0u8; 3];
            for (c, octaves) in params.iter().enumerate() {
                let mut v = 0f32;
                let mut wsum = 0f32;
                for &(fx, fy, px, py, w) in octaves {
                    let sx = (std::f32::consts::TAU * fx * x as f32 / 64.0 + px).sin();
                    let sy = (std::f32::consts::TAU * fy * y as f32 / 64.0 + py).sin();
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

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let args: Vec<String> = std::env::args().collect();
    let max_steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(600);
    let base: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(8);
    let lstm: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(32);
    let lr: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(2e-4);
    let batch: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(4);
    let pwidth: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(16);

    let dir = tempfile::tempdir().unwrap();
    let tdir = dir.path().join("t_sources");
    let rdir = dir.path().join("r_sources");
    write_smooth_sources(&tdir, 6, 101);
    write_smooth_sources(&rdir, 6, 202);

    let synth_cfg = SynthesisConfig {
        seed: 42,
        ..Default::default()
    };
    let data_dir = dir.path().join("data");
    let manifest = generate_dataset(&tdir, &rdir, &synth_cfg, &data_dir, 4).unwrap();
    println!("dataset at {}", manifest.display());

    let cfg = TrainConfig {
        epochs: 10_000,
        batch_size: batch,
        learning_rate: lr,
        n_steps: 3,
        seed: 7,
        patch_size: 64,
        augment: false,
        subnet: SubnetConfig {
            base_channels: base,
            lstm_channels: lstm,
            ..Default::default()
        },
        discriminator: DiscriminatorConfig {
            base_channels: 16,
            ..Default::default()
        },
        perceptual_base_channels: pwidth,
        max_steps: Some(max_steps),
        eval_every: 25,
        target_psnr: Some(28.5),
        log_every: 25,
        ..Default::default()
    };

    let t0 = Instant::now();
    let outcome = train(&cfg, &[DataSource::Synthetic(manifest)], &dir.path().join("run")).unwrap();
    let dt = t0.elapsed();
    println!(
        "steps: {}, wall: {:.1}s ({:.2} s/step), final PSNR: {:?}, early stop: {}",
        outcome.steps,
        dt.as_secs_f64(),
        dt.as_secs_f64() / outcome.steps as f64,
        outcome.final_psnr,
        outcome.stopped_early
    );
    if let Some(report) = outcome.final_report {
        println!(
            "final losses: residual {:.5} mp {:.5} pixel {:.5} adv {:.5} total {:.5}",
            report.residual, report.mp, report.pixel, report.adv, report.total
        );
    }
}

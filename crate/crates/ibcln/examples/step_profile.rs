//! Times the pieces of one training step at the desk-scale configuration.

use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use candle_nn::optim::{AdamW, Optimizer, ParamsAdamW};
use ibcln::losses;
use ibcln::model::{
    cascade_forward, Discriminator, DiscriminatorConfig, ParamStore, Subnet, SubnetConfig,
};
use ibcln::perceptual::FeatureExtractor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_t(shape: (usize, usize, usize, usize), seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.0 * shape.1 * shape.2 * shape.3;
    let v: Vec<f32> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

fn main() {
    let device = Device::Cpu;
    let cfg = SubnetConfig {
        base_channels: 8,
        lstm_channels: 32,
        ..Default::default()
    };
    let mut store = ParamStore::new(device.clone(), DType::F32);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g_t = Subnet::build(&cfg, &mut store, "g_t", &mut rng).unwrap();
    let g_r = Subnet::build(&cfg, &mut store, "g_r", &mut rng).unwrap();
    let mut d_store = ParamStore::new(device.clone(), DType::F32);
    let d = Discriminator::build(
        &DiscriminatorConfig {
            base_channels: 16,
            condition_on_input: false,
        },
        &mut d_store,
        "d",
        &mut rng,
    )
    .unwrap();
    let extractor = FeatureExtractor::seeded(7, 16, &device, DType::F32).unwrap();

    let input = rand_t((4, 3, 64, 64), 2);
    let t_gt = rand_t((4, 3, 64, 64), 3);
    let r_gt = rand_t((4, 3, 64, 64), 4);
    let alpha = Tensor::full(0.9f32, (4, 1, 1, 1), &device).unwrap();

    let mut opt_g = AdamW::new(
        store.vars(),
        ParamsAdamW {
            lr: 2e-4,
            ..Default::default()
        },
    )
    .unwrap();

    let reps = 5;
    // forward only
    let t0 = Instant::now();
    for _ in 0..reps {
        let tr = cascade_forward(&g_t, Some(&g_r), &input, 3).unwrap();
        let _ = tr.final_transmission().sum_all().unwrap().to_scalar::<f32>().unwrap();
    }
    println!("cascade forward: {:.3} s", t0.elapsed().as_secs_f64() / reps as f64);

    // forward + losses + backward + opt
    let t0 = Instant::now();
    for _ in 0..reps {
        let tr = cascade_forward(&g_t, Some(&g_r), &input, 3).unwrap();
        let res = losses::residual_reconstruction_loss(&tr, &input, &alpha).unwrap();
        let pix = losses::pixel_loss(&tr, &t_gt, &r_gt).unwrap();
        let mp = losses::multiscale_perceptual_loss(
            tr.multiscale.as_ref().unwrap(),
            &t_gt,
            &extractor,
            0.8,
            0.6,
        )
        .unwrap();
        let adv = losses::adversarial_loss_g(&d, &t_gt, tr.final_transmission()).unwrap();
        let total =
            losses::combine_losses(Some(&res), Some(&mp), Some(&pix), Some(&adv), &Default::default())
                .unwrap();
        let grads = total.backward().unwrap();
        opt_g.step(&grads).unwrap();
    }
    println!("full generator step: {:.3} s", t0.elapsed().as_secs_f64() / reps as f64);

    // backward only of pixel loss (isolates cascade backward)
    let t0 = Instant::now();
    for _ in 0..reps {
        let tr = cascade_forward(&g_t, Some(&g_r), &input, 3).unwrap();
        let pix = losses::pixel_loss(&tr, &t_gt, &r_gt).unwrap();
        let _ = pix.backward().unwrap();
    }
    println!("forward + pixel backward: {:.3} s", t0.elapsed().as_secs_f64() / reps as f64);

    // discriminator step
    let t0 = Instant::now();
    for _ in 0..reps {
        let tr = cascade_forward(&g_t, Some(&g_r), &input, 3).unwrap();
        let d_loss =
            losses::adversarial_loss_d(&d, &t_gt, &t_gt, tr.final_transmission()).unwrap();
        let _ = d_loss.backward().unwrap();
    }
    println!("forward + d backward: {:.3} s", t0.elapsed().as_secs_f64() / reps as f64);
}

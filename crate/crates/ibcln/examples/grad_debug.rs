//! Minimal finite-difference probes for individual graph pieces.

use candle_core::{DType, Device, Tensor, Var};
use ibcln::perceptual::FeatureExtractor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fd_check(name: &str, data: Vec<f64>, shape: &[usize], f: &dyn Fn(&Tensor) -> Tensor) {
    let dev = Device::Cpu;
    let var = Var::from_tensor(&Tensor::from_vec(data.clone(), shape, &dev).unwrap()).unwrap();
    let loss = f(var.as_tensor());
    let grads = loss.backward().unwrap();
    let analytic = grads
        .get(var.as_tensor())
        .map(|g| g.flatten_all().unwrap().to_vec1::<f64>().unwrap())
        .unwrap_or_else(|| vec![0.0; data.len()]);

    let h = 1e-4;
    let mut max_rel = 0f64;
    let mut worst = (0usize, 0f64, 0f64);
    for i in 0..data.len() {
        let mut d = data.clone();
        d[i] += h;
        let plus = f(&Tensor::from_vec(d.clone(), shape, &dev).unwrap())
            .to_scalar::<f64>()
            .unwrap();
        d[i] = data[i] - h;
        let minus = f(&Tensor::from_vec(d, shape, &dev).unwrap())
            .to_scalar::<f64>()
            .unwrap();
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[i];
        if a.abs() < 1e-10 && numeric.abs() < 1e-10 {
            continue;
        }
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
            worst = (i, a, numeric);
        }
    }
    println!(
        "{name}: max rel {max_rel:.3e} (worst idx {} analytic {:.6e} numeric {:.6e})",
        worst.0, worst.1, worst.2
    );
}

fn main() {
    let dev = Device::Cpu;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data: Vec<f64> = (0..48).map(|_| rng.random_range(0.1..0.9)).collect();
    let shape = [1usize, 3, 4, 4];

    fd_check("abs.mean", data.clone(), &shape, &|x| {
        x.abs().unwrap().mean_all().unwrap()
    });

    fd_check("sqr.mean", data.clone(), &shape, &|x| {
        x.sqr().unwrap().mean_all().unwrap()
    });

    let w = Tensor::from_vec(
        (0..24).map(|i| (i as f64 - 12.0) / 24.0).collect::<Vec<f64>>(),
        (2, 3, 2, 2),
        &dev,
    )
    .unwrap();
    fd_check("conv.relu.mean", data.clone(), &shape, &|x| {
        x.conv2d(&w, 0, 1, 1, 1)
            .unwrap()
            .relu()
            .unwrap()
            .mean_all()
            .unwrap()
    });

    fd_check("maxpool2x2.mean", data.clone(), &shape, &|x| {
        ibcln::tensor::max_pool2x2(x).unwrap().mean_all().unwrap()
    });

    fd_check("candle max_pool2d.mean", data.clone(), &shape, &|x| {
        x.max_pool2d(2).unwrap().mean_all().unwrap()
    });

    let ex = FeatureExtractor::seeded(17, 2, &dev, DType::F64).unwrap();
    fd_check("stage1 L1", data.clone(), &shape, &|x| {
        let (f1, _) = ex.features(x).unwrap();
        f1.abs().unwrap().mean_all().unwrap()
    });
    fd_check("stage2 L1", data.clone(), &shape, &|x| {
        let (_, f2) = ex.features(x).unwrap();
        f2.abs().unwrap().mean_all().unwrap()
    });


    // conv2d with built-in zero padding
    fd_check("conv pad1 4x4", data.clone(), &shape, &|x| {
        x.conv2d(&w, 1, 1, 1, 1).unwrap().mean_all().unwrap()
    });
    let small: Vec<f64> = data[..12].to_vec();
    let w3 = Tensor::from_vec(
        (0..54).map(|i| (i as f64 - 27.0) / 54.0).collect::<Vec<f64>>(),
        (2usize, 3, 3, 3),
        &dev,
    )
    .unwrap();
    fd_check("conv3 pad1 2x2", small.clone(), &[1, 3, 2, 2], &|x| {
        x.conv2d(&w3, 1, 1, 1, 1).unwrap().mean_all().unwrap()
    });
    fd_check("conv3 pad1 4x4", data.clone(), &shape, &|x| {
        x.conv2d(&w3, 1, 1, 1, 1).unwrap().mean_all().unwrap()
    });
    fd_check("conv3 pad1 stride2 4x4", data.clone(), &shape, &|x| {
        x.conv2d(&w3, 1, 2, 1, 1).unwrap().mean_all().unwrap()
    });
    let gt0_data: Vec<f64> = (0..48).map(|_| rng.random_range(0.1..0.9)).collect();
    let gt0 = Tensor::from_vec(gt0_data, &shape[..], &dev).unwrap();

    // compositions toward stage 2
    fd_check("pool(conv)", data.clone(), &shape, &|x| {
        let y = x.conv2d(&w3, 1, 1, 1, 1).unwrap();
        ibcln::tensor::max_pool2x2(&y).unwrap().mean_all().unwrap()
    });
    fd_check("conv(pool)", data.clone(), &shape, &|x| {
        let y = ibcln::tensor::max_pool2x2(x).unwrap();
        y.conv2d(&w3, 1, 1, 1, 1).unwrap().mean_all().unwrap()
    });
    fd_check("relu.pool.conv", data.clone(), &shape, &|x| {
        let y = x.conv2d(&w3, 1, 1, 1, 1).unwrap().relu().unwrap();
        let p = ibcln::tensor::max_pool2x2(&y).unwrap();
        p.conv2d(&w3.narrow(1, 0, 2).unwrap(), 1, 1, 1, 1)
            .unwrap()
            .relu()
            .unwrap()
            .mean_all()
            .unwrap()
    });
    fd_check("abs(a-b) asym", data.clone(), &shape, &|x| {
        (x - &gt0).unwrap().abs().unwrap().mean_all().unwrap()
    });
    fd_check("abs(b-a) asym", data.clone(), &shape, &|x| {
        (&gt0 - x).unwrap().abs().unwrap().mean_all().unwrap()
    });

    let w3b = w3.narrow(1, 0, 2).unwrap().contiguous().unwrap();
    fd_check("relu.pool.conv contiguous-kernel", data.clone(), &shape, &|x| {
        let y = x.conv2d(&w3, 1, 1, 1, 1).unwrap().relu().unwrap();
        let p = ibcln::tensor::max_pool2x2(&y).unwrap();
        p.conv2d(&w3b, 1, 1, 1, 1)
            .unwrap()
            .relu()
            .unwrap()
            .mean_all()
            .unwrap()
    });
    fd_check("conv noncontig kernel", data.clone(), &shape, &|x| {
        let y = x.narrow(1, 0, 2).unwrap();
        y.conv2d(&w3.narrow(1, 0, 2).unwrap(), 1, 1, 1, 1)
            .unwrap()
            .mean_all()
            .unwrap()
    });

    fd_check("relu.pool.mean", data.clone(), &shape, &|x| {
        let y = x.relu().unwrap();
        ibcln::tensor::max_pool2x2(&y).unwrap().mean_all().unwrap()
    });
    fd_check("conv.relu.pool.mean", data.clone(), &shape, &|x| {
        let y = x.conv2d(&w3, 1, 1, 1, 1).unwrap().relu().unwrap();
        ibcln::tensor::max_pool2x2(&y).unwrap().mean_all().unwrap()
    });
    fd_check("conv.pool.conv.mean", data.clone(), &shape, &|x| {
        let y = x.conv2d(&w3, 1, 1, 1, 1).unwrap();
        let p = ibcln::tensor::max_pool2x2(&y).unwrap();
        p.conv2d(&w3b, 1, 1, 1, 1).unwrap().mean_all().unwrap()
    });
    fd_check("conv.relu.conv.mean", data.clone(), &shape, &|x| {
        let y = x.conv2d(&w3, 1, 1, 1, 1).unwrap().relu().unwrap();
        y.conv2d(&w3.narrow(1, 0, 2).unwrap().contiguous().unwrap(), 1, 1, 1, 1)
            .unwrap()
            .mean_all()
            .unwrap()
    });

    // pool internals between two convs
    let subsample = |x: &Tensor, dy: usize, dx: usize| -> Tensor {
        let (b, c, h, w) = x.dims4().unwrap();
        x.reshape((b, c, h / 2, 2, w / 2, 2))
            .unwrap()
            .narrow(3, dy, 1)
            .unwrap()
            .narrow(5, dx, 1)
            .unwrap()
            .reshape((b, c, h / 2, w / 2))
            .unwrap()
    };
    fd_check("conv.cell00.conv", data.clone(), &shape, &|x| {
        let y = x.conv2d(&w3, 1, 1, 1, 1).unwrap();
        let p = subsample(&y, 0, 0);
        p.conv2d(&w3b, 1, 1, 1, 1).unwrap().mean_all().unwrap()
    });
    fd_check("conv.max2.conv", data.clone(), &shape, &|x| {
        let y = x.conv2d(&w3, 1, 1, 1, 1).unwrap();
        let p = subsample(&y, 0, 0).maximum(&subsample(&y, 1, 1)).unwrap();
        p.conv2d(&w3b, 1, 1, 1, 1).unwrap().mean_all().unwrap()
    });
    fd_check("conv.avgcells.conv", data.clone(), &shape, &|x| {
        let y = x.conv2d(&w3, 1, 1, 1, 1).unwrap();
        let p = ((subsample(&y, 0, 0) + subsample(&y, 1, 1)).unwrap() * 0.5).unwrap();
        p.conv2d(&w3b, 1, 1, 1, 1).unwrap().mean_all().unwrap()
    });
    fd_check("conv.avgpool.conv", data.clone(), &shape, &|x| {
        let y = x.conv2d(&w3, 1, 1, 1, 1).unwrap();
        let p = y.avg_pool2d(2).unwrap();
        p.conv2d(&w3b, 1, 1, 1, 1).unwrap().mean_all().unwrap()
    });

    // non-constant output gradient through a single conv
    let wsum_data: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
    let wsum = Tensor::from_vec(wsum_data, (1usize, 2, 4, 4), &dev).unwrap();
    fd_check("single conv, varying out-grad", data.clone(), &shape, &|x| {
        let y = x.conv2d(&w3, 1, 1, 1, 1).unwrap();
        (y * &wsum).unwrap().sum_all().unwrap()
    });
    let wsum2 = wsum.narrow(2, 0, 2).unwrap().narrow(3, 0, 2).unwrap().contiguous().unwrap();
    fd_check("single conv 2x2, varying out-grad", data[..12].to_vec(), &[1, 3, 2, 2], &|x| {
        let y = x.conv2d(&w3, 1, 1, 1, 1).unwrap();
        (y * &wsum2).unwrap().sum_all().unwrap()
    });
    fd_check("single conv stride2, varying out-grad", data.clone(), &shape, &|x| {
        let y = x.conv2d(&w3, 1, 2, 1, 1).unwrap();
        (y * &wsum2).unwrap().sum_all().unwrap()
    });

    let wq = Tensor::from_vec(
        (0..8).map(|i| ((i * 7 % 5) as f64 - 2.0) / 3.0).collect::<Vec<f64>>(),
        (1usize, 2, 2, 2),
        &dev,
    )
    .unwrap();
    fd_check("conv.avgpool.wsum", data.clone(), &shape, &|x| {
        let y = x.conv2d(&w3, 1, 1, 1, 1).unwrap();
        let p = y.avg_pool2d(2).unwrap();
        (p * &wq).unwrap().sum_all().unwrap()
    });
    fd_check("conv.crop.wsum", data.clone(), &shape, &|x| {
        let y = x.conv2d(&w3, 1, 1, 1, 1).unwrap();
        let p = y.narrow(2, 0, 2).unwrap().narrow(3, 0, 2).unwrap();
        (p * &wq).unwrap().sum_all().unwrap()
    });
    fd_check("conv.identity.conv", data.clone(), &shape, &|x| {
        let y = x.conv2d(&w3, 1, 1, 1, 1).unwrap();
        let p = (y * 1.0).unwrap();
        p.conv2d(&w3.narrow(1, 0, 2).unwrap().contiguous().unwrap(), 1, 1, 1, 1)
            .unwrap()
            .mean_all()
            .unwrap()
    });
    fd_check("conv.conv.mean direct", data.clone(), &shape, &|x| {
        let y = x.conv2d(&w3, 1, 1, 1, 1).unwrap();
        y.conv2d(&w3.narrow(1, 0, 2).unwrap().contiguous().unwrap(), 1, 1, 1, 1)
            .unwrap()
            .mean_all()
            .unwrap()
    });

    fd_check("exact second conv alone (1,2,2,2)", data[..8].to_vec(), &[1, 2, 2, 2], &|x| {
        let y = x.conv2d(&w3b, 1, 1, 1, 1).unwrap();
        (y * &wq).unwrap().sum_all().unwrap()
    });
    let w1x1 = Tensor::from_vec(vec![0.3f64, -0.2, 0.15, 0.4], (2usize, 2, 1, 1), &dev).unwrap();
    fd_check("conv.pool.conv1x1", data.clone(), &shape, &|x| {
        let y = x.conv2d(&w3, 1, 1, 1, 1).unwrap();
        let p = y.avg_pool2d(2).unwrap();
        p.conv2d(&w1x1, 0, 1, 1, 1).unwrap().mean_all().unwrap()
    });
    fd_check("conv4.conv2 sizes mixed noresize", data.clone(), &shape, &|x| {
        // two convs at DIFFERENT sizes but sequential: conv on 4x4 then crop then conv on 2x2
        let y = x.conv2d(&w3, 1, 1, 1, 1).unwrap();
        let p = y.narrow(2, 1, 2).unwrap().narrow(3, 1, 2).unwrap();
        p.conv2d(&w3b, 1, 1, 1, 1).unwrap().mean_all().unwrap()
    });
    let gt_data: Vec<f64> = (0..48).map(|_| rng.random_range(0.1..0.9)).collect();
    let gt = Tensor::from_vec(gt_data, &shape[..], &dev).unwrap();
    fd_check("perceptual_distance", data.clone(), &shape, &|x| {
        ibcln::losses::perceptual_distance(&ex, &gt, x).unwrap()
    });
}

#[allow(dead_code)]
fn extra() {}

//! Minimal failing case: print analytic vs numeric input gradients.

use candle_core::{Device, Tensor, Var};

fn main() {
    let dev = Device::Cpu;
    let n = 16;
    let data: Vec<f64> = (0..n).map(|i| ((i * 31 % 17) as f64) / 17.0).collect();
    let w_a: Vec<f64> = (0..9).map(|i| ((i * 13 % 7) as f64 - 3.0) / 7.0).collect();
    let w_b: Vec<f64> = (0..9).map(|i| ((i * 11 % 5) as f64 - 2.0) / 5.0).collect();
    let wa = Tensor::from_vec(w_a, (1usize, 1, 3, 3), &dev).unwrap();
    let wb = Tensor::from_vec(w_b, (1usize, 1, 3, 3), &dev).unwrap();

    let f = |x: &Tensor| -> f64 {
        let y = x.conv2d(&wa, 1, 1, 1, 1).unwrap();
        let p = y.avg_pool2d(2).unwrap();
        let z = p.conv2d(&wb, 1, 1, 1, 1).unwrap();
        z.mean_all().unwrap().to_scalar::<f64>().unwrap()
    };

    let var =
        Var::from_tensor(&Tensor::from_vec(data.clone(), (1usize, 1, 4, 4), &dev).unwrap())
            .unwrap();
    let y = var.conv2d(&wa, 1, 1, 1, 1).unwrap();
    let p = y.avg_pool2d(2).unwrap();
    let z = p.conv2d(&wb, 1, 1, 1, 1).unwrap();
    let loss = z.mean_all().unwrap();
    let grads = loss.backward().unwrap();
    let analytic = grads
        .get(var.as_tensor())
        .unwrap()
        .flatten_all()
        .unwrap()
        .to_vec1::<f64>()
        .unwrap();

    let h = 1e-5;
    let mut numeric = vec![0f64; n];
    for i in 0..n {
        let mut d = data.clone();
        d[i] += h;
        let plus = f(&Tensor::from_vec(d.clone(), (1usize, 1, 4, 4), &dev).unwrap());
        d[i] = data[i] - h;
        let minus = f(&Tensor::from_vec(d, (1usize, 1, 4, 4), &dev).unwrap());
        numeric[i] = (plus - minus) / (2.0 * h);
    }

    println!("analytic:");
    for r in 0..4 {
        println!("  {:?}", &analytic[4 * r..4 * r + 4]);
    }
    println!("numeric:");
    for r in 0..4 {
        println!("  {:?}", &numeric[4 * r..4 * r + 4]);
    }

    // also dump the intermediate gradient dy (grad wrt first conv output)
    let y_var = Var::from_tensor(&y).unwrap();
    let p2 = y_var.avg_pool2d(2).unwrap();
    let z2 = p2.conv2d(&wb, 1, 1, 1, 1).unwrap();
    let g2 = z2.mean_all().unwrap().backward().unwrap();
    let dy = g2
        .get(y_var.as_tensor())
        .unwrap()
        .flatten_all()
        .unwrap()
        .to_vec1::<f64>()
        .unwrap();
    println!("dy (grad wrt pooled input):");
    for r in 0..4 {
        println!("  {:?}", &dy[4 * r..4 * r + 4]);
    }
}

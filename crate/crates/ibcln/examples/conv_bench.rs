//! Microbenchmark: direct 3x3 conv vs shift+concat followed by a 1x1 conv.

use std::time::Instant;

use candle_core::{DType, Device, Tensor, Var};

fn zero_pad1(x: &Tensor) -> Tensor {
    x.pad_with_zeros(2, 1, 1).unwrap().pad_with_zeros(3, 1, 1).unwrap()
}

/// 9 shifted views of the padded input concatenated along channels.
fn shift_cat(x: &Tensor) -> Tensor {
    let (_b, _c, h, w) = x.dims4().unwrap();
    let p = zero_pad1(x);
    let mut slices = Vec::with_capacity(9);
    for dy in 0..3 {
        for dx in 0..3 {
            slices.push(p.narrow(2, dy, h).unwrap().narrow(3, dx, w).unwrap());
        }
    }
    Tensor::cat(&slices, 1).unwrap()
}

fn main() {
    let dev = Device::Cpu;
    let cases = [
        (4usize, 8usize, 8usize, 64usize),
        (4, 16, 16, 32),
        (4, 32, 32, 16),
        (4, 64, 128, 16), // lstm gates shape
    ];
    for &(b, cin, cout, s) in &cases {
        let x = Var::from_tensor(&Tensor::rand(0f32, 1f32, (b, cin, s, s), &dev).unwrap()).unwrap();
        let w3 = Var::from_tensor(
            &Tensor::rand(-0.1f32, 0.1f32, (cout, cin, 3, 3), &dev).unwrap(),
        )
        .unwrap();
        let w1 = Var::from_tensor(
            &Tensor::rand(-0.1f32, 0.1f32, (cout, cin * 9, 1, 1), &dev).unwrap(),
        )
        .unwrap();

        let reps = 20;
        let t0 = Instant::now();
        for _ in 0..reps {
            let y = x.conv2d(w3.as_tensor(), 1, 1, 1, 1).unwrap();
            let l = y.sqr().unwrap().mean_all().unwrap();
            let _ = l.backward().unwrap();
        }
        let direct = t0.elapsed().as_secs_f64() / reps as f64;

        let t0 = Instant::now();
        for _ in 0..reps {
            let shifted = shift_cat(x.as_tensor());
            let y = shifted.conv2d(w1.as_tensor(), 0, 1, 1, 1).unwrap();
            let l = y.sqr().unwrap().mean_all().unwrap();
            let _ = l.backward().unwrap();
        }
        let via_1x1 = t0.elapsed().as_secs_f64() / reps as f64;

        println!(
            "b{b} {cin}->{cout} @{s}: direct {:.1} ms, shift+1x1 {:.1} ms ({:.2}x)",
            direct * 1e3,
            via_1x1 * 1e3,
            direct / via_1x1
        );
    }
}

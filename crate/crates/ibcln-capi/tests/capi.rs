//! Exercises the C surface the way a foreign caller would: raw pointers,
//! status codes, and the thread-local error message.

use std::collections::HashMap;
use std::ffi::CString;

use candle_core::{DType, Device};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ibcln::losses::LossWeights;
use ibcln::model::{save_checkpoint, CheckpointManifest, ParamStore, Subnet, SubnetConfig};
use ibcln_capi::*;

fn small_checkpoint(dir: &std::path::Path) -> std::path::PathBuf {
    let cfg = SubnetConfig {
        base_channels: 4,
        lstm_channels: 8,
        ..Default::default()
    };
    let mut store = ParamStore::new(Device::Cpu, DType::F32);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    Subnet::build(&cfg, &mut store, "g_t", &mut rng).unwrap();
    Subnet::build(&cfg, &mut store, "g_r", &mut rng).unwrap();
    let manifest = CheckpointManifest {
        subnet: cfg,
        n_steps: 2,
        step: 0,
        loss_weights: LossWeights::default(),
        ablation: None,
        discriminator: None,
    };
    let stem = dir.join("ckpt");
    save_checkpoint(&stem, &store.tensors(), &manifest).unwrap()
}

fn last_error() -> String {
    let mut buf = vec![0i8; 512];
    let n = unsafe { ibcln_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(511)].iter().map(|&b| b as u8).collect();
    String::from_utf8_lossy(&bytes).into_owned()
}

#[test]
fn version_is_a_c_string() {
    let ptr = ibcln_version();
    let s = unsafe { std::ffi::CStr::from_ptr(ptr) }.to_str().unwrap();
    assert!(!s.is_empty());
}

#[test]
fn load_infer_free_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = small_checkpoint(dir.path());
    let path = CString::new(ckpt.to_str().unwrap()).unwrap();

    let mut model: *mut IbclnModel = std::ptr::null_mut();
    let status = unsafe { ibcln_model_load(path.as_ptr(), &mut model) };
    assert_eq!(status, IbclnStatus::Ok);
    assert!(!model.is_null());
    assert_eq!(unsafe { ibcln_model_time_steps(model) }, 2);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (h, w) = (24u32, 20u32);
    let input: Vec<u8> = (0..h * w * 3).map(|_| rng.random()).collect();
    let mut output = vec![0u8; (h * w * 3) as usize];
    let status = unsafe {
        ibcln_remove_reflection(model, input.as_ptr(), h, w, 0, output.as_mut_ptr())
    };
    assert_eq!(status, IbclnStatus::Ok);

    // deterministic: same call gives identical bytes
    let mut output2 = vec![0u8; (h * w * 3) as usize];
    let status = unsafe {
        ibcln_remove_reflection(model, input.as_ptr(), h, w, 0, output2.as_mut_ptr())
    };
    assert_eq!(status, IbclnStatus::Ok);
    assert_eq!(output, output2);

    unsafe { ibcln_model_free(model) };
}

#[test]
fn missing_checkpoint_reports_io_error() {
    let path = CString::new("/nonexistent/model").unwrap();
    let mut model: *mut IbclnModel = std::ptr::null_mut();
    let status = unsafe { ibcln_model_load(path.as_ptr(), &mut model) };
    assert_eq!(status, IbclnStatus::IoError);
    assert!(model.is_null());
    assert!(last_error().contains("checkpoint"));
}

#[test]
fn null_arguments_are_invalid() {
    let mut model: *mut IbclnModel = std::ptr::null_mut();
    assert_eq!(
        unsafe { ibcln_model_load(std::ptr::null(), &mut model) },
        IbclnStatus::InvalidArgument
    );
    let mut out = 0f64;
    assert_eq!(
        unsafe { ibcln_psnr(std::ptr::null(), std::ptr::null(), 4, 4, &mut out) },
        IbclnStatus::InvalidArgument
    );
}

#[test]
fn metrics_match_the_library() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (h, w) = (16u32, 16u32);
    let a: Vec<u8> = (0..h * w * 3).map(|_| rng.random()).collect();
    let b: Vec<u8> = (0..h * w * 3).map(|_| rng.random()).collect();

    let mut psnr_c = 0f64;
    let mut ssim_c = 0f64;
    assert_eq!(
        unsafe { ibcln_psnr(a.as_ptr(), b.as_ptr(), h, w, &mut psnr_c) },
        IbclnStatus::Ok
    );
    assert_eq!(
        unsafe { ibcln_ssim(a.as_ptr(), b.as_ptr(), h, w, &mut ssim_c) },
        IbclnStatus::Ok
    );

    let to_image = |bytes: &[u8]| {
        ibcln::imaging::Image::new(
            bytes.iter().map(|&v| v as f32 / 255.0).collect(),
            h as usize,
            w as usize,
            ibcln::imaging::ColorSpace::GammaEncoded,
        )
        .unwrap()
    };
    let ia = to_image(&a);
    let ib = to_image(&b);
    assert_eq!(psnr_c, ibcln::evaluation::psnr(&ia, &ib).unwrap());
    assert_eq!(ssim_c, ibcln::evaluation::ssim(&ia, &ib).unwrap());

    // identical buffers hit the cap / unity
    let mut cap = 0f64;
    unsafe { ibcln_psnr(a.as_ptr(), a.as_ptr(), h, w, &mut cap) };
    assert_eq!(cap, ibcln::evaluation::PSNR_CAP_DB);
}

#[test]
fn generated_header_declares_the_surface() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/ibcln.h");
    let text = std::fs::read_to_string(&header).expect("cbindgen wrote include/ibcln.h");
    for symbol in [
        "IbclnStatus",
        "IbclnModel",
        "ibcln_model_load",
        "ibcln_model_free",
        "ibcln_model_time_steps",
        "ibcln_remove_reflection",
        "ibcln_psnr",
        "ibcln_ssim",
        "ibcln_last_error_message",
        "ibcln_version",
    ] {
        assert!(text.contains(symbol), "header is missing {symbol}");
    }
}

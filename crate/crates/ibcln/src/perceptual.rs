//! Frozen feature extractor for the perceptual distance: the first two stages
//! of a VGG19-style stack (conv1_1..conv1_2 and, after a 2x max-pool,
//! conv2_1..conv2_2). Pretrained weights are loaded from the cache directory
//! named by `IBCLN_CACHE` when available; otherwise the extractor falls back
//! to a deterministic fixed-seed random initialization, which keeps the test
//! suite self-contained.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Environment variable naming the weight cache directory.
pub const CACHE_ENV_VAR: &str = "IBCLN_CACHE";
/// Expected file name inside the cache directory.
pub const WEIGHTS_FILE: &str = "vgg_features.safetensors";
/// Seed for the deterministic fallback initialization.
pub const DEFAULT_EXTRACTOR_SEED: u64 = 2020;

struct FrozenConv {
    weight: Tensor,
    bias: Tensor,
}

impl FrozenConv {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c = self.weight.dims4()?.0;
        let y = x.conv2d(&self.weight, 1, 1, 1, 1)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?)
    }
}

/// Two-stage frozen convolutional feature extractor. The weights are plain
/// tensors (not variables), so no gradient ever reaches them; gradients still
/// flow through the inputs.
pub struct FeatureExtractor {
    conv1_1: FrozenConv,
    conv1_2: FrozenConv,
    conv2_1: FrozenConv,
    conv2_2: FrozenConv,
}

const LAYER_NAMES: [&str; 4] = ["conv1_1", "conv1_2", "conv2_1", "conv2_2"];

impl FeatureExtractor {
    /// Deterministic random extractor. `base_channels` is the first-stage
    /// width (64 matches VGG19); the second stage is twice as wide.
    pub fn seeded(seed: u64, base_channels: usize, device: &Device, dtype: DType) -> Result<Self> {
        if base_channels == 0 {
            return Err(Error::Config("extractor width must be positive".into()));
        }
        let b = base_channels;
        let plan: [(usize, usize); 4] = [(3, b), (b, b), (b, 2 * b), (2 * b, 2 * b)];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut convs = Vec::with_capacity(4);
        for &(cin, cout) in &plan {
            let fan_in = (cin * 9) as f64;
            let bound = (6.0 / fan_in).sqrt();
            let wdata: Vec<f32> = (0..cout * cin * 9)
                .map(|_| rng.random_range(-bound..bound) as f32)
                .collect();
            let bias_bound = 1.0 / fan_in.sqrt();
            let bdata: Vec<f32> = (0..cout)
                .map(|_| rng.random_range(-bias_bound..bias_bound) as f32)
                .collect();
            convs.push(FrozenConv {
                weight: Tensor::from_vec(wdata, (cout, cin, 3, 3), device)?.to_dtype(dtype)?,
                bias: Tensor::from_vec(bdata, (cout,), device)?.to_dtype(dtype)?,
            });
        }
        let mut it = convs.into_iter();
        Ok(Self {
            conv1_1: it.next().unwrap(),
            conv1_2: it.next().unwrap(),
            conv2_1: it.next().unwrap(),
            conv2_2: it.next().unwrap(),
        })
    }

    /// Loads pretrained weights: a safetensors file with `conv1_1.weight`,
    /// `conv1_1.bias`, ... `conv2_2.bias` entries.
    pub fn from_safetensors(path: &Path, device: &Device) -> Result<Self> {
        let tensors = candle_core::safetensors::load(path, device)?;
        let fetch = |map: &HashMap<String, Tensor>, key: &str| -> Result<Tensor> {
            map.get(key)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("{}: missing {key}", path.display())))
        };
        let mut convs = Vec::with_capacity(4);
        for name in LAYER_NAMES {
            convs.push(FrozenConv {
                weight: fetch(&tensors, &format!("{name}.weight"))?,
                bias: fetch(&tensors, &format!("{name}.bias"))?,
            });
        }
        let mut it = convs.into_iter();
        Ok(Self {
            conv1_1: it.next().unwrap(),
            conv1_2: it.next().unwrap(),
            conv2_1: it.next().unwrap(),
            conv2_2: it.next().unwrap(),
        })
    }

    /// Cache location consulted by [`FeatureExtractor::for_training`].
    pub fn cache_path() -> Option<PathBuf> {
        std::env::var_os(CACHE_ENV_VAR).map(|dir| PathBuf::from(dir).join(WEIGHTS_FILE))
    }

    /// Pretrained weights when cached, deterministic fallback otherwise.
    pub fn for_training(
        seed: u64,
        base_channels: usize,
        device: &Device,
        dtype: DType,
    ) -> Result<Self> {
        if let Some(path) = Self::cache_path() {
            if path.exists() {
                log::info!("perceptual extractor: loading {}", path.display());
                return Self::from_safetensors(&path, device);
            }
        }
        log::warn!(
            "perceptual extractor: no pretrained weights in cache ({CACHE_ENV_VAR}); \
             using the fixed-seed random extractor"
        );
        Self::seeded(seed, base_channels, device, dtype)
    }

    /// Feature maps after the two stages (post-activation).
    pub fn features(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let x1 = self.conv1_1.forward(x)?.relu()?;
        let f1 = self.conv1_2.forward(&x1)?.relu()?;
        let pooled = crate::tensor::max_pool2x2(&f1)?;
        let x2 = self.conv2_1.forward(&pooled)?.relu()?;
        let f2 = self.conv2_2.forward(&x2)?.relu()?;
        Ok((f1, f2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_extractor_is_reproducible() {
        let dev = Device::Cpu;
        let a = FeatureExtractor::seeded(7, 8, &dev, DType::F32).unwrap();
        let b = FeatureExtractor::seeded(7, 8, &dev, DType::F32).unwrap();
        let x = Tensor::ones((1, 3, 8, 8), DType::F32, &dev).unwrap();
        let (fa, _) = a.features(&x).unwrap();
        let (fb, _) = b.features(&x).unwrap();
        let va = fa.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let vb = fb.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(va, vb);
    }

    #[test]
    fn feature_shapes() {
        let dev = Device::Cpu;
        let ex = FeatureExtractor::seeded(1, 4, &dev, DType::F32).unwrap();
        let x = Tensor::zeros((2, 3, 16, 16), DType::F32, &dev).unwrap();
        let (f1, f2) = ex.features(&x).unwrap();
        assert_eq!(f1.dims(), &[2, 4, 16, 16]);
        assert_eq!(f2.dims(), &[2, 8, 8, 8]);
    }
}

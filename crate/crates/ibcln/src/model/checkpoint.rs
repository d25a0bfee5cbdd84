//! Checkpoints: a safetensors weight blob plus a JSON sidecar manifest
//! recording the architecture, cascade depth, training step and loss weights.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::{DiscriminatorConfig, ParamStore, Subnet, SubnetConfig};
use crate::training::Ablation;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub subnet: SubnetConfig,
    pub n_steps: usize,
    pub step: usize,
    pub loss_weights: LossWeights,
    pub ablation: Option<Ablation>,
    pub discriminator: Option<DiscriminatorConfig>,
}

fn paths_for(stem: &Path) -> (PathBuf, PathBuf) {
    let stem = stem.with_extension("");
    (stem.with_extension("safetensors"), stem.with_extension("json"))
}

/// Writes `<stem>.safetensors` and `<stem>.json` atomically
/// (write-temp-then-rename).
pub fn save_checkpoint(
    stem: &Path,
    tensors: &HashMap<String, Tensor>,
    manifest: &CheckpointManifest,
) -> Result<PathBuf> {
    let (weights_path, manifest_path) = paths_for(stem);
    if let Some(parent) = weights_path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }

    let tmp_weights = weights_path.with_extension("safetensors.tmp");
    candle_core::safetensors::save(tensors, &tmp_weights)?;
    fs::rename(&tmp_weights, &weights_path).map_err(|e| Error::io(&weights_path, e))?;

    let tmp_manifest = manifest_path.with_extension("json.tmp");
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Checkpoint(format!("manifest serialization failed: {e}")))?;
    fs::write(&tmp_manifest, json).map_err(|e| Error::io(&tmp_manifest, e))?;
    fs::rename(&tmp_manifest, &manifest_path).map_err(|e| Error::io(&manifest_path, e))?;

    Ok(weights_path)
}

/// Reads the weight blob and sidecar manifest; `path` may be the stem, the
/// `.safetensors` file or the `.json` file.
pub fn load_checkpoint(
    path: &Path,
    device: &Device,
) -> Result<(HashMap<String, Tensor>, CheckpointManifest)> {
    let (weights_path, manifest_path) = paths_for(path);
    if !weights_path.exists() {
        return Err(Error::Checkpoint(format!(
            "{}: checkpoint weights not found",
            weights_path.display()
        )));
    }
    let tensors = candle_core::safetensors::load(&weights_path, device)?;
    let json = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&json)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", manifest_path.display())))?;
    Ok((tensors, manifest))
}

/// A restored generator pair ready for inference.
pub struct LoadedModel {
    pub g_t: Subnet,
    pub g_r: Option<Subnet>,
    pub manifest: CheckpointManifest,
    pub store: ParamStore,
}

/// Rebuilds the generator sub-networks from a checkpoint. The discriminator
/// is not restored; it only participates in training.
pub fn load_model(path: &Path, device: &Device) -> Result<LoadedModel> {
    let (tensors, manifest) = load_checkpoint(path, device)?;
    let has_g_r = tensors.keys().any(|k| k.starts_with("g_r."));
    let mut store = ParamStore::from_tensors(device.clone(), DType::F32, tensors);
    // strict store: every parameter comes from the checkpoint, the rng is idle
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let g_t = Subnet::build(&manifest.subnet, &mut store, "g_t", &mut rng)?;
    let g_r = if has_g_r {
        Some(Subnet::build(&manifest.subnet, &mut store, "g_r", &mut rng)?)
    } else {
        None
    };
    Ok(LoadedModel {
        g_t,
        g_r,
        manifest,
        store,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::cascade_forward;
    use rand::Rng;

    #[test]
    fn checkpoint_round_trip_reproduces_outputs_exactly() {
        let device = Device::Cpu;
        let cfg = SubnetConfig {
            base_channels: 4,
            lstm_channels: 8,
            ..Default::default()
        };
        let mut store = ParamStore::new(device.clone(), DType::F32);
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let g_t = Subnet::build(&cfg, &mut store, "g_t", &mut rng).unwrap();
        let g_r = Subnet::build(&cfg, &mut store, "g_r", &mut rng).unwrap();

        let input_data: Vec<f32> = (0..3 * 16 * 16).map(|_| rng.random_range(0.0..1.0)).collect();
        let input = Tensor::from_vec(input_data, (1, 3, 16, 16), &device).unwrap();
        let before = cascade_forward(&g_t, Some(&g_r), &input, 2).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("ckpt");
        let manifest = CheckpointManifest {
            subnet: cfg.clone(),
            n_steps: 2,
            step: 0,
            loss_weights: LossWeights::default(),
            ablation: None,
            discriminator: None,
        };
        save_checkpoint(&stem, &store.tensors(), &manifest).unwrap();

        let loaded = load_model(&stem, &device).unwrap();
        assert!(loaded.g_r.is_some());
        assert_eq!(loaded.manifest.n_steps, 2);
        let after =
            cascade_forward(&loaded.g_t, loaded.g_r.as_ref(), &input, 2).unwrap();

        for (a, b) in before.transmissions.iter().zip(&after.transmissions) {
            let va = a.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let vb = b.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert_eq!(va, vb, "bit-exact forward after reload");
        }
    }

    #[test]
    fn unreadable_checkpoint_is_an_error() {
        assert!(load_model(Path::new("/nonexistent/ckpt"), &Device::Cpu).is_err());
    }
}

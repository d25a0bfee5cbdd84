//! End-to-end optimization: alternating generator/discriminator updates over
//! mixed synthetic and real data, per-step CSV logging, per-epoch atomic
//! checkpoints, and the ablation switches used by the controlled experiments.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use candle_core::{DType, Device, Tensor};
use candle_nn::optim::{AdamW, Optimizer, ParamsAdamW};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation;
use crate::imaging::{Image, SignedImage};
use crate::losses::{
    adversarial_loss_d, adversarial_loss_g, combine_losses, multiscale_perceptual_loss,
    pixel_loss, pixel_loss_transmission_only, residual_reconstruction_loss, LossReport,
    LossWeights,
};
use crate::model::{
    cascade_forward, save_checkpoint, CheckpointManifest, Discriminator, DiscriminatorConfig,
    ParamStore, Subnet, SubnetConfig,
};
use crate::perceptual::FeatureExtractor;
use crate::synthesis::{estimate_alpha, residual_reflection, SyntheticDataset, TrainTriple};
use crate::tensor::{image_to_tensor, signed_to_tensor, stack_batch};

/// One controlled modification of the complete model, at most one at a time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ablation {
    /// Train with only the transmission sub-network; the residual input
    /// channel stays at its 0.1 constant and residual losses are dropped.
    #[serde(rename = "no_GR")]
    NoGr,
    /// Single time step (no cascaded refinement).
    #[serde(rename = "no_iteration")]
    NoIteration,
    /// Drop the adversarial term; the discriminator is never built.
    #[serde(rename = "drop_adv")]
    DropAdv,
    /// Drop the residual reconstruction term.
    #[serde(rename = "drop_residual")]
    DropResidual,
    /// Drop the multi-scale perceptual term.
    #[serde(rename = "drop_mp")]
    DropMp,
    /// Keep only the pixel loss.
    #[serde(rename = "pixel_only")]
    PixelOnly,
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "no_GR" => Ok(Ablation::NoGr),
            "no_iteration" => Ok(Ablation::NoIteration),
            "drop_adv" => Ok(Ablation::DropAdv),
            "drop_residual" => Ok(Ablation::DropResidual),
            "drop_mp" => Ok(Ablation::DropMp),
            "pixel_only" => Ok(Ablation::PixelOnly),
            other => Err(Error::Usage(format!(
                "unknown ablation `{other}` (expected one of: no_GR, no_iteration, drop_adv, \
                 drop_residual, drop_mp, pixel_only)"
            ))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Total cascade time steps N.
    pub n_steps: usize,
    pub loss_weights: LossWeights,
    pub seed: u64,
    /// Fraction of batch slots drawn from synthetic data when both synthetic
    /// and real sources are present.
    pub mix: f32,
    pub ablation: Option<Ablation>,
    /// Square crop fed to the network; must be divisible by 4.
    pub patch_size: usize,
    /// Random crop offsets and horizontal flips. Off, crops anchor at the
    /// top-left corner (overfit protocols want pure memorization).
    pub augment: bool,
    pub subnet: SubnetConfig,
    pub discriminator: DiscriminatorConfig,
    /// First-stage width of the fallback perceptual extractor.
    pub perceptual_base_channels: usize,
    pub perceptual_seed: u64,
    /// Stop after this many optimizer steps regardless of epochs.
    pub max_steps: Option<usize>,
    /// Evaluate training-set PSNR every this many steps (0 = never).
    pub eval_every: usize,
    /// Stop once training-set PSNR reaches this value (needs eval_every > 0).
    pub target_psnr: Option<f64>,
    /// Write a CSV log row every this many steps.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 80,
            batch_size: 2,
            learning_rate: 2e-4,
            n_steps: 3,
            loss_weights: LossWeights::default(),
            seed: 0,
            mix: 0.7,
            ablation: None,
            patch_size: 256,
            augment: true,
            subnet: SubnetConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            perceptual_base_channels: 64,
            perceptual_seed: crate::perceptual::DEFAULT_EXTRACTOR_SEED,
            max_steps: None,
            eval_every: 0,
            target_psnr: None,
            log_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.n_steps < 1 {
            return Err(Error::Config("n_steps must be at least 1".into()));
        }
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "patch_size must be a positive multiple of 4, got {}",
                self.patch_size
            )));
        }
        if !(0.0..=1.0).contains(&self.mix) {
            return Err(Error::Config(format!("mix {} outside [0, 1]", self.mix)));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        self.loss_weights.validate()?;
        self.subnet.validate()
    }
}

/// The concrete shape of one training run after applying the ablation: which
/// sub-networks exist, the effective step count and loss weights.
#[derive(Clone, Debug, PartialEq)]
pub struct AblatedSetup {
    pub n_steps: usize,
    pub build_g_r: bool,
    pub weights: LossWeights,
    /// Whether the pixel loss keeps its residual-prediction terms.
    pub pixel_residual_term: bool,
    pub build_discriminator: bool,
}

/// Resolves the ablation switch into the model builder and loss weights.
pub fn apply_ablation(cfg: &TrainConfig) -> Result<AblatedSetup> {
    let mut setup = AblatedSetup {
        n_steps: cfg.n_steps,
        build_g_r: true,
        weights: cfg.loss_weights,
        pixel_residual_term: true,
        build_discriminator: cfg.loss_weights.lambda_adv > 0.0,
    };
    match cfg.ablation {
        None => {}
        Some(Ablation::NoGr) => {
            setup.build_g_r = false;
            setup.weights.lambda_residual = 0.0;
            setup.pixel_residual_term = false;
        }
        Some(Ablation::NoIteration) => setup.n_steps = 1,
        Some(Ablation::DropAdv) => {
            setup.weights.lambda_adv = 0.0;
            setup.build_discriminator = false;
        }
        Some(Ablation::DropResidual) => setup.weights.lambda_residual = 0.0,
        Some(Ablation::DropMp) => setup.weights.lambda_mp = 0.0,
        Some(Ablation::PixelOnly) => {
            setup.weights.lambda_residual = 0.0;
            setup.weights.lambda_mp = 0.0;
            setup.weights.lambda_adv = 0.0;
            setup.build_discriminator = false;
        }
    }
    if setup.weights.lambda_adv == 0.0 {
        setup.build_discriminator = false;
    }
    Ok(setup)
}

/// Where training data comes from.
#[derive(Clone, Debug)]
pub enum DataSource {
    /// A generated dataset's manifest.csv.
    Synthetic(PathBuf),
    /// A directory holding input/ and transmission/ with matching file stems;
    /// alpha and the residual are derived on the fly.
    RealPairs(PathBuf),
}

enum PoolItem {
    Synthetic { dataset: usize, index: usize },
    Real { pair: usize },
}

struct DataPool {
    synthetic: Vec<SyntheticDataset>,
    real: Vec<(PathBuf, PathBuf)>,
    synthetic_count: usize,
}

impl DataPool {
    fn load(sources: &[DataSource]) -> Result<Self> {
        let mut synthetic = Vec::new();
        let mut real = Vec::new();
        for source in sources {
            match source {
                DataSource::Synthetic(manifest) => {
                    synthetic.push(SyntheticDataset::open(manifest)?)
                }
                DataSource::RealPairs(dir) => {
                    real.extend(evaluation::list_pairs(dir)?.pairs);
                }
            }
        }
        let synthetic_count = synthetic.iter().map(|d| d.len()).sum();
        if synthetic_count + real.len() == 0 {
            return Err(Error::Dataset(
                "no training data: sources are empty".into(),
            ));
        }
        Ok(Self {
            synthetic,
            real,
            synthetic_count,
        })
    }

    fn len(&self) -> usize {
        self.synthetic_count + self.real.len()
    }

    fn draw(&self, mix: f32, rng: &mut impl Rng) -> PoolItem {
        let use_synth = if self.synthetic_count == 0 {
            false
        } else if self.real.is_empty() {
            true
        } else {
            rng.random_range(0.0..1.0f32) < mix
        };
        if use_synth {
            let mut index = rng.random_range(0..self.synthetic_count);
            for (dataset, ds) in self.synthetic.iter().enumerate() {
                if index < ds.len() {
                    return PoolItem::Synthetic { dataset, index };
                }
                index -= ds.len();
            }
            unreachable!("index within synthetic_count");
        } else {
            PoolItem::Real {
                pair: rng.random_range(0..self.real.len()),
            }
        }
    }

    fn load_item(&self, item: &PoolItem) -> Result<TrainTriple> {
        match item {
            PoolItem::Synthetic { dataset, index } => self.synthetic[*dataset].load_triple(*index),
            PoolItem::Real { pair } => {
                let (input_path, t_path) = &self.real[*pair];
                let input = crate::imaging::gamma_decode(&crate::imaging::load_image(input_path)?)?;
                let transmission =
                    crate::imaging::gamma_decode(&crate::imaging::load_image(t_path)?)?;
                if !input.same_shape(&transmission) {
                    return Err(Error::ShapeMismatch(format!(
                        "real pair {} / {}: sizes differ",
                        input_path.display(),
                        t_path.display()
                    )));
                }
                let alpha = estimate_alpha(&input, &transmission)?;
                let residual = residual_reflection(&input, &transmission, alpha)?;
                Ok(TrainTriple {
                    input,
                    transmission,
                    residual,
                    alpha,
                })
            }
        }
    }

    /// Full-image triples for the training-set PSNR probe.
    fn all_items(&self) -> Vec<PoolItem> {
        let mut items = Vec::with_capacity(self.len());
        for (dataset, ds) in self.synthetic.iter().enumerate() {
            for index in 0..ds.len() {
                items.push(PoolItem::Synthetic { dataset, index });
            }
        }
        for pair in 0..self.real.len() {
            items.push(PoolItem::Real { pair });
        }
        items
    }
}

/// A cropped, optionally flipped sample ready for stacking.
struct Sample {
    input: Image,
    transmission: Image,
    residual: SignedImage,
    alpha: f32,
}

fn crop_and_augment(
    triple: &TrainTriple,
    patch: usize,
    augment: bool,
    rng: &mut impl Rng,
) -> Result<Sample> {
    let (h, w) = (triple.input.height(), triple.input.width());
    if patch > h || patch > w {
        return Err(Error::ShapeMismatch(format!(
            "patch {patch} exceeds triple size {h}x{w}"
        )));
    }
    let (y0, x0, flip) = if augment {
        (
            rng.random_range(0..=h - patch),
            rng.random_range(0..=w - patch),
            rng.random_range(0.0..1.0f32) < 0.5,
        )
    } else {
        (0, 0, false)
    };
    let mut input = triple.input.crop(y0, x0, patch, patch)?;
    let mut transmission = triple.transmission.crop(y0, x0, patch, patch)?;
    let mut residual = triple.residual.crop(y0, x0, patch, patch)?;
    if flip {
        input = input.flip_horizontal();
        transmission = transmission.flip_horizontal();
        residual = residual.flip_horizontal();
    }
    Ok(Sample {
        input,
        transmission,
        residual,
        alpha: triple.alpha,
    })
}

struct Batch {
    input: Tensor,
    transmission: Tensor,
    residual: Tensor,
    alpha: Tensor,
}

fn assemble_batch(samples: &[Sample], device: &Device) -> Result<Batch> {
    let inputs: Vec<Tensor> = samples
        .iter()
        .map(|s| image_to_tensor(&s.input, device, DType::F32))
        .collect::<Result<_>>()?;
    let ts: Vec<Tensor> = samples
        .iter()
        .map(|s| image_to_tensor(&s.transmission, device, DType::F32))
        .collect::<Result<_>>()?;
    let rs: Vec<Tensor> = samples
        .iter()
        .map(|s| signed_to_tensor(&s.residual, device, DType::F32))
        .collect::<Result<_>>()?;
    let alphas: Vec<f32> = samples.iter().map(|s| s.alpha).collect();
    Ok(Batch {
        input: stack_batch(&inputs)?,
        transmission: stack_batch(&ts)?,
        residual: stack_batch(&rs)?,
        alpha: Tensor::from_vec(alphas, (samples.len(), 1, 1, 1), device)?,
    })
}

pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub steps: usize,
    pub first_report: Option<LossReport>,
    pub final_report: Option<LossReport>,
    /// Training-set PSNR at the last probe, when probing was enabled.
    pub final_psnr: Option<f64>,
    pub stopped_early: bool,
}

fn scalar_f64(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Mean final-step PSNR of the generator over full-size pool items, measured
/// in display space on the 8-bit grid.
fn training_set_psnr(
    g_t: &Subnet,
    g_r: Option<&Subnet>,
    n_steps: usize,
    pool: &DataPool,
    device: &Device,
) -> Result<f64> {
    let items = pool.all_items();
    let mut total = 0f64;
    let mut count = 0usize;
    for item in &items {
        let triple = match pool.load_item(item) {
            Ok(t) => t,
            Err(_) => continue,
        };
        let input = image_to_tensor(&triple.input, device, DType::F32)?.unsqueeze(0)?;
        let trace = cascade_forward(g_t, g_r, &input, n_steps)?;
        let t_hat = crate::tensor::tensor_to_image(trace.final_transmission())?;
        total += evaluation::psnr_linear_pair(&t_hat, &triple.transmission)?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::Dataset("no items usable for the PSNR probe".into()));
    }
    Ok(total / count as f64)
}

/// Runs the optimization loop and returns the path of the last checkpoint.
///
/// Per batch: forward the cascade, combine the active loss terms, update the
/// generator; then (when present) update the discriminator on real/fake
/// score maps. Corrupt triples are skipped with a warning; an epoch in which
/// no batch could be formed aborts the run.
pub fn train(cfg: &TrainConfig, sources: &[DataSource], out_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    let setup = apply_ablation(cfg)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let device = Device::Cpu;
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    data_rng.set_stream(1);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    aug_rng.set_stream(2);

    let mut g_store = ParamStore::new(device.clone(), DType::F32);
    let g_t = Subnet::build(&cfg.subnet, &mut g_store, "g_t", &mut init_rng)?;
    let g_r = if setup.build_g_r {
        Some(Subnet::build(&cfg.subnet, &mut g_store, "g_r", &mut init_rng)?)
    } else {
        None
    };
    let mut d_store = ParamStore::new(device.clone(), DType::F32);
    let discriminator = if setup.build_discriminator {
        Some(Discriminator::build(
            &cfg.discriminator,
            &mut d_store,
            "d",
            &mut init_rng,
        )?)
    } else {
        None
    };
    let extractor = if setup.weights.lambda_mp > 0.0 {
        Some(FeatureExtractor::for_training(
            cfg.perceptual_seed,
            cfg.perceptual_base_channels,
            &device,
            DType::F32,
        )?)
    } else {
        None
    };

    let adam = |lr: f64| ParamsAdamW {
        lr,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        weight_decay: 0.0,
    };
    let mut opt_g = AdamW::new(g_store.vars(), adam(cfg.learning_rate))?;
    let mut opt_d = match &discriminator {
        Some(_) => Some(AdamW::new(d_store.vars(), adam(cfg.learning_rate))?),
        None => None,
    };

    let pool = DataPool::load(sources)?;
    let steps_per_epoch = pool.len().div_ceil(cfg.batch_size);

    let log_path = out_dir.join("train_log.csv");
    let mut log = csv::Writer::from_path(&log_path)
        .map_err(|e| Error::Dataset(format!("{}: {e}", log_path.display())))?;
    log.write_record(["step", "residual", "mp", "pixel", "adv", "total"])?;

    let mut step = 0usize;
    let mut first_report = None;
    let mut final_report = None;
    let mut final_psnr = None;
    let mut stopped_early = false;
    let mut last_checkpoint = None;

    let manifest = |step: usize| CheckpointManifest {
        subnet: cfg.subnet.clone(),
        n_steps: setup.n_steps,
        step,
        loss_weights: setup.weights,
        ablation: cfg.ablation,
        discriminator: discriminator.as_ref().map(|_| cfg.discriminator.clone()),
    };

    'epochs: for epoch in 0..cfg.epochs {
        let mut epoch_batches = 0usize;
        for _ in 0..steps_per_epoch {
            // assemble a batch, skipping corrupt triples
            let mut samples = Vec::with_capacity(cfg.batch_size);
            let mut attempts = 0usize;
            let max_attempts = (pool.len() * 4).max(16);
            while samples.len() < cfg.batch_size && attempts < max_attempts {
                attempts += 1;
                let item = pool.draw(cfg.mix, &mut data_rng);
                match pool
                    .load_item(&item)
                    .and_then(|t| crop_and_augment(&t, cfg.patch_size, cfg.augment, &mut aug_rng))
                {
                    Ok(sample) => samples.push(sample),
                    Err(err) => log::warn!("skipping corrupt training item: {err}"),
                }
            }
            if samples.len() < cfg.batch_size {
                log::warn!("epoch {epoch}: could not fill a batch, stopping the epoch");
                break;
            }
            let batch = assemble_batch(&samples, &device)?;

            let trace = cascade_forward(&g_t, g_r.as_ref(), &batch.input, setup.n_steps)?;

            let residual_term = if setup.weights.lambda_residual > 0.0 {
                Some(residual_reconstruction_loss(&trace, &batch.input, &batch.alpha)?)
            } else {
                None
            };
            let mp_term = match (&extractor, &trace.multiscale) {
                (Some(ex), Some(ms)) if setup.weights.lambda_mp > 0.0 => Some(
                    multiscale_perceptual_loss(
                        ms,
                        &batch.transmission,
                        ex,
                        setup.weights.gamma3,
                        setup.weights.gamma5,
                    )?,
                ),
                _ => None,
            };
            let pixel_term = if setup.pixel_residual_term {
                pixel_loss(&trace, &batch.transmission, &batch.residual)?
            } else {
                pixel_loss_transmission_only(&trace, &batch.transmission)?
            };
            let adv_term = match &discriminator {
                Some(d) if setup.weights.lambda_adv > 0.0 => {
                    let condition = if cfg.discriminator.condition_on_input {
                        &batch.input
                    } else {
                        &batch.transmission
                    };
                    Some(adversarial_loss_g(d, condition, trace.final_transmission())?)
                }
                _ => None,
            };

            let total = combine_losses(
                residual_term.as_ref(),
                mp_term.as_ref(),
                Some(&pixel_term),
                adv_term.as_ref(),
                &setup.weights,
            )?;
            let grads = total.backward()?;
            opt_g.step(&grads)?;

            if let (Some(d), Some(opt_d)) = (&discriminator, opt_d.as_mut()) {
                let condition = if cfg.discriminator.condition_on_input {
                    &batch.input
                } else {
                    &batch.transmission
                };
                let d_loss = adversarial_loss_d(
                    d,
                    condition,
                    &batch.transmission,
                    trace.final_transmission(),
                )?;
                let d_grads = d_loss.backward()?;
                opt_d.step(&d_grads)?;
            }

            let report = LossReport::new(
                residual_term.as_ref().map(scalar_f64).transpose()?.unwrap_or(0.0),
                mp_term.as_ref().map(scalar_f64).transpose()?.unwrap_or(0.0),
                scalar_f64(&pixel_term)?,
                adv_term.as_ref().map(scalar_f64).transpose()?.unwrap_or(0.0),
                &setup.weights,
            );
            if first_report.is_none() {
                first_report = Some(report);
            }
            final_report = Some(report);
            step += 1;
            epoch_batches += 1;

            if cfg.log_every > 0 && step.is_multiple_of(cfg.log_every) {
                log.write_record([
                    step.to_string(),
                    report.residual.to_string(),
                    report.mp.to_string(),
                    report.pixel.to_string(),
                    report.adv.to_string(),
                    report.total.to_string(),
                ])?;
                log.flush().map_err(|e| Error::io(&log_path, e))?;
            }

            if cfg.eval_every > 0 && step.is_multiple_of(cfg.eval_every) {
                let psnr = training_set_psnr(&g_t, g_r.as_ref(), setup.n_steps, &pool, &device)?;
                final_psnr = Some(psnr);
                log::info!("step {step}: training-set PSNR {psnr:.2} dB");
                if cfg.target_psnr.is_some_and(|target| psnr >= target) {
                    log::info!("target PSNR reached, stopping");
                    stopped_early = true;
                }
            }
            if cfg.max_steps.is_some_and(|m| step >= m) {
                stopped_early = true;
            }
            if stopped_early {
                let mut tensors = g_store.tensors();
                tensors.extend(d_store.tensors());
                let stem = out_dir.join(format!("checkpoint_epoch{:04}", epoch + 1));
                last_checkpoint = Some(save_checkpoint(&stem, &tensors, &manifest(step))?);
                break 'epochs;
            }
        }
        if epoch_batches == 0 {
            return Err(Error::Dataset(format!(
                "epoch {epoch}: every training item failed to load, aborting"
            )));
        }
        let mut tensors = g_store.tensors();
        tensors.extend(d_store.tensors());
        let stem = out_dir.join(format!("checkpoint_epoch{:04}", epoch + 1));
        last_checkpoint = Some(save_checkpoint(&stem, &tensors, &manifest(step))?);
    }

    if cfg.eval_every > 0 && final_psnr.is_none() {
        final_psnr = Some(training_set_psnr(
            &g_t,
            g_r.as_ref(),
            setup.n_steps,
            &pool,
            &device,
        )?);
    }

    Ok(TrainOutcome {
        checkpoint: last_checkpoint.expect("epochs >= 1 writes a checkpoint"),
        steps: step,
        first_report,
        final_report,
        final_psnr,
        stopped_early,
    })
}

//! The four objective terms and their weighted combination.
//!
//! Every term reduces by the mean over all elements, so the weights keep their
//! meaning across resolutions and batch sizes. The reported total is the
//! weighted sum of the four components, computed exactly as stated.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CascadeTrace, Discriminator, MultiscaleOutputs};
use crate::perceptual::FeatureExtractor;
use crate::tensor::{downsample_half, downsample_quarter};

/// Floor inside every log so a saturated discriminator cannot produce -inf.
pub const LOG_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_residual: f64,
    pub lambda_mp: f64,
    pub lambda_pixel: f64,
    pub lambda_adv: f64,
    /// Half-resolution weight inside the multi-scale perceptual term.
    pub gamma3: f64,
    /// Quarter-resolution weight inside the multi-scale perceptual term.
    pub gamma5: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_residual: 2.0,
            lambda_mp: 1.0,
            lambda_pixel: 2.0,
            lambda_adv: 0.01,
            gamma3: 0.8,
            gamma5: 0.6,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_residual,
            self.lambda_mp,
            self.lambda_pixel,
            self.lambda_adv,
            self.gamma3,
            self.gamma5,
        ];
        if all.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::Config("loss weights must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// The four loss components and their weighted total for one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub residual: f64,
    pub mp: f64,
    pub pixel: f64,
    pub adv: f64,
    pub total: f64,
}

impl LossReport {
    /// `total` is the weighted sum of the components, exactly.
    pub fn new(residual: f64, mp: f64, pixel: f64, adv: f64, w: &LossWeights) -> Self {
        Self {
            residual,
            mp,
            pixel,
            adv,
            total: w.lambda_residual * residual
                + w.lambda_mp * mp
                + w.lambda_pixel * pixel
                + w.lambda_adv * adv,
        }
    }
}

fn mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!(
            "MSE over {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok((a - b)?.sqr()?.mean_all()?)
}

fn l1(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!(
            "L1 over {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok((a - b)?.abs()?.mean_all()?)
}

/// Sum over cascade steps of MSE(I, alpha * T_t + R_t): each step's
/// predictions must recombine into the observed composite. `alpha` broadcasts
/// over the batch as a (B, 1, 1, 1) tensor.
pub fn residual_reconstruction_loss(
    trace: &CascadeTrace,
    input: &Tensor,
    alpha: &Tensor,
) -> Result<Tensor> {
    if trace.steps() == 0 {
        return Err(Error::InvalidArgument("empty cascade trace".into()));
    }
    let mut total: Option<Tensor> = None;
    for (t_hat, r_hat) in trace.transmissions.iter().zip(&trace.residuals) {
        let reconstructed = (t_hat.broadcast_mul(alpha)? + r_hat)?;
        let term = mse(input, &reconstructed)?;
        total = Some(match total {
            Some(acc) => (acc + term)?,
            None => term,
        });
    }
    Ok(total.expect("at least one step"))
}

/// Sum over cascade steps of MSE(T, T_t) + MSE(R~, R_t).
pub fn pixel_loss(trace: &CascadeTrace, t_gt: &Tensor, r_gt: &Tensor) -> Result<Tensor> {
    if trace.steps() == 0 {
        return Err(Error::InvalidArgument("empty cascade trace".into()));
    }
    let mut total: Option<Tensor> = None;
    for (t_hat, r_hat) in trace.transmissions.iter().zip(&trace.residuals) {
        let term = (mse(t_gt, t_hat)? + mse(r_gt, r_hat)?)?;
        total = Some(match total {
            Some(acc) => (acc + term)?,
            None => term,
        });
    }
    Ok(total.expect("at least one step"))
}

/// Pixel loss without the residual terms, for training runs that drop the
/// reflection sub-network.
pub fn pixel_loss_transmission_only(trace: &CascadeTrace, t_gt: &Tensor) -> Result<Tensor> {
    if trace.steps() == 0 {
        return Err(Error::InvalidArgument("empty cascade trace".into()));
    }
    let mut total: Option<Tensor> = None;
    for t_hat in &trace.transmissions {
        let term = mse(t_gt, t_hat)?;
        total = Some(match total {
            Some(acc) => (acc + term)?,
            None => term,
        });
    }
    Ok(total.expect("at least one step"))
}

/// Mean absolute distance between extractor features of `a` and `b`, summed
/// over the extractor's two stages.
pub fn perceptual_distance(
    extractor: &FeatureExtractor,
    a: &Tensor,
    b: &Tensor,
) -> Result<Tensor> {
    let (fa1, fa2) = extractor.features(a)?;
    let (fb1, fb2) = extractor.features(b)?;
    Ok((l1(&fa1, &fb1)? + l1(&fa2, &fb2)?)?)
}

/// Multi-scale perceptual loss at the final cascade step: the full-, half-
/// and quarter-resolution outputs are compared against the ground-truth
/// transmission downsampled to the matching sizes, weighted 1 / gamma3 /
/// gamma5.
pub fn multiscale_perceptual_loss(
    ms: &MultiscaleOutputs,
    t_gt: &Tensor,
    extractor: &FeatureExtractor,
    gamma3: f64,
    gamma5: f64,
) -> Result<Tensor> {
    if ms.full.dims() != t_gt.dims() {
        return Err(Error::ShapeMismatch(format!(
            "multi-scale full output {:?} vs ground truth {:?}",
            ms.full.dims(),
            t_gt.dims()
        )));
    }
    let t_half = downsample_half(t_gt)?;
    let t_quarter = downsample_quarter(t_gt)?;
    if ms.half.dims() != t_half.dims() || ms.quarter.dims() != t_quarter.dims() {
        return Err(Error::ShapeMismatch(format!(
            "multi-scale heads {:?}/{:?} vs downsampled ground truth {:?}/{:?}",
            ms.half.dims(),
            ms.quarter.dims(),
            t_half.dims(),
            t_quarter.dims()
        )));
    }
    let full = perceptual_distance(extractor, t_gt, &ms.full)?;
    let half = perceptual_distance(extractor, &t_half, &ms.half)?;
    let quarter = perceptual_distance(extractor, &t_quarter, &ms.quarter)?;
    Ok(((full + (half * gamma3)?)? + (quarter * gamma5)?)?)
}

/// Generator adversarial term: mean over the score map of -log D(cond, T^).
pub fn adversarial_loss_g(
    discriminator: &Discriminator,
    condition: &Tensor,
    t_hat: &Tensor,
) -> Result<Tensor> {
    let scores = discriminator.score(condition, t_hat)?;
    Ok((scores + LOG_EPS)?.log()?.neg()?.mean_all()?)
}

/// Discriminator term: binary cross-entropy pushing real pairs toward 1 and
/// generated pairs toward 0. The candidate is detached so no gradient reaches
/// the generator.
pub fn adversarial_loss_d(
    discriminator: &Discriminator,
    condition: &Tensor,
    t_real: &Tensor,
    t_hat: &Tensor,
) -> Result<Tensor> {
    let real_scores = discriminator.score(condition, t_real)?;
    let fake_scores = discriminator.score(condition, &t_hat.detach())?;
    let real_term = (real_scores + LOG_EPS)?.log()?.neg()?.mean_all()?;
    let fake_term = ((1.0 - fake_scores)? + LOG_EPS)?.log()?.neg()?.mean_all()?;
    Ok((real_term + fake_term)?)
}

/// Weighted sum of whichever loss terms are active, as a graph tensor for
/// backpropagation. Terms with weight 0 (or absent) are skipped entirely.
pub fn combine_losses(
    residual: Option<&Tensor>,
    mp: Option<&Tensor>,
    pixel: Option<&Tensor>,
    adv: Option<&Tensor>,
    w: &LossWeights,
) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    let mut add = |term: Option<&Tensor>, weight: f64| -> Result<()> {
        if let Some(t) = term {
            if weight > 0.0 {
                let scaled = (t * weight)?;
                total = Some(match total.take() {
                    Some(acc) => (acc + scaled)?,
                    None => scaled,
                });
            }
        }
        Ok(())
    };
    add(residual, w.lambda_residual)?;
    add(mp, w.lambda_mp)?;
    add(pixel, w.lambda_pixel)?;
    add(adv, w.lambda_adv)?;
    total.ok_or_else(|| Error::InvalidArgument("no active loss terms".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Discriminator, DiscriminatorConfig, ParamStore};
    use candle_core::{DType, Device, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: (usize, usize, usize, usize), seed: u64, lo: f32, hi: f32) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.0 * shape.1 * shape.2 * shape.3;
        let data: Vec<f32> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        Tensor::from_vec(data, shape, &Device::Cpu).unwrap()
    }

    fn trace_of(transmissions: Vec<Tensor>, residuals: Vec<Tensor>) -> CascadeTrace {
        CascadeTrace {
            transmissions,
            residuals,
            multiscale: None,
        }
    }

    fn scalar(t: &Tensor) -> f64 {
        t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
    }

    #[test]
    fn residual_loss_zero_on_perfect_predictions() {
        let t = rand_tensor((1, 3, 4, 4), 1, 0.0, 0.5);
        let r = rand_tensor((1, 3, 4, 4), 2, 0.0, 0.4);
        let alpha = Tensor::full(0.9f32, (1, 1, 1, 1), &Device::Cpu).unwrap();
        let input = (t.broadcast_mul(&alpha).unwrap() + &r).unwrap();
        let trace = trace_of(vec![t.clone(), t.clone()], vec![r.clone(), r.clone()]);
        let loss = residual_reconstruction_loss(&trace, &input, &alpha).unwrap();
        assert!(scalar(&loss) < 1e-12);
    }

    #[test]
    fn residual_loss_constant_offset_squared() {
        let t = rand_tensor((1, 3, 4, 4), 3, 0.0, 0.5);
        let r = rand_tensor((1, 3, 4, 4), 4, 0.0, 0.4);
        let alpha = Tensor::full(1.0f32, (1, 1, 1, 1), &Device::Cpu).unwrap();
        let input = ((t.broadcast_mul(&alpha).unwrap() + &r).unwrap() + 0.25).unwrap();
        let trace = trace_of(vec![t], vec![r]);
        let loss = residual_reconstruction_loss(&trace, &input, &alpha).unwrap();
        assert!((scalar(&loss) - 0.0625).abs() < 1e-6, "got {}", scalar(&loss));
    }

    #[test]
    fn residual_loss_matches_elementwise_oracle() {
        let input = rand_tensor((1, 3, 4, 4), 5, 0.0, 1.0);
        let alpha_val = 0.85f64;
        let alpha = Tensor::full(alpha_val as f32, (1, 1, 1, 1), &Device::Cpu).unwrap();
        let ts: Vec<Tensor> = (0..3).map(|i| rand_tensor((1, 3, 4, 4), 10 + i, -0.2, 1.0)).collect();
        let rs: Vec<Tensor> = (0..3).map(|i| rand_tensor((1, 3, 4, 4), 20 + i, -0.5, 0.5)).collect();

        // brute-force double loop in f64
        let iv = input.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let mut expected = 0f64;
        for step in 0..3 {
            let tv = ts[step].flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let rv = rs[step].flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let mut acc = 0f64;
            for i in 0..iv.len() {
                let rec = alpha_val * tv[i] as f64 + rv[i] as f64;
                let d = iv[i] as f64 - rec;
                acc += d * d;
            }
            expected += acc / iv.len() as f64;
        }
        let trace = trace_of(ts, rs);
        let loss = residual_reconstruction_loss(&trace, &input, &alpha).unwrap();
        assert!(
            (scalar(&loss) - expected).abs() < 1e-6,
            "{} vs oracle {expected}",
            scalar(&loss)
        );
    }

    #[test]
    fn pixel_loss_trivial_and_oracle() {
        let t = rand_tensor((1, 3, 4, 4), 30, 0.0, 1.0);
        let r = rand_tensor((1, 3, 4, 4), 31, -0.5, 0.5);
        let perfect = trace_of(vec![t.clone(); 2], vec![r.clone(); 2]);
        assert!(scalar(&pixel_loss(&perfect, &t, &r).unwrap()) < 1e-12);

        // two steps, every prediction off by a constant c -> 4 c^2
        let c = 0.1f64;
        let off_t = (&t + c).unwrap();
        let off_r = (&r + c).unwrap();
        let off = trace_of(vec![off_t.clone(), off_t], vec![off_r.clone(), off_r]);
        let got = scalar(&pixel_loss(&off, &t, &r).unwrap());
        assert!((got - 4.0 * c * c).abs() < 1e-6, "got {got}");

        // random trace against a brute-force oracle
        let ts: Vec<Tensor> = (0..3).map(|i| rand_tensor((1, 3, 4, 4), 40 + i, -0.3, 1.2)).collect();
        let rs: Vec<Tensor> = (0..3).map(|i| rand_tensor((1, 3, 4, 4), 50 + i, -1.0, 1.0)).collect();
        let tv = t.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let rv = r.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let mut expected = 0f64;
        for step in 0..3 {
            let tp = ts[step].flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let rp = rs[step].flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let mut acc_t = 0f64;
            let mut acc_r = 0f64;
            for i in 0..tv.len() {
                acc_t += (tv[i] as f64 - tp[i] as f64).powi(2);
                acc_r += (rv[i] as f64 - rp[i] as f64).powi(2);
            }
            expected += acc_t / tv.len() as f64 + acc_r / rv.len() as f64;
        }
        let random = trace_of(ts, rs);
        let got = scalar(&pixel_loss(&random, &t, &r).unwrap());
        assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
    }

    #[test]
    fn multiscale_perceptual_zero_when_identical_and_weighted_sum() {
        use crate::perceptual::FeatureExtractor;
        use crate::tensor::{downsample_half, downsample_quarter};
        let ex = FeatureExtractor::seeded(99, 4, &Device::Cpu, DType::F32).unwrap();
        let t = rand_tensor((1, 3, 8, 8), 60, 0.0, 1.0);
        let perfect = MultiscaleOutputs {
            full: t.clone(),
            half: downsample_half(&t).unwrap(),
            quarter: downsample_quarter(&t).unwrap(),
        };
        let zero = multiscale_perceptual_loss(&perfect, &t, &ex, 0.8, 0.6).unwrap();
        assert!(scalar(&zero) < 1e-12);

        // independent recomputation of the weighted sum on random heads
        let ms = MultiscaleOutputs {
            full: rand_tensor((1, 3, 8, 8), 61, 0.0, 1.0),
            half: rand_tensor((1, 3, 4, 4), 62, 0.0, 1.0),
            quarter: rand_tensor((1, 3, 2, 2), 63, 0.0, 1.0),
        };
        let got = scalar(&multiscale_perceptual_loss(&ms, &t, &ex, 0.8, 0.6).unwrap());
        let full = scalar(&perceptual_distance(&ex, &t, &ms.full).unwrap());
        let half = scalar(
            &perceptual_distance(&ex, &downsample_half(&t).unwrap(), &ms.half).unwrap(),
        );
        let quarter = scalar(
            &perceptual_distance(&ex, &downsample_quarter(&t).unwrap(), &ms.quarter).unwrap(),
        );
        // the graph combines in f32, the oracle in f64
        let expected = full + 0.8 * half + 0.6 * quarter;
        assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");

        // degenerate weights reduce to the single-scale distance
        let single = scalar(&multiscale_perceptual_loss(&ms, &t, &ex, 0.0, 0.0).unwrap());
        assert!((single - full).abs() < 1e-9);
    }

    fn tiny_discriminator(seed: u64) -> Discriminator {
        let mut store = ParamStore::new(Device::Cpu, DType::F32);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Discriminator::build(
            &DiscriminatorConfig {
                base_channels: 2,
                condition_on_input: false,
            },
            &mut store,
            "d",
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn adversarial_generator_term_closed_forms() {
        // D == 0.5 everywhere -> -log 0.5; exercised via the formula directly
        let half_scores = Tensor::full(0.5f32, (1, 1, 2, 2), &Device::Cpu).unwrap();
        let g_loss = (half_scores + LOG_EPS)
            .unwrap()
            .log()
            .unwrap()
            .neg()
            .unwrap()
            .mean_all()
            .unwrap();
        assert!((scalar(&g_loss) - 0.6931472).abs() < 1e-6);

        // and through a real discriminator the value stays positive & finite
        let d = tiny_discriminator(70);
        let cond = rand_tensor((1, 3, 16, 16), 71, 0.0, 1.0);
        let cand = rand_tensor((1, 3, 16, 16), 72, 0.0, 1.0);
        let loss = adversarial_loss_g(&d, &cond, &cand).unwrap();
        let v = scalar(&loss);
        assert!(v.is_finite() && v > 0.0);
    }

    #[test]
    fn adversarial_discriminator_term_closed_form() {
        // D == 0.5 on both real and fake -> 2 * (-log 0.5)
        let s = Tensor::full(0.5f32, (1, 1, 2, 2), &Device::Cpu).unwrap();
        let real = (&s + LOG_EPS).unwrap().log().unwrap().neg().unwrap().mean_all().unwrap();
        let fake = ((1.0 - &s).unwrap() + LOG_EPS)
            .unwrap()
            .log()
            .unwrap()
            .neg()
            .unwrap()
            .mean_all()
            .unwrap();
        let total = scalar(&real) + scalar(&fake);
        assert!((total - 1.3862944).abs() < 1e-6, "got {total}");
    }

    #[test]
    fn discriminator_loss_detaches_generator_path() {
        use candle_core::Var;
        let d = tiny_discriminator(80);
        let cond = rand_tensor((1, 3, 16, 16), 81, 0.0, 1.0);
        let t_real = rand_tensor((1, 3, 16, 16), 82, 0.0, 1.0);
        let t_hat = Var::from_tensor(&rand_tensor((1, 3, 16, 16), 83, 0.0, 1.0)).unwrap();
        let loss = adversarial_loss_d(&d, &cond, &t_real, t_hat.as_tensor()).unwrap();
        let grads = loss.backward().unwrap();
        assert!(
            grads.get(t_hat.as_tensor()).is_none(),
            "generator output must be detached in the discriminator update"
        );
    }

    #[test]
    fn report_total_is_exact_weighted_sum() {
        let w = LossWeights::default();
        let report = LossReport::new(1.0, 1.0, 1.0, 1.0, &w);
        assert_eq!(report.total, 5.01);
        let zero = LossReport::new(0.0, 0.0, 0.0, 0.0, &w);
        assert_eq!(zero.total, 0.0);

        // invariant holds bit-exactly for arbitrary weights/components
        let w2 = LossWeights {
            lambda_residual: 0.3,
            lambda_mp: 1.7,
            lambda_pixel: 0.0,
            lambda_adv: 4.2,
            ..Default::default()
        };
        let r = LossReport::new(0.11, 0.22, 0.33, 0.44, &w2);
        let expected = w2.lambda_residual * 0.11
            + w2.lambda_mp * 0.22
            + w2.lambda_pixel * 0.33
            + w2.lambda_adv * 0.44;
        assert_eq!(r.total, expected);
    }

    #[test]
    fn ablation_weights_drop_terms() {
        // lambda_adv = 0 reproduces the "no adversarial" configuration: the
        // term is skipped in the combined graph entirely
        let w = LossWeights {
            lambda_adv: 0.0,
            ..Default::default()
        };
        let one = Tensor::full(1.0f32, (), &Device::Cpu).unwrap();
        let total = combine_losses(Some(&one), Some(&one), Some(&one), None, &w).unwrap();
        assert!((scalar(&total) - 5.0).abs() < 1e-9);
    }
}

//! The cascaded refinement network: twin ConvLSTM encoder/decoder sub-networks
//! (one predicting the transmission, one the residual reflection) iterated for
//! a fixed number of time steps with weights shared across steps, plus the
//! patch discriminator used by the adversarial loss.

mod checkpoint;
mod discriminator;
mod params;
mod subnet;

pub use checkpoint::{load_checkpoint, load_model, save_checkpoint, CheckpointManifest, LoadedModel};
pub use discriminator::{Discriminator, DiscriminatorConfig};
pub use params::ParamStore;
pub use subnet::{CascadeState, MultiscaleOutputs, Subnet, SubnetConfig, SUBNET_INPUT_CHANNELS};

use candle_core::Tensor;

use crate::error::{Error, Result};

/// Fill value for the step-1 residual input, before any prediction exists.
pub const INITIAL_RESIDUAL_FILL: f64 = 0.1;

/// Ordered predictions from every cascade step, plus the multi-scale heads of
/// the transmission sub-network at the final step. The declared result of the
/// cascade is the last entry of `transmissions`.
#[derive(Clone, Debug)]
pub struct CascadeTrace {
    pub transmissions: Vec<Tensor>,
    pub residuals: Vec<Tensor>,
    pub multiscale: Option<MultiscaleOutputs>,
}

impl CascadeTrace {
    pub fn steps(&self) -> usize {
        self.transmissions.len()
    }

    pub fn final_transmission(&self) -> &Tensor {
        self.transmissions
            .last()
            .expect("a cascade trace holds at least one step")
    }
}

/// Runs both sub-networks for `n` time steps. At step t each receives the
/// channel concatenation of the input image and the step t-1 predictions;
/// step 1 uses the input itself as the transmission estimate and a constant
/// 0.1 residual. Each sub-network threads its own LSTM state. When `g_r` is
/// absent (the no-G_R ablation) the residual channel stays at its constant
/// fill for every step.
pub fn cascade_forward(
    g_t: &Subnet,
    g_r: Option<&Subnet>,
    input: &Tensor,
    n: usize,
) -> Result<CascadeTrace> {
    if n < 1 {
        return Err(Error::InvalidArgument(format!(
            "cascade needs at least one time step, got {n}"
        )));
    }
    let (batch, channels, height, width) = input.dims4()?;
    if channels != 3 {
        return Err(Error::ShapeMismatch(format!(
            "cascade input must have 3 channels, got {channels}"
        )));
    }

    let r_fill = Tensor::full(INITIAL_RESIDUAL_FILL, (batch, 3, height, width), input.device())?
        .to_dtype(input.dtype())?;

    let mut t_prev = input.clone();
    let mut r_prev = r_fill.clone();
    let mut state_t = g_t.zero_state(batch, height, width)?;
    let mut state_r = match g_r {
        Some(g_r) => Some(g_r.zero_state(batch, height, width)?),
        None => None,
    };

    let mut transmissions = Vec::with_capacity(n);
    let mut residuals = Vec::with_capacity(n);
    let mut multiscale = None;

    for step in 0..n {
        let (t_pred, new_state_t, heads) = g_t.forward(input, &t_prev, &r_prev, &state_t)?;
        let r_pred = match (g_r, state_r.take()) {
            (Some(g_r), Some(st)) => {
                let (r_pred, new_state_r, _) = g_r.forward(input, &t_prev, &r_prev, &st)?;
                state_r = Some(new_state_r);
                r_pred
            }
            _ => r_fill.clone(),
        };
        state_t = new_state_t;

        if step == n - 1 {
            multiscale = heads.map(|(half, quarter)| MultiscaleOutputs {
                full: t_pred.clone(),
                half,
                quarter,
            });
        }
        t_prev = t_pred.clone();
        r_prev = r_pred.clone();
        transmissions.push(t_pred);
        residuals.push(r_pred);
    }

    Ok(CascadeTrace {
        transmissions,
        residuals,
        multiscale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device, Var};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> SubnetConfig {
        SubnetConfig {
            base_channels: 4,
            lstm_channels: 8,
            ..Default::default()
        }
    }

    fn build_pair(seed: u64) -> (ParamStore, Subnet, Subnet) {
        let mut store = ParamStore::new(Device::Cpu, DType::F32);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = small_cfg();
        let g_t = Subnet::build(&cfg, &mut store, "g_t", &mut rng).unwrap();
        let g_r = Subnet::build(&cfg, &mut store, "g_r", &mut rng).unwrap();
        (store, g_t, g_r)
    }

    fn rand_input(batch: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..batch * 3 * h * w)
            .map(|_| rand::Rng::random_range(&mut rng, 0.0..1.0))
            .collect();
        Tensor::from_vec(data, (batch, 3, h, w), &Device::Cpu).unwrap()
    }

    #[test]
    fn twin_subnets_have_equal_parameter_counts() {
        let mut store_a = ParamStore::new(Device::Cpu, DType::F32);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = small_cfg();
        Subnet::build(&cfg, &mut store_a, "a", &mut rng).unwrap();
        let count_a = store_a.param_count();
        let mut store_b = ParamStore::new(Device::Cpu, DType::F32);
        Subnet::build(&cfg, &mut store_b, "b", &mut rng).unwrap();
        assert_eq!(count_a, store_b.param_count());
    }

    #[test]
    fn subnet_output_shapes_across_scales() {
        let (_store, g_t, _g_r) = build_pair(1);
        let input = rand_input(1, 64, 64, 2);
        let state = g_t.zero_state(1, 64, 64).unwrap();
        let fill = Tensor::full(0.1f64, (1, 3, 64, 64), &Device::Cpu)
            .unwrap()
            .to_dtype(DType::F32)
            .unwrap();
        let (pred, _state, heads) = g_t.forward(&input, &input, &fill, &state).unwrap();
        assert_eq!(pred.dims(), &[1, 3, 64, 64]);
        let (half, quarter) = heads.unwrap();
        assert_eq!(half.dims(), &[1, 3, 32, 32]);
        assert_eq!(quarter.dims(), &[1, 3, 16, 16]);
    }

    #[test]
    fn subnet_step_is_deterministic_and_finite() {
        let (_store, g_t, _) = build_pair(3);
        let input = rand_input(2, 16, 16, 4);
        let state = g_t.zero_state(2, 16, 16).unwrap();
        let fill = Tensor::full(0.1f64, (2, 3, 16, 16), &Device::Cpu)
            .unwrap()
            .to_dtype(DType::F32)
            .unwrap();
        let (a, _, _) = g_t.forward(&input, &input, &fill, &state).unwrap();
        let (b, _, _) = g_t.forward(&input, &input, &fill, &state).unwrap();
        let va = a.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let vb = b.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(va, vb);
        assert!(va.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn subnet_is_sensitive_to_residual_channel() {
        let (_store, g_t, _) = build_pair(5);
        let input = rand_input(1, 16, 16, 6);
        let state = g_t.zero_state(1, 16, 16).unwrap();
        let r_a = Tensor::full(0.1f64, (1, 3, 16, 16), &Device::Cpu)
            .unwrap()
            .to_dtype(DType::F32)
            .unwrap();
        let r_b = Tensor::full(0.6f64, (1, 3, 16, 16), &Device::Cpu)
            .unwrap()
            .to_dtype(DType::F32)
            .unwrap();
        let (a, _, _) = g_t.forward(&input, &input, &r_a, &state).unwrap();
        let (b, _, _) = g_t.forward(&input, &input, &r_b, &state).unwrap();
        let diff = (a - b)
            .unwrap()
            .abs()
            .unwrap()
            .max_all()
            .unwrap()
            .to_scalar::<f32>()
            .unwrap();
        assert!(diff > 0.0, "changing R_prev must change the output");
    }

    #[test]
    fn cascade_trace_lengths_and_final_result() {
        let (_store, g_t, g_r) = build_pair(7);
        let input = rand_input(1, 16, 16, 8);
        let trace = cascade_forward(&g_t, Some(&g_r), &input, 3).unwrap();
        assert_eq!(trace.steps(), 3);
        assert_eq!(trace.transmissions.len(), 3);
        assert_eq!(trace.residuals.len(), 3);
        for t in &trace.transmissions {
            assert_eq!(t.dims(), &[1, 3, 16, 16]);
        }
        let last = trace.transmissions[2]
            .flatten_all()
            .unwrap()
            .to_vec1::<f32>()
            .unwrap();
        let declared = trace
            .final_transmission()
            .flatten_all()
            .unwrap()
            .to_vec1::<f32>()
            .unwrap();
        assert_eq!(last, declared);
        assert!(trace.multiscale.is_some());
        assert!(cascade_forward(&g_t, Some(&g_r), &input, 0).is_err());
    }

    #[test]
    fn gradients_reach_step_one_input() {
        let (_store, g_t, g_r) = build_pair(9);
        let input_var = Var::from_tensor(&rand_input(1, 16, 16, 10)).unwrap();
        let trace = cascade_forward(&g_t, Some(&g_r), input_var.as_tensor(), 3).unwrap();
        let scalar = trace.final_transmission().mean_all().unwrap();
        let grads = scalar.backward().unwrap();
        let g = grads.get(input_var.as_tensor()).expect("input gradient");
        let norm = g
            .sqr()
            .unwrap()
            .sum_all()
            .unwrap()
            .to_scalar::<f32>()
            .unwrap();
        assert!(norm > 0.0, "gradient from final step must reach the input");
    }

    #[test]
    fn discriminator_scores_in_open_unit_interval() {
        let mut store = ParamStore::new(Device::Cpu, DType::F32);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = Discriminator::build(
            &DiscriminatorConfig {
                base_channels: 4,
                condition_on_input: false,
            },
            &mut store,
            "d",
            &mut rng,
        )
        .unwrap();
        let cond = rand_input(2, 64, 64, 12);
        let cand = rand_input(2, 64, 64, 13);
        let s = d.score(&cond, &cand).unwrap();
        // stride product 16 over 4 layers
        assert_eq!(s.dims(), &[2, 1, 4, 4]);
        let v = s.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(v.iter().all(|&x| x > 0.0 && x < 1.0));
        let s2 = d.score(&cond, &cand).unwrap();
        let v2 = s2.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(v, v2);
        let small = rand_input(2, 32, 32, 14);
        assert!(d.score(&cond, &small).is_err());
    }
}

//! Named parameter storage with deterministic initialization and checkpoint
//! preloading.

use std::collections::HashMap;

use candle_core::{DType, Device, Tensor, Var};
use indexmap::IndexMap;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::reflect_pad1;

/// Owns every trainable variable of a model, keyed by a dotted path such as
/// `g_t.enc.3.weight`. Initialization draws from the caller's RNG so two
/// stores built with the same seed hold bit-identical weights.
pub struct ParamStore {
    device: Device,
    dtype: DType,
    vars: IndexMap<String, Var>,
    preload: HashMap<String, Tensor>,
    strict: bool,
}

impl ParamStore {
    pub fn new(device: Device, dtype: DType) -> Self {
        Self {
            device,
            dtype,
            vars: IndexMap::new(),
            preload: HashMap::new(),
            strict: false,
        }
    }

    /// A store that resolves every parameter from `tensors` and fails on any
    /// missing key; used when restoring checkpoints.
    pub fn from_tensors(device: Device, dtype: DType, tensors: HashMap<String, Tensor>) -> Self {
        Self {
            device,
            dtype,
            vars: IndexMap::new(),
            preload: tensors,
            strict: true,
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    /// Fetches (or creates) a parameter. Freshly created parameters are drawn
    /// from U(-bound, bound).
    pub fn get_or_init(
        &mut self,
        name: &str,
        shape: &[usize],
        bound: f64,
        rng: &mut impl Rng,
    ) -> Result<Tensor> {
        if let Some(var) = self.vars.get(name) {
            return Ok(var.as_tensor().clone());
        }
        let numel: usize = shape.iter().product();
        let tensor = if let Some(t) = self.preload.get(name) {
            if t.dims() != shape {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: stored shape {:?} does not match expected {shape:?}",
                    t.dims()
                )));
            }
            t.to_device(&self.device)?.to_dtype(self.dtype)?
        } else {
            if self.strict {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} missing from checkpoint"
                )));
            }
            let data: Vec<f32> = (0..numel)
                .map(|_| rng.random_range(-bound..bound) as f32)
                .collect();
            Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?
        };
        let var = Var::from_tensor(&tensor)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(out)
    }

    /// Trainable variables in creation order.
    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn var_map(&self) -> &IndexMap<String, Var> {
        &self.vars
    }

    pub fn param_count(&self) -> usize {
        self.vars.values().map(|v| v.as_tensor().elem_count()).sum()
    }

    /// Snapshot of the current parameter values for serialization.
    pub fn tensors(&self) -> HashMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum PadMode {
    /// Mirror-without-edge padding by 1 pixel; pairs with 3x3 kernels.
    Reflect,
    /// No padding; used by the 1x1 heads.
    None,
}

/// A plain convolution layer over store-managed weights.
pub(crate) struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    out_channels: usize,
    stride: usize,
    pad: PadMode,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        ksize: usize,
        stride: usize,
        pad: PadMode,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        // He-style uniform init: keeps activation and gradient scale roughly
        // constant through the deep ReLU stacks the cascade unrolls into
        let fan_in = (in_channels * ksize * ksize) as f64;
        let weight_bound = (6.0 / fan_in).sqrt();
        let weight = store.get_or_init(
            &format!("{name}.weight"),
            &[out_channels, in_channels, ksize, ksize],
            weight_bound,
            rng,
        )?;
        let bias_bound = 1.0 / fan_in.sqrt();
        let bias = store.get_or_init(&format!("{name}.bias"), &[out_channels], bias_bound, rng)?;
        Ok(Self {
            weight,
            bias,
            out_channels,
            stride,
            pad,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        // PROBE: zero padding to measure reflect-pad cost
        let y = match self.pad {
            PadMode::Reflect => x.conv2d(&self.weight, 1, self.stride, 1, 1)?,
            PadMode::None => x.conv2d(&self.weight, 0, self.stride, 1, 1)?,
        };
        Ok(y.broadcast_add(&self.bias.reshape((1, self.out_channels, 1, 1))?)?)
    }

    pub fn device(&self) -> &Device {
        self.weight.device()
    }

    pub fn dtype(&self) -> DType {
        self.weight.dtype()
    }
}

pub(crate) fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

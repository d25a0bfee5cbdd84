//! Patch discriminator scoring (condition, candidate) transmission pairs.

use candle_core::Tensor;
use candle_nn::ops::sigmoid;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::params::{leaky_relu, Conv2d, PadMode, ParamStore};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    /// First-layer width; the four stride-2 stages use 1x/2x/4x/8x this.
    pub base_channels: usize,
    /// Condition the score on the composite input image instead of the
    /// ground-truth transmission.
    pub condition_on_input: bool,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            base_channels: 64,
            condition_on_input: false,
        }
    }
}

/// Four stride-2 conv stages with LeakyReLU followed by a 1x1 head; the
/// sigmoid-squashed output is a map of patch realism scores in (0, 1).
pub struct Discriminator {
    convs: Vec<Conv2d>,
    head: Conv2d,
}

impl Discriminator {
    pub fn build(
        cfg: &DiscriminatorConfig,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if cfg.base_channels == 0 {
            return Err(Error::Config("discriminator width must be positive".into()));
        }
        let b = cfg.base_channels;
        let plan: [(usize, usize); 4] = [(6, b), (b, 2 * b), (2 * b, 4 * b), (4 * b, 8 * b)];
        let mut convs = Vec::with_capacity(plan.len());
        for (i, &(cin, cout)) in plan.iter().enumerate() {
            convs.push(Conv2d::build(
                store,
                &format!("{prefix}.conv.{i}"),
                cin,
                cout,
                3,
                2,
                PadMode::Reflect,
                rng,
            )?);
        }
        let head = Conv2d::build(store, &format!("{prefix}.head"), 8 * b, 1, 1, 1, PadMode::None, rng)?;
        Ok(Self { convs, head })
    }

    /// Scores the 6-channel concatenation of condition and candidate.
    pub fn score(&self, condition: &Tensor, candidate: &Tensor) -> Result<Tensor> {
        if condition.dims() != candidate.dims() {
            return Err(Error::ShapeMismatch(format!(
                "discriminator condition {:?} vs candidate {:?}",
                condition.dims(),
                candidate.dims()
            )));
        }
        let mut x = Tensor::cat(&[condition, candidate], 1)?;
        for conv in &self.convs {
            x = leaky_relu(&conv.forward(&x)?, 0.2)?;
        }
        Ok(sigmoid(&self.head.forward(&x)?)?)
    }
}

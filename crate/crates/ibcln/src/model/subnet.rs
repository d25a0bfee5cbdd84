//! One prediction sub-network: an 11-block convolutional encoder, a ConvLSTM
//! unit carrying state across cascade steps, and an 8-layer decoder with two
//! skip connections and optional multi-scale output heads.

use candle_core::Tensor;
use candle_nn::ops::sigmoid;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::params::{Conv2d, PadMode, ParamStore};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(default, deny_unknown_fields)]
pub struct SubnetConfig {
    /// Number of encoder conv+ReLU blocks. The cascade topology is built for
    /// exactly 11.
    pub encoder_blocks: usize,
    /// Number of decoder conv layers. The topology is built for exactly 8.
    pub decoder_layers: usize,
    /// Width of the first encoder stage; later stages use 2x and 4x this.
    pub base_channels: usize,
    /// Hidden/cell width of the ConvLSTM unit.
    pub lstm_channels: usize,
    /// Number of encoder/decoder skip connections; the topology uses 2.
    pub skip_levels: usize,
    /// Emit half- and quarter-resolution transmission heads from the decoder.
    pub multiscale_heads: bool,
}

impl Default for SubnetConfig {
    fn default() -> Self {
        Self {
            encoder_blocks: 11,
            decoder_layers: 8,
            base_channels: 64,
            lstm_channels: 256,
            skip_levels: 2,
            multiscale_heads: true,
        }
    }
}

impl SubnetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.encoder_blocks != 11 || self.decoder_layers != 8 || self.skip_levels != 2 {
            return Err(Error::Config(format!(
                "unsupported sub-network topology ({} encoder blocks, {} decoder layers, {} skips); \
                 this build supports 11/8/2",
                self.encoder_blocks, self.decoder_layers, self.skip_levels
            )));
        }
        if self.base_channels == 0 || self.lstm_channels == 0 {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        Ok(())
    }
}

/// LSTM hidden and cell feature maps threaded across cascade steps.
#[derive(Clone, Debug)]
pub struct CascadeState {
    pub hidden: Tensor,
    pub cell: Tensor,
}

/// A convolutional LSTM unit: input, forget and output gates plus the cell
/// candidate, all computed by one convolution over [x, hidden].
struct ConvLstmCell {
    gates: Conv2d,
    hidden_channels: usize,
}

impl ConvLstmCell {
    fn build(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        hidden_channels: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let gates = Conv2d::build(
            store,
            name,
            in_channels + hidden_channels,
            4 * hidden_channels,
            3,
            1,
            PadMode::Reflect,
            rng,
        )?;
        Ok(Self {
            gates,
            hidden_channels,
        })
    }

    fn step(&self, x: &Tensor, state: &CascadeState) -> Result<(Tensor, CascadeState)> {
        let z = self.gates.forward(&Tensor::cat(&[x, &state.hidden], 1)?)?;
        let h = self.hidden_channels;
        let input_gate = sigmoid(&z.narrow(1, 0, h)?)?;
        let forget_gate = sigmoid(&z.narrow(1, h, h)?)?;
        let output_gate = sigmoid(&z.narrow(1, 2 * h, h)?)?;
        let candidate = z.narrow(1, 3 * h, h)?.tanh()?;
        let cell = ((forget_gate * &state.cell)? + (input_gate * candidate)?)?;
        let hidden = (output_gate * cell.tanh()?)?;
        Ok((
            hidden.clone(),
            CascadeState {
                hidden,
                cell,
            },
        ))
    }
}

/// Half- and quarter-resolution transmission heads emitted at the final
/// cascade step, alongside the full-resolution prediction.
#[derive(Clone, Debug)]
pub struct MultiscaleOutputs {
    pub full: Tensor,
    pub half: Tensor,
    pub quarter: Tensor,
}

/// One sub-network step: the prediction, the updated LSTM state, and the
/// (half, quarter) head outputs when multi-scale heads are enabled.
pub type SubnetStep = (Tensor, CascadeState, Option<(Tensor, Tensor)>);

/// Number of input channels: the composite image plus the previous step's
/// transmission and residual predictions, three channels each.
pub const SUBNET_INPUT_CHANNELS: usize = 9;

pub struct Subnet {
    cfg: SubnetConfig,
    encoder: Vec<Conv2d>,
    lstm: ConvLstmCell,
    decoder: Vec<Conv2d>,
    head_half: Option<Conv2d>,
    head_quarter: Option<Conv2d>,
}

impl Subnet {
    /// Builds the sub-network under `prefix` in the store. Encoder blocks 4
    /// and 8 are strided, so skips are taken from blocks 3 (full resolution)
    /// and 7 (half resolution); the decoder mirrors with nearest-neighbor
    /// upsampling before layers 5 and 7.
    pub fn build(
        cfg: &SubnetConfig,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.base_channels;
        let enc_plan: [(usize, usize, usize); 11] = [
            (SUBNET_INPUT_CHANNELS, c, 1),
            (c, c, 1),
            (c, c, 1), // -> skip, full resolution
            (c, 2 * c, 2),
            (2 * c, 2 * c, 1),
            (2 * c, 2 * c, 1),
            (2 * c, 2 * c, 1), // -> skip, half resolution
            (2 * c, 4 * c, 2),
            (4 * c, 4 * c, 1),
            (4 * c, 4 * c, 1),
            (4 * c, 4 * c, 1),
        ];
        let mut encoder = Vec::with_capacity(enc_plan.len());
        for (i, &(cin, cout, stride)) in enc_plan.iter().enumerate() {
            encoder.push(Conv2d::build(
                store,
                &format!("{prefix}.enc.{i}"),
                cin,
                cout,
                3,
                stride,
                PadMode::Reflect,
                rng,
            )?);
        }

        let lstm = ConvLstmCell::build(
            store,
            &format!("{prefix}.lstm.gates"),
            4 * c,
            cfg.lstm_channels,
            rng,
        )?;

        let dec_plan: [(usize, usize); 8] = [
            (cfg.lstm_channels, 4 * c),
            (4 * c, 4 * c),
            (4 * c, 4 * c),
            (4 * c, 4 * c), // 5th-last layer: quarter-scale head taps here
            (4 * c + 2 * c, 2 * c),
            (2 * c, 2 * c), // 3rd-last layer: half-scale head taps here
            (2 * c + c, c),
            (c, 3),
        ];
        let mut decoder = Vec::with_capacity(dec_plan.len());
        for (i, &(cin, cout)) in dec_plan.iter().enumerate() {
            decoder.push(Conv2d::build(
                store,
                &format!("{prefix}.dec.{i}"),
                cin,
                cout,
                3,
                1,
                PadMode::Reflect,
                rng,
            )?);
        }

        let (head_half, head_quarter) = if cfg.multiscale_heads {
            (
                Some(Conv2d::build(
                    store,
                    &format!("{prefix}.head_half"),
                    2 * c,
                    3,
                    1,
                    1,
                    PadMode::None,
                    rng,
                )?),
                Some(Conv2d::build(
                    store,
                    &format!("{prefix}.head_quarter"),
                    4 * c,
                    3,
                    1,
                    1,
                    PadMode::None,
                    rng,
                )?),
            )
        } else {
            (None, None)
        };

        Ok(Self {
            cfg: cfg.clone(),
            encoder,
            lstm,
            decoder,
            head_half,
            head_quarter,
        })
    }

    pub fn config(&self) -> &SubnetConfig {
        &self.cfg
    }

    /// Zero-initialized LSTM state for a batch of H x W inputs (the state
    /// lives at quarter resolution).
    pub fn zero_state(&self, batch: usize, height: usize, width: usize) -> Result<CascadeState> {
        let hq = height.div_ceil(2).div_ceil(2);
        let wq = width.div_ceil(2).div_ceil(2);
        let shape = (batch, self.cfg.lstm_channels, hq, wq);
        // statically zero: no gradient flows into the initial state
        let device = self.encoder[0].device();
        let dtype = self.encoder[0].dtype();
        Ok(CascadeState {
            hidden: Tensor::zeros(shape, dtype, device)?,
            cell: Tensor::zeros(shape, dtype, device)?,
        })
    }

    /// One cascade step: consumes the 9-channel concatenation of the input
    /// image and the previous predictions, returns the new 3-channel
    /// prediction, the updated LSTM state, and (when heads are enabled) the
    /// half/quarter-scale outputs.
    pub fn forward(
        &self,
        input: &Tensor,
        t_prev: &Tensor,
        r_prev: &Tensor,
        state: &CascadeState,
    ) -> Result<SubnetStep> {
        let in_dims = input.dims4()?;
        if t_prev.dims4()? != in_dims || r_prev.dims4()? != in_dims {
            return Err(Error::ShapeMismatch(format!(
                "cascade step inputs disagree: input {:?}, t_prev {:?}, r_prev {:?}",
                input.dims(),
                t_prev.dims(),
                r_prev.dims()
            )));
        }
        let mut x = Tensor::cat(&[input, t_prev, r_prev], 1)?;
        debug_assert_eq!(x.dims4()?.1, SUBNET_INPUT_CHANNELS);

        let mut skip_full = None;
        let mut skip_half = None;
        for (i, conv) in self.encoder.iter().enumerate() {
            x = conv.forward(&x)?.relu()?;
            if i == 2 {
                skip_full = Some(x.clone());
            } else if i == 6 {
                skip_half = Some(x.clone());
            }
        }
        let skip_full = skip_full.expect("encoder has a block 3");
        let skip_half = skip_half.expect("encoder has a block 7");

        let (mut x, new_state) = self.lstm.step(&x, state)?;

        let mut half_feat = None;
        let mut quarter_feat = None;
        let last = self.decoder.len() - 1;
        for (i, conv) in self.decoder.iter().enumerate() {
            if i == 4 {
                let (_, _, sh, sw) = skip_half.dims4()?;
                x = x.upsample_nearest2d(sh, sw)?;
                x = Tensor::cat(&[&x, &skip_half], 1)?;
            } else if i == 6 {
                let (_, _, sh, sw) = skip_full.dims4()?;
                x = x.upsample_nearest2d(sh, sw)?;
                x = Tensor::cat(&[&x, &skip_full], 1)?;
            }
            x = conv.forward(&x)?;
            if i != last {
                x = x.relu()?;
            }
            if i == 3 {
                quarter_feat = Some(x.clone());
            } else if i == 5 {
                half_feat = Some(x.clone());
            }
        }

        let heads = match (&self.head_half, &self.head_quarter) {
            (Some(hh), Some(hq)) => Some((
                hh.forward(half_feat.as_ref().expect("decoder has a layer 6"))?,
                hq.forward(quarter_feat.as_ref().expect("decoder has a layer 4"))?,
            )),
            _ => None,
        };

        Ok((x, new_state, heads))
    }
}

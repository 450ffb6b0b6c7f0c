use super::encoder::EncoderTaps;
use super::{CellSeed, ModelConfig};
use crate::error::Result;
use crate::nn::{ConvBlock, ConvLstmCell, ConvLstmState, ParameterStore, Session};
use crate::tensor::{Scalar, Shape, Tensor, Var};

#[derive(Clone, Debug)]
pub enum DecoderStage {
    /// Skip feature is the ConvLSTM input, the upsampled decoder feature seeds
    /// its state; the emitted hidden map goes through one 3×3 block.
    Inference {
        skip: ConvBlock,
        up: ConvBlock,
        cell: ConvLstmCell,
        out: ConvBlock,
    },
    /// `concat(skip, up)` followed by two 3×3 blocks.
    Concat { convs: [ConvBlock; 2] },
}

#[derive(Clone, Debug)]
pub struct Decoder {
    /// Indexed by encoder level.
    pub stages: Vec<DecoderStage>,
    pub cell_seed: CellSeed,
}

impl Decoder {
    /// `skip_widths[l]` is the channel count of `a_l`; `c_in` that of the bottleneck output.
    pub fn new<T: Scalar>(
        store: &mut ParameterStore<T>,
        cfg: &ModelConfig,
        skip_widths: &[usize],
        c_in: usize,
    ) -> Result<Self> {
        let mut stages = Vec::with_capacity(cfg.levels);
        for l in 0..cfg.levels {
            let h = cfg.width(l);
            let up_c = if l + 1 == cfg.levels { c_in } else { cfg.width(l + 1) };
            let name = format!("dec.l{l}");
            let stage = if cfg.use_inference {
                DecoderStage::Inference {
                    skip: ConvBlock::pointwise(store, &format!("{name}.skip"), skip_widths[l], h, 1)?,
                    up: ConvBlock::pointwise(store, &format!("{name}.up"), up_c, h, 1)?,
                    cell: ConvLstmCell::new(store, &format!("{name}.lstm"), h, h)?,
                    out: ConvBlock::same3x3(store, &format!("{name}.out"), h, h)?,
                }
            } else {
                DecoderStage::Concat {
                    convs: [
                        ConvBlock::same3x3(store, &format!("{name}.conv0"), skip_widths[l] + up_c, h)?,
                        ConvBlock::same3x3(store, &format!("{name}.conv1"), h, h)?,
                    ],
                }
            };
            stages.push(stage);
        }
        Ok(Self {
            stages,
            cell_seed: cfg.cell_seed,
        })
    }

    pub fn c_out(&self) -> usize {
        match &self.stages[0] {
            DecoderStage::Inference { out, .. } => out.c_out(),
            DecoderStage::Concat { convs } => convs[1].c_out(),
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, bottleneck_out: Var, taps: &EncoderTaps) -> Result<Var> {
        let mut d = bottleneck_out;
        for (l, stage) in self.stages.iter().enumerate().rev() {
            let up = s.tape.upsample_bilinear(d, 2)?;
            let skip = taps.aggregated[l];
            d = match stage {
                DecoderStage::Inference { skip: sa, up: ua, cell, out } => {
                    let x = sa.forward(s, skip)?;
                    let h = ua.forward(s, up)?;
                    let c = match self.cell_seed {
                        CellSeed::Hidden => h,
                        CellSeed::Zeros => {
                            let shape: Shape = s.shape(h);
                            s.input(Tensor::zeros(shape))
                        }
                    };
                    let (h_next, _) = cell.step(s, x, ConvLstmState { h, c })?;
                    out.forward(s, h_next)?
                }
                DecoderStage::Concat { convs } => {
                    let mut y = s.tape.concat_channels(&[skip, up])?;
                    for conv in convs {
                        y = conv.forward(s, y)?;
                    }
                    y
                }
            };
            s.trace(format!("decoder.d{l}"), d);
        }
        Ok(d)
    }
}

/// Decodes from the bottleneck output back to full resolution.
pub fn decode_with_inference<T: Scalar>(
    s: &mut Session<'_, T>,
    decoder: &Decoder,
    bottleneck_out: Var,
    taps: &EncoderTaps,
) -> Result<Var> {
    decoder.forward(s, bottleneck_out, taps)
}

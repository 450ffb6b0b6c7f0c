use super::encoder::{adapters, clf_aggregate, EncoderTaps};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{AsppBranch, ConvBlock, ParameterStore, Session};
use crate::tensor::{Scalar, Var};

/// Atrous pyramid over the bottleneck, extended with one branch per encoder
/// level when cross-level fusion is on.
#[derive(Clone, Debug)]
pub struct ExtendedAspp {
    pub branches: Vec<AsppBranch>,
    /// `f_j` → bottleneck scale, `B` channels.
    pub level_taps: Vec<ConvBlock>,
    pub fuse: ConvBlock,
}

impl ExtendedAspp {
    pub fn new<T: Scalar>(store: &mut ParameterStore<T>, cfg: &ModelConfig, c_in: usize) -> Result<Self> {
        let b = cfg.branch_channels();
        let mut branches = Vec::with_capacity(cfg.aspp_rates.len() + 1);
        for &rate in &cfg.aspp_rates {
            branches.push(AsppBranch::atrous(store, &format!("aspp.rate{rate}"), c_in, b, rate)?);
        }
        if cfg.aspp_image_pool {
            branches.push(AsppBranch::image_pool(store, "aspp.pool", c_in, b)?);
        }
        let level_taps = if cfg.use_clf {
            adapters(store, "aspp", cfg, cfg.levels, |_| b)?
        } else {
            Vec::new()
        };
        let n = branches.len() + level_taps.len();
        let fuse = ConvBlock::pointwise(store, "aspp.fuse", n * b, b, 1)?;
        Ok(Self {
            branches,
            level_taps,
            fuse,
        })
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len() + self.level_taps.len()
    }

    pub fn c_out(&self) -> usize {
        self.fuse.c_out()
    }

    /// Concatenates every branch (traced as `aspp.prefusion`) and fuses with a 1×1 block.
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, taps: &EncoderTaps) -> Result<Var> {
        let x = taps.bottleneck;
        let target = s.shape(x);
        let mut parts = Vec::with_capacity(self.branch_count());
        for b in &self.branches {
            parts.push(b.forward(s, x)?);
        }
        for (j, adapter) in self.level_taps.iter().enumerate() {
            let y = adapter.forward(s, taps.features[j])?;
            let got = s.shape(y);
            if (got.h, got.w) != (target.h, target.w) {
                return Err(Error::ResolutionMismatch(format!(
                    "pyramid tap {j} adapted to {got}, bottleneck is {target}"
                )));
            }
            parts.push(y);
        }
        let cat = s.tape.concat_channels(&parts)?;
        s.trace("aspp.prefusion", cat);
        self.fuse.forward(s, cat)
    }
}

/// What sits between the encoder and the decoder.
#[derive(Clone, Debug)]
pub enum Bottleneck {
    Pyramid(ExtendedAspp),
    /// One 3×3 block; with cross-level fusion its input also carries the
    /// adapted encoder taps, as every other downsampling output does.
    Plain { clf: Vec<ConvBlock>, block: ConvBlock },
}

impl Bottleneck {
    pub fn new<T: Scalar>(store: &mut ParameterStore<T>, cfg: &ModelConfig, c_in: usize) -> Result<Self> {
        if cfg.use_aspp {
            return Ok(Bottleneck::Pyramid(ExtendedAspp::new(store, cfg, c_in)?));
        }
        let clf = if cfg.use_clf {
            adapters(store, "bottleneck", cfg, cfg.levels, |j| cfg.width(j))?
        } else {
            Vec::new()
        };
        let width = c_in + clf.iter().map(ConvBlock::c_out).sum::<usize>();
        let block = ConvBlock::same3x3(store, "bottleneck.conv", width, cfg.branch_channels())?;
        Ok(Bottleneck::Plain { clf, block })
    }

    pub fn c_out(&self) -> usize {
        match self {
            Bottleneck::Pyramid(p) => p.c_out(),
            Bottleneck::Plain { block, .. } => block.c_out(),
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, taps: &EncoderTaps) -> Result<Var> {
        let y = match self {
            Bottleneck::Pyramid(p) => p.forward(s, taps)?,
            Bottleneck::Plain { clf, block } => {
                let x = clf_aggregate(s, &taps.features, taps.bottleneck, clf.len(), clf)?;
                block.forward(s, x)?
            }
        };
        s.trace("bottleneck.out", y);
        Ok(y)
    }
}

/// Runs `aspp` on already-computed encoder taps.
pub fn extended_aspp<T: Scalar>(s: &mut Session<'_, T>, aspp: &ExtendedAspp, taps: &EncoderTaps) -> Result<Var> {
    aspp.forward(s, taps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Encoder;
    use crate::nn::Mode;
    use crate::tensor::{Shape, Tensor};

    fn cfg(clf: bool) -> ModelConfig {
        ModelConfig {
            width_multiplier: 0.125,
            use_clf: clf,
            input_size: (64, 48),
            ..ModelConfig::default()
        }
    }

    #[test]
    fn prefusion_channels_follow_branch_count() {
        for clf in [true, false] {
            let c = cfg(clf);
            let mut store = ParameterStore::<f32>::new();
            let enc = Encoder::new(&mut store, &c).unwrap();
            let aspp = ExtendedAspp::new(&mut store, &c, enc.bottleneck_width()).unwrap();
            assert_eq!(aspp.branch_count(), if clf { 9 } else { 5 });
            let mut s = Session::new(&mut store, Mode::Train);
            let x = s.input(Tensor::full(Shape::new(1, 1, 64, 48), 0.3));
            let taps = enc.forward(&mut s, x).unwrap();
            let y = extended_aspp(&mut s, &aspp, &taps).unwrap();
            let pre = s.traced("aspp.prefusion").unwrap();
            assert_eq!(pre, Shape::new(1, (5 + 4 * clf as usize) * c.branch_channels(), 4, 3));
            assert_eq!(s.shape(y), Shape::new(1, c.branch_channels(), 4, 3));
        }
    }

    #[test]
    fn level_tap_strides_reach_bottleneck() {
        let c = cfg(true);
        let mut store = ParameterStore::<f32>::new();
        let aspp = ExtendedAspp::new(&mut store, &c, 8).unwrap();
        let strides: Vec<usize> = aspp.level_taps.iter().map(|a| a.conv.opts.stride.0).collect();
        assert_eq!(strides, vec![16, 8, 4, 2]);
    }
}

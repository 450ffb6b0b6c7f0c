use super::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Activation, ConvBlock, ParameterStore, Session};
use crate::tensor::{Conv2dOptions, Scalar, Var};

/// Encoder outputs kept for the pyramid and the decoder.
#[derive(Clone, Debug)]
pub struct EncoderTaps {
    /// `f_l`: level `l` features before its downsample, at `1/2^l` scale.
    pub features: Vec<Var>,
    /// `a_l`: `f_l` concatenated with stride-adapted earlier taps (equal to
    /// `f_l` without cross-level fusion). This is what gets downsampled and
    /// what the decoder uses as its skip input.
    pub aggregated: Vec<Var>,
    /// Downsampled `a_{L-1}` at `1/2^L` scale.
    pub bottleneck: Var,
}

impl EncoderTaps {
    pub fn scale(level: usize) -> f64 {
        1.0 / (1u64 << level) as f64
    }
}

/// `f_j` (width `w_j`, scale `1/2^j`) → `1/2^target` with a strided 1×1 block.
pub(crate) fn adapters<T: Scalar>(
    store: &mut ParameterStore<T>,
    prefix: &str,
    cfg: &ModelConfig,
    target: usize,
    out_width: impl Fn(usize) -> usize,
) -> Result<Vec<ConvBlock>> {
    (0..target)
        .map(|j| ConvBlock::pointwise(store, &format!("{prefix}.clf{j}"), cfg.width(j), out_width(j), 1 << (target - j)))
        .collect()
}

/// Concatenates `own` with every earlier tap passed through its adapter.
///
/// `adapters[j]` maps `features[j]` to the resolution of `own`. With no
/// adapters (cross-level fusion off) `own` is returned unchanged.
pub fn clf_aggregate<T: Scalar>(
    s: &mut Session<'_, T>,
    features: &[Var],
    own: Var,
    target_level: usize,
    adapters: &[ConvBlock],
) -> Result<Var> {
    if adapters.is_empty() {
        return Ok(own);
    }
    if adapters.len() != target_level || features.len() < target_level {
        return Err(Error::ResolutionMismatch(format!(
            "level {target_level}: {} adapters for {} available taps",
            adapters.len(),
            features.len()
        )));
    }
    let target = s.shape(own);
    let mut parts = vec![own];
    for (j, adapter) in adapters.iter().enumerate() {
        let y = adapter.forward(s, features[j])?;
        let got = s.shape(y);
        if (got.n, got.h, got.w) != (target.n, target.h, target.w) {
            return Err(Error::ResolutionMismatch(format!(
                "tap {j} adapted to {got}, level {target_level} is {target}"
            )));
        }
        parts.push(y);
    }
    s.tape.concat_channels(&parts)
}

#[derive(Clone, Debug)]
struct Stage {
    down: Option<ConvBlock>,
    convs: [ConvBlock; 2],
    clf: Vec<ConvBlock>,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    stages: Vec<Stage>,
    bottleneck_down: ConvBlock,
    aggregated_widths: Vec<usize>,
}

impl Encoder {
    pub fn new<T: Scalar>(store: &mut ParameterStore<T>, cfg: &ModelConfig) -> Result<Self> {
        let down_opts = Conv2dOptions::new(2, 1, 1);
        let mut stages = Vec::with_capacity(cfg.levels);
        let mut aggregated_widths = Vec::with_capacity(cfg.levels);
        let mut c_in = 1;
        for l in 0..cfg.levels {
            let w = cfg.width(l);
            let name = format!("enc.l{l}");
            let down = if l == 0 {
                None
            } else {
                let d = ConvBlock::new(store, &format!("{name}.down"), c_in, w, 3, down_opts, Activation::Relu)?;
                c_in = w;
                Some(d)
            };
            let convs = [
                ConvBlock::same3x3(store, &format!("{name}.conv0"), c_in, w)?,
                ConvBlock::same3x3(store, &format!("{name}.conv1"), w, w)?,
            ];
            let clf = if cfg.use_clf {
                adapters(store, &name, cfg, l, |j| cfg.width(j))?
            } else {
                Vec::new()
            };
            let agg = w + clf.iter().map(ConvBlock::c_out).sum::<usize>();
            aggregated_widths.push(agg);
            stages.push(Stage { down, convs, clf });
            c_in = agg;
        }
        let bottleneck_down = ConvBlock::new(
            store,
            "enc.bottleneck.down",
            c_in,
            cfg.width(cfg.levels),
            3,
            down_opts,
            Activation::Relu,
        )?;
        Ok(Self {
            stages,
            bottleneck_down,
            aggregated_widths,
        })
    }

    /// Channels of `a_l`.
    pub fn aggregated_width(&self, level: usize) -> usize {
        self.aggregated_widths[level]
    }

    pub fn bottleneck_width(&self) -> usize {
        self.bottleneck_down.c_out()
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, image: Var) -> Result<EncoderTaps> {
        let mut features = Vec::with_capacity(self.stages.len());
        let mut aggregated = Vec::with_capacity(self.stages.len());
        let mut x = image;
        for (l, stage) in self.stages.iter().enumerate() {
            if let Some(down) = &stage.down {
                x = down.forward(s, x)?;
            }
            for conv in &stage.convs {
                x = conv.forward(s, x)?;
            }
            s.trace(format!("encoder.f{l}"), x);
            features.push(x);
            x = clf_aggregate(s, &features, x, l, &stage.clf)?;
            s.trace(format!("encoder.a{l}"), x);
            aggregated.push(x);
        }
        let bottleneck = self.bottleneck_down.forward(s, x)?;
        s.trace("encoder.bottleneck", bottleneck);
        Ok(EncoderTaps {
            features,
            aggregated,
            bottleneck,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mode;
    use crate::tensor::{Shape, Tensor};

    fn small() -> ModelConfig {
        ModelConfig {
            width_multiplier: 0.125,
            input_size: (32, 32),
            ..ModelConfig::default()
        }
    }

    #[test]
    fn taps_halve_per_level() {
        let cfg = small();
        let mut store = ParameterStore::<f32>::new();
        let enc = Encoder::new(&mut store, &cfg).unwrap();
        let mut s = Session::new(&mut store, Mode::Train);
        let x = s.input(Tensor::full(Shape::new(1, 1, 32, 48), 0.5));
        let taps = enc.forward(&mut s, x).unwrap();
        for (l, &f) in taps.features.iter().enumerate() {
            let sh = s.shape(f);
            assert_eq!((sh.h, sh.w), (32 >> l, 48 >> l));
            assert_eq!(sh.c, cfg.width(l));
            assert_eq!(s.shape(taps.aggregated[l]).c, enc.aggregated_width(l));
        }
        assert_eq!(s.shape(taps.bottleneck), Shape::new(1, cfg.width(4), 2, 3));
        assert_eq!(EncoderTaps::scale(3), 0.125);
    }

    #[test]
    fn clf_channel_accounting() {
        // level 3 concatenates its own width with adapted copies of levels 0, 1, 2
        let cfg = small();
        let mut store = ParameterStore::<f32>::new();
        let enc = Encoder::new(&mut store, &cfg).unwrap();
        let own: usize = cfg.width(3);
        let adapted: usize = (0..3).map(|j| cfg.width(j)).sum();
        assert_eq!(enc.aggregated_width(3), own + adapted);
        assert_eq!(enc.aggregated_width(0), cfg.width(0));
        let strides: Vec<_> = (0..3)
            .map(|j| store.by_name(&format!("enc.l3.clf{j}.conv.kernel")).unwrap().tensor.shape())
            .collect();
        assert!(strides.iter().all(|k| (k.h, k.w) == (1, 1)));
        assert_eq!(enc.stages[3].clf.iter().map(|a| a.conv.opts.stride.0).collect::<Vec<_>>(), vec![8, 4, 2]);
        assert_eq!(enc.stages[1].clf[0].conv.opts.stride, (2, 2));
    }

    #[test]
    fn without_clf_taps_pass_through() {
        let cfg = ModelConfig {
            use_clf: false,
            ..small()
        };
        let mut store = ParameterStore::<f32>::new();
        let enc = Encoder::new(&mut store, &cfg).unwrap();
        assert!(store.iter().all(|(_, p)| !p.name.contains("clf")));
        let mut s = Session::new(&mut store, Mode::Train);
        let x = s.input(Tensor::full(Shape::new(1, 1, 32, 32), 0.5));
        let taps = enc.forward(&mut s, x).unwrap();
        assert_eq!(taps.features, taps.aggregated);
    }

    #[test]
    fn mismatched_adapter_is_reported() {
        let cfg = small();
        let mut store = ParameterStore::<f32>::new();
        // stride 2 adapter where level 2 needs stride 4
        let bad = vec![
            ConvBlock::pointwise(&mut store, "bad0", cfg.width(0), 2, 2).unwrap(),
            ConvBlock::pointwise(&mut store, "bad1", cfg.width(1), 2, 2).unwrap(),
        ];
        let mut s = Session::new(&mut store, Mode::Train);
        let f0 = s.input(Tensor::zeros(Shape::new(1, cfg.width(0), 16, 16)));
        let f1 = s.input(Tensor::zeros(Shape::new(1, cfg.width(1), 8, 8)));
        let own = s.input(Tensor::zeros(Shape::new(1, cfg.width(2), 4, 4)));
        let r = clf_aggregate(&mut s, &[f0, f1], own, 2, &bad);
        assert!(matches!(r, Err(Error::ResolutionMismatch(_))));
    }
}

//! CLCI-Net: cross-level fusion encoder, extended atrous pyramid and ConvLSTM
//! decoder, with the three ablation switches.

mod checkpoint;
mod config;
mod decoder;
mod encoder;
mod pyramid;

pub use checkpoint::{load_checkpoint, save_checkpoint, MANIFEST};
pub use config::{CellSeed, ModelConfig, Toggles};
pub use decoder::{decode_with_inference, Decoder, DecoderStage};
pub use encoder::{clf_aggregate, Encoder, EncoderTaps};
pub use pyramid::{extended_aspp, Bottleneck, ExtendedAspp};

use crate::error::{Error, Result};
use crate::nn::{Conv2d, Mode, ParamRole, ParameterStore, Session};
use crate::tensor::{Conv2dOptions, Scalar, Tensor, Var};

/// Layer structure; the weights live in a [`ParameterStore`].
#[derive(Clone, Debug)]
pub struct ClciNet {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub bottleneck: Bottleneck,
    pub decoder: Decoder,
    pub head: Conv2d,
}

impl ClciNet {
    pub fn new<T: Scalar>(store: &mut ParameterStore<T>, config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let encoder = Encoder::new(store, &config)?;
        let bottleneck = Bottleneck::new(store, &config, encoder.bottleneck_width())?;
        let skips: Vec<usize> = (0..config.levels).map(|l| encoder.aggregated_width(l)).collect();
        let decoder = Decoder::new(store, &config, &skips, bottleneck.c_out())?;
        let head = Conv2d::new(
            store,
            "head",
            decoder.c_out(),
            1,
            1,
            Conv2dOptions::default(),
            true,
            ParamRole::Bias,
        )?;
        Ok(Self {
            config,
            encoder,
            bottleneck,
            decoder,
            head,
        })
    }

    /// Probability map of shape `(n, 1, h, w)` for an `(n, 1, h, w)` image batch.
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, image: Var) -> Result<Var> {
        let shape = s.shape(image);
        if shape.c != 1 {
            return Err(Error::ChannelMismatch {
                op: "clci_forward",
                expected: 1,
                actual: shape.c,
            });
        }
        self.config.check_input(shape.h, shape.w)?;
        let taps = self.encoder.forward(s, image)?;
        let b = self.bottleneck.forward(s, &taps)?;
        let d = self.decoder.forward(s, b, &taps)?;
        let logits = self.head.forward(s, d)?;
        let p = s.tape.sigmoid(logits);
        s.trace("output", p);
        Ok(p)
    }
}

pub fn clci_forward<T: Scalar>(net: &ClciNet, s: &mut Session<'_, T>, image: Var) -> Result<Var> {
    net.forward(s, image)
}

/// A network together with its weights.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar = f32> {
    pub net: ClciNet,
    pub store: ParameterStore<T>,
}

impl<T: Scalar> Model<T> {
    /// Kernels start at zero; see `train::gaussian_init`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let mut store = ParameterStore::new();
        let net = ClciNet::new(&mut store, config)?;
        Ok(Self { net, store })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.store.trainable().map(|(_, p)| p.tensor.numel()).sum()
    }

    pub fn session(&mut self, mode: Mode) -> Session<'_, T> {
        Session::new(&mut self.store, mode)
    }

    /// Forward pass without keeping the tape. Train mode still updates the
    /// batch-norm running statistics.
    pub fn predict(&mut self, images: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let net = &self.net;
        let mut s = Session::new(&mut self.store, mode);
        let x = s.input(images.clone());
        let y = net.forward(&mut s, x)?;
        Ok(s.value(y).clone())
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            net: self.net.clone(),
            store: self.store.cast(),
        }
    }
}

/// Model for one ablation row on top of `base`.
pub fn instantiate_ablation<T: Scalar>(base: &ModelConfig, row: Toggles) -> Result<Model<T>> {
    Model::new(base.clone().with_toggles(row))
}

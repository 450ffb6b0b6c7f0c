use super::{Activation, ConvBlock, ParameterStore, Session};
use crate::error::{Error, Result};
use crate::tensor::{Conv2dOptions, Scalar, Var};

/// One parallel branch of an atrous spatial pyramid.
#[derive(Clone, Debug)]
pub enum AsppBranch {
    /// Dilated convolution padded to keep the spatial size; rate 1 is a 1×1 conv.
    Atrous { block: ConvBlock, dilation: usize },
    /// Global average pool → 1×1 conv → resize back to the input size.
    ImagePool { block: ConvBlock },
}

/// Zero padding that preserves the spatial size of a dilated odd kernel.
pub fn atrous_options(kernel: usize, dilation: usize) -> Result<Conv2dOptions> {
    if kernel.is_multiple_of(2) {
        return Err(Error::EvenKernel(kernel, kernel));
    }
    Ok(Conv2dOptions::same(kernel, dilation))
}

impl AsppBranch {
    pub fn atrous<T: Scalar>(
        store: &mut ParameterStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        dilation: usize,
    ) -> Result<Self> {
        let kernel = if dilation == 1 { 1 } else { 3 };
        let block = ConvBlock::new(store, name, c_in, c_out, kernel, atrous_options(kernel, dilation)?, Activation::Relu)?;
        Ok(Self::Atrous { block, dilation })
    }

    /// The pooled map has one value per channel and sample, so its convolution
    /// is biased and unnormalized.
    pub fn image_pool<T: Scalar>(store: &mut ParameterStore<T>, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        let block = ConvBlock::without_norm(store, name, c_in, c_out, 1, Conv2dOptions::default(), Activation::Relu)?;
        Ok(Self::ImagePool { block })
    }

    pub fn c_out(&self) -> usize {
        match self {
            AsppBranch::Atrous { block, .. } | AsppBranch::ImagePool { block } => block.c_out(),
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        match self {
            AsppBranch::Atrous { block, .. } => block.forward(s, x),
            AsppBranch::ImagePool { block } => {
                let shape = s.shape(x);
                let pooled = s.tape.global_avg_pool(x);
                let y = block.forward(s, pooled)?;
                s.tape.resize_bilinear(y, shape.h, shape.w)
            }
        }
    }
}

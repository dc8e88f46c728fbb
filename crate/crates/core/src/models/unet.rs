use candle_core::Tensor;
use candle_nn::ops::softmax;

use super::layers::{check_tap, tap_point, Conv, Tap};
use super::{ModelConfig, ModelOutput};
use crate::error::{Error, Result};
use crate::substrate::{Initializer, ParamStore};

const DEPTH: usize = 4;

struct DoubleConv {
    a: Conv,
    b: Conv,
}

impl DoubleConv {
    fn new(store: &mut ParamStore, init: &mut Initializer, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        Ok(Self {
            a: Conv::new(store, init, &format!("{name}.conv1"), (c_in, c_out), 3, 1, true)?,
            b: Conv::new(store, init, &format!("{name}.conv2"), (c_out, c_out), 3, 1, true)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = self.a.forward(x)?.relu()?;
        Ok(self.b.forward(&x)?.relu()?)
    }
}

/// Encoder-decoder with skip connections and four 2x downsampling stages.
///
/// The 2x2 stride-2 up-convolution is computed as a 1x1 convolution to four
/// times the channels followed by a pixel shuffle, which is the same linear map.
pub struct UNet {
    encoders: Vec<DoubleConv>,
    bottleneck: DoubleConv,
    ups: Vec<Conv>,
    decoders: Vec<DoubleConv>,
    head: Conv,
    up_channels: Vec<usize>,
}

impl UNet {
    pub(crate) fn new(cfg: &ModelConfig, store: &mut ParamStore, init: &mut Initializer) -> Result<Self> {
        let b = cfg.unet_base_channels;
        let widths: Vec<usize> = (0..=DEPTH).map(|i| b << i).collect();
        let mut encoders = Vec::new();
        let mut c_in = cfg.in_channels;
        for (i, &w) in widths[..DEPTH].iter().enumerate() {
            encoders.push(DoubleConv::new(store, init, &format!("enc.{i}"), c_in, w)?);
            c_in = w;
        }
        let bottleneck = DoubleConv::new(store, init, "bottleneck", c_in, widths[DEPTH])?;
        let mut ups = Vec::new();
        let mut decoders = Vec::new();
        let mut up_channels = Vec::new();
        for i in 0..DEPTH {
            let (deep, shallow) = (widths[DEPTH - i], widths[DEPTH - i - 1]);
            ups.push(Conv::new(store, init, &format!("up.{i}"), (deep, 4 * shallow), 1, 1, true)?);
            decoders.push(DoubleConv::new(store, init, &format!("dec.{i}"), 2 * shallow, shallow)?);
            up_channels.push(shallow);
        }
        let head = Conv::new(store, init, "head", (b, cfg.num_classes), 1, 1, true)?;
        Ok(Self {
            encoders,
            bottleneck,
            ups,
            decoders,
            head,
            up_channels,
        })
    }

    pub fn layer_names() -> Vec<String> {
        let mut names: Vec<String> = (0..DEPTH).map(|i| format!("enc.{i}")).collect();
        names.push("bottleneck".into());
        names.extend((0..DEPTH).map(|i| format!("dec.{i}")));
        names
    }

    pub fn forward(&self, x: &Tensor, mut tap: Option<&mut Tap>) -> Result<ModelOutput> {
        check_tap(&tap, &Self::layer_names())?;
        let (_, _, h, w) = x.dims4()?;
        let factor = 1 << DEPTH;
        if h % factor != 0 || w % factor != 0 {
            return Err(Error::Precondition(format!(
                "U-Net input {h}x{w} must be divisible by {factor}"
            )));
        }
        let mut skips = Vec::with_capacity(DEPTH);
        let mut y = x.clone();
        for (i, enc) in self.encoders.iter().enumerate() {
            y = tap_point(&format!("enc.{i}"), enc.forward(&y)?, &mut tap)?;
            skips.push(y.clone());
            y = y.max_pool2d(2)?;
        }
        y = tap_point("bottleneck", self.bottleneck.forward(&y)?, &mut tap)?;
        for (i, ((up, dec), &c)) in self.ups.iter().zip(&self.decoders).zip(&self.up_channels).enumerate() {
            let (n, _, hh, ww) = y.dims4()?;
            let shuffled = up
                .forward(&y)?
                .reshape((n, c, 2, 2, hh, ww))?
                .permute((0, 1, 4, 2, 5, 3))?
                .reshape((n, c, 2 * hh, 2 * ww))?;
            let skip = skips.pop().unwrap();
            let cat = Tensor::cat(&[&shuffled, &skip], 1)?;
            y = tap_point(&format!("dec.{i}"), dec.forward(&cat)?, &mut tap)?;
        }
        let logits = self.head.forward(&y)?;
        let probabilities = softmax(&logits, 1)?;
        Ok(ModelOutput {
            logits,
            probabilities,
            latent: None,
        })
    }
}

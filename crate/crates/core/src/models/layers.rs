use candle_core::{Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::substrate::{Initializer, ParamStore};

/// 2-D convolution with square kernel and optional bias.
#[derive(Debug, Clone)]
pub(crate) struct Conv {
    pub weight: Var,
    pub bias: Option<Var>,
    stride: usize,
    padding: usize,
}

impl Conv {
    /// He-uniform weights (`bound = sqrt(6 / fan_in)`), zero bias.
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        (c_in, c_out): (usize, usize),
        kernel: usize,
        stride: usize,
        bias: bool,
    ) -> Result<Self> {
        let fan_in = (c_in * kernel * kernel) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let weight = store.get_or_init(&format!("{name}.weight"), &[c_out, c_in, kernel, kernel], |n| {
            init.uniform(n, bound)
        })?;
        let bias = if bias {
            Some(store.get_or_init(&format!("{name}.bias"), &[c_out], |n| vec![0.0; n])?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding: kernel / 2,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(self.weight.as_tensor(), self.padding, self.stride, 1, 1)?;
        match &self.bias {
            Some(b) => {
                let c = b.dims()[0];
                Ok(y.broadcast_add(&b.as_tensor().reshape((1, c, 1, 1))?)?)
            }
            None => Ok(y),
        }
    }
}

/// Whether dropout is active. Training dropout is driven by an explicit seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

/// Spatial dropout: zeroes whole channels, rescaling survivors by `1 / (1 - p)`.
pub(crate) fn spatial_dropout(x: &Tensor, p: f64, mode: Mode, layer: u64) -> Result<Tensor> {
    let Mode::Train { seed } = mode else {
        return Ok(x.clone());
    };
    if p <= 0.0 {
        return Ok(x.clone());
    }
    let (n, c, _, _) = x.dims4()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(layer);
    let scale = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..n * c)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { scale })
        .collect();
    let mask = Tensor::from_vec(mask, (n, c, 1, 1), x.device())?.to_dtype(x.dtype())?;
    Ok(x.broadcast_mul(&mask)?)
}

/// Intercepts one named activation during a forward pass.
///
/// The activation is replaced by a detached leaf with the same value, so the
/// gradient of any downstream quantity with respect to it can be read back.
#[derive(Debug, Clone)]
pub struct Tap {
    layer: String,
    leaf: Option<Var>,
}

impl Tap {
    pub fn new(layer: impl Into<String>) -> Self {
        Self {
            layer: layer.into(),
            leaf: None,
        }
    }

    pub fn layer(&self) -> &str {
        &self.layer
    }

    /// Captured activation, once the forward pass has reached the layer.
    pub fn activation(&self) -> Option<&Tensor> {
        self.leaf.as_ref().map(Var::as_tensor)
    }

    /// The leaf that stands in for the activation; its gradient is the
    /// gradient with respect to the activation.
    pub fn leaf(&self) -> Option<&Var> {
        self.leaf.as_ref()
    }
}

pub(crate) fn tap_point(name: &str, t: Tensor, tap: &mut Option<&mut Tap>) -> Result<Tensor> {
    match tap {
        Some(tap) if tap.layer == name => {
            let leaf = Var::from_tensor(&t.detach())?;
            let out = leaf.as_tensor().clone();
            tap.leaf = Some(leaf);
            Ok(out)
        }
        _ => Ok(t),
    }
}

pub(crate) fn check_tap(tap: &Option<&mut Tap>, layers: &[String]) -> Result<()> {
    if let Some(t) = tap {
        if !layers.iter().any(|l| l == &t.layer) {
            return Err(Error::Precondition(format!(
                "unknown layer `{}`; available layers: {}",
                t.layer,
                layers.join(", ")
            )));
        }
    }
    Ok(())
}

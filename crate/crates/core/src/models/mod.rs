//! Segmentation networks: the U-Net baseline and the prototype network in
//! its projection and projection-free configurations.

mod checkpoint;
mod ensemble;
mod layers;
mod ramanseg;
pub mod similarity;
mod unet;
pub mod upsample;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CheckpointInfo};
pub use ensemble::{ensemble_predict, mean_probabilities};
pub use layers::{Mode, Tap};
pub use ramanseg::{RamanSeg, HEAD_PARAM, PROTOTYPE_PARAM};
pub use similarity::compute_similarity;
pub use unet::UNet;
pub use upsample::{bilinear_upsample, bilinear_upsample_tensor};

use crate::error::{Error, Result};
use crate::substrate::{Initializer, ParamStore, Precision};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Unet,
    Ramanseg,
    RamansegProjectionFree,
}

impl Variant {
    pub fn is_prototype(self) -> bool {
        !matches!(self, Variant::Unet)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unet" => Ok(Variant::Unet),
            "ramanseg" => Ok(Variant::Ramanseg),
            "ramanseg-pf" | "ramanseg_projection_free" => Ok(Variant::RamansegProjectionFree),
            other => Err(Error::Config(format!(
                "unknown model `{other}` (expected unet, ramanseg or ramanseg-pf)"
            ))),
        }
    }
}

/// Where the add-on convolutions sit relative to the prototype layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AddonPosition {
    /// Between the encoder and the prototypes.
    Pre,
    /// On the similarity map.
    Post,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub in_channels: usize,
    pub num_classes: usize,
    pub prototypes_per_class: usize,
    pub prototype_depth: usize,
    pub prototype_spatial: (usize, usize),
    pub addon_channels: usize,
    pub addon_layers: usize,
    pub addon_position: AddonPosition,
    pub dropout_p: f64,
    pub downsample_factor: usize,
    pub similarity_epsilon: f64,
    pub backbone_channels: usize,
    pub unet_base_channels: usize,
}

impl ModelConfig {
    pub fn for_variant(variant: Variant) -> Self {
        let base = Self {
            variant,
            in_channels: 24,
            num_classes: 2,
            prototypes_per_class: 15,
            prototype_depth: 64,
            prototype_spatial: (1, 1),
            addon_channels: 256,
            addon_layers: 2,
            addon_position: AddonPosition::Post,
            dropout_p: 0.35,
            downsample_factor: 16,
            similarity_epsilon: 1e-4,
            backbone_channels: 64,
            unet_base_channels: 16,
        };
        match variant {
            Variant::Unet | Variant::Ramanseg => base,
            Variant::RamansegProjectionFree => Self {
                prototypes_per_class: 60,
                prototype_spatial: (3, 3),
                addon_channels: 128,
                dropout_p: 0.5,
                ..base
            },
        }
    }

    /// Total prototype count `M = K * C`.
    pub fn num_prototypes(&self) -> usize {
        self.prototypes_per_class * self.num_classes
    }

    /// Class of each prototype; prototypes are class-blocked
    /// (the first `K` belong to class 0, the next `K` to class 1, ...).
    pub fn prototype_classes(&self) -> Vec<usize> {
        (0..self.num_prototypes())
            .map(|j| j / self.prototypes_per_class)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.in_channels == 0 || self.num_classes < 2 {
            return bad("in_channels must be >= 1 and num_classes >= 2".into());
        }
        if self.variant == Variant::Unet {
            if self.unet_base_channels == 0 {
                return bad("unet_base_channels must be >= 1".into());
            }
            return Ok(());
        }
        if self.prototypes_per_class == 0 || self.prototype_depth == 0 {
            return bad("prototypes_per_class and prototype_depth must be >= 1".into());
        }
        let (hp, wp) = self.prototype_spatial;
        if hp % 2 == 0 || wp % 2 == 0 {
            return bad(format!("prototype_spatial {hp}x{wp} must be odd"));
        }
        if !self.downsample_factor.is_power_of_two() {
            return bad(format!("downsample_factor {} must be a power of two", self.downsample_factor));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} must lie in [0, 1)", self.dropout_p));
        }
        if self.similarity_epsilon.is_nan() || self.similarity_epsilon <= 0.0 {
            return bad("similarity_epsilon must be positive".into());
        }
        if self.addon_channels == 0 || self.backbone_channels == 0 {
            return bad("addon_channels and backbone_channels must be >= 1".into());
        }
        Ok(())
    }

    /// Spatial divisibility every input must satisfy.
    pub fn input_multiple(&self) -> usize {
        match self.variant {
            Variant::Unet => 16,
            _ => self.downsample_factor,
        }
    }
}

/// Latent-resolution tensors of the prototype network.
#[derive(Debug, Clone)]
pub struct LatentOutput {
    /// Encoder output `(N, D, Hd, Wd)`.
    pub features: Tensor,
    /// Prototype similarity `(N, M, Hd, Wd)`.
    pub similarity: Tensor,
    /// `(N, C, Hd, Wd)`.
    pub logits: Tensor,
    pub probabilities: Tensor,
}

#[derive(Debug, Clone)]
pub struct ModelOutput {
    /// Full-resolution class scores `(N, C, H, W)`. For the prototype network
    /// these are the bilinearly upsampled latent logits.
    pub logits: Tensor,
    /// Full-resolution class probabilities `(N, C, H, W)`.
    pub probabilities: Tensor,
    pub latent: Option<LatentOutput>,
}

enum Network {
    UNet(UNet),
    RamanSeg(RamanSeg),
}

/// A network together with the parameters it reads.
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    net: Network,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("variant", &self.config.variant)
            .field("params", &self.store.len())
            .finish()
    }
}

impl Model {
    /// Fresh model with seeded initialization.
    pub fn new(config: &ModelConfig, seed: u64, precision: Precision) -> Result<Self> {
        Self::build(config, ParamStore::new(precision), seed)
    }

    fn build(config: &ModelConfig, mut store: ParamStore, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = Initializer::new(seed);
        let net = match config.variant {
            Variant::Unet => Network::UNet(UNet::new(config, &mut store, &mut init)?),
            _ => Network::RamanSeg(RamanSeg::new(config, &mut store, &mut init)?),
        };
        Ok(Self {
            config: config.clone(),
            store,
            net,
        })
    }

    /// Rebuilds a model around existing parameters; every parameter must be present.
    pub fn from_store(config: &ModelConfig, store: ParamStore) -> Result<Self> {
        let before = store.len();
        let model = Self::build(config, store, 0)?;
        if model.store.len() != before {
            return Err(Error::Shape(format!(
                "parameter set does not match the {:?} architecture ({} given, {} expected)",
                config.variant,
                before,
                model.store.len()
            )));
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn precision(&self) -> Precision {
        self.store.precision()
    }

    pub fn ramanseg(&self) -> Option<&RamanSeg> {
        match &self.net {
            Network::RamanSeg(r) => Some(r),
            Network::UNet(_) => None,
        }
    }

    pub(crate) fn ramanseg_mut(&mut self) -> Option<&mut RamanSeg> {
        match &mut self.net {
            Network::RamanSeg(r) => Some(r),
            Network::UNet(_) => None,
        }
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<ModelOutput> {
        match &self.net {
            Network::UNet(u) => u.forward(x, None),
            Network::RamanSeg(r) => r.forward(x, mode, None),
        }
    }

    /// Forward pass that exposes the named activation through `tap`.
    pub fn forward_tapped(&self, x: &Tensor, mode: Mode, tap: &mut Tap) -> Result<ModelOutput> {
        let out = match &self.net {
            Network::UNet(u) => u.forward(x, Some(tap))?,
            Network::RamanSeg(r) => r.forward(x, mode, Some(tap))?,
        };
        Ok(out)
    }

    /// Activations that can be tapped, in forward order.
    pub fn layer_names(&self) -> Vec<String> {
        match &self.net {
            Network::UNet(_) => UNet::layer_names(),
            Network::RamanSeg(_) => RamanSeg::layer_names(&self.config),
        }
    }

    /// Last convolution of the encoder.
    pub fn default_cam_layer(&self) -> &'static str {
        match &self.net {
            Network::UNet(_) => "bottleneck",
            Network::RamanSeg(_) => "latent",
        }
    }

    /// Independent copy, optionally in another precision.
    pub fn deep_copy(&self, precision: Precision) -> Result<Self> {
        let mut m = Self::from_store(&self.config, self.store.deep_copy(precision)?)?;
        if let (Some(dst), Some(src)) = (m.ramanseg_mut(), self.ramanseg()) {
            dst.meta = src.meta.clone();
        }
        Ok(m)
    }

    pub fn to_checkpoint(&self, info: CheckpointInfo) -> Result<Checkpoint> {
        Ok(Checkpoint {
            config: self.config.clone(),
            prototypes: self.ramanseg().map(|r| r.meta.clone()).unwrap_or_default(),
            info,
            params: self.store.export()?,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, precision: Precision) -> Result<Self> {
        let store = ParamStore::import(&ckpt.params, precision)?;
        let mut m = Self::from_store(&ckpt.config, store)?;
        if let Some(r) = m.ramanseg_mut() {
            if !ckpt.prototypes.is_empty() {
                if ckpt.prototypes.len() != r.meta.len() {
                    return Err(Error::Shape(format!(
                        "checkpoint lists {} prototypes, model has {}",
                        ckpt.prototypes.len(),
                        r.meta.len()
                    )));
                }
                r.meta = ckpt.prototypes.clone();
            }
        }
        Ok(m)
    }
}

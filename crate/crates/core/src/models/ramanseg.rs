use candle_core::{Tensor, Var};
use candle_nn::ops::{sigmoid, softmax};

use super::layers::{check_tap, spatial_dropout, tap_point, Conv, Mode, Tap};
use super::similarity::{similarity_from_distances, squared_distances};
use super::upsample::bilinear_upsample_tensor;
use super::{AddonPosition, LatentOutput, ModelConfig, ModelOutput};
use crate::error::{Error, Result};
use crate::prototypes::{xavier_bound, PrototypeMeta};
use crate::substrate::{Initializer, ParamStore};

pub const PROTOTYPE_PARAM: &str = "prototypes";
pub const HEAD_PARAM: &str = "head.weight";

/// Prototype segmentation network: strided encoder, prototype similarity
/// layer, add-on convolutions, per-point linear head, bilinear upsampling.
/// There is no learned decoder.
pub struct RamanSeg {
    cfg: ModelConfig,
    backbone: Vec<Conv>,
    /// `post`: a single 1x1 conv to the prototype depth. `pre`: the add-on stack.
    to_latent: Vec<Conv>,
    prototypes: Var,
    /// Add-on stack on the similarity map (`post` only).
    addon: Vec<Conv>,
    head: Conv,
    pub(crate) meta: Vec<PrototypeMeta>,
}

impl RamanSeg {
    pub(crate) fn new(cfg: &ModelConfig, store: &mut ParamStore, init: &mut Initializer) -> Result<Self> {
        let stages = cfg.downsample_factor.trailing_zeros() as usize;
        let bc = cfg.backbone_channels;
        let mut backbone = Vec::with_capacity(stages);
        let mut c_in = cfg.in_channels;
        for i in 0..stages {
            backbone.push(Conv::new(store, init, &format!("backbone.{i}"), (c_in, bc), 3, 2, true)?);
            c_in = bc;
        }

        let depth = cfg.prototype_depth;
        let mut to_latent = Vec::new();
        let mut addon = Vec::new();
        let m = cfg.num_prototypes();
        let head_in = match cfg.addon_position {
            AddonPosition::Post => {
                to_latent.push(Conv::new(store, init, "latent", (c_in, depth), 1, 1, true)?);
                let mut a_in = m;
                for i in 0..cfg.addon_layers {
                    let name = format!("addon.{i}");
                    addon.push(Conv::new(store, init, &name, (a_in, cfg.addon_channels), 3, 1, true)?);
                    a_in = cfg.addon_channels;
                }
                a_in
            }
            AddonPosition::Pre => {
                let n = cfg.addon_layers.max(1);
                for i in 0..n {
                    let c_out = if i + 1 == n { depth } else { cfg.addon_channels };
                    to_latent.push(Conv::new(store, init, &format!("addon.{i}"), (c_in, c_out), 1, 1, true)?);
                    c_in = c_out;
                }
                m
            }
        };

        let (hp, wp) = cfg.prototype_spatial;
        let bound = xavier_bound(depth, hp, wp);
        let prototypes = store.get_or_init(PROTOTYPE_PARAM, &[m, depth, hp, wp], |n| init.uniform(n, bound))?;

        let class_of = cfg.prototype_classes();
        let c = cfg.num_classes;
        if cfg.addon_position == AddonPosition::Pre {
            // Class-connection init: +1 to the prototype's own class, -0.5 elsewhere.
            store.get_or_init(HEAD_PARAM, &[c, head_in, 1, 1], |_| {
                (0..c)
                    .flat_map(|k| class_of.iter().map(move |&j| if j == k { 1.0 } else { -0.5 }))
                    .collect()
            })?;
        }
        let head = Conv::new(store, init, "head", (head_in, c), 1, 1, false)?;

        let meta = class_of
            .iter()
            .enumerate()
            .map(|(id, &class_id)| PrototypeMeta::new(id, class_id))
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            backbone,
            to_latent,
            prototypes,
            addon,
            head,
            meta,
        })
    }

    pub fn prototypes(&self) -> &Var {
        &self.prototypes
    }

    pub fn head_weight(&self) -> &Tensor {
        self.head.weight.as_tensor()
    }

    pub fn prototype_meta(&self) -> &[PrototypeMeta] {
        &self.meta
    }

    pub fn layer_names(cfg: &ModelConfig) -> Vec<String> {
        let stages = cfg.downsample_factor.trailing_zeros() as usize;
        let mut names: Vec<String> = (0..stages).map(|i| format!("backbone.{i}")).collect();
        if cfg.addon_position == AddonPosition::Pre {
            names.extend((0..cfg.addon_layers.max(1) - 1).map(|i| format!("addon.{i}")));
        }
        names.push("latent".into());
        names.push("similarity".into());
        if cfg.addon_position == AddonPosition::Post {
            names.extend((0..cfg.addon_layers).map(|i| format!("addon.{i}")));
        }
        names
    }

    /// Latent feature map `(N, D, H/f, W/f)` that prototypes are compared against.
    pub fn encode(&self, x: &Tensor, mode: Mode, tap: &mut Option<&mut Tap>) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        let f = self.cfg.downsample_factor;
        if h % f != 0 || w % f != 0 {
            return Err(Error::Precondition(format!(
                "input {h}x{w} must be divisible by the downsample factor {f}"
            )));
        }
        let mut y = x.clone();
        for (i, conv) in self.backbone.iter().enumerate() {
            y = tap_point(&format!("backbone.{i}"), conv.forward(&y)?.relu()?, tap)?;
        }
        let z = match self.cfg.addon_position {
            AddonPosition::Post => sigmoid(&self.to_latent[0].forward(&y)?)?,
            AddonPosition::Pre => {
                let n = self.to_latent.len();
                for (i, conv) in self.to_latent.iter().enumerate() {
                    y = conv.forward(&y)?;
                    y = if i + 1 == n {
                        sigmoid(&y)?
                    } else {
                        let a = tap_point(&format!("addon.{i}"), y.relu()?, tap)?;
                        spatial_dropout(&a, self.cfg.dropout_p, mode, i as u64)?
                    };
                }
                y
            }
        };
        tap_point("latent", z, tap)
    }

    pub fn forward(&self, x: &Tensor, mode: Mode, mut tap: Option<&mut Tap>) -> Result<ModelOutput> {
        check_tap(&tap, &Self::layer_names(&self.cfg))?;
        let (_, _, h, w) = x.dims4()?;
        let features = self.encode(x, mode, &mut tap)?;
        let d2 = squared_distances(&features, self.prototypes.as_tensor())?;
        let similarity = tap_point(
            "similarity",
            similarity_from_distances(&d2, self.cfg.similarity_epsilon)?,
            &mut tap,
        )?;
        let mut y = similarity.clone();
        let n = self.addon.len();
        for (i, conv) in self.addon.iter().enumerate() {
            y = tap_point(&format!("addon.{i}"), conv.forward(&y)?.relu()?, &mut tap)?;
            if i + 1 < n {
                y = spatial_dropout(&y, self.cfg.dropout_p, mode, 100 + i as u64)?;
            }
        }
        let latent_logits = self.head.forward(&y)?;
        let latent_probs = softmax(&latent_logits, 1)?;
        let probabilities = bilinear_upsample_tensor(&latent_probs, (h, w))?;
        let logits = bilinear_upsample_tensor(&latent_logits, (h, w))?;
        Ok(ModelOutput {
            logits,
            probabilities,
            latent: Some(LatentOutput {
                features,
                similarity,
                logits: latent_logits,
                probabilities: latent_probs,
            }),
        })
    }
}

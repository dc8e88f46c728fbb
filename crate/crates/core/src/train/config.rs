use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::eval::InferenceConfig;
use crate::hsdata::PreprocessConfig;
use crate::losses::{LossWeights, PairConvention};
use crate::models::{AddonPosition, ModelConfig, Variant};
use crate::substrate::Precision;

/// Which head weights the L1 term covers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L1Scope {
    #[default]
    All,
    /// Only connections from a prototype to the classes it does not belong to.
    OffClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub pair_convention: PairConvention,
    pub l1_scope: L1Scope,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Square training patch side; images smaller than this are used whole.
    pub patch_size: usize,
    pub patch_stride: usize,
    pub augment_flip_p: f64,
    pub seed: u64,
    pub folds: usize,
    /// Fraction of epochs run before prototype projection.
    pub projection_epoch_fraction: f64,
    /// Fraction of epochs, at the end, in which only the head is trained.
    pub last_layer_fraction: f64,
    pub early_stop_patience: usize,
    pub precision: Precision,
    pub preprocess: PreprocessConfig,
    pub inference: InferenceConfig,
}

impl TrainConfig {
    pub fn for_variant(variant: Variant) -> Self {
        let (learning_rate, weight_decay) = match variant {
            Variant::Unet => (1e-4, 1e-3),
            _ => (1e-3, 1e-4),
        };
        Self {
            model: ModelConfig::for_variant(variant),
            loss: LossWeights::default(),
            pair_convention: PairConvention::Unordered,
            l1_scope: L1Scope::All,
            learning_rate,
            weight_decay,
            epochs: 100,
            batch_size: 4,
            patch_size: 512,
            patch_stride: 256,
            augment_flip_p: 0.5,
            seed: 0,
            folds: 1,
            projection_epoch_fraction: 0.5,
            last_layer_fraction: 0.1,
            early_stop_patience: 20,
            precision: Precision::F32,
            preprocess: PreprocessConfig::default(),
            inference: InferenceConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return bad(format!("learning_rate {} must be > 0", self.learning_rate));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad(format!("weight_decay {} must be >= 0", self.weight_decay));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.folds == 0 {
            return bad("epochs, batch_size and folds must be >= 1".into());
        }
        if self.patch_size == 0 || self.patch_stride == 0 {
            return bad("patch_size and patch_stride must be >= 1".into());
        }
        if !self.patch_size.is_multiple_of(self.model.input_multiple()) {
            return bad(format!(
                "patch_size {} must be a multiple of {}",
                self.patch_size,
                self.model.input_multiple()
            ));
        }
        for (name, v) in [
            ("augment_flip_p", self.augment_flip_p),
            ("projection_epoch_fraction", self.projection_epoch_fraction),
            ("last_layer_fraction", self.last_layer_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} must lie in [0, 1]"));
            }
        }
        if self.l1_scope == L1Scope::OffClass && self.model.addon_position == AddonPosition::Post {
            return bad("l1_scope = off_class needs addon_position = pre (the head must read prototype similarities)".into());
        }
        Ok(())
    }

    /// Parses a TOML or JSON document layered over the defaults of its model
    /// variant. `variant` overrides `model.variant` in the document.
    pub fn from_document(text: &str, json: bool, variant: Option<Variant>) -> Result<Self> {
        Self::from_value(parse_document(text, json)?, variant)
    }

    /// [`TrainConfig::from_document`] for an already parsed document.
    pub fn from_value(mut doc: Value, variant: Option<Variant>) -> Result<Self> {
        if !doc.is_object() {
            return Err(Error::Config("configuration must be a table".into()));
        }
        let declared = doc
            .pointer("/model/variant")
            .map(|v| serde_json::from_value::<Variant>(v.clone()))
            .transpose()
            .map_err(|e| Error::Config(format!("model.variant: {e}")))?;
        let variant = variant.or(declared).unwrap_or(Variant::Ramanseg);
        if let Some(m) = doc.get_mut("model").and_then(Value::as_object_mut) {
            m.insert("variant".into(), serde_json::to_value(variant)?);
        }
        let mut base = serde_json::to_value(Self::for_variant(variant))?;
        merge(&mut base, doc);
        let cfg: Self = serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one field by name: a top-level key, or a key of `model` or `loss`.
    pub fn set_param(&mut self, name: &str, value: &str) -> Result<()> {
        let mut doc = serde_json::to_value(&*self)?;
        let parsed: Value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        let slot = ["", "/model", "/loss"]
            .iter()
            .find_map(|prefix| {
                let ptr = format!("{prefix}/{name}");
                doc.pointer(&ptr).is_some().then_some(ptr)
            })
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
        *doc.pointer_mut(&slot).unwrap() = parsed;
        let cfg: Self =
            serde_json::from_value(doc).map_err(|e| Error::Config(format!("{name} = {value}: {e}")))?;
        cfg.validate()?;
        *self = cfg;
        Ok(())
    }
}

/// Parses TOML, or JSON when `json` is set, into a JSON value.
pub fn parse_document(text: &str, json: bool) -> Result<Value> {
    if json {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    } else {
        let t: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(serde_json::to_value(t)?)
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_per_variant() {
        let u = TrainConfig::for_variant(Variant::Unet);
        assert_eq!((u.learning_rate, u.weight_decay), (1e-4, 1e-3));
        let r = TrainConfig::for_variant(Variant::Ramanseg);
        assert_eq!((r.learning_rate, r.weight_decay, r.epochs, r.early_stop_patience, r.batch_size), (1e-3, 1e-4, 100, 20, 4));
        assert!(r.validate().is_ok());
    }

    #[test]
    fn document_overrides_and_unknown_keys() {
        let cfg = TrainConfig::from_document(
            "epochs = 3\n[model]\nvariant = \"ramanseg_projection_free\"\nprototype_depth = 16\n[loss]\nbeta = 0.0\n",
            false,
            None,
        )
        .unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.model.prototypes_per_class, 60);
        assert_eq!(cfg.model.prototype_depth, 16);
        assert_eq!(cfg.loss.beta, 0.0);

        let err = TrainConfig::from_document("epochz = 3\n", false, None).unwrap_err();
        assert!(err.is_config() && err.to_string().contains("epochz"), "{err}");
        let err = TrainConfig::from_document("[model]\nwidth = 3\n", false, None).unwrap_err();
        assert!(err.to_string().contains("width"), "{err}");
        let cli = TrainConfig::from_document("[model]\nvariant = \"ramanseg\"\n", false, Some(Variant::Unet)).unwrap();
        assert_eq!(cli.model.variant, Variant::Unet);
        assert_eq!(cli.learning_rate, 1e-4);
    }

    #[test]
    fn set_param_paths() {
        let mut c = TrainConfig::for_variant(Variant::Ramanseg);
        c.set_param("prototypes_per_class", "20").unwrap();
        c.set_param("beta", "0.5").unwrap();
        c.set_param("epochs", "7").unwrap();
        assert_eq!((c.model.prototypes_per_class, c.loss.beta, c.epochs), (20, 0.5, 7));
        assert!(c.set_param("nope", "1").unwrap_err().is_config());
        assert!(c.set_param("learning_rate", "0").is_err());
    }

    #[test]
    fn off_class_needs_pre_addons() {
        let mut c = TrainConfig::for_variant(Variant::Ramanseg);
        c.l1_scope = L1Scope::OffClass;
        assert!(c.validate().is_err());
        c.model.addon_position = AddonPosition::Pre;
        assert!(c.validate().is_ok());
    }
}

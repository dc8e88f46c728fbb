use serde::{Deserialize, Serialize};

use super::metrics::{ConfusionCounts, MeanStd};
use crate::error::{Error, Result};
use crate::hsdata::{tile_origins, HyperCube, MaskRaster, Sample};
use crate::models::{ensemble_predict, Model};
use crate::substrate::{cubes_to_tensor, to_f64_vec};

/// Full-image inference settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceConfig {
    /// Square tile size; `None` runs each image in one pass.
    pub patch: Option<usize>,
    pub stride: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            patch: None,
            stride: 256,
        }
    }
}

/// Ensemble class probabilities `(C, H, W)` for a whole cube. Tiles are
/// anchored to the far edges and overlapping probabilities are averaged.
pub fn predict_probabilities(models: &[Model], cube: &HyperCube, cfg: &InferenceConfig) -> Result<Vec<f64>> {
    let first = models
        .first()
        .ok_or_else(|| Error::Precondition("inference needs at least one model".into()))?;
    let precision = first.precision();
    let (_, h, w) = cube.dims();
    let single = |c: &HyperCube| -> Result<Vec<f64>> {
        let x = cubes_to_tensor(&[c], precision)?;
        to_f64_vec(&ensemble_predict(models, &x)?)
    };
    let patch = match cfg.patch {
        Some(p) if p < h || p < w => p,
        _ => return single(cube),
    };
    let (ph, pw) = (patch.min(h), patch.min(w));
    let classes = first.config().num_classes;
    let mut acc = vec![0.0; classes * h * w];
    let mut hits = vec![0u32; h * w];
    for (top, left) in tile_origins(h, w, (ph, pw), cfg.stride)? {
        let probs = single(&cube.crop(top, left, ph, pw)?)?;
        for k in 0..classes {
            for r in 0..ph {
                let src = &probs[(k * ph + r) * pw..(k * ph + r + 1) * pw];
                let dst = (k * h + top + r) * w + left;
                for (a, p) in acc[dst..dst + pw].iter_mut().zip(src) {
                    *a += p;
                }
            }
        }
        for r in 0..ph {
            for v in &mut hits[(top + r) * w + left..(top + r) * w + left + pw] {
                *v += 1;
            }
        }
    }
    for k in 0..classes {
        for (a, &n) in acc[k * h * w..(k + 1) * h * w].iter_mut().zip(&hits) {
            *a /= n as f64;
        }
    }
    Ok(acc)
}

/// Per-pixel argmax; ties go to the lower class index.
pub fn argmax_mask(probs: &[f64], classes: usize, h: usize, w: usize) -> Result<MaskRaster> {
    let hw = h * w;
    let labels = (0..hw)
        .map(|p| {
            let mut best = 0;
            for k in 1..classes {
                if probs[k * hw + p] > probs[best * hw + p] {
                    best = k;
                }
            }
            best as u8
        })
        .collect();
    MaskRaster::new(h, w, labels)
}

pub fn predict_mask(models: &[Model], cube: &HyperCube, cfg: &InferenceConfig) -> Result<MaskRaster> {
    let probs = predict_probabilities(models, cube, cfg)?;
    argmax_mask(&probs, models[0].config().num_classes, cube.height(), cube.width())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub sample_id: String,
    pub dice: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: Vec<SampleMetrics>,
    pub dice: Option<MeanStd>,
    pub sensitivity: Option<MeanStd>,
    pub specificity: Option<MeanStd>,
}

impl EvalReport {
    pub fn from_samples(samples: Vec<SampleMetrics>) -> Self {
        let col = |f: fn(&SampleMetrics) -> Option<f64>| {
            let v: Vec<f64> = samples.iter().filter_map(f).collect();
            MeanStd::of(&v)
        };
        Self {
            dice: col(|s| Some(s.dice)),
            sensitivity: col(|s| s.sensitivity),
            specificity: col(|s| s.specificity),
            samples,
        }
    }

    /// Mean foreground Dice, 0 for an empty report.
    pub fn mean_dice(&self) -> f64 {
        self.dice.map_or(0.0, |d| d.mean)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// One row per sample followed by `mean` and `std` rows; undefined values are `NA`.
    pub fn to_csv(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x}"));
        let mut out = String::from("sample_id,dice,sensitivity,specificity\n");
        for s in &self.samples {
            out.push_str(&format!("{},{},{},{}\n", s.sample_id, s.dice, f(s.sensitivity), f(s.specificity)));
        }
        let agg = [self.dice, self.sensitivity, self.specificity];
        out.push_str(&format!("mean,{},{},{}\n", f(agg[0].map(|a| a.mean)), f(agg[1].map(|a| a.mean)), f(agg[2].map(|a| a.mean))));
        out.push_str(&format!("std,{},{},{}\n", f(agg[0].map(|a| a.std)), f(agg[1].map(|a| a.std)), f(agg[2].map(|a| a.std))));
        out
    }
}

/// Metrics of a predicted mask against the truth.
pub fn sample_metrics(sample_id: &str, pred: &MaskRaster, truth: &MaskRaster) -> Result<SampleMetrics> {
    let c = ConfusionCounts::from_masks(pred, truth)?;
    Ok(SampleMetrics {
        sample_id: sample_id.to_string(),
        dice: c.dice(),
        sensitivity: c.sensitivity(),
        specificity: c.specificity(),
    })
}

/// Full-image ensemble evaluation of `samples`.
pub fn evaluate_samples(models: &[Model], samples: &[&Sample], cfg: &InferenceConfig) -> Result<EvalReport> {
    let rows = samples
        .iter()
        .map(|s| sample_metrics(&s.sample_id, &predict_mask(models, &s.cube, cfg)?, &s.mask))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_samples(rows))
}

/// Evaluation on the test split; an empty split is an error.
pub fn evaluate_holdout(models: &[Model], test: &[&Sample], cfg: &InferenceConfig) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Precondition("the test split is empty".into()));
    }
    evaluate_samples(models, test, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hsdata::{generate_synthetic, SynthConfig};
    use crate::models::{ModelConfig, Variant};
    use crate::substrate::Precision;

    fn tiny_unet() -> Model {
        let cfg = ModelConfig {
            unet_base_channels: 2,
            ..ModelConfig::for_variant(Variant::Unet)
        };
        Model::new(&cfg, 0, Precision::F32).unwrap()
    }

    #[test]
    fn stitched_equals_single_shot_when_one_tile() {
        let s = &generate_synthetic(1, 64, 64, 1, &SynthConfig::default()).unwrap()[0];
        let m = [tiny_unet()];
        let a = predict_probabilities(&m, &s.cube, &InferenceConfig { patch: None, stride: 32 }).unwrap();
        let b = predict_probabilities(&m, &s.cube, &InferenceConfig { patch: Some(64), stride: 32 }).unwrap();
        assert_eq!(a, b);
        let tiled = predict_probabilities(&m, &s.cube, &InferenceConfig { patch: Some(48), stride: 16 }).unwrap();
        assert_eq!(tiled.len(), a.len());
        assert!(tiled.chunks(64 * 64).next().unwrap().iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn argmax_and_report() {
        let probs = vec![0.9, 0.2, 0.5, 0.1, 0.8, 0.5];
        let m = argmax_mask(&probs, 2, 1, 3).unwrap();
        assert_eq!(m.labels(), &[0, 1, 0]);
        let truth = MaskRaster::new(1, 3, vec![0, 1, 0]).unwrap();
        let r = EvalReport::from_samples(vec![sample_metrics("a", &m, &truth).unwrap()]);
        assert_eq!(r.dice.unwrap().mean, 1.0);
        assert_eq!(r.dice.unwrap().std, 0.0);
        assert!(r.to_csv().starts_with("sample_id,dice,sensitivity,specificity\na,1,1,1\n"));
        assert!(evaluate_holdout(&[tiny_unet()], &[], &InferenceConfig::default()).is_err());
    }
}

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::attribution::PixelTarget;
use crate::error::{Error, Result};
use crate::models::{bilinear_upsample, Mode, Model, Tap};
use crate::substrate::to_f64_vec;

/// A 2-D attribution raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn upsample(&self, h: usize, w: usize) -> Result<Heatmap> {
        Ok(Heatmap {
            height: h,
            width: w,
            values: bilinear_upsample(&self.values, (1, self.height, self.width), (h, w))?,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in self.values.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }
}

/// `relu(sum_k mean(grad_k) * act_k)` for an activation and its gradient, both `(C, H, W)`.
pub fn gradcam_map(activation: &[f64], gradient: &[f64], (c, h, w): (usize, usize, usize)) -> Vec<f64> {
    let hw = h * w;
    let mut map = vec![0.0; hw];
    for k in 0..c {
        let g = &gradient[k * hw..(k + 1) * hw];
        let weight = g.iter().sum::<f64>() / hw as f64;
        for (m, a) in map.iter_mut().zip(&activation[k * hw..(k + 1) * hw]) {
            *m += weight * a;
        }
    }
    map.iter().map(|v| v.max(0.0)).collect()
}

fn single(model: &Model, x: &Tensor, target: PixelTarget, layer: &str) -> Result<Heatmap> {
    let mut tap = Tap::new(layer);
    let out = model.forward_tapped(x, Mode::Eval, &mut tap)?;
    let (_, classes, h, w) = out.logits.dims4()?;
    if target.row >= h || target.col >= w || target.class >= classes {
        return Err(Error::Precondition(format!("target {target:?} outside the {h}x{w} output")));
    }
    let y = out
        .logits
        .narrow(1, target.class, 1)?
        .narrow(2, target.row, 1)?
        .narrow(3, target.col, 1)?
        .sum_all()?;
    let leaf = tap
        .leaf()
        .ok_or_else(|| Error::Precondition(format!("layer `{layer}` was not reached")))?;
    let act = leaf.as_tensor();
    let (_, c, lh, lw) = act
        .dims4()
        .map_err(|_| Error::Precondition(format!("layer `{layer}` has no spatial activations")))?;
    let grads = y.backward()?;
    let g = match grads.get(act) {
        Some(g) => to_f64_vec(g)?,
        None => vec![0.0; c * lh * lw],
    };
    Ok(Heatmap {
        height: lh,
        width: lw,
        values: gradcam_map(&to_f64_vec(act)?, &g, (c, lh, lw)),
    })
}

/// Grad-CAM of the target logit at `layer` (default: the last encoder
/// convolution), averaged over `models`. With `normalize`, each model's map
/// is scaled to a maximum of 1 before averaging.
pub fn gradcam(models: &[Model], x: &Tensor, target: PixelTarget, layer: Option<&str>, normalize: bool) -> Result<Heatmap> {
    let first = models
        .first()
        .ok_or_else(|| Error::Precondition("Grad-CAM needs at least one model".into()))?;
    let layer = layer.unwrap_or(first.default_cam_layer());
    let mut acc: Option<Heatmap> = None;
    for m in models {
        let mut map = single(m, x, target, layer)?;
        if normalize {
            let max = map.values.iter().cloned().fold(0.0, f64::max);
            if max > 0.0 {
                map.values.iter_mut().for_each(|v| *v /= max);
            }
        }
        acc = Some(match acc {
            None => map,
            Some(mut a) => {
                if (a.height, a.width) != (map.height, map.width) {
                    return Err(Error::Shape("ensemble members produce different Grad-CAM sizes".into()));
                }
                a.values.iter_mut().zip(&map.values).for_each(|(s, v)| *s += v);
                a
            }
        });
    }
    let mut out = acc.unwrap();
    let n = models.len() as f64;
    out.values.iter_mut().for_each(|v| *v /= n);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ModelConfig, Variant};
    use crate::substrate::{device, Precision};

    #[test]
    fn one_channel_closed_form() {
        let act = [1.0, -2.0, 3.0, 0.5];
        let map = gradcam_map(&act, &[0.5, 1.5, 1.0, 1.0], (1, 2, 2));
        assert_eq!(map, vec![1.0, 0.0, 3.0, 0.5]);
        let neg = gradcam_map(&act, &[-1.0; 4], (1, 2, 2));
        assert_eq!(neg, vec![0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn ensemble_of_identical_models() {
        let cfg = ModelConfig {
            unet_base_channels: 2,
            ..ModelConfig::for_variant(Variant::Unet)
        };
        let a = Model::new(&cfg, 3, Precision::F32).unwrap();
        let b = Model::new(&cfg, 3, Precision::F32).unwrap();
        let x = Tensor::rand(0f32, 1.0, (1, 24, 32, 32), &device()).unwrap();
        let t = PixelTarget { row: 10, col: 12, class: 1 };
        let one = gradcam(std::slice::from_ref(&a), &x, t, None, false).unwrap();
        let two = [a, b];
        let two_map = gradcam(&two, &x, t, None, false).unwrap();
        assert_eq!((one.height, one.width), (2, 2));
        for (p, q) in one.values.iter().zip(&two_map.values) {
            assert!((p - q).abs() < 1e-6 * p.abs().max(1.0));
        }
        assert!(one.values.iter().all(|v| *v >= 0.0));
        let err = gradcam(&two, &x, t, Some("nope"), false).unwrap_err();
        assert!(err.to_string().contains("bottleneck"), "{err}");
    }
}

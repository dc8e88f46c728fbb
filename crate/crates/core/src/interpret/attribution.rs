use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Mode, Model};
use crate::substrate::{scalar_f64, to_f64_vec};

/// A class score at one input pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelTarget {
    pub row: usize,
    pub col: usize,
    pub class: usize,
}

/// Per-input-channel contribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelAttribution {
    pub values: Vec<f64>,
}

impl ChannelAttribution {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("channel,attribution\n");
        for (k, v) in self.values.iter().enumerate() {
            s.push_str(&format!("{k},{v}\n"));
        }
        s
    }
}

/// Target logit for every image of a batch, shape `(B,)`.
pub fn target_logits(model: &Model, x: &Tensor, t: PixelTarget) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if t.row >= h || t.col >= w || t.class >= model.config().num_classes {
        return Err(Error::Precondition(format!(
            "target {t:?} outside a {h}x{w} input with {} classes",
            model.config().num_classes
        )));
    }
    let logits = model.forward(x, Mode::Eval)?.logits;
    Ok(logits
        .narrow(1, t.class, 1)?
        .narrow(2, t.row, 1)?
        .narrow(3, t.col, 1)?
        .flatten_all()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratedGradients {
    /// Same layout as the input, `(C, H, W)`.
    pub attributions: Vec<f64>,
    pub dims: (usize, usize, usize),
    /// Sum of absolute attributions per channel.
    pub channels: ChannelAttribution,
    pub output_at_input: f64,
    pub output_at_baseline: f64,
}

impl IntegratedGradients {
    pub fn total(&self) -> f64 {
        self.attributions.iter().sum()
    }

    /// `|sum(attr) - (f(x) - f(baseline))| / |f(x) - f(baseline)|`.
    pub fn completeness_error(&self) -> f64 {
        let delta = self.output_at_input - self.output_at_baseline;
        (self.total() - delta).abs() / delta.abs().max(f64::MIN_POSITIVE)
    }
}

/// Integrated Gradients of a batched scalar function `f: (B, C, H, W) -> (B,)`
/// along the straight path from `baseline` to `input` (both `(1, C, H, W)`),
/// with a `steps`-point midpoint rule evaluated `chunk` points at a time.
pub fn integrated_gradients_with<F>(f: F, input: &Tensor, baseline: &Tensor, steps: usize, chunk: usize) -> Result<IntegratedGradients>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if steps < 2 {
        return Err(Error::Precondition("integrated gradients needs at least 2 steps".into()));
    }
    if input.dims() != baseline.dims() {
        return Err(Error::Shape(format!(
            "baseline {:?} does not match input {:?}",
            baseline.dims(),
            input.dims()
        )));
    }
    let (_, c, h, w) = input.dims4()?;
    let diff = (input - baseline)?;
    let mut grad_sum = Tensor::zeros((1, c, h, w), input.dtype(), input.device())?;
    let chunk = chunk.max(1);
    let mut k = 0;
    while k < steps {
        let b = chunk.min(steps - k);
        let alphas: Vec<f64> = (k..k + b).map(|i| (i as f64 + 0.5) / steps as f64).collect();
        let a = Tensor::from_vec(alphas, (b, 1, 1, 1), input.device())?.to_dtype(input.dtype())?;
        let path = Var::from_tensor(&baseline.broadcast_add(&diff.broadcast_mul(&a)?)?)?;
        let y = f(path.as_tensor())?.sum_all()?;
        let grads = y.backward()?;
        if let Some(g) = grads.get(path.as_tensor()) {
            grad_sum = (grad_sum + g.sum_keepdim(0)?)?;
        }
        k += b;
    }
    let attr = to_f64_vec(&(diff * (grad_sum / steps as f64)?)?)?;
    let channels = ChannelAttribution {
        values: attr.chunks(h * w).map(|ch| ch.iter().map(|v| v.abs()).sum()).collect(),
    };
    Ok(IntegratedGradients {
        attributions: attr,
        dims: (c, h, w),
        channels,
        output_at_input: scalar_f64(&f(input)?.sum_all()?)?,
        output_at_baseline: scalar_f64(&f(baseline)?.sum_all()?)?,
    })
}

/// Integrated Gradients of the target logit; `baseline = None` uses the all-zero cube.
pub fn integrated_gradients(
    model: &Model,
    input: &Tensor,
    target: PixelTarget,
    baseline: Option<&Tensor>,
    steps: usize,
) -> Result<IntegratedGradients> {
    let zeros;
    let baseline = match baseline {
        Some(b) => b,
        None => {
            zeros = input.zeros_like()?;
            &zeros
        }
    };
    integrated_gradients_with(|x| target_logits(model, x, target), input, baseline, steps, 8)
}

/// Output change `f(x) - f(x with channel k set to baseline inside region)`
/// for every channel `k`. `region` is a row-major `H x W` selection.
pub fn feature_ablation_with<F>(f: F, input: &Tensor, region: &[bool], baseline_value: f64) -> Result<ChannelAttribution>
where
    F: Fn(&Tensor) -> Result<f64>,
{
    let (_, c, h, w) = input.dims4()?;
    if region.len() != h * w {
        return Err(Error::Shape("ablation region does not match the input".into()));
    }
    if !region.iter().any(|&r| r) {
        return Err(Error::Precondition("ablation region is empty".into()));
    }
    let original = f(input)?;
    let base = to_f64_vec(input)?;
    let mut values = Vec::with_capacity(c);
    for k in 0..c {
        let mut data = base.clone();
        for (p, _) in region.iter().enumerate().filter(|(_, r)| **r) {
            data[k * h * w + p] = baseline_value;
        }
        let x = Tensor::from_vec(data, (1, c, h, w), input.device())?.to_dtype(input.dtype())?;
        values.push(original - f(&x)?);
    }
    Ok(ChannelAttribution { values })
}

/// Channel-wise region ablation of the target logit.
pub fn feature_ablation(
    model: &Model,
    input: &Tensor,
    region: &[bool],
    target: PixelTarget,
    baseline_value: f64,
) -> Result<ChannelAttribution> {
    feature_ablation_with(
        |x| scalar_f64(&target_logits(model, x, target)?.sum_all()?),
        input,
        region,
        baseline_value,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::substrate::device;

    fn t(v: Vec<f64>, shape: (usize, usize, usize, usize)) -> Tensor {
        Tensor::from_vec(v, shape, &device()).unwrap()
    }

    /// `f(x) = sum(w * x)` per batch item.
    fn linear(w: Tensor) -> impl Fn(&Tensor) -> Result<Tensor> {
        move |x: &Tensor| Ok(x.broadcast_mul(&w)?.flatten_from(1)?.sum(1)?)
    }

    #[test]
    fn exact_for_linear_models() {
        let w = t(vec![1.0, -2.0, 0.5, 3.0, 0.0, 1.5, -1.0, 2.0], (1, 2, 2, 2));
        let x = t(vec![0.3, 0.1, -0.4, 2.0, 1.0, 0.2, 0.7, -1.0], (1, 2, 2, 2));
        let b = t(vec![0.1; 8], (1, 2, 2, 2));
        for steps in [2, 7, 64] {
            let ig = integrated_gradients_with(linear(w.clone()), &x, &b, steps, 3).unwrap();
            let want = to_f64_vec(&((&x - &b).unwrap() * &w).unwrap()).unwrap();
            for (a, e) in ig.attributions.iter().zip(&want) {
                assert!((a - e).abs() < 1e-12);
            }
            assert!(ig.completeness_error() < 1e-12);
        }
        let zero = integrated_gradients_with(linear(w.clone()), &x, &x, 8, 8).unwrap();
        assert!(zero.attributions.iter().all(|v| *v == 0.0));
        assert!(integrated_gradients_with(linear(w), &x, &b, 1, 1).is_err());
    }

    #[test]
    fn constant_model_has_zero_attribution() {
        let x = t(vec![0.3, 0.1, -0.4, 2.0], (1, 1, 2, 2));
        let f = |x: &Tensor| Ok((x.flatten_from(1)?.sum(1)?.zeros_like()? + 4.0)?);
        let ig = integrated_gradients_with(f, &x, &x.zeros_like().unwrap(), 16, 4).unwrap();
        assert!(ig.attributions.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn ablation_on_toy_models() {
        let region = vec![true, true, false, false];
        // f = 2 mean(ch0 over region) + mean(ch1 over region), channel 2 ignored
        let f = |x: &Tensor| -> Result<f64> {
            let v = to_f64_vec(x)?;
            Ok(2.0 * (v[0] + v[1]) / 2.0 + (v[4] + v[5]) / 2.0 + 0.0 * v[8])
        };
        let x = t(vec![1.0; 12], (1, 3, 2, 2));
        let a = feature_ablation_with(f, &x, &region, 0.0).unwrap();
        assert_eq!(a.values, vec![2.0, 1.0, 0.0]);
        assert!(feature_ablation_with(f, &x, &[false; 4], 0.0).is_err());

        // additivity over disjoint regions for a linear model
        let w = t((0..12).map(|i| i as f64 - 5.0).collect(), (1, 3, 2, 2));
        let g = |x: &Tensor| scalar_f64(&linear(w.clone())(x)?.sum_all()?);
        let xs = t((0..12).map(|i| (i as f64).sin()).collect(), (1, 3, 2, 2));
        let r1 = [true, false, true, false];
        let r2 = [false, true, false, false];
        let both = [true, true, true, false];
        let a1 = feature_ablation_with(g, &xs, &r1, 0.0).unwrap();
        let a2 = feature_ablation_with(g, &xs, &r2, 0.0).unwrap();
        let ab = feature_ablation_with(g, &xs, &both, 0.0).unwrap();
        for k in 0..3 {
            assert!((a1.values[k] + a2.values[k] - ab.values[k]).abs() < 1e-8);
        }
    }
}

//! Training objectives on latent-resolution outputs.

use candle_core::{DType, Tensor};
use candle_nn::ops::log_softmax;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsdata::MaskRaster;
use crate::substrate::{device, scalar_f64};

/// Dice smoothing constant.
pub const DICE_SMOOTH: f64 = 1.0;

/// Hard labels and their one-hot encoding at some resolution.
#[derive(Debug, Clone)]
pub struct Targets {
    labels: Vec<u8>,
    /// `(N, C, H, W)`.
    pub one_hot: Tensor,
}

impl Targets {
    pub fn new(labels: Vec<u8>, (n, h, w): (usize, usize, usize), num_classes: usize, dtype: DType) -> Result<Self> {
        if labels.len() != n * h * w {
            return Err(Error::Shape(format!(
                "{} labels for a {n}x{h}x{w} target",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::Precondition(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        let hw = h * w;
        let mut oh = vec![0f32; n * num_classes * hw];
        for (i, &l) in labels.iter().enumerate() {
            let (b, p) = (i / hw, i % hw);
            oh[(b * num_classes + l as usize) * hw + p] = 1.0;
        }
        let one_hot = Tensor::from_vec(oh, (n, num_classes, h, w), &device())?.to_dtype(dtype)?;
        Ok(Self { labels, one_hot })
    }

    /// Nearest-neighbour downsampled masks stacked into one target.
    pub fn from_masks(masks: &[&MaskRaster], (h, w): (usize, usize), num_classes: usize, dtype: DType) -> Result<Self> {
        let mut labels = Vec::with_capacity(masks.len() * h * w);
        for m in masks {
            if (m.height(), m.width()) == (h, w) {
                labels.extend_from_slice(m.labels());
            } else {
                labels.extend_from_slice(m.downsample_nearest(h, w).labels());
            }
        }
        Self::new(labels, (masks.len(), h, w), num_classes, dtype)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
}

/// Mean over pixels of `-log softmax(logits)[target]`.
pub fn cross_entropy(logits: &Tensor, targets: &Targets) -> Result<Tensor> {
    check_same(logits, &targets.one_hot)?;
    let (n, _, h, w) = logits.dims4()?;
    let lp = log_softmax(logits, 1)?;
    let picked = (lp * &targets.one_hot)?.sum_all()?;
    Ok(picked.affine(-1.0 / (n * h * w) as f64, 0.0)?)
}

/// `1 - mean` soft Dice over foreground classes (all but class 0) and images,
/// with smoothing [`DICE_SMOOTH`].
pub fn dice_loss(probabilities: &Tensor, one_hot: &Tensor) -> Result<Tensor> {
    check_same(probabilities, one_hot)?;
    let c = probabilities.dims()[1];
    if c < 2 {
        return Err(Error::Precondition("Dice loss needs at least two classes".into()));
    }
    let p = probabilities.narrow(1, 1, c - 1)?;
    let t = one_hot.narrow(1, 1, c - 1)?;
    let inter = (&p * &t)?.sum((2, 3))?;
    let denom = (p.sum((2, 3))? + t.sum((2, 3))?)?;
    let dice = ((inter * 2.0)? + DICE_SMOOTH)?.div(&(denom + DICE_SMOOTH)?)?;
    Ok((1.0 - dice.mean_all()?)?)
}

/// How the pairwise sum in the activation overlap term counts pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairConvention {
    /// Each unordered pair once, `i < j`.
    #[default]
    Unordered,
    /// Every ordered pair `i != j`; twice the unordered value.
    Ordered,
}

/// Activation overlap between same-class prototypes.
///
/// For each image and class `c` with `K` prototypes, the dot products between
/// the flattened similarity maps of every pair of class-`c` prototypes are
/// summed and divided by `K choose 2`. Values are averaged over classes, then
/// over images. Classes with a single prototype contribute zero.
pub fn activation_overlap(
    similarity: &Tensor,
    class_of: &[usize],
    num_classes: usize,
    convention: PairConvention,
) -> Result<Tensor> {
    let (n, m, h, w) = similarity.dims4()?;
    if class_of.len() != m {
        return Err(Error::Shape(format!(
            "{} prototype classes for a map with {m} prototypes",
            class_of.len()
        )));
    }
    let flat = similarity.reshape((n, m, h * w))?;
    let scale = match convention {
        PairConvention::Unordered => 0.5,
        PairConvention::Ordered => 1.0,
    };
    let mut total = Tensor::zeros(n, similarity.dtype(), similarity.device())?;
    for c in 0..num_classes {
        let idx: Vec<u32> = (0..m).filter(|&j| class_of[j] == c).map(|j| j as u32).collect();
        let k = idx.len();
        if k == 0 {
            return Err(Error::Precondition(format!("class {c} has no prototypes")));
        }
        if k < 2 {
            continue;
        }
        let idx = Tensor::from_vec(idx, k, similarity.device())?;
        let s = flat.index_select(&idx, 1)?;
        // sum_{i != j} <s_i, s_j> = |sum_i s_i|^2 - sum_i |s_i|^2
        let all = s.sum(1)?.sqr()?.sum(1)?;
        let diag = s.sqr()?.sum((1, 2))?;
        let pairs = (k * (k - 1) / 2) as f64;
        total = (total + (all - diag)?.affine(scale / pairs, 0.0)?)?;
    }
    Ok((total / num_classes as f64)?.mean_all()?)
}

/// Sum of absolute weights.
pub fn l1_penalty(weights: &Tensor) -> Result<Tensor> {
    Ok(weights.abs()?.sum_all()?)
}

/// L1 over the connections from each prototype to the classes it does not
/// belong to. `weights` is `(C, M, ..)`.
pub fn l1_off_class(weights: &Tensor, class_of: &[usize]) -> Result<Tensor> {
    let c = weights.dims()[0];
    let m = class_of.len();
    let mask: Vec<f32> = (0..c)
        .flat_map(|k| class_of.iter().map(move |&j| if j == k { 0.0 } else { 1.0 }))
        .collect();
    let mask = Tensor::from_vec(mask, (c, m), weights.device())?
        .to_dtype(weights.dtype())?
        .reshape(weights.shape())?;
    Ok((weights.abs()? * mask)?.sum_all()?)
}

/// Loss weights: `L = alpha * L_CE + beta * L_A + gamma * L_L1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.1,
            gamma: 1e-4,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("loss weight {name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Individual loss terms of one step. Absent terms count as zero.
#[derive(Debug, Clone)]
pub struct LossParts {
    pub ce: Tensor,
    /// Present for the projection-free variant, where it joins the CE term.
    pub dice: Option<Tensor>,
    pub overlap: Option<Tensor>,
    pub l1: Option<Tensor>,
}

/// Scalar values of one step, one row of the training log.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub total: f64,
    pub ce: f64,
    pub dice: f64,
    pub overlap: f64,
    pub l1: f64,
}

impl LossRecord {
    pub const CSV_HEADER: &'static str = "step,L,L_CE,L_Dice,L_A,L_L1";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.total, self.ce, self.dice, self.overlap, self.l1
        )
    }
}

/// Weighted sum of the parts. A non-finite part is an error naming the term.
pub fn combined_objective(parts: &LossParts, w: &LossWeights, step: usize) -> Result<(Tensor, LossRecord)> {
    let value = |t: Option<&Tensor>, term: &'static str| -> Result<f64> {
        match t {
            None => Ok(0.0),
            Some(t) => {
                let v = scalar_f64(t)?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::NonFiniteLoss { term })
                }
            }
        }
    };
    let rec = LossRecord {
        step,
        total: 0.0,
        ce: value(Some(&parts.ce), "L_CE")?,
        dice: value(parts.dice.as_ref(), "L_Dice")?,
        overlap: value(parts.overlap.as_ref(), "L_A")?,
        l1: value(parts.l1.as_ref(), "L_L1")?,
    };
    let mut seg = parts.ce.clone();
    if let Some(d) = &parts.dice {
        seg = (seg + d)?;
    }
    let mut total = seg.affine(w.alpha, 0.0)?;
    if let Some(a) = &parts.overlap {
        total = (total + a.affine(w.beta, 0.0)?)?;
    }
    if let Some(l) = &parts.l1 {
        total = (total + l.affine(w.gamma, 0.0)?)?;
    }
    let t = scalar_f64(&total)?;
    if !t.is_finite() {
        return Err(Error::NonFiniteLoss { term: "L" });
    }
    Ok((total, LossRecord { total: t, ..rec }))
}

fn check_same(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    a.dims4()?;
    Ok(())
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsdata::MaskRaster;

/// Per-pixel confusion counts for the foreground class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn from_labels(pred: &[u8], truth: &[u8]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::Shape(format!(
                "prediction has {} pixels, truth has {}",
                pred.len(),
                truth.len()
            )));
        }
        let mut c = Self::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (p != 0, t != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn from_masks(pred: &MaskRaster, truth: &MaskRaster) -> Result<Self> {
        if (pred.height(), pred.width()) != (truth.height(), truth.width()) {
            return Err(Error::Shape(format!(
                "prediction {}x{} vs truth {}x{}",
                pred.height(),
                pred.width(),
                truth.height(),
                truth.width()
            )));
        }
        Self::from_labels(pred.labels(), truth.labels())
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// `2 TP / (2 TP + FP + FN)`, and 1 when both masks are empty.
    pub fn dice(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }

    /// `None` when the truth has no foreground.
    pub fn sensitivity(&self) -> Option<f64> {
        let p = self.tp + self.fn_;
        (p > 0).then(|| self.tp as f64 / p as f64)
    }

    /// `None` when the truth has no background.
    pub fn specificity(&self) -> Option<f64> {
        let n = self.tn + self.fp;
        (n > 0).then(|| self.tn as f64 / n as f64)
    }
}

/// Foreground Dice between two binary masks.
pub fn dice(pred: &MaskRaster, truth: &MaskRaster) -> Result<f64> {
    Ok(ConfusionCounts::from_masks(pred, truth)?.dice())
}

pub fn sensitivity_specificity(counts: &ConfusionCounts) -> (Option<f64>, Option<f64>) {
    (counts.sensitivity(), counts.specificity())
}

/// Mean and population standard deviation, computed in two passes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    /// `None` for an empty input.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            n: values.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn mask(h: usize, w: usize, labels: Vec<u8>) -> MaskRaster {
        MaskRaster::new(h, w, labels).unwrap()
    }

    #[test]
    fn hand_values() {
        let a = mask(2, 3, vec![1, 1, 0, 0, 0, 0]);
        let b = mask(2, 3, vec![1, 1, 1, 1, 0, 0]);
        assert!((dice(&a, &b).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let c = mask(2, 3, vec![0, 0, 0, 0, 1, 1]);
        assert_eq!(dice(&a, &c).unwrap(), 0.0);
        assert_eq!(dice(&MaskRaster::zeros(2, 2), &MaskRaster::zeros(2, 2)).unwrap(), 1.0);
        assert!(dice(&a, &MaskRaster::zeros(3, 2)).is_err());

        let k = ConfusionCounts { tp: 3, fn_: 1, tn: 4, fp: 4 };
        assert_eq!(sensitivity_specificity(&k), (Some(0.75), Some(0.5)));
        let all = ConfusionCounts::from_masks(&mask(1, 4, vec![1; 4]), &mask(1, 4, vec![1, 0, 1, 0])).unwrap();
        assert_eq!(sensitivity_specificity(&all), (Some(1.0), Some(0.0)));
        let bg = ConfusionCounts::from_masks(&MaskRaster::zeros(2, 2), &MaskRaster::zeros(2, 2)).unwrap();
        assert_eq!(bg.sensitivity(), None);
    }

    #[test]
    fn matches_pixel_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let (h, w) = (rng.random_range(1..=64), rng.random_range(1..=64));
            let p: Vec<u8> = (0..h * w).map(|_| rng.random_range(0..2)).collect();
            let t: Vec<u8> = (0..h * w).map(|_| rng.random_range(0..2)).collect();
            let c = ConfusionCounts::from_masks(&mask(h, w, p.clone()), &mask(h, w, t.clone())).unwrap();
            assert_eq!(c.total(), h * w);
            let inter = p.iter().zip(&t).filter(|(a, b)| **a == 1 && **b == 1).count();
            let (np, nt) = (p.iter().filter(|v| **v == 1).count(), t.iter().filter(|v| **v == 1).count());
            let want = if np + nt == 0 { 1.0 } else { 2.0 * inter as f64 / (np + nt) as f64 };
            assert_eq!(c.dice(), want);
        }
    }

    #[test]
    fn mean_std() {
        let one = MeanStd::of(&[0.7]).unwrap();
        assert_eq!((one.mean, one.std), (0.7, 0.0));
        let two = MeanStd::of(&[1.0, 3.0]).unwrap();
        assert_eq!((two.mean, two.std), (2.0, 1.0));
        assert!(MeanStd::of(&[]).is_none());
    }
}

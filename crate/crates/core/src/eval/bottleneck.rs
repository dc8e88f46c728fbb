use serde::{Deserialize, Serialize};

use super::metrics::ConfusionCounts;
use crate::error::{Error, Result};
use crate::hsdata::MaskRaster;
use crate::models::bilinear_upsample;

/// Adaptive average pooling of a binary mask to `oh x ow`. Output cell `i`
/// covers source rows `floor(i H / oh) .. ceil((i + 1) H / oh)`.
pub fn adaptive_average_pool(mask: &MaskRaster, oh: usize, ow: usize) -> Vec<f64> {
    let (h, w) = (mask.height(), mask.width());
    let bins = |n: usize, o: usize| -> Vec<(usize, usize)> {
        (0..o).map(|i| (i * n / o, ((i + 1) * n).div_ceil(o))).collect()
    };
    let (rows, cols) = (bins(h, oh), bins(w, ow));
    let mut out = Vec::with_capacity(oh * ow);
    for &(r0, r1) in &rows {
        for &(c0, c1) in &cols {
            let mut sum = 0usize;
            for r in r0..r1 {
                sum += mask.labels()[r * w + c0..r * w + c1].iter().map(|&v| v as usize).sum::<usize>();
            }
            out.push(sum as f64 / ((r1 - r0) * (c1 - c0)) as f64);
        }
    }
    out
}

/// Best mask recoverable through an `size x size` bottleneck: pool,
/// threshold at 0.5 (ties to foreground), upsample bilinearly, threshold again.
pub fn bottleneck_reconstruction(mask: &MaskRaster, size: usize) -> Result<MaskRaster> {
    let (h, w) = (mask.height(), mask.width());
    if size == 0 || size > h || size > w {
        return Err(Error::Precondition(format!(
            "bottleneck size {size} must lie in 1..={}",
            h.min(w)
        )));
    }
    let binarize = |v: &[f64]| v.iter().map(|&x| (x >= 0.5) as u8 as f64).collect::<Vec<_>>();
    let pooled = binarize(&adaptive_average_pool(mask, size, size));
    let up = bilinear_upsample(&pooled, (1, size, size), (h, w))?;
    MaskRaster::new(h, w, binarize(&up).iter().map(|&v| v as u8).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BottleneckRow {
    /// Side length of the square feature map; `None` for the full-resolution baseline.
    pub size: Option<usize>,
    pub mean_dice: f64,
}

/// Mean Dice of bottleneck reconstructions, one baseline row followed by one
/// row per requested size.
pub fn bottleneck_experiment(masks: &[&MaskRaster], sizes: &[usize]) -> Result<Vec<BottleneckRow>> {
    if masks.is_empty() {
        return Err(Error::Precondition("bottleneck experiment needs at least one mask".into()));
    }
    let mut rows = vec![BottleneckRow {
        size: None,
        mean_dice: 1.0,
    }];
    for &s in sizes {
        let mut total = 0.0;
        for m in masks {
            total += ConfusionCounts::from_masks(&bottleneck_reconstruction(m, s)?, m)?.dice();
        }
        rows.push(BottleneckRow {
            size: Some(s),
            mean_dice: total / masks.len() as f64,
        });
    }
    Ok(rows)
}

/// CSV with columns `Feature Map Size,Mean Dice`; the baseline row names the
/// full resolution `(h, w)`.
pub fn bottleneck_csv(rows: &[BottleneckRow], (h, w): (usize, usize)) -> String {
    let mut out = String::from("Feature Map Size,Mean Dice\n");
    for r in rows {
        let label = match r.size {
            None => format!("{h}x{w} (Baseline)"),
            Some(s) => format!("{s}x{s}"),
        };
        out.push_str(&format!("{label},{:.6}\n", r.mean_dice));
    }
    out
}

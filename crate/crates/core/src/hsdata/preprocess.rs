//! Per-sample preprocessing: percentile normalization, k-means foreground
//! detection on the transmission channel and column-wise drift correction.

use log::warn;
use serde::{Deserialize, Serialize};

use super::cube::{ChannelKind, HyperCube};
use crate::error::{Error, Result};

const DRIFT_EPS: f64 = 1e-8;

/// Percentile with linear interpolation between order statistics
/// (the same convention as numpy's default).
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let rank = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Rescales so the `p_lo` percentile maps to 0 and `p_hi` to 1, clamping
/// everything outside. A raster whose two percentiles coincide maps to zeros.
pub fn percentile_normalize(raster: &[f32], p_lo: f64, p_hi: f64) -> Result<Vec<f32>> {
    if p_lo.is_nan() || p_hi.is_nan() || p_lo >= p_hi || p_lo < 0.0 || p_hi > 100.0 {
        return Err(Error::Precondition(format!(
            "percentile window ({p_lo}, {p_hi}) must satisfy 0 <= lo < hi <= 100"
        )));
    }
    if raster.is_empty() {
        return Ok(Vec::new());
    }
    if raster.iter().any(|v| !v.is_finite()) {
        return Err(Error::Precondition("raster contains non-finite values".into()));
    }
    let mut sorted: Vec<f64> = raster.iter().map(|&v| v as f64).collect();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let lo = percentile(&sorted, p_lo);
    let hi = percentile(&sorted, p_hi);
    if hi <= lo {
        return Ok(vec![0.0; raster.len()]);
    }
    let span = hi - lo;
    Ok(raster
        .iter()
        .map(|&v| ((v as f64 - lo) / span).clamp(0.0, 1.0) as f32)
        .collect())
}

/// Which k-means cluster counts as foreground.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    /// The cluster whose centroid lies farther from the border median.
    #[default]
    Auto,
    Brighter,
    Darker,
}

/// Two-cluster k-means on pixel intensity.
pub fn kmeans_foreground(
    raster: &[f32],
    height: usize,
    width: usize,
    polarity: Polarity,
) -> Result<Vec<bool>> {
    if raster.len() != height * width || raster.is_empty() {
        return Err(Error::Shape(format!(
            "raster has {} values, expected {height}x{width}",
            raster.len()
        )));
    }
    if raster.iter().any(|v| !v.is_finite()) {
        return Err(Error::Precondition("raster contains non-finite values".into()));
    }
    let values: Vec<f64> = raster.iter().map(|&v| v as f64).collect();
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if min == max {
        warn!("foreground detection on a constant raster; marking everything background");
        return Ok(vec![false; values.len()]);
    }

    let mut centroids = [min, max];
    let mut high = vec![false; values.len()];
    for _ in 0..100 {
        let mut changed = false;
        let (mut sums, mut counts) = ([0.0f64; 2], [0usize; 2]);
        for (v, h) in values.iter().zip(high.iter_mut()) {
            let is_high = (v - centroids[1]).abs() < (v - centroids[0]).abs();
            changed |= is_high != *h;
            *h = is_high;
            sums[is_high as usize] += v;
            counts[is_high as usize] += 1;
        }
        for k in 0..2 {
            if counts[k] > 0 {
                centroids[k] = sums[k] / counts[k] as f64;
            }
        }
        if !changed {
            break;
        }
    }

    let pick_high = match polarity {
        Polarity::Brighter => true,
        Polarity::Darker => false,
        Polarity::Auto => {
            let mut border: Vec<f64> = (0..height)
                .flat_map(|r| (0..width).map(move |c| (r, c)))
                .filter(|&(r, c)| r == 0 || c == 0 || r + 1 == height || c + 1 == width)
                .map(|(r, c)| values[r * width + c])
                .collect();
            border.sort_by(|a, b| a.total_cmp(b));
            let med = percentile(&border, 50.0);
            (centroids[1] - med).abs() > (centroids[0] - med).abs()
        }
    };
    Ok(high.into_iter().map(|h| h == pick_high).collect())
}

/// Multiplies every column of every channel by `global_fg_mean / column_fg_mean`.
/// Columns without foreground (or with a mean below 1e-8) are left alone.
pub fn column_drift_correct(cube: &HyperCube, foreground: &[bool]) -> Result<HyperCube> {
    let (channels, height, width) = cube.dims();
    if foreground.len() != height * width {
        return Err(Error::Shape(format!(
            "foreground map has {} pixels, cube is {height}x{width}",
            foreground.len()
        )));
    }
    if !foreground.iter().any(|&f| f) {
        warn!("drift correction skipped: no foreground pixels");
        return Ok(cube.clone());
    }
    let mut data = cube.data().to_vec();
    let plane = height * width;
    for k in 0..channels {
        let chan = &mut data[k * plane..(k + 1) * plane];
        let mut col_sum = vec![0.0f64; width];
        let mut col_n = vec![0usize; width];
        for r in 0..height {
            for c in 0..width {
                if foreground[r * width + c] {
                    col_sum[c] += chan[r * width + c] as f64;
                    col_n[c] += 1;
                }
            }
        }
        let total: f64 = col_sum.iter().sum();
        let n: usize = col_n.iter().sum();
        let global = total / n as f64;
        for c in 0..width {
            if col_n[c] == 0 {
                continue;
            }
            let m_col = col_sum[c] / col_n[c] as f64;
            if m_col < DRIFT_EPS {
                continue;
            }
            let factor = global / m_col;
            if factor == 1.0 {
                continue;
            }
            for r in 0..height {
                let v = &mut chan[r * width + c];
                *v = (*v as f64 * factor) as f32;
            }
        }
    }
    Ok(cube.with_data(data))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreprocessOrder {
    #[default]
    DriftThenNormalize,
    NormalizeThenDrift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub enabled: bool,
    pub drift_correction: bool,
    pub order: PreprocessOrder,
    pub foreground: Polarity,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            drift_correction: true,
            order: PreprocessOrder::default(),
            foreground: Polarity::Auto,
        }
    }
}

/// Normalizes every channel with the window its kind prescribes.
pub fn normalize_cube(cube: &HyperCube) -> Result<HyperCube> {
    let mut out = cube.clone();
    for k in 0..cube.channels() {
        let (lo, hi) = cube.channel_kinds[k].percentile_window();
        let norm = percentile_normalize(cube.channel(k), lo, hi)?;
        out.channel_mut(k).copy_from_slice(&norm);
    }
    Ok(out)
}

fn drift_correct_by_transmission(cube: &HyperCube, polarity: Polarity) -> Result<HyperCube> {
    let Some(t) = cube.find_kind(ChannelKind::Transmission) else {
        warn!("no transmission channel; drift correction skipped");
        return Ok(cube.clone());
    };
    let fg = kmeans_foreground(cube.channel(t), cube.height(), cube.width(), polarity)?;
    column_drift_correct(cube, &fg)
}

/// Full preprocessing pipeline for one cube.
pub fn preprocess_cube(cube: &HyperCube, cfg: &PreprocessConfig) -> Result<HyperCube> {
    if !cfg.enabled {
        return Ok(cube.clone());
    }
    match (cfg.drift_correction, cfg.order) {
        (false, _) => normalize_cube(cube),
        (true, PreprocessOrder::DriftThenNormalize) => {
            normalize_cube(&drift_correct_by_transmission(cube, cfg.foreground)?)
        }
        (true, PreprocessOrder::NormalizeThenDrift) => {
            drift_correct_by_transmission(&normalize_cube(cube)?, cfg.foreground)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_midpoint_maps_to_half() {
        let ramp: Vec<f32> = (0..=100).map(|v| v as f32).collect();
        let out = percentile_normalize(&ramp, 5.0, 95.0).unwrap();
        // Oracle: with 101 evenly spaced values the p-th percentile is p itself.
        let sorted: Vec<f64> = (0..=100).map(f64::from).collect();
        let (lo, hi) = (percentile(&sorted, 5.0), percentile(&sorted, 95.0));
        assert_eq!((lo, hi), (5.0, 95.0));
        assert!((out[50] - 0.5).abs() < 1e-7);
        assert!((out[50] as f64 - (50.0 - lo) / (hi - lo)).abs() < 1e-7);
        assert!(out[..=5].iter().all(|&v| v == 0.0));
        assert!(out[95..].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn constant_raster_normalizes_to_zero() {
        let out = percentile_normalize(&[3.0; 10], 5.0, 95.0).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bad_window_is_rejected() {
        assert!(percentile_normalize(&[1.0, 2.0], 95.0, 5.0).is_err());
        assert!(percentile_normalize(&[1.0, 2.0], 5.0, 5.0).is_err());
        assert!(percentile_normalize(&[1.0, f32::NAN], 5.0, 95.0).is_err());
    }

    fn blob_raster() -> (Vec<f32>, Vec<bool>) {
        let (h, w) = (12, 12);
        let mut r = vec![0.9f32; h * w];
        let mut truth = vec![false; h * w];
        for row in 4..8 {
            for col in 3..9 {
                r[row * w + col] = 0.1;
                truth[row * w + col] = true;
            }
        }
        (r, truth)
    }

    #[test]
    fn dark_blob_is_foreground() {
        let (r, truth) = blob_raster();
        assert_eq!(kmeans_foreground(&r, 12, 12, Polarity::Darker).unwrap(), truth);
        assert_eq!(kmeans_foreground(&r, 12, 12, Polarity::Auto).unwrap(), truth);
        let bright = kmeans_foreground(&r, 12, 12, Polarity::Brighter).unwrap();
        assert!(bright.iter().zip(&truth).all(|(a, b)| a != b));
    }

    #[test]
    fn constant_raster_is_all_background() {
        let fg = kmeans_foreground(&[0.5; 9], 3, 3, Polarity::Auto).unwrap();
        assert!(fg.iter().all(|&f| !f));
    }

    #[test]
    fn binary_raster_clusters_coincide_with_values() {
        let r = [0.0f32, 1.0, 1.0, 0.0, 1.0, 0.0];
        let fg = kmeans_foreground(&r, 2, 3, Polarity::Brighter).unwrap();
        assert_eq!(fg, r.iter().map(|&v| v == 1.0).collect::<Vec<_>>());
    }

    fn column_means(cube: &HyperCube, k: usize) -> Vec<f64> {
        let (h, w) = (cube.height(), cube.width());
        (0..w)
            .map(|c| (0..h).map(|r| cube.get(k, r, c) as f64).sum::<f64>() / h as f64)
            .collect()
    }

    #[test]
    fn doubled_column_is_equalized() {
        let (c, h, w) = (2, 5, 6);
        let mut data = Vec::new();
        for k in 0..c {
            for r in 0..h {
                for col in 0..w {
                    let base = 1.0 + k as f32 + 0.1 * r as f32;
                    data.push(if col == 2 { 2.0 * base } else { base });
                }
            }
        }
        let cube = HyperCube::from_raw(c, h, w, data).unwrap();
        let out = column_drift_correct(&cube, &vec![true; h * w]).unwrap();
        for k in 0..c {
            let means = column_means(&out, k);
            for m in &means {
                assert!((m - means[0]).abs() < 1e-6, "{means:?}");
            }
        }
    }

    #[test]
    fn drift_free_cube_is_unchanged() {
        let data: Vec<f32> = (0..3 * 4 * 4).map(|i| ((i / 4) % 7) as f32 * 0.25 + 1.0).collect();
        let cube = HyperCube::from_raw(3, 4, 4, data).unwrap();
        let out = column_drift_correct(&cube, &[true; 16]).unwrap();
        assert_eq!(out, cube);
    }

    #[test]
    fn column_without_foreground_is_untouched() {
        let data: Vec<f32> = (0..16).map(|i| 1.0 + (i % 4) as f32).collect();
        let cube = HyperCube::from_raw(1, 4, 4, data).unwrap();
        let mut fg = vec![true; 16];
        for r in 0..4 {
            fg[r * 4 + 3] = false;
        }
        let out = column_drift_correct(&cube, &fg).unwrap();
        for r in 0..4 {
            assert_eq!(out.get(0, r, 3), cube.get(0, r, 3));
        }
        let empty = column_drift_correct(&cube, &[false; 16]).unwrap();
        assert_eq!(empty, cube);
    }
}

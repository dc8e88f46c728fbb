//! Synthetic hyperspectral samples with controllable class separation.
//!
//! Each sample is a glass slide with one tissue section on it. Inside the
//! tissue, smooth random blobs are tumour (label 1); everything else is
//! background (label 0). Healthy tissue spectra peak near the lipid band
//! (~2850 cm⁻¹), tumour near the protein band (~2950 cm⁻¹). The `overlap`
//! knob slides both peaks toward their midpoint: at 0 the classes are
//! trivially separable, at 1 their Raman spectra are identical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::cube::{ChannelKind, HyperCube, MaskRaster, Sample};
use crate::error::{Error, Result};

/// Smallest synthetic image side.
pub const MIN_SIZE: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub raman_channels: usize,
    /// First and last Raman wavenumber (cm⁻¹), evenly spaced.
    pub wavenumber_range: (f64, f64),
    pub background_peak: f64,
    pub foreground_peak: f64,
    /// Gaussian peak width (standard deviation, cm⁻¹).
    pub peak_width: f64,
    /// 0 = separable spectra, 1 = identical spectra.
    pub overlap: f64,
    pub noise_sigma: f64,
    pub tumour_blobs: (usize, usize),
    /// Blob radius range as a fraction of the shorter image side.
    pub blob_radius: (f64, f64),
    /// Tissue ellipse semi-axis range as a fraction of the image side.
    pub tissue_radius: (f64, f64),
    /// Relative amplitude of smooth multiplicative tissue texture.
    pub texture: f64,
    /// Relative amplitude of the injected multiplicative column drift.
    pub column_drift: f64,
    pub samples_per_patient: usize,
    /// Per-patient multiplicative gain spread (standard deviation).
    pub patient_gain_sigma: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            raman_channels: 21,
            wavenumber_range: (2802.0, 3094.0),
            background_peak: 2850.0,
            foreground_peak: 2950.0,
            peak_width: 40.0,
            overlap: 0.5,
            noise_sigma: 0.05,
            tumour_blobs: (1, 3),
            blob_radius: (0.10, 0.20),
            tissue_radius: (0.36, 0.46),
            texture: 0.15,
            column_drift: 0.15,
            samples_per_patient: 2,
            patient_gain_sigma: 0.05,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic generator: {m}")));
        if self.raman_channels < 2 {
            return bad("raman_channels must be >= 2");
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return bad("overlap must lie in [0, 1]");
        }
        if self.noise_sigma < 0.0 || self.texture < 0.0 || self.column_drift < 0.0 || self.column_drift >= 1.0 {
            return bad("noise_sigma, texture must be >= 0 and column_drift in [0, 1)");
        }
        if self.tumour_blobs.0 > self.tumour_blobs.1 || self.tumour_blobs.1 == 0 {
            return bad("tumour_blobs must be a non-empty (min, max) range");
        }
        if self.blob_radius.0 <= 0.0 || self.blob_radius.0 > self.blob_radius.1 {
            return bad("blob_radius must be a positive (min, max) range");
        }
        if self.tissue_radius.0 <= 0.0 || self.tissue_radius.0 > self.tissue_radius.1 {
            return bad("tissue_radius must be a positive (min, max) range");
        }
        if self.samples_per_patient == 0 {
            return bad("samples_per_patient must be >= 1");
        }
        if self.peak_width <= 0.0 {
            return bad("peak_width must be positive");
        }
        Ok(())
    }

    pub fn total_channels(&self) -> usize {
        self.raman_channels + 3
    }

    pub fn wavenumbers(&self) -> Vec<f64> {
        let (a, b) = self.wavenumber_range;
        let n = self.raman_channels;
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }

    /// Peak centres after applying `overlap`: (background, foreground).
    pub fn peak_centres(&self) -> (f64, f64) {
        let half = 0.5 * (self.foreground_peak - self.background_peak) * self.overlap;
        (self.background_peak + half, self.foreground_peak - half)
    }
}

const GLASS_RAMAN: f32 = 0.02;
const GLASS_TRANSMISSION: f32 = 0.95;
const TISSUE_TRANSMISSION: f32 = 0.45;

struct Waves {
    terms: Vec<(f64, f64, f64)>,
}

impl Waves {
    fn new(rng: &mut ChaCha8Rng, n: usize) -> Self {
        let terms = (0..n)
            .map(|_| {
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                let freq = rng.random_range(1.0..4.0) * std::f64::consts::TAU;
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                (freq * theta.cos(), freq * theta.sin(), phase)
            })
            .collect();
        Self { terms }
    }

    /// Smooth field in [-1, 1] over unit coordinates.
    fn at(&self, x: f64, y: f64) -> f64 {
        self.terms.iter().map(|(fx, fy, p)| (fx * x + fy * y + p).sin()).sum::<f64>() / self.terms.len() as f64
    }
}

fn patient_gain(seed: u64, patient: usize, sigma: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 << 32 | patient as u64);
    1.0 + sigma * rng.sample::<f64, _>(rand_distr::StandardNormal)
}

fn generate_one(index: usize, height: usize, width: usize, seed: u64, cfg: &SynthConfig) -> Result<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let patient = index / cfg.samples_per_patient;
    let gain = patient_gain(seed, patient, cfg.patient_gain_sigma);

    let (h, w) = (height as f64, width as f64);
    let side = h.min(w);

    // Tissue section: wobbly ellipse near the centre.
    let tcx = rng.random_range(0.45..0.55) * w;
    let tcy = rng.random_range(0.45..0.55) * h;
    let rx = rng.random_range(cfg.tissue_radius.0..=cfg.tissue_radius.1) * w;
    let ry = rng.random_range(cfg.tissue_radius.0..=cfg.tissue_radius.1) * h;
    let wobble_phase = rng.random_range(0.0..std::f64::consts::TAU);

    // Tumour blobs with centres well inside the tissue.
    let n_blobs = rng.random_range(cfg.tumour_blobs.0..=cfg.tumour_blobs.1);
    let blobs: Vec<(f64, f64, f64)> = (0..n_blobs)
        .map(|_| {
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            let rho = rng.random_range(0.0f64..0.6).sqrt() * 0.8;
            let r = rng.random_range(cfg.blob_radius.0..=cfg.blob_radius.1) * side;
            (tcx + rho * rx * a.cos(), tcy + rho * ry * a.sin(), r)
        })
        .collect();

    let texture = Waves::new(&mut rng, 3);
    let drift_freq = rng.random_range(0.5..1.5);
    let drift_phase = rng.random_range(0.0..std::f64::consts::TAU);

    let plane = height * width;
    let mut tissue = vec![false; plane];
    let mut labels = vec![0u8; plane];
    let mut amp = vec![0.0f64; plane];
    for r in 0..height {
        for c in 0..width {
            let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
            let (dx, dy) = ((x - tcx) / rx, (y - tcy) / ry);
            let theta = dy.atan2(dx);
            let inside = dx * dx + dy * dy <= 1.0 + 0.08 * (3.0 * theta + wobble_phase).sin();
            let i = r * width + c;
            tissue[i] = inside;
            if inside {
                let field: f64 = blobs
                    .iter()
                    .map(|&(bx, by, br)| (-((x - bx).powi(2) + (y - by).powi(2)) / (2.0 * br * br)).exp())
                    .sum();
                labels[i] = u8::from(field >= 0.5);
                amp[i] = gain * (1.0 + cfg.texture * texture.at(x / w, y / h));
            }
        }
    }

    let wn = cfg.wavenumbers();
    let (c_bg, c_fg) = cfg.peak_centres();
    let peak = |centre: f64| -> Vec<f64> {
        wn.iter()
            .map(|v| 0.1 + (-(v - centre).powi(2) / (2.0 * cfg.peak_width * cfg.peak_width)).exp())
            .collect()
    };
    let (spec_bg, spec_fg) = (peak(c_bg), peak(c_fg));
    let sep = 1.0 - cfg.overlap;
    let drift: Vec<f64> = (0..width)
        .map(|c| {
            1.0 + cfg.column_drift
                * (std::f64::consts::TAU * drift_freq * (c as f64 + 0.5) / w + drift_phase).sin()
        })
        .collect();

    let channels = cfg.total_channels();
    let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE)).unwrap();
    let mut data = vec![0.0f32; channels * plane];
    for k in 0..channels {
        for i in 0..plane {
            let fg = labels[i] == 1;
            let clean = if !tissue[i] {
                match k {
                    _ if k < cfg.raman_channels => GLASS_RAMAN as f64,
                    _ if k == cfg.raman_channels => GLASS_TRANSMISSION as f64,
                    _ => GLASS_RAMAN as f64,
                }
            } else if k < cfg.raman_channels {
                amp[i] * if fg { spec_fg[k] } else { spec_bg[k] }
            } else if k == cfg.raman_channels {
                TISSUE_TRANSMISSION as f64 * (2.0 - amp[i] / gain)
            } else if k == cfg.raman_channels + 1 {
                // TPEF: mildly brighter in tumour.
                amp[i] * (0.3 + if fg { 0.1 * sep } else { 0.0 })
            } else {
                // SHG: collagen-rich stroma is brighter than tumour.
                amp[i] * (0.4 - if fg { 0.2 * sep } else { 0.0 })
            };
            let n = if cfg.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            data[k * plane + i] = ((clean + n) * drift[i % width]) as f32;
        }
    }

    let mut wavenumbers: Vec<Option<f64>> = wn.into_iter().map(Some).collect();
    wavenumbers.extend([None, None, None]);
    let mut kinds = vec![ChannelKind::Raman; cfg.raman_channels];
    kinds.extend([ChannelKind::Transmission, ChannelKind::Tpef, ChannelKind::Shg]);
    let cube = HyperCube::new(channels, height, width, data, wavenumbers, kinds)?;
    let mask = MaskRaster::new(height, width, labels)?;
    Sample::new(format!("S{index:03}"), format!("P{patient:02}"), cube, mask)
}

/// Generates `n_samples` samples; identical arguments give bit-identical output.
pub fn generate_synthetic(
    n_samples: usize,
    height: usize,
    width: usize,
    seed: u64,
    cfg: &SynthConfig,
) -> Result<Vec<Sample>> {
    if height < MIN_SIZE || width < MIN_SIZE {
        return Err(Error::Precondition(format!(
            "synthetic images must be at least {MIN_SIZE}x{MIN_SIZE}, got {height}x{width}"
        )));
    }
    cfg.validate()?;
    (0..n_samples)
        .map(|i| generate_one(i, height, width, seed, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_shaped() {
        let cfg = SynthConfig::default();
        let a = generate_synthetic(3, 64, 64, 11, &cfg).unwrap();
        let b = generate_synthetic(3, 64, 64, 11, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].cube.channels(), 24);
        assert_eq!(a[0].cube.channel_kinds[21], ChannelKind::Transmission);
        assert_eq!(a[2].patient_id, "P01");
        let c = generate_synthetic(3, 64, 64, 12, &cfg).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empty_and_too_small() {
        assert!(generate_synthetic(0, 64, 64, 0, &SynthConfig::default()).unwrap().is_empty());
        assert!(generate_synthetic(1, 32, 64, 0, &SynthConfig::default()).is_err());
    }

    #[test]
    fn wavenumbers_span_ch_stretch() {
        let wn = SynthConfig::default().wavenumbers();
        assert_eq!(wn.len(), 21);
        assert_eq!(wn[0], 2802.0);
        assert_eq!(wn[20], 3094.0);
    }

    #[test]
    fn every_sample_has_both_classes() {
        let samples = generate_synthetic(6, 96, 96, 5, &SynthConfig::default()).unwrap();
        for s in &samples {
            let fg = s.mask.foreground_count();
            assert!(fg > 0 && fg < 96 * 96, "{}: {fg}", s.sample_id);
        }
    }
}

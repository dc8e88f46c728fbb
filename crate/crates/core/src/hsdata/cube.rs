use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Acquisition modality of one cube channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Raman,
    Transmission,
    Tpef,
    Shg,
}

impl ChannelKind {
    /// Percentile window used when normalizing a channel of this kind.
    pub fn percentile_window(self) -> (f64, f64) {
        match self {
            ChannelKind::Raman => (5.0, 95.0),
            ChannelKind::Transmission | ChannelKind::Tpef | ChannelKind::Shg => (1.0, 99.0),
        }
    }
}

/// Channel-first floating raster of per-pixel spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperCube {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
    /// Raman shift in cm⁻¹; `None` for non-Raman channels.
    pub wavenumbers: Vec<Option<f64>>,
    pub channel_kinds: Vec<ChannelKind>,
}

impl HyperCube {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
        wavenumbers: Vec<Option<f64>>,
        channel_kinds: Vec<ChannelKind>,
    ) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "cube data has {} values, expected {channels}x{height}x{width}",
                data.len()
            )));
        }
        if wavenumbers.len() != channels || channel_kinds.len() != channels {
            return Err(Error::Shape(format!(
                "cube metadata describes {}/{} channels, expected {channels}",
                wavenumbers.len(),
                channel_kinds.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Precondition(format!(
                "cube value at flat index {i} is not finite"
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
            wavenumbers,
            channel_kinds,
        })
    }

    /// Cube with all channels tagged Raman and no wavenumbers; handy for tests.
    pub fn from_raw(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(
            channels,
            height,
            width,
            data,
            vec![None; channels],
            vec![ChannelKind::Raman; channels],
        )
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn channel(&self, k: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[k * plane..(k + 1) * plane]
    }

    pub fn channel_mut(&mut self, k: usize) -> &mut [f32] {
        let plane = self.height * self.width;
        &mut self.data[k * plane..(k + 1) * plane]
    }

    pub fn get(&self, k: usize, row: usize, col: usize) -> f32 {
        self.data[(k * self.height + row) * self.width + col]
    }

    /// Index of the first channel of the given kind.
    pub fn find_kind(&self, kind: ChannelKind) -> Option<usize> {
        self.channel_kinds.iter().position(|&k| k == kind)
    }

    /// Spatial crop `[top, top+h) x [left, left+w)` across all channels.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        if top + h > self.height || left + w > self.width {
            return Err(Error::Shape(format!(
                "crop {h}x{w} at ({top},{left}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(self.channels * h * w);
        for k in 0..self.channels {
            let plane = self.channel(k);
            for r in top..top + h {
                data.extend_from_slice(&plane[r * self.width + left..r * self.width + left + w]);
            }
        }
        Ok(Self {
            channels: self.channels,
            height: h,
            width: w,
            data,
            wavenumbers: self.wavenumbers.clone(),
            channel_kinds: self.channel_kinds.clone(),
        })
    }

    /// Left-right mirror.
    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for row in out.data.chunks_mut(self.width) {
            row.reverse();
        }
        out
    }

    pub(crate) fn with_data(&self, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self {
            data,
            ..self.clone()
        }
    }
}

/// Per-pixel binary labels: 0 background, 1 foreground (tumour).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskRaster {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl MaskRaster {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Shape(format!(
                "mask has {} labels, expected {height}x{width}",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Precondition(format!(
                "mask label {bad} outside {{0, 1}}"
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            labels: vec![0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    pub fn foreground_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        if top + h > self.height || left + w > self.width {
            return Err(Error::Shape(format!(
                "crop {h}x{w} at ({top},{left}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let labels = (top..top + h)
            .flat_map(|r| self.labels[r * self.width + left..r * self.width + left + w].iter().copied())
            .collect();
        Ok(Self {
            height: h,
            width: w,
            labels,
        })
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for row in out.labels.chunks_mut(self.width) {
            row.reverse();
        }
        out
    }

    /// Nearest-neighbor resample to `h x w`, sampling each output cell at its center.
    pub fn downsample_nearest(&self, h: usize, w: usize) -> Self {
        let mut labels = Vec::with_capacity(h * w);
        for r in 0..h {
            let src_r = ((2 * r + 1) * self.height) / (2 * h);
            for c in 0..w {
                let src_c = ((2 * c + 1) * self.width) / (2 * w);
                labels.push(self.get(src_r.min(self.height - 1), src_c.min(self.width - 1)));
            }
        }
        Self {
            height: h,
            width: w,
            labels,
        }
    }
}

/// One annotated acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub sample_id: String,
    pub patient_id: String,
    pub cube: HyperCube,
    pub mask: MaskRaster,
}

impl Sample {
    pub fn new(
        sample_id: impl Into<String>,
        patient_id: impl Into<String>,
        cube: HyperCube,
        mask: MaskRaster,
    ) -> Result<Self> {
        if cube.height() != mask.height() || cube.width() != mask.width() {
            return Err(Error::Shape(format!(
                "mask {}x{} does not match cube {}x{}",
                mask.height(),
                mask.width(),
                cube.height(),
                cube.width()
            )));
        }
        Ok(Self {
            sample_id: sample_id.into(),
            patient_id: patient_id.into(),
            cube,
            mask,
        })
    }
}

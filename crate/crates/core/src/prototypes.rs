//! Prototype initialization, projection onto training latents and region
//! extraction.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsdata::preprocess::percentile;
use crate::hsdata::{MaskRaster, Sample};
use crate::models::{bilinear_upsample, Mode, Model};
use crate::substrate::{cubes_to_tensor, device, to_f64_vec, Initializer};

/// Half-width `1 / sqrt(D * H_P * W_P)` of the prototype init interval.
pub fn xavier_bound(depth: usize, hp: usize, wp: usize) -> f64 {
    1.0 / ((depth * hp * wp) as f64).sqrt()
}

/// `D * H_P * W_P` values drawn i.i.d. from `U(-b, b)`.
pub fn xavier_init_prototype(depth: usize, hp: usize, wp: usize, seed: u64) -> Vec<f64> {
    let n = depth * hp * wp;
    Initializer::new(seed).uniform(n, xavier_bound(depth, hp, wp))
}

/// Latent position a prototype was projected onto.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub sample_id: String,
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeMeta {
    pub id: usize,
    pub class_id: usize,
    pub projected: bool,
    pub provenance: Option<Provenance>,
}

impl PrototypeMeta {
    pub fn new(id: usize, class_id: usize) -> Self {
        Self {
            id,
            class_id,
            projected: false,
            provenance: None,
        }
    }
}

/// One sample's latent map `(D, H, W)` with its downsampled labels.
#[derive(Debug, Clone)]
pub struct LatentRecord {
    pub sample_id: String,
    pub dims: (usize, usize, usize),
    pub values: Vec<f64>,
    pub labels: Vec<u8>,
}

impl LatentRecord {
    /// Zero-padded `(D, hp, wp)` patch centred at `(row, col)`.
    pub fn patch(&self, row: usize, col: usize, (hp, wp): (usize, usize), out: &mut Vec<f64>) {
        let (d, h, w) = self.dims;
        out.clear();
        for k in 0..d {
            for dr in 0..hp {
                for dc in 0..wp {
                    let r = row as isize + dr as isize - (hp / 2) as isize;
                    let c = col as isize + dc as isize - (wp / 2) as isize;
                    out.push(if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
                        0.0
                    } else {
                        self.values[(k * h + r as usize) * w + c as usize]
                    });
                }
            }
        }
    }
}

/// Result of projecting a set of prototypes.
#[derive(Debug, Clone)]
pub struct Projection {
    /// New prototype values, `(M, D, hp, wp)` flattened.
    pub values: Vec<f64>,
    pub meta: Vec<PrototypeMeta>,
    /// Squared distance from each prototype to its replacement.
    pub distances: Vec<f64>,
}

/// Replaces every prototype by the nearest same-class latent patch in the
/// training set. Candidates are scanned in `(sample_id, row, col)` order and
/// only a strictly smaller distance replaces the incumbent.
pub fn project_prototypes(
    prototypes: &[f64],
    (m, d, hp, wp): (usize, usize, usize, usize),
    class_of: &[usize],
    latents: &[LatentRecord],
) -> Result<Projection> {
    let plen = d * hp * wp;
    if prototypes.len() != m * plen || class_of.len() != m {
        return Err(Error::Shape("prototype values do not match (M, D, hp, wp)".into()));
    }
    let mut order: Vec<&LatentRecord> = latents.iter().collect();
    order.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    for l in &order {
        if l.dims.0 != d {
            return Err(Error::Shape(format!(
                "latent depth {} differs from prototype depth {d}",
                l.dims.0
            )));
        }
    }

    let mut best: Vec<Option<(f64, Provenance, Vec<f64>)>> = vec![None; m];
    let mut patch = Vec::with_capacity(plen);
    for rec in order {
        let (_, h, w) = rec.dims;
        for row in 0..h {
            for col in 0..w {
                let label = rec.labels[row * w + col] as usize;
                let mut extracted = false;
                for j in (0..m).filter(|&j| class_of[j] == label) {
                    if !extracted {
                        rec.patch(row, col, (hp, wp), &mut patch);
                        extracted = true;
                    }
                    let p = &prototypes[j * plen..(j + 1) * plen];
                    let dist: f64 = p.iter().zip(&patch).map(|(a, b)| (a - b) * (a - b)).sum();
                    if best[j].as_ref().is_none_or(|(bd, _, _)| dist < *bd) {
                        let prov = Provenance {
                            sample_id: rec.sample_id.clone(),
                            row,
                            col,
                        };
                        best[j] = Some((dist, prov, patch.clone()));
                    }
                }
            }
        }
    }

    let missing: std::collections::BTreeSet<usize> = (0..m)
        .filter(|&j| best[j].is_none())
        .map(|j| class_of[j])
        .collect();
    if !missing.is_empty() {
        return Err(Error::Precondition(format!(
            "no training latent positions for class(es) {missing:?}; cannot project"
        )));
    }
    let mut values = Vec::with_capacity(m * plen);
    let mut meta = Vec::with_capacity(m);
    let mut distances = Vec::with_capacity(m);
    for (j, b) in best.into_iter().enumerate() {
        let (dist, prov, patch) = b.unwrap();
        values.extend(patch);
        distances.push(dist);
        meta.push(PrototypeMeta {
            id: j,
            class_id: class_of[j],
            projected: true,
            provenance: Some(prov),
        });
    }
    Ok(Projection {
        values,
        meta,
        distances,
    })
}

/// Evaluation-mode latent maps of `samples` under `model`.
pub fn collect_latents(model: &Model, samples: &[&Sample]) -> Result<Vec<LatentRecord>> {
    let net = model
        .ramanseg()
        .ok_or_else(|| Error::Precondition("latent maps need a prototype model".into()))?;
    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        let x = cubes_to_tensor(&[&s.cube], model.precision())?;
        let z = net.encode(&x, Mode::Eval, &mut None)?;
        let (_, d, h, w) = z.dims4()?;
        out.push(LatentRecord {
            sample_id: s.sample_id.clone(),
            dims: (d, h, w),
            values: to_f64_vec(&z)?,
            labels: s.mask.downsample_nearest(h, w).labels().to_vec(),
        });
    }
    Ok(out)
}

/// Projects the model's prototypes onto the latents of `samples` in place.
pub fn project_model(model: &mut Model, samples: &[&Sample]) -> Result<Projection> {
    let latents = collect_latents(model, samples)?;
    let cfg = model.config().clone();
    let net = model
        .ramanseg_mut()
        .ok_or_else(|| Error::Precondition("projection needs a prototype model".into()))?;
    let var = net.prototypes();
    let (m, d, hp, wp) = var.as_tensor().dims4()?;
    let current = to_f64_vec(var.as_tensor())?;
    let proj = project_prototypes(&current, (m, d, hp, wp), &cfg.prototype_classes(), &latents)?;
    let t = Tensor::from_vec(proj.values.clone(), (m, d, hp, wp), &device())?.to_dtype(var.dtype())?;
    var.set(&t)?;
    net.meta = proj.meta.clone();
    Ok(proj)
}

/// Half-open bounding box `[top, bottom) x [left, right)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeRegion {
    pub prototype_id: usize,
    pub sample_id: String,
    pub peak_similarity: f64,
    pub bbox: BoundingBox,
    /// Ground-truth class proportions inside the box; sums to 1.
    pub class_proportions: Vec<f64>,
}

/// Box around the pixels at or above the `quantile` of `activation`, and the
/// class proportions of `mask` within it.
pub fn region_from_activation(
    activation: &[f64],
    mask: &MaskRaster,
    quantile: f64,
    num_classes: usize,
) -> Result<(BoundingBox, Vec<f64>)> {
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(Error::Config(format!("activation quantile {quantile} must lie in (0, 1)")));
    }
    let (h, w) = (mask.height(), mask.width());
    if activation.len() != h * w {
        return Err(Error::Shape("activation raster does not match the mask".into()));
    }
    let mut sorted = activation.to_vec();
    sorted.sort_by(f64::total_cmp);
    let thr = percentile(&sorted, quantile * 100.0);
    let mut bbox = BoundingBox {
        top: h,
        left: w,
        bottom: 0,
        right: 0,
    };
    for r in 0..h {
        for c in 0..w {
            if activation[r * w + c] >= thr {
                bbox.top = bbox.top.min(r);
                bbox.left = bbox.left.min(c);
                bbox.bottom = bbox.bottom.max(r + 1);
                bbox.right = bbox.right.max(c + 1);
            }
        }
    }
    Ok((bbox, box_proportions(mask, &bbox, num_classes)))
}

/// Per-class pixel fractions of `mask` inside `bbox`.
pub fn box_proportions(mask: &MaskRaster, bbox: &BoundingBox, num_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; num_classes];
    for r in bbox.top..bbox.bottom {
        for c in bbox.left..bbox.right {
            counts[mask.get(r, c) as usize] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    counts.iter().map(|&k| k as f64 / total.max(1) as f64).collect()
}

/// Evaluation-mode similarity maps `(M, Hd, Wd)` of each sample, in sample-id order.
/// A sample with its flattened similarity map and `(M, H_d, W_d)`.
type SampleMap<'a> = (&'a Sample, Vec<f64>, (usize, usize, usize));

fn similarity_maps<'a>(model: &Model, samples: &[&'a Sample]) -> Result<Vec<SampleMap<'a>>> {
    let mut ordered: Vec<&Sample> = samples.to_vec();
    ordered.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    ordered
        .into_iter()
        .map(|s| {
            let x = cubes_to_tensor(&[&s.cube], model.precision())?;
            let sim = model
                .forward(&x, Mode::Eval)?
                .latent
                .ok_or_else(|| Error::Precondition("similarity maps need a prototype model".into()))?
                .similarity;
            let (_, m, hd, wd) = sim.dims4()?;
            Ok((s, to_f64_vec(&sim)?, (m, hd, wd)))
        })
        .collect()
}

fn region_for(
    j: usize,
    maps: &[SampleMap<'_>],
    quantile: f64,
    num_classes: usize,
) -> Result<PrototypeRegion> {
    let mut best: Option<(f64, usize)> = None;
    for (i, (_, map, (m, hd, wd))) in maps.iter().enumerate() {
        if j >= *m {
            return Err(Error::Precondition(format!("prototype {j} out of range (M = {m})")));
        }
        let peak = map[j * hd * wd..(j + 1) * hd * wd]
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        if best.is_none_or(|(b, _)| peak > b) {
            best = Some((peak, i));
        }
    }
    let (peak, i) = best.ok_or_else(|| Error::Precondition("prototype region needs at least one sample".into()))?;
    let (sample, map, (_, hd, wd)) = &maps[i];
    let (h, w) = (sample.mask.height(), sample.mask.width());
    let channel = &map[j * hd * wd..(j + 1) * hd * wd];
    let up = bilinear_upsample(channel, (1, *hd, *wd), (h, w))?;
    let (bbox, class_proportions) = region_from_activation(&up, &sample.mask, quantile, num_classes)?;
    Ok(PrototypeRegion {
        prototype_id: j,
        sample_id: sample.sample_id.clone(),
        peak_similarity: peak,
        bbox,
        class_proportions,
    })
}

/// Default similarity quantile that bounds a prototype region.
pub const DEFAULT_ACTIVATION_QUANTILE: f64 = 0.95;

/// Locates the training sample where prototype `j` is most active, then
/// extracts its high-activation region at input resolution.
pub fn prototype_region(model: &Model, j: usize, samples: &[&Sample], quantile: f64) -> Result<PrototypeRegion> {
    let maps = similarity_maps(model, samples)?;
    region_for(j, &maps, quantile, model.config().num_classes)
}

/// [`prototype_region`] for every prototype, sharing one forward pass per sample.
pub fn prototype_regions(model: &Model, samples: &[&Sample], quantile: f64) -> Result<Vec<PrototypeRegion>> {
    let maps = similarity_maps(model, samples)?;
    (0..model.config().num_prototypes())
        .map(|j| region_for(j, &maps, quantile, model.config().num_classes))
        .collect()
}

/// One entry of the prototype report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeReportEntry {
    pub id: usize,
    pub class_id: usize,
    pub projected: bool,
    pub provenance: Option<Provenance>,
    pub class_proportions: Option<Vec<f64>>,
}

pub fn prototype_report(meta: &[PrototypeMeta], regions: &[PrototypeRegion]) -> Vec<PrototypeReportEntry> {
    meta.iter()
        .map(|p| PrototypeReportEntry {
            id: p.id,
            class_id: p.class_id,
            projected: p.projected,
            provenance: p.provenance.clone(),
            class_proportions: regions
                .iter()
                .find(|r| r.prototype_id == p.id)
                .map(|r| r.class_proportions.clone()),
        })
        .collect()
}

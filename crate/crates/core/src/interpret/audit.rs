use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsdata::Sample;
use crate::models::Model;
use crate::prototypes::prototype_regions;
use crate::substrate::to_f64_vec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionRow {
    pub prototype_id: usize,
    pub class_id: usize,
    pub sample_id: String,
    pub proportions: Vec<f64>,
}

impl ProportionRow {
    /// Class with the largest share of the region (lowest index on ties).
    pub fn majority_class(&self) -> usize {
        let mut best = 0;
        for (c, p) in self.proportions.iter().enumerate() {
            if *p > self.proportions[best] {
                best = c;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionAudit {
    pub rows: Vec<ProportionRow>,
    /// Per class, the fraction of its prototypes whose region is majority that class.
    pub majority_own_class: Vec<f64>,
    /// Classes whose prototypes mostly sit on another class.
    pub flagged_classes: Vec<usize>,
}

impl ProportionAudit {
    pub fn from_rows(rows: Vec<ProportionRow>, num_classes: usize) -> Self {
        let mut own = vec![0usize; num_classes];
        let mut total = vec![0usize; num_classes];
        for r in &rows {
            total[r.class_id] += 1;
            if r.majority_class() == r.class_id {
                own[r.class_id] += 1;
            }
        }
        let majority_own_class: Vec<f64> = own
            .iter()
            .zip(&total)
            .map(|(&o, &t)| if t == 0 { 0.0 } else { o as f64 / t as f64 })
            .collect();
        let flagged_classes = (0..num_classes)
            .filter(|&c| total[c] > 0 && 2 * own[c] <= total[c])
            .collect();
        Self {
            rows,
            majority_own_class,
            flagged_classes,
        }
    }

    /// Stacked-bar table: one row per prototype, one column per class.
    pub fn to_csv(&self) -> String {
        let classes = self.majority_own_class.len();
        let mut s = String::from("prototype,class,sample");
        for c in 0..classes {
            s.push_str(&format!(",class_{c}"));
        }
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!("{},{},{}", r.prototype_id, r.class_id, r.sample_id));
            for p in &r.proportions {
                s.push_str(&format!(",{p}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Ground-truth class mix inside every prototype's region on `samples`.
pub fn prototype_class_proportions(model: &Model, samples: &[&Sample], quantile: f64) -> Result<ProportionAudit> {
    let rs = model
        .ramanseg()
        .ok_or_else(|| Error::Precondition("class proportions need a prototype model".into()))?;
    let meta = rs.prototype_meta().to_vec();
    let rows = prototype_regions(model, samples, quantile)?
        .into_iter()
        .map(|r| ProportionRow {
            prototype_id: r.prototype_id,
            class_id: meta[r.prototype_id].class_id,
            sample_id: r.sample_id,
            proportions: r.class_proportions,
        })
        .collect();
    Ok(ProportionAudit::from_rows(rows, model.config().num_classes))
}

/// Prototype values of a prototype model, one flattened vector each.
pub fn prototype_vectors(model: &Model) -> Result<Vec<Vec<f64>>> {
    let rs = model
        .ramanseg()
        .ok_or_else(|| Error::Precondition("model has no prototypes".into()))?;
    let m = model.config().num_prototypes();
    let values = to_f64_vec(rs.prototypes().as_tensor())?;
    Ok(values.chunks(values.len() / m).map(<[f64]>::to_vec).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InertiaPoint {
    pub k: usize,
    pub inertia: f64,
}

pub fn inertia_csv(curve: &[InertiaPoint]) -> String {
    let mut s = String::from("k,inertia\n");
    for p in curve {
        s.push_str(&format!("{},{}\n", p.k, p.inertia));
    }
    s
}

const RESTARTS: usize = 10;
const MAX_ITER: usize = 300;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

struct Fit {
    centroids: Vec<Vec<f64>>,
    inertia: f64,
    /// Squared distance of each point to its centroid.
    costs: Vec<f64>,
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    points
        .iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (j, c) in centroids.iter().enumerate() {
                let d = sq_dist(p, c);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best
        })
        .unzip()
}

/// Centroid as `first + mean(x - first)`, which is exact when all members coincide.
fn centroid(members: &[&Vec<f64>]) -> Vec<f64> {
    let first = members[0];
    let n = members.len() as f64;
    (0..first.len())
        .map(|i| first[i] + members.iter().map(|m| m[i] - first[i]).sum::<f64>() / n)
        .collect()
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> Fit {
    let (mut labels, mut costs) = assign(points, &centroids);
    for _ in 0..MAX_ITER {
        let mut next = Vec::with_capacity(centroids.len());
        let mut spare = costs.clone();
        for j in 0..centroids.len() {
            let members: Vec<&Vec<f64>> = points.iter().zip(&labels).filter(|(_, l)| **l == j).map(|(p, _)| p).collect();
            if members.is_empty() {
                // move the empty centroid onto the worst-fit point
                let worst = (0..points.len()).max_by(|&a, &b| spare[a].total_cmp(&spare[b])).unwrap();
                spare[worst] = 0.0;
                next.push(points[worst].clone());
            } else {
                next.push(centroid(&members));
            }
        }
        let (l, c) = assign(points, &next);
        let old: f64 = costs.iter().sum();
        let new: f64 = c.iter().sum();
        if new > old {
            break;
        }
        centroids = next;
        let changed = l != labels;
        labels = l;
        costs = c;
        if !changed {
            break;
        }
    }
    Fit {
        inertia: costs.iter().sum(),
        centroids,
        costs,
    }
}

fn kmeans_pp(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let next = match WeightedIndex::new(&d) {
            Ok(w) => w.sample(rng),
            Err(_) => rng.random_range(0..points.len()),
        };
        centroids.push(points[next].clone());
        for (di, p) in d.iter_mut().zip(points) {
            *di = di.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

/// Best k-means inertia for `k = 1..=k_max`. Each `k` keeps the best of ten
/// k-means++ restarts and a nested start from the `k - 1` solution plus its
/// worst-fit point, so the curve cannot increase.
pub fn prototype_inertia_curve(vectors: &[Vec<f64>], k_max: usize, seed: u64) -> Result<Vec<InertiaPoint>> {
    if k_max == 0 || k_max > vectors.len() {
        return Err(Error::Precondition(format!(
            "k_max must be in 1..={}, got {k_max}",
            vectors.len()
        )));
    }
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::Shape("prototype vectors differ in length".into()));
    }
    let mut curve = Vec::with_capacity(k_max);
    let mut prev: Option<Fit> = None;
    for k in 1..=k_max {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let mut best = match &prev {
            Some(p) => {
                let worst = (0..vectors.len()).max_by(|&a, &b| p.costs[a].total_cmp(&p.costs[b])).unwrap();
                let mut init = p.centroids.clone();
                init.push(vectors[worst].clone());
                lloyd(vectors, init)
            }
            None => lloyd(vectors, vec![centroid(&vectors.iter().collect::<Vec<_>>())]),
        };
        for _ in 0..RESTARTS {
            let fit = lloyd(vectors, kmeans_pp(vectors, k, &mut rng));
            if fit.inertia < best.inertia {
                best = fit;
            }
        }
        curve.push(InertiaPoint { k, inertia: best.inertia });
        prev = Some(best);
    }
    Ok(curve)
}

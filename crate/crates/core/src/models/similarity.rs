use candle_core::Tensor;

use crate::error::{Error, Result};

/// Squared L2 distance between every prototype and the zero-padded latent
/// patch centred at each position: `(N, D, H, W) x (M, D, hp, wp) -> (N, M, H, W)`.
///
/// Expanded as `|z|^2 - 2 z.p + |p|^2`, each term a convolution.
pub fn squared_distances(latent: &Tensor, prototypes: &Tensor) -> Result<Tensor> {
    let (_, d, _, _) = latent.dims4()?;
    let (m, pd, hp, wp) = prototypes.dims4()?;
    if pd != d {
        return Err(Error::Shape(format!(
            "prototype depth {pd} does not match latent depth {d}"
        )));
    }
    if hp % 2 == 0 || wp % 2 == 0 {
        return Err(Error::Precondition(format!(
            "prototype spatial size {hp}x{wp} must be odd"
        )));
    }
    let padded = latent
        .pad_with_zeros(2, hp / 2, hp / 2)?
        .pad_with_zeros(3, wp / 2, wp / 2)?;
    let ones = Tensor::ones((1, d, hp, wp), latent.dtype(), latent.device())?;
    let z_sq = padded.sqr()?.conv2d(&ones, 0, 1, 1, 1)?;
    let cross = padded.conv2d(prototypes, 0, 1, 1, 1)?;
    let p_sq = prototypes.sqr()?.sum_keepdim((1, 2, 3))?.reshape((1, m, 1, 1))?;
    let d2 = cross
        .affine(-2.0, 0.0)?
        .broadcast_add(&z_sq)?
        .broadcast_add(&p_sq)?;
    Ok(d2.relu()?)
}

/// `log((d2 + 1) / (d2 + eps))`: maximal (`log(1/eps)`) at zero distance and
/// strictly decreasing toward 0 as the distance grows.
pub fn similarity_from_distances(d2: &Tensor, eps: f64) -> Result<Tensor> {
    let num = (d2 + 1.0)?.log()?;
    let den = (d2 + eps)?.log()?;
    Ok((num - den)?)
}

/// Prototype similarity map `(N, M, H, W)`.
pub fn compute_similarity(latent: &Tensor, prototypes: &Tensor, eps: f64) -> Result<Tensor> {
    similarity_from_distances(&squared_distances(latent, prototypes)?, eps)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::substrate::{device, finite_difference_check, to_f64_vec};

    /// Direct loops over positions, prototypes and patch offsets.
    fn naive(
        z: &[f64],
        (d, h, w): (usize, usize, usize),
        p: &[f64],
        (m, hp, wp): (usize, usize, usize),
        eps: f64,
    ) -> Vec<f64> {
        let mut out = vec![0.0; m * h * w];
        for j in 0..m {
            for r in 0..h {
                for c in 0..w {
                    let mut d2 = 0.0;
                    for k in 0..d {
                        for dr in 0..hp {
                            for dc in 0..wp {
                                let rr = r as isize + dr as isize - (hp / 2) as isize;
                                let cc = c as isize + dc as isize - (wp / 2) as isize;
                                let zv = if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                                    0.0
                                } else {
                                    z[(k * h + rr as usize) * w + cc as usize]
                                };
                                let pv = p[((j * d + k) * hp + dr) * wp + dc];
                                d2 += (zv - pv) * (zv - pv);
                            }
                        }
                    }
                    out[(j * h + r) * w + c] = ((d2 + 1.0) / (d2 + eps)).ln();
                }
            }
        }
        out
    }

    #[test]
    fn scalar_hand_value() {
        let z = Tensor::new(&[5.0f64], &device()).unwrap().reshape((1, 1, 1, 1)).unwrap();
        let p = Tensor::new(&[3.0f64], &device()).unwrap().reshape((1, 1, 1, 1)).unwrap();
        let s = to_f64_vec(&compute_similarity(&z, &p, 1e-4).unwrap()).unwrap();
        assert!((s[0] - (5.0f64 / 4.0001).ln()).abs() < 1e-12);
    }

    #[test]
    fn exact_match_maximizes() {
        let z = Tensor::new(&[0.25f64, -1.0], &device()).unwrap().reshape((1, 2, 1, 1)).unwrap();
        let s = to_f64_vec(&compute_similarity(&z, &z.reshape((1, 2, 1, 1)).unwrap(), 1e-4).unwrap())
            .unwrap();
        assert!((s[0] - (1e4f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..25 {
            let d = rng.random_range(1..=4);
            let (h, w) = (rng.random_range(1..=6), rng.random_range(1..=6));
            let m = rng.random_range(1..=5);
            let (hp, wp) = [(1, 1), (3, 3), (1, 3), (3, 1)][rng.random_range(0..4)];
            let z: Vec<f64> = (0..d * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p: Vec<f64> = (0..m * d * hp * wp).map(|_| rng.random_range(-1.0..1.0)).collect();
            let zt = Tensor::from_vec(z.clone(), (1, d, h, w), &device()).unwrap();
            let pt = Tensor::from_vec(p.clone(), (m, d, hp, wp), &device()).unwrap();
            let got = to_f64_vec(&compute_similarity(&zt, &pt, 1e-4).unwrap()).unwrap();
            let want = naive(&z, (d, h, w), &p, (m, hp, wp), 1e-4);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn gradient_wrt_prototypes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z: Vec<f64> = (0..3 * 4 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let zt = Tensor::from_vec(z, (1, 3, 4, 4), &device()).unwrap();
        let p: Vec<f64> = (0..2 * 3 * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pt = Tensor::from_vec(p, (2, 3, 3, 3), &device()).unwrap();
        let err = finite_difference_check(
            |p| Ok(compute_similarity(&zt, p, 1e-4)?.sum_all()?),
            &pt,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn even_prototypes_rejected() {
        let z = Tensor::zeros((1, 1, 4, 4), candle_core::DType::F64, &device()).unwrap();
        let p = Tensor::zeros((1, 1, 2, 2), candle_core::DType::F64, &device()).unwrap();
        assert!(compute_similarity(&z, &p, 1e-4).is_err());
    }
}

//! Bilinear resampling with the half-pixel (`align_corners = false`) convention.
//!
//! The tensor path multiplies by separable interpolation matrices, so it is
//! linear by construction and differentiable through ordinary matmuls.

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::substrate::device;

/// For each output index: (low source index, high source index, weight of high).
pub fn source_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let lambda = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            (i0, i1, lambda)
        })
        .collect()
}

/// Dense `output x input` interpolation matrix (row-major).
pub fn interpolation_matrix(input: usize, output: usize) -> Vec<f64> {
    let mut m = vec![0.0; output * input];
    for (d, (i0, i1, l)) in source_taps(input, output).into_iter().enumerate() {
        m[d * input + i0] += 1.0 - l;
        m[d * input + i1] += l;
    }
    m
}

/// Upsamples a `(C, h, w)` raster to `(C, out_h, out_w)`.
pub fn bilinear_upsample(
    raster: &[f64],
    dims: (usize, usize, usize),
    target: (usize, usize),
) -> Result<Vec<f64>> {
    let (c, h, w) = dims;
    let (oh, ow) = target;
    if h == 0 || w == 0 || oh == 0 || ow == 0 {
        return Err(Error::Precondition("bilinear upsample needs non-empty rasters".into()));
    }
    if raster.len() != c * h * w {
        return Err(Error::Shape(format!(
            "raster has {} values, expected {c}x{h}x{w}",
            raster.len()
        )));
    }
    let cols = source_taps(w, ow);
    let rows = source_taps(h, oh);
    let lerp = |a: f64, b: f64, t: f64| if t == 0.0 { a } else { a + (b - a) * t };

    let mut out = Vec::with_capacity(c * oh * ow);
    let mut tmp = vec![0.0; h * ow];
    for plane in raster.chunks_exact(h * w) {
        for r in 0..h {
            for (oc, &(c0, c1, t)) in cols.iter().enumerate() {
                tmp[r * ow + oc] = lerp(plane[r * w + c0], plane[r * w + c1], t);
            }
        }
        for &(r0, r1, t) in &rows {
            for oc in 0..ow {
                out.push(lerp(tmp[r0 * ow + oc], tmp[r1 * ow + oc], t));
            }
        }
    }
    Ok(out)
}

/// Upsamples an `(N, C, h, w)` tensor to `(N, C, out_h, out_w)`.
pub fn bilinear_upsample_tensor(x: &Tensor, target: (usize, usize)) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let (oh, ow) = target;
    if (h, w) == (oh, ow) {
        return Ok(x.clone());
    }
    let dtype = x.dtype();
    let a_w_t = Tensor::from_vec(interpolation_matrix(w, ow), (ow, w), &device())?
        .t()?
        .to_dtype(dtype)?;
    let a_h = Tensor::from_vec(interpolation_matrix(h, oh), (oh, h), &device())?.to_dtype(dtype)?;
    let along_w = x.broadcast_matmul(&a_w_t)?;
    Ok(a_h.broadcast_matmul(&along_w)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Closed-form half-pixel bilinear weights evaluated pixel by pixel.
    fn oracle(plane: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
        let coord = |d: usize, n_in: usize, n_out: usize| {
            let s = ((d as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, s - i0 as f64)
        };
        let mut out = vec![];
        for r in 0..oh {
            let (r0, r1, ty) = coord(r, h, oh);
            for c in 0..ow {
                let (c0, c1, tx) = coord(c, w, ow);
                let v = |rr: usize, cc: usize| plane[rr * w + cc];
                out.push(
                    (1.0 - ty) * ((1.0 - tx) * v(r0, c0) + tx * v(r0, c1))
                        + ty * ((1.0 - tx) * v(r1, c0) + tx * v(r1, c1)),
                );
            }
        }
        out
    }

    #[test]
    fn two_by_two_ramp() {
        let x = [0.0, 1.0, 0.0, 1.0];
        let out = bilinear_upsample(&x, (1, 2, 2), (4, 4)).unwrap();
        let want = oracle(&x, 2, 2, 4, 4);
        for (a, b) in out.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        // Frozen from the oracle: columns 0, 0.25, 0.75, 1 in every row.
        for r in 0..4 {
            assert_eq!(&out[r * 4..r * 4 + 4], &[0.0, 0.25, 0.75, 1.0]);
        }
    }

    #[test]
    fn constant_and_identity() {
        let c = vec![0.3; 2 * 3 * 5];
        let up = bilinear_upsample(&c, (2, 3, 5), (7, 11)).unwrap();
        assert!(up.iter().all(|&v| v == 0.3));
        let x: Vec<f64> = (0..12).map(|v| v as f64 * 0.7).collect();
        assert_eq!(bilinear_upsample(&x, (1, 3, 4), (3, 4)).unwrap(), x);
    }

    #[test]
    fn tensor_path_matches_oracle() {
        let x: Vec<f64> = (0..3 * 5).map(|v| ((v * 7) % 11) as f64 / 3.0).collect();
        let t = Tensor::from_vec(x.clone(), (1, 1, 3, 5), &device()).unwrap();
        let up = bilinear_upsample_tensor(&t, (12, 20)).unwrap();
        let got = up.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let want = oracle(&x, 3, 5, 12, 20);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

//! Thin layer over the tensor/autodiff backend (candle).
//!
//! Everything above this module sees named parameters in a [`ParamStore`],
//! tensors with a [`Precision`], and a finite-difference gradient checker.
//! Training runs in `f32`; gradient verification runs in `f64`.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsdata::HyperCube;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

pub fn device() -> Device {
    Device::Cpu
}

/// A tensor that participates in reverse-mode differentiation.
#[derive(Debug, Clone)]
pub struct DifferentiableValue {
    var: Var,
}

impl DifferentiableValue {
    pub fn new(value: &Tensor) -> Result<Self> {
        Ok(Self {
            var: Var::from_tensor(&value.detach())?,
        })
    }

    pub fn as_tensor(&self) -> &Tensor {
        self.var.as_tensor()
    }

    pub fn shape(&self) -> &[usize] {
        self.var.dims()
    }

    pub fn dtype(&self) -> DType {
        self.var.dtype()
    }

    /// Gradient of `scalar` with respect to this value; zeros if `scalar`
    /// does not depend on it.
    pub fn gradient_of(&self, scalar: &Tensor) -> Result<Tensor> {
        let grads = scalar.backward()?;
        match grads.get(self.var.as_tensor()) {
            Some(g) => Ok(g.clone()),
            None => Ok(self.var.as_tensor().zeros_like()?),
        }
    }
}

/// Seeded initializer; the backend's own RNG cannot be seeded on CPU.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self, n: usize, bound: f64) -> Vec<f64> {
        if bound == 0.0 {
            return vec![0.0; n];
        }
        // Open interval (-b, b): resample the (measure-zero) endpoint.
        (0..n)
            .map(|_| loop {
                let v = self.rng.random_range(-bound..bound);
                if v > -bound {
                    break v;
                }
            })
            .collect()
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Parameter shapes and `f32` values keyed by name.
pub type ParamBlobs = BTreeMap<String, (Vec<usize>, Vec<f32>)>;

/// Named, ordered set of trainable tensors.
#[derive(Debug, Clone)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    precision: Precision,
}

impl ParamStore {
    pub fn new(precision: Precision) -> Self {
        Self {
            vars: BTreeMap::new(),
            precision,
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn insert_values(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> Result<Var> {
        let t = Tensor::from_vec(values, shape, &device())?.to_dtype(self.precision.dtype())?;
        let var = Var::from_tensor(&t)?;
        self.vars.insert(name.to_string(), var.clone());
        Ok(var)
    }

    /// Returns the existing parameter, or creates it with `init`.
    pub fn get_or_init(
        &mut self,
        name: &str,
        shape: &[usize],
        init: impl FnOnce(usize) -> Vec<f64>,
    ) -> Result<Var> {
        if let Some(v) = self.vars.get(name) {
            if v.dims() != shape {
                return Err(Error::Shape(format!(
                    "parameter `{name}` has shape {:?}, model expects {shape:?}",
                    v.dims()
                )));
            }
            return Ok(v.clone());
        }
        let n = shape.iter().product();
        self.insert_values(name, shape, init(n))
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// All parameters in name order.
    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    /// Parameters whose name starts with any of `prefixes`, in name order.
    pub fn vars_with_prefix(&self, prefixes: &[&str]) -> Vec<Var> {
        self.vars
            .iter()
            .filter(|(n, _)| prefixes.iter().any(|p| n.starts_with(p)))
            .map(|(_, v)| v.clone())
            .collect()
    }

    /// Independent copy (fresh storage) in the requested precision.
    pub fn deep_copy(&self, precision: Precision) -> Result<Self> {
        let mut vars = BTreeMap::new();
        for (n, v) in &self.vars {
            let t = v.as_tensor().to_dtype(precision.dtype())?.copy()?;
            vars.insert(n.clone(), Var::from_tensor(&t)?);
        }
        Ok(Self { vars, precision })
    }

    /// Flattened parameter values as `f32`, keyed by name.
    pub fn export(&self) -> Result<ParamBlobs> {
        self.vars
            .iter()
            .map(|(n, v)| {
                let t = v.as_tensor().to_dtype(DType::F32)?.flatten_all()?;
                Ok((n.clone(), (v.dims().to_vec(), t.to_vec1::<f32>()?)))
            })
            .collect()
    }

    pub fn import(
        blobs: &ParamBlobs,
        precision: Precision,
    ) -> Result<Self> {
        let mut store = Self::new(precision);
        for (n, (shape, values)) in blobs {
            let t = Tensor::from_vec(values.clone(), shape.as_slice(), &device())?
                .to_dtype(precision.dtype())?;
            store.vars.insert(n.clone(), Var::from_tensor(&t)?);
        }
        Ok(store)
    }
}

/// Stacks cubes into an `(N, C, H, W)` tensor.
pub fn cubes_to_tensor(cubes: &[&HyperCube], precision: Precision) -> Result<Tensor> {
    let first = cubes
        .first()
        .ok_or_else(|| Error::Precondition("no cubes to batch".into()))?;
    let (c, h, w) = first.dims();
    let mut data = Vec::with_capacity(cubes.len() * c * h * w);
    for cube in cubes {
        if cube.dims() != (c, h, w) {
            return Err(Error::Shape(format!(
                "cannot batch cubes of shapes {:?} and {:?}",
                first.dims(),
                cube.dims()
            )));
        }
        data.extend_from_slice(cube.data());
    }
    Ok(Tensor::from_vec(data, (cubes.len(), c, h, w), &device())?.to_dtype(precision.dtype())?)
}

/// Reads a tensor of any float dtype into `f64`s.
pub fn to_f64_vec(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?)
}

pub fn scalar_f64(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.reshape(())?.to_scalar::<f64>()?)
}

/// Compares the reverse-mode gradient of a scalar function against central
/// differences at `point`. Returns the largest
/// `|analytic - numeric| / max(1, |numeric|)` over coordinates.
pub fn finite_difference_check<F>(f: F, point: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let point = point.to_dtype(DType::F64)?.detach();
    let shape = point.dims().to_vec();
    let base = to_f64_vec(&point)?;
    if base.iter().any(|v| !v.is_finite()) {
        return Err(Error::Precondition("finite-difference point is not finite".into()));
    }

    let x = DifferentiableValue::new(&point)?;
    let y = f(x.as_tensor())?;
    if y.elem_count() != 1 {
        return Err(Error::Precondition(format!(
            "function must be scalar-valued, got shape {:?}",
            y.dims()
        )));
    }
    let analytic = to_f64_vec(&x.gradient_of(&y.flatten_all()?.sum_all()?)?)?;

    let eval = |values: Vec<f64>| -> Result<f64> {
        let t = Tensor::from_vec(values, shape.as_slice(), &device())?;
        scalar_f64(&f(&t)?)
    };
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += step;
        let mut minus = base.clone();
        minus[i] -= step;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * step);
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let x = Tensor::new(&[3.0f64], &device()).unwrap();
        let err = finite_difference_check(|t| Ok(t.sqr()?.sum_all()?), &x, 1e-4).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let x = Tensor::new(&[1.0f64, -2.0], &device()).unwrap();
        let err = finite_difference_check(
            |t| Ok((t.zeros_like()?.sum_all()? + 5.0)?),
            &x,
            1e-4,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // detach() hides the dependence from autodiff, so analytic = 0.
        let x = Tensor::new(&[2.0f64], &device()).unwrap();
        let err = finite_difference_check(|t| Ok(t.detach().sqr()?.sum_all()?), &x, 1e-4).unwrap();
        assert!(err > 0.5, "{err}");
    }

    #[test]
    fn param_store_round_trip() {
        let mut s = ParamStore::new(Precision::F32);
        s.insert_values("b", &[2], vec![1.0, 2.0]).unwrap();
        s.insert_values("a", &[1, 2], vec![3.0, -4.0]).unwrap();
        let names: Vec<_> = s.names().collect();
        assert_eq!(names, ["a", "b"]);
        let back = ParamStore::import(&s.export().unwrap(), Precision::F64).unwrap();
        assert_eq!(back.export().unwrap(), s.export().unwrap());
        assert!(s.get_or_init("a", &[2], |_| vec![]).is_err());
    }

    #[test]
    fn uniform_stays_in_open_interval() {
        let mut init = Initializer::new(1);
        assert!(init.uniform(10_000, 0.5).iter().all(|v| v.abs() < 0.5));
    }
}

//! Minimal reverse-mode automatic differentiation over the fixed vocabulary
//! of tensor operations the receiver needs. No broadcasting engine, no
//! dynamic graphs: every op has a hand-written forward and backward, and the
//! tape replays them in reverse.

mod finite_diff;
#[cfg(test)]
mod op_tests;
mod tape;

pub use finite_diff::{finite_diff_check, FiniteDiffEntry, FiniteDiffReport};
pub use tape::{Tape, Var};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::real::Real;

/// Dense row-major multi-dimensional array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![F::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<F>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {:?} holds {} values, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| F::from_f64(v)).collect())
    }

    pub fn scalar(v: F) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn max_abs_diff(&self, other: &Tensor<F>) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (*a - *b).abs().as_f64())
            .fold(0.0, f64::max)
    }
}

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    Zeros,
    /// U(-1/sqrt(fan_in), +1/sqrt(fan_in))
    UniformFanIn,
    /// N(0, 2/fan_in)
    NormalScaled,
}

/// Fan-in of a weight shape: first axis for matrices ([C_in, C_out]),
/// receptive-field size for depthwise kernels ([C, k, ...]).
fn fan_in(shape: &[usize]) -> usize {
    match shape.len() {
        0 => 1,
        1 | 2 => shape[0],
        _ => shape[1..].iter().product(),
    }
}

pub fn init_tensor<F: Real, R: Rng>(
    shape: &[usize],
    scheme: InitScheme,
    rng: &mut R,
) -> Result<Tensor<F>> {
    if shape.is_empty() {
        return Err(Error::InvalidArgument("tensor shape must be nonempty".into()));
    }
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::InvalidArgument(format!(
            "zero-length axis in shape {:?}",
            shape
        )));
    }
    let numel: usize = shape.iter().product();
    let data = match scheme {
        InitScheme::Zeros => vec![F::zero(); numel],
        InitScheme::UniformFanIn => {
            let bound = 1.0 / (fan_in(shape) as f64).sqrt();
            (0..numel)
                .map(|_| F::from_f64(rng.random_range(-bound..bound)))
                .collect()
        }
        InitScheme::NormalScaled => {
            let std = (2.0 / fan_in(shape) as f64).sqrt();
            (0..numel)
                .map(|_| F::from_f64(rng.sample::<f64, _>(StandardNormal) * std))
                .collect()
        }
    };
    Tensor::from_vec(shape, data)
}

/// Named trainable tensor plus its optimizer moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<F> {
    pub name: String,
    pub tensor: Tensor<F>,
    /// First moment (AdamW).
    pub m: Vec<F>,
    /// Second moment (AdamW).
    pub v: Vec<F>,
}

impl<F: Real> Parameter<F> {
    pub fn new(name: impl Into<String>, tensor: Tensor<F>) -> Self {
        let n = tensor.numel();
        Parameter {
            name: name.into(),
            tensor,
            m: vec![F::zero(); n],
            v: vec![F::zero(); n],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;

    #[test]
    fn zeros_scheme() {
        let mut rng = derive_rng(1, 0);
        let t: Tensor<f64> = init_tensor(&[3], InitScheme::Zeros, &mut rng).unwrap();
        assert_eq!(t.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn uniform_fanin_bound() {
        let mut rng = derive_rng(7, 0);
        let t: Tensor<f64> = init_tensor(&[4, 4], InitScheme::UniformFanIn, &mut rng).unwrap();
        // fan_in = 4 forces every entry into (-0.5, 0.5)
        assert!(t.data().iter().all(|v| v.abs() < 0.5));
    }

    #[test]
    fn normal_scaled_moments() {
        let mut rng = derive_rng(42, 0);
        let t: Tensor<f64> =
            init_tensor(&[8, 12500], InitScheme::NormalScaled, &mut rng).unwrap();
        let n = t.numel() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 0.01, "mean {}", mean);
        assert!((var - 0.25).abs() < 0.01, "var {}", var);
    }

    #[test]
    fn zero_axis_rejected() {
        let mut rng = derive_rng(1, 1);
        let r: Result<Tensor<f64>> = init_tensor(&[3, 0], InitScheme::Zeros, &mut rng);
        assert!(r.is_err());
    }

    #[test]
    fn from_vec_validates_length() {
        assert!(Tensor::<f64>::from_vec(&[2, 2], vec![1.0; 3]).is_err());
    }
}

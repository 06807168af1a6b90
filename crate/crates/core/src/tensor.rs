//! Dense row-major f64 tensors and seeded initialization.
//!
//! All randomness in the crate goes through ChaCha8 seeded from an explicit
//! 64-bit value, so identical seeds give bit-identical results on every
//! platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Dense n-dimensional array of f64 values with optional accumulated
/// gradient of the same length.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("zero dimension in shape {shape:?}")));
        }
        if data.len() != expected {
            return Err(Error::invalid(format!(
                "data length {} does not match shape {shape:?}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; len],
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1, 1],
            data: vec![value],
            grad: None,
        }
    }

    /// 2-D tensor from row data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// Length-n row vector with shape `[1, n]`.
    pub fn row(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor {
            shape: vec![1, n],
            data,
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Gradient buffer, created zero-filled on first use.
    pub fn grad_mut(&mut self) -> &mut Vec<f64> {
        let len = self.data.len();
        self.grad.get_or_insert_with(|| vec![0.0; len])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Initialization schemes for [`seeded_init`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Uniform on `(-b, b)` with `b = sqrt(6 / (fan_in + fan_out))`.
    UniformScaled,
    Zeros,
}

/// Deterministic seeded tensor initialization. For 2-D and higher shapes,
/// fan_in is the first dimension and fan_out the last; 1-D shapes use their
/// length for both.
pub fn seeded_init(shape: &[usize], scheme: InitScheme, seed: u64) -> Tensor {
    let len: usize = shape.iter().product();
    let data = match scheme {
        InitScheme::Zeros => vec![0.0; len],
        InitScheme::UniformScaled => {
            let (fan_in, fan_out) = if shape.len() >= 2 {
                (shape[0], *shape.last().unwrap())
            } else {
                (len, len)
            };
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..len)
                .map(|_| rng.gen::<f64>() * 2.0 * bound - bound)
                .collect()
        }
    };
    Tensor {
        shape: shape.to_vec(),
        data,
        grad: None,
    }
}

/// Derives an independent stream seed from a base seed, for per-epoch
/// shuffles, per-round derangements, and per-tensor initialization.
/// SplitMix64 finalizer over the xored pair.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

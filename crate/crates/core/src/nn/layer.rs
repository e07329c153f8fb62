//! Dense layer: affine transform plus element-wise activation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative with respect to the pre-activation. The relu kink at 0 is
    /// assigned derivative 0.
    #[inline]
    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// `y = activation(W x + b)` with `W` stored row-major as `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    weights: Matrix,
    biases: Vec<f64>,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Matrix, biases: Vec<f64>, activation: Activation) -> Result<Self> {
        if weights.rows() != biases.len() {
            return Err(Error::Shape(format!(
                "weight rows {} do not match bias length {}",
                weights.rows(),
                biases.len()
            )));
        }
        if biases.iter().any(|b| !b.is_finite()) {
            return Err(Error::Numeric("non-finite bias entry".into()));
        }
        Ok(DenseLayer {
            weights,
            biases,
            activation,
        })
    }

    /// Weights drawn uniform in `[-scale, scale]`, biases zero.
    pub fn seeded(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        scale: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Argument("layer dimensions must be positive".into()));
        }
        let mut weights = Vec::with_capacity(in_dim * out_dim);
        for _ in 0..in_dim * out_dim {
            let w = if scale == 0.0 {
                0.0
            } else {
                rng.gen_range(-scale..=scale)
            };
            weights.push(w);
        }
        DenseLayer::new(
            Matrix::from_vec(out_dim, in_dim, weights)?,
            vec![0.0; out_dim],
            activation,
        )
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub(crate) fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    pub(crate) fn biases_mut(&mut self) -> &mut Vec<f64> {
        &mut self.biases
    }

    /// `pre[r][o] = b[o] + sum_i input[r][i] * W[o][i]` for a whole batch.
    pub(crate) fn affine(&self, input: &Matrix) -> Matrix {
        let (n, out_dim, in_dim) = (input.rows(), self.out_dim(), self.in_dim());
        debug_assert_eq!(input.cols(), in_dim);
        let mut pre = Matrix::zeros(n, out_dim);
        for r in 0..n {
            let x = input.row(r);
            let out = pre.row_mut(r);
            for (o, slot) in out.iter_mut().enumerate() {
                let w = self.weights.row(o);
                let mut acc = self.biases[o];
                for i in 0..in_dim {
                    acc += w[i] * x[i];
                }
                *slot = acc;
            }
        }
        pre
    }
}

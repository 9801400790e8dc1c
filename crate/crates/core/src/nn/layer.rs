//! Layer vocabulary: dense affine, element-wise activations, batch norm.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::matrix::Matrix;

pub const BATCHNORM_EPS: f64 = 1e-5;
pub const BATCHNORM_MOMENTUM: f64 = 0.9;

/// Architecture descriptor for one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSpec {
    /// `linear: [in, out]`
    Linear(usize, usize),
    Relu,
    Tanh,
    Sigmoid,
    /// `batch_norm: width`
    BatchNorm(usize),
}

impl LayerSpec {
    /// Output width given the incoming width, or an error on mismatch.
    pub fn out_width(&self, in_width: usize) -> Result<usize> {
        match *self {
            LayerSpec::Linear(i, o) => {
                if i != in_width {
                    Err(Error::shape(format!(
                        "linear expects {i} inputs, previous layer provides {in_width}"
                    )))
                } else {
                    Ok(o)
                }
            }
            LayerSpec::BatchNorm(w) => {
                if w != in_width {
                    Err(Error::shape(format!(
                        "batch_norm width {w} versus incoming width {in_width}"
                    )))
                } else {
                    Ok(w)
                }
            }
            _ => Ok(in_width),
        }
    }
}

/// One layer with its parameters and, for batch norm, running statistics.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Linear {
        /// `out x in`, row-major.
        weight: Matrix,
        bias: Vec<f64>,
    },
    Relu,
    Tanh,
    Sigmoid,
    BatchNorm {
        gamma: Vec<f64>,
        beta: Vec<f64>,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
    },
}

/// Cached per-layer values needed by the backward pass.
#[derive(Debug, Clone)]
pub enum LayerCache {
    None,
    BatchNorm {
        xhat: Matrix,
        inv_std: Vec<f64>,
        train_mode: bool,
    },
}

/// Parameter gradients for one layer.
#[derive(Debug, Clone)]
pub enum LayerGrads {
    NoParams,
    Linear { dw: Matrix, db: Vec<f64> },
    BatchNorm { dgamma: Vec<f64>, dbeta: Vec<f64> },
}

impl Layer {
    /// Fresh layer: linear weights uniform in `[-sqrt(1/fan_in), +sqrt(1/fan_in)]`,
    /// zero biases; batch norm scale 1, shift 0, running stats (0, 1).
    pub fn init(spec: LayerSpec, rng: &mut ChaCha8Rng) -> Layer {
        match spec {
            LayerSpec::Linear(i, o) => {
                let s = (1.0 / i as f64).sqrt();
                let weight = Matrix::from_fn(o, i, |_, _| rng.gen_range(-s..=s));
                Layer::Linear {
                    weight,
                    bias: vec![0.0; o],
                }
            }
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::Tanh => Layer::Tanh,
            LayerSpec::Sigmoid => Layer::Sigmoid,
            LayerSpec::BatchNorm(w) => Layer::BatchNorm {
                gamma: vec![1.0; w],
                beta: vec![0.0; w],
                running_mean: vec![0.0; w],
                running_var: vec![1.0; w],
            },
        }
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Linear { weight, .. } => LayerSpec::Linear(weight.cols(), weight.rows()),
            Layer::Relu => LayerSpec::Relu,
            Layer::Tanh => LayerSpec::Tanh,
            Layer::Sigmoid => LayerSpec::Sigmoid,
            Layer::BatchNorm { gamma, .. } => LayerSpec::BatchNorm(gamma.len()),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Linear { weight, bias } => weight.data().len() + bias.len(),
            Layer::BatchNorm { gamma, beta, .. } => gamma.len() + beta.len(),
            _ => 0,
        }
    }

    /// Forward pass. `train` selects batch statistics for batch norm and
    /// updates the running estimates; evaluation uses the running estimates.
    pub fn forward(&mut self, input: &Matrix, train: bool) -> Result<(Matrix, LayerCache)> {
        match self {
            Layer::Linear { weight, bias } => {
                let out = input.matmul_nt(weight)?.add_row_vector(bias)?;
                Ok((out, LayerCache::None))
            }
            Layer::Relu => Ok((input.map(|x| x.max(0.0)), LayerCache::None)),
            Layer::Tanh => Ok((input.map(f64::tanh), LayerCache::None)),
            Layer::Sigmoid => Ok((input.map(|x| 1.0 / (1.0 + (-x).exp())), LayerCache::None)),
            Layer::BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
            } => {
                let width = gamma.len();
                if input.cols() != width {
                    return Err(Error::shape(format!(
                        "batch_norm width {width} versus input width {}",
                        input.cols()
                    )));
                }
                let batch = input.rows();
                let (mean, var) = if train {
                    if batch < 2 {
                        return Err(Error::domain(
                            "batch_norm training requires batch size >= 2",
                        ));
                    }
                    let mut mean = vec![0.0; width];
                    for r in 0..batch {
                        for (m, &x) in mean.iter_mut().zip(input.row(r)) {
                            *m += x;
                        }
                    }
                    for m in &mut mean {
                        *m /= batch as f64;
                    }
                    let mut var = vec![0.0; width];
                    for r in 0..batch {
                        for ((v, &x), m) in var.iter_mut().zip(input.row(r)).zip(&mean) {
                            let d = x - m;
                            *v += d * d;
                        }
                    }
                    for v in &mut var {
                        *v /= batch as f64;
                    }
                    for (rm, &m) in running_mean.iter_mut().zip(&mean) {
                        *rm = BATCHNORM_MOMENTUM * *rm + (1.0 - BATCHNORM_MOMENTUM) * m;
                    }
                    for (rv, &v) in running_var.iter_mut().zip(&var) {
                        *rv = BATCHNORM_MOMENTUM * *rv + (1.0 - BATCHNORM_MOMENTUM) * v;
                    }
                    (mean, var)
                } else {
                    (running_mean.clone(), running_var.clone())
                };
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCHNORM_EPS).sqrt()).collect();
                let xhat = Matrix::from_fn(batch, width, |r, c| {
                    (input.get(r, c) - mean[c]) * inv_std[c]
                });
                let out = Matrix::from_fn(batch, width, |r, c| gamma[c] * xhat.get(r, c) + beta[c]);
                Ok((
                    out,
                    LayerCache::BatchNorm {
                        xhat,
                        inv_std,
                        train_mode: train,
                    },
                ))
            }
        }
    }

    /// Backward pass: given the layer input, output and upstream gradient,
    /// returns parameter gradients and the gradient w.r.t. the input.
    pub fn backward(
        &self,
        input: &Matrix,
        output: &Matrix,
        cache: &LayerCache,
        upstream: &Matrix,
    ) -> Result<(LayerGrads, Matrix)> {
        match self {
            Layer::Linear { weight, .. } => {
                let dw = upstream.matmul_tn(input)?;
                let db = upstream.col_sums();
                let dx = upstream.matmul(weight)?;
                Ok((LayerGrads::Linear { dw, db }, dx))
            }
            // Subgradient at the kink is 0.
            Layer::Relu => {
                let dx = upstream.zip_map(input, |u, x| if x > 0.0 { u } else { 0.0 })?;
                Ok((LayerGrads::NoParams, dx))
            }
            Layer::Tanh => {
                let dx = upstream.zip_map(output, |u, y| u * (1.0 - y * y))?;
                Ok((LayerGrads::NoParams, dx))
            }
            Layer::Sigmoid => {
                let dx = upstream.zip_map(output, |u, y| u * y * (1.0 - y))?;
                Ok((LayerGrads::NoParams, dx))
            }
            Layer::BatchNorm { gamma, .. } => {
                let LayerCache::BatchNorm {
                    xhat,
                    inv_std,
                    train_mode,
                } = cache
                else {
                    return Err(Error::shape("batch_norm backward without its cache"));
                };
                let batch = upstream.rows();
                let width = gamma.len();
                let mut dgamma = vec![0.0; width];
                let mut dbeta = vec![0.0; width];
                for r in 0..batch {
                    for c in 0..width {
                        dgamma[c] += upstream.get(r, c) * xhat.get(r, c);
                        dbeta[c] += upstream.get(r, c);
                    }
                }
                let dx = if *train_mode {
                    // dxhat = upstream * gamma; dx folds in the mean/variance terms.
                    let n = batch as f64;
                    let mut sum_dxhat = vec![0.0; width];
                    let mut sum_dxhat_xhat = vec![0.0; width];
                    for r in 0..batch {
                        for c in 0..width {
                            let dxh = upstream.get(r, c) * gamma[c];
                            sum_dxhat[c] += dxh;
                            sum_dxhat_xhat[c] += dxh * xhat.get(r, c);
                        }
                    }
                    Matrix::from_fn(batch, width, |r, c| {
                        let dxh = upstream.get(r, c) * gamma[c];
                        inv_std[c] / n * (n * dxh - sum_dxhat[c] - xhat.get(r, c) * sum_dxhat_xhat[c])
                    })
                } else {
                    // Running statistics are constants; the map is affine.
                    Matrix::from_fn(batch, width, |r, c| {
                        upstream.get(r, c) * gamma[c] * inv_std[c]
                    })
                };
                Ok((LayerGrads::BatchNorm { dgamma, dbeta }, dx))
            }
        }
    }
}

//! Multilayer perceptron: ordered layer stack with a flat parameter view.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::layer::{Layer, LayerCache, LayerGrads, LayerSpec};
use crate::nn::matrix::Matrix;

/// Ordered layer stack. Adjacent widths are validated at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Layer>,
    input_width: usize,
    output_width: usize,
}

/// Every intermediate activation from one forward pass, as needed by
/// `MlpModel::backward`. `activations[0]` is the input, `activations[n]`
/// the output of layer `n-1`.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub activations: Vec<Matrix>,
    pub caches: Vec<LayerCache>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("trace holds the input")
    }
}

/// Parameter gradients per layer plus the gradient w.r.t. the model input.
#[derive(Debug, Clone)]
pub struct GradBundle {
    pub layers: Vec<LayerGrads>,
    pub input_grad: Matrix,
}

impl GradBundle {
    /// Gradients in the model's flatten order.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for lg in &self.layers {
            match lg {
                LayerGrads::NoParams => {}
                LayerGrads::Linear { dw, db } => {
                    out.extend_from_slice(dw.data());
                    out.extend_from_slice(db);
                }
                LayerGrads::BatchNorm { dgamma, dbeta } => {
                    out.extend_from_slice(dgamma);
                    out.extend_from_slice(dbeta);
                }
            }
        }
        out
    }

    /// `self += s * other`; both bundles must come from the same architecture.
    pub fn add_scaled(&mut self, other: &GradBundle, s: f64) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::shape("gradient bundles from different models"));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            match (a, b) {
                (LayerGrads::NoParams, LayerGrads::NoParams) => {}
                (
                    LayerGrads::Linear { dw, db },
                    LayerGrads::Linear {
                        dw: odw,
                        db: odb,
                    },
                ) => {
                    *dw = dw.zip_map(odw, |x, y| x + s * y)?;
                    for (x, y) in db.iter_mut().zip(odb) {
                        *x += s * y;
                    }
                }
                (
                    LayerGrads::BatchNorm { dgamma, dbeta },
                    LayerGrads::BatchNorm {
                        dgamma: odg,
                        dbeta: odb,
                    },
                ) => {
                    for (x, y) in dgamma.iter_mut().zip(odg) {
                        *x += s * y;
                    }
                    for (x, y) in dbeta.iter_mut().zip(odb) {
                        *x += s * y;
                    }
                }
                _ => return Err(Error::shape("gradient bundles from different models")),
            }
        }
        Ok(())
    }
}

impl MlpModel {
    /// Builds and initializes a model from its architecture descriptor.
    pub fn init(input_width: usize, specs: &[LayerSpec], rng: &mut ChaCha8Rng) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::shape("model needs at least one layer"));
        }
        let mut width = input_width;
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            width = spec.out_width(width)?;
            layers.push(Layer::init(*spec, rng));
        }
        Ok(MlpModel {
            layers,
            input_width,
            output_width: width,
        })
    }

    pub fn from_layers(input_width: usize, layers: Vec<Layer>) -> Result<Self> {
        let mut width = input_width;
        for layer in &layers {
            width = layer.spec().out_width(width)?;
        }
        Ok(MlpModel {
            layers,
            input_width,
            output_width: width,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn output_width(&self) -> usize {
        self.output_width
    }

    pub fn same_arch(&self, other: &MlpModel) -> bool {
        self.input_width == other.input_width && self.specs() == other.specs()
    }

    fn forward_impl(&mut self, input: &Matrix, train: bool) -> Result<ForwardTrace> {
        if input.cols() != self.input_width {
            return Err(Error::shape(format!(
                "model expects {} input columns, got {}",
                self.input_width,
                input.cols()
            )));
        }
        if input.rows() == 0 {
            return Err(Error::domain("empty batch"));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut caches = Vec::with_capacity(self.layers.len());
        activations.push(input.clone());
        for layer in &mut self.layers {
            let (out, cache) = layer.forward(activations.last().unwrap(), train)?;
            activations.push(out);
            caches.push(cache);
        }
        Ok(ForwardTrace {
            activations,
            caches,
        })
    }

    /// Training-mode forward; batch norm uses batch statistics and updates
    /// its running estimates.
    pub fn forward_train(&mut self, input: &Matrix) -> Result<ForwardTrace> {
        self.forward_impl(input, true)
    }

    /// Evaluation-mode forward; batch norm uses running statistics and the
    /// model is left untouched.
    pub fn forward_eval(&self, input: &Matrix) -> Result<ForwardTrace> {
        // Running statistics are only written in training mode.
        let mut this = self.clone();
        this.forward_impl(input, false)
    }

    /// Reverse-mode gradients for the pass recorded in `trace`. Pure: the
    /// model is not modified.
    pub fn backward(&self, trace: &ForwardTrace, upstream: &Matrix) -> Result<GradBundle> {
        let output = trace.output();
        output.same_shape(upstream).map_err(|_| {
            Error::shape(format!(
                "upstream {}x{} versus trace output {}x{}",
                upstream.rows(),
                upstream.cols(),
                output.rows(),
                output.cols()
            ))
        })?;
        let mut grads = vec![LayerGrads::NoParams; self.layers.len()];
        let mut up = upstream.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (lg, down) = layer.backward(
                &trace.activations[i],
                &trace.activations[i + 1],
                &trace.caches[i],
                &up,
            )?;
            grads[i] = lg;
            up = down;
        }
        Ok(GradBundle {
            layers: grads,
            input_grad: up,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn check_params_finite(&self) -> Result<()> {
        if self.flatten().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Defense(
                "model parameters became non-finite".to_string(),
            ))
        }
    }

    /// Parameters as one flat vector: per layer, linear weights row-major
    /// then bias; batch norm scale then shift. Running statistics are state,
    /// not parameters, and are excluded.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            match layer {
                Layer::Linear { weight, bias } => {
                    out.extend_from_slice(weight.data());
                    out.extend_from_slice(bias);
                }
                Layer::BatchNorm { gamma, beta, .. } => {
                    out.extend_from_slice(gamma);
                    out.extend_from_slice(beta);
                }
                _ => {}
            }
        }
        out
    }

    /// Writes a flat vector produced by `flatten` back into the layers.
    pub fn unflatten(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::shape(format!(
                "parameter vector of {} versus model with {}",
                params.len(),
                self.param_count()
            )));
        }
        let mut pos = 0;
        for layer in &mut self.layers {
            match layer {
                Layer::Linear { weight, bias } => {
                    let wlen = weight.data().len();
                    weight.data_mut().copy_from_slice(&params[pos..pos + wlen]);
                    pos += wlen;
                    let blen = bias.len();
                    bias.copy_from_slice(&params[pos..pos + blen]);
                    pos += blen;
                }
                Layer::BatchNorm { gamma, beta, .. } => {
                    let glen = gamma.len();
                    gamma.copy_from_slice(&params[pos..pos + glen]);
                    pos += glen;
                    let blen = beta.len();
                    beta.copy_from_slice(&params[pos..pos + blen]);
                    pos += blen;
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Half squared parameter distance between two models of identical
/// architecture, plus its gradient w.r.t. `a`.
pub fn param_sq_distance(a: &MlpModel, b: &MlpModel) -> Result<(f64, Vec<f64>)> {
    if !a.same_arch(b) {
        return Err(Error::shape("param_sq_distance across architectures"));
    }
    let pa = a.flatten();
    let pb = b.flatten();
    let grad: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x - y).collect();
    let dist = 0.5 * grad.iter().map(|d| d * d).sum::<f64>();
    Ok((dist, grad))
}

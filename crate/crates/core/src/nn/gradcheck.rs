//! Central finite-difference verification of reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::layer::LayerSpec;
use crate::nn::loss;
use crate::nn::matrix::Matrix;
use crate::nn::model::MlpModel;

/// Loss applied to the model output during a gradient check.
#[derive(Debug, Clone)]
pub enum LossSpec {
    Mse(Matrix),
    Bce(Matrix),
    CrossEntropy(Vec<usize>),
}

impl LossSpec {
    pub fn eval(&self, output: &Matrix) -> Result<(f64, Matrix)> {
        match self {
            LossSpec::Mse(target) => loss::mse(output, target),
            LossSpec::Bce(target) => loss::bce(output, target),
            LossSpec::CrossEntropy(labels) => loss::cross_entropy(output, labels),
        }
    }
}

/// Worst relative error between backprop and central differences over every
/// parameter. Relative error uses `max(|analytic|, |numeric|, 1e-12)` as the
/// denominator.
pub fn gradient_check(
    model: &MlpModel,
    input: &Matrix,
    loss: &LossSpec,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0 && h <= 1e-2) {
        return Err(Error::domain(format!("step h={h} outside (0, 1e-2]")));
    }
    let mut work = model.clone();
    let trace = work.forward_train(input)?;
    let (_, lgrad) = loss.eval(trace.output())?;
    let analytic = work.backward(&trace, &lgrad)?.flat();

    let base = model.flatten();
    let mut worst = 0.0_f64;
    let mut probe = base.clone();
    for i in 0..base.len() {
        probe[i] = base[i] + h;
        work.unflatten(&probe)?;
        let up = loss.eval(work.forward_train(input)?.output())?.0;
        probe[i] = base[i] - h;
        work.unflatten(&probe)?;
        let down = loss.eval(work.forward_train(input)?.output())?.0;
        probe[i] = base[i];
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-12);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(worst)
}

/// One randomized architecture check from the standard grid.
#[derive(Debug, Clone)]
pub struct GridCase {
    pub specs: Vec<LayerSpec>,
    pub input_width: usize,
    pub loss: &'static str,
    pub max_rel_err: f64,
}

/// Runs `count` randomized gradient checks over depth <= 3, width <= 16,
/// activations {relu, tanh, sigmoid} and losses {mse, bce, ce}.
pub fn run_grid(seed: u64, count: usize, h: f64) -> Result<Vec<GridCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::with_capacity(count);
    for case_idx in 0..count {
        let depth = rng.gen_range(1..=3usize);
        let loss_pick = case_idx % 3;
        let mut width = rng.gen_range(2..=16usize);
        let input_width = width;
        let mut specs = Vec::new();
        for level in 0..depth {
            let next = rng.gen_range(2..=16usize);
            specs.push(LayerSpec::Linear(width, next));
            width = next;
            let last = level + 1 == depth;
            if !last {
                specs.push(match rng.gen_range(0..3) {
                    0 => LayerSpec::Relu,
                    1 => LayerSpec::Tanh,
                    _ => LayerSpec::Sigmoid,
                });
            }
        }
        let (loss_name, loss_spec, model, input) = match loss_pick {
            0 => {
                let model = MlpModel::init(input_width, &specs, &mut rng)?;
                let input = random_input(&mut rng, 4, input_width);
                let target = random_input(&mut rng, 4, model.output_width());
                ("mse", LossSpec::Mse(target), model, input)
            }
            1 => {
                specs.push(LayerSpec::Sigmoid);
                let model = MlpModel::init(input_width, &specs, &mut rng)?;
                let input = random_input(&mut rng, 4, input_width);
                let target = Matrix::from_fn(4, model.output_width(), |_, _| {
                    if rng.gen_bool(0.5) {
                        1.0
                    } else {
                        0.0
                    }
                });
                ("bce", LossSpec::Bce(target), model, input)
            }
            _ => {
                let model = MlpModel::init(input_width, &specs, &mut rng)?;
                let classes = model.output_width();
                let input = random_input(&mut rng, 4, input_width);
                let labels = (0..4).map(|_| rng.gen_range(0..classes)).collect();
                ("ce", LossSpec::CrossEntropy(labels), model, input)
            }
        };
        let max_rel_err = gradient_check(&model, &input, &loss_spec, h)?;
        cases.push(GridCase {
            specs: model.specs(),
            input_width,
            loss: loss_name,
            max_rel_err,
        });
    }
    Ok(cases)
}

fn random_input(rng: &mut ChaCha8Rng, batch: usize, width: usize) -> Matrix {
    // Offset away from zero keeps relu inputs off the kink.
    Matrix::from_fn(batch, width, |_, _| {
        let v: f64 = rng.gen_range(-1.0..1.0);
        if v.abs() < 0.05 {
            v + 0.1
        } else {
            v
        }
    })
}

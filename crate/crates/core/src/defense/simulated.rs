//! The simulated worst-case decoder: trained on the client's own data to
//! anticipate the strongest reconstruction adversary.

use rand_chacha::ChaCha8Rng;

use crate::attack::AttackTarget;
use crate::data::make_batches;
use crate::error::Result;
use crate::nn::{LayerSpec, Matrix, MlpModel, OptimKind, OptimizerState};

/// A decoder with its optimizer; warm-started across invocations by default.
pub struct DecoderState {
    pub decoder: MlpModel,
    pub optim: OptimizerState,
}

impl DecoderState {
    pub fn init(feature_width: usize, arch: &[LayerSpec], rng: &mut ChaCha8Rng) -> Result<Self> {
        let decoder = MlpModel::init(feature_width, arch, rng)?;
        let optim = OptimizerState::new(OptimKind::Adam, decoder.param_count());
        Ok(DecoderState { decoder, optim })
    }

    /// A fixed number of minimizing steps on the reconstruction loss over
    /// one batch of (features, raw) rows. Returns the last batch loss.
    pub fn fit_steps(
        &mut self,
        features: &Matrix,
        raw: &Matrix,
        target: &AttackTarget,
        steps: usize,
        lr: f64,
    ) -> Result<f64> {
        let mut last = f64::NAN;
        for _ in 0..steps {
            let trace = self.decoder.forward_train(features)?;
            let (l, grad) = target.loss(trace.output(), raw)?;
            let bundle = self.decoder.backward(&trace, &grad)?;
            self.optim.step(&mut self.decoder, &bundle, lr)?;
            last = l;
        }
        Ok(last)
    }
}

/// Trains the simulated decoder against a frozen client model over the full
/// shard for the given schedule, approximating the worst-case adversary who
/// holds the whole dataset.
#[allow(clippy::too_many_arguments)]
pub fn train_simulated_decoder(
    client_model: &MlpModel,
    shard: &Matrix,
    state: &mut DecoderState,
    target: &AttackTarget,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    seed: u64,
) -> Result<f64> {
    let features = client_model.forward_eval(shard)?.output().clone();
    let mut last = f64::NAN;
    for epoch in 0..epochs {
        let plan = make_batches(
            shard.rows(),
            batch_size.min(shard.rows()).max(1),
            crate::protocol::engine::mix_seed(seed, epoch as u64),
            true,
        )?;
        let mut sum = 0.0;
        for batch in &plan.batches {
            let f = features.select_rows(batch)?;
            let r = shard.select_rows(batch)?;
            sum += state.fit_steps(&f, &r, target, 1, lr)? * batch.len() as f64;
        }
        last = sum / shard.rows() as f64;
    }
    Ok(last)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::TargetKind;
    use crate::nn::Layer;
    use rand::SeedableRng;

    fn identity(width: usize) -> MlpModel {
        MlpModel::from_layers(
            width,
            vec![Layer::Linear {
                weight: Matrix::from_fn(width, width, |r, c| f64::from(r == c)),
                bias: vec![0.0; width],
            }],
        )
        .unwrap()
    }

    fn regression(width: usize) -> AttackTarget {
        AttackTarget {
            kind: TargetKind::Regression,
            victim_width: width,
            classes: 0,
        }
    }

    #[test]
    fn linear_decoder_recovers_identity() {
        let width = 4;
        let shard = Matrix::from_fn(64, width, |r, c| (((r * 5 + c * 3) % 9) as f64) / 9.0 - 0.4);
        let client = identity(width);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut state =
            DecoderState::init(width, &[LayerSpec::Linear(width, width)], &mut rng).unwrap();
        let target = regression(width);
        let final_loss =
            train_simulated_decoder(&client, &shard, &mut state, &target, 200, 0.01, 32, 7)
                .unwrap();
        assert!(final_loss < 1e-3, "loss {final_loss}");
    }

    #[test]
    fn zero_epoch_schedule_leaves_decoder_unchanged() {
        let width = 3;
        let shard = Matrix::from_fn(10, width, |r, c| (r + c) as f64);
        let client = identity(width);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut state =
            DecoderState::init(width, &[LayerSpec::Linear(width, width)], &mut rng).unwrap();
        let before = state.decoder.flatten();
        train_simulated_decoder(&client, &shard, &mut state, &regression(width), 0, 0.01, 8, 7)
            .unwrap();
        assert_eq!(state.decoder.flatten(), before);
    }

    #[test]
    fn warm_and_cold_starts_reach_similar_losses() {
        let width = 4;
        let shard = Matrix::from_fn(48, width, |r, c| (((r * 7 + c) % 11) as f64) / 11.0);
        let client = identity(width);
        let target = regression(width);

        // Cold: one long run from scratch.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut cold =
            DecoderState::init(width, &[LayerSpec::Linear(width, width)], &mut rng).unwrap();
        let cold_loss =
            train_simulated_decoder(&client, &shard, &mut cold, &target, 150, 0.01, 16, 1)
                .unwrap();

        // Warm: same budget split across invocations, state carried over.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut warm =
            DecoderState::init(width, &[LayerSpec::Linear(width, width)], &mut rng).unwrap();
        let mut warm_loss = f64::NAN;
        for round in 0..3 {
            warm_loss =
                train_simulated_decoder(&client, &shard, &mut warm, &target, 50, 0.01, 16, round)
                    .unwrap();
        }
        let denom = cold_loss.max(warm_loss).max(1e-9);
        assert!(
            ((cold_loss - warm_loss) / denom).abs() < 0.05 || warm_loss < 1e-4,
            "cold {cold_loss} warm {warm_loss}"
        );
    }
}

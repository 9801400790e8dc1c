//! Basic defense: before uploading features, the client re-fits the
//! simulated decoder and then descends the privacy loss directly, with no
//! proximity constraint on how far the model drifts.

use rand_chacha::ChaCha8Rng;

use crate::attack::AttackTarget;
use crate::defense::prox::privacy_term;
use crate::defense::simulated::DecoderState;
use crate::defense::PrivacyLossKind;
use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Matrix, MlpModel};
use crate::protocol::{BatchCtx, ClientState, DefenseHook};

/// Re-fits the simulated decoder on this batch, then runs unconstrained
/// gradient descent on the privacy loss. Returns the final privacy value.
#[allow(clippy::too_many_arguments)]
pub fn basic_defense_step(
    model: &mut MlpModel,
    batch: &Matrix,
    decoder: &mut DecoderState,
    target: &AttackTarget,
    g_kind: PrivacyLossKind,
    decoder_steps: usize,
    client_steps: usize,
    decoder_lr: f64,
    inner_lr: f64,
) -> Result<f64> {
    // Worst-case decoder refit on the current features.
    let features = model.forward_eval(batch)?.output().clone();
    decoder.fit_steps(&features, batch, target, decoder_steps, decoder_lr)?;

    if client_steps == 0 {
        return Ok(f64::NAN);
    }
    let mut theta = model.flatten();
    let arch = model.clone();
    let mut clamps = 0usize;
    let mut g_term = privacy_term(&arch, batch, &decoder.decoder, target, g_kind, &mut clamps);
    let mut last_g = f64::NAN;
    for _ in 0..client_steps {
        let (gv, grad) = g_term(&theta)?;
        if !gv.is_finite() {
            return Err(Error::Defense(format!(
                "basic defense objective became non-finite ({gv})"
            )));
        }
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= inner_lr * g;
        }
        last_g = gv;
    }
    drop(g_term);
    model.unflatten(&theta)?;
    model.check_params_finite()?;
    Ok(last_g)
}

/// Hook state for the basic defense across all clients.
pub struct BasicDefense {
    pub g_kind: PrivacyLossKind,
    decoder_steps: usize,
    client_steps: usize,
    decoder_lr: f64,
    inner_lr: f64,
    decoders: Vec<DecoderState>,
    targets: Vec<AttackTarget>,
}

impl BasicDefense {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        g_kind: PrivacyLossKind,
        decoder_steps: usize,
        client_steps: usize,
        decoder_lr: f64,
        inner_lr: f64,
        feature_widths: &[usize],
        archs: &[Vec<LayerSpec>],
        targets: Vec<AttackTarget>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut decoders = Vec::with_capacity(feature_widths.len());
        for (w, arch) in feature_widths.iter().zip(archs) {
            decoders.push(DecoderState::init(*w, arch, rng)?);
        }
        Ok(BasicDefense {
            g_kind,
            decoder_steps,
            client_steps,
            decoder_lr,
            inner_lr,
            decoders,
            targets,
        })
    }
}

impl DefenseHook for BasicDefense {
    fn before_upload(
        &mut self,
        _ctx: BatchCtx,
        client_idx: usize,
        client: &mut ClientState,
        batch_rows: &Matrix,
    ) -> Result<()> {
        basic_defense_step(
            &mut client.model,
            batch_rows,
            &mut self.decoders[client_idx],
            &self.targets[client_idx],
            self.g_kind,
            self.decoder_steps,
            self.client_steps,
            self.decoder_lr,
            self.inner_lr,
        )?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::TargetKind;
    use crate::defense::privacy_loss;
    use rand::SeedableRng;

    fn setup(width: usize) -> (MlpModel, Matrix, DecoderState, AttackTarget) {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let client =
            MlpModel::init(width, &[LayerSpec::Linear(width, width)], &mut rng).unwrap();
        let batch = Matrix::from_fn(16, width, |r, c| (((r * 3 + c) % 8) as f64) / 8.0 - 0.3);
        let decoder =
            DecoderState::init(width, &[LayerSpec::Linear(width, width)], &mut rng).unwrap();
        let target = AttackTarget {
            kind: TargetKind::Regression,
            victim_width: width,
            classes: 0,
        };
        (client, batch, decoder, target)
    }

    fn g_at(model: &MlpModel, batch: &Matrix, dec: &MlpModel, target: &AttackTarget) -> f64 {
        let f = model.forward_eval(batch).unwrap().output().clone();
        let out = dec.forward_eval(&f).unwrap().output().clone();
        let l = target.loss(&out, batch).unwrap().0;
        privacy_loss(l, PrivacyLossKind::Exp).unwrap().g
    }

    #[test]
    fn zero_client_steps_keep_the_model() {
        let (mut client, batch, mut decoder, target) = setup(3);
        let before = client.flatten();
        basic_defense_step(
            &mut client,
            &batch,
            &mut decoder,
            &target,
            PrivacyLossKind::Exp,
            2,
            0,
            0.01,
            0.01,
        )
        .unwrap();
        assert_eq!(client.flatten(), before);
    }

    #[test]
    fn descent_property_against_the_frozen_decoder() {
        let (mut client, batch, mut decoder, target) = setup(4);
        // Refit first so the decoder is meaningful, then snapshot it.
        basic_defense_step(
            &mut client,
            &batch,
            &mut decoder,
            &target,
            PrivacyLossKind::Exp,
            50,
            0,
            0.01,
            0.01,
        )
        .unwrap();
        let frozen = decoder.decoder.clone();
        let before = g_at(&client, &batch, &frozen, &target);
        basic_defense_step(
            &mut client,
            &batch,
            &mut decoder,
            &target,
            PrivacyLossKind::Exp,
            0,
            25,
            0.01,
            0.05,
        )
        .unwrap();
        let after = g_at(&client, &batch, &frozen, &target);
        assert!(after <= before, "g rose from {before} to {after}");
    }

    #[test]
    fn unconstrained_drift_grows_with_inner_steps() {
        let mut drifts = Vec::new();
        for steps in [1usize, 10, 50] {
            let (mut client, batch, mut decoder, target) = setup(4);
            let start = client.flatten();
            basic_defense_step(
                &mut client,
                &batch,
                &mut decoder,
                &target,
                PrivacyLossKind::Neg,
                30,
                steps,
                0.01,
                0.05,
            )
            .unwrap();
            let drift: f64 = client
                .flatten()
                .iter()
                .zip(&start)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            drifts.push(drift);
        }
        assert!(
            drifts[0] < drifts[1] && drifts[1] < drifts[2],
            "drift not increasing: {drifts:?}"
        );
    }
}

//! Naive defense: the privacy term rides along the task gradient in the
//! backward loop, so the intermediate outputs are uploaded before any
//! privacy correction and the decoder always lags one batch behind.

use rand_chacha::ChaCha8Rng;

use crate::attack::AttackTarget;
use crate::defense::simulated::DecoderState;
use crate::defense::{privacy_loss, PrivacyLossKind};
use crate::error::Result;
use crate::nn::{ForwardTrace, GradBundle, LayerSpec, Matrix, MlpModel};
use crate::protocol::{BatchCtx, DefenseHook};

/// Combined gradient of the naive objective for one client batch:
/// `grad_f + lambda * grad_g(theta, frozen decoder)`, where the privacy
/// gradient flows through the recorded forward trace into the decoder.
pub fn naive_defense_gradient(
    model: &MlpModel,
    trace: &ForwardTrace,
    batch_rows: &Matrix,
    decoder: &MlpModel,
    target: &AttackTarget,
    g_kind: PrivacyLossKind,
    lambda: f64,
    task_grads: &mut GradBundle,
) -> Result<()> {
    if lambda == 0.0 {
        return Ok(());
    }
    let dec_trace = decoder.forward_eval(trace.output())?;
    let (l, dl_dout) = target.loss(dec_trace.output(), batch_rows)?;
    let link = privacy_loss(l, g_kind)?;
    let dec_bundle = decoder.backward(&dec_trace, &dl_dout)?;
    let upstream = dec_bundle.input_grad.scale(link.dg_dl);
    let g_bundle = model.backward(trace, &upstream)?;
    task_grads.add_scaled(&g_bundle, lambda)
}

/// Hook state for the naive defense across all clients.
pub struct NaiveDefense {
    pub lambda: f64,
    pub g_kind: PrivacyLossKind,
    decoder_steps: usize,
    decoder_lr: f64,
    decoders: Vec<DecoderState>,
    targets: Vec<AttackTarget>,
}

impl NaiveDefense {
    pub fn new(
        lambda: f64,
        g_kind: PrivacyLossKind,
        decoder_steps: usize,
        decoder_lr: f64,
        feature_widths: &[usize],
        archs: &[Vec<LayerSpec>],
        targets: Vec<AttackTarget>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut decoders = Vec::with_capacity(feature_widths.len());
        for (w, arch) in feature_widths.iter().zip(archs) {
            decoders.push(DecoderState::init(*w, arch, rng)?);
        }
        Ok(NaiveDefense {
            lambda,
            g_kind,
            decoder_steps,
            decoder_lr,
            decoders,
            targets,
        })
    }
}

impl DefenseHook for NaiveDefense {
    fn augment_gradient(
        &mut self,
        _ctx: BatchCtx,
        client_idx: usize,
        model: &MlpModel,
        trace: &ForwardTrace,
        batch_rows: &Matrix,
        grads: &mut GradBundle,
    ) -> Result<()> {
        naive_defense_gradient(
            model,
            trace,
            batch_rows,
            &self.decoders[client_idx].decoder,
            &self.targets[client_idx],
            self.g_kind,
            self.lambda,
            grads,
        )
    }

    fn after_client_update(
        &mut self,
        _ctx: BatchCtx,
        client_idx: usize,
        _model: &MlpModel,
        trace: &ForwardTrace,
        batch_rows: &Matrix,
    ) -> Result<()> {
        // Refresh the simulated decoder on the features that were actually
        // uploaded; the gradient above therefore always used last batch's
        // decoder.
        self.decoders[client_idx].fit_steps(
            trace.output(),
            batch_rows,
            &self.targets[client_idx],
            self.decoder_steps,
            self.decoder_lr,
        )?;
        Ok(())
    }
}

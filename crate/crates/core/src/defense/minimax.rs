//! The minimax alternation: the simulated decoder ascends the privacy loss
//! while the client descends the proximal privacy objective, with optional
//! automatic balancing of the two step weights.

use serde::{Deserialize, Serialize};

use crate::attack::AttackTarget;
use crate::defense::prox::{privacy_term, proximity_term, ProxKind};
use crate::defense::simulated::DecoderState;
use crate::defense::{privacy_loss, PrivacyLossKind};
use crate::error::{Error, Result};
use crate::nn::{Matrix, MlpModel};

/// Hyperparameters of the minimax alternation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MinimaxConfig {
    /// Outer iterations.
    pub n2: usize,
    /// Decoder ascent steps per outer iteration.
    pub m1: usize,
    /// Client descent steps per outer iteration.
    pub m2: usize,
    pub tau_lr: f64,
    /// When set, the step weights are rebalanced after every outer iteration
    /// and renormalized to sum to one.
    pub auto_tau: bool,
    pub g_kind: PrivacyLossKind,
    pub prox_kind: ProxKind,
    pub decoder_lr: f64,
    pub inner_lr: f64,
}

impl Default for MinimaxConfig {
    fn default() -> Self {
        MinimaxConfig {
            n2: 10,
            m1: 1,
            m2: 1,
            tau_lr: 1e-2,
            auto_tau: true,
            g_kind: PrivacyLossKind::Exp,
            prox_kind: ProxKind::ParamL2,
            decoder_lr: 1e-3,
            inner_lr: 1e-3,
        }
    }
}

/// The two step weights; kept positive, renormalized after each auto update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauState {
    pub tau1: f64,
    pub tau2: f64,
}

impl TauState {
    pub fn new(tau1: f64, tau2: f64) -> Result<Self> {
        if tau1 < 0.0 || tau2 <= 0.0 {
            return Err(Error::domain(format!(
                "step weights tau1={tau1}, tau2={tau2} must be positive"
            )));
        }
        Ok(TauState { tau1, tau2 })
    }

    /// Multiplicative balancing toward the currently smaller term, then
    /// exact renormalization to `tau1 + tau2 = 1`.
    pub fn auto_update(&mut self, g_term: f64, prox_term: f64, tau_lr: f64) {
        self.tau1 *= (-tau_lr * g_term).exp();
        self.tau2 *= (-tau_lr * prox_term).exp();
        let sum = self.tau1 + self.tau2;
        self.tau1 /= sum;
        self.tau2 = 1.0 - self.tau1;
    }
}

/// Per-invocation diagnostics.
#[derive(Debug, Clone, Copy, Default)]
pub struct MinimaxDiag {
    pub g_value: f64,
    pub l_value: f64,
    pub prox_distance: f64,
    pub clamped: usize,
}

/// Runs the alternation on one batch and returns the client model moved to
/// the final iterate. The decoder ascends `g` (equivalently descends the
/// reconstruction loss); the client descends
/// `tau1 * g + tau2 * proximity(theta, theta_entry)` by plain gradient steps.
pub fn minimax(
    client_model: &mut MlpModel,
    batch: &Matrix,
    decoder: &mut DecoderState,
    target: &AttackTarget,
    cfg: &MinimaxConfig,
    tau: &mut TauState,
) -> Result<MinimaxDiag> {
    let mut diag = MinimaxDiag::default();
    if cfg.n2 == 0 {
        return Ok(diag);
    }
    let start = client_model.flatten();
    let mut theta = start.clone();
    for _ in 0..cfg.n2 {
        // Decoder ascent on g at the current client iterate. dg/dl < 0, so
        // feeding the optimizer dl scaled by -dg/dl ascends g.
        for _ in 0..cfg.m1 {
            let trace = client_model.forward_train(batch)?;
            let dec_trace = decoder.decoder.forward_train(trace.output())?;
            let (l, dl_dout) = target.loss(dec_trace.output(), batch)?;
            let link = privacy_loss(l, cfg.g_kind)?;
            if link.clamped {
                diag.clamped += 1;
            }
            let upstream = dl_dout.scale(-link.dg_dl);
            let bundle = decoder.decoder.backward(&dec_trace, &upstream)?;
            decoder
                .optim
                .step(&mut decoder.decoder, &bundle, cfg.decoder_lr)?;
            diag.l_value = l;
        }
        // Client descent on the proximal objective against the refreshed
        // decoder.
        let mut clamps = 0usize;
        {
            let arch = client_model.clone();
            let mut g_term =
                privacy_term(&arch, batch, &decoder.decoder, target, cfg.g_kind, &mut clamps);
            let mut p_term = proximity_term(cfg.prox_kind, &arch, batch, &start)?;
            for _ in 0..cfg.m2 {
                let (gv, ggrad) = g_term(&theta)?;
                let (pv, pgrad) = p_term(&theta)?;
                let obj = tau.tau1 * gv + tau.tau2 * pv;
                if !obj.is_finite() {
                    return Err(Error::Defense(format!(
                        "minimax objective became non-finite ({obj})"
                    )));
                }
                diag.g_value = gv;
                for i in 0..theta.len() {
                    theta[i] -= cfg.inner_lr * (tau.tau1 * ggrad[i] + tau.tau2 * pgrad[i]);
                }
            }
            if cfg.auto_tau {
                let (gv, _) = g_term(&theta)?;
                let (pv, _) = p_term(&theta)?;
                diag.g_value = gv;
                tau.auto_update(gv, pv, cfg.tau_lr);
            }
        }
        diag.clamped += clamps;
        client_model.unflatten(&theta)?;
    }
    let dist_sq: f64 = theta
        .iter()
        .zip(&start)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    diag.prox_distance = dist_sq.sqrt();
    client_model.check_params_finite()?;
    Ok(diag)
}

//! Forward-backward-split training: per batch, each client runs the minimax
//! backward step on the privacy loss before uploading, then the ordinary
//! forward step on the task loss proceeds unchanged.

use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attack::AttackTarget;
use crate::defense::minimax::{minimax, MinimaxConfig, TauState};
use crate::defense::simulated::DecoderState;
use crate::error::Result;
use crate::nn::{LayerSpec, Matrix};
use crate::protocol::{
    run, BatchCtx, ClientState, DefenseHook, EpochObserver, TrainHistory, VflSession,
};

/// Per-batch defense diagnostics, aggregated per epoch by the reporter.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DefenseDiagRow {
    pub epoch: usize,
    pub client: usize,
    pub tau1: f64,
    pub tau2: f64,
    pub g_value: f64,
    pub prox_distance: f64,
}

/// Hook state for the proposed defense across all clients.
pub struct FbsDefense {
    pub cfg: MinimaxConfig,
    decoders: Vec<DecoderState>,
    taus: Vec<TauState>,
    targets: Vec<AttackTarget>,
    /// Re-initialize the simulated decoder at every invocation instead of
    /// warm-starting it.
    cold_start: bool,
    archs: Vec<Vec<LayerSpec>>,
    feature_widths: Vec<usize>,
    rng: ChaCha8Rng,
    pub diags: Vec<DefenseDiagRow>,
}

impl FbsDefense {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        cfg: MinimaxConfig,
        tau1: f64,
        tau2: f64,
        feature_widths: &[usize],
        archs: &[Vec<LayerSpec>],
        targets: Vec<AttackTarget>,
        cold_start: bool,
        mut rng: ChaCha8Rng,
    ) -> Result<Self> {
        let mut decoders = Vec::with_capacity(feature_widths.len());
        for (w, arch) in feature_widths.iter().zip(archs) {
            decoders.push(DecoderState::init(*w, arch, &mut rng)?);
        }
        let taus = vec![TauState::new(tau1, tau2)?; feature_widths.len()];
        Ok(FbsDefense {
            cfg,
            decoders,
            taus,
            targets,
            cold_start,
            archs: archs.to_vec(),
            feature_widths: feature_widths.to_vec(),
            rng,
            diags: Vec::new(),
        })
    }

    pub fn taus(&self) -> &[TauState] {
        &self.taus
    }
}

impl DefenseHook for FbsDefense {
    fn before_upload(
        &mut self,
        ctx: BatchCtx,
        client_idx: usize,
        client: &mut ClientState,
        batch_rows: &Matrix,
    ) -> Result<()> {
        if self.cfg.n2 == 0 {
            return Ok(());
        }
        if self.cold_start {
            self.decoders[client_idx] = DecoderState::init(
                self.feature_widths[client_idx],
                &self.archs[client_idx],
                &mut self.rng,
            )?;
        }
        let diag = minimax(
            &mut client.model,
            batch_rows,
            &mut self.decoders[client_idx],
            &self.targets[client_idx],
            &self.cfg,
            &mut self.taus[client_idx],
        )?;
        self.diags.push(DefenseDiagRow {
            epoch: ctx.epoch,
            client: client_idx,
            tau1: self.taus[client_idx].tau1,
            tau2: self.taus[client_idx].tau2,
            g_value: diag.g_value,
            prox_distance: diag.prox_distance,
        });
        Ok(())
    }
}

/// Runs the full privacy-preserving loop: the backward (minimax) step per
/// client per batch, then the standard forward step on the task loss.
pub fn train_vfl_fbs(
    session: &mut VflSession,
    defense: &mut FbsDefense,
    observer: &mut dyn EpochObserver,
) -> Result<TrainHistory> {
    run(session, defense, observer)
}

//! The synchronous VFL engine: batch-aligned client forwards, top-model
//! step with pre-update feedback, client updates, and the epoch loop.

use std::time::Instant;

use crate::data::make_batches;
use crate::error::{Error, Result};
use crate::metrics;
use crate::nn::{ForwardTrace, GradBundle, Matrix, MlpModel, OptimizerState};
use crate::protocol::tap::FeatureTap;

/// Task loss family of the coordinator: cross-entropy over class logits, or
/// binary cross-entropy over a single sigmoid output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    MultiClass,
    Binary,
}

/// Evaluation score reported per epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMetric {
    Accuracy,
    AucPr,
}

#[derive(Debug, Clone, Copy)]
pub struct BatchCtx {
    pub epoch: usize,
    pub batch_index: usize,
}

/// One client: its local model, training shard and optimizer.
pub struct ClientState {
    pub id: usize,
    pub model: MlpModel,
    pub shard: Matrix,
    pub optim: OptimizerState,
    pending: Option<Pending>,
}

struct Pending {
    epoch: usize,
    batch_index: usize,
    trace: ForwardTrace,
    rows: Matrix,
}

/// Intermediate output uploaded by one client for one batch.
#[derive(Debug, Clone)]
pub struct IntermediateOutput {
    pub client: usize,
    pub epoch: usize,
    pub batch_index: usize,
    pub features: Matrix,
}

/// Error feedback returned to one client: the loss gradient w.r.t. its
/// intermediate output, evaluated at the pre-update top model.
#[derive(Debug, Clone)]
pub struct GradFeedback {
    pub client: usize,
    pub epoch: usize,
    pub batch_index: usize,
    pub grad: Matrix,
}

impl ClientState {
    pub fn new(id: usize, model: MlpModel, shard: Matrix, optim: OptimizerState) -> Result<Self> {
        if model.input_width() != shard.cols() {
            return Err(Error::shape(format!(
                "client {id} model expects {} inputs, shard has {} columns",
                model.input_width(),
                shard.cols()
            )));
        }
        Ok(ClientState {
            id,
            model,
            shard,
            optim,
            pending: None,
        })
    }

    /// Training forward over the given rows; retains the trace for the
    /// matching feedback.
    pub fn forward_batch(&mut self, rows: &Matrix, ctx: BatchCtx) -> Result<IntermediateOutput> {
        let trace = self.model.forward_train(rows)?;
        let features = trace.output().clone();
        self.pending = Some(Pending {
            epoch: ctx.epoch,
            batch_index: ctx.batch_index,
            trace,
            rows: rows.clone(),
        });
        Ok(IntermediateOutput {
            client: self.id,
            epoch: ctx.epoch,
            batch_index: ctx.batch_index,
            features,
        })
    }

    /// Consumes the pending trace for this feedback, rejecting stale or
    /// missing batches.
    fn take_pending(&mut self, fb: &GradFeedback) -> Result<(ForwardTrace, Matrix)> {
        let pending = self.pending.take().ok_or_else(|| {
            Error::Protocol(format!("client {}: feedback without a pending batch", self.id))
        })?;
        if pending.epoch != fb.epoch || pending.batch_index != fb.batch_index {
            return Err(Error::Protocol(format!(
                "client {}: stale feedback for epoch {} batch {}, pending epoch {} batch {}",
                self.id, fb.epoch, fb.batch_index, pending.epoch, pending.batch_index
            )));
        }
        if fb.grad.rows() != pending.trace.output().rows()
            || fb.grad.cols() != pending.trace.output().cols()
        {
            return Err(Error::Protocol(format!(
                "client {}: feedback shape {}x{} versus output {}x{}",
                self.id,
                fb.grad.rows(),
                fb.grad.cols(),
                pending.trace.output().rows(),
                pending.trace.output().cols()
            )));
        }
        Ok((pending.trace, pending.rows))
    }
}

/// One optimizer step on a client's local model through the chain rule.
pub fn client_backward(client: &mut ClientState, fb: &GradFeedback, lr: f64) -> Result<()> {
    let (trace, _rows) = client.take_pending(fb)?;
    let grads = client.model.backward(&trace, &fb.grad)?;
    client.optim.step(&mut client.model, &grads, lr)
}

/// Top model: per-client input heads, then a trunk over the concatenation.
pub struct TopModel {
    pub heads: Vec<MlpModel>,
    pub trunk: MlpModel,
}

impl TopModel {
    pub fn param_count(&self) -> usize {
        self.heads.iter().map(MlpModel::param_count).sum::<usize>() + self.trunk.param_count()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for h in &self.heads {
            out.extend(h.flatten());
        }
        out.extend(self.trunk.flatten());
        out
    }

    pub fn unflatten(&mut self, params: &[f64]) -> Result<()> {
        let mut pos = 0;
        for h in &mut self.heads {
            let n = h.param_count();
            h.unflatten(&params[pos..pos + n])?;
            pos += n;
        }
        self.trunk.unflatten(&params[pos..])
    }

    /// Evaluation-mode forward over per-client features, in client order.
    pub fn forward_eval(&self, outputs: &[Matrix]) -> Result<Matrix> {
        let mut head_outs = Vec::with_capacity(self.heads.len());
        for (h, o) in self.heads.iter().zip(outputs) {
            head_outs.push(h.forward_eval(o)?.output().clone());
        }
        let refs: Vec<&Matrix> = head_outs.iter().collect();
        let trunk_in = Matrix::hcat(&refs)?;
        Ok(self.trunk.forward_eval(&trunk_in)?.output().clone())
    }
}

/// Coordinator: the shared top model, its optimizer, and the task kind.
pub struct CoordinatorState {
    pub top: TopModel,
    pub optim: OptimizerState,
    pub task: TaskKind,
}

/// Result of one coordinator step.
pub struct TopStep {
    pub loss: f64,
    pub correct: usize,
    pub feedback: Vec<GradFeedback>,
}

/// Forward through heads and trunk, task loss against the batch labels,
/// per-client feedback at the pre-update top model, then one optimizer step
/// on the top model.
pub fn top_step(
    coord: &mut CoordinatorState,
    outputs: &[IntermediateOutput],
    labels: &[usize],
    lr: f64,
) -> Result<TopStep> {
    let m = coord.top.heads.len();
    if outputs.len() != m {
        return Err(Error::Protocol(format!(
            "{} client outputs for {} heads",
            outputs.len(),
            m
        )));
    }
    // Reduce in ascending client-id order regardless of arrival order.
    let mut by_id: Vec<Option<&IntermediateOutput>> = vec![None; m];
    for out in outputs {
        if out.client >= m {
            return Err(Error::Protocol(format!("unknown client id {}", out.client)));
        }
        if by_id[out.client].replace(out).is_some() {
            return Err(Error::Protocol(format!(
                "duplicate output from client {}",
                out.client
            )));
        }
    }
    let ordered: Vec<&IntermediateOutput> = by_id
        .into_iter()
        .enumerate()
        .map(|(id, o)| o.ok_or_else(|| Error::Protocol(format!("missing output from client {id}"))))
        .collect::<Result<_>>()?;
    let batch = ordered[0].features.rows();
    let (epoch, batch_index) = (ordered[0].epoch, ordered[0].batch_index);
    for out in &ordered {
        if out.features.rows() != batch || out.epoch != epoch || out.batch_index != batch_index {
            return Err(Error::Protocol(format!(
                "misaligned batch from client {}: {} rows at epoch {} batch {}",
                out.client, out.features.rows(), out.epoch, out.batch_index
            )));
        }
    }
    if labels.len() != batch {
        return Err(Error::Protocol(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }

    let mut head_traces = Vec::with_capacity(m);
    for (head, out) in coord.top.heads.iter_mut().zip(&ordered) {
        head_traces.push(head.forward_train(&out.features)?);
    }
    let head_outs: Vec<&Matrix> = head_traces.iter().map(ForwardTrace::output).collect();
    let trunk_in = Matrix::hcat(&head_outs)?;
    let trunk_trace = coord.top.trunk.forward_train(&trunk_in)?;
    let output = trunk_trace.output();

    let (loss, loss_grad) = match coord.task {
        TaskKind::MultiClass => crate::nn::loss::cross_entropy(output, labels)?,
        TaskKind::Binary => {
            let targets = Matrix::from_fn(batch, 1, |r, _| labels[r] as f64);
            crate::nn::loss::bce(output, &targets)?
        }
    };
    let correct = count_correct(output, labels, coord.task);

    // Feedback and top gradients at the pre-update parameters.
    let trunk_bundle = coord.top.trunk.backward(&trunk_trace, &loss_grad)?;
    let mut feedback = Vec::with_capacity(m);
    let mut head_bundles = Vec::with_capacity(m);
    let mut col = 0;
    for (head, trace) in coord.top.heads.iter().zip(&head_traces) {
        let width = head.output_width();
        let upstream = trunk_bundle.input_grad.col_block(col, width)?;
        col += width;
        let bundle = head.backward(trace, &upstream)?;
        feedback.push(GradFeedback {
            client: feedback.len(),
            epoch,
            batch_index,
            grad: bundle.input_grad.clone(),
        });
        head_bundles.push(bundle);
    }

    // Single optimizer over heads-then-trunk, matching TopModel::flatten.
    let mut grads = Vec::with_capacity(coord.top.param_count());
    for b in &head_bundles {
        grads.extend(b.flat());
    }
    grads.extend(trunk_bundle.flat());
    let mut params = coord.top.flatten();
    coord.optim.step_flat(&mut params, &grads, lr)?;
    coord.top.unflatten(&params)?;

    Ok(TopStep {
        loss,
        correct,
        feedback,
    })
}

fn count_correct(output: &Matrix, labels: &[usize], task: TaskKind) -> usize {
    match task {
        TaskKind::MultiClass => labels
            .iter()
            .enumerate()
            .filter(|(r, &y)| {
                let row = output.row(*r);
                let pred = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
                    .map_or(0, |(i, _)| i);
                pred == y
            })
            .count(),
        TaskKind::Binary => labels
            .iter()
            .enumerate()
            .filter(|(r, &y)| usize::from(output.get(*r, 0) >= 0.5) == y)
            .count(),
    }
}

/// Hook interface for client-side defenses, invoked inside the batch loop.
/// The default implementations do nothing, which is the undefended baseline.
pub trait DefenseHook {
    /// Runs before the client uploads features for this batch; may mutate
    /// the client's local model.
    fn before_upload(
        &mut self,
        _ctx: BatchCtx,
        _client_idx: usize,
        _client: &mut ClientState,
        _batch_rows: &Matrix,
    ) -> Result<()> {
        Ok(())
    }

    /// May add terms to the client's task gradient before the optimizer step.
    fn augment_gradient(
        &mut self,
        _ctx: BatchCtx,
        _client_idx: usize,
        _model: &MlpModel,
        _trace: &ForwardTrace,
        _batch_rows: &Matrix,
        _grads: &mut GradBundle,
    ) -> Result<()> {
        Ok(())
    }

    /// Runs after the client's optimizer step for this batch.
    fn after_client_update(
        &mut self,
        _ctx: BatchCtx,
        _client_idx: usize,
        _model: &MlpModel,
        _trace: &ForwardTrace,
        _batch_rows: &Matrix,
    ) -> Result<()> {
        Ok(())
    }
}

/// The undefended baseline.
pub struct NoDefense;

impl DefenseHook for NoDefense {}

/// Per-epoch callback, e.g. for attack evaluation against the live models.
pub trait EpochObserver {
    fn on_epoch_end(
        &mut self,
        _epoch: usize,
        _clients: &[ClientState],
        _tap: Option<&FeatureTap>,
    ) -> Result<()> {
        Ok(())
    }
}

pub struct NoObserver;

impl EpochObserver for NoObserver {}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub eval_score: f64,
    /// Wall-clock seconds; excluded from determinism comparisons.
    pub wall_time_s: f64,
}

pub type TrainHistory = Vec<EpochRecord>;

/// A fully prepared training run.
pub struct VflSession {
    pub clients: Vec<ClientState>,
    pub coordinator: CoordinatorState,
    pub train_labels: Vec<usize>,
    /// Global record index for each local training row, for the tap.
    pub train_record_ids: Vec<usize>,
    pub eval_shards: Vec<Matrix>,
    pub eval_labels: Vec<usize>,
    pub eval_metric: EvalMetric,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub batch_seed: u64,
    pub shuffle: bool,
    pub tap: Option<FeatureTap>,
}

/// SplitMix64; derives per-epoch batching seeds from the batching sub-seed.
pub fn mix_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs the synchronous loop for `session.epochs` epochs.
pub fn run(
    session: &mut VflSession,
    defense: &mut dyn DefenseHook,
    observer: &mut dyn EpochObserver,
) -> Result<TrainHistory> {
    let n = session.train_labels.len();
    if n == 0 {
        return Err(Error::domain("empty training split"));
    }
    if session.train_record_ids.len() != n {
        return Err(Error::Protocol(
            "train record ids do not match the training split".to_string(),
        ));
    }
    let mut history = Vec::with_capacity(session.epochs);
    for epoch in 1..=session.epochs {
        let started = Instant::now();
        let plan = make_batches(
            n,
            session.batch_size,
            mix_seed(session.batch_seed, epoch as u64),
            session.shuffle,
        )?;
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (batch_index, batch) in plan.batches.iter().enumerate() {
            let ctx = BatchCtx {
                epoch,
                batch_index,
            };
            let mut outputs = Vec::with_capacity(session.clients.len());
            for (m, client) in session.clients.iter_mut().enumerate() {
                let rows = client.shard.select_rows(batch)?;
                defense.before_upload(ctx, m, client, &rows)?;
                outputs.push(client.forward_batch(&rows, ctx)?);
            }
            if let Some(tap) = &mut session.tap {
                let global: Vec<usize> = batch
                    .iter()
                    .map(|&i| session.train_record_ids[i])
                    .collect();
                for out in &outputs {
                    tap.observe(epoch, batch_index, out.client, &global, &out.features)?;
                }
            }
            let labels: Vec<usize> = batch.iter().map(|&i| session.train_labels[i]).collect();
            let step = top_step(&mut session.coordinator, &outputs, &labels, session.lr)?;
            loss_sum += step.loss * batch.len() as f64;
            correct += step.correct;
            for (m, client) in session.clients.iter_mut().enumerate() {
                let fb = &step.feedback[m];
                let (trace, rows) = client.take_pending(fb)?;
                let mut grads = client.model.backward(&trace, &fb.grad)?;
                defense.augment_gradient(ctx, m, &client.model, &trace, &rows, &mut grads)?;
                client.optim.step(&mut client.model, &grads, session.lr)?;
                defense.after_client_update(ctx, m, &client.model, &trace, &rows)?;
            }
        }
        let eval_score = evaluate(session)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            train_accuracy: correct as f64 / n as f64,
            eval_score,
            wall_time_s: started.elapsed().as_secs_f64(),
        });
        observer.on_epoch_end(epoch, &session.clients, session.tap.as_ref())?;
    }
    if let Some(tap) = &mut session.tap {
        tap.flush()?;
    }
    Ok(history)
}

/// Evaluation-mode score on the held-out split.
pub fn evaluate(session: &VflSession) -> Result<f64> {
    if session.eval_labels.is_empty() {
        return Ok(0.0);
    }
    let mut outs = Vec::with_capacity(session.clients.len());
    for (client, shard) in session.clients.iter().zip(&session.eval_shards) {
        outs.push(client.model.forward_eval(shard)?.output().clone());
    }
    let output = session.coordinator.top.forward_eval(&outs)?;
    match session.eval_metric {
        EvalMetric::Accuracy => {
            let correct = count_correct(&output, &session.eval_labels, session.coordinator.task);
            Ok(correct as f64 / session.eval_labels.len() as f64)
        }
        EvalMetric::AucPr => {
            let scores: Vec<f64> = (0..output.rows()).map(|r| output.get(r, 0)).collect();
            let labels: Vec<u8> = session.eval_labels.iter().map(|&y| y as u8).collect();
            metrics::auc_pr(&scores, &labels)
        }
    }
}

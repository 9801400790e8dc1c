//! Reconstruction attacks by the honest-but-curious coordinator: pairing
//! poisoned records' raw attributes with tapped features, training static
//! or adaptive decoders, and scoring leakage on unseen records.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{make_batches, ColumnKind, PoisonSet};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricKind, PrivacyMeasurement};
use crate::nn::{loss, LayerSpec, Matrix, MlpModel, OptimKind, OptimizerState};
use crate::protocol::{engine::mix_seed, ClientState, EpochObserver, FeatureTap, TapRecord};

/// One decoder training unit: a poisoned record's tapped features paired
/// with its raw attributes.
#[derive(Debug, Clone)]
pub struct FeaturePair {
    pub record: usize,
    pub epoch: usize,
    pub features: Vec<f64>,
    pub raw: Vec<f64>,
}

/// What the decoder reconstructs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// Every victim column is a binary attribute; one sigmoid head each.
    BinaryAttributes,
    /// One integer-coded categorical column, classified over its range.
    CategoricalAttribute { column: usize },
    /// All victim columns as a regression target.
    Regression,
}

/// Resolved attack target: kind plus the victim shard geometry.
#[derive(Debug, Clone)]
pub struct AttackTarget {
    pub kind: TargetKind,
    pub victim_width: usize,
    /// Class count for the categorical case.
    pub classes: usize,
}

impl AttackTarget {
    pub fn resolve(kind: TargetKind, schema: &[ColumnKind]) -> Result<Self> {
        let victim_width = schema.len();
        match kind {
            TargetKind::BinaryAttributes => {
                if !schema.iter().all(|k| matches!(k, ColumnKind::Binary)) {
                    return Err(Error::AttackSetup(
                        "binary-attribute target over non-binary columns".to_string(),
                    ));
                }
                Ok(AttackTarget {
                    kind,
                    victim_width,
                    classes: 2,
                })
            }
            TargetKind::CategoricalAttribute { column } => {
                let Some(ColumnKind::Categorical(k)) = schema.get(column) else {
                    return Err(Error::AttackSetup(format!(
                        "column {column} is not categorical in the victim shard"
                    )));
                };
                Ok(AttackTarget {
                    kind,
                    victim_width,
                    classes: *k,
                })
            }
            TargetKind::Regression => Ok(AttackTarget {
                kind,
                victim_width,
                classes: 0,
            }),
        }
    }

    /// Output width the decoder must produce.
    pub fn output_width(&self) -> usize {
        match self.kind {
            TargetKind::BinaryAttributes | TargetKind::Regression => self.victim_width,
            TargetKind::CategoricalAttribute { .. } => self.classes,
        }
    }

    /// Default decoder stack for a given feature width.
    pub fn default_decoder(&self, feature_width: usize) -> Vec<LayerSpec> {
        match self.kind {
            TargetKind::BinaryAttributes => vec![
                LayerSpec::Relu,
                LayerSpec::Linear(feature_width, self.victim_width),
                LayerSpec::Sigmoid,
            ],
            TargetKind::CategoricalAttribute { .. } => vec![
                LayerSpec::Linear(feature_width, 32),
                LayerSpec::Relu,
                LayerSpec::Linear(32, self.classes),
            ],
            TargetKind::Regression => vec![
                LayerSpec::Linear(feature_width, 32),
                LayerSpec::Relu,
                LayerSpec::Linear(32, self.victim_width),
            ],
        }
    }

    /// Reconstruction loss and gradient of decoder output against raw rows.
    pub fn loss(&self, output: &Matrix, raw: &Matrix) -> Result<(f64, Matrix)> {
        match self.kind {
            TargetKind::BinaryAttributes => loss::bce(output, raw),
            TargetKind::Regression => loss::mse(output, raw),
            TargetKind::CategoricalAttribute { column } => {
                let labels: Vec<usize> = (0..raw.rows())
                    .map(|r| raw.get(r, column) as usize)
                    .collect();
                loss::cross_entropy(output, &labels)
            }
        }
    }
}

/// Decoder training schedule.
#[derive(Debug, Clone, Copy)]
pub struct DecoderHyper {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

/// Groups tapped features into per-epoch feature pairs, joining raw rows
/// from the victim's full shard by global record index.
pub fn collect_poison_pairs(
    taps: &[TapRecord],
    poison: &PoisonSet,
    victim_full_shard: &Matrix,
) -> Result<BTreeMap<usize, Vec<FeaturePair>>> {
    let mut by_epoch: BTreeMap<usize, Vec<FeaturePair>> = BTreeMap::new();
    for tap in taps {
        let pairs = by_epoch.entry(tap.epoch).or_default();
        for (i, &record) in tap.records.iter().enumerate() {
            if !poison.contains(record) {
                return Err(Error::AttackSetup(format!(
                    "tap carries record {record} outside the poison set"
                )));
            }
            if record >= victim_full_shard.rows() {
                return Err(Error::AttackSetup(format!(
                    "tap record {record} outside the victim shard"
                )));
            }
            pairs.push(FeaturePair {
                record,
                epoch: tap.epoch,
                features: tap.features.row(i).to_vec(),
                raw: victim_full_shard.row(record).to_vec(),
            });
        }
    }
    for (epoch, pairs) in &by_epoch {
        if pairs.len() != poison.len() {
            return Err(Error::AttackSetup(format!(
                "epoch {epoch} collected {} pairs for a poison set of {}",
                pairs.len(),
                poison.len()
            )));
        }
    }
    Ok(by_epoch)
}

fn pairs_to_matrices(pairs: &[FeaturePair]) -> Result<(Matrix, Matrix)> {
    let rows = pairs.len();
    let fw = pairs[0].features.len();
    let rw = pairs[0].raw.len();
    let mut f = Vec::with_capacity(rows * fw);
    let mut r = Vec::with_capacity(rows * rw);
    for p in pairs {
        if p.features.len() != fw || p.raw.len() != rw {
            return Err(Error::AttackSetup("ragged feature pairs".to_string()));
        }
        f.extend_from_slice(&p.features);
        r.extend_from_slice(&p.raw);
    }
    Ok((Matrix::from_vec(rows, fw, f)?, Matrix::from_vec(rows, rw, r)?))
}

/// Shared mini-batch trainer for decoders; returns the final mean loss.
fn train_decoder_epochs(
    decoder: &mut MlpModel,
    optim: &mut OptimizerState,
    rng: &mut ChaCha8Rng,
    features: &Matrix,
    raw: &Matrix,
    target: &AttackTarget,
    hyper: &DecoderHyper,
) -> Result<f64> {
    use rand::Rng;
    let n = features.rows();
    let mut last = f64::NAN;
    for _ in 0..hyper.epochs {
        let plan = make_batches(n, hyper.batch_size.min(n).max(1), rng.gen(), true)?;
        let mut sum = 0.0;
        for batch in &plan.batches {
            let x = features.select_rows(batch)?;
            let y = raw.select_rows(batch)?;
            let trace = decoder.forward_train(&x)?;
            let (l, grad) = target.loss(trace.output(), &y)?;
            let bundle = decoder.backward(&trace, &grad)?;
            optim.step(decoder, &bundle, hyper.lr)?;
            sum += l * batch.len() as f64;
        }
        last = sum / n as f64;
    }
    Ok(last)
}

/// Trains a fresh decoder on pairs captured at a single epoch.
pub fn train_static_decoder(
    pairs: &[FeaturePair],
    arch: &[LayerSpec],
    target: &AttackTarget,
    hyper: &DecoderHyper,
    seed: u64,
) -> Result<MlpModel> {
    if pairs.is_empty() {
        return Err(Error::AttackSetup("no pairs to train on".to_string()));
    }
    let epoch = pairs[0].epoch;
    if pairs.iter().any(|p| p.epoch != epoch) {
        return Err(Error::AttackSetup(
            "static decoder over pairs from multiple epochs".to_string(),
        ));
    }
    let (features, raw) = pairs_to_matrices(pairs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut decoder = MlpModel::init(features.cols(), arch, &mut rng)?;
    let mut optim = OptimizerState::new(OptimKind::Adam, decoder.param_count());
    train_decoder_epochs(
        &mut decoder, &mut optim, &mut rng, &features, &raw, target, hyper,
    )?;
    Ok(decoder)
}

/// One decoder warm-started across the stream of per-epoch pair batches.
pub struct AdaptiveAttacker {
    pub decoder: MlpModel,
    optim: OptimizerState,
    rng: ChaCha8Rng,
    target: AttackTarget,
    hyper: DecoderHyper,
    last_epoch: Option<usize>,
}

impl AdaptiveAttacker {
    pub fn new(
        feature_width: usize,
        arch: &[LayerSpec],
        target: AttackTarget,
        hyper: DecoderHyper,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let decoder = MlpModel::init(feature_width, arch, &mut rng)?;
        let optim = OptimizerState::new(OptimKind::Adam, decoder.param_count());
        Ok(AdaptiveAttacker {
            decoder,
            optim,
            rng,
            target,
            hyper,
        last_epoch: None,
        })
    }

    /// Total optimizer steps taken so far.
    pub fn steps(&self) -> u64 {
        self.optim.step_count()
    }

    /// Trains `hyper.epochs` inner epochs on one VFL epoch's pairs. The
    /// stream must arrive in epoch order.
    pub fn observe_epoch(&mut self, pairs: &[FeaturePair]) -> Result<f64> {
        if pairs.is_empty() {
            return Err(Error::AttackSetup("empty pair batch".to_string()));
        }
        let epoch = pairs[0].epoch;
        if pairs.iter().any(|p| p.epoch != epoch) {
            return Err(Error::AttackSetup(
                "adaptive batch mixes epochs".to_string(),
            ));
        }
        if let Some(last) = self.last_epoch {
            if epoch <= last {
                return Err(Error::AttackSetup(format!(
                    "pair stream out of order: epoch {epoch} after {last}"
                )));
            }
        }
        self.last_epoch = Some(epoch);
        let (features, raw) = pairs_to_matrices(pairs)?;
        train_decoder_epochs(
            &mut self.decoder,
            &mut self.optim,
            &mut self.rng,
            &features,
            &raw,
            &self.target,
            &self.hyper,
        )
    }
}

/// Scores a decoder against a victim model on unseen records.
///
/// `eval_ids` are global record indices; they must be disjoint from the
/// poison set.
pub fn evaluate_attack(
    decoder: &MlpModel,
    victim_model: &MlpModel,
    victim_full_shard: &Matrix,
    eval_ids: &[usize],
    poison: &PoisonSet,
    target: &AttackTarget,
    metric: MetricKind,
) -> Result<PrivacyMeasurement> {
    if let Some(id) = eval_ids.iter().find(|id| poison.contains(**id)) {
        return Err(Error::AttackSetup(format!(
            "evaluation record {id} overlaps the poison set"
        )));
    }
    if eval_ids.is_empty() {
        return Err(Error::AttackSetup("no evaluation records".to_string()));
    }
    let rows = victim_full_shard.select_rows(eval_ids)?;
    let features = victim_model.forward_eval(&rows)?.output().clone();
    let output = decoder.forward_eval(&features)?.output().clone();
    let value = match target.kind {
        TargetKind::BinaryAttributes => {
            let pred: Vec<u8> = output.data().iter().map(|&p| u8::from(p >= 0.5)).collect();
            let truth: Vec<u8> = rows.data().iter().map(|&v| u8::from(v != 0.0)).collect();
            let c = metrics::classification_metrics(&pred, &truth)?;
            match metric {
                MetricKind::Recall => c.recall(),
                MetricKind::Precision => c.precision(),
                MetricKind::F1 => c.f1(),
                MetricKind::ErrorRate => c.error_rate(),
                other => {
                    return Err(Error::domain(format!(
                        "{other:?} not defined for binary-attribute attacks"
                    )))
                }
            }
        }
        TargetKind::CategoricalAttribute { column } => {
            let pred: Vec<usize> = (0..output.rows())
                .map(|r| {
                    output
                        .row(r)
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
                        .map_or(0, |(i, _)| i)
                })
                .collect();
            let truth: Vec<usize> = (0..rows.rows()).map(|r| rows.get(r, column) as usize).collect();
            match metric {
                MetricKind::ErrorRate => metrics::error_rate_multiclass(&pred, &truth)?,
                other => {
                    return Err(Error::domain(format!(
                        "{other:?} not defined for categorical attacks"
                    )))
                }
            }
        }
        TargetKind::Regression => match metric {
            MetricKind::Mse => metrics::mse_metric(&output, &rows)?,
            other => {
                return Err(Error::domain(format!(
                    "{other:?} not defined for regression attacks"
                )))
            }
        },
    };
    Ok(PrivacyMeasurement {
        kind: metric,
        value,
    })
}

/// Attack orchestration mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    None,
    Static,
    Adaptive,
}

/// Per-epoch privacy measurements and the minimum-privacy summary.
#[derive(Debug, Clone)]
pub struct AttackReport {
    pub entries: Vec<(usize, PrivacyMeasurement)>,
}

impl AttackReport {
    /// The leakiest per-epoch value under the metric's leakage direction.
    pub fn min_privacy(&self) -> Result<PrivacyMeasurement> {
        let series: Vec<PrivacyMeasurement> = self.entries.iter().map(|(_, m)| *m).collect();
        metrics::min_privacy(&series)
    }
}

/// Epoch observer wiring the attack into a training run: collects this
/// epoch's pairs from the tap, trains (static) or continues (adaptive) the
/// decoder, and scores leakage against the live victim model.
pub struct AttackDriver {
    pub mode: AttackMode,
    pub victim: usize,
    pub metric: MetricKind,
    target: AttackTarget,
    arch: Vec<LayerSpec>,
    hyper: DecoderHyper,
    seed: u64,
    victim_full_shard: Matrix,
    eval_ids: Vec<usize>,
    poison: PoisonSet,
    adaptive: Option<AdaptiveAttacker>,
    pub report: AttackReport,
}

impl AttackDriver {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mode: AttackMode,
        victim: usize,
        target: AttackTarget,
        arch: Vec<LayerSpec>,
        hyper: DecoderHyper,
        metric: MetricKind,
        seed: u64,
        victim_full_shard: Matrix,
        eval_ids: Vec<usize>,
        poison: PoisonSet,
    ) -> Self {
        AttackDriver {
            mode,
            victim,
            metric,
            target,
            arch,
            hyper,
            seed,
            victim_full_shard,
            eval_ids,
            poison,
            adaptive: None,
            report: AttackReport {
                entries: Vec::new(),
            },
        }
    }
}

impl EpochObserver for AttackDriver {
    fn on_epoch_end(
        &mut self,
        epoch: usize,
        clients: &[ClientState],
        tap: Option<&FeatureTap>,
    ) -> Result<()> {
        if self.mode == AttackMode::None {
            return Ok(());
        }
        let tap = tap.ok_or_else(|| {
            Error::AttackSetup("attack configured but no feature tap attached".to_string())
        })?;
        let epoch_taps: Vec<TapRecord> = tap
            .records
            .iter()
            .filter(|t| t.epoch == epoch)
            .cloned()
            .collect();
        let by_epoch = collect_poison_pairs(&epoch_taps, &self.poison, &self.victim_full_shard)?;
        let Some(pairs) = by_epoch.get(&epoch) else {
            return Err(Error::AttackSetup(format!(
                "no pairs captured at epoch {epoch}"
            )));
        };
        let decoder = match self.mode {
            AttackMode::Static => train_static_decoder(
                pairs,
                &self.arch,
                &self.target,
                &self.hyper,
                mix_seed(self.seed, epoch as u64),
            )?,
            AttackMode::Adaptive => {
                if self.adaptive.is_none() {
                    self.adaptive = Some(AdaptiveAttacker::new(
                        pairs[0].features.len(),
                        &self.arch,
                        self.target.clone(),
                        self.hyper,
                        self.seed,
                    )?);
                }
                let attacker = self.adaptive.as_mut().unwrap();
                attacker.observe_epoch(pairs)?;
                attacker.decoder.clone()
            }
            AttackMode::None => unreachable!(),
        };
        let measurement = evaluate_attack(
            &decoder,
            &clients[self.victim].model,
            &self.victim_full_shard,
            &self.eval_ids,
            &self.poison,
            &self.target,
            self.metric,
        )?;
        self.report.entries.push((epoch, measurement));
        Ok(())
    }
}

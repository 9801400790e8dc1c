//! Experiment execution: builds a session from a resolved config, runs the
//! configured arm end-to-end, and writes machine-readable results.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{AttackDriver, AttackMode, AttackTarget, DecoderHyper};
use crate::data::{
    gen_adult_like, gen_credit_like, gen_purchase_like, load_csv, partition_vertical,
    sample_poison, split_train_eval, CsvSchema, Dataset, PartitionedDataset,
};
use crate::defense::{
    BasicDefense, DefenseDiagRow, FbsDefense, MinimaxConfig, NaiveDefense,
};
use crate::error::{Error, Result};
use crate::exp::config::{
    stack_output_width, DatasetKind, DefenseMode, EvalMetricCfg, ExperimentConfig,
};
use crate::exp::seeds::SubSeeds;
use crate::metrics::{min_privacy, MetricKind, PrivacyMeasurement};
use crate::nn::{checkpoint, Matrix, MlpModel, OptimizerState};
use crate::protocol::{
    engine::mix_seed, run, ClientState, CoordinatorState, EpochObserver, EvalMetric, FeatureTap,
    NoDefense, NoObserver, TaskKind, TopModel, TrainHistory, VflSession,
};

/// One per-epoch row of results.jsonl.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub eval_accuracy_or_auc: f64,
    pub privacy_metric_kind: Option<MetricKind>,
    pub privacy_value: Option<f64>,
    pub tau1: Option<f64>,
    pub tau2: Option<f64>,
}

/// Summary block, recomputable from the rows.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunSummary {
    pub privacy_metric_kind: Option<MetricKind>,
    pub min_privacy: Option<f64>,
    pub final_accuracy: f64,
    pub accuracy_drop_vs_baseline: Option<f64>,
}

/// Everything a finished arm produced.
pub struct RunOutcome {
    pub config_hash: String,
    pub history: TrainHistory,
    pub rows: Vec<RunRow>,
    pub summary: RunSummary,
    pub out_dir: PathBuf,
    /// Final client parameters, in client order.
    pub client_params: Vec<Vec<f64>>,
    pub top_params: Vec<f64>,
}

enum DefenseArm {
    None(NoDefense),
    Naive(Box<NaiveDefense>),
    Basic(Box<BasicDefense>),
    Fbs(Box<FbsDefense>),
}

/// Builds the dataset described by the config.
pub fn build_dataset(cfg: &ExperimentConfig, data_seed: u64) -> Result<Dataset> {
    let ds = &cfg.dataset;
    match ds.kind {
        DatasetKind::PurchaseLike => gen_purchase_like(
            ds.n.unwrap(),
            ds.d.unwrap(),
            ds.classes.unwrap(),
            data_seed,
        ),
        DatasetKind::CreditLike => gen_credit_like(
            ds.n.unwrap(),
            ds.d.unwrap(),
            ds.positive_rate.unwrap(),
            data_seed,
        ),
        DatasetKind::AdultLike => gen_adult_like(
            ds.n.unwrap(),
            ds.attr_cardinalities.as_ref().unwrap(),
            data_seed,
        ),
        DatasetKind::Csv => load_csv(
            ds.csv_path.as_ref().unwrap(),
            &CsvSchema {
                features: ds.schema.clone().unwrap(),
                classes: ds.classes.unwrap(),
            },
        ),
    }
}

struct Prepared {
    session: VflSession,
    defense: DefenseArm,
    attack: Option<AttackDriver>,
}

fn prepare(cfg: &ExperimentConfig, features_jsonl: Option<&Path>) -> Result<Prepared> {
    let seeds = SubSeeds::derive(cfg.seed);
    let dataset = build_dataset(cfg, seeds.data)?;
    let partition = partition_vertical(&dataset, cfg.partition.as_ref().unwrap())?;
    let (train_ids, eval_ids) = split_train_eval(dataset.len(), mix_seed(seeds.data, 17));

    // Models, initialized in a fixed order from the init stream.
    let mut init_rng = ChaCha8Rng::seed_from_u64(seeds.init);
    let client_stacks = cfg.models.clients.as_ref().unwrap();
    let head_stacks = cfg.models.heads.as_ref().unwrap();
    let trunk_stack = cfg.models.trunk.as_ref().unwrap();
    let optimizer = cfg.train.optimizer.unwrap();

    let mut clients = Vec::with_capacity(partition.num_clients());
    let mut feature_widths = Vec::with_capacity(partition.num_clients());
    for (m, stack) in client_stacks.iter().enumerate() {
        let model = MlpModel::init(partition.split_widths[m], stack, &mut init_rng)?;
        feature_widths.push(model.output_width());
        let shard = partition.shards[m].select_rows(&train_ids)?;
        let optim = OptimizerState::new(optimizer, model.param_count());
        clients.push(ClientState::new(m, model, shard, optim)?);
    }
    let mut heads = Vec::with_capacity(head_stacks.len());
    for (m, stack) in head_stacks.iter().enumerate() {
        heads.push(MlpModel::init(feature_widths[m], stack, &mut init_rng)?);
    }
    let trunk_in: usize = heads.iter().map(MlpModel::output_width).sum();
    let trunk = MlpModel::init(trunk_in, trunk_stack, &mut init_rng)?;
    let top = TopModel { heads, trunk };
    let top_optim = OptimizerState::new(optimizer, top.param_count());
    let task = if cfg.classes() > 2 {
        TaskKind::MultiClass
    } else {
        TaskKind::Binary
    };
    let coordinator = CoordinatorState {
        top,
        optim: top_optim,
        task,
    };

    let train_labels: Vec<usize> = train_ids.iter().map(|&i| dataset.labels[i]).collect();
    let eval_labels: Vec<usize> = eval_ids.iter().map(|&i| dataset.labels[i]).collect();
    let eval_shards: Vec<Matrix> = partition
        .shards
        .iter()
        .map(|s| s.select_rows(&eval_ids))
        .collect::<Result<_>>()?;

    // Attack wiring: poison sampling, tap, driver.
    let attack_mode = cfg.attack.mode.unwrap();
    let (tap, attack) = if attack_mode == AttackMode::None {
        (None, None)
    } else {
        let victim = cfg.attack.victim.unwrap();
        let poison = sample_poison(&train_ids, cfg.attack.alpha.unwrap(), seeds.attack)?;
        let tap = FeatureTap::new(victim, &poison, features_jsonl)?;
        let target = AttackTarget::resolve(
            cfg.attack.target.unwrap(),
            &partition.shard_schemas[victim],
        )?;
        let arch = cfg
            .models
            .decoder
            .clone()
            .unwrap_or_else(|| target.default_decoder(feature_widths[victim]));
        let hyper = DecoderHyper {
            epochs: cfg.attack.decoder_epochs.unwrap(),
            lr: cfg.attack.decoder_lr.unwrap(),
            batch_size: cfg.attack.decoder_batch.unwrap(),
        };
        let attack_eval_ids: Vec<usize> = train_ids
            .iter()
            .copied()
            .filter(|i| !poison.contains(*i))
            .collect();
        let driver = AttackDriver::new(
            attack_mode,
            victim,
            target,
            arch,
            hyper,
            cfg.attack.metric.unwrap(),
            seeds.attack,
            partition.shards[victim].clone(),
            attack_eval_ids,
            poison,
        );
        (Some(tap), Some(driver))
    };

    let defense = build_defense(cfg, &partition, &feature_widths, seeds.defense)?;

    let session = VflSession {
        clients,
        coordinator,
        train_labels,
        train_record_ids: train_ids,
        eval_shards,
        eval_labels,
        eval_metric: match cfg.train.eval_metric.unwrap() {
            EvalMetricCfg::Accuracy => EvalMetric::Accuracy,
            EvalMetricCfg::AucPr => EvalMetric::AucPr,
        },
        epochs: cfg.train.epochs.unwrap(),
        batch_size: cfg.train.batch_size.unwrap(),
        lr: cfg.train.lr.unwrap(),
        batch_seed: SubSeeds::derive(cfg.seed).batching,
        shuffle: cfg.train.shuffle.unwrap(),
        tap,
    };
    Ok(Prepared {
        session,
        defense,
        attack,
    })
}

fn build_defense(
    cfg: &ExperimentConfig,
    partition: &PartitionedDataset,
    feature_widths: &[usize],
    defense_seed: u64,
) -> Result<DefenseArm> {
    let d = &cfg.defense;
    let mode = d.mode.unwrap();
    if mode == DefenseMode::None {
        return Ok(DefenseArm::None(NoDefense));
    }
    // Every client defends its own shard with the attack target family
    // resolved against its local schema.
    let kind = cfg.attack.target.unwrap();
    let targets: Vec<AttackTarget> = partition
        .shard_schemas
        .iter()
        .map(|schema| AttackTarget::resolve(kind, schema))
        .collect::<Result<_>>()?;
    let archs: Vec<Vec<crate::nn::LayerSpec>> = match &cfg.models.sim_decoder {
        Some(stack) => {
            for (m, (&fw, target)) in feature_widths.iter().zip(&targets).enumerate() {
                let out = stack_output_width(fw, stack).map_err(|e| {
                    Error::config("models.sim_decoder", format!("client {m}: {e}"))
                })?;
                if out != target.output_width() {
                    return Err(Error::config(
                        "models.sim_decoder",
                        format!(
                            "client {m}: produces {out} outputs, target needs {}",
                            target.output_width()
                        ),
                    ));
                }
            }
            vec![stack.clone(); feature_widths.len()]
        }
        None => targets
            .iter()
            .zip(feature_widths)
            .map(|(t, &fw)| t.default_decoder(fw))
            .collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(defense_seed);
    Ok(match mode {
        DefenseMode::None => unreachable!(),
        DefenseMode::Naive => DefenseArm::Naive(Box::new(NaiveDefense::new(
            d.lambda.unwrap(),
            d.g_kind.unwrap(),
            d.m1.unwrap().max(1),
            d.decoder_lr.unwrap(),
            feature_widths,
            &archs,
            targets,
            &mut rng,
        )?)),
        DefenseMode::Basic => DefenseArm::Basic(Box::new(BasicDefense::new(
            d.g_kind.unwrap(),
            d.n2.unwrap() * d.m1.unwrap(),
            d.n2.unwrap() * d.m2.unwrap(),
            d.decoder_lr.unwrap(),
            d.inner_lr.unwrap(),
            feature_widths,
            &archs,
            targets,
            &mut rng,
        )?)),
        DefenseMode::FbsAuto | DefenseMode::FbsFixed => {
            let mm = MinimaxConfig {
                n2: d.n2.unwrap(),
                m1: d.m1.unwrap(),
                m2: d.m2.unwrap(),
                tau_lr: d.tau_lr.unwrap(),
                auto_tau: mode == DefenseMode::FbsAuto && d.auto_tau.unwrap(),
                g_kind: d.g_kind.unwrap(),
                prox_kind: d.prox_kind.unwrap(),
                decoder_lr: d.decoder_lr.unwrap(),
                inner_lr: d.inner_lr.unwrap(),
            };
            DefenseArm::Fbs(Box::new(FbsDefense::new(
                mm,
                d.tau1.unwrap(),
                d.tau2.unwrap(),
                feature_widths,
                &archs,
                targets,
                d.cold_start.unwrap(),
                rng,
            )?))
        }
    })
}

/// Executes the configured arm end-to-end and writes results under
/// `out_dir`: the resolved config, per-epoch results, a summary, model
/// checkpoints, and the attack/defense side files when configured.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome> {
    std::fs::create_dir_all(out_dir)?;
    let hash = cfg.hash();

    let features_path = out_dir.join("features.jsonl");
    let attack_on = cfg.attack.mode.unwrap_or(AttackMode::None) != AttackMode::None;
    let mut prepared = prepare(cfg, attack_on.then_some(features_path.as_path()))?;

    let history = {
        let mut observer: Box<dyn EpochObserver> = match prepared.attack.as_mut() {
            Some(driver) => Box::new(DriverProxy(driver)),
            None => Box::new(NoObserver),
        };
        match &mut prepared.defense {
            DefenseArm::None(d) => run(&mut prepared.session, d, observer.as_mut())?,
            DefenseArm::Naive(d) => run(&mut prepared.session, d.as_mut(), observer.as_mut())?,
            DefenseArm::Basic(d) => run(&mut prepared.session, d.as_mut(), observer.as_mut())?,
            DefenseArm::Fbs(d) => run(&mut prepared.session, d.as_mut(), observer.as_mut())?,
        }
    };

    // Per-epoch rows: training metrics joined with attack measurements and
    // defense step weights.
    let attack_entries: Vec<(usize, PrivacyMeasurement)> = prepared
        .attack
        .as_ref()
        .map(|a| a.report.entries.clone())
        .unwrap_or_default();
    let fbs_diags: Vec<DefenseDiagRow> = match &prepared.defense {
        DefenseArm::Fbs(d) => d.diags.clone(),
        _ => Vec::new(),
    };
    let mut rows = Vec::with_capacity(history.len());
    for rec in &history {
        let privacy = attack_entries
            .iter()
            .find(|(e, _)| *e == rec.epoch)
            .map(|(_, m)| *m);
        let taus: Vec<&DefenseDiagRow> = fbs_diags
            .iter()
            .filter(|d| d.epoch == rec.epoch)
            .collect();
        let (tau1, tau2) = if taus.is_empty() {
            (None, None)
        } else {
            let n = taus.len() as f64;
            (
                Some(taus.iter().map(|d| d.tau1).sum::<f64>() / n),
                Some(taus.iter().map(|d| d.tau2).sum::<f64>() / n),
            )
        };
        rows.push(RunRow {
            epoch: rec.epoch,
            train_loss: rec.train_loss,
            eval_accuracy_or_auc: rec.eval_score,
            privacy_metric_kind: privacy.map(|m| m.kind),
            privacy_value: privacy.map(|m| m.value),
            tau1,
            tau2,
        });
    }
    let summary = summarize(&rows)?;

    write_config(out_dir, &hash, cfg)?;
    write_results(out_dir, &hash, &rows)?;
    write_summary(out_dir, &hash, &summary)?;
    if !fbs_diags.is_empty() {
        write_defense_diag(out_dir, &hash, &fbs_diags)?;
    }

    let models_dir = out_dir.join("models");
    std::fs::create_dir_all(&models_dir)?;
    let mut client_params = Vec::new();
    for client in &prepared.session.clients {
        checkpoint::save(
            &client.model,
            &models_dir.join(format!("client_{}.bin", client.id)),
        )?;
        client_params.push(client.model.flatten());
    }
    for (m, head) in prepared.session.coordinator.top.heads.iter().enumerate() {
        checkpoint::save(head, &models_dir.join(format!("head_{m}.bin")))?;
    }
    checkpoint::save(
        &prepared.session.coordinator.top.trunk,
        &models_dir.join("trunk.bin"),
    )?;
    let top_params = prepared.session.coordinator.top.flatten();

    Ok(RunOutcome {
        config_hash: hash,
        history,
        rows,
        summary,
        out_dir: out_dir.to_path_buf(),
        client_params,
        top_params,
    })
}

struct DriverProxy<'a>(&'a mut AttackDriver);

impl EpochObserver for DriverProxy<'_> {
    fn on_epoch_end(
        &mut self,
        epoch: usize,
        clients: &[ClientState],
        tap: Option<&FeatureTap>,
    ) -> Result<()> {
        self.0.on_epoch_end(epoch, clients, tap)
    }
}

/// Recomputes the summary block from per-epoch rows.
pub fn summarize(rows: &[RunRow]) -> Result<RunSummary> {
    let last = rows
        .last()
        .map(|r| r.eval_accuracy_or_auc)
        .unwrap_or(f64::NAN);
    let measurements: Vec<PrivacyMeasurement> = rows
        .iter()
        .filter_map(|r| {
            r.privacy_metric_kind.and_then(|kind| {
                r.privacy_value.map(|value| PrivacyMeasurement { kind, value })
            })
        })
        .collect();
    let (kind, min) = if measurements.is_empty() {
        (None, None)
    } else {
        let m = min_privacy(&measurements)?;
        (Some(m.kind), Some(m.value))
    };
    Ok(RunSummary {
        privacy_metric_kind: kind,
        min_privacy: min,
        final_accuracy: last,
        accuracy_drop_vs_baseline: None,
    })
}

fn write_config(out_dir: &Path, hash: &str, cfg: &ExperimentConfig) -> Result<()> {
    let mut f = std::fs::File::create(out_dir.join("config.json"))?;
    writeln!(f, "{}", serde_json::json!({ "config_hash": hash }))?;
    writeln!(f, "{}", serde_json::to_string(cfg)?)?;
    Ok(())
}

fn write_results(out_dir: &Path, hash: &str, rows: &[RunRow]) -> Result<()> {
    let mut f = std::fs::File::create(out_dir.join("results.jsonl"))?;
    writeln!(f, "{}", serde_json::json!({ "config_hash": hash }))?;
    for row in rows {
        writeln!(f, "{}", serde_json::to_string(row)?)?;
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_summary(out_dir: &Path, hash: &str, s: &RunSummary) -> Result<()> {
    let mut f = std::fs::File::create(out_dir.join("summary.csv"))?;
    writeln!(f, "# config_hash={hash}")?;
    writeln!(
        f,
        "privacy_metric_kind,min_privacy,final_accuracy,accuracy_drop_vs_baseline"
    )?;
    let kind = s
        .privacy_metric_kind
        .map(|k| serde_json::to_string(&k).unwrap().trim_matches('"').to_string())
        .unwrap_or_default();
    writeln!(
        f,
        "{kind},{},{},{}",
        opt(s.min_privacy),
        s.final_accuracy,
        opt(s.accuracy_drop_vs_baseline)
    )?;
    Ok(())
}

fn write_defense_diag(out_dir: &Path, hash: &str, diags: &[DefenseDiagRow]) -> Result<()> {
    // Aggregate per (epoch, client): mean g and prox distance, final taus.
    use std::collections::BTreeMap;
    let mut grouped: BTreeMap<(usize, usize), Vec<&DefenseDiagRow>> = BTreeMap::new();
    for d in diags {
        grouped.entry((d.epoch, d.client)).or_default().push(d);
    }
    let mut f = std::fs::File::create(out_dir.join("defense.jsonl"))?;
    writeln!(f, "{}", serde_json::json!({ "config_hash": hash }))?;
    for ((epoch, client), rows) in grouped {
        let n = rows.len() as f64;
        let g_value = rows.iter().map(|d| d.g_value).sum::<f64>() / n;
        let prox_distance = rows.iter().map(|d| d.prox_distance).sum::<f64>() / n;
        let last = rows.last().unwrap();
        writeln!(
            f,
            "{}",
            serde_json::json!({
                "epoch": epoch,
                "client": client,
                "tau1": last.tau1,
                "tau2": last.tau2,
                "g_value": g_value,
                "prox_distance": prox_distance,
            })
        )?;
    }
    Ok(())
}

/// Arms of the comparison matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArmKind {
    Baseline,
    Naive,
    Basic,
    Fbs,
}

impl ArmKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "baseline" => Ok(ArmKind::Baseline),
            "naive" => Ok(ArmKind::Naive),
            "basic" => Ok(ArmKind::Basic),
            "fbs" => Ok(ArmKind::Fbs),
            other => Err(Error::config("arms", format!("unknown arm `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ArmKind::Baseline => "baseline",
            ArmKind::Naive => "naive",
            ArmKind::Basic => "basic",
            ArmKind::Fbs => "fbs",
        }
    }

    fn defense_mode(&self) -> DefenseMode {
        match self {
            ArmKind::Baseline => DefenseMode::None,
            ArmKind::Naive => DefenseMode::Naive,
            ArmKind::Basic => DefenseMode::Basic,
            ArmKind::Fbs => DefenseMode::FbsAuto,
        }
    }
}

/// Runs the arm matrix off one base config: each arm shares every setting
/// and seed except the defense mode, and lands in its own directory.
/// Accuracy drops are filled in against the baseline arm when present.
pub fn run_matrix(
    base: &ExperimentConfig,
    arms: &[ArmKind],
    out_root: &Path,
) -> Result<Vec<(ArmKind, RunOutcome)>> {
    std::fs::create_dir_all(out_root)?;
    let mut outcomes = Vec::with_capacity(arms.len());
    for arm in arms {
        let mut cfg = base.clone();
        cfg.defense.mode = Some(arm.defense_mode());
        cfg.resolve()?;
        let out = run_experiment(&cfg, &out_root.join(arm.name()))?;
        outcomes.push((*arm, out));
    }
    let baseline_acc = outcomes
        .iter()
        .find(|(arm, _)| *arm == ArmKind::Baseline)
        .map(|(_, o)| o.summary.final_accuracy);
    if let Some(base_acc) = baseline_acc {
        for (arm, outcome) in &mut outcomes {
            if *arm != ArmKind::Baseline {
                outcome.summary.accuracy_drop_vs_baseline =
                    Some(base_acc - outcome.summary.final_accuracy);
                write_summary(&outcome.out_dir, &outcome.config_hash, &outcome.summary)?;
            }
        }
    }
    Ok(outcomes)
}

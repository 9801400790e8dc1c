//! Experiment configuration: JSON schema, defaults, validation and hashing.
//!
//! A parsed config is resolved in place: every optional field is filled
//! with its documented default, so re-serializing and re-parsing a resolved
//! config is the identity.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::{AttackMode, TargetKind};
use crate::data::ColumnKind;
use crate::defense::{PrivacyLossKind, ProxKind};
use crate::error::{Error, Result};
use crate::metrics::MetricKind;
use crate::nn::{LayerSpec, OptimKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    PurchaseLike,
    CreditLike,
    AdultLike,
    Csv,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub d: Option<usize>,
    #[serde(default)]
    pub classes: Option<usize>,
    #[serde(default)]
    pub positive_rate: Option<f64>,
    #[serde(default)]
    pub attr_cardinalities: Option<Vec<usize>>,
    #[serde(default)]
    pub csv_path: Option<PathBuf>,
    /// Feature column kinds for CSV ingestion; the label column is last.
    #[serde(default)]
    pub schema: Option<Vec<ColumnKind>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsConfig {
    #[serde(default)]
    pub clients: Option<Vec<Vec<LayerSpec>>>,
    #[serde(default)]
    pub heads: Option<Vec<Vec<LayerSpec>>>,
    #[serde(default)]
    pub trunk: Option<Vec<LayerSpec>>,
    /// Attack decoder stack; defaults to the target's standard decoder.
    #[serde(default)]
    pub decoder: Option<Vec<LayerSpec>>,
    /// Simulated (defense) decoder stack; defaults to the attack family.
    #[serde(default)]
    pub sim_decoder: Option<Vec<LayerSpec>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMetricCfg {
    Accuracy,
    AucPr,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default)]
    pub optimizer: Option<OptimKind>,
    #[serde(default)]
    pub shuffle: Option<bool>,
    #[serde(default)]
    pub eval_metric: Option<EvalMetricCfg>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: None,
            batch_size: None,
            lr: None,
            optimizer: None,
            shuffle: None,
            eval_metric: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    #[serde(default)]
    pub mode: Option<AttackMode>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub victim: Option<usize>,
    #[serde(default)]
    pub target: Option<TargetKind>,
    #[serde(default)]
    pub metric: Option<MetricKind>,
    #[serde(default)]
    pub decoder_epochs: Option<usize>,
    #[serde(default)]
    pub decoder_lr: Option<f64>,
    #[serde(default)]
    pub decoder_batch: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefenseMode {
    None,
    Naive,
    Basic,
    FbsAuto,
    FbsFixed,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefenseConfig {
    #[serde(default)]
    pub mode: Option<DefenseMode>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub n2: Option<usize>,
    #[serde(default)]
    pub m1: Option<usize>,
    #[serde(default)]
    pub m2: Option<usize>,
    #[serde(default)]
    pub tau1: Option<f64>,
    #[serde(default)]
    pub tau2: Option<f64>,
    #[serde(default)]
    pub tau_lr: Option<f64>,
    #[serde(default)]
    pub g_kind: Option<PrivacyLossKind>,
    #[serde(default)]
    pub prox_kind: Option<ProxKind>,
    #[serde(default)]
    pub auto_tau: Option<bool>,
    #[serde(default)]
    pub decoder_lr: Option<f64>,
    #[serde(default)]
    pub inner_lr: Option<f64>,
    #[serde(default)]
    pub cold_start: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub partition: Option<Vec<usize>>,
    #[serde(default)]
    pub models: ModelsConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub defense: DefenseConfig,
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn cfg_err(path: &str, msg: impl Into<String>) -> Error {
    Error::config(path, msg.into())
}

impl ExperimentConfig {
    /// Parses and resolves a config file.
    pub fn parse(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| cfg_err("<config>", format!("{e}")))?;
        cfg.resolve()?;
        Ok(cfg)
    }

    /// Dataset width after defaults.
    pub fn width(&self) -> usize {
        match self.dataset.kind {
            DatasetKind::PurchaseLike | DatasetKind::CreditLike => self.dataset.d.unwrap(),
            DatasetKind::AdultLike => self.dataset.attr_cardinalities.as_ref().unwrap().len(),
            DatasetKind::Csv => self.dataset.schema.as_ref().map_or(0, Vec::len),
        }
    }

    pub fn classes(&self) -> usize {
        match self.dataset.kind {
            DatasetKind::PurchaseLike => self.dataset.classes.unwrap(),
            DatasetKind::CreditLike | DatasetKind::AdultLike => 2,
            DatasetKind::Csv => self.dataset.classes.unwrap_or(2),
        }
    }

    /// Fills every unset field with its documented default and validates
    /// the result. Idempotent.
    pub fn resolve(&mut self) -> Result<()> {
        self.resolve_dataset()?;
        let d = self.width();

        // Even split across two clients; any remainder goes to the last.
        let partition = self
            .partition
            .get_or_insert_with(|| vec![d / 2, d - d / 2]);
        if partition.iter().sum::<usize>() != d || partition.iter().any(|&w| w == 0) {
            return Err(cfg_err(
                "partition",
                format!("widths {partition:?} do not cover {d} columns"),
            ));
        }
        let clients_n = partition.len();

        // Training loop defaults.
        let t = &mut self.train;
        t.epochs.get_or_insert(20);
        t.batch_size.get_or_insert(32);
        t.lr.get_or_insert(1e-4);
        t.optimizer.get_or_insert(OptimKind::Adam);
        t.shuffle.get_or_insert(true);
        t.eval_metric.get_or_insert(match self.dataset.kind {
            DatasetKind::CreditLike => EvalMetricCfg::AucPr,
            _ => EvalMetricCfg::Accuracy,
        });
        if *t.batch_size.as_ref().unwrap() == 0 {
            return Err(cfg_err("train.batch_size", "must be at least 1"));
        }
        if *t.lr.as_ref().unwrap() <= 0.0 {
            return Err(cfg_err("train.lr", "must be positive"));
        }

        // Attack defaults per the evaluation protocol.
        let a = &mut self.attack;
        let mode = *a.mode.get_or_insert(AttackMode::None);
        a.alpha.get_or_insert(0.05);
        a.victim.get_or_insert(0);
        a.target.get_or_insert(match self.dataset.kind {
            DatasetKind::PurchaseLike => TargetKind::BinaryAttributes,
            DatasetKind::CreditLike => TargetKind::Regression,
            DatasetKind::AdultLike => TargetKind::CategoricalAttribute { column: 0 },
            DatasetKind::Csv => TargetKind::Regression,
        });
        a.metric.get_or_insert(match a.target.as_ref().unwrap() {
            TargetKind::BinaryAttributes => MetricKind::Recall,
            TargetKind::CategoricalAttribute { .. } => MetricKind::ErrorRate,
            TargetKind::Regression => MetricKind::Mse,
        });
        a.decoder_epochs.get_or_insert(30);
        a.decoder_lr.get_or_insert(match mode {
            AttackMode::Adaptive => 1e-4,
            _ => 1e-2,
        });
        a.decoder_batch.get_or_insert(128);
        let alpha = a.alpha.unwrap();
        if !(0.0..=1.0).contains(&alpha) {
            return Err(cfg_err("attack.alpha", format!("{alpha} outside [0, 1]")));
        }
        if a.victim.unwrap() >= clients_n {
            return Err(cfg_err(
                "attack.victim",
                format!("client {} of {clients_n}", a.victim.unwrap()),
            ));
        }

        // Defense defaults.
        let f = &mut self.defense;
        let dmode = *f.mode.get_or_insert(DefenseMode::None);
        f.lambda.get_or_insert(1.0);
        f.n2.get_or_insert(10);
        f.m1.get_or_insert(1);
        f.m2.get_or_insert(1);
        f.tau1.get_or_insert(0.5);
        f.tau2.get_or_insert(0.5);
        f.tau_lr.get_or_insert(1e-2);
        f.g_kind.get_or_insert(PrivacyLossKind::Exp);
        f.prox_kind.get_or_insert(ProxKind::ParamL2);
        f.auto_tau
            .get_or_insert(matches!(dmode, DefenseMode::FbsAuto));
        f.decoder_lr.get_or_insert(1e-3);
        f.inner_lr.get_or_insert(1e-3);
        f.cold_start.get_or_insert(false);
        if f.lambda.unwrap() < 0.0 {
            return Err(cfg_err("defense.lambda", "must be non-negative"));
        }
        if matches!(dmode, DefenseMode::FbsAuto | DefenseMode::FbsFixed)
            && (f.tau1.unwrap() < 0.0 || f.tau2.unwrap() <= 0.0)
        {
            return Err(cfg_err("defense.tau1", "step weights must be positive"));
        }

        // Model defaults per dataset family.
        self.resolve_models()?;
        Ok(())
    }

    fn resolve_dataset(&mut self) -> Result<()> {
        let ds = &mut self.dataset;
        match ds.kind {
            DatasetKind::PurchaseLike => {
                ds.n.get_or_insert(5000);
                ds.d.get_or_insert(600);
                ds.classes.get_or_insert(100);
                if ds.n.unwrap() < ds.classes.unwrap() {
                    return Err(cfg_err(
                        "dataset.n",
                        format!(
                            "{} records cannot cover {} classes",
                            ds.n.unwrap(),
                            ds.classes.unwrap()
                        ),
                    ));
                }
            }
            DatasetKind::CreditLike => {
                ds.n.get_or_insert(10000);
                ds.d.get_or_insert(28);
                ds.positive_rate.get_or_insert(0.00172);
                let rate = ds.positive_rate.unwrap();
                if !(0.0 < rate && rate < 0.5) {
                    return Err(cfg_err(
                        "dataset.positive_rate",
                        format!("{rate} outside (0, 0.5)"),
                    ));
                }
                if (ds.n.unwrap() as f64 * rate).floor() < 1.0 {
                    return Err(cfg_err(
                        "dataset.n",
                        "no positive records at this prevalence",
                    ));
                }
            }
            DatasetKind::AdultLike => {
                ds.n.get_or_insert(5000);
                ds.attr_cardinalities
                    .get_or_insert_with(|| vec![10, 9, 15, 7, 5, 4, 3, 6, 8, 2, 12]);
                if ds.attr_cardinalities.as_ref().unwrap().iter().any(|&k| k < 2) {
                    return Err(cfg_err(
                        "dataset.attr_cardinalities",
                        "every cardinality must be at least 2",
                    ));
                }
            }
            DatasetKind::Csv => {
                if ds.csv_path.is_none() {
                    return Err(cfg_err("dataset.csv_path", "required for kind csv"));
                }
                if ds.schema.is_none() {
                    return Err(cfg_err("dataset.schema", "required for kind csv"));
                }
                ds.classes.get_or_insert(2);
            }
        }
        Ok(())
    }

    fn resolve_models(&mut self) -> Result<()> {
        let partition = self.partition.as_ref().unwrap().clone();
        let classes = self.classes();
        let kind = self.dataset.kind;
        let m = &mut self.models;

        if m.clients.is_none() {
            m.clients = Some(
                partition
                    .iter()
                    .map(|&dm| default_client_stack(kind, dm))
                    .collect(),
            );
        }
        let clients = m.clients.as_ref().unwrap();
        if clients.len() != partition.len() {
            return Err(cfg_err(
                "models.clients",
                format!("{} stacks for {} clients", clients.len(), partition.len()),
            ));
        }
        let feature_widths: Vec<usize> = clients
            .iter()
            .zip(&partition)
            .enumerate()
            .map(|(i, (stack, &dm))| {
                stack_output_width(dm, stack)
                    .map_err(|e| cfg_err(&format!("models.clients[{i}]"), e.to_string()))
            })
            .collect::<Result<_>>()?;

        if m.heads.is_none() {
            m.heads = Some(
                feature_widths
                    .iter()
                    .map(|&fw| vec![LayerSpec::Linear(fw, default_head_width(kind))])
                    .collect(),
            );
        }
        let heads = m.heads.as_ref().unwrap();
        if heads.len() != partition.len() {
            return Err(cfg_err(
                "models.heads",
                format!("{} stacks for {} clients", heads.len(), partition.len()),
            ));
        }
        let head_widths: Vec<usize> = heads
            .iter()
            .zip(&feature_widths)
            .enumerate()
            .map(|(i, (stack, &fw))| {
                stack_output_width(fw, stack)
                    .map_err(|e| cfg_err(&format!("models.heads[{i}]"), e.to_string()))
            })
            .collect::<Result<_>>()?;
        let trunk_in: usize = head_widths.iter().sum();

        if m.trunk.is_none() {
            m.trunk = Some(if classes > 2 {
                vec![LayerSpec::Relu, LayerSpec::Linear(trunk_in, classes)]
            } else {
                vec![
                    LayerSpec::Relu,
                    LayerSpec::Linear(trunk_in, 1),
                    LayerSpec::Sigmoid,
                ]
            });
        }
        let trunk_out = stack_output_width(trunk_in, m.trunk.as_ref().unwrap())
            .map_err(|e| cfg_err("models.trunk", e.to_string()))?;
        let expected = if classes > 2 { classes } else { 1 };
        if trunk_out != expected {
            return Err(cfg_err(
                "models.trunk",
                format!("produces {trunk_out} outputs, task needs {expected}"),
            ));
        }
        Ok(())
    }

    /// Canonical serialization hash of the resolved config.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn default_client_stack(kind: DatasetKind, dm: usize) -> Vec<LayerSpec> {
    match kind {
        DatasetKind::PurchaseLike => vec![LayerSpec::Linear(dm, 512), LayerSpec::Relu],
        DatasetKind::AdultLike => vec![
            LayerSpec::Linear(dm, 32),
            LayerSpec::Relu,
            LayerSpec::Linear(32, 64),
            LayerSpec::Relu,
        ],
        DatasetKind::CreditLike => vec![LayerSpec::Linear(dm, 5), LayerSpec::BatchNorm(5)],
        DatasetKind::Csv => vec![LayerSpec::Linear(dm, 32), LayerSpec::Relu],
    }
}

fn default_head_width(kind: DatasetKind) -> usize {
    match kind {
        DatasetKind::PurchaseLike => 256,
        DatasetKind::AdultLike => 32,
        DatasetKind::CreditLike => 5,
        DatasetKind::Csv => 16,
    }
}

/// Output width of a layer stack over a given input width.
pub fn stack_output_width(input: usize, stack: &[LayerSpec]) -> Result<usize> {
    let mut width = input;
    for spec in stack {
        width = spec.out_width(width)?;
    }
    Ok(width)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_purchase_config_gets_documented_defaults() {
        let cfg =
            ExperimentConfig::parse_str(r#"{"dataset":{"kind":"purchase_like"},"seed":1}"#)
                .unwrap();
        assert_eq!(cfg.attack.alpha, Some(0.05));
        assert_eq!(cfg.train.lr, Some(1e-4));
        assert_eq!(cfg.train.epochs, Some(20));
        assert_eq!(cfg.train.batch_size, Some(32));
        assert_eq!(cfg.partition, Some(vec![300, 300]));
        assert_eq!(cfg.dataset.classes, Some(100));
        // Purchase-shaped default stacks.
        assert_eq!(
            cfg.models.clients.as_ref().unwrap()[0][0],
            LayerSpec::Linear(300, 512)
        );
        assert_eq!(
            cfg.models.heads.as_ref().unwrap()[0][0],
            LayerSpec::Linear(512, 256)
        );
    }

    #[test]
    fn partition_width_mismatch_names_the_field() {
        let err = ExperimentConfig::parse_str(
            r#"{"dataset":{"kind":"purchase_like"},"partition":[100,100],"seed":1}"#,
        )
        .unwrap_err();
        match err {
            Error::Config { path, .. } => assert_eq!(path, "partition"),
            other => panic!("expected config error, got {other}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::parse_str(
            r#"{"dataset":{"kind":"purchase_like"},"seed":1,"typo_field":3}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("typo_field"), "{err}");
    }

    #[test]
    fn resolved_config_round_trips_identically() {
        let cfg = ExperimentConfig::parse_str(
            r#"{"dataset":{"kind":"adult_like","n":500},"attack":{"mode":"static"},"seed":9}"#,
        )
        .unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let again = ExperimentConfig::parse_str(&text).unwrap();
        assert_eq!(serde_json::to_string(&again).unwrap(), text);
        assert_eq!(again.hash(), cfg.hash());
    }

    #[test]
    fn adult_defaults_split_five_six() {
        let cfg = ExperimentConfig::parse_str(
            r#"{"dataset":{"kind":"adult_like"},"seed":3}"#,
        )
        .unwrap();
        assert_eq!(cfg.partition, Some(vec![5, 6]));
        assert_eq!(
            cfg.models.clients.as_ref().unwrap()[0][0],
            LayerSpec::Linear(5, 32)
        );
        assert_eq!(
            cfg.models.clients.as_ref().unwrap()[1][0],
            LayerSpec::Linear(6, 32)
        );
    }

    #[test]
    fn csv_requires_path_and_schema() {
        let err =
            ExperimentConfig::parse_str(r#"{"dataset":{"kind":"csv"},"seed":1}"#).unwrap_err();
        assert!(err.to_string().contains("csv_path"), "{err}");
    }

    #[test]
    fn static_and_adaptive_default_decoder_lr_differ() {
        let stat = ExperimentConfig::parse_str(
            r#"{"dataset":{"kind":"purchase_like"},"attack":{"mode":"static"},"seed":1}"#,
        )
        .unwrap();
        assert_eq!(stat.attack.decoder_lr, Some(1e-2));
        let adap = ExperimentConfig::parse_str(
            r#"{"dataset":{"kind":"purchase_like"},"attack":{"mode":"adaptive"},"seed":1}"#,
        )
        .unwrap();
        assert_eq!(adap.attack.decoder_lr, Some(1e-4));
    }
}

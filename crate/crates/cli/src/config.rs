use std::path::{Path, PathBuf};

use gnnlab::graphdata::{FeaturePolicy, DEFAULT_DEGREE_CAP, DEFAULT_FOLD_SEED, DEFAULT_URL_BASE};
use gnnlab::models::ModelSpec;
use gnnlab::training::TrainConfig;
use serde::{Deserialize, Serialize};

/// Where a dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// TU dataset name, e.g. `PROTEINS`.
    pub name: String,
    /// Base URL of the TU archive mirror.
    pub url: String,
    /// Directory that already holds `{name}_*.txt`; skips the cache and
    /// any download.
    pub path: Option<PathBuf>,
    /// Forces a feature policy instead of the attributes > node labels >
    /// degree precedence.
    pub feature_policy: Option<FeaturePolicy>,
    pub degree_cap: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            name: String::new(),
            url: DEFAULT_URL_BASE.to_string(),
            path: None,
            feature_policy: None,
            degree_cap: DEFAULT_DEGREE_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoldConfig {
    pub count: usize,
    pub seed: u64,
}

impl Default for FoldConfig {
    fn default() -> Self {
        Self {
            count: 10,
            seed: DEFAULT_FOLD_SEED,
        }
    }
}

/// One experiment: dataset, model, optimiser, folds and outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Label used in sweep output; defaults to the config file stem.
    pub variant: Option<String>,
    pub dataset: DatasetConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub folds: FoldConfig,
    /// Write per-fold trace CSVs.
    pub diagnostics: bool,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            variant: None,
            dataset: DatasetConfig::default(),
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            folds: FoldConfig::default(),
            diagnostics: true,
            output_dir: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: Self = serde_json::from_str(&text)?;
        if cfg.variant.is_none() {
            cfg.variant = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        }
        Ok(cfg)
    }

    pub fn variant_name(&self) -> String {
        self.variant
            .clone()
            .unwrap_or_else(|| self.model.kind.name().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use gnnlab::init::InitKind;
    use gnnlab::models::ModelKind;

    #[test]
    fn round_trips_through_json() {
        let mut cfg = ExperimentConfig::default();
        cfg.dataset.name = "PROTEINS".into();
        cfg.dataset.feature_policy = Some(FeaturePolicy::LabelOnehot);
        cfg.model = ModelSpec::new(ModelKind::JkSum);
        cfg.train.weight_decay = 5e-3;
        cfg.train.init.kind = InitKind::StandardThenReinit;
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(
            serde_json::from_str::<ExperimentConfig>(&text).unwrap(),
            cfg
        );
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        for text in [
            r#"{"datset": {}}"#,
            r#"{"dataset": {"name": "X", "format": "tu"}}"#,
            r#"{"model": {"kind": "mlp", "dropout": 0.5}}"#,
            r#"{"train": {"learning_rate": 0.1}}"#,
            r#"{"train": {"init": {"kind": "standard", "gain": 2}}}"#,
            r#"{"folds": {"count": 10, "shuffle": true}}"#,
        ] {
            assert!(
                serde_json::from_str::<ExperimentConfig>(text).is_err(),
                "{text}"
            );
        }
    }

    #[test]
    fn shipped_configs_cover_every_variant_and_dataset() {
        let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let datasets = ["PROTEINS", "DD", "COLLAB", "REDDIT-MULTI-12K"];
        let variants = [
            "mlp",
            "gcn_r_mlp",
            "gcn_mlp",
            "jk_sum",
            "jk_sum_decay",
            "jk_sum_reinit",
        ];
        for ds in datasets {
            for v in variants {
                let cfg = ExperimentConfig::load(&root.join(ds).join(format!("{v}.json"))).unwrap();
                assert_eq!(cfg.dataset.name, ds);
                assert_eq!(cfg.variant_name(), v);
                cfg.model.validate().unwrap();
                cfg.train.validate().unwrap();
                let expected_kind = match v {
                    "mlp" => ModelKind::Mlp,
                    "gcn_r_mlp" => ModelKind::GcnRMlp,
                    "gcn_mlp" => ModelKind::GcnMlp,
                    _ => ModelKind::JkSum,
                };
                assert_eq!(cfg.model.kind, expected_kind, "{ds}/{v}");
                let decay = if v == "jk_sum_decay" { 5e-3 } else { 0.0 };
                assert_eq!(cfg.train.weight_decay, decay, "{ds}/{v}");
                assert_eq!(
                    cfg.train.init.uses_reinit(),
                    v == "jk_sum_reinit",
                    "{ds}/{v}"
                );
                let policy = if matches!(ds, "PROTEINS" | "DD") {
                    FeaturePolicy::LabelOnehot
                } else {
                    FeaturePolicy::DegreeOnehot
                };
                assert_eq!(cfg.dataset.feature_policy, Some(policy), "{ds}/{v}");
            }
        }
    }
}

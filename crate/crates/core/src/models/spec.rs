use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Normalisation, ReadoutKind, DEFAULT_RATIO};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Global readout of the input features into a three-layer MLP.
    Mlp,
    /// One GCN with frozen random weights, JK-skip from the input, MLP.
    GcnRMlp,
    /// One trainable GCN, JK-skip from the input, MLP.
    GcnMlp,
    /// Three GCN + top-k blocks with a readout tapped from every block.
    JkSum,
    /// Four GCN + top-k blocks, global mean, MLP. No JK taps.
    Probe4,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Mlp,
        ModelKind::GcnRMlp,
        ModelKind::GcnMlp,
        ModelKind::JkSum,
        ModelKind::Probe4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mlp => "mlp",
            ModelKind::GcnRMlp => "gcn_r_mlp",
            ModelKind::GcnMlp => "gcn_mlp",
            ModelKind::JkSum => "jk_sum",
            ModelKind::Probe4 => "probe4",
        }
    }

    pub fn num_blocks(self) -> usize {
        match self {
            ModelKind::Mlp => 0,
            ModelKind::GcnRMlp | ModelKind::GcnMlp => 1,
            ModelKind::JkSum => 3,
            ModelKind::Probe4 => 4,
        }
    }

    pub fn has_pools(self) -> bool {
        matches!(self, ModelKind::JkSum | ModelKind::Probe4)
    }

    fn default_readout(self) -> ReadoutKind {
        match self {
            ModelKind::JkSum => ReadoutKind::MaxAndSum,
            _ => ReadoutKind::Mean,
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Spec(format!("unknown model kind {s:?}")))
    }
}

/// How per-block readouts are combined before the MLP.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JkAgg {
    #[default]
    Concat,
    Sum,
}

/// Where JK readouts are taken inside a GCN + pool block.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TapPoint {
    #[default]
    Gcn,
    Pool,
}

/// Declarative model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub hidden_dim: usize,
    /// Hidden widths of the MLP head; two entries give three dense layers.
    pub mlp_dims: Vec<usize>,
    /// Fraction of nodes kept by each top-k pool.
    pub k: f64,
    /// Readout for the JK taps (or the global pool). `None` uses the
    /// kind's default: mean, or max-and-sum for `jk_sum`.
    pub readout: Option<ReadoutKind>,
    pub jk_agg: JkAgg,
    pub jk_tap: TapPoint,
    /// Freeze GCN weights at their initial values. Always on for `gcn_r_mlp`.
    pub freeze_gcn: bool,
    pub normalisation: Normalisation,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            kind: ModelKind::Mlp,
            hidden_dim: 128,
            mlp_dims: vec![128, 128],
            k: DEFAULT_RATIO,
            readout: None,
            jk_agg: JkAgg::Concat,
            jk_tap: TapPoint::Gcn,
            freeze_gcn: false,
            normalisation: Normalisation::Symmetric,
        }
    }
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn readout_kind(&self) -> ReadoutKind {
        self.readout.unwrap_or(self.kind.default_readout())
    }

    pub fn gcn_frozen(&self) -> bool {
        self.freeze_gcn || self.kind == ModelKind::GcnRMlp
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::Spec("hidden_dim must be positive".into()));
        }
        if self.mlp_dims.len() != 2 || self.mlp_dims.contains(&0) {
            return Err(Error::Spec(format!(
                "the MLP head has three dense layers, so mlp_dims needs two positive widths, got {:?}",
                self.mlp_dims
            )));
        }
        if !(0.0..1.0).contains(&self.k) {
            return Err(Error::Spec(format!("k = {} outside [0, 1)", self.k)));
        }
        if self.kind == ModelKind::Mlp && self.freeze_gcn {
            return Err(Error::Spec(
                "freeze_gcn set on a model without GCN layers".into(),
            ));
        }
        if self.jk_agg == JkAgg::Sum && self.kind != ModelKind::JkSum {
            return Err(Error::Spec(format!(
                "jk_agg = sum needs equal-width taps and only applies to jk_sum, not {}",
                self.kind.name()
            )));
        }
        if self.jk_tap == TapPoint::Pool && !self.kind.has_pools() {
            return Err(Error::Spec(format!(
                "{} has no pools to tap",
                self.kind.name()
            )));
        }
        Ok(())
    }
}

//! Learned transition models `f(φ(s_t), φ(g))`.

mod gbdt;
mod oracle;
mod pairs;
mod recurrent;

pub use gbdt::{train_tree_ensemble, Tree, TreeConfig, TreeEnsembleModel, TreeNode, TreeTrainReport};
pub use oracle::OracleDeltaModel;
pub use pairs::{build_pairs, EmbeddedTrajectory, TransitionExample};
pub use recurrent::{train_recurrent, Loss, RecurrentConfig, RecurrentModel, RecurrentTrainReport};

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite loss at epoch {epoch}: {detail}")]
    NonFinite { epoch: usize, detail: String },
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What the model regresses: the next embedding or the change to it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    State,
    Delta,
}

impl std::fmt::Display for TargetMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TargetMode::State => "state",
            TargetMode::Delta => "delta",
        })
    }
}

impl FromStr for TargetMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "state" => Ok(TargetMode::State),
            "delta" => Ok(TargetMode::Delta),
            other => Err(format!("unknown mode '{other}' (expected state or delta)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Tree,
    Recurrent,
    /// Replays each instance's own expert deltas; needs no training.
    Oracle,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Tree => "tree",
            ModelKind::Recurrent => "recurrent",
            ModelKind::Oracle => "oracle",
        })
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tree" | "xgb" => Ok(ModelKind::Tree),
            "recurrent" | "rnn" | "lstm" => Ok(ModelKind::Recurrent),
            "oracle" => Ok(ModelKind::Oracle),
            other => Err(format!("unknown model '{other}' (expected tree, recurrent or oracle)")),
        }
    }
}

/// Per-rollout state carried between model calls.
#[derive(Debug, Clone, PartialEq)]
pub enum Memory {
    None,
    Step(usize),
    Hidden(Vec<Vec<f64>>),
}

pub trait TransitionModel: Sync {
    fn mode(&self) -> TargetMode;

    /// Length of state, goal and output vectors.
    fn width(&self) -> usize;

    fn initial_memory(&self) -> Memory {
        Memory::None
    }

    /// Raw model output and the memory for the next call.
    fn step(&self, memory: &Memory, state: &[f64], goal: &[f64]) -> (Vec<f64>, Memory);
}

/// Target embedding `v_t`: the output itself in state mode, `φ(s_t)` plus
/// the output in delta mode.
pub fn predict(
    model: &dyn TransitionModel,
    memory: &Memory,
    state: &[f64],
    goal: &[f64],
) -> Result<(Vec<f64>, Memory), ModelError> {
    for v in [state, goal] {
        if v.len() != model.width() {
            return Err(ModelError::DimensionMismatch { expected: model.width(), found: v.len() });
        }
    }
    let (mut out, next) = model.step(memory, state, goal);
    if model.mode() == TargetMode::Delta {
        out.iter_mut().zip(state).for_each(|(o, s)| *o += s);
    }
    Ok((out, next))
}

/// Any trained model, as stored on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SavedModel {
    Tree(TreeEnsembleModel),
    Recurrent(RecurrentModel),
}

impl SavedModel {
    pub fn as_model(&self) -> &dyn TransitionModel {
        match self {
            SavedModel::Tree(m) => m,
            SavedModel::Recurrent(m) => m,
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            SavedModel::Tree(_) => ModelKind::Tree,
            SavedModel::Recurrent(_) => ModelKind::Recurrent,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("models serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        serde_json::from_str(text).map_err(|e| ModelError::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        Ok(std::fs::write(path, self.to_json())?)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

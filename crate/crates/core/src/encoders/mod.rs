//! Fixed-dimensional encodings of (state, goal) pairs.

mod fsf;
mod ilg;
mod wl;

pub use fsf::{embed_fsf, FsfDomain, FsfLayout, DONT_CARE, PADDING};
pub use ilg::{build_ilg, AtomStatus, InstanceGraph, NodeKind};
pub use wl::{
    collect_vocabulary, embed_graph, embed_wl, goal_as_state, wl_refine, ColorMultiset, WlVocabulary,
    DEFAULT_ITERATIONS,
};

use std::fmt::Write as _;
use std::str::FromStr;

use crate::pddl::{AtomId, GroundedTask, SymbolicState};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EncoderError {
    #[error("cannot collect colours into a frozen vocabulary")]
    FrozenVocabulary,
    #[error("vocabulary must be frozen before embedding")]
    NotFrozen,
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("instance has {objects} objects but the layout holds {capacity}")]
    CapacityExceeded { objects: usize, capacity: usize },
    #[error("no fixed-slot layout for domain '{0}'")]
    UnsupportedDomain(String),
    #[error("{0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EncodingMode {
    Wl,
    Fsf,
}

impl std::fmt::Display for EncodingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EncodingMode::Wl => "wl",
            EncodingMode::Fsf => "fsf",
        })
    }
}

impl FromStr for EncodingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "wl" => Ok(EncodingMode::Wl),
            "fsf" => Ok(EncodingMode::Fsf),
            other => Err(format!("unknown encoder '{other}' (expected wl or fsf)")),
        }
    }
}

/// An encoded state or goal.
///
/// WL vectors hold `D` colour counts followed by one out-of-vocabulary
/// bucket, so `values.len() == D + 1`. FSF vectors hold `N + 1` slots.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub mode: EncodingMode,
}

impl EmbeddingVector {
    /// Reported dimension: `D` for WL, `N + 1` for FSF.
    pub fn dim(&self) -> usize {
        match self.mode {
            EncodingMode::Wl => self.values.len() - 1,
            EncodingMode::Fsf => self.values.len(),
        }
    }

    pub fn oov(&self) -> f64 {
        match self.mode {
            EncodingMode::Wl => *self.values.last().unwrap_or(&0.0),
            EncodingMode::Fsf => 0.0,
        }
    }
}

/// A ready-to-use encoder: either a frozen WL vocabulary or an FSF layout.
#[derive(Debug, Clone)]
pub enum Encoder {
    Wl { vocab: WlVocabulary, normalize: bool },
    Fsf(FsfLayout),
}

impl Encoder {
    pub fn mode(&self) -> EncodingMode {
        match self {
            Encoder::Wl { .. } => EncodingMode::Wl,
            Encoder::Fsf(_) => EncodingMode::Fsf,
        }
    }

    /// Length of the vectors handed to models.
    pub fn width(&self) -> usize {
        match self {
            Encoder::Wl { vocab, .. } => vocab.len() + 1,
            Encoder::Fsf(layout) => layout.width(),
        }
    }

    pub fn embed_state(
        &self,
        state: &SymbolicState,
        goal: &[AtomId],
        task: &GroundedTask,
    ) -> Result<Vec<f64>, EncoderError> {
        match self {
            Encoder::Wl { vocab, normalize } => {
                let mut e = embed_wl(state, goal, task, vocab)?;
                if *normalize {
                    let total: f64 = e.values.iter().sum();
                    if total > 0.0 {
                        e.values.iter_mut().for_each(|v| *v /= total);
                    }
                }
                Ok(e.values)
            }
            Encoder::Fsf(layout) => Ok(embed_fsf(state, goal, task, layout)?.0.values),
        }
    }

    pub fn embed_goal(&self, goal: &[AtomId], task: &GroundedTask) -> Result<Vec<f64>, EncoderError> {
        match self {
            Encoder::Wl { .. } => self.embed_state(&goal_as_state(task, goal), goal, task),
            Encoder::Fsf(layout) => Ok(embed_fsf(&task.initial, goal, task, layout)?.1.values),
        }
    }
}

/// Writes an `EMB1` matrix file.
pub fn write_matrix(rows: &[Vec<f64>]) -> String {
    let cols = rows.first().map_or(0, Vec::len);
    let mut out = format!("EMB1 {} {}\n", rows.len(), cols);
    for row in rows {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

pub fn read_matrix(text: &str) -> Result<Vec<Vec<f64>>, EncoderError> {
    let bad = |m: &str| EncoderError::Format(m.to_string());
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty matrix file"))?.split_whitespace().collect();
    let (rows, cols) = match header.as_slice() {
        ["EMB1", r, c] => (
            r.parse::<usize>().map_err(|_| bad("bad row count"))?,
            c.parse::<usize>().map_err(|_| bad("bad column count"))?,
        ),
        _ => return Err(bad("missing EMB1 header")),
    };
    let mut out = Vec::with_capacity(rows);
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let row = line
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|_| bad(&format!("bad value '{v}'"))))
            .collect::<Result<Vec<_>, _>>()?;
        if row.len() != cols {
            return Err(bad(&format!("row has {} values, expected {cols}", row.len())));
        }
        out.push(row);
    }
    if out.len() != rows {
        return Err(bad(&format!("found {} rows, expected {rows}", out.len())));
    }
    Ok(out)
}

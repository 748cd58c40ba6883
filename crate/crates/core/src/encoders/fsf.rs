use std::str::FromStr;

use super::{EmbeddingVector, EncoderError, EncodingMode};
use crate::pddl::{AtomId, GroundedTask, SymbolicState};

pub const PADDING: f64 = -99.0;
pub const DONT_CARE: f64 = -10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FsfDomain {
    Blocksworld,
    Gripper,
    Logistics,
    VisitAll,
}

impl FromStr for FsfDomain {
    type Err = EncoderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "blocksworld" => FsfDomain::Blocksworld,
            "gripper" => FsfDomain::Gripper,
            "logistics" => FsfDomain::Logistics,
            "visitall" => FsfDomain::VisitAll,
            other => return Err(EncoderError::UnsupportedDomain(other.to_string())),
        })
    }
}

/// Fixed-slot layout: slot 0 holds global or robot state, slot `i` the
/// `i`-th object in canonical name order. References to other objects use
/// that object's slot number.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FsfLayout {
    pub domain: FsfDomain,
    pub capacity: usize,
}

impl FsfLayout {
    pub fn new(domain: FsfDomain, capacity: usize) -> Self {
        Self { domain, capacity }
    }

    /// Length `N + 1` of every vector produced with this layout.
    pub fn width(&self) -> usize {
        self.capacity + 1
    }

    /// Slot of each task object.
    pub fn slot_map(&self, task: &GroundedTask) -> Result<Vec<usize>, EncoderError> {
        if task.objects.len() > self.capacity {
            return Err(EncoderError::CapacityExceeded { objects: task.objects.len(), capacity: self.capacity });
        }
        Ok((1..=task.objects.len()).collect())
    }

    fn fill(&self, task: &GroundedTask, atoms: impl Iterator<Item = AtomId>, default: f64, out: &mut [f64]) {
        let n = task.objects.len();
        out[0] = default;
        for v in &mut out[1..=n] {
            *v = default;
        }
        for v in &mut out[n + 1..] {
            *v = PADDING;
        }
        let slot = |o: u32| o as f64 + 1.0;
        for atom in atoms {
            let ground = &task.atoms[atom as usize];
            let a = &ground.args;
            let pred = task.predicates[ground.predicate].name.as_str();
            match (self.domain, pred) {
                (FsfDomain::Blocksworld, "on") => out[a[0] as usize + 1] = slot(a[1]),
                (FsfDomain::Blocksworld, "ontable") => out[a[0] as usize + 1] = 0.0,
                (FsfDomain::Blocksworld, "holding") => out[a[0] as usize + 1] = -1.0,
                (FsfDomain::Gripper, "at-robby") => out[0] = slot(a[1]),
                (FsfDomain::Gripper, "at") => out[a[0] as usize + 1] = slot(a[1]),
                (FsfDomain::Gripper, "free") => out[a[1] as usize + 1] = 0.0,
                (FsfDomain::Gripper, "carry") => {
                    out[a[1] as usize + 1] = -slot(a[2]);
                    out[a[2] as usize + 1] = slot(a[1]);
                }
                (FsfDomain::Logistics, "at") => out[a[0] as usize + 1] = slot(a[1]),
                (FsfDomain::Logistics, "in") => out[a[0] as usize + 1] = -slot(a[1]),
                (FsfDomain::VisitAll, "at-robot") => out[0] = slot(a[0]),
                (FsfDomain::VisitAll, "visited") => out[a[0] as usize + 1] = 1.0,
                _ => {}
            }
        }
    }
}

/// State and goal vectors, each of length `N + 1`.
pub fn embed_fsf(
    state: &SymbolicState,
    goal: &[AtomId],
    task: &GroundedTask,
    layout: &FsfLayout,
) -> Result<(EmbeddingVector, EmbeddingVector), EncoderError> {
    layout.slot_map(task)?;
    let mut s = vec![0.0; layout.width()];
    layout.fill(task, state.iter(), 0.0, &mut s);
    let mut g = vec![0.0; layout.width()];
    layout.fill(task, goal.iter().copied(), DONT_CARE, &mut g);
    Ok((EmbeddingVector { values: s, mode: EncodingMode::Fsf }, EmbeddingVector { values: g, mode: EncodingMode::Fsf }))
}
